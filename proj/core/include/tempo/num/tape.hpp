#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tempo/num/array.hpp"
#include "tempo/num/params.hpp"

namespace tempo::num {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const Array2& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Define-by-run reverse-mode tape. Nodes are appended in evaluation order,
// so reverse insertion order is a valid reverse topological order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Array2 value);
  // Differentiable leaf that is not bound to a parameter store.
  Var leaf(Array2 value);
  // Leaf bound to `store[name]`; repeated calls return the same node.
  Var param(const ParamStore& store, const std::string& name);

  Var record(Array2 value, bool requires_grad, BackwardFn backward);

  const Array2& value(std::size_t id) const { return nodes_[id].value; }
  const Array2& grad(std::size_t id) const { return nodes_[id].grad; }
  const Array2& grad(Var v) const { return grad(v.id()); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Adds `delta` into the gradient of `id` when that node requires one.
  void accumulate(std::size_t id, const Array2& delta);
  Array2& grad_buffer(std::size_t id);

  // Seeds d(loss)/d(loss) = 1 for a 1x1 output and runs the reverse sweep.
  void backward(Var loss);
  void backward(Var output, const Array2& seed);

  // Adds gradients of parameter leaves into `grads` (keys created on demand
  // with the parameter's shape).
  void collect_grads(GradStore& grads) const;

  std::size_t size() const { return nodes_.size(); }
  std::size_t backward_visits() const { return backward_visits_; }

 private:
  struct Node {
    Array2 value;
    Array2 grad;
    BackwardFn backward;
    bool requires_grad = false;
    std::string param_name;
  };

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t, std::less<>> param_nodes_;
  std::size_t backward_visits_ = 0;
};

// Recorded operations. All operands must live on the same tape.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var mul_scalar(Var a, double s);
// Adds a 1 x c row to every row of a.
Var add_row(Var a, Var row);
// Adds a constant array (e.g. an attention mask); no gradient to the constant.
Var add_const(Var a, const Array2& c);
Var transpose(Var a);
Var relu(Var a);
Var softmax_rows(Var a);
inline constexpr double kLayerNormEps = 1e-5;
Var layer_norm(Var x, Var gain, Var bias);
// Row i of the result is row indices[i] of table; backward scatter-adds.
// Index -1 yields a zero row that receives no gradient.
Var embedding_lookup(Var table, std::span<const int> indices);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_cols(std::span<const Var> parts);
// k x 1 column of a(r_i, c_i).
Var gather(Var a, std::span<const std::pair<std::size_t, std::size_t>> entries);
Var sum(Var a);
Var mean(Var a);
Var square(Var a);
// For an n x 1 column, log-softmax within each group of row indices. Rows
// outside every group are 0 and receive no gradient.
Var group_log_softmax(Var q, const std::vector<std::vector<std::size_t>>& groups);

}  // namespace tempo::num
