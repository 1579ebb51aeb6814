#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tempo/num/params.hpp"
#include "tempo/num/tape.hpp"
#include "tempo/urgency.hpp"

namespace tempo {

struct SparseParams {
  int B = 1;
  int k = 1;
  int M = 1;
  int C = 1;

  friend bool operator==(const SparseParams&, const SparseParams&) = default;
};

struct SparseConfig {
  enum class Mode { kDense, kBlockTopK };
  Mode mode = Mode::kDense;
  // Derive B, k, M from the number of tasks in each sample.
  bool automatic = true;
  int B = 0;
  int k = 0;
  int M = 0;
  // When positive, k is replaced by max(1, floor(alpha * B)).
  double alpha = 0.0;

  friend bool operator==(const SparseConfig&, const SparseConfig&) = default;
};

// "dense", "auto", or "B,k,M".
SparseConfig parse_sparse(std::string_view text);
std::string to_string(const SparseConfig& cfg);

// B = ceil(sqrt N); k = max(1, floor(B/10)) for N <= 100, floor(log2 B) + 1
// above; M = max(1, ceil(log2 N)); C = ceil(N / M).
SparseParams auto_sparse_params(int n);
SparseParams resolve_sparse(const SparseConfig& cfg, int n);

// Retained score entries for one sample with n tasks. Task entries cover
// task-to-task scores; idle entries are the dense idle row and column.
struct NonzeroCount {
  std::int64_t task_entries = 0;
  std::int64_t idle_entries = 0;
  std::int64_t total = 0;
};
NonzeroCount nonzero_count(int n, const SparseConfig& cfg);

// Keys retained for each query of one sample. `scores` is (n+1)x(n+1) in
// local row order with row 0 the idle token; `order` lists task rows sorted
// by (deadline, task id). Returns a row-major (n+1)x(n+1) 0/1 pattern.
std::vector<char> attention_pattern(const num::Array2& scores, std::span<const std::size_t> order,
                                    const SparseParams& p);

struct EncoderConfig {
  int layers = 1;
  int heads = 2;
  int d = 32;
  int d_ff = 64;
  SparseConfig sparse;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

void validate_encoder(const EncoderConfig& cfg);

// Xavier-uniform weights, unit LayerNorm gains, zero biases. Includes the
// tokenizer parameters sized from `quant`.
num::ParamStore init_params(const EncoderConfig& cfg, const QuantizerConfig& quant, std::uint64_t seed);

// Final-layer attention per sample, averaged over heads.
struct AttentionRecord {
  std::vector<num::Array2> mean;
  std::vector<std::vector<num::Array2>> per_head;  // [sample][head], when requested
};

struct ForwardOptions {
  bool trainable = true;
  bool record_attention = false;
  bool per_head = false;
};

struct ForwardResult {
  num::Var q;                     // rows x 1
  std::vector<double> q_values;   // -inf on padding rows
  AttentionRecord attention;
};

// Throws NumericError naming the layer when activations stop being finite.
ForwardResult forward(num::Tape& tape, const num::ParamStore& params, const TokenBatch& batch,
                      const EncoderConfig& cfg, const ForwardOptions& opts = {});

// Non-differentiable convenience.
std::vector<double> q_scores(const num::ParamStore& params, const TokenBatch& batch, const EncoderConfig& cfg);

}  // namespace tempo
