#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tempo/num/params.hpp"
#include "tempo/num/tape.hpp"
#include "tempo/sim.hpp"

namespace tempo {

enum class BinScheme { kUniform, kLogSpaced, kKMeans };

std::string_view to_string(BinScheme scheme);
BinScheme parse_bin_scheme(std::string_view text);

struct QuantizerConfig {
  int Q = 128;
  BinScheme scheme = BinScheme::kUniform;
  // 0 means "derive": s_max from the task set, delta = s_max / Q.
  double delta = 0.0;
  double s_max = 0.0;
  std::vector<double> centers;  // kmeans only, ascending
  // Long-slack insurance bin: s >= reserve_threshold maps to Q-1 and every
  // other slack is clipped to Q-2. 0 threshold means (Q-1)*delta.
  bool reserve = false;
  double reserve_threshold = 0.0;

  friend bool operator==(const QuantizerConfig&, const QuantizerConfig&) = default;
};

// Fills s_max (max period), delta and the reserve threshold when unset. Kmeans
// centers, when absent, are fitted to the slacks a job of each task passes
// through while it waits inside its deadline window.
QuantizerConfig resolve_quantizer(QuantizerConfig cfg, std::span<const TaskSpec> tasks);
// Throws ContractError when Q < 2, delta <= 0, or centers are unusable.
void validate_quantizer(const QuantizerConfig& cfg);

// Monotone non-decreasing map from slack to [0, Q-1]. Expects a resolved config.
int quantize(Tick s, const QuantizerConfig& cfg);

struct KMeansReport {
  std::vector<double> centers;  // ascending, Q entries
  std::vector<double> inertia;  // objective after each assignment step
  int iterations = 0;
  bool degenerate = false;      // fewer distinct samples than Q
};

// Lloyd's algorithm with k-means++ seeding. Stops after 100 iterations or
// once no centroid moves by more than 1e-6.
KMeansReport fit_kmeans_bins(std::span<const double> samples, int Q, std::uint64_t seed = 0);

// Fraction of active jobs with slack strictly below delta; 0 without jobs.
double short_slack_fraction(std::span<const JobInstance> jobs, Tick clock, double delta);

// Encoder input for one or more packed states. Sample s owns rows
// [offsets[s], offsets[s+1]); the first row of a sample is its idle token and
// the following rows follow the order of that state's job list.
struct TokenBatch {
  std::vector<std::size_t> offsets{0};
  std::vector<int> task_id;       // kIdle for idle rows, -1 for padding
  std::vector<int> bin;           // quantized slack, -1 for idle/padding
  std::vector<double> rem_frac;   // c / C
  std::vector<double> time_frac;  // (d - t) / P
  std::vector<Tick> deadline;     // effective absolute deadline
  std::vector<char> valid;
  std::vector<char> reserved;
  num::Array2 X;                  // materialized tokens; empty until embedded

  std::size_t samples() const { return offsets.size() - 1; }
  std::size_t rows() const { return offsets.back(); }
  std::size_t sample_rows(std::size_t s) const { return offsets[s + 1] - offsets[s]; }
};

// Features for one state. pad_to > rows adds masked padding rows.
TokenBatch make_token_batch(Tick clock, std::span<const JobInstance> jobs, const QuantizerConfig& cfg,
                            std::size_t pad_to = 0);
// Concatenates batches (their X is dropped).
TokenBatch pack(std::span<const TokenBatch> parts);

// Names of tokenizer parameters.
inline constexpr const char* kIdleToken = "tok.idle";
inline constexpr const char* kSlackEmbedding = "tok.embed";
inline constexpr const char* kFeatureProjection = "tok.feat";
inline constexpr const char* kReserveBias = "tok.reserve";

// X = E[bin] + [c/C, (d-t)/P] W_f (+ reserve bias), idle row = learned token,
// padding rows = 0. `trainable` selects parameter leaves over constants.
num::Var embed_tokens(num::Tape& tape, const num::ParamStore& params, const TokenBatch& batch,
                      bool trainable = true);

// Single-state convenience: features plus materialized X.
TokenBatch tokenize(const SimState& state, const num::ParamStore& params, const QuantizerConfig& cfg,
                    std::size_t pad_to = 0);

}  // namespace tempo
