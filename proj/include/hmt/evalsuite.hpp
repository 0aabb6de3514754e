// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hmt/config.hpp"
#include "hmt/datagen.hpp"
#include "hmt/memory.hpp"
#include "hmt/recurrence.hpp"

namespace hmt {

struct StreamEval {
  double nll_sum = 0.0;
  std::size_t scored = 0;
  /// NLL of predicting stream[p], indexed by p (entry 0 unused). Only kept
  /// when requested.
  std::vector<double> position_nll;
  /// Greedy prediction for stream[p], same indexing.
  std::vector<Token> position_argmax;
  std::vector<RecallEvent> events;

  double mean_nll() const { return nll_sum / static_cast<double>(scored); }
  double ppl() const;
};

struct EvalOptions {
  bool keep_position_nll = false;
  bool keep_argmax = false;
  bool keep_events = false;
};

/// Segment-recurrent evaluation of a whole stream without gradients. Every
/// position with a successor is scored, across segment boundaries.
StreamEval evaluate_stream(const HmtModel& model, std::span<const Token> stream, const EvalOptions& options = {});

/// Mean NLL over the given target positions (position p scores stream[p]).
double positions_nll(const HmtModel& model, std::span<const Token> stream, std::span<const std::size_t> positions);

struct PplRow {
  std::size_t length = 0;
  double ppl = 0.0;
  double mean_nll = 0.0;
  std::size_t scored = 0;
};

/// PPL of each prefix length, each evaluated from a fresh state.
std::vector<PplRow> perplexity(const HmtModel& model, std::span<const Token> stream,
                               std::span<const std::size_t> lengths);

struct RecallHistogram {
  std::map<std::size_t, std::size_t> bins;  // distance -> count
  std::size_t seed_hits = 0;               // argmax landed on the memory seed
  std::size_t events = 0;
  std::size_t total() const;
};

/// Distance of every recall event's argmax score (ties go to the most recent
/// entry). The memory seed sits at distance n + 1 and gets its own bin.
RecallHistogram histogram_from_events(std::span<const RecallEvent> events);
RecallHistogram recall_histogram(const HmtModel& model, std::span<const Token> stream,
                                 std::vector<RecallEvent>* events = nullptr);

struct RecallAblation {
  double ppl_with = 0.0;
  double ppl_without = 0.0;
  double nll_with = 0.0;
  double nll_without = 0.0;
  std::size_t scored = 0;
};

/// Paired evaluation; the two models may differ only in their recall flag.
RecallAblation ablate_recall(const HmtModel& with_recall, const HmtModel& without_recall,
                             std::span<const Token> stream);

struct SweepRow {
  std::string param;
  double value = 0.0;
  double ppl = 0.0;
  std::uint64_t seed = 0;
};

std::vector<SweepRow> ablate_partial_summarization(const HmtModel& model, std::span<const Token> stream,
                                                   std::span<const std::size_t> j_values, std::uint64_t seed = 0);
/// Evaluates the same parameters under each cache capacity.
std::vector<SweepRow> sweep_cache(const HmtModel& model, std::span<const Token> stream,
                                  std::span<const std::size_t> n_values, std::uint64_t seed = 0);
/// Trains a fresh model per sensory length under `config` and evaluates it.
std::vector<SweepRow> sweep_sensory(const RunConfig& config, const WindowSampler& sampler,
                                    std::span<const Token> eval_stream, std::span<const std::size_t> k_values);
/// Same protocol over the unroll depth.
std::vector<SweepRow> sweep_depth(const RunConfig& config, const std::vector<Token>& corpus,
                                  std::span<const Token> eval_stream, std::span<const std::size_t> depths);

struct GradCheckOptions {
  double h = 1e-5;
  double rel_tol = 1e-4;
  double abs_tol = 1e-7;
  double small = 1e-6;  // below this |true| the absolute tolerance applies
  /// 0 checks every coordinate; otherwise at most this many per tensor,
  /// drawn with `seed`.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  std::size_t failures = 0;
  double max_rel_error = 0.0;  // over coordinates under the relative rule
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double loss = 0.0;
  double seconds = 0.0;
  bool passed() const;
  double max_rel_error() const;
  std::size_t checked() const;
};

/// True iff the pair passes: |fd| < small ⇒ |Δ| < abs_tol, else rel < rel_tol.
bool grad_pair_ok(double autodiff, double finite_diff, const GradCheckOptions& options);

/// Compares autodiff against central differences of the bptt_unroll loss
/// on `window` for every parameter of the model's current mode.
GradCheckReport gradient_check(const HmtModel& model, std::span<const Token> window, std::size_t unroll,
                               const GradCheckOptions& options = {});

struct GradStabilityRow {
  std::size_t depth = 0;
  bool recall = false;
  double grad_norm_m_init = 0.0;
  double grad_norm_ht = 0.0;
  bool finite_ok = false;
  std::size_t fd_checked = 0;
  double fd_max_rel_error = 0.0;
  bool fd_ok = false;
};

struct GradStabilityOptions {
  std::size_t fd_coords = 4;  // per probed tensor
  double h = 1e-5;
  /// Raise a stability error on any non-finite norm.
  bool assert_finite = false;
};

/// ‖∂loss/∂m_init‖ and ‖∂loss/∂H_T‖ per depth and mode, each cell on a fresh
/// model and a fixed random byte stream, with finite-difference spot checks.
std::vector<GradStabilityRow> grad_stability_report(const BackboneConfig& backbone, const HmtConfig& hmt,
                                                    std::span<const std::size_t> depths, std::uint64_t seed,
                                                    const GradStabilityOptions& options = {});

struct QaResult {
  double answer_nll = 0.0;  // mean over answer tokens
  double accuracy = 0.0;
  std::size_t sequences = 0;
  std::size_t answer_tokens = 0;
  /// Recall mode only: question segments whose argmax entry covers the
  /// question's own context.
  std::size_t recall_hits = 0;
  std::size_t recall_checked = 0;
};

/// Answer-span NLL and teacher-forced greedy accuracy (a sequence counts as
/// correct when the argmax at every answer position is the answer byte).
QaResult qa_eval(const HmtModel& model, std::span<const QaSequence> sequences);

struct RuntimeRow {
  std::string phase;
  double median_seconds = 0.0;
  std::size_t samples = 0;
};

/// Median wall time per segment of: forward pass, representation
/// extraction, prefix scores A, last-entry score A_n.
std::vector<RuntimeRow> runtime_breakdown(const HmtModel& model, std::span<const Token> stream);

/// Uniform random bytes.
std::vector<Token> random_bytes(std::size_t n, std::uint64_t seed, std::size_t vocab = 256);

// CSV writers; each starts with artifact_header(config).
void write_ppl_csv(std::ostream& out, const RunConfig& config, std::span<const PplRow> rows);
void write_histogram_csv(std::ostream& out, const RunConfig& config, const RecallHistogram& histogram);
void write_sweep_csv(std::ostream& out, const RunConfig& config, std::span<const SweepRow> rows);
void write_grad_stability_csv(std::ostream& out, const RunConfig& config, std::span<const GradStabilityRow> rows);
void write_runtime_csv(std::ostream& out, const RunConfig& config, std::span<const RuntimeRow> rows);

}  // namespace hmt
