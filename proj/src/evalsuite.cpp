// SPDX-License-Identifier: Apache-2.0
#include "hmt/evalsuite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>

#include "hmt/error.hpp"
#include "hmt/ops.hpp"
#include "hmt/optim.hpp"
#include "hmt/training.hpp"

namespace hmt {

double StreamEval::ppl() const { return std::exp(mean_nll()); }

namespace {

double row_nll(std::span<const double> row, std::size_t target) {
  const double peak = *std::max_element(row.begin(), row.end());
  double total = 0.0;
  for (double v : row) total += std::exp(v - peak);
  return peak + std::log(total) - row[target];
}

Token row_argmax(std::span<const double> row) {
  return static_cast<Token>(std::max_element(row.begin(), row.end()) - row.begin());
}

std::size_t segment_count(std::size_t tokens, std::size_t L) { return (tokens + L - 1) / L; }

// Index into event.entry_segments of the highest score; ties go to the
// later (more recent) entry.
std::size_t argmax_entry(const RecallEvent& event) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < event.scores.size(); ++i) {
    if (event.scores[i] >= event.scores[best]) best = i;
  }
  return best;
}

}  // namespace

StreamEval evaluate_stream(const HmtModel& model, std::span<const Token> stream, const EvalOptions& options) {
  NoGradGuard no_grad;
  const std::size_t L = model.config.segment_len;
  StreamEval out;
  if (options.keep_position_nll) out.position_nll.assign(stream.size(), 0.0);
  if (options.keep_argmax) out.position_argmax.assign(stream.size(), 0);

  HmtState state = HmtState::initial(model);
  for (std::size_t begin = 0; begin < stream.size(); begin += L) {
    const std::size_t end = std::min(begin + L, stream.size());
    StepResult step = hmt_step(model, state, stream.subspan(begin, end - begin));
    const std::size_t V = step.logits.cols();
    for (std::size_t i = begin; i < end && i + 1 < stream.size(); ++i) {
      const auto row = step.logits.data().subspan((i - begin) * V, V);
      const double nll = row_nll(row, stream[i + 1]);
      out.nll_sum += nll;
      ++out.scored;
      if (options.keep_position_nll) out.position_nll[i + 1] = nll;
      if (options.keep_argmax) out.position_argmax[i + 1] = row_argmax(row);
    }
    if (options.keep_events && step.recall) out.events.push_back(std::move(*step.recall));
  }
  return out;
}

double positions_nll(const HmtModel& model, std::span<const Token> stream, std::span<const std::size_t> positions) {
  if (positions.empty()) raise(ErrorKind::kData, "positions_nll: no positions to score");
  EvalOptions options;
  options.keep_position_nll = true;
  const StreamEval eval = evaluate_stream(model, stream, options);
  double total = 0.0;
  for (std::size_t p : positions) {
    if (p == 0 || p >= stream.size()) {
      raise(ErrorKind::kIndex, "positions_nll: position " + std::to_string(p) + " has no prediction");
    }
    total += eval.position_nll[p];
  }
  return total / static_cast<double>(positions.size());
}

std::vector<PplRow> perplexity(const HmtModel& model, std::span<const Token> stream,
                               std::span<const std::size_t> lengths) {
  std::vector<PplRow> rows;
  for (std::size_t length : lengths) {
    if (length < model.config.segment_len) {
      raise(ErrorKind::kConfig, "perplexity: length " + std::to_string(length) + " is shorter than segment_len " +
                                    std::to_string(model.config.segment_len));
    }
    if (length > stream.size()) {
      raise(ErrorKind::kData, "perplexity: stream of " + std::to_string(stream.size()) +
                                  " tokens is shorter than requested length " + std::to_string(length));
    }
  }
  for (std::size_t length : lengths) {
    const StreamEval eval = evaluate_stream(model, stream.first(length));
    rows.push_back({length, eval.ppl(), eval.mean_nll(), eval.scored});
  }
  return rows;
}

std::size_t RecallHistogram::total() const {
  std::size_t n = seed_hits;
  for (const auto& [distance, count] : bins) n += count;
  return n;
}

RecallHistogram histogram_from_events(std::span<const RecallEvent> events) {
  RecallHistogram h;
  for (const RecallEvent& event : events) {
    if (event.scores.empty() || event.scores.size() != event.entry_segments.size()) {
      raise(ErrorKind::kContract, "recall histogram: malformed event for segment " + std::to_string(event.segment));
    }
    ++h.events;
    const std::int64_t source = event.entry_segments[argmax_entry(event)];
    if (source == MemoryCache::kSeedSegment) {
      ++h.seed_hits;
    } else {
      ++h.bins[static_cast<std::size_t>(event.segment - source)];
    }
  }
  return h;
}

RecallHistogram recall_histogram(const HmtModel& model, std::span<const Token> stream,
                                 std::vector<RecallEvent>* events) {
  if (!model.config.recall) raise(ErrorKind::kContract, "recall_histogram: recall is disabled");
  if (segment_count(stream.size(), model.config.segment_len) < 2) {
    raise(ErrorKind::kData, "recall_histogram: stream covers fewer than 2 segments");
  }
  EvalOptions options;
  options.keep_events = true;
  StreamEval eval = evaluate_stream(model, stream, options);
  RecallHistogram h = histogram_from_events(eval.events);
  if (events) *events = std::move(eval.events);
  return h;
}

RecallAblation ablate_recall(const HmtModel& with_recall, const HmtModel& without_recall,
                             std::span<const Token> stream) {
  HmtConfig a = with_recall.config, b = without_recall.config;
  a.recall = b.recall = true;
  const Backbone& x = *with_recall.backbone;
  const Backbone& y = *without_recall.backbone;
  if (!(a == b) || x.d_model() != y.d_model() || x.vocab_size() != y.vocab_size() ||
      x.max_positions() != y.max_positions()) {
    raise(ErrorKind::kConfig, "ablate_recall: models differ in more than the recall flag");
  }
  HmtModel on = with_recall.with_config([&] { HmtConfig c = with_recall.config; c.recall = true; return c; }());
  HmtModel off = without_recall.with_config([&] { HmtConfig c = without_recall.config; c.recall = false; return c; }());
  const StreamEval e_on = evaluate_stream(on, stream);
  const StreamEval e_off = evaluate_stream(off, stream);
  return {e_on.ppl(), e_off.ppl(), e_on.mean_nll(), e_off.mean_nll(), e_on.scored};
}

std::vector<SweepRow> ablate_partial_summarization(const HmtModel& model, std::span<const Token> stream,
                                                   std::span<const std::size_t> j_values, std::uint64_t seed) {
  std::vector<SweepRow> rows;
  for (std::size_t j : j_values) {
    HmtConfig c = model.config;
    c.repr_len = j;
    rows.push_back({"repr_len", static_cast<double>(j), evaluate_stream(model.with_config(c), stream).ppl(), seed});
  }
  return rows;
}

std::vector<SweepRow> sweep_cache(const HmtModel& model, std::span<const Token> stream,
                                  std::span<const std::size_t> n_values, std::uint64_t seed) {
  std::vector<SweepRow> rows;
  for (std::size_t n : n_values) {
    HmtConfig c = model.config;
    c.cache_size = n;
    rows.push_back({"cache_size", static_cast<double>(n), evaluate_stream(model.with_config(c), stream).ppl(), seed});
  }
  return rows;
}

namespace {

SweepRow train_and_eval(const RunConfig& config, WindowSampler sampler, std::span<const Token> eval_stream,
                        const std::string& param, double value) {
  Trainer trainer = make_stage_trainer(config, std::move(sampler));
  trainer.run(config.train.steps);
  return {param, value, evaluate_stream(trainer.model(), eval_stream).ppl(), config.train.seed};
}

}  // namespace

std::vector<SweepRow> sweep_sensory(const RunConfig& config, const WindowSampler& sampler,
                                    std::span<const Token> eval_stream, std::span<const std::size_t> k_values) {
  std::size_t widest = 0;
  for (std::size_t k : k_values) {
    if (k >= config.hmt.segment_len) {
      raise(ErrorKind::kConfig, "sweep_sensory: sensory_len " + std::to_string(k) + " must be below segment_len");
    }
    widest = std::max(widest, k);
  }
  // One position table for every arm so arms differ only in k.
  RunConfig base = config;
  base.backbone.max_pos = std::max(base.backbone.max_pos, base.hmt.segment_len + widest + 2);
  std::vector<SweepRow> rows;
  for (std::size_t k : k_values) {
    RunConfig arm = base;
    arm.hmt.sensory_len = k;
    rows.push_back(train_and_eval(arm, sampler, eval_stream, "sensory_len", static_cast<double>(k)));
  }
  return rows;
}

std::vector<SweepRow> sweep_depth(const RunConfig& config, const std::vector<Token>& corpus,
                                  std::span<const Token> eval_stream, std::span<const std::size_t> depths) {
  auto shared = std::make_shared<const std::vector<Token>>(corpus);
  std::vector<SweepRow> rows;
  for (std::size_t depth : depths) {
    RunConfig arm = config;
    arm.train.unroll = depth;
    rows.push_back(train_and_eval(arm, corpus_windows(shared, arm.hmt.segment_len, depth), eval_stream, "unroll",
                                  static_cast<double>(depth)));
  }
  return rows;
}

bool grad_pair_ok(double autodiff, double finite_diff, const GradCheckOptions& o) {
  if (!std::isfinite(autodiff) || !std::isfinite(finite_diff)) return false;
  if (std::abs(finite_diff) < o.small) return std::abs(autodiff - finite_diff) < o.abs_tol;
  return relative_error(autodiff, finite_diff) < o.rel_tol;
}

bool GradCheckReport::passed() const {
  for (const auto& e : entries) {
    if (e.failures > 0) return false;
  }
  return !entries.empty();
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

std::size_t GradCheckReport::checked() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.checked;
  return n;
}

namespace {

std::vector<std::size_t> probe_coords(std::size_t size, std::size_t max_coords, Rng& rng) {
  std::vector<std::size_t> all(size);
  for (std::size_t i = 0; i < size; ++i) all[i] = i;
  if (max_coords == 0 || max_coords >= size) return all;
  for (std::size_t i = 0; i < max_coords; ++i) std::swap(all[i], all[i + rng.below(size - i)]);
  all.resize(max_coords);
  std::sort(all.begin(), all.end());
  return all;
}

std::vector<double> grad_or_zero(const Tensor& t) {
  if (!t.has_grad()) return std::vector<double>(t.size(), 0.0);
  return {t.grad().begin(), t.grad().end()};
}

}  // namespace

GradCheckReport gradient_check(const HmtModel& model, std::span<const Token> window, std::size_t unroll,
                               const GradCheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const ParamList params = model.parameters();
  zero_grads(params);
  GradCheckReport report;
  {
    UnrollResult r = bptt_unroll(model, window, unroll);
    report.loss = r.loss.item();
    r.loss.backward();
  }
  std::vector<std::vector<double>> autodiff;
  for (const auto& p : params) autodiff.push_back(grad_or_zero(p.tensor));
  zero_grads(params);

  const auto f = [&] {
    NoGradGuard no_grad;
    return bptt_unroll(model, window, unroll).loss.item();
  };
  Rng rng(options.seed);
  for (std::size_t t = 0; t < params.size(); ++t) {
    const auto coords = probe_coords(params[t].tensor.size(), options.max_coords, rng);
    const auto fd = finite_diff_coords(f, params[t].tensor, coords, options.h);
    GradCheckEntry entry{params[t].name, coords.size(), 0, 0.0, 0.0};
    for (std::size_t c = 0; c < coords.size(); ++c) {
      const double a = autodiff[t][coords[c]];
      const double diff = std::abs(a - fd[c]);
      entry.max_abs_error = std::max(entry.max_abs_error, diff);
      if (std::abs(fd[c]) >= options.small) entry.max_rel_error = std::max(entry.max_rel_error, relative_error(a, fd[c]));
      if (!grad_pair_ok(a, fd[c], options)) ++entry.failures;
    }
    report.entries.push_back(std::move(entry));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::vector<GradStabilityRow> grad_stability_report(const BackboneConfig& backbone, const HmtConfig& hmt,
                                                    std::span<const std::size_t> depths, std::uint64_t seed,
                                                    const GradStabilityOptions& options) {
  GradCheckOptions tolerance;
  tolerance.h = options.h;
  std::vector<GradStabilityRow> rows;
  for (std::size_t depth : depths) {
    if (depth == 0) raise(ErrorKind::kConfig, "grad_stability_report: depth must be at least 1");
    const std::vector<Token> stream =
        random_bytes(depth * hmt.segment_len + 1, derive_seed(seed, SeedOffsets::kEvalStream), backbone.vocab_size);
    for (bool recall : {true, false}) {
      HmtConfig cfg = hmt;
      cfg.recall = recall;
      const HmtModel model = HmtModel::create(backbone, cfg, derive_seed(seed, SeedOffsets::kInit));
      GradStabilityRow row;
      row.depth = depth;
      row.recall = recall;

      UnrollResult r = bptt_unroll(model, stream, depth);
      r.loss.backward();
      const Tensor& m_init = model.prompts.memory_seed;
      const Tensor& h_t = model.prompts.summary_prompt;
      const std::vector<double> g_m = grad_or_zero(m_init);
      const std::vector<double> g_t = recall ? grad_or_zero(h_t) : std::vector<double>(h_t.size(), 0.0);
      row.grad_norm_m_init = l2_norm(g_m);
      row.grad_norm_ht = l2_norm(g_t);
      row.finite_ok = std::isfinite(r.loss.item()) && std::isfinite(row.grad_norm_m_init) &&
                      std::isfinite(row.grad_norm_ht);
      zero_grads(model.parameters());
      if (!row.finite_ok && options.assert_finite) {
        raise(ErrorKind::kStability, "grad_stability_report: non-finite gradient at depth " + std::to_string(depth) +
                                         (recall ? " (recall)" : " (no recall)"));
      }

      const auto f = [&] {
        NoGradGuard no_grad;
        return bptt_unroll(model, stream, depth).loss.item();
      };
      Rng rng(derive_seed(seed, SeedOffsets::kProbe));
      row.fd_ok = row.finite_ok;
      auto probe = [&](const Tensor& t, const std::vector<double>& g) {
        const auto coords = probe_coords(t.size(), options.fd_coords, rng);
        const auto fd = finite_diff_coords(f, t, coords, options.h);
        for (std::size_t c = 0; c < coords.size(); ++c) {
          ++row.fd_checked;
          if (std::abs(fd[c]) >= tolerance.small) {
            row.fd_max_rel_error = std::max(row.fd_max_rel_error, relative_error(g[coords[c]], fd[c]));
          }
          row.fd_ok = row.fd_ok && grad_pair_ok(g[coords[c]], fd[c], tolerance);
        }
      };
      probe(m_init, g_m);
      if (recall) probe(h_t, g_t);
      rows.push_back(row);
    }
  }
  return rows;
}

QaResult qa_eval(const HmtModel& model, std::span<const QaSequence> sequences) {
  QaResult result;
  std::size_t correct = 0;
  double nll = 0.0;
  const std::size_t L = model.config.segment_len;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const QaSequence& seq = sequences[i];
    if (seq.answer.size() == 0 || seq.question.size() == 0) {
      raise(ErrorKind::kData, "qa_eval: sequence " + std::to_string(i) + " has an empty question or answer span");
    }
    if (seq.answer.begin == 0 || seq.answer.end > seq.tokens.size()) {
      raise(ErrorKind::kData, "qa_eval: sequence " + std::to_string(i) + " has an answer span outside its tokens");
    }
    EvalOptions options;
    options.keep_position_nll = true;
    options.keep_argmax = true;
    options.keep_events = model.config.recall;
    const StreamEval eval = evaluate_stream(model, seq.tokens, options);
    bool all_match = true;
    for (std::size_t p = seq.answer.begin; p < seq.answer.end; ++p) {
      nll += eval.position_nll[p];
      all_match = all_match && eval.position_argmax[p] == seq.tokens[p];
    }
    result.answer_tokens += seq.answer.size();
    if (all_match) ++correct;

    if (model.config.recall && i < seq.context_spans.size()) {
      const auto segment = static_cast<std::int64_t>(seq.question.begin / L);
      for (const RecallEvent& event : eval.events) {
        if (event.segment != segment) continue;
        ++result.recall_checked;
        const std::int64_t source = event.entry_segments[argmax_entry(event)];
        const Span& ctx = seq.context_spans[i];
        if (source >= 0 && static_cast<std::size_t>(source) * L < ctx.end &&
            (static_cast<std::size_t>(source) + 1) * L > ctx.begin) {
          ++result.recall_hits;
        }
      }
    }
  }
  result.sequences = sequences.size();
  if (result.answer_tokens > 0) result.answer_nll = nll / static_cast<double>(result.answer_tokens);
  if (result.sequences > 0) result.accuracy = static_cast<double>(correct) / static_cast<double>(result.sequences);
  return result;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace

std::vector<RuntimeRow> runtime_breakdown(const HmtModel& model, std::span<const Token> stream) {
  if (!model.config.recall) raise(ErrorKind::kContract, "runtime_breakdown: recall is disabled");
  const std::size_t L = model.config.segment_len;
  if (stream.size() < L) raise(ErrorKind::kData, "runtime_breakdown: stream shorter than one segment");
  NoGradGuard no_grad;
  using Clock = std::chrono::steady_clock;
  const auto seconds = [](Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
  };
  const Backbone& backbone = *model.backbone;

  {
    HmtState warm = HmtState::initial(model);
    hmt_step(model, warm, stream.first(L));
  }

  std::vector<double> forward, extraction, prefix, last;
  HmtState state = HmtState::initial(model);
  for (std::size_t begin = 0; begin < stream.size(); begin += L) {
    const std::size_t end = std::min(begin + L, stream.size());
    const auto tokens = stream.subspan(begin, end - begin);
    const Tensor h_n = backbone.embed(tokens);

    auto t0 = Clock::now();
    const Embedding h_sum = extract_representation(h_n, model.config, model.prompts, backbone);
    auto t1 = Clock::now();
    extraction.push_back(seconds(t0, t1));

    const MemoryCache before = state.cache.without_newest();
    const Embedding newest = state.cache[state.cache.size() - 1].embedding;
    t0 = Clock::now();
    const RecallScratch scratch = prepare_recall(h_sum, before, model.prompts);
    t1 = Clock::now();
    prefix.push_back(seconds(t0, t1));

    t0 = Clock::now();
    const Embedding h_s = memory_search_incremental(scratch, before, newest, model.prompts);
    t1 = Clock::now();
    last.push_back(seconds(t0, t1));

    t0 = Clock::now();
    const SegmentOutput out = process_segment(augment_segment(h_s, state.sensory, h_n), tokens.size(), backbone);
    const Tensor logits = backbone.logits(out.hidden);
    t1 = Clock::now();
    forward.push_back(seconds(t0, t1));

    update_cache(state.cache, state.segment, out.memory);
    state.previous_memory = out.memory;
    const std::size_t keep = std::min(model.config.sensory_len, tokens.size());
    state.sensory = slice_rows(h_n, tokens.size() - keep, tokens.size());
    ++state.segment;
  }
  return {{"forward_pass", median(forward), forward.size()},
          {"representation_extraction", median(extraction), extraction.size()},
          {"prefix_scores", median(prefix), prefix.size()},
          {"last_entry_score", median(last), last.size()}};
}

std::vector<Token> random_bytes(std::size_t n, std::uint64_t seed, std::size_t vocab) {
  Rng rng(seed);
  std::vector<Token> out(n);
  for (auto& t : out) t = static_cast<Token>(rng.below(vocab));
  return out;
}

namespace {

void write_double(std::ostream& out, double v) {
  const auto old = out.precision(std::numeric_limits<double>::max_digits10);
  out << v;
  out.precision(old);
}

}  // namespace

void write_ppl_csv(std::ostream& out, const RunConfig& config, std::span<const PplRow> rows) {
  out << artifact_header(config) << "length,ppl\n";
  for (const auto& r : rows) {
    out << r.length << ',';
    write_double(out, r.ppl);
    out << '\n';
  }
}

void write_histogram_csv(std::ostream& out, const RunConfig& config, const RecallHistogram& h) {
  out << artifact_header(config) << "# events = " << h.events << "\ndistance,count\n";
  for (const auto& [distance, count] : h.bins) out << distance << ',' << count << '\n';
  out << "m_init," << h.seed_hits << '\n';
}

void write_sweep_csv(std::ostream& out, const RunConfig& config, std::span<const SweepRow> rows) {
  out << artifact_header(config) << "param,value,ppl,seed\n";
  for (const auto& r : rows) {
    out << r.param << ',' << r.value << ',';
    write_double(out, r.ppl);
    out << ',' << r.seed << '\n';
  }
}

void write_grad_stability_csv(std::ostream& out, const RunConfig& config, std::span<const GradStabilityRow> rows) {
  out << artifact_header(config) << "depth,mode,grad_norm_m_init,grad_norm_HT,finite_ok\n";
  for (const auto& r : rows) {
    out << r.depth << ',' << (r.recall ? "recall" : "no_recall") << ',';
    write_double(out, r.grad_norm_m_init);
    out << ',';
    write_double(out, r.grad_norm_ht);
    out << ',' << (r.finite_ok ? 1 : 0) << '\n';
  }
}

void write_runtime_csv(std::ostream& out, const RunConfig& config, std::span<const RuntimeRow> rows) {
  out << artifact_header(config) << "phase,median_seconds,samples\n";
  for (const auto& r : rows) {
    out << r.phase << ',';
    write_double(out, r.median_seconds);
    out << ',' << r.samples << '\n';
  }
}

}  // namespace hmt
