// SPDX-License-Identifier: Apache-2.0
#include "hmt/hmt.h"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hmt/checkpoint.hpp"
#include "hmt/config.hpp"
#include "hmt/datagen.hpp"
#include "hmt/error.hpp"
#include "hmt/evalsuite.hpp"
#include "hmt/recurrence.hpp"
#include "hmt/rng.hpp"
#include "hmt/training.hpp"

struct hmt_config {
  std::string text;
  std::string source;
  hmt::Overrides overrides;
  hmt::RunConfig resolved;
};

struct hmt_tokens {
  hmt::TokenStream ids;
};

struct hmt_model {
  hmt::RunConfig config;
  hmt::HmtModel model;
};

namespace {

thread_local std::string g_last_error;

hmt_status status_of(hmt::ErrorKind kind) {
  switch (kind) {
    case hmt::ErrorKind::kDimension: return HMT_ERR_DIMENSION;
    case hmt::ErrorKind::kNumericDomain: return HMT_ERR_NUMERIC;
    case hmt::ErrorKind::kIndex: return HMT_ERR_INDEX;
    case hmt::ErrorKind::kContract: return HMT_ERR_CONTRACT;
    case hmt::ErrorKind::kCapacity: return HMT_ERR_CAPACITY;
    case hmt::ErrorKind::kConfig: return HMT_ERR_CONFIG;
    case hmt::ErrorKind::kData: return HMT_ERR_DATA;
    case hmt::ErrorKind::kFormat: return HMT_ERR_FORMAT;
    case hmt::ErrorKind::kStability: return HMT_ERR_STABILITY;
    case hmt::ErrorKind::kIo: return HMT_ERR_IO;
  }
  return HMT_ERR_INTERNAL;
}

struct ArgumentError {
  std::string message;
};

void require(const void* p, const char* what) {
  if (!p) throw ArgumentError{std::string(what) + " must not be null"};
}

template <typename F>
hmt_status guarded(F&& body) {
  try {
    body();
    return HMT_OK;
  } catch (const hmt::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const ArgumentError& e) {
    g_last_error = e.message;
    return HMT_ERR_ARGUMENT;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return HMT_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return HMT_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown exception";
    return HMT_ERR_INTERNAL;
  }
}

void copy_out(const std::string& s, char* buf, std::size_t cap, std::size_t* len) {
  if (len) *len = s.size();
  if (buf && cap > 0) {
    const std::size_t n = std::min(cap - 1, s.size());
    std::memcpy(buf, s.data(), n);
    buf[n] = '\0';
  }
}

hmt::RunConfig resolve(const hmt_config& c) {
  std::ostringstream quiet;
  return hmt::parse_config_text(c.text, c.overrides, quiet, c.source);
}

hmt_config* make_config(std::string text, std::string source, std::ostream& warnings) {
  auto c = std::make_unique<hmt_config>();
  c->resolved = hmt::parse_config_text(text, {}, warnings, source);
  c->resolved.validate();
  c->text = std::move(text);
  c->source = std::move(source);
  return c.release();
}

hmt_tokens* wrap(hmt::TokenStream ids) { return new hmt_tokens{std::move(ids)}; }

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) hmt::raise(hmt::ErrorKind::kIo, "cannot open '" + path + "' for writing");
  return out;
}

// Writes through an ostream only when a path is given.
template <typename F>
void maybe_write(const char* path, F&& write) {
  if (!path) return;
  std::ofstream out = open_out(path);
  write(out);
  if (!out) hmt::raise(hmt::ErrorKind::kIo, std::string("write to '") + path + "' failed");
}

hmt::PlantedRecallSpec planted_spec(const hmt_planted_spec& s) {
  hmt::PlantedRecallSpec spec;
  spec.num_segments = s.num_segments;
  spec.segment_len = s.segment_len;
  spec.distance = s.distance;
  spec.query_at = s.query_at;
  spec.seed = s.seed;
  return spec;
}

std::vector<hmt::QaSequence> qa_sequences(const char* tsv, std::size_t synthetic, std::uint64_t seed,
                                          std::size_t m) {
  std::vector<hmt::QaTuple> tuples =
      tsv ? hmt::read_qa_tsv(tsv) : hmt::gen_synthetic_qa(synthetic, hmt::derive_seed(seed, hmt::SeedOffsets::kData));
  return hmt::build_qa_sequences(tuples, m);
}

void fill_summary(hmt_train_summary* summary, const std::vector<hmt::StepRecord>& log, double seconds) {
  if (!summary) return;
  summary->steps = log.size();
  summary->first_loss = log.empty() ? 0.0 : log.front().loss;
  summary->final_loss = log.empty() ? 0.0 : log.back().loss;
  summary->seconds = seconds;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

hmt_status run_stage(const hmt::RunConfig& config, hmt::WindowSampler sampler, const char* init,
                     const char* out_ckpt, const char* log_path, hmt_train_summary* summary) {
  return guarded([&] {
    const auto start = std::chrono::steady_clock::now();
    std::optional<hmt::Checkpoint> from;
    if (init) from = hmt::load_checkpoint(init);
    std::ofstream log;
    if (log_path) log = open_out(log_path);
    hmt::StageResult result =
        hmt::train_stage(config, std::move(sampler), from ? &*from : nullptr, log_path ? &log : nullptr);
    if (out_ckpt) hmt::save_checkpoint(out_ckpt, result.checkpoint);
    fill_summary(summary, result.log, seconds_since(start));
  });
}

}  // namespace

extern "C" {

const char* hmt_version(void) { return "0.1.0"; }

const char* hmt_status_name(hmt_status status) {
  switch (status) {
    case HMT_OK: return "ok";
    case HMT_ERR_DIMENSION: return "dimension error";
    case HMT_ERR_NUMERIC: return "numeric domain error";
    case HMT_ERR_INDEX: return "index error";
    case HMT_ERR_CONTRACT: return "contract error";
    case HMT_ERR_CAPACITY: return "capacity error";
    case HMT_ERR_CONFIG: return "config error";
    case HMT_ERR_DATA: return "data error";
    case HMT_ERR_FORMAT: return "format error";
    case HMT_ERR_STABILITY: return "stability error";
    case HMT_ERR_IO: return "io error";
    case HMT_ERR_ARGUMENT: return "invalid argument";
    case HMT_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* hmt_last_error(void) { return g_last_error.c_str(); }

// ---- configuration

size_t hmt_config_key_count(void) { return hmt::config_keys().size(); }

const char* hmt_config_key_name(size_t index) {
  const auto& keys = hmt::config_keys();
  return index < keys.size() ? keys[index].c_str() : nullptr;
}

hmt_status hmt_config_default(hmt_config** out) {
  return guarded([&] {
    require(out, "out");
    std::ostringstream quiet;
    *out = make_config("", "<default>", quiet);
  });
}

hmt_status hmt_config_load(const char* path, hmt_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    std::ifstream in(path, std::ios::binary);
    if (!in) hmt::raise(hmt::ErrorKind::kConfig, std::string("cannot open config '") + path + "'");
    std::ostringstream text;
    text << in.rdbuf();
    *out = make_config(text.str(), path, std::cerr);
  });
}

hmt_status hmt_config_parse(const char* text, hmt_config** out) {
  return guarded([&] {
    require(text, "text");
    require(out, "out");
    *out = make_config(text, "<text>", std::cerr);
  });
}

hmt_status hmt_config_set(hmt_config* config, const char* key, const char* value) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    require(value, "value");
    hmt_config next = *config;
    next.overrides.emplace_back(key, value);
    next.resolved = resolve(next);
    next.resolved.validate();
    *config = std::move(next);
  });
}

hmt_status hmt_config_set_many(hmt_config* config, const char* const* keys, const char* const* values, size_t n) {
  return guarded([&] {
    require(config, "config");
    if (n > 0) {
      require(keys, "keys");
      require(values, "values");
    }
    hmt_config next = *config;
    for (size_t i = 0; i < n; ++i) {
      require(keys[i], "key");
      require(values[i], "value");
      next.overrides.emplace_back(keys[i], values[i]);
    }
    next.resolved = resolve(next);
    next.resolved.validate();
    *config = std::move(next);
  });
}

hmt_status hmt_config_get(const hmt_config* config, const char* key, char* buf, size_t cap, size_t* len) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    std::istringstream lines(config->resolved.to_text());
    const std::string prefix = std::string(key) + " = ";
    for (std::string line; std::getline(lines, line);) {
      if (line.rfind(prefix, 0) == 0) {
        copy_out(line.substr(prefix.size()), buf, cap, len);
        return;
      }
    }
    hmt::raise(hmt::ErrorKind::kConfig, std::string("unknown config key '") + key + "'");
  });
}

hmt_status hmt_config_text(const hmt_config* config, char* buf, size_t cap, size_t* len) {
  return guarded([&] {
    require(config, "config");
    copy_out(config->resolved.to_text(), buf, cap, len);
  });
}

hmt_status hmt_config_hash(const hmt_config* config, char buf[17]) {
  return guarded([&] {
    require(config, "config");
    require(buf, "buf");
    copy_out(config->resolved.hash(), buf, 17, nullptr);
  });
}

void hmt_config_free(hmt_config* config) { delete config; }

// ---- token buffers

hmt_status hmt_tokens_read(const char* path, hmt_tokens** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = wrap(hmt::read_tokens(path));
  });
}

hmt_status hmt_tokens_from_bytes(const uint8_t* bytes, size_t n, hmt_tokens** out) {
  return guarded([&] {
    require(out, "out");
    if (n > 0) require(bytes, "bytes");
    *out = wrap(hmt::TokenStream(bytes, bytes + n));
  });
}

hmt_status hmt_tokens_from_ids(const uint16_t* ids, size_t n, hmt_tokens** out) {
  return guarded([&] {
    require(out, "out");
    if (n > 0) require(ids, "ids");
    *out = wrap(hmt::TokenStream(ids, ids + n));
  });
}

size_t hmt_tokens_size(const hmt_tokens* tokens) { return tokens ? tokens->ids.size() : 0; }

const uint16_t* hmt_tokens_data(const hmt_tokens* tokens) { return tokens ? tokens->ids.data() : nullptr; }

hmt_status hmt_tokens_write(const hmt_tokens* tokens, const char* path) {
  return guarded([&] {
    require(tokens, "tokens");
    require(path, "path");
    hmt::write_token_file(path, tokens->ids);
  });
}

hmt_status hmt_tokens_write_bytes(const hmt_tokens* tokens, const char* path) {
  return guarded([&] {
    require(tokens, "tokens");
    require(path, "path");
    for (std::size_t i = 0; i < tokens->ids.size(); ++i) {
      if (tokens->ids[i] > 255) {
        hmt::raise(hmt::ErrorKind::kData, "token " + std::to_string(tokens->ids[i]) + " at position " +
                                              std::to_string(i) + " is not a byte");
      }
    }
    std::ofstream out = open_out(path);
    out << hmt::detokenize(tokens->ids);
    if (!out) hmt::raise(hmt::ErrorKind::kIo, std::string("write to '") + path + "' failed");
  });
}

hmt_status hmt_tokens_split(const hmt_tokens* tokens, hmt_tokens** train, hmt_tokens** val, hmt_tokens** test) {
  return guarded([&] {
    require(tokens, "tokens");
    require(train, "train");
    require(val, "val");
    require(test, "test");
    hmt::StreamSplit s = hmt::split_stream(tokens->ids);
    auto a = std::make_unique<hmt_tokens>(hmt_tokens{std::move(s.train)});
    auto b = std::make_unique<hmt_tokens>(hmt_tokens{std::move(s.val)});
    *test = wrap(std::move(s.test));
    *train = a.release();
    *val = b.release();
  });
}

void hmt_tokens_free(hmt_tokens* tokens) { delete tokens; }

// ---- dataset builders

hmt_status hmt_data_concat(const hmt_tokens* const* samples, size_t n, size_t target_length, hmt_tokens** chunks,
                           size_t cap, size_t* count) {
  return guarded([&] {
    require(samples, "samples");
    require(count, "count");
    if (cap > 0) require(chunks, "chunks");
    std::vector<hmt::TokenStream> in;
    for (std::size_t i = 0; i < n; ++i) {
      require(samples[i], "sample");
      in.push_back(samples[i]->ids);
    }
    std::vector<hmt::TokenStream> out = hmt::concat_samples(in, target_length);
    std::vector<std::unique_ptr<hmt_tokens>> owned;
    for (std::size_t i = 0; i < out.size() && i < cap; ++i) {
      owned.push_back(std::make_unique<hmt_tokens>(hmt_tokens{std::move(out[i])}));
    }
    for (std::size_t i = 0; i < owned.size(); ++i) chunks[i] = owned[i].release();
    *count = out.size();
  });
}

hmt_status hmt_data_interleave(const hmt_tokens* a, const hmt_tokens* b, size_t chunk, hmt_tokens** out) {
  return guarded([&] {
    require(a, "a");
    require(b, "b");
    require(out, "out");
    *out = wrap(hmt::interleave_samples(a->ids, b->ids, chunk));
  });
}

hmt_status hmt_data_deinterleave(const hmt_tokens* stream, size_t len_a, size_t len_b, size_t chunk,
                                 hmt_tokens** a, hmt_tokens** b) {
  return guarded([&] {
    require(stream, "stream");
    require(a, "a");
    require(b, "b");
    auto [first, second] = hmt::deinterleave(stream->ids, len_a, len_b, chunk);
    auto owned = std::make_unique<hmt_tokens>(hmt_tokens{std::move(first)});
    *b = wrap(std::move(second));
    *a = owned.release();
  });
}

hmt_status hmt_data_dilate(const hmt_tokens* sample, uint16_t filler, size_t run, hmt_tokens** out) {
  return guarded([&] {
    require(sample, "sample");
    require(out, "out");
    *out = wrap(hmt::dilate_sample(sample->ids, filler, run));
  });
}

hmt_status hmt_data_strip_dilation(const hmt_tokens* stream, size_t run, hmt_tokens** out) {
  return guarded([&] {
    require(stream, "stream");
    require(out, "out");
    *out = wrap(hmt::strip_dilation(stream->ids, run));
  });
}

void hmt_planted_spec_default(hmt_planted_spec* spec) {
  if (!spec) return;
  const hmt::PlantedRecallSpec d;
  *spec = hmt_planted_spec{d.num_segments, d.segment_len, d.distance, d.query_at, d.seed};
}

hmt_status hmt_data_planted(const hmt_planted_spec* spec, hmt_tokens** stream, size_t* answer_position) {
  return guarded([&] {
    require(spec, "spec");
    require(stream, "stream");
    hmt::PlantedRecall sample = hmt::gen_planted_recall(planted_spec(*spec));
    if (answer_position) *answer_position = sample.query_positions.front();
    *stream = wrap(std::move(sample.stream));
  });
}

hmt_status hmt_data_qa_build(const char* tsv_path, size_t synthetic_count, uint64_t seed, size_t m,
                             const char* out_dir, size_t* sequences) {
  return guarded([&] {
    require(out_dir, "out_dir");
    const std::vector<hmt::QaSequence> seqs = qa_sequences(tsv_path, synthetic_count, seed, m);
    const std::filesystem::path dir(out_dir);
    if (!std::filesystem::is_directory(dir)) {
      hmt::raise(hmt::ErrorKind::kIo, std::string("output directory '") + out_dir + "' does not exist");
    }
    std::ofstream spans = open_out((dir / "spans.csv").string());
    spans << "file,question_begin,question_end,answer_begin,answer_end,label\n";
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "seq_%04zu.bin", i);
      hmt::write_token_file((dir / name).string(), seqs[i].tokens);
      spans << name << ',' << seqs[i].question.begin << ',' << seqs[i].question.end << ','
            << seqs[i].answer.begin << ',' << seqs[i].answer.end << ',' << seqs[i].short_label.value_or("")
            << '\n';
    }
    if (!spans) hmt::raise(hmt::ErrorKind::kIo, "write to spans.csv failed");
    if (sequences) *sequences = seqs.size();
  });
}

// ---- models

hmt_status hmt_model_create(const hmt_config* config, hmt_model** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    const hmt::RunConfig& c = config->resolved;
    *out = new hmt_model{
        c, hmt::HmtModel::create(c.backbone, c.hmt, hmt::derive_seed(c.train.seed, hmt::SeedOffsets::kInit))};
  });
}

hmt_status hmt_model_load(const char* checkpoint_path, const hmt_config* eval_config, hmt_model** out) {
  return guarded([&] {
    require(checkpoint_path, "checkpoint_path");
    require(out, "out");
    hmt::Checkpoint ckpt = hmt::load_checkpoint(checkpoint_path);
    hmt::RunConfig config = eval_config ? eval_config->resolved : ckpt.config;
    if (!eval_config) config.hmt = hmt::stage_hmt_config(ckpt.config);
    hmt::HmtModel model = hmt::model_from_checkpoint(
        ckpt, config.backbone, config.hmt, hmt::derive_seed(config.train.seed, hmt::SeedOffsets::kStage2Init));
    *out = new hmt_model{std::move(config), std::move(model)};
  });
}

hmt_status hmt_model_config(const hmt_model* model, hmt_config** out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    std::ostringstream quiet;
    *out = make_config(model->config.to_text(), "<model>", quiet);
  });
}

hmt_status hmt_model_parameter_count(const hmt_model* model, size_t* count) {
  return guarded([&] {
    require(model, "model");
    require(count, "count");
    std::size_t total = 0;
    for (const auto& p : model->model.parameters()) total += p.tensor.size();
    *count = total;
  });
}

void hmt_model_free(hmt_model* model) { delete model; }

// ---- training

hmt_status hmt_train(const hmt_config* config, const hmt_tokens* corpus, const char* init_checkpoint,
                     const char* out_checkpoint, const char* log_path, hmt_train_summary* summary) {
  if (!config || !corpus) {
    g_last_error = "config and corpus must not be null";
    return HMT_ERR_ARGUMENT;
  }
  const hmt::RunConfig& c = config->resolved;
  hmt::WindowSampler sampler;
  const hmt_status built = guarded([&] {
    sampler = hmt::corpus_windows(std::make_shared<const std::vector<hmt::Token>>(corpus->ids),
                                  c.hmt.segment_len, c.train.unroll);
  });
  if (built != HMT_OK) return built;
  return run_stage(c, std::move(sampler), init_checkpoint, out_checkpoint, log_path, summary);
}

hmt_status hmt_train_planted(const hmt_config* config, const hmt_planted_spec* task, const char* init_checkpoint,
                             const char* out_checkpoint, const char* log_path, hmt_train_summary* summary) {
  if (!config || !task) {
    g_last_error = "config and task must not be null";
    return HMT_ERR_ARGUMENT;
  }
  hmt::RunConfig c = config->resolved;
  if (task->segment_len != c.hmt.segment_len) {
    g_last_error = "planted task segment_len " + std::to_string(task->segment_len) + " differs from segment_len " +
                   std::to_string(c.hmt.segment_len);
    return HMT_ERR_CONFIG;
  }
  // The whole sample (bindings plus query segment) is one window.
  c.train.unroll = task->num_segments;
  return run_stage(c, hmt::planted_recall_windows(planted_spec(*task)), init_checkpoint, out_checkpoint, log_path,
                   summary);
}

hmt_status hmt_train_resume(const char* checkpoint, const hmt_tokens* corpus, size_t steps,
                            const char* out_checkpoint, const char* log_path, hmt_train_summary* summary) {
  return guarded([&] {
    require(checkpoint, "checkpoint");
    require(corpus, "corpus");
    const auto start = std::chrono::steady_clock::now();
    hmt::Checkpoint ckpt = hmt::load_checkpoint(checkpoint);
    hmt::Trainer trainer = hmt::resume_trainer(
        ckpt, hmt::corpus_windows(std::make_shared<const std::vector<hmt::Token>>(corpus->ids),
                                  ckpt.config.hmt.segment_len, ckpt.config.train.unroll));
    std::ofstream log;
    if (log_path) {
      log = open_out(log_path);
      hmt::write_log_header(log);
    }
    std::vector<hmt::StepRecord> records = trainer.run(steps, log_path ? &log : nullptr);
    if (out_checkpoint) hmt::save_checkpoint(out_checkpoint, hmt::capture(ckpt.config, trainer));
    fill_summary(summary, records, seconds_since(start));
  });
}

// ---- evaluation

hmt_status hmt_eval_stream(const hmt_model* model, const hmt_tokens* stream, double* mean_nll, double* ppl,
                           size_t* scored) {
  return guarded([&] {
    require(model, "model");
    require(stream, "stream");
    const hmt::StreamEval e = hmt::evaluate_stream(model->model, stream->ids);
    if (mean_nll) *mean_nll = e.mean_nll();
    if (ppl) *ppl = e.ppl();
    if (scored) *scored = e.scored;
  });
}

hmt_status hmt_eval_perplexity(const hmt_model* model, const hmt_tokens* stream, const size_t* lengths, size_t n,
                               const char* csv_path, double* ppl_out) {
  return guarded([&] {
    require(model, "model");
    require(stream, "stream");
    if (n > 0) require(lengths, "lengths");
    const std::vector<hmt::PplRow> rows =
        hmt::perplexity(model->model, stream->ids, std::span<const std::size_t>(lengths, n));
    maybe_write(csv_path, [&](std::ostream& out) { hmt::write_ppl_csv(out, model->config, rows); });
    if (ppl_out) {
      for (std::size_t i = 0; i < rows.size(); ++i) ppl_out[i] = rows[i].ppl;
    }
  });
}

hmt_status hmt_eval_histogram(const hmt_model* model, const hmt_tokens* stream, const char* csv_path,
                              size_t* distances, size_t* counts, size_t cap, hmt_histogram_summary* summary) {
  return guarded([&] {
    require(model, "model");
    require(stream, "stream");
    if (cap > 0) {
      require(distances, "distances");
      require(counts, "counts");
    }
    const hmt::RecallHistogram h = hmt::recall_histogram(model->model, stream->ids);
    maybe_write(csv_path, [&](std::ostream& out) { hmt::write_histogram_csv(out, model->config, h); });
    std::size_t i = 0;
    for (const auto& [distance, count] : h.bins) {
      if (i >= cap) break;
      distances[i] = distance;
      counts[i] = count;
      ++i;
    }
    if (summary) *summary = hmt_histogram_summary{h.events, h.seed_hits, h.bins.size()};
  });
}

hmt_status hmt_eval_planted(const hmt_model* model, const hmt_planted_spec* task, size_t samples,
                            double* mean_answer_nll) {
  return guarded([&] {
    require(model, "model");
    require(task, "task");
    require(mean_answer_nll, "mean_answer_nll");
    if (samples == 0) hmt::raise(hmt::ErrorKind::kConfig, "planted evaluation needs at least one sample");
    hmt::Rng rng(task->seed);
    hmt::PlantedRecallSpec spec = planted_spec(*task);
    double total = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
      spec.seed = rng.next_u64();
      const hmt::PlantedRecall sample = hmt::gen_planted_recall(spec);
      total += hmt::positions_nll(model->model, sample.stream, sample.query_positions);
    }
    *mean_answer_nll = total / static_cast<double>(samples);
  });
}

hmt_status hmt_sweep(const hmt_config* config, const hmt_model* model, const char* param, const size_t* values,
                     size_t n, const hmt_tokens* train, const hmt_tokens* eval, const char* csv_path,
                     double* ppl_out) {
  return guarded([&] {
    require(param, "param");
    require(eval, "eval");
    if (n > 0) require(values, "values");
    const std::span<const std::size_t> v(values, n);
    const std::string p = param;
    std::vector<hmt::SweepRow> rows;
    hmt::RunConfig header;
    if (p == "cache_size" || p == "repr_len") {
      require(model, "model");
      header = model->config;
      rows = p == "cache_size"
                 ? hmt::sweep_cache(model->model, eval->ids, v, header.train.seed)
                 : hmt::ablate_partial_summarization(model->model, eval->ids, v, header.train.seed);
    } else if (p == "sensory_len" || p == "unroll") {
      require(config, "config");
      require(train, "train");
      header = config->resolved;
      if (p == "sensory_len") {
        auto corpus = std::make_shared<const std::vector<hmt::Token>>(train->ids);
        rows = hmt::sweep_sensory(header, hmt::corpus_windows(corpus, header.hmt.segment_len, header.train.unroll),
                                  eval->ids, v);
      } else {
        rows = hmt::sweep_depth(header, train->ids, eval->ids, v);
      }
    } else {
      hmt::raise(hmt::ErrorKind::kConfig,
                 "unknown sweep parameter '" + p + "' (cache_size, repr_len, sensory_len, unroll)");
    }
    maybe_write(csv_path, [&](std::ostream& out) { hmt::write_sweep_csv(out, header, rows); });
    if (ppl_out) {
      for (std::size_t i = 0; i < rows.size(); ++i) ppl_out[i] = rows[i].ppl;
    }
  });
}

hmt_status hmt_gradcheck(const hmt_config* config, size_t unroll, size_t max_coords, hmt_gradcheck_result* result) {
  return guarded([&] {
    require(config, "config");
    require(result, "result");
    const hmt::RunConfig& c = config->resolved;
    const hmt::HmtModel model =
        hmt::HmtModel::create(c.backbone, c.hmt, hmt::derive_seed(c.train.seed, hmt::SeedOffsets::kInit));
    const std::vector<hmt::Token> window =
        hmt::random_bytes(unroll * c.hmt.segment_len + 1, hmt::derive_seed(c.train.seed, hmt::SeedOffsets::kEvalStream),
                          c.backbone.vocab_size);
    hmt::GradCheckOptions options;
    options.max_coords = max_coords;
    options.seed = hmt::derive_seed(c.train.seed, hmt::SeedOffsets::kProbe);
    const hmt::GradCheckReport report = hmt::gradient_check(model, window, unroll, options);
    *result = hmt_gradcheck_result{report.passed() ? 1 : 0, report.max_rel_error(), report.checked(), report.loss,
                                   report.seconds};
  });
}

hmt_status hmt_qa_eval(const hmt_model* model, const char* tsv_path, size_t synthetic_count, uint64_t seed, size_t m,
                       hmt_qa_result* result) {
  return guarded([&] {
    require(model, "model");
    require(result, "result");
    const hmt::QaResult r = hmt::qa_eval(model->model, qa_sequences(tsv_path, synthetic_count, seed, m));
    *result = hmt_qa_result{r.answer_nll,    r.accuracy,    r.sequences,
                            r.answer_tokens, r.recall_hits, r.recall_checked};
  });
}

hmt_status hmt_report_grad_stability(const hmt_config* config, const size_t* depths, size_t n, int assert_finite,
                                     const char* csv_path, hmt_stability_summary* summary) {
  return guarded([&] {
    require(config, "config");
    if (n > 0) require(depths, "depths");
    const hmt::RunConfig& c = config->resolved;
    hmt::GradStabilityOptions options;
    options.assert_finite = assert_finite != 0;
    const std::vector<hmt::GradStabilityRow> rows = hmt::grad_stability_report(
        c.backbone, c.hmt, std::span<const std::size_t>(depths, n), c.train.seed, options);
    maybe_write(csv_path, [&](std::ostream& out) { hmt::write_grad_stability_csv(out, c, rows); });
    if (summary) {
      *summary = hmt_stability_summary{1, 1, 0.0, rows.size()};
      for (const auto& r : rows) {
        if (!r.finite_ok) summary->all_finite = 0;
        if (!r.fd_ok) summary->all_fd_ok = 0;
        summary->max_fd_rel_error = std::max(summary->max_fd_rel_error, r.fd_max_rel_error);
      }
    }
  });
}

hmt_status hmt_report_runtime(const hmt_model* model, const hmt_tokens* stream, const char* csv_path) {
  return guarded([&] {
    require(model, "model");
    require(stream, "stream");
    const std::vector<hmt::RuntimeRow> rows = hmt::runtime_breakdown(model->model, stream->ids);
    maybe_write(csv_path, [&](std::ostream& out) { hmt::write_runtime_csv(out, model->config, rows); });
  });
}

}  // extern "C"
