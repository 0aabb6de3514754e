// SPDX-License-Identifier: Apache-2.0
// Command-line front end; everything goes through the C API.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hmt/hmt.h"

namespace {

enum Exit { kSuccess = 0, kFailure = 1, kConfigError = 2, kDataError = 3 };

int exit_code(hmt_status s) {
  switch (s) {
    case HMT_OK: return kSuccess;
    case HMT_ERR_CONFIG:
    case HMT_ERR_ARGUMENT: return kConfigError;
    case HMT_ERR_DATA:
    case HMT_ERR_FORMAT:
    case HMT_ERR_IO:
    case HMT_ERR_INDEX: return kDataError;
    default: return kFailure;
  }
}

struct Failure {
  int code;
};

void check(hmt_status s, const std::string& what) {
  if (s == HMT_OK) return;
  std::fprintf(stderr, "hmt: %s: %s: %s\n", what.c_str(), hmt_status_name(s), hmt_last_error());
  throw Failure{exit_code(s)};
}

[[noreturn]] void usage_error(const std::string& message) {
  std::fprintf(stderr, "hmt: %s\n", message.c_str());
  throw Failure{kConfigError};
}

struct ConfigDeleter {
  void operator()(hmt_config* c) const { hmt_config_free(c); }
};
struct TokensDeleter {
  void operator()(hmt_tokens* t) const { hmt_tokens_free(t); }
};
struct ModelDeleter {
  void operator()(hmt_model* m) const { hmt_model_free(m); }
};
using Config = std::unique_ptr<hmt_config, ConfigDeleter>;
using Tokens = std::unique_ptr<hmt_tokens, TokensDeleter>;
using Model = std::unique_ptr<hmt_model, ModelDeleter>;

std::string config_value(const hmt_config* c, const char* key) {
  std::size_t len = 0;
  check(hmt_config_get(c, key, nullptr, 0, &len), std::string("config key ") + key);
  std::string value(len, '\0');
  check(hmt_config_get(c, key, value.data(), len + 1, nullptr), std::string("config key ") + key);
  return value;
}

Tokens read_tokens(const std::string& path, const char* role) {
  if (path.empty()) usage_error(std::string("no ") + role + " data given (pass a path or set the config key)");
  hmt_tokens* t = nullptr;
  check(hmt_tokens_read(path.c_str(), &t), std::string("reading ") + path);
  return Tokens(t);
}

void write_tokens(const hmt_tokens* t, const std::string& path) {
  check(hmt_tokens_write(t, path.c_str()), std::string("writing ") + path);
}

// --config FILE plus one `--<key> VALUE` option per config key.
struct ConfigOptions {
  std::string file;
  std::vector<std::pair<std::string, CLI::Option*>> keys;
  std::vector<std::string> values;

  void attach(CLI::App& app) {
    app.add_option("--config", file, "key = value configuration file")->check(CLI::ExistingFile);
    const std::size_t n = hmt_config_key_count();
    values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::string key = hmt_config_key_name(i);
      CLI::Option* opt = app.add_option("--" + key, values[i], "config override")
                             ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)
                             ->group("Config overrides");
      keys.emplace_back(key, opt);
    }
  }

  void apply(hmt_config* c) const {
    std::vector<const char*> set_keys, set_values;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      const auto& [key, opt] = keys[i];
      if (opt->count() == 0) continue;
      if (opt->count() > 1) {
        std::fprintf(stderr, "hmt: warning: --%s given %zu times; using '%s'\n", key.c_str(), opt->count(),
                     values[i].c_str());
      }
      set_keys.push_back(key.c_str());
      set_values.push_back(values[i].c_str());
    }
    check(hmt_config_set_many(c, set_keys.data(), set_values.data(), set_keys.size()), "overrides");
  }

  Config load() const {
    hmt_config* c = nullptr;
    if (file.empty()) {
      check(hmt_config_default(&c), "default config");
    } else {
      check(hmt_config_load(file.c_str(), &c), "config " + file);
    }
    Config owned(c);
    apply(owned.get());
    return owned;
  }

  // Checkpoint settings unless a config file is given; overrides on top.
  Model load_model(const std::string& checkpoint) const {
    Config config;
    if (file.empty()) {
      hmt_model* base = nullptr;
      check(hmt_model_load(checkpoint.c_str(), nullptr, &base), "checkpoint " + checkpoint);
      Model owned(base);
      hmt_config* c = nullptr;
      check(hmt_model_config(owned.get(), &c), "checkpoint config");
      config.reset(c);
      apply(config.get());
    } else {
      config = load();
    }
    hmt_model* m = nullptr;
    check(hmt_model_load(checkpoint.c_str(), config.get(), &m), "checkpoint " + checkpoint);
    return Model(m);
  }
};

std::string out_path(const hmt_config* c, const std::string& given, const std::string& name) {
  if (!given.empty()) return given;
  return (std::filesystem::path(config_value(c, "out_dir")) / name).string();
}

void print_train(const hmt_train_summary& s, const std::string& ckpt) {
  std::printf("steps %llu  first loss %.6f  final loss %.6f  %.1f s\n", static_cast<unsigned long long>(s.steps),
              s.first_loss, s.final_loss, s.seconds);
  if (!ckpt.empty()) std::printf("checkpoint %s\n", ckpt.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical memory transformer toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(hmt_version()));
  ConfigOptions cfg;
  cfg.attach(app);

  std::function<void()> action;

  // train
  auto* train = app.add_subcommand("train", "Train one stage (stage key picks recall off/on)");
  std::string train_corpus, train_init, train_out, train_log, train_resume, train_task = "corpus";
  std::size_t train_more = 0;
  hmt_planted_spec planted;
  hmt_planted_spec_default(&planted);
  train->add_option("--corpus", train_corpus, "token or text file (default: train_path)");
  train->add_option("--init", train_init, "checkpoint to start from");
  train->add_option("--out", train_out, "checkpoint to write (default: out_dir/stage<N>.ckpt)");
  train->add_option("--log", train_log, "step log CSV (default: out_dir/train_stage<N>.csv)");
  train->add_option("--task", train_task, "corpus or planted")->check(CLI::IsMember({"corpus", "planted"}));
  train->add_option("--resume", train_resume, "continue this checkpoint exactly");
  train->add_option("--more", train_more, "steps to add with --resume");
  train->add_option("--num-segments", planted.num_segments, "planted: segments including the query");
  train->add_option("--distance", planted.distance, "planted: segments between binding and query");
  train->add_option("--query-at", planted.query_at, "planted: offset of the query in its segment");
  train->callback([&] {
    action = [&] {
      Config c = cfg.load();
      const std::string stage = config_value(c.get(), "stage");
      const std::string ckpt = out_path(c.get(), train_out, "stage" + stage + ".ckpt");
      const std::string log = out_path(c.get(), train_log, "train_stage" + stage + ".csv");
      const char* init = train_init.empty() ? nullptr : train_init.c_str();
      hmt_train_summary summary{};
      if (!train_resume.empty()) {
        if (train_more == 0) usage_error("--resume needs --more N");
        Tokens corpus = read_tokens(train_corpus.empty() ? config_value(c.get(), "train_path") : train_corpus,
                                    "training");
        check(hmt_train_resume(train_resume.c_str(), corpus.get(), train_more, ckpt.c_str(), log.c_str(), &summary),
              "train");
      } else if (train_task == "planted") {
        planted.segment_len = std::stoul(config_value(c.get(), "segment_len"));
        planted.seed = std::stoull(config_value(c.get(), "seed"));
        check(hmt_train_planted(c.get(), &planted, init, ckpt.c_str(), log.c_str(), &summary), "train");
      } else {
        Tokens corpus = read_tokens(train_corpus.empty() ? config_value(c.get(), "train_path") : train_corpus,
                                    "training");
        check(hmt_train(c.get(), corpus.get(), init, ckpt.c_str(), log.c_str(), &summary), "train");
      }
      print_train(summary, ckpt);
    };
  });

  // eval
  auto* eval = app.add_subcommand("eval", "Perplexity table for prefix lengths");
  std::string eval_ckpt, eval_data, eval_out;
  std::vector<std::size_t> eval_lengths;
  eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
  eval->add_option("--data", eval_data, "evaluation stream (default: eval_path)");
  eval->add_option("--lengths", eval_lengths, "prefix lengths (default: whole stream)")->delimiter(',');
  eval->add_option("--out", eval_out, "CSV path (default: out_dir/ppl.csv)");
  eval->callback([&] {
    action = [&] {
      Model m = cfg.load_model(eval_ckpt);
      hmt_config* raw = nullptr;
      check(hmt_model_config(m.get(), &raw), "model config");
      Config c(raw);
      Tokens stream = read_tokens(eval_data.empty() ? config_value(c.get(), "eval_path") : eval_data, "evaluation");
      if (eval_lengths.empty()) eval_lengths.push_back(hmt_tokens_size(stream.get()));
      std::vector<double> ppl(eval_lengths.size());
      const std::string csv = out_path(c.get(), eval_out, "ppl.csv");
      check(hmt_eval_perplexity(m.get(), stream.get(), eval_lengths.data(), eval_lengths.size(), csv.c_str(),
                                ppl.data()),
            "eval");
      std::printf("%10s  %12s\n", "length", "ppl");
      for (std::size_t i = 0; i < ppl.size(); ++i) std::printf("%10zu  %12.4f\n", eval_lengths[i], ppl[i]);
      std::printf("wrote %s\n", csv.c_str());
    };
  });

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient check on a random window");
  std::size_t grad_unroll = 3, grad_coords = 0;
  grad->add_option("--depth", grad_unroll, "segments in the unrolled window");
  grad->add_option("--max-coords", grad_coords, "coordinates per tensor (0: all)");
  grad->callback([&] {
    action = [&] {
      Config c = cfg.load();
      hmt_gradcheck_result r{};
      check(hmt_gradcheck(c.get(), grad_unroll, grad_coords, &r), "gradcheck");
      std::printf("%s  checked %zu  max rel error %.3e  loss %.6f  %.1f s\n", r.passed ? "PASS" : "FAIL", r.checked,
                  r.max_rel_error, r.loss, r.seconds);
      if (!r.passed) throw Failure{kFailure};
    };
  });

  // sweep
  auto* sweep = app.add_subcommand("sweep", "PPL across one mechanism setting");
  std::string sweep_param, sweep_ckpt, sweep_train, sweep_eval, sweep_out;
  std::vector<std::size_t> sweep_values;
  sweep->add_option("--param", sweep_param, "cache_size, repr_len, sensory_len or unroll")->required();
  sweep->add_option("--values", sweep_values, "comma-separated values")->required()->delimiter(',');
  sweep->add_option("--checkpoint", sweep_ckpt, "model for cache_size / repr_len");
  sweep->add_option("--train", sweep_train, "training stream for sensory_len / unroll (default: train_path)");
  sweep->add_option("--data", sweep_eval, "evaluation stream (default: eval_path)");
  sweep->add_option("--out", sweep_out, "CSV path (default: out_dir/sweep_<param>.csv)");
  sweep->callback([&] {
    action = [&] {
      const bool eval_only = sweep_param == "cache_size" || sweep_param == "repr_len";
      Model m;
      Config c;
      if (eval_only) {
        if (sweep_ckpt.empty()) usage_error("sweep --param " + sweep_param + " needs --checkpoint");
        m = cfg.load_model(sweep_ckpt);
        hmt_config* raw = nullptr;
        check(hmt_model_config(m.get(), &raw), "model config");
        c.reset(raw);
      } else {
        c = cfg.load();
      }
      Tokens eval_stream =
          read_tokens(sweep_eval.empty() ? config_value(c.get(), "eval_path") : sweep_eval, "evaluation");
      Tokens train_stream;
      if (!eval_only) {
        train_stream =
            read_tokens(sweep_train.empty() ? config_value(c.get(), "train_path") : sweep_train, "training");
      }
      std::vector<double> ppl(sweep_values.size());
      const std::string csv = out_path(c.get(), sweep_out, "sweep_" + sweep_param + ".csv");
      check(hmt_sweep(c.get(), m.get(), sweep_param.c_str(), sweep_values.data(), sweep_values.size(),
                      train_stream.get(), eval_stream.get(), csv.c_str(), ppl.data()),
            "sweep");
      std::printf("%12s  %12s\n", sweep_param.c_str(), "ppl");
      for (std::size_t i = 0; i < ppl.size(); ++i) std::printf("%12zu  %12.4f\n", sweep_values[i], ppl[i]);
      std::printf("wrote %s\n", csv.c_str());
    };
  });

  // hist
  auto* hist = app.add_subcommand("hist", "Histogram of recall argmax distances");
  std::string hist_ckpt, hist_data, hist_out;
  hist->add_option("--checkpoint", hist_ckpt, "trained checkpoint")->required();
  hist->add_option("--data", hist_data, "evaluation stream (default: eval_path)");
  hist->add_option("--out", hist_out, "CSV path (default: out_dir/histogram.csv)");
  hist->callback([&] {
    action = [&] {
      Model m = cfg.load_model(hist_ckpt);
      hmt_config* raw = nullptr;
      check(hmt_model_config(m.get(), &raw), "model config");
      Config c(raw);
      Tokens stream = read_tokens(hist_data.empty() ? config_value(c.get(), "eval_path") : hist_data, "evaluation");
      const std::string csv = out_path(c.get(), hist_out, "histogram.csv");
      hmt_histogram_summary s{};
      check(hmt_eval_histogram(m.get(), stream.get(), csv.c_str(), nullptr, nullptr, 0, &s), "hist");
      std::vector<std::size_t> distances(s.bins), counts(s.bins);
      check(hmt_eval_histogram(m.get(), stream.get(), nullptr, distances.data(), counts.data(), s.bins, &s), "hist");
      std::printf("%10s  %10s\n", "distance", "count");
      for (std::size_t i = 0; i < s.bins; ++i) std::printf("%10zu  %10zu\n", distances[i], counts[i]);
      std::printf("%10s  %10zu\n", "m_init", s.seed_hits);
      std::printf("events %zu\nwrote %s\n", s.events, csv.c_str());
    };
  });

  // qa
  auto* qa = app.add_subcommand("qa", "Long-context QA scoring");
  std::string qa_ckpt, qa_tsv;
  std::size_t qa_synthetic = 30, qa_m = 3;
  std::uint64_t qa_seed = 0;
  qa->add_option("--checkpoint", qa_ckpt, "trained checkpoint")->required();
  qa->add_option("--tsv", qa_tsv, "context<TAB>question<TAB>answer[<TAB>label] file");
  qa->add_option("--synthetic", qa_synthetic, "synthetic tuples when no --tsv");
  qa->add_option("--m", qa_m, "contexts per shared prefix");
  qa->add_option("--data-seed", qa_seed, "synthetic tuple seed");
  qa->callback([&] {
    action = [&] {
      Model m = cfg.load_model(qa_ckpt);
      hmt_qa_result r{};
      check(hmt_qa_eval(m.get(), qa_tsv.empty() ? nullptr : qa_tsv.c_str(), qa_synthetic, qa_seed, qa_m, &r), "qa");
      std::printf("sequences %zu  answer tokens %zu  answer nll %.6f  accuracy %.4f\n", r.sequences,
                  r.answer_tokens, r.answer_nll, r.accuracy);
      if (r.recall_checked > 0) std::printf("recall hits %zu / %zu\n", r.recall_hits, r.recall_checked);
    };
  });

  // data
  auto* data = app.add_subcommand("data", "Dataset builders");
  data->require_subcommand(1);

  auto* concat = data->add_subcommand("concat", "Concatenate samples and cut fixed-length chunks");
  std::vector<std::string> concat_inputs;
  std::size_t concat_target = 0;
  std::string concat_dir;
  concat->add_option("inputs", concat_inputs, "sample files")->required();
  concat->add_option("--target", concat_target, "chunk length")->required();
  concat->add_option("--out-dir", concat_dir, "existing output directory")->required()->check(CLI::ExistingDirectory);
  concat->callback([&] {
    action = [&] {
      std::vector<Tokens> samples;
      std::vector<const hmt_tokens*> raw;
      for (const auto& p : concat_inputs) {
        samples.push_back(read_tokens(p, "sample"));
        raw.push_back(samples.back().get());
      }
      std::size_t count = 0;
      check(hmt_data_concat(raw.data(), raw.size(), concat_target, nullptr, 0, &count), "concat");
      std::vector<hmt_tokens*> chunks(count, nullptr);
      check(hmt_data_concat(raw.data(), raw.size(), concat_target, chunks.data(), count, &count), "concat");
      std::vector<Tokens> owned(chunks.begin(), chunks.end());
      for (std::size_t i = 0; i < owned.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "chunk_%04zu.bin", i);
        write_tokens(owned[i].get(), (std::filesystem::path(concat_dir) / name).string());
      }
      std::printf("wrote %zu chunks to %s\n", owned.size(), concat_dir.c_str());
    };
  });

  auto* inter = data->add_subcommand("interleave", "Alternate fixed-size chunks of two samples");
  std::string inter_a, inter_b, inter_out;
  std::size_t inter_chunk = 256;
  inter->add_option("a", inter_a, "first sample")->required();
  inter->add_option("b", inter_b, "second sample")->required();
  inter->add_option("--chunk", inter_chunk, "chunk size");
  inter->add_option("--out", inter_out, "token file to write")->required();
  inter->callback([&] {
    action = [&] {
      Tokens a = read_tokens(inter_a, "sample"), b = read_tokens(inter_b, "sample");
      hmt_tokens* out = nullptr;
      check(hmt_data_interleave(a.get(), b.get(), inter_chunk, &out), "interleave");
      Tokens owned(out);
      write_tokens(owned.get(), inter_out);
      std::printf("wrote %zu tokens to %s\n", hmt_tokens_size(owned.get()), inter_out.c_str());
    };
  });

  auto* dilate = data->add_subcommand("dilate", "Insert filler blocks after every run of content");
  std::string dilate_in, dilate_out;
  std::size_t dilate_run = 256;
  bool dilate_strip = false;
  dilate->add_option("input", dilate_in, "sample")->required();
  dilate->add_option("--run", dilate_run, "content tokens per block");
  dilate->add_flag("--strip", dilate_strip, "remove filler blocks instead");
  dilate->add_option("--out", dilate_out, "token file to write")->required();
  dilate->callback([&] {
    action = [&] {
      Tokens in = read_tokens(dilate_in, "sample");
      hmt_tokens* out = nullptr;
      if (dilate_strip) {
        check(hmt_data_strip_dilation(in.get(), dilate_run, &out), "dilate --strip");
      } else {
        check(hmt_data_dilate(in.get(), '$', dilate_run, &out), "dilate");
      }
      Tokens owned(out);
      write_tokens(owned.get(), dilate_out);
      std::printf("wrote %zu tokens to %s\n", hmt_tokens_size(owned.get()), dilate_out.c_str());
    };
  });

  auto* plant = data->add_subcommand("planted", "One planted key/value recall sample");
  hmt_planted_spec plant_spec;
  hmt_planted_spec_default(&plant_spec);
  std::string plant_out;
  plant->add_option("--num-segments", plant_spec.num_segments, "segments including the query");
  plant->add_option("--segment-len", plant_spec.segment_len, "segment length");
  plant->add_option("--distance", plant_spec.distance, "segments between binding and query");
  plant->add_option("--query-at", plant_spec.query_at, "offset of the query in its segment");
  plant->add_option("--data-seed", plant_spec.seed, "sample seed");
  plant->add_option("--out", plant_out, "token file to write")->required();
  plant->callback([&] {
    action = [&] {
      hmt_tokens* out = nullptr;
      std::size_t answer = 0;
      check(hmt_data_planted(&plant_spec, &out, &answer), "planted");
      Tokens owned(out);
      write_tokens(owned.get(), plant_out);
      std::printf("wrote %zu tokens to %s; answer at position %zu\n", hmt_tokens_size(owned.get()),
                  plant_out.c_str(), answer);
    };
  });

  auto* qab = data->add_subcommand("qa-build", "Shared-prefix QA sequences");
  std::string qab_tsv, qab_dir;
  std::size_t qab_synthetic = 30, qab_m = 3;
  std::uint64_t qab_seed = 0;
  qab->add_option("--tsv", qab_tsv, "context<TAB>question<TAB>answer[<TAB>label] file");
  qab->add_option("--synthetic", qab_synthetic, "synthetic tuples when no --tsv");
  qab->add_option("--m", qab_m, "contexts per shared prefix");
  qab->add_option("--data-seed", qab_seed, "synthetic tuple seed");
  qab->add_option("--out-dir", qab_dir, "existing output directory")->required()->check(CLI::ExistingDirectory);
  qab->callback([&] {
    action = [&] {
      std::size_t n = 0;
      check(hmt_data_qa_build(qab_tsv.empty() ? nullptr : qab_tsv.c_str(), qab_synthetic, qab_seed, qab_m,
                              qab_dir.c_str(), &n),
            "qa-build");
      std::printf("wrote %zu sequences and spans.csv to %s\n", n, qab_dir.c_str());
    };
  });

  // report
  auto* report = app.add_subcommand("report", "Diagnostics reports");
  report->require_subcommand(1);

  auto* stab = report->add_subcommand("grad_stability", "Gradient norms across unroll depths");
  std::vector<std::size_t> stab_depths{2, 5, 10, 15};
  std::string stab_out;
  bool stab_assert = false;
  stab->add_option("--depths", stab_depths, "unroll depths")->delimiter(',');
  stab->add_option("--out", stab_out, "CSV path (default: out_dir/grad_stability.csv)");
  stab->add_flag("--assert-finite", stab_assert, "fail on any non-finite norm");
  stab->callback([&] {
    action = [&] {
      Config c = cfg.load();
      const std::string csv = out_path(c.get(), stab_out, "grad_stability.csv");
      hmt_stability_summary s{};
      check(hmt_report_grad_stability(c.get(), stab_depths.data(), stab_depths.size(), stab_assert, csv.c_str(), &s),
            "grad_stability");
      std::printf("rows %zu  all finite %s  finite-difference checks %s (max rel %.3e)\nwrote %s\n", s.rows,
                  s.all_finite ? "yes" : "no", s.all_fd_ok ? "ok" : "FAILED", s.max_fd_rel_error, csv.c_str());
      if (!s.all_finite || !s.all_fd_ok) throw Failure{kFailure};
    };
  });

  auto* rt = report->add_subcommand("runtime", "Median time per phase per segment");
  std::string rt_ckpt, rt_data, rt_out;
  rt->add_option("--checkpoint", rt_ckpt, "model (default: fresh from config)");
  rt->add_option("--data", rt_data, "stream (default: eval_path)");
  rt->add_option("--out", rt_out, "CSV path (default: out_dir/runtime.csv)");
  rt->callback([&] {
    action = [&] {
      Model m;
      if (rt_ckpt.empty()) {
        Config base = cfg.load();
        hmt_model* raw = nullptr;
        check(hmt_model_create(base.get(), &raw), "model");
        m.reset(raw);
      } else {
        m = cfg.load_model(rt_ckpt);
      }
      hmt_config* raw = nullptr;
      check(hmt_model_config(m.get(), &raw), "model config");
      Config c(raw);
      Tokens stream = read_tokens(rt_data.empty() ? config_value(c.get(), "eval_path") : rt_data, "evaluation");
      const std::string csv = out_path(c.get(), rt_out, "runtime.csv");
      check(hmt_report_runtime(m.get(), stream.get(), csv.c_str()), "runtime");
      std::printf("wrote %s\n", csv.c_str());
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kSuccess : kConfigError;
  }
  try {
    if (action) action();
  } catch (const Failure& f) {
    return f.code;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "hmt: %s\n", e.what());
    return kFailure;
  }
  return kSuccess;
}
