// SPDX-License-Identifier: Apache-2.0
#include "hmt/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "hmt/error.hpp"

namespace hmt {

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) raise(ErrorKind::kConfig, "stage must be 1 or 2");
  if (unroll < 1) raise(ErrorKind::kConfig, "unroll must be at least 1");
  if (!(lr > 0.0)) raise(ErrorKind::kConfig, "lr must be positive");
  if (!(lr_decay > 0.0)) raise(ErrorKind::kConfig, "lr_decay must be positive");
  if (lr_decay_every < 1) raise(ErrorKind::kConfig, "lr_decay_every must be at least 1");
  if (batch < 1) raise(ErrorKind::kConfig, "batch must be at least 1");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "d_model",   "n_layers", "n_heads", "d_ff",     "vocab_size",     "max_pos",   "segment_len", "sensory_len",
      "repr_len",  "cache_size", "dh",    "recall",   "unroll",         "stage",     "lr",          "lr_decay",
      "lr_decay_every", "clip_norm", "steps", "batch", "seed",          "train_path", "eval_path",  "out_dir",
  };
  return keys;
}

namespace {

std::string format_double(double v) {
  // Shortest text that round-trips.
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

struct Location {
  std::string where;  // "file:line" or "--key"
};

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const Location& loc,
                            const char* expected) {
  raise(ErrorKind::kConfig,
        "config key '" + key + "' at " + loc.where + ": cannot parse '" + value + "' as " + expected);
}

std::size_t parse_size(const std::string& key, const std::string& v, const Location& loc) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, loc, "a non-negative integer");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v, const Location& loc) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, loc, "an unsigned integer");
  return out;
}

double parse_real(const std::string& key, const std::string& v, const Location& loc) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, loc, "a real number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v, const Location& loc) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  bad_value(key, v, loc, "a boolean");
}

struct Builder {
  RunConfig config = default_config();
  bool repr_len_set = false;
  bool max_pos_set = false;
  std::map<std::string, std::string> seen;  // key -> where

  void apply(const std::string& key, const std::string& value, const Location& loc, std::ostream& warnings) {
    const auto& keys = config_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      raise(ErrorKind::kConfig, "unknown config key '" + key + "' at " + loc.where);
    }
    if (auto it = seen.find(key); it != seen.end() && loc.where.rfind("--", 0) != 0) {
      warnings << "warning: duplicate config key '" << key << "' at " << loc.where << " (previous at " << it->second
               << "); last value wins\n";
    }
    seen[key] = loc.where;

    auto& b = config.backbone;
    auto& h = config.hmt;
    auto& t = config.train;
    if (key == "d_model") b.d_model = parse_size(key, value, loc);
    else if (key == "n_layers") b.n_layers = parse_size(key, value, loc);
    else if (key == "n_heads") b.n_heads = parse_size(key, value, loc);
    else if (key == "d_ff") b.d_ff = parse_size(key, value, loc);
    else if (key == "vocab_size") b.vocab_size = parse_size(key, value, loc);
    else if (key == "max_pos") { b.max_pos = parse_size(key, value, loc); max_pos_set = true; }
    else if (key == "segment_len") h.segment_len = parse_size(key, value, loc);
    else if (key == "sensory_len") h.sensory_len = parse_size(key, value, loc);
    else if (key == "repr_len") { h.repr_len = parse_size(key, value, loc); repr_len_set = true; }
    else if (key == "cache_size") h.cache_size = parse_size(key, value, loc);
    else if (key == "dh") h.dh = parse_size(key, value, loc);
    else if (key == "recall") h.recall = parse_bool(key, value, loc);
    else if (key == "unroll") t.unroll = parse_size(key, value, loc);
    else if (key == "stage") t.stage = static_cast<int>(parse_size(key, value, loc));
    else if (key == "lr") t.lr = parse_real(key, value, loc);
    else if (key == "lr_decay") t.lr_decay = parse_real(key, value, loc);
    else if (key == "lr_decay_every") t.lr_decay_every = parse_size(key, value, loc);
    else if (key == "clip_norm") t.clip_norm = parse_real(key, value, loc);
    else if (key == "steps") t.steps = parse_size(key, value, loc);
    else if (key == "batch") t.batch = parse_size(key, value, loc);
    else if (key == "seed") t.seed = parse_u64(key, value, loc);
    else if (key == "train_path") config.train_path = value;
    else if (key == "eval_path") config.eval_path = value;
    else if (key == "out_dir") config.out_dir = value;
  }

  RunConfig finish() {
    if (!repr_len_set) config.hmt.repr_len = std::max<std::size_t>(1, config.hmt.segment_len / 2);
    if (!max_pos_set) {
      config.backbone.max_pos = std::max(config.hmt.segment_len + config.hmt.sensory_len + 2,
                                         config.hmt.repr_len + 2);
    }
    config.validate();
    return config;
  }
};

}  // namespace

RunConfig default_config() {
  RunConfig c;
  c.hmt.segment_len = 256;
  c.hmt.sensory_len = 32;
  c.hmt.repr_len = 128;
  c.hmt.cache_size = 300;
  c.backbone.max_pos = 256 + 32 + 2;
  return c;
}

void RunConfig::validate() const {
  backbone.validate();
  hmt.validate();
  train.validate();
  const std::size_t need = std::max(hmt.segment_len + hmt.sensory_len + 2, hmt.repr_len + 2);
  if (backbone.max_pos < need) {
    raise(ErrorKind::kConfig, "max_pos (" + std::to_string(backbone.max_pos) + ") must be at least " +
                                  std::to_string(need) + " = max(segment_len + sensory_len + 2, repr_len + 2)");
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  out << "d_model = " << backbone.d_model << '\n'
      << "n_layers = " << backbone.n_layers << '\n'
      << "n_heads = " << backbone.n_heads << '\n'
      << "d_ff = " << backbone.d_ff << '\n'
      << "vocab_size = " << backbone.vocab_size << '\n'
      << "max_pos = " << backbone.max_pos << '\n'
      << "segment_len = " << hmt.segment_len << '\n'
      << "sensory_len = " << hmt.sensory_len << '\n'
      << "repr_len = " << hmt.repr_len << '\n'
      << "cache_size = " << hmt.cache_size << '\n'
      << "dh = " << hmt.dh << '\n'
      << "recall = " << (hmt.recall ? "true" : "false") << '\n'
      << "unroll = " << train.unroll << '\n'
      << "stage = " << train.stage << '\n'
      << "lr = " << format_double(train.lr) << '\n'
      << "lr_decay = " << format_double(train.lr_decay) << '\n'
      << "lr_decay_every = " << train.lr_decay_every << '\n'
      << "clip_norm = " << format_double(train.clip_norm) << '\n'
      << "steps = " << train.steps << '\n'
      << "batch = " << train.batch << '\n'
      << "seed = " << train.seed << '\n'
      << "train_path = " << train_path << '\n'
      << "eval_path = " << eval_path << '\n'
      << "out_dir = " << out_dir << '\n';
  return out.str();
}

std::string RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_text()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

RunConfig parse_config_text(const std::string& text, const Overrides& overrides, std::ostream& warnings,
                            const std::string& source) {
  Builder builder;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const Location loc{source + ":" + std::to_string(line_no)};
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      raise(ErrorKind::kConfig, "config line " + loc.where + ": expected 'key = value', got '" + stripped + "'");
    }
    builder.apply(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)), loc, warnings);
  }
  for (const auto& [key, value] : overrides) builder.apply(key, value, Location{"--" + key}, warnings);
  return builder.finish();
}

RunConfig parse_config(const std::string& path, const Overrides& overrides, std::ostream& warnings) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::kConfig, "cannot open config file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str(), overrides, warnings, path);
}

std::string artifact_header(const RunConfig& config) {
  std::ostringstream out;
  std::istringstream lines(config.to_text());
  std::string line;
  while (std::getline(lines, line)) out << "# " << line << '\n';
  out << "# config_hash = " << config.hash() << '\n';
  return out.str();
}

}  // namespace hmt
