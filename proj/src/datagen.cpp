// SPDX-License-Identifier: Apache-2.0
#include "hmt/datagen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "hmt/error.hpp"
#include "hmt/rng.hpp"

namespace hmt {

TokenStream byte_tokenize(std::string_view text) {
  TokenStream out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(c);
  return out;
}

std::string detokenize(std::span<const Token> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (Token t : tokens) out.push_back(static_cast<char>(t & 0xff));
  return out;
}

TokenStream read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::kData, "cannot read '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return byte_tokenize(text.str());
}

void write_token_file(const std::string& path, std::span<const Token> tokens) {
  static_assert(std::endian::native == std::endian::little);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorKind::kIo, "cannot write '" + path + "'");
  const auto count = static_cast<std::uint32_t>(tokens.size());
  out.write("HMTD", 4);
  out.write(reinterpret_cast<const char*>(&count), 4);
  out.write(reinterpret_cast<const char*>(tokens.data()), static_cast<std::streamsize>(tokens.size() * 2));
}

TokenStream read_token_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::kData, "cannot read '" + path + "'");
  char magic[4];
  std::uint32_t count = 0;
  if (!in.read(magic, 4) || std::memcmp(magic, "HMTD", 4) != 0) {
    raise(ErrorKind::kData, "'" + path + "' is not a token file (bad magic at byte offset 0)");
  }
  if (!in.read(reinterpret_cast<char*>(&count), 4)) raise(ErrorKind::kData, "'" + path + "' truncated at byte offset 4");
  TokenStream tokens(count);
  if (!in.read(reinterpret_cast<char*>(tokens.data()), static_cast<std::streamsize>(count) * 2)) {
    raise(ErrorKind::kData, "'" + path + "' truncated: header promises " + std::to_string(count) + " tokens");
  }
  return tokens;
}

TokenStream read_tokens(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::kData, "cannot read '" + path + "'");
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() == 4 && std::memcmp(magic, "HMTD", 4) == 0) return read_token_file(path);
  return read_text_file(path);
}

namespace {

std::array<std::size_t, 3> split_counts(std::size_t n, const SplitFractions& f) {
  const double total = f.train + f.val + f.test;
  if (!(total > 0.0) || f.train < 0 || f.val < 0 || f.test < 0) {
    raise(ErrorKind::kConfig, "split fractions must be non-negative with a positive sum");
  }
  const auto train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * f.train / total));
  const auto val = std::min(n - train, static_cast<std::size_t>(std::floor(static_cast<double>(n) * f.val / total)));
  return {train, val, n - train - val};
}

}  // namespace

Corpus::Split Corpus::split() const {
  const auto [train, val, test] = split_counts(samples.size(), fractions);
  Split out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (i < train) out.train.push_back(i);
    else if (i < train + val) out.val.push_back(i);
    else out.test.push_back(i);
  }
  (void)test;
  return out;
}

StreamSplit split_stream(std::span<const Token> tokens, const SplitFractions& fractions) {
  const auto [train, val, test] = split_counts(tokens.size(), fractions);
  StreamSplit out;
  out.train.assign(tokens.begin(), tokens.begin() + train);
  out.val.assign(tokens.begin() + train, tokens.begin() + train + val);
  out.test.assign(tokens.begin() + train + val, tokens.end());
  (void)test;
  return out;
}

std::vector<TokenStream> concat_samples(const std::vector<TokenStream>& samples, std::size_t target_length) {
  if (target_length == 0) raise(ErrorKind::kConfig, "concat_samples: target_length must be positive");
  TokenStream all;
  for (const auto& s : samples) all.insert(all.end(), s.begin(), s.end());
  std::vector<TokenStream> out;
  for (std::size_t i = 0; i < all.size(); i += target_length) {
    out.emplace_back(all.begin() + i, all.begin() + std::min(all.size(), i + target_length));
  }
  return out;
}

TokenStream interleave_samples(std::span<const Token> a, std::span<const Token> b, std::size_t chunk) {
  if (chunk == 0) raise(ErrorKind::kConfig, "interleave_samples: chunk must be positive");
  TokenStream out;
  out.reserve(a.size() + b.size());
  std::size_t ia = 0, ib = 0;
  while (ia < a.size() || ib < b.size()) {
    const std::size_t na = std::min(chunk, a.size() - ia);
    out.insert(out.end(), a.begin() + ia, a.begin() + ia + na);
    ia += na;
    const std::size_t nb = std::min(chunk, b.size() - ib);
    out.insert(out.end(), b.begin() + ib, b.begin() + ib + nb);
    ib += nb;
  }
  return out;
}

std::pair<TokenStream, TokenStream> deinterleave(std::span<const Token> stream, std::size_t len_a, std::size_t len_b,
                                                 std::size_t chunk) {
  if (chunk == 0) raise(ErrorKind::kConfig, "deinterleave: chunk must be positive");
  if (stream.size() != len_a + len_b) {
    raise(ErrorKind::kData, "deinterleave: stream of " + std::to_string(stream.size()) + " tokens cannot split into " +
                                std::to_string(len_a) + " + " + std::to_string(len_b));
  }
  TokenStream a, b;
  std::size_t pos = 0;
  while (a.size() < len_a || b.size() < len_b) {
    const std::size_t na = std::min(chunk, len_a - a.size());
    a.insert(a.end(), stream.begin() + pos, stream.begin() + pos + na);
    pos += na;
    const std::size_t nb = std::min(chunk, len_b - b.size());
    b.insert(b.end(), stream.begin() + pos, stream.begin() + pos + nb);
    pos += nb;
  }
  return {std::move(a), std::move(b)};
}

TokenStream dilate_sample(std::span<const Token> sample, Token filler, std::size_t run) {
  if (run == 0) raise(ErrorKind::kConfig, "dilate_sample: run must be positive");
  TokenStream out;
  out.reserve(2 * sample.size() + run);
  for (std::size_t i = 0; i < sample.size(); i += run) {
    const std::size_t n = std::min(run, sample.size() - i);
    out.insert(out.end(), sample.begin() + i, sample.begin() + i + n);
    out.insert(out.end(), run, filler);
  }
  return out;
}

TokenStream strip_dilation(std::span<const Token> stream, std::size_t run) {
  if (run == 0) raise(ErrorKind::kConfig, "strip_dilation: run must be positive");
  TokenStream out;
  std::size_t pos = 0;
  while (pos < stream.size()) {
    // A block is `n` content tokens followed by exactly `run` fillers.
    const std::size_t remaining = stream.size() - pos;
    if (remaining <= run) raise(ErrorKind::kData, "strip_dilation: stream does not end in a filler block");
    const std::size_t n = std::min(run, remaining - run);
    out.insert(out.end(), stream.begin() + pos, stream.begin() + pos + n);
    pos += n + run;
  }
  return out;
}

namespace {

void append(TokenStream& out, std::string_view text) {
  for (unsigned char c : text) out.push_back(c);
}

}  // namespace

std::vector<QaSequence> build_qa_sequences(const std::vector<QaTuple>& tuples, std::size_t m) {
  if (m == 0) raise(ErrorKind::kData, "build_qa_sequences: M must be at least 1");
  if (m > tuples.size()) {
    raise(ErrorKind::kData, "build_qa_sequences: M = " + std::to_string(m) + " but only " +
                                std::to_string(tuples.size()) + " tuples");
  }
  TokenStream prefix;
  std::vector<Span> context_spans;
  for (std::size_t i = 0; i < m; ++i) {
    if (tuples[i].context.empty() || tuples[i].question.empty()) {
      raise(ErrorKind::kData, "build_qa_sequences: tuple " + std::to_string(i) + " has an empty context or question");
    }
    const std::size_t begin = prefix.size();
    prefix.insert(prefix.end(), tuples[i].context.begin(), tuples[i].context.end());
    context_spans.push_back({begin, prefix.size()});
    prefix.push_back('\n');
  }
  std::vector<QaSequence> out;
  for (std::size_t i = 0; i < m; ++i) {
    QaSequence seq;
    seq.tokens = prefix;
    seq.context_spans = context_spans;
    append(seq.tokens, "Q: ");
    seq.question.begin = seq.tokens.size();
    seq.tokens.insert(seq.tokens.end(), tuples[i].question.begin(), tuples[i].question.end());
    seq.question.end = seq.tokens.size();
    append(seq.tokens, "\nA: ");
    seq.answer.begin = seq.tokens.size();
    seq.tokens.insert(seq.tokens.end(), tuples[i].answer.begin(), tuples[i].answer.end());
    seq.answer.end = seq.tokens.size();
    seq.tokens.push_back('\n');
    seq.short_label = tuples[i].short_label;
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<QaTuple> gen_synthetic_qa(std::size_t count, std::uint64_t seed) {
  static const std::array<std::string_view, 12> kThings{"lamp", "boat", "kite", "drum", "vase", "coat",
                                                        "cart", "bell", "shoe", "jar",  "mug",  "rope"};
  static const std::array<std::string_view, 8> kColors{"red", "blue", "green", "black",
                                                       "white", "gold", "grey", "pink"};
  static const std::array<std::string_view, 3> kLabels{"yes", "no", "maybe"};
  Rng rng(seed);
  std::vector<std::size_t> labels(count);
  for (std::size_t i = 0; i < count; ++i) labels[i] = i % 3;
  for (std::size_t i = count; i > 1; --i) std::swap(labels[i - 1], labels[rng.below(i)]);

  std::vector<QaTuple> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string_view thing = kThings[rng.below(kThings.size())];
    const std::size_t c = rng.below(kColors.size());
    const std::size_t other = (c + 1 + rng.below(kColors.size() - 1)) % kColors.size();
    std::string context, question;
    switch (labels[i]) {
      case 0:
        context = "the " + std::string(thing) + " is " + std::string(kColors[c]) + ".";
        question = "is the " + std::string(thing) + " " + std::string(kColors[c]) + "?";
        break;
      case 1:
        context = "the " + std::string(thing) + " is " + std::string(kColors[c]) + ".";
        question = "is the " + std::string(thing) + " " + std::string(kColors[other]) + "?";
        break;
      default:
        context = "the " + std::string(thing) + " may be " + std::string(kColors[c]) + ".";
        question = "is the " + std::string(thing) + " " + std::string(kColors[c]) + "?";
        break;
    }
    QaTuple t;
    t.context = byte_tokenize(context);
    t.question = byte_tokenize(question);
    t.answer = byte_tokenize(kLabels[labels[i]]);
    t.short_label = std::string(kLabels[labels[i]]);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<QaTuple> read_qa_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::kData, "cannot read '" + path + "'");
  std::vector<QaTuple> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1) {
      fields.push_back(line.substr(start, tab - start));
    }
    fields.push_back(line.substr(start));
    if (fields.size() < 3 || fields.size() > 4) {
      raise(ErrorKind::kData, path + ":" + std::to_string(line_no) + ": expected 3 or 4 tab-separated fields");
    }
    QaTuple t;
    t.context = byte_tokenize(fields[0]);
    t.question = byte_tokenize(fields[1]);
    t.answer = byte_tokenize(fields[2]);
    if (fields.size() == 4 && !fields[3].empty()) t.short_label = fields[3];
    out.push_back(std::move(t));
  }
  return out;
}

PlantedRecall gen_planted_recall(const PlantedRecallSpec& spec) {
  if (spec.distance < 1 || spec.distance >= spec.num_segments) {
    raise(ErrorKind::kConfig, "planted recall: distance must be in 1..num_segments-1");
  }
  if (spec.segment_len < 4 || spec.query_at + 4 > spec.segment_len) {
    raise(ErrorKind::kConfig, "planted recall: segment_len must hold the 4-byte query at query_at");
  }
  std::set<char> used{static_cast<char>(kBindMarker), static_cast<char>(kQueryMarker)};
  for (const std::string* alphabet : {&spec.key_alphabet, &spec.value_alphabet, &spec.distractor_alphabet}) {
    std::set<char> own(alphabet->begin(), alphabet->end());
    if (own.size() != alphabet->size() || alphabet->empty()) {
      raise(ErrorKind::kConfig, "planted recall: alphabet '" + *alphabet + "' is empty or repeats a byte");
    }
    for (char c : own) {
      if (!used.insert(c).second) {
        raise(ErrorKind::kConfig, std::string("planted recall: byte '") + c + "' appears in two alphabets");
      }
    }
  }
  const std::size_t bindings = spec.num_segments - 1;
  if (spec.key_alphabet.size() < bindings || spec.value_alphabet.size() < bindings) {
    raise(ErrorKind::kConfig, "planted recall: key and value alphabets need a symbol per binding segment");
  }

  Rng rng(spec.seed);
  auto pick_distinct = [&](const std::string& alphabet) {
    std::string pool = alphabet;
    for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.below(i)]);
    return pool.substr(0, bindings);
  };
  const std::string keys = pick_distinct(spec.key_alphabet);
  const std::string values = pick_distinct(spec.value_alphabet);
  auto distractor = [&] {
    return static_cast<Token>(static_cast<unsigned char>(spec.distractor_alphabet[rng.below(spec.distractor_alphabet.size())]));
  };

  PlantedRecall out;
  const std::size_t L = spec.segment_len;
  for (std::size_t s = 0; s < bindings; ++s) {
    for (std::size_t i = 0; i + 3 < L; ++i) out.stream.push_back(distractor());
    out.stream.push_back(static_cast<unsigned char>(keys[s]));
    out.stream.push_back(kBindMarker);
    out.stream.push_back(static_cast<unsigned char>(values[s]));
  }
  out.binding_segment = bindings - spec.distance;
  out.key = static_cast<unsigned char>(keys[out.binding_segment]);
  out.value = static_cast<unsigned char>(values[out.binding_segment]);
  for (std::size_t i = 0; i < spec.query_at; ++i) out.stream.push_back(distractor());
  out.stream.push_back(kQueryMarker);
  out.stream.push_back(out.key);
  out.stream.push_back(kBindMarker);
  out.query_positions.push_back(out.stream.size());
  out.stream.push_back(out.value);
  for (std::size_t i = spec.query_at + 4; i < L; ++i) out.stream.push_back(distractor());
  return out;
}

}  // namespace hmt
