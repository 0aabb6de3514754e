// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hmt/backbone.hpp"

namespace hmt {

using TokenStream = std::vector<Token>;

/// Identity byte mapping; vocabulary 256.
TokenStream byte_tokenize(std::string_view text);
std::string detokenize(std::span<const Token> tokens);
TokenStream read_text_file(const std::string& path);

/// Flat token files: "HMTD", u32 count, count x u16 little-endian ids.
void write_token_file(const std::string& path, std::span<const Token> tokens);
TokenStream read_token_file(const std::string& path);
/// Token files by magic, anything else as raw bytes.
TokenStream read_tokens(const std::string& path);

struct SplitFractions {
  double train = 0.75;
  double val = 0.15;
  double test = 0.10;
};

struct Corpus {
  std::vector<TokenStream> samples;
  std::vector<std::string> provenance;
  SplitFractions fractions;

  /// Ordered split: first `train` fraction of samples, then `val`, then the
  /// rest. Disjoint and exhaustive.
  struct Split {
    std::vector<std::size_t> train, val, test;
  };
  Split split() const;
};

struct StreamSplit {
  TokenStream train, val, test;
};
/// The same ordered rule applied to positions of a single stream.
StreamSplit split_stream(std::span<const Token> tokens, const SplitFractions& fractions = {});

inline constexpr Token kDilationFiller = '$';

/// Concatenates samples in order, then cuts into target_length chunks (the
/// last chunk may be short).
std::vector<TokenStream> concat_samples(const std::vector<TokenStream>& samples, std::size_t target_length);

/// a[0:c] ∘ b[0:c] ∘ a[c:2c] ∘ b[c:2c] ∘ …; once one side runs out the rest
/// of the other follows in order.
TokenStream interleave_samples(std::span<const Token> a, std::span<const Token> b, std::size_t chunk = 256);
/// Inverse of interleave_samples given the original lengths.
std::pair<TokenStream, TokenStream> deinterleave(std::span<const Token> stream, std::size_t len_a,
                                                 std::size_t len_b, std::size_t chunk = 256);

/// After every `run` content tokens (including a final partial block),
/// inserts `run` filler tokens.
TokenStream dilate_sample(std::span<const Token> sample, Token filler = kDilationFiller, std::size_t run = 256);
/// Drops the filler blocks by position, so content bytes equal to the
/// filler survive.
TokenStream strip_dilation(std::span<const Token> stream, std::size_t run = 256);

struct QaTuple {
  TokenStream context;
  TokenStream question;
  TokenStream answer;
  std::optional<std::string> short_label;  // "yes" / "no" / "maybe"
};

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - begin; }
};

struct QaSequence {
  TokenStream tokens;
  std::vector<Span> context_spans;
  Span question;
  Span answer;
  std::optional<std::string> short_label;
};

/// Layout: C_0 '\n' C_1 '\n' … C_{M−1} '\n' "Q: " Q_i '\n' "A: " A_i '\n'
/// for i in 0..M−1, so every sequence shares the same context prefix.
std::vector<QaSequence> build_qa_sequences(const std::vector<QaTuple>& tuples, std::size_t m);

/// Balanced yes/no/maybe tuples over small templated contexts.
std::vector<QaTuple> gen_synthetic_qa(std::size_t count, std::uint64_t seed);
/// Tab-separated `context, question, answer[, label]` lines.
std::vector<QaTuple> read_qa_tsv(const std::string& path);

struct PlantedRecallSpec {
  std::size_t num_segments = 9;
  std::size_t segment_len = 16;
  std::size_t distance = 8;
  /// Offset of '?' inside the query segment. Placing "?<key>" at the end of
  /// the summarized prefix keeps the answer out of the recall query.
  std::size_t query_at = 0;
  std::string key_alphabet = "abcdefghijklmnopqrstuvwxyz";
  std::string value_alphabet = "ABCDEFGHIJKLMNOP";
  std::string distractor_alphabet = "0123456789";
  std::uint64_t seed = 0;
};

struct PlantedRecall {
  TokenStream stream;
  /// Positions of answer value tokens (score the prediction of stream[p]).
  std::vector<std::size_t> query_positions;
  Token key = 0;
  Token value = 0;
  std::size_t binding_segment = 0;
};

inline constexpr Token kBindMarker = '=';
inline constexpr Token kQueryMarker = '?';

/// `num_segments` segments: all but the last end in "<key>=<value>" after
/// distractor bytes, the last holds "?<key>=<value>" at `query_at`, padded
/// with distractors. Keys and values are distinct within a sample; the
/// queried key was bound exactly `distance` segments before the query
/// segment, so distance < num_segments.
PlantedRecall gen_planted_recall(const PlantedRecallSpec& spec);

}  // namespace hmt
