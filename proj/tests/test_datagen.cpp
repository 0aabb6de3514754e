// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "hmt/datagen.hpp"
#include "hmt/error.hpp"
#include "hmt/rng.hpp"
#include "support.hpp"

namespace hmt {
namespace {

using testing::kind_of;

TokenStream iota_stream(std::size_t n, Token start = 0) {
  TokenStream out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<Token>((start + i) % 256);
  return out;
}

TokenStream random_stream(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  TokenStream out(n);
  for (auto& t : out) t = static_cast<Token>(rng.below(256));
  return out;
}

std::string text_of(const TokenStream& s, Span span) {
  return detokenize(std::span(s).subspan(span.begin, span.size()));
}

TEST(Tokenize, ByteIdentity) {
  EXPECT_EQ(byte_tokenize("AB"), (TokenStream{65, 66}));
  EXPECT_TRUE(byte_tokenize("").empty());
  EXPECT_EQ(byte_tokenize("$"), (TokenStream{36}));
  EXPECT_EQ(kDilationFiller, 36);
  std::string all(256, '\0');
  std::iota(all.begin(), all.end(), 0);
  const TokenStream t = byte_tokenize(all);
  for (std::size_t i = 0; i < 256; ++i) EXPECT_EQ(t[i], i);
  EXPECT_EQ(detokenize(t), all);
}

TEST(TokenFile, RoundTripAndDetection) {
  const std::string dir = ::testing::TempDir();
  const TokenStream t = random_stream(1000, 1);
  write_token_file(dir + "/hmt_tokens.bin", t);
  EXPECT_EQ(read_token_file(dir + "/hmt_tokens.bin"), t);
  EXPECT_EQ(read_tokens(dir + "/hmt_tokens.bin"), t);
  {
    std::ofstream raw(dir + "/hmt_raw.txt", std::ios::binary);
    raw << "plain text";
  }
  EXPECT_EQ(read_tokens(dir + "/hmt_raw.txt"), byte_tokenize("plain text"));
  EXPECT_EQ(kind_of([&] { read_token_file(dir + "/hmt_raw.txt"); }), ErrorKind::kData);
  EXPECT_EQ(kind_of([&] { read_text_file(dir + "/does_not_exist.txt"); }), ErrorKind::kData);
}

TEST(Split, OrderedDisjointExhaustive) {
  Corpus c;
  for (int i = 0; i < 20; ++i) c.samples.push_back(iota_stream(5, static_cast<Token>(i)));
  const auto s = c.split();
  EXPECT_EQ(s.train.size(), 15u);
  EXPECT_EQ(s.val.size(), 3u);
  EXPECT_EQ(s.test.size(), 2u);
  std::vector<std::size_t> all;
  for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(all.end(), part->begin(), part->end());
  std::vector<std::size_t> expect(20);
  std::iota(expect.begin(), expect.end(), 0);
  EXPECT_EQ(all, expect);

  const TokenStream stream = random_stream(1000, 2);
  const StreamSplit ss = split_stream(stream);
  EXPECT_EQ(ss.train.size(), 750u);
  EXPECT_EQ(ss.val.size(), 150u);
  EXPECT_EQ(ss.test.size(), 100u);
  TokenStream joined = ss.train;
  joined.insert(joined.end(), ss.val.begin(), ss.val.end());
  joined.insert(joined.end(), ss.test.begin(), ss.test.end());
  EXPECT_EQ(joined, stream);
}

TEST(Concat, ChunksAndContextSwitch) {
  const TokenStream a = iota_stream(300, 0), b = iota_stream(300, 100);
  const auto one = concat_samples({a, b}, 600);
  ASSERT_EQ(one.size(), 1u);
  ASSERT_EQ(one[0].size(), 600u);
  EXPECT_TRUE(std::equal(a.begin(), a.end(), one[0].begin()));
  EXPECT_TRUE(std::equal(b.begin(), b.end(), one[0].begin() + 300));
  const auto split = concat_samples({a}, 128);
  ASSERT_EQ(split.size(), 3u);
  EXPECT_EQ(split[2].size(), 44u);
  EXPECT_EQ(kind_of([&] { concat_samples({a}, 0); }), ErrorKind::kConfig);
}

TEST(Interleave, PatternAndEdgeCases) {
  const TokenStream a = iota_stream(512, 0), b = random_stream(512, 3);
  const TokenStream s = interleave_samples(a, b);
  ASSERT_EQ(s.size(), 1024u);
  EXPECT_TRUE(std::equal(a.begin(), a.begin() + 256, s.begin()));
  EXPECT_TRUE(std::equal(b.begin(), b.begin() + 256, s.begin() + 256));
  EXPECT_TRUE(std::equal(a.begin() + 256, a.end(), s.begin() + 512));
  EXPECT_TRUE(std::equal(b.begin() + 256, b.end(), s.begin() + 768));
  EXPECT_EQ(interleave_samples(a, {}), a);
  const TokenStream x{1, 2, 3}, y{7, 8};
  EXPECT_EQ(interleave_samples(x, y, 1), (TokenStream{1, 7, 2, 8, 3}));
}

TEST(Interleave, RoundTripExact) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const TokenStream a = random_stream(rng.below(900), rng.next_u64());
    const TokenStream b = random_stream(rng.below(900), rng.next_u64());
    const std::size_t chunk = 1 + rng.below(300);
    const auto [ra, rb] = deinterleave(interleave_samples(a, b, chunk), a.size(), b.size(), chunk);
    EXPECT_EQ(ra, a);
    EXPECT_EQ(rb, b);
  }
  EXPECT_EQ(kind_of([&] { deinterleave(TokenStream(5), 3, 3, 2); }), ErrorKind::kData);
}

TEST(Dilate, BlocksAndRoundTrip) {
  const TokenStream s = random_stream(512, 5);
  const TokenStream d = dilate_sample(s);
  ASSERT_EQ(d.size(), 1024u);
  EXPECT_TRUE(std::equal(s.begin(), s.begin() + 256, d.begin()));
  EXPECT_TRUE(std::all_of(d.begin() + 256, d.begin() + 512, [](Token t) { return t == kDilationFiller; }));
  EXPECT_TRUE(std::equal(s.begin() + 256, s.end(), d.begin() + 512));
  const double filler = std::count(d.begin(), d.end(), kDilationFiller) / 1024.0;
  EXPECT_NEAR(filler, 0.5, 0.01);

  const TokenStream small = iota_stream(10, 30);
  const TokenStream ds = dilate_sample(small);
  ASSERT_EQ(ds.size(), 266u);
  EXPECT_TRUE(std::equal(small.begin(), small.end(), ds.begin()));

  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    TokenStream x = random_stream(rng.below(1500), rng.next_u64());
    for (std::size_t i = 0; i < x.size(); i += 7) x[i] = kDilationFiller;
    const std::size_t run = 1 + rng.below(300);
    const TokenStream dd = dilate_sample(x, kDilationFiller, run);
    EXPECT_LE(dd.size(), 2 * x.size() + run);
    EXPECT_EQ(strip_dilation(dd, run), x);
  }
}

std::vector<QaTuple> tuples(std::size_t n) {
  std::vector<QaTuple> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({byte_tokenize("context " + std::to_string(i)), byte_tokenize("question " + std::to_string(i)),
                   byte_tokenize("answer " + std::to_string(i)), std::nullopt});
  }
  return out;
}

TEST(QaBuild, ExactLayout) {
  const auto seqs = build_qa_sequences(tuples(4), 3);
  ASSERT_EQ(seqs.size(), 3u);
  const std::string prefix = "context 0\ncontext 1\ncontext 2\n";
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string text = detokenize(seqs[i].tokens);
    const std::string i_s = std::to_string(i);
    EXPECT_EQ(text, prefix + "Q: question " + i_s + "\nA: answer " + i_s + "\n");
    EXPECT_EQ(text_of(seqs[i].tokens, seqs[i].question), "question " + i_s);
    EXPECT_EQ(text_of(seqs[i].tokens, seqs[i].answer), "answer " + i_s);
    ASSERT_EQ(seqs[i].context_spans.size(), 3u);
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_EQ(text_of(seqs[i].tokens, seqs[i].context_spans[c]), "context " + std::to_string(c));
      EXPECT_LE(seqs[i].context_spans[c].end, seqs[i].answer.begin);
    }
  }
  const auto single = build_qa_sequences(tuples(1), 1);
  ASSERT_EQ(single.size(), 1u);
  EXPECT_EQ(detokenize(single[0].tokens), "context 0\nQ: question 0\nA: answer 0\n");
}

TEST(QaBuild, Errors) {
  EXPECT_EQ(kind_of([] { build_qa_sequences(tuples(3), 0); }), ErrorKind::kData);
  EXPECT_EQ(kind_of([] { build_qa_sequences(tuples(3), 4); }), ErrorKind::kData);
  auto bad = tuples(2);
  bad[1].question.clear();
  EXPECT_EQ(kind_of([&] { build_qa_sequences(bad, 2); }), ErrorKind::kData);
}

TEST(QaSynthetic, BalancedDeterministic) {
  const auto a = gen_synthetic_qa(30, 7), b = gen_synthetic_qa(30, 7);
  ASSERT_EQ(a.size(), 30u);
  std::map<std::string, int> counts;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_TRUE(a[i].short_label.has_value());
    ++counts[*a[i].short_label];
    EXPECT_EQ(a[i].context, b[i].context);
    EXPECT_EQ(detokenize(a[i].answer), *a[i].short_label);
    EXPECT_FALSE(a[i].context.empty());
    EXPECT_FALSE(a[i].question.empty());
  }
  EXPECT_EQ(counts["yes"], 10);
  EXPECT_EQ(counts["no"], 10);
  EXPECT_EQ(counts["maybe"], 10);
}

TEST(QaSynthetic, TsvReader) {
  const std::string path = ::testing::TempDir() + "/hmt_qa.tsv";
  {
    std::ofstream out(path);
    out << "the sky is blue.\tis the sky blue?\tyes\tyes\n";
    out << "ctx\tq\ta\n";
  }
  const auto t = read_qa_tsv(path);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(detokenize(t[0].question), "is the sky blue?");
  EXPECT_EQ(t[0].short_label, "yes");
  EXPECT_FALSE(t[1].short_label.has_value());
  {
    std::ofstream out(path);
    out << "only one field\n";
  }
  EXPECT_EQ(kind_of([&] { read_qa_tsv(path); }), ErrorKind::kData);
}

TEST(PlantedRecall, StructureAndScanOracle) {
  for (std::size_t distance : {1, 4, 8}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      PlantedRecallSpec spec;
      spec.num_segments = 9;
      spec.distance = distance;
      spec.query_at = 6;
      spec.seed = seed;
      const PlantedRecall p = gen_planted_recall(spec);
      ASSERT_EQ(p.stream.size(), 16u * 9);
      ASSERT_EQ(p.query_positions.size(), 1u);
      const std::size_t q = p.query_positions[0];
      EXPECT_EQ(q, 8 * 16 + 6 + 3);
      EXPECT_EQ(p.stream[q], p.value);
      EXPECT_EQ(p.stream[q - 1], kBindMarker);
      EXPECT_EQ(p.stream[q - 2], p.key);
      EXPECT_EQ(p.stream[q - 3], kQueryMarker);
      EXPECT_EQ(p.binding_segment, 8 - distance);
      // The value occurs exactly once before the query, right after "<key>=".
      const std::size_t query_segment = 8 * 16;
      std::vector<std::size_t> hits;
      for (std::size_t i = 0; i < query_segment; ++i) {
        if (p.stream[i] == p.value) hits.push_back(i);
      }
      ASSERT_EQ(hits.size(), 1u);
      EXPECT_EQ(hits[0] / 16, p.binding_segment);
      EXPECT_EQ(p.stream[hits[0] - 1], kBindMarker);
      EXPECT_EQ(p.stream[hits[0] - 2], p.key);
      EXPECT_EQ(p.stream, gen_planted_recall(spec).stream);
    }
  }
}

TEST(PlantedRecall, ConfigErrors) {
  PlantedRecallSpec spec;
  spec.value_alphabet = "ABCDEFGHIJa";
  EXPECT_EQ(kind_of([&] { gen_planted_recall(spec); }), ErrorKind::kConfig);
  spec = {};
  spec.distractor_alphabet = "01=";
  EXPECT_EQ(kind_of([&] { gen_planted_recall(spec); }), ErrorKind::kConfig);
  spec = {};
  spec.distance = 0;
  EXPECT_EQ(kind_of([&] { gen_planted_recall(spec); }), ErrorKind::kConfig);
  spec = {};
  spec.distance = spec.num_segments;
  EXPECT_EQ(kind_of([&] { gen_planted_recall(spec); }), ErrorKind::kConfig);
  spec = {};
  spec.query_at = 13;
  EXPECT_EQ(kind_of([&] { gen_planted_recall(spec); }), ErrorKind::kConfig);
  spec = {};
  spec.key_alphabet = "aab";
  EXPECT_EQ(kind_of([&] { gen_planted_recall(spec); }), ErrorKind::kConfig);
}

}  // namespace
}  // namespace hmt
