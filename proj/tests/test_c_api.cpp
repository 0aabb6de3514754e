// SPDX-License-Identifier: Apache-2.0
#include "hmt/hmt.h"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace {

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

const char* kTiny =
    "d_model = 32\nn_layers = 2\nn_heads = 4\nd_ff = 128\n"
    "segment_len = 16\nsensory_len = 4\nrepr_len = 8\ncache_size = 8\ndh = 32\n"
    "lr = 3e-3\nunroll = 2\nsteps = 20\n";

Config tiny() {
  hmt_config* c = nullptr;
  EXPECT_EQ(hmt_config_parse(kTiny, &c), HMT_OK) << hmt_last_error();
  return Config(c);
}

std::string get(const hmt_config* c, const char* key) {
  char buf[256];
  EXPECT_EQ(hmt_config_get(c, key, buf, sizeof buf, nullptr), HMT_OK) << hmt_last_error();
  return buf;
}

std::vector<uint16_t> ids(const hmt_tokens* t) {
  return {hmt_tokens_data(t), hmt_tokens_data(t) + hmt_tokens_size(t)};
}

Tokens from_text(const std::string& s) {
  hmt_tokens* t = nullptr;
  EXPECT_EQ(hmt_tokens_from_bytes(reinterpret_cast<const uint8_t*>(s.data()), s.size(), &t), HMT_OK);
  return Tokens(t);
}

Tokens toy_corpus() {
  hmt_tokens* t = nullptr;
  EXPECT_EQ(hmt_tokens_read(HMT_SOURCE_DIR "/data/toy_corpus.txt", &t), HMT_OK) << hmt_last_error();
  return Tokens(t);
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::path(::testing::TempDir()) / name).string();
}

}  // namespace

TEST(CApiStatus, NamesAndLastError) {
  EXPECT_STREQ(hmt_status_name(HMT_OK), "ok");
  EXPECT_STREQ(hmt_status_name(HMT_ERR_CONFIG), "config error");
  EXPECT_EQ(hmt_config_default(nullptr), HMT_ERR_ARGUMENT);
  EXPECT_NE(std::string(hmt_last_error()).find("out"), std::string::npos);
  hmt_config* c = nullptr;
  EXPECT_EQ(hmt_config_parse("no_such_key = 1\n", &c), HMT_ERR_CONFIG);
  EXPECT_EQ(c, nullptr);
  EXPECT_NE(std::string(hmt_last_error()).find("no_such_key"), std::string::npos);
}

TEST(CApiConfig, KeysOverridesAndDerivedValues) {
  ASSERT_GT(hmt_config_key_count(), 0u);
  EXPECT_STREQ(hmt_config_key_name(0), "d_model");
  EXPECT_EQ(hmt_config_key_name(hmt_config_key_count()), nullptr);

  hmt_config* raw = nullptr;
  ASSERT_EQ(hmt_config_default(&raw), HMT_OK);
  Config c(raw);
  EXPECT_EQ(get(c.get(), "segment_len"), "256");
  EXPECT_EQ(get(c.get(), "repr_len"), "128");
  ASSERT_EQ(hmt_config_set(c.get(), "segment_len", "64"), HMT_OK) << hmt_last_error();
  EXPECT_EQ(get(c.get(), "repr_len"), "32");
  ASSERT_EQ(hmt_config_set(c.get(), "cache_size", "4"), HMT_OK);
  ASSERT_EQ(hmt_config_set(c.get(), "cache_size", "9"), HMT_OK);
  EXPECT_EQ(get(c.get(), "cache_size"), "9");

  char before[17], after[17];
  ASSERT_EQ(hmt_config_hash(c.get(), before), HMT_OK);
  EXPECT_EQ(std::strlen(before), 16u);
  // A rejected override leaves the handle untouched.
  EXPECT_EQ(hmt_config_set(c.get(), "repr_len", "65"), HMT_ERR_CONFIG);
  EXPECT_EQ(hmt_config_set(c.get(), "stage", "x"), HMT_ERR_CONFIG);
  ASSERT_EQ(hmt_config_hash(c.get(), after), HMT_OK);
  EXPECT_STREQ(before, after);
  EXPECT_EQ(hmt_config_get(c.get(), "nope", nullptr, 0, nullptr), HMT_ERR_CONFIG);


  std::size_t len = 0;
  ASSERT_EQ(hmt_config_text(c.get(), nullptr, 0, &len), HMT_OK);
  std::string text(len, '\0');
  ASSERT_EQ(hmt_config_text(c.get(), text.data(), len + 1, nullptr), HMT_OK);
  hmt_config* again = nullptr;
  ASSERT_EQ(hmt_config_parse(text.c_str(), &again), HMT_OK);
  Config copy(again);
  ASSERT_EQ(hmt_config_hash(copy.get(), after), HMT_OK);
  EXPECT_STREQ(before, after);
}

TEST(CApiConfig, LoadReportsFileAndLine) {
  const std::string path = temp_path("capi_bad.cfg");
  std::ofstream(path) << "d_model = 32\nsteps = many\n";
  hmt_config* c = nullptr;
  EXPECT_EQ(hmt_config_load(path.c_str(), &c), HMT_ERR_CONFIG);
  EXPECT_NE(std::string(hmt_last_error()).find(path + ":2"), std::string::npos) << hmt_last_error();
  EXPECT_EQ(hmt_config_load(temp_path("missing.cfg").c_str(), &c), HMT_ERR_CONFIG);
}

TEST(CApiConfig, OverridesValidatedTogether) {
  hmt_config* raw = nullptr;
  ASSERT_EQ(hmt_config_default(&raw), HMT_OK);
  Config c(raw);
  // One at a time, max_pos 7 is too small for the default segment length.
  const char* keys[] = {"max_pos", "segment_len", "sensory_len", "repr_len"};
  const char* values[] = {"7", "4", "1", "2"};
  EXPECT_EQ(hmt_config_set(c.get(), keys[0], values[0]), HMT_ERR_CONFIG);
  ASSERT_EQ(hmt_config_set_many(c.get(), keys, values, 4), HMT_OK) << hmt_last_error();
  EXPECT_EQ(get(c.get(), "max_pos"), "7");
  EXPECT_EQ(get(c.get(), "segment_len"), "4");
  const char* bad_values[] = {"6", "4", "1", "2"};
  EXPECT_EQ(hmt_config_set_many(c.get(), keys, bad_values, 4), HMT_ERR_CONFIG);
  EXPECT_EQ(get(c.get(), "max_pos"), "7");
}

TEST(CApiTokens, FileRoundTripAndSplit) {
  std::vector<uint16_t> v(100);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<uint16_t>(i * 3);
  hmt_tokens* raw = nullptr;
  ASSERT_EQ(hmt_tokens_from_ids(v.data(), v.size(), &raw), HMT_OK);
  Tokens t(raw);
  const std::string path = temp_path("capi_tokens.bin");
  ASSERT_EQ(hmt_tokens_write(t.get(), path.c_str()), HMT_OK);
  hmt_tokens* back = nullptr;
  ASSERT_EQ(hmt_tokens_read(path.c_str(), &back), HMT_OK);
  Tokens b(back);
  EXPECT_EQ(ids(b.get()), v);

  hmt_tokens *tr = nullptr, *va = nullptr, *te = nullptr;
  ASSERT_EQ(hmt_tokens_split(t.get(), &tr, &va, &te), HMT_OK);
  Tokens a1(tr), a2(va), a3(te);
  EXPECT_EQ(hmt_tokens_size(a1.get()), 75u);
  EXPECT_EQ(hmt_tokens_size(a2.get()), 15u);
  EXPECT_EQ(hmt_tokens_size(a3.get()), 10u);
  EXPECT_EQ(hmt_tokens_data(a2.get())[0], v[75]);

  // Ids above 255 cannot be written as raw bytes.
  EXPECT_EQ(hmt_tokens_write_bytes(t.get(), temp_path("capi_bytes.txt").c_str()), HMT_ERR_DATA);
  EXPECT_EQ(hmt_tokens_read(temp_path("absent.bin").c_str(), &back), HMT_ERR_DATA);
}

TEST(CApiData, BuildersRoundTrip) {
  Tokens a = from_text(std::string(300, 'a') + "xyz");
  Tokens b = from_text(std::string(100, 'b'));
  hmt_tokens* inter = nullptr;
  ASSERT_EQ(hmt_data_interleave(a.get(), b.get(), 64, &inter), HMT_OK);
  Tokens in(inter);
  EXPECT_EQ(hmt_tokens_size(in.get()), 403u);
  EXPECT_EQ(hmt_tokens_data(in.get())[64], 'b');
  hmt_tokens *ra = nullptr, *rb = nullptr;
  ASSERT_EQ(hmt_data_deinterleave(in.get(), 303, 100, 64, &ra, &rb), HMT_OK);
  Tokens oa(ra), ob(rb);
  EXPECT_EQ(ids(oa.get()), ids(a.get()));
  EXPECT_EQ(ids(ob.get()), ids(b.get()));

  hmt_tokens* dil = nullptr;
  ASSERT_EQ(hmt_data_dilate(a.get(), '$', 100, &dil), HMT_OK);
  Tokens d(dil);
  EXPECT_EQ(hmt_tokens_size(d.get()), 303u + 400u);
  EXPECT_EQ(hmt_tokens_data(d.get())[100], '$');
  hmt_tokens* st = nullptr;
  ASSERT_EQ(hmt_data_strip_dilation(d.get(), 100, &st), HMT_OK);
  Tokens s(st);
  EXPECT_EQ(ids(s.get()), ids(a.get()));

  const hmt_tokens* samples[] = {a.get(), b.get()};
  std::size_t count = 0;
  ASSERT_EQ(hmt_data_concat(samples, 2, 128, nullptr, 0, &count), HMT_OK);
  EXPECT_EQ(count, 4u);  // 403 tokens in chunks of 128
  std::vector<hmt_tokens*> chunks(count);
  ASSERT_EQ(hmt_data_concat(samples, 2, 128, chunks.data(), count, &count), HMT_OK);
  std::vector<uint16_t> joined;
  for (hmt_tokens* c : chunks) {
    Tokens owned(c);
    const auto part = ids(owned.get());
    joined.insert(joined.end(), part.begin(), part.end());
  }
  auto expected = ids(a.get());
  const auto tail = ids(b.get());
  expected.insert(expected.end(), tail.begin(), tail.end());
  EXPECT_EQ(joined, expected);
}

TEST(CApiData, PlantedAnswerFollowsQuery) {
  hmt_planted_spec spec;
  hmt_planted_spec_default(&spec);
  spec.num_segments = 4;
  spec.distance = 3;
  spec.query_at = 2;
  spec.seed = 11;
  hmt_tokens* raw = nullptr;
  std::size_t answer = 0;
  ASSERT_EQ(hmt_data_planted(&spec, &raw, &answer), HMT_OK);
  Tokens t(raw);
  const auto s = ids(t.get());
  ASSERT_EQ(s.size(), 4u * 16u);
  EXPECT_EQ(answer, 3u * 16u + 2u + 3u);
  EXPECT_EQ(s[answer - 3], '?');
  EXPECT_EQ(s[answer - 1], '=');
  // The binding three segments earlier ends in key=value.
  const std::size_t bind_end = (3 - 3) * 16 + 15;
  EXPECT_EQ(s[bind_end - 2], s[answer - 2]);
  EXPECT_EQ(s[bind_end], s[answer]);

  spec.distance = 4;
  EXPECT_EQ(hmt_data_planted(&spec, &raw, &answer), HMT_ERR_CONFIG);
}

TEST(CApiData, QaBuildWritesSpans) {
  const std::filesystem::path dir = temp_path("capi_qa");
  std::filesystem::create_directories(dir);
  std::size_t n = 0;
  ASSERT_EQ(hmt_data_qa_build(nullptr, 6, 1, 3, dir.c_str(), &n), HMT_OK) << hmt_last_error();
  EXPECT_EQ(n, 3u);
  std::ifstream spans(dir / "spans.csv");
  std::string header;
  std::getline(spans, header);
  EXPECT_EQ(header, "file,question_begin,question_end,answer_begin,answer_end,label");
  for (std::size_t i = 0; i < n; ++i) {
    hmt_tokens* t = nullptr;
    char name[32];
    std::snprintf(name, sizeof name, "seq_%04zu.bin", i);
    ASSERT_EQ(hmt_tokens_read((dir / name).c_str(), &t), HMT_OK);
    Tokens owned(t);
    std::string row;
    std::getline(spans, row);
    std::size_t qb, qe, ab, ae;
    ASSERT_EQ(std::sscanf(row.c_str() + std::strlen(name) + 1, "%zu,%zu,%zu,%zu", &qb, &qe, &ab, &ae), 4);
    EXPECT_EQ(ae + 1, hmt_tokens_size(owned.get()));
    EXPECT_EQ(hmt_tokens_data(owned.get())[ae], '\n');
    EXPECT_LT(qe, ab);
  }
  EXPECT_EQ(hmt_data_qa_build(nullptr, 6, 1, 3, temp_path("no_such_dir").c_str(), &n), HMT_ERR_IO);
}

TEST(CApiModel, RecallAddsSummaryPromptAndProjections) {
  Config c = tiny();
  hmt_model* raw = nullptr;
  ASSERT_EQ(hmt_model_create(c.get(), &raw), HMT_OK);
  Model with(raw);
  ASSERT_EQ(hmt_config_set(c.get(), "recall", "false"), HMT_OK);
  ASSERT_EQ(hmt_model_create(c.get(), &raw), HMT_OK);
  Model without(raw);
  std::size_t n_with = 0, n_without = 0;
  ASSERT_EQ(hmt_model_parameter_count(with.get(), &n_with), HMT_OK);
  ASSERT_EQ(hmt_model_parameter_count(without.get(), &n_without), HMT_OK);
  EXPECT_EQ(n_with - n_without, 32u + 2u * 32u * 32u);
}

TEST(CApiModel, UntrainedPerplexityAndCsv) {
  Config c = tiny();
  hmt_model* raw = nullptr;
  ASSERT_EQ(hmt_model_create(c.get(), &raw), HMT_OK);
  Model m(raw);
  Tokens corpus = toy_corpus();
  const std::size_t lengths[] = {64, 256};
  double ppl[2];
  const std::string csv = temp_path("capi_ppl.csv");
  ASSERT_EQ(hmt_eval_perplexity(m.get(), corpus.get(), lengths, 2, csv.c_str(), ppl), HMT_OK) << hmt_last_error();
  for (double p : ppl) {
    EXPECT_GT(p, 240.0);
    EXPECT_LT(p, 272.0);
  }
  std::ifstream in(csv);
  std::string line, last_comment, header;
  while (std::getline(in, line) && line.rfind("# ", 0) == 0) last_comment = line;
  EXPECT_EQ(last_comment.rfind("# config_hash = ", 0), 0u);
  EXPECT_EQ(line, "length,ppl");

  const std::size_t too_long[] = {hmt_tokens_size(corpus.get()) + 1};
  EXPECT_EQ(hmt_eval_perplexity(m.get(), corpus.get(), too_long, 1, nullptr, nullptr), HMT_ERR_DATA);
}

TEST(CApiTrain, ResumeMatchesUninterruptedRun) {
  Config c = tiny();
  Tokens corpus = toy_corpus();
  const std::string full = temp_path("capi_full.ckpt"), half = temp_path("capi_half.ckpt"),
                    resumed = temp_path("capi_resumed.ckpt");
  hmt_train_summary s{};
  ASSERT_EQ(hmt_train(c.get(), corpus.get(), nullptr, full.c_str(), nullptr, &s), HMT_OK) << hmt_last_error();
  EXPECT_EQ(s.steps, 20u);
  ASSERT_EQ(hmt_config_set(c.get(), "steps", "12"), HMT_OK);
  ASSERT_EQ(hmt_train(c.get(), corpus.get(), nullptr, half.c_str(), nullptr, nullptr), HMT_OK);
  ASSERT_EQ(hmt_train_resume(half.c_str(), corpus.get(), 8, resumed.c_str(), nullptr, &s), HMT_OK)
      << hmt_last_error();

  hmt_model *a = nullptr, *b = nullptr;
  ASSERT_EQ(hmt_model_load(full.c_str(), nullptr, &a), HMT_OK);
  ASSERT_EQ(hmt_model_load(resumed.c_str(), nullptr, &b), HMT_OK);
  Model ma(a), mb(b);
  Tokens probe = from_text("the quick brown fox jumps over the lazy dog, again and again and again.");
  double nll_a = 0.0, nll_b = 0.0;
  ASSERT_EQ(hmt_eval_stream(ma.get(), probe.get(), &nll_a, nullptr, nullptr), HMT_OK);
  ASSERT_EQ(hmt_eval_stream(mb.get(), probe.get(), &nll_b, nullptr, nullptr), HMT_OK);
  EXPECT_EQ(nll_a, nll_b);
}

TEST(CApiTrain, StageTwoFromStageOne) {
  Config c = tiny();
  ASSERT_EQ(hmt_config_set(c.get(), "stage", "1"), HMT_OK);
  Tokens corpus = toy_corpus();
  const std::string s1 = temp_path("capi_s1.ckpt"), s2 = temp_path("capi_s2.ckpt"), log = temp_path("capi_s2.csv");
  ASSERT_EQ(hmt_train(c.get(), corpus.get(), nullptr, s1.c_str(), nullptr, nullptr), HMT_OK);
  ASSERT_EQ(hmt_config_set(c.get(), "stage", "2"), HMT_OK);
  ASSERT_EQ(hmt_config_set(c.get(), "steps", "3"), HMT_OK);
  ASSERT_EQ(hmt_train(c.get(), corpus.get(), s1.c_str(), s2.c_str(), log.c_str(), nullptr), HMT_OK)
      << hmt_last_error();
  std::ifstream in(log);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "step,loss,ppl,lr,grad_norm");

  hmt_model* raw = nullptr;
  ASSERT_EQ(hmt_model_load(s2.c_str(), nullptr, &raw), HMT_OK);
  Model m(raw);
  hmt_config* mc = nullptr;
  ASSERT_EQ(hmt_model_config(m.get(), &mc), HMT_OK);
  Config model_config(mc);
  EXPECT_EQ(get(model_config.get(), "recall"), "true");

  // A different backbone cannot take the stored parameters.
  ASSERT_EQ(hmt_config_set(c.get(), "d_ff", "64"), HMT_OK);
  EXPECT_EQ(hmt_model_load(s2.c_str(), c.get(), &raw), HMT_ERR_CONFIG);
  EXPECT_NE(std::string(hmt_last_error()).find("d_ff"), std::string::npos) << hmt_last_error();
}

TEST(CApiTrain, CorruptCheckpointRejected) {
  const std::string path = temp_path("capi_corrupt.ckpt");
  std::ofstream(path, std::ios::binary) << "HMT1garbage";
  hmt_model* m = nullptr;
  EXPECT_EQ(hmt_model_load(path.c_str(), nullptr, &m), HMT_ERR_FORMAT);
  EXPECT_EQ(m, nullptr);
}

TEST(CApiEval, HistogramTotalsAndPlanted) {
  Config c = tiny();
  hmt_model* raw = nullptr;
  ASSERT_EQ(hmt_model_create(c.get(), &raw), HMT_OK);
  Model m(raw);
  Tokens corpus = toy_corpus();
  std::vector<uint16_t> head(hmt_tokens_data(corpus.get()), hmt_tokens_data(corpus.get()) + 16 * 20);
  hmt_tokens* h = nullptr;
  ASSERT_EQ(hmt_tokens_from_ids(head.data(), head.size(), &h), HMT_OK);
  Tokens stream(h);
  std::size_t d[64], n[64];
  hmt_histogram_summary s{};
  ASSERT_EQ(hmt_eval_histogram(m.get(), stream.get(), temp_path("capi_hist.csv").c_str(), d, n, 64, &s), HMT_OK)
      << hmt_last_error();
  std::size_t total = s.seed_hits;
  for (std::size_t i = 0; i < s.bins; ++i) total += n[i];
  EXPECT_EQ(total, s.events);
  EXPECT_GE(s.events, 19u);

  hmt_planted_spec spec;
  hmt_planted_spec_default(&spec);
  spec.num_segments = 4;
  spec.distance = 2;
  double nll = 0.0;
  ASSERT_EQ(hmt_eval_planted(m.get(), &spec, 3, &nll), HMT_OK);
  EXPECT_TRUE(std::isfinite(nll));
  EXPECT_EQ(hmt_eval_planted(m.get(), &spec, 0, &nll), HMT_ERR_CONFIG);
}

TEST(CApiEval, GradcheckAndSweepErrors) {
  Config c = tiny();
  hmt_gradcheck_result r{};
  ASSERT_EQ(hmt_gradcheck(c.get(), 2, 2, &r), HMT_OK) << hmt_last_error();
  EXPECT_EQ(r.passed, 1);
  EXPECT_GT(r.checked, 0u);
  EXPECT_LT(r.max_rel_error, 1e-4);

  Tokens corpus = toy_corpus();
  const std::size_t values[] = {1, 2};
  EXPECT_EQ(hmt_sweep(c.get(), nullptr, "bogus", values, 2, corpus.get(), corpus.get(), nullptr, nullptr),
            HMT_ERR_CONFIG);
  EXPECT_EQ(hmt_sweep(c.get(), nullptr, "cache_size", values, 2, corpus.get(), corpus.get(), nullptr, nullptr),
            HMT_ERR_ARGUMENT);
}
