// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hmt/checkpoint.hpp"
#include "hmt/config.hpp"
#include "hmt/datagen.hpp"
#include "hmt/error.hpp"
#include "hmt/ops.hpp"
#include "hmt/recurrence.hpp"
#include "hmt/training.hpp"
#include "support.hpp"

namespace hmt {
namespace {

using testing::bit_equal;
using testing::BigramStub;
using testing::kind_of;
using testing::stub_model;
using testing::tiny_backbone;
using testing::tiny_hmt;
using testing::tiny_run;

std::vector<Token> bytes(std::size_t n, std::uint64_t seed, std::size_t vocab = 256) {
  Rng rng(seed);
  std::vector<Token> out(n);
  for (auto& t : out) t = static_cast<Token>(rng.below(vocab));
  return out;
}

std::shared_ptr<const std::vector<Token>> toy_corpus() {
  static const auto corpus =
      std::make_shared<const std::vector<Token>>(read_text_file(std::string(HMT_SOURCE_DIR) + "/data/toy_corpus.txt"));
  return corpus;
}

std::vector<double> losses(const std::vector<StepRecord>& log) {
  std::vector<double> out;
  for (const auto& r : log) out.push_back(r.loss);
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

TEST(Unroll, SingleSegmentCountsBoundaryTarget) {
  HmtModel m = HmtModel::create(tiny_backbone(), tiny_hmt(), 1);
  const auto stream = bytes(40, 2);
  EXPECT_EQ(bptt_unroll(m, std::span(stream).first(16), 1).scored, 15u);
  EXPECT_EQ(bptt_unroll(m, stream, 1).scored, 16u);
}

TEST(Unroll, TwoSegmentsEqualManualComposition) {
  for (bool recall : {true, false}) {
    HmtModel m = HmtModel::create(tiny_backbone(), tiny_hmt(recall), 3);
    const auto w = bytes(33, 4);
    const UnrollResult r = bptt_unroll(m, w, 2);

    HmtState s = HmtState::initial(m);
    std::vector<std::int32_t> t1(w.begin() + 1, w.begin() + 17), t2(w.begin() + 17, w.begin() + 33);
    Tensor a = nll_sum(hmt_step(m, s, std::span(w).subspan(0, 16)).logits, t1);
    Tensor b = nll_sum(hmt_step(m, s, std::span(w).subspan(16, 16)).logits, t2);
    const double manual = add(a, b).item() / 32.0;
    EXPECT_EQ(r.scored, 32u);
    EXPECT_EQ(r.loss.item(), manual);
  }
}

TEST(Unroll, StudiedDepthsRun) {
  HmtModel m = HmtModel::create(tiny_backbone(), tiny_hmt(), 5);
  for (std::size_t T : {2, 5, 15}) {
    const auto w = bytes(16 * T + 1, T);
    const UnrollResult r = bptt_unroll(m, w, T);
    EXPECT_EQ(r.steps.size(), T);
    EXPECT_TRUE(std::isfinite(r.loss.item()));
  }
}

TEST(Unroll, ShortStreamIsDataError) {
  HmtModel m = HmtModel::create(tiny_backbone(), tiny_hmt(), 6);
  const auto w = bytes(20, 7);
  try {
    bptt_unroll(m, w, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
    EXPECT_NE(std::string(e.what()).find("2 segment"), std::string::npos);
  }
}

TEST(Unroll, TargetOutsideWindowIsIndexError) {
  HmtModel m = HmtModel::create(tiny_backbone(), tiny_hmt(), 6);
  const auto w = bytes(33, 7);
  const std::vector<std::size_t> bad{33};
  EXPECT_EQ(kind_of([&] { bptt_unroll(m, w, 2, nullptr, bad); }), ErrorKind::kIndex);
}

// Segmented loss on a position-free stub equals the bigram NLL of the flat
// stream computed directly from the table.
TEST(Unroll, LossMatchesFlatOracle) {
  for (bool recall : {true, false}) {
    Rng rng(8);
    auto stub = std::make_shared<BigramStub>(16, rng);
    HmtConfig h = tiny_hmt(recall);
    h.dh = 0;
    HmtModel m = stub_model(stub, h, 9);
    const auto w = bytes(16 * 4 + 5, 10, 16);
    const UnrollResult r = bptt_unroll(m, w, 5);
    long double total = 0.0L;
    for (std::size_t i = 0; i + 1 < w.size(); ++i) {
      const double* row = stub->table().data().data() + w[i] * 16;
      double mx = row[0];
      for (int j = 1; j < 16; ++j) mx = std::max(mx, row[j]);
      long double z = 0.0L;
      for (int j = 0; j < 16; ++j) z += std::exp(static_cast<long double>(row[j] - mx));
      total += mx + std::log(z) - row[w[i + 1]];
    }
    EXPECT_EQ(r.scored, w.size() - 1);
    EXPECT_NEAR(r.nll_sum, static_cast<double>(total), 1e-10);
    EXPECT_NEAR(r.loss.item(), static_cast<double>(total / (w.size() - 1)), 1e-10);
  }
}

std::map<std::string, std::vector<double>> grads_of(const HmtModel& m) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& p : m.parameters()) {
    out[p.name] = p.tensor.has_grad() ? std::vector<double>(p.tensor.grad().begin(), p.tensor.grad().end())
                                      : std::vector<double>(p.tensor.size(), 0.0);
  }
  return out;
}

double max_grad_diff(const std::map<std::string, std::vector<double>>& a,
                     const std::map<std::string, std::vector<double>>& b) {
  double worst = 0.0;
  for (const auto& [name, g] : a) {
    const auto& h = b.at(name);
    for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, std::abs(g[i] - h[i]));
  }
  return worst;
}

void overwrite(Tensor& dst, const Tensor& src) {
  std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
}

// The window's incoming state is built from a different history, still
// attached to that history's graph, and its values are then overwritten
// with those of the reference history's state. With the cache held fixed
// this way, every parameter gradient of the window must match.
TEST(Unroll, TruncationIgnoresEarlierTokens) {
  for (bool recall : {true, false}) {
    HmtModel m = HmtModel::create(tiny_backbone(), tiny_hmt(recall), 11);
    const auto history = bytes(48, 12);
    auto other = history;
    for (std::size_t i = 0; i < other.size(); i += 3) other[i] = static_cast<Token>((other[i] + 101) % 256);
    const auto window = bytes(33, 13);

    auto build = [&](const std::vector<Token>& h) {
      HmtState s = HmtState::initial(m);
      for (std::size_t seg = 0; seg < 3; ++seg) hmt_step(m, s, std::span(h).subspan(16 * seg, 16));
      return s;
    };
    HmtState ref = build(history);
    HmtState fixed = build(other);
    for (std::size_t i = 0; i < ref.cache.size(); ++i) {
      Tensor e = fixed.cache[i].embedding;
      overwrite(e, ref.cache[i].embedding);
    }
    overwrite(fixed.sensory, ref.sensory);
    overwrite(fixed.previous_memory, ref.previous_memory);

    zero_grads(m.parameters());
    HmtState a = ref;
    bptt_unroll(m, window, 2, &a).loss.backward();
    const auto ga = grads_of(m);
    zero_grads(m.parameters());
    HmtState b = fixed;
    bptt_unroll(m, window, 2, &b).loss.backward();
    const auto gb = grads_of(m);
    EXPECT_LT(max_grad_diff(ga, gb), 1e-15);

    // Control: without the boundary the other history's graph does leak in.
    zero_grads(m.parameters());
    HmtState leak = build(other);
    for (std::size_t i = 0; i < ref.cache.size(); ++i) {
      Tensor e = leak.cache[i].embedding;
      overwrite(e, ref.cache[i].embedding);
    }
    overwrite(leak.sensory, ref.sensory);
    overwrite(leak.previous_memory, ref.previous_memory);
    std::vector<std::int32_t> t1(window.begin() + 1, window.begin() + 17), t2(window.begin() + 17, window.begin() + 33);
    Tensor l1 = nll_sum(hmt_step(m, leak, std::span(window).subspan(0, 16)).logits, t1);
    Tensor l2 = nll_sum(hmt_step(m, leak, std::span(window).subspan(16, 16)).logits, t2);
    div_scalar(add(l1, l2), 32.0).backward();
    EXPECT_GT(max_grad_diff(ga, grads_of(m)), 1e-12);
  }
}

TEST(LearningRate, StepSchedule) {
  TrainConfig c;
  c.lr = 1e-5;
  EXPECT_NEAR(lr_at(0, c), 1e-5, 1e-20);
  EXPECT_NEAR(lr_at(100, c), 7e-6, 1e-20);
  EXPECT_NEAR(lr_at(250, c), 4.9e-6, 1e-20);
  EXPECT_EQ(lr_at(99, c), lr_at(0, c));
  for (std::uint64_t s = 1; s < 1000; ++s) {
    EXPECT_LE(lr_at(s, c), lr_at(s - 1, c));
    if (s % 100 != 0) EXPECT_EQ(lr_at(s, c), lr_at(s - 1, c));
  }
  c.lr_decay = 0.5;
  c.lr_decay_every = 10;
  EXPECT_NEAR(lr_at(25, c), 2.5e-6, 1e-20);
}

TEST(Training, SameSeedSameTrace) {
  const RunConfig c = tiny_run(14);
  auto run = [&] {
    Trainer t = make_stage_trainer(c, corpus_windows(toy_corpus(), 16, 2));
    return losses(t.run(50));
  };
  const auto a = run(), b = run();
  EXPECT_TRUE(bit_equal(a, b));
  RunConfig other = c;
  other.train.seed = 15;
  Trainer t = make_stage_trainer(other, corpus_windows(toy_corpus(), 16, 2));
  EXPECT_FALSE(bit_equal(a, losses(t.run(50))));
}

TEST(Training, LossDecreasesOnToyCorpus) {
  RunConfig c = tiny_run(16);
  c.train.steps = 200;
  const auto log = losses(train_stage(c, corpus_windows(toy_corpus(), 16, 2)).log);
  ASSERT_EQ(log.size(), 200u);
  const std::vector<double> head(log.begin(), log.begin() + 20), tail(log.end() - 21, log.end());
  EXPECT_LT(median(tail), median(head));
}

TEST(Training, ShortCorpusIsDataError) {
  auto tiny = std::make_shared<const std::vector<Token>>(bytes(20, 1));
  EXPECT_EQ(kind_of([&] { corpus_windows(tiny, 16, 2); }), ErrorKind::kData);
}

TEST(Training, LogFormat) {
  std::ostringstream out;
  write_log_header(out);
  write_log_record(out, StepRecord{3, 1.5, std::exp(1.5), 1e-5, 0.25});
  EXPECT_EQ(out.str().substr(0, 26), "step,loss,ppl,lr,grad_norm");
  EXPECT_NE(out.str().find("\n3,1.5,"), std::string::npos);
}

// ---------------------------------------------------------------------------

TEST(Checkpoint, RoundTripContinuesBitIdentical) {
  for (int stage : {1, 2}) {
    RunConfig c = tiny_run(17);
    c.train.stage = stage;
    c.hmt.recall = stage == 2;
    Trainer straight = make_stage_trainer(c, corpus_windows(toy_corpus(), 16, 2));
    const auto full = losses(straight.run(20));

    Trainer first = make_stage_trainer(c, corpus_windows(toy_corpus(), 16, 2));
    first.run(10);
    const auto bytes_out = encode_checkpoint(capture(c, first));
    Trainer resumed = resume_trainer(decode_checkpoint(bytes_out), corpus_windows(toy_corpus(), 16, 2));
    const auto rest = losses(resumed.run(10));
    EXPECT_TRUE(bit_equal(std::span(full).subspan(10), rest)) << "stage " << stage;
    const auto pa = straight.trainable(), pb = resumed.trainable();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(bit_equal(pa[i].tensor.data(), pb[i].tensor.data()));
    EXPECT_EQ(resumed.steps_done(), 20u);
    EXPECT_EQ(resumed.optimizer().step, straight.optimizer().step);
  }
}

TEST(Checkpoint, DecodeEncodeIsIdentity) {
  RunConfig c = tiny_run(18);
  Trainer t = make_stage_trainer(c, corpus_windows(toy_corpus(), 16, 2));
  t.run(3);
  const auto bytes_out = encode_checkpoint(capture(c, t));
  EXPECT_EQ(encode_checkpoint(decode_checkpoint(bytes_out)), bytes_out);
  const std::string path = ::testing::TempDir() + "/hmt_ckpt_roundtrip.bin";
  save_checkpoint(path, decode_checkpoint(bytes_out));
  EXPECT_EQ(encode_checkpoint(load_checkpoint(path)), bytes_out);
}

TEST(Checkpoint, CorruptionRejectedWithOffset) {
  RunConfig c = tiny_run(19);
  Trainer t = make_stage_trainer(c, corpus_windows(toy_corpus(), 16, 2));
  t.run(1);
  const auto good = encode_checkpoint(capture(c, t));

  auto magic = good;
  magic[0] = 'X';
  auto version = good;
  version[4] = 2;
  for (const auto& bad : {magic, version}) {
    try {
      decode_checkpoint(bad);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kFormat);
      EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos);
    }
  }
  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, good.size() / 2, good.size() - 1}) {
    EXPECT_EQ(kind_of([&] { decode_checkpoint(std::span(good).first(cut)); }), ErrorKind::kFormat) << cut;
  }
  auto extra = good;
  extra.push_back(0);
  EXPECT_EQ(kind_of([&] { decode_checkpoint(extra); }), ErrorKind::kFormat);
}

TEST(Checkpoint, StageTwoLoadsBackboneAndAddsRecallParams) {
  RunConfig c1 = tiny_run(20);
  c1.train.steps = 5;
  const StageResult s1 = train_stage(c1, corpus_windows(toy_corpus(), 16, 2));
  for (const auto& p : s1.checkpoint.params) {
    EXPECT_NE(p.name, "prompt.query_proj");
  }

  RunConfig c2 = c1;
  c2.train.stage = 2;
  c2.train.unroll = 4;
  Trainer t2 = make_stage_trainer(c2, corpus_windows(toy_corpus(), 16, 4), &s1.checkpoint);
  EXPECT_TRUE(t2.model().config.recall);
  EXPECT_EQ(t2.optimizer().step, 0u);
  EXPECT_EQ(t2.steps_done(), 0u);
  std::map<std::string, const Tensor*> stored;
  for (const auto& p : s1.checkpoint.params) stored[p.name] = &p.tensor;
  std::size_t carried = 0, fresh = 0;
  for (const auto& p : t2.trainable()) {
    if (auto it = stored.find(p.name); it != stored.end()) {
      EXPECT_TRUE(bit_equal(p.tensor.data(), it->second->data())) << p.name;
      ++carried;
    } else {
      ++fresh;
    }
  }
  EXPECT_EQ(carried, s1.checkpoint.params.size());
  EXPECT_GE(fresh, 3u);
  EXPECT_TRUE(std::isfinite(t2.step().loss));
}

TEST(Checkpoint, IncompatibleBackboneListsFields) {
  RunConfig c = tiny_run(21);
  Trainer t = make_stage_trainer(c, corpus_windows(toy_corpus(), 16, 2));
  const Checkpoint ckpt = capture(c, t);
  BackboneConfig other = tiny_backbone();
  other.d_model = 64;
  other.d_ff = 256;
  try {
    model_from_checkpoint(ckpt, other, tiny_hmt(), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    EXPECT_NE(std::string(e.what()).find("d_model"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("d_ff"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------

TEST(Config, ParsesAndResolvesDerivedKeys) {
  std::ostringstream warn;
  const RunConfig c = parse_config_text("segment_len = 64  # comment\nsensory_len = 8\nrecall = off\n", {}, warn);
  EXPECT_EQ(c.hmt.segment_len, 64u);
  EXPECT_EQ(c.hmt.repr_len, 32u);
  EXPECT_EQ(c.backbone.max_pos, 74u);
  EXPECT_FALSE(c.hmt.recall);
  EXPECT_TRUE(warn.str().empty());
  const RunConfig d = parse_config_text("", {}, warn);
  EXPECT_EQ(d.hmt.segment_len, 256u);
  EXPECT_EQ(d.hmt.sensory_len, 32u);
  EXPECT_EQ(d.hmt.repr_len, 128u);
  EXPECT_EQ(d.hmt.cache_size, 300u);
}

TEST(Config, ErrorsNameKeyAndLine) {
  std::ostringstream warn;
  try {
    parse_config_text("lr = 1e-3\nbogus = 3\n", {}, warn, "run.cfg");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos);
  }
  EXPECT_EQ(kind_of([&] { parse_config_text("lr = fast\n", {}, warn); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { parse_config_text("just text\n", {}, warn); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { parse_config_text("sensory_len = 300\n", {}, warn); }), ErrorKind::kConfig);
  EXPECT_EQ(kind_of([&] { parse_config_text("max_pos = 100\n", {}, warn); }), ErrorKind::kConfig);
}

TEST(Config, DuplicatesWarnAndOverridesWin) {
  std::ostringstream warn;
  const RunConfig c = parse_config_text("seed = 1\nseed = 2\n", {{"seed", "9"}}, warn);
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_NE(warn.str().find("duplicate"), std::string::npos);
}

TEST(Config, TextRoundTripAndHeader) {
  std::ostringstream warn;
  RunConfig c = tiny_run(22);
  c.train.lr = 0.1 + 0.2;
  const RunConfig back = parse_config_text(c.to_text(), {}, warn);
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(back.train.lr, c.train.lr);
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(c.hash().size(), 16u);
  const std::string header = artifact_header(c);
  EXPECT_EQ(header.rfind("# d_model = 32\n", 0), 0u);
  EXPECT_NE(header.find("# config_hash = " + c.hash() + "\n"), std::string::npos);
  c.train.seed = 23;
  EXPECT_NE(c.hash(), back.hash());
}

}  // namespace
}  // namespace hmt
