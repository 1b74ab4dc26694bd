#include <gtest/gtest.h>

#include <map>
#include <utility>

#include "colt/corpus/problem.hpp"
#include "colt/orchestrator/orchestrator.hpp"

using namespace colt;
using corpus::Special;

namespace {

corpus::Vocab tiny_vocab() {
  return corpus::Vocab({"<pad>", "<eos>", "<bdy>", "<trg>", "<trg2>", "1", "+", "=", "\n", "the answer is", " 2", " 7",
                        "7", "5"});
}

BackboneConfig tiny_cfg(int max_context = 64) {
  BackboneConfig c;
  c.vocab_size = 14;
  c.d_model = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_context = max_context;
  c.ff_mult = 2;
  return c;
}

bool ends_with(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

// Zeroed blocks leave the residual stream equal to the token embedding, so
// one-hot embeddings turn the model into a bigram table.
void make_bigram(const ParamList<double>& params, const std::map<int, int>& next) {
  for (const auto& [name, t0] : params) {
    auto t = t0;
    auto d = t.data();
    std::fill(d.begin(), d.end(), 0.0);
    if (ends_with(name, "tok_emb") || name == "emb") {
      const auto w = t.shape()[1];
      for (std::size_t v = 0; v < t.shape()[0] && v < w; ++v) d[v * w + v] = 1.0;
    } else if (ends_with(name, "head")) {
      const auto w = t.shape()[1];
      for (auto [from, to] : next) d[static_cast<std::size_t>(from) * w + static_cast<std::size_t>(to)] = 20.0;
    } else if (ends_with(name, "lnf.g")) {
      std::fill(d.begin(), d.end(), 1.0);
    } else if (name == "proj.w") {
      const auto w = t.shape()[1];
      for (std::size_t i = 0; i < t.shape()[0]; ++i) d[i * w + i] = 1.0;
    }
  }
}

struct Rig {
  corpus::Vocab v = tiny_vocab();
  Backbone<double> bb;
  DecoderSet<double> ds;

  Rig(std::map<int, int> bb_next, std::map<int, int> dec_next, DecoderSpec spec = {}, int max_context = 64)
      : bb(tiny_cfg(max_context), 3) {
    make_bigram(bb.parameters(), bb_next);
    spec.n_layers = 1;
    ds = DecoderSet<double>(make_decoder<double>(spec, bb, v, 4));
    make_bigram(ds.decoders[0]->parameters(""), dec_next);
  }

  int id(const char* s) const { return v.id(s); }
  std::vector<int> question() const { return v.encode("1+1"); }

  Trace run(InferenceLimits lim = {}) const {
    Rng rng(9);
    return run_inference(std::span<const int>(question()), bb, ds, v, Decoding::greedy(), lim, rng);
  }
};

bool has_seed(std::span<const int> ids) {
  return std::any_of(ids.begin(), ids.end(), corpus::Vocab::is_seed);
}

}  // namespace

TEST(Splice, RemovesTrailingSeedsAppendsTextAndSeparator) {
  const std::vector<int> prev{7, 8, Special::kBdy, Special::kTrg};
  const std::vector<int> dec{5, 6};
  EXPECT_EQ(splice_context(prev, dec, 9), (std::vector<int>{7, 8, 5, 6, 9}));
  EXPECT_EQ(splice_context(prev, dec, -1), (std::vector<int>{7, 8, 5, 6}));
  const std::vector<int> no_seed{7};
  EXPECT_EQ(splice_context(no_seed, dec, 9), (std::vector<int>{7, 5, 6, 9}));
  EXPECT_EQ(splice_context(prev, std::vector<int>{}, 9), (std::vector<int>{7, 8, 9}));
}

TEST(Splice, SeedInDecodedTextIsRejected) {
  const std::vector<int> prev{7, Special::kTrg};
  EXPECT_THROW(splice_context(prev, std::vector<int>{5, Special::kTrg}, 9), SpliceError);
  EXPECT_THROW(splice_context(prev, std::vector<int>{Special::kBdy}, 9), SpliceError);
}

TEST(MeasureLength, CountsSeedsPlusOnePerCallAndExplicitText) {
  Trace t;
  for (int i = 0; i < 3; ++i) {
    Round r;
    r.segment = {Special::kTrg};
    r.trigger = Special::kTrg;
    r.seed_len = 1;
    t.rounds.push_back(r);
  }
  Round ans;
  ans.segment = {20, 21, Special::kEos};  // marker id 20
  t.rounds.push_back(ans);
  EXPECT_EQ(measure_length(t, 20), 6);

  Trace t2;
  for (int i = 0; i < 4; ++i) {
    Round r;
    r.segment = {Special::kBdy, Special::kTrg};
    r.trigger = Special::kTrg;
    r.seed_len = 2;
    t2.rounds.push_back(r);
  }
  EXPECT_EQ(measure_length(t2, 20), 12);
}

TEST(MeasureLength, CotCountsReasoningTokensOnly) {
  Trace t;
  Round r;
  r.segment = {30, 31, 32, 33, 8, 20, 34, Special::kEos};
  t.rounds.push_back(r);
  EXPECT_EQ(measure_length(t, 20), 5);
  // a failed call does not count as latent
  Trace f;
  Round bad;
  bad.segment = {Special::kTrgAlt};
  bad.trigger = Special::kTrgAlt;
  bad.seed_len = 1;
  bad.error = "unmapped";
  f.rounds.push_back(bad);
  EXPECT_EQ(measure_length(f, 20), 0);
}

TEST(RunInference, NoCallPathAnswersDirectly) {
  const corpus::Vocab v = tiny_vocab();
  Rig rig({{v.id("\n"), v.id("the answer is")}, {v.id("the answer is"), v.id(" 2")}, {v.id(" 2"), Special::kEos}},
          {});
  auto t = rig.run();
  EXPECT_EQ(t.stop, StopReason::Eos);
  ASSERT_EQ(t.rounds.size(), 1u);
  EXPECT_EQ(t.latent_rounds(), 0);
  EXPECT_EQ(t.latent_length, 0);
  ASSERT_TRUE(t.answer.has_value());
  EXPECT_EQ(*t.answer, 2);
  EXPECT_TRUE(t.format_ok);
  EXPECT_EQ(t.chain_text, "the answer is 2");
  EXPECT_EQ(t.rounds[0].segment, (std::vector<int>{rig.id("the answer is"), rig.id(" 2"), Special::kEos}));
}

TEST(RunInference, AlwaysTriggeringStopsAtRoundCap) {
  const corpus::Vocab v = tiny_vocab();
  Rig rig({{v.id("\n"), Special::kTrg}}, {{Special::kTrg, v.id("5")}, {v.id("5"), Special::kEos}});
  InferenceLimits lim;
  lim.max_rounds = 2;
  auto t = rig.run(lim);
  EXPECT_EQ(t.stop, StopReason::Budget);
  EXPECT_EQ(t.latent_rounds(), 2);
  EXPECT_EQ(t.latent_length, 4);
  EXPECT_FALSE(t.format_ok);
  EXPECT_FALSE(t.answer.has_value());
  const int five = v.id("5"), sep = v.id("\n");
  auto q = rig.question();
  std::vector<int> want = q;
  want.insert(want.end(), {sep, five, sep, five, sep});
  EXPECT_EQ(t.final_context, want);
  EXPECT_FALSE(has_seed(t.final_context));
  ASSERT_EQ(t.rounds.size(), 2u);
  std::vector<int> p1 = q;
  p1.insert(p1.end(), {sep, five, sep});
  EXPECT_EQ(t.rounds[1].prompt, p1);
  EXPECT_EQ(t.rounds[0].decoded.tokens, std::vector<int>{five});
  EXPECT_TRUE(t.rounds[0].decoded.ended_eos);
  EXPECT_EQ(t.rounds[0].segment_logprobs.size(), 1u);
  EXPECT_EQ(t.rounds[0].decoded.logprobs.size(), 2u);
}

TEST(RunInference, LatentLengthWithLongerSeeds) {
  const corpus::Vocab v = tiny_vocab();
  DecoderSpec spec;
  spec.seed_len = 2;
  Rig rig({{v.id("\n"), Special::kBdy}, {Special::kBdy, Special::kTrg}},
          {{Special::kTrg, v.id("5")}, {v.id("5"), Special::kEos}}, spec);
  InferenceLimits lim;
  lim.max_rounds = 4;
  auto t = rig.run(lim);
  EXPECT_EQ(t.latent_rounds(), 4);
  EXPECT_EQ(t.latent_length, 12);
  EXPECT_FALSE(has_seed(t.final_context));

  Rig one({{v.id("\n"), Special::kTrg}}, {{Special::kTrg, v.id("5")}, {v.id("5"), Special::kEos}});
  lim.max_rounds = 3;
  EXPECT_EQ(one.run(lim).latent_length, 6);
}

TEST(RunInference, UnmappedTriggerEndsTrace) {
  const corpus::Vocab v = tiny_vocab();
  Rig rig({{v.id("\n"), Special::kTrgAlt}}, {});
  auto t = rig.run();
  EXPECT_EQ(t.stop, StopReason::UnmappedTrigger);
  ASSERT_EQ(t.rounds.size(), 1u);
  EXPECT_FALSE(t.rounds[0].error.empty());
  EXPECT_EQ(t.latent_rounds(), 0);
}

TEST(RunInference, SecondTriggerRoutesThroughMap) {
  const corpus::Vocab v = tiny_vocab();
  Rig rig({{v.id("\n"), Special::kTrgAlt}}, {{Special::kTrgAlt, v.id("5")}, {v.id("5"), Special::kEos}});
  rig.ds.map = TriggerMap();
  rig.ds.map.bind(Special::kTrgAlt, 0);
  InferenceLimits lim;
  lim.max_rounds = 1;
  auto t = rig.run(lim);
  EXPECT_EQ(t.latent_rounds(), 1);
  EXPECT_EQ(t.rounds[0].trigger, Special::kTrgAlt);
}

TEST(RunInference, ContextOverflowIsAStopReason) {
  const corpus::Vocab v = tiny_vocab();
  DecoderSpec spec;
  spec.max_decode_len = 6;
  Rig rig({{v.id("\n"), Special::kTrg}}, {{Special::kTrg, v.id("5")}, {v.id("5"), v.id("5")}}, spec, 16);
  auto t = rig.run();
  EXPECT_EQ(t.stop, StopReason::Overflow);
  EXPECT_TRUE(t.decoder_truncated);
  EXPECT_LE(t.final_context.size(), 24u);
}

TEST(RunInference, AnswerAfterUnseparatedCall) {
  const corpus::Vocab v = tiny_vocab();
  Rig rig({{v.id("\n"), Special::kTrg},
           {v.id("7"), v.id("the answer is")},
           {v.id("the answer is"), v.id(" 7")},
           {v.id(" 7"), Special::kEos}},
          {{Special::kTrg, v.id("7")}, {v.id("7"), Special::kEos}});
  InferenceLimits lim;
  lim.step_separator = false;
  auto t = rig.run(lim);
  EXPECT_EQ(t.stop, StopReason::Eos);
  EXPECT_EQ(t.latent_rounds(), 1);
  EXPECT_EQ(t.latent_length, 2);
  EXPECT_EQ(t.chain_text, "7the answer is 7");
  ASSERT_TRUE(t.answer.has_value());
  EXPECT_EQ(*t.answer, 7);
}

TEST(RunInference, RejectsBadLimits) {
  Rig rig({}, {});
  InferenceLimits lim;
  lim.max_rounds = 0;
  EXPECT_THROW(rig.run(lim), std::invalid_argument);
  lim = {};
  lim.segment_budget = 0;
  EXPECT_THROW(rig.run(lim), std::invalid_argument);
}

TEST(RunInference, StoredLogprobsMatchTeacherForcedRescoring) {
  const auto v = corpus::default_vocab();
  BackboneConfig c;
  c.vocab_size = static_cast<int>(v.size());
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 4;
  c.max_context = 128;
  Backbone<double> bb(c, 21);
  // push mass toward the trigger so rounds go latent
  {
    auto params = bb.parameters();
    for (auto& [name, t0] : params) {
      auto t = t0;
      if (name == "backbone.lnf.b") std::fill(t.data().begin(), t.data().end(), 0.5);
      if (name == "backbone.head")
        for (std::size_t i = 0; i < t.shape()[0]; ++i) t[i * t.shape()[1] + Special::kTrg] += 0.2;
    }
  }
  DecoderSpec spec;
  spec.max_decode_len = 6;
  DecoderSet<double> ds(make_decoder<double>(spec, bb, v, 5));
  corpus::DatasetConfig dc;
  dc.train_n = 6;
  dc.test_n = 0;
  auto data = corpus::generate_dataset(dc);
  InferenceLimits lim;
  lim.max_rounds = 4;
  lim.segment_budget = 8;
  Rng rng(77);
  int latent = 0, segs = 0;
  for (const auto& p : data.train) {
    const auto q = v.encode(p.question);
    auto t = run_inference(std::span<const int>(q), bb, ds, v, Decoding::sample(1.0, 1.0), lim, rng);
    for (std::size_t ri = 0; ri < t.rounds.size(); ++ri) {
      const auto& r = t.rounds[ri];
      if (ri > 0) EXPECT_FALSE(has_seed(r.prompt));
      std::vector<int> full = r.prompt;
      full.insert(full.end(), r.segment.begin(), r.segment.end());
      // the last fed token is irrelevant to the logits that chose it
      std::vector<int> in(full.begin(), full.end() - 1);
      auto out = bb.forward(in, nullptr);
      const std::size_t V = v.size();
      ASSERT_EQ(r.segment_logprobs.size(), r.segment.size());
      for (std::size_t k = 0; k < r.segment.size(); ++k) {
        const std::size_t row = r.prompt.size() - 1 + k;
        auto lp = row_log_softmax<double>(std::as_const(out.logits).data().subspan(row * V, V), 1.0);
        EXPECT_NEAR(lp[static_cast<std::size_t>(r.segment[k])], r.segment_logprobs[k], 1e-9);
        ++segs;
      }
      if (!r.latent()) continue;
      ++latent;
      auto fwd = bb.forward(full, nullptr);
      auto h = extract_seed_embeddings(fwd, full.size() - 1, 1);
      std::vector<int> target = r.decoded.tokens;
      if (r.decoded.ended_eos) target.push_back(Special::kEos);
      auto sc = ds.decoders[0]->score(h, target, 1.0);
      ASSERT_EQ(sc.numel(), r.decoded.logprobs.size());
      for (std::size_t k = 0; k < sc.numel(); ++k) EXPECT_NEAR(sc[k], r.decoded.logprobs[k], 1e-9);
    }
  }
  EXPECT_GT(latent, 0);
  EXPECT_GT(segs, 0);
}

TEST(TraceJson, CarriesStopRoundsAndReward) {
  const corpus::Vocab v = tiny_vocab();
  Rig rig({{v.id("\n"), Special::kTrg}}, {{Special::kTrg, v.id("5")}, {v.id("5"), Special::kEos}});
  InferenceLimits lim;
  lim.max_rounds = 1;
  auto j = trace_to_json(rig.run(lim), v, 0.1);
  EXPECT_EQ(j["stop"], "budget");
  EXPECT_EQ(j["latent_length"], 2);
  EXPECT_EQ(j["reward"], 0.1);
  ASSERT_EQ(j["rounds"].size(), 1u);
  EXPECT_EQ(j["rounds"][0]["decoded"], "5");
  EXPECT_TRUE(j["answer"].is_null());
}
