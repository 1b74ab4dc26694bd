#include <gtest/gtest.h>

#include <sstream>

#include "colt/corpus/problem.hpp"
#include "colt/rl/grpo.hpp"
#include "rl_oracles.hpp"

using namespace colt;
using corpus::Special;

using namespace colt::testing;

TEST(Reward, CorrectFormatOnlyAndMalformed) {
  Trace t;
  t.answer = 42;
  t.format_ok = true;
  EXPECT_EQ(rl::compute_reward(t, 42), 1.0);
  EXPECT_EQ(rl::compute_reward(t, 41), 0.1);
  Trace bad;
  EXPECT_EQ(rl::compute_reward(bad, 0), 0.0);
}

TEST(Advantages, MatchWorkedExamples) {
  auto a = rl::compute_advantages(std::vector<double>{1.0, 0.0});
  EXPECT_NEAR(a[0], 1.0, 1e-12);
  EXPECT_NEAR(a[1], -1.0, 1e-12);
  auto b = rl::compute_advantages(std::vector<double>{1.0, 0.1, 0.1, 0.0});
  EXPECT_NEAR(b[0], 1.723, 1e-3);
  EXPECT_NEAR(b[1], -0.492, 1e-3);
  EXPECT_NEAR(b[2], -0.492, 1e-3);
  EXPECT_NEAR(b[3], -0.739, 1e-3);
  double s = 0, ss = 0;
  for (double x : b) s += x, ss += x * x;
  EXPECT_NEAR(s, 0.0, 1e-12);
  EXPECT_NEAR(ss / 4.0, 1.0, 1e-12);  // population std
}

TEST(Advantages, FlatGroupIsAllZeroAndTinyGroupThrows) {
  for (double x : rl::compute_advantages(std::vector<double>(8, 0.1))) EXPECT_EQ(x, 0.0);
  for (double x : rl::compute_advantages(std::vector<double>{0.3, 0.3 + 1e-10})) EXPECT_EQ(x, 0.0);
  EXPECT_THROW(rl::compute_advantages(std::vector<double>{1.0}), std::invalid_argument);
}

TEST(Surrogate, ClipCases) {
  auto r = Tensor<double>::from({4}, std::vector<double>{1.3, 0.5, 1.05, 0.5}, true);
  // positive advantage caps the gain
  auto up = rl::clipped_surrogate(r, 1.0, 0.1);
  EXPECT_NEAR(up[0], 1.1, 1e-12);
  EXPECT_NEAR(up[1], 0.5, 1e-12);
  EXPECT_NEAR(up[2], 1.05, 1e-12);
  auto down = rl::clipped_surrogate(r, -1.0, 0.1);
  EXPECT_NEAR(down[0], -1.3, 1e-12);
  EXPECT_NEAR(down[1], -0.9, 1e-12);
  EXPECT_NEAR(down[2], -1.05, 1e-12);
  backward(sum(down));
  // clipped entries carry no gradient
  EXPECT_EQ(r.grad()[0], -1.0);
  EXPECT_EQ(r.grad()[1], 0.0);
  EXPECT_EQ(r.grad()[2], -1.0);
}

TEST(RlConfig, Validation) {
  auto ok = small_cfg();
  EXPECT_NO_THROW(ok.validate());
  auto c = ok;
  c.group_size = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ok;
  c.clip_eps = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.clip_eps = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ok;
  c.kl_beta = -0.01;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ok;
  c.limits.max_rounds = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ok;
  c.top_p = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ok;
  c.steps = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Rollout, RejectsMultiHotDecoder) {
  const auto v = corpus::default_vocab();
  auto m = rl_model(1, DecoderFamily::MultiHot);
  Rng rng(1);
  const auto q = v.encode("2+3");
  EXPECT_THROW(rl::rollout_group(std::span<const int>(q), 5, m, v, small_cfg(), rng), std::invalid_argument);
  std::vector<rl::RlProblem> ps{{q, 5}};
  auto ref = m.clone();
  EXPECT_THROW(rl::train_rl(m, ref, ps, v, small_cfg()), std::invalid_argument);
}

TEST(Rollout, GroupOfEightIsSeedDeterministic) {
  const auto v = corpus::default_vocab();
  auto m = rl_model();
  const auto q = v.encode(problems(1)[0].question);
  auto run = [&](std::uint64_t s) {
    Rng rng(s);
    return rl::rollout_group(std::span<const int>(q), 7, m, v, small_cfg(), rng);
  };
  auto a = run(11), b = run(11), c = run(12);
  ASSERT_EQ(a.traces.size(), 8u);
  ASSERT_EQ(a.rewards.size(), 8u);
  ASSERT_EQ(a.advantages.size(), 8u);
  bool differs = false;
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_EQ(a.traces[i].final_context, b.traces[i].final_context);
    EXPECT_EQ(a.rewards[i], b.rewards[i]);
    differs |= a.traces[i].final_context != c.traces[i].final_context;
  }
  EXPECT_TRUE(differs);
  int latent = 0;
  for (const auto& t : a.traces) latent += t.latent_rounds();
  EXPECT_GT(latent, 0);
}

TEST(Rescore, PackedTraceScoresMatchStoredLogprobs) {
  for (int ls : {1, 2}) {
    auto m = rl_model(ls);
    auto cfg = small_cfg();
    auto gs = forced_groups(m, cfg, 2);
    std::size_t toks = 0;
    for (const auto& g : gs)
      for (const auto& t : g.traces) {
        auto sc = rl::score_trace(t, m);
        auto plain = plain_round_logps(t, m);
        ASSERT_EQ(sc.size(), t.rounds.size());
        for (std::size_t j = 0; j < sc.size(); ++j) {
          ASSERT_EQ(sc[j].logp.numel(), sc[j].old_logp.size());
          for (std::size_t k = 0; k < sc[j].old_logp.size(); ++k) {
            EXPECT_NEAR(sc[j].logp[k], sc[j].old_logp[k], 1e-9) << ls;
            EXPECT_NEAR(sc[j].logp[k], plain[j][k], 1e-9) << ls;
            ++toks;
          }
        }
      }
    EXPECT_GT(toks, 0u);
  }
}

TEST(Grpo, OnPolicyRatiosAreOne) {
  auto m = rl_model();
  auto ref = m.clone();
  auto cfg = small_cfg();
  auto gs = forced_groups(m, cfg, 2);
  auto o = rl::grpo_objective(gs, m, ref, cfg);
  EXPECT_EQ(o.metrics.clip_frac, 0.0);
  EXPECT_EQ(o.metrics.excluded_tokens, 0u);
  EXPECT_NEAR(o.metrics.mean_kl, 0.0, 1e-12);
  // with ratio 1 and zero KL the objective is the advantage mean
  double want = 0.0;
  for (const auto& g : gs) {
    double s = 0;
    for (double a : g.advantages) s += a;
    want += s / double(g.advantages.size());
  }
  EXPECT_NEAR(o.metrics.objective, want / double(gs.size()), 1e-9);
}

TEST(Grpo, UnclippedNoKlGradientIsPolicyGradient) {
  auto m = rl_model(2);
  auto ref = m.clone();
  auto cfg = small_cfg();
  cfg.clip_eps = 1e9;  // validate() would reject this, the objective does not care
  cfg.kl_beta = 0.0;
  auto gs = forced_groups(m, cfg, 3);
  const auto ps = m.parameters();
  auto g_grpo = grads_of(rl::grpo_objective(gs, m, ref, cfg).loss, ps);

  // -mean_groups mean_traces A mean_rounds mean_tokens grad log p
  Tensor<double> pg;
  for (const auto& g : gs) {
    Tensor<double> gsum;
    for (std::size_t i = 0; i < g.traces.size(); ++i) {
      auto rounds = plain_round_logps(g.traces[i], m);
      Tensor<double> tsum;
      for (auto& lp : rounds) {
        auto term = scale(sum(lp), 1.0 / double(lp.numel()));
        tsum = tsum.defined() ? add(tsum, term) : term;
      }
      auto tr = scale(tsum, g.advantages[i] / double(rounds.size()));
      gsum = gsum.defined() ? add(gsum, tr) : tr;
    }
    auto go = scale(gsum, 1.0 / double(g.traces.size()));
    pg = pg.defined() ? add(pg, go) : go;
  }
  auto g_pg = grads_of(scale(pg, -1.0 / double(gs.size())), ps);
  double norm = 0;
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (std::size_t j = 0; j < g_pg[i].size(); ++j) {
      ASSERT_NEAR(g_grpo[i][j], g_pg[i][j], 1e-6) << ps[i].name;
      norm += g_pg[i][j] * g_pg[i][j];
    }
  EXPECT_GT(norm, 1e-8);
}

TEST(Grpo, DegenerateGroupsGiveNoGradient) {
  auto m = rl_model();
  auto ref = m.clone();
  auto cfg = small_cfg();
  auto gs = forced_groups(m, cfg, 2);
  for (auto& g : gs) {
    std::fill(g.advantages.begin(), g.advantages.end(), 0.0);
    g.degenerate = true;
  }
  auto o = rl::grpo_objective(gs, m, ref, cfg);
  EXPECT_FALSE(o.loss.defined());
  EXPECT_EQ(o.metrics.degenerate_groups, 2u);
  // the step is a no-op on the weights
  AdamW<double> opt(m.parameters());
  const auto before = m.parameters()[0].tensor.data();
  std::vector<double> b0(before.begin(), before.end());
  rl::grpo_step(gs, m, ref, opt, cfg);
  const auto after = m.parameters()[0].tensor.data();
  EXPECT_TRUE(std::equal(b0.begin(), b0.end(), after.begin()));
}

TEST(Grpo, LargeLogprobGapIsExcludedAndCounted) {
  auto m = rl_model();
  auto ref = m.clone();
  auto cfg = small_cfg();
  auto gs = forced_groups(m, cfg, 1);
  gs[0].traces[0].rounds[0].segment_logprobs[0] -= 30.0;
  auto o = rl::grpo_objective(gs, m, ref, cfg);
  EXPECT_EQ(o.metrics.excluded_tokens, 1u);
  EXPECT_EQ(o.metrics.clip_frac, 0.0);
  ASSERT_TRUE(o.loss.defined());
  EXPECT_TRUE(std::isfinite(o.loss.item()));
}

TEST(Grpo, KlAgainstMovedReferenceIsPositive) {
  auto m = rl_model();
  auto ref = rl_model(1, DecoderFamily::Transformer, 99);
  auto cfg = small_cfg();
  auto gs = forced_groups(m, cfg, 2);
  auto o = rl::grpo_objective(gs, m, ref, cfg);
  EXPECT_GT(o.metrics.mean_kl, 0.0);
  auto cfg0 = cfg;
  cfg0.kl_beta = 0.0;
  auto o0 = rl::grpo_objective(gs, m, ref, cfg0);
  EXPECT_LT(o.metrics.objective, o0.metrics.objective);
}

TEST(Grpo, RoundLevelRatioRunsOnPolicy) {
  auto m = rl_model();
  auto ref = m.clone();
  auto cfg = small_cfg();
  cfg.round_level_ratio = true;
  auto gs = forced_groups(m, cfg, 2);
  auto o = rl::grpo_objective(gs, m, ref, cfg);
  EXPECT_EQ(o.metrics.clip_frac, 0.0);
  ASSERT_TRUE(o.loss.defined());
  auto g = grads_of(o.loss, m.parameters());
  double n = 0;
  for (const auto& v : g)
    for (double x : v) n += x * x;
  EXPECT_GT(n, 0.0);
}

TEST(KlEstimate, K3MatchesExactKlOnCategoricals) {
  const std::vector<double> p{0.5, 0.2, 0.2, 0.1}, q{0.3, 0.3, 0.25, 0.15};
  double exact = 0;
  for (std::size_t i = 0; i < p.size(); ++i) exact += p[i] * std::log(p[i] / q[i]);
  Rng rng(2024);
  std::vector<double> lt, lr;
  for (int n = 0; n < 200000; ++n) {
    double u = rng.uniform(), c = 0;
    std::size_t k = 0;
    while (k + 1 < p.size() && u >= (c += p[k])) ++k;
    lt.push_back(std::log(p[k]));
    lr.push_back(std::log(q[k]));
  }
  const double est = rl::kl_estimate(lt, lr);
  EXPECT_NEAR(est, exact, 0.05 * exact);
  EXPECT_EQ(rl::kl_estimate(lt, lt), 0.0);
  EXPECT_THROW(rl::kl_estimate(lt, std::vector<double>{0.0}), std::invalid_argument);
}

TEST(TrainRl, ZeroLrKeepsWeightsAndWritesOneRowPerStep) {
  const auto v = corpus::default_vocab();
  auto m = rl_model();
  auto ref = m.clone();
  auto cfg = small_cfg();
  cfg.lr = 0.0;
  cfg.steps = 3;
  cfg.groups_per_batch = 2;
  cfg.group_size = 4;
  std::vector<rl::RlProblem> ps;
  for (const auto& p : problems(4)) ps.push_back({v.encode(p.question), p.answer});
  const auto p0 = m.parameters()[1].tensor.data();
  std::vector<double> before(p0.begin(), p0.end());
  std::ostringstream csv;
  auto log = rl::train_rl(m, ref, ps, v, cfg, &csv);
  ASSERT_EQ(log.size(), 3u);
  EXPECT_EQ(log.back().step, 3);
  const auto p1 = m.parameters()[1].tensor.data();
  EXPECT_TRUE(std::equal(before.begin(), before.end(), p1.begin()));
  std::istringstream in(csv.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,mean_reward,frac_correct,frac_format_only,mean_kl,clip_frac,mean_#L");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
  std::vector<rl::RlProblem> none;
  EXPECT_THROW(rl::train_rl(m, ref, none, v, cfg), std::invalid_argument);
}

TEST(TrainRl, ZeroStepsMeansOnePassOverProblems) {
  const auto v = corpus::default_vocab();
  auto m = rl_model();
  auto ref = m.clone();
  auto cfg = small_cfg();
  cfg.lr = 0.0;
  cfg.steps = 0;
  cfg.groups_per_batch = 2;
  cfg.group_size = 2;
  std::vector<rl::RlProblem> ps;
  for (const auto& p : problems(5)) ps.push_back({v.encode(p.question), p.answer});
  EXPECT_EQ(rl::train_rl(m, ref, ps, v, cfg).size(), 3u);
}
