#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "colt/orchestrator/orchestrator.hpp"
#include "colt/sft/sft.hpp"

namespace colt::rl {

struct RlConfig {
  int group_size = 8;  // G
  double clip_eps = 0.1;
  double kl_beta = 0.05;
  double temperature = 1.0;
  double top_p = 0.9;
  double lr = 1e-5;
  int groups_per_batch = 4;
  int steps = 0;  // 0: one pass over the training problems
  double max_logprob_gap = 20.0;
  bool round_level_ratio = false;
  std::uint64_t seed = 0;
  InferenceLimits limits;

  void validate() const {
    if (group_size < 2) throw std::invalid_argument("rl: group size G must be >= 2");
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw std::invalid_argument("rl: clip eps must be in (0, 1)");
    if (!(kl_beta >= 0.0)) throw std::invalid_argument("rl: kl beta must be >= 0");
    if (!(temperature > 0.0)) throw std::invalid_argument("rl: temperature must be positive");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("rl: top_p must be in (0, 1]");
    if (!(lr >= 0.0)) throw std::invalid_argument("rl: lr must be nonnegative");
    if (groups_per_batch < 1) throw std::invalid_argument("rl: groups_per_batch must be >= 1");
    if (steps < 0) throw std::invalid_argument("rl: steps must be >= 0");
    limits.validate();
  }

  Decoding decoding() const { return Decoding::sample(temperature, top_p); }
};

// 1 for the right answer, 0.1 for a well-formed wrong one, 0 otherwise.
inline double compute_reward(const Trace& t, std::int64_t gold) {
  if (t.answer && *t.answer == gold) return 1.0;
  return t.format_ok ? 0.1 : 0.0;
}

// Group-normalized with the population std; a flat group gets all zeros.
inline std::vector<double> compute_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw std::invalid_argument("advantages need a group of at least 2");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(rewards.size());
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / static_cast<double>(rewards.size()));
  std::vector<double> a(rewards.size(), 0.0);
  if (sd < 1e-8) return a;
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = (rewards[i] - mean) / sd;
  return a;
}

struct RewardedGroup {
  std::vector<int> question;
  std::int64_t gold = 0;
  std::vector<Trace> traces;
  std::vector<double> rewards;
  std::vector<double> advantages;
  bool degenerate = false;
};

template <class T>
void require_sampling(const DecoderSet<T>& d) {
  for (const auto& dec : d.decoders)
    if (!dec->spec().supports_sampling())
      throw std::invalid_argument("rl: decoder family " + std::string(family_name(dec->spec().family)) +
                                  " cannot sample and has no token log-probs");
}

template <class T>
RewardedGroup rollout_group(std::span<const int> question, std::int64_t gold, const ColtModel<T>& m,
                            const corpus::Vocab& vocab, const RlConfig& cfg, Rng& rng) {
  require_sampling(m.decoders);
  RewardedGroup g;
  g.question.assign(question.begin(), question.end());
  g.gold = gold;
  for (int i = 0; i < cfg.group_size; ++i) {
    g.traces.push_back(run_inference(question, m.backbone, m.decoders, vocab, cfg.decoding(), cfg.limits, rng));
    g.rewards.push_back(compute_reward(g.traces.back(), gold));
  }
  g.advantages = compute_advantages(g.rewards);
  g.degenerate = std::all_of(g.advantages.begin(), g.advantages.end(), [](double a) { return a == 0.0; });
  return g;
}

// k3 = exp(d) - d - 1 with d = log pi_ref - log pi_theta, meaned.
inline double kl_estimate(std::span<const double> logp_theta, std::span<const double> logp_ref) {
  if (logp_theta.size() != logp_ref.size()) throw std::invalid_argument("kl_estimate: token counts differ");
  if (logp_theta.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < logp_theta.size(); ++i) {
    const double d = logp_ref[i] - logp_theta[i];
    s += std::exp(d) - d - 1.0;
  }
  return s / static_cast<double>(logp_theta.size());
}

// min(r A, clip(r, 1-eps, 1+eps) A), elementwise.
template <class T>
Tensor<T> clipped_surrogate(const Tensor<T>& ratio, double adv, double eps) {
  const T a = static_cast<T>(adv);
  auto clip = clamp(ratio, static_cast<T>(1 - eps), static_cast<T>(1 + eps));
  return minimum(scale(ratio, a), scale(clip, a));
}

// One round's tokens in generation order: backbone segment, then decoded.
template <class T>
struct RoundScores {
  Tensor<T> logp;  // [n] on the tape
  std::vector<double> old_logp;
};

namespace detail {

// The trace as supervised examples, so it scores in one packed forward.
// A latent round's seed span is the last L_s tokens the decoder read, which
// can reach back into the prompt; those leading tokens are not scored.
struct TraceLayout {
  std::vector<corpus::ToolCallExample> examples;
  std::vector<std::size_t> round_of;  // per example
  std::vector<std::size_t> skip;      // leading targets owned by the prompt
};

inline TraceLayout layout_trace(const Trace& t) {
  TraceLayout out;
  auto add = [&](std::vector<int> ctx, std::vector<int> tgt, std::vector<int> dec, std::size_t j, std::size_t skip) {
    out.examples.push_back({std::move(ctx), std::move(tgt), std::move(dec)});
    out.round_of.push_back(j);
    out.skip.push_back(skip);
  };
  for (std::size_t j = 0; j < t.rounds.size(); ++j) {
    const auto& r = t.rounds[j];
    if (r.segment.empty()) continue;
    if (!r.latent()) {
      add(r.prompt, r.segment, {}, j, 0);
      continue;
    }
    const std::size_t n = r.segment.size(), ls = static_cast<std::size_t>(r.seed_len);
    std::vector<int> full = r.prompt;
    full.insert(full.end(), r.segment.begin(), r.segment.end());
    if (ls > full.size()) throw std::logic_error("rl: seed span longer than the round");
    const std::size_t text = n > ls ? n - ls : 0;
    if (text > 0) add(r.prompt, {r.segment.begin(), r.segment.begin() + static_cast<std::ptrdiff_t>(text)}, {}, j, 0);
    std::vector<int> dec = r.decoded.tokens;
    if (r.decoded.ended_eos) dec.push_back(corpus::Special::kEos);
    const auto split = static_cast<std::ptrdiff_t>(full.size() - ls);
    add({full.begin(), full.begin() + split}, {full.begin() + split, full.end()}, std::move(dec), j, ls > n ? ls - n : 0);
  }
  return out;
}

}  // namespace detail

// Per-round token log-probs of a finished trace under `m`, at `temperature`,
// in the order they were generated.
template <class T>
std::vector<RoundScores<T>> score_trace(const Trace& t, const ColtModel<T>& m, double temperature = 1.0) {
  auto lay = detail::layout_trace(t);
  std::vector<RoundScores<T>> out(t.rounds.size());
  for (std::size_t j = 0; j < t.rounds.size(); ++j) {
    out[j].old_logp = t.rounds[j].segment_logprobs;
    if (t.rounds[j].latent())
      out[j].old_logp.insert(out[j].old_logp.end(), t.rounds[j].decoded.logprobs.begin(),
                             t.rounds[j].decoded.logprobs.end());
  }
  if (lay.examples.empty()) return out;
  auto b = sft::build_batch(lay.examples, static_cast<std::size_t>(m.backbone.config().max_context));
  auto fwd = m.backbone.forward_layout(b.ids, b.positions, b.segments);
  std::vector<std::vector<Tensor<T>>> parts(t.rounds.size());
  const T inv_t = static_cast<T>(1.0 / temperature);
  std::size_t li = 0;
  for (std::size_t e = 0; e < b.main.size(); ++e) {
    const auto& mt = b.main[e];
    const auto j = lay.round_of[e];
    const auto skip = static_cast<std::ptrdiff_t>(lay.skip[e]);
    const std::vector<std::size_t> ri(mt.rows.begin() + skip, mt.rows.end());
    const std::vector<int> ids(mt.ids.begin() + skip, mt.ids.end());
    if (!ri.empty()) {
      auto rows = gather_rows(fwd.logits, std::span<const std::size_t>(ri));
      if (temperature != 1.0) rows = scale(rows, inv_t);
      parts[j].push_back(pick(log_softmax(rows), std::span<const int>(ids)));
    }
    if (lay.examples[e].is_latent()) {
      const auto& lt = b.latent[li++];
      auto h = slice_rows(fwd.hidden, lt.seed_row, lt.seed_len);
      parts[j].push_back(m.decoders.for_trigger(lt.trigger).score(h, lt.decode_ids, temperature));
    }
  }
  for (std::size_t j = 0; j < parts.size(); ++j) {
    if (parts[j].empty()) continue;
    std::vector<Tensor<T>> cols;
    for (auto& p : parts[j]) cols.push_back(reshape(p, {p.numel(), 1}));
    out[j].logp = reshape(concat_rows(cols), {out[j].old_logp.size()});
  }
  return out;
}

struct StepMetrics {
  long step = 0;
  double mean_reward = 0, frac_correct = 0, frac_format_only = 0;
  double mean_kl = 0, clip_frac = 0, mean_latent_length = 0;
  std::size_t excluded_tokens = 0;
  std::size_t degenerate_groups = 0;
  double objective = 0;
  double wall_ms = 0;
};

template <class T>
struct Objective {
  Tensor<T> loss;  // minimized
  StepMetrics metrics;
};

// Clipped surrogate minus beta * k3 KL, token-meaned per round, meaned over
// rounds, traces and groups. Flat groups contribute nothing to the gradient.
template <class T>
Objective<T> grpo_objective(const std::vector<RewardedGroup>& groups, const ColtModel<T>& m, const ColtModel<T>& ref,
                            const RlConfig& cfg) {
  Objective<T> o;
  auto& mt = o.metrics;
  std::size_t traces = 0, tokens = 0, clipped = 0, kl_tokens = 0;
  double kl_sum = 0.0;
  Tensor<T> total;
  std::size_t live_groups = 0;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.traces.size(); ++i) {
      mt.mean_reward += g.rewards[i];
      mt.frac_correct += g.rewards[i] == 1.0;
      mt.frac_format_only += g.rewards[i] == 0.1;
      mt.mean_latent_length += g.traces[i].latent_length;
      ++traces;
    }
    if (g.degenerate) {
      ++mt.degenerate_groups;
      continue;
    }
    ++live_groups;
    Tensor<T> group_sum;
    for (std::size_t i = 0; i < g.traces.size(); ++i) {
      auto cur = score_trace(g.traces[i], m, cfg.temperature);
      std::vector<RoundScores<T>> prior;
      {
        NoGradGuard ng;
        prior = score_trace(g.traces[i], ref, cfg.temperature);
      }
      Tensor<T> trace_sum;
      std::size_t rounds = 0;
      for (std::size_t j = 0; j < cur.size(); ++j) {
        if (!cur[j].logp.defined()) continue;
        const std::size_t n = cur[j].old_logp.size();
        if (cur[j].logp.numel() != n) throw std::logic_error("rl: stored and rescored token counts differ");
        std::vector<T> keep(n, T(1)), old(n), refv(n);
        std::size_t kept = 0;
        double gap_sum = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          old[k] = static_cast<T>(cur[j].old_logp[k]);
          refv[k] = prior[j].logp[k];
          const double gap = double(cur[j].logp[k]) - cur[j].old_logp[k];
          if (!std::isfinite(gap) || std::abs(gap) > cfg.max_logprob_gap) {
            keep[k] = T(0);
            ++mt.excluded_tokens;
          } else {
            ++kept;
            gap_sum += gap;
          }
        }
        if (kept == 0) continue;
        auto keep_t = Tensor<T>::from({n}, keep);
        auto logp = mul(cur[j].logp, keep_t);
        auto diff = mul(sub(cur[j].logp, Tensor<T>::from({n}, old)), keep_t);
        Tensor<T> surrogate;
        if (cfg.round_level_ratio) {
          surrogate = clipped_surrogate(exp(sum(diff)), g.advantages[i], cfg.clip_eps);
          const double rv = std::exp(gap_sum);
          clipped += (rv < 1 - cfg.clip_eps || rv > 1 + cfg.clip_eps) ? kept : 0;
        } else {
          surrogate = scale(sum(mul(clipped_surrogate(exp(diff), g.advantages[i], cfg.clip_eps), keep_t)),
                            static_cast<T>(1.0 / double(kept)));
          for (std::size_t k = 0; k < n; ++k)
            if (keep[k] != T(0)) {
              const double rv = std::exp(double(cur[j].logp[k]) - cur[j].old_logp[k]);
              clipped += rv < 1 - cfg.clip_eps || rv > 1 + cfg.clip_eps;
            }
        }
        tokens += kept;
        // k3 against the frozen reference
        auto d = mul(sub(Tensor<T>::from({n}, refv), logp), keep_t);
        auto k3 = sub(sub(mul(exp(d), keep_t), d), keep_t);
        auto kl = scale(sum(k3), static_cast<T>(1.0 / double(kept)));
        kl_sum += double(sum(k3).item());
        kl_tokens += kept;
        auto round_obj = cfg.kl_beta > 0 ? sub(surrogate, scale(kl, static_cast<T>(cfg.kl_beta))) : surrogate;
        trace_sum = trace_sum.defined() ? add(trace_sum, round_obj) : round_obj;
        ++rounds;
      }
      if (!trace_sum.defined()) continue;
      auto trace_obj = scale(trace_sum, static_cast<T>(1.0 / double(rounds)));
      group_sum = group_sum.defined() ? add(group_sum, trace_obj) : trace_obj;
    }
    if (!group_sum.defined()) continue;
    auto group_obj = scale(group_sum, static_cast<T>(1.0 / double(g.traces.size())));
    total = total.defined() ? add(total, group_obj) : group_obj;
  }
  const double nt = std::max<std::size_t>(traces, 1);
  mt.mean_reward /= nt;
  mt.frac_correct /= nt;
  mt.frac_format_only /= nt;
  mt.mean_latent_length /= nt;
  mt.mean_kl = kl_tokens ? kl_sum / double(kl_tokens) : 0.0;
  mt.clip_frac = tokens ? double(clipped) / double(tokens) : 0.0;
  if (total.defined()) {
    o.loss = scale(total, static_cast<T>(-1.0 / double(live_groups)));
    mt.objective = -double(o.loss.item());
  }
  return o;
}

// One optimizer step on everything in m.
template <class T>
StepMetrics grpo_step(const std::vector<RewardedGroup>& groups, const ColtModel<T>& m, const ColtModel<T>& ref,
                      AdamW<T>& opt, const RlConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  opt.zero_grad();
  auto o = grpo_objective(groups, m, ref, cfg);
  if (o.loss.defined() && std::isfinite(double(o.loss.item()))) {
    backward(o.loss);
    opt.step(cfg.lr);
  }
  o.metrics.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return o.metrics;
}

inline void write_csv_header(std::ostream& os) {
  os << "step,mean_reward,frac_correct,frac_format_only,mean_kl,clip_frac,mean_#L\n";
}

inline void write_csv_row(std::ostream& os, const StepMetrics& s) {
  os << s.step << ',' << s.mean_reward << ',' << s.frac_correct << ',' << s.frac_format_only << ',' << s.mean_kl
     << ',' << s.clip_frac << ',' << s.mean_latent_length << '\n';
}

struct RlProblem {
  std::vector<int> question;
  std::int64_t gold = 0;
};

// Problems are visited in shuffled passes, groups_per_batch per step.
// Rollouts come from the current policy, which is then pi_old for its step.
template <class T>
std::vector<StepMetrics> train_rl(ColtModel<T>& m, const ColtModel<T>& ref, const std::vector<RlProblem>& problems,
                                  const corpus::Vocab& vocab, const RlConfig& cfg, std::ostream* csv = nullptr) {
  cfg.validate();
  require_sampling(m.decoders);
  if (problems.empty()) throw std::invalid_argument("rl: no training problems");
  AdamW<T> opt(m.parameters());
  Rng rng(cfg.seed);
  std::vector<StepMetrics> log;
  if (csv) {
    write_csv_header(*csv);
    *csv << std::setprecision(8);
  }
  const std::size_t per = static_cast<std::size_t>(cfg.groups_per_batch);
  const int steps = cfg.steps > 0 ? cfg.steps : static_cast<int>((problems.size() + per - 1) / per);
  std::vector<std::size_t> order;
  std::size_t next = 0;
  for (int s = 1; s <= steps; ++s) {
    std::vector<RewardedGroup> groups;
    for (std::size_t gi = 0; gi < per; ++gi) {
      if (next == order.size()) {
        order.resize(problems.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
        next = 0;
      }
      const auto& p = problems[order[next++]];
      groups.push_back(rollout_group(std::span<const int>(p.question), p.gold, m, vocab, cfg, rng));
    }
    auto r = grpo_step(groups, m, ref, opt, cfg);
    r.step = s;
    if (csv) write_csv_row(*csv, r);
    log.push_back(r);
  }
  return log;
}

}  // namespace colt::rl
