#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "colt/backbone/transformer.hpp"
#include "colt/corpus/vocab.hpp"

namespace colt {

struct Decoding {
  enum class Kind { Greedy, Sample };
  Kind kind = Kind::Greedy;
  double temperature = 1.0;
  double top_p = 1.0;

  static Decoding greedy() { return {}; }
  static Decoding sample(double temperature, double top_p) { return {Kind::Sample, temperature, top_p}; }
  bool sampling() const { return kind == Kind::Sample; }
};

struct TokenChoice {
  int id = -1;
  double logprob = 0.0;  // under the untruncated softmax(logits / temperature)
};

// Log-softmax of one row of logits at the given temperature, in double.
template <class T>
std::vector<double> row_log_softmax(std::span<const T> logits, double temperature = 1.0) {
  std::vector<double> z(logits.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = double(logits[i]) / temperature;
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  for (auto& v : z) v -= lse;
  return z;
}

// Greedy picks the highest logit (ties to the lower id). Sampling draws from
// the temperature-scaled distribution restricted to the top-p nucleus.
// `banned` ids are never selected; the reported log-prob ignores the ban
// and the nucleus so it matches a plain rescoring of the same logits.
template <class T>
TokenChoice choose_token(std::span<const T> logits, const Decoding& mode, Rng& rng, std::span<const int> banned = {}) {
  const double temp = mode.sampling() ? mode.temperature : 1.0;
  auto lp = row_log_softmax(logits, temp);
  std::vector<bool> allowed(lp.size(), true);
  for (int b : banned)
    if (b >= 0 && static_cast<std::size_t>(b) < allowed.size()) allowed[static_cast<std::size_t>(b)] = false;
  if (!mode.sampling() || temp <= 0.0) {
    int best = -1;
    for (std::size_t i = 0; i < lp.size(); ++i)
      if (allowed[i] && (best < 0 || lp[i] > lp[static_cast<std::size_t>(best)])) best = static_cast<int>(i);
    return {best, lp[static_cast<std::size_t>(best)]};
  }
  std::vector<int> order;
  for (std::size_t i = 0; i < lp.size(); ++i)
    if (allowed[i]) order.push_back(static_cast<int>(i));
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return lp[std::size_t(a)] > lp[std::size_t(b)]; });
  double mass = 0.0;
  for (int id : order) mass += std::exp(lp[std::size_t(id)]);
  std::size_t keep = 0;
  double cum = 0.0;
  const double target = std::min(1.0, mode.top_p) * mass;
  while (keep < order.size()) {
    cum += std::exp(lp[std::size_t(order[keep])]);
    ++keep;
    if (cum >= target) break;
  }
  const double u = rng.uniform() * cum;
  double acc = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    acc += std::exp(lp[std::size_t(order[i])]);
    if (u < acc) return {order[i], lp[std::size_t(order[i])]};
  }
  return {order[keep - 1], lp[std::size_t(order[keep - 1])]};
}

// Incremental decoding state of one sequence on a backbone.
template <class T>
class Session {
 public:
  explicit Session(const Backbone<T>& model) : model_(&model) {}

  void feed(std::span<const int> ids) {
    if (ids.empty()) return;
    NoGradGuard ng;
    auto out = model_->forward(ids, &cache_);
    const std::size_t d = out.hidden.dim(1), v = out.logits.dim(1), n = ids.size();
    hidden_.insert(hidden_.end(), out.hidden.data().begin(), out.hidden.data().end());
    last_logits_.assign(out.logits.data().begin() + static_cast<std::ptrdiff_t>((n - 1) * v), out.logits.data().end());
    tokens_.insert(tokens_.end(), ids.begin(), ids.end());
    width_ = d;
  }

  void feed(int id) { feed(std::span<const int>(&id, 1)); }

  // Drops positions >= len. The next-token logits become stale; feed at
  // least one token before generating again.
  void truncate(std::size_t len) {
    cache_.truncate(len);
    tokens_.resize(len);
    hidden_.resize(len * width_);
    last_logits_.clear();
  }

  std::size_t length() const { return tokens_.size(); }
  const std::vector<int>& tokens() const { return tokens_; }
  std::span<const T> last_logits() const { return last_logits_; }
  std::size_t max_context() const { return static_cast<std::size_t>(model_->config().max_context); }

  // Final-layer hidden states of positions [begin, begin + count).
  Tensor<T> hidden_rows(std::size_t begin, std::size_t count) const {
    if (begin + count > tokens_.size()) throw IndexError("hidden_rows", begin + count, tokens_.size() + 1);
    std::vector<T> rows(hidden_.begin() + static_cast<std::ptrdiff_t>(begin * width_),
                        hidden_.begin() + static_cast<std::ptrdiff_t>((begin + count) * width_));
    return Tensor<T>::from({count, width_}, std::move(rows));
  }

 private:
  const Backbone<T>* model_;
  KVCache<T> cache_;
  std::vector<int> tokens_;
  std::vector<T> hidden_;
  std::vector<T> last_logits_;
  std::size_t width_ = 0;
};

enum class StopReason { Trigger, Eos, Budget, Overflow, UnmappedTrigger };

inline const char* stop_name(StopReason r) {
  switch (r) {
    case StopReason::Trigger: return "trigger";
    case StopReason::Eos: return "eos";
    case StopReason::Budget: return "budget";
    case StopReason::Overflow: return "overflow";
    case StopReason::UnmappedTrigger: return "unmapped_trigger";
  }
  return "?";
}

struct Segment {
  std::vector<int> tokens;
  std::vector<double> logprobs;
  StopReason stop = StopReason::Budget;
};

// Extends `session` until a trigger, EOS or `budget` tokens. A trigger is
// fed so its hidden state is available; EOS is not fed. Works with any
// session type exposing last_logits() and feed(int).
template <class S>
Segment generate_segment(S& session, const Decoding& mode, int budget, Rng& rng,
                         std::span<const int> banned = {}) {
  if (budget < 1) throw std::invalid_argument("generate_segment: budget must be >= 1");
  Segment seg;
  for (int i = 0; i < budget; ++i) {
    const auto choice = choose_token(session.last_logits(), mode, rng, banned);
    seg.tokens.push_back(choice.id);
    seg.logprobs.push_back(choice.logprob);
    if (choice.id == corpus::Special::kEos) {
      seg.stop = StopReason::Eos;
      return seg;
    }
    session.feed(choice.id);
    if (corpus::Vocab::is_trigger(choice.id)) {
      seg.stop = StopReason::Trigger;
      return seg;
    }
  }
  seg.stop = StopReason::Budget;
  return seg;
}

// Seed embeddings H: final-layer rows at `span` of a full forward, kept on
// the gradient tape.
template <class T>
Tensor<T> extract_seed_embeddings(const StepOutput<T>& out, std::size_t begin, std::size_t count) {
  if (count == 0) throw IndexError("extract_seed_embeddings", 0, 0);
  return slice_rows(out.hidden, begin, count);
}

}  // namespace colt
