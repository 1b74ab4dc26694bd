#pragma once

#include <chrono>
#include <set>

#include "colt/harness/model_io.hpp"
#include "colt/orchestrator/orchestrator.hpp"

namespace colt::harness {

class SplitError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Throws if any evaluation problem shares a template and operands with a
// training problem.
inline void check_disjoint(const std::vector<corpus::Problem>& train, const std::vector<corpus::Problem>& test) {
  std::set<std::string> keys;
  for (const auto& p : train) keys.insert(corpus::problem_key(p));
  for (std::size_t i = 0; i < test.size(); ++i)
    if (keys.count(corpus::problem_key(test[i])))
      throw SplitError("evaluation problem " + std::to_string(i) + " also appears in the training split");
}

struct TraceRecord {
  std::int64_t gold = 0;
  std::optional<std::int64_t> answer;
  bool correct = false;
  int latent_length = 0;
  int latent_rounds = 0;
  bool seed_free = true;  // final reconstructed chain has no seed ids
  StopReason stop = StopReason::Eos;
  nlohmann::ordered_json trace;  // full record when kept
};

struct EvalReport {
  std::string dataset;
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  double mean_latent_length = 0.0;
  double format_rate = 0.0;
  std::size_t seed_free = 0;
  std::vector<TraceRecord> records;
  nlohmann::ordered_json meta;
  double wall_s = 0.0;
};

inline bool seed_free_chain(const Trace& t) {
  std::size_t start = std::min(t.question_ids.size() + 1, t.final_context.size());
  return std::none_of(t.final_context.begin() + static_cast<std::ptrdiff_t>(start), t.final_context.end(),
                      corpus::Vocab::is_seed);
}

// Greedy traces over every problem. `keep_traces` stores full JSON per trace.
template <class T>
EvalReport evaluate(const ColtModel<T>& m, const std::vector<corpus::Problem>& problems, const corpus::Vocab& v,
                    const InferenceLimits& limits, const std::string& dataset = "test", bool keep_traces = false) {
  limits.validate();
  const auto t0 = std::chrono::steady_clock::now();
  EvalReport r;
  r.dataset = dataset;
  r.n = problems.size();
  double len = 0.0;
  std::size_t fmt = 0;
  for (const auto& p : problems) {
    const auto q = v.encode(p.question);
    Rng rng(0);  // unused by greedy decoding
    auto t = run_inference(std::span<const int>(q), m.backbone, m.decoders, v, Decoding::greedy(), limits, rng);
    TraceRecord rec;
    rec.gold = p.answer;
    rec.answer = t.answer;
    rec.correct = t.answer && *t.answer == p.answer;
    rec.latent_length = t.latent_length;
    rec.latent_rounds = t.latent_rounds();
    rec.seed_free = seed_free_chain(t);
    rec.stop = t.stop;
    if (keep_traces) {
      rec.trace = trace_to_json(t, v);
      rec.trace["gold"] = p.answer;
      rec.trace["correct"] = rec.correct;
    }
    r.correct += rec.correct;
    r.seed_free += rec.seed_free;
    fmt += t.format_ok;
    len += t.latent_length;
    r.records.push_back(std::move(rec));
  }
  if (r.n > 0) {
    r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.n);
    r.mean_latent_length = len / static_cast<double>(r.n);
    r.format_rate = static_cast<double>(fmt) / static_cast<double>(r.n);
  }
  r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// Teacher-forced decode accuracy: each latent example's gold context and
// seed span go through the backbone, and the decoder's greedy output must equal
// the gold step exactly.
template <class T>
double decode_accuracy(const ColtModel<T>& m, const std::vector<corpus::ToolCallExample>& exs) {
  NoGradGuard ng;
  std::size_t n = 0, hit = 0;
  Rng rng(0);
  for (const auto& ex : exs) {
    if (!ex.is_latent()) continue;
    std::vector<int> seq = ex.context_ids;
    seq.insert(seq.end(), ex.target_seed_ids.begin(), ex.target_seed_ids.end());
    auto out = m.backbone.forward(seq, nullptr);
    auto h = extract_seed_embeddings(out, ex.context_ids.size(), ex.target_seed_ids.size());
    auto r = m.decoders.dispatch(ex.target_seed_ids.back(), h, Decoding::greedy(), rng);
    auto want = ex.target_decode_ids;
    if (!want.empty() && want.back() == corpus::Special::kEos) want.pop_back();
    ++n;
    hit += r.tokens == want;
  }
  return n ? static_cast<double>(hit) / static_cast<double>(n) : std::nan("");
}

// Copy of `m` with every decoder projector zeroed.
template <class T>
ColtModel<T> without_projectors(const ColtModel<T>& m) {
  auto z = m.clone();
  for (auto& d : z.decoders.decoders) {
    auto& p = d->projector();
    std::fill(p.w.data().begin(), p.w.data().end(), T(0));
    std::fill(p.b.data().begin(), p.b.data().end(), T(0));
  }
  return z;
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r, bool with_traces = false) {
  nlohmann::ordered_json j;
  j["dataset"] = r.dataset;
  j["n_examples"] = r.n;
  j["correct"] = r.correct;
  j["accuracy"] = r.accuracy;
  j["mean_latent_length"] = r.mean_latent_length;
  j["format_rate"] = r.format_rate;
  j["seed_free_chains"] = r.seed_free;
  j["wall_s"] = r.wall_s;
  j["meta"] = r.meta;
  if (with_traces) {
    j["traces"] = nlohmann::ordered_json::array();
    for (const auto& rec : r.records) j["traces"].push_back(rec.trace);
  }
  return j;
}

}  // namespace colt::harness
