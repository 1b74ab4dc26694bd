#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "colt/backbone/generate.hpp"
#include "colt/corpus/examples.hpp"
#include "colt/decoders/dispatch.hpp"

namespace colt {

struct InferenceLimits {
  int max_rounds = 8;
  int segment_budget = 96;  // backbone tokens per round
  bool step_separator = true;  // off for chunk-level calls, whose text carries its own separators

  void validate() const {
    if (max_rounds < 1) throw std::invalid_argument("inference: max_rounds must be >= 1");
    if (segment_budget < 1) throw std::invalid_argument("inference: segment_budget must be >= 1");
  }
};

struct Round {
  std::vector<int> prompt;           // P: context before the round
  std::vector<int> segment;          // C: backbone tokens, trigger or EOS included
  std::vector<double> segment_logprobs;
  int trigger = -1;                  // set for latent rounds
  int seed_len = 0;
  DecodeResult decoded;              // R
  std::string error;

  bool latent() const { return trigger >= 0 && error.empty(); }
};

struct Trace {
  std::vector<int> question_ids;
  std::vector<Round> rounds;
  std::vector<int> final_context;  // prompt plus every spliced round and the last segment
  std::string chain_text;          // reasoning chain after the question, answer included
  StopReason stop = StopReason::Budget;
  std::optional<std::int64_t> answer;
  bool format_ok = false;
  bool decoder_truncated = false;
  int latent_length = 0;

  int latent_rounds() const {
    int n = 0;
    for (const auto& r : rounds) n += r.latent();
    return n;
  }
};

class SpliceError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// prev with its trailing seed span removed, then the decoded text, then the
// separator when `separator` >= 0.
inline std::vector<int> splice_context(std::span<const int> prev, std::span<const int> decoded, int separator) {
  for (int id : decoded)
    if (corpus::Vocab::is_seed(id)) throw SpliceError("decoded text contains seed id " + std::to_string(id));
  std::size_t end = prev.size();
  while (end > 0 && corpus::Vocab::is_seed(prev[end - 1])) --end;
  std::vector<int> out(prev.begin(), prev.begin() + static_cast<std::ptrdiff_t>(end));
  out.insert(out.end(), decoded.begin(), decoded.end());
  if (separator >= 0) out.push_back(separator);
  return out;
}

// Tokens of the chain that count as reasoning: every latent call costs
// L_s + 1; explicit backbone text before the answer marker counts one per
// token; the answer segment and control ids are excluded.
inline int measure_length(const Trace& t, int answer_marker_id) {
  int n = 0;
  for (const auto& r : t.rounds) {
    if (r.latent()) n += r.seed_len + 1;
    for (int id : r.segment) {
      if (id == answer_marker_id) return n;
      if (!corpus::Vocab::is_control(id)) ++n;
    }
  }
  return n;
}

namespace detail {

inline std::vector<int> text_ids(std::span<const int> ids) {
  std::vector<int> out;
  for (int id : ids)
    if (!corpus::Vocab::is_control(id)) out.push_back(id);
  return out;
}

}  // namespace detail

// The tool-call loop: generate until a trigger, decode the trailing seed
// states, splice the text back, repeat until EOS or a limit. Failures end
// the trace with a stop reason instead of throwing.
template <class T>
Trace run_inference(std::span<const int> question_ids, const Backbone<T>& model, const DecoderSet<T>& decoders,
                    const corpus::Vocab& vocab, const Decoding& mode, const InferenceLimits& limits, Rng& rng) {
  limits.validate();
  Trace tr;
  tr.question_ids.assign(question_ids.begin(), question_ids.end());
  std::vector<int> ctx = tr.question_ids;
  ctx.push_back(vocab.separator_id());
  const std::size_t max_ctx = static_cast<std::size_t>(model.config().max_context);
  Session<T> session(model);
  auto finish = [&](StopReason why) {
    tr.stop = why;
    tr.final_context = ctx;
    const std::vector<int> chain(ctx.begin() + static_cast<std::ptrdiff_t>(tr.question_ids.size() + 1), ctx.end());
    tr.chain_text = vocab.decode(detail::text_ids(chain));
    const auto parsed = corpus::parse_final_answer(tr.chain_text);
    tr.answer = parsed.value;
    tr.format_ok = parsed.format_ok;
    tr.latent_length = measure_length(tr, vocab.answer_marker_id());
    return tr;
  };
  if (ctx.size() >= max_ctx) return finish(StopReason::Overflow);
  session.feed(ctx);

  for (int round = 0; round < limits.max_rounds; ++round) {
    Round r;
    r.prompt = ctx;
    const int room = static_cast<int>(max_ctx - session.length());
    if (room < 1) {
      tr.rounds.push_back(std::move(r));
      return finish(StopReason::Overflow);
    }
    const int budget = std::min(limits.segment_budget, room);
    auto seg = generate_segment(session, mode, budget, rng);
    r.segment = seg.tokens;
    r.segment_logprobs = seg.logprobs;

    if (seg.stop == StopReason::Eos || seg.stop == StopReason::Budget) {
      ctx.insert(ctx.end(), seg.tokens.begin(), seg.tokens.end());
      tr.rounds.push_back(std::move(r));
      if (seg.stop == StopReason::Budget && budget < limits.segment_budget) return finish(StopReason::Overflow);
      return finish(seg.stop);
    }

    r.trigger = seg.tokens.back();
    const Decoder<T>* dec = nullptr;
    try {
      dec = &decoders.for_trigger(r.trigger);
    } catch (const UnmappedTrigger& e) {
      r.error = e.what();
      ctx.insert(ctx.end(), seg.tokens.begin(), seg.tokens.end());
      tr.rounds.push_back(std::move(r));
      return finish(StopReason::UnmappedTrigger);
    }
    r.seed_len = dec->spec().seed_len;
    const std::size_t ls = static_cast<std::size_t>(r.seed_len);
    if (session.length() < ls) {
      r.error = "fewer positions than seed tokens";
      tr.rounds.push_back(std::move(r));
      return finish(StopReason::Overflow);
    }
    auto h = session.hidden_rows(session.length() - ls, ls);
    r.decoded = dec->decode(h, mode, rng);
    tr.decoder_truncated = tr.decoder_truncated || r.decoded.truncated;

    // Seeds are replaced, never retained: stray seed ids inside the segment
    // are dropped along with the trailing span.
    std::vector<int> prev = ctx;
    for (int id : seg.tokens)
      if (!corpus::Vocab::is_seed(id)) prev.push_back(id);
    const int sep = limits.step_separator && dec->spec().step_level() ? vocab.separator_id() : -1;
    auto next = splice_context(prev, r.decoded.tokens, sep);
    tr.rounds.push_back(std::move(r));
    const std::size_t keep = ctx.size();
    ctx = std::move(next);
    if (ctx.size() >= max_ctx) return finish(StopReason::Overflow);
    session.truncate(keep);
    session.feed(std::span<const int>(ctx).subspan(keep));
  }
  return finish(StopReason::Budget);
}

inline nlohmann::ordered_json trace_to_json(const Trace& t, const corpus::Vocab& v,
                                            std::optional<double> reward = std::nullopt) {
  nlohmann::ordered_json j;
  j["question"] = v.decode(t.question_ids);
  j["stop"] = stop_name(t.stop);
  j["latent_length"] = t.latent_length;
  j["latent_rounds"] = t.latent_rounds();
  j["answer"] = t.answer ? nlohmann::ordered_json(*t.answer) : nlohmann::ordered_json(nullptr);
  j["format_ok"] = t.format_ok;
  j["decoder_truncated"] = t.decoder_truncated;
  j["chain"] = t.chain_text;
  if (reward) j["reward"] = *reward;
  auto rounds = nlohmann::ordered_json::array();
  for (const auto& r : t.rounds) {
    nlohmann::ordered_json jr;
    jr["prompt"] = v.decode(r.prompt);
    jr["segment"] = v.decode(r.segment);
    if (r.trigger >= 0) {
      jr["trigger"] = r.trigger;
      jr["decoded"] = v.decode(r.decoded.tokens);
      jr["decoded_truncated"] = r.decoded.truncated;
    }
    if (!r.error.empty()) jr["error"] = r.error;
    rounds.push_back(std::move(jr));
  }
  j["rounds"] = std::move(rounds);
  return j;
}

}  // namespace colt
