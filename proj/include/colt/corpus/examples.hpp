#pragma once

#include <cctype>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "colt/corpus/problem.hpp"
#include "colt/corpus/vocab.hpp"

namespace colt::corpus {

// One supervised round. For a latent call, the backbone must emit
// `target_seed_ids` (ending in the trigger) after `context_ids`, and the
// decoder must unpack the seed states into `target_decode_ids`. Rounds with
// an empty decode target are plain text rounds (e.g. the answer segment).
struct ToolCallExample {
  std::vector<int> context_ids;
  std::vector<int> target_seed_ids;
  std::vector<int> target_decode_ids;

  bool is_latent() const { return !target_decode_ids.empty(); }
};

inline constexpr int kDefaultMaxDecodeLen = 24;

inline std::vector<int> seed_span(int seed_len, int trigger = Special::kTrg) {
  if (seed_len < 1) throw std::invalid_argument("seed_len must be >= 1");
  std::vector<int> s(static_cast<std::size_t>(seed_len - 1), Special::kBdy);
  s.push_back(trigger);
  return s;
}

// Question tokens plus the separator: the prompt every round starts from.
inline std::vector<int> prompt_ids(const Vocab& v, const std::string& question) {
  auto ids = v.encode(question);
  ids.push_back(v.separator_id());
  return ids;
}

inline std::vector<int> answer_segment_ids(const Vocab& v, std::int64_t answer) {
  auto ids = v.encode(answer_text(answer));
  ids.push_back(Special::kEos);
  return ids;
}

// One latent call per step plus the final answer round.
inline std::vector<ToolCallExample> build_sft_examples(const Vocab& v, const Problem& p, int seed_len,
                                                       int max_decode_len = kDefaultMaxDecodeLen) {
  const auto seeds = seed_span(seed_len);
  std::vector<ToolCallExample> out;
  auto ctx = prompt_ids(v, p.question);
  for (const auto& step : p.steps) {
    auto text = v.encode(step);
    if (static_cast<int>(text.size()) + 1 > max_decode_len)
      throw std::invalid_argument("step '" + step + "' needs " + std::to_string(text.size() + 1) +
                                  " decode tokens, limit is " + std::to_string(max_decode_len));
    ToolCallExample ex;
    ex.context_ids = ctx;
    ex.target_seed_ids = seeds;
    ex.target_decode_ids = text;
    ex.target_decode_ids.push_back(Special::kEos);
    out.push_back(std::move(ex));
    ctx.insert(ctx.end(), text.begin(), text.end());
    ctx.push_back(v.separator_id());
  }
  out.push_back({ctx, answer_segment_ids(v, p.answer), {}});
  return out;
}

// Number-level calls for a decoder that only produces integers: every
// number in a step becomes a latent call; operators, "=" and separators are
// emitted by the backbone as text rounds. Decoded numbers are spliced
// without a trailing separator.
inline std::vector<ToolCallExample> build_number_call_examples(const Vocab& v, const Problem& p, int seed_len) {
  const auto seeds = seed_span(seed_len);
  std::vector<ToolCallExample> out;
  auto ctx = prompt_ids(v, p.question);
  auto text_round = [&](const std::vector<int>& ids) {
    out.push_back({ctx, ids, {}});
    ctx.insert(ctx.end(), ids.begin(), ids.end());
  };
  auto number_round = [&](const std::string& digits) {
    auto ids = v.encode(digits);
    ToolCallExample ex{ctx, seeds, ids};
    ex.target_decode_ids.push_back(Special::kEos);
    out.push_back(std::move(ex));
    ctx.insert(ctx.end(), ids.begin(), ids.end());
  };
  for (const auto& step : p.steps) {
    std::size_t i = 0;
    while (i < step.size()) {
      if (std::isdigit(static_cast<unsigned char>(step[i]))) {
        std::size_t j = i;
        while (j < step.size() && std::isdigit(static_cast<unsigned char>(step[j]))) ++j;
        number_round(step.substr(i, j - i));
        i = j;
      } else {
        std::size_t j = i;
        while (j < step.size() && !std::isdigit(static_cast<unsigned char>(step[j]))) ++j;
        text_round(v.encode(step.substr(i, j - i)));
        i = j;
      }
    }
    text_round({v.separator_id()});
  }
  out.push_back({ctx, answer_segment_ids(v, p.answer), {}});
  return out;
}

// Plain next-token example over the whole explicit chain.
inline ToolCallExample build_cot_example(const Vocab& v, const Problem& p) {
  auto target = v.encode(cot_text(p));
  target.push_back(Special::kEos);
  return {prompt_ids(v, p.question), std::move(target), {}};
}

struct Span {
  std::size_t begin = 0;
  std::size_t length = 0;
  bool operator==(const Span&) const = default;
};

// Contiguous k-token spans; the last may be shorter.
inline std::vector<Span> chunk_as_steps(std::span<const int> ids, int k) {
  if (k < 1) throw std::invalid_argument("chunk_as_steps: k must be >= 1");
  std::vector<Span> out;
  for (std::size_t i = 0; i < ids.size(); i += static_cast<std::size_t>(k))
    out.push_back({i, std::min<std::size_t>(static_cast<std::size_t>(k), ids.size() - i)});
  return out;
}

// Latent calls over k-token chunks of the reasoning text (everything before
// the answer segment), for chains without explicit step boundaries.
inline std::vector<ToolCallExample> build_chunked_examples(const Vocab& v, const Problem& p, int seed_len, int k) {
  std::string reasoning;
  for (const auto& st : p.steps) reasoning += st + std::string(kSeparator);
  const auto ids = v.encode(reasoning);
  const auto seeds = seed_span(seed_len);
  std::vector<ToolCallExample> out;
  auto ctx = prompt_ids(v, p.question);
  for (const auto& sp : chunk_as_steps(ids, k)) {
    std::vector<int> chunk(ids.begin() + static_cast<std::ptrdiff_t>(sp.begin),
                           ids.begin() + static_cast<std::ptrdiff_t>(sp.begin + sp.length));
    ToolCallExample ex{ctx, seeds, chunk};
    ex.target_decode_ids.push_back(Special::kEos);
    out.push_back(std::move(ex));
    ctx.insert(ctx.end(), chunk.begin(), chunk.end());
  }
  out.push_back({ctx, answer_segment_ids(v, p.answer), {}});
  return out;
}

struct ParsedAnswer {
  std::optional<std::int64_t> value;
  bool format_ok = false;
};

// Finds the last answer marker; the value is the integer immediately after
// it (one optional space, optional minus, digits, then end or non-digit).
inline ParsedAnswer parse_final_answer(std::string_view text) {
  ParsedAnswer r;
  const auto pos = text.rfind(kAnswerMarker);
  if (pos == std::string_view::npos) return r;
  r.format_ok = true;
  std::size_t i = pos + kAnswerMarker.size();
  if (i < text.size() && text[i] == ' ') ++i;
  bool negative = false;
  if (i < text.size() && text[i] == '-') {
    negative = true;
    ++i;
  }
  std::size_t j = i;
  while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
  if (j == i || j - i > 15) return r;
  std::int64_t v = std::stoll(std::string(text.substr(i, j - i)));
  r.value = negative ? -v : v;
  return r;
}

}  // namespace colt::corpus
