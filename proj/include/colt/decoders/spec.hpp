#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "colt/corpus/examples.hpp"

namespace colt {

enum class DecoderFamily { Transformer, Rnn, MultiHot };

inline std::string family_name(DecoderFamily f) {
  switch (f) {
    case DecoderFamily::Transformer: return "transformer";
    case DecoderFamily::Rnn: return "rnn";
    case DecoderFamily::MultiHot: return "multihot";
  }
  return "?";
}

inline DecoderFamily parse_family(const std::string& s) {
  if (s == "transformer") return DecoderFamily::Transformer;
  if (s == "rnn") return DecoderFamily::Rnn;
  if (s == "multihot") return DecoderFamily::MultiHot;
  throw std::invalid_argument("unknown decoder family '" + s + "' (expected transformer, rnn or multihot)");
}

struct DecoderSpec {
  DecoderFamily family = DecoderFamily::Transformer;
  int n_layers = 1;        // transformer only
  int seed_len = 1;        // seed tokens per call, trigger included
  int max_decode_len = corpus::kDefaultMaxDecodeLen;
  int digits = 4;          // multihot only; output width is 10 * digits
  int width = 0;           // rnn / multihot hidden width; 0 means d_model

  int output_width() const { return 10 * digits; }
  int hidden_width(int d_model) const { return width > 0 ? width : d_model; }

  // Number-only decoders leave operators and separators to the backbone.
  bool step_level() const { return family != DecoderFamily::MultiHot; }
  bool supports_sampling() const { return family != DecoderFamily::MultiHot; }

  // Throws on invalid settings; returns advisory warnings.
  std::vector<std::string> validate(int backbone_layers) const {
    std::vector<std::string> warn;
    if (seed_len < 1) throw std::invalid_argument("decoder: seed_len must be >= 1");
    if (max_decode_len < 1) throw std::invalid_argument("decoder: max_decode_len must be >= 1");
    if (width < 0) throw std::invalid_argument("decoder: width must be >= 0");
    if (family == DecoderFamily::Transformer) {
      if (n_layers < 1) throw std::invalid_argument("decoder: n_layers must be >= 1");
      if (n_layers > backbone_layers)
        throw std::invalid_argument("decoder: n_layers " + std::to_string(n_layers) + " exceeds backbone depth " +
                                    std::to_string(backbone_layers));
      if (n_layers == backbone_layers)
        warn.push_back("decoder depth equals backbone depth; decoders are meant to be much shallower");
    }
    if (family == DecoderFamily::MultiHot && (digits < 1 || digits > 9))
      throw std::invalid_argument("decoder: digits must be in [1, 9]");
    return warn;
  }

  nlohmann::ordered_json to_json() const {
    return {{"family", family_name(family)}, {"n_layers", n_layers},   {"seed_len", seed_len},
            {"max_decode_len", max_decode_len}, {"digits", digits}, {"width", width}};
  }

  static DecoderSpec from_json(const nlohmann::json& j) {
    DecoderSpec s;
    s.family = parse_family(j.at("family").get<std::string>());
    s.n_layers = j.at("n_layers").get<int>();
    s.seed_len = j.at("seed_len").get<int>();
    s.max_decode_len = j.at("max_decode_len").get<int>();
    s.digits = j.at("digits").get<int>();
    s.width = j.value("width", 0);
    return s;
  }

  bool operator==(const DecoderSpec&) const = default;
};

}  // namespace colt
