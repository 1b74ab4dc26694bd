#pragma once

#include <charconv>
#include <iomanip>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "colt/corpus/problem.hpp"
#include "colt/decoders/spec.hpp"
#include "colt/rl/grpo.hpp"
#include "colt/sft/sft.hpp"

namespace colt::harness {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Granularity { Step, Number, Chunk };

inline std::string granularity_name(Granularity g) {
  switch (g) {
    case Granularity::Step: return "step";
    case Granularity::Number: return "number";
    case Granularity::Chunk: return "chunk";
  }
  return "?";
}

inline Granularity parse_granularity(const std::string& s) {
  if (s == "step") return Granularity::Step;
  if (s == "number") return Granularity::Number;
  if (s == "chunk") return Granularity::Chunk;
  throw ConfigError("unknown granularity '" + s + "' (expected step, number or chunk)");
}

struct RunConfig {
  std::uint64_t seed = 0;  // model init and training order
  corpus::DatasetConfig data;
  Granularity granularity = Granularity::Step;
  int chunk_tokens = 8;
  BackboneConfig backbone;
  DecoderSpec decoder;
  sft::SftConfig sft;
  rl::RlConfig rl;
  InferenceLimits infer;

  RunConfig() { rl.limits = infer; }

  // Throws ConfigError; returns advisory warnings.
  std::vector<std::string> validate(std::size_t vocab_size) const {
    try {
      data.validate();
      auto b = backbone;
      b.vocab_size = static_cast<int>(vocab_size);
      b.validate();
      auto w = decoder.validate(b.n_layers);
      sft.validate();
      rl.validate();
      infer.validate();
      if (chunk_tokens < 1) throw std::invalid_argument("chunk_tokens must be >= 1");
      if (granularity == Granularity::Number && decoder.family != DecoderFamily::MultiHot)
        throw std::invalid_argument("number granularity needs the multihot decoder");
      if (decoder.family == DecoderFamily::MultiHot && granularity != Granularity::Number)
        throw std::invalid_argument("the multihot decoder only supports number granularity");
      if (granularity == Granularity::Chunk && infer.step_separator)
        w.push_back("chunk granularity with infer.step_separator=true adds separators the chunks already carry");
      return w;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

template <class V>
V parse_number(const std::string& key, const std::string& s) {
  V v{};
  if constexpr (std::is_floating_point_v<V>) {
    char* end = nullptr;
    v = static_cast<V>(std::strtod(s.c_str(), &end));
    if (s.empty() || end != s.c_str() + s.size()) throw ConfigError(key + ": not a number: '" + s + "'");
  } else {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(key + ": not an integer: '" + s + "'");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<nlohmann::ordered_json(const RunConfig&)> get;
};

#define COLT_NUM(path, expr)                                                                                  \
  {                                                                                                           \
    path, Field {                                                                                             \
      [](RunConfig& c, const std::string& s) { c.expr = parse_number<std::decay_t<decltype(c.expr)>>(path, s); }, \
          [](const RunConfig& c) { return nlohmann::ordered_json(c.expr); }                                   \
    }                                                                                                         \
  }
#define COLT_BOOL(path, expr)                                                            \
  {                                                                                      \
    path, Field {                                                                        \
      [](RunConfig& c, const std::string& s) { c.expr = parse_bool(path, s); },          \
          [](const RunConfig& c) { return nlohmann::ordered_json(c.expr); }              \
    }                                                                                    \
  }

// Ordered: dumps and hashes follow this order.
inline const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f = {
      COLT_NUM("seed", seed),
      COLT_NUM("data.seed", data.seed),
      COLT_NUM("data.train_n", data.train_n),
      COLT_NUM("data.test_n", data.test_n),
      COLT_NUM("data.min_steps", data.min_steps),
      COLT_NUM("data.max_steps", data.max_steps),
      COLT_NUM("data.frames", data.gen.frames),
      COLT_NUM("data.max_operand", data.gen.max_operand),
      COLT_NUM("data.max_mul_operand", data.gen.max_mul_operand),
      COLT_NUM("data.value_cap", data.gen.value_cap),
      {"data.ops", {[](RunConfig& c, const std::string& s) { c.data.gen.ops = s; },
                    [](const RunConfig& c) { return nlohmann::ordered_json(c.data.gen.ops); }}},
      {"data.granularity", {[](RunConfig& c, const std::string& s) { c.granularity = parse_granularity(s); },
                            [](const RunConfig& c) { return nlohmann::ordered_json(granularity_name(c.granularity)); }}},
      COLT_NUM("data.chunk_tokens", chunk_tokens),
      COLT_NUM("backbone.d_model", backbone.d_model),
      COLT_NUM("backbone.n_layers", backbone.n_layers),
      COLT_NUM("backbone.n_heads", backbone.n_heads),
      COLT_NUM("backbone.max_context", backbone.max_context),
      COLT_NUM("backbone.ff_mult", backbone.ff_mult),
      {"decoder.family", {[](RunConfig& c, const std::string& s) {
                            try {
                              c.decoder.family = parse_family(s);
                            } catch (const std::invalid_argument& e) {
                              throw ConfigError(e.what());
                            }
                          },
                          [](const RunConfig& c) { return nlohmann::ordered_json(family_name(c.decoder.family)); }}},
      COLT_NUM("decoder.n_layers", decoder.n_layers),
      COLT_NUM("decoder.seed_len", decoder.seed_len),
      COLT_NUM("decoder.max_decode_len", decoder.max_decode_len),
      COLT_NUM("decoder.digits", decoder.digits),
      COLT_NUM("decoder.width", decoder.width),
      COLT_NUM("sft.epochs", sft.epochs),
      COLT_NUM("sft.lr", sft.lr),
      COLT_NUM("sft.batch", sft.batch),
      COLT_NUM("sft.clip_norm", sft.clip_norm),
      COLT_NUM("sft.max_nonfinite", sft.max_nonfinite),
      COLT_NUM("rl.group_size", rl.group_size),
      COLT_NUM("rl.clip_eps", rl.clip_eps),
      COLT_NUM("rl.kl_beta", rl.kl_beta),
      COLT_NUM("rl.temperature", rl.temperature),
      COLT_NUM("rl.top_p", rl.top_p),
      COLT_NUM("rl.lr", rl.lr),
      COLT_NUM("rl.groups_per_batch", rl.groups_per_batch),
      COLT_NUM("rl.steps", rl.steps),
      COLT_NUM("rl.max_logprob_gap", rl.max_logprob_gap),
      COLT_BOOL("rl.round_level_ratio", rl.round_level_ratio),
      COLT_NUM("infer.max_rounds", infer.max_rounds),
      COLT_NUM("infer.segment_budget", infer.segment_budget),
      COLT_BOOL("infer.step_separator", infer.step_separator),
  };
  return f;
}

#undef COLT_NUM
#undef COLT_BOOL

}  // namespace detail

inline void set_key(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& [k, f] : detail::fields())
    if (k == key) {
      f.set(c, value);
      c.rl.limits = c.infer;
      c.rl.seed = c.seed;
      c.sft.seed = c.seed;
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

// key.path = value lines; '#' starts a comment.
inline void apply_config_text(RunConfig& c, std::istream& in, const std::string& origin = "config") {
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(n) + ": expected key = value");
    const auto key = detail::trim(line.substr(0, eq));
    const auto val = detail::trim(line.substr(eq + 1));
    try {
      set_key(c, key, val);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

inline void apply_config_file(RunConfig& c, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  apply_config_text(c, f, path);
}

// COLT_SEED seeds everything unless the config or a flag says otherwise.
inline RunConfig default_config() {
  RunConfig c;
  if (const char* s = std::getenv("COLT_SEED"); s && *s) {
    try {
      set_key(c, "seed", s);
    } catch (const ConfigError&) {
      throw ConfigError(std::string("COLT_SEED is not an integer: '") + s + "'");
    }
  }
  c.rl.limits = c.infer;
  c.rl.seed = c.sft.seed = c.seed;
  return c;
}

inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  for (const auto& [k, f] : detail::fields()) j[k] = f.get(c);
  return j;
}

inline std::string config_to_text(const RunConfig& c) {
  std::ostringstream os;
  for (const auto& [k, f] : detail::fields()) {
    auto v = f.get(c);
    os << k << " = " << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
  }
  return os.str();
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a(config_to_text(c))); }

}  // namespace colt::harness
