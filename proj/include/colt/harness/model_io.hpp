#pragma once

#include <optional>
#include <string>

#include "colt/harness/config.hpp"
#include "colt/numerics/checkpoint.hpp"

#ifndef COLT_REVISION
#define COLT_REVISION "unknown"
#endif

namespace colt::harness {

inline constexpr const char* kRevision = COLT_REVISION;

enum class ModelKind { Colt, Cot };

inline std::string kind_name(ModelKind k) { return k == ModelKind::Colt ? "colt" : "cot"; }

inline ModelKind parse_kind(const std::string& s) {
  if (s == "colt") return ModelKind::Colt;
  if (s == "cot") return ModelKind::Cot;
  throw std::invalid_argument("unknown model kind '" + s + "'");
}

template <class T>
struct LoadedModel {
  ModelKind kind = ModelKind::Colt;
  ColtModel<T> model;
  RunConfig config;
  nlohmann::json header;
};

// Backbone seeded from cfg.seed, decoder from the next seed; CoT models
// carry no decoder.
template <class T>
ColtModel<T> build_model(const RunConfig& cfg, const corpus::Vocab& v, ModelKind kind) {
  cfg.validate(v.size());
  auto bc = cfg.backbone;
  bc.vocab_size = static_cast<int>(v.size());
  ColtModel<T> m{Backbone<T>(bc, cfg.seed), {}};
  if (kind == ModelKind::Colt) m.decoders = DecoderSet<T>(make_decoder<T>(cfg.decoder, m.backbone, v, cfg.seed + 1));
  return m;
}

template <class T>
nlohmann::ordered_json model_header(ModelKind kind, const RunConfig& cfg, const ColtModel<T>& m,
                                    const corpus::Vocab& v, const nlohmann::ordered_json& extra = {}) {
  nlohmann::ordered_json h;
  h["format"] = "colt-model";
  h["kind"] = kind_name(kind);
  h["revision"] = kRevision;
  const auto& bc = m.backbone.config();
  h["backbone"] = {{"vocab_size", bc.vocab_size}, {"d_model", bc.d_model},         {"n_layers", bc.n_layers},
                   {"n_heads", bc.n_heads},       {"max_context", bc.max_context}, {"ff_mult", bc.ff_mult}};
  h["decoders"] = nlohmann::ordered_json::array();
  for (const auto& d : m.decoders.decoders) h["decoders"].push_back(d->spec().to_json());
  h["vocab"] = v.tokens();
  h["config"] = config_to_json(cfg);
  h["config_hash"] = config_hash(cfg);
  if (!extra.is_null()) h["meta"] = extra;
  return h;
}

template <class T>
void save_model(const std::string& path, ModelKind kind, const RunConfig& cfg, const ColtModel<T>& m,
                const corpus::Vocab& v, const nlohmann::ordered_json& extra = {}) {
  save_checkpoint(path, model_header(kind, cfg, m, v, extra).dump(), m.parameters());
}

// The stored vocab must equal `v`; the model is rebuilt from the stored
// config and every parameter checked for presence and shape before use.
template <class T>
LoadedModel<T> load_model(const std::string& path, const corpus::Vocab& v) {
  auto ck = load_checkpoint<T>(path);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(ck.header);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path + ": header is not JSON: " + e.what());
  }
  if (h.value("format", "") != "colt-model") throw CheckpointError(path + ": not a model checkpoint");
  if (h.at("vocab").template get<std::vector<std::string>>() != v.tokens())
    throw CheckpointError(path + ": vocabulary differs from the current corpus vocabulary");
  LoadedModel<T> out;
  out.kind = parse_kind(h.at("kind").template get<std::string>());
  out.config = RunConfig();
  for (const auto& [k, val] : h.at("config").items())
    set_key(out.config, k, val.is_string() ? val.template get<std::string>() : val.dump());
  out.model = build_model<T>(out.config, v, out.kind);
  if (out.model.decoders.decoders.size() != h.at("decoders").size())
    throw CheckpointError(path + ": decoder count does not match the stored config");
  assign_params(ck, out.model.parameters());
  out.header = std::move(h);
  return out;
}

}  // namespace colt::harness
