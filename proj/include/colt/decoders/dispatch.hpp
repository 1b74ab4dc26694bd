#pragma once

#include <map>
#include <memory>
#include <stdexcept>

#include "colt/corpus/vocab.hpp"
#include "colt/decoders/multihot.hpp"
#include "colt/decoders/rnn_decoder.hpp"
#include "colt/decoders/transformer_decoder.hpp"

namespace colt {

class UnmappedTrigger : public std::runtime_error {
 public:
  explicit UnmappedTrigger(int id) : std::runtime_error("no decoder mapped to trigger id " + std::to_string(id)), id_(id) {}
  int id() const noexcept { return id_; }

 private:
  int id_;
};

// Token-decoder map f: trigger id -> decoder index.
class TriggerMap {
 public:
  static TriggerMap single() {
    TriggerMap m;
    m.bind(corpus::Special::kTrg, 0);
    return m;
  }

  void bind(int trigger, std::size_t decoder) {
    if (!corpus::Vocab::is_trigger(trigger)) throw std::invalid_argument("id " + std::to_string(trigger) + " is not a trigger");
    if (!routes_.emplace(trigger, decoder).second)
      throw std::invalid_argument("trigger " + std::to_string(trigger) + " already mapped");
  }

  std::size_t route(int trigger) const {
    auto it = routes_.find(trigger);
    if (it == routes_.end()) throw UnmappedTrigger(trigger);
    return it->second;
  }

  bool contains(int trigger) const { return routes_.count(trigger) > 0; }
  const std::map<int, std::size_t>& routes() const { return routes_; }

 private:
  std::map<int, std::size_t> routes_;
};

template <class T>
std::unique_ptr<Decoder<T>> make_decoder(const DecoderSpec& spec, const Backbone<T>& backbone,
                                         const corpus::Vocab& vocab, std::uint64_t seed) {
  const auto& cfg = backbone.config();
  switch (spec.family) {
    case DecoderFamily::Transformer: return std::make_unique<TransformerDecoder<T>>(spec, backbone, seed);
    case DecoderFamily::Rnn: return std::make_unique<RnnDecoder<T>>(spec, cfg.d_model, cfg.vocab_size, seed);
    case DecoderFamily::MultiHot: return std::make_unique<MultiHotDecoder<T>>(spec, cfg.d_model, vocab, seed);
  }
  throw std::invalid_argument("unknown decoder family");
}

// The decoder set D with its trigger map.
template <class T>
struct DecoderSet {
  std::vector<std::unique_ptr<Decoder<T>>> decoders;
  TriggerMap map;

  DecoderSet() = default;
  DecoderSet(std::unique_ptr<Decoder<T>> d) : map(TriggerMap::single()) { decoders.push_back(std::move(d)); }

  Decoder<T>& for_trigger(int trigger) const {
    const auto i = map.route(trigger);
    if (i >= decoders.size()) throw UnmappedTrigger(trigger);
    return *decoders[i];
  }

  DecodeResult dispatch(int trigger, const Tensor<T>& h, const Decoding& mode, Rng& rng) const {
    return for_trigger(trigger).decode(h, mode, rng);
  }

  ParamList<T> parameters() const {
    ParamList<T> out;
    for (std::size_t i = 0; i < decoders.size(); ++i) {
      auto p = decoders[i]->parameters("decoder." + std::to_string(i) + ".");
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  DecoderSet clone() const {
    DecoderSet s;
    for (const auto& d : decoders) s.decoders.push_back(d->clone());
    s.map = map;
    return s;
  }

  const DecoderSpec& primary_spec() const { return decoders.at(0)->spec(); }
};

}  // namespace colt
