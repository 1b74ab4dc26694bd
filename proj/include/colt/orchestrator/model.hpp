#pragma once

#include "colt/decoders/dispatch.hpp"

namespace colt {

// Backbone M plus decoder set D; everything either trainer updates.
template <class T>
struct ColtModel {
  Backbone<T> backbone;
  DecoderSet<T> decoders;

  ParamList<T> parameters() const {
    auto out = backbone.parameters();
    auto d = decoders.parameters();
    out.insert(out.end(), d.begin(), d.end());
    return out;
  }

  ColtModel clone() const { return {backbone.clone(), decoders.clone()}; }
  bool has_decoders() const { return !decoders.decoders.empty(); }
};

}  // namespace colt
