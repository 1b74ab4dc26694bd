#pragma once

#include <memory>
#include <span>
#include <vector>

#include "colt/backbone/generate.hpp"
#include "colt/decoders/spec.hpp"
#include "colt/numerics/ops.hpp"
#include "colt/numerics/optim.hpp"

namespace colt {

// Linear map from backbone width into a decoder's input space.
template <class T>
struct Projector {
  Tensor<T> w;  // [d_in, d_out]
  Tensor<T> b;  // [d_out]

  static Projector init(std::size_t d_in, std::size_t d_out, Rng& rng) {
    return {init_normal<T>({d_in, d_out}, 1.0 / std::sqrt(static_cast<double>(d_in)), rng),
            Tensor<T>::zeros({d_out}, true)};
  }

  static Projector identity(std::size_t d) {
    auto w = Tensor<T>::zeros({d, d}, true);
    for (std::size_t i = 0; i < d; ++i) w[i * d + i] = T(1);
    return {w, Tensor<T>::zeros({d}, true)};
  }

  std::size_t in_width() const { return w.dim(0); }
  std::size_t out_width() const { return w.dim(1); }

  Tensor<T> operator()(const Tensor<T>& h) const {
    if (h.rank() != 2 || h.dim(1) != in_width())
      throw ShapeError("project", "seed states " + shape_str(h.shape()) + " do not match projector input width " +
                                      std::to_string(in_width()));
    return linear(h, w, b);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + "proj.w", w});
    out.push_back({prefix + "proj.b", b});
  }

  Projector clone() const { return {w.clone(), b.clone()}; }
};

struct DecodeResult {
  std::vector<int> tokens;       // text tokens, without the closing EOS
  std::vector<double> logprobs;  // one per emitted id, EOS included when emitted
  bool ended_eos = false;
  bool truncated = false;        // hit max_decode_len before EOS

  // Ids whose probabilities the decoder produced, for rescoring.
  std::vector<int> emitted() const {
    auto e = tokens;
    if (ended_eos) e.push_back(corpus::Special::kEos);
    return e;
  }
};

// Ids a text decoder may never produce.
inline const std::vector<int>& decoder_banned_ids() {
  static const std::vector<int> ids{corpus::Special::kPad, corpus::Special::kBdy, corpus::Special::kTrg,
                                    corpus::Special::kTrgAlt};
  return ids;
}

// A latent decoder D: unpacks seed states H [L_s, d_model] into text.
template <class T>
class Decoder {
 public:
  virtual ~Decoder() = default;

  virtual const DecoderSpec& spec() const = 0;
  virtual ParamList<T> parameters(const std::string& prefix) const = 0;

  // Log-probabilities of each target unit given H, on the gradient tape.
  // Text decoders score each target id (EOS included); the number decoder
  // scores one digit per group. L_lat is the negated mean.
  virtual Tensor<T> score(const Tensor<T>& h, std::span<const int> target, double temperature = 1.0) const = 0;

  virtual std::vector<Tensor<T>> score_many(const std::vector<Tensor<T>>& hs,
                                            const std::vector<std::vector<int>>& targets,
                                            double temperature = 1.0) const {
    std::vector<Tensor<T>> out;
    for (std::size_t i = 0; i < hs.size(); ++i) out.push_back(score(hs[i], targets[i], temperature));
    return out;
  }

  virtual DecodeResult decode(const Tensor<T>& h, const Decoding& mode, Rng& rng) const = 0;
  virtual std::unique_ptr<Decoder> clone() const = 0;
  virtual Projector<T>& projector() = 0;
};

namespace detail {

// Greedy or sampled generation from a step function returning next logits.
template <class T, class Step>
DecodeResult autoregress(std::span<const T> first_logits, int max_len, const Decoding& mode, Rng& rng, Step&& step) {
  DecodeResult r;
  std::vector<T> logits(first_logits.begin(), first_logits.end());
  for (int i = 0; i < max_len; ++i) {
    const auto c = choose_token(std::span<const T>(logits), mode, rng, decoder_banned_ids());
    r.logprobs.push_back(c.logprob);
    if (c.id == corpus::Special::kEos) {
      r.ended_eos = true;
      return r;
    }
    r.tokens.push_back(c.id);
    if (i + 1 < max_len) logits = step(c.id);
  }
  r.truncated = true;
  return r;
}

template <class T>
Tensor<T> scaled_log_softmax(const Tensor<T>& logits, double temperature) {
  if (temperature == 1.0) return log_softmax(logits);
  return log_softmax(scale(logits, static_cast<T>(1.0 / temperature)));
}

}  // namespace detail

}  // namespace colt
