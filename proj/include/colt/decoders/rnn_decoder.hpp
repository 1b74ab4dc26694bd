#pragma once

#include "colt/decoders/decoder.hpp"

namespace colt {

// Single-layer ReLU recurrence. Steps 1..n read the projected seed rows,
// later steps read the embedding of the previous token; tokens are emitted
// from step n on.
template <class T>
class RnnDecoder final : public Decoder<T> {
 public:
  RnnDecoder(const DecoderSpec& spec, int d_model, int vocab_size, std::uint64_t seed) : spec_(spec) {
    spec.validate(1 << 20);
    Rng rng(seed);
    const auto d = static_cast<std::size_t>(d_model), v = static_cast<std::size_t>(vocab_size),
               w = static_cast<std::size_t>(spec.hidden_width(d_model));
    proj_ = Projector<T>::init(d, w, rng);
    emb_ = init_normal<T>({v, w}, 1.0, rng);
    w_xh_ = init_normal<T>({w, w}, 1.0 / std::sqrt(double(w)), rng);
    w_hh_ = init_normal<T>({w, w}, 0.5 / std::sqrt(double(w)), rng);
    b_h_ = Tensor<T>::zeros({w}, true);
    w_hy_ = init_normal<T>({w, v}, 1.0 / std::sqrt(double(w)), rng);
    b_y_ = Tensor<T>::zeros({v}, true);
  }

  // Explicit weights, for hand-checked recurrences.
  RnnDecoder(const DecoderSpec& spec, Projector<T> proj, Tensor<T> emb, Tensor<T> w_xh, Tensor<T> w_hh,
             Tensor<T> b_h, Tensor<T> w_hy, Tensor<T> b_y)
      : spec_(spec), proj_(std::move(proj)), emb_(std::move(emb)), w_xh_(std::move(w_xh)), w_hh_(std::move(w_hh)),
        b_h_(std::move(b_h)), w_hy_(std::move(w_hy)), b_y_(std::move(b_y)) {}

  const DecoderSpec& spec() const override { return spec_; }
  Projector<T>& projector() override { return proj_; }

  ParamList<T> parameters(const std::string& prefix) const override {
    ParamList<T> out;
    proj_.collect(prefix, out);
    out.push_back({prefix + "emb", emb_});
    out.push_back({prefix + "rnn.w_xh", w_xh_});
    out.push_back({prefix + "rnn.w_hh", w_hh_});
    out.push_back({prefix + "rnn.b_h", b_h_});
    out.push_back({prefix + "rnn.w_hy", w_hy_});
    out.push_back({prefix + "rnn.b_y", b_y_});
    return out;
  }

  Tensor<T> score(const Tensor<T>& h, std::span<const int> target, double temperature = 1.0) const override {
    if (target.empty()) throw ShapeError("decoder.score", "empty decode target");
    const std::size_t n = h.dim(0);
    std::vector<Tensor<T>> xs{proj_(h)};
    if (target.size() > 1) xs.push_back(embedding(emb_, target.first(target.size() - 1)));
    auto pre = linear(concat_rows(xs), w_xh_, b_h_);
    const std::size_t steps = pre.dim(0);
    std::vector<Tensor<T>> emitted;
    Tensor<T> state;
    for (std::size_t t = 0; t < steps; ++t) {
      auto a = slice_rows(pre, t, 1);
      state = relu(t == 0 ? a : add(a, matmul(state, w_hh_)));
      if (t + 1 >= n) emitted.push_back(state);
    }
    auto logits = linear(concat_rows(emitted), w_hy_, b_y_);
    return pick(detail::scaled_log_softmax(logits, temperature), target);
  }

  DecodeResult decode(const Tensor<T>& h, const Decoding& mode, Rng& rng) const override {
    NoGradGuard ng;
    auto pre = linear(proj_(h), w_xh_, b_h_);
    Tensor<T> state;
    for (std::size_t t = 0; t < pre.dim(0); ++t) {
      auto a = slice_rows(pre, t, 1);
      state = relu(t == 0 ? a : add(a, matmul(state, w_hh_)));
    }
    auto first = linear(state, w_hy_, b_y_);
    return detail::autoregress<T>(first.data(), spec_.max_decode_len, mode, rng, [&](int id) {
      auto x = linear(embedding(emb_, std::span<const int>(&id, 1)), w_xh_, b_h_);
      state = relu(add(x, matmul(state, w_hh_)));
      return linear(state, w_hy_, b_y_).to_vector();
    });
  }

  std::unique_ptr<Decoder<T>> clone() const override {
    return std::make_unique<RnnDecoder>(spec_, proj_.clone(), emb_.clone(), w_xh_.clone(), w_hh_.clone(),
                                        b_h_.clone(), w_hy_.clone(), b_y_.clone());
  }

 private:
  DecoderSpec spec_;
  Projector<T> proj_;
  Tensor<T> emb_, w_xh_, w_hh_, b_h_, w_hy_, b_y_;
};

}  // namespace colt
