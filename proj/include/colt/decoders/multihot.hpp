#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>

#include "colt/corpus/vocab.hpp"
#include "colt/decoders/decoder.hpp"

namespace colt {

inline std::int64_t pow10(int k) {
  std::int64_t p = 1;
  while (k-- > 0) p *= 10;
  return p;
}

// Bit 10k + x is set iff little-endian digit k of N equals x.
inline std::vector<int> encode_multihot(std::int64_t value, int digits) {
  if (digits < 1) throw std::invalid_argument("encode_multihot: digit count must be >= 1");
  if (value < 0 || value >= pow10(digits))
    throw std::out_of_range("encode_multihot: " + std::to_string(value) + " does not fit in " + std::to_string(digits) +
                            " digits");
  std::vector<int> bits(static_cast<std::size_t>(10 * digits), 0);
  for (int k = 0; k < digits; ++k) {
    bits[static_cast<std::size_t>(10 * k + value % 10)] = 1;
    value /= 10;
  }
  return bits;
}

// Per-group argmax, ties to the smaller digit.
template <class T>
std::int64_t decode_multihot(std::span<const T> logits, int digits) {
  if (logits.size() != static_cast<std::size_t>(10 * digits))
    throw ShapeError("decode_multihot", "expected " + std::to_string(10 * digits) + " logits, got " +
                                            std::to_string(logits.size()));
  std::int64_t value = 0;
  for (int k = digits - 1; k >= 0; --k) {
    int best = 0;
    for (int x = 1; x < 10; ++x)
      if (logits[static_cast<std::size_t>(10 * k + x)] > logits[static_cast<std::size_t>(10 * k + best)]) best = x;
    value = value * 10 + best;
  }
  return value;
}

// Mean-pooled seed states through a two-layer MLP (projector, ReLU, linear)
// to 10n digit logits. Only produces integers.
template <class T>
class MultiHotDecoder final : public Decoder<T> {
 public:
  MultiHotDecoder(const DecoderSpec& spec, int d_model, const corpus::Vocab& vocab, std::uint64_t seed) : spec_(spec) {
    spec.validate(1 << 20);
    Rng rng(seed);
    const auto d = static_cast<std::size_t>(d_model), w = static_cast<std::size_t>(spec.hidden_width(d_model)),
               o = static_cast<std::size_t>(spec.output_width());
    proj_ = Projector<T>::init(d, w, rng);
    w2_ = init_normal<T>({w, o}, 1.0 / std::sqrt(double(w)), rng);
    b2_ = Tensor<T>::zeros({o}, true);
    for (int x = 0; x < 10; ++x) digit_ids_[static_cast<std::size_t>(x)] = vocab.id(std::string(1, char('0' + x)));
  }

  const DecoderSpec& spec() const override { return spec_; }
  Projector<T>& projector() override { return proj_; }

  ParamList<T> parameters(const std::string& prefix) const override {
    ParamList<T> out;
    proj_.collect(prefix, out);
    out.push_back({prefix + "mlp.w2", w2_});
    out.push_back({prefix + "mlp.b2", b2_});
    return out;
  }

  // [digits, 10] logits.
  Tensor<T> logits(const Tensor<T>& h) const {
    auto pooled = reshape(mean_rows(h), {1, h.dim(1)});
    auto l = linear(relu(proj_(pooled)), w2_, b2_);
    return reshape(l, {static_cast<std::size_t>(spec_.digits), 10});
  }

  // Integer spelled by `target` (digit ids, optional trailing EOS).
  std::int64_t target_value(std::span<const int> target) const {
    std::int64_t v = 0;
    std::size_t len = target.size();
    if (len && target[len - 1] == corpus::Special::kEos) --len;
    if (len == 0) throw std::invalid_argument("multihot target has no digits");
    if (len > static_cast<std::size_t>(spec_.digits))
      throw std::invalid_argument("multihot target has " + std::to_string(len) + " digits, decoder holds " +
                                  std::to_string(spec_.digits));
    for (std::size_t i = 0; i < len; ++i) {
      const auto it = std::find(digit_ids_.begin(), digit_ids_.end(), target[i]);
      if (it == digit_ids_.end()) throw std::invalid_argument("multihot target contains a non-digit token");
      v = v * 10 + (it - digit_ids_.begin());
    }
    return v;
  }

  // Per-group log-probability of the target digit.
  Tensor<T> score(const Tensor<T>& h, std::span<const int> target, double temperature = 1.0) const override {
    auto v = target_value(target);
    std::vector<int> digit(static_cast<std::size_t>(spec_.digits));
    for (auto& x : digit) {
      x = static_cast<int>(v % 10);
      v /= 10;
    }
    return pick(detail::scaled_log_softmax(logits(h), temperature), std::span<const int>(digit));
  }

  DecodeResult decode(const Tensor<T>& h, const Decoding&, Rng&) const override {
    NoGradGuard ng;
    const auto v = decode_multihot<T>(logits(h).data(), spec_.digits);
    DecodeResult r;
    for (char c : std::to_string(v)) r.tokens.push_back(digit_ids_[static_cast<std::size_t>(c - '0')]);
    r.ended_eos = false;
    return r;
  }

  std::unique_ptr<Decoder<T>> clone() const override {
    auto d = std::make_unique<MultiHotDecoder>(*this);
    d->proj_ = proj_.clone();
    d->w2_ = w2_.clone();
    d->b2_ = b2_.clone();
    return d;
  }

 private:
  DecoderSpec spec_;
  Projector<T> proj_;
  Tensor<T> w2_, b2_;
  std::array<int, 10> digit_ids_{};
};

}  // namespace colt
