#pragma once

#include <numeric>

#include "colt/backbone/transformer.hpp"
#include "colt/decoders/decoder.hpp"

namespace colt {

// Shallow causal transformer conditioned on projected seed states placed at
// the first L_s positions. Layers, embedding, head and final norm start as
// copies of the backbone's; afterwards they are independent parameters.
template <class T>
class TransformerDecoder final : public Decoder<T> {
 public:
  TransformerDecoder(const DecoderSpec& spec, const Backbone<T>& backbone, std::uint64_t seed) : spec_(spec) {
    const auto& cfg = backbone.config();
    spec.validate(cfg.n_layers);
    const auto& src = backbone.stack();
    for (int i = 0; i < spec.n_layers; ++i) stack_.blocks.push_back(src.blocks[static_cast<std::size_t>(i)].clone());
    stack_.lnf_g = src.lnf_g.clone();
    stack_.lnf_b = src.lnf_b.clone();
    stack_.n_heads = src.n_heads;
    tok_emb_ = backbone.token_embedding().clone();
    head_ = backbone.head().clone();
    Rng rng(seed);
    const auto d = static_cast<std::size_t>(cfg.d_model);
    proj_ = Projector<T>::init(d, d, rng);
  }

  const DecoderSpec& spec() const override { return spec_; }
  const TransformerStack<T>& stack() const { return stack_; }
  const Tensor<T>& token_embedding() const { return tok_emb_; }
  const Tensor<T>& head() const { return head_; }
  Projector<T>& projector() override { return proj_; }

  ParamList<T> parameters(const std::string& prefix) const override {
    ParamList<T> out;
    proj_.collect(prefix, out);
    out.push_back({prefix + "tok_emb", tok_emb_});
    stack_.collect(prefix, out);
    out.push_back({prefix + "head", head_});
    return out;
  }

  Tensor<T> score(const Tensor<T>& h, std::span<const int> target, double temperature = 1.0) const override {
    return score_many({h}, {std::vector<int>(target.begin(), target.end())}, temperature)[0];
  }

  // All examples in one packed forward: rows [Z_i ; emb(r_i[0..L-2])].
  std::vector<Tensor<T>> score_many(const std::vector<Tensor<T>>& hs, const std::vector<std::vector<int>>& targets,
                                    double temperature = 1.0) const override {
    if (hs.size() != targets.size()) throw ShapeError("decoder.score", "seed/target count mismatch");
    std::vector<Tensor<T>> parts;
    std::vector<std::size_t> pos, lens, pred_rows;
    std::vector<int> flat_targets;
    std::size_t row = 0;
    for (std::size_t i = 0; i < hs.size(); ++i) {
      const auto& tgt = targets[i];
      if (tgt.empty()) throw ShapeError("decoder.score", "empty decode target");
      const std::size_t n = hs[i].dim(0), len = n + tgt.size() - 1;
      parts.push_back(proj_(hs[i]));
      if (tgt.size() > 1) parts.push_back(embedding(tok_emb_, std::span<const int>(tgt.data(), tgt.size() - 1)));
      for (std::size_t p = 0; p < len; ++p) pos.push_back(p);
      lens.push_back(len);
      for (std::size_t k = 0; k < tgt.size(); ++k) pred_rows.push_back(row + n - 1 + k);
      flat_targets.insert(flat_targets.end(), tgt.begin(), tgt.end());
      row += len;
    }
    auto hid = stack_.run(concat_rows(parts), pos, packed_segments(lens));
    auto logits = linear(gather_rows(hid, std::span<const std::size_t>(pred_rows)), head_);
    auto lp = pick(detail::scaled_log_softmax(logits, temperature), std::span<const int>(flat_targets));
    std::vector<Tensor<T>> out;
    std::size_t off = 0;
    for (const auto& tgt : targets) {
      out.push_back(slice_rows(lp, off, tgt.size()));
      off += tgt.size();
    }
    return out;
  }

  DecodeResult decode(const Tensor<T>& h, const Decoding& mode, Rng& rng) const override {
    NoGradGuard ng;
    KVCache<T> cache;
    auto hid = stack_.run_cached(proj_(h), cache);
    auto last = linear(slice_rows(hid, hid.dim(0) - 1, 1), head_);
    return detail::autoregress<T>(last.data(), spec_.max_decode_len, mode, rng, [&](int id) {
      auto x = embedding(tok_emb_, std::span<const int>(&id, 1));
      return linear(stack_.run_cached(x, cache), head_).to_vector();
    });
  }

  std::unique_ptr<Decoder<T>> clone() const override {
    auto d = std::unique_ptr<TransformerDecoder>(new TransformerDecoder(spec_));
    d->stack_ = stack_.clone();
    d->tok_emb_ = tok_emb_.clone();
    d->head_ = head_.clone();
    d->proj_ = proj_.clone();
    return d;
  }

 private:
  explicit TransformerDecoder(const DecoderSpec& spec) : spec_(spec) {}

  DecoderSpec spec_;
  TransformerStack<T> stack_;
  Tensor<T> tok_emb_, head_;
  Projector<T> proj_;
};

}  // namespace colt
