#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "colt/numerics/attention.hpp"
#include "colt/numerics/ops.hpp"
#include "colt/numerics/optim.hpp"
#include "colt/numerics/random.hpp"

namespace colt {

struct BackboneConfig {
  int vocab_size = 0;
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int max_context = 256;
  int ff_mult = 4;

  void validate() const {
    if (vocab_size <= 0) throw std::invalid_argument("backbone: vocab_size must be positive");
    if (n_layers < 1) throw std::invalid_argument("backbone: n_layers must be >= 1");
    if (n_heads < 1 || d_model % n_heads != 0)
      throw std::invalid_argument("backbone: d_model must be divisible by n_heads");
    if ((d_model / n_heads) % 2 != 0) throw std::invalid_argument("backbone: head width must be even");
    if (max_context < 2) throw std::invalid_argument("backbone: max_context too small");
    if (ff_mult < 1) throw std::invalid_argument("backbone: ff_mult must be >= 1");
  }
};

class ContextOverflow : public std::runtime_error {
 public:
  ContextOverflow(std::size_t need, std::size_t limit)
      : std::runtime_error("context overflow: " + std::to_string(need) + " positions exceed limit " +
                           std::to_string(limit)) {}
};

template <class T>
Tensor<T> init_normal(Shape shape, double stddev, Rng& rng) {
  auto t = Tensor<T>::zeros(std::move(shape), true);
  for (auto& v : t.data()) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

// Pre-norm transformer layer: x + attn(ln(x)), then x + ff(ln(x)).
template <class T>
struct Block {
  Tensor<T> ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;

  static Block init(int d, int ff, int n_layers, Rng& rng) {
    const double s = 0.02, so = 0.02 / std::sqrt(2.0 * n_layers);
    const auto du = static_cast<std::size_t>(d), fu = static_cast<std::size_t>(ff);
    Block b;
    b.ln1_g = Tensor<T>::full({du}, T(1), true);
    b.ln1_b = Tensor<T>::zeros({du}, true);
    b.wq = init_normal<T>({du, du}, s, rng);
    b.wk = init_normal<T>({du, du}, s, rng);
    b.wv = init_normal<T>({du, du}, s, rng);
    b.wo = init_normal<T>({du, du}, so, rng);
    b.ln2_g = Tensor<T>::full({du}, T(1), true);
    b.ln2_b = Tensor<T>::zeros({du}, true);
    b.w1 = init_normal<T>({du, fu}, s, rng);
    b.b1 = Tensor<T>::zeros({fu}, true);
    b.w2 = init_normal<T>({fu, du}, so, rng);
    b.b2 = Tensor<T>::zeros({du}, true);
    return b;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + "ln1.g", ln1_g});
    out.push_back({prefix + "ln1.b", ln1_b});
    out.push_back({prefix + "attn.wq", wq});
    out.push_back({prefix + "attn.wk", wk});
    out.push_back({prefix + "attn.wv", wv});
    out.push_back({prefix + "attn.wo", wo});
    out.push_back({prefix + "ln2.g", ln2_g});
    out.push_back({prefix + "ln2.b", ln2_b});
    out.push_back({prefix + "ff.w1", w1});
    out.push_back({prefix + "ff.b1", b1});
    out.push_back({prefix + "ff.w2", w2});
    out.push_back({prefix + "ff.b2", b2});
  }

  Block clone() const {
    return {ln1_g.clone(), ln1_b.clone(), wq.clone(), wk.clone(), wv.clone(), wo.clone(),
            ln2_g.clone(), ln2_b.clone(), w1.clone(), b1.clone(), w2.clone(), b2.clone()};
  }
};

// Per-layer rotated keys and values of every position fed so far.
template <class T>
struct KVCache {
  std::vector<std::vector<T>> k, v;
  std::size_t length = 0;
  std::size_t width = 0;

  KVCache() = default;
  KVCache(std::size_t layers, std::size_t d) : k(layers), v(layers), width(d) {}

  void truncate(std::size_t len) {
    if (len > length) throw std::out_of_range("KVCache::truncate beyond cached length");
    for (auto& x : k) x.resize(len * width);
    for (auto& x : v) x.resize(len * width);
    length = len;
  }
};

// Layers plus final norm, shared by the backbone and the transformer decoder.
template <class T>
struct TransformerStack {
  std::vector<Block<T>> blocks;
  Tensor<T> lnf_g, lnf_b;
  std::size_t n_heads = 1;

  std::size_t width() const { return lnf_g.numel(); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + "layers." + std::to_string(i) + ".", out);
    out.push_back({prefix + "lnf.g", lnf_g});
    out.push_back({prefix + "lnf.b", lnf_b});
  }

  // Packed forward over independent sequences. `positions` gives each row's
  // position within its own sequence.
  Tensor<T> run(Tensor<T> x, std::span<const std::size_t> positions, const std::vector<AttnSegment>& segs) const {
    for (const auto& b : blocks) {
      auto h = layer_norm(x, b.ln1_g, b.ln1_b);
      auto q = rotary(linear(h, b.wq), positions, n_heads);
      auto k = rotary(linear(h, b.wk), positions, n_heads);
      auto v = linear(h, b.wv);
      x = add(x, linear(causal_attention(q, k, v, n_heads, segs), b.wo));
      auto h2 = layer_norm(x, b.ln2_g, b.ln2_b);
      x = add(x, linear(relu(linear(h2, b.w1, b.b1)), b.w2, b.b2));
    }
    return layer_norm(x, lnf_g, lnf_b);
  }

  // Incremental forward of new rows for a single sequence continuing `cache`.
  Tensor<T> run_cached(Tensor<T> x, KVCache<T>& cache) const {
    const std::size_t n = x.dim(0), d = x.dim(1), past = cache.length;
    if (cache.k.size() != blocks.size()) cache = KVCache<T>(blocks.size(), d);
    std::vector<std::size_t> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = past + i;
    const std::vector<AttnSegment> segs{{0, n, 0, past + n}};
    for (std::size_t li = 0; li < blocks.size(); ++li) {
      const auto& b = blocks[li];
      auto h = layer_norm(x, b.ln1_g, b.ln1_b);
      auto q = rotary(linear(h, b.wq), std::span<const std::size_t>(pos), n_heads);
      auto k = rotary(linear(h, b.wk), std::span<const std::size_t>(pos), n_heads);
      auto v = linear(h, b.wv);
      auto& ck = cache.k[li];
      auto& cv = cache.v[li];
      ck.insert(ck.end(), k.data().begin(), k.data().end());
      cv.insert(cv.end(), v.data().begin(), v.data().end());
      auto kall = Tensor<T>::from({past + n, d}, ck);
      auto vall = Tensor<T>::from({past + n, d}, cv);
      x = add(x, linear(causal_attention(q, kall, vall, n_heads, segs), b.wo));
      auto h2 = layer_norm(x, b.ln2_g, b.ln2_b);
      x = add(x, linear(relu(linear(h2, b.w1, b.b1)), b.w2, b.b2));
    }
    cache.length = past + n;
    return layer_norm(x, lnf_g, lnf_b);
  }

  TransformerStack clone() const {
    TransformerStack s;
    for (const auto& b : blocks) s.blocks.push_back(b.clone());
    s.lnf_g = lnf_g.clone();
    s.lnf_b = lnf_b.clone();
    s.n_heads = n_heads;
    return s;
  }
};

template <class T>
struct StepOutput {
  Tensor<T> logits;  // [N, V]
  Tensor<T> hidden;  // [N, d], final layer after the closing norm
};

// Rows of several sequences processed in one packed forward.
template <class T>
struct PackedOutput {
  Tensor<T> logits;
  Tensor<T> hidden;
  std::vector<std::size_t> offsets;  // first row of each sequence
};

// Decoder-only causal language model.
template <class T>
class Backbone {
 public:
  Backbone() = default;

  Backbone(const BackboneConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(seed);
    const auto d = static_cast<std::size_t>(cfg.d_model), v = static_cast<std::size_t>(cfg.vocab_size);
    tok_emb_ = init_normal<T>({v, d}, 0.02, rng);
    stack_.n_heads = static_cast<std::size_t>(cfg.n_heads);
    for (int i = 0; i < cfg.n_layers; ++i)
      stack_.blocks.push_back(Block<T>::init(cfg.d_model, cfg.d_model * cfg.ff_mult, cfg.n_layers, rng));
    stack_.lnf_g = Tensor<T>::full({d}, T(1), true);
    stack_.lnf_b = Tensor<T>::zeros({d}, true);
    head_ = init_normal<T>({d, v}, 0.02, rng);
  }

  const BackboneConfig& config() const { return cfg_; }

  ParamList<T> parameters() const {
    ParamList<T> out;
    out.push_back({"backbone.tok_emb", tok_emb_});
    stack_.collect("backbone.", out);
    out.push_back({"backbone.head", head_});
    return out;
  }

  // Full-sequence forward. When `cache` is given, `ids` continue the cached
  // prefix and only the new positions are returned.
  StepOutput<T> forward(std::span<const int> ids, KVCache<T>* cache = nullptr) const {
    check_ids(ids);
    const std::size_t past = cache ? cache->length : 0;
    if (past + ids.size() > static_cast<std::size_t>(cfg_.max_context))
      throw ContextOverflow(past + ids.size(), static_cast<std::size_t>(cfg_.max_context));
    auto x = embedding(tok_emb_, ids);
    Tensor<T> hid;
    if (cache) {
      hid = stack_.run_cached(x, *cache);
    } else {
      std::vector<std::size_t> pos(ids.size());
      std::iota(pos.begin(), pos.end(), 0);
      hid = stack_.run(x, pos, packed_segments({ids.size()}));
    }
    return {linear(hid, head_), hid};
  }

  PackedOutput<T> forward_packed(const std::vector<std::vector<int>>& seqs) const {
    std::vector<int> all;
    std::vector<std::size_t> pos, lens, offs;
    for (const auto& s : seqs) {
      check_ids(s);
      if (s.size() > static_cast<std::size_t>(cfg_.max_context))
        throw ContextOverflow(s.size(), static_cast<std::size_t>(cfg_.max_context));
      offs.push_back(all.size());
      all.insert(all.end(), s.begin(), s.end());
      for (std::size_t i = 0; i < s.size(); ++i) pos.push_back(i);
      lens.push_back(s.size());
    }
    auto x = embedding(tok_emb_, std::span<const int>(all));
    auto hid = stack_.run(x, pos, packed_segments(lens));
    return {linear(hid, head_), hid, offs};
  }

  // Rows with caller-chosen rotary positions and attention segments.
  StepOutput<T> forward_layout(std::span<const int> ids, std::span<const std::size_t> positions,
                               const std::vector<AttnSegment>& segs) const {
    check_ids(ids);
    for (auto p : positions)
      if (p >= static_cast<std::size_t>(cfg_.max_context))
        throw ContextOverflow(p + 1, static_cast<std::size_t>(cfg_.max_context));
    auto hid = stack_.run(embedding(tok_emb_, ids), positions, segs);
    return {linear(hid, head_), hid};
  }

  const Tensor<T>& token_embedding() const { return tok_emb_; }
  const Tensor<T>& head() const { return head_; }
  const TransformerStack<T>& stack() const { return stack_; }

  Backbone clone() const {
    Backbone b;
    b.cfg_ = cfg_;
    b.tok_emb_ = tok_emb_.clone();
    b.stack_ = stack_.clone();
    b.head_ = head_.clone();
    return b;
  }

 private:
  void check_ids(std::span<const int> ids) const {
    for (int id : ids)
      if (id < 0 || id >= cfg_.vocab_size)
        throw IndexError("backbone.forward", static_cast<std::size_t>(id), static_cast<std::size_t>(cfg_.vocab_size));
  }

  BackboneConfig cfg_;
  Tensor<T> tok_emb_;
  TransformerStack<T> stack_;
  Tensor<T> head_;
};

}  // namespace colt
