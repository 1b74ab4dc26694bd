#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "colt/corpus/examples.hpp"
#include "colt/numerics/optim.hpp"
#include "colt/orchestrator/model.hpp"

namespace colt::sft {

class BatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Rows whose logits predict one example's backbone targets.
struct MainTarget {
  std::vector<std::size_t> rows;
  std::vector<int> ids;
};

struct LatentTarget {
  std::size_t seed_row = 0;  // first row of the seed span
  std::size_t seed_len = 0;
  int trigger = -1;
  std::vector<int> decode_ids;
};

// Packed layout: rounds that share a reasoning chain are laid out once as
// the spliced chain, each seed span placed after it and attending only the
// chain prefix it was emitted at. Equivalent to one sequence per example.
struct SftBatch {
  std::vector<int> ids;
  std::vector<std::size_t> positions;
  std::vector<AttnSegment> segments;
  std::vector<MainTarget> main;  // one per example
  std::vector<LatentTarget> latent;

  std::size_t examples() const { return main.size(); }
};

namespace detail {

inline bool is_prefix(std::span<const int> a, std::span<const int> b) {
  return a.size() <= b.size() && std::equal(a.begin(), a.end(), b.begin());
}

inline std::vector<int> chain_of(const corpus::ToolCallExample& ex) {
  std::vector<int> c = ex.context_ids;
  if (!ex.is_latent()) c.insert(c.end(), ex.target_seed_ids.begin(), ex.target_seed_ids.end());
  return c;
}

}  // namespace detail

// max_decode_len of 0 skips the decode-length check.
inline SftBatch build_batch(std::span<const corpus::ToolCallExample> examples, std::size_t max_context,
                            int max_decode_len = 0) {
  if (examples.empty()) throw BatchError("batch has no examples");
  SftBatch b;
  std::size_t gi = 0;
  while (gi < examples.size()) {
    auto chain = detail::chain_of(examples[gi]);
    std::size_t gj = gi + 1;
    for (; gj < examples.size(); ++gj) {
      auto f = detail::chain_of(examples[gj]);
      if (detail::is_prefix(chain, f))
        chain = std::move(f);
      else if (!detail::is_prefix(f, chain))
        break;
    }
    if (chain.size() > max_context)
      throw BatchError("example needs " + std::to_string(chain.size()) + " positions, context is " +
                       std::to_string(max_context));
    const std::size_t off = b.ids.size();
    b.ids.insert(b.ids.end(), chain.begin(), chain.end());
    for (std::size_t i = 0; i < chain.size(); ++i) b.positions.push_back(i);
    b.segments.push_back({off, chain.size(), off, chain.size()});

    for (std::size_t e = gi; e < gj; ++e) {
      const auto& ex = examples[e];
      const std::size_t p = ex.context_ids.size();
      const std::size_t len = ex.target_seed_ids.size();
      if (len == 0) throw BatchError("example " + std::to_string(e) + " has an empty target span");
      if (p == 0) throw BatchError("example " + std::to_string(e) + " has an empty context");
      MainTarget mt;
      mt.ids = ex.target_seed_ids;
      if (!ex.is_latent()) {
        for (std::size_t k = 0; k < len; ++k) mt.rows.push_back(off + p - 1 + k);
      } else {
        if (!corpus::Vocab::is_trigger(ex.target_seed_ids.back()))
          throw BatchError("example " + std::to_string(e) + ": seed span must end in a trigger");
        if (max_decode_len > 0 && static_cast<int>(ex.target_decode_ids.size()) > max_decode_len)
          throw BatchError("example " + std::to_string(e) + ": decode target of " +
                           std::to_string(ex.target_decode_ids.size()) + " tokens exceeds max_decode_len " +
                           std::to_string(max_decode_len));
        if (p + len > max_context)
          throw BatchError("example " + std::to_string(e) + " seed span runs past the context");
        const std::size_t span = b.ids.size();
        b.ids.insert(b.ids.end(), ex.target_seed_ids.begin(), ex.target_seed_ids.end());
        for (std::size_t k = 0; k < len; ++k) b.positions.push_back(p + k);
        b.segments.push_back({span, len, span, len, off, p});
        mt.rows.push_back(off + p - 1);
        for (std::size_t k = 0; k + 1 < len; ++k) mt.rows.push_back(span + k);
        b.latent.push_back({span, len, ex.target_seed_ids.back(), ex.target_decode_ids});
      }
      b.main.push_back(std::move(mt));
    }
    gi = gj;
  }
  return b;
}

// Per-example mean NLL of the backbone targets, then the batch mean.
template <class T>
Tensor<T> loss_main(const SftBatch& b, const StepOutput<T>& out) {
  std::vector<std::size_t> rows;
  std::vector<int> ids;
  std::vector<T> w;
  const double n = static_cast<double>(b.examples());
  for (const auto& m : b.main) {
    rows.insert(rows.end(), m.rows.begin(), m.rows.end());
    ids.insert(ids.end(), m.ids.begin(), m.ids.end());
    w.insert(w.end(), m.rows.size(), static_cast<T>(-1.0 / (static_cast<double>(m.rows.size()) * n)));
  }
  auto lp = pick(log_softmax(gather_rows(out.logits, std::span<const std::size_t>(rows))), std::span<const int>(ids));
  const std::size_t nw = w.size();
  return sum(mul(lp, Tensor<T>::from({nw}, std::move(w))));
}

// Per-example mean NLL of the decoded text given the seed states taken from
// the same forward pass, then the mean over latent examples.
template <class T>
Tensor<T> loss_lat(const SftBatch& b, const StepOutput<T>& out, const DecoderSet<T>& decoders) {
  if (b.latent.empty()) return Tensor<T>::scalar(T(0));
  std::map<std::size_t, std::vector<std::size_t>> by_decoder;
  for (std::size_t i = 0; i < b.latent.size(); ++i) by_decoder[decoders.map.route(b.latent[i].trigger)].push_back(i);
  const double n = static_cast<double>(b.latent.size());
  Tensor<T> total;
  for (const auto& [di, idx] : by_decoder) {
    if (di >= decoders.decoders.size()) throw UnmappedTrigger(b.latent[idx.front()].trigger);
    std::vector<Tensor<T>> hs;
    std::vector<std::vector<int>> targets;
    for (auto i : idx) {
      hs.push_back(slice_rows(out.hidden, b.latent[i].seed_row, b.latent[i].seed_len));
      targets.push_back(b.latent[i].decode_ids);
    }
    auto scores = decoders.decoders[di]->score_many(hs, targets, 1.0);
    for (const auto& s : scores) {
      auto term = scale(sum(s), static_cast<T>(-1.0 / (static_cast<double>(s.numel()) * n)));
      total = total.defined() ? add(total, term) : term;
    }
  }
  return total;
}

template <class T>
struct Losses {
  Tensor<T> main, lat, sup;
};

template <class T>
Losses<T> compute_losses(const SftBatch& b, const ColtModel<T>& m) {
  auto out = m.backbone.forward_layout(b.ids, b.positions, b.segments);
  Losses<T> l;
  l.main = loss_main(b, out);
  l.lat = loss_lat(b, out, m.decoders);
  l.sup = add(l.main, l.lat);
  return l;
}

struct StepMetrics {
  long step = 0;
  double l_main = 0, l_lat = 0, l_sup = 0;
  double wall_ms = 0;
  bool finite = true;
};

// Zero grads, backward on L_sup, one optimizer step. A non-finite loss skips
// the update.
template <class T>
StepMetrics sft_step(const SftBatch& b, const ColtModel<T>& m, AdamW<T>& opt, double lr, double clip_norm = 0.0) {
  const auto t0 = std::chrono::steady_clock::now();
  opt.zero_grad();
  auto l = compute_losses(b, m);
  StepMetrics r;
  r.l_main = double(l.main.item());
  r.l_lat = double(l.lat.item());
  r.l_sup = double(l.sup.item());
  r.finite = std::isfinite(r.l_sup);
  if (r.finite) {
    backward(l.sup);
    if (clip_norm > 0) clip_grad_norm(opt.params(), clip_norm);
    opt.step(lr);
  }
  r.step = opt.steps();
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

struct SftConfig {
  int epochs = 2;
  double lr = 1e-4;
  int batch = 16;  // examples per step
  std::uint64_t seed = 0;
  double clip_norm = 0.0;
  int max_nonfinite = 3;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("sft: epochs must be >= 1");
    if (!(lr >= 0.0)) throw std::invalid_argument("sft: lr must be nonnegative");
    if (batch < 1) throw std::invalid_argument("sft: batch must be >= 1");
    if (max_nonfinite < 1) throw std::invalid_argument("sft: max_nonfinite must be >= 1");
  }
};

struct TrainLog {
  std::vector<StepMetrics> steps;
  int skipped = 0;
  bool halted = false;
};

inline void write_csv_header(std::ostream& os) { os << "step,L_main,L_lat,L_sup,wall_ms\n"; }

inline void write_csv_row(std::ostream& os, const StepMetrics& s) {
  os << s.step << ',' << s.l_main << ',' << s.l_lat << ',' << s.l_sup << ',' << s.wall_ms << '\n';
}

// Problems are shuffled each epoch and their rounds kept in order, so a
// batch of consecutive examples packs into few chains.
template <class T>
TrainLog train_sft(ColtModel<T>& m, const std::vector<std::vector<corpus::ToolCallExample>>& problems,
                   const SftConfig& cfg, std::ostream* csv = nullptr,
                   const std::function<void(int epoch, const TrainLog&)>& on_epoch = {}) {
  cfg.validate();
  if (problems.empty()) throw BatchError("no training problems");
  const std::size_t max_ctx = static_cast<std::size_t>(m.backbone.config().max_context);
  const int max_dec = m.has_decoders() ? m.decoders.primary_spec().max_decode_len : 0;
  AdamW<T> opt(m.parameters());
  TrainLog log;
  if (csv) {
    write_csv_header(*csv);
    *csv << std::setprecision(8);
  }
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(problems.size());
  std::iota(order.begin(), order.end(), 0);
  int bad_run = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    std::vector<corpus::ToolCallExample> flat;
    for (auto i : order) flat.insert(flat.end(), problems[i].begin(), problems[i].end());
    for (std::size_t s = 0; s < flat.size(); s += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), flat.size() - s);
      auto batch = build_batch(std::span<const corpus::ToolCallExample>(flat).subspan(s, n), max_ctx, max_dec);
      auto r = sft_step(batch, m, opt, cfg.lr, cfg.clip_norm);
      r.step = static_cast<long>(log.steps.size()) + 1;
      if (csv) write_csv_row(*csv, r);
      if (!r.finite) {
        ++log.skipped;
        if (++bad_run >= cfg.max_nonfinite) {
          log.halted = true;
          log.steps.push_back(r);
          return log;
        }
      } else {
        bad_run = 0;
      }
      log.steps.push_back(r);
    }
    if (on_epoch) on_epoch(epoch, log);
  }
  return log;
}

}  // namespace colt::sft
