#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "colt/corpus/examples.hpp"
#include "colt/harness/eval.hpp"

namespace colt::harness {

// Examples grouped per problem, rounds in order.
inline std::vector<std::vector<corpus::ToolCallExample>> sft_problems(const RunConfig& cfg, const corpus::Vocab& v,
                                                                      const std::vector<corpus::Problem>& ps,
                                                                      ModelKind kind) {
  std::vector<std::vector<corpus::ToolCallExample>> out;
  out.reserve(ps.size());
  for (const auto& p : ps) {
    if (kind == ModelKind::Cot) {
      out.push_back({corpus::build_cot_example(v, p)});
      continue;
    }
    switch (cfg.granularity) {
      case Granularity::Step: out.push_back(corpus::build_sft_examples(v, p, cfg.decoder.seed_len)); break;
      case Granularity::Number: out.push_back(corpus::build_number_call_examples(v, p, cfg.decoder.seed_len)); break;
      case Granularity::Chunk:
        out.push_back(corpus::build_chunked_examples(v, p, cfg.decoder.seed_len, cfg.chunk_tokens));
        break;
    }
  }
  return out;
}

template <class T>
struct Trained {
  ColtModel<T> model;
  sft::TrainLog log;
  double wall_s = 0.0;
};

using EpochHook = std::function<void(int epoch, const sft::TrainLog&)>;

// CoLT when kind is Colt, otherwise plain next-token training on the full
// text chain with the same backbone, corpus and schedule.
template <class T = float>
Trained<T> train_model(const RunConfig& cfg, const corpus::Vocab& v, const std::vector<corpus::Problem>& train,
                       ModelKind kind, std::ostream* csv = nullptr, const EpochHook& on_epoch = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  Trained<T> r{build_model<T>(cfg, v, kind), {}, 0.0};
  auto sc = cfg.sft;
  sc.seed = cfg.seed;
  r.log = sft::train_sft(r.model, sft_problems(cfg, v, train, kind), sc, csv, on_epoch);
  r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

template <class T = float>
Trained<T> train_cot_baseline(const RunConfig& cfg, const corpus::Vocab& v, const std::vector<corpus::Problem>& train,
                              std::ostream* csv = nullptr, const EpochHook& on_epoch = {}) {
  return train_model<T>(cfg, v, train, ModelKind::Cot, csv, on_epoch);
}

// ---- sweeps ----

struct Cell {
  std::string name;
  ModelKind kind = ModelKind::Colt;
  RunConfig cfg;
};

struct CellResult {
  std::string cell;
  std::string kind;
  std::string family;
  int n_layers = 0;
  int seed_len = 0;
  int epochs = 0;
  std::uint64_t seed = 0;
  int epoch = 0;  // epoch the row was measured at
  double accuracy = std::nan("");
  double mean_latent_length = std::nan("");
  double train_s = 0.0;
  double eval_s = 0.0;
  std::size_t seed_free = 0;
  std::size_t n = 0;
  std::string status = "ok";
  std::string error;
};

inline const char* kSweepCsvHeader =
    "cell,kind,family,n_layers,seed_len,epochs,seed,epoch,accuracy,mean_#L,train_s,eval_s,seed_free,n,status,error";

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string num17(double x) {
  if (std::isnan(x)) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

inline double parse_double(const std::string& s) { return s == "nan" ? std::nan("") : std::stod(s); }

}  // namespace detail

inline std::string sweep_csv_row(const CellResult& r) {
  using detail::csv_field;
  using detail::num17;
  std::ostringstream os;
  os << csv_field(r.cell) << ',' << r.kind << ',' << r.family << ',' << r.n_layers << ',' << r.seed_len << ','
     << r.epochs << ',' << r.seed << ',' << r.epoch << ',' << num17(r.accuracy) << ',' << num17(r.mean_latent_length)
     << ',' << num17(r.train_s) << ',' << num17(r.eval_s) << ',' << r.seed_free << ',' << r.n << ',' << r.status
     << ',' << csv_field(r.error);
  return os.str();
}

inline void write_sweep_csv(std::ostream& os, const std::vector<CellResult>& rows) {
  os << kSweepCsvHeader << '\n';
  for (const auto& r : rows) os << sweep_csv_row(r) << '\n';
}

inline std::vector<CellResult> read_sweep_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kSweepCsvHeader) throw std::runtime_error("sweep csv: unexpected header");
  std::vector<CellResult> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 16) throw std::runtime_error("sweep csv: expected 16 fields, got " + std::to_string(f.size()));
    CellResult r;
    r.cell = f[0];
    r.kind = f[1];
    r.family = f[2];
    r.n_layers = std::stoi(f[3]);
    r.seed_len = std::stoi(f[4]);
    r.epochs = std::stoi(f[5]);
    r.seed = std::stoull(f[6]);
    r.epoch = std::stoi(f[7]);
    r.accuracy = detail::parse_double(f[8]);
    r.mean_latent_length = detail::parse_double(f[9]);
    r.train_s = detail::parse_double(f[10]);
    r.eval_s = detail::parse_double(f[11]);
    r.seed_free = std::stoull(f[12]);
    r.n = std::stoull(f[13]);
    r.status = f[14];
    r.error = f[15];
    out.push_back(std::move(r));
  }
  return out;
}

inline CellResult blank_result(const Cell& c, int epoch) {
  CellResult r;
  r.cell = c.name;
  r.kind = kind_name(c.kind);
  r.family = c.kind == ModelKind::Cot ? "none" : family_name(c.cfg.decoder.family);
  r.n_layers = c.kind == ModelKind::Cot ? 0 : c.cfg.decoder.n_layers;
  r.seed_len = c.kind == ModelKind::Cot ? 0 : c.cfg.decoder.seed_len;
  r.epochs = c.cfg.sft.epochs;
  r.seed = c.cfg.seed;
  r.epoch = epoch;
  return r;
}

// Trains one cell and evaluates after every epoch in `eval_epochs` (the last
// epoch is always evaluated), saving the model at the epochs in `save_at`.
// Failures come back as rows, never throws.
inline std::vector<CellResult> run_cell(const Cell& c, const corpus::Dataset& data, const corpus::Vocab& v,
                                        std::set<int> eval_epochs = {}, const std::map<int, std::string>& save_at = {}) {
  eval_epochs.insert(c.cfg.sft.epochs);
  std::vector<CellResult> rows;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    double eval_total = 0.0;
    ColtModel<float>* live = nullptr;
    auto hook = [&](int epoch, const sft::TrainLog&) {
      if (!live) return;
      if (auto it = save_at.find(epoch); it != save_at.end()) save_model(it->second, c.kind, c.cfg, *live, v);
      if (!eval_epochs.count(epoch)) return;
      auto rep = evaluate(*live, data.test, v, c.cfg.infer);
      eval_total += rep.wall_s;
      auto r = blank_result(c, epoch);
      r.accuracy = rep.accuracy;
      r.mean_latent_length = rep.mean_latent_length;
      r.eval_s = rep.wall_s;
      r.seed_free = rep.seed_free;
      r.n = rep.n;
      r.train_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() - eval_total;
      rows.push_back(r);
    };
    c.cfg.validate(v.size());
    auto model = build_model<float>(c.cfg, v, c.kind);
    live = &model;
    auto sc = c.cfg.sft;
    sc.seed = c.cfg.seed;
    auto log = sft::train_sft(model, sft_problems(c.cfg, v, data.train, c.kind), sc, nullptr, hook);
    if (log.halted) throw std::runtime_error("training halted after repeated non-finite losses");
  } catch (const std::exception& e) {
    auto r = blank_result(c, 0);
    r.status = "failed";
    r.error = e.what();
    rows.push_back(r);
  }
  return rows;
}

// Each (cell, seed) result lives in its own file under dir/cells, so an
// interrupted sweep resumes and results aggregate from files.
inline std::string cell_file(const std::string& dir, const Cell& c) {
  return dir + "/cells/" + config_hash(c.cfg) + "-" + kind_name(c.kind) + ".csv";
}

inline std::vector<CellResult> run_cell_cached(const Cell& c, const corpus::Dataset& data, const corpus::Vocab& v,
                                               const std::string& dir, std::set<int> eval_epochs = {},
                                               std::ostream* progress = nullptr,
                                               const std::map<int, std::string>& save_at = {}) {
  namespace fs = std::filesystem;
  const auto path = cell_file(dir, c);
  if (fs::exists(path)) {
    std::ifstream in(path);
    auto rows = read_sweep_csv(in);
    bool complete = !rows.empty() && rows.back().status == "ok";
    for (const auto& [e, ck] : save_at) complete = complete && fs::exists(ck);
    if (complete) {
      for (auto& r : rows) r.cell = c.name;
      return rows;
    }
  }
  if (progress) *progress << "  training " << c.name << " seed " << c.cfg.seed << " ..." << std::flush;
  for (const auto& [e, ck] : save_at)
    if (auto p = fs::path(ck).parent_path(); !p.empty()) fs::create_directories(p);
  auto rows = run_cell(c, data, v, eval_epochs, save_at);
  if (progress) {
    const auto& b = rows.back();
    if (b.status == "ok")
      *progress << " acc " << b.accuracy << " #L " << b.mean_latent_length << " (" << b.train_s << " s)\n";
    else
      *progress << " failed: " << b.error << '\n';
  }
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  write_sweep_csv(out, rows);
  return rows;
}

struct CellSummary {
  std::string cell;
  int epoch = 0;
  std::size_t runs = 0, failed = 0;
  double acc_mean = 0, acc_std = 0, len_mean = 0, len_std = 0;
};

inline std::vector<CellSummary> summarize(const std::vector<CellResult>& rows) {
  std::map<std::pair<std::string, int>, std::vector<const CellResult*>> by;
  std::vector<std::pair<std::string, int>> order;
  for (const auto& r : rows) {
    auto k = std::make_pair(r.cell, r.epoch);
    if (!by.count(k)) order.push_back(k);
    by[k].push_back(&r);
  }
  std::vector<CellSummary> out;
  for (const auto& k : order) {
    CellSummary s;
    s.cell = k.first;
    s.epoch = k.second;
    std::vector<double> a, l;
    for (const auto* r : by[k]) {
      ++s.runs;
      if (r->status != "ok") {
        ++s.failed;
        continue;
      }
      a.push_back(r->accuracy);
      l.push_back(r->mean_latent_length);
    }
    auto ms = [](const std::vector<double>& x, double& m, double& sd) {
      m = sd = std::nan("");
      if (x.empty()) return;
      m = 0;
      for (double y : x) m += y;
      m /= double(x.size());
      double v = 0;
      for (double y : x) v += (y - m) * (y - m);
      sd = x.size() > 1 ? std::sqrt(v / double(x.size() - 1)) : 0.0;
    };
    ms(a, s.acc_mean, s.acc_std);
    ms(l, s.len_mean, s.len_std);
    out.push_back(s);
  }
  return out;
}

struct SweepAxes {
  std::vector<int> decoder_layers;    // empty keeps the base value
  std::vector<int> seed_lens;
  std::vector<DecoderFamily> families;
  std::vector<int> epoch_points;  // evaluated inside one run per cell
  bool with_cot = false;
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

inline std::vector<Cell> expand_cells(const RunConfig& base, const SweepAxes& ax) {
  auto or_base = [](const std::vector<int>& v, int b) { return v.empty() ? std::vector<int>{b} : v; };
  auto fams = ax.families.empty() ? std::vector<DecoderFamily>{base.decoder.family} : ax.families;
  auto epochs = base.sft.epochs;
  if (!ax.epoch_points.empty()) epochs = *std::max_element(ax.epoch_points.begin(), ax.epoch_points.end());
  std::vector<Cell> cells;
  for (auto seed : ax.seeds) {
    for (auto fam : fams)
      for (int nl : or_base(ax.decoder_layers, base.decoder.n_layers))
        for (int ls : or_base(ax.seed_lens, base.decoder.seed_len)) {
          Cell c;
          c.cfg = base;
          c.cfg.decoder.family = fam;
          c.cfg.decoder.n_layers = nl;
          c.cfg.decoder.seed_len = ls;
          c.cfg.sft.epochs = epochs;
          if (fam == DecoderFamily::MultiHot) {
            c.cfg.granularity = Granularity::Number;
          } else if (c.cfg.granularity == Granularity::Number) {
            c.cfg.granularity = Granularity::Step;
          }
          set_key(c.cfg, "seed", std::to_string(seed));
          c.name = family_name(fam) + "/Nd" + std::to_string(nl) + "/Ls" + std::to_string(ls);
          cells.push_back(c);
        }
    if (ax.with_cot) {
      Cell c;
      c.kind = ModelKind::Cot;
      c.cfg = base;
      c.cfg.sft.epochs = epochs;
      set_key(c.cfg, "seed", std::to_string(seed));
      c.name = "cot";
      cells.push_back(c);
    }
  }
  return cells;
}

// Writes dir/sweep.csv (one row per run and evaluated epoch) and
// dir/manifest.json (axes, columns, per-cell mean and std).
inline std::vector<CellResult> ablation_sweep(const RunConfig& base, const SweepAxes& ax, const corpus::Dataset& data,
                                              const corpus::Vocab& v, const std::string& dir,
                                              std::ostream* progress = nullptr) {
  std::filesystem::create_directories(dir);
  std::set<int> points(ax.epoch_points.begin(), ax.epoch_points.end());
  std::vector<CellResult> rows;
  for (const auto& c : expand_cells(base, ax)) {
    auto r = run_cell_cached(c, data, v, dir, points, progress);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  {
    std::ofstream out(dir + "/sweep.csv");
    write_sweep_csv(out, rows);
  }
  nlohmann::ordered_json m;
  m["revision"] = kRevision;
  m["base_config"] = config_to_json(base);
  m["base_config_hash"] = config_hash(base);
  m["axes"] = {{"decoder_layers", ax.decoder_layers},
               {"seed_lens", ax.seed_lens},
               {"epoch_points", ax.epoch_points},
               {"with_cot", ax.with_cot},
               {"seeds", ax.seeds}};
  m["axes"]["families"] = nlohmann::ordered_json::array();
  for (auto f : ax.families) m["axes"]["families"].push_back(family_name(f));
  m["files"] = {{"rows", "sweep.csv"}};
  m["columns"] = detail::split_csv_line(kSweepCsvHeader);
  m["x_axis"] = ax.epoch_points.empty() ? "cell" : "epoch";
  m["y_axes"] = {"accuracy", "mean_#L"};
  m["summary"] = nlohmann::ordered_json::array();
  for (const auto& s : summarize(rows))
    m["summary"].push_back({{"cell", s.cell},
                            {"epoch", s.epoch},
                            {"runs", s.runs},
                            {"failed", s.failed},
                            {"accuracy_mean", s.acc_mean},
                            {"accuracy_std", s.acc_std},
                            {"mean_#L_mean", s.len_mean},
                            {"mean_#L_std", s.len_std}});
  std::ofstream(dir + "/manifest.json") << m.dump(2) << '\n';
  return rows;
}

}  // namespace colt::harness
