// colt: data generation, training, inference, evaluation and sweeps.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "colt/harness/experiments.hpp"

using namespace colt;
using namespace colt::harness;
namespace fs = std::filesystem;

namespace {

struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Config file, then --set pairs, then named flags.
struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> flags;
  std::string data_dir;

  void add(CLI::App* app) {
    app->add_option("--config", config_path, "key.path = value file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override one key, key.path=value (repeatable)");
  }

  // Named flag bound to a config key; applied only when given.
  template <class V>
  void flag(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(
        name, [this, key](const std::string& v) { flags.emplace_back(key, v); }, help + " (" + key + ")");
  }

  RunConfig resolve() const {
    auto c = default_config();
    if (!config_path.empty()) apply_config_file(c, config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      set_key(c, s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [k, v] : flags) set_key(c, k, v);
    for (const auto& w : c.validate(corpus::default_vocab().size())) std::cerr << "warning: " << w << '\n';
    return c;
  }
};

corpus::Dataset load_data(const RunConfig& c, const std::string& dir) {
  if (dir.empty()) return corpus::generate_dataset(c.data);
  corpus::Dataset d;
  const auto tr = dir + "/train.jsonl", te = dir + "/test.jsonl";
  if (!fs::exists(tr) && !fs::exists(te)) throw ValidationError("no train.jsonl or test.jsonl in " + dir);
  if (fs::exists(tr)) d.train = corpus::load_jsonl(tr);
  if (fs::exists(te)) d.test = corpus::load_jsonl(te);
  return d;
}

void write_text(const std::string& path, const std::string& s) {
  if (auto p = fs::path(path).parent_path(); !p.empty()) fs::create_directories(p);
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << s;
}

std::unique_ptr<std::ofstream> open_csv(const std::string& path) {
  if (path.empty()) return nullptr;
  if (auto p = fs::path(path).parent_path(); !p.empty()) fs::create_directories(p);
  auto f = std::make_unique<std::ofstream>(path);
  if (!*f) throw std::runtime_error("cannot write " + path);
  return f;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (auto dash = tok.find(".."); dash != std::string::npos) {
      const int a = std::stoi(tok.substr(0, dash)), b = std::stoi(tok.substr(dash + 2));
      if (b < a) throw ValidationError("bad range " + tok);
      for (int i = a; i <= b; ++i) out.push_back(i);
    } else if (!tok.empty()) {
      out.push_back(std::stoi(tok));
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CoLT latent reasoning toolkit"};
  app.require_subcommand(1);

  // gen-data
  Common gen;
  std::string gen_out = "data";
  auto* g = app.add_subcommand("gen-data", "write train.jsonl and test.jsonl");
  gen.add(g);
  gen.flag<int>(g, "--train-n", "data.train_n", "training problems");
  gen.flag<int>(g, "--test-n", "data.test_n", "test problems");
  gen.flag<int>(g, "--seed,--data-seed", "data.seed", "corpus seed");
  gen.flag<int>(g, "--min-steps", "data.min_steps", "fewest steps per problem");
  gen.flag<int>(g, "--max-steps", "data.max_steps", "most steps per problem");
  gen.flag<int>(g, "--max-operand", "data.max_operand", "largest sampled operand");
  g->add_option("--out,--out-dir", gen_out, "output directory");

  // train-sft / train-cot
  Common sft_c, cot_c;
  std::string sft_ckpt = "colt.ckpt", sft_csv, cot_ckpt = "cot.ckpt", cot_csv;
  auto* s = app.add_subcommand("train-sft", "supervised CoLT training");
  auto* ct = app.add_subcommand("train-cot", "explicit chain-of-thought baseline");
  for (auto [cmd, com, ck, csv] : {std::tuple{s, &sft_c, &sft_ckpt, &sft_csv}, std::tuple{ct, &cot_c, &cot_ckpt, &cot_csv}}) {
    com->add(cmd);
    cmd->add_option("--data", com->data_dir, "directory with train.jsonl (generated from data.* when absent)");
    com->flag<int>(cmd, "--epochs", "sft.epochs", "epochs");
    com->flag<double>(cmd, "--lr", "sft.lr", "learning rate");
    com->flag<int>(cmd, "--batch", "sft.batch", "examples per step");
    com->flag<int>(cmd, "--seed", "seed", "training seed");
    cmd->add_option("--out-checkpoint", *ck, "model checkpoint to write");
    cmd->add_option("--metrics-csv", *csv, "per-step metrics");
  }
  sft_c.flag<std::string>(s, "--decoder", "decoder.family", "transformer, rnn or multihot");
  sft_c.flag<int>(s, "--decoder-layers", "decoder.n_layers", "decoder depth N_d");
  sft_c.flag<int>(s, "--seed-len", "decoder.seed_len", "seed tokens per call L_s");
  sft_c.flag<std::string>(s, "--granularity", "data.granularity", "step, number or chunk");

  // train-rl
  Common rl_c;
  std::string rl_in, rl_out = "colt-rl.ckpt", rl_csv;
  auto* r = app.add_subcommand("train-rl", "GRPO from a CoLT checkpoint");
  rl_c.add(r);
  r->add_option("--checkpoint", rl_in, "starting CoLT checkpoint")->required()->check(CLI::ExistingFile);
  r->add_option("--data", rl_c.data_dir, "directory with train.jsonl");
  rl_c.flag<int>(r, "--steps", "rl.steps", "GRPO steps, 0 for one pass over the training set");
  rl_c.flag<double>(r, "--lr", "rl.lr", "learning rate");
  rl_c.flag<int>(r, "--group-size", "rl.group_size", "rollouts per question G");
  rl_c.flag<double>(r, "--clip-eps", "rl.clip_eps", "ratio clip");
  rl_c.flag<double>(r, "--kl-beta", "rl.kl_beta", "KL weight");
  rl_c.flag<int>(r, "--seed", "seed", "rollout seed");
  r->add_option("--out-checkpoint", rl_out, "model checkpoint to write");
  r->add_option("--metrics-csv", rl_csv, "per-step metrics");

  // infer
  std::string inf_ckpt, inf_q;
  bool inf_sample = false;
  double inf_temp = 1.0, inf_top_p = 0.9;
  std::uint64_t inf_seed = 0;
  int inf_rounds = -1, inf_budget = -1;
  auto* in = app.add_subcommand("infer", "run one question and print the trace");
  in->add_option("--checkpoint", inf_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  in->add_option("--question", inf_q, "question text")->required();
  in->add_flag("--sample", inf_sample, "sample instead of greedy decoding");
  in->add_option("--temperature", inf_temp, "sampling temperature");
  in->add_option("--top-p", inf_top_p, "nucleus mass");
  in->add_option("--seed", inf_seed, "sampling seed");
  in->add_option("--max-rounds", inf_rounds, "round cap");
  in->add_option("--segment-budget", inf_budget, "backbone tokens per round");

  // eval
  std::string ev_ckpt, ev_data, ev_out, ev_train;
  bool ev_traces = false;
  auto* e = app.add_subcommand("eval", "greedy accuracy and #L on a test split");
  e->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  e->add_option("--data", ev_data, "directory with test.jsonl (generated from the checkpoint config when absent)");
  e->add_option("--train-data", ev_train, "train.jsonl to check the split against");
  e->add_option("--out", ev_out, "report json");
  e->add_flag("--traces", ev_traces, "include every trace in the report");

  // sweep
  Common sw;
  std::string sw_layers, sw_lens, sw_fams, sw_epochs, sw_seeds = "0,1,2", sw_out = "sweep";
  bool sw_cot = false;
  auto* w = app.add_subcommand("sweep", "ablation grid, 3 seeds per cell by default");
  sw.add(w);
  w->add_option("--data", sw.data_dir, "directory with train.jsonl and test.jsonl");
  w->add_option("--decoder-layers", sw_layers, "e.g. 1,2,3");
  w->add_option("--seed-lens", sw_lens, "e.g. 1,2,3");
  w->add_option("--families", sw_fams, "e.g. transformer,rnn,multihot");
  w->add_option("--epochs", sw_epochs, "epoch points, e.g. 1..8 (one run per cell, evaluated at each)");
  w->add_option("--seeds", sw_seeds, "training seeds");
  w->add_flag("--cot", sw_cot, "add the CoT baseline as a cell");
  w->add_option("--out-dir", sw_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    app.exit(ex);
    return 0;
  } catch (const CLI::CallForAllHelp& ex) {
    app.exit(ex);
    return 0;
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return 1;
  }

  try {
    const auto vocab = corpus::default_vocab();
    if (*g) {
      auto c = gen.resolve();
      auto d = corpus::generate_dataset(c.data);
      fs::create_directories(gen_out);
      corpus::save_jsonl(gen_out + "/train.jsonl", d.train);
      corpus::save_jsonl(gen_out + "/test.jsonl", d.test);
      write_text(gen_out + "/config.txt", config_to_text(c));
      write_text(gen_out + "/vocab.json", vocab.to_json().dump(1) + "\n");
      std::cout << "wrote " << d.train.size() << " train and " << d.test.size() << " test problems to " << gen_out
                << '\n';
    } else if (*s || *ct) {
      const bool is_cot = ct->parsed();
      auto& com = is_cot ? cot_c : sft_c;
      auto c = com.resolve();
      auto d = load_data(c, com.data_dir);
      if (d.train.empty()) throw ValidationError("no training problems");
      auto csv = open_csv(is_cot ? cot_csv : sft_csv);
      const auto kind = is_cot ? ModelKind::Cot : ModelKind::Colt;
      auto t = train_model<float>(c, vocab, d.train, kind, csv.get(), [](int ep, const sft::TrainLog& log) {
        std::cerr << "epoch " << ep << ": " << log.steps.size() << " steps, L_sup " << log.steps.back().l_sup << '\n';
      });
      if (t.log.halted) {
        std::cerr << "error: training halted after repeated non-finite losses\n";
        return 2;
      }
      const auto& path = is_cot ? cot_ckpt : sft_ckpt;
      save_model(path, kind, c, t.model, vocab,
                 {{"steps", t.log.steps.size()}, {"skipped", t.log.skipped}, {"train_s", t.wall_s}});
      std::cout << "wrote " << path << " (" << t.log.steps.size() << " steps, " << t.wall_s << " s)\n";
    } else if (*r) {
      auto lm = load_model<float>(rl_in, vocab);
      if (lm.kind != ModelKind::Colt) throw ValidationError("train-rl needs a CoLT checkpoint");
      auto c = lm.config;
      if (!rl_c.config_path.empty()) apply_config_file(c, rl_c.config_path);
      for (const auto& x : rl_c.sets) {
        const auto eq = x.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + x + "'");
        set_key(c, x.substr(0, eq), x.substr(eq + 1));
      }
      for (const auto& [k, v] : rl_c.flags) set_key(c, k, v);
      c.validate(vocab.size());
      auto d = load_data(c, rl_c.data_dir);
      std::vector<rl::RlProblem> ps;
      for (const auto& p : d.train) ps.push_back({vocab.encode(p.question), p.answer});
      auto ref = lm.model.clone();
      auto csv = open_csv(rl_csv);
      auto log = rl::train_rl(lm.model, ref, ps, vocab, c.rl, csv.get());
      save_model(rl_out, ModelKind::Colt, c, lm.model, vocab, {{"rl_steps", log.size()}, {"from", rl_in}});
      std::cout << "wrote " << rl_out << " (" << log.size() << " GRPO steps)\n";
    } else if (*in) {
      auto lm = load_model<float>(inf_ckpt, vocab);
      auto lim = lm.config.infer;
      if (inf_rounds > 0) lim.max_rounds = inf_rounds;
      if (inf_budget > 0) lim.segment_budget = inf_budget;
      if (inf_rounds == 0 || inf_budget == 0) throw ValidationError("round cap and budget must be >= 1");
      std::vector<int> q;
      try {
        q = vocab.encode(inf_q);
      } catch (const corpus::TokenizeError& ex) {
        throw ValidationError(ex.what());
      }
      Rng rng(inf_seed);
      auto mode = inf_sample ? Decoding::sample(inf_temp, inf_top_p) : Decoding::greedy();
      auto t = run_inference(std::span<const int>(q), lm.model.backbone, lm.model.decoders, vocab, mode, lim, rng);
      std::cout << trace_to_json(t, vocab).dump(2) << '\n';
    } else if (*e) {
      auto lm = load_model<float>(ev_ckpt, vocab);
      auto d = load_data(lm.config, ev_data);
      if (d.test.empty()) throw ValidationError("no test problems");
      if (!ev_train.empty()) check_disjoint(corpus::load_jsonl(ev_train), d.test);
      else if (ev_data.empty()) check_disjoint(d.train, d.test);
      auto rep = evaluate(lm.model, d.test, vocab, lm.config.infer, ev_data.empty() ? "generated-test" : ev_data,
                          ev_traces);
      rep.meta = {{"checkpoint", ev_ckpt},
                  {"config_hash", lm.header.value("config_hash", "")},
                  {"revision", kRevision},
                  {"checkpoint_revision", lm.header.value("revision", "")},
                  {"seed", lm.config.seed},
                  {"data_seed", lm.config.data.seed}};
      auto j = report_to_json(rep, ev_traces);
      if (!ev_out.empty()) write_text(ev_out, j.dump(2) + "\n");
      std::cout << "accuracy " << rep.accuracy << " (" << rep.correct << "/" << rep.n << "), mean #L "
                << rep.mean_latent_length << '\n';
    } else if (*w) {
      auto c = sw.resolve();
      SweepAxes ax;
      ax.decoder_layers = parse_int_list(sw_layers);
      ax.seed_lens = parse_int_list(sw_lens);
      ax.epoch_points = parse_int_list(sw_epochs);
      std::stringstream fs_(sw_fams);
      for (std::string f; std::getline(fs_, f, ',');)
        if (!f.empty()) ax.families.push_back(parse_family(f));
      ax.seeds.clear();
      for (int x : parse_int_list(sw_seeds)) ax.seeds.push_back(static_cast<std::uint64_t>(x));
      if (ax.seeds.empty()) throw ValidationError("no seeds");
      ax.with_cot = sw_cot;
      auto d = load_data(c, sw.data_dir);
      auto rows = ablation_sweep(c, ax, d, vocab, sw_out, &std::cerr);
      std::size_t failed = 0;
      for (const auto& x : rows) failed += x.status != "ok";
      std::cout << "wrote " << sw_out << "/sweep.csv (" << rows.size() << " rows, " << failed << " failed)\n";
    }
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << '\n';
    return 1;
  } catch (const ValidationError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  } catch (const SplitError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "runtime error: " << ex.what() << '\n';
    return 2;
  }
  return 0;
}
