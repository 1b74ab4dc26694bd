#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "colt/corpus/vocab.hpp"
#include "colt/numerics/random.hpp"

namespace colt::corpus {

enum class Op : char { Add = '+', Sub = '-', Mul = '*', Div = '/' };

inline std::int64_t apply_op(Op op, std::int64_t a, std::int64_t b) {
  switch (op) {
    case Op::Add: return a + b;
    case Op::Sub: return a - b;
    case Op::Mul: return a * b;
    case Op::Div: return a / b;
  }
  return 0;
}

struct Step {
  std::int64_t lhs = 0;
  Op op = Op::Add;
  std::int64_t rhs = 0;
  std::int64_t result = 0;

  std::string text() const {
    return std::to_string(lhs) + static_cast<char>(op) + std::to_string(rhs) + "=" + std::to_string(result);
  }
};

struct Problem {
  std::string question;
  std::vector<std::string> steps;
  std::int64_t answer = 0;

  // Split-hash identity. Structure is rebuilt from the steps on load.
  int frame = -1;
  std::vector<Step> structure;

  bool operator==(const Problem& o) const {
    return question == o.question && steps == o.steps && answer == o.answer;
  }
};

// One templated word-problem frame. "{n}" is the actor's name, "{x}" the
// operand; the question reads the chain left to right.
struct Frame {
  std::string item;
  std::string start;  // "{n} has {x} apples."
  std::string add, sub, mul, div;
  std::string ask;  // "How many apples does {n} have now?"
};

inline const std::vector<Frame>& default_frames() {
  static const std::vector<Frame> frames = {
      {"apples", "{n} has {x} apples.", "{n} buys {x} more.", "{n} eats {x} of them.",
       "{n} then has {x} times as many.", "{n} splits them into {x} equal bags and keeps one bag.",
       "How many apples does {n} have now?"},
      {"coins", "{n} starts with {x} coins.", "{n} finds {x} more coins.", "{n} spends {x} coins.",
       "{n} then has {x} times as many coins.", "{n} shares them equally among {x} friends and keeps one share.",
       "How many coins does {n} have at the end?"},
      {"books", "A shelf holds {x} books.", "{n} adds {x} books.", "{n} removes {x} books.",
       "The number of books grows {x} times.", "The books are split into {x} equal stacks and one stack stays.",
       "How many books are on the shelf?"},
      {"marbles", "{n} owns {x} marbles.", "{n} wins {x} marbles.", "{n} loses {x} marbles.",
       "{n} then owns {x} times as many marbles.", "{n} puts them into {x} equal jars and keeps one jar.",
       "How many marbles does {n} own?"},
      {"stamps", "{n} collects {x} stamps.", "{n} gets {x} new stamps.", "{n} trades away {x} stamps.",
       "The collection becomes {x} times as big.", "{n} divides the stamps into {x} equal albums and keeps one.",
       "How many stamps does {n} have?"},
      {"cookies", "{n} bakes {x} cookies.", "{n} bakes {x} more cookies.", "{n} gives away {x} cookies.",
       "{n} then makes {x} times as many.", "{n} packs them into {x} equal boxes and keeps one box.",
       "How many cookies does {n} keep?"},
      {"cards", "{n} holds {x} cards.", "{n} receives {x} cards.", "{n} gives {x} cards to a friend.",
       "{n} then holds {x} times as many cards.", "{n} deals them into {x} equal piles and keeps one pile.",
       "How many cards does {n} hold?"},
      {"points", "{n} scores {x} points.", "{n} earns {x} bonus points.", "{n} loses {x} points.",
       "The score is multiplied by {x}.", "The score is divided by {x}.", "What is the final score of {n}?"},
  };
  return frames;
}

inline const std::vector<std::string>& default_names() {
  static const std::vector<std::string> names = {"Ava", "Ben", "Cleo", "Dev", "Eli", "Fern", "Gus", "Hana"};
  return names;
}

inline std::set<std::string> frame_words(const std::vector<Frame>& frames, const std::vector<std::string>& names) {
  std::set<std::string> words(names.begin(), names.end());
  auto add_words = [&](const std::string& s) {
    std::string w;
    for (char c : s) {
      if (std::isalpha(static_cast<unsigned char>(c))) {
        w += c;
      } else {
        if (!w.empty()) words.insert(w);
        w.clear();
      }
    }
    if (!w.empty()) words.insert(w);
  };
  for (const auto& f : frames)
    for (const auto* s : {&f.item, &f.start, &f.add, &f.sub, &f.mul, &f.div, &f.ask}) add_words(*s);
  words.erase("n");
  words.erase("x");
  words.insert("answer");
  words.insert("is");
  words.insert("the");
  return words;
}

inline Vocab default_vocab() { return Vocab::for_words(frame_words(default_frames(), default_names())); }

struct GeneratorConfig {
  int frames = 8;              // number of templates drawn from
  int max_operand = 100;       // operands are < max_operand
  int max_mul_operand = 9;     // multipliers and divisors are in [2, max_mul_operand]
  std::int64_t value_cap = 10000;  // every intermediate value is < value_cap
  std::string ops = "+-*/";

  void validate() const {
    if (frames < 1 || frames > static_cast<int>(default_frames().size()))
      throw std::invalid_argument("corpus: frames must be in [1, " + std::to_string(default_frames().size()) + "]");
    if (max_operand < 2) throw std::invalid_argument("corpus: max_operand must be >= 2");
    if (max_mul_operand < 2) throw std::invalid_argument("corpus: max_mul_operand must be >= 2");
    if (value_cap <= max_operand) throw std::invalid_argument("corpus: value_cap must exceed max_operand");
    if (ops.empty()) throw std::invalid_argument("corpus: ops must be nonempty");
    for (char c : ops)
      if (std::string("+-*/").find(c) == std::string::npos)
        throw std::invalid_argument(std::string("corpus: unknown op '") + c + "'");
  }
};

namespace detail {

inline std::string fill(std::string tmpl, const std::string& name, std::int64_t x) {
  auto rep = [&](const std::string& key, const std::string& val) {
    for (std::size_t p; (p = tmpl.find(key)) != std::string::npos;) tmpl.replace(p, key.size(), val);
  };
  rep("{n}", name);
  rep("{x}", std::to_string(x));
  return tmpl;
}

}  // namespace detail

// Deterministic chained problem: step k applies an op to the previous result.
inline Problem generate_problem(std::uint64_t seed, int num_steps, int max_operand, const GeneratorConfig& base = {}) {
  if (num_steps < 1) throw std::invalid_argument("generate_problem: num_steps must be >= 1");
  GeneratorConfig cfg = base;
  cfg.max_operand = max_operand;
  cfg.validate();
  Rng rng(seed);
  const auto& frames = default_frames();
  const auto& names = default_names();
  Problem p;
  p.frame = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.frames)));
  const Frame& f = frames[static_cast<std::size_t>(p.frame)];
  const std::string& name = names[rng.below(names.size())];

  std::int64_t cur = rng.range(1, max_operand - 1);
  std::string q = detail::fill(f.start, name, cur);
  for (int s = 0; s < num_steps; ++s) {
    std::vector<std::pair<Op, std::int64_t>> options;
    for (char c : cfg.ops) {
      const Op op = static_cast<Op>(c);
      std::int64_t x = 0;
      switch (op) {
        case Op::Add:
          x = rng.range(1, max_operand - 1);
          if (cur + x < cfg.value_cap) options.emplace_back(op, x);
          break;
        case Op::Sub:
          if (cur >= 1) options.emplace_back(op, rng.range(1, std::min<std::int64_t>(cur, max_operand - 1)));
          break;
        case Op::Mul:
          x = rng.range(2, cfg.max_mul_operand);
          if (cur * x < cfg.value_cap) options.emplace_back(op, x);
          break;
        case Op::Div: {
          std::vector<std::int64_t> divs;
          for (std::int64_t d = 2; d <= cfg.max_mul_operand; ++d)
            if (cur % d == 0 && cur / d >= 1) divs.push_back(d);
          if (!divs.empty()) options.emplace_back(op, divs[rng.below(divs.size())]);
          break;
        }
      }
    }
    if (options.empty()) options.emplace_back(Op::Add, 1);
    const auto [op, x] = options[rng.below(options.size())];
    Step st{cur, op, x, apply_op(op, cur, x)};
    const std::string& tmpl = op == Op::Add ? f.add : op == Op::Sub ? f.sub : op == Op::Mul ? f.mul : f.div;
    q += " " + detail::fill(tmpl, name, x);
    p.steps.push_back(st.text());
    p.structure.push_back(st);
    cur = st.result;
  }
  q += " " + detail::fill(f.ask, name, 0);
  p.question = std::move(q);
  p.answer = cur;
  return p;
}

inline std::string answer_text(std::int64_t answer) { return std::string(kAnswerMarker) + " " + std::to_string(answer); }

// Full explicit chain: steps separated by newlines, then the answer segment.
inline std::string cot_text(const Problem& p) {
  std::string s;
  for (const auto& st : p.steps) s += st + std::string(kSeparator);
  return s + answer_text(p.answer);
}

// Identity used for split hashing: template plus operand tuple.
inline std::string problem_key(const Problem& p) {
  std::ostringstream os;
  os << p.frame;
  if (!p.structure.empty()) os << ':' << p.structure.front().lhs;
  for (const auto& s : p.structure) os << ':' << static_cast<char>(s.op) << s.rhs;
  return os.str();
}

struct DatasetConfig {
  std::uint64_t seed = 1234;
  int train_n = 5000;
  int test_n = 500;
  int min_steps = 2;
  int max_steps = 4;
  GeneratorConfig gen;

  void validate() const {
    if (train_n < 0 || test_n < 0) throw std::invalid_argument("corpus: split sizes must be nonnegative");
    if (min_steps < 1 || max_steps < min_steps) throw std::invalid_argument("corpus: need 1 <= min_steps <= max_steps");
    gen.validate();
  }
};

struct Dataset {
  std::vector<Problem> train;
  std::vector<Problem> test;
};

// Train and test splits; test problems colliding with any training key are
// regenerated from fresh seeds.
inline Dataset generate_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Rng master(cfg.seed);
  auto draw = [&]() {
    const std::uint64_t s = master.next_u64();
    const int steps = static_cast<int>(Rng(s ^ 0x5bd1e995ULL).range(cfg.min_steps, cfg.max_steps));
    return generate_problem(s, steps, cfg.gen.max_operand, cfg.gen);
  };
  Dataset d;
  std::set<std::string> train_keys;
  for (int i = 0; i < cfg.train_n; ++i) {
    d.train.push_back(draw());
    train_keys.insert(problem_key(d.train.back()));
  }
  std::set<std::string> test_keys;
  while (static_cast<int>(d.test.size()) < cfg.test_n) {
    auto p = draw();
    const auto k = problem_key(p);
    if (train_keys.count(k) || test_keys.count(k)) continue;
    test_keys.insert(k);
    d.test.push_back(std::move(p));
  }
  return d;
}

inline nlohmann::ordered_json problem_to_json(const Problem& p) {
  nlohmann::ordered_json j;
  j["question"] = p.question;
  j["steps"] = p.steps;
  j["answer"] = p.answer;
  j["frame"] = p.frame;
  return j;
}

// "12*3=36" back into its operands.
inline Step step_from_text(const std::string& s) {
  Step st;
  const auto eq = s.find('=');
  std::size_t k = s.find_first_of("+-*/", 1);
  if (eq == std::string::npos || k == std::string::npos || k > eq)
    throw std::invalid_argument("malformed step '" + s + "'");
  try {
    st.lhs = std::stoll(s.substr(0, k));
    st.op = static_cast<Op>(s[k]);
    st.rhs = std::stoll(s.substr(k + 1, eq - k - 1));
    st.result = std::stoll(s.substr(eq + 1));
  } catch (const std::logic_error&) {
    throw std::invalid_argument("malformed step '" + s + "'");
  }
  return st;
}

inline Problem problem_from_json(const nlohmann::json& j) {
  Problem p;
  p.question = j.at("question").get<std::string>();
  p.steps = j.at("steps").get<std::vector<std::string>>();
  p.answer = j.at("answer").get<std::int64_t>();
  p.frame = j.value("frame", -1);
  for (const auto& st : p.steps) p.structure.push_back(step_from_text(st));
  return p;
}

inline std::string to_jsonl(const std::vector<Problem>& ps) {
  std::string out;
  for (const auto& p : ps) out += problem_to_json(p).dump() + "\n";
  return out;
}

inline std::vector<Problem> from_jsonl(std::istream& in) {
  std::vector<Problem> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(problem_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<Problem> load_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open dataset " + path);
  return from_jsonl(f);
}

inline void save_jsonl(const std::string& path, const std::vector<Problem>& ps) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write dataset " + path);
  f << to_jsonl(ps);
}

}  // namespace colt::corpus
