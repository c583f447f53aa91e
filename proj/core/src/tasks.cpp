#include "cantante/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "cantante/backend.hpp"
#include "cantante/csv.hpp"
#include "cantante/rng.hpp"

namespace cantante {

using nlohmann::json;

std::vector<const Query*> Dataset::dev() const {
  std::vector<const Query*> out;
  for (const auto& q : queries) {
    if (q.split == Split::Dev) out.push_back(&q);
  }
  return out;
}

std::vector<const Query*> Dataset::test() const {
  std::vector<const Query*> out;
  for (const auto& q : queries) {
    if (q.split == Split::Test) out.push_back(&q);
  }
  return out;
}

Dataset load_dataset(const std::string& path, int dev_size, int test_size,
                     std::uint64_t seed) {
  if (dev_size < 0 || test_size < 0) {
    throw std::runtime_error("dataset sizes must be non-negative");
  }
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);

  std::vector<Query> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(path + " line " + std::to_string(line_no) +
                               ": invalid record: " + e.what());
    }
    try {
      Query q;
      q.query_id = rec.at("id").is_string() ? rec.at("id").get<std::string>()
                                            : rec.at("id").dump();
      const json& input = rec.at("input");
      if (input.is_string()) {
        q.input_payload["input"] = input.get<std::string>();
      } else if (input.is_object()) {
        for (const auto& [k, v] : input.items()) {
          q.input_payload[k] = v.is_string() ? v.get<std::string>() : v.dump();
        }
      } else {
        throw std::runtime_error("'input' must be a string or object");
      }
      q.ground_truth = rec.at("answer").is_string() ? rec.at("answer").get<std::string>()
                                                    : rec.at("answer").dump();
      if (rec.contains("test_spec")) {
        q.input_payload["__test_spec"] = rec.at("test_spec").dump();
      }
      records.push_back(std::move(q));
    } catch (const json::exception& e) {
      throw std::runtime_error(path + " line " + std::to_string(line_no) +
                               ": invalid record: " + e.what());
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }

  const std::size_t needed = static_cast<std::size_t>(dev_size) + test_size;
  if (records.size() < needed) {
    throw std::runtime_error(path + ": " + std::to_string(records.size()) +
                             " records, need " + std::to_string(needed));
  }

  SeedStream rng(derive_seed(seed, "train-test-split"));
  deterministic_shuffle(records, rng);

  Dataset ds;
  ds.dev_size = dev_size;
  ds.test_size = test_size;
  ds.source = path;
  ds.seed = seed;
  for (int i = 0; i < dev_size; ++i) {
    records[i].split = Split::Dev;
    ds.queries.push_back(std::move(records[i]));
  }
  for (int i = dev_size; i < static_cast<int>(needed); ++i) {
    records[i].split = Split::Test;
    ds.queries.push_back(std::move(records[i]));
  }
  return ds;
}

namespace {

std::string normalize_for_match(const std::string& s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!out.empty()) pending_space = true;
      continue;
    }
    if (pending_space) {
      out += ' ';
      pending_space = false;
    }
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

const std::regex kNumberPattern(R"([-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?)");

std::optional<double> last_number_in(const std::string& text) {
  std::optional<double> last;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), kNumberPattern);
       it != std::sregex_iterator(); ++it) {
    try {
      last = std::stod(it->str());
    } catch (...) {
    }
  }
  return last;
}

}  // namespace

double exact_match_score(const std::string& prediction, const std::string& ground_truth) {
  return normalize_for_match(prediction) == normalize_for_match(ground_truth) ? 1.0 : 0.0;
}

double numeric_match_score(const std::string& prediction, const std::string& ground_truth) {
  double truth = 0;
  try {
    truth = parse_double(ground_truth);
  } catch (const std::exception&) {
    throw std::invalid_argument("numeric_match_score: ground truth is not a number: '" +
                                ground_truth + "'");
  }
  const auto predicted = last_number_in(prediction);
  if (!predicted) return 0.0;
  return std::fabs(*predicted - truth) <= 1e-6 ? 1.0 : 0.0;
}

double predicate_test_score(const std::string& prediction,
                            const std::vector<PredicateCheck>& test_spec) {
  if (test_spec.empty()) {
    throw std::invalid_argument("predicate_test_score: empty test spec is ambiguous");
  }
  for (const auto& check : test_spec) {
    bool pass = false;
    if (check.predicate == "contains") {
      pass = prediction.find(check.argument) != std::string::npos;
    } else if (check.predicate == "not_contains") {
      pass = prediction.find(check.argument) == std::string::npos;
    } else if (check.predicate == "matches") {
      pass = std::regex_search(prediction, std::regex(check.argument));
    } else if (check.predicate == "numeric_equals") {
      pass = numeric_match_score(prediction, check.argument) == 1.0;
    } else {
      throw std::invalid_argument("unknown predicate id: '" + check.predicate + "'");
    }
    if (!pass) return 0.0;
  }
  return 1.0;
}

std::vector<PredicateCheck> parse_test_spec(const std::string& serialized_json) {
  json doc;
  try {
    doc = json::parse(serialized_json);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("invalid test_spec: ") + e.what());
  }
  if (!doc.is_array()) throw std::invalid_argument("test_spec must be an array");
  std::vector<PredicateCheck> checks;
  for (const json& c : doc) {
    checks.push_back({c.at("predicate").get<std::string>(),
                      c.value("argument", std::string{})});
  }
  return checks;
}

ScorerRegistry::ScorerRegistry() {
  register_scorer("exact_match", [](const std::string& pred, const Query& q) {
    return exact_match_score(pred, q.ground_truth);
  });
  register_scorer("numeric_match", [](const std::string& pred, const Query& q) {
    return numeric_match_score(pred, q.ground_truth);
  });
  register_scorer("predicate", [](const std::string& pred, const Query& q) {
    auto it = q.input_payload.find("__test_spec");
    if (it == q.input_payload.end()) {
      throw std::invalid_argument("query '" + q.query_id + "' has no test_spec");
    }
    return predicate_test_score(pred, parse_test_spec(it->second));
  });
  register_scorer("synthetic", [](const std::string& pred, const Query& q) {
    return find_word_token(pred, "payload").value_or("") == q.ground_truth ? 1.0 : 0.0;
  });
}

void ScorerRegistry::register_scorer(const std::string& name, Scorer scorer) {
  // The range contract is installed here: out-of-range values indicate a
  // scorer bug and must fail loudly rather than be clamped away.
  scorers_[name] = [name, inner = std::move(scorer)](const std::string& pred,
                                                     const Query& q) {
    const double s = inner(pred, q);
    if (!(s >= 0.0 && s <= 1.0)) {
      throw ScoreRangeError("scorer '" + name + "' returned " + format_double(s) +
                            ", outside [0, 1]");
    }
    return s;
  };
}

Scorer ScorerRegistry::get(const std::string& name) const {
  auto it = scorers_.find(name);
  if (it == scorers_.end()) {
    throw std::invalid_argument("unknown scorer: '" + name + "'");
  }
  return it->second;
}

void ToolRegistry::register_tool(const std::string& tool_id, ToolFn fn, int timeout_ms) {
  tools_[tool_id] = Entry{std::move(fn), timeout_ms};
}

bool ToolRegistry::has(const std::string& tool_id) const { return tools_.count(tool_id) > 0; }

std::string ToolRegistry::invoke(const std::string& tool_id, const std::string& input) const {
  auto it = tools_.find(tool_id);
  if (it == tools_.end()) {
    return "[tool-error] unknown tool: " + tool_id;
  }
  auto prom = std::make_shared<std::promise<std::string>>();
  auto fut = prom->get_future();
  std::thread([prom, fn = it->second.fn, input] {
    try {
      prom->set_value(fn(input));
    } catch (const std::exception& e) {
      prom->set_value(std::string("[tool-error] ") + e.what());
    } catch (...) {
      prom->set_value("[tool-error] unknown failure");
    }
  }).detach();
  if (fut.wait_for(std::chrono::milliseconds(it->second.timeout_ms)) !=
      std::future_status::ready) {
    return "[tool-error] timeout after " + std::to_string(it->second.timeout_ms) + "ms";
  }
  return fut.get();
}

namespace {

// minimal recursive-descent arithmetic: + - * / and parentheses over doubles
class ArithParser {
 public:
  explicit ArithParser(const std::string& text) : text_(text) {}

  double parse() {
    const double v = expression();
    skip_ws();
    if (pos_ != text_.size()) throw std::invalid_argument("trailing input in expression");
    return v;
  }

 private:
  double expression() {
    double v = term();
    while (true) {
      skip_ws();
      if (peek() == '+') {
        ++pos_;
        v += term();
      } else if (peek() == '-') {
        ++pos_;
        v -= term();
      } else {
        return v;
      }
    }
  }

  double term() {
    double v = factor();
    while (true) {
      skip_ws();
      if (peek() == '*') {
        ++pos_;
        v *= factor();
      } else if (peek() == '/') {
        ++pos_;
        const double d = factor();
        if (d == 0) throw std::invalid_argument("division by zero");
        v /= d;
      } else {
        return v;
      }
    }
  }

  double factor() {
    skip_ws();
    if (peek() == '(') {
      ++pos_;
      const double v = expression();
      skip_ws();
      if (peek() != ')') throw std::invalid_argument("missing ')'");
      ++pos_;
      return v;
    }
    if (peek() == '-') {
      ++pos_;
      return -factor();
    }
    std::size_t end = pos_;
    while (end < text_.size() &&
           (std::isdigit(static_cast<unsigned char>(text_[end])) || text_[end] == '.')) {
      ++end;
    }
    if (end == pos_) throw std::invalid_argument("expected a number");
    const double v = std::stod(text_.substr(pos_, end - pos_));
    pos_ = end;
    return v;
  }

  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      ++pos_;
    }
  }

  const std::string& text_;
  std::size_t pos_ = 0;
};

}  // namespace

ToolRegistry ToolRegistry::with_builtins() {
  ToolRegistry reg;
  reg.register_tool("echo", [](const std::string& in) { return in; });
  reg.register_tool("char_count",
                    [](const std::string& in) { return std::to_string(in.size()); });
  reg.register_tool("arith", [](const std::string& in) {
    const double v = ArithParser(in).parse();
    if (v == static_cast<long long>(v)) {
      return std::to_string(static_cast<long long>(v));
    }
    return format_double(v);
  });
  return reg;
}

Parameterization make_synthetic_parameterization(const std::string& agent_id, double skill) {
  Parameterization p;
  p.prompt_template = "agent=" + agent_id + " skill=" + format_double(skill) +
                      "\nCarry the work item forward without altering its payload.\n"
                      "{work_item}\nReply inside <ans> tags.";
  p.origin = PromptOrigin::Initial;
  p.lineage_id = agent_id + "-skill";
  return p;
}

SyntheticTask make_synthetic_task(int n_agents, int n_queries, std::uint64_t seed) {
  if (n_agents < 2) throw std::invalid_argument("synthetic task needs at least 2 agents");
  if (n_queries < 1) throw std::invalid_argument("synthetic task needs at least 1 query");

  SyntheticTask task;
  for (int i = 1; i <= n_agents; ++i) {
    AgentSpec a;
    a.agent_id = "agent" + std::to_string(i);
    a.task_description =
        "Receive a synthetic work item and pass it on with the payload unchanged.";
    a.input_variables = {"work_item"};
    a.output_tag = "ans";
    task.graph.agents.push_back(std::move(a));
  }
  for (int i = 1; i < n_agents; ++i) {
    Edge e;
    e.edge_id = "e" + std::to_string(i);
    e.from = "agent" + std::to_string(i);
    e.to = "agent" + std::to_string(i + 1);
    e.carries = {{std::string(kOutputKey), "work_item"}};
    task.graph.edges.push_back(std::move(e));
  }
  task.graph.entry_agent = "agent1";
  task.graph.terminal_agents = {"agent" + std::to_string(n_agents)};

  SeedStream rng(derive_seed(seed, "synthetic-difficulty"));
  for (int i = 1; i <= n_queries; ++i) {
    char id[16];
    std::snprintf(id, sizeof(id), "q%03d", i);
    Query q;
    q.query_id = id;
    const double difficulty = 0.05 + 0.85 * rng.next_unit();
    q.ground_truth = "answer-" + std::string(id);
    q.input_payload["work_item"] = "difficulty=" + format_double(difficulty) + " qid=" +
                                   std::string(id) + " payload=" + q.ground_truth;
    q.split = Split::Dev;
    task.dataset.queries.push_back(std::move(q));
  }
  task.dataset.dev_size = n_queries;
  task.dataset.test_size = 0;
  task.dataset.source = "synthetic";
  task.dataset.seed = seed;

  task.scorer = ScorerRegistry().get("synthetic");
  task.quality = [](const std::string&, const Parameterization& param) {
    return find_float_token(param.prompt_template, "skill").value_or(0.0);
  };
  return task;
}

}  // namespace cantante
