#include "cantante/backend.hpp"

#include <cctype>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <thread>

#include "cantante/csv.hpp"
#include "cantante/rng.hpp"

namespace cantante {

std::string_view to_string(CallCategory c) {
  switch (c) {
    case CallCategory::Downstream: return "downstream";
    case CallCategory::Optimizer: return "optimizer";
    case CallCategory::Attribution: return "attribution";
  }
  return "downstream";
}

CallCategory call_category_from_string(std::string_view s) {
  if (s == "downstream") return CallCategory::Downstream;
  if (s == "optimizer") return CallCategory::Optimizer;
  if (s == "attribution") return CallCategory::Attribution;
  throw std::invalid_argument("unknown call category: " + std::string(s));
}

std::string ChatRequest::joined_text() const {
  std::string out;
  for (const auto& m : messages) {
    if (!out.empty()) out += '\n';
    out += m.content;
  }
  return out;
}

double effective_temperature(const ChatRequest& request) {
  if (request.temperature) return *request.temperature;
  return request.category == CallCategory::Downstream ? 0.7 : 0.1;
}

int effective_max_tokens(const ChatRequest& request) {
  if (request.max_output_tokens) return *request.max_output_tokens;
  return request.category == CallCategory::Downstream ? 512 : 4096;
}

std::int64_t synthetic_token_count(std::string_view text) {
  return static_cast<std::int64_t>((text.size() + 3) / 4);
}

TokenTriple synthetic_usage(const ChatRequest& request, std::string_view response_text) {
  std::size_t input_chars = 0;
  for (const auto& m : request.messages) input_chars += m.content.size();
  return TokenTriple::of(static_cast<std::int64_t>((input_chars + 3) / 4),
                         synthetic_token_count(response_text));
}

ChatResponse ScriptedBackend::complete(const ChatRequest& request) {
  std::lock_guard lock(mu_);
  requests_.push_back(request);
  if (next_ >= responses_.size()) {
    throw BackendError("script exhausted after " + std::to_string(responses_.size()) +
                       " responses");
  }
  const std::string& text = responses_[next_++];
  if (text == kTransportFailure) {
    throw BackendError("scripted transport failure");
  }
  return ChatResponse{text, synthetic_usage(request, text)};
}

int ScriptedBackend::calls() const {
  std::lock_guard lock(mu_);
  return static_cast<int>(requests_.size());
}

std::vector<ChatRequest> ScriptedBackend::requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

std::optional<double> find_float_token(std::string_view text, std::string_view key,
                                       std::size_t from) {
  std::string needle = std::string(key) + "=";
  const std::size_t pos = text.find(needle, from);
  if (pos == std::string_view::npos) return std::nullopt;
  const char* begin = text.data() + pos + needle.size();
  const char* end = text.data() + text.size();
  double value = 0;
  auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc{}) return std::nullopt;
  return value;
}

std::optional<std::string> find_word_token(std::string_view text, std::string_view key,
                                           std::size_t from) {
  std::string needle = std::string(key) + "=";
  const std::size_t pos = text.find(needle, from);
  if (pos == std::string_view::npos) return std::nullopt;
  std::size_t i = pos + needle.size();
  std::size_t j = i;
  while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) &&
         text[j] != '<' && text[j] != ',') {
    ++j;
  }
  if (j == i) return std::nullopt;
  return std::string(text.substr(i, j - i));
}

namespace {

// First <tag>-looking token in the prompt names the output tag the mock must
// emit; synthetic templates always mention their tag literal.
std::string detect_output_tag(std::string_view text) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '<') continue;
    std::size_t j = i + 1;
    while (j < text.size() &&
           (std::isalnum(static_cast<unsigned char>(text[j])) || text[j] == '_')) {
      ++j;
    }
    if (j > i + 1 && j < text.size() && text[j] == '>') {
      return std::string(text.substr(i + 1, j - i - 1));
    }
  }
  return "ans";
}

}  // namespace

std::string SyntheticQualityBackend::wrong_token(std::string_view qid,
                                                 std::string_view agent,
                                                 std::uint64_t seed) {
  const std::uint64_t h =
      hash_combine(hash_combine(seed, hash_str(qid)), hash_str(agent));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%08llx", static_cast<unsigned long long>(h & 0xffffffffULL));
  return "wrong-" + std::string(buf);
}

ChatResponse SyntheticQualityBackend::complete(const ChatRequest& request) {
  const std::string prompt = request.joined_text();
  const auto skill = find_float_token(prompt, "skill");
  const auto difficulty = find_float_token(prompt, "difficulty");
  std::string text;
  if (!skill || !difficulty) {
    text = "unable to locate the required work parameters in this request";
  } else {
    const std::string tag = detect_output_tag(prompt);
    const std::string qid = find_word_token(prompt, "qid").value_or("q?");
    const std::string agent = find_word_token(prompt, "agent").value_or("a?");
    std::string payload = find_word_token(prompt, "payload").value_or("");
    if (*skill < *difficulty) {
      payload = wrong_token(qid, agent, seed_);
    }
    text = "processed by " + agent + "\n<" + tag + ">difficulty=" +
           format_double(*difficulty) + " qid=" + qid + " payload=" + payload + "</" +
           tag + ">";
  }
  return ChatResponse{text, synthetic_usage(request, text)};
}

namespace {

std::string extract_between(std::string_view text, std::string_view open,
                            std::string_view close) {
  const std::size_t a = text.find(open);
  if (a == std::string_view::npos) return {};
  const std::size_t b = text.find(close, a + open.size());
  if (b == std::string_view::npos) return {};
  return std::string(text.substr(a + open.size(), b - a - open.size()));
}

std::string replace_skill(std::string tmpl, double new_skill) {
  const std::size_t pos = tmpl.find("skill=");
  if (pos == std::string::npos) return tmpl;
  std::size_t end = pos + 6;
  while (end < tmpl.size() &&
         (std::isdigit(static_cast<unsigned char>(tmpl[end])) || tmpl[end] == '.')) {
    ++end;
  }
  return tmpl.substr(0, pos) + "skill=" + format_double(new_skill) + tmpl.substr(end);
}

double clamp01(double v) { return v < 0 ? 0 : (v > 1 ? 1 : v); }

std::string synthesize_template(const std::string& agent_id,
                                const std::vector<std::string>& variables,
                                const std::string& tag, double skill) {
  std::string vars;
  for (const auto& v : variables) {
    if (!vars.empty()) vars += ' ';
    vars += "{" + v + "}";
  }
  return "agent=" + agent_id + " skill=" + format_double(skill) +
         "\nCarry the work item forward without altering its payload.\n" + vars +
         "\nReply inside <" + tag + "> tags.";
}

std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

ChatResponse SyntheticMetaBackend::complete(const ChatRequest& request) {
  const std::string prompt = request.joined_text();
  std::string text;

  if (prompt.find("===CREDITS===") != std::string::npos) {
    // Attribution request: echo each configuration's score, affinely mapped,
    // for every listed agent. Good enough to exercise the contrastive wire.
    // Scan only past the live-rollout marker so the instruction's worked
    // example is not picked up.
    text = "===CREDITS===\n";
    std::size_t pos = prompt.find("executions of the query below");
    if (pos == std::string_view::npos) pos = 0;
    while (true) {
      const std::size_t c = prompt.find("configuration ", pos);
      if (c == std::string_view::npos) break;
      int config = 0;
      auto res = std::from_chars(prompt.data() + c + 14, prompt.data() + prompt.size(), config);
      if (res.ec != std::errc{}) {
        pos = c + 14;
        continue;
      }
      const auto score = find_float_token(prompt, "score", c);
      const std::size_t next = prompt.find("configuration ", c + 14);
      std::size_t agents_at = prompt.find("agents: ", c);
      if (score && agents_at != std::string_view::npos &&
          (next == std::string_view::npos || agents_at < next)) {
        agents_at += 8;
        const std::size_t eol = prompt.find('\n', agents_at);
        for (const auto& agent :
             split_csv_list(prompt.substr(agents_at, eol - agents_at))) {
          text += "CREDIT " + std::to_string(config) + " " + agent + " " +
                  format_double(clamp01(*score) * 2 - 1) + "\n";
        }
      }
      pos = c + 14;
      if (next == std::string_view::npos) break;
    }
    text += "===END===";
    return ChatResponse{text, synthetic_usage(request, text)};
  }

  if (prompt.find("request-type: prompt-generation") != std::string::npos) {
    const std::string agent_id = extract_between(prompt, "agent-id: ", "\n");
    const std::string vars_line = extract_between(prompt, "input-variables: ", "\n");
    const std::string tag = extract_between(prompt, "output-tag: ", "\n");
    const double skill =
        0.25 + 0.5 * SeedStream(derive_seed(seed_, "gen", hash_str(prompt))).next_unit();
    text = "<prompt>" +
           synthesize_template(agent_id.empty() ? "a?" : agent_id,
                               split_csv_list(vars_line), tag.empty() ? "ans" : tag,
                               skill) +
           "</prompt>";
    return ChatResponse{text, synthetic_usage(request, text)};
  }

  if (prompt.find("request-type: crossover") != std::string::npos) {
    const std::string pa = extract_between(prompt, "<parent_a>", "</parent_a>");
    const std::string pb = extract_between(prompt, "<parent_b>", "</parent_b>");
    const double sa = find_float_token(pa, "skill").value_or(0.5);
    const double sb = find_float_token(pb, "skill").value_or(0.5);
    text = "<prompt>" + replace_skill(pa, clamp01((sa + sb) / 2.0)) + "</prompt>";
    return ChatResponse{text, synthetic_usage(request, text)};
  }

  if (prompt.find("request-type: mutation") != std::string::npos) {
    const std::string cand = extract_between(prompt, "<candidate>", "</candidate>");
    const double s = find_float_token(cand, "skill").value_or(0.5);
    const double jitter =
        (SeedStream(derive_seed(seed_, "mut", hash_str(prompt))).next_unit() * 2 - 1) * 0.2;
    text = "<prompt>" + replace_skill(cand, clamp01(s + jitter)) + "</prompt>";
    return ChatResponse{text, synthetic_usage(request, text)};
  }

  text = "unrecognized meta request";
  return ChatResponse{text, synthetic_usage(request, text)};
}

ChatResponse complete_with_retries(ChatBackend& backend, const ChatRequest& request,
                                   int retries, int base_delay_ms) {
  for (int attempt = 0;; ++attempt) {
    try {
      return backend.complete(request);
    } catch (const BackendError&) {
      if (attempt >= retries) throw;
      if (base_delay_ms > 0) {
        std::this_thread::sleep_for(
            std::chrono::milliseconds(base_delay_ms * (1 << attempt)));
      }
    }
  }
}

}  // namespace cantante
