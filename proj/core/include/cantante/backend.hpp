#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cantante/types.hpp"

namespace cantante {

/// Every call is budgeted under one of these categories; downstream covers
/// task-agent calls, optimizer and attribution are the meta calls.
enum class CallCategory { Downstream, Optimizer, Attribution };

std::string_view to_string(CallCategory c);
CallCategory call_category_from_string(std::string_view s);

enum class MessageRole { System, User };

struct ChatMessage {
  MessageRole role = MessageRole::User;
  std::string content;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  std::optional<double> temperature;      // category default applies when unset
  std::optional<int> max_output_tokens;   // category default applies when unset
  CallCategory category = CallCategory::Downstream;

  std::string joined_text() const;  // all message contents, newline separated
};

struct ChatResponse {
  std::string text;
  TokenTriple usage;
};

/// 0.7 for downstream calls, 0.1 for optimizer/attribution calls.
double effective_temperature(const ChatRequest& request);
/// 512 for downstream calls, 4096 for optimizer/attribution calls.
int effective_max_tokens(const ChatRequest& request);

class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  /// Throws BackendError on transport failure, malformed remote payload, or a
  /// remote-reported error. Every successful response carries usage.
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

/// ceil(chars / 4): deterministic order-of-magnitude token count used by all
/// in-process backends, with no tokenizer dependency.
std::int64_t synthetic_token_count(std::string_view text);
TokenTriple synthetic_usage(const ChatRequest& request, std::string_view response_text);

/// Replays a fixed response queue; the n-th call returns the n-th entry.
/// An entry equal to kTransportFailure throws BackendError instead, which is
/// how retry paths are exercised in tests. Exhausting the queue is an error.
class ScriptedBackend : public ChatBackend {
 public:
  static constexpr std::string_view kTransportFailure = "[[TRANSPORT-FAILURE]]";

  ScriptedBackend() = default;
  explicit ScriptedBackend(std::vector<std::string> responses)
      : responses_(std::move(responses)) {}

  void push(std::string response) { responses_.push_back(std::move(response)); }

  ChatResponse complete(const ChatRequest& request) override;

  int calls() const;
  std::vector<ChatRequest> requests() const;  // copies, for assertions

 private:
  mutable std::mutex mu_;
  std::vector<std::string> responses_;
  std::vector<ChatRequest> requests_;
  std::size_t next_ = 0;
};

/// Desk-scale stand-in for a downstream model. The prompt is expected to carry
/// `skill=<x>` (from the agent's template) plus `difficulty=<y>`, `qid=<id>`
/// and `payload=<p>` (from the query or an upstream output). The reply wraps
/// `difficulty=... qid=... payload=...` in the first output tag mentioned by
/// the prompt; the payload is forwarded verbatim iff skill >= difficulty and
/// replaced by a deterministic wrong token derived from (qid, agent, seed)
/// otherwise. A missing skill or difficulty token yields an untagged reply,
/// which induces an extraction failure upstream. Pure function of
/// (request, seed).
class SyntheticQualityBackend : public ChatBackend {
 public:
  explicit SyntheticQualityBackend(std::uint64_t seed) : seed_(seed) {}
  ChatResponse complete(const ChatRequest& request) override;

  static std::string wrong_token(std::string_view qid, std::string_view agent,
                                 std::uint64_t seed);

 private:
  std::uint64_t seed_;
};

/// Desk-scale stand-in for the optimizer/attribution model. Recognizes the
/// structured requests produced by the prompt builders:
///   - prompt generation  -> emits a fresh synthetic template in <prompt> tags
///   - crossover          -> child template with the parents' mean skill
///   - mutation           -> parent template with skill jittered by up to 0.2
///   - attribution        -> a well-formed credit block echoing 2*score-1
/// Pure function of (request, seed).
class SyntheticMetaBackend : public ChatBackend {
 public:
  explicit SyntheticMetaBackend(std::uint64_t seed) : seed_(seed) {}
  ChatResponse complete(const ChatRequest& request) override;

 private:
  std::uint64_t seed_;
};

/// first `key=<float>` occurrence after position `from`; nullopt when absent
std::optional<double> find_float_token(std::string_view text, std::string_view key,
                                       std::size_t from = 0);
std::optional<std::string> find_word_token(std::string_view text, std::string_view key,
                                           std::size_t from = 0);

/// Calls backend.complete with up to `retries` additional attempts after a
/// BackendError, sleeping base_delay_ms * 2^attempt between attempts.
/// Rethrows the last error once attempts are exhausted.
ChatResponse complete_with_retries(ChatBackend& backend, const ChatRequest& request,
                                   int retries = 2, int base_delay_ms = 250);

}  // namespace cantante
