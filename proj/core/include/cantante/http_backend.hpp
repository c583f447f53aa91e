#pragma once

#include <string>

#include "cantante/backend.hpp"

namespace cantante {

struct HttpBackendConfig {
  /// Scheme, host, port and optional path prefix, e.g.
  /// "http://localhost:8000/v1"; requests go to <base_url>/chat/completions.
  std::string base_url;
  std::string model;
  std::string api_key;  // sent as a bearer token when non-empty
  int max_in_flight = 8;
  int connect_timeout_ms = 5000;
  int read_timeout_ms = 120000;
};

/// Serialized POST body for a chat completion. Deterministic byte-for-byte for
/// fixed inputs: keys are emitted in sorted order and numbers via shortest
/// round-trip formatting.
std::string build_chat_request_body(const ChatRequest& request, const std::string& model);

/// Parses `choices[0].message.content` and `usage.{prompt_tokens,
/// completion_tokens, total_tokens}`. Throws BackendError on malformed
/// payloads or a remote-reported error object.
ChatResponse parse_chat_response_body(const std::string& body);

/// Chat-completion client over HTTP. Safe to share across rollout workers;
/// in-flight requests are bounded by config.max_in_flight.
class HttpChatBackend : public ChatBackend {
 public:
  explicit HttpChatBackend(HttpBackendConfig config);
  ~HttpChatBackend() override;

  ChatResponse complete(const ChatRequest& request) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cantante
