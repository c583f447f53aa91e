#include "cantante/http_backend.hpp"

#include <semaphore>

#include <nlohmann/json.hpp>

#include "httplib.h"

namespace cantante {

using nlohmann::json;

std::string build_chat_request_body(const ChatRequest& request, const std::string& model) {
  json body;
  body["model"] = model;
  body["messages"] = json::array();
  for (const auto& m : request.messages) {
    body["messages"].push_back(
        {{"role", m.role == MessageRole::System ? "system" : "user"},
         {"content", m.content}});
  }
  body["temperature"] = effective_temperature(request);
  body["max_tokens"] = effective_max_tokens(request);
  return body.dump();
}

ChatResponse parse_chat_response_body(const std::string& body) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw BackendError(std::string("malformed response payload: ") + e.what());
  }
  if (doc.contains("error")) {
    std::string msg = "remote error";
    if (doc["error"].is_object() && doc["error"].contains("message")) {
      msg += ": " + doc["error"]["message"].get<std::string>();
    }
    throw BackendError(msg);
  }
  try {
    ChatResponse resp;
    resp.text = doc.at("choices").at(0).at("message").at("content").get<std::string>();
    const json& usage = doc.at("usage");
    const auto in = usage.at("prompt_tokens").get<std::int64_t>();
    const auto out = usage.at("completion_tokens").get<std::int64_t>();
    resp.usage = TokenTriple::of(in, out);
    if (usage.contains("total_tokens")) {
      resp.usage.total = usage.at("total_tokens").get<std::int64_t>();
    }
    if (resp.usage.input < 0 || resp.usage.output < 0) {
      throw BackendError("negative token counts in usage");
    }
    return resp;
  } catch (const json::exception& e) {
    throw BackendError(std::string("response missing required fields: ") + e.what());
  }
}

namespace {

struct ParsedUrl {
  std::string scheme_host_port;  // what httplib::Client takes
  std::string path_prefix;       // "" or "/v1"
};

ParsedUrl parse_base_url(const std::string& base_url) {
  const std::size_t scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw BackendError("base_url must include a scheme: " + base_url);
  }
  const std::size_t path_start = base_url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    return {base_url, ""};
  }
  std::string prefix = base_url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {base_url.substr(0, path_start), prefix};
}

}  // namespace

struct HttpChatBackend::Impl {
  HttpBackendConfig config;
  ParsedUrl url;
  httplib::Client client;
  std::counting_semaphore<1 << 20> in_flight;

  explicit Impl(HttpBackendConfig cfg)
      : config(std::move(cfg)),
        url(parse_base_url(config.base_url)),
        client(url.scheme_host_port),
        in_flight(std::max(1, config.max_in_flight)) {
    client.set_connection_timeout(0, config.connect_timeout_ms * 1000);
    client.set_read_timeout(config.read_timeout_ms / 1000,
                            (config.read_timeout_ms % 1000) * 1000);
    if (!config.api_key.empty()) {
      client.set_default_headers({{"Authorization", "Bearer " + config.api_key}});
    }
  }
};

HttpChatBackend::HttpChatBackend(HttpBackendConfig config)
    : impl_(std::make_unique<Impl>(std::move(config))) {}

HttpChatBackend::~HttpChatBackend() = default;

ChatResponse HttpChatBackend::complete(const ChatRequest& request) {
  impl_->in_flight.acquire();
  struct Release {
    std::counting_semaphore<1 << 20>& sem;
    ~Release() { sem.release(); }
  } release{impl_->in_flight};

  const std::string body = build_chat_request_body(request, impl_->config.model);
  auto result = impl_->client.Post(impl_->url.path_prefix + "/chat/completions", body,
                                   "application/json");
  if (!result) {
    throw BackendError("transport failure: " + httplib::to_string(result.error()));
  }
  if (result->status < 200 || result->status >= 300) {
    throw BackendError("remote returned status " + std::to_string(result->status) + ": " +
                       result->body.substr(0, 200));
  }
  return parse_chat_response_body(result->body);
}

}  // namespace cantante
