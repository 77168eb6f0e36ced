#pragma once

// Chat-completions client for a hosted vision-language model. The request carries the marked
// frame as a base64 PNG data URL next to the rendered prompt; the reply's first message content
// is parsed for the three frontier likelihoods.

#include <cstdlib>
#include <string>
#include <utility>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "vilad/annotate.hpp"
#include "vilad/codec.hpp"
#include "vilad/image.hpp"

namespace vilad::annotate {

struct RemoteOracleConfig {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-4o";
  std::string api_key_env = "VLM_API_KEY";
  int attempts = 3;
  int timeout_s = 60;
};

/// Splits "http(s)://host[:port]/path" into the base used by httplib and the request path.
inline std::pair<std::string, std::string> split_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("endpoint must be an absolute http(s) URL: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

class RemoteOracle final : public AnnotationOracle {
 public:
  explicit RemoteOracle(RemoteOracleConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.attempts < 1) throw ConfigError("remote oracle needs at least one attempt");
    const char* key = std::getenv(cfg_.api_key_env.c_str());
    if (!key || !*key) throw ConfigError("environment variable " + cfg_.api_key_env + " is not set");
    api_key_ = key;
    split_endpoint(cfg_.endpoint);
  }

  FrontierAnnotation annotate(const AnnotationRequest& request) override {
    if (!request.frame || !request.prompt) throw ValidationError("remote oracle needs a frame and a prompt");
    const std::string image_url = "data:image/png;base64," + base64_encode(encode_png(request.frame->image));
    const std::string user_text = request.prompt->render_user(request.scene_context);
    std::string last_reply;
    for (int attempt = 0; attempt < cfg_.attempts; ++attempt) {
      std::string text = user_text;
      if (attempt > 0)
        text += "\n\nYour previous answer could not be parsed. Reply with ONLY one JSON object of the form " +
                request.prompt->output_schema + " and no other text.";
      last_reply = send(request.prompt->system, text, image_url);
      if (auto parsed = parse_likelihoods(last_reply)) return *parsed;
    }
    throw OracleError("no usable likelihoods after " + std::to_string(cfg_.attempts) + " attempts", last_reply);
  }

  [[nodiscard]] std::string name() const override { return "remote"; }

 private:
  std::string send(const std::string& system, const std::string& text, const std::string& image_url) {
    const nlohmann::json body = {
        {"model", cfg_.model},
        {"temperature", 0},
        {"messages",
         {{{"role", "system"}, {"content", system}},
          {{"role", "user"},
           {"content",
            {{{"type", "text"}, {"text", text}}, {{"type", "image_url"}, {"image_url", {{"url", image_url}}}}}}}}}};
    const auto [base, path] = split_endpoint(cfg_.endpoint);
    httplib::Client client(base);
    client.set_connection_timeout(cfg_.timeout_s);
    client.set_read_timeout(cfg_.timeout_s);
    client.set_bearer_token_auth(api_key_);
    const auto res = client.Post(path, body.dump(), "application/json");
    if (!res) throw TransportError("request to " + cfg_.endpoint + " failed: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
      throw TransportError("endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body);
    const auto reply = nlohmann::json::parse(res->body, nullptr, false);
    if (reply.is_discarded()) return res->body;
    try {
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      return res->body;
    }
  }

  RemoteOracleConfig cfg_;
  std::string api_key_;
};

}  // namespace vilad::annotate
