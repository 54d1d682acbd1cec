#pragma once

// Chat-completions style annotator client. Define CPPHTTPLIB_OPENSSL_SUPPORT
// before including this header (and link OpenSSL) to reach https endpoints.

#include <cstdlib>
#include <string>

#include <httplib.h>
#include <json.hpp>

// httplib leaks the _res macro from resolv.h.
#ifdef _res
#undef _res
#endif

#include "annotation.hpp"

namespace rapl {

struct HttpClientConfig {
  std::string base_url = "https://api.openai.com";  // scheme://host[:port]
  std::string endpoint = "/v1/chat/completions";
  std::string model = "gpt-4o-mini";
  std::string api_key;
  int timeout_seconds = 60;
  double temperature = 0.0;
};

/// Reads the API key from `env_var`; an unset variable leaves it empty.
inline std::string api_key_from_env(const std::string& env_var) {
  const char* v = std::getenv(env_var.c_str());
  return v ? std::string(v) : std::string();
}

class HttpAnnotatorClient : public AnnotatorClient {
 public:
  explicit HttpAnnotatorClient(HttpClientConfig cfg) : cfg_(std::move(cfg)) {}

  std::string id() const override { return "external:" + cfg_.model; }

  std::string complete(const std::string& prompt) override {
    httplib::Client client(cfg_.base_url);
    client.set_connection_timeout(cfg_.timeout_seconds, 0);
    client.set_read_timeout(cfg_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

    nlohmann::json body{{"model", cfg_.model},
                        {"temperature", cfg_.temperature},
                        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
    auto res = client.Post(cfg_.endpoint, headers, body.dump(), "application/json");
    if (!res) throw TransportError("request to " + cfg_.base_url + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw TransportError("annotator endpoint returned HTTP " + std::to_string(res->status));
    try {
      auto j = nlohmann::json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(std::string("malformed annotator response: ") + e.what());
    }
  }

 private:
  HttpClientConfig cfg_;
};

}  // namespace rapl
