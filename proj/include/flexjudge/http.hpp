#pragma once

#include <chrono>
#include <cstdlib>
#include <string>

#include <httplib.h>

#include "flexjudge/backend.hpp"

namespace flexjudge {

/// POSTs request bodies to `<base_url>/chat/completions`, e.g. base
/// "http://localhost:8000/v1". One httplib client per request keeps the
/// transport safe to share across worker threads.
class HttpTransport : public Transport {
 public:
  HttpTransport(std::string base_url, std::string api_key, std::chrono::seconds timeout = std::chrono::seconds(600))
      : api_key_(std::move(api_key)), timeout_(timeout) {
    auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("backend url needs a scheme: " + base_url);
    auto path_start = base_url.find('/', scheme_end + 3);
    origin_ = base_url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "" : base_url.substr(path_start);
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
    path_ += "/chat/completions";
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (origin_.rfind("https://", 0) == 0) throw ConfigError("https backend requires a TLS-enabled build");
#endif
  }

  TransportResponse post(const std::string& body) override {
    httplib::Client cli(origin_);
    cli.set_connection_timeout(std::chrono::seconds(30));
    cli.set_read_timeout(timeout_);
    cli.set_write_timeout(std::chrono::seconds(60));
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = cli.Post(path_, headers, body, "application/json");
    TransportResponse out;
    if (!res) {
      out.error = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    out.body = res->body;
    return out;
  }

  const std::string& path() const { return path_; }

 private:
  std::string origin_;
  std::string path_;
  std::string api_key_;
  std::chrono::seconds timeout_;
};

inline std::string env_or(const char* name, std::string fallback = {}) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : fallback;
}

}  // namespace flexjudge
