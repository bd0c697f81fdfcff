#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <string_view>

#include "palette/util.hpp"

namespace palette {

/// scheme://host[:port][/prefix], split for the HTTP client.
struct Url {
  std::string scheme;
  std::string host_port;
  std::string prefix;  // no trailing slash

  /// Throws BadConfig unless `text` is an absolute http(s) URL.
  static Url parse(std::string_view text);
  std::string origin() const { return scheme + "://" + host_port; }
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

struct HttpOptions {
  std::chrono::milliseconds timeout{30000};
  std::string bearer_token;  // sent as "Authorization: Bearer ..." when non-empty
};

/// POST `body` as JSON to base_url + path. Throws EndpointUnreachable when no
/// response arrives; any HTTP status is returned to the caller.
HttpResponse http_post_json(const Url& base, std::string_view path, const json& body, const HttpOptions& options);

/// Value of an environment variable, empty when unset.
std::string env_or_empty(const std::string& name);

/// Loopback HTTP server on a background thread, for mocks and tests.
class LocalServer {
 public:
  using Handler = std::function<HttpResponse(const std::string& body, const std::string& authorization)>;

  LocalServer();
  ~LocalServer();
  LocalServer(const LocalServer&) = delete;
  LocalServer& operator=(const LocalServer&) = delete;

  void post(const std::string& path, Handler handler);
  /// Binds 127.0.0.1 (port 0 picks a free one) and starts serving. Returns the port.
  int start(int port = 0);
  /// Blocks serving on the calling thread.
  void run(int port);
  void stop();
  std::string base_url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace palette
