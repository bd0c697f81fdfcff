#include "palette/http.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "palette/error.hpp"

namespace palette {

Url Url::parse(std::string_view text) {
  Url url;
  const auto sep = text.find("://");
  if (sep == std::string_view::npos) throw Error(ErrorCode::BadConfig, "not an absolute URL", std::string(text));
  url.scheme = std::string(text.substr(0, sep));
  if (url.scheme != "http" && url.scheme != "https")
    throw Error(ErrorCode::BadConfig, "URL scheme must be http or https", std::string(text));
  auto rest = text.substr(sep + 3);
  const auto slash = rest.find('/');
  url.host_port = std::string(rest.substr(0, slash));
  if (url.host_port.empty()) throw Error(ErrorCode::BadConfig, "URL has no host", std::string(text));
  if (slash != std::string_view::npos) {
    url.prefix = std::string(rest.substr(slash));
    while (!url.prefix.empty() && url.prefix.back() == '/') url.prefix.pop_back();
  }
  return url;
}

std::string env_or_empty(const std::string& name) {
  if (name.empty()) return {};
  const char* v = std::getenv(name.c_str());
  return v ? std::string(v) : std::string{};
}

HttpResponse http_post_json(const Url& base, std::string_view path, const json& body, const HttpOptions& options) {
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (base.scheme == "https") throw Error(ErrorCode::BadConfig, "built without TLS support", base.origin());
#endif
  httplib::Client client(base.origin());
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!options.bearer_token.empty()) headers.emplace("Authorization", "Bearer " + options.bearer_token);
  const std::string target = base.prefix + std::string(path);
  auto res = client.Post(target, headers, body.dump(-1, ' ', false, json::error_handler_t::replace), "application/json");
  if (!res)
    throw Error(ErrorCode::EndpointUnreachable, "request failed: " + httplib::to_string(res.error()),
                base.origin() + target);
  return {res->status, res->body};
}

struct LocalServer::Impl {
  httplib::Server server;
  std::thread thread;
  int port = 0;
};

LocalServer::LocalServer() : impl_(std::make_unique<Impl>()) {}

LocalServer::~LocalServer() { stop(); }

void LocalServer::post(const std::string& path, Handler handler) {
  impl_->server.Post(path, [h = std::move(handler)](const httplib::Request& req, httplib::Response& res) {
    auto out = h(req.body, req.get_header_value("Authorization"));
    res.status = out.status;
    res.set_content(out.body, "application/json");
  });
}

int LocalServer::start(int port) {
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
  } else if (impl_->server.bind_to_port("127.0.0.1", port)) {
    impl_->port = port;
  } else {
    impl_->port = -1;
  }
  if (impl_->port <= 0) throw Error(ErrorCode::IoFailure, "cannot bind loopback port");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void LocalServer::run(int port) {
  impl_->port = port;
  if (!impl_->server.listen("127.0.0.1", port))
    throw Error(ErrorCode::IoFailure, "cannot listen on port " + std::to_string(port));
}

void LocalServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string LocalServer::base_url() const { return "http://127.0.0.1:" + std::to_string(impl_->port); }

}  // namespace palette
