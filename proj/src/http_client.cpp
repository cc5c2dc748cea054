#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "realdesc/http_client.hpp"

#include "realdesc/errors.hpp"

namespace realdesc::http {
namespace {

struct SplitUrl {
  std::string origin;
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("malformed URL: " + url);
  auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

httplib::Headers to_httplib(const Headers& headers) {
  httplib::Headers out;
  for (const auto& [k, v] : headers) out.emplace(k, v);
  return out;
}

}  // namespace

Response get(const std::string& url, const Headers& headers) {
  auto parts = split_url(url);
  httplib::Client client(parts.origin);
  client.set_follow_location(true);
  client.set_connection_timeout(10);
  client.set_read_timeout(300);
  auto res = client.Get(parts.path, to_httplib(headers));
  if (!res) return {0, httplib::to_string(res.error())};
  return {res->status, std::move(res->body)};
}

Response post_json(const std::string& url, const std::string& body, const Headers& headers) {
  auto parts = split_url(url);
  httplib::Client client(parts.origin);
  client.set_follow_location(true);
  client.set_connection_timeout(10);
  client.set_read_timeout(120);
  auto res = client.Post(parts.path, to_httplib(headers), body, "application/json");
  if (!res) return {0, httplib::to_string(res.error())};
  return {res->status, std::move(res->body)};
}

}  // namespace realdesc::http
