#pragma once

#include <map>
#include <string>

namespace realdesc::http {

struct Response {
  int status = 0;
  std::string body;
};

using Headers = std::multimap<std::string, std::string>;

/// Blocking GET that follows redirects. Transport failures come back as status 0.
Response get(const std::string& url, const Headers& headers = {});
Response post_json(const std::string& url, const std::string& body, const Headers& headers = {});

}  // namespace realdesc::http
