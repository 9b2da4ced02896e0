#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <charconv>

#include "colliderlab/agents.hpp"

namespace colliderlab {

HttpPost default_http_post(std::chrono::seconds timeout) {
  return [timeout](const std::string &endpoint, const std::string &path,
                   const HttpHeaders &headers, const std::string &body) {
    httplib::Client client(endpoint);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers h(headers.begin(), headers.end());
    HttpReply reply;
    auto res = client.Post(path, h, body, "application/json");
    if (!res) {
      reply.error = httplib::to_string(res.error());
      return reply;
    }
    reply.status = res->status;
    reply.body = res->body;
    if (res->has_header("Retry-After")) {
      const std::string v = res->get_header_value("Retry-After");
      double seconds = 0.0;
      const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), seconds);
      if (ec == std::errc{} && p == v.data() + v.size() && seconds >= 0) {
        reply.retry_after_s = seconds;
      }
    }
    return reply;
  };
}

}  // namespace colliderlab
