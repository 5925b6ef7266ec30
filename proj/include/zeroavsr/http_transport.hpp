#pragma once

#include <cstdlib>
#include <string>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "zeroavsr/bridge.hpp"

namespace zeroavsr::bridge {

// HTTP(S) transport for the remote chat backend. The API key is read from
// the configured environment variable at call time and sent as a bearer
// token. 429/5xx replies surface as retryable timeouts; other non-200s are
// refusals.
inline RemoteBackend::Transport make_http_transport(const RemoteSettings& settings) {
  return [settings](const std::string& body) -> std::string {
    httplib::Client client(settings.endpoint);
    client.set_connection_timeout(settings.timeout_s);
    client.set_read_timeout(settings.timeout_s);
    client.set_write_timeout(settings.timeout_s);

    httplib::Headers headers;
    if (const char* key = std::getenv(settings.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);

    auto res = client.Post(settings.path, headers, body, "application/json");
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
          err == httplib::Error::Write)
        throw BackendTimeout(httplib::to_string(err));
      throw BackendUnreachable(httplib::to_string(err));
    }
    if (res->status == 429 || res->status >= 500)
      throw BackendTimeout("http status " + std::to_string(res->status));
    if (res->status != 200)
      throw BackendRefusal("http status " + std::to_string(res->status));
    return res->body;
  };
}

}  // namespace zeroavsr::bridge
