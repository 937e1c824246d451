// Copyright 2026 The promptsearch Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <atomic>
#include <list>
#include <mutex>
#include <thread>

#include "promptsearch/wire.hpp"

namespace promptsearch {

// Answers framed-JSON protocol requests from an in-process oracle. Used as
// the reference server in tests and by `promptsearch serve-toy`.
class WireServer {
 public:
  explicit WireServer(const Oracle& oracle, std::string host = "127.0.0.1", int port = 0)
      : oracle_(oracle) {
    listener_ = wire::Socket(::socket(AF_INET, SOCK_STREAM, 0));
    if (!listener_.valid()) throw OracleError("socket: " + std::string(std::strerror(errno)));
    int one = 1;
    ::setsockopt(listener_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
      throw ConfigError("bind address must be a dotted IPv4 address: " + host);
    }
    if (::bind(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(listener_.fd(), 16) != 0) {
      throw OracleError("bind " + host + ":" + std::to_string(port) + ": " + std::strerror(errno));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    acceptor_ = std::thread([this] { accept_loop(); });
  }

  WireServer(const WireServer&) = delete;
  WireServer& operator=(const WireServer&) = delete;
  ~WireServer() { stop(); }

  int port() const { return port_; }

  void stop() {
    if (stopping_.exchange(true)) return;
    listener_.shutdown();
    if (acceptor_.joinable()) acceptor_.join();
    {
      std::lock_guard lock(mu_);
      for (auto& c : connections_) c.socket.shutdown();
    }
    for (auto& c : connections_) {
      if (c.thread.joinable()) c.thread.join();
    }
  }

  // Blocks until stop() is called from another thread.
  void wait() {
    if (acceptor_.joinable()) acceptor_.join();
  }

  // Serves one connection until the peer closes it.
  static void serve(const wire::Socket& s, const Oracle& oracle) {
    using nlohmann::json;
    bool greeted = false;
    while (true) {
      std::optional<std::string> payload;
      try {
        payload = wire::read_raw_frame(s);
      } catch (const OracleError&) {
        return;
      }
      if (!payload) return;
      json reply;
      try {
        json msg = wire::parse_message(*payload);
        const auto type = msg["type"].get<std::string>();
        if (type == "hello") {
          auto fp = msg.value("vocab_fingerprint", std::string());
          if (!fp.empty() && fp != oracle.vocab().fingerprint()) {
            reply = wire::error_message(wire::kFingerprintMismatch,
                                        "server vocabulary fingerprint is " +
                                            oracle.vocab().fingerprint());
          } else {
            greeted = true;
            reply = wire::hello_message(oracle.vocab().fingerprint(), oracle.vocab().size(),
                                        oracle.dim());
          }
        } else if (!greeted) {
          reply = wire::error_message(wire::kBadRequest, "hello required first");
        } else if (type == "query") {
          reply = wire::response_message(oracle.query(wire::request_from_message(msg)));
        } else if (type == "embeddings") {
          auto kind = wire::parse_embedding_kind(msg.at("kind").get<std::string>());
          auto ids = msg.at("rows").get<TokenIds>();
          reply = wire::embeddings_reply(kind, ids, oracle.embedding_rows(kind, ids));
        } else {
          reply = wire::error_message(wire::kBadRequest, "unknown message type '" + type + "'");
        }
      } catch (const wire::MalformedFrame& e) {
        reply = wire::error_message(wire::kMalformedFrame, e.what());
      } catch (const nlohmann::json::exception& e) {
        reply = wire::error_message(wire::kMalformedFrame, e.what());
      } catch (const Error& e) {
        reply = wire::error_message(wire::kBadRequest, e.what());
      } catch (const std::exception& e) {
        reply = wire::error_message(wire::kInternal, e.what());
      }
      try {
        wire::write_frame(s, reply);
      } catch (const OracleError&) {
        return;
      }
    }
  }

 private:
  struct Connection {
    wire::Socket socket;
    std::thread thread;
  };

  void accept_loop() {
    while (!stopping_) {
      int fd = ::accept(listener_.fd(), nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        return;
      }
      std::lock_guard lock(mu_);
      if (stopping_) {
        ::close(fd);
        return;
      }
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      auto& c = connections_.emplace_back();
      c.socket = wire::Socket(fd);
      c.thread = std::thread([this, &c] { serve(c.socket, oracle_); });
    }
  }

  const Oracle& oracle_;
  wire::Socket listener_;
  int port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::list<Connection> connections_;
};

}  // namespace promptsearch
