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

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <string>
#include <utility>

#include "json.hpp"
#include "promptsearch/oracle.hpp"

// Frames are a 4-byte big-endian payload length followed by that many bytes
// of UTF-8 JSON. Every message is an object with a "type" member.
namespace promptsearch::wire {

using nlohmann::json;

inline constexpr std::uint32_t kMaxFrameBytes = 1u << 30;

// Error codes carried in error frames.
inline constexpr const char* kMalformedFrame = "malformed_frame";
inline constexpr const char* kBadRequest = "bad_request";
inline constexpr const char* kFingerprintMismatch = "fingerprint_mismatch";
inline constexpr const char* kInternal = "internal";

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  void shutdown() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

  void set_timeout(double seconds) {
    timeval tv{};
    tv.tv_sec = static_cast<time_t>(seconds);
    tv.tv_usec = static_cast<suseconds_t>((seconds - static_cast<double>(tv.tv_sec)) * 1e6);
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    ::setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
  }

 private:
  int fd_ = -1;
};

inline Socket connect_tcp(const std::string& host, int port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  std::string service = std::to_string(port);
  if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0) {
    throw OracleError("resolve " + host + ": " + ::gai_strerror(rc));
  }
  Socket s;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    Socket candidate(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
    if (!candidate.valid()) continue;
    if (::connect(candidate.fd(), ai->ai_addr, ai->ai_addrlen) == 0) {
      s = std::move(candidate);
      break;
    }
  }
  ::freeaddrinfo(res);
  if (!s.valid()) {
    throw OracleError("connect " + host + ":" + service + ": " + std::strerror(errno));
  }
  int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return s;
}

inline void send_all(const Socket& s, const char* data, std::size_t n) {
  while (n > 0) {
    ssize_t w = ::send(s.fd(), data, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw OracleError(std::string("send: ") +
                        (errno == EAGAIN || errno == EWOULDBLOCK ? "timeout" : std::strerror(errno)));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

// Returns false on a clean end-of-stream before the first byte.
inline bool recv_all(const Socket& s, char* data, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    ssize_t r = ::recv(s.fd(), data + got, n - got, 0);
    if (r == 0) {
      if (got == 0) return false;
      throw OracleError("recv: connection closed mid-frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      throw OracleError(std::string("recv: ") +
                        (errno == EAGAIN || errno == EWOULDBLOCK ? "timeout" : std::strerror(errno)));
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

inline void write_raw_frame(const Socket& s, const std::string& payload) {
  if (payload.size() > kMaxFrameBytes) throw OracleError("frame too large");
  auto n = static_cast<std::uint32_t>(payload.size());
  // One buffer, so a frame never waits on delayed ACKs between two writes.
  std::string frame;
  frame.reserve(4 + payload.size());
  frame.push_back(static_cast<char>((n >> 24) & 0xff));
  frame.push_back(static_cast<char>((n >> 16) & 0xff));
  frame.push_back(static_cast<char>((n >> 8) & 0xff));
  frame.push_back(static_cast<char>(n & 0xff));
  frame += payload;
  send_all(s, frame.data(), frame.size());
}

inline void write_frame(const Socket& s, const json& message) {
  write_raw_frame(s, message.dump());
}

// Reads one frame payload; std::nullopt on clean end-of-stream.
inline std::optional<std::string> read_raw_frame(const Socket& s) {
  std::array<unsigned char, 4> header{};
  if (!recv_all(s, reinterpret_cast<char*>(header.data()), header.size())) {
    return std::nullopt;
  }
  std::uint32_t n = (std::uint32_t{header[0]} << 24) | (std::uint32_t{header[1]} << 16) |
                    (std::uint32_t{header[2]} << 8) | std::uint32_t{header[3]};
  if (n > kMaxFrameBytes) throw OracleError("frame length " + std::to_string(n) + " too large");
  std::string payload(n, '\0');
  if (n > 0 && !recv_all(s, payload.data(), n)) {
    throw OracleError("recv: connection closed mid-frame");
  }
  return payload;
}

class MalformedFrame : public OracleError {
 public:
  using OracleError::OracleError;
};

inline json parse_message(const std::string& payload) {
  json j = json::parse(payload, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    throw MalformedFrame("malformed frame");
  }
  return j;
}

// ---- message codecs --------------------------------------------------------

inline json hello_message(const std::string& fingerprint, std::size_t size,
                          std::optional<Eigen::Index> dim) {
  json j{{"type", "hello"}, {"vocab_fingerprint", fingerprint}, {"size", size}};
  j["dim"] = dim ? json(*dim) : json(nullptr);
  return j;
}

inline json error_message(const std::string& code, const std::string& message) {
  return json{{"type", "error"}, {"code", code}, {"message", message}};
}

inline json to_doubles(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Vector from_doubles(const json& j) {
  if (!j.is_array()) throw OracleError("expected array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw OracleError("expected number");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline json query_message(const OracleRequest& req) {
  json j{{"type", "query"},
         {"token_ids", req.prompt.token_ids},
         {"mask_position", req.prompt.mask_position},
         {"grad_positions", req.grad_positions},
         {"want_hidden", req.want_hidden}};
  j["label_token_ids"] = req.label_token_ids ? json(*req.label_token_ids) : json(nullptr);
  return j;
}

// The wire query does not carry trigger positions; the gradient positions
// stand in for them.
inline OracleRequest request_from_message(const json& j) {
  try {
    OracleRequest req;
    req.prompt.token_ids = j.at("token_ids").get<TokenIds>();
    req.prompt.mask_position = j.at("mask_position").get<std::size_t>();
    req.grad_positions = j.value("grad_positions", std::vector<std::size_t>{});
    req.prompt.trigger_positions = req.grad_positions;
    if (j.contains("label_token_ids") && !j["label_token_ids"].is_null()) {
      req.label_token_ids = j["label_token_ids"].get<TokenIds>();
    }
    req.want_hidden = j.value("want_hidden", false);
    return req;
  } catch (const json::exception& e) {
    throw MalformedFrame(std::string("malformed query: ") + e.what());
  }
}

inline json response_message(const OracleResponse& r) {
  json grads = json::object();
  for (const auto& [pos, g] : r.grads) grads[std::to_string(pos)] = to_doubles(g);
  json j{{"type", "response"}, {"mask_log_probs", to_doubles(r.mask_log_probs)}, {"grads", grads}};
  j["mask_hidden"] = r.mask_hidden ? to_doubles(*r.mask_hidden) : json(nullptr);
  return j;
}

inline OracleResponse response_from_message(const json& j) {
  try {
    OracleResponse r;
    r.mask_log_probs = from_doubles(j.at("mask_log_probs"));
    for (const auto& [key, value] : j.at("grads").items()) {
      std::size_t used = 0;
      unsigned long pos = std::stoul(key, &used);
      if (used != key.size()) throw OracleError("bad gradient key '" + key + "'");
      r.grads[pos] = from_doubles(value);
    }
    if (j.contains("mask_hidden") && !j["mask_hidden"].is_null()) {
      r.mask_hidden = from_doubles(j["mask_hidden"]);
    }
    return r;
  } catch (const json::exception& e) {
    throw OracleError(std::string("malformed response: ") + e.what());
  } catch (const std::logic_error& e) {
    throw OracleError(std::string("malformed response: ") + e.what());
  }
}

inline std::string to_string(EmbeddingKind k) {
  return k == EmbeddingKind::kInput ? "input" : "output";
}

inline EmbeddingKind parse_embedding_kind(const std::string& s) {
  if (s == "input") return EmbeddingKind::kInput;
  if (s == "output") return EmbeddingKind::kOutput;
  throw MalformedFrame("unknown embedding kind '" + s + "'");
}

// Request: {type: embeddings, kind, rows: [ids]}. The reply echoes kind and
// rows and adds vectors: [[f64]], one per requested id.
inline json embeddings_request(EmbeddingKind kind, std::span<const TokenId> ids) {
  return json{{"type", "embeddings"},
              {"kind", to_string(kind)},
              {"rows", TokenIds(ids.begin(), ids.end())}};
}

inline json embeddings_reply(EmbeddingKind kind, std::span<const TokenId> ids,
                             const Matrix& rows) {
  json vectors = json::array();
  for (Eigen::Index i = 0; i < rows.rows(); ++i) vectors.push_back(to_doubles(rows.row(i).transpose()));
  return json{{"type", "embeddings"},
              {"kind", to_string(kind)},
              {"rows", TokenIds(ids.begin(), ids.end())},
              {"vectors", vectors}};
}

}  // namespace promptsearch::wire
