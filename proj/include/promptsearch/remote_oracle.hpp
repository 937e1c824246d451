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

#include <mutex>
#include <string>

#include "promptsearch/wire.hpp"

namespace promptsearch {

struct Endpoint {
  std::string host;
  int port = 0;

  // "HOST:PORT"; the port is whatever follows the last colon.
  static Endpoint parse(const std::string& spec) {
    auto colon = spec.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == spec.size()) {
      throw ConfigError("endpoint must be HOST:PORT, got '" + spec + "'");
    }
    Endpoint e{spec.substr(0, colon), 0};
    try {
      std::size_t used = 0;
      e.port = std::stoi(spec.substr(colon + 1), &used);
      if (used != spec.size() - colon - 1 || e.port <= 0 || e.port > 65535) throw std::out_of_range("");
    } catch (const std::logic_error&) {
      throw ConfigError("bad port in endpoint '" + spec + "'");
    }
    return e;
  }
};

// Client side of the framed-JSON protocol. One request is in flight per
// connection; concurrent callers are serialized.
class RemoteOracle final : public Oracle {
 public:
  RemoteOracle(const Endpoint& endpoint, Vocabulary vocab, double timeout_seconds = 60.0)
      : vocab_(std::move(vocab)), socket_(wire::connect_tcp(endpoint.host, endpoint.port)) {
    socket_.set_timeout(timeout_seconds);
    wire::write_frame(socket_, wire::hello_message(vocab_.fingerprint(), vocab_.size(), std::nullopt));
    auto reply = read_reply("hello");
    auto fp = reply.value("vocab_fingerprint", std::string());
    if (fp != vocab_.fingerprint()) {
      throw OracleError("fingerprint mismatch: client " + vocab_.fingerprint() + ", server " + fp);
    }
    if (reply.value("size", std::size_t{0}) != vocab_.size()) {
      throw OracleError("vocabulary size mismatch with server");
    }
    if (!reply.contains("dim") || !reply["dim"].is_number_integer() || reply["dim"].get<long>() <= 0) {
      throw OracleError("server hello lacks a positive dim");
    }
    dim_ = reply["dim"].get<Eigen::Index>();
  }

  const Vocabulary& vocab() const override { return vocab_; }
  Eigen::Index dim() const override { return dim_; }

  OracleResponse query(const OracleRequest& req) const override {
    check_request(req, vocab_);
    std::lock_guard lock(mu_);
    wire::write_frame(socket_, wire::query_message(req));
    auto resp = wire::response_from_message(read_reply("response"));
    validate_response(req, resp, vocab_.size(), dim_);
    return resp;
  }

  Matrix embedding_rows(EmbeddingKind kind, std::span<const TokenId> ids) const override {
    std::lock_guard lock(mu_);
    wire::write_frame(socket_, wire::embeddings_request(kind, ids));
    auto reply = read_reply("embeddings");
    const auto& vectors = reply.at("vectors");
    if (!vectors.is_array() || vectors.size() != ids.size()) {
      throw OracleError("embeddings reply: expected " + std::to_string(ids.size()) + " rows");
    }
    Matrix out(static_cast<Eigen::Index>(ids.size()), dim_);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      Vector row = wire::from_doubles(vectors[i]);
      if (row.size() != dim_ || !row.allFinite()) throw OracleError("embeddings reply: malformed row");
      out.row(static_cast<Eigen::Index>(i)) = row.transpose();
    }
    return out;
  }

 private:
  nlohmann::json read_reply(const std::string& expected_type) const {
    auto payload = wire::read_raw_frame(socket_);
    if (!payload) throw OracleError("server closed the connection");
    nlohmann::json j;
    try {
      j = wire::parse_message(*payload);
    } catch (const wire::MalformedFrame&) {
      throw OracleError("malformed frame from server");
    }
    const auto type = j["type"].get<std::string>();
    if (type == "error") {
      throw OracleError("server error [" + j.value("code", std::string("?")) + "]: " +
                        j.value("message", std::string()));
    }
    if (type != expected_type) {
      throw OracleError("expected '" + expected_type + "' frame, got '" + type + "'");
    }
    return j;
  }

  Vocabulary vocab_;
  mutable wire::Socket socket_;
  mutable std::mutex mu_;
  Eigen::Index dim_ = 0;
};

}  // namespace promptsearch
