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

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "promptsearch/embedding.hpp"
#include "promptsearch/error.hpp"
#include "promptsearch/prompt_template.hpp"
#include "promptsearch/vocabulary.hpp"

namespace promptsearch {

struct OracleRequest {
  PromptInstance prompt;
  // V_y: the label tokens whose summed mask probability is the gradient loss.
  std::optional<TokenIds> label_token_ids;
  // Token positions (not trigger indices) to differentiate at.
  std::vector<std::size_t> grad_positions;
  bool want_hidden = false;
};

struct OracleResponse {
  Vector mask_log_probs;
  // position -> d/d(input embedding at position) of log sum_{w in V_y} p(w).
  std::map<std::size_t, Vector> grads;
  std::optional<Vector> mask_hidden;
};

enum class EmbeddingKind { kInput, kOutput };

// A masked language model seen from the outside. Implementations must be
// safe to query from several threads at once.
class Oracle {
 public:
  virtual ~Oracle() = default;

  virtual OracleResponse query(const OracleRequest& request) const = 0;
  virtual const Vocabulary& vocab() const = 0;
  virtual Eigen::Index dim() const = 0;
  // Rows of the input or output embedding matrix, in the order requested.
  virtual Matrix embedding_rows(EmbeddingKind kind,
                                std::span<const TokenId> ids) const = 0;

  EmbeddingView embeddings() const {
    TokenIds all(vocab().size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<TokenId>(i);
    return EmbeddingView{embedding_rows(EmbeddingKind::kInput, all),
                         embedding_rows(EmbeddingKind::kOutput, all)};
  }
};

inline double log_sum_exp(const Vector& v, std::span<const TokenId> ids) {
  double m = -std::numeric_limits<double>::infinity();
  for (TokenId id : ids) m = std::max(m, v[id]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (TokenId id : ids) s += std::exp(v[id] - m);
  return m + std::log(s);
}

inline Vector log_softmax(const Vector& logits) {
  double m = logits.maxCoeff();
  double z = std::log((logits.array() - m).exp().sum()) + m;
  return (logits.array() - z).matrix();
}

// log p(y | prompt) = log of the summed mask probability over V_y.
inline double label_log_likelihood(const OracleResponse& r,
                                   std::span<const TokenId> label_tokens) {
  return log_sum_exp(r.mask_log_probs, label_tokens);
}

// Checks a response against the request it answers. Throws OracleError.
inline void validate_response(const OracleRequest& req, const OracleResponse& r,
                              std::size_t vocab_size, Eigen::Index dim) {
  if (static_cast<std::size_t>(r.mask_log_probs.size()) != vocab_size) {
    throw OracleError("response: mask_log_probs has " +
                      std::to_string(r.mask_log_probs.size()) +
                      " entries, expected " + std::to_string(vocab_size));
  }
  if (r.mask_log_probs.array().isNaN().any() ||
      (r.mask_log_probs.array() > 1e-9).any()) {
    throw OracleError("response: invalid log probabilities");
  }
  double total = r.mask_log_probs.array().exp().sum();
  if (std::abs(total - 1.0) > 1e-6) {
    throw OracleError("response: probabilities sum to " + std::to_string(total));
  }
  if (r.grads.size() != req.grad_positions.size()) {
    throw OracleError("response: expected " + std::to_string(req.grad_positions.size()) +
                      " gradients, got " + std::to_string(r.grads.size()));
  }
  for (auto pos : req.grad_positions) {
    auto it = r.grads.find(pos);
    if (it == r.grads.end()) {
      throw OracleError("response: missing gradient for position " + std::to_string(pos));
    }
    if (it->second.size() != dim || !it->second.allFinite()) {
      throw OracleError("response: malformed gradient at position " + std::to_string(pos));
    }
  }
  if (req.want_hidden) {
    if (!r.mask_hidden || r.mask_hidden->size() != dim || !r.mask_hidden->allFinite()) {
      throw OracleError("response: missing or malformed mask hidden state");
    }
  }
}

// Precondition checks shared by every backend.
inline void check_request(const OracleRequest& req, const Vocabulary& vocab) {
  const auto& p = req.prompt;
  if (p.mask_position >= p.token_ids.size() ||
      p.token_ids[p.mask_position] != vocab.mask_id()) {
    throw OracleError("request: mask position does not hold the mask token");
  }
  for (TokenId id : p.token_ids) {
    if (!vocab.contains(id)) {
      throw OracleError("request: token id " + std::to_string(id) + " out of range");
    }
  }
  if (!req.grad_positions.empty()) {
    if (!req.label_token_ids || req.label_token_ids->empty()) {
      throw OracleError("request: gradients need label tokens");
    }
    for (auto pos : req.grad_positions) {
      if (std::find(p.trigger_positions.begin(), p.trigger_positions.end(), pos) ==
          p.trigger_positions.end()) {
        throw OracleError("request: gradient position " + std::to_string(pos) +
                          " is not a trigger position");
      }
    }
  }
  if (req.label_token_ids) {
    for (TokenId id : *req.label_token_ids) {
      if (!vocab.contains(id)) {
        throw OracleError("request: label token id " + std::to_string(id) + " out of range");
      }
    }
  }
}

}  // namespace promptsearch
