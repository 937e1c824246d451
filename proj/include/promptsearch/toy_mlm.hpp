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

#include <cmath>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "promptsearch/oracle.hpp"

namespace promptsearch {

enum class Nonlinearity { kIdentity, kTanh };

inline std::string to_string(Nonlinearity f) {
  return f == Nonlinearity::kTanh ? "tanh" : "identity";
}

inline Nonlinearity parse_nonlinearity(const std::string& s) {
  if (s == "tanh") return Nonlinearity::kTanh;
  if (s == "identity") return Nonlinearity::kIdentity;
  throw ConfigError("unknown nonlinearity '" + s + "'");
}

// A desk-scale masked LM. The hidden state at the mask is
//
//   h = f(U * mean(e_t) + b),   logits(w) = out[w] . h
//
// where the mean runs over every position except the predicted one and
// padding. Mean pooling makes per-position gradients closed-form:
// dh/de_j = f'(z) (*) U / n.
class ToyMlm final : public Oracle {
 public:
  ToyMlm(Vocabulary vocab, EmbeddingView embeddings, Matrix context_map,
         Vector bias, Nonlinearity f)
      : vocab_(std::move(vocab)),
        emb_(std::move(embeddings)),
        context_map_(std::move(context_map)),
        bias_(std::move(bias)),
        f_(f) {
    emb_.check(vocab_.size());
    if (context_map_.rows() != dim() || context_map_.cols() != dim() ||
        bias_.size() != dim()) {
      throw ConfigError("toy model: context map / bias shape mismatch");
    }
  }

  const Vocabulary& vocab() const override { return vocab_; }
  Eigen::Index dim() const override { return emb_.dim(); }
  const EmbeddingView& embedding_view() const { return emb_; }
  const Matrix& context_map() const { return context_map_; }
  const Vector& bias() const { return bias_; }
  Nonlinearity nonlinearity() const { return f_; }

  Matrix embedding_rows(EmbeddingKind kind,
                        std::span<const TokenId> ids) const override {
    const Matrix& src = kind == EmbeddingKind::kInput ? emb_.input : emb_.output;
    Matrix out(static_cast<Eigen::Index>(ids.size()), dim());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!vocab_.contains(ids[i])) {
        throw OracleError("embedding row " + std::to_string(ids[i]) + " out of range");
      }
      out.row(static_cast<Eigen::Index>(i)) = src.row(ids[i]);
    }
    return out;
  }

  struct Forward {
    std::size_t context_count = 0;
    Vector pooled;
    Vector pre;     // z
    Vector hidden;  // h
    Vector log_probs;
  };

  Forward forward(const TokenIds& tokens, std::size_t predict_position) const {
    Forward fw;
    fw.pooled = Vector::Zero(dim());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (!in_context(tokens, i, predict_position)) continue;
      fw.pooled += emb_.input.row(tokens[i]).transpose();
      ++fw.context_count;
    }
    if (fw.context_count > 0) fw.pooled /= static_cast<double>(fw.context_count);
    fw.pre = context_map_ * fw.pooled + bias_;
    fw.hidden = activate(fw.pre);
    fw.log_probs = log_softmax(emb_.output * fw.hidden);
    return fw;
  }

  bool in_context(const TokenIds& tokens, std::size_t i,
                  std::size_t predict_position) const {
    return i != predict_position && !(vocab_.pad_id() && tokens[i] == *vocab_.pad_id());
  }

  Vector activate(const Vector& z) const {
    return f_ == Nonlinearity::kTanh ? Vector(z.array().tanh()) : z;
  }

  Vector activation_slope(const Vector& z) const {
    if (f_ == Nonlinearity::kIdentity) return Vector::Ones(z.size());
    return (1.0 - z.array().tanh().square()).matrix();
  }

  OracleResponse query(const OracleRequest& req) const override {
    check_request(req, vocab_);
    const auto& p = req.prompt;
    Forward fw = forward(p.token_ids, p.mask_position);
    OracleResponse r;
    r.mask_log_probs = fw.log_probs;
    if (req.want_hidden) r.mask_hidden = fw.hidden;
    if (!req.grad_positions.empty()) {
      // d/dlogits log sum_{V_y} p = q - p, q = p restricted to V_y, renormalized.
      const auto& labels = *req.label_token_ids;
      Vector probs = fw.log_probs.array().exp();
      double label_lse = log_sum_exp(fw.log_probs, labels);
      Vector dlogits = -probs;
      std::vector<bool> seen(vocab_.size());
      for (TokenId w : labels) {
        if (seen[w]) continue;
        seen[w] = true;
        dlogits[w] += std::exp(fw.log_probs[w] - label_lse);
      }
      Vector dpre = activation_slope(fw.pre).cwiseProduct(emb_.output.transpose() * dlogits);
      Vector dpooled = context_map_.transpose() * dpre;
      for (auto pos : req.grad_positions) {
        if (fw.context_count == 0 || !in_context(p.token_ids, pos, p.mask_position)) {
          r.grads[pos] = Vector::Zero(dim());
        } else {
          r.grads[pos] = dpooled / static_cast<double>(fw.context_count);
        }
      }
    }
    return r;
  }

  nlohmann::json to_json() const {
    auto rows = [](const Matrix& m) {
      std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) out[i].push_back(m(i, j));
      }
      return out;
    };
    nlohmann::json j;
    j["format"] = "promptsearch-toy-mlm/1";
    j["vocab"] = vocab_.to_json();
    j["nonlinearity"] = to_string(f_);
    j["input_embeddings"] = rows(emb_.input);
    j["output_embeddings"] = rows(emb_.output);
    j["context_map"] = rows(context_map_);
    j["bias"] = std::vector<double>(bias_.data(), bias_.data() + bias_.size());
    return j;
  }

  static ToyMlm from_json(const nlohmann::json& j) {
    auto matrix = [](const nlohmann::json& a) {
      auto rows = a.get<std::vector<std::vector<double>>>();
      Matrix m(static_cast<Eigen::Index>(rows.size()),
               rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (static_cast<Eigen::Index>(rows[i].size()) != m.cols()) {
          throw ConfigError("toy model: ragged matrix");
        }
        for (std::size_t k = 0; k < rows[i].size(); ++k) m(i, k) = rows[i][k];
      }
      return m;
    };
    auto b = j.at("bias").get<std::vector<double>>();
    return ToyMlm(Vocabulary::from_json(j.at("vocab")),
                  EmbeddingView{matrix(j.at("input_embeddings")),
                                matrix(j.at("output_embeddings"))},
                  matrix(j.at("context_map")),
                  Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size())),
                  parse_nonlinearity(j.at("nonlinearity").get<std::string>()));
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write model file: " + path);
    out << to_json().dump() << '\n';
  }

  static ToyMlm load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open model file: " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("model file " + path + ": " + e.what());
    }
  }

 private:
  Vocabulary vocab_;
  EmbeddingView emb_;
  Matrix context_map_;
  Vector bias_;
  Nonlinearity f_;
};

// Training data for ToyMlm: a token sequence, which position is predicted,
// and the gold token at that position.
struct MaskedItem {
  TokenIds tokens;
  std::size_t masked_position = 0;
  TokenId gold = 0;
};

struct ToyTrainOptions {
  Eigen::Index dim = 8;
  std::size_t steps = 200;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
  Nonlinearity nonlinearity = Nonlinearity::kIdentity;
  double init_scale = 0.5;
};

struct ToyTrainResult {
  ToyMlm model;
  // losses[0] is the initial mean cross-entropy, losses[s] the value after
  // step s.
  std::vector<double> losses;
};

inline ToyMlm init_toy(const Vocabulary& vocab, const ToyTrainOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto n = static_cast<Eigen::Index>(vocab.size());
  const double scale = opt.init_scale;
  auto draw = [&](Eigen::Index rows, Eigen::Index cols, double s) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = s * normal(rng);
    return m;
  };
  Matrix in = draw(n, opt.dim, scale);
  Matrix out = draw(n, opt.dim, scale);
  Matrix u = Matrix::Identity(opt.dim, opt.dim) + draw(opt.dim, opt.dim, 0.1 * scale);
  return ToyMlm(vocab, EmbeddingView{std::move(in), std::move(out)}, std::move(u),
                Vector::Zero(opt.dim), opt.nonlinearity);
}

inline double toy_corpus_loss(const ToyMlm& m, const std::vector<MaskedItem>& corpus) {
  double loss = 0.0;
  for (const auto& item : corpus) {
    loss -= m.forward(item.tokens, item.masked_position).log_probs[item.gold];
  }
  return loss / static_cast<double>(corpus.size());
}

// Full-batch gradient descent on mean masked-token cross-entropy over all
// parameters. Deterministic given the seed.
inline ToyTrainResult train_toy(const Vocabulary& vocab,
                                const std::vector<MaskedItem>& corpus,
                                const ToyTrainOptions& opt) {
  if (corpus.empty()) throw DataError("train_toy: empty corpus");
  for (const auto& item : corpus) {
    if (!vocab.contains(item.gold) || item.masked_position >= item.tokens.size()) {
      throw DataError("train_toy: corpus item out of range");
    }
    for (TokenId t : item.tokens) {
      if (!vocab.contains(t)) throw DataError("train_toy: token id out of range");
    }
  }
  ToyMlm model = init_toy(vocab, opt);
  Matrix in = model.embedding_view().input;
  Matrix out = model.embedding_view().output;
  Matrix u = model.context_map();
  Vector b = model.bias();
  const double inv_n = 1.0 / static_cast<double>(corpus.size());

  ToyTrainResult result{model, {}};
  for (std::size_t step = 0; step <= opt.steps; ++step) {
    if (!in.allFinite() || !out.allFinite() || !u.allFinite() || !b.allFinite()) {
      throw OracleError("train_toy: non-finite loss at step " + std::to_string(step));
    }
    ToyMlm current(vocab, EmbeddingView{in, out}, u, b, opt.nonlinearity);
    Matrix g_in = Matrix::Zero(in.rows(), in.cols());
    Matrix g_out = Matrix::Zero(out.rows(), out.cols());
    Matrix g_u = Matrix::Zero(u.rows(), u.cols());
    Vector g_b = Vector::Zero(b.size());
    double loss = 0.0;
    for (const auto& item : corpus) {
      auto fw = current.forward(item.tokens, item.masked_position);
      loss -= fw.log_probs[item.gold];
      Vector dlogits = fw.log_probs.array().exp();
      dlogits[item.gold] -= 1.0;
      g_out += dlogits * fw.hidden.transpose();
      Vector dpre = current.activation_slope(fw.pre).cwiseProduct(out.transpose() * dlogits);
      g_u += dpre * fw.pooled.transpose();
      g_b += dpre;
      if (fw.context_count > 0) {
        Vector dtok = (u.transpose() * dpre) / static_cast<double>(fw.context_count);
        for (std::size_t i = 0; i < item.tokens.size(); ++i) {
          if (current.in_context(item.tokens, i, item.masked_position)) {
            g_in.row(item.tokens[i]) += dtok.transpose();
          }
        }
      }
    }
    loss *= inv_n;
    if (!std::isfinite(loss)) {
      throw OracleError("train_toy: non-finite loss at step " + std::to_string(step));
    }
    result.losses.push_back(loss);
    if (step == opt.steps) {
      result.model = current;
      break;
    }
    const double lr = opt.learning_rate * inv_n;
    in -= lr * g_in;
    out -= lr * g_out;
    u -= lr * g_u;
    b -= lr * g_b;
  }
  return result;
}

}  // namespace promptsearch
