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
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "promptsearch/oracle.hpp"
#include "promptsearch/token_filter.hpp"
#include "promptsearch/top_k.hpp"

namespace promptsearch {

using ClassLabel = std::string;

// V_y for every class. Class order is the map order (lexicographic).
struct LabelTokenSet {
  std::map<ClassLabel, TokenIds> sets;

  std::vector<ClassLabel> classes() const {
    std::vector<ClassLabel> out;
    for (const auto& [label, ids] : sets) out.push_back(label);
    return out;
  }

  const TokenIds& at(const ClassLabel& label) const {
    auto it = sets.find(label);
    if (it == sets.end()) throw ConfigError("no label tokens for class '" + label + "'");
    return it->second;
  }

  // Token ids that belong to more than one class.
  std::set<TokenId> overlap() const {
    std::map<TokenId, int> count;
    for (const auto& [label, ids] : sets) {
      for (TokenId id : std::set<TokenId>(ids.begin(), ids.end())) ++count[id];
    }
    std::set<TokenId> out;
    for (auto [id, n] : count) {
      if (n > 1) out.insert(id);
    }
    return out;
  }

  bool operator==(const LabelTokenSet&) const = default;

  nlohmann::json to_json(const Vocabulary& vocab) const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [label, ids] : sets) {
      std::vector<std::string> tokens;
      for (TokenId id : ids) tokens.push_back(vocab.string_of(id));
      j[label] = {{"ids", ids}, {"tokens", tokens}};
    }
    return j;
  }

  // Accepts {class: {ids: [...]}} as written by to_json, or a hand-written
  // {class: ["word", ...]} resolved against the vocabulary.
  static LabelTokenSet from_json(const nlohmann::json& j, const Vocabulary& vocab) {
    if (!j.is_object() || j.empty()) throw ConfigError("label set: expected a non-empty object");
    LabelTokenSet out;
    for (const auto& [label, value] : j.items()) {
      TokenIds ids;
      if (value.is_object()) {
        ids = value.at("ids").get<TokenIds>();
        for (TokenId id : ids) {
          if (!vocab.contains(id)) throw ConfigError("label set: id out of range in '" + label + "'");
        }
      } else if (value.is_array()) {
        for (const auto& w : value) {
          auto id = vocab.id_of(w.get<std::string>());
          if (!id) throw ConfigError("label set: unknown token '" + w.get<std::string>() + "'");
          ids.push_back(*id);
        }
      } else {
        throw ConfigError("label set: bad entry for '" + label + "'");
      }
      if (ids.empty()) throw ConfigError("label set: empty class '" + label + "'");
      out.sets[label] = std::move(ids);
    }
    return out;
  }

  void save(const std::string& path, const Vocabulary& vocab) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write label file: " + path);
    out << to_json(vocab).dump(2) << '\n';
  }

  static LabelTokenSet load(const std::string& path, const Vocabulary& vocab) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open label file: " + path);
    try {
      return from_json(nlohmann::json::parse(in), vocab);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("label file " + path + ": " + e.what());
    }
  }
};

struct LabeledVector {
  Vector x;
  ClassLabel label;
};

// Multinomial logistic model p(y|h) ∝ exp(h . w_y + b_y).
struct LabelClassifier {
  std::vector<ClassLabel> classes;
  Matrix weights;  // one row per class
  Vector biases;
  std::optional<Vector> center;  // subtracted from inputs when set

  Eigen::Index dim() const { return weights.cols(); }

  std::size_t index_of(const ClassLabel& label) const {
    auto it = std::find(classes.begin(), classes.end(), label);
    if (it == classes.end()) throw ConfigError("classifier: unknown label '" + label + "'");
    return static_cast<std::size_t>(it - classes.begin());
  }

  Vector logits(const Vector& h) const {
    return center ? Vector(weights * (h - *center) + biases) : Vector(weights * h + biases);
  }

  Vector probabilities(const Vector& h) const { return log_softmax(logits(h)).array().exp(); }
};

struct LogisticOptions {
  double l2 = 0.0;
  std::size_t steps = 500;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
  bool center_inputs = false;
};

struct LogisticFit {
  LabelClassifier classifier;
  std::vector<double> losses;  // regularized loss before each step, then final
};

// Mask hidden state for each prompt, in order.
inline std::vector<LabeledVector> collect_mask_hiddens(
    const Oracle& oracle, const std::vector<std::pair<PromptInstance, ClassLabel>>& prompts) {
  std::vector<LabeledVector> out;
  out.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    OracleRequest req;
    req.prompt = prompts[i].first;
    req.want_hidden = true;
    try {
      auto r = oracle.query(req);
      if (!r.mask_hidden) throw OracleError("no hidden state returned");
      out.push_back({std::move(*r.mask_hidden), prompts[i].second});
    } catch (const OracleError& e) {
      throw OracleError("collect_mask_hiddens: prompt " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

// Full-batch gradient descent on mean cross-entropy + (l2/2)|W|^2. With
// `classes` empty the class list is the sorted set of labels in `data`.
inline LogisticFit fit_logistic(const std::vector<LabeledVector>& data, const LogisticOptions& opt,
                                std::vector<ClassLabel> classes = {}) {
  if (data.empty()) throw DataError("fit_logistic: no data");
  if (classes.empty()) {
    std::set<ClassLabel> seen;
    for (const auto& d : data) seen.insert(d.label);
    classes.assign(seen.begin(), seen.end());
  }
  std::map<ClassLabel, std::size_t> index;
  for (std::size_t c = 0; c < classes.size(); ++c) index[classes[c]] = c;
  std::vector<std::size_t> y;
  std::vector<std::size_t> per_class(classes.size());
  const Eigen::Index dim = data.front().x.size();
  for (const auto& d : data) {
    auto it = index.find(d.label);
    if (it == index.end()) throw DataError("fit_logistic: label '" + d.label + "' not in class list");
    if (d.x.size() != dim) throw DataError("fit_logistic: inconsistent input dims");
    y.push_back(it->second);
    ++per_class[it->second];
  }
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (per_class[c] == 0) throw DataError("fit_logistic: class '" + classes[c] + "' absent from data");
  }

  const auto n_classes = static_cast<Eigen::Index>(classes.size());
  Matrix x(static_cast<Eigen::Index>(data.size()), dim);
  for (std::size_t i = 0; i < data.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = data[i].x.transpose();
  std::optional<Vector> center;
  if (opt.center_inputs) {
    center = x.colwise().mean().transpose();
    x.rowwise() -= center->transpose();
  }

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 0.01);
  Matrix w(n_classes, dim);
  for (Eigen::Index c = 0; c < n_classes; ++c)
    for (Eigen::Index k = 0; k < dim; ++k) w(c, k) = normal(rng);
  Vector b = Vector::Zero(n_classes);
  const double inv_n = 1.0 / static_cast<double>(data.size());

  LogisticFit fit;
  for (std::size_t step = 0;; ++step) {
    Matrix logits = x * w.transpose();
    logits.rowwise() += b.transpose();
    Matrix dlogits(logits.rows(), logits.cols());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Vector lp = log_softmax(logits.row(i).transpose());
      loss -= lp[static_cast<Eigen::Index>(y[static_cast<std::size_t>(i)])];
      Vector p = lp.array().exp();
      p[static_cast<Eigen::Index>(y[static_cast<std::size_t>(i)])] -= 1.0;
      dlogits.row(i) = p.transpose();
    }
    loss = loss * inv_n + 0.5 * opt.l2 * w.squaredNorm();
    if (!std::isfinite(loss)) {
      throw DataError("fit_logistic: non-finite loss at step " + std::to_string(step));
    }
    fit.losses.push_back(loss);
    if (step == opt.steps) break;
    Matrix gw = inv_n * dlogits.transpose() * x + opt.l2 * w;
    Vector gb = inv_n * dlogits.colwise().sum().transpose();
    w -= opt.learning_rate * gw;
    b -= opt.learning_rate * gb;
  }
  fit.classifier = LabelClassifier{std::move(classes), std::move(w), std::move(b), std::move(center)};
  return fit;
}

// score(w) = out[w] . w_y + b_y: the log of s(y, w) up to a per-class
// constant, so top-k is unchanged.
inline Vector score_label_tokens(const LabelClassifier& clf, const EmbeddingView& emb,
                                 const ClassLabel& label) {
  if (emb.dim() != clf.dim()) throw ConfigError("score_label_tokens: dimension mismatch");
  std::size_t c = clf.index_of(label);
  Vector weights = clf.weights.row(static_cast<Eigen::Index>(c)).transpose();
  Vector scores = emb.output * weights;
  scores.array() += clf.biases[static_cast<Eigen::Index>(c)];
  return scores;
}

inline LabelTokenSet select_label_sets(const LabelClassifier& clf, const EmbeddingView& emb,
                                       std::size_t k, const TokenFilter& filter,
                                       const Vocabulary& vocab) {
  if (k == 0) throw ConfigError("select_label_sets: k must be at least 1");
  auto blocked = filter.mask(vocab);
  std::size_t allowed = static_cast<std::size_t>(std::count(blocked.begin(), blocked.end(), false));
  if (k > allowed) {
    throw ConfigError("select_label_sets: k=" + std::to_string(k) + " exceeds " +
                      std::to_string(allowed) + " unblocked tokens");
  }
  LabelTokenSet out;
  for (const auto& label : clf.classes) {
    for (const auto& st : top_k(score_label_tokens(clf, emb, label), blocked, k)) {
      out.sets[label].push_back(st.id);
    }
  }
  return out;
}

}  // namespace promptsearch
