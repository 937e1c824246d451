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

// Helpers shared by the unit and acceptance suites: random toy models and
// reference computations written independently of the library code paths.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "promptsearch/toy_mlm.hpp"

namespace promptsearch::testing {

inline Vocabulary NumberedVocab(std::size_t size) {
  std::vector<std::string> tokens{"[PAD]", "[MASK]"};
  for (std::size_t i = 2; i < size; ++i) tokens.push_back("t" + std::to_string(i));
  return Vocabulary(tokens, "[MASK]", {}, std::string("[PAD]"));
}

inline Matrix RandomMatrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

inline ToyMlm RandomToy(std::mt19937_64& rng, std::size_t vocab_size, Eigen::Index dim, Nonlinearity f,
                        double scale = 1.0) {
  auto vocab = NumberedVocab(vocab_size);
  const auto n = static_cast<Eigen::Index>(vocab_size);
  return ToyMlm(vocab, EmbeddingView{RandomMatrix(rng, n, dim, scale), RandomMatrix(rng, n, dim, scale)},
                RandomMatrix(rng, dim, dim, scale / std::sqrt(static_cast<double>(dim))),
                RandomMatrix(rng, dim, 1, 0.3 * scale), f);
}

// Label log-likelihood evaluated from explicit per-position input vectors,
// following the model definition directly. `vectors[i]` is used for every
// position in `context`.
inline double ReferenceLogLikelihood(const ToyMlm& m, const std::vector<Vector>& context,
                                     const std::vector<TokenId>& label_tokens) {
  const Eigen::Index dim = m.dim();
  Vector mean = Vector::Zero(dim);
  for (const auto& v : context) mean += v;
  if (!context.empty()) mean /= static_cast<double>(context.size());
  Vector z = m.context_map() * mean + m.bias();
  Vector h = z;
  if (m.nonlinearity() == Nonlinearity::kTanh)
    for (Eigen::Index i = 0; i < dim; ++i) h[i] = std::tanh(z[i]);
  const auto& out = m.embedding_view().output;
  std::vector<double> logits(static_cast<std::size_t>(out.rows()));
  double mx = -1e300;
  for (Eigen::Index w = 0; w < out.rows(); ++w) {
    double s = 0;
    for (Eigen::Index k = 0; k < dim; ++k) s += out(w, k) * h[k];
    logits[static_cast<std::size_t>(w)] = s;
    mx = std::max(mx, s);
  }
  double total = 0;
  for (double l : logits) total += std::exp(l - mx);
  double label = 0;
  std::vector<bool> seen(logits.size());
  for (TokenId w : label_tokens) {
    if (seen[static_cast<std::size_t>(w)]) continue;
    seen[static_cast<std::size_t>(w)] = true;
    label += std::exp(logits[static_cast<std::size_t>(w)] - mx);
  }
  return std::log(label) - std::log(total);
}

// Context vectors for a prompt: every non-predicted, non-padding position.
// Returns the index into the context list of `position` (or -1).
inline std::vector<Vector> ContextVectors(const ToyMlm& m, const PromptInstance& p, std::size_t position,
                                          int& index_of_position) {
  std::vector<Vector> ctx;
  index_of_position = -1;
  for (std::size_t i = 0; i < p.token_ids.size(); ++i) {
    if (i == p.mask_position) continue;
    if (m.vocab().pad_id() && p.token_ids[i] == *m.vocab().pad_id()) continue;
    if (i == position) index_of_position = static_cast<int>(ctx.size());
    ctx.push_back(m.embedding_view().input.row(p.token_ids[i]).transpose());
  }
  return ctx;
}

// Central finite differences of the reference log-likelihood with respect to
// the input vector at `position`.
inline Vector FiniteDifferenceGradient(const ToyMlm& m, const PromptInstance& p, std::size_t position,
                                       const std::vector<TokenId>& label_tokens, double step = 1e-4) {
  int idx = -1;
  auto ctx = ContextVectors(m, p, position, idx);
  Vector g = Vector::Zero(m.dim());
  if (idx < 0) return g;
  for (Eigen::Index k = 0; k < m.dim(); ++k) {
    auto plus = ctx, minus = ctx;
    plus[static_cast<std::size_t>(idx)][k] += step;
    minus[static_cast<std::size_t>(idx)][k] -= step;
    g[k] = (ReferenceLogLikelihood(m, plus, label_tokens) - ReferenceLogLikelihood(m, minus, label_tokens)) /
           (2 * step);
  }
  return g;
}

inline double RelativeError(const Vector& a, const Vector& b) {
  double denom = std::max({a.norm(), b.norm(), 1e-6});
  return (a - b).norm() / denom;
}

// A random prompt "x x [T]... [P] x" with `triggers` slots over non-special
// tokens.
inline PromptInstance RandomPrompt(std::mt19937_64& rng, const Vocabulary& v, std::size_t triggers,
                                   std::size_t context) {
  std::uniform_int_distribution<TokenId> tok(2, static_cast<TokenId>(v.size()) - 1);
  PromptInstance p;
  for (std::size_t i = 0; i < context; ++i) {
    p.input_span.push_back(p.token_ids.size());
    p.token_ids.push_back(tok(rng));
  }
  for (std::size_t i = 0; i < triggers; ++i) {
    p.trigger_positions.push_back(p.token_ids.size());
    p.token_ids.push_back(tok(rng));
  }
  p.mask_position = p.token_ids.size();
  p.token_ids.push_back(v.mask_id());
  p.token_ids.push_back(tok(rng));
  return p;
}

inline TokenIds RandomLabelSet(std::mt19937_64& rng, const Vocabulary& v, std::size_t max_size) {
  std::vector<TokenId> all;
  for (TokenId i = 2; i < static_cast<TokenId>(v.size()); ++i) all.push_back(i);
  std::shuffle(all.begin(), all.end(), rng);
  std::size_t n = 1 + rng() % std::min(max_size, all.size());
  return TokenIds(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
}

}  // namespace promptsearch::testing
