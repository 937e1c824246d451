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
#include <numeric>
#include <vector>

#include "promptsearch/embedding.hpp"
#include "promptsearch/vocabulary.hpp"

namespace promptsearch {

struct ScoredToken {
  TokenId id;
  double score;
  bool operator==(const ScoredToken&) const = default;
};

// The k highest-scoring ids whose `blocked` entry is false, by descending
// score; equal scores go to the lower id. `blocked` may be empty.
inline std::vector<ScoredToken> top_k(const Vector& scores, const std::vector<bool>& blocked,
                                      std::size_t k) {
  std::vector<TokenId> ids;
  ids.reserve(static_cast<std::size_t>(scores.size()));
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (blocked.empty() || !blocked[static_cast<std::size_t>(i)]) ids.push_back(static_cast<TokenId>(i));
  }
  k = std::min(k, ids.size());
  auto better = [&scores](TokenId a, TokenId b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), better);
  std::vector<ScoredToken> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back({ids[i], scores[ids[i]]});
  return out;
}

}  // namespace promptsearch
