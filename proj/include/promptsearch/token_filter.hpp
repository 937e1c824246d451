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

#include <set>
#include <string_view>
#include <vector>

#include "promptsearch/vocabulary.hpp"

namespace promptsearch {

struct FilterFlags {
  bool block_capitalized = false;
  bool block_specials = true;
};

// Decides which tokens may be used as triggers or label tokens. The decision
// depends only on the id, its surface string, the flags and `blocked_ids`.
class TokenFilter {
 public:
  TokenFilter() = default;
  TokenFilter(std::set<TokenId> blocked_ids, FilterFlags flags)
      : blocked_ids_(std::move(blocked_ids)), flags_(flags) {}

  // Leading-uppercase heuristic for proper nouns. Common subword prefixes
  // (WordPiece "##", byte-level "Ġ", SentencePiece "▁") are skipped first.
  static bool looks_capitalized(std::string_view surface) {
    for (std::string_view prefix : {"##", "\xC4\xA0", "\xE2\x96\x81"}) {
      if (surface.substr(0, prefix.size()) == prefix) {
        surface.remove_prefix(prefix.size());
        break;
      }
    }
    return !surface.empty() && surface.front() >= 'A' && surface.front() <= 'Z';
  }

  bool blocks(TokenId id, std::string_view surface, bool is_special) const {
    if (blocked_ids_.count(id)) return true;
    if (flags_.block_specials && is_special) return true;
    if (flags_.block_capitalized && looks_capitalized(surface)) return true;
    return false;
  }

  bool blocks(TokenId id, const Vocabulary& vocab) const {
    return blocks(id, vocab.string_of(id), vocab.is_special(id));
  }

  // Dense mask over the vocabulary, true = blocked.
  std::vector<bool> mask(const Vocabulary& vocab) const {
    std::vector<bool> m(vocab.size());
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      m[i] = blocks(static_cast<TokenId>(i), vocab);
    }
    return m;
  }

  std::size_t allowed_count(const Vocabulary& vocab) const {
    std::size_t n = 0;
    for (bool b : mask(vocab)) n += b ? 0 : 1;
    return n;
  }

  const std::set<TokenId>& blocked_ids() const { return blocked_ids_; }
  const FilterFlags& flags() const { return flags_; }

 private:
  std::set<TokenId> blocked_ids_;
  FilterFlags flags_;
};

inline TokenFilter build_token_filter(const Vocabulary& vocab,
                                      const std::set<TokenId>& gold_objects,
                                      FilterFlags flags) {
  for (TokenId id : gold_objects) {
    if (!vocab.contains(id)) {
      throw ConfigError("token filter: gold object id " + std::to_string(id) +
                        " out of range");
    }
  }
  return TokenFilter(gold_objects, flags);
}

}  // namespace promptsearch
