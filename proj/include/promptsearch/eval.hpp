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
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "promptsearch/fact.hpp"
#include "promptsearch/label_select.hpp"
#include "promptsearch/oracle.hpp"

namespace promptsearch {

using ClassProbs = std::map<ClassLabel, double>;

// p(y|prompt) = sum over V_y of the mask-fill probability.
inline ClassProbs marginal_class_probs(const OracleResponse& r, const LabelTokenSet& labels) {
  ClassProbs probs;
  for (const auto& [label, ids] : labels.sets) {
    double p = 0.0;
    for (TokenId id : ids) p += std::exp(r.mask_log_probs[id]);
    probs[label] = p;
  }
  return probs;
}

// Argmax; ties go to the lexicographically smallest label.
inline ClassLabel classify(const ClassProbs& probs) {
  if (probs.empty()) throw ConfigError("classify: no classes");
  auto best = probs.begin();
  for (auto it = probs.begin(); it != probs.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return best->first;
}

// 1-based rank of `gold`; tokens with equal log-prob and a lower id rank
// ahead of it.
inline std::size_t rank_of_gold(const Vector& log_probs, TokenId gold) {
  if (gold < 0 || gold >= log_probs.size()) throw ConfigError("rank_of_gold: gold id out of range");
  const double g = log_probs[gold];
  std::size_t rank = 1;
  for (Eigen::Index w = 0; w < log_probs.size(); ++w) {
    if (log_probs[w] > g || (log_probs[w] == g && w < gold)) ++rank;
  }
  return rank;
}

inline std::size_t rank_of_gold(const OracleResponse& r, TokenId gold) {
  return rank_of_gold(r.mask_log_probs, gold);
}

struct RankReport {
  double mrr = 0.0;
  double p_at_1 = 0.0;
  double p_at_10 = 0.0;
  std::size_t n = 0;
};

inline RankReport ranking_metrics(const std::vector<std::size_t>& ranks) {
  if (ranks.empty()) throw DataError("ranking_metrics: no ranks");
  double rr = 0.0;
  std::size_t top1 = 0, top10 = 0;
  for (auto r : ranks) {
    if (r < 1) throw DataError("ranking_metrics: ranks are 1-based");
    rr += 1.0 / static_cast<double>(r);
    top1 += r <= 1 ? 1 : 0;
    top10 += r <= 10 ? 1 : 0;
  }
  const auto n = static_cast<double>(ranks.size());
  return RankReport{rr / n, static_cast<double>(top1) / n, static_cast<double>(top10) / n, ranks.size()};
}

inline std::string_view trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Correct when the prediction is the canonical object or any of its surface
// forms. Case-sensitive exact match after trimming.
inline bool re_credit(std::string_view prediction, const FactInstance& fact) {
  auto p = trim(prediction);
  if (p == trim(fact.object_canonical)) return true;
  return std::any_of(fact.surface_forms.begin(), fact.surface_forms.end(),
                     [p](const std::string& s) { return trim(s) == p; });
}

inline std::string replace_all(std::string text, const std::string& from, const std::string& to) {
  if (from.empty()) return text;
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
  return text;
}

// Replaces each fact's object with a uniformly drawn different object from
// the dataset and rewrites every mention of the old object (canonical and
// surface forms) in its context sentences.
inline std::vector<FactInstance> perturb_facts(const std::vector<FactInstance>& facts,
                                               std::uint64_t seed) {
  std::vector<std::string> objects;
  std::map<std::string, TokenId> token_of;
  for (const auto& f : facts) {
    if (token_of.emplace(f.object_canonical, f.object_token).second) {
      objects.push_back(f.object_canonical);
    }
  }
  if (objects.size() < 2) throw DataError("perturb_facts: need at least two distinct objects");
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < objects.size(); ++i) index[objects[i]] = i;

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> draw(0, objects.size() - 2);
  std::vector<FactInstance> out;
  out.reserve(facts.size());
  for (const auto& f : facts) {
    std::size_t pick = draw(rng);
    if (pick >= index[f.object_canonical]) ++pick;
    const std::string& replacement = objects[pick];

    std::vector<std::string> mentions(f.surface_forms.begin(), f.surface_forms.end());
    mentions.push_back(f.object_canonical);
    std::sort(mentions.begin(), mentions.end(), [](const std::string& a, const std::string& b) {
      return a.size() != b.size() ? a.size() > b.size() : a < b;
    });
    mentions.erase(std::unique(mentions.begin(), mentions.end()), mentions.end());

    FactInstance g = f;
    g.object_canonical = replacement;
    g.object_token = token_of[replacement];
    for (auto& sentence : g.context_sentences) {
      for (const auto& m : mentions) sentence = replace_all(sentence, m, replacement);
    }
    g.surface_forms.clear();
    if (!g.context_sentences.empty()) g.surface_forms.insert(replacement);
    out.push_back(std::move(g));
  }
  return out;
}

// precision(c) = correct predictions of c / predictions of c. Classes never
// predicted are absent.
inline std::map<ClassLabel, double> per_class_precision(
    const std::vector<std::pair<ClassLabel, ClassLabel>>& predicted_gold) {
  if (predicted_gold.empty()) throw DataError("per_class_precision: no predictions");
  std::map<ClassLabel, std::pair<std::size_t, std::size_t>> tally;  // correct, total
  for (const auto& [pred, gold] : predicted_gold) {
    auto& t = tally[pred];
    ++t.second;
    if (pred == gold) ++t.first;
  }
  std::map<ClassLabel, double> out;
  for (const auto& [label, t] : tally) {
    out[label] = static_cast<double>(t.first) / static_cast<double>(t.second);
  }
  return out;
}

// Subsampling predicate for comparing two models: the object must be a
// single token in both vocabularies.
inline bool single_token_in_both(const std::string& object, const Vocabulary& a,
                                 const Vocabulary& b) {
  return a.id_of(object).has_value() && b.id_of(object).has_value();
}

}  // namespace promptsearch
