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
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "promptsearch/fact.hpp"
#include "promptsearch/search.hpp"
#include "promptsearch/toy_mlm.hpp"

namespace promptsearch {

struct ClassificationExample {
  std::map<std::string, std::string> fields;
  ClassLabel label;
  bool operator==(const ClassificationExample&) const = default;
};

struct ClassificationDataset {
  std::string name;
  std::vector<ClassLabel> classes;  // sorted
  std::vector<ClassificationExample> examples;
};

enum class TsvFormat {
  kSentenceLabel,  // sentence \t label       -> field "sentence"
  kPair,           // premise \t hypothesis \t label -> fields "prem", "hyp"
};

struct TsvOptions {
  bool header = false;
  std::optional<std::set<ClassLabel>> label_whitelist;
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

inline std::uint64_t string_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

inline ClassificationDataset load_classification(const std::string& path, TsvFormat format,
                                                 const TsvOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset: " + path);
  ClassificationDataset ds;
  ds.name = path;
  const std::size_t columns = format == TsvFormat::kPair ? 3 : 2;
  std::set<ClassLabel> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (opt.header && line_no == 1) continue;
    if (line.empty()) continue;
    auto cols = detail::split_tabs(line);
    if (cols.size() != columns) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(columns) +
                      " columns, got " + std::to_string(cols.size()));
    }
    ClassificationExample e;
    if (format == TsvFormat::kPair) {
      e.fields = {{"prem", cols[0]}, {"hyp", cols[1]}};
    } else {
      e.fields = {{"sentence", cols[0]}};
    }
    e.label = cols.back();
    if (opt.label_whitelist && !opt.label_whitelist->count(e.label)) {
      throw DataError(path + ":" + std::to_string(line_no) + ": unknown label '" + e.label + "'");
    }
    labels.insert(e.label);
    ds.examples.push_back(std::move(e));
  }
  if (ds.examples.empty()) throw DataError("empty dataset: " + path);
  ds.classes.assign(labels.begin(), labels.end());
  return ds;
}

inline std::vector<LabeledInput> tokenize_examples(const std::vector<ClassificationExample>& examples,
                                                   const Vocabulary& vocab) {
  std::vector<LabeledInput> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    LabeledInput li;
    for (const auto& [name, text] : e.fields) li.inputs[name] = vocab.tokenize(text);
    li.label = e.label;
    out.push_back(std::move(li));
  }
  return out;
}

// Facts grouped by relation; `relations` keeps first-appearance order.
struct FactDataset {
  std::vector<std::string> relations;
  std::map<std::string, std::vector<FactInstance>> by_relation;

  std::vector<FactInstance> all() const {
    std::vector<FactInstance> out;
    for (const auto& r : relations) {
      const auto& fs = by_relation.at(r);
      out.insert(out.end(), fs.begin(), fs.end());
    }
    return out;
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [r, fs] : by_relation) n += fs.size();
    return n;
  }

  void add(FactInstance f) {
    if (!by_relation.count(f.relation)) relations.push_back(f.relation);
    by_relation[f.relation].push_back(std::move(f));
  }
};

using Triple = std::tuple<std::string, std::string, std::string>;  // sub, rel, obj

struct FactLoadOptions {
  std::set<Triple> exclusion;
  // When set, objects must be single tokens of this vocabulary.
  const Vocabulary* vocab = nullptr;
  std::optional<std::size_t> cap_per_relation;
  std::uint64_t seed = 0;
};

// JSONL, one object per line: {sub, rel, obj, obj_token?, contexts?,
// surfaces?}. `obj_token` is a token string or id; it defaults to `obj`.
// Duplicate (sub, obj) pairs within a relation keep the first occurrence.
inline FactDataset load_facts(const std::string& path, const FactLoadOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open facts file: " + path);
  std::vector<FactInstance> facts;
  std::set<Triple> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    auto where = path + ":" + std::to_string(line_no);
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw DataError(where + ": malformed JSON");
    FactInstance f;
    try {
      f.subject = j.at("sub").get<std::string>();
      f.relation = j.at("rel").get<std::string>();
      f.object_canonical = j.at("obj").get<std::string>();
      f.context_sentences = j.value("contexts", std::vector<std::string>{});
      auto surfaces = j.value("surfaces", std::vector<std::string>{});
      f.surface_forms.insert(surfaces.begin(), surfaces.end());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    Triple key{f.subject, f.relation, f.object_canonical};
    if (opt.exclusion.count(key)) {
      throw DataError(where + ": triple (" + f.subject + ", " + f.relation + ", " + f.object_canonical +
                      ") is in the exclusion set");
    }
    f.object_token = -1;
    std::string token_str = f.object_canonical;
    if (j.contains("obj_token")) {
      if (j["obj_token"].is_number_integer()) f.object_token = j["obj_token"].get<TokenId>();
      else token_str = j["obj_token"].get<std::string>();
    }
    if (opt.vocab) {
      if (f.object_token >= 0) {
        if (!opt.vocab->contains(f.object_token)) throw DataError(where + ": obj_token out of range");
      } else if (auto id = opt.vocab->id_of(token_str)) {
        f.object_token = *id;
      } else {
        throw DataError(where + ": object '" + token_str + "' is not a single vocabulary token");
      }
    }
    if (!seen.insert(key).second) continue;
    facts.push_back(std::move(f));
  }

  FactDataset ds;
  for (auto& f : facts) ds.add(std::move(f));
  if (opt.cap_per_relation) {
    for (auto& [rel, fs] : ds.by_relation) {
      if (fs.size() <= *opt.cap_per_relation) continue;
      std::vector<std::size_t> idx(fs.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::mt19937_64 rng(opt.seed ^ detail::string_hash(rel));
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(*opt.cap_per_relation);
      std::sort(idx.begin(), idx.end());
      std::vector<FactInstance> kept;
      for (auto i : idx) kept.push_back(std::move(fs[i]));
      fs = std::move(kept);
    }
  }
  return ds;
}

// Resolves unresolved object tokens (-1) against a vocabulary.
inline void resolve_fact_tokens(FactDataset& ds, const Vocabulary& vocab) {
  for (auto& [rel, fs] : ds.by_relation) {
    for (auto& f : fs) {
      if (f.object_token >= 0) continue;
      auto id = vocab.id_of(f.object_canonical);
      if (!id) throw DataError("object '" + f.object_canonical + "' is not a single vocabulary token");
      f.object_token = *id;
    }
  }
}

enum class SplitScheme { k80_20, k60_20_20 };

inline std::vector<double> split_fractions(SplitScheme s) {
  return s == SplitScheme::k80_20 ? std::vector<double>{0.8, 0.2} : std::vector<double>{0.6, 0.2, 0.2};
}

inline SplitScheme parse_split_scheme(const std::string& s) {
  if (s == "80-20") return SplitScheme::k80_20;
  if (s == "60-20-20") return SplitScheme::k60_20_20;
  throw ConfigError("unknown split scheme '" + s + "'");
}

// Part sizes for n items: every part but the last gets floor(n * fraction),
// the last takes the remainder.
inline std::vector<std::size_t> split_sizes(std::size_t n, SplitScheme scheme) {
  auto fr = split_fractions(scheme);
  std::vector<std::size_t> sizes;
  std::size_t used = 0;
  for (std::size_t i = 0; i + 1 < fr.size(); ++i) {
    // Integer arithmetic on percentages keeps 10 * 0.6 at exactly 6.
    auto part = n * static_cast<std::size_t>(std::lround(fr[i] * 100)) / 100;
    sizes.push_back(part);
    used += part;
  }
  sizes.push_back(n - used);
  return sizes;
}

template <typename T>
std::vector<std::vector<T>> split(const std::vector<T>& items, SplitScheme scheme, std::uint64_t seed) {
  auto parts = split_fractions(scheme).size();
  if (items.size() < parts) {
    throw DataError("split: " + std::to_string(items.size()) + " items cannot fill " +
                    std::to_string(parts) + " parts");
  }
  std::vector<std::size_t> idx(items.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<T>> out;
  std::size_t pos = 0;
  for (auto size : split_sizes(items.size(), scheme)) {
    auto& part = out.emplace_back();
    for (std::size_t i = 0; i < size; ++i) part.push_back(items[idx[pos++]]);
  }
  return out;
}

// Splits every relation separately so each part keeps the relation mix.
inline std::vector<FactDataset> split(const FactDataset& ds, SplitScheme scheme, std::uint64_t seed) {
  std::vector<FactDataset> out(split_fractions(scheme).size());
  for (const auto& rel : ds.relations) {
    auto parts = split(ds.by_relation.at(rel), scheme, seed ^ detail::string_hash(rel));
    for (std::size_t p = 0; p < parts.size(); ++p) {
      if (!out[p].by_relation.count(rel)) {
        out[p].relations.push_back(rel);
        out[p].by_relation[rel];
      }
      for (auto& f : parts[p]) out[p].by_relation[rel].push_back(std::move(f));
    }
  }
  return out;
}

template <typename T>
struct SubsampleFamily {
  std::size_t size = 0;
  std::vector<std::vector<T>> subsets;
};

// `repeats` independent uniform subsets of each size, kept in original order.
// With `label_of`, subsets keep class proportions (largest-remainder quotas).
template <typename T>
std::vector<SubsampleFamily<T>> subsample(
    const std::vector<T>& train, const std::vector<std::size_t>& sizes, std::size_t repeats,
    std::uint64_t seed, std::function<std::string(const T&)> label_of = nullptr) {
  for (auto s : sizes) {
    if (s > train.size()) {
      throw DataError("subsample: size " + std::to_string(s) + " exceeds " +
                      std::to_string(train.size()) + " training examples");
    }
  }
  std::map<std::string, std::vector<std::size_t>> groups;
  if (label_of) {
    for (std::size_t i = 0; i < train.size(); ++i) groups[label_of(train[i])].push_back(i);
  }
  std::vector<SubsampleFamily<T>> out;
  for (std::size_t si = 0; si < sizes.size(); ++si) {
    const std::size_t size = sizes[si];
    SubsampleFamily<T> fam{size, {}};
    for (std::size_t r = 0; r < repeats; ++r) {
      std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + (si + 1) * 1000003ULL + r);
      std::vector<std::size_t> chosen;
      if (!label_of) {
        std::vector<std::size_t> idx(train.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::shuffle(idx.begin(), idx.end(), rng);
        chosen.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(size));
      } else {
        std::vector<std::pair<double, std::string>> remainders;
        std::map<std::string, std::size_t> quota;
        std::size_t assigned = 0;
        for (const auto& [label, members] : groups) {
          double exact = static_cast<double>(size) * static_cast<double>(members.size()) /
                         static_cast<double>(train.size());
          quota[label] = static_cast<std::size_t>(exact);
          assigned += quota[label];
          remainders.emplace_back(exact - static_cast<double>(quota[label]), label);
        }
        std::stable_sort(remainders.begin(), remainders.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::size_t i = 0; assigned < size; ++i, ++assigned) ++quota[remainders[i % remainders.size()].second];
        for (const auto& [label, members] : groups) {
          auto idx = members;
          std::shuffle(idx.begin(), idx.end(), rng);
          auto take = std::min(quota[label], idx.size());
          chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
        }
      }
      std::sort(chosen.begin(), chosen.end());
      auto& subset = fam.subsets.emplace_back();
      for (auto i : chosen) subset.push_back(train[i]);
    }
    out.push_back(std::move(fam));
  }
  return out;
}

// Word pools for the synthetic sentiment task. Pools must be disjoint.
struct SyntheticSpec {
  std::vector<std::string> positive;
  std::vector<std::string> negative;
  std::vector<std::string> neutral;
  std::size_t sentence_length = 6;  // neutral words + one polarity word
  // Masked-polarity corpus items per example, and masked-neutral items per
  // example.
  double polarity_items = 2.0;
  double neutral_items = 0.5;

  static SyntheticSpec with_counts(std::size_t pos, std::size_t neg, std::size_t neutral) {
    SyntheticSpec s;
    for (std::size_t i = 0; i < pos; ++i) s.positive.push_back("pos" + std::to_string(i));
    for (std::size_t i = 0; i < neg; ++i) s.negative.push_back("neg" + std::to_string(i));
    for (std::size_t i = 0; i < neutral; ++i) s.neutral.push_back("w" + std::to_string(i));
    return s;
  }
};

struct SyntheticTask {
  Vocabulary vocab;  // [PAD] [MASK] . positive... negative... neutral...
  ClassificationDataset dataset;
  std::vector<MaskedItem> corpus;
};

// Sentences are neutral words plus exactly one polarity word; the label is
// that word's polarity. The corpus pairs such sentences with a masked slot
// whose gold is another word of the same polarity (or, for some items, a
// random neutral word), laid out as "<sentence> [MASK] .".
inline SyntheticTask gen_synthetic_sentiment(const SyntheticSpec& spec, std::size_t n_examples,
                                             std::uint64_t seed) {
  if (spec.positive.empty() || spec.negative.empty() || spec.neutral.empty()) {
    throw DataError("synthetic: word pools must be non-empty");
  }
  if (spec.sentence_length < 1) throw DataError("synthetic: sentence length must be >= 1");
  std::vector<std::string> tokens{"[PAD]", "[MASK]", "."};
  for (const auto* pool : {&spec.positive, &spec.negative, &spec.neutral}) {
    tokens.insert(tokens.end(), pool->begin(), pool->end());
  }
  SyntheticTask task{Vocabulary(tokens, "[MASK]", {}, std::string("[PAD]")), {}, {}};
  task.dataset.name = "synthetic-sentiment";
  task.dataset.classes = {"neg", "pos"};
  const Vocabulary& v = task.vocab;

  std::mt19937_64 rng(seed);
  auto pick = [&rng](const std::vector<std::string>& pool) -> const std::string& {
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  };
  auto sentence = [&](bool positive) {
    std::vector<std::string> words;
    for (std::size_t i = 0; i + 1 < spec.sentence_length; ++i) words.push_back(pick(spec.neutral));
    auto at = std::uniform_int_distribution<std::size_t>(0, words.size())(rng);
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), pick(positive ? spec.positive : spec.negative));
    return words;
  };
  auto join = [](const std::vector<std::string>& words) {
    std::string s;
    for (const auto& w : words) s += (s.empty() ? "" : " ") + w;
    return s;
  };

  for (std::size_t i = 0; i < n_examples; ++i) {
    bool positive = std::bernoulli_distribution(0.5)(rng);
    task.dataset.examples.push_back({{{"sentence", join(sentence(positive))}}, positive ? "pos" : "neg"});
  }
  auto item = [&](const std::vector<std::string>& words, const std::string& gold) {
    MaskedItem m;
    for (const auto& w : words) m.tokens.push_back(*v.id_of(w));
    m.masked_position = m.tokens.size();
    m.tokens.push_back(v.mask_id());
    m.tokens.push_back(*v.id_of("."));
    m.gold = *v.id_of(gold);
    return m;
  };
  auto n_polarity = static_cast<std::size_t>(spec.polarity_items * static_cast<double>(n_examples));
  auto n_neutral = static_cast<std::size_t>(spec.neutral_items * static_cast<double>(n_examples));
  for (std::size_t i = 0; i < n_polarity; ++i) {
    bool positive = std::bernoulli_distribution(0.5)(rng);
    auto words = sentence(positive);
    task.corpus.push_back(item(words, pick(positive ? spec.positive : spec.negative)));
  }
  for (std::size_t i = 0; i < n_neutral; ++i) {
    auto words = sentence(std::bernoulli_distribution(0.5)(rng));
    task.corpus.push_back(item(words, pick(spec.neutral)));
  }
  return task;
}

}  // namespace promptsearch
