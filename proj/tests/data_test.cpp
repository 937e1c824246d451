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

#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "promptsearch/data.hpp"

namespace promptsearch {
namespace {

class TempFile {
 public:
  explicit TempFile(const std::string& contents) {
    static int counter = 0;
    path_ = (std::filesystem::temp_directory_path() /
             ("promptsearch_data_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++)))
                .string();
    std::ofstream(path_) << contents;
  }
  ~TempFile() { std::filesystem::remove(path_); }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

TEST(ClassificationTest, SentenceLabel) {
  TempFile f("a fine film\tpos\nawful\tneg\n\nmeh\tneg\n");
  auto ds = load_classification(f.path(), TsvFormat::kSentenceLabel);
  ASSERT_EQ(ds.examples.size(), 3u);
  EXPECT_EQ(ds.classes, (std::vector<ClassLabel>{"neg", "pos"}));
  EXPECT_EQ(ds.examples[0].fields.at("sentence"), "a fine film");
  EXPECT_EQ(ds.examples[0].label, "pos");
}

TEST(ClassificationTest, PairsWithHeaderAndWhitelist) {
  TempFile f("premise\thypothesis\tlabel\nA man sleeps\tA man rests\tentailment\nA dog\tA cat\tcontradiction\n");
  TsvOptions opt{.header = true, .label_whitelist = std::set<ClassLabel>{"entailment", "contradiction"}};
  auto ds = load_classification(f.path(), TsvFormat::kPair, opt);
  ASSERT_EQ(ds.examples.size(), 2u);
  EXPECT_EQ(ds.examples[1].fields.at("prem"), "A dog");
  EXPECT_EQ(ds.examples[1].fields.at("hyp"), "A cat");
  opt.label_whitelist = std::set<ClassLabel>{"entailment"};
  EXPECT_THROW(load_classification(f.path(), TsvFormat::kPair, opt), DataError);
}

TEST(ClassificationTest, Errors) {
  TempFile ragged("only one column\n");
  EXPECT_THROW(load_classification(ragged.path(), TsvFormat::kSentenceLabel), DataError);
  TempFile empty("");
  EXPECT_THROW(load_classification(empty.path(), TsvFormat::kSentenceLabel), DataError);
  EXPECT_THROW(load_classification("/nonexistent/file.tsv", TsvFormat::kSentenceLabel), DataError);
}

TEST(ClassificationTest, Tokenize) {
  Vocabulary v({"[MASK]", "good", "bad", "[UNK]"}, "[MASK]", {"[UNK]"});
  auto rows = tokenize_examples({{{{"sentence", "good bad other"}}, "pos"}}, v);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].inputs.at("sentence"), (TokenIds{1, 2, 3}));
  EXPECT_EQ(rows[0].label, "pos");
}

std::string FactLine(const std::string& sub, const std::string& rel, const std::string& obj,
                     const std::string& extra = "") {
  return R"({"sub":")" + sub + R"(","rel":")" + rel + R"(","obj":")" + obj + "\"" + extra + "}\n";
}

TEST(FactsTest, GroupsByRelationAndDeduplicates) {
  TempFile f(FactLine("Paris", "capital_of", "France") + FactLine("Dante", "born_in", "Florence") +
             FactLine("Paris", "capital_of", "France") +
             FactLine("Obama", "citizen_of", "USA", R"(,"contexts":["He is American ."],"surfaces":["American"])"));
  auto ds = load_facts(f.path());
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.relations, (std::vector<std::string>{"capital_of", "born_in", "citizen_of"}));
  const auto& obama = ds.by_relation.at("citizen_of")[0];
  EXPECT_EQ(obama.context_sentences, (std::vector<std::string>{"He is American ."}));
  EXPECT_EQ(obama.surface_forms, (std::set<std::string>{"American"}));
  EXPECT_EQ(obama.object_token, -1);
  Vocabulary v({"[MASK]", "France", "Florence", "USA"}, "[MASK]");
  resolve_fact_tokens(ds, v);
  EXPECT_EQ(obama.object_token, 3);
}

TEST(FactsTest, ExclusionAndSingleTokenChecks) {
  TempFile f(FactLine("Paris", "capital_of", "France") + FactLine("Rome", "capital_of", "Italy"));
  FactLoadOptions opt;
  opt.exclusion = {{"Rome", "capital_of", "Italy"}};
  EXPECT_THROW(load_facts(f.path(), opt), DataError);
  Vocabulary v({"[MASK]", "France"}, "[MASK]");
  FactLoadOptions vo;
  vo.vocab = &v;
  EXPECT_THROW(load_facts(f.path(), vo), DataError);
  TempFile bad("{not json\n");
  EXPECT_THROW(load_facts(bad.path()), DataError);
}

TEST(FactsTest, CapPerRelation) {
  std::string text;
  for (int i = 0; i < 1500; ++i) text += FactLine("s" + std::to_string(i), "r1", "o");
  for (int i = 0; i < 20; ++i) text += FactLine("s" + std::to_string(i), "r2", "o");
  TempFile f(text);
  FactLoadOptions opt;
  opt.cap_per_relation = 1000;
  opt.seed = 3;
  auto ds = load_facts(f.path(), opt);
  EXPECT_EQ(ds.by_relation.at("r1").size(), 1000u);
  EXPECT_EQ(ds.by_relation.at("r2").size(), 20u);
  // File order is kept among survivors.
  const auto& r1 = ds.by_relation.at("r1");
  for (std::size_t i = 1; i < r1.size(); ++i) {
    EXPECT_LT(std::stoi(r1[i - 1].subject.substr(1)), std::stoi(r1[i].subject.substr(1)));
  }
  auto again = load_facts(f.path(), opt);
  EXPECT_EQ(again.by_relation.at("r1"), r1);
}

TEST(SplitTest, Sizes) {
  EXPECT_EQ(split_sizes(10, SplitScheme::k80_20), (std::vector<std::size_t>{8, 2}));
  EXPECT_EQ(split_sizes(10, SplitScheme::k60_20_20), (std::vector<std::size_t>{6, 2, 2}));
  EXPECT_EQ(split_sizes(5, SplitScheme::k60_20_20), (std::vector<std::size_t>{3, 1, 1}));
  EXPECT_EQ(split_sizes(7, SplitScheme::k80_20), (std::vector<std::size_t>{5, 2}));
  EXPECT_EQ(parse_split_scheme("60-20-20"), SplitScheme::k60_20_20);
  EXPECT_THROW(parse_split_scheme("70-30"), ConfigError);
}

// Parts are disjoint, cover the input, and depend only on the seed.
TEST(SplitTest, PartitionProperty) {
  for (std::size_t n = 3; n < 80; ++n) {
    std::vector<int> items(n);
    std::iota(items.begin(), items.end(), 0);
    for (auto scheme : {SplitScheme::k80_20, SplitScheme::k60_20_20}) {
      auto parts = split(items, scheme, n);
      std::vector<int> all;
      auto sizes = split_sizes(n, scheme);
      for (std::size_t p = 0; p < parts.size(); ++p) {
        EXPECT_EQ(parts[p].size(), sizes[p]);
        all.insert(all.end(), parts[p].begin(), parts[p].end());
      }
      std::sort(all.begin(), all.end());
      EXPECT_EQ(all, items);
      EXPECT_EQ(split(items, scheme, n), parts);
    }
  }
  EXPECT_THROW(split(std::vector<int>{1, 2}, SplitScheme::k60_20_20, 0), DataError);
}

TEST(SplitTest, FactsStratifiedByRelation) {
  FactDataset ds;
  for (int i = 0; i < 5; ++i) ds.add({"a" + std::to_string(i), "r1", "o", 0, {}, {}});
  for (int i = 0; i < 10; ++i) ds.add({"b" + std::to_string(i), "r2", "o", 0, {}, {}});
  auto parts = split(ds, SplitScheme::k60_20_20, 1);
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_EQ(parts[0].by_relation.at("r1").size(), 3u);
  EXPECT_EQ(parts[1].by_relation.at("r1").size(), 1u);
  EXPECT_EQ(parts[2].by_relation.at("r1").size(), 1u);
  EXPECT_EQ(parts[0].by_relation.at("r2").size(), 6u);
  EXPECT_EQ(parts[2].by_relation.at("r2").size(), 2u);
}

TEST(SubsampleTest, UniformSubsets) {
  std::vector<int> train(100);
  std::iota(train.begin(), train.end(), 0);
  auto fams = subsample(train, {10, 50, 100}, 3, 7);
  ASSERT_EQ(fams.size(), 3u);
  for (const auto& fam : fams) {
    ASSERT_EQ(fam.subsets.size(), 3u);
    for (const auto& s : fam.subsets) {
      EXPECT_EQ(s.size(), fam.size);
      EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
      EXPECT_EQ(std::set<int>(s.begin(), s.end()).size(), s.size());
    }
  }
  EXPECT_NE(fams[0].subsets[0], fams[0].subsets[1]);
  EXPECT_EQ(fams[2].subsets[0], train);
  EXPECT_EQ(subsample(train, {10, 50, 100}, 3, 7)[1].subsets, fams[1].subsets);
  EXPECT_THROW(subsample(train, {101}, 1, 0), DataError);
}

TEST(SubsampleTest, StratifiedKeepsProportions) {
  std::vector<std::string> train;
  for (int i = 0; i < 70; ++i) train.push_back("a");
  for (int i = 0; i < 30; ++i) train.push_back("b");
  std::function<std::string(const std::string&)> label = [](const std::string& s) { return s; };
  auto fams = subsample(train, {10, 15}, 2, 1, label);
  for (const auto& s : fams[0].subsets) EXPECT_EQ(std::count(s.begin(), s.end(), "b"), 3);
  for (const auto& s : fams[1].subsets) {
    EXPECT_EQ(s.size(), 15u);
    // Quotas 10.5 and 4.5: the tied remainder goes to the first class.
    EXPECT_EQ(std::count(s.begin(), s.end(), "a"), 11);
  }
}

TEST(SyntheticTest, GeneratorShape) {
  auto spec = SyntheticSpec::with_counts(2, 3, 4);
  auto t = gen_synthetic_sentiment(spec, 50, 9);
  EXPECT_EQ(t.vocab.size(), 3u + 2 + 3 + 4);
  EXPECT_EQ(t.vocab.mask_id(), 1);
  EXPECT_EQ(t.dataset.examples.size(), 50u);
  EXPECT_EQ(t.corpus.size(), 125u);
  for (const auto& e : t.dataset.examples) {
    std::istringstream in(e.fields.at("sentence"));
    std::string w;
    int pos = 0, neg = 0, words = 0;
    while (in >> w) {
      ++words;
      pos += w.rfind("pos", 0) == 0;
      neg += w.rfind("neg", 0) == 0;
    }
    EXPECT_EQ(words, 6);
    EXPECT_EQ(pos + neg, 1);
    EXPECT_EQ(e.label, pos ? "pos" : "neg");
  }
  for (const auto& m : t.corpus) {
    EXPECT_EQ(m.tokens[m.masked_position], t.vocab.mask_id());
    EXPECT_EQ(m.tokens.back(), *t.vocab.id_of("."));
  }
  auto again = gen_synthetic_sentiment(spec, 50, 9);
  EXPECT_EQ(again.dataset.examples, t.dataset.examples);
  EXPECT_THROW(gen_synthetic_sentiment(SyntheticSpec{}, 5, 0), DataError);
}

}  // namespace
}  // namespace promptsearch
