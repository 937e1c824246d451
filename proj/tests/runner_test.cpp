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
#include <sstream>

#include <gtest/gtest.h>

#include "promptsearch/runner.hpp"
#include "stub_oracles.hpp"
#include "synthetic_fixture.hpp"

namespace promptsearch {
namespace {

namespace fs = std::filesystem;
using testing::MakeSyntheticSetup;

std::string Slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("promptsearch_runner_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

struct TaskFixture {
  testing::SyntheticSetup s = MakeSyntheticSetup(11, 160);
  ClassificationTask task{s.tmpl, s.train, s.dev, std::nullopt, s.filter, {.steps = 300}};
  OracleFactory factory = [this] { return std::shared_ptr<const Oracle>(&s.oracle(), [](const Oracle*) {}); };

  SearchConfig Base() const {
    SearchConfig c;
    c.iterations = 3;
    c.seed = 11;
    c.filter = s.filter;
    return c;
  }
};

TEST(WithTriggerCountTest, ResizesTriggerRun) {
  auto t = parse_template("{sentence} [T] [T] [P] .");
  EXPECT_EQ(to_source(with_trigger_count(t, 5)), "{sentence} [T] [T] [T] [T] [T] [P] .");
  EXPECT_EQ(to_source(with_trigger_count(t, 1)), "{sentence} [T] [P] .");
  EXPECT_THROW(with_trigger_count(parse_template("{x} [P]"), 2), ConfigError);
}

TEST(GridTest, DefaultAxesGiveTwentyFourOrderedCells) {
  TaskFixture f;
  GridAxes axes;
  axes.candidate_k = {10, 100};
  auto base = f.Base();
  base.iterations = 1;
  auto report = run_grid(f.factory, f.task, base, axes);
  ASSERT_EQ(report.cells.size(), 24u);
  EXPECT_EQ(report.cells[0].candidate_k, 10u);
  EXPECT_EQ(report.cells[0].label_k, 1u);
  EXPECT_EQ(report.cells[0].trigger_len, 3u);
  EXPECT_EQ(report.cells[1].trigger_len, 4u);
  EXPECT_EQ(report.cells[4].label_k, 3u);
  EXPECT_EQ(report.cells[23].candidate_k, 100u);
  EXPECT_EQ(report.cells[23].label_k, 5u);
  EXPECT_EQ(report.cells[23].trigger_len, 6u);
  for (const auto& c : report.cells) {
    EXPECT_TRUE(c.outcome.ok) << c.outcome.error;
    EXPECT_EQ(c.outcome.search.best_triggers.size(), c.trigger_len);
    for (const auto& [label, ids] : c.outcome.labels.sets) EXPECT_EQ(ids.size(), c.label_k);
  }
  ASSERT_TRUE(report.best.has_value());
  EXPECT_EQ(report.best, pick_best_cell(report.cells));
}

TEST(GridTest, SingleCellMatchesDirectSearch) {
  TaskFixture f;
  GridAxes axes{{10}, {3}, {3}};
  auto report = run_grid(f.factory, f.task, f.Base(), axes);
  ASSERT_EQ(report.cells.size(), 1u);
  auto direct = run_search(f.s.oracle(), f.s.train, f.s.dev, f.s.labels, f.s.tmpl, f.Base());
  EXPECT_EQ(report.cells[0].outcome.labels, f.s.labels);
  EXPECT_EQ(report.cells[0].outcome.search.best_triggers, direct.best_triggers);
  EXPECT_EQ(report.cells[0].outcome.search.best_dev.log_likelihood, direct.best_dev.log_likelihood);
}

TEST(GridTest, FailedCellsAreRecorded) {
  TaskFixture f;
  GridAxes axes{{10}, {3, 50}, {3}};
  auto report = run_grid(f.factory, f.task, f.Base(), axes);
  EXPECT_TRUE(report.cells[0].outcome.ok);
  EXPECT_FALSE(report.cells[1].outcome.ok);
  EXPECT_NE(report.cells[1].outcome.error.find("exceeds"), std::string::npos);
  EXPECT_EQ(report.best, 0u);
  TempDir dir;
  write_grid_report(dir.path(), report, f.task, f.Base(), f.s.task.vocab);
  auto csv = Slurp(dir.path() / "grid.csv");
  EXPECT_NE(csv.find(",failed,"), std::string::npos);
  EXPECT_THROW(run_grid(f.factory, f.task, f.Base(), GridAxes{{}, {1}, {3}}), ConfigError);
}

TEST(GridTest, OutputsIdenticalAcrossRunsAndThreadCounts) {
  TaskFixture f;
  GridAxes axes{{5, 10}, {1, 3}, {3, 4}};
  TempDir a, b;
  auto ra = run_grid(f.factory, f.task, f.Base(), axes, 1);
  write_grid_report(a.path(), ra, f.task, f.Base(), f.s.task.vocab);
  auto rb = run_grid(f.factory, f.task, f.Base(), axes, 3);
  write_grid_report(b.path(), rb, f.task, f.Base(), f.s.task.vocab);
  for (auto name : {"grid.csv", "grid_summary.json", "best_prompt.json"}) {
    EXPECT_EQ(Slurp(a.path() / name), Slurp(b.path() / name)) << name;
    EXPECT_FALSE(Slurp(a.path() / name).empty()) << name;
  }
  auto artifact = PromptArtifact::load((a.path() / "best_prompt.json").string(), f.s.task.vocab);
  EXPECT_EQ(artifact.trigger_ids, ra.cells[*ra.best].outcome.search.best_triggers);
}

TEST(LowDataTest, SingleRepeatCollapsesSummary) {
  TaskFixture f;
  auto report = run_low_data(f.factory, f.task, f.Base(), 3, {10, 40}, 1, false);
  ASSERT_EQ(report.summary.size(), 2u);
  for (const auto& s : report.summary) {
    EXPECT_EQ(s.min, s.mean);
    EXPECT_EQ(s.mean, s.max);
  }
}

TEST(LowDataTest, SummaryMatchesRawCsv) {
  TaskFixture f;
  auto report = run_low_data(f.factory, f.task, f.Base(), 3, {10, 40}, 3, true, 2);
  TempDir dir;
  write_low_data_report(dir.path(), report);
  std::istringstream raw(Slurp(dir.path() / "lowdata_raw.csv"));
  std::string line;
  std::getline(raw, line);
  EXPECT_EQ(line, "size,repeat,dev_accuracy,dev_log_likelihood");
  std::map<std::size_t, std::vector<double>> by_size;
  while (std::getline(raw, line)) {
    std::istringstream row(line);
    std::string size, repeat, acc;
    std::getline(row, size, ',');
    std::getline(row, repeat, ',');
    std::getline(row, acc, ',');
    by_size[std::stoul(size)].push_back(std::stod(acc));
  }
  ASSERT_EQ(by_size.size(), 2u);
  for (const auto& s : report.summary) {
    const auto& v = by_size.at(s.size);
    ASSERT_EQ(v.size(), 3u);
    double mean = 0;
    for (double x : v) mean += x;
    mean /= 3.0;
    EXPECT_NEAR(s.mean, mean, 1e-12);
    EXPECT_EQ(s.min, *std::min_element(v.begin(), v.end()));
    EXPECT_EQ(s.max, *std::max_element(v.begin(), v.end()));
  }
  auto again = run_low_data(f.factory, f.task, f.Base(), 3, {10, 40}, 3, true, 1);
  TempDir dir2;
  write_low_data_report(dir2.path(), again);
  EXPECT_EQ(Slurp(dir.path() / "lowdata_raw.csv"), Slurp(dir2.path() / "lowdata_raw.csv"));
  EXPECT_THROW(run_low_data(f.factory, f.task, f.Base(), 3, {1000}, 1, false), DataError);
}

TEST(ClassificationEvalTest, AccuracyAndPrecision) {
  // The oracle predicts "good" whenever the sentence contains token "good".
  Vocabulary v({"[MASK]", "good", "bad", "film", "great", "awful"}, "[MASK]");
  testing::RuleOracle oracle(v, [](const TokenIds& ids) {
    return std::find(ids.begin(), ids.end(), 1) != ids.end() ? TokenId{4} : TokenId{5};
  });
  LabelTokenSet labels{{{"pos", {4}}, {"neg", {5}}}};
  std::vector<LabeledInput> test{{{{"sentence", {1, 3}}}, "pos"},
                                 {{{"sentence", {2, 3}}}, "neg"},
                                 {{{"sentence", {3}}}, "pos"},
                                 {{{"sentence", {1}}}, "neg"}};
  auto ev = evaluate_classification(oracle, parse_template("{sentence} [P]"), {}, labels, test);
  EXPECT_EQ(ev.n, 4u);
  EXPECT_DOUBLE_EQ(ev.accuracy, 0.5);
  EXPECT_DOUBLE_EQ(ev.precision.at("pos"), 0.5);
  EXPECT_DOUBLE_EQ(ev.precision.at("neg"), 0.5);
  TempDir dir;
  write_classification_eval(dir.path(), ev, "toy", "test");
  EXPECT_EQ(Slurp(dir.path() / "eval_classes.csv"),
            "model,split,class,precision,n_predicted\ntoy,test,neg,0.5,2\ntoy,test,pos,0.5,2\n");
  auto summary = nlohmann::json::parse(Slurp(dir.path() / "eval_summary.json"));
  EXPECT_EQ(summary["accuracy"], 0.5);
}

TEST(FactEvalTest, RanksAndMacroAverage) {
  auto w = testing::MakeFactWorld(30, 8, 3, 1);
  auto copy = testing::CopyOracle(w);
  FactPrompts prompts;
  prompts.shared = {parse_template("{context} {sub} [T] [P] ."), TokenIds{*w.vocab.id_of("is")}};
  auto ev = evaluate_facts(copy, prompts, w.facts);
  ASSERT_EQ(ev.relations.size(), 3u);
  EXPECT_EQ(ev.macro.mrr, 1.0);
  EXPECT_EQ(ev.macro.n, 30u);

  // Without context the copy predictor falls back to the lowest object id.
  prompts.shared->first = parse_template("{sub} [T] [P] .");
  ev = evaluate_facts(copy, prompts, w.facts);
  const TokenId fallback = *w.objects.begin();
  double mrr_sum = 0;
  for (const auto& rel : w.facts.relations) {
    double rr = 0;
    const auto& fs = w.facts.by_relation.at(rel);
    for (const auto& f : fs) rr += f.object_token == fallback ? 1.0 : 1.0 / static_cast<double>(f.object_token + 1);
    mrr_sum += rr / static_cast<double>(fs.size());
  }
  EXPECT_NEAR(ev.macro.mrr, mrr_sum / 3.0, 1e-12);
  TempDir dir;
  write_fact_eval(dir.path(), ev, "toy", "test");
  auto csv = Slurp(dir.path() / "eval_relations.csv");
  EXPECT_NE(csv.find("macro"), std::string::npos);
}

TEST(RelationExtractionEvalTest, CopyVersusMemorizing) {
  auto w = testing::MakeFactWorld(60, 12, 2, 2);
  FactPrompts prompts;
  prompts.shared = {parse_template("{context} {sub} [P] ."), TokenIds{}};
  auto copy = evaluate_relation_extraction(testing::CopyOracle(w), prompts, w.facts, true, 5);
  EXPECT_EQ(copy.original_overall, 1.0);
  EXPECT_EQ(*copy.perturbed_overall, 1.0);
  auto memo = evaluate_relation_extraction(testing::MemorizingOracle(w), prompts, w.facts, true, 5);
  EXPECT_EQ(memo.original_overall, 1.0);
  EXPECT_EQ(*memo.perturbed_overall, 0.0);
  TempDir dir;
  write_re_eval(dir.path(), memo, "memo", "test");
  auto csv = Slurp(dir.path() / "eval_re.csv");
  EXPECT_NE(csv.find("memo,test,overall,1,0"), std::string::npos);
}

}  // namespace
}  // namespace promptsearch
