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

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "promptsearch/data.hpp"
#include "promptsearch/eval.hpp"
#include "promptsearch/label_select.hpp"
#include "promptsearch/search.hpp"

namespace promptsearch {

// Shared oracles (ToyMlm) hand out the same instance; remote backends open a
// new connection per call.
using OracleFactory = std::function<std::shared_ptr<const Oracle>()>;

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string join_ids(const TokenIds& ids, char sep = ' ') {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? std::string(1, sep) : "") + std::to_string(ids[i]);
  return s;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

// Resizes the (contiguous) run of trigger slots to `count`.
inline Template with_trigger_count(const Template& t, std::size_t count) {
  Template out;
  bool placed = false;
  for (const auto& s : t.segments) {
    if (std::holds_alternative<segment::Trigger>(s)) {
      if (!placed) {
        for (std::size_t i = 0; i < count; ++i) out.segments.push_back(segment::Trigger{i});
        placed = true;
      }
      continue;
    }
    out.segments.push_back(s);
  }
  if (!placed) throw ConfigError("template has no [T] slots to resize");
  return out;
}

// Builds V_y automatically: probe prompts (triggers left as masks) are run
// through the oracle, a logistic classifier is fit on the mask hidden
// states, and output embeddings are scored against each class.
inline LabelTokenSet select_labels_for_task(const Oracle& oracle, const Template& tmpl,
                                            const std::vector<LabeledInput>& train, std::size_t label_k,
                                            const TokenFilter& filter, const LogisticOptions& opt,
                                            std::optional<std::size_t> max_length = std::nullopt) {
  const auto& vocab = oracle.vocab();
  auto probes = render_batch(tmpl, train, TokenIds(tmpl.trigger_count(), vocab.mask_id()), vocab, max_length);
  auto fit = fit_logistic(collect_mask_hiddens(oracle, probes), opt);
  return select_label_sets(fit.classifier, oracle.embeddings(), label_k, filter, vocab);
}

struct ClassificationTask {
  Template tmpl;
  std::vector<LabeledInput> train;
  std::vector<LabeledInput> dev;
  std::optional<LabelTokenSet> manual_labels;
  TokenFilter label_filter;
  LogisticOptions logistic;
};

struct CellOutcome {
  bool ok = false;
  std::string error;
  LabelTokenSet labels;
  SearchResult search;
};

inline CellOutcome run_cell(const Oracle& oracle, const ClassificationTask& task, const SearchConfig& config,
                            std::size_t label_k) {
  CellOutcome out;
  try {
    Template tmpl = with_trigger_count(task.tmpl, config.trigger_len);
    out.labels = task.manual_labels ? *task.manual_labels
                                    : select_labels_for_task(oracle, tmpl, task.train, label_k, task.label_filter,
                                                             task.logistic, config.max_length);
    for (auto id : out.labels.overlap()) {
      std::fprintf(stderr, "warning: label token '%s' is shared by several classes\n",
                   oracle.vocab().string_of(id).c_str());
    }
    out.search = run_search(oracle, task.train, task.dev, out.labels, tmpl, config);
    out.ok = true;
  } catch (const Error& e) {
    out.error = e.what();
  }
  return out;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
// stored by index so the output does not depend on scheduling.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex mu;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

struct GridAxes {
  std::vector<std::size_t> candidate_k{10, 100};
  std::vector<std::size_t> label_k{1, 3, 5};
  std::vector<std::size_t> trigger_len{3, 4, 5, 6};
};

struct GridCell {
  std::size_t candidate_k = 0;
  std::size_t label_k = 0;
  std::size_t trigger_len = 0;
  CellOutcome outcome;
};

struct GridReport {
  std::vector<GridCell> cells;  // lexicographic (candidate_k, label_k, trigger_len)
  std::optional<std::size_t> best;
};

// Best cell: highest dev accuracy, then dev log-likelihood, then the
// earliest cell.
inline std::optional<std::size_t> pick_best_cell(const std::vector<GridCell>& cells) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!cells[i].outcome.ok) continue;
    if (!best) {
      best = i;
      continue;
    }
    const auto& a = cells[i].outcome.search.best_dev;
    const auto& b = cells[*best].outcome.search.best_dev;
    if (a.accuracy > b.accuracy || (a.accuracy == b.accuracy && a.log_likelihood > b.log_likelihood)) best = i;
  }
  return best;
}

inline GridReport run_grid(const OracleFactory& oracles, const ClassificationTask& task, const SearchConfig& base,
                           const GridAxes& axes, std::size_t threads = 1) {
  if (axes.candidate_k.empty() || axes.label_k.empty() || axes.trigger_len.empty()) {
    throw ConfigError("grid: every axis needs at least one value");
  }
  GridReport report;
  for (auto k : axes.candidate_k)
    for (auto lk : axes.label_k)
      for (auto len : axes.trigger_len) report.cells.push_back({k, lk, len, {}});
  parallel_for(report.cells.size(), threads, [&](std::size_t i) {
    auto& cell = report.cells[i];
    SearchConfig config = base;
    config.candidate_k = cell.candidate_k;
    config.trigger_len = cell.trigger_len;
    config.initial_triggers.reset();
    config.checkpoint_path.reset();
    auto oracle = oracles();
    cell.outcome = run_cell(*oracle, task, config, cell.label_k);
  });
  report.best = pick_best_cell(report.cells);
  return report;
}

inline PromptArtifact make_artifact(const Template& tmpl, const TokenIds& triggers,
                                    std::optional<LabelTokenSet> labels, const DevMetric& dev,
                                    const SearchConfig& config, const Vocabulary& vocab) {
  PromptArtifact a;
  a.template_source = to_source(tmpl);
  a.trigger_ids = triggers;
  for (auto id : triggers) a.trigger_tokens.push_back(vocab.string_of(id));
  a.labels = std::move(labels);
  a.dev = dev;
  a.config = to_json(config);
  a.vocab_fingerprint = vocab.fingerprint();
  return a;
}

// grid.csv, grid_summary.json and best_prompt.json under `out`.
inline void write_grid_report(const std::filesystem::path& out, const GridReport& report,
                              const ClassificationTask& task, const SearchConfig& base, const Vocabulary& vocab) {
  std::ostringstream csv;
  csv << "candidate_k,label_k,trigger_len,status,dev_accuracy,dev_log_likelihood,triggers,error\n";
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : report.cells) {
    const auto& o = c.outcome;
    csv << c.candidate_k << ',' << c.label_k << ',' << c.trigger_len << ',' << (o.ok ? "ok" : "failed") << ',';
    if (o.ok) {
      csv << format_double(o.search.best_dev.accuracy) << ',' << format_double(o.search.best_dev.log_likelihood)
          << ',' << join_ids(o.search.best_triggers) << ",\n";
    } else {
      std::string err = o.error;
      std::replace(err.begin(), err.end(), ',', ';');
      std::replace(err.begin(), err.end(), '\n', ' ');
      csv << ",,," << err << '\n';
    }
    nlohmann::json cj{{"candidate_k", c.candidate_k},
                      {"label_k", c.label_k},
                      {"trigger_len", c.trigger_len},
                      {"ok", o.ok}};
    if (o.ok) {
      cj["dev_accuracy"] = o.search.best_dev.accuracy;
      cj["dev_log_likelihood"] = o.search.best_dev.log_likelihood;
      cj["triggers"] = o.search.best_triggers;
    } else {
      cj["error"] = o.error;
    }
    cells.push_back(cj);
  }
  write_text(out / "grid.csv", csv.str());
  nlohmann::json summary{{"cells", cells}};
  summary["best_cell"] = report.best ? nlohmann::json(*report.best) : nlohmann::json(nullptr);
  write_text(out / "grid_summary.json", summary.dump(2) + "\n");
  if (report.best) {
    const auto& c = report.cells[*report.best];
    SearchConfig config = base;
    config.candidate_k = c.candidate_k;
    config.trigger_len = c.trigger_len;
    auto artifact = make_artifact(with_trigger_count(task.tmpl, c.trigger_len), c.outcome.search.best_triggers,
                                  c.outcome.labels, c.outcome.search.best_dev, config, vocab);
    write_text(out / "best_prompt.json", artifact.to_json(vocab).dump(2) + "\n");
  }
}

struct LowDataRow {
  std::size_t size = 0;
  std::size_t repeat = 0;
  double dev_accuracy = 0.0;
  double dev_log_likelihood = 0.0;
};

struct LowDataSummary {
  std::size_t size = 0;
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
};

struct LowDataReport {
  std::vector<LowDataRow> rows;
  std::vector<LowDataSummary> summary;
};

inline std::vector<LowDataSummary> summarize_low_data(const std::vector<LowDataRow>& rows) {
  std::vector<LowDataSummary> out;
  for (const auto& r : rows) {
    if (out.empty() || out.back().size != r.size) out.push_back({r.size, r.dev_accuracy, 0.0, r.dev_accuracy});
    auto& s = out.back();
    s.min = std::min(s.min, r.dev_accuracy);
    s.max = std::max(s.max, r.dev_accuracy);
  }
  for (auto& s : out) {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows) {
      if (r.size == s.size) {
        total += r.dev_accuracy;
        ++n;
      }
    }
    s.mean = total / static_cast<double>(n);
  }
  return out;
}

// For each size, `repeats` random training subsets each get their own label
// selection and search; dev accuracy of the returned prompt is recorded.
inline LowDataReport run_low_data(const OracleFactory& oracles, const ClassificationTask& task,
                                  const SearchConfig& config, std::size_t label_k,
                                  const std::vector<std::size_t>& sizes, std::size_t repeats, bool stratified,
                                  std::size_t threads = 1) {
  if (sizes.empty() || repeats == 0) throw ConfigError("lowdata: need at least one size and one repeat");
  std::function<std::string(const LabeledInput&)> label_of;
  if (stratified) label_of = [](const LabeledInput& e) { return e.label; };
  auto families = subsample(task.train, sizes, repeats, config.seed, label_of);
  struct Job {
    std::size_t family, repeat;
  };
  std::vector<Job> jobs;
  for (std::size_t f = 0; f < families.size(); ++f)
    for (std::size_t r = 0; r < repeats; ++r) jobs.push_back({f, r});
  LowDataReport report;
  report.rows.resize(jobs.size());
  std::vector<std::string> errors(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t i) {
    const auto& job = jobs[i];
    ClassificationTask sub = task;
    sub.train = families[job.family].subsets[job.repeat];
    SearchConfig c = config;
    c.checkpoint_path.reset();
    auto oracle = oracles();
    auto cell = run_cell(*oracle, sub, c, label_k);
    if (!cell.ok) {
      errors[i] = cell.error;
      return;
    }
    report.rows[i] = {families[job.family].size, job.repeat, cell.search.best_dev.accuracy,
                      cell.search.best_dev.log_likelihood};
  });
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) throw ConfigError("lowdata: size " + std::to_string(sizes[jobs[i].family]) +
                                              " repeat " + std::to_string(jobs[i].repeat) + ": " + errors[i]);
  }
  report.summary = summarize_low_data(report.rows);
  return report;
}

inline void write_low_data_report(const std::filesystem::path& out, const LowDataReport& report) {
  std::ostringstream raw;
  raw << "size,repeat,dev_accuracy,dev_log_likelihood\n";
  for (const auto& r : report.rows) {
    raw << r.size << ',' << r.repeat << ',' << format_double(r.dev_accuracy) << ','
        << format_double(r.dev_log_likelihood) << '\n';
  }
  write_text(out / "lowdata_raw.csv", raw.str());
  std::ostringstream sum;
  sum << "size,min,mean,max\n";
  for (const auto& s : report.summary) {
    sum << s.size << ',' << format_double(s.min) << ',' << format_double(s.mean) << ',' << format_double(s.max)
        << '\n';
  }
  write_text(out / "lowdata_summary.csv", sum.str());
}

// ---- evaluation -----------------------------------------------------------

struct ClassificationEval {
  std::size_t n = 0;
  double accuracy = 0.0;
  std::map<ClassLabel, double> precision;
  std::map<ClassLabel, std::size_t> predicted_count;
};

inline ClassificationEval evaluate_classification(const Oracle& oracle, const Template& tmpl,
                                                  const TokenIds& triggers, const LabelTokenSet& labels,
                                                  const std::vector<LabeledInput>& test,
                                                  std::optional<std::size_t> max_length = std::nullopt) {
  if (test.empty()) throw DataError("eval: empty test set");
  std::vector<std::pair<ClassLabel, ClassLabel>> pairs;
  ClassificationEval ev;
  std::size_t correct = 0;
  for (const auto& [prompt, gold] : render_batch(tmpl, test, triggers, oracle.vocab(), max_length)) {
    OracleRequest req;
    req.prompt = prompt;
    auto pred = classify(marginal_class_probs(oracle.query(req), labels));
    correct += pred == gold ? 1 : 0;
    ++ev.predicted_count[pred];
    pairs.emplace_back(pred, gold);
  }
  ev.n = test.size();
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(ev.n);
  ev.precision = per_class_precision(pairs);
  return ev;
}

inline void write_classification_eval(const std::filesystem::path& out, const ClassificationEval& ev,
                                      const std::string& model, const std::string& split) {
  std::ostringstream csv;
  csv << "model,split,class,precision,n_predicted\n";
  for (const auto& [label, p] : ev.precision) {
    csv << model << ',' << split << ',' << label << ',' << format_double(p) << ',' << ev.predicted_count.at(label)
        << '\n';
  }
  write_text(out / "eval_classes.csv", csv.str());
  nlohmann::json j{{"model", model}, {"split", split}, {"n", ev.n}, {"accuracy", ev.accuracy},
                   {"per_class_precision", ev.precision}};
  write_text(out / "eval_summary.json", j.dump(2) + "\n");
}

inline FieldTokens fact_fields(const FactInstance& f, const Vocabulary& vocab) {
  std::string context;
  for (const auto& s : f.context_sentences) context += (context.empty() ? "" : " ") + s;
  return {{"sub", vocab.tokenize(f.subject)}, {"context", vocab.tokenize(context)}};
}

// A prompt for fact tasks: the template (keyed per relation or shared) and
// its triggers.
struct FactPrompts {
  std::map<std::string, std::pair<Template, TokenIds>> per_relation;
  std::optional<std::pair<Template, TokenIds>> shared;

  const std::pair<Template, TokenIds>& for_relation(const std::string& rel) const {
    auto it = per_relation.find(rel);
    if (it != per_relation.end()) return it->second;
    if (shared) return *shared;
    throw ConfigError("no prompt for relation '" + rel + "'");
  }
};

struct RelationRanks {
  std::string relation;
  RankReport report;
};

struct FactEval {
  std::vector<RelationRanks> relations;
  RankReport macro;  // unweighted mean over relations
};

inline FactEval evaluate_facts(const Oracle& oracle, const FactPrompts& prompts, const FactDataset& facts,
                               std::optional<std::size_t> max_length = std::nullopt) {
  if (facts.size() == 0) throw DataError("eval: empty fact set");
  FactEval ev;
  const auto& vocab = oracle.vocab();
  for (const auto& rel : facts.relations) {
    const auto& fs = facts.by_relation.at(rel);
    if (fs.empty()) continue;
    const auto& [tmpl, triggers] = prompts.for_relation(rel);
    std::vector<std::size_t> ranks;
    for (const auto& f : fs) {
      OracleRequest req;
      req.prompt = render_prompt(tmpl, fact_fields(f, vocab), triggers, vocab, max_length);
      ranks.push_back(rank_of_gold(oracle.query(req), f.object_token));
    }
    ev.relations.push_back({rel, ranking_metrics(ranks)});
  }
  for (const auto& r : ev.relations) {
    ev.macro.mrr += r.report.mrr;
    ev.macro.p_at_1 += r.report.p_at_1;
    ev.macro.p_at_10 += r.report.p_at_10;
    ev.macro.n += r.report.n;
  }
  const auto k = static_cast<double>(ev.relations.size());
  ev.macro.mrr /= k;
  ev.macro.p_at_1 /= k;
  ev.macro.p_at_10 /= k;
  return ev;
}

inline void write_fact_eval(const std::filesystem::path& out, const FactEval& ev, const std::string& model,
                            const std::string& split) {
  std::ostringstream csv;
  csv << "model,split,relation,n,mrr,p_at_1,p_at_10\n";
  auto row = [&](const std::string& rel, const RankReport& r) {
    csv << model << ',' << split << ',' << rel << ',' << r.n << ',' << format_double(r.mrr) << ','
        << format_double(r.p_at_1) << ',' << format_double(r.p_at_10) << '\n';
  };
  for (const auto& r : ev.relations) row(r.relation, r.report);
  row("macro-average", ev.macro);
  write_text(out / "eval_relations.csv", csv.str());
  nlohmann::json j{{"model", model},
                   {"split", split},
                   {"macro", {{"mrr", ev.macro.mrr}, {"p_at_1", ev.macro.p_at_1}, {"p_at_10", ev.macro.p_at_10},
                              {"n", ev.macro.n}}}};
  write_text(out / "eval_summary.json", j.dump(2) + "\n");
}

// Top-1 prediction restricted to non-special tokens.
inline TokenId predict_token(const OracleResponse& r, const Vocabulary& vocab) {
  TokenId best = -1;
  for (Eigen::Index w = 0; w < r.mask_log_probs.size(); ++w) {
    if (vocab.is_special(static_cast<TokenId>(w))) continue;
    if (best < 0 || r.mask_log_probs[w] > r.mask_log_probs[best]) best = static_cast<TokenId>(w);
  }
  return best;
}

struct RelationExtractionEval {
  std::vector<std::pair<std::string, double>> original;   // per relation accuracy
  std::vector<std::pair<std::string, double>> perturbed;  // empty unless requested
  double original_overall = 0.0;
  std::optional<double> perturbed_overall;
};

inline std::vector<std::pair<std::string, double>> re_accuracy(const Oracle& oracle, const FactPrompts& prompts,
                                                               const FactDataset& facts, double& overall,
                                                               std::optional<std::size_t> max_length) {
  std::vector<std::pair<std::string, double>> out;
  std::size_t correct_all = 0, n_all = 0;
  const auto& vocab = oracle.vocab();
  for (const auto& rel : facts.relations) {
    const auto& fs = facts.by_relation.at(rel);
    if (fs.empty()) continue;
    const auto& [tmpl, triggers] = prompts.for_relation(rel);
    std::size_t correct = 0;
    for (const auto& f : fs) {
      OracleRequest req;
      req.prompt = render_prompt(tmpl, fact_fields(f, vocab), triggers, vocab, max_length);
      auto pred = predict_token(oracle.query(req), vocab);
      correct += re_credit(vocab.string_of(pred), f) ? 1 : 0;
    }
    out.emplace_back(rel, static_cast<double>(correct) / static_cast<double>(fs.size()));
    correct_all += correct;
    n_all += fs.size();
  }
  if (n_all == 0) throw DataError("eval: empty fact set");
  overall = static_cast<double>(correct_all) / static_cast<double>(n_all);
  return out;
}

inline RelationExtractionEval evaluate_relation_extraction(const Oracle& oracle, const FactPrompts& prompts,
                                                           const FactDataset& facts, bool perturbed,
                                                           std::uint64_t seed,
                                                           std::optional<std::size_t> max_length = std::nullopt) {
  RelationExtractionEval ev;
  ev.original = re_accuracy(oracle, prompts, facts, ev.original_overall, max_length);
  if (perturbed) {
    FactDataset p;
    for (auto& f : perturb_facts(facts.all(), seed)) p.add(std::move(f));
    double overall = 0.0;
    ev.perturbed = re_accuracy(oracle, prompts, p, overall, max_length);
    ev.perturbed_overall = overall;
  }
  return ev;
}

inline void write_re_eval(const std::filesystem::path& out, const RelationExtractionEval& ev,
                          const std::string& model, const std::string& split) {
  std::ostringstream csv;
  csv << "model,split,relation,original" << (ev.perturbed_overall ? ",perturbed" : "") << '\n';
  for (std::size_t i = 0; i < ev.original.size(); ++i) {
    csv << model << ',' << split << ',' << ev.original[i].first << ',' << format_double(ev.original[i].second);
    if (ev.perturbed_overall) csv << ',' << format_double(ev.perturbed[i].second);
    csv << '\n';
  }
  csv << model << ',' << split << ",overall," << format_double(ev.original_overall);
  if (ev.perturbed_overall) csv << ',' << format_double(*ev.perturbed_overall);
  csv << '\n';
  write_text(out / "eval_re.csv", csv.str());
  nlohmann::json j{{"model", model}, {"split", split}, {"original", ev.original_overall}};
  j["perturbed"] = ev.perturbed_overall ? nlohmann::json(*ev.perturbed_overall) : nlohmann::json(nullptr);
  write_text(out / "eval_summary.json", j.dump(2) + "\n");
}

}  // namespace promptsearch
