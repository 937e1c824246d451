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

#include <signal.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "promptsearch/promptsearch.hpp"
#include "promptsearch/remote_oracle.hpp"
#include "promptsearch/wire_server.hpp"

namespace ps = promptsearch;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kUnexpected = 1, kConfig = 2, kData = 3, kOracle = 4, kAllCellsFailed = 5 };

// ---- config file ------------------------------------------------------------

// Keys of the JSON object name long options ("candidate_k" or "candidate-k").
// Values only fill options that were not given on the command line.
void apply_config_file(CLI::App* cmd, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ps::ConfigError("cannot open config file: " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ps::ConfigError("config file must hold a JSON object: " + path);
  auto scalar = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  for (const auto& [key, value] : j.items()) {
    std::string name = key;
    std::replace(name.begin(), name.end(), '_', '-');
    if (name == "config") continue;
    CLI::Option* opt = cmd->get_option_no_throw("--" + name);
    if (!opt) throw ps::ConfigError("config file: unknown key '" + key + "' for command " + cmd->get_name());
    if (opt->count() > 0) continue;
    if (value.is_array()) {
      for (const auto& v : value) opt->add_result(scalar(v));
    } else {
      opt->add_result(scalar(value));
    }
    try {
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw ps::ConfigError("config file: key '" + key + "': " + e.what());
    }
  }
}

void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw ps::ConfigError("missing required option " + flag);
}

// ---- oracles ----------------------------------------------------------------

struct OracleOptions {
  std::string spec;
  std::string vocab;
  double timeout = 60.0;

  void add(CLI::App* cmd) {
    cmd->add_option("--oracle", spec, "toy:MODEL.json or remote:HOST:PORT");
    cmd->add_option("--vocab", vocab, "vocabulary file (required for remote oracles)");
    cmd->add_option("--timeout", timeout, "remote request timeout in seconds");
  }

  ps::OracleFactory factory() const {
    require(spec, "--oracle");
    if (spec.rfind("toy:", 0) == 0) {
      auto model = std::make_shared<const ps::ToyMlm>(ps::ToyMlm::load(spec.substr(4)));
      if (!vocab.empty() && ps::Vocabulary::load(vocab).fingerprint() != model->vocab().fingerprint()) {
        throw ps::ConfigError("--vocab does not match the toy model's vocabulary");
      }
      return [model] { return std::static_pointer_cast<const ps::Oracle>(model); };
    }
    if (spec.rfind("remote:", 0) == 0) {
      require(vocab, "--vocab");
      auto endpoint = ps::Endpoint::parse(spec.substr(7));
      auto v = std::make_shared<const ps::Vocabulary>(ps::Vocabulary::load(vocab));
      double t = timeout;
      return [endpoint, v, t] { return std::shared_ptr<const ps::Oracle>(new ps::RemoteOracle(endpoint, *v, t)); };
    }
    throw ps::ConfigError("--oracle must be toy:PATH or remote:HOST:PORT, got '" + spec + "'");
  }
};

// ---- data -------------------------------------------------------------------

struct DataOptions {
  std::string data;
  std::string format = "sentence";
  bool header = false;
  std::string facts;
  std::string relation;
  std::string split = "60-20-20";

  void add(CLI::App* cmd) {
    cmd->add_option("--data", data, "classification TSV");
    cmd->add_option("--format", format, "TSV layout")->check(CLI::IsMember({"sentence", "pair"}));
    cmd->add_flag("--header", header, "TSV has a header row");
    cmd->add_option("--facts", facts, "facts JSONL (instead of --data)");
    cmd->add_option("--relation", relation, "restrict facts to one relation");
    cmd->add_option("--split", split, "split scheme")->check(CLI::IsMember({"80-20", "60-20-20"}));
  }
};

struct TaskData {
  std::vector<ps::LabeledInput> train, dev, test;
  std::optional<ps::LabelTokenSet> fact_labels;  // one singleton set per object
  ps::TokenIds gold_tokens;
  ps::FactDataset fact_test;
  bool facts = false;
};

std::vector<ps::LabeledInput> fact_inputs(const ps::FactDataset& ds, const ps::Vocabulary& vocab) {
  std::vector<ps::LabeledInput> out;
  for (const auto& f : ds.all()) out.push_back({ps::fact_fields(f, vocab), f.object_canonical});
  return out;
}

ps::FactDataset load_fact_file(const DataOptions& d, const ps::Vocabulary& vocab) {
  ps::FactLoadOptions opt;
  opt.vocab = &vocab;
  auto ds = ps::load_facts(d.facts, opt);
  if (d.relation.empty()) return ds;
  if (!ds.by_relation.count(d.relation)) throw ps::DataError("relation '" + d.relation + "' not in " + d.facts);
  ps::FactDataset one;
  for (const auto& f : ds.by_relation.at(d.relation)) one.add(f);
  return one;
}

TaskData load_task_data(const DataOptions& d, const ps::Vocabulary& vocab, std::uint64_t seed) {
  TaskData t;
  const auto scheme = ps::parse_split_scheme(d.split);
  if (!d.facts.empty()) {
    if (!d.data.empty()) throw ps::ConfigError("--data and --facts are mutually exclusive");
    t.facts = true;
    auto ds = load_fact_file(d, vocab);
    auto parts = ps::split(ds, scheme, seed);
    t.train = fact_inputs(parts[0], vocab);
    t.dev = fact_inputs(parts[1], vocab);
    if (parts.size() > 2) {
      t.test = fact_inputs(parts[2], vocab);
      t.fact_test = parts[2];
    }
    ps::LabelTokenSet labels;
    std::set<ps::TokenId> gold;
    for (const auto& f : ds.all()) {
      labels.sets[f.object_canonical] = {f.object_token};
      gold.insert(f.object_token);
    }
    t.fact_labels = labels;
    t.gold_tokens.assign(gold.begin(), gold.end());
    return t;
  }
  require(d.data, "--data");
  auto format = d.format == "pair" ? ps::TsvFormat::kPair : ps::TsvFormat::kSentenceLabel;
  auto ds = ps::load_classification(d.data, format, {.header = d.header, .label_whitelist = std::nullopt});
  auto parts = ps::split(ps::tokenize_examples(ds.examples, vocab), scheme, seed);
  t.train = std::move(parts[0]);
  t.dev = std::move(parts[1]);
  if (parts.size() > 2) t.test = std::move(parts[2]);
  return t;
}

// ---- templates, labels, search options ---------------------------------------

struct TemplateOptions {
  std::string path;
  std::string key;

  void add(CLI::App* cmd) {
    cmd->add_option("--template", path, "template file");
    cmd->add_option("--template-key", key, "template key within the file (default: first)");
  }

  ps::Template load() const {
    require(path, "--template");
    auto entries = ps::load_templates(path);
    if (key.empty()) return entries.front().tmpl;
    for (const auto& e : entries)
      if (e.key == key) return e.tmpl;
    throw ps::ConfigError("template key '" + key + "' not found in " + path);
  }
};

struct LabelOptions {
  std::string path;
  std::size_t k = 3;
  double l2 = 0.0;
  std::size_t steps = 500;
  double learning_rate = 0.5;
  bool center = false;

  void add(CLI::App* cmd, bool with_k = true) {
    cmd->add_option("--labels", path, "label token file (skips automatic selection)");
    if (with_k) cmd->add_option("--label-k", k, "label tokens per class");
    cmd->add_option("--label-l2", l2, "L2 penalty of the label classifier");
    cmd->add_option("--label-steps", steps, "gradient steps of the label classifier");
    cmd->add_option("--label-lr", learning_rate, "learning rate of the label classifier");
    cmd->add_flag("--label-center", center, "center hidden states before fitting");
  }

  ps::LogisticOptions logistic(std::uint64_t seed) const {
    return {.l2 = l2, .steps = steps, .learning_rate = learning_rate, .seed = seed, .center_inputs = center};
  }
};

struct SearchOptions {
  std::size_t candidate_k = 10;
  std::size_t trigger_len = 0;
  std::size_t iterations = 50;
  std::size_t candidate_batch = 8;
  std::size_t eval_batch = 8;
  std::string position_order = "round-robin";
  bool no_incumbent = false;
  bool sum_gradients = false;
  std::size_t max_length = 0;
  bool block_capitalized = false;
  std::string initial_triggers;
  std::size_t threads = 1;

  // `axes` leaves candidate_k and trigger_len to the grid.
  void add(CLI::App* cmd, bool axes = true) {
    if (axes) {
      cmd->add_option("--candidate-k", candidate_k, "candidates per iteration");
      cmd->add_option("--trigger-len", trigger_len, "trigger count (default: as in the template)");
      cmd->add_option("--initial-triggers", initial_triggers, "space-separated warm-start trigger tokens");
    }
    cmd->add_option("--iterations", iterations, "search iterations");
    cmd->add_option("--candidate-batch", candidate_batch, "examples per gradient batch");
    cmd->add_option("--eval-batch", eval_batch, "examples per candidate re-evaluation");
    cmd->add_option("--position-order", position_order, "trigger slot schedule")
        ->check(CLI::IsMember({"round-robin", "random"}));
    cmd->add_flag("--no-incumbent", no_incumbent, "drop the current token from re-evaluation");
    cmd->add_flag("--sum-gradients", sum_gradients, "sum batch gradients instead of averaging");
    cmd->add_option("--max-length", max_length, "prompt length cap (0: none)");
    cmd->add_flag("--block-capitalized", block_capitalized, "exclude capitalized trigger tokens");
    cmd->add_option("--threads", threads, "worker threads for grid and lowdata");
  }

  ps::SearchConfig config(std::uint64_t seed, const ps::Vocabulary& vocab, const ps::TokenIds& gold) const {
    ps::SearchConfig c;
    c.candidate_k = candidate_k;
    c.trigger_len = trigger_len;
    c.iterations = iterations;
    c.candidate_batch = candidate_batch;
    c.eval_batch = eval_batch;
    c.seed = seed;
    c.include_incumbent = !no_incumbent;
    c.position_order = position_order == "random" ? ps::PositionOrder::kRandom : ps::PositionOrder::kRoundRobin;
    c.average_gradients = !sum_gradients;
    if (max_length > 0) c.max_length = max_length;
    c.filter = ps::build_token_filter(vocab, std::set<ps::TokenId>(gold.begin(), gold.end()), {.block_capitalized = block_capitalized, .block_specials = true});
    if (!initial_triggers.empty()) c.initial_triggers = vocab.tokenize(initial_triggers);
    return c;
  }
};

ps::TokenFilter label_filter(const ps::Vocabulary& vocab) {
  return ps::build_token_filter(vocab, {}, {.block_capitalized = false, .block_specials = true});
}

std::string csv_field(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

void write_search_outputs(const fs::path& out, const ps::SearchResult& r, const ps::Template& tmpl,
                          const ps::LabelTokenSet& labels, const ps::SearchConfig& config,
                          const ps::Vocabulary& vocab) {
  fs::create_directories(out);
  std::ostringstream history;
  history << "iteration,dev_log_likelihood,dev_accuracy\n";
  for (const auto& h : r.history) {
    history << h.iteration << ',' << ps::format_double(h.dev_log_likelihood) << ','
            << ps::format_double(h.dev_accuracy) << '\n';
  }
  ps::write_text(out / "history.csv", history.str());
  std::ostringstream steps;
  steps << "iteration,position,incumbent,winner,incumbent_metric,winner_metric\n";
  for (const auto& s : r.steps) {
    steps << s.iteration << ',' << s.position << ',' << csv_field(vocab.string_of(s.incumbent)) << ','
          << csv_field(vocab.string_of(s.winner)) << ',' << ps::format_double(s.incumbent_metric) << ','
          << ps::format_double(s.winner_metric) << '\n';
  }
  ps::write_text(out / "steps.csv", steps.str());
  labels.save((out / "labels.json").string(), vocab);
  ps::make_artifact(tmpl, r.best_triggers, labels, r.best_dev, config, vocab)
      .save((out / "best_prompt.json").string(), vocab);
}

// ---- commands -----------------------------------------------------------------

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;

  void add(CLI::App* cmd, const std::string& out_help) {
    cmd->add_option("--config", config, "JSON file of option values; flags override it");
    cmd->add_option("--seed", seed, "random seed");
    if (!out_help.empty()) cmd->add_option("--out", out, out_help);
  }
};

int cmd_gen_synthetic(const Common& c, std::size_t examples, std::size_t pos, std::size_t neg,
                      std::size_t neutral, std::size_t length) {
  require(c.out, "--out");
  auto spec = ps::SyntheticSpec::with_counts(pos, neg, neutral);
  spec.sentence_length = length;
  auto task = ps::gen_synthetic_sentiment(spec, examples, c.seed);
  const fs::path out(c.out);
  fs::create_directories(out);
  std::ostringstream vocab, data, corpus;
  for (std::size_t i = 0; i < task.vocab.size(); ++i) vocab << task.vocab.string_of(static_cast<ps::TokenId>(i)) << '\n';
  for (const auto& e : task.dataset.examples) data << e.fields.at("sentence") << '\t' << e.label << '\n';
  for (const auto& m : task.corpus) {
    std::vector<std::string> words;
    for (auto id : m.tokens) words.push_back(task.vocab.string_of(id));
    corpus << json{{"tokens", words}, {"gold", task.vocab.string_of(m.gold)}}.dump() << '\n';
  }
  ps::write_text(out / "vocab.txt", vocab.str());
  ps::write_text(out / "data.tsv", data.str());
  ps::write_text(out / "corpus.jsonl", corpus.str());
  ps::write_text(out / "template.txt", "{sentence} [T] [T] [T] [P] .\n");
  std::cout << "wrote " << task.dataset.examples.size() << " examples and " << task.corpus.size()
            << " corpus items to " << out.string() << '\n';
  return kOk;
}

std::vector<ps::MaskedItem> load_corpus(const std::string& path, const ps::Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw ps::DataError("cannot open corpus: " + path);
  std::vector<ps::MaskedItem> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path + ":" + std::to_string(line_no);
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ps::DataError(where + ": malformed JSON");
    ps::MaskedItem m;
    bool found = false;
    try {
      for (const auto& w : j.at("tokens")) {
        auto id = vocab.id_of(w.get<std::string>());
        if (!id) throw ps::DataError(where + ": unknown token '" + w.get<std::string>() + "'");
        if (*id == vocab.mask_id() && !found) {
          m.masked_position = m.tokens.size();
          found = true;
        }
        m.tokens.push_back(*id);
      }
      auto gold = vocab.id_of(j.at("gold").get<std::string>());
      if (!gold) throw ps::DataError(where + ": unknown gold token");
      m.gold = *gold;
    } catch (const json::exception& e) {
      throw ps::DataError(where + ": " + e.what());
    }
    if (!found) throw ps::DataError(where + ": no mask token");
    items.push_back(std::move(m));
  }
  if (items.empty()) throw ps::DataError("empty corpus: " + path);
  return items;
}

int cmd_train_toy(const Common& c, const std::string& vocab_path, const std::string& corpus_path,
                  ps::ToyTrainOptions opt, const std::string& nonlinearity) {
  require(vocab_path, "--vocab");
  require(corpus_path, "--corpus");
  require(c.out, "--out");
  auto vocab = ps::Vocabulary::load(vocab_path);
  auto corpus = load_corpus(corpus_path, vocab);
  opt.seed = c.seed;
  opt.nonlinearity = ps::parse_nonlinearity(nonlinearity);
  auto result = ps::train_toy(vocab, corpus, opt);
  if (auto parent = fs::path(c.out).parent_path(); !parent.empty()) fs::create_directories(parent);
  result.model.save(c.out);
  std::cout << "loss " << ps::format_double(result.losses.front()) << " -> "
            << ps::format_double(result.losses.back()) << " after " << opt.steps << " steps\n";
  return kOk;
}

ps::LabelTokenSet resolve_labels(const ps::Oracle& oracle, const ps::Template& tmpl, const TaskData& data,
                                 const LabelOptions& lo, std::uint64_t seed, std::optional<std::size_t> max_length) {
  if (!lo.path.empty()) return ps::LabelTokenSet::load(lo.path, oracle.vocab());
  if (data.fact_labels) return *data.fact_labels;
  return ps::select_labels_for_task(oracle, tmpl, data.train, lo.k, label_filter(oracle.vocab()),
                                    lo.logistic(seed), max_length);
}

int cmd_select_labels(const Common& c, const OracleOptions& oo, const DataOptions& d, const TemplateOptions& to,
                      const LabelOptions& lo) {
  require(c.out, "--out");
  auto oracle = oo.factory()();
  auto tmpl = to.load();
  auto data = load_task_data(d, oracle->vocab(), c.seed);
  if (data.facts) throw ps::ConfigError("select-labels applies to classification data");
  auto labels = ps::select_labels_for_task(*oracle, tmpl, data.train, lo.k, label_filter(oracle->vocab()),
                                           lo.logistic(c.seed));
  fs::create_directories(c.out);
  labels.save((fs::path(c.out) / "labels.json").string(), oracle->vocab());
  for (const auto& [label, ids] : labels.sets) {
    std::cout << label << ':';
    for (auto id : ids) std::cout << ' ' << oracle->vocab().string_of(id);
    std::cout << '\n';
  }
  return kOk;
}

int cmd_search(const Common& c, const OracleOptions& oo, const DataOptions& d, const TemplateOptions& to,
               const LabelOptions& lo, const SearchOptions& so, const std::string& checkpoint,
               const std::string& resume) {
  require(c.out, "--out");
  auto oracle = oo.factory()();
  const auto& vocab = oracle->vocab();
  auto data = load_task_data(d, vocab, c.seed);
  auto tmpl = to.load();
  if (so.trigger_len > 0) tmpl = ps::with_trigger_count(tmpl, so.trigger_len);
  auto config = so.config(c.seed, vocab, data.gold_tokens);
  config.trigger_len = tmpl.trigger_count();
  if (!checkpoint.empty()) {
    if (auto parent = fs::path(checkpoint).parent_path(); !parent.empty()) fs::create_directories(parent);
    config.checkpoint_path = checkpoint;
  }
  std::optional<ps::SearchCheckpoint> from;
  if (!resume.empty()) {
    from = ps::load_checkpoint(resume);
    if (ps::to_json(from->config) != ps::to_json([&] {
          auto x = config;
          x.checkpoint_path = from->config.checkpoint_path;
          x.iterations = from->config.iterations;
          return x;
        }())) {
      std::fprintf(stderr, "warning: resuming with a configuration that differs from the checkpoint\n");
    }
  }
  auto labels = resolve_labels(*oracle, tmpl, data, lo, c.seed, config.max_length);
  for (auto id : labels.overlap()) {
    std::fprintf(stderr, "warning: label token '%s' is shared by several classes\n", vocab.string_of(id).c_str());
  }
  auto result = ps::run_search(*oracle, data.train, data.dev, labels, tmpl, config, from);
  write_search_outputs(c.out, result, tmpl, labels, config, vocab);
  std::cout << "best triggers:";
  for (auto id : result.best_triggers) std::cout << ' ' << vocab.string_of(id);
  std::cout << "\ndev accuracy " << ps::format_double(result.best_dev.accuracy) << ", dev log-likelihood "
            << ps::format_double(result.best_dev.log_likelihood) << '\n';
  return kOk;
}

ps::ClassificationTask make_task(const ps::Oracle& oracle, const ps::Template& tmpl, const TaskData& data,
                                 const LabelOptions& lo, std::uint64_t seed) {
  ps::ClassificationTask task{tmpl, data.train, data.dev, std::nullopt, label_filter(oracle.vocab()),
                              lo.logistic(seed)};
  if (!lo.path.empty()) task.manual_labels = ps::LabelTokenSet::load(lo.path, oracle.vocab());
  else if (data.fact_labels) task.manual_labels = data.fact_labels;
  return task;
}

int cmd_grid(const Common& c, const OracleOptions& oo, const DataOptions& d, const TemplateOptions& to,
             const LabelOptions& lo, const SearchOptions& so, const ps::GridAxes& axes) {
  require(c.out, "--out");
  auto factory = oo.factory();
  auto probe = factory();
  const auto& vocab = probe->vocab();
  auto data = load_task_data(d, vocab, c.seed);
  auto task = make_task(*probe, to.load(), data, lo, c.seed);
  auto base = so.config(c.seed, vocab, data.gold_tokens);
  auto report = ps::run_grid(factory, task, base, axes, so.threads);
  fs::create_directories(c.out);
  ps::write_grid_report(c.out, report, task, base, vocab);
  std::size_t failed = 0;
  for (const auto& cell : report.cells) {
    if (!cell.outcome.ok) {
      ++failed;
      std::fprintf(stderr, "cell k=%zu label_k=%zu len=%zu failed: %s\n", cell.candidate_k, cell.label_k,
                   cell.trigger_len, cell.outcome.error.c_str());
    }
  }
  if (!report.best) {
    std::fprintf(stderr, "all %zu grid cells failed\n", report.cells.size());
    return kAllCellsFailed;
  }
  const auto& best = report.cells[*report.best];
  std::cout << report.cells.size() << " cells, " << failed << " failed; best k=" << best.candidate_k
            << " label_k=" << best.label_k << " len=" << best.trigger_len << " dev accuracy "
            << ps::format_double(best.outcome.search.best_dev.accuracy) << '\n';
  return kOk;
}

int cmd_lowdata(const Common& c, const OracleOptions& oo, const DataOptions& d, const TemplateOptions& to,
                const LabelOptions& lo, const SearchOptions& so, const std::vector<std::size_t>& sizes,
                std::size_t repeats, bool stratified) {
  require(c.out, "--out");
  auto factory = oo.factory();
  auto probe = factory();
  const auto& vocab = probe->vocab();
  auto data = load_task_data(d, vocab, c.seed);
  auto tmpl = to.load();
  if (so.trigger_len > 0) tmpl = ps::with_trigger_count(tmpl, so.trigger_len);
  auto task = make_task(*probe, tmpl, data, lo, c.seed);
  auto config = so.config(c.seed, vocab, data.gold_tokens);
  config.trigger_len = tmpl.trigger_count();
  auto report = ps::run_low_data(factory, task, config, lo.k, sizes, repeats, stratified, so.threads);
  fs::create_directories(c.out);
  ps::write_low_data_report(c.out, report);
  for (const auto& s : report.summary) {
    std::cout << "size " << s.size << ": min " << ps::format_double(s.min) << " mean " << ps::format_double(s.mean)
              << " max " << ps::format_double(s.max) << '\n';
  }
  return kOk;
}

const std::vector<ps::LabeledInput>& pick_split(const TaskData& data, const std::string& which) {
  if (which == "train") return data.train;
  if (which == "dev") return data.dev;
  if (data.test.empty()) throw ps::ConfigError("split scheme has no test part; use --eval-split dev");
  return data.test;
}

int cmd_eval(const Common& c, const OracleOptions& oo, const DataOptions& d, const std::string& prompt_path,
             const std::string& manual_templates, const std::string& labels_path, const std::string& eval_split,
             bool relation_extraction, bool perturbed, const std::string& model_name, std::size_t max_length) {
  require(c.out, "--out");
  auto oracle = oo.factory()();
  const auto& vocab = oracle->vocab();
  std::optional<std::size_t> cap;
  if (max_length > 0) cap = max_length;
  std::optional<ps::PromptArtifact> artifact;
  if (!prompt_path.empty()) {
    artifact = ps::PromptArtifact::load(prompt_path, vocab);
    if (artifact->vocab_fingerprint != vocab.fingerprint()) {
      throw ps::ConfigError("prompt artifact vocabulary " + artifact->vocab_fingerprint +
                            " does not match oracle vocabulary " + vocab.fingerprint());
    }
  } else if (manual_templates.empty()) {
    throw ps::ConfigError("eval needs --prompt or --manual-templates");
  }
  fs::create_directories(c.out);

  if (!d.facts.empty()) {
    ps::FactPrompts prompts;
    if (artifact) prompts.shared = {ps::parse_template(artifact->template_source), artifact->trigger_ids};
    if (!manual_templates.empty()) {
      for (const auto& e : ps::load_templates(manual_templates)) {
        if (e.tmpl.trigger_count() != 0) throw ps::ConfigError("manual templates must not contain [T]");
        if (e.key.empty()) prompts.shared = {e.tmpl, {}};
        else prompts.per_relation[e.key] = {e.tmpl, {}};
      }
    }
    ps::FactDataset facts;
    if (eval_split == "all") {
      facts = load_fact_file(d, vocab);
    } else {
      auto parts = ps::split(load_fact_file(d, vocab), ps::parse_split_scheme(d.split), c.seed);
      std::size_t idx = eval_split == "train" ? 0 : eval_split == "dev" ? 1 : 2;
      if (idx >= parts.size()) throw ps::ConfigError("split scheme has no test part; use --eval-split dev");
      facts = parts[idx];
    }
    if (facts.size() == 0) throw ps::DataError("eval: empty fact set");
    if (relation_extraction) {
      auto ev = ps::evaluate_relation_extraction(*oracle, prompts, facts, perturbed, c.seed, cap);
      ps::write_re_eval(c.out, ev, model_name, eval_split);
      std::cout << "original accuracy " << ps::format_double(ev.original_overall);
      if (ev.perturbed_overall) std::cout << ", perturbed " << ps::format_double(*ev.perturbed_overall);
      std::cout << '\n';
    } else {
      auto ev = ps::evaluate_facts(*oracle, prompts, facts, cap);
      ps::write_fact_eval(c.out, ev, model_name, eval_split);
      std::cout << "macro MRR " << ps::format_double(ev.macro.mrr) << ", P@1 " << ps::format_double(ev.macro.p_at_1)
                << ", P@10 " << ps::format_double(ev.macro.p_at_10) << '\n';
    }
    return kOk;
  }

  if (!artifact) throw ps::ConfigError("classification eval needs --prompt");
  auto data = load_task_data(d, vocab, c.seed);
  std::optional<ps::LabelTokenSet> labels = artifact->labels;
  if (!labels_path.empty()) labels = ps::LabelTokenSet::load(labels_path, vocab);
  if (!labels) throw ps::ConfigError("prompt artifact has no labels; pass --labels");
  const auto& test = pick_split(data, eval_split == "all" ? "test" : eval_split);
  auto ev = ps::evaluate_classification(*oracle, ps::parse_template(artifact->template_source),
                                        artifact->trigger_ids, *labels, test, cap);
  ps::write_classification_eval(c.out, ev, model_name, eval_split);
  std::cout << "accuracy " << ps::format_double(ev.accuracy) << " on " << ev.n << " examples\n";
  return kOk;
}

int cmd_perturb(const Common& c, const std::string& facts_path) {
  require(facts_path, "--facts");
  require(c.out, "--out");
  auto ds = ps::load_facts(facts_path);
  auto perturbed = ps::perturb_facts(ds.all(), c.seed);
  std::ostringstream out;
  for (const auto& f : perturbed) {
    json j{{"sub", f.subject}, {"rel", f.relation}, {"obj", f.object_canonical}, {"contexts", f.context_sentences},
           {"surfaces", std::vector<std::string>(f.surface_forms.begin(), f.surface_forms.end())}};
    if (f.object_token >= 0) j["obj_token"] = f.object_token;
    out << j.dump() << '\n';
  }
  if (auto parent = fs::path(c.out).parent_path(); !parent.empty()) fs::create_directories(parent);
  ps::write_text(c.out, out.str());
  std::cout << "perturbed " << perturbed.size() << " facts\n";
  return kOk;
}

int cmd_serve_toy(const std::string& model_path, const std::string& bind) {
  require(model_path, "--model");
  ps::Endpoint endpoint{bind, 0};
  if (auto colon = bind.rfind(':'); colon != std::string::npos) {
    endpoint.host = bind.substr(0, colon);
    try {
      std::size_t used = 0;
      endpoint.port = std::stoi(bind.substr(colon + 1), &used);
      if (used + colon + 1 != bind.size() || endpoint.port < 0 || endpoint.port > 65535) throw std::out_of_range("");
    } catch (const std::logic_error&) {
      throw ps::ConfigError("--bind must be HOST:PORT, got '" + bind + "'");
    }
  }
  auto model = ps::ToyMlm::load(model_path);
  // Block termination signals before any thread starts so sigwait sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  ps::WireServer server(model, endpoint.host, endpoint.port);
  std::cout << "listening on " << endpoint.host << ':' << server.port() << " vocab " << model.vocab().fingerprint()
            << std::endl;
  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Gradient-guided discrete prompt search for masked language models");
  app.require_subcommand(1);
  app.set_version_flag("--version", "promptsearch 1.0.0");

  Common common;
  OracleOptions oracle;
  DataOptions data;
  TemplateOptions tmpl;
  LabelOptions labels;
  SearchOptions search;

  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic sentiment task");
  std::size_t n_examples = 1000, n_pos = 3, n_neg = 3, n_neutral = 10, length = 6;
  common.add(gen, "output directory");
  gen->add_option("--examples", n_examples, "labeled examples");
  gen->add_option("--positive", n_pos, "positive words");
  gen->add_option("--negative", n_neg, "negative words");
  gen->add_option("--neutral", n_neutral, "neutral words");
  gen->add_option("--sentence-length", length, "words per sentence");

  auto* train = app.add_subcommand("train-toy", "train a toy masked LM on a masked corpus");
  std::string vocab_path, corpus_path, nonlinearity = "identity";
  ps::ToyTrainOptions train_opt;
  common.add(train, "model file to write");
  train->add_option("--vocab", vocab_path, "vocabulary file");
  train->add_option("--corpus", corpus_path, "JSONL of {tokens, gold}");
  train->add_option("--dim", train_opt.dim, "embedding dimension");
  train->add_option("--steps", train_opt.steps, "gradient steps");
  train->add_option("--lr", train_opt.learning_rate, "learning rate");
  train->add_option("--init-scale", train_opt.init_scale, "initial weight scale");
  train->add_option("--nonlinearity", nonlinearity, "hidden activation")->check(CLI::IsMember({"identity", "tanh"}));

  auto* select = app.add_subcommand("select-labels", "choose label tokens from mask hidden states");
  common.add(select, "output directory");
  oracle.add(select);
  data.add(select);
  tmpl.add(select);
  labels.add(select);

  auto* srch = app.add_subcommand("search", "search trigger tokens for a template");
  std::string checkpoint, resume;
  common.add(srch, "output directory");
  oracle.add(srch);
  data.add(srch);
  tmpl.add(srch);
  labels.add(srch);
  search.add(srch);
  srch->add_option("--checkpoint", checkpoint, "checkpoint file written after each iteration");
  srch->add_option("--resume", resume, "continue from a checkpoint file");

  auto* grid = app.add_subcommand("grid", "grid over candidate_k x label_k x trigger_len");
  ps::GridAxes axes;
  common.add(grid, "output directory");
  oracle.add(grid);
  data.add(grid);
  tmpl.add(grid);
  labels.add(grid, false);
  search.add(grid, false);
  grid->add_option("--candidate-k", axes.candidate_k, "comma list")->delimiter(',');
  grid->add_option("--label-k", axes.label_k, "comma list")->delimiter(',');
  grid->add_option("--trigger-len", axes.trigger_len, "comma list")->delimiter(',');

  auto* low = app.add_subcommand("lowdata", "search on random training subsets of several sizes");
  std::vector<std::size_t> sizes{10, 100, 1000};
  std::size_t repeats = 10;
  bool stratified = false;
  common.add(low, "output directory");
  oracle.add(low);
  data.add(low);
  tmpl.add(low);
  labels.add(low);
  search.add(low);
  low->add_option("--sizes", sizes, "comma list of subset sizes")->delimiter(',');
  low->add_option("--repeats", repeats, "subsets per size");
  low->add_flag("--stratified", stratified, "keep class proportions in subsets");

  auto* eval = app.add_subcommand("eval", "evaluate a prompt artifact");
  std::string prompt_path, manual_templates, eval_labels, eval_split = "test", model_name = "model";
  bool re = false, perturbed = false;
  std::size_t eval_max_length = 0;
  common.add(eval, "output directory");
  oracle.add(eval);
  data.add(eval);
  eval->add_option("--prompt", prompt_path, "prompt artifact (best_prompt.json)");
  eval->add_option("--manual-templates", manual_templates, "fact templates without triggers, keyed by relation");
  eval->add_option("--labels", eval_labels, "override the artifact's label tokens");
  eval->add_option("--eval-split", eval_split, "part to evaluate")
      ->check(CLI::IsMember({"train", "dev", "test", "all"}));
  eval->add_flag("--re", re, "relation extraction accuracy with the credit rule");
  eval->add_flag("--perturbed", perturbed, "also score perturbed facts (with --re)");
  eval->add_option("--model-name", model_name, "model column in reports");
  eval->add_option("--max-length", eval_max_length, "prompt length cap (0: none)");

  auto* pert = app.add_subcommand("perturb", "replace fact objects and rewrite their contexts");
  std::string facts_in;
  common.add(pert, "output JSONL");
  pert->add_option("--facts", facts_in, "facts JSONL");

  auto* serve = app.add_subcommand("serve-toy", "serve a toy model over the wire protocol");
  std::string model_path, bind = "127.0.0.1:0";
  bool deterministic = false;
  serve->add_option("--config", common.config, "JSON file of option values; flags override it");
  serve->add_option("--model", model_path, "model file");
  serve->add_option("--bind", bind, "HOST:PORT (port 0 picks a free port)");
  serve->add_flag("--deterministic", deterministic, "accepted for compatibility; toy models are deterministic");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    CLI::App* cmd = app.get_subcommands().front();
    if (!common.config.empty()) apply_config_file(cmd, common.config);
    const std::string name = cmd->get_name();
    if (name == "gen-synthetic") return cmd_gen_synthetic(common, n_examples, n_pos, n_neg, n_neutral, length);
    if (name == "train-toy") return cmd_train_toy(common, vocab_path, corpus_path, train_opt, nonlinearity);
    if (name == "select-labels") return cmd_select_labels(common, oracle, data, tmpl, labels);
    if (name == "search") return cmd_search(common, oracle, data, tmpl, labels, search, checkpoint, resume);
    if (name == "grid") return cmd_grid(common, oracle, data, tmpl, labels, search, axes);
    if (name == "lowdata") return cmd_lowdata(common, oracle, data, tmpl, labels, search, sizes, repeats, stratified);
    if (name == "eval") {
      return cmd_eval(common, oracle, data, prompt_path, manual_templates, eval_labels, eval_split, re, perturbed,
                      model_name, eval_max_length);
    }
    if (name == "perturb") return cmd_perturb(common, facts_in);
    if (name == "serve-toy") return cmd_serve_toy(model_path, bind);
    return kUnexpected;
  } catch (const ps::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ps::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const ps::OracleError& e) {
    std::cerr << "oracle error: " << e.what() << '\n';
    return kOracle;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUnexpected;
  }
}
