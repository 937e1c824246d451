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
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "promptsearch/eval.hpp"
#include "promptsearch/label_select.hpp"
#include "promptsearch/oracle.hpp"
#include "promptsearch/prompt_template.hpp"
#include "promptsearch/token_filter.hpp"
#include "promptsearch/top_k.hpp"

namespace promptsearch {

// A task example after tokenization: field values and its class.
struct LabeledInput {
  FieldTokens inputs;
  ClassLabel label;
};

using LabeledPrompt = std::pair<PromptInstance, ClassLabel>;

enum class PositionOrder { kRoundRobin, kRandom };

struct SearchConfig {
  std::size_t candidate_k = 10;
  std::size_t trigger_len = 3;
  std::size_t iterations = 50;
  std::size_t candidate_batch = 8;
  std::size_t eval_batch = 8;
  std::uint64_t seed = 0;
  TokenFilter filter;
  bool include_incumbent = true;
  PositionOrder position_order = PositionOrder::kRoundRobin;
  // Batch gradients are averaged; false sums them. Top-k is the same.
  bool average_gradients = true;
  std::optional<std::size_t> max_length;
  // Warm start (e.g. from a manual prompt); all-mask when absent.
  std::optional<TokenIds> initial_triggers;
  // Written after every iteration and on failure when set.
  std::optional<std::string> checkpoint_path;

  void validate() const {
    if (candidate_k < 1 || trigger_len < 1 || candidate_batch < 1 || eval_batch < 1) {
      throw ConfigError("search config: candidate_k, trigger_len and batch sizes must be >= 1");
    }
    if (initial_triggers && initial_triggers->size() != trigger_len) {
      throw ConfigError("search config: initial triggers do not match trigger_len");
    }
  }
};

inline nlohmann::json to_json(const SearchConfig& c) {
  nlohmann::json j{{"candidate_k", c.candidate_k},
                   {"trigger_len", c.trigger_len},
                   {"iterations", c.iterations},
                   {"candidate_batch", c.candidate_batch},
                   {"eval_batch", c.eval_batch},
                   {"seed", c.seed},
                   {"include_incumbent", c.include_incumbent},
                   {"position_order", c.position_order == PositionOrder::kRandom ? "random" : "round-robin"},
                   {"average_gradients", c.average_gradients},
                   {"filter",
                    {{"blocked_ids", c.filter.blocked_ids()},
                     {"block_capitalized", c.filter.flags().block_capitalized},
                     {"block_specials", c.filter.flags().block_specials}}}};
  j["max_length"] = c.max_length ? nlohmann::json(*c.max_length) : nlohmann::json(nullptr);
  j["initial_triggers"] = c.initial_triggers ? nlohmann::json(*c.initial_triggers) : nlohmann::json(nullptr);
  return j;
}

inline SearchConfig search_config_from_json(const nlohmann::json& j) {
  SearchConfig c;
  c.candidate_k = j.value("candidate_k", c.candidate_k);
  c.trigger_len = j.value("trigger_len", c.trigger_len);
  c.iterations = j.value("iterations", c.iterations);
  c.candidate_batch = j.value("candidate_batch", c.candidate_batch);
  c.eval_batch = j.value("eval_batch", c.eval_batch);
  c.seed = j.value("seed", c.seed);
  c.include_incumbent = j.value("include_incumbent", c.include_incumbent);
  auto order = j.value("position_order", std::string("round-robin"));
  if (order == "random") c.position_order = PositionOrder::kRandom;
  else if (order == "round-robin") c.position_order = PositionOrder::kRoundRobin;
  else throw ConfigError("search config: unknown position_order '" + order + "'");
  c.average_gradients = j.value("average_gradients", c.average_gradients);
  if (j.contains("filter")) {
    const auto& f = j["filter"];
    FilterFlags flags;
    flags.block_capitalized = f.value("block_capitalized", false);
    flags.block_specials = f.value("block_specials", true);
    c.filter = TokenFilter(f.value("blocked_ids", std::set<TokenId>{}), flags);
  }
  if (j.contains("max_length") && !j["max_length"].is_null()) c.max_length = j["max_length"].get<std::size_t>();
  if (j.contains("initial_triggers") && !j["initial_triggers"].is_null()) {
    c.initial_triggers = j["initial_triggers"].get<TokenIds>();
  }
  return c;
}

struct CandidateSet {
  std::size_t position = 0;  // trigger index j
  std::vector<ScoredToken> candidates;
};

inline std::vector<LabeledPrompt> render_batch(const Template& t, const std::vector<LabeledInput>& examples,
                                               const TokenIds& triggers, const Vocabulary& vocab,
                                               std::optional<std::size_t> max_length = std::nullopt) {
  std::vector<LabeledPrompt> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.emplace_back(render_prompt(t, e.inputs, triggers, vocab, max_length), e.label);
  return out;
}

// Gradient of log p(y|prompt) w.r.t. the input embedding at trigger slot j,
// averaged (or summed) over the batch.
inline Vector batch_gradient(const Oracle& oracle, const std::vector<LabeledPrompt>& batch,
                             const LabelTokenSet& labels, std::size_t j, bool average = true) {
  if (batch.empty()) throw ConfigError("candidate batch is empty");
  Vector g = Vector::Zero(oracle.dim());
  for (const auto& [prompt, label] : batch) {
    if (j >= prompt.trigger_positions.size()) {
      throw ConfigError("trigger index " + std::to_string(j) + " out of range");
    }
    OracleRequest req;
    req.prompt = prompt;
    req.label_token_ids = labels.at(label);
    req.grad_positions = {prompt.trigger_positions[j]};
    auto r = oracle.query(req);
    g += r.grads.at(prompt.trigger_positions[j]);
  }
  if (average) g /= static_cast<double>(batch.size());
  return g;
}

// First-order candidate scores: score(w) = in[w] . g.
inline CandidateSet candidates_from_gradient(const Vector& gradient, const Matrix& input_embeddings,
                                             std::size_t j, std::size_t k,
                                             const std::vector<bool>& blocked) {
  return CandidateSet{j, top_k(input_embeddings * gradient, blocked, k)};
}

inline CandidateSet candidate_set(const Oracle& oracle, const std::vector<LabeledPrompt>& batch,
                                  const LabelTokenSet& labels, std::size_t j,
                                  const EmbeddingView& embeddings, const SearchConfig& config) {
  Vector g = batch_gradient(oracle, batch, labels, j, config.average_gradients);
  return candidates_from_gradient(g, embeddings.input, j, config.candidate_k,
                                  config.filter.mask(oracle.vocab()));
}

// Mean of log p(y|prompt) over the batch.
inline double mean_log_likelihood(const Oracle& oracle, const std::vector<LabeledPrompt>& batch,
                                  const LabelTokenSet& labels) {
  if (batch.empty()) throw ConfigError("evaluation batch is empty");
  double total = 0.0;
  for (const auto& [prompt, label] : batch) {
    OracleRequest req;
    req.prompt = prompt;
    total += label_log_likelihood(oracle.query(req), labels.at(label));
  }
  return total / static_cast<double>(batch.size());
}

inline std::vector<LabeledPrompt> substitute(const std::vector<LabeledPrompt>& batch, std::size_t j,
                                             TokenId token) {
  std::vector<LabeledPrompt> out;
  out.reserve(batch.size());
  for (const auto& [p, label] : batch) out.emplace_back(p.with_trigger(j, token), label);
  return out;
}

struct CandidateEvaluation {
  TokenId winner = 0;
  double winner_metric = 0.0;
  TokenId incumbent = 0;
  double incumbent_metric = 0.0;
  std::vector<ScoredToken> metrics;  // eval-batch likelihood per candidate, input order
};

// Re-scores each candidate (and the incumbent, when it competes) by exact
// mean log-likelihood on the eval batch. Ties favour the incumbent, then the
// lower id. `eval_batch` holds prompts rendered with the incumbent in place.
inline CandidateEvaluation evaluate_candidates(const Oracle& oracle,
                                               const std::vector<LabeledPrompt>& eval_batch,
                                               const LabelTokenSet& labels, std::size_t j,
                                               const CandidateSet& candidates, TokenId incumbent,
                                               const SearchConfig& config) {
  if (eval_batch.empty()) throw ConfigError("evaluate_candidates: empty eval batch");
  CandidateEvaluation ev;
  ev.incumbent = incumbent;
  ev.incumbent_metric = mean_log_likelihood(oracle, substitute(eval_batch, j, incumbent), labels);
  bool have = false;
  if (config.include_incumbent) {
    ev.winner = incumbent;
    ev.winner_metric = ev.incumbent_metric;
    have = true;
  }
  auto beats = [incumbent](TokenId id, double m, TokenId other, double other_m) {
    if (m != other_m) return m > other_m;
    if (other == incumbent) return false;
    if (id == incumbent) return true;
    return id < other;
  };
  for (const auto& c : candidates.candidates) {
    double m = c.id == incumbent ? ev.incumbent_metric
                                 : mean_log_likelihood(oracle, substitute(eval_batch, j, c.id), labels);
    ev.metrics.push_back({c.id, m});
    if (!have || beats(c.id, m, ev.winner, ev.winner_metric)) {
      ev.winner = c.id;
      ev.winner_metric = m;
      have = true;
    }
  }
  if (!have) throw ConfigError("evaluate_candidates: nothing to evaluate");
  return ev;
}

struct DevMetric {
  double log_likelihood = -std::numeric_limits<double>::infinity();
  double accuracy = 0.0;
};

inline DevMetric evaluate_prompts(const Oracle& oracle, const std::vector<LabeledPrompt>& prompts,
                                  const LabelTokenSet& labels) {
  if (prompts.empty()) throw DataError("evaluation set is empty");
  DevMetric m{0.0, 0.0};
  std::size_t correct = 0;
  for (const auto& [prompt, label] : prompts) {
    OracleRequest req;
    req.prompt = prompt;
    auto r = oracle.query(req);
    m.log_likelihood += label_log_likelihood(r, labels.at(label));
    correct += classify(marginal_class_probs(r, labels)) == label ? 1 : 0;
  }
  m.log_likelihood /= static_cast<double>(prompts.size());
  m.accuracy = static_cast<double>(correct) / static_cast<double>(prompts.size());
  return m;
}

// Deterministic batches: epoch e visits the data in a permutation seeded by
// (seed, e). The only state is how many examples have been drawn.
class TrainStream {
 public:
  TrainStream(const std::vector<LabeledInput>& data, std::uint64_t seed, std::uint64_t drawn = 0)
      : data_(data), seed_(seed), drawn_(drawn) {
    if (data_.empty()) throw DataError("search: empty training stream");
  }

  std::vector<LabeledInput> draw(std::size_t n) {
    std::vector<LabeledInput> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t epoch = drawn_ / data_.size();
      if (!order_ || order_epoch_ != epoch) {
        order_.emplace(data_.size());
        std::iota(order_->begin(), order_->end(), std::size_t{0});
        std::mt19937_64 rng(seed_ * 0x9E3779B97F4A7C15ULL + epoch + 1);
        std::shuffle(order_->begin(), order_->end(), rng);
        order_epoch_ = epoch;
      }
      out.push_back(data_[(*order_)[drawn_ % data_.size()]]);
      ++drawn_;
    }
    return out;
  }

  std::uint64_t drawn() const { return drawn_; }

 private:
  const std::vector<LabeledInput>& data_;
  std::uint64_t seed_;
  std::uint64_t drawn_;
  std::optional<std::vector<std::size_t>> order_;
  std::uint64_t order_epoch_ = 0;
};

struct SearchState {
  TokenIds triggers;
  TokenIds best_triggers;
  DevMetric best_dev;
  std::size_t iteration = 0;
  std::uint64_t rng_state = 0;  // examples drawn from the training stream
};

struct HistoryEntry {
  std::size_t iteration = 0;
  double dev_log_likelihood = 0.0;
  double dev_accuracy = 0.0;
};

struct StepRecord {
  std::size_t iteration = 0;
  std::size_t position = 0;
  TokenId incumbent = 0;
  TokenId winner = 0;
  double incumbent_metric = 0.0;
  double winner_metric = 0.0;
};

struct SearchCheckpoint {
  SearchConfig config;
  SearchState state;
  std::vector<HistoryEntry> history;
  std::vector<StepRecord> steps;
};

inline nlohmann::json to_json(const SearchCheckpoint& c) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : c.history) {
    history.push_back({{"iteration", h.iteration},
                       {"dev_log_likelihood", h.dev_log_likelihood},
                       {"dev_accuracy", h.dev_accuracy}});
  }
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : c.steps) {
    steps.push_back({{"iteration", s.iteration},
                     {"position", s.position},
                     {"incumbent", s.incumbent},
                     {"winner", s.winner},
                     {"incumbent_metric", s.incumbent_metric},
                     {"winner_metric", s.winner_metric}});
  }
  return {{"config", to_json(c.config)},
          {"state",
           {{"triggers", c.state.triggers},
            {"best_triggers", c.state.best_triggers},
            {"best_dev_log_likelihood", c.state.best_dev.log_likelihood},
            {"best_dev_accuracy", c.state.best_dev.accuracy},
            {"iteration", c.state.iteration},
            {"rng_state", c.state.rng_state}}},
          {"history", history},
          {"steps", steps}};
}

inline SearchCheckpoint checkpoint_from_json(const nlohmann::json& j) {
  SearchCheckpoint c;
  c.config = search_config_from_json(j.at("config"));
  const auto& s = j.at("state");
  c.state.triggers = s.at("triggers").get<TokenIds>();
  c.state.best_triggers = s.at("best_triggers").get<TokenIds>();
  c.state.best_dev.log_likelihood = s.at("best_dev_log_likelihood").get<double>();
  c.state.best_dev.accuracy = s.at("best_dev_accuracy").get<double>();
  c.state.iteration = s.at("iteration").get<std::size_t>();
  c.state.rng_state = s.at("rng_state").get<std::uint64_t>();
  for (const auto& h : j.at("history")) {
    c.history.push_back({h.at("iteration").get<std::size_t>(), h.at("dev_log_likelihood").get<double>(),
                         h.at("dev_accuracy").get<double>()});
  }
  for (const auto& st : j.at("steps")) {
    c.steps.push_back({st.at("iteration").get<std::size_t>(), st.at("position").get<std::size_t>(),
                       st.at("incumbent").get<TokenId>(), st.at("winner").get<TokenId>(),
                       st.at("incumbent_metric").get<double>(), st.at("winner_metric").get<double>()});
  }
  return c;
}

inline void save_checkpoint(const std::string& path, const SearchCheckpoint& c) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    out << to_json(c).dump(2) << '\n';
  }
  std::rename(tmp.c_str(), path.c_str());
}

inline SearchCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint: " + path);
  try {
    return checkpoint_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint " + path + ": " + e.what());
  }
}

struct SearchResult {
  TokenIds best_triggers;
  DevMetric best_dev;
  TokenIds final_triggers;
  std::vector<HistoryEntry> history;
  std::vector<StepRecord> steps;
};

inline std::size_t position_for(const SearchConfig& config, std::size_t iteration) {
  if (config.position_order == PositionOrder::kRoundRobin) return (iteration - 1) % config.trigger_len;
  std::mt19937_64 rng(config.seed ^ (0xD1B54A32D192ED03ULL * (iteration + 1)));
  return std::uniform_int_distribution<std::size_t>(0, config.trigger_len - 1)(rng);
}

// Gradient-guided trigger search. Each iteration updates one trigger slot:
// candidates come from a training batch via the first-order score, the
// winner is picked by exact likelihood on a second batch, and the dev set
// decides which prompt is kept as the best so far. Passing `resume`
// continues from a checkpoint.
inline SearchResult run_search(const Oracle& oracle, const std::vector<LabeledInput>& train,
                               const std::vector<LabeledInput>& dev, const LabelTokenSet& labels,
                               const Template& tmpl, const SearchConfig& config,
                               const std::optional<SearchCheckpoint>& resume = std::nullopt) {
  config.validate();
  if (dev.empty()) throw DataError("search: empty dev set");
  if (tmpl.trigger_count() != config.trigger_len) {
    throw ConfigError("search: template has " + std::to_string(tmpl.trigger_count()) +
                      " trigger slots, config asks for " + std::to_string(config.trigger_len));
  }
  const Vocabulary& vocab = oracle.vocab();
  const EmbeddingView emb{oracle.embedding_rows(EmbeddingKind::kInput, [&] {
                            TokenIds all(vocab.size());
                            std::iota(all.begin(), all.end(), TokenId{0});
                            return all;
                          }()),
                          Matrix()};
  const auto blocked = config.filter.mask(vocab);

  SearchCheckpoint cp;
  cp.config = config;
  if (resume) {
    cp.state = resume->state;
    cp.history = resume->history;
    cp.steps = resume->steps;
  } else {
    cp.state.triggers = config.initial_triggers.value_or(TokenIds(config.trigger_len, vocab.mask_id()));
    cp.state.best_triggers = cp.state.triggers;
    cp.state.best_dev = evaluate_prompts(oracle, render_batch(tmpl, dev, cp.state.triggers, vocab, config.max_length), labels);
    cp.history.push_back({0, cp.state.best_dev.log_likelihood, cp.state.best_dev.accuracy});
  }
  TrainStream stream(train, config.seed, cp.state.rng_state);

  try {
    while (cp.state.iteration < config.iterations) {
      const std::size_t it = cp.state.iteration + 1;
      const std::size_t j = position_for(config, it);
      auto cand_batch = render_batch(tmpl, stream.draw(config.candidate_batch), cp.state.triggers, vocab, config.max_length);
      Vector g = batch_gradient(oracle, cand_batch, labels, j, config.average_gradients);
      auto cands = candidates_from_gradient(g, emb.input, j, config.candidate_k, blocked);
      auto eval_batch = render_batch(tmpl, stream.draw(config.eval_batch), cp.state.triggers, vocab, config.max_length);
      auto ev = evaluate_candidates(oracle, eval_batch, labels, j, cands, cp.state.triggers[j], config);
      cp.state.triggers[j] = ev.winner;
      cp.steps.push_back({it, j, ev.incumbent, ev.winner, ev.incumbent_metric, ev.winner_metric});

      auto dev_metric = evaluate_prompts(oracle, render_batch(tmpl, dev, cp.state.triggers, vocab, config.max_length), labels);
      cp.history.push_back({it, dev_metric.log_likelihood, dev_metric.accuracy});
      if (dev_metric.log_likelihood > cp.state.best_dev.log_likelihood) {
        cp.state.best_dev = dev_metric;
        cp.state.best_triggers = cp.state.triggers;
      }
      cp.state.iteration = it;
      cp.state.rng_state = stream.drawn();
      if (config.checkpoint_path) save_checkpoint(*config.checkpoint_path, cp);
    }
  } catch (const Error&) {
    if (config.checkpoint_path) save_checkpoint(*config.checkpoint_path, cp);
    throw;
  }
  return SearchResult{cp.state.best_triggers, cp.state.best_dev, cp.state.triggers, cp.history, cp.steps};
}

// Uniform draw of unblocked tokens, used as a random-prompt baseline.
inline TokenIds random_triggers(const Vocabulary& vocab, const TokenFilter& filter, std::size_t len,
                                std::mt19937_64& rng) {
  TokenIds allowed;
  auto blocked = filter.mask(vocab);
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (!blocked[i]) allowed.push_back(static_cast<TokenId>(i));
  }
  if (allowed.empty()) throw ConfigError("random_triggers: every token is blocked");
  std::uniform_int_distribution<std::size_t> pick(0, allowed.size() - 1);
  TokenIds out(len);
  for (auto& t : out) t = allowed[pick(rng)];
  return out;
}

// The outcome of a search, in a form that can be evaluated later.
struct PromptArtifact {
  std::string template_source;
  TokenIds trigger_ids;
  std::vector<std::string> trigger_tokens;
  std::optional<LabelTokenSet> labels;  // absent for tasks scored by gold token
  DevMetric dev;
  nlohmann::json config;
  std::string vocab_fingerprint;

  nlohmann::json to_json(const Vocabulary& vocab) const {
    nlohmann::json j{{"template", template_source},
                     {"triggers", {{"ids", trigger_ids}, {"tokens", trigger_tokens}}},
                     {"dev_metric", {{"log_likelihood", dev.log_likelihood}, {"accuracy", dev.accuracy}}},
                     {"config", config},
                     {"vocab_fingerprint", vocab_fingerprint}};
    j["labels"] = labels ? labels->to_json(vocab) : nlohmann::json(nullptr);
    return j;
  }

  static PromptArtifact from_json(const nlohmann::json& j, const Vocabulary& vocab) {
    PromptArtifact a;
    a.template_source = j.at("template").get<std::string>();
    a.trigger_ids = j.at("triggers").at("ids").get<TokenIds>();
    a.trigger_tokens = j.at("triggers").value("tokens", std::vector<std::string>{});
    if (j.contains("labels") && !j["labels"].is_null()) a.labels = LabelTokenSet::from_json(j["labels"], vocab);
    a.dev.log_likelihood = j.at("dev_metric").value("log_likelihood", 0.0);
    a.dev.accuracy = j.at("dev_metric").value("accuracy", 0.0);
    a.config = j.value("config", nlohmann::json::object());
    a.vocab_fingerprint = j.at("vocab_fingerprint").get<std::string>();
    return a;
  }

  void save(const std::string& path, const Vocabulary& vocab) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write prompt artifact: " + path);
    out << to_json(vocab).dump(2) << '\n';
  }

  static PromptArtifact load(const std::string& path, const Vocabulary& vocab) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open prompt artifact: " + path);
    try {
      return from_json(nlohmann::json::parse(in), vocab);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("prompt artifact " + path + ": " + e.what());
    }
  }
};

}  // namespace promptsearch
