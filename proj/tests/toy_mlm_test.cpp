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

#include <gtest/gtest.h>

#include "promptsearch/data.hpp"
#include "promptsearch/toy_mlm.hpp"
#include "test_util.hpp"

namespace promptsearch {
namespace {

using testing::FiniteDifferenceGradient;
using testing::RandomLabelSet;
using testing::RandomPrompt;
using testing::RandomToy;
using testing::RelativeError;

// Vocabulary {a, b, [MASK]} with input rows a=[1,0], b=[0,1] and output
// rows [1,0], [0,1], [1,1].
ToyMlm HandModel(Nonlinearity f = Nonlinearity::kIdentity) {
  Vocabulary v({"a", "b", "[MASK]"}, "[MASK]");
  Matrix in(3, 2), out(3, 2);
  in << 1, 0, 0, 1, 0, 0;
  out << 1, 0, 0, 1, 1, 1;
  return ToyMlm(v, EmbeddingView{in, out}, Matrix::Identity(2, 2), Vector::Zero(2), f);
}

PromptInstance HandPrompt() {
  PromptInstance p;
  p.token_ids = {0, 1, 2};
  p.trigger_positions = {1};
  p.mask_position = 2;
  return p;
}

TEST(ToyMlmTest, HandSoftmaxArithmetic) {
  auto m = HandModel();
  OracleRequest req{HandPrompt(), std::nullopt, {}, true};
  auto r = m.query(req);
  ASSERT_TRUE(r.mask_hidden);
  EXPECT_NEAR((*r.mask_hidden)[0], 0.5, 1e-15);
  EXPECT_NEAR((*r.mask_hidden)[1], 0.5, 1e-15);
  Vector p = r.mask_log_probs.array().exp();
  EXPECT_NEAR(p[0], 0.2741, 5e-5);
  EXPECT_NEAR(p[1], 0.2741, 5e-5);
  EXPECT_NEAR(p[2], 0.4519, 5e-5);
  // exp(0.5) / (2 exp(0.5) + e)
  EXPECT_NEAR(p[0], std::exp(0.5) / (2 * std::exp(0.5) + std::exp(1.0)), 1e-15);
}

TEST(ToyMlmTest, FullVocabularyLabelSetHasZeroGradient) {
  std::mt19937_64 rng(5);
  auto m = RandomToy(rng, 12, 4, Nonlinearity::kTanh);
  auto p = RandomPrompt(rng, m.vocab(), 2, 3);
  TokenIds all(m.vocab().size());
  std::iota(all.begin(), all.end(), 0);
  auto r = m.query({p, all, p.trigger_positions, false});
  for (auto pos : p.trigger_positions) EXPECT_LT(r.grads.at(pos).norm(), 1e-12);
}

TEST(ToyMlmTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 120; ++trial) {
    auto f = trial % 2 ? Nonlinearity::kTanh : Nonlinearity::kIdentity;
    std::size_t vocab = 5 + rng() % 46;
    Eigen::Index dim = 1 + static_cast<Eigen::Index>(rng() % 16);
    auto m = RandomToy(rng, vocab, dim, f);
    auto p = RandomPrompt(rng, m.vocab(), 1 + rng() % 3, rng() % 4);
    auto labels = RandomLabelSet(rng, m.vocab(), 4);
    auto r = m.query({p, labels, p.trigger_positions, false});
    for (auto pos : p.trigger_positions) {
      auto fd = FiniteDifferenceGradient(m, p, pos, labels);
      EXPECT_LT(RelativeError(r.grads.at(pos), fd), 1e-4) << "trial " << trial;
    }
  }
}

TEST(ToyMlmTest, DistributionIsNormalized) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    auto m = RandomToy(rng, 3 + rng() % 60, 1 + static_cast<Eigen::Index>(rng() % 8),
                       trial % 2 ? Nonlinearity::kTanh : Nonlinearity::kIdentity, 3.0);
    auto p = RandomPrompt(rng, m.vocab(), rng() % 3, rng() % 5);
    OracleRequest req{p, std::nullopt, {}, true};
    auto r = m.query(req);
    EXPECT_NEAR(r.mask_log_probs.array().exp().sum(), 1.0, 1e-6);
    EXPECT_NO_THROW(validate_response(req, r, m.vocab().size(), m.dim()));
  }
}

// With identity f, log-odds between two tokens is affine in the input vector
// at a trigger, so the first-order prediction of a swap is exact.
TEST(ToyMlmTest, LogOddsAreAffineInTriggerEmbedding) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    auto m = RandomToy(rng, 20, 6, Nonlinearity::kIdentity);
    auto p = RandomPrompt(rng, m.vocab(), 2, 3);
    const std::size_t pos = p.trigger_positions[0];
    TokenId a = 3, b = 7;
    auto ra = m.query({p, TokenIds{a}, {pos}, false});
    auto rb = m.query({p, TokenIds{b}, {pos}, false});
    Vector g = ra.grads.at(pos) - rb.grads.at(pos);
    double before = ra.mask_log_probs[a] - ra.mask_log_probs[b];
    const auto& in = m.embedding_view().input;
    for (TokenId w = 2; w < 20; ++w) {
      auto swapped = m.query({p.with_trigger(0, w), std::nullopt, {}, false});
      double after = swapped.mask_log_probs[a] - swapped.mask_log_probs[b];
      double predicted = (in.row(w) - in.row(p.token_ids[pos])).dot(g);
      EXPECT_NEAR(after - before, predicted, 1e-10);
    }
  }
}

TEST(ToyMlmTest, RequestValidation) {
  auto m = HandModel();
  auto p = HandPrompt();
  EXPECT_THROW(m.query({p, std::nullopt, {1}, false}), OracleError);  // grads without labels
  EXPECT_THROW(m.query({p, TokenIds{0}, {0}, false}), OracleError);   // not a trigger position
  auto bad = p;
  bad.token_ids[0] = 9;
  EXPECT_THROW(m.query({bad, std::nullopt, {}, false}), OracleError);
  bad = p;
  bad.mask_position = 0;
  EXPECT_THROW(m.query({bad, std::nullopt, {}, false}), OracleError);
}

TEST(ToyMlmTest, JsonRoundTripPreservesOutputs) {
  std::mt19937_64 rng(41);
  auto m = RandomToy(rng, 15, 5, Nonlinearity::kTanh);
  auto copy = ToyMlm::from_json(nlohmann::json::parse(m.to_json().dump()));
  auto p = RandomPrompt(rng, m.vocab(), 2, 2);
  OracleRequest req{p, TokenIds{3, 4}, p.trigger_positions, true};
  auto a = m.query(req);
  auto b = copy.query(req);
  EXPECT_EQ(a.mask_log_probs, b.mask_log_probs);
  EXPECT_EQ(*a.mask_hidden, *b.mask_hidden);
  EXPECT_EQ(a.grads.at(p.trigger_positions[0]), b.grads.at(p.trigger_positions[0]));
}

TEST(TrainToyTest, SeparableCorpusReachesFullAccuracy) {
  Vocabulary v({"[PAD]", "[MASK]", "x", "y", "gx", "gy"}, "[MASK]", {}, std::string("[PAD]"));
  std::vector<MaskedItem> corpus{{{2, 2, 1}, 2, 4}, {{3, 3, 1}, 2, 5}};
  auto result = train_toy(v, corpus, {.dim = 4, .steps = 300, .learning_rate = 0.5, .seed = 1});
  for (const auto& item : corpus) {
    auto fw = result.model.forward(item.tokens, item.masked_position);
    Eigen::Index argmax = 0;
    fw.log_probs.maxCoeff(&argmax);
    EXPECT_EQ(argmax, item.gold);
  }
  EXPECT_LE(result.losses.back(), result.losses.front());
}

TEST(TrainToyTest, ZeroStepsReturnsInitialization) {
  Vocabulary v({"[PAD]", "[MASK]", "x", "y"}, "[MASK]");
  std::vector<MaskedItem> corpus{{{2, 1}, 1, 3}};
  ToyTrainOptions opt{.dim = 3, .steps = 0, .seed = 9};
  auto result = train_toy(v, corpus, opt);
  auto init = init_toy(v, opt);
  EXPECT_EQ(result.model.embedding_view().input, init.embedding_view().input);
  EXPECT_EQ(result.model.embedding_view().output, init.embedding_view().output);
  EXPECT_EQ(result.model.context_map(), init.context_map());
  EXPECT_EQ(result.losses.size(), 1u);
}

TEST(TrainToyTest, DeterministicGivenSeed) {
  auto task = gen_synthetic_sentiment(SyntheticSpec::with_counts(3, 3, 10), 40, 2);
  ToyTrainOptions opt{.dim = 6, .steps = 20, .learning_rate = 0.5, .seed = 4};
  auto a = train_toy(task.vocab, task.corpus, opt);
  auto b = train_toy(task.vocab, task.corpus, opt);
  EXPECT_EQ(a.losses, b.losses);
  EXPECT_EQ(a.model.embedding_view().input, b.model.embedding_view().input);
}

// Full-batch descent with a small step decreases the loss at every step.
TEST(TrainToyTest, SyntheticSentimentLossCurveDecreases) {
  auto task = gen_synthetic_sentiment(SyntheticSpec::with_counts(3, 3, 10), 200, 3);
  auto result = train_toy(task.vocab, task.corpus, {.dim = 8, .steps = 150, .learning_rate = 0.2, .seed = 3});
  ASSERT_EQ(result.losses.size(), 151u);
  for (std::size_t i = 1; i < result.losses.size(); ++i) {
    EXPECT_LE(result.losses[i], result.losses[i - 1]) << "step " << i;
  }
  EXPECT_LT(result.losses.back(), result.losses.front());
}

TEST(TrainToyTest, Errors) {
  Vocabulary v({"[MASK]", "x"}, "[MASK]");
  EXPECT_THROW(train_toy(v, {}, {}), DataError);
  EXPECT_THROW(train_toy(v, {{{1, 0}, 1, 5}}, {}), DataError);
  std::vector<MaskedItem> corpus{{{1, 1, 0}, 2, 1}, {{1, 0}, 1, 1}};
  try {
    train_toy(v, corpus, {.dim = 4, .steps = 50, .learning_rate = 1e200, .seed = 1, .init_scale = 1e100});
    FAIL() << "expected divergence";
  } catch (const OracleError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite loss at step"), std::string::npos);
  }
}

}  // namespace
}  // namespace promptsearch
