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

#include <optional>

#include "promptsearch/data.hpp"
#include "promptsearch/runner.hpp"
#include "promptsearch/toy_mlm.hpp"

namespace promptsearch::testing {

// Synthetic sentiment task, a toy MLM trained on its corpus, a 60-20-20
// split, and automatically selected label tokens.
struct SyntheticSetup {
  SyntheticTask task;
  std::optional<ToyMlm> model;
  std::vector<LabeledInput> train, dev, test;
  Template tmpl;
  TokenFilter filter;
  LabelTokenSet labels;

  const ToyMlm& oracle() const { return *model; }
};

inline SyntheticSetup MakeSyntheticSetup(std::uint64_t seed, std::size_t n_examples = 400,
                                         std::size_t label_k = 3, std::size_t trigger_len = 3) {
  SyntheticSetup s{gen_synthetic_sentiment(SyntheticSpec::with_counts(3, 3, 10), n_examples, seed), {}, {}, {},
                   {},  {}, {}, {}};
  s.model = train_toy(s.task.vocab, s.task.corpus,
                      {.dim = 8, .steps = 300, .learning_rate = 0.5, .seed = seed})
                .model;
  auto parts = split(tokenize_examples(s.task.dataset.examples, s.task.vocab), SplitScheme::k60_20_20, seed);
  s.train = parts[0];
  s.dev = parts[1];
  s.test = parts[2];
  s.tmpl = with_trigger_count(parse_template("{sentence} [T] [P] ."), trigger_len);
  s.filter = build_token_filter(s.task.vocab, {}, {.block_capitalized = false, .block_specials = true});
  s.labels = select_labels_for_task(*s.model, s.tmpl, s.train, label_k, s.filter,
                                    {.l2 = 0.0, .steps = 300, .learning_rate = 0.5, .seed = seed});
  return s;
}

}  // namespace promptsearch::testing
