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

#include <Eigen/Dense>

#include <string>

#include "promptsearch/error.hpp"

namespace promptsearch {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Row w of `input` is the embedding fed to the encoder for token w; row w of
// `output` is the vector dotted with the mask hidden state to form logits.
struct EmbeddingView {
  Matrix input;
  Matrix output;

  Eigen::Index dim() const { return input.cols(); }
  Eigen::Index size() const { return input.rows(); }

  void check(std::size_t vocab_size) const {
    if (static_cast<std::size_t>(input.rows()) != vocab_size ||
        static_cast<std::size_t>(output.rows()) != vocab_size) {
      throw ConfigError("embeddings: row count " +
                        std::to_string(input.rows()) + "/" +
                        std::to_string(output.rows()) +
                        " does not match vocabulary size " +
                        std::to_string(vocab_size));
    }
    if (input.cols() != output.cols()) {
      throw ConfigError("embeddings: input and output dims differ");
    }
    if (!input.allFinite() || !output.allFinite()) {
      throw ConfigError("embeddings: non-finite entries");
    }
  }
};

}  // namespace promptsearch
