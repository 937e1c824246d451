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

#include <set>
#include <string>
#include <vector>

#include "promptsearch/vocabulary.hpp"

namespace promptsearch {

// A (subject, relation, object) triple with optional evidence sentences.
// The object must be a single vocabulary token.
struct FactInstance {
  std::string subject;
  std::string relation;
  std::string object_canonical;
  TokenId object_token = 0;
  std::vector<std::string> context_sentences;
  // Rendered forms of the object across all context sentences ("American"
  // for canonical "USA").
  std::set<std::string> surface_forms;

  bool operator==(const FactInstance&) const = default;
};

}  // namespace promptsearch
