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

#include "promptsearch/data.hpp"
#include "promptsearch/embedding.hpp"
#include "promptsearch/error.hpp"
#include "promptsearch/eval.hpp"
#include "promptsearch/fact.hpp"
#include "promptsearch/label_select.hpp"
#include "promptsearch/oracle.hpp"
#include "promptsearch/prompt_template.hpp"
#include "promptsearch/remote_oracle.hpp"
#include "promptsearch/runner.hpp"
#include "promptsearch/search.hpp"
#include "promptsearch/token_filter.hpp"
#include "promptsearch/top_k.hpp"
#include "promptsearch/toy_mlm.hpp"
#include "promptsearch/vocabulary.hpp"
#include "promptsearch/wire.hpp"
#include "promptsearch/wire_server.hpp"
