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

#include <stdexcept>
#include <string>

namespace promptsearch {

// Errors are grouped by where they originate so that the command-line tool
// can map them onto distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad flags, templates, or search/grid configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent datasets.
class DataError : public Error {
 public:
  using Error::Error;
};

// Model backend failures: transport, protocol, numeric divergence.
class OracleError : public Error {
 public:
  using Error::Error;
};

}  // namespace promptsearch
