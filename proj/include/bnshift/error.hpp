// Copyright 2026 The bnshift Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace bnshift {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on caller-supplied arguments was violated.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A numerical computation left its valid domain (no real saddlepoint,
/// vanishing curvature, flat score, zero denominator).
class DomainError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidInput(what);
}

}  // namespace detail
}  // namespace bnshift
