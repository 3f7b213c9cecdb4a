// SPDX-License-Identifier: Apache-2.0
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

#ifndef CCLOC_ERROR_HPP
#define CCLOC_ERROR_HPP

#include <stdexcept>
#include <string>

namespace ccloc {

// Invalid configuration or argument values.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Tensor shape does not match what a layer or model expects.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Ill-conditioned or non-finite numerics.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Object used in the wrong lifecycle state (e.g. apply before fit).
class StateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Caller broke an operation's precondition (e.g. unlabeled sample in a
// supervised batch, unnormalized model input).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Malformed or incompatible file contents.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Artifacts that do not belong together (hash mismatch).
class IntegrityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace ccloc

#endif // CCLOC_ERROR_HPP
