// Copyright 2026 The MSKD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mskd {

enum class ErrorCode {
    Shape,
    InvalidInput,
    Config,
    Data,
    Sampling,
    TrainingFailure,
    CorruptCheckpoint,
};

/// Stable lowercase name used in the CLI's `MSKD-ERR:<code>` prefix.
std::string_view error_code_name(ErrorCode code) noexcept;

/// Process exit status for a failure of the given kind.
int error_exit_status(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& what) : Error(ErrorCode::Shape, what) {}
};

struct InvalidInputError : Error {
    explicit InvalidInputError(const std::string& what) : Error(ErrorCode::InvalidInput, what) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(ErrorCode::Config, what) {}
};

struct DataError : Error {
    explicit DataError(const std::string& what) : Error(ErrorCode::Data, what) {}
};

struct SamplingError : Error {
    explicit SamplingError(const std::string& what) : Error(ErrorCode::Sampling, what) {}
};

struct TrainingFailure : Error {
    TrainingFailure(const std::string& what, int epoch, int iteration)
        : Error(ErrorCode::TrainingFailure, what), epoch(epoch), iteration(iteration) {}
    int epoch;
    int iteration;
};

struct CorruptCheckpointError : Error {
    CorruptCheckpointError(const std::string& what, std::uint64_t offset)
        : Error(ErrorCode::CorruptCheckpoint, what + " (at byte offset " + std::to_string(offset) + ")"),
          offset(offset) {}
    std::uint64_t offset;
};

} // namespace mskd
