// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace cpmoe {

/// Error categories. The numeric value of the first four is the process exit
/// code used by the command-line tool.
enum class ErrorKind {
  kUsage = 1,
  kConfig = 2,
  kNumeric = 3,
  kIo = 4,
  kContract = 5,
  kCorruption = 6,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// Exit code for the CLI. Contract violations are reported as configuration
  /// problems and corruption as I/O problems.
  int exit_code() const noexcept {
    switch (kind_) {
      case ErrorKind::kUsage: return 1;
      case ErrorKind::kConfig:
      case ErrorKind::kContract: return 2;
      case ErrorKind::kNumeric: return 3;
      case ErrorKind::kIo:
      case ErrorKind::kCorruption: return 4;
    }
    return 2;
  }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorKind::kContract, what) {}
};

class CorruptionError : public Error {
 public:
  explicit CorruptionError(const std::string& what)
      : Error(ErrorKind::kCorruption, what) {}
};

const char* to_string(ErrorKind kind) noexcept;

}  // namespace cpmoe
