// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

namespace cpmoe {

/// Exclusive claim on an output directory: creates it if needed and holds
/// `<dir>/.lock` until destruction. Throws IoError when another process holds
/// the lock or the directory cannot be created.
class RunDirLock {
 public:
  explicit RunDirLock(const std::filesystem::path& dir);
  ~RunDirLock();
  RunDirLock(const RunDirLock&) = delete;
  RunDirLock& operator=(const RunDirLock&) = delete;

  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
  std::filesystem::path lock_;
};

}  // namespace cpmoe
