// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "cpmoe/run_dir.hpp"

#include <cstdio>
#include <system_error>

#include "cpmoe/errors.hpp"

namespace cpmoe {

RunDirLock::RunDirLock(const std::filesystem::path& dir) : dir_(dir), lock_(dir / ".lock") {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create output directory '" + dir_.string() + "': " + ec.message());
  std::FILE* f = std::fopen(lock_.c_str(), "wx");
  if (!f) {
    throw IoError("output directory '" + dir_.string() +
                  "' is locked by another run (remove " + lock_.string() + " if stale)");
  }
  std::fclose(f);
}

RunDirLock::~RunDirLock() {
  std::error_code ec;
  std::filesystem::remove(lock_, ec);
}

}  // namespace cpmoe
