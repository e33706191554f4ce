#pragma once

#include <filesystem>
#include <string>

#include <unistd.h>

// Per-process scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("proker_test_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir / name;
}
