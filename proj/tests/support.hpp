#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <gtest/gtest.h>

#include "cpdefer/table.hpp"

namespace cpdefer::testing {

inline ProbabilityTable make_table(const std::vector<std::vector<double>>& probs, const std::vector<int>& truths) {
  std::vector<ProbabilityTable::Row> rows;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    rows.push_back({fmt::format("s{}", i), truths[i], ProbVector(probs[i])});
  }
  return ProbabilityTable(probs.front().size(), std::move(rows));
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / fmt::format("cpdefer-{:x}", std::uniform_int_distribution<unsigned long long>()(rd));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace cpdefer::testing
