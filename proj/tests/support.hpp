#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "bgattack/rng.hpp"
#include "bgattack/tensor.hpp"

namespace bgattack::testing {

inline Tensor random_tensor(const Shape& dims, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  CounterRng rng(seed, StreamTag::Test);
  Tensor t(dims);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline void expect_near(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.dims(), b.dims());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], tol) << "at " << i;
}

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  ScratchDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "bgattack_";
    if (info) name += std::string(info->test_suite_name()) + "_" + info->name();
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace bgattack::testing
