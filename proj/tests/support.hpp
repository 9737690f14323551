#pragma once

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "fundus/error.hpp"
#include "fundus/image.hpp"

// Fails unless `stmt` throws fundus::Error with the given code.
#define EXPECT_FUNDUS_ERROR(stmt, expected_code)                                     \
  do {                                                                                \
    try {                                                                             \
      stmt;                                                                           \
      ADD_FAILURE() << "expected " << fundus::to_string(expected_code) << " from " #stmt; \
    } catch (const fundus::Error& e_) {                                               \
      EXPECT_EQ(e_.code(), expected_code) << e_.what();                               \
    }                                                                                 \
  } while (0)

namespace testing_support {

inline fundus::Image random_image(std::mt19937_64& rng, int h, int w, int c = 3, double lo = 0.0,
                                  double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  fundus::Image img(h, w, c);
  for (double& v : img.data()) v = d(rng);
  return img;
}

inline fundus::GrayMap random_map(std::mt19937_64& rng, int h, int w, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  fundus::GrayMap m(h, w);
  for (double& v : m.data()) v = d(rng);
  return m;
}

// Values on the 1/256 grid: window sums of up to 2^20 such values are exact.
inline fundus::GrayMap random_dyadic_map(std::mt19937_64& rng, int h, int w) {
  std::uniform_int_distribution<int> d(0, 256);
  fundus::GrayMap m(h, w);
  for (double& v : m.data()) v = d(rng) / 256.0;
  return m;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double mean_abs_diff(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() /
            ("fundus_" + tag + "_" + std::to_string(rng() % 1000000000ull));
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

}  // namespace testing_support
