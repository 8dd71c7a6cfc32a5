#pragma once

// Generators and reference implementations shared by the test binaries.
// The references are written independently of the library: integer rank
// arithmetic, brute-force sorting, direct enumeration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

namespace testkit {

using Rng = std::mt19937_64;

/// alpha = permille_e4 / 10000, so (n+1)(1-alpha) has an exact integer ceiling.
inline std::size_t oracle_rank(std::size_t n, std::uint32_t alpha_e4) {
  const std::uint64_t num = static_cast<std::uint64_t>(n + 1) * (10000 - alpha_e4);
  return static_cast<std::size_t>((num + 9999) / 10000);
}

inline double oracle_quantile(std::vector<double> scores, std::uint32_t alpha_e4) {
  const std::size_t r = oracle_rank(scores.size(), alpha_e4);
  if (r > scores.size()) return std::numeric_limits<double>::infinity();
  std::sort(scores.begin(), scores.end());
  return scores[r - 1];
}

/// Multisets with many ties: values from a small grid, sometimes continuous.
inline std::vector<double> random_multiset(Rng& rng, std::size_t max_n = 60) {
  const std::size_t n = std::uniform_int_distribution<std::size_t>(1, max_n)(rng);
  const bool coarse = std::bernoulli_distribution(0.5)(rng);
  std::vector<double> v(n);
  for (auto& x : v) {
    x = coarse ? std::uniform_int_distribution<int>(0, 5)(rng) / 5.0
               : std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
  }
  return v;
}

/// Random probability vector of length n summing to 1 (within rounding).
inline std::vector<double> random_simplex(Rng& rng, std::size_t n) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> v(n);
  double s = 0.0;
  for (auto& x : v) s += (x = e(rng));
  for (auto& x : v) x /= s;
  return v;
}

/// Dyadic probabilities (multiples of 1/2^bits) summing exactly to 1.
inline std::vector<double> random_dyadic_simplex(Rng& rng, std::size_t n, int bits = 10) {
  const int total = 1 << bits;
  std::vector<int> cuts{0, total};
  for (std::size_t i = 1; i < n; ++i) cuts.push_back(std::uniform_int_distribution<int>(0, total)(rng));
  std::sort(cuts.begin(), cuts.end());
  std::vector<double> v;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    v.push_back(std::ldexp(static_cast<double>(cuts[i + 1] - cuts[i]), -bits));
  }
  return v;
}

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "confcal_test_XXXXXX").string();
    path_ = ::mkdtemp(tmpl.data());
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

}  // namespace testkit

#define EXPECT_CONFCAL_ERROR(stmt, ec)                                     \
  do {                                                                     \
    try {                                                                  \
      stmt;                                                                \
      ADD_FAILURE() << "expected " << confcal::to_string(ec);              \
    } catch (const confcal::Error& e_) {                                   \
      EXPECT_EQ(e_.code(), ec) << e_.what();                               \
    }                                                                      \
  } while (0)
