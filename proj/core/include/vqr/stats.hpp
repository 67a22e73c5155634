#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace vqr {

// Seeded generator with explicit transforms (no std::*_distribution) so draws
// are reproducible across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller (cached second draw)
  double normal();

  std::vector<double> normal_vec(std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = normal();
    return v;
  }

  // uniform on the unit sphere S^{d-1}
  std::vector<double> unit_direction(std::size_t d);

  // uniform in the unit ball: sphere direction times radius v^(1/d), v~U[0,1)
  std::vector<double> ball_point(std::size_t d);

  std::uint64_t raw() { return eng_(); }

  // derive an independent stream (for per-partition seeding)
  Rng derive(std::uint64_t salt) const;

  std::size_t index(std::size_t n) {  // uniform in {0,...,n-1}
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Standard normal quantile (inverse CDF), |error| < 1e-13.
double normal_quantile(double p);

// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x);

// Chi-square quantile with k degrees of freedom at probability p.
double chi2_quantile(double p, int k);

double normal_cdf(double x);

}  // namespace vqr
