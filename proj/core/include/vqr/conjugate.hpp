#pragma once

#include <span>
#include <vector>

#include "vqr/picnn.hpp"
#include "vqr/tape.hpp"

namespace vqr {

enum class DomainKind { unbounded, ball, box };

struct ConjugateDomain {
  DomainKind kind = DomainKind::unbounded;
  double radius = 1.0;                  // ball
  std::vector<double> lo, hi;           // box

  static ConjugateDomain unbounded() { return {}; }
  static ConjugateDomain ball(double r) {
    return {DomainKind::ball, r, {}, {}};
  }
  static ConjugateDomain box(std::vector<double> lo, std::vector<double> hi) {
    return {DomainKind::box, 0.0, std::move(lo), std::move(hi)};
  }

  bool bounded() const { return kind != DomainKind::unbounded; }
  void project(std::span<double> u) const;
};

struct SolverSettings {
  double eps_norm = 1e-7;
  double eps_obj = 1e-7;
  int max_iterations = 1000;  // 50 warm-started / 100 cold inside training
  int memory = 10;
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;

  static SolverSettings standalone() { return {}; }
  static SolverSettings training_cold() {
    SolverSettings s;
    s.max_iterations = 100;
    return s;
  }
  static SolverSettings training_warm() {
    SolverSettings s;
    s.max_iterations = 50;
    return s;
  }
};

struct ConjugateProblem {
  const PicnnParams* potential = nullptr;
  std::span<const double> y;
  std::span<const double> x;
  ConjugateDomain domain;
};

struct ConjugateSolution {
  std::vector<double> u_hat;
  double value = 0.0;      // J(u_hat; y, x) = u_hat.y - phi(u_hat, x)
  double grad_norm = 0.0;  // final (projected) gradient norm of J
  int iterations = 0;
  bool converged = false;
};

// Maximizes the concave J(u) = u.y - phi(u,x) with projected L-BFGS and a
// strong Wolfe line search; the iterate is projected onto the domain after
// every step. Curvature pairs with s.z <= 1e-10 are discarded. NaN in the
// objective aborts with a diagnostic; hitting max_iterations returns
// converged=false.
ConjugateSolution solve_conjugate(const ConjugateProblem& problem,
                                  const SolverSettings& settings,
                                  std::span<const double> init);

// Solver with a caller-owned tape (reused across solves on one thread).
ConjugateSolution solve_conjugate(const ConjugateProblem& problem,
                                  const SolverSettings& settings,
                                  std::span<const double> init, ad::Tape& tape);

enum class Variant { U, Y };

// Vector rank Q^{-1}(y,x). U-variant: conjugate argmax of phi. Y-variant:
// the potential is psi(y,x) and the rank is its direct gradient in y.
struct RankResult {
  std::vector<double> rank;
  int iterations = 0;
  bool converged = true;
};

RankResult rank_map(const PicnnParams& potential, Variant variant,
                    std::span<const double> y, std::span<const double> x,
                    const SolverSettings& settings,
                    std::span<const double> warm_start, ad::Tape& tape,
                    const ConjugateDomain& domain = ConjugateDomain::unbounded());

// d_y x d_y Jacobian of the rank map in y by central differences, then
// symmetrized (J + J^T)/2: the true Jacobian is the Hessian of a convex
// conjugate, hence symmetric PSD. Throws if an inner solve fails.
std::vector<double> rank_jacobian(const PicnnParams& potential, Variant variant,
                                  std::span<const double> y,
                                  std::span<const double> x, double fd_step,
                                  const SolverSettings& settings, ad::Tape& tape);

// Default differencing step 1e-4 * (1 + |y|).
double rank_jacobian_default_step(std::span<const double> y);

}  // namespace vqr
