#include "vqr/conjugate.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace vqr {

void ConjugateDomain::project(std::span<double> u) const {
  switch (kind) {
    case DomainKind::unbounded:
      return;
    case DomainKind::ball: {
      double n2 = 0.0;
      for (double v : u) n2 += v * v;
      double n = std::sqrt(n2);
      if (n > radius && n > 0.0) {
        double f = radius / n;
        for (auto& v : u) v *= f;
      }
      return;
    }
    case DomainKind::box:
      for (std::size_t i = 0; i < u.size(); ++i)
        u[i] = std::min(std::max(u[i], lo[i]), hi[i]);
      return;
  }
}

namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Objective f(u) = phi(u,x) - u.y (the negated conjugate integrand), with a
// build-once / recompute tape.
class NegatedConjugate {
 public:
  NegatedConjugate(const ConjugateProblem& p, ad::Tape& tape) : p_(p), tape_(tape) {
    tape_.reset();
    graph_ = picnn_build(tape_, *p.potential, p.y /*placeholder u*/, p.x,
                         /*watch_params=*/false, /*watch_u=*/true);
  }

  double value_grad(std::span<const double> u, std::vector<double>& grad) {
    tape_.set_leaf(graph_.u_leaf, u);
    tape_.recompute();
    tape_.backward(graph_.phi);
    const DenseArray& adj = tape_.adjoint(graph_.u_leaf);
    double phi = tape_.value(graph_.phi).data[0];
    double f = phi - dot(u, p_.y);
    grad.resize(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) grad[i] = adj.data[i] - p_.y[i];
    if (!std::isfinite(f))
      throw std::runtime_error("solve_conjugate: NaN/Inf in objective");
    return f;
  }

  double value(std::span<const double> u) {
    tape_.set_leaf(graph_.u_leaf, u);
    tape_.recompute();
    double phi = tape_.value(graph_.phi).data[0];
    double f = phi - dot(u, p_.y);
    if (!std::isfinite(f))
      throw std::runtime_error("solve_conjugate: NaN/Inf in objective");
    return f;
  }

 private:
  const ConjugateProblem& p_;
  ad::Tape& tape_;
  PicnnTapeGraph graph_;
};

struct Pair {
  std::vector<double> s, z;
  double rho;
};

// Stationarity measure: plain gradient norm on unbounded domains, projected
// gradient |u - Pi(u - g)| otherwise.
double stationarity(const ConjugateDomain& dom, std::span<const double> u,
                    std::span<const double> g, std::vector<double>& scratch) {
  if (!dom.bounded()) return norm2(g);
  scratch.assign(u.begin(), u.end());
  for (std::size_t i = 0; i < u.size(); ++i) scratch[i] -= g[i];
  dom.project(scratch);
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    double d = u[i] - scratch[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

ConjugateSolution solve_conjugate(const ConjugateProblem& problem,
                                  const SolverSettings& settings,
                                  std::span<const double> init) {
  ad::Tape tape;
  return solve_conjugate(problem, settings, init, tape);
}

ConjugateSolution solve_conjugate(const ConjugateProblem& problem,
                                  const SolverSettings& settings,
                                  std::span<const double> init, ad::Tape& tape) {
  const std::size_t d = problem.y.size();
  if (problem.potential == nullptr ||
      static_cast<int>(d) != problem.potential->config.input_dim)
    throw std::invalid_argument("solve_conjugate: y dimension must match the potential input");

  NegatedConjugate obj(problem, tape);

  std::vector<double> u(init.begin(), init.end());
  problem.domain.project(u);

  std::vector<double> g, g_new, u_new, dir, scratch;
  double f = obj.value_grad(u, g);

  ConjugateSolution sol;
  sol.iterations = 0;

  std::deque<Pair> pairs;
  std::vector<double> alpha_buf;

  double stat = stationarity(problem.domain, u, g, scratch);
  bool converged = stat <= settings.eps_norm;

  int it = 0;
  while (!converged && it < settings.max_iterations) {
    ++it;
    // two-loop recursion: dir = -H g
    dir.assign(g.begin(), g.end());
    alpha_buf.resize(pairs.size());
    for (int k = static_cast<int>(pairs.size()) - 1; k >= 0; --k) {
      const Pair& p = pairs[k];
      double a = p.rho * dot(p.s, dir);
      alpha_buf[k] = a;
      for (std::size_t i = 0; i < d; ++i) dir[i] -= a * p.z[i];
    }
    if (!pairs.empty()) {
      const Pair& last = pairs.back();
      double gamma = dot(last.s, last.z) / dot(last.z, last.z);
      for (auto& v : dir) v *= gamma;
    }
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const Pair& p = pairs[k];
      double beta = p.rho * dot(p.z, dir);
      for (std::size_t i = 0; i < d; ++i) dir[i] += (alpha_buf[k] - beta) * p.s[i];
    }
    for (auto& v : dir) v = -v;

    double dphi0 = dot(g, dir);
    if (dphi0 >= 0.0) {  // not a descent direction: reset memory
      pairs.clear();
      dir.assign(g.begin(), g.end());
      for (auto& v : dir) v = -v;
      dphi0 = dot(g, dir);
      if (dphi0 >= 0.0) break;  // gradient numerically zero
    }

    // strong Wolfe line search (bracket + zoom)
    const double c1 = settings.wolfe_c1, c2 = settings.wolfe_c2;
    double step = 1.0;
    double step_prev = 0.0;
    double f_prev = f;
    double step_accepted = -1.0;
    double f_accepted = f;
    double lo = 0.0, hi = 0.0, f_lo = f;
    bool bracketed = false;

    auto eval_fg = [&](double t, double& ft, double& dft) {
      u_new.resize(d);
      for (std::size_t i = 0; i < d; ++i) u_new[i] = u[i] + t * dir[i];
      ft = obj.value_grad(u_new, g_new);
      dft = dot(g_new, dir);
    };

    double ft, dft;
    for (int ls = 0; ls < 25; ++ls) {
      eval_fg(step, ft, dft);
      if (ft > f + c1 * step * dphi0 || (ls > 0 && ft >= f_prev)) {
        lo = step_prev; hi = step; f_lo = f_prev;
        bracketed = true;
        break;
      }
      if (std::fabs(dft) <= -c2 * dphi0) {
        step_accepted = step;
        f_accepted = ft;
        break;
      }
      if (dft >= 0.0) {
        lo = step; hi = step_prev; f_lo = ft;
        bracketed = true;
        break;
      }
      step_prev = step;
      f_prev = ft;
      step *= 2.0;
    }
    if (bracketed) {
      for (int z = 0; z < 30 && step_accepted < 0.0; ++z) {
        double mid = 0.5 * (lo + hi);
        eval_fg(mid, ft, dft);
        if (ft > f + c1 * mid * dphi0 || ft >= f_lo) {
          hi = mid;
        } else {
          if (std::fabs(dft) <= -c2 * dphi0) {
            step_accepted = mid;
            f_accepted = ft;
            break;
          }
          if (dft * (hi - lo) >= 0.0) hi = lo;
          lo = mid;
          f_lo = ft;
        }
        if (std::fabs(hi - lo) < 1e-16 * (1.0 + std::fabs(lo))) break;
      }
      if (step_accepted < 0.0 && f_lo < f) {  // settle for Armijo progress
        step_accepted = lo;
        eval_fg(lo, f_accepted, dft);
      }
    }
    if (step_accepted <= 0.0) {
      // no usable step along this direction; zero objective decrease
      // satisfies the eps_obj stopping rule
      sol.iterations = it;
      converged = true;
      break;
    }

    u_new.resize(d);
    for (std::size_t i = 0; i < d; ++i) u_new[i] = u[i] + step_accepted * dir[i];
    double f_new = f_accepted;
    if (problem.domain.bounded()) {
      problem.domain.project({u_new.data(), u_new.size()});
      f_new = obj.value_grad(u_new, g_new);
      if (f_new > f) {
        // projection undid the decrease: projected-gradient backtracking
        double t = 1.0;
        bool ok = false;
        for (int bt = 0; bt < 40; ++bt) {
          for (std::size_t i = 0; i < d; ++i) u_new[i] = u[i] - t * g[i];
          problem.domain.project({u_new.data(), u_new.size()});
          f_new = obj.value_grad(u_new, g_new);
          if (f_new <= f) { ok = true; break; }
          t *= 0.5;
        }
        if (!ok) {
          sol.iterations = it;
          break;
        }
        pairs.clear();
      }
    }

    // curvature pair (discard if s.z too small; projection can break it)
    Pair p;
    p.s.resize(d);
    p.z.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
      p.s[i] = u_new[i] - u[i];
      p.z[i] = g_new[i] - g[i];
    }
    double sz = dot(p.s, p.z);
    if (sz > 1e-10) {
      p.rho = 1.0 / sz;
      pairs.push_back(std::move(p));
      if (static_cast<int>(pairs.size()) > settings.memory) pairs.pop_front();
    }

    double f_decrease = f - f_new;
    u.swap(u_new);
    g.swap(g_new);
    f = f_new;
    sol.iterations = it;

    stat = stationarity(problem.domain, u, g, scratch);
    if (stat <= settings.eps_norm || std::fabs(f_decrease) <= settings.eps_obj) {
      converged = true;
      break;
    }
  }

  sol.u_hat = std::move(u);
  sol.value = -f;
  sol.grad_norm = stat;
  sol.converged = converged;
  return sol;
}

RankResult rank_map(const PicnnParams& potential, Variant variant,
                    std::span<const double> y, std::span<const double> x,
                    const SolverSettings& settings,
                    std::span<const double> warm_start, ad::Tape& tape,
                    const ConjugateDomain& domain) {
  RankResult r;
  if (variant == Variant::Y) {
    std::vector<double> grad;
    picnn_value_grad_u(potential, y, x, tape, grad);
    r.rank = std::move(grad);
    return r;
  }
  ConjugateProblem prob{&potential, y, x, domain};
  std::vector<double> init(y.size(), 0.0);
  if (!warm_start.empty()) init.assign(warm_start.begin(), warm_start.end());
  ConjugateSolution sol = solve_conjugate(prob, settings, init, tape);
  r.rank = std::move(sol.u_hat);
  r.iterations = sol.iterations;
  r.converged = sol.converged;
  return r;
}

double rank_jacobian_default_step(std::span<const double> y) {
  double n = 0.0;
  for (double v : y) n += v * v;
  return 1e-4 * (1.0 + std::sqrt(n));
}

std::vector<double> rank_jacobian(const PicnnParams& potential, Variant variant,
                                  std::span<const double> y,
                                  std::span<const double> x, double fd_step,
                                  const SolverSettings& settings, ad::Tape& tape) {
  const std::size_t d = y.size();
  if (fd_step <= 0.0)
    throw std::invalid_argument("rank_jacobian: fd step must be > 0");
  if (d > 16)
    throw std::invalid_argument("rank_jacobian: d_y must be <= 16");

  // center solve provides the warm start for the stencil
  RankResult center = rank_map(potential, variant, y, x, settings, {}, tape);
  if (!center.converged)
    throw std::runtime_error("rank_jacobian: center rank solve did not converge");

  std::vector<double> J(d * d, 0.0);
  std::vector<double> yp(y.begin(), y.end());
  for (std::size_t j = 0; j < d; ++j) {
    yp[j] = y[j] + fd_step;
    RankResult up = rank_map(potential, variant, yp, x, settings,
                             center.rank, tape);
    yp[j] = y[j] - fd_step;
    RankResult dn = rank_map(potential, variant, yp, x, settings,
                             center.rank, tape);
    yp[j] = y[j];
    if (!up.converged || !dn.converged)
      throw std::runtime_error("rank_jacobian: inner rank solve did not converge");
    for (std::size_t i = 0; i < d; ++i)
      J[i * d + j] = (up.rank[i] - dn.rank[i]) / (2.0 * fd_step);
  }
  // symmetrize: the exact Jacobian is a Hessian of a convex potential
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) {
      double v = 0.5 * (J[i * d + j] + J[j * d + i]);
      J[i * d + j] = v;
      J[j * d + i] = v;
    }
  return J;
}

}  // namespace vqr
