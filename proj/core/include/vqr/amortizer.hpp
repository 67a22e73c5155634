#pragma once

#include <span>
#include <string>
#include <vector>

#include "vqr/array.hpp"
#include "vqr/picnn.hpp"
#include "vqr/stats.hpp"
#include "vqr/tape.hpp"

namespace vqr {

// Amortized conjugate predictor: an MLP over [y; x] plus a residual skip
// from y, initialized as the identity map on y so warm starts begin sane.
struct AmortizerParams {
  int d_y = 0, d_x = 0, d_u = 0;
  int width = 0, depth = 0;
  std::vector<DenseArray> w, b;  // hidden layers, ELU
  DenseArray w_out, b_out;       // final linear layer (zero-initialized)
  DenseArray w_y, b_y;           // skip: W_y y + b_y (identity at init)

  std::vector<ParamEntryView> entries();
  std::vector<ParamEntryView> entries() const;
  std::size_t num_params() const;
  std::vector<double> to_flat() const;
  void from_flat(std::span<const double> flat);
};

enum class AmortizerLoss { u_target, objective, residual };

AmortizerParams amortizer_init(int d_y, int d_x, int d_u, int width, int depth,
                               Rng& rng);

std::vector<double> amortizer_predict(const AmortizerParams& params,
                                      std::span<const double> y,
                                      std::span<const double> x);

// Mean squared error against exact conjugate solutions and its exact
// parameter gradient (flattened in entries() order).
double amortizer_loss_and_grad(const AmortizerParams& params,
                               const std::vector<std::vector<double>>& ys,
                               const std::vector<std::vector<double>>& xs,
                               const std::vector<std::vector<double>>& targets,
                               std::vector<double>& grad_out);

// Alternative losses (config switch). `objective` maximizes the conjugate
// integrand at the prediction; `residual` penalizes |grad_u phi(pred) - y|^2
// with the Hessian-vector product taken by finite differences of the
// gradient map.
double amortizer_loss_and_grad(const AmortizerParams& params,
                               const std::vector<std::vector<double>>& ys,
                               const std::vector<std::vector<double>>& xs,
                               const std::vector<std::vector<double>>& targets,
                               std::vector<double>& grad_out, AmortizerLoss kind,
                               const PicnnParams* potential);

std::string amortizer_to_json(const AmortizerParams& params);
AmortizerParams amortizer_from_json(const std::string& text);

}  // namespace vqr
