#pragma once

#include <span>
#include <string>
#include <vector>

#include "vqr/array.hpp"
#include "vqr/stats.hpp"
#include "vqr/tape.hpp"

namespace vqr {

// Conditional convex potential phi(u, x): convex in u for every x, realized
// by nonnegative z-path weights (softplus reparameterized), convex
// nondecreasing activations and positive ActNorm scales. With
// strong_convexity on, an (alpha/2)|u|^2 term is added, alpha = exp(w).
struct PicnnConfig {
  int input_dim = 2;      // d_u
  int condition_dim = 1;  // d_x
  int width = 18;
  int depth = 8;          // number of z-updates
  bool strong_convexity = true;
  double alpha_log_init = -2.302585092994046;  // log(0.1)
};

struct PicnnLayer {
  // z path (absent on layer 0 where z_0 = 0)
  DenseArray wz_raw;       // pre-softplus weights [w_out, w_in]
  DenseArray wzc, bz;      // z gate softplus(wzc c + bz); wzc [w_in, c_dim]
  // u path
  DenseArray wu;           // [w_out, d_u]
  DenseArray wuc, bu;      // u gate (wuc c + bu); wuc [d_u, c_dim]
  // context direct
  DenseArray wc;           // [w_out, c_dim]
  DenseArray b;            // [w_out]
  // ActNorm before the softplus activation; effective scale exp(s)
  DenseArray act_scale_log, act_shift;  // [w_out]
  // context update for the next layer (absent on the last layer)
  DenseArray wt, bt;       // c' = elu(wt c + bt)
};

enum class Reparam { identity, exp_of };

struct ParamEntryView {
  std::string name;
  double* data;
  std::size_t len;
  Reparam reparam;
};

struct PicnnParams {
  PicnnConfig config;
  std::vector<PicnnLayer> layers;
  double alpha_log = -2.302585092994046;
  bool actnorm_initialized = false;

  double alpha() const;

  // Stable enumeration of every trainable array (optimizer/serialization
  // order). Entries with Reparam::exp_of enter the graph as exp(value).
  std::vector<ParamEntryView> entries();
  std::vector<ParamEntryView> entries() const;  // views into const storage

  std::size_t num_params() const;
  std::vector<double> to_flat() const;
  void from_flat(std::span<const double> flat);

  int layer_in_width(int i) const;    // z_i width consumed by layer i
  int layer_out_width(int i) const;   // z_{i+1} width produced by layer i
  int context_dim(int i) const;       // dim of c_i seen by layer i
};

PicnnParams picnn_init(const PicnnConfig& config, Rng& rng);

// Marks ActNorm as initialized with identity scale/shift (tests, synthetic
// ground-truth maps). Training uses picnn_actnorm_init instead.
void picnn_mark_actnorm_identity(PicnnParams& params);

// Data-dependent ActNorm init on the first batch: per channel, the batch's
// post-ActNorm pre-activations get mean 0 / variance 1 (population variance).
// The effective scale is clamped into [1e-3, 1e3]; a constant channel hits
// the upper clamp. Batches of size < 2 are rejected.
void picnn_actnorm_init(PicnnParams& params,
                        const std::vector<std::vector<double>>& us,
                        const std::vector<std::vector<double>>& xs);

// Scratch buffers for the tape-free forward evaluator.
struct PicnnWork {
  std::vector<double> c, c_next, z, z_next, gate, pre;
};

// Tape-free forward value. If pre_capture is non-null and capture_layer >= 0,
// the raw pre-activation of that layer (before ActNorm) is stored and the
// evaluation stops there (used by ActNorm init).
double picnn_value_plain(const PicnnParams& params, std::span<const double> u,
                         std::span<const double> x, PicnnWork& work,
                         std::vector<double>* pre_capture = nullptr,
                         int capture_layer = -1);

// Graph bindings for one potential evaluation on a tape.
struct PicnnTapeGraph {
  ad::NodeId phi = -1;
  ad::NodeId u_leaf = -1;
  ad::NodeId x_leaf = -1;
  std::vector<ad::NodeId> param_leaves;  // aligned with entries() order
};

PicnnTapeGraph picnn_build(ad::Tape& tape, const PicnnParams& params,
                           std::span<const double> u, std::span<const double> x,
                           bool watch_params, bool watch_u);

double picnn_forward(const PicnnParams& params, std::span<const double> u,
                     std::span<const double> x);

// Exact reverse-mode gradient of the potential in u.
std::vector<double> picnn_grad_u(const PicnnParams& params,
                                 std::span<const double> u,
                                 std::span<const double> x);

// Value and u-gradient through a caller-owned tape (hot path; the tape is
// reset and may be reused across calls).
double picnn_value_grad_u(const PicnnParams& params, std::span<const double> u,
                          std::span<const double> x, ad::Tape& tape,
                          std::vector<double>& grad_out);

// Gradient of sum_i weights[i] * phi(u_i, x_i) with respect to every
// parameter, flattened in entries() order with the softplus/exp
// reparameterizations chained through.
std::vector<double> picnn_param_grad(
    const PicnnParams& params, const std::vector<std::vector<double>>& us,
    const std::vector<std::vector<double>>& xs, std::span<const double> weights);

// Accumulating form: grad += d/dparams of sum_i w_i phi(u_i, x_i).
void picnn_param_grad_accumulate(const PicnnParams& params,
                                 const std::vector<std::vector<double>>& us,
                                 const std::vector<std::vector<double>>& xs,
                                 std::span<const double> weights,
                                 std::span<double> grad);

std::string picnn_to_json(const PicnnParams& params);
PicnnParams picnn_from_json(const std::string& text);

}  // namespace vqr
