#include "vqr/picnn.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "json.hpp"

namespace vqr {

namespace {

constexpr double kScaleLogMin = -6.907755278982137;  // log(1e-3)
constexpr double kScaleLogMax = 6.907755278982137;   // log(1e3)

double softplus_inv(double y) { return std::log(std::expm1(y)); }

double elu_val(double x) { return x > 0.0 ? x : std::expm1(x); }

void validate(const PicnnConfig& c) {
  if (c.input_dim < 1 || c.condition_dim < 0 || c.width < 1 || c.depth < 1)
    throw std::invalid_argument("picnn: invalid config (need d_u>=1, d_x>=0, width>=1, depth>=1)");
}

DenseArray uniform_fanin(std::size_t rows, std::size_t cols, Rng& rng) {
  DenseArray a = DenseArray::zeros({rows, cols});
  double bound = cols > 0 ? 1.0 / std::sqrt(static_cast<double>(cols)) : 0.0;
  for (auto& v : a.data) v = rng.uniform(-bound, bound);
  return a;
}

}  // namespace

double PicnnParams::alpha() const { return std::exp(alpha_log); }

int PicnnParams::layer_in_width(int i) const {
  return i == 0 ? 0 : config.width;
}

int PicnnParams::layer_out_width(int i) const {
  return i == config.depth - 1 ? 1 : config.width;
}

int PicnnParams::context_dim(int i) const {
  return i == 0 ? config.condition_dim : config.width;
}

std::vector<ParamEntryView> PicnnParams::entries() {
  std::vector<ParamEntryView> out;
  auto push = [&](const std::string& name, DenseArray& a, Reparam r = Reparam::identity) {
    out.push_back({name, a.data.data(), a.data.size(), r});
  };
  for (int i = 0; i < config.depth; ++i) {
    PicnnLayer& L = layers[i];
    std::string p = "layer" + std::to_string(i) + ".";
    if (i > 0) {
      push(p + "wz_raw", L.wz_raw);
      push(p + "wzc", L.wzc);
      push(p + "bz", L.bz);
    }
    push(p + "wu", L.wu);
    push(p + "wuc", L.wuc);
    push(p + "bu", L.bu);
    push(p + "wc", L.wc);
    push(p + "b", L.b);
    push(p + "act_scale_log", L.act_scale_log, Reparam::exp_of);
    push(p + "act_shift", L.act_shift);
    if (i < config.depth - 1) {
      push(p + "wt", L.wt);
      push(p + "bt", L.bt);
    }
  }
  if (config.strong_convexity)
    out.push_back({"alpha_log", &alpha_log, 1, Reparam::exp_of});
  return out;
}

std::vector<ParamEntryView> PicnnParams::entries() const {
  return const_cast<PicnnParams*>(this)->entries();
}

std::size_t PicnnParams::num_params() const {
  std::size_t n = 0;
  for (const auto& e : entries()) n += e.len;
  return n;
}

std::vector<double> PicnnParams::to_flat() const {
  std::vector<double> flat;
  flat.reserve(num_params());
  for (const auto& e : entries())
    flat.insert(flat.end(), e.data, e.data + e.len);
  return flat;
}

void PicnnParams::from_flat(std::span<const double> flat) {
  std::size_t off = 0;
  for (auto& e : entries()) {
    if (off + e.len > flat.size())
      throw std::invalid_argument("picnn: flat parameter vector too short");
    std::memcpy(e.data, flat.data() + off, e.len * sizeof(double));
    off += e.len;
  }
  if (off != flat.size())
    throw std::invalid_argument("picnn: flat parameter vector size mismatch");
}

PicnnParams picnn_init(const PicnnConfig& config, Rng& rng) {
  validate(config);
  PicnnParams P;
  P.config = config;
  P.alpha_log = config.alpha_log_init;
  P.layers.resize(config.depth);
  int du = config.input_dim;
  for (int i = 0; i < config.depth; ++i) {
    PicnnLayer& L = P.layers[i];
    std::size_t w_in = static_cast<std::size_t>(P.layer_in_width(i));
    std::size_t w_out = static_cast<std::size_t>(P.layer_out_width(i));
    std::size_t cd = static_cast<std::size_t>(P.context_dim(i));
    if (i > 0) {
      // small positive effective z-weights so nonnegative paths start alive
      L.wz_raw = DenseArray::zeros({w_out, w_in});
      double raw = softplus_inv(0.05);
      for (auto& v : L.wz_raw.data) v = raw;
      L.wzc = uniform_fanin(w_in, cd, rng);
      L.bz = DenseArray::zeros({w_in});
    }
    L.wu = uniform_fanin(w_out, static_cast<std::size_t>(du), rng);
    L.wuc = uniform_fanin(static_cast<std::size_t>(du), cd, rng);
    L.bu = DenseArray::zeros({static_cast<std::size_t>(du)});
    for (auto& v : L.bu.data) v = 1.0;  // u gate starts open
    L.wc = uniform_fanin(w_out, cd, rng);
    L.b = DenseArray::zeros({w_out});
    L.act_scale_log = DenseArray::zeros({w_out});
    L.act_shift = DenseArray::zeros({w_out});
    if (i < config.depth - 1) {
      L.wt = uniform_fanin(static_cast<std::size_t>(config.width), cd, rng);
      L.bt = DenseArray::zeros({static_cast<std::size_t>(config.width)});
    }
  }
  return P;
}

void picnn_mark_actnorm_identity(PicnnParams& params) {
  params.actnorm_initialized = true;
}

double picnn_value_plain(const PicnnParams& P, std::span<const double> u,
                         std::span<const double> x, PicnnWork& w,
                         std::vector<double>* pre_capture, int capture_layer) {
  const PicnnConfig& cfg = P.config;
  if (static_cast<int>(u.size()) != cfg.input_dim ||
      static_cast<int>(x.size()) != cfg.condition_dim)
    throw std::invalid_argument("picnn: input dimension mismatch");
  if (!P.actnorm_initialized && capture_layer < 0)
    throw std::logic_error("picnn: ActNorm not initialized (run actnorm init first)");

  w.c.assign(x.begin(), x.end());
  w.z.clear();
  double phi = 0.0;
  for (int i = 0; i < cfg.depth; ++i) {
    const PicnnLayer& L = P.layers[i];
    std::size_t w_out = static_cast<std::size_t>(P.layer_out_width(i));
    std::size_t cd = w.c.size();
    w.pre.assign(w_out, 0.0);
    // z term
    if (i > 0) {
      std::size_t w_in = w.z.size();
      w.gate.resize(w_in);
      for (std::size_t r = 0; r < w_in; ++r) {
        double s = L.bz[r];
        for (std::size_t c = 0; c < cd; ++c) s += L.wzc.at(r, c) * w.c[c];
        w.gate[r] = w.z[r] * ad::softplus_value(s);
      }
      for (std::size_t r = 0; r < w_out; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < w_in; ++c)
          s += ad::softplus_value(L.wz_raw.at(r, c)) * w.gate[c];
        w.pre[r] += s;
      }
    }
    // u term
    {
      std::size_t du = u.size();
      w.gate.resize(du);
      for (std::size_t r = 0; r < du; ++r) {
        double s = L.bu[r];
        for (std::size_t c = 0; c < cd; ++c) s += L.wuc.at(r, c) * w.c[c];
        w.gate[r] = u[r] * s;
      }
      for (std::size_t r = 0; r < w_out; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < du; ++c) s += L.wu.at(r, c) * w.gate[c];
        w.pre[r] += s;
      }
    }
    // context term + bias
    for (std::size_t r = 0; r < w_out; ++r) {
      double s = L.b[r];
      for (std::size_t c = 0; c < cd; ++c) s += L.wc.at(r, c) * w.c[c];
      w.pre[r] += s;
    }
    if (pre_capture && i == capture_layer) {
      *pre_capture = w.pre;
      return 0.0;
    }
    // ActNorm + softplus
    w.z_next.resize(w_out);
    for (std::size_t r = 0; r < w_out; ++r) {
      double an = std::exp(L.act_scale_log[r]) * w.pre[r] + L.act_shift[r];
      w.z_next[r] = ad::softplus_value(an);
    }
    std::swap(w.z, w.z_next);
    // context update
    if (i < cfg.depth - 1) {
      std::size_t cw = static_cast<std::size_t>(cfg.width);
      w.c_next.resize(cw);
      for (std::size_t r = 0; r < cw; ++r) {
        double s = L.bt[r];
        for (std::size_t c = 0; c < cd; ++c) s += L.wt.at(r, c) * w.c[c];
        w.c_next[r] = elu_val(s);
      }
      std::swap(w.c, w.c_next);
    }
  }
  phi = w.z[0];
  if (cfg.strong_convexity) {
    double sq = 0.0;
    for (double v : u) sq += v * v;
    phi += 0.5 * P.alpha() * sq;
  }
  return phi;
}

PicnnTapeGraph picnn_build(ad::Tape& t, const PicnnParams& P,
                           std::span<const double> u, std::span<const double> x,
                           bool watch_params, bool watch_u) {
  const PicnnConfig& cfg = P.config;
  if (static_cast<int>(u.size()) != cfg.input_dim ||
      static_cast<int>(x.size()) != cfg.condition_dim)
    throw std::invalid_argument("picnn: input dimension mismatch");
  if (!P.actnorm_initialized)
    throw std::logic_error("picnn: ActNorm not initialized (run actnorm init first)");

  using ad::NodeId;
  PicnnTapeGraph g;
  g.u_leaf = t.leaf(DenseArray({u.size()}, {u.begin(), u.end()}), watch_u);
  g.x_leaf = t.leaf(DenseArray({x.size()}, {x.begin(), x.end()}), false);

  // Parameter leaves are created in entries() order. exp_of entries enter
  // the graph as exp(value); the chain factor is applied when adjoints are
  // read back (the tape's primitive set has no exp).
  auto mk_leaf = [&](const DenseArray& a, Reparam r = Reparam::identity) {
    DenseArray v = a;
    if (r == Reparam::exp_of)
      for (auto& d : v.data) d = std::exp(d);
    NodeId id = t.leaf(std::move(v), watch_params);
    g.param_leaves.push_back(id);
    return id;
  };

  NodeId c_node = g.x_leaf;
  NodeId z_node = -1;
  for (int i = 0; i < cfg.depth; ++i) {
    const PicnnLayer& L = P.layers[i];
    NodeId wz_raw = -1, wzc = -1, bz = -1;
    if (i > 0) {
      wz_raw = mk_leaf(L.wz_raw);
      wzc = mk_leaf(L.wzc);
      bz = mk_leaf(L.bz);
    }
    NodeId wu = mk_leaf(L.wu);
    NodeId wuc = mk_leaf(L.wuc);
    NodeId bu = mk_leaf(L.bu);
    NodeId wc = mk_leaf(L.wc);
    NodeId b = mk_leaf(L.b);
    NodeId act_scale = mk_leaf(L.act_scale_log, Reparam::exp_of);
    NodeId act_shift = mk_leaf(L.act_shift);
    NodeId wt = -1, bt = -1;
    if (i < cfg.depth - 1) {
      wt = mk_leaf(L.wt);
      bt = mk_leaf(L.bt);
    }

    NodeId pre = t.add(t.matmul(wc, c_node), b);
    if (i > 0) {
      NodeId zgate = t.softplus(t.add(t.matmul(wzc, c_node), bz));
      NodeId zterm = t.matmul(t.softplus(wz_raw), t.mul(z_node, zgate));
      pre = t.add(pre, zterm);
    }
    NodeId ugate = t.add(t.matmul(wuc, c_node), bu);
    NodeId uterm = t.matmul(wu, t.mul(g.u_leaf, ugate));
    pre = t.add(pre, uterm);

    NodeId an = t.add(t.mul(act_scale, pre), act_shift);
    z_node = t.softplus(an);
    if (i < cfg.depth - 1)
      c_node = t.elu(t.add(t.matmul(wt, c_node), bt));
  }

  g.phi = z_node;  // width 1 on the final layer
  if (cfg.strong_convexity) {
    NodeId alpha = t.leaf(DenseArray::scalar(std::exp(P.alpha_log)), watch_params);
    g.param_leaves.push_back(alpha);
    NodeId quad = t.scale(t.mul(alpha, t.square_norm(g.u_leaf)), 0.5);
    g.phi = t.add(g.phi, quad);
  }
  return g;
}

double picnn_forward(const PicnnParams& P, std::span<const double> u,
                     std::span<const double> x) {
  PicnnWork w;
  return picnn_value_plain(P, u, x, w);
}

double picnn_value_grad_u(const PicnnParams& P, std::span<const double> u,
                          std::span<const double> x, ad::Tape& tape,
                          std::vector<double>& grad_out) {
  tape.reset();
  PicnnTapeGraph g = picnn_build(tape, P, u, x, false, true);
  tape.backward(g.phi);
  const DenseArray& adj = tape.adjoint(g.u_leaf);
  grad_out.assign(adj.data.begin(), adj.data.end());
  return tape.value(g.phi).data[0];
}

std::vector<double> picnn_grad_u(const PicnnParams& P, std::span<const double> u,
                                 std::span<const double> x) {
  ad::Tape tape;
  std::vector<double> grad;
  picnn_value_grad_u(P, u, x, tape, grad);
  return grad;
}

void picnn_param_grad_accumulate(const PicnnParams& P,
                                 const std::vector<std::vector<double>>& us,
                                 const std::vector<std::vector<double>>& xs,
                                 std::span<const double> weights,
                                 std::span<double> grad) {
  if (us.empty() || us.size() != xs.size() || us.size() != weights.size())
    throw std::invalid_argument("picnn: empty or mismatched batch");
  auto entries = P.entries();
  std::size_t total = 0;
  for (const auto& e : entries) total += e.len;
  if (grad.size() != total)
    throw std::invalid_argument("picnn: gradient buffer size mismatch");

  ad::Tape t;
  ad::NodeId root = -1;
  std::vector<PicnnTapeGraph> graphs;
  graphs.reserve(us.size());
  for (std::size_t i = 0; i < us.size(); ++i) {
    PicnnTapeGraph g = picnn_build(t, P, us[i], xs[i], true, false);
    ad::NodeId term = t.scale(g.phi, weights[i]);
    root = (root < 0) ? term : t.add(root, term);
    graphs.push_back(std::move(g));
  }
  t.backward(root);

  std::size_t off = 0;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& e = entries[k];
    for (std::size_t i = 0; i < us.size(); ++i) {
      const DenseArray& adj = t.adjoint(graphs[i].param_leaves[k]);
      if (e.reparam == Reparam::exp_of) {
        for (std::size_t j = 0; j < e.len; ++j)
          grad[off + j] += adj.data[j] * std::exp(e.data[j]);
      } else {
        for (std::size_t j = 0; j < e.len; ++j) grad[off + j] += adj.data[j];
      }
    }
    off += e.len;
  }
}

std::vector<double> picnn_param_grad(const PicnnParams& P,
                                     const std::vector<std::vector<double>>& us,
                                     const std::vector<std::vector<double>>& xs,
                                     std::span<const double> weights) {
  std::vector<double> grad(P.num_params(), 0.0);
  picnn_param_grad_accumulate(P, us, xs, weights, grad);
  return grad;
}

void picnn_actnorm_init(PicnnParams& P,
                        const std::vector<std::vector<double>>& us,
                        const std::vector<std::vector<double>>& xs) {
  if (P.actnorm_initialized)
    throw std::logic_error("picnn: ActNorm already initialized");
  if (us.size() < 2 || us.size() != xs.size())
    throw std::invalid_argument("picnn: ActNorm init needs a batch of size >= 2");
  const std::size_t n = us.size();
  PicnnWork work;
  std::vector<double> pre;
  for (int layer = 0; layer < P.config.depth; ++layer) {
    std::size_t w_out = static_cast<std::size_t>(P.layer_out_width(layer));
    std::vector<double> mean(w_out, 0.0), m2(w_out, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      picnn_value_plain(P, us[i], xs[i], work, &pre, layer);
      for (std::size_t r = 0; r < w_out; ++r) {
        mean[r] += pre[r];
        m2[r] += pre[r] * pre[r];
      }
    }
    PicnnLayer& L = P.layers[layer];
    for (std::size_t r = 0; r < w_out; ++r) {
      mean[r] /= static_cast<double>(n);
      double var = m2[r] / static_cast<double>(n) - mean[r] * mean[r];
      double std_dev = std::sqrt(std::max(var, 0.0));
      double s_log = std_dev > 0.0 ? -std::log(std_dev) : kScaleLogMax;
      s_log = std::min(std::max(s_log, kScaleLogMin), kScaleLogMax);
      L.act_scale_log[r] = s_log;
      L.act_shift[r] = -std::exp(s_log) * mean[r];
    }
  }
  P.actnorm_initialized = true;
}

static nlohmann::json array_to_json(const DenseArray& a) {
  return {{"shape", a.shape}, {"data", a.data}};
}

static DenseArray array_from_json(const nlohmann::json& j) {
  return DenseArray(j.at("shape").get<std::vector<std::size_t>>(),
                    j.at("data").get<std::vector<double>>());
}

std::string picnn_to_json(const PicnnParams& P) {
  nlohmann::json j;
  j["format"] = 1;
  j["config"] = {{"input_dim", P.config.input_dim},
                 {"condition_dim", P.config.condition_dim},
                 {"width", P.config.width},
                 {"depth", P.config.depth},
                 {"strong_convexity", P.config.strong_convexity},
                 {"alpha_log_init", P.config.alpha_log_init}};
  j["alpha_log"] = P.alpha_log;
  j["actnorm_initialized"] = P.actnorm_initialized;
  nlohmann::json arrays = nlohmann::json::object();
  for (int i = 0; i < P.config.depth; ++i) {
    const PicnnLayer& L = P.layers[i];
    std::string p = "layer" + std::to_string(i) + ".";
    if (i > 0) {
      arrays[p + "wz_raw"] = array_to_json(L.wz_raw);
      arrays[p + "wzc"] = array_to_json(L.wzc);
      arrays[p + "bz"] = array_to_json(L.bz);
    }
    arrays[p + "wu"] = array_to_json(L.wu);
    arrays[p + "wuc"] = array_to_json(L.wuc);
    arrays[p + "bu"] = array_to_json(L.bu);
    arrays[p + "wc"] = array_to_json(L.wc);
    arrays[p + "b"] = array_to_json(L.b);
    arrays[p + "act_scale_log"] = array_to_json(L.act_scale_log);
    arrays[p + "act_shift"] = array_to_json(L.act_shift);
    if (i < P.config.depth - 1) {
      arrays[p + "wt"] = array_to_json(L.wt);
      arrays[p + "bt"] = array_to_json(L.bt);
    }
  }
  j["arrays"] = arrays;
  return j.dump();
}

PicnnParams picnn_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.at("format").get<int>() != 1)
    throw std::invalid_argument("picnn: unsupported serialization format");
  PicnnConfig cfg;
  const auto& jc = j.at("config");
  cfg.input_dim = jc.at("input_dim").get<int>();
  cfg.condition_dim = jc.at("condition_dim").get<int>();
  cfg.width = jc.at("width").get<int>();
  cfg.depth = jc.at("depth").get<int>();
  cfg.strong_convexity = jc.at("strong_convexity").get<bool>();
  cfg.alpha_log_init = jc.at("alpha_log_init").get<double>();

  Rng rng(0);
  PicnnParams P = picnn_init(cfg, rng);
  P.alpha_log = j.at("alpha_log").get<double>();
  P.actnorm_initialized = j.at("actnorm_initialized").get<bool>();
  const auto& arrays = j.at("arrays");
  for (int i = 0; i < cfg.depth; ++i) {
    PicnnLayer& L = P.layers[i];
    std::string p = "layer" + std::to_string(i) + ".";
    if (i > 0) {
      L.wz_raw = array_from_json(arrays.at(p + "wz_raw"));
      L.wzc = array_from_json(arrays.at(p + "wzc"));
      L.bz = array_from_json(arrays.at(p + "bz"));
    }
    L.wu = array_from_json(arrays.at(p + "wu"));
    L.wuc = array_from_json(arrays.at(p + "wuc"));
    L.bu = array_from_json(arrays.at(p + "bu"));
    L.wc = array_from_json(arrays.at(p + "wc"));
    L.b = array_from_json(arrays.at(p + "b"));
    L.act_scale_log = array_from_json(arrays.at(p + "act_scale_log"));
    L.act_shift = array_from_json(arrays.at(p + "act_shift"));
    if (i < cfg.depth - 1) {
      L.wt = array_from_json(arrays.at(p + "wt"));
      L.bt = array_from_json(arrays.at(p + "bt"));
    }
  }
  return P;
}

}  // namespace vqr
