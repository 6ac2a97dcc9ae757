#include "ldr/nets.hpp"

#include <algorithm>
#include <cmath>

namespace ldr {

using ad::Activation;
using ad::Var;

std::vector<LayerSpec> mlp_layers(Index in, const std::vector<Index>& hidden, Index out, Activation hidden_act,
                                  Activation output_act, bool spectral_normalized) {
  std::vector<LayerSpec> layers;
  Index prev = in;
  for (Index h : hidden) {
    layers.push_back({prev, h, hidden_act, spectral_normalized, true});
    prev = h;
  }
  layers.push_back({prev, out, output_act, spectral_normalized, true});
  return layers;
}

bool NetParams::any_spectral() const {
  return std::any_of(layers.begin(), layers.end(), [](const LayerSpec& l) { return l.spectral_normalized; });
}

void NetParams::validate() const {
  if (layers.empty()) throw ShapeError("network has no layers");
  if (weights.size() != layers.size() || biases.size() != layers.size() || sn_u.size() != layers.size() ||
      sn_sigma.size() != layers.size()) {
    throw ShapeError("network parameter lists do not match its " + std::to_string(layers.size()) + " layers");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerSpec& s = layers[l];
    if (l > 0 && layers[l - 1].out != s.in) {
      throw ShapeError("layer " + std::to_string(l) + " input " + std::to_string(s.in) + " does not chain with " +
                       std::to_string(layers[l - 1].out));
    }
    if (weights[l].rows() != s.out || weights[l].cols() != s.in) {
      throw ShapeError("layer " + std::to_string(l) + " weight is " + shape_str(weights[l]) + ", expected " +
                       shape_str(s.out, s.in));
    }
    if (s.bias != (biases[l].size() != 0) || (s.bias && (biases[l].rows() != s.out || biases[l].cols() != 1))) {
      throw ShapeError("layer " + std::to_string(l) + " bias has shape " + shape_str(biases[l]));
    }
    if (!weights[l].allFinite() || !biases[l].allFinite()) {
      throw NumericalError("layer " + std::to_string(l) + " has non-finite parameters");
    }
  }
}

namespace {

double activation_gain(Activation act) {
  switch (act) {
    case Activation::Relu: return std::sqrt(2.0);
    case Activation::LeakyRelu: return std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope));
    case Activation::Tanh: return 5.0 / 3.0;
    case Activation::Sigmoid:
    case Activation::None: return 1.0;
  }
  return 1.0;
}

}  // namespace

NetParams init_net(NetRole role, std::vector<LayerSpec> layers, std::mt19937_64& rng) {
  NetParams p;
  p.role = role;
  p.layers = std::move(layers);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const LayerSpec& s : p.layers) {
    const double fan_in = static_cast<double>(s.in);
    const double w_bound = activation_gain(s.activation) * std::sqrt(3.0 / fan_in);
    std::uniform_real_distribution<double> uw(-w_bound, w_bound);
    Matrix w(s.out, s.in);
    for (Index c = 0; c < w.cols(); ++c)
      for (Index r = 0; r < w.rows(); ++r) w(r, c) = uw(rng);
    p.weights.push_back(std::move(w));

    Matrix b;
    if (s.bias) {
      const double b_bound = 1.0 / std::sqrt(fan_in);
      std::uniform_real_distribution<double> ub(-b_bound, b_bound);
      b.resize(s.out, 1);
      for (Index r = 0; r < b.rows(); ++r) b(r, 0) = ub(rng);
    }
    p.biases.push_back(std::move(b));

    Vector u(s.out);
    for (Index r = 0; r < u.size(); ++r) u(r) = normal(rng);
    u.normalize();
    p.sn_u.push_back(std::move(u));
    p.sn_sigma.push_back(1.0);
  }
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    if (p.layers[l].spectral_normalized) p.sn_sigma[l] = power_iteration(p.weights[l], p.sn_u[l], 1);
  }
  return p;
}

NetVars bind_net(ad::Graph& g, const NetParams& p, bool trainable) {
  p.validate();
  const std::string prefix = p.role == NetRole::Encoder ? "theta" : "eta";
  NetVars v;
  for (std::size_t l = 0; l < p.depth(); ++l) {
    const std::string tag = prefix + ".w" + std::to_string(l);
    v.weights.push_back(trainable ? g.parameter(p.weights[l], tag) : g.constant(p.weights[l], tag));
    if (p.layers[l].bias) {
      const std::string btag = prefix + ".b" + std::to_string(l);
      v.biases.push_back(trainable ? g.parameter(p.biases[l], btag) : g.constant(p.biases[l], btag));
    } else {
      v.biases.emplace_back();
    }
  }
  return v;
}

Var apply_layers(const NetParams& p, const NetVars& vars, Var x) {
  if (x.rows() != p.input_dim()) {
    throw ShapeError(std::string(p.role == NetRole::Encoder ? "encoder" : "decoder") + " expects " +
                     std::to_string(p.input_dim()) + "-dim columns, got " + std::to_string(x.rows()));
  }
  Var h = x;
  for (std::size_t l = 0; l < p.depth(); ++l) {
    const LayerSpec& s = p.layers[l];
    Var w = vars.weights[l];
    // sigma_hat is a constant within the step.
    if (s.spectral_normalized) w = scale(w, 1.0 / p.sn_sigma[l]);
    h = matmul(w, h);
    if (s.bias) h = add_column(h, vars.biases[l]);
    if (s.activation != Activation::None) h = activate(h, s.activation, kLeakySlope);
  }
  return h;
}

Var encode(const NetParams& theta, const NetVars& vars, Var x) { return normalize_cols(apply_layers(theta, vars, x)); }

Var decode(const NetParams& eta, const NetVars& vars, Var z) { return apply_layers(eta, vars, z); }

ClosedLoop closed_loop(const NetParams& theta, const NetVars& theta_vars, const NetParams& eta,
                       const NetVars& eta_vars, Var x) {
  if (eta.input_dim() != theta.output_dim() || eta.output_dim() != theta.input_dim()) {
    throw ShapeError("decoder " + shape_str(eta.output_dim(), eta.input_dim()) + " does not invert encoder " +
                     shape_str(theta.output_dim(), theta.input_dim()));
  }
  ClosedLoop loop;
  loop.z = encode(theta, theta_vars, x);
  loop.x_hat = decode(eta, eta_vars, loop.z);
  loop.z_hat = encode(theta, theta_vars, loop.x_hat);
  return loop;
}

Matrix encode_values(const NetParams& theta, const Matrix& x) {
  ad::Graph g;
  const NetVars v = bind_net(g, theta, false);
  const Var in = g.constant(x, "x");
  encode(theta, v, in);
  return g.forward();
}

Matrix decode_values(const NetParams& eta, const Matrix& z) {
  ad::Graph g;
  const NetVars v = bind_net(g, eta, false);
  const Var in = g.constant(z, "z");
  decode(eta, v, in);
  return g.forward();
}

double power_iteration(const Matrix& w, Vector& u, int iterations) {
  constexpr double kFloor = 1e-12;
  if (u.size() != w.rows()) throw ShapeError("power iteration vector does not match " + shape_str(w));
  double sigma = kFloor;
  for (int it = 0; it < iterations; ++it) {
    Vector v = w.transpose() * u;
    const double vn = v.norm();
    if (!(vn > kFloor)) return kFloor;
    v /= vn;
    Vector wu = w * v;
    const double un = wu.norm();
    if (!(un > kFloor)) return kFloor;
    u = wu / un;
    sigma = un;  // u^T W v with u = Wv/|Wv|
  }
  return std::max(sigma, kFloor);
}

Matrix spectral_normalize(const Matrix& w, Vector& u, int iterations) {
  return w / power_iteration(w, u, iterations);
}

void update_spectral_estimates(NetParams& p, int iterations) {
  for (std::size_t l = 0; l < p.depth(); ++l) {
    if (p.layers[l].spectral_normalized) p.sn_sigma[l] = power_iteration(p.weights[l], p.sn_u[l], iterations);
  }
}

}  // namespace ldr
