#pragma once

// Encoder f(., theta) and decoder g(., eta) as multilayer perceptrons over the
// autograd graph.  Samples and features are columns.

#include "ldr/autograd.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace ldr {

enum class NetRole : std::uint32_t { Encoder = 0, Decoder = 1 };

inline constexpr double kLeakySlope = 0.2;

struct LayerSpec {
  Index in = 0;
  Index out = 0;
  ad::Activation activation = ad::Activation::None;
  bool spectral_normalized = false;
  bool bias = true;
};

// Layer chain in -> hidden... -> out with the given hidden/output activations.
std::vector<LayerSpec> mlp_layers(Index in, const std::vector<Index>& hidden, Index out, ad::Activation hidden_act,
                                  ad::Activation output_act, bool spectral_normalized = false);

struct NetParams {
  NetRole role = NetRole::Encoder;
  std::vector<LayerSpec> layers;
  std::vector<Matrix> weights;  // out x in
  std::vector<Matrix> biases;   // out x 1; empty for bias-free layers
  // Power-iteration state per layer (left singular vector estimate) and the
  // current top singular value estimate. Unused for plain layers.
  std::vector<Vector> sn_u;
  std::vector<double> sn_sigma;

  Index input_dim() const { return layers.front().in; }
  Index output_dim() const { return layers.back().out; }
  std::size_t depth() const { return layers.size(); }
  bool any_spectral() const;
  // Throws ShapeError/NumericalError if the parameters break the layer chain.
  void validate() const;
};

// Fan-in scaled uniform init with activation gain; biases U(-1/sqrt(fan_in), .).
NetParams init_net(NetRole role, std::vector<LayerSpec> layers, std::mt19937_64& rng);

struct NetVars {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;  // invalid Var for bias-free layers
};

// Declares the parameters as leaves of g. Trainable leaves receive gradients;
// frozen ones are plain inputs.
NetVars bind_net(ad::Graph& g, const NetParams& p, bool trainable);

ad::Var apply_layers(const NetParams& p, const NetVars& vars, ad::Var x);
// f(x): layers followed by projection of each column onto the unit sphere.
ad::Var encode(const NetParams& theta, const NetVars& vars, ad::Var x);
ad::Var decode(const NetParams& eta, const NetVars& vars, ad::Var z);

struct ClosedLoop {
  ad::Var z;
  ad::Var x_hat;
  ad::Var z_hat;
};

// Z = f(X), X_hat = g(Z), Z_hat = f(X_hat), reusing the same theta leaves.
ClosedLoop closed_loop(const NetParams& theta, const NetVars& theta_vars, const NetParams& eta,
                       const NetVars& eta_vars, ad::Var x);

// Graph-free evaluation.
Matrix encode_values(const NetParams& theta, const Matrix& x);
Matrix decode_values(const NetParams& eta, const Matrix& z);

// Power iteration for the top singular value of w. Runs `iterations` steps
// starting from the left vector u (updated in place) and returns the estimate,
// floored at 1e-12.
double power_iteration(const Matrix& w, Vector& u, int iterations = 1);
// w / sigma_hat after `iterations` power steps on u.
Matrix spectral_normalize(const Matrix& w, Vector& u, int iterations = 1);
// One power step per spectral layer; refreshes sn_sigma.
void update_spectral_estimates(NetParams& p, int iterations = 1);

}  // namespace ldr
