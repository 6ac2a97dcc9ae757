#pragma once

// Coding-rate and rate-reduction functionals as differentiable graphs.
//
//   R(Z)        = 1/2 logdet(I + alpha Z Z^T),            alpha   = d / (n eps^2)
//   Rc(Z | Pi)  = sum_j gamma_j/2 logdet(I + alpha_j Z_j Z_j^T),
//                 alpha_j = d / (n_j eps^2), gamma_j = n_j / n
//   dR(Z | Pi)  = R(Z) - Rc(Z | Pi)
//   dR(A, B)    = R(A u B) - 1/2 (R(A) + R(B))   for |A| = |B|
//
// Every logdet is taken on the smaller Gram side, using
// logdet(I_d + a Z Z^T) = logdet(I_n + a Z^T Z).

#include "ldr/autograd.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace ldr {

inline constexpr double kDefaultEpsilonSq = 0.5;

struct RateParams {
  double epsilon_sq = kDefaultEpsilonSq;
  Index d = 0;
  Index n = 0;

  double alpha() const { return static_cast<double>(d) / (static_cast<double>(n) * epsilon_sq); }

  static RateParams for_shape(Index d, Index n, double epsilon_sq = kDefaultEpsilonSq);
  // Same precision, n doubled: the parameters of a union of two equal batches.
  RateParams doubled() const { return {epsilon_sq, d, 2 * n}; }
};

// Class assignment of each column (0-based class indices).
class Membership {
 public:
  Membership() = default;
  Membership(std::vector<int> labels, int num_classes);

  int num_classes() const { return k_; }
  Index size() const { return static_cast<Index>(labels_.size()); }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<Index>& columns(int j) const { return columns_.at(static_cast<std::size_t>(j)); }
  Index count(int j) const { return static_cast<Index>(columns(j).size()); }
  double gamma(int j) const { return static_cast<double>(count(j)) / static_cast<double>(size()); }
  double alpha(int j, Index d, double epsilon_sq) const {
    return static_cast<double>(d) / (static_cast<double>(count(j)) * epsilon_sq);
  }
  // Throws if some class has no columns.
  void require_nonempty_classes() const;

 private:
  std::vector<int> labels_;
  int k_ = 0;
  std::vector<std::vector<Index>> columns_;
};

enum class Objective { Multi, Binary, AblationI, AblationII, AblationIII, CrossEntropy };

std::string_view objective_name(Objective o);
Objective parse_objective(std::string_view name);

// 1/2 logdet(I + alpha Z Z^T), factorized on the smaller side.
ad::Var half_logdet_gram(ad::Var z, double alpha);
double half_logdet_gram_value(const Matrix& z, double alpha);

ad::Var coding_rate(ad::Var z, const RateParams& p);
ad::Var coding_rate(ad::Var z, double epsilon_sq = kDefaultEpsilonSq);
ad::Var class_coding_rate(ad::Var z, const Membership& m, const RateParams& p);
ad::Var delta_r(ad::Var z, const Membership& m, const RateParams& p);
ad::Var delta_r(ad::Var z, const Membership& m, double epsilon_sq = kDefaultEpsilonSq);
ad::Var pairwise_delta_r(ad::Var zj, ad::Var zj_hat, double epsilon_sq = kDefaultEpsilonSq);

// Per-term handles of an objective. Terms a variant does not use are left
// invalid; total is always set.
struct ObjectiveTerms {
  ad::Var delta_r_z;      // dR(Z)
  ad::Var delta_r_zhat;   // dR(Z_hat)
  ad::Var pairwise_sum;   // sum_j dR(Z_j, Z_hat_j)
  ad::Var ce_z;           // cross-entropy baseline pieces
  ad::Var ce_zhat;
  ad::Var discriminator;
  ad::Var total;
};

ObjectiveTerms objective_multi(ad::Var z, ad::Var z_hat, const Membership& m, double epsilon_sq = kDefaultEpsilonSq);
ad::Var objective_binary(ad::Var z, ad::Var z_hat, double epsilon_sq = kDefaultEpsilonSq);
// Variant must be AblationI, AblationII or AblationIII.
ObjectiveTerms objective_ablation(Objective variant, ad::Var z, ad::Var z_hat, const Membership& m,
                                  double epsilon_sq = kDefaultEpsilonSq);

// Trainable heads of the cross-entropy baseline: a class projection W (d x k)
// and one linear discriminator per class, D_j(z) = sigmoid(w_j . z + b_j),
// stacked as rows of disc_w (k x d) and disc_b (k x 1).
struct CeHeadVars {
  ad::Var w;
  ad::Var disc_w;
  ad::Var disc_b;
};

// Mean softmax cross-entropy of the columns of `logits` (k x n) against the
// membership: -1/n sum_i log softmax(logits_i)[label_i].
ad::Var softmax_cross_entropy(ad::Var logits, const Membership& m);

// T = -CE(W^T Z) - CE(W^T Z_hat)
//     + sum_j ( mean log D_j(Z_j) + mean log(1 - D_j(Z_hat_j)) )
// maximized over the encoder and heads, minimized over the decoder.
ObjectiveTerms objective_ce_baseline(ad::Var z, ad::Var z_hat, const Membership& m, const CeHeadVars& heads);

// Dispatch on the variant. `heads` is required for CrossEntropy only.
ObjectiveTerms build_objective(Objective variant, ad::Var z, ad::Var z_hat, const Membership& m,
                               double epsilon_sq, const CeHeadVars* heads = nullptr);

}  // namespace ldr
