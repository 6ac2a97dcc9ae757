#include "ldr/rate.hpp"

#include <cmath>

namespace ldr {

using ad::Graph;
using ad::Var;

RateParams RateParams::for_shape(Index d, Index n, double epsilon_sq) {
  if (d <= 0 || n <= 0) throw ShapeError("rate params need d, n > 0, got " + shape_str(d, n));
  if (!(epsilon_sq > 0.0)) throw UsageError("epsilon^2 must be positive");
  return {epsilon_sq, d, n};
}

Membership::Membership(std::vector<int> labels, int num_classes)
    : labels_(std::move(labels)), k_(num_classes), columns_(static_cast<std::size_t>(num_classes)) {
  if (num_classes <= 0) throw UsageError("membership needs at least one class");
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    const int c = labels_[i];
    if (c < 0 || c >= num_classes) {
      throw UsageError("label " + std::to_string(c) + " at column " + std::to_string(i) + " outside [0, " +
                       std::to_string(num_classes) + ")");
    }
    columns_[static_cast<std::size_t>(c)].push_back(static_cast<Index>(i));
  }
}

void Membership::require_nonempty_classes() const {
  for (int j = 0; j < k_; ++j) {
    if (columns_[static_cast<std::size_t>(j)].empty()) {
      throw UsageError("class " + std::to_string(j) + " has no samples in this batch");
    }
  }
}

std::string_view objective_name(Objective o) {
  switch (o) {
    case Objective::Multi: return "multi";
    case Objective::Binary: return "binary";
    case Objective::AblationI: return "ablation1";
    case Objective::AblationII: return "ablation2";
    case Objective::AblationIII: return "ablation3";
    case Objective::CrossEntropy: return "ce";
  }
  return "?";
}

Objective parse_objective(std::string_view name) {
  for (Objective o : {Objective::Multi, Objective::Binary, Objective::AblationI, Objective::AblationII,
                      Objective::AblationIII, Objective::CrossEntropy}) {
    if (objective_name(o) == name) return o;
  }
  throw UsageError("unknown objective variant '" + std::string(name) + "'");
}

Var half_logdet_gram(Var z, double alpha) {
  const Var gram = z.rows() <= z.cols() ? matmul(z, transpose(z)) : matmul(transpose(z), z);
  return scale(logdet_spd(add_identity(scale(gram, alpha))), 0.5);
}

double half_logdet_gram_value(const Matrix& z, double alpha) {
  Matrix m = z.rows() <= z.cols() ? Matrix(z * z.transpose()) : Matrix(z.transpose() * z);
  m *= alpha;
  m.diagonal().array() += 1.0;
  return 0.5 * ad::logdet_spd_value(m);
}

Var coding_rate(Var z, const RateParams& p) {
  if (z.rows() != p.d || z.cols() != p.n) {
    throw ShapeError("coding_rate: features are " + shape_str(z.rows(), z.cols()) + " but params expect " +
                     shape_str(p.d, p.n));
  }
  return half_logdet_gram(z, p.alpha());
}

Var coding_rate(Var z, double epsilon_sq) { return coding_rate(z, RateParams::for_shape(z.rows(), z.cols(), epsilon_sq)); }

Var class_coding_rate(Var z, const Membership& m, const RateParams& p) {
  if (m.size() != z.cols()) {
    throw ShapeError("class_coding_rate: membership covers " + std::to_string(m.size()) + " columns, features have " +
                     std::to_string(z.cols()));
  }
  m.require_nonempty_classes();
  Var total;
  for (int j = 0; j < m.num_classes(); ++j) {
    const Var zj = gather_cols(z, m.columns(j));
    const Var term = scale(half_logdet_gram(zj, m.alpha(j, p.d, p.epsilon_sq)), m.gamma(j));
    total = total.valid() ? add(total, term) : term;
  }
  return total;
}

Var delta_r(Var z, const Membership& m, const RateParams& p) {
  return sub(coding_rate(z, p), class_coding_rate(z, m, p));
}

Var delta_r(Var z, const Membership& m, double epsilon_sq) {
  return delta_r(z, m, RateParams::for_shape(z.rows(), z.cols(), epsilon_sq));
}

Var pairwise_delta_r(Var zj, Var zj_hat, double epsilon_sq) {
  if (zj.cols() != zj_hat.cols() || zj.rows() != zj_hat.rows()) {
    throw ShapeError("pairwise_delta_r: sets must have equal size, got " + shape_str(zj.rows(), zj.cols()) + " and " +
                     shape_str(zj_hat.rows(), zj_hat.cols()));
  }
  const RateParams part = RateParams::for_shape(zj.rows(), zj.cols(), epsilon_sq);
  const Var joint = coding_rate(concat_cols(zj, zj_hat), part.doubled());
  return sub(joint, scale(add(coding_rate(zj, part), coding_rate(zj_hat, part)), 0.5));
}

namespace {

void require_aligned(Var z, Var z_hat, const Membership& m, const char* who) {
  if (z.rows() != z_hat.rows() || z.cols() != z_hat.cols()) {
    throw ShapeError(std::string(who) + ": Z is " + shape_str(z.rows(), z.cols()) + " but Z_hat is " +
                     shape_str(z_hat.rows(), z_hat.cols()));
  }
  if (m.size() != z.cols()) {
    throw ShapeError(std::string(who) + ": membership covers " + std::to_string(m.size()) + " columns, batch has " +
                     std::to_string(z.cols()));
  }
  m.require_nonempty_classes();
}

Var pairwise_sum(Var z, Var z_hat, const Membership& m, double epsilon_sq) {
  Var total;
  for (int j = 0; j < m.num_classes(); ++j) {
    const Var term = pairwise_delta_r(gather_cols(z, m.columns(j)), gather_cols(z_hat, m.columns(j)), epsilon_sq);
    total = total.valid() ? add(total, term) : term;
  }
  return total;
}

}  // namespace

ObjectiveTerms objective_multi(Var z, Var z_hat, const Membership& m, double epsilon_sq) {
  require_aligned(z, z_hat, m, "objective_multi");
  ObjectiveTerms t;
  t.delta_r_z = delta_r(z, m, epsilon_sq);
  t.delta_r_zhat = delta_r(z_hat, m, epsilon_sq);
  t.pairwise_sum = pairwise_sum(z, z_hat, m, epsilon_sq);
  t.total = add(add(t.delta_r_z, t.delta_r_zhat), t.pairwise_sum);
  return t;
}

Var objective_binary(Var z, Var z_hat, double epsilon_sq) { return pairwise_delta_r(z, z_hat, epsilon_sq); }

ObjectiveTerms objective_ablation(Objective variant, Var z, Var z_hat, const Membership& m, double epsilon_sq) {
  switch (variant) {
    case Objective::AblationI:
      return objective_multi(z, z_hat, m, epsilon_sq);
    case Objective::AblationII: {
      require_aligned(z, z_hat, m, "objective_ablation");
      ObjectiveTerms t;
      t.delta_r_z = delta_r(z, m, epsilon_sq);
      t.pairwise_sum = pairwise_sum(z, z_hat, m, epsilon_sq);
      t.total = add(t.delta_r_z, t.pairwise_sum);
      return t;
    }
    case Objective::AblationIII: {
      require_aligned(z, z_hat, m, "objective_ablation");
      ObjectiveTerms t;
      t.pairwise_sum = pairwise_sum(z, z_hat, m, epsilon_sq);
      t.total = t.pairwise_sum;
      return t;
    }
    default:
      throw UsageError("objective_ablation: variant '" + std::string(objective_name(variant)) +
                       "' is not an ablation variant");
  }
}

Var softmax_cross_entropy(Var logits, const Membership& m) {
  if (logits.rows() != m.num_classes() || logits.cols() != m.size()) {
    throw ShapeError("softmax_cross_entropy: logits " + shape_str(logits.rows(), logits.cols()) + " vs " +
                     std::to_string(m.num_classes()) + " classes, " + std::to_string(m.size()) + " samples");
  }
  Matrix onehot = Matrix::Zero(m.num_classes(), m.size());
  for (Index i = 0; i < m.size(); ++i) onehot(m.labels()[static_cast<std::size_t>(i)], i) = 1.0;
  Graph& g = logits.graph();
  const Var picked = sum(hadamard(log_softmax_cols(logits), g.constant(onehot, "onehot")));
  return scale(picked, -1.0 / static_cast<double>(m.size()));
}

ObjectiveTerms objective_ce_baseline(Var z, Var z_hat, const Membership& m, const CeHeadVars& heads) {
  require_aligned(z, z_hat, m, "objective_ce_baseline");
  const Index k = m.num_classes();
  if (heads.w.rows() != z.rows() || heads.w.cols() != k) {
    throw ShapeError("objective_ce_baseline: W is " + shape_str(heads.w.rows(), heads.w.cols()) + ", expected " +
                     shape_str(z.rows(), k));
  }
  if (heads.disc_w.rows() != k || heads.disc_w.cols() != z.rows() || heads.disc_b.rows() != k ||
      heads.disc_b.cols() != 1) {
    throw ShapeError("objective_ce_baseline: discriminator heads do not match " + std::to_string(k) + " classes");
  }
  Graph& g = z.graph();
  ObjectiveTerms t;
  const Var wt = transpose(heads.w);
  t.ce_z = softmax_cross_entropy(matmul(wt, z), m);
  t.ce_zhat = softmax_cross_entropy(matmul(wt, z_hat), m);

  Var disc;
  for (int j = 0; j < k; ++j) {
    Matrix sel = Matrix::Zero(1, k);
    sel(0, j) = 1.0;
    const Var pick = g.constant(sel, "select-class");
    const Var wj = matmul(pick, heads.disc_w);
    const Var bj = matmul(pick, heads.disc_b);
    const Var real = add_column(matmul(wj, gather_cols(z, m.columns(j))), bj);
    const Var fake = add_column(matmul(wj, gather_cols(z_hat, m.columns(j))), bj);
    const double inv_n = 1.0 / static_cast<double>(m.count(j));
    const Var term = add(scale(sum(log_sigmoid(real)), inv_n), scale(sum(log_sigmoid(scale(fake, -1.0))), inv_n));
    disc = disc.valid() ? add(disc, term) : term;
  }
  t.discriminator = disc;
  t.total = add(scale(add(t.ce_z, t.ce_zhat), -1.0), disc);
  return t;
}

ObjectiveTerms build_objective(Objective variant, Var z, Var z_hat, const Membership& m, double epsilon_sq,
                               const CeHeadVars* heads) {
  switch (variant) {
    case Objective::Multi:
      return objective_multi(z, z_hat, m, epsilon_sq);
    case Objective::Binary: {
      ObjectiveTerms t;
      t.total = objective_binary(z, z_hat, epsilon_sq);
      return t;
    }
    case Objective::AblationI:
    case Objective::AblationII:
    case Objective::AblationIII:
      return objective_ablation(variant, z, z_hat, m, epsilon_sq);
    case Objective::CrossEntropy:
      if (heads == nullptr) throw UsageError("cross-entropy objective needs its classifier heads");
      return objective_ce_baseline(z, z_hat, m, *heads);
  }
  throw UsageError("unknown objective variant");
}

}  // namespace ldr
