#include "ldr/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace ldr {

namespace {
constexpr double kTinySigma = 1e-12;
}

SubspaceModel fit_subspace(const Matrix& zj, const RankRule& rule, int label) {
  if (zj.cols() < 2) throw UsageError("fit_subspace needs at least 2 samples, got " + std::to_string(zj.cols()));
  SubspaceModel model;
  model.label = label;
  model.sample_count = zj.cols();
  model.mean = zj.rowwise().mean();
  const Matrix centered = zj.colwise() - model.mean;

  Eigen::JacobiSVD<Matrix> svd(centered, Eigen::ComputeThinU);
  const Vector s = svd.singularValues() / std::sqrt(static_cast<double>(zj.cols()));

  Index rank = 0;
  if (s.size() > 0 && s(0) > kTinySigma) {
    for (Index i = 0; i < s.size(); ++i) {
      if (s(i) <= kTinySigma) break;
      if (rule.fixed_rank > 0 ? i < rule.fixed_rank : s(i) >= rule.tau * s(0)) ++rank;
    }
  }
  model.sigma = s.head(rank);
  model.basis = svd.matrixU().leftCols(rank);
  return model;
}

std::vector<SubspaceModel> fit_subspaces(const Matrix& z, const std::vector<int>& labels, int num_classes,
                                         const RankRule& rule) {
  std::vector<SubspaceModel> models;
  for (int j = 0; j < num_classes; ++j) {
    std::vector<Index> cols;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == j) cols.push_back(static_cast<Index>(i));
    }
    Matrix zj(z.rows(), static_cast<Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) zj.col(static_cast<Index>(i)) = z.col(cols[i]);
    models.push_back(fit_subspace(zj, rule, j));
  }
  return models;
}

double residual_energy(const SubspaceModel& model, const Matrix& zj) {
  const Matrix centered = zj.colwise() - model.mean;
  const Matrix resid = centered - model.basis * (model.basis.transpose() * centered);
  return resid.squaredNorm() / static_cast<double>(zj.cols());
}

FeatureSample sample_feature(const SubspaceModel& model, double range, std::mt19937_64& rng) {
  FeatureSample out;
  out.raw = model.mean;
  if (model.rank() == 0) {
    out.degenerate = true;
  } else {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector coeff(model.rank());
    for (Index i = 0; i < coeff.size(); ++i) coeff(i) = normal(rng);
    out.raw += range * (model.basis * coeff.cwiseProduct(model.sigma));
  }
  const double norm = out.raw.norm();
  if (!(norm > 0.0)) throw NumericalError("sampled feature has zero norm");
  out.feature = out.raw / norm;
  return out;
}

FeatureSample sample_feature(const SubspaceModel& model, double range, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_feature(model, range, rng);
}

double subspace_residual(const SubspaceModel& model, const Vector& z) {
  const Vector c = z - model.mean;
  return (c - model.basis * (model.basis.transpose() * c)).norm();
}

int classify_nearest_subspace(const Vector& z, const std::vector<SubspaceModel>& models) {
  if (models.empty()) throw UsageError("no subspace models to classify against");
  int best = 0;
  double best_res = subspace_residual(models[0], z);
  for (std::size_t j = 1; j < models.size(); ++j) {
    const double r = subspace_residual(models[j], z);
    if (r < best_res) {
      best_res = r;
      best = static_cast<int>(j);
    }
  }
  return models[static_cast<std::size_t>(best)].label;
}

std::vector<int> classify_nearest_subspace(const Matrix& z, const std::vector<SubspaceModel>& models) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(z.cols()));
  for (Index i = 0; i < z.cols(); ++i) out.push_back(classify_nearest_subspace(Vector(z.col(i)), models));
  return out;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size() || truth.empty()) throw UsageError("accuracy needs equal, non-empty lists");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

AlignmentReport alignment_heatmap(const Matrix& z, const Matrix& z_hat, const std::vector<int>& labels,
                                  int num_classes) {
  if (z.rows() != z_hat.rows() || z.cols() != z_hat.cols()) {
    throw ShapeError("alignment_heatmap: Z is " + shape_str(z) + " but Z_hat is " + shape_str(z_hat));
  }
  if (static_cast<Index>(labels.size()) != z.cols()) throw ShapeError("alignment_heatmap: label count mismatch");

  std::vector<Index> order(labels.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return labels[static_cast<std::size_t>(a)] < labels[static_cast<std::size_t>(b)];
  });
  Matrix zs(z.rows(), z.cols());
  Matrix hs(z.rows(), z.cols());
  AlignmentReport rep;
  for (std::size_t i = 0; i < order.size(); ++i) {
    zs.col(static_cast<Index>(i)) = z.col(order[i]);
    hs.col(static_cast<Index>(i)) = z_hat.col(order[i]);
    rep.labels.push_back(labels[static_cast<std::size_t>(order[i])]);
  }
  rep.cosine = (zs.transpose() * hs).cwiseAbs();

  Matrix sums = Matrix::Zero(num_classes, num_classes);
  Matrix counts = Matrix::Zero(num_classes, num_classes);
  double on_sum = 0.0, off_sum = 0.0, on_n = 0.0, off_n = 0.0;
  for (Index a = 0; a < rep.cosine.rows(); ++a) {
    const int la = rep.labels[static_cast<std::size_t>(a)];
    for (Index b = 0; b < rep.cosine.cols(); ++b) {
      const int lb = rep.labels[static_cast<std::size_t>(b)];
      const double v = rep.cosine(a, b);
      sums(la, lb) += v;
      counts(la, lb) += 1.0;
      if (la == lb) {
        on_sum += v;
        on_n += 1.0;
      } else {
        off_sum += v;
        off_n += 1.0;
      }
    }
  }
  rep.block_means = sums.cwiseQuotient(counts.cwiseMax(1.0));
  rep.on_block_mean = on_n > 0 ? on_sum / on_n : 0.0;
  rep.off_block_mean = off_n > 0 ? off_sum / off_n : 0.0;
  return rep;
}

std::vector<InterpolationFrame> interpolate(const Vector& x1, const Vector& x2, int steps, const NetParams& theta,
                                            const NetParams& eta) {
  if (steps < 1) throw UsageError("interpolate needs at least one step");
  Matrix xs(x1.size(), 2);
  xs.col(0) = x1;
  xs.col(1) = x2;
  const Matrix f = encode_values(theta, xs);

  std::vector<InterpolationFrame> frames;
  std::vector<Index> live;
  Matrix feats(f.rows(), steps + 1);
  for (int i = 0; i <= steps; ++i) {
    InterpolationFrame fr;
    fr.weight = static_cast<double>(i) / static_cast<double>(steps);
    Vector blend;
    if (i == steps) {
      blend = f.col(0);
    } else if (i == 0) {
      blend = f.col(1);
    } else {
      blend = fr.weight * f.col(0) + (1.0 - fr.weight) * f.col(1);
      const double n = blend.norm();
      if (n < 1e-8) {
        fr.skipped = true;
      } else {
        blend /= n;
      }
    }
    if (!fr.skipped) {
      feats.col(static_cast<Index>(live.size())) = blend;
      live.push_back(i);
    }
    frames.push_back(std::move(fr));
  }
  if (!live.empty()) {
    const Matrix decoded = decode_values(eta, feats.leftCols(static_cast<Index>(live.size())));
    for (std::size_t c = 0; c < live.size(); ++c) {
      frames[static_cast<std::size_t>(live[c])].sample = decoded.col(static_cast<Index>(c));
    }
  }
  return frames;
}

ComponentMatches nearest_to_component(const Matrix& zj, const Matrix& x_hat_j, const SubspaceModel& model,
                                      Index component, Index top_m, bool signed_score) {
  if (component < 0 || component >= model.rank()) {
    throw UsageError("component " + std::to_string(component) + " outside model rank " + std::to_string(model.rank()));
  }
  if (zj.cols() != x_hat_j.cols()) throw ShapeError("nearest_to_component: features and samples differ in count");
  const Vector dir = model.basis.col(component);
  std::vector<double> score(static_cast<std::size_t>(zj.cols()));
  for (Index i = 0; i < zj.cols(); ++i) {
    const double dot = zj.col(i).dot(dir);
    score[static_cast<std::size_t>(i)] = signed_score ? dot : std::abs(dot);
  }
  std::vector<Index> order(score.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return score[static_cast<std::size_t>(a)] > score[static_cast<std::size_t>(b)];
  });
  ComponentMatches out;
  out.truncated = top_m > zj.cols();
  const Index m = std::min(top_m, zj.cols());
  for (Index i = 0; i < m; ++i) {
    const Index c = order[static_cast<std::size_t>(i)];
    out.matches.push_back({c, score[static_cast<std::size_t>(c)], x_hat_j.col(c)});
  }
  return out;
}

std::vector<std::uint8_t> pgm_bytes(const Matrix& values, double lo, double hi) {
  if (!(hi > lo)) throw UsageError("pgm range must satisfy lo < hi");
  const std::string header =
      "P5\n" + std::to_string(values.cols()) + " " + std::to_string(values.rows()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (Index r = 0; r < values.rows(); ++r) {
    for (Index c = 0; c < values.cols(); ++c) {
      const double t = std::clamp((values(r, c) - lo) / (hi - lo), 0.0, 1.0);
      out.push_back(static_cast<std::uint8_t>(std::lround(t * 255.0)));
    }
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, const Matrix& values, double lo, double hi) {
  const auto bytes = pgm_bytes(values, lo, hi);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace ldr
