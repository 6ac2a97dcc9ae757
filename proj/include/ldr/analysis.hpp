#pragma once

// Tools over learned features: per-class principal subspaces, Gaussian
// sampling along principal components, nearest-subspace classification,
// |Z^T Z_hat| alignment, interpolation and component retrieval.

#include "ldr/nets.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace ldr {

inline constexpr double kDefaultRankThreshold = 0.1;

struct RankRule {
  double tau = kDefaultRankThreshold;  // keep sigma_i >= tau * sigma_1
  Index fixed_rank = 0;                // > 0 overrides tau
};

// Principal model of one class of features. `sigma` are the principal
// standard deviations: singular values of the centered samples divided by
// sqrt(sample_count).
struct SubspaceModel {
  int label = 0;
  Vector mean;
  Vector sigma;   // nonincreasing, all > 0
  Matrix basis;   // d x rank, orthonormal columns
  Index sample_count = 0;

  Index rank() const { return basis.cols(); }
  Index dim() const { return mean.size(); }
};

SubspaceModel fit_subspace(const Matrix& zj, const RankRule& rule = {}, int label = 0);
std::vector<SubspaceModel> fit_subspaces(const Matrix& z, const std::vector<int>& labels, int num_classes,
                                         const RankRule& rule = {});

// Mean squared distance of the samples from their projection onto the model's
// affine subspace.
double residual_energy(const SubspaceModel& model, const Matrix& zj);

struct FeatureSample {
  Vector raw;         // before projection to the sphere
  Vector feature;     // unit norm
  bool degenerate = false;  // rank-0 model: mean only
};

// z = mean + range * sum_i n_i sigma_i v_i with n_i ~ N(0, 1), then normalized.
FeatureSample sample_feature(const SubspaceModel& model, double range, std::mt19937_64& rng);
FeatureSample sample_feature(const SubspaceModel& model, double range, std::uint64_t seed);

// Residual |(I - V V^T)(z - mean)| against one model.
double subspace_residual(const SubspaceModel& model, const Vector& z);
// argmin_j of the residual; ties go to the lower class index.
int classify_nearest_subspace(const Vector& z, const std::vector<SubspaceModel>& models);
std::vector<int> classify_nearest_subspace(const Matrix& z, const std::vector<SubspaceModel>& models);
double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth);

struct AlignmentReport {
  Matrix cosine;              // |Z^T Z_hat| with rows/cols ordered by class
  std::vector<int> labels;    // class of each row/column after ordering
  Matrix block_means;         // k x k mean of each class block
  double on_block_mean = 0.0;
  double off_block_mean = 0.0;

  // off-block mean / on-block mean; small means block diagonal.
  double block_score() const { return on_block_mean > 0.0 ? off_block_mean / on_block_mean : 0.0; }
};

AlignmentReport alignment_heatmap(const Matrix& z, const Matrix& z_hat, const std::vector<int>& labels,
                                  int num_classes);

struct InterpolationFrame {
  double weight = 0.0;  // alpha in alpha f(x1) + (1 - alpha) f(x2)
  Vector sample;        // decoded; empty when skipped
  bool skipped = false;  // blended feature too close to zero to normalize
};

std::vector<InterpolationFrame> interpolate(const Vector& x1, const Vector& x2, int steps, const NetParams& theta,
                                            const NetParams& eta);

struct ComponentMatch {
  Index column = 0;  // column within Z_j
  double score = 0.0;
  Vector decoded;
};

struct ComponentMatches {
  std::vector<ComponentMatch> matches;
  bool truncated = false;  // fewer than top_m samples were available
};

// Samples of class j ranked by |<z, v_l>| (or the signed value), descending.
ComponentMatches nearest_to_component(const Matrix& zj, const Matrix& x_hat_j, const SubspaceModel& model,
                                      Index component, Index top_m, bool signed_score = false);

// 8-bit binary portable graymap. Values are clamped to [lo, hi] and mapped
// linearly onto 0..255.
void write_pgm(const std::filesystem::path& path, const Matrix& values, double lo = 0.0, double hi = 1.0);
std::vector<std::uint8_t> pgm_bytes(const Matrix& values, double lo = 0.0, double hi = 1.0);

}  // namespace ldr
