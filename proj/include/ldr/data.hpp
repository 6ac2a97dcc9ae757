#pragma once

// Dataset providers: synthetic unions of orthogonal subspaces, IDX image
// files, the five-mode image transform, and stratified batch streams.

#include "ldr/core.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace ldr {

enum class Warp { None, Cubic, RotateRelu };

std::string warp_name(Warp w);
Warp parse_warp(const std::string& name);

struct SubspaceSpec {
  Index ambient_dim = 0;
  std::vector<Index> class_dims;  // one intrinsic dimension per class
  double noise = 0.0;             // sigma of isotropic ambient noise
  Warp warp = Warp::None;

  int num_classes() const { return static_cast<int>(class_dims.size()); }
  void validate() const;
};

struct Dataset {
  Matrix x;                // D x n, one sample per column
  std::vector<int> labels; // 0-based class per column
  int num_classes = 0;
  std::vector<Index> train;
  std::vector<Index> heldout;
  std::string normalization = "none";
  // Image geometry; zero for non-image data. Columns hold each image
  // flattened column-major (pixel (r, c) at c * rows + r).
  Index image_rows = 0;
  Index image_cols = 0;

  Index dim() const { return x.rows(); }
  Index size() const { return x.cols(); }
  Matrix columns(const std::vector<Index>& idx) const;
  std::vector<int> labels_of(const std::vector<Index>& idx) const;
  // Class-major order: class 0 columns first. Useful for stable block layouts.
  std::vector<Index> class_sorted(const std::vector<Index>& idx) const;
  Matrix image(Index column) const;
};

// Mutually orthogonal orthonormal bases, one D x d_j block per class.
std::vector<Matrix> subspace_bases(const SubspaceSpec& spec, std::uint64_t seed);

// Class j sample: warp(B_j c + noise * g), c ~ N(0, I_dj), g ~ N(0, I_D).
// Columns are class-major; every sample starts in the training split.
Dataset gen_subspaces(const SubspaceSpec& spec, Index n_per_class, std::uint64_t seed);

// Stratified split: round(fraction * n_j) samples of each class go held-out.
void split_stratified(Dataset& data, double heldout_fraction, std::uint64_t seed);

// --- IDX ---------------------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxImages {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major per image
};

IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);
void write_idx_images(const std::filesystem::path& path, const IdxImages& images);
void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels);

struct IdxLoadOptions {
  std::vector<int> class_filter;  // empty = keep all; listed digits become classes 0..k-1
  Index per_class_cap = 0;        // 0 = no cap; first images of each class are kept
  Index downsample_to = 0;        // 0 = keep native resolution
};

// Pixels scaled to [-1, 1], area-averaged to side x side when requested.
Dataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels,
                        const IdxLoadOptions& opts = {});

// Writes an image dataset back to IDX (pixels re-quantized to bytes, labels as
// class indices).
void write_idx_dataset(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels);

// Area-weighted resampling of a rows x cols image to side x side. For integer
// factors this is plain average pooling.
Matrix area_resample(const Matrix& image, Index side);

// --- modes -------------------------------------------------------------

enum class Mode { Normal, Large, Small, RotateLeft, RotateRight };

std::string mode_name(Mode m);
Mode parse_mode(const std::string& name);
const std::vector<Mode>& all_modes();

inline constexpr double kBackground = -1.0;

// Bilinear resampling about the image center; uncovered pixels get kBackground.
Matrix transform_image(const Matrix& image, Mode mode);

// Each image gets one mode drawn uniformly from `modes`.
Dataset apply_modes(const Dataset& data, const std::vector<Mode>& modes, std::uint64_t seed,
                    std::vector<Mode>* assigned = nullptr);

// --- batches -----------------------------------------------------------

struct Batch {
  Matrix x;
  std::vector<int> labels;
  std::vector<Index> indices;
};

Batch make_batch(const Dataset& data, const std::vector<Index>& indices);

// Stratified batch stream over a pool of columns. Each class contributes
// floor(batch / k) samples, the remainder rotates round-robin across classes.
// Each class pool is walked in a shuffled order without repetition and
// reshuffled once exhausted.
class StratifiedBatches {
 public:
  StratifiedBatches(const Dataset& data, const std::vector<Index>& pool, Index batch_size, std::uint64_t seed);

  Batch next();
  Index batch_size() const { return batch_size_; }

 private:
  const Dataset* data_;
  Index batch_size_;
  std::vector<std::vector<Index>> pools_;
  std::vector<std::size_t> cursor_;
  std::size_t remainder_offset_ = 0;
  std::mt19937_64 rng_;
};

// FNV-1a over the index list; used for split fingerprints in manifests.
std::uint64_t hash_indices(const std::vector<Index>& idx);

void write_manifest(const std::filesystem::path& path, const std::map<std::string, std::string>& entries);

}  // namespace ldr
