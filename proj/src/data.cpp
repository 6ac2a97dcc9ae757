#include "ldr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>

namespace ldr {

std::string warp_name(Warp w) {
  switch (w) {
    case Warp::None: return "none";
    case Warp::Cubic: return "cubic";
    case Warp::RotateRelu: return "rotate_relu";
  }
  return "?";
}

Warp parse_warp(const std::string& name) {
  for (Warp w : {Warp::None, Warp::Cubic, Warp::RotateRelu}) {
    if (warp_name(w) == name) return w;
  }
  throw UsageError("unknown warp '" + name + "'");
}

void SubspaceSpec::validate() const {
  if (ambient_dim <= 0) throw DataError("ambient dimension must be positive");
  if (class_dims.empty()) throw DataError("need at least one class");
  Index total = 0;
  for (Index dj : class_dims) {
    if (dj < 1) throw DataError("class subspace dimension must be >= 1");
    total += dj;
  }
  if (total > ambient_dim) {
    throw DataError("sum of class dimensions " + std::to_string(total) + " exceeds ambient dimension " +
                    std::to_string(ambient_dim));
  }
  if (noise < 0.0) throw DataError("noise level must be non-negative");
}

Matrix Dataset::columns(const std::vector<Index>& idx) const {
  Matrix out(x.rows(), static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out.col(static_cast<Index>(i)) = x.col(idx[i]);
  return out;
}

std::vector<int> Dataset::labels_of(const std::vector<Index>& idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (Index i : idx) out.push_back(labels[static_cast<std::size_t>(i)]);
  return out;
}

std::vector<Index> Dataset::class_sorted(const std::vector<Index>& idx) const {
  std::vector<Index> out = idx;
  std::stable_sort(out.begin(), out.end(), [this](Index a, Index b) {
    return labels[static_cast<std::size_t>(a)] < labels[static_cast<std::size_t>(b)];
  });
  return out;
}

Matrix Dataset::image(Index column) const {
  if (image_rows == 0) throw DataError("dataset holds no images");
  return Eigen::Map<const Matrix>(x.col(column).data(), image_rows, image_cols);
}

namespace {

Matrix gaussian(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) m(r, c) = normal(rng);
  return m;
}

Matrix orthonormal_columns(Index rows, Index cols, std::mt19937_64& rng) {
  const Matrix g = gaussian(rows, cols, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(rows, cols);
  // Fix the sign ambiguity so the basis is a deterministic function of g.
  const Matrix r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
  for (Index j = 0; j < cols; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  return q;
}

}  // namespace

std::vector<Matrix> subspace_bases(const SubspaceSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  Index total = 0;
  for (Index dj : spec.class_dims) total += dj;
  const Matrix q = orthonormal_columns(spec.ambient_dim, total, rng);
  std::vector<Matrix> bases;
  Index offset = 0;
  for (Index dj : spec.class_dims) {
    bases.push_back(q.middleCols(offset, dj));
    offset += dj;
  }
  return bases;
}

Dataset gen_subspaces(const SubspaceSpec& spec, Index n_per_class, std::uint64_t seed) {
  spec.validate();
  if (n_per_class <= 0) throw DataError("need at least one sample per class");
  const std::vector<Matrix> bases = subspace_bases(spec, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);

  const int k = spec.num_classes();
  Dataset data;
  data.num_classes = k;
  data.x.resize(spec.ambient_dim, n_per_class * k);
  data.labels.reserve(static_cast<std::size_t>(n_per_class * k));
  Index col = 0;
  for (int j = 0; j < k; ++j) {
    const Matrix& b = bases[static_cast<std::size_t>(j)];
    const Matrix coeff = gaussian(b.cols(), n_per_class, rng);
    Matrix xs = b * coeff;
    if (spec.noise > 0.0) xs += spec.noise * gaussian(spec.ambient_dim, n_per_class, rng);
    data.x.middleCols(col, n_per_class) = xs;
    for (Index i = 0; i < n_per_class; ++i) data.labels.push_back(j);
    col += n_per_class;
  }

  switch (spec.warp) {
    case Warp::None:
      break;
    case Warp::Cubic:
      data.x = data.x.unaryExpr([](double v) { return v + v * v * v; });
      break;
    case Warp::RotateRelu: {
      const Matrix rot = orthonormal_columns(spec.ambient_dim, spec.ambient_dim, rng);
      data.x = (rot * data.x).cwiseMax(0.0);
      break;
    }
  }

  data.train.resize(static_cast<std::size_t>(data.size()));
  std::iota(data.train.begin(), data.train.end(), Index{0});
  return data;
}

void split_stratified(Dataset& data, double heldout_fraction, std::uint64_t seed) {
  if (heldout_fraction < 0.0 || heldout_fraction >= 1.0) throw DataError("held-out fraction must lie in [0, 1)");
  std::mt19937_64 rng(seed ^ 0x51ed270b27e1f1e5ULL);
  std::vector<std::vector<Index>> per_class(static_cast<std::size_t>(data.num_classes));
  for (Index i = 0; i < data.size(); ++i) per_class[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)])].push_back(i);
  data.train.clear();
  data.heldout.clear();
  for (auto& idx : per_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto held = static_cast<std::size_t>(std::llround(heldout_fraction * static_cast<double>(idx.size())));
    data.heldout.insert(data.heldout.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(held));
    data.train.insert(data.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(held), idx.end());
  }
  std::sort(data.train.begin(), data.train.end());
  std::sort(data.heldout.begin(), data.heldout.end());
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& buf, std::size_t off) {
  return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) | (std::uint32_t{buf[off + 2]} << 8) |
         std::uint32_t{buf[off + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                         static_cast<char>(v)};
  out.write(bytes, 4);
}

}  // namespace

IdxImages read_idx_images(const std::filesystem::path& path) {
  const auto buf = read_file(path);
  if (buf.size() < 16) throw DataError(path.string() + ": truncated IDX header");
  if (be32(buf, 0) != kIdxImageMagic) throw DataError(path.string() + ": bad IDX image magic");
  IdxImages img;
  img.count = be32(buf, 4);
  img.rows = be32(buf, 8);
  img.cols = be32(buf, 12);
  const std::size_t expected = std::size_t{img.count} * img.rows * img.cols;
  if (buf.size() - 16 < expected) {
    throw DataError(path.string() + ": truncated IDX image data (" + std::to_string(buf.size() - 16) + " of " +
                    std::to_string(expected) + " bytes)");
  }
  img.pixels.assign(buf.begin() + 16, buf.begin() + 16 + static_cast<std::ptrdiff_t>(expected));
  return img;
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
  const auto buf = read_file(path);
  if (buf.size() < 8) throw DataError(path.string() + ": truncated IDX header");
  if (be32(buf, 0) != kIdxLabelMagic) throw DataError(path.string() + ": bad IDX label magic");
  const std::uint32_t count = be32(buf, 4);
  if (buf.size() - 8 < count) throw DataError(path.string() + ": truncated IDX label data");
  return {buf.begin() + 8, buf.begin() + 8 + count};
}

void write_idx_images(const std::filesystem::path& path, const IdxImages& images) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  put_be32(out, kIdxImageMagic);
  put_be32(out, images.count);
  put_be32(out, images.rows);
  put_be32(out, images.cols);
  out.write(reinterpret_cast<const char*>(images.pixels.data()), static_cast<std::streamsize>(images.pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  put_be32(out, kIdxLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

Matrix area_resample(const Matrix& image, Index side) {
  if (side <= 0) throw DataError("resample target must be positive");
  const Index rows = image.rows();
  const Index cols = image.cols();
  if (rows == side && cols == side) return image;
  // Output cell i covers source interval [i * s, (i + 1) * s).
  auto weights = [side](Index n) {
    Matrix w = Matrix::Zero(side, n);
    const double s = static_cast<double>(n) / static_cast<double>(side);
    for (Index i = 0; i < side; ++i) {
      const double lo = static_cast<double>(i) * s;
      const double hi = lo + s;
      for (Index p = static_cast<Index>(std::floor(lo)); p < n && static_cast<double>(p) < hi; ++p) {
        const double overlap = std::min(hi, static_cast<double>(p + 1)) - std::max(lo, static_cast<double>(p));
        if (overlap > 0.0) w(i, p) = overlap / s;
      }
    }
    return w;
  };
  return weights(rows) * image * weights(cols).transpose();
}

Dataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels,
                        const IdxLoadOptions& opts) {
  const IdxImages img = read_idx_images(images);
  const auto lab = read_idx_labels(labels);
  if (lab.size() != img.count) {
    throw DataError("IDX count mismatch: " + std::to_string(img.count) + " images vs " + std::to_string(lab.size()) +
                    " labels");
  }

  std::map<int, int> class_of;
  if (!opts.class_filter.empty()) {
    for (std::size_t i = 0; i < opts.class_filter.size(); ++i) class_of[opts.class_filter[i]] = static_cast<int>(i);
  } else {
    int max_label = 0;
    for (auto l : lab) max_label = std::max(max_label, int{l});
    for (int l = 0; l <= max_label; ++l) class_of[l] = l;
  }

  const Index side_r = opts.downsample_to > 0 ? opts.downsample_to : Index{img.rows};
  const Index side_c = opts.downsample_to > 0 ? opts.downsample_to : Index{img.cols};
  const std::size_t plane = std::size_t{img.rows} * img.cols;

  std::vector<Index> kept;
  std::map<int, Index> taken;
  for (std::uint32_t i = 0; i < img.count; ++i) {
    const auto it = class_of.find(lab[i]);
    if (it == class_of.end()) continue;
    if (opts.per_class_cap > 0 && taken[it->second] >= opts.per_class_cap) continue;
    ++taken[it->second];
    kept.push_back(static_cast<Index>(i));
  }

  Dataset data;
  data.num_classes = static_cast<int>(class_of.size());
  data.normalization = "affine:[0,255]->[-1,1]";
  data.image_rows = side_r;
  data.image_cols = side_c;
  data.x.resize(side_r * side_c, static_cast<Index>(kept.size()));
  for (std::size_t n = 0; n < kept.size(); ++n) {
    const auto i = static_cast<std::size_t>(kept[n]);
    Matrix pic(img.rows, img.cols);
    for (Index r = 0; r < pic.rows(); ++r)
      for (Index c = 0; c < pic.cols(); ++c)
        pic(r, c) = static_cast<double>(img.pixels[i * plane + static_cast<std::size_t>(r) * img.cols +
                                                   static_cast<std::size_t>(c)]) /
                        255.0 * 2.0 -
                    1.0;
    if (opts.downsample_to > 0) pic = area_resample(pic, opts.downsample_to);
    data.x.col(static_cast<Index>(n)) = Eigen::Map<const Vector>(pic.data(), pic.size());
    data.labels.push_back(class_of.at(lab[i]));
  }
  data.train.resize(kept.size());
  std::iota(data.train.begin(), data.train.end(), Index{0});
  return data;
}

void write_idx_dataset(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels) {
  if (data.image_rows == 0) throw DataError("dataset holds no images");
  IdxImages out;
  out.count = static_cast<std::uint32_t>(data.size());
  out.rows = static_cast<std::uint32_t>(data.image_rows);
  out.cols = static_cast<std::uint32_t>(data.image_cols);
  out.pixels.reserve(static_cast<std::size_t>(data.x.size()));
  for (Index n = 0; n < data.size(); ++n) {
    const Matrix pic = data.image(n);
    for (Index r = 0; r < pic.rows(); ++r)
      for (Index c = 0; c < pic.cols(); ++c) {
        const double byte = std::clamp((pic(r, c) + 1.0) / 2.0 * 255.0, 0.0, 255.0);
        out.pixels.push_back(static_cast<std::uint8_t>(std::lround(byte)));
      }
  }
  write_idx_images(images, out);
  std::vector<std::uint8_t> lab;
  for (int l : data.labels) lab.push_back(static_cast<std::uint8_t>(l));
  write_idx_labels(labels, lab);
}

// ---------------------------------------------------------------------------
// modes

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::Normal: return "normal";
    case Mode::Large: return "large";
    case Mode::Small: return "small";
    case Mode::RotateLeft: return "rotate_left";
    case Mode::RotateRight: return "rotate_right";
  }
  return "?";
}

Mode parse_mode(const std::string& name) {
  for (Mode m : all_modes()) {
    if (mode_name(m) == name) return m;
  }
  throw UsageError("unknown image mode '" + name + "'");
}

const std::vector<Mode>& all_modes() {
  static const std::vector<Mode> modes = {Mode::Normal, Mode::Large, Mode::Small, Mode::RotateLeft,
                                          Mode::RotateRight};
  return modes;
}

namespace {

double pixel_or_background(const Matrix& img, Index r, Index c) {
  if (r < 0 || c < 0 || r >= img.rows() || c >= img.cols()) return kBackground;
  return img(r, c);
}

double bilinear(const Matrix& img, double r, double c) {
  const double r0 = std::floor(r);
  const double c0 = std::floor(c);
  const double fr = r - r0;
  const double fc = c - c0;
  const auto ir = static_cast<Index>(r0);
  const auto ic = static_cast<Index>(c0);
  return (1 - fr) * (1 - fc) * pixel_or_background(img, ir, ic) + (1 - fr) * fc * pixel_or_background(img, ir, ic + 1) +
         fr * (1 - fc) * pixel_or_background(img, ir + 1, ic) + fr * fc * pixel_or_background(img, ir + 1, ic + 1);
}

}  // namespace

Matrix transform_image(const Matrix& image, Mode mode) {
  if (image.rows() != image.cols()) throw DataError("mode transforms need square images, got " + shape_str(image));
  if (mode == Mode::Normal) return image;

  double scale_factor = 1.0;
  double angle = 0.0;  // counter-clockwise as displayed (row axis points down)
  switch (mode) {
    case Mode::Large: scale_factor = 1.5; break;
    case Mode::Small: scale_factor = 0.5; break;
    case Mode::RotateLeft: angle = std::numbers::pi / 4.0; break;
    case Mode::RotateRight: angle = -std::numbers::pi / 4.0; break;
    case Mode::Normal: break;
  }
  const double center = (static_cast<double>(image.rows()) - 1.0) / 2.0;
  const double cs = std::cos(angle);
  const double sn = std::sin(angle);
  Matrix out(image.rows(), image.cols());
  for (Index r = 0; r < out.rows(); ++r) {
    for (Index c = 0; c < out.cols(); ++c) {
      // Display coordinates: x right, y up.
      const double x = static_cast<double>(c) - center;
      const double y = center - static_cast<double>(r);
      // Inverse map: rotate by -angle, then undo the scaling.
      const double sx = (cs * x + sn * y) / scale_factor;
      const double sy = (-sn * x + cs * y) / scale_factor;
      out(r, c) = bilinear(image, center - sy, sx + center);
    }
  }
  return out;
}

Dataset apply_modes(const Dataset& data, const std::vector<Mode>& modes, std::uint64_t seed,
                    std::vector<Mode>* assigned) {
  if (data.image_rows == 0) throw DataError("mode augmentation needs image data");
  if (data.image_rows != data.image_cols) {
    throw DataError("mode augmentation needs square images, got " + shape_str(data.image_rows, data.image_cols));
  }
  if (modes.empty()) throw DataError("empty mode set");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, modes.size() - 1);
  Dataset out = data;
  if (assigned != nullptr) assigned->clear();
  for (Index n = 0; n < data.size(); ++n) {
    const Mode m = modes[pick(rng)];
    if (assigned != nullptr) assigned->push_back(m);
    if (m == Mode::Normal) continue;
    const Matrix pic = transform_image(data.image(n), m);
    out.x.col(n) = Eigen::Map<const Vector>(pic.data(), pic.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// batches

Batch make_batch(const Dataset& data, const std::vector<Index>& indices) {
  return {data.columns(indices), data.labels_of(indices), indices};
}

StratifiedBatches::StratifiedBatches(const Dataset& data, const std::vector<Index>& pool, Index batch_size,
                                     std::uint64_t seed)
    : data_(&data), batch_size_(batch_size), pools_(static_cast<std::size_t>(data.num_classes)),
      cursor_(static_cast<std::size_t>(data.num_classes), 0), rng_(seed) {
  if (batch_size < data.num_classes) {
    throw DataError("batch size " + std::to_string(batch_size) + " cannot cover " + std::to_string(data.num_classes) +
                    " classes");
  }
  for (Index i : pool) pools_[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)])].push_back(i);
  for (std::size_t j = 0; j < pools_.size(); ++j) {
    if (pools_[j].empty()) throw DataError("class " + std::to_string(j) + " has no samples in the pool");
    std::shuffle(pools_[j].begin(), pools_[j].end(), rng_);
  }
}

Batch StratifiedBatches::next() {
  const std::size_t k = pools_.size();
  const Index base = batch_size_ / static_cast<Index>(k);
  const std::size_t rem = static_cast<std::size_t>(batch_size_ % static_cast<Index>(k));
  std::vector<Index> idx;
  idx.reserve(static_cast<std::size_t>(batch_size_));
  for (std::size_t j = 0; j < k; ++j) {
    Index quota = base;
    if ((j + k - remainder_offset_) % k < rem) ++quota;
    for (Index q = 0; q < quota; ++q) {
      if (cursor_[j] == pools_[j].size()) {
        std::shuffle(pools_[j].begin(), pools_[j].end(), rng_);
        cursor_[j] = 0;
      }
      idx.push_back(pools_[j][cursor_[j]++]);
    }
  }
  remainder_offset_ = (remainder_offset_ + rem) % k;
  return make_batch(*data_, idx);
}

std::uint64_t hash_indices(const std::vector<Index>& idx) {
  std::uint64_t h = 1469598103934665603ULL;
  for (Index i : idx) {
    auto v = static_cast<std::uint64_t>(i);
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

void write_manifest(const std::filesystem::path& path, const std::map<std::string, std::string>& entries) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& [k, v] : entries) out << k << '=' << v << '\n';
}

}  // namespace ldr
