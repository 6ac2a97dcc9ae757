#include "support.hpp"

#include "ldr/data.hpp"

#include <doctest.h>

#include <Eigen/SVD>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

using namespace ldr;
namespace fs = std::filesystem;

namespace {

const fs::path kData = LDR_TEST_DATA;

Index numeric_rank(const Matrix& m, double tol = 1e-9) {
  const Vector s = Eigen::JacobiSVD<Matrix>(m).singularValues();
  Index r = 0;
  for (Index i = 0; i < s.size(); ++i) r += s(i) > tol * std::max(s(0), 1.0) ? 1 : 0;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ldr-test-data";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Smooth plus-shaped pattern, symmetric under quarter turns.
Matrix cross_image(Index side, double width) {
  const double c = (static_cast<double>(side) - 1.0) / 2.0;
  Matrix m(side, side);
  for (Index r = 0; r < side; ++r)
    for (Index q = 0; q < side; ++q) {
      const double dy = static_cast<double>(r) - c;
      const double dx = static_cast<double>(q) - c;
      const double v = std::exp(-dx * dx / (2 * width * width)) + std::exp(-dy * dy / (2 * width * width));
      m(r, q) = v - 1.0;
    }
  return m;
}

}  // namespace

TEST_CASE("one-dimensional single class is collinear") {
  const Dataset d = gen_subspaces({5, {1}, 0.0, Warp::None}, 40, 3);
  CHECK(d.size() == 40);
  CHECK(numeric_rank(d.x) == 1);
}

TEST_CASE("two orthogonal planes in R^8") {
  const Dataset d = gen_subspaces({8, {2, 2}, 0.0, Warp::None}, 500, 4);
  const Matrix a = d.x.leftCols(500);
  const Matrix b = d.x.rightCols(500);
  CHECK(numeric_rank(a * a.transpose()) == 2);
  CHECK(numeric_rank(b * b.transpose()) == 2);
  CHECK((a.transpose() * b).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs((a.transpose() * b).mean()) < 1e-14);

  const auto bases = subspace_bases({8, {2, 2}, 0.0, Warp::None}, 4);
  CHECK((bases[0].transpose() * bases[1]).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((bases[0].transpose() * bases[0] - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("generation is deterministic and validated") {
  const SubspaceSpec spec{12, {2, 3, 1}, 0.1, Warp::Cubic};
  const Dataset a = gen_subspaces(spec, 20, 77);
  const Dataset b = gen_subspaces(spec, 20, 77);
  CHECK(a.x == b.x);
  CHECK(a.labels == b.labels);
  CHECK(gen_subspaces(spec, 20, 78).x != a.x);
  CHECK_THROWS_AS(gen_subspaces({4, {2, 3}, 0.0, Warp::None}, 10, 1), DataError);
  CHECK_THROWS_AS(gen_subspaces({4, {0, 1}, 0.0, Warp::None}, 10, 1), DataError);
}

TEST_CASE("warps are applied element-wise after the linear model") {
  const SubspaceSpec lin{6, {2, 2}, 0.0, Warp::None};
  const SubspaceSpec cub{6, {2, 2}, 0.0, Warp::Cubic};
  const Matrix x = gen_subspaces(lin, 10, 5).x;
  CHECK((gen_subspaces(cub, 10, 5).x - x.unaryExpr([](double v) { return v + v * v * v; })).norm() < 1e-12);
  const Dataset relu = gen_subspaces({6, {2, 2}, 0.0, Warp::RotateRelu}, 10, 5);
  CHECK(relu.x.minCoeff() >= 0.0);
}

TEST_CASE("class covariance approaches B B^T + sigma^2 I") {
  const SubspaceSpec spec{10, {2, 3}, 0.3, Warp::None};
  const Index n = 10000;
  const Dataset d = gen_subspaces(spec, n, 9);
  const auto bases = subspace_bases(spec, 9);
  for (int j = 0; j < 2; ++j) {
    const Matrix xj = d.x.middleCols(j * n, n);
    const Matrix cov = xj * xj.transpose() / static_cast<double>(n);
    const Matrix want = bases[static_cast<std::size_t>(j)] * bases[static_cast<std::size_t>(j)].transpose() +
                        spec.noise * spec.noise * Matrix::Identity(10, 10);
    CHECK((cov - want).norm() / want.norm() < 0.05);
  }
}

TEST_CASE("hand-made IDX fixture loads to the known matrix") {
  const Dataset d = load_idx_images(kData / "fixture-images.idx3", kData / "fixture-labels.idx1");
  REQUIRE(d.size() == 2);
  CHECK(d.image_rows == 2);
  CHECK(d.image_cols == 3);
  CHECK(d.num_classes == 5);
  CHECK(d.labels == std::vector<int>{4, 1});
  // Bytes 00 ff 33 / 66 cc 99 and ff 00 00 / 00 00 ff, column-major, v/255*2-1.
  Matrix want(6, 2);
  want << -1.0, 1.0,
          -0.2, -1.0,
           1.0, -1.0,
           0.6, -1.0,
          -0.6, -1.0,
           0.2, 1.0;
  CHECK((d.x - want).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(d.image(0)(1, 2) == doctest::Approx(0.2));
}

TEST_CASE("IDX class filter, cap and downsampling") {
  const fs::path img = kData / "fixture-images.idx3";
  const fs::path lab = kData / "fixture-labels.idx1";

  SUBCASE("filter drops excluded labels") {
    const Dataset d = load_idx_images(img, lab, {{4}, 0, 0});
    CHECK(d.size() == 1);
    CHECK(d.num_classes == 1);
    CHECK(d.labels == std::vector<int>{0});
  }

  SUBCASE("digits file filtered to two classes") {
    const Dataset d = load_idx_images(kData / "digits-images.idx3", kData / "digits-labels.idx1", {{2, 0}, 5, 0});
    CHECK(d.size() == 10);
    CHECK(std::count(d.labels.begin(), d.labels.end(), 0) == 5);
    CHECK(std::count(d.labels.begin(), d.labels.end(), 1) == 5);
  }

  SUBCASE("constant image pools to a constant") {
    const fs::path ci = scratch("const-images.idx3");
    const fs::path cl = scratch("const-labels.idx1");
    write_idx_images(ci, {1, 28, 28, std::vector<std::uint8_t>(28 * 28, 200)});
    write_idx_labels(cl, {0});
    const Dataset d = load_idx_images(ci, cl, {{}, 0, 14});
    CHECK(d.dim() == 196);
    CHECK((d.x.array() - (200.0 / 255.0 * 2.0 - 1.0)).abs().maxCoeff() < 1e-14);
  }

  SUBCASE("average pooling by two") {
    Matrix pic(4, 4);
    pic << 0, 2, 4, 4,
           2, 0, 4, 4,
           1, 1, 8, 0,
           1, 1, 0, 8;
    Matrix want(2, 2);
    want << 1, 4,
            1, 4;
    CHECK((area_resample(pic, 2) - want).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("IDX errors are structured") {
  const fs::path img = kData / "fixture-images.idx3";
  const fs::path lab = kData / "fixture-labels.idx1";

  SUBCASE("magic mismatch") { CHECK_THROWS_AS(read_idx_images(lab), DataError); }
  SUBCASE("truncated file") {
    const fs::path p = scratch("truncated.idx3");
    write_bytes(p, {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3, 1, 2, 3});
    CHECK_THROWS_AS(read_idx_images(p), DataError);
  }
  SUBCASE("count mismatch") {
    const fs::path p = scratch("one-label.idx1");
    write_idx_labels(p, {1});
    CHECK_THROWS_AS(load_idx_images(img, p), DataError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(read_idx_labels(kData / "no-such-file"), DataError); }
}

TEST_CASE("IDX round trip reproduces the fixture") {
  const Dataset d = load_idx_images(kData / "fixture-images.idx3", kData / "fixture-labels.idx1");
  const fs::path ri = scratch("round-images.idx3");
  const fs::path rl = scratch("round-labels.idx1");
  write_idx_dataset(d, ri, rl);
  const Dataset e = load_idx_images(ri, rl);
  CHECK(e.x == d.x);
  CHECK(e.labels == d.labels);
  CHECK(read_idx_images(ri).pixels == read_idx_images(kData / "fixture-images.idx3").pixels);
}

TEST_CASE("mode transforms") {
  SUBCASE("normal is bit-identical") {
    const Matrix pic = cross_image(9, 1.5);
    CHECK(transform_image(pic, Mode::Normal) == pic);
  }

  SUBCASE("opposite 45 degree turns return the cross") {
    const Index side = 41;
    const Matrix pic = cross_image(side, 5.0);
    const Matrix back = transform_image(transform_image(pic, Mode::RotateLeft), Mode::RotateRight);
    const Matrix quarter = transform_image(transform_image(pic, Mode::RotateLeft), Mode::RotateLeft);
    const double c = (side - 1) / 2.0;
    double worst_back = 0.0;
    double worst_quarter = 0.0;
    for (Index r = 0; r < side; ++r)
      for (Index q = 0; q < side; ++q) {
        if (std::hypot(r - c, q - c) > c - 1.0) continue;  // inscribed region only
        worst_back = std::max(worst_back, std::abs(back(r, q) - pic(r, q)));
        worst_quarter = std::max(worst_quarter, std::abs(quarter(r, q) - pic(r, q)));
      }
    // Two grey levels on the byte scale; pixels span [-1, 1].
    const double tol = 2.0 / 255.0 * 2.0;
    CHECK(worst_back <= tol);
    CHECK(worst_quarter <= tol);
  }

  SUBCASE("shrinking the background keeps the background") {
    const Matrix bg = Matrix::Constant(16, 16, kBackground);
    CHECK(transform_image(bg, Mode::Small) == bg);
  }

  SUBCASE("small leaves an uncovered border") {
    const Matrix pic = Matrix::Ones(16, 16);
    const Matrix small = transform_image(pic, Mode::Small);
    CHECK(small(0, 0) == kBackground);
    CHECK(small(8, 8) == doctest::Approx(1.0));
  }

  SUBCASE("non-square images are rejected") {
    CHECK_THROWS_AS(transform_image(Matrix::Zero(4, 5), Mode::Large), DataError);
  }

  SUBCASE("apply_modes assigns one mode per image, deterministically") {
    Dataset d = load_idx_images(kData / "digits-images.idx3", kData / "digits-labels.idx1", {{0, 1, 2}, 20, 16});
    std::vector<Mode> assigned;
    const Dataset a = apply_modes(d, all_modes(), 5, &assigned);
    CHECK(assigned.size() == 60);
    CHECK(apply_modes(d, all_modes(), 5).x == a.x);
    std::set<Mode> seen(assigned.begin(), assigned.end());
    CHECK(seen.size() == 5);
    for (Index n = 0; n < d.size(); ++n) {
      if (assigned[static_cast<std::size_t>(n)] == Mode::Normal) CHECK(a.x.col(n) == d.x.col(n));
    }
    CHECK(apply_modes(d, {Mode::Normal}, 5).x == d.x);
  }
}

TEST_CASE("stratified split and batches") {
  Dataset d = gen_subspaces({6, {1, 1, 1}, 0.0, Warp::None}, 10, 2);
  split_stratified(d, 0.3, 8);

  SUBCASE("split is disjoint, exhaustive and stratified") {
    std::vector<Index> all = d.train;
    all.insert(all.end(), d.heldout.begin(), d.heldout.end());
    std::sort(all.begin(), all.end());
    std::vector<Index> want(30);
    std::iota(want.begin(), want.end(), Index{0});
    CHECK(all == want);
    for (int j = 0; j < 3; ++j) {
      const auto held = d.labels_of(d.heldout);
      CHECK(std::count(held.begin(), held.end(), j) == 3);
    }
  }

  SUBCASE("per-class quota with rotating remainder") {
    StratifiedBatches b(d, d.train, 8, 4);
    std::vector<int> totals(3, 0);
    for (int t = 0; t < 3; ++t) {
      const Batch batch = b.next();
      CHECK(batch.x.cols() == 8);
      for (int j = 0; j < 3; ++j) {
        const auto c = std::count(batch.labels.begin(), batch.labels.end(), j);
        CHECK((c == 2 || c == 3));
        totals[static_cast<std::size_t>(j)] += static_cast<int>(c);
      }
    }
    CHECK(totals == std::vector<int>{8, 8, 8});
  }

  SUBCASE("each class pool is exhausted before repeating") {
    StratifiedBatches b(d, d.train, 3, 4);  // one per class, 7 train samples each
    std::vector<std::set<Index>> seen(3);
    for (int t = 0; t < 7; ++t) {
      const Batch batch = b.next();
      for (std::size_t i = 0; i < batch.indices.size(); ++i)
        CHECK(seen[static_cast<std::size_t>(batch.labels[i])].insert(batch.indices[i]).second);
    }
    for (const auto& s : seen) CHECK(s.size() == 7);
  }

  SUBCASE("batch too small for the classes") { CHECK_THROWS_AS(StratifiedBatches(d, d.train, 2, 1), DataError); }
}

TEST_CASE("manifest and split hashes") {
  CHECK(hash_indices({1, 2, 3}) == hash_indices({1, 2, 3}));
  CHECK(hash_indices({1, 2, 3}) != hash_indices({1, 3, 2}));
  const fs::path p = scratch("manifest.txt");
  write_manifest(p, {{"seed", "3"}, {"a", "x"}});
  std::ifstream in(p);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text == "a=x\nseed=3\n");
}
