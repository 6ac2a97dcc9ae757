#include "support.hpp"

#include "ldr/nets.hpp"

#include <doctest.h>

#include <Eigen/QR>
#include <Eigen/SVD>

using namespace ldr;
using ldr::test::gaussian;
using ldr::test::unit_columns;

namespace {

// Hand-built net with the given weights and no biases.
NetParams linear_net(NetRole role, const std::vector<Matrix>& ws, ad::Activation out_act = ad::Activation::None) {
  NetParams p;
  p.role = role;
  for (std::size_t l = 0; l < ws.size(); ++l) {
    const bool last = l + 1 == ws.size();
    p.layers.push_back({ws[l].cols(), ws[l].rows(), last ? out_act : ad::Activation::None, false, false});
    p.weights.push_back(ws[l]);
    p.biases.emplace_back();
    p.sn_u.push_back(Vector::Ones(ws[l].rows()).normalized());
    p.sn_sigma.push_back(1.0);
  }
  return p;
}

Matrix orthonormal_rows(Index rows, Index cols, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Matrix> qr(gaussian(cols, rows, rng));
  return Matrix(qr.householderQ() * Matrix::Identity(cols, rows)).transpose();
}

double top_singular(const Matrix& w) {
  return Eigen::JacobiSVD<Matrix>(w).singularValues()(0);
}

Matrix leaky(const Matrix& m) { return m.unaryExpr([](double v) { return v > 0 ? v : kLeakySlope * v; }); }

}  // namespace

TEST_CASE("encode lands every column on the unit sphere") {
  std::mt19937_64 rng(1);
  const Matrix theta = orthonormal_rows(4, 10, rng);
  const Matrix x = unit_columns(10, 30, rng);
  const Matrix z = encode_values(linear_net(NetRole::Encoder, {theta}), x);
  Matrix want = theta * x;
  want.colwise().normalize();
  CHECK((z - want).cwiseAbs().maxCoeff() < 1e-14);
  for (Index i = 0; i < z.cols(); ++i) CHECK(std::abs(z.col(i).norm() - 1.0) < 1e-12);
}

TEST_CASE("duplicated input column gives a duplicated feature") {
  std::mt19937_64 rng(2);
  const NetParams p = init_net(NetRole::Encoder,
                               mlp_layers(6, {8}, 3, ad::Activation::LeakyRelu, ad::Activation::None), rng);
  Matrix x = gaussian(6, 4, rng);
  x.col(3) = x.col(1);
  const Matrix z = encode_values(p, x);
  CHECK(z.col(3) == z.col(1));
  CHECK(encode_values(p, x) == z);
}

TEST_CASE("two-layer encoder matches straight-line recomputation") {
  std::mt19937_64 rng(3);
  const NetParams p = init_net(NetRole::Encoder,
                               mlp_layers(7, {9}, 4, ad::Activation::LeakyRelu, ad::Activation::None), rng);
  const Matrix x = gaussian(7, 12, rng);
  Matrix h = leaky((p.weights[0] * x).colwise() + p.biases[0].col(0));
  h = (p.weights[1] * h).colwise() + p.biases[1].col(0);
  h.colwise().normalize();
  CHECK((encode_values(p, x) - h).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("zero feature column is reported by index") {
  Matrix x = Matrix::Ones(2, 3);
  x.col(2).setZero();
  const NetParams p = linear_net(NetRole::Encoder, {Matrix::Identity(2, 2)});
  try {
    encode_values(p, x);
    FAIL("expected an error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("column 2") != std::string::npos);
  }
}

TEST_CASE("decoder trivials and direct recomputation") {
  std::mt19937_64 rng(4);
  const Matrix z = unit_columns(5, 9, rng);

  SUBCASE("zero weights with tanh output") {
    NetParams p = init_net(NetRole::Decoder, mlp_layers(5, {6}, 8, ad::Activation::Relu, ad::Activation::Tanh), rng);
    for (auto& w : p.weights) w.setZero();
    for (auto& b : p.biases) b.setZero();
    CHECK(decode_values(p, z).isZero(0.0));
  }
  SUBCASE("identity decoder") {
    CHECK(decode_values(linear_net(NetRole::Decoder, {Matrix::Identity(5, 5)}), z) == z);
  }
  SUBCASE("random net") {
    const NetParams p =
        init_net(NetRole::Decoder, mlp_layers(5, {6}, 8, ad::Activation::Relu, ad::Activation::Tanh), rng);
    Matrix h = ((p.weights[0] * z).colwise() + p.biases[0].col(0)).cwiseMax(0.0);
    h = ((p.weights[1] * h).colwise() + p.biases[1].col(0)).array().tanh().matrix();
    CHECK((decode_values(p, z) - h).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("closed loop") {
  std::mt19937_64 rng(5);

  SUBCASE("exact inverse pair reproduces Z") {
    // Data lives in the row space of theta; g = theta^T inverts f there.
    const Matrix theta = orthonormal_rows(4, 10, rng);
    const Matrix x = theta.transpose() * unit_columns(4, 20, rng);
    const NetParams f = linear_net(NetRole::Encoder, {theta});
    const NetParams g = linear_net(NetRole::Decoder, {Matrix(theta.transpose())});
    ad::Graph gr;
    const ClosedLoop loop = closed_loop(f, bind_net(gr, f, false), g, bind_net(gr, g, false), gr.constant(x));
    gr.forward();
    CHECK((loop.z_hat.value() - loop.z.value()).cwiseAbs().maxCoeff() < 1e-10);
  }

  SUBCASE("zero decoder gives f(0) in every column") {
    NetParams f = init_net(NetRole::Encoder, mlp_layers(6, {5}, 3, ad::Activation::LeakyRelu, ad::Activation::None), rng);
    NetParams g = init_net(NetRole::Decoder, mlp_layers(3, {5}, 6, ad::Activation::Relu, ad::Activation::Tanh), rng);
    for (auto& w : g.weights) w.setZero();
    for (auto& b : g.biases) b.setZero();
    ad::Graph gr;
    const ClosedLoop loop = closed_loop(f, bind_net(gr, f, false), g, bind_net(gr, g, false), gr.constant(gaussian(6, 4, rng)));
    gr.forward();
    const Vector f0 = encode_values(f, Matrix::Zero(6, 1)).col(0);
    for (Index i = 0; i < 4; ++i) CHECK((loop.z_hat.value().col(i) - f0).norm() < 1e-14);
  }

  SUBCASE("mismatched decoder is rejected") {
    const NetParams f = linear_net(NetRole::Encoder, {Matrix::Identity(3, 4)});
    const NetParams g = linear_net(NetRole::Decoder, {Matrix::Identity(5, 3)});
    ad::Graph gr;
    CHECK_THROWS_AS(closed_loop(f, bind_net(gr, f, false), g, bind_net(gr, g, false), gr.constant(Matrix::Ones(4, 2))),
                    ShapeError);
  }
}

TEST_CASE("theta gradient through the loop is the sum over both encoder uses") {
  std::mt19937_64 rng(6);
  const NetParams f = init_net(NetRole::Encoder, mlp_layers(5, {4}, 3, ad::Activation::Tanh, ad::Activation::None), rng);
  const NetParams g = init_net(NetRole::Decoder, mlp_layers(3, {4}, 5, ad::Activation::Tanh, ad::Activation::None), rng);
  const Matrix x = gaussian(5, 6, rng);
  const Matrix c = gaussian(3, 6, rng);

  // Live theta on the chosen encoder applications, frozen copies elsewhere.
  auto grads = [&](bool first, bool second) {
    ad::Graph gr;
    const NetVars live = bind_net(gr, f, true);
    const NetVars frozen = bind_net(gr, f, false);
    const NetVars ev = bind_net(gr, g, false);
    const ad::Var z = encode(f, first ? live : frozen, gr.constant(x));
    const ad::Var zh = encode(f, second ? live : frozen, decode(g, ev, z));
    const ad::Var r = sum(hadamard(zh, gr.constant(c)));
    gr.forward();
    const auto all = gr.backward(r);
    std::vector<Matrix> out;
    for (const ad::Var& w : live.weights) out.push_back(all[w]);
    return out;
  };
  const auto both = grads(true, true);
  const auto a = grads(true, false);
  const auto b = grads(false, true);
  for (std::size_t l = 0; l < both.size(); ++l) CHECK((both[l] - a[l] - b[l]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("spectral normalization") {
  std::mt19937_64 rng(7);

  SUBCASE("3 I normalizes to I") {
    Vector u = Vector::Ones(4).normalized();
    const Matrix w = spectral_normalize(3.0 * Matrix::Identity(4, 4), u, 1);
    CHECK((w - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("rank one converges in one step") {
    const Vector a = gaussian(5, 1, rng).col(0).normalized();
    const Vector b = gaussian(3, 1, rng).col(0).normalized();
    const Matrix w = 2.5 * a * b.transpose();
    Vector u = gaussian(5, 1, rng).col(0).normalized();
    CHECK(power_iteration(w, u, 1) == doctest::Approx(2.5).epsilon(1e-13));
  }
  SUBCASE("random matrix after 50 warm steps") {
    for (int t = 0; t < 10; ++t) {
      const Matrix w = gaussian(16, 12, rng);
      Vector u = gaussian(16, 1, rng).col(0).normalized();
      const double est = power_iteration(w, u, 50);
      CHECK(std::abs(est - top_singular(w)) / top_singular(w) < 1e-2);
      CHECK(top_singular(w / est) <= 1.0 + 1e-2);
    }
  }
  SUBCASE("zero matrix floors sigma") {
    Vector u = Vector::Ones(3).normalized();
    CHECK(power_iteration(Matrix::Zero(3, 3), u, 1) == 1e-12);
  }
  SUBCASE("layer estimates after warm-up keep the forward weight at most 1") {
    NetParams p = init_net(NetRole::Encoder,
                           mlp_layers(10, {20}, 6, ad::Activation::LeakyRelu, ad::Activation::None, true), rng);
    update_spectral_estimates(p, 50);
    for (std::size_t l = 0; l < p.depth(); ++l) CHECK(top_singular(p.weights[l] / p.sn_sigma[l]) <= 1.0 + 1e-2);
  }
}

TEST_CASE("validate rejects broken chains") {
  NetParams p = linear_net(NetRole::Encoder, {Matrix::Identity(3, 4), Matrix::Identity(2, 3)});
  CHECK_NOTHROW(p.validate());
  p.weights[1] = Matrix::Identity(2, 2);
  CHECK_THROWS_AS(p.validate(), ShapeError);
  p.weights[1] = Matrix::Identity(2, 3);
  p.weights[0](0, 0) = std::nan("");
  CHECK_THROWS_AS(p.validate(), NumericalError);
}
