// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero if
// any criterion fails.

#include "support.hpp"

#include "ldr/app.hpp"

#include <Eigen/Cholesky>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

using namespace ldr;
using namespace ldr::test;
using ad::Graph;
using ad::Var;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::printf("criterion %d: %s (%s)\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double value_of(const std::function<Var(Graph&)>& build) {
  Graph g;
  const Var r = build(g);
  g.forward();
  return r.scalar();
}

// ---- 1: tape gradients against central differences

double worst_gradient_error(Objective o, std::uint64_t seed) {
  const Index D = 12, d = 8, n = 16;
  const int k = 3;
  std::mt19937_64 rng(seed);
  Model model = init_model(mlp_layers(D, {10}, d, ad::Activation::LeakyRelu, ad::Activation::None),
                           mlp_layers(d, {10}, D, ad::Activation::Relu, ad::Activation::None), o, k, seed);
  const Matrix x = gaussian(D, n, rng);
  const Membership m(cyclic_labels(n, k), k);

  Graph g;
  const NetVars th = bind_net(g, model.encoder, true);
  const NetVars et = bind_net(g, model.decoder, true);
  CeHeadVars heads;
  if (model.heads) heads = {g.constant(model.heads->w), g.constant(model.heads->disc_w), g.constant(model.heads->disc_b)};
  const ClosedLoop loop = closed_loop(model.encoder, th, model.decoder, et, g.constant(x));
  const Var t = build_objective(o, loop.z, loop.z_hat, m, 0.5, model.heads ? &heads : nullptr).total;
  g.forward();
  const ad::Gradient grad = g.backward(t);

  double worst = 0.0;
  auto check = [&](Matrix& p, Var v) {
    const Matrix fd = central_difference(
        [&](const Matrix& probe) {
          const Matrix saved = p;
          p = probe;
          const double val = evaluate_terms(model, x, m, o, 0.5).total;
          p = saved;
          return val;
        },
        p, 1e-5);
    worst = std::max(worst, rel_error(grad[v], fd));
  };
  for (NetParams* net : {&model.encoder, &model.decoder}) {
    const NetVars& vars = net == &model.encoder ? th : et;
    for (std::size_t l = 0; l < net->depth(); ++l) {
      check(net->weights[l], vars.weights[l]);
      check(net->biases[l], vars.biases[l]);
    }
  }
  return worst;
}

void criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (Objective o : {Objective::Multi, Objective::Binary, Objective::AblationII, Objective::AblationIII,
                      Objective::CrossEntropy}) {
    for (std::uint64_t s = 1; s <= 3; ++s) worst = std::max(worst, worst_gradient_error(o, 100 * s + static_cast<int>(o)));
  }
  const double secs = seconds_since(t0);
  report(1, worst <= 1e-4 && secs <= 60.0, fmt("worst relative error %.2e, %.1f s", worst, secs));
}

// ---- 2: rate functionals against eigenvalue sums

double dual_gap(const Matrix& z, double alpha) {
  const Matrix big = Matrix::Identity(z.rows(), z.rows()) + alpha * z * z.transpose();
  const Matrix small = Matrix::Identity(z.cols(), z.cols()) + alpha * z.transpose() * z;
  auto half_logdet = [](const Matrix& a) {
    const Eigen::LLT<Matrix> llt(a);
    return llt.matrixLLT().diagonal().array().log().sum();
  };
  const double lib = half_logdet_gram_value(z, alpha);
  return std::max({std::abs(half_logdet(big) - half_logdet(small)), std::abs(lib - half_logdet(big))});
}

void criterion2() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> dim(1, 16), cnt(3, 32), classes(1, 4);
  std::uniform_real_distribution<double> eps(0.1, 2.0);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const Index d = dim(rng), n = cnt(rng);
    const int k = std::min<int>(classes(rng), static_cast<int>(n));
    const double e = eps(rng);
    const Matrix z = gaussian(d, n, rng);
    const Matrix b = gaussian(d, n, rng);
    const auto labels = cyclic_labels(n, k);
    const Membership m(labels, k);
    const RateParams p = RateParams::for_shape(d, n, e);

    const double r = value_of([&](Graph& g) { return coding_rate(g.constant(z), p); });
    const double rc = value_of([&](Graph& g) { return class_coding_rate(g.constant(z), m, p); });
    const double dr = value_of([&](Graph& g) { return delta_r(g.constant(z), m, p); });
    const double pw = value_of([&](Graph& g) { return pairwise_delta_r(g.constant(z), g.constant(b), e); });
    worst = std::max({worst, std::abs(r - coding_rate_oracle(z, e)), std::abs(rc - class_rate_oracle(z, labels, k, e)),
                      std::abs(dr - delta_r_oracle(z, labels, k, e)), std::abs(pw - pairwise_oracle(z, b, e)),
                      dual_gap(z, p.alpha())});
  }
  report(2, worst <= 1e-10, fmt("worst absolute error %.2e over 200 instances", worst));
}

// ---- 3: sign, symmetry and permutation properties

void criterion3() {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> dim(1, 12), cnt(3, 24), classes(1, 4);
  double min_dr = 1e300, max_self = -1e300, asym = 0.0, perm_gap = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const Index d = dim(rng), n = cnt(rng);
    const int k = std::min<int>(classes(rng), static_cast<int>(n));
    const Matrix z = gaussian(d, n, rng);
    const Matrix b = gaussian(d, n, rng);
    const auto labels = cyclic_labels(n, k);
    const Membership m(labels, k);
    const double dr = value_of([&](Graph& g) { return delta_r(g.constant(z), m, 0.5); });
    min_dr = std::min(min_dr, dr);
    max_self = std::max(max_self, value_of([&](Graph& g) { return pairwise_delta_r(g.constant(z), g.constant(z)); }));
    const double ab = value_of([&](Graph& g) { return pairwise_delta_r(g.constant(z), g.constant(b)); });
    const double ba = value_of([&](Graph& g) { return pairwise_delta_r(g.constant(b), g.constant(z)); });
    asym = std::max(asym, std::abs(ab - ba));

    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix pz(d, n), pb(d, n);
    std::vector<int> pl(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      const Index src = perm[static_cast<std::size_t>(i)];
      pz.col(i) = z.col(src);
      pb.col(i) = b.col(src);
      pl[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(src)];
    }
    const Membership pm(pl, k);
    const double pdr = value_of([&](Graph& g) { return delta_r(g.constant(pz), pm, 0.5); });
    const double pab = value_of([&](Graph& g) { return pairwise_delta_r(g.constant(pz), g.constant(pb)); });
    perm_gap = std::max({perm_gap, std::abs(pdr - dr), std::abs(pab - ab)});
  }
  const bool ok = min_dr >= -1e-9 && max_self <= 1e-9 && asym <= 1e-10 && perm_gap <= 1e-10;
  report(3, ok,
         fmt("min dR %.2e, max dR(Z,Z) %.2e, asymmetry %.2e, permutation gap %.2e", min_dr, max_self, asym, perm_gap));
}

// ---- training runs

fs::path scratch_root() {
  const fs::path dir = fs::temp_directory_path() / "ldr-acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct RunResult {
  TrainRecord first;
  TrainRecord last;
  bool finite = true;
  double seconds = 0.0;
  fs::path dir;
};

RunResult run(ExperimentConfig cfg, const fs::path& out) {
  cfg.output = out;
  std::ostringstream sink;
  const auto t0 = std::chrono::steady_clock::now();
  const TrainOutcome o = run_train(cfg, sink);
  RunResult r;
  r.seconds = seconds_since(t0);
  r.first = o.log.records.front();
  r.last = o.log.records.back();
  r.dir = o.out_dir;
  for (const TrainRecord& rec : o.log.records) r.finite = r.finite && std::isfinite(rec.terms.total);
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double ratio(const TrainRecord& r) { return r.on_block_mean > 0.0 ? r.off_block_mean / r.on_block_mean : 1e300; }

// (a) pairwise to 5% of its start, (b) off <= 0.1 and on >= 0.5, (c) held-out NSC >= 95%.
bool synthetic_ok(const RunResult& r, std::string& detail) {
  const double frac = r.last.terms.pairwise_sum / r.first.terms.pairwise_sum;
  const bool a = frac <= 0.05;
  const bool b = r.last.off_block_mean <= 0.1 && r.last.on_block_mean >= 0.5;
  const bool c = r.last.nsc_heldout >= 0.95;
  detail = fmt("pairwise %.3f of start, off %.3f, on %.3f, ", frac, r.last.off_block_mean, r.last.on_block_mean) +
           fmt("held-out NSC %.3f, %.0f s", r.last.nsc_heldout, r.seconds) + (a ? "" : "; (a) fails") +
           (b ? "" : "; (b) fails") + (c ? "" : "; (c) fails");
  return a && b && c && r.finite && r.seconds <= 300.0;
}

}  // namespace

int main() {
  setenv("LDR_THREADS", "1", 1);
  configure_threads();
  const fs::path configs = LDR_CONFIG_DIR;
  const fs::path root = scratch_root();

  criterion1();
  criterion2();
  criterion3();

  const ExperimentConfig synthetic = load_config(configs / "synthetic.cfg");
  std::string detail;

  const RunResult base = run(synthetic, root / "synthetic");
  report(4, synthetic_ok(base, detail), detail);

  ExperimentConfig abl = synthetic;
  abl.trainer.objective = Objective::AblationI;
  const RunResult one = run(abl, root / "ablation1");
  abl.trainer.objective = Objective::AblationIII;
  const RunResult three = run(abl, root / "ablation3");
  report(5, ratio(three.last) > ratio(one.last) && one.last.nsc_heldout >= three.last.nsc_heldout,
         fmt("off/on I %.3f vs III %.3f, held-out NSC I %.3f vs III %.3f", ratio(one.last), ratio(three.last),
             one.last.nsc_heldout, three.last.nsc_heldout));

  {
    const ExperimentConfig digits = load_config(configs / "digits.cfg");
    const RunResult r = run(digits, root / "digits");
    const bool ok = r.last.nsc_train >= 0.90 && r.last.nsc_heldout >= 0.85 && ratio(r.last) <= 0.3 &&
                    digits.trainer.iterations <= 20000 && r.seconds <= 1200.0;
    report(6, ok,
           fmt("NSC train %.3f, held-out %.3f, off/on %.3f, %.0f s", r.last.nsc_train, r.last.nsc_heldout,
               ratio(r.last), r.seconds));
  }

  {
    std::mt19937_64 rng(7);
    SubspaceModel m;
    m.mean = unit_columns(6, 1, rng).col(0);
    const Eigen::HouseholderQR<Matrix> qr(gaussian(6, 3, rng));
    m.basis = qr.householderQ() * Matrix::Identity(6, 3);
    m.sigma = Vector(3);
    m.sigma << 0.5, 0.3, 0.1;
    const double range = 1.2;
    const int n = 100000;
    Matrix centered(6, n);
    for (int i = 0; i < n; ++i) centered.col(i) = sample_feature(m, range, rng).raw - m.mean;
    const Matrix cov = centered * centered.transpose() / n;
    Matrix want = Matrix::Zero(6, 6);
    for (Index i = 0; i < 3; ++i) want += std::pow(range * m.sigma(i), 2) * m.basis.col(i) * m.basis.col(i).transpose();
    const double err = (cov - want).norm() / want.norm();
    const FeatureSample zero = sample_feature(m, 0.0, rng);
    const bool exact = zero.feature == m.mean.normalized();
    report(7, err <= 0.03 && exact, fmt("covariance error %.4f", err) + (exact ? ", range 0 exact" : ", range 0 inexact"));
  }

  {
    const RunResult again = run(synthetic, root / "synthetic-again");
    const bool same = slurp(base.dir / "metrics.csv") == slurp(again.dir / "metrics.csv");
    report(8, same, same ? "metrics.csv byte-identical" : "metrics.csv differs");
  }

  {
    ExperimentConfig sn = synthetic;
    sn.net.spectral_norm = true;
    const RunResult r = run(sn, root / "synthetic-sn");
    const bool on = synthetic_ok(r, detail);
    std::string off_detail;
    const bool off = synthetic_ok(base, off_detail);
    const bool neither_diverges = base.finite && r.finite;
    report(9, on && off && neither_diverges,
           "spectral norm on: " + detail + (neither_diverges ? "" : "; divergence"));
  }

  return failures == 0 ? 0 : 1;
}
