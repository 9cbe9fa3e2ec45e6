#include <gtest/gtest.h>

#include <ssbd/ssbd.hpp>

#include "oracles.hpp"

#include <algorithm>

using namespace ssbd;

namespace {

ObservationModel random_model(Index k, double theta, Index m, std::uint64_t seed) {
  return ObservationModel::build(generate_instance(k, theta, m, seed).y);
}

Vector e(Index k, Index i) { return Vector::Unit(k, i); }

Vector saddle12(Index k) { return (e(k, 0) + e(k, 1)) / std::sqrt(2.0); }

}  // namespace

TEST(Eta, DeltaObservation) {
  const Observation y = Observation::make(Vector::Unit(16, 0), 3);
  const ObservationModel mo = ObservationModel::build(y);
  EXPECT_LE((mo.B - Matrix::Identity(3, 3)).norm(), 1e-15);
  Rng rng(1);
  const Vector q = oracle::random_unit(3, rng);
  EXPECT_LE((eta(mo, q) - correlate_windows(y.y, q)).norm(), 1e-15);
}

TEST(Eta, UnitNorm) {
  Rng rng(2);
  for (int t = 0; t < 5; ++t) {
    const ObservationModel mo = random_model(6, 0.2, 400, 10 + t);
    EXPECT_NEAR(eta(mo, oracle::random_unit(6, rng)).norm(), 1.0, 1e-8);
  }
}

TEST(Eta, MatchesMaterializedProduct) {
  const ObservationModel mo = random_model(3, 0.3, 16, 3);
  const Matrix Y = oracle::window_matrix(mo.y.y, 3);
  const Matrix G = Y * Y.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> es(G);
  const Matrix B = es.operatorInverseSqrt();
  EXPECT_LE((B * G * B - Matrix::Identity(3, 3)).norm(), 1e-8);
  EXPECT_LE((mo.B * mo.yy_gram * mo.B - Matrix::Identity(3, 3)).norm(), 1e-8);
  Rng rng(4);
  const Vector q = oracle::random_unit(3, rng);
  EXPECT_LE((eta(mo, q) - Y.transpose() * B * q).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Psi, EvenAndMatchesDirectSum) {
  const ObservationModel mo = random_model(3, 0.3, 16, 5);
  Rng rng(6);
  const Vector q = oracle::random_unit(3, rng);
  EXPECT_EQ(psi(mo, q), psi(mo, Vector(-q)));
  const Matrix Y = oracle::window_matrix(mo.y.y, 3);
  const Vector et = Y.transpose() * mo.B * q;
  double s = 0.0;
  for (Index i = 0; i < et.size(); ++i) s += std::pow(et[i], 4);
  EXPECT_NEAR(psi(mo, q), -s / (4.0 * 16), 1e-12);
}

TEST(Psi, SingleSpikeEta) {
  const ObservationModel mo = ObservationModel::build(Observation::make(Vector::Unit(20, 0), 4));
  EXPECT_NEAR(psi(mo, e(4, 0)), -1.0 / (4.0 * 20), 1e-15);
}

TEST(GradPsi, FiniteDifference) {
  Rng rng(7);
  for (int t = 0; t < 4; ++t) {
    const ObservationModel mo = random_model(8, 0.15, 600, 20 + t);
    const Vector q = oracle::random_unit(8, rng);
    const Vector g = grad_psi(mo, q);
    EXPECT_LE(std::abs(q.dot(g)), 1e-14 * std::max(1.0, g.norm()));
    auto f = [&](const Vector& x) { return psi(mo, x); };
    for (int d = 0; d < 20; ++d) {
      const Vector v = oracle::random_tangent(q, rng);
      const double fd = oracle::sphere_directional_fd(f, q, v, 1e-5);
      EXPECT_LE(std::abs(fd - g.dot(v)), 1e-5 * g.norm()) << "instance " << t << " dir " << d;
    }
    EXPECT_LE(oracle::rel_err(g, oracle::riemannian_gradient_fd(f, q, 1e-5)), 1e-5);
  }
}

TEST(GradPsi, OddSymmetry) {
  const ObservationModel mo = random_model(5, 0.2, 200, 8);
  Rng rng(9);
  const Vector q = oracle::random_unit(5, rng);
  EXPECT_LE((grad_psi(mo, q) + grad_psi(mo, Vector(-q))).norm(), 1e-15);
}

TEST(HessPsi, GradientDifferenceAndSymmetry) {
  Rng rng(10);
  for (int t = 0; t < 3; ++t) {
    const ObservationModel mo = random_model(7, 0.2, 500, 30 + t);
    const Vector q = oracle::random_unit(7, rng);
    auto grad = [&](const Vector& x) { return grad_psi(mo, x); };
    for (int d = 0; d < 5; ++d) {
      const Vector v = oracle::random_tangent(q, rng);
      const Vector hv = hess_psi_vec(mo, q, v);
      EXPECT_LE(oracle::rel_err(hv, oracle::hess_vec_from_grad(grad, q, v, 1e-5)), 1e-4);
    }
    for (int d = 0; d < 50; ++d) {
      const Vector u = oracle::random_tangent(q, rng), v = oracle::random_tangent(q, rng);
      const double a = hess_psi_vec(mo, q, u).dot(v), b = u.dot(hess_psi_vec(mo, q, v));
      EXPECT_LE(std::abs(a - b), 1e-9 * std::max(1.0, std::abs(a)));
    }
    EXPECT_EQ(hess_psi_vec(mo, q, Vector::Zero(7)).norm(), 0.0);
    const Matrix H = hess_psi(mo, q);
    const Vector v = oracle::random_tangent(q, rng);
    EXPECT_LE((H * v - hess_psi_vec(mo, q, v)).norm(), 1e-12 * std::max(1.0, H.norm()));
  }
}

TEST(HessPsi, RejectsNormalDirection) {
  const ObservationModel mo = random_model(4, 0.2, 100, 11);
  Rng rng(12);
  const Vector q = oracle::random_unit(4, rng);
  EXPECT_THROW(hess_psi_vec(mo, q, q), ContractError);
}

TEST(Phi, DeltaKernelValues) {
  const ShiftModel s = ShiftModel::build(Kernel::delta(5));
  EXPECT_NEAR(phi(s.A, e(5, 0)), -0.25, 1e-15);
  EXPECT_NEAR(phi(s.A, saddle12(5)), -0.125, 1e-15);
}

TEST(Phi, MatchesLoop) {
  Rng rng(13);
  const ShiftModel s = ShiftModel::build(random_kernel(6, rng));
  const Vector q = oracle::random_unit(6, rng);
  double acc = 0.0;
  for (Index i = 0; i < s.A.cols(); ++i) acc += std::pow(s.A.col(i).dot(q), 4);
  EXPECT_NEAR(phi(s.A, q), -0.25 * acc, 1e-14);
}

TEST(GradPhi, DeltaStationaryPoints) {
  const Index k = 5;
  const ShiftModel s = ShiftModel::build(Kernel::delta(k));
  EXPECT_LE(grad_phi(s.A, e(k, 0)).norm(), 1e-15);
  const Matrix P = Matrix::Identity(k, k) - e(k, 0) * e(k, 0).transpose();
  EXPECT_LE((hess_phi(s.A, e(k, 0)) - P).norm(), 1e-14);
  const Vector q = saddle12(k);
  EXPECT_LE(grad_phi(s.A, q).norm(), 1e-15);
  const Vector v = (e(k, 0) - e(k, 1)) / std::sqrt(2.0);
  EXPECT_NEAR(v.dot(hess_phi(s.A, q) * v), -1.0, 1e-14);
}

TEST(GradPhi, FiniteDifference) {
  Rng rng(14);
  for (int t = 0; t < 5; ++t) {
    const ShiftModel s = ShiftModel::build(random_kernel(10, rng));
    const Vector q = oracle::random_unit(10, rng);
    auto f = [&](const Vector& x) { return phi(s.A, x); };
    auto grad = [&](const Vector& x) { return grad_phi(s.A, x); };
    EXPECT_LE(oracle::rel_err(grad_phi(s.A, q), oracle::riemannian_gradient_fd(f, q, 1e-5)), 1e-6);
    const Matrix H = hess_phi(s.A, q);
    EXPECT_LE((H - H.transpose()).norm(), 1e-15);
    for (int d = 0; d < 5; ++d) {
      const Vector v = oracle::random_tangent(q, rng);
      EXPECT_LE(oracle::rel_err(Vector(H * v), oracle::hess_vec_from_grad(grad, q, v, 1e-5)), 1e-6);
    }
  }
}

TEST(PopulationExpectation, SimplifiedForm) {
  Rng rng(15);
  const ShiftModel s = ShiftModel::build(random_kernel(7, rng));
  const Vector q = oracle::random_unit(7, rng);
  const Vector zeta = s.A.transpose() * q;
  EXPECT_NEAR(zeta.norm(), 1.0, 1e-12);
  for (double th : {0.1, 0.5, 0.9}) {
    EXPECT_NEAR(population_expectation(s.A, q, th), 3 * th * (1 - th) * l4_4(zeta) + 3 * th * th, 1e-12);
  }
  // The |zeta|_4^4 coefficient vanishes as theta -> 1.
  const double near1 = population_expectation(s.A, q, 1.0 - 1e-12);
  EXPECT_NEAR(near1, 3.0, 1e-10);
  EXPECT_THROW(population_expectation(s.A, q, 1.0), ParameterError);
}

TEST(Regions, DeltaKernelEverywhere) {
  const ShiftModel s = ShiftModel::build(Kernel::delta(6));
  Rng rng(16);
  for (int t = 0; t < 20; ++t) {
    const RegionValues r = region_values(s, oracle::random_unit(6, rng), 10.0);
    EXPECT_TRUE(r.in_R);
    EXPECT_TRUE(r.in_Rhat);
    EXPECT_EQ(r.rhs_Rhat, 0.0);
  }
}

TEST(Regions, NormalizedColumnsOfGenericKernels) {
  // Empirical rate for q = P_S[a_l]; lhs <= 1 so the rate is 0 whenever 10 mu kappa^2 > 1.
  Rng rng(17);
  int in = 0, total = 0, forced_out = 0;
  for (int t = 0; t < 50; ++t) {
    const Index k = 5 + static_cast<Index>(rng.below(40));
    const ShiftModel s = ShiftModel::build(random_kernel(k, rng));
    const Index l = k - 1;
    const RegionValues r = region_values(s, Vector(s.A.col(l).normalized()), 10.0);
    EXPECT_LE(r.lhs, 1.0 + 1e-12);
    in += r.in_Rhat ? 1 : 0;
    forced_out += r.rhs_Rhat > 1.0 ? 1 : 0;
    ++total;
  }
  RecordProperty("in_rhat_rate", std::to_string(static_cast<double>(in) / total));
  EXPECT_LE(in, total - forced_out);
}

TEST(Regions, RhatImpliesR) {
  Rng rng(18);
  int violations = 0, rhat_hits = 0;
  for (int t = 0; t < 1000; ++t) {
    const Index k = 4 + static_cast<Index>(rng.below(8));
    const double eps = std::pow(10.0, -3.0 + 2.5 * rng.uniform());
    const ShiftModel s = ShiftModel::build(oracle::near_delta_kernel(k, eps, rng.next_u64()));
    Vector q = oracle::random_unit(k, rng);
    if (t % 2 == 0) q = (q + 6.0 * e(k, static_cast<Index>(rng.below(static_cast<std::uint64_t>(k))))).normalized();
    const RegionValues r = region_values(s, q, 1.0 + 20.0 * rng.uniform());
    rhat_hits += r.in_Rhat ? 1 : 0;
    if (r.in_Rhat && !r.in_R) ++violations;
  }
  EXPECT_EQ(violations, 0);
  EXPECT_GT(rhat_hits, 50);
}

TEST(Regions, BadConstant) {
  const ShiftModel s = ShiftModel::build(Kernel::delta(3));
  EXPECT_THROW(region_values(s, e(3, 0), 0.0), ParameterError);
}

TEST(CubicIntervals, FactoredCase) {
  const auto iv = cubic_root_intervals(1.0, 0.0);
  EXPECT_EQ(iv[0].center, 1.0);
  EXPECT_EQ(iv[1].center, 0.0);
  EXPECT_EQ(iv[2].center, -1.0);
  for (const auto& i : iv) EXPECT_EQ(i.half_width, 0.0);
}

TEST(CubicIntervals, SmallPerturbation) {
  const auto roots = oracle::depressed_cubic_roots(1.0, 0.1);
  std::vector<double> r(roots.begin(), roots.end());
  std::sort(r.begin(), r.end());
  EXPECT_NEAR(r[0], -1.0, 0.2);
  EXPECT_NEAR(r[1], 0.0, 0.2);
  EXPECT_NEAR(r[2], 1.0, 0.2);
  for (double x : r) EXPECT_NEAR(x * x * x - x + 0.1, 0.0, 1e-14);
}

TEST(CubicIntervals, RandomContainment) {
  Rng rng(19);
  int contained = 0;
  const int n = 10000;
  for (int t = 0; t < n; ++t) {
    const double alpha = 0.1 + 9.9 * rng.uniform();
    const double beta = (2.0 * rng.uniform() - 1.0) * 0.25 * std::pow(alpha, 1.5) * (1.0 - 1e-12);
    const auto iv = cubic_root_intervals(alpha, beta);
    const auto roots = oracle::depressed_cubic_roots(alpha, beta);
    bool all = true;
    for (double x : roots) {
      // The oracle roots satisfy x^3 - alpha x + beta = 0, i.e. x(alpha - x^2) = beta.
      bool in = false;
      for (const auto& i : iv) in = in || i.contains(x);
      all = all && in;
    }
    contained += all ? 1 : 0;
  }
  EXPECT_EQ(contained, n);
}

TEST(CubicIntervals, DomainErrors) {
  EXPECT_THROW(cubic_root_intervals(0.0, 0.0), DomainError);
  EXPECT_THROW(cubic_root_intervals(1.0, 0.3), DomainError);
}

TEST(Classify, DeltaMinimum) {
  const Index k = 5;
  const ShiftModel s = ShiftModel::build(Kernel::delta(k));
  const StationaryReport r = classify_stationary(s, e(k, 0));
  ASSERT_EQ(r.kind, StationaryKind::LocalMin);
  ASSERT_EQ(r.spikes.size(), 1u);
  EXPECT_EQ(r.spikes[0], r.local_min_column);
  EXPECT_LE((s.A.col(r.local_min_column) - e(k, 0)).norm(), 1e-15);
  EXPECT_NEAR(r.alignment, 1.0, 1e-15);
  EXPECT_TRUE(r.meets_alignment_bound);
  EXPECT_LE(trinarity_excess(r), 1e-12);
}

TEST(Classify, DeltaSaddle) {
  const Index k = 5;
  const ShiftModel s = ShiftModel::build(Kernel::delta(k));
  const Vector q = saddle12(k);
  const StationaryReport r = classify_stationary(s, q);
  ASSERT_EQ(r.kind, StationaryKind::Saddle);
  EXPECT_EQ(r.spikes.size(), 2u);
  EXPECT_LE(r.curvature, -0.5 * l4_4(r.zeta));
  const Vector v = (e(k, 0) - e(k, 1)) / std::sqrt(2.0);
  EXPECT_NEAR(std::abs(r.curvature_direction.dot(v)), 1.0, 1e-12);
}

TEST(Classify, SpikeSetMatchesThreshold) {
  Rng rng(20);
  const ShiftModel s = ShiftModel::build(oracle::near_delta_kernel(8, 0.01, 77));
  const OptReport rep = descend(PhiObjective(s.A), oracle::random_unit(8, rng));
  const StationaryReport r = classify_stationary(s, rep.q_final);
  std::vector<Index> expect;
  for (Index i = 0; i < r.zeta.size(); ++i)
    if (std::abs(r.zeta[i]) > r.spike_threshold) expect.push_back(i);
  EXPECT_EQ(r.spikes, expect);
  if (r.kind == StationaryKind::LocalMin) EXPECT_EQ(r.spikes.size(), 1u);
}

TEST(Classify, OutsideRegionAndNonStationary) {
  Rng rng(21);
  const ShiftModel s = ShiftModel::build(random_kernel(12, rng));
  const OptReport rep = descend(PhiObjective(s.A), oracle::random_unit(12, rng));
  const StationaryReport r = classify_stationary(s, rep.q_final);
  EXPECT_EQ(r.kind, StationaryKind::Unresolved);
  EXPECT_EQ(r.reason, "outside region");
  EXPECT_THROW(classify_stationary(s, oracle::random_unit(12, rng)), ContractError);
}

TEST(MinTangentEig, SyntheticDiagonal) {
  Vector d(4);
  d << -2, 1, 3, 100;
  const Vector q = e(4, 3);
  auto op = [&](const Vector& v) { return Vector(d.asDiagonal() * v); };
  const EigPair p = min_tangent_eig(op, q, 1e-10);
  EXPECT_NEAR(p.lambda, -2.0, 1e-8);
  EXPECT_NEAR(std::abs(p.v[0]), 1.0, 1e-8);
  EXPECT_LE(std::abs(p.v.dot(q)), 1e-12);
}

TEST(MinTangentEig, PsdOperatorAndDeltaSaddle) {
  Rng rng(22);
  const Index k = 9;
  Matrix M(k, k);
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < k; ++j) M(i, j) = rng.normal();
  const Matrix S = M * M.transpose();
  const Vector q = oracle::random_unit(k, rng);
  const EigPair p = min_tangent_eig([&](const Vector& v) { return Vector(S * v); }, q, 1e-8);
  EXPECT_GE(p.lambda, -1e-8);

  const ShiftModel s = ShiftModel::build(Kernel::delta(6));
  const Vector qs = saddle12(6);
  const Matrix H = hess_phi(s.A, qs);
  const EigPair sp = min_tangent_eig([&](const Vector& v) { return Vector(H * v); }, qs, 1e-10);
  EXPECT_NEAR(sp.lambda, -1.0, 1e-8);
  EXPECT_NEAR(std::abs(sp.v.dot((e(6, 0) - e(6, 1)) / std::sqrt(2.0))), 1.0, 1e-8);
}

TEST(MinTangentEig, NonSymmetricOperatorFails) {
  Matrix M = Matrix::Zero(4, 4);
  M(1, 2) = 1.0;
  M(2, 3) = -1.0;
  M(3, 1) = 0.5;
  const Vector q = e(4, 0);
  EXPECT_THROW(min_tangent_eig([&](const Vector& v) { return Vector(M * v); }, q, 1e-12), IterationError);
}

TEST(GapMeasurements, FinitePositiveAndDeterministic) {
  const Instance inst = generate_instance(8, 0.1, 4096, 23);
  const ShiftModel s = ShiftModel::build(inst.kernel);
  const ObservationModel mo = ObservationModel::build(inst.y);
  const Vector q = s.A.col(7).normalized();
  const GapMeasurement g = measure_gradient_gap(mo, s, 0.1, q), g2 = measure_gradient_gap(mo, s, 0.1, q);
  EXPECT_TRUE(std::isfinite(g.ratio));
  EXPECT_GT(g.ratio, 0.0);
  EXPECT_EQ(g.ratio, g2.ratio);
  const GapMeasurement h = measure_hessian_gap(mo, s, 0.1, q), h2 = measure_hessian_gap(mo, s, 0.1, q);
  EXPECT_TRUE(std::isfinite(h.ratio));
  EXPECT_GT(h.deviation, 0.0);
  EXPECT_EQ(h.deviation, h2.deviation);
  EXPECT_THROW(measure_gradient_gap(mo, s, 0.0, q), ParameterError);
}

TEST(GapMeasurements, RatioShrinksWithM) {
  Rng krng(24);
  const Kernel a = random_kernel(6, krng);
  const ShiftModel s = ShiftModel::build(a);
  const double theta = 0.1;
  Rng qrng(25);
  std::vector<Vector> qs;
  for (int i = 0; i < 20; ++i) qs.push_back(oracle::random_unit(6, qrng));
  std::vector<double> grad_med, hess_med;
  for (int p = 10; p <= 14; ++p) {
    const Index m = Index{1} << p;
    const ObservationModel mo = ObservationModel::build(convolve(a, sample_bg(m, theta, 100 + p).values()));
    std::vector<double> gr, hr;
    for (const auto& q : qs) {
      gr.push_back(measure_gradient_gap(mo, s, theta, q).ratio);
      hr.push_back(measure_hessian_gap(mo, s, theta, q).ratio);
    }
    grad_med.push_back(median(gr));
    hess_med.push_back(median(hr));
  }
  // One realisation per m, so single doublings are noisy; the trend over four
  // doublings should be close to the m^{-1/2} factor of 4.
  int down = 0;
  for (std::size_t i = 1; i < grad_med.size(); ++i) down += grad_med[i] < grad_med[i - 1] ? 1 : 0;
  EXPECT_GE(down, 3);
  EXPECT_GE(grad_med.front() / grad_med.back(), 2.5);
  EXPECT_GE(hess_med.front() / hess_med.back(), 2.5);
}

TEST(WhiteningGap, BoundHoldsWithHighProbability) {
  int below = 0;
  for (int t = 0; t < 100; ++t) {
    const WhiteningGap g = measure_whitening_gap(sample_bg(1 << 16, 0.1, derive_seed(26, {static_cast<std::uint64_t>(t)})), 20);
    below += g.delta <= g.bound ? 1 : 0;
  }
  EXPECT_GE(below, 95);
}

TEST(WhiteningGap, DeterministicAndScaleSensitive) {
  const SparseSignal x = sample_bg(4096, 0.1, 27);
  const WhiteningGap a = measure_whitening_gap(x, 10), b = measure_whitening_gap(x, 10);
  EXPECT_EQ(a.delta, b.delta);
  // Normalisation is by theta m exactly, so rescaling x0 moves delta.
  SparseSignal y = x;
  y.gauss *= 2.0;
  EXPECT_GT(measure_whitening_gap(y, 10).delta, a.delta + 1.0);
}
