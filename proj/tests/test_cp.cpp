#include <gtest/gtest.h>

#include "tdmor/tensor/cp.hpp"

using namespace tdmor;

namespace {

CpFactors random_cp(const Dims& dims, std::size_t rank, SplitMix64& rng) {
  CpFactors f;
  f.rank = rank;
  for (std::size_t n : dims) {
    Matrix a = random_matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(rank), rng);
    for (Eigen::Index j = 0; j < a.cols(); ++j) a.col(j).normalize();
    f.factors.push_back(a);
  }
  f.weights = random_vector(static_cast<Eigen::Index>(rank), rng, 0.5, 2.0);
  return f;
}

// Sum of outer products, computed independently of cp_reconstruct.
Tensor sum_of_outer(const CpFactors& f) {
  Tensor acc(f.dims());
  for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(f.rank); ++r) {
    std::vector<Vector> cols;
    for (const auto& a : f.factors) cols.push_back(a.col(r));
    Tensor o = outer(cols);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += f.weights(r) * o[i];
  }
  return acc;
}

}  // namespace

TEST(CpReconstruct, SingleRankOneTerm) {
  Vector a(2), b(3), c(2);
  a << 1, 0;
  b << 0, 1, 0;
  c << 0.6, 0.8;
  CpFactors f{1, {a, b, c}, Vector::Ones(1)};
  Vector vs[] = {a, b, c};
  EXPECT_EQ(cp_reconstruct(f), outer(vs));
}

TEST(CpReconstruct, ZeroWeightsGiveZeroTensor) {
  SplitMix64 rng(1);
  CpFactors f = random_cp({3, 3, 3}, 2, rng);
  f.weights.setZero();
  EXPECT_EQ(cp_reconstruct(f).frobenius_norm(), 0.0);
}

TEST(CpReconstruct, MatchesSumOfOuterProducts) {
  SplitMix64 rng(2);
  CpFactors f = random_cp({3, 4, 2, 3}, 3, rng);
  EXPECT_LT(relative_error(cp_reconstruct(f), sum_of_outer(f)), 1e-14);
}

TEST(CpMode1Matrix, RankOneThirdOrder) {
  SplitMix64 rng(3);
  CpFactors f = random_cp({3, 4, 5}, 1, rng);
  Matrix expect = f.weights(0) * f.factors[0] * khatri_rao(f.factors[2], f.factors[1]).transpose();
  EXPECT_LT((cp_mode1_matrix(f) - expect).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(CpMode1Matrix, DualPathAgreesWithReconstruction) {
  SplitMix64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    CpFactors f = random_cp({4, 3, 5}, 3, rng);
    Matrix diff = cp_mode1_matrix(f) - matricize_mode1(cp_reconstruct(f));
    EXPECT_LE(diff.cwiseAbs().maxCoeff(), 1e-12);
    CpFactors g = random_cp({2, 3, 2, 3}, 2, rng);
    EXPECT_LE((cp_mode1_matrix(g) - matricize_mode1(cp_reconstruct(g))).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(CpMode1Matrix, SuperdiagonalFromIdentityFactors) {
  const Eigen::Index n = 3;
  CpFactors f{3, {Matrix::Identity(n, n), Matrix::Identity(n, n), Matrix::Identity(n, n)}, Vector::Ones(n)};
  Tensor super(Dims{3, 3, 3});
  for (std::size_t i = 0; i < 3; ++i) super(i, i, i) = 1.0;
  EXPECT_EQ(cp_mode1_matrix(f), matricize_mode1(super));
}

TEST(CpMode1Matrix, FactoredEvaluationEqualsUnfolded) {
  // The O(n r) path: A1 diag(w) ((A2^T x) .* (A3^T y)) == mat(T) (y kron x).
  SplitMix64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    CpFactors f = random_cp({6, 6, 6}, 4, rng);
    Vector x = random_vector(6, rng), y = random_vector(6, rng);
    Vector unfolded = cp_mode1_matrix(f) * kron(y, x);
    Vector factored = f.factors[0] * f.weights.asDiagonal() *
                      (f.factors[1].transpose() * x).cwiseProduct(f.factors[2].transpose() * y);
    EXPECT_LT((unfolded - factored).norm() / unfolded.norm(), 1e-10);
  }
}

TEST(CpDecompose, ExactRankOne) {
  SplitMix64 rng(6);
  Vector vs[] = {random_vector(4, rng), random_vector(5, rng), random_vector(3, rng)};
  Tensor t = outer(vs);
  CpResult r = cp_decompose(t, 1);
  EXPECT_GE(r.fit, 1.0 - 1e-6);
  EXPECT_EQ(cp_reconstruct(r.factors).dims(), t.dims());
}

TEST(CpDecompose, RecoversKnownRankThree) {
  SplitMix64 rng(7);
  CpFactors truth = random_cp({6, 5, 7}, 3, rng);
  Tensor t = sum_of_outer(truth);
  CpResult r = cp_decompose(t, 3, {.max_iters = 2000, .fit_tolerance = 1e-14, .restarts = 3, .seed = 11});
  EXPECT_LE(relative_error(cp_reconstruct(r.factors), t), 1e-5);
}

TEST(CpDecompose, ZeroTensorConvention) {
  Tensor t(Dims{3, 3, 3});
  CpResult r = cp_decompose(t, 2);
  EXPECT_EQ(r.fit, 1.0);
  EXPECT_EQ(r.factors.weights, Vector::Zero(2));
  for (const auto& a : r.factors.factors)
    for (Eigen::Index j = 0; j < a.cols(); ++j) EXPECT_NEAR(a.col(j).norm(), 1.0, 1e-14);
  EXPECT_EQ(cp_reconstruct(r.factors).frobenius_norm(), 0.0);
}

TEST(CpDecompose, RankZeroRejected) {
  EXPECT_THROW(cp_decompose(Tensor(Dims{2, 2}), 0), DimensionError);
}

TEST(CpDecompose, UnitColumnsAndPositiveWeights) {
  SplitMix64 rng(8);
  Tensor t(Dims{4, 4, 4});
  for (auto& v : t.data()) v = rng.uniform(-1, 1);
  CpResult r = cp_decompose(t, 3, {.max_iters = 50});
  for (const auto& a : r.factors.factors)
    for (Eigen::Index j = 0; j < a.cols(); ++j) EXPECT_NEAR(a.col(j).norm(), 1.0, 1e-12);
  EXPECT_GE(r.factors.weights.minCoeff(), 0.0);
}

TEST(CpDecompose, FitIsMonotoneAcrossIterations) {
  SplitMix64 rng(9);
  Tensor t(Dims{5, 6, 4});
  for (auto& v : t.data()) v = rng.uniform(-1, 1);
  CpResult r = cp_decompose(t, 4, {.max_iters = 200, .fit_tolerance = 0.0, .restarts = 2});
  ASSERT_GT(r.fit_history.size(), 10u);
  for (std::size_t i = 1; i < r.fit_history.size(); ++i)
    EXPECT_GE(r.fit_history[i], r.fit_history[i - 1] - 1e-12) << "iteration " << i;
}

TEST(CpDecompose, NonConvergenceIsNotAnError) {
  SplitMix64 rng(10);
  Tensor t(Dims{5, 5, 5});
  for (auto& v : t.data()) v = rng.uniform(-1, 1);
  CpResult r = cp_decompose(t, 3, {.max_iters = 2, .fit_tolerance = 0.0, .restarts = 1});
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 2);
  EXPECT_LT(r.fit, 1.0);
}

TEST(CpDecompose, DeterministicForSeed) {
  SplitMix64 rng(12);
  Tensor t(Dims{4, 5, 3});
  for (auto& v : t.data()) v = rng.uniform(-1, 1);
  CpResult a = cp_decompose(t, 2, {.seed = 99});
  CpResult b = cp_decompose(t, 2, {.seed = 99});
  EXPECT_EQ(a.fit, b.fit);
  EXPECT_EQ(a.factors.weights, b.factors.weights);
}

TEST(CpDecompose, WarmStartNeverLosesFit) {
  SplitMix64 rng(13);
  Tensor t(Dims{6, 6, 6});
  for (auto& v : t.data()) v = rng.uniform(-1, 1);
  CpResult prev = cp_decompose(t, 1, {.max_iters = 100, .restarts = 1});
  for (std::size_t r = 2; r <= 6; ++r) {
    CpResult cur = cp_decompose(t, r, {.max_iters = 100, .restarts = 2, .init = &prev.factors});
    EXPECT_GE(cur.fit, prev.fit - 1e-12) << "rank " << r;
    prev = cur;
  }
}

TEST(CpDecompose, SparseInputMatchesDense) {
  SplitMix64 rng(14);
  CpFactors truth = random_cp({4, 4, 4}, 2, rng);
  Tensor t = sum_of_outer(truth);
  t(0, 0, 0) = 0.0;
  CpResult dense = cp_decompose(t, 2, {.restarts = 1});
  CpResult sparse = cp_decompose(SparseTensor::from_dense(t), 2, {.restarts = 1});
  EXPECT_EQ(dense.fit, sparse.fit);
}

TEST(CpDecompose, ImplicitProbeMatchesExplicit) {
  SplitMix64 rng(15);
  CpFactors truth = random_cp({5, 4, 6}, 2, rng);
  Tensor t = sum_of_outer(truth);
  SparseTensor s = SparseTensor::from_dense(t);
  auto probe = [&](std::size_t k, const std::vector<Matrix>& f) { return mttkrp(s, f, k); };
  const double nsq = t.frobenius_norm() * t.frobenius_norm();
  CpResult r = cp_decompose_implicit(t.dims(), 2, probe, nsq, {.max_iters = 1000, .fit_tolerance = 1e-13});
  EXPECT_LE(relative_error(cp_reconstruct(r.factors), t), 1e-5);
  EXPECT_GT(r.fit, 1.0 - 1e-5);
}

TEST(CpExact, LosslessFiberExpansion) {
  SplitMix64 rng(16);
  Tensor t(Dims{3, 4, 2, 3});
  for (auto& v : t.data()) v = rng.uniform(-1, 1) * (rng.uniform() < 0.5 ? 0.0 : 1.0);
  CpFactors f = cp_exact(t);
  f.validate();
  EXPECT_LT(relative_error(cp_reconstruct(f), t), 1e-15);
  EXPECT_EQ(cp_exact(Tensor(Dims{2, 2, 2})).weights, Vector::Zero(1));
}
