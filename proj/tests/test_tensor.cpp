#include <sstream>

#include <gtest/gtest.h>

#include "tdmor/tensor/cp.hpp"
#include "tdmor/tensor/tensor.hpp"

using namespace tdmor;

namespace {

Tensor random_tensor(const Dims& dims, SplitMix64& rng) {
  Tensor t(dims);
  for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

// Literal triple loop over the contraction sum, independent of the strided kernel.
Tensor brute_mode_product_3(const Tensor& t, const Matrix& x, std::size_t k) {
  Dims out_dims = t.dims();
  out_dims[k] = static_cast<std::size_t>(x.rows());
  Tensor out(out_dims);
  for (std::size_t a = 0; a < out_dims[0]; ++a)
    for (std::size_t b = 0; b < out_dims[1]; ++b)
      for (std::size_t c = 0; c < out_dims[2]; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < t.dim(k); ++j) {
          std::size_t ia = a, ib = b, ic = c, row = 0;
          if (k == 0) { row = a; ia = j; }
          if (k == 1) { row = b; ib = j; }
          if (k == 2) { row = c; ic = j; }
          s += t(ia, ib, ic) * x(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j));
        }
        out(a, b, c) = s;
      }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Tensor, RejectsBadShapes) {
  EXPECT_THROW(Tensor(Dims{}), DimensionError);
  EXPECT_THROW(Tensor(Dims{2, 0}), DimensionError);
  EXPECT_THROW(Tensor(Dims{2, 2}, std::vector<double>(3)), DimensionError);
}

TEST(Kron, IdentityTimesIdentity) {
  EXPECT_TRUE(kron(Matrix::Identity(2, 2), Matrix::Identity(2, 2)).isApprox(Matrix::Identity(4, 4)));
}

TEST(Kron, ColumnVectors) {
  Vector a(2), b(2);
  a << 1, 2;
  b << 3, 4;
  Vector expect(4);
  expect << 3, 4, 6, 8;
  EXPECT_EQ(Vector(kron(a, b)), expect);

  Vector x(2);
  x << 1, -1;
  Vector xx(4);
  xx << 1, -1, -1, 1;
  EXPECT_EQ(Vector(kron(x, x)), xx);
}

TEST(Kron, EntryFormula) {
  SplitMix64 rng(3);
  Matrix a = random_matrix(2, 3, rng), b = random_matrix(4, 2, rng);
  Matrix k = kron(a, b);
  ASSERT_EQ(k.rows(), 8);
  ASSERT_EQ(k.cols(), 6);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      for (int p = 0; p < 4; ++p)
        for (int q = 0; q < 2; ++q) EXPECT_EQ(k(i * 4 + p, j * 2 + q), a(i, j) * b(p, q));
}

TEST(KhatriRao, SingleColumnIsKron) {
  SplitMix64 rng(5);
  Matrix a = random_matrix(3, 1, rng), b = random_matrix(4, 1, rng);
  EXPECT_EQ(khatri_rao(a, b), kron(a, b));
}

TEST(KhatriRao, IdentityPair) {
  Matrix kr = khatri_rao(Matrix::Identity(2, 2), Matrix::Identity(2, 2));
  Matrix expect = Matrix::Zero(4, 2);
  expect(0, 0) = 1.0;  // e1 kron e1
  expect(3, 1) = 1.0;  // e2 kron e2
  EXPECT_EQ(kr, expect);
}

TEST(KhatriRao, ColumnwiseKronOracle) {
  SplitMix64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix a = random_matrix(3, 2, rng), b = random_matrix(4, 2, rng);
    Matrix kr = khatri_rao(a, b);
    for (Eigen::Index j = 0; j < 2; ++j) EXPECT_EQ(Vector(kr.col(j)), Vector(kron(a.col(j), b.col(j))));
  }
}

TEST(KhatriRao, ColumnMismatchThrows) {
  EXPECT_THROW(khatri_rao(Matrix::Ones(2, 2), Matrix::Ones(2, 3)), DimensionError);
}

TEST(ModeProduct, IdentityIsNoop) {
  SplitMix64 rng(11);
  Tensor t = random_tensor({3, 4, 5}, rng);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto n = static_cast<Eigen::Index>(t.dim(k));
    EXPECT_EQ(mode_k_product(t, Matrix::Identity(n, n), k), t);
  }
}

TEST(ModeProduct, MatchesTripleLoop) {
  SplitMix64 rng(13);
  Tensor t = random_tensor({3, 4, 5}, rng);
  for (std::size_t k = 0; k < 3; ++k) {
    Matrix x = random_matrix(2, static_cast<Eigen::Index>(t.dim(k)), rng);
    Tensor got = mode_k_product(t, x, k);
    Tensor want = brute_mode_product_3(t, x, k);
    ASSERT_EQ(got.dims(), want.dims());
    EXPECT_LT(max_abs_diff(got, want), 1e-14);
  }
}

TEST(ModeProduct, Errors) {
  Tensor t(Dims{2, 3});
  EXPECT_THROW(mode_k_product(t, Matrix::Ones(2, 2), 1), DimensionError);
  EXPECT_THROW(mode_k_product(t, Matrix::Ones(2, 2), 2), DimensionError);
}

TEST(ModeProduct, QuadraticFormMatchesKroneckerForm) {
  // T x_1 dx^T x_2 dx^T equals the unfolded operator applied to dx kron dx.
  SplitMix64 rng(17);
  const Eigen::Index n = 4;
  Tensor a2 = random_tensor({4, 4, 4}, rng);
  Vector dx = random_vector(n, rng);
  Tensor r = mode_k_product(mode_k_product(a2, dx.transpose(), 1), dx.transpose(), 2);
  Vector via_kron = matricize_mode1(a2) * kron(dx, dx);
  ASSERT_EQ(r.size(), 4u);
  for (Eigen::Index i = 0; i < n; ++i) EXPECT_NEAR(r[static_cast<std::size_t>(i)], via_kron(i), 1e-13);
}

TEST(ModeProduct, DistinctModesCommute) {
  SplitMix64 rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor t = random_tensor({3, 3, 3}, rng);
    Matrix x = random_matrix(3, 3, rng), y = random_matrix(3, 3, rng);
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 3; ++k) {
        if (j == k) continue;
        Tensor lhs = mode_k_product(mode_k_product(t, x, j), y, k);
        Tensor rhs = mode_k_product(mode_k_product(t, y, k), x, j);
        EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
      }
  }
}

TEST(Matricize, StorageOrderLayout) {
  Tensor t(Dims{2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Matrix m = matricize_mode1(t);
  Matrix expect(2, 4);
  expect << 1, 3, 5, 7,
            2, 4, 6, 8;
  EXPECT_EQ(m, expect);
  EXPECT_EQ(t(1, 0, 1), 6.0);
}

TEST(Matricize, RoundTrips) {
  SplitMix64 rng(23);
  Matrix m = random_matrix(3, 8, rng);
  EXPECT_EQ(matricize_mode1(tensorize(m, {3, 2, 4})), m);
  Matrix m9 = random_matrix(3, 9, rng);
  Tensor t = tensorize(m9, {3, 3, 3});
  EXPECT_EQ(matricize_mode1(t), m9);
  EXPECT_EQ(tensorize(matricize_mode1(t), t.dims()), t);
}

TEST(Matricize, RankOneOuterProduct) {
  SplitMix64 rng(29);
  Vector vs[] = {random_vector(3, rng), random_vector(4, rng), random_vector(2, rng)};
  Matrix m = matricize_mode1(outer(vs));
  Matrix expect = vs[0] * kron(vs[2], vs[1]).transpose();
  EXPECT_LT((m - expect).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Tensorize, Errors) {
  EXPECT_THROW(tensorize(Matrix::Ones(3, 8), {3, 3, 3}), DimensionError);
  EXPECT_THROW(tensorize(Matrix::Ones(2, 9), {3, 3, 3}), DimensionError);
}

TEST(Tensorize, DegenerateTrailingDims) {
  Vector v(4);
  v << 1, 2, 3, 4;
  Tensor t = tensorize(v, {4, 1, 1});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(t(i, 0, 0), v(static_cast<Eigen::Index>(i)));
}

TEST(Matricize, BilinearFormIdentity) {
  // mat(T x_1 x^T x_2 y^T) = mat(T) (y kron x) for third-order T.
  SplitMix64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor t = random_tensor({3, 4, 5}, rng);
    Vector x = random_vector(4, rng), y = random_vector(5, rng);
    Tensor r = mode_k_product(mode_k_product(t, x.transpose(), 1), y.transpose(), 2);
    Vector lhs = Eigen::Map<const Vector>(r.data().data(), 3);
    Vector rhs = matricize_mode1(t) * kron(y, x);
    EXPECT_LT((lhs - rhs).norm() / rhs.norm(), 1e-10);
  }
}

TEST(TextDump, RoundTripsExactly) {
  SplitMix64 rng(37);
  Tensor t = random_tensor({2, 3, 2}, rng);
  std::stringstream ss;
  write_tensor_text(ss, t);
  EXPECT_EQ(ss.str().substr(0, 15), "tensor 3 2 3 2\n");
  EXPECT_EQ(read_tensor_text(ss), t);
}
