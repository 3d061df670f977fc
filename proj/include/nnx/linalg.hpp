#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <vector>

namespace nnx {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Orthonormal basis of the column space of a matrix, truncated at a relative
/// singular-value threshold.
struct RangeBasis
{
	Mat basis;              // columns are orthonormal
	Vec singular_values;    // all singular values, descending
	int rank = 0;
};

RangeBasis column_space(const Mat& m, double rel_tol);

/// Rank from column-pivoting QR; cheaper than an SVD and adequate for
/// generic matrices.
int numerical_rank(const Mat& m, double rel_tol);

/// Minimum-norm x with m*x as close as possible to target, computed in the
/// eigenbasis of the input-space Gram matrix m^T m. Directions whose
/// eigenvalue is below rel_eig_tol * lambda_max are dropped.
struct Preimage
{
	Vec x;
	Vec image;   // m * x
	int rank = 0;
};

Preimage gram_preimage(const Mat& m, const Vec& target, double rel_eig_tol);

/// Leading eigenpairs of m^T m above rel_eig_tol * lambda_max. With
/// w = vectors * diag(values)^(-1/2), the columns of m * w are an orthonormal
/// basis of the range of m and w maps coordinates in that basis back to a
/// min-norm preimage.
struct GramEigen
{
	Mat vectors;   // d0 x rank
	Vec values;    // rank, descending
	int rank() const { return static_cast<int>(values.size()); }
};

GramEigen gram_eigen(const Mat& m, double rel_eig_tol);

/// Least-squares solution of a*x = b (min-norm when rank deficient) with the
/// effective rank reported back.
struct LstsqResult
{
	Mat x;
	int rank = 0;
	double residual = 0.0;   // Frobenius norm of a*x - b
};

LstsqResult least_squares(const Mat& a, const Mat& b, double rel_tol = 1e-12);

/// Row indices of a 0/1 mask that are set.
std::vector<int> active_indices(const std::vector<std::uint8_t>& mask);

Vec standard_normal(int n, std::mt19937_64& rng);

/// Deterministic 64-bit seed derived from a base seed and a short tuple of
/// integers (splitmix64 mixing).
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts);

}  // namespace nnx
