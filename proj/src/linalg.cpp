#include "nnx/linalg.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

namespace nnx {

RangeBasis column_space(const Mat& m, double rel_tol)
{
	RangeBasis out;
	if (m.rows() == 0 || m.cols() == 0) {
		out.basis = Mat::Zero(m.rows(), 0);
		out.singular_values = Vec::Zero(0);
		return out;
	}
	Eigen::BDCSVD<Mat> svd(m, Eigen::ComputeThinU);
	out.singular_values = svd.singularValues();
	const double smax = out.singular_values.size() ? out.singular_values(0) : 0.0;
	int rank = 0;
	if (smax > 0.0) {
		for (Eigen::Index k = 0; k < out.singular_values.size(); ++k)
			if (out.singular_values(k) > rel_tol * smax)
				++rank;
	}
	out.rank = rank;
	out.basis = svd.matrixU().leftCols(rank);
	return out;
}

int numerical_rank(const Mat& m, double rel_tol)
{
	if (m.size() == 0)
		return 0;
	Eigen::ColPivHouseholderQR<Mat> qr(m);
	qr.setThreshold(rel_tol);
	return static_cast<int>(qr.rank());
}

GramEigen gram_eigen(const Mat& m, double rel_eig_tol)
{
	GramEigen out;
	const Mat gram = m.transpose() * m;
	Eigen::SelfAdjointEigenSolver<Mat> eig(gram);
	const Vec& lambda = eig.eigenvalues();   // ascending
	const Eigen::Index n = lambda.size();
	const double lmax = n ? lambda(n - 1) : 0.0;
	Eigen::Index rank = 0;
	if (lmax > 0.0)
		while (rank < n && lambda(n - 1 - rank) > rel_eig_tol * lmax)
			++rank;
	out.vectors = eig.eigenvectors().rightCols(rank).rowwise().reverse();
	out.values = lambda.tail(rank).reverse();
	return out;
}

Preimage gram_preimage(const Mat& m, const Vec& target, double rel_eig_tol)
{
	const GramEigen g = gram_eigen(m, rel_eig_tol);
	Preimage out;
	const Vec coeff = (g.vectors.transpose() * (m.transpose() * target)).cwiseQuotient(g.values);
	out.x = g.vectors * coeff;
	out.image = m * out.x;
	out.rank = g.rank();
	return out;
}

LstsqResult least_squares(const Mat& a, const Mat& b, double rel_tol)
{
	LstsqResult out;
	Eigen::CompleteOrthogonalDecomposition<Mat> cod(a);
	cod.setThreshold(rel_tol);
	out.x = cod.solve(b);
	out.rank = static_cast<int>(cod.rank());
	out.residual = (a * out.x - b).norm();
	return out;
}

std::vector<int> active_indices(const std::vector<std::uint8_t>& mask)
{
	std::vector<int> idx;
	idx.reserve(mask.size());
	for (std::size_t k = 0; k < mask.size(); ++k)
		if (mask[k])
			idx.push_back(static_cast<int>(k));
	return idx;
}

Vec standard_normal(int n, std::mt19937_64& rng)
{
	std::normal_distribution<double> nd(0.0, 1.0);
	Vec v(n);
	for (int k = 0; k < n; ++k)
		v(k) = nd(rng);
	return v;
}

namespace {
std::uint64_t splitmix(std::uint64_t& state)
{
	std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
	z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
	z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
	return z ^ (z >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts)
{
	std::uint64_t state = base;
	std::uint64_t h = splitmix(state);
	for (std::uint64_t p : parts) {
		state ^= p + 0x632BE59BD9B4E019ULL + (h << 6) + (h >> 2);
		h = splitmix(state);
	}
	return h;
}

}  // namespace nnx
