#include "nnx/signatures.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <limits>

namespace nnx {

bool Signature::full() const
{
	return std::all_of(support.begin(), support.end(), [](std::uint8_t s) { return s != 0; });
}

int Signature::support_size() const
{
	return static_cast<int>(std::count_if(support.begin(), support.end(), [](std::uint8_t s) { return s != 0; }));
}

void Signature::renormalize()
{
	Eigen::Index best = -1;
	double mag = 0.0;
	for (Eigen::Index k = 0; k < coords.size(); ++k)
		if (support[static_cast<std::size_t>(k)] && std::abs(coords(k)) > mag) {
			mag = std::abs(coords(k));
			best = k;
		}
	if (best < 0 || mag == 0.0)
		throw ZeroDenominator("signature has no nonzero coordinate to normalize by");
	const double p = coords(best);
	coords /= p;
	coords(best) = 1.0;
	if (bias)
		*bias /= p;
	pivot = static_cast<int>(best);
}

Signature Signature::from_row(const Vec& row, std::optional<double> bias)
{
	Signature s;
	s.coords = row;
	s.support.assign(static_cast<std::size_t>(row.size()), 1);
	s.bias = bias;
	s.renormalize();
	return s;
}

Mat SignatureSet::matrix() const
{
	if (rows.empty())
		return Mat();
	Mat m(size(), rows.front().coords.size());
	for (int k = 0; k < size(); ++k)
		m.row(k) = rows[static_cast<std::size_t>(k)].coords.transpose();
	return m;
}

Vec SignatureSet::biases() const
{
	Vec b(size());
	for (int k = 0; k < size(); ++k)
		b(k) = rows[static_cast<std::size_t>(k)].bias.value_or(0.0);
	return b;
}

SignatureSet signatures_from_layer(const Layer& l, int layer)
{
	SignatureSet s;
	s.layer = layer;
	for (Eigen::Index j = 0; j < l.weights.rows(); ++j) {
		s.rows.push_back(Signature::from_row(l.weights.row(j).transpose(), l.bias(j)));
		s.rows.back().layer_guess = layer;
	}
	return s;
}

SignatureSet signatures_from_file(const SignatureFile& sf, int layer)
{
	if (layer < 1 || layer > static_cast<int>(sf.layers.size()))
		throw ShapeError("signature file has no layer " + std::to_string(layer));
	return signatures_from_layer(sf.layers[static_cast<std::size_t>(layer - 1)], layer);
}

std::vector<Layer> canonical_hidden_layers(const Network& net)
{
	std::vector<Layer> out;
	Vec carry;   // magnitudes divided out of the previous layer's rows
	for (int i = 1; i <= net.arch().hidden_layers(); ++i) {
		Layer l = net.layer(i);
		if (carry.size() > 0)
			l.weights = l.weights * carry.asDiagonal();
		carry.resize(l.weights.rows());
		for (Eigen::Index j = 0; j < l.weights.rows(); ++j) {
			Eigen::Index pivot = 0;
			const double mag = l.weights.row(j).cwiseAbs().maxCoeff(&pivot);
			if (mag == 0.0)
				throw ZeroDenominator("neuron (" + std::to_string(i) + "," + std::to_string(j) + ") has a zero row");
			l.weights.row(j) /= mag;
			l.bias(j) /= mag;
			carry(j) = mag;
		}
		out.push_back(std::move(l));
	}
	return out;
}

SignatureFile signature_file_from_network(const Network& net)
{
	SignatureFile sf;
	sf.arch = net.arch();
	sf.provenance = "signatures of " + (net.info().provenance.empty() ? std::string("network") : net.info().provenance);
	const std::vector<Layer> canon = canonical_hidden_layers(net);
	for (std::size_t i = 0; i < canon.size(); ++i) {
		const SignatureSet s = signatures_from_layer(canon[i], static_cast<int>(i) + 1);
		Layer l;
		l.weights = s.matrix();
		l.bias = s.biases();
		sf.layers.push_back(std::move(l));
	}
	return sf;
}

// ------------------------------------------------------------------ layer 1

namespace {

double noise_floor(double y)
{
	return 64.0 * DBL_EPSILON * std::max(y, 1e-300);
}

// Central-difference gradient of every output at x, one row per axis.
// Axes whose three-point test keeps failing are dropped from `ok`.
Mat axis_gradients(Oracle& o, const Vec& x, const Vec& fx, double h0, std::vector<std::uint8_t>& ok)
{
	const int d0 = o.input_dim();
	Mat g(d0, o.output_dim());
	const double fnoise = noise_floor(fx.lpNorm<Eigen::Infinity>());
	for (int i = 0; i < d0; ++i) {
		double h = h0;
		bool good = false;
		for (int attempt = 0; attempt < 4 && !good; ++attempt) {
			std::optional<ScopedPhase> retry;
			if (attempt > 0)
				retry.emplace(Phase::Linearity);
			Vec xp = x, xm = x;
			xp(i) += h;
			xm(i) -= h;
			const Vec fp = o.query(xp);
			const Vec fm = o.query(xm);
			const Vec second = fp - 2.0 * fx + fm;
			const double tol = std::max(8.0 * fnoise, 1e-9 * (fp - fm).lpNorm<Eigen::Infinity>());
			if (second.lpNorm<Eigen::Infinity>() <= tol) {
				g.row(i) = ((fp - fm) / (2.0 * h)).transpose();
				good = true;
			} else {
				h *= 0.125;
			}
		}
		ok[static_cast<std::size_t>(i)] = good;
		if (!good)
			g.row(i).setZero();
	}
	return g;
}

}  // namespace

Signature recover_layer1_signature(Oracle& o, const CriticalPoint& cp, double eps)
{
	ScopedPhase phase(Phase::Signatures);
	const int d0 = o.input_dim();
	if (cp.x_star.size() != d0 || cp.direction.size() != d0)
		throw ShapeError("critical point does not match the oracle dimension");
	double r = eps;
	if (cp.radius > 0.0)
		r = std::min(r, 0.25 * cp.radius);
	const Vec u = cp.direction.normalized();
	const Vec xp = cp.x_star + r * u;
	const Vec xm = cp.x_star - r * u;
	const Vec fp = o.query(xp);
	const Vec fm = o.query(xm);

	std::vector<std::uint8_t> okp(static_cast<std::size_t>(d0)), okm(static_cast<std::size_t>(d0));
	const double h = r / 16.0;
	const Mat gp = axis_gradients(o, xp, fp, h, okp);
	const Mat gm = axis_gradients(o, xm, fm, h, okm);
	const Mat jump = gp - gm;

	Eigen::Index out_col = 0;
	jump.colwise().norm().maxCoeff(&out_col);
	if (jump.cols() > 1) {
		Eigen::JacobiSVD<Mat> svd(jump);
		const Vec sv = svd.singularValues();
		if (sv(0) > 0.0 && sv(1) > 1e-4 * sv(0))
			throw NotLayer1("gradient jump is not rank one: more than one neuron toggles");
	}

	Signature s;
	s.coords = jump.col(out_col);
	s.support.resize(static_cast<std::size_t>(d0));
	for (int i = 0; i < d0; ++i)
		s.support[static_cast<std::size_t>(i)] = okp[static_cast<std::size_t>(i)] && okm[static_cast<std::size_t>(i)];
	for (int i = 0; i < d0; ++i)
		if (!s.support[static_cast<std::size_t>(i)])
			s.coords(i) = 0.0;

	const double scale = s.coords.lpNorm<Eigen::Infinity>();
	const double gscale = std::max(gp.col(out_col).lpNorm<Eigen::Infinity>(), gm.col(out_col).lpNorm<Eigen::Infinity>());
	if (!(scale > 1e-9 * gscale) || !(scale > 0.0))
		throw ZeroDenominator("no gradient jump across the critical point");
	s.bias = 0.0;
	s.renormalize();
	s.bias = -s.coords.dot(cp.x_star);
	s.layer_guess = 1;
	return s;
}

// --------------------------------------------------------------- deeper layers

Signature recover_deep_partial_signature(Oracle& o, std::span<const Layer> prefix, const CriticalPoint& cp, double eps,
                                         std::mt19937_64& rng)
{
	ScopedPhase phase(Phase::Signatures);
	if (prefix.empty())
		return recover_layer1_signature(o, cp, eps);
	const int d0 = o.input_dim();
	const int width = static_cast<int>(prefix.back().weights.rows());

	const CollapsedAffine c = collapse(prefix, cp.x_star);
	const std::vector<int> act = active_indices(c.masks.back());
	const int n = static_cast<int>(act.size());
	if (n == 0)
		throw RankDeficient("no active neuron in the previous layer at x*");
	const Mat gamma_s = c.gamma(act, Eigen::all);   // n x d0
	const int control = numerical_rank(gamma_s, kRankTol);
	if (control < n)
		throw RankDeficient("space of control (" + std::to_string(control) + ") smaller than the active support (" +
		                    std::to_string(n) + ")");

	const Vec u = cp.direction.normalized();
	double r = eps;
	if (cp.radius > 0.0)
		r = std::min(r, 0.25 * cp.radius);
	// x+- must sit in the same prefix region as x*
	for (int k = 0; k < 6; ++k) {
		if (activation_masks(prefix, cp.x_star + r * u, 0.0) == c.masks &&
		    activation_masks(prefix, cp.x_star - r * u, 0.0) == c.masks)
			break;
		r *= 0.125;
	}
	const Vec xp = cp.x_star + r * u;
	const Vec xm = cp.x_star - r * u;
	const Vec fp = o.query(xp);
	const Vec fm = o.query(xm);

	double step = r / 16.0;
	const int max_dirs = 3 * std::max(n, width);
	for (int attempt = 0; attempt < 4; ++attempt, step *= 0.125) {
		std::optional<ScopedPhase> retry;
		if (attempt > 0)
			retry.emplace(Phase::Linearity);
		int count = n + std::max(2, n / 8);
		std::vector<Vec> dirs;
		Mat hs(0, n), ys(0, o.output_dim());
		bool rank_ok = false;
		while (!rank_ok && static_cast<int>(dirs.size()) < max_dirs) {
			while (static_cast<int>(dirs.size()) < std::min(count, max_dirs)) {
				Vec d = standard_normal(d0, rng);
				d *= step / d.norm();
				bool stays = activation_masks(prefix, xp + d, 0.0) == c.masks &&
				             activation_masks(prefix, xm + d, 0.0) == c.masks;
				if (!stays)
					continue;
				const Vec y = (o.query(xp + d) - fp) - (o.query(xm + d) - fm);
				hs.conservativeResize(hs.rows() + 1, Eigen::NoChange);
				hs.row(hs.rows() - 1) = (gamma_s * d).transpose();
				ys.conservativeResize(ys.rows() + 1, Eigen::NoChange);
				ys.row(ys.rows() - 1) = y.transpose();
				dirs.push_back(std::move(d));
			}
			rank_ok = numerical_rank(hs, 1e-9) == n;
			count += n;
		}
		if (!rank_ok)
			throw RankDeficient("stencil directions do not span the active support");

		Eigen::Index out_col = 0;
		ys.colwise().norm().maxCoeff(&out_col);
		const Vec rhs = ys.col(out_col);
		if (!(rhs.norm() > 0.0))
			throw ZeroDenominator("no second-derivative response at this critical point");
		const LstsqResult sol = least_squares(hs, rhs);
		if (sol.residual > 1e-6 * rhs.norm())
			continue;   // a stencil point crossed another hinge; shrink and retry

		Signature s;
		s.coords = Vec::Zero(width);
		s.support.assign(static_cast<std::size_t>(width), 0);
		for (int k = 0; k < n; ++k) {
			s.coords(act[static_cast<std::size_t>(k)]) = sol.x(k, 0);
			s.support[static_cast<std::size_t>(act[static_cast<std::size_t>(k)])] = 1;
		}
		s.bias = 0.0;
		s.renormalize();
		const Vec fprev = forward_hidden(prefix, cp.x_star);
		s.bias = -s.coords.dot(fprev);
		s.layer_guess = static_cast<int>(prefix.size()) + 1;
		return s;
	}
	throw RankDeficient("second-derivative system stayed inconsistent after shrinking the stencil");
}

// ---------------------------------------------------------------- clustering

double signature_mismatch(const Signature& a, const Signature& b)
{
	if (a.coords.size() != b.coords.size())
		return std::numeric_limits<double>::infinity();
	double ab = 0.0, bb = 0.0;
	int overlap = 0;
	for (Eigen::Index k = 0; k < a.coords.size(); ++k) {
		if (!a.support[static_cast<std::size_t>(k)] || !b.support[static_cast<std::size_t>(k)])
			continue;
		ab += a.coords(k) * b.coords(k);
		bb += b.coords(k) * b.coords(k);
		++overlap;
	}
	if (overlap < 2 || bb == 0.0)
		return std::numeric_limits<double>::infinity();
	const double scale = ab / bb;
	double err = 0.0, mag = 0.0;
	for (Eigen::Index k = 0; k < a.coords.size(); ++k) {
		if (!a.support[static_cast<std::size_t>(k)] || !b.support[static_cast<std::size_t>(k)])
			continue;
		err = std::max(err, std::abs(a.coords(k) - scale * b.coords(k)));
		mag = std::max(mag, std::abs(a.coords(k)));
	}
	return mag > 0.0 ? err / mag : std::numeric_limits<double>::infinity();
}

void merge_into(SignatureCluster& cluster, SignatureCandidate cand)
{
	if (cluster.members.empty()) {
		cluster.merged = cand.signature;
		cluster.members.push_back(std::move(cand));
		return;
	}
	Signature& m = cluster.merged;
	const Signature& s = cand.signature;
	double ms = 0.0, ss = 0.0;
	for (Eigen::Index k = 0; k < m.coords.size(); ++k)
		if (m.support[static_cast<std::size_t>(k)] && s.support[static_cast<std::size_t>(k)]) {
			ms += m.coords(k) * s.coords(k);
			ss += s.coords(k) * s.coords(k);
		}
	const double scale = ss > 0.0 ? ms / ss : 1.0;
	const double w = static_cast<double>(cluster.members.size());
	for (Eigen::Index k = 0; k < m.coords.size(); ++k) {
		if (!s.support[static_cast<std::size_t>(k)])
			continue;
		if (m.support[static_cast<std::size_t>(k)]) {
			m.coords(k) = (w * m.coords(k) + scale * s.coords(k)) / (w + 1.0);
		} else {
			m.coords(k) = scale * s.coords(k);
			m.support[static_cast<std::size_t>(k)] = 1;
		}
	}
	if (s.bias) {
		m.bias = m.bias ? (w * *m.bias + scale * *s.bias) / (w + 1.0) : scale * *s.bias;
	}
	m.renormalize();
	cluster.members.push_back(std::move(cand));
}

std::vector<SignatureCluster> cluster_and_merge(std::vector<SignatureCandidate> candidates, int target_layer, double tol)
{
	std::vector<SignatureCluster> clusters;
	for (auto& cand : candidates) {
		std::vector<std::size_t> hits;
		for (std::size_t c = 0; c < clusters.size(); ++c)
			if (signature_mismatch(clusters[c].merged, cand.signature) <= tol)
				hits.push_back(c);
		if (hits.empty()) {
			SignatureCluster fresh;
			merge_into(fresh, std::move(cand));
			clusters.push_back(std::move(fresh));
			continue;
		}
		if (hits.size() > 1) {
			for (std::size_t h : hits)
				clusters[h].ambiguous = true;
		}
		std::size_t best = hits.front();
		double best_err = signature_mismatch(clusters[best].merged, cand.signature);
		for (std::size_t h : hits) {
			const double e = signature_mismatch(clusters[h].merged, cand.signature);
			if (e < best_err) {
				best_err = e;
				best = h;
			}
		}
		merge_into(clusters[best], std::move(cand));
	}
	for (auto& c : clusters) {
		c.merged.layer_guess = target_layer;
		c.declared = c.multiplicity() >= 2 && c.merged.full() && !c.ambiguous;
	}
	return clusters;
}

}  // namespace nnx
