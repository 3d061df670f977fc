#pragma once
// Test-side reference implementations. They read the victim's parameters
// directly and share no code with the attack modules beyond the Network
// container, so they can serve as independent oracles.

#include "nnx/network.hpp"
#include "nnx/signatures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

namespace nnx::testing {

// Plain nested loops over the layer definition. Summation runs left to right
// like the library's evaluator, so results agree bitwise.
inline std::vector<double> naive_layer(const Layer& l, const std::vector<double>& in, bool relu)
{
	std::vector<double> out(static_cast<std::size_t>(l.weights.rows()));
	for (Eigen::Index i = 0; i < l.weights.rows(); ++i) {
		double acc = 0.0;
		for (Eigen::Index j = 0; j < l.weights.cols(); ++j)
			acc += l.weights(i, j) * in[static_cast<std::size_t>(j)];
		acc += l.bias(i);
		out[static_cast<std::size_t>(i)] = relu ? (acc > 0.0 ? acc : 0.0) : acc;
	}
	return out;
}

inline Vec naive_evaluate(const Network& net, const Vec& x)
{
	std::vector<double> h(x.data(), x.data() + x.size());
	const auto& layers = net.layers();
	for (std::size_t k = 0; k < layers.size(); ++k)
		h = naive_layer(layers[k], h, k + 1 < layers.size());
	return Eigen::Map<Vec>(h.data(), static_cast<Eigen::Index>(h.size()));
}

/// Hidden pre-activations of every layer, computed naively.
inline std::vector<std::vector<double>> naive_preactivations(const Network& net, const Vec& x)
{
	std::vector<std::vector<double>> pre;
	std::vector<double> h(x.data(), x.data() + x.size());
	const auto& layers = net.layers();
	for (std::size_t k = 0; k + 1 < layers.size(); ++k) {
		auto z = naive_layer(layers[k], h, false);
		pre.push_back(z);
		for (double& v : z)
			v = v > 0.0 ? v : 0.0;
		h = std::move(z);
	}
	return pre;
}

inline Vec random_input(int d, std::mt19937_64& rng)
{
	std::normal_distribution<double> nd(0.0, 1.0);
	Vec v(d);
	for (int k = 0; k < d; ++k)
		v(k) = nd(rng);
	return v;
}

// ---------------------------------------------------------------------------
// Exact kink enumeration along a segment. Along x(l) = a + l (b - a) every
// pre-activation is piecewise affine in l; between consecutive toggles of
// lower layers it is exactly affine, so each zero crossing can be solved for
// in closed form. Only toggles that change the slope of output 0 count.

struct Kink
{
	double lambda;
	double slope_jump;   // |right - left| slope of output 0 in lambda units
	double slope_scale;
	int layer;
};

namespace detail {

// Pre-activations as affine functions of lambda on an interval where the
// activation pattern below the layer being solved is fixed.
struct AffineTrace
{
	std::vector<std::vector<double>> value;   // per layer
	std::vector<std::vector<double>> slope;
};

inline AffineTrace affine_trace(const Network& net, const Vec& a, const Vec& d,
                                const std::vector<std::vector<std::uint8_t>>& masks)
{
	AffineTrace t;
	std::vector<double> hv(a.data(), a.data() + a.size());
	std::vector<double> hs(d.data(), d.data() + d.size());
	const auto& layers = net.layers();
	for (std::size_t k = 0; k + 1 < layers.size(); ++k) {
		const Layer& l = layers[k];
		std::vector<double> zv(static_cast<std::size_t>(l.weights.rows())), zs(zv.size());
		for (Eigen::Index i = 0; i < l.weights.rows(); ++i) {
			double v = l.bias(i), s = 0.0;
			for (Eigen::Index j = 0; j < l.weights.cols(); ++j) {
				v += l.weights(i, j) * hv[static_cast<std::size_t>(j)];
				s += l.weights(i, j) * hs[static_cast<std::size_t>(j)];
			}
			zv[static_cast<std::size_t>(i)] = v;
			zs[static_cast<std::size_t>(i)] = s;
		}
		t.value.push_back(zv);
		t.slope.push_back(zs);
		hv.resize(zv.size());
		hs.resize(zv.size());
		for (std::size_t i = 0; i < zv.size(); ++i) {
			const bool on = masks[k][i] != 0;
			hv[i] = on ? zv[i] : 0.0;
			hs[i] = on ? zs[i] : 0.0;
		}
	}
	return t;
}

inline std::vector<std::vector<std::uint8_t>> pattern_at(const Network& net, const Vec& x)
{
	std::vector<std::vector<std::uint8_t>> m;
	for (const auto& z : naive_preactivations(net, x)) {
		std::vector<std::uint8_t> row(z.size());
		for (std::size_t i = 0; i < z.size(); ++i)
			row[i] = z[i] > 0.0;
		m.push_back(std::move(row));
	}
	return m;
}

inline double output0_slope(const Network& net, const Vec& a, const Vec& d,
                            const std::vector<std::vector<std::uint8_t>>& masks)
{
	const AffineTrace t = affine_trace(net, a, d, masks);
	const Layer& out = net.layers().back();
	const auto& last = t.slope.back();
	double s = 0.0;
	for (Eigen::Index j = 0; j < out.weights.cols(); ++j)
		s += masks.back()[static_cast<std::size_t>(j)] ? out.weights(0, j) * last[static_cast<std::size_t>(j)] : 0.0;
	return s;
}

}  // namespace detail

/// Every activation-pattern change along [a, b], with the output-0 slope
/// jump across it.
inline std::vector<Kink> exact_kinks(const Network& net, const Vec& a, const Vec& b)
{
	const Vec d = b - a;
	std::vector<Kink> out;
	double lo = 0.0;
	int guard = 0;
	while (lo < 1.0 && guard++ < 100000) {
		// pattern just to the right of lo
		const double probe = std::min(1.0, lo + 1e-13);
		auto masks = detail::pattern_at(net, a + probe * d);
		const detail::AffineTrace t = detail::affine_trace(net, a, d, masks);
		// earliest crossing beyond lo of any neuron under this pattern
		double next = 2.0;
		int layer_hit = 0;
		for (std::size_t k = 0; k < t.value.size(); ++k)
			for (std::size_t i = 0; i < t.value[k].size(); ++i) {
				const double s = t.slope[k][i];
				if (s == 0.0)
					continue;
				const double root = -t.value[k][i] / s;
				if (root > lo + 1e-14 && root < next) {
					next = root;
					layer_hit = static_cast<int>(k) + 1;
				}
			}
		if (next >= 1.0)
			break;
		const double left = detail::output0_slope(net, a, d, masks);
		const auto masks_r = detail::pattern_at(net, a + std::min(1.0, next + 1e-12) * d);
		const double right = detail::output0_slope(net, a, d, masks_r);
		out.push_back({next, std::abs(right - left), std::max(std::abs(left), std::abs(right)), layer_hit});
		lo = next;
	}
	return out;
}

// ---------------------------------------------------------------------------
// Exhaustive sign search: try every sign pattern for the layer's signatures,
// rebuild the network with the victim's other layers (the next layer's
// columns absorb the positive signature scales), and keep the pattern whose
// outputs agree best with the victim on random inputs.

inline Network with_signed_layer(const Network& victim, int layer, const SignatureSet& sigs,
                                 const std::vector<int>& signs)
{
	std::vector<Layer> layers = victim.layers();
	const Layer& truth = victim.layer(layer);
	Layer hyp;
	hyp.weights = truth.weights;
	hyp.bias = truth.bias;
	Layer next = layers[static_cast<std::size_t>(layer)];
	for (int j = 0; j < sigs.size(); ++j) {
		const Signature& s = sigs.rows[static_cast<std::size_t>(j)];
		// truth row = scale * signature; scale can be negative
		const double scale = truth.weights(j, s.pivot);
		const double sg = signs[static_cast<std::size_t>(j)];
		for (Eigen::Index c = 0; c < hyp.weights.cols(); ++c)
			hyp.weights(j, c) = sg * s.coords(c);
		hyp.bias(j) = sg * s.bias.value_or(0.0);
		for (Eigen::Index r = 0; r < next.weights.rows(); ++r)
			next.weights(r, j) *= std::abs(scale);
	}
	layers[static_cast<std::size_t>(layer - 1)] = hyp;
	layers[static_cast<std::size_t>(layer)] = next;
	return Network(victim.arch(), std::move(layers));
}

struct ExhaustiveResult
{
	std::vector<int> best;       // +1 / -1 per neuron
	double best_error = 0.0;
	double runner_up_error = 0.0;
};

inline ExhaustiveResult exhaustive_signs(const Network& victim, int layer, const SignatureSet& sigs, int inputs = 1000,
                                         std::uint64_t seed = 99)
{
	const int n = sigs.size();
	if (n > 16)
		throw std::invalid_argument("exhaustive search limited to 16 neurons");
	std::mt19937_64 rng(seed);
	std::vector<Vec> xs;
	std::vector<Vec> ys;
	for (int k = 0; k < inputs; ++k) {
		xs.push_back(random_input(victim.arch().input_dim(), rng));
		ys.push_back(naive_evaluate(victim, xs.back()));
	}
	ExhaustiveResult res;
	res.best_error = std::numeric_limits<double>::infinity();
	res.runner_up_error = std::numeric_limits<double>::infinity();
	for (unsigned code = 0; code < (1u << n); ++code) {
		std::vector<int> signs(static_cast<std::size_t>(n));
		for (int j = 0; j < n; ++j)
			signs[static_cast<std::size_t>(j)] = (code >> j) & 1u ? -1 : +1;
		const Network h = with_signed_layer(victim, layer, sigs, signs);
		double err = 0.0;
		for (std::size_t k = 0; k < xs.size(); ++k)
			err = std::max(err, (naive_evaluate(h, xs[k]) - ys[k]).lpNorm<Eigen::Infinity>());
		if (err < res.best_error) {
			res.runner_up_error = res.best_error;
			res.best_error = err;
			res.best = signs;
		} else if (err < res.runner_up_error) {
			res.runner_up_error = err;
		}
	}
	return res;
}

}  // namespace nnx::testing
