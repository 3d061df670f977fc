#include "nnx/critical_points.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <numeric>

namespace nnx {

ProbeSegment::ProbeSegment(Vec s, Vec e)
    : start(std::move(s)), end(std::move(e))
{
	if (start.size() != end.size())
		throw ShapeError("probe segment endpoints differ in dimension");
	if (start == end)
		throw std::invalid_argument("probe segment endpoints coincide");
}

namespace {

// Floating-point noise floor for differences of outputs of magnitude y.
double noise_floor(double y)
{
	return 64.0 * DBL_EPSILON * std::max(y, 1e-300);
}

class Scanner
{
public:
	Scanner(Oracle& o, const ProbeSegment& seg, const CriticalPointOptions& opt)
	    : o_(o), seg_(seg), opt_(opt), dir_(seg.end - seg.start), len_(dir_.norm()),
	      radius_(std::max(seg.start.norm(), seg.end.norm()))
	{
		dir_ /= len_;
	}

	CriticalPointSearch run()
	{
		// Chords of a coarse grid give a first lower bound on the largest
		// slope along the segment; slope tolerances are relative to it.
		constexpr int grid = 16;
		std::vector<double> y(grid + 1);
		for (int k = 0; k <= grid; ++k)
			y[static_cast<std::size_t>(k)] = f(static_cast<double>(k) / grid);
		for (int k = 0; k < grid; ++k)
			see_slope((y[static_cast<std::size_t>(k) + 1] - y[static_cast<std::size_t>(k)]) * grid);

		// Steepest cells first, so that the slope scale (and with it the
		// noise model) is established before flat stretches are examined.
		std::vector<int> order(grid);
		std::iota(order.begin(), order.end(), 0);
		auto rise = [&](int k) {
			return std::abs(y[static_cast<std::size_t>(k) + 1] - y[static_cast<std::size_t>(k)]);
		};
		std::stable_sort(order.begin(), order.end(), [&](int p, int q) { return rise(p) > rise(q); });
		cells_.assign(grid, Ends{});
		for (int k : order)
			cells_[static_cast<std::size_t>(k)] =
			    scan(static_cast<double>(k) / grid, static_cast<double>(k + 1) / grid, y[static_cast<std::size_t>(k)],
			         y[static_cast<std::size_t>(k) + 1], 0);
		// kinks on the grid itself: compare the slopes of neighbouring cells
		for (int k = 1; k < grid; ++k) {
			const Ends& l = cells_[static_cast<std::size_t>(k) - 1];
			const Ends& r = cells_[static_cast<std::size_t>(k)];
			if (l.known && r.known)
				check_split(static_cast<double>(k) / grid, y[static_cast<std::size_t>(k)], l, r, 1.0 / grid,
				            static_cast<double>(k - 1) / grid, static_cast<double>(k + 1) / grid);
		}

		// drop jumps that are small against the final slope scale
		std::erase_if(out_.points, [&](const CriticalPoint& p) {
			return std::abs(p.right_slope - p.left_slope) * len_ <= opt_.slope_tol * max_slope_;
		});
		std::sort(out_.points.begin(), out_.points.end(),
		          [](const CriticalPoint& a, const CriticalPoint& b) { return a.lambda < b.lambda; });
		// A kink is isolated at least up to its neighbours.
		for (std::size_t k = 0; k < out_.points.size(); ++k) {
			const double lo = k ? out_.points[k - 1].lambda : 0.0;
			const double hi = k + 1 < out_.points.size() ? out_.points[k + 1].lambda : 1.0;
			auto& p = out_.points[k];
			p.radius = std::min(p.radius, len_ * std::min(p.lambda - lo, hi - p.lambda));
		}
		return std::move(out_);
	}

private:
	// Slopes measured just inside the ends of a scanned interval. They are
	// unknown when the interval could not be resolved.
	struct Ends
	{
		double left = 0.0;
		double right = 0.0;
		bool known = false;
	};

	double f(double lambda)
	{
		++evaluations_;
		return o_.query(seg_.at(lambda))(0);
	}

	void see_slope(double m) { max_slope_ = std::max(max_slope_, std::abs(m)); }

	void record(double xs, double ml, double mr, double e, double a, double b)
	{
		CriticalPoint cp;
		cp.x_star = seg_.at(xs);
		cp.direction = dir_;
		cp.lambda = xs;
		cp.radius = len_ * std::min(xs - a, b - xs);
		cp.left_slope = ml / len_;
		cp.right_slope = mr / len_;
		cp.epsilon_used = e * len_;
		out_.points.push_back(std::move(cp));
	}

	// The one-sided difference quotients of a genuine isolated kink do not
	// depend on the step. Noise does not behave like a slope, and a second
	// kink within e of x can make the quotients at step e alone look right.
	bool consistent(double x, double y, double e, double ml, double mr)
	{
		const double jump = std::abs(mr - ml);
		for (double s : {2.0 * e, 0.125 * e})
			if (std::abs((y - f(x - s)) / s - ml) > 0.25 * jump || std::abs((f(x + s) - y) / s - mr) > 0.25 * jump)
				return false;
		return true;
	}

	// A kink exactly at the boundary between two scanned halves is invisible
	// to both of them.
	void check_split(double o, double yo, const Ends& l, const Ends& r, double half, double a, double b)
	{
		const double e = std::min(opt_.eps, half / 8.0);   // the halves' step
		const double jtol = std::max(opt_.slope_tol * std::max({std::abs(l.right), std::abs(r.left), max_slope_}),
		                             4.0 * noise(std::abs(yo)) / e);
		if (std::abs(l.right - r.left) > jtol && consistent(o, yo, e, l.right, r.left))
			record(o, l.right, r.left, e, a, b);
	}

	// Rounding noise of an output is relative to the largest intermediate
	// term, not to the output itself (terms can cancel). A single unit's
	// contribution is bounded by the slope scale times the input magnitude.
	double noise(double y) const { return noise_floor(std::max(y, max_slope_ / len_ * radius_)); }

	Ends scan(double a, double b, double ya, double yb, int depth)
	{
		const double len = b - a;
		if (len < opt_.min_interval || evaluations_ > opt_.max_evaluations) {
			out_.budget_exhausted = true;
			return {};
		}
		const double h = std::min(opt_.eps, len / 8.0);
		const double o = 0.5 * (a + b);
		const double yo = f(o);
		const double ma = (f(a + h) - ya) / h;
		const double mb = (yb - f(b - h)) / h;
		see_slope(ma);
		see_slope(mb);

		const double yscale = std::max({std::abs(ya), std::abs(yb), std::abs(yo)});
		const double ynoise = noise(yscale);
		const double mscale = std::max({std::abs(ma), std::abs(mb), max_slope_});
		const double mtol = std::max(opt_.slope_tol * mscale, 4.0 * ynoise / h);
		const bool mid_ok = std::abs(yo - 0.5 * (ya + yb)) <= std::max(opt_.match_tol * 1e-3 * mscale * len, 4.0 * ynoise);

		if (std::abs(ma - mb) <= mtol) {
			if (mid_ok) {
				const double mao = (yo - f(o - h)) / h;
				const double mbo = (f(o + h) - yo) / h;
				if (std::abs(mao - ma) <= mtol && std::abs(mbo - mb) <= mtol)
					return {ma, mb, true};   // affine on [a, b]
			} else {
				++out_.degenerate;   // parallel pieces: the kinks are inside, keep splitting
			}
		} else {
			// intersection of the two boundary lines
			const double t = (yb - ya - mb * len) / (ma - mb);
			const double xs = a + t;
			if (xs > a + h && xs < b - h) {
				const double yhat = ya + ma * t;
				const double ys = f(xs);
				const double tol = std::max(opt_.match_tol * std::abs(ma - mb) * len,
				                            (4.0 * ynoise / h) * len + 4.0 * ynoise);
				if (std::abs(ys - yhat) <= tol) {
					const double e = std::min(h, 0.25 * std::min(xs - a, b - xs));
					const double ml = (ys - f(xs - e)) / e;
					const double mr = (f(xs + e) - ys) / e;
					const double etol = std::max(opt_.slope_tol * std::max({std::abs(ml), std::abs(mr), max_slope_}),
					                             4.0 * ynoise / e);
					// with a single kink in [a, b] the pieces next to x* are the
					// boundary pieces; a second kink nearby shows up here
					const double ptol = 1e-2 * std::abs(ma - mb) + 4.0 * ynoise / e;
					const bool single = std::abs(ml - ma) <= ptol && std::abs(mr - mb) <= ptol;
					if (std::abs(mr - ml) > etol && single && consistent(xs, ys, e, ml, mr)) {
						// the boundary slopes are more accurate than ml, mr, which
						// carry the error of xs
						record(xs, ma, mb, e, a, b);
						return {ma, mb, true};
					}
				}
			}
		}

		if (depth >= opt_.max_depth) {
			out_.budget_exhausted = true;
			return {};
		}
		const Ends l = scan(a, o, ya, yo, depth + 1);
		const Ends r = scan(o, b, yo, yb, depth + 1);
		if (l.known && r.known)
			check_split(o, yo, l, r, 0.5 * len, a, b);
		return {l.left, r.right, l.known && r.known};
	}

	Oracle& o_;
	const ProbeSegment& seg_;
	CriticalPointOptions opt_;
	Vec dir_;
	double len_;
	double radius_;
	CriticalPointSearch out_;
	std::vector<Ends> cells_;
	double max_slope_ = 0.0;
	long evaluations_ = 0;
};

}  // namespace

CriticalPointSearch find_critical_points(Oracle& o, const ProbeSegment& seg, const CriticalPointOptions& opt)
{
	if (opt.max_depth < 1 || !(opt.eps > 0.0))
		throw std::invalid_argument("find_critical_points: need eps > 0 and a budget >= 1");
	ScopedPhase phase(Phase::CriticalPoints);
	return Scanner(o, seg, opt).run();
}

LinearityCertificate check_linearity(Oracle& o, const Vec& x, const Vec& delta, double eps)
{
	if (!(delta.norm() > 0.0) || !(eps > 0.0))
		throw std::invalid_argument("check_linearity: empty direction");
	LinearityCertificate cert{ProbeSegment(x - eps * delta, x + eps * delta), Linearity::NotLinear, {}};
	const ProbeSegment& s = cert.segment;
	const double h = 1e-3;
	auto& w = cert.witnesses;
	w.push_back(o.query(s.start));
	w.push_back(o.query(s.end));
	w.push_back(o.query(x));
	w.push_back(o.query(s.at(h)));
	w.push_back(o.query(s.at(1.0 - h)));
	w.push_back(o.query(s.at(0.5 - h)));
	w.push_back(o.query(s.at(0.5 + h)));

	const Vec& ya = w[0];
	const Vec& yb = w[1];
	const Vec& yo = w[2];
	const Vec ma = (w[3] - ya) / h;
	const Vec mb = (yb - w[4]) / h;
	const Vec mao = (yo - w[5]) / h;
	const Vec mbo = (w[6] - yo) / h;

	const double yscale = std::max({ya.lpNorm<Eigen::Infinity>(), yb.lpNorm<Eigen::Infinity>(),
	                                yo.lpNorm<Eigen::Infinity>()});
	const double ynoise = noise_floor(yscale);
	const double mscale = std::max(ma.lpNorm<Eigen::Infinity>(), mb.lpNorm<Eigen::Infinity>());
	const double mtol = std::max(1e-7 * mscale, 4.0 * ynoise / h);
	const double ytol = std::max(1e-9 * mscale, 4.0 * ynoise);

	const bool linear = (yo - 0.5 * (ya + yb)).lpNorm<Eigen::Infinity>() <= ytol &&
	                    (ma - mb).lpNorm<Eigen::Infinity>() <= mtol &&
	                    (mao - ma).lpNorm<Eigen::Infinity>() <= mtol &&
	                    (mbo - mb).lpNorm<Eigen::Infinity>() <= mtol;
	cert.verdict = linear ? Linearity::Linear : Linearity::NotLinear;
	return cert;
}

NeuronAppearsAlwaysOff::NeuronAppearsAlwaysOff(NeuronId id)
    : std::runtime_error("neuron (" + std::to_string(id.layer) + "," + std::to_string(id.index) +
                         ") admits no critical point within the search budget"),
      neuron(id)
{
}

double hypothesis_value(std::span<const Layer> prefix, const TargetNeuron& t, const Vec& x)
{
	const Vec h = forward_hidden(prefix, x);
	return t.weights.dot(h) + t.bias;
}

namespace {

struct LineEval
{
	double g;
	double slope;
	double scale;
};

LineEval eval_line(std::span<const Layer> prefix, const TargetNeuron& t, const Vec& start, const Vec& u, double lambda)
{
	const Tangent tan = forward_tangent(prefix, start + lambda * u, u);
	return {t.weights.dot(tan.value) + t.bias, t.weights.dot(tan.slope),
	        t.weights.norm() * tan.value.norm() + std::abs(t.bias)};
}

// Root of the piecewise-linear g along start + lambda*u within |lambda| <= cap.
std::optional<double> line_root(std::span<const Layer> prefix, const TargetNeuron& t, const Vec& start, const Vec& u,
                                double cap)
{
	auto small = [](const LineEval& e) { return std::abs(e.g) <= 1e-13 * std::max(e.scale, 1e-300); };

	double lo = 0.0;
	LineEval elo = eval_line(prefix, t, start, u, lo);
	if (small(elo))
		return lo;

	// Newton on the pieces until the sign flips.
	double hi = 0.0;
	LineEval ehi = elo;
	bool bracket = false;
	double lam = 0.0;
	LineEval e = elo;
	for (int it = 0; it < 40; ++it) {
		if (e.slope == 0.0)
			return std::nullopt;
		double next = lam - e.g / e.slope;
		next = std::clamp(next, -cap, cap);
		if (next == lam)
			return std::nullopt;
		lam = next;
		e = eval_line(prefix, t, start, u, lam);
		if (small(e))
			return lam;
		if ((e.g > 0) != (elo.g > 0)) {
			hi = lam;
			ehi = e;
			bracket = true;
			break;
		}
		lo = lam;
		elo = e;
	}
	if (!bracket)
		return std::nullopt;

	// Regula falsi with a Newton step inside the current piece.
	for (int it = 0; it < 200; ++it) {
		double m = lo - elo.g * (hi - lo) / (ehi.g - elo.g);
		if (!(m > std::min(lo, hi) && m < std::max(lo, hi)))
			m = 0.5 * (lo + hi);
		LineEval em = eval_line(prefix, t, start, u, m);
		if (small(em))
			return m;
		if (em.slope != 0.0) {
			const double n = m - em.g / em.slope;
			if (n > std::min(lo, hi) && n < std::max(lo, hi)) {
				LineEval en = eval_line(prefix, t, start, u, n);
				if (small(en))
					return n;
				if ((en.g > 0) == (elo.g > 0)) {
					lo = n;
					elo = en;
				} else {
					hi = n;
					ehi = en;
				}
			}
		}
		if ((em.g > 0) == (elo.g > 0)) {
			if (std::abs(m - hi) < std::abs(lo - hi)) {
				lo = m;
				elo = em;
			}
		} else if (std::abs(m - lo) < std::abs(hi - lo)) {
			hi = m;
			ehi = em;
		}
		if (std::abs(hi - lo) <= 1e-15 * std::max(1.0, std::abs(lo)))
			return std::abs(elo.g) < std::abs(ehi.g) ? lo : hi;
	}
	return std::nullopt;
}

}  // namespace

CriticalPoint find_critical_point_for_neuron(Oracle& o, std::span<const Layer> prefix, const TargetNeuron& target,
                                             const Vec& start, std::mt19937_64& rng, const TargetedSearchOptions& opt)
{
	ScopedPhase phase(Phase::CriticalPoints);
	const int d0 = o.input_dim();
	const int width_prev = prefix.empty() ? d0 : static_cast<int>(prefix.back().weights.rows());
	if (target.weights.size() != width_prev)
		throw ShapeError("target row does not match the prefix width");
	const double cap = opt.radius_factor * std::max(1.0, start.norm());

	for (int attempt = 0; attempt < opt.budget; ++attempt) {
		Vec u = prefix.empty() ? standard_normal(d0, rng) : pullback(prefix, start, standard_normal(width_prev, rng));
		const double un = u.norm();
		if (!(un > 0.0))
			continue;
		u /= un;
		const auto root = line_root(prefix, target, start, u, cap);
		if (!root)
			continue;
		const Vec xs = start + *root * u;

		// Step small enough that no prefix neuron changes state on [x*-e u, x*+e u].
		double e = opt.verify_eps * std::max(1.0, xs.norm());
		bool clean = false;
		try {
			const auto m0 = activation_masks(prefix, xs);
			for (int shrink = 0; shrink < 4 && !clean; ++shrink, e *= 0.1)
				clean = activation_masks(prefix, xs - e * u, 0.0) == m0 && activation_masks(prefix, xs + e * u, 0.0) == m0;
		} catch (const CriticalAtAnchor&) {
			continue;   // x* also sits on a prefix hinge
		}
		if (!clean)
			continue;
		e *= 10.0;   // undo the last shrink of the loop above

		const Vec fm = o.query(xs - e * u);
		const Vec f0 = o.query(xs);
		const Vec fp = o.query(xs + e * u);
		const Vec ml = (f0 - fm) / e;
		const Vec mr = (fp - f0) / e;
		const double noise = noise_floor(std::max({fm.lpNorm<Eigen::Infinity>(), f0.lpNorm<Eigen::Infinity>(),
		                                           fp.lpNorm<Eigen::Infinity>()}));
		const double tol = std::max(opt.slope_tol * std::max(ml.norm(), mr.norm()), 8.0 * noise / e);
		if ((mr - ml).norm() <= tol)
			continue;   // the target's toggle does not reach the output here

		CriticalPoint cp;
		cp.x_star = xs;
		cp.neuron = target.id;
		cp.direction = u;
		cp.radius = e;
		cp.left_slope = ml(0);
		cp.right_slope = mr(0);
		cp.epsilon_used = e;
		return cp;
	}
	throw NeuronAppearsAlwaysOff(target.id);
}

}  // namespace nnx
