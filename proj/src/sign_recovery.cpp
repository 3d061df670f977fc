#include "nnx/sign_recovery.hpp"
#include "nnx/parallel.hpp"

#include <algorithm>
#include <cfloat>
#include <chrono>
#include <cmath>
#include <numeric>

namespace nnx {

std::string_view method_name(Method m)
{
	switch (m) {
	case Method::Freeze: return "freeze";
	case Method::Soe: return "soe";
	case Method::Wiggle: return "wiggle";
	case Method::LastLayer: return "last-layer";
	}
	return "?";
}

std::optional<Method> parse_method(std::string_view s)
{
	if (s == "freeze") return Method::Freeze;
	if (s == "soe") return Method::Soe;
	if (s == "wiggle") return Method::Wiggle;
	if (s == "last-layer" || s == "lastlayer" || s == "last") return Method::LastLayer;
	return std::nullopt;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
	return std::chrono::duration<double>(Clock::now() - t0).count();
}

double noise_floor(double y)
{
	return 64.0 * DBL_EPSILON * std::max(y, 1e-300);
}

void check_problem(const LayerProblem& p)
{
	if (!p.sigs || p.sigs->size() == 0)
		throw std::invalid_argument("sign recovery needs the layer's signatures");
}

Sign sign_from_activity(double v_hat, bool truly_active)
{
	return ((v_hat > 0.0) == truly_active) ? Sign::Plus : Sign::Minus;
}

// True when x and x + d lie in the same linear region of the prefix.
bool prefix_stays(std::span<const Layer> prefix, const Vec& x, const Vec& d,
                  const std::vector<std::vector<std::uint8_t>>& masks)
{
	return prefix.empty() || activation_masks(prefix, x + d, 0.0) == masks;
}

// Midpoint test of f on [x, x + d] given f(x) and f(x + d); one query.
bool midpoint_linear(Oracle& o, const Vec& x, const Vec& d, const Vec& f0, const Vec& f1)
{
	const Vec fm = o.query(x + 0.5 * d);
	const double tol = 1e-6 * (f1 - f0).lpNorm<Eigen::Infinity>() +
	                   noise_floor(std::max(f0.lpNorm<Eigen::Infinity>(), f1.lpNorm<Eigen::Infinity>()));
	return (fm - 0.5 * (f0 + f1)).lpNorm<Eigen::Infinity>() <= tol;
}

// Input-space steps whose images under A*Gamma are the columns of targets,
// scaled down together until the prefix keeps its state pattern.
Mat preimages_for(const LayerProblem& p, const CollapsedAffine& c, const Mat& targets, const Vec& x)
{
	const Mat a = p.sigs->matrix();
	const Mat m = a * c.gamma;   // d_i x d0
	const int di = static_cast<int>(a.rows());
	if (m.cols() < di || numerical_rank(m, kRankTol) < di)
		throw InsufficientRank("layer " + std::to_string(p.layer) + ": space of control cannot move all " +
		                       std::to_string(di) + " neurons independently at this anchor");
	// Delta = M^T (M M^T)^{-1} Y
	Mat deltas = m.transpose() * (m * m.transpose()).ldlt().solve(targets);
	for (Eigen::Index k = 0; k < deltas.cols(); ++k) {
		double scale = 1.0;
		for (int tries = 0; tries < 60 && !prefix_stays(p.prefix, x, scale * deltas.col(k), c.masks); ++tries)
			scale *= 0.5;
		deltas.col(k) *= scale;
	}
	return deltas;
}

}  // namespace

Vec layer_values(const LayerProblem& p, const Vec& x)
{
	check_problem(p);
	const Vec h = forward_hidden(p.prefix, x);
	return p.sigs->matrix() * h + p.sigs->biases();
}

Vec pick_anchor(const LayerProblem& p, int input_dim, std::mt19937_64& rng, int candidates)
{
	check_problem(p);
	const Mat a = p.sigs->matrix();
	const Vec norms = a.rowwise().norm();
	Vec best = standard_normal(input_dim, rng);
	double best_score = -1.0;
	for (int c = 0; c < candidates; ++c) {
		Vec x = c == 0 ? best : standard_normal(input_dim, rng);
		try {
			activation_masks(p.prefix, x);
		} catch (const CriticalAtAnchor&) {
			continue;
		}
		const Vec h = forward_hidden(p.prefix, x);
		const Vec v = a * h + p.sigs->biases();
		const double score = (v.cwiseAbs().cwiseQuotient(norms)).minCoeff() / std::max(1.0, h.norm());
		if (score > best_score) {
			best_score = score;
			best = x;
		}
	}
	return best;
}

// -------------------------------------------------------------------- SOE

SoeSolution solve_soe_system(const Mat& y, const Mat& z, double tau_zero)
{
	if (y.rows() != y.cols() || z.cols() != y.cols())
		throw ShapeError("SOE system must be square");
	SoeSolution s;
	// c * Y = Z  <=>  Y^T c^T = Z^T
	Eigen::FullPivLU<Mat> lu(y.transpose());
	if (!lu.isInvertible())
		throw InsufficientRank("SOE directions are linearly dependent");
	s.c = lu.solve(z.transpose()).transpose();
	const Eigen::Index n = y.cols();
	Vec mag(n);
	for (Eigen::Index j = 0; j < n; ++j)
		mag(j) = s.c.col(j).lpNorm<Eigen::Infinity>();
	const double cmax = mag.maxCoeff();
	s.zero.resize(static_cast<std::size_t>(n));
	s.ambiguous.resize(static_cast<std::size_t>(n));
	for (Eigen::Index j = 0; j < n; ++j) {
		s.zero[static_cast<std::size_t>(j)] = mag(j) <= tau_zero * cmax;
		s.ambiguous[static_cast<std::size_t>(j)] = mag(j) > tau_zero * cmax && mag(j) < 10.0 * tau_zero * cmax;
	}
	return s;
}

std::vector<SignDecision> recover_signs_soe(Oracle& o, const LayerProblem& p, const Vec& anchor, const SoeOptions& opt)
{
	check_problem(p);
	const auto t0 = Clock::now();
	const int di = p.sigs->size();
	CollapsedAffine c = collapse(p.prefix, anchor);
	const Vec v = layer_values(p, anchor);
	if ((v.array() == 0.0).any())
		throw CriticalAtAnchor({p.layer, 0}, 0.0);

	// y_k = D q_k with q_k the columns of a random orthogonal matrix and
	// D = diag(|v_hat| / 2): independent, and no layer-i neuron toggles.
	std::mt19937_64 rng(derive_seed(opt.seed, {static_cast<std::uint64_t>(p.layer), 0x50e}));
	Mat g(di, di);
	for (int j = 0; j < di; ++j)
		g.col(j) = standard_normal(di, rng);
	const Mat q = Eigen::HouseholderQR<Mat>(g).householderQ();
	const Mat targets = (0.5 * v.cwiseAbs()).asDiagonal() * q;
	Mat deltas = preimages_for(p, c, targets, anchor);

	Mat y = p.sigs->matrix() * c.gamma * deltas;
	Mat z(o.output_dim(), di);
	{
		ScopedPhase phase(Phase::Soe);
		const Vec f0 = o.query(anchor);
		std::vector<Vec> f1(static_cast<std::size_t>(di));
		for (int k = 0; k < di; ++k)
			f1[static_cast<std::size_t>(k)] = o.query(anchor + deltas.col(k));
		if (!p.last_hidden) {
			// layers above may toggle; those are invisible to the hypothesis
			ScopedPhase overhead(Phase::Linearity);
			for (int k = 0; k < di; ++k) {
				int shrink = 0;
				while (!midpoint_linear(o, anchor, deltas.col(k), f0, f1[static_cast<std::size_t>(k)])) {
					if (++shrink > 12)
						throw InsufficientRank("no linear neighbourhood around the SOE anchor");
					deltas.col(k) *= 0.25;
					f1[static_cast<std::size_t>(k)] = o.query(anchor + deltas.col(k));
				}
			}
			y = p.sigs->matrix() * c.gamma * deltas;
		}
		for (int k = 0; k < di; ++k)
			z.col(k) = f1[static_cast<std::size_t>(k)] - f0;
	}

	const SoeSolution sol = solve_soe_system(y, z, opt.tau_zero);
	for (int j = 0; j < di; ++j)
		if (sol.ambiguous[static_cast<std::size_t>(j)])
			throw NumericallyAmbiguous("SOE coefficient of neuron " + std::to_string(j) +
			                           " sits just above the zero threshold");
	std::vector<SignDecision> out;
	const double dt = seconds_since(t0);
	for (int j = 0; j < di; ++j) {
		SignDecision d;
		d.neuron = {p.layer, j};
		d.method = Method::Soe;
		d.sign = sign_from_activity(v(j), !sol.zero[static_cast<std::size_t>(j)]);
		(d.sign == Sign::Plus ? d.s_plus : d.s_minus) = 1;
		d.alpha = 1.0;
		d.t_total = dt / di;
		out.push_back(d);
	}
	return out;
}

std::vector<SignDecision> recover_signs_freeze(Oracle& o, const LayerProblem& p, const Vec& anchor)
{
	check_problem(p);
	const auto t0 = Clock::now();
	const int di = p.sigs->size();
	CollapsedAffine c = collapse(p.prefix, anchor);
	const Vec v = layer_values(p, anchor);
	// wiggle each neuron alone by half its distance to the hinge
	const Mat targets = (0.5 * v.cwiseAbs()).asDiagonal().toDenseMatrix();
	Mat deltas = preimages_for(p, c, targets, anchor);

	std::vector<bool> moved(static_cast<std::size_t>(di));
	{
		ScopedPhase phase(Phase::Freeze);
		const Vec f0 = o.query(anchor);
		for (int k = 0; k < di; ++k) {
			Vec f1 = o.query(anchor + deltas.col(k));
			if (!p.last_hidden) {
				ScopedPhase overhead(Phase::Linearity);
				int shrink = 0;
				while (!midpoint_linear(o, anchor, deltas.col(k), f0, f1)) {
					if (++shrink > 12)
						throw InsufficientRank("no linear neighbourhood around the freeze anchor");
					deltas.col(k) *= 0.25;
					f1 = o.query(anchor + deltas.col(k));
				}
			}
			const double tol = std::max(1e-9 * f0.lpNorm<Eigen::Infinity>(), noise_floor(f0.lpNorm<Eigen::Infinity>()));
			moved[static_cast<std::size_t>(k)] = (f1 - f0).lpNorm<Eigen::Infinity>() > tol;
		}
	}
	std::vector<SignDecision> out;
	const double dt = seconds_since(t0);
	for (int j = 0; j < di; ++j) {
		SignDecision d;
		d.neuron = {p.layer, j};
		d.method = Method::Freeze;
		d.sign = sign_from_activity(v(j), moved[static_cast<std::size_t>(j)]);
		(d.sign == Sign::Plus ? d.s_plus : d.s_minus) = 1;
		d.alpha = 1.0;
		d.t_total = dt / di;
		out.push_back(d);
	}
	return out;
}

// ----------------------------------------------------------------- wiggle

Wiggle compute_wiggle(std::span<const Layer> prefix, const Mat& signatures, int target, const Vec& x_star,
                      double eps_rel, std::span<const int> suppress, double mu)
{
	const Vec a = signatures.row(target).transpose();
	const Eigen::Index m = signatures.cols();
	Vec dir_delta, dir_input;
	Vec fprev;

	auto regularized = [&](const Mat& q) -> Vec {
		// z = (B^T B + mu tr/n I)^{-1} q^T a with B = A_I q
		std::vector<int> idx(suppress.begin(), suppress.end());
		const Mat b = signatures(idx, Eigen::all) * q;
		Mat gram = b.transpose() * b;
		const double shift = mu * std::max(gram.trace() / static_cast<double>(gram.rows()), 1e-300);
		gram.diagonal().array() += shift;
		return gram.ldlt().solve(q.transpose() * a);
	};

	if (prefix.empty()) {
		fprev = x_star;
		if (suppress.empty()) {
			dir_delta = a;
		} else {
			dir_delta = regularized(Mat::Identity(m, m));
		}
		dir_input = dir_delta;
	} else {
		const CollapsedAffine c = collapse(prefix, x_star);
		fprev = c.gamma * x_star + c.beta;
		const GramEigen ge = gram_eigen(c.gamma, 1e-10);
		if (ge.rank() == 0)
			throw ZeroProjection("empty space of control at x*");
		const Mat w = ge.vectors * ge.values.cwiseSqrt().cwiseInverse().asDiagonal();
		const Mat q = c.gamma * w;   // orthonormal basis of the space of control
		const Vec z = suppress.empty() ? Vec(q.transpose() * a) : regularized(q);
		dir_delta = q * z;
		dir_input = w * z;
	}

	const double norm = dir_delta.norm();
	if (!(norm > kRankTol * a.norm()))
		throw ZeroProjection("signature is orthogonal to the space of control");
	if (a.dot(dir_delta) < 0.0) {
		dir_delta = -dir_delta;
		dir_input = -dir_input;
	}
	Wiggle w;
	w.target = target;
	w.epsilon = eps_rel * std::max(fprev.norm(), 1e-12);
	const double s = w.epsilon / norm;
	w.delta = s * dir_delta;
	w.input_delta = s * dir_input;
	return w;
}

VoteOutcome wiggle_vote(Oracle& o, const Wiggle& w, const Vec& x_star, double tie_tol, int max_halvings)
{
	VoteOutcome v;
	Vec d = w.input_delta;
	Vec f0, fp, fm;
	{
		ScopedPhase phase(Phase::Wiggle);
		f0 = o.query(x_star);
		fp = o.query(x_star + d);
		fm = o.query(x_star - d);
	}
	{
		ScopedPhase phase(Phase::Linearity);
		for (;;) {
			const Vec gp = o.query(x_star + 0.5 * d);
			const Vec gm = o.query(x_star - 0.5 * d);
			const double noise = noise_floor(f0.lpNorm<Eigen::Infinity>());
			const bool right_ok = (gp - 0.5 * (f0 + fp)).lpNorm<Eigen::Infinity>() <=
			                      1e-6 * (fp - f0).lpNorm<Eigen::Infinity>() + 4.0 * noise;
			const bool left_ok = (gm - 0.5 * (f0 + fm)).lpNorm<Eigen::Infinity>() <=
			                     1e-6 * (fm - f0).lpNorm<Eigen::Infinity>() + 4.0 * noise;
			if (right_ok && left_ok)
				break;
			if (v.halvings >= max_halvings)
				throw NonlinearWiggle("wiggle stays nonlinear after halving");
			++v.halvings;
			d *= 0.5;
			fp = gp;
			fm = gm;
		}
	}
	v.left = (fm - f0).norm();
	v.right = (fp - f0).norm();
	if (std::abs(v.left - v.right) <= tie_tol * std::max(v.left, v.right))
		throw TieWithinTolerance("left and right responses agree within tolerance");
	v.vote = v.left > v.right ? -1 : +1;
	return v;
}

namespace {

struct NeuronRun
{
	SignDecision decision;
	int spent_discards = 0;
};

class WiggleRunner
{
public:
	WiggleRunner(Oracle& o, const LayerProblem& p, const WiggleOptions& opt)
	    : o_(o), p_(p), opt_(opt), a_(p.sigs->matrix()), b_(p.sigs->biases())
	{
	}

	// committed: per-neuron sign known with confidence (Undecided otherwise);
	// empty on the first pass, which uses plain projections.
	SignDecision run(int j, int round, const std::vector<Sign>& committed)
	{
		const auto t_start = Clock::now();
		SignDecision d;
		d.neuron = {p_.layer, j};
		d.method = Method::Wiggle;
		d.rounds = round;
		std::mt19937_64 rng(derive_seed(opt_.seed, {static_cast<std::uint64_t>(p_.layer),
		                                            static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(round)}));
		TargetNeuron target{{p_.layer, j}, a_.row(j).transpose(), b_(j)};
		TargetedSearchOptions search;
		search.budget = 16;

		const int d0 = o_.input_dim();
		const int max_attempts = 4 * opt_.samples + 20;
		int off_streak = 0;
		for (int attempt = 0; attempt < max_attempts && d.samples() < opt_.samples; ++attempt) {
			const Vec start = standard_normal(d0, rng);
			auto tc = Clock::now();
			CriticalPoint cp;
			try {
				cp = find_critical_point_for_neuron(o_, p_.prefix, target, start, rng, search);
			} catch (const NeuronAppearsAlwaysOff&) {
				d.t_crit += seconds_since(tc);
				if (++off_streak >= 3) {
					d.always_off = true;
					break;
				}
				continue;
			}
			off_streak = 0;
			d.t_crit += seconds_since(tc);

			const auto tw = Clock::now();
			try {
				const int vote = sample(cp.x_star, j, committed);
				(vote > 0 ? d.s_plus : d.s_minus) += 1;
			} catch (const TieWithinTolerance&) {
				++d.discarded;
			} catch (const NonlinearWiggle&) {
				++d.discarded;
			} catch (const ZeroProjection&) {
			} catch (const CriticalAtAnchor&) {
			} catch (const SkipSample&) {
			}
			d.t_wiggle += seconds_since(tw);
		}
		const int s = d.samples();
		if (s > 0 && d.s_plus != d.s_minus) {
			d.sign = d.s_plus > d.s_minus ? Sign::Plus : Sign::Minus;
			d.alpha = static_cast<double>(std::max(d.s_plus, d.s_minus)) / s;
		} else {
			d.sign = Sign::Undecided;
			d.alpha = s > 0 ? 0.5 : 0.0;
		}
		d.t_total = seconds_since(t_start);
		return d;
	}

private:
	struct SkipSample
	{
	};

	int sample(const Vec& xs, int j, const std::vector<Sign>& committed)
	{
		const auto masks = activation_masks(p_.prefix, xs);
		const Vec h = forward_hidden(p_.prefix, xs);
		const Vec v = a_ * h + b_;

		std::vector<int> suppress;
		if (!committed.empty()) {
			for (int k = 0; k < a_.rows(); ++k) {
				if (k == j)
					continue;
				const Sign s = committed[static_cast<std::size_t>(k)];
				if (s == Sign::Undecided || static_cast<int>(s) * v(k) > 0.0)
					suppress.push_back(k);
			}
		}
		Wiggle w = compute_wiggle(p_.prefix, a_, j, xs, opt_.eps_rel, suppress, opt_.suppress_mu);

		// Free checks on the hypothesis: no prefix neuron and no other
		// neuron of this layer may change state within the wiggle.
		const Vec ad = a_ * w.delta;
		bool ok = false;
		for (int halving = 0; halving < 30 && !ok; ++halving) {
			ok = true;
			for (int k = 0; k < a_.rows() && ok; ++k)
				if (k != j && std::abs(ad(k)) * std::ldexp(1.0, -halving) >= 0.9 * std::abs(v(k)))
					ok = false;
			if (ok) {
				const Vec dd = std::ldexp(1.0, -halving) * w.input_delta;
				ok = prefix_stays(p_.prefix, xs, dd, masks) && prefix_stays(p_.prefix, xs, -dd, masks);
			}
			if (ok && halving > 0) {
				w.input_delta *= std::ldexp(1.0, -halving);
				w.delta *= std::ldexp(1.0, -halving);
			}
		}
		if (!ok)
			throw SkipSample{};
		if (opt_.use_all_outputs)
			return wiggle_vote(o_, w, xs, opt_.tie_tol).vote;
		return vote_first_output(w, xs);
	}

	int vote_first_output(const Wiggle& w, const Vec& xs)
	{
		Vec f0, fp, fm;
		{
			ScopedPhase phase(Phase::Wiggle);
			f0 = o_.query(xs);
			fp = o_.query(xs + w.input_delta);
			fm = o_.query(xs - w.input_delta);
		}
		const double l = std::abs(fm(0) - f0(0)), r = std::abs(fp(0) - f0(0));
		if (std::abs(l - r) <= opt_.tie_tol * std::max(l, r))
			throw TieWithinTolerance("tie on output 0");
		return l > r ? -1 : +1;
	}

	Oracle& o_;
	const LayerProblem& p_;
	const WiggleOptions& opt_;
	Mat a_;
	Vec b_;
};

}  // namespace

WiggleReport recover_signs_wiggle(Oracle& o, const LayerProblem& p, const WiggleOptions& opt)
{
	check_problem(p);
	std::vector<int> neurons = opt.neurons;
	if (neurons.empty()) {
		neurons.resize(static_cast<std::size_t>(p.sigs->size()));
		std::iota(neurons.begin(), neurons.end(), 0);
	}
	WiggleRunner runner(o, p, opt);
	const int n = static_cast<int>(neurons.size());

	WiggleReport rep;
	rep.first_pass.resize(static_cast<std::size_t>(n));
	parallel_for(n, opt.workers, [&](int k) {
		rep.first_pass[static_cast<std::size_t>(k)] = runner.run(neurons[static_cast<std::size_t>(k)], 0, {});
	});

	// alpha_0: the confidence below which (inclusive) the bottom fraction lies
	std::vector<double> alphas;
	for (const auto& d : rep.first_pass)
		alphas.push_back(d.sign == Sign::Undecided ? 0.0 : d.alpha);
	std::sort(alphas.begin(), alphas.end());
	const int bottom = std::clamp(static_cast<int>(std::ceil(opt.reanalysis_fraction * n)), 0, n);
	rep.alpha0 = bottom > 0 ? alphas[static_cast<std::size_t>(bottom - 1)] : 0.5;

	rep.decisions = rep.first_pass;
	std::vector<int> redo;
	for (int k = 0; k < n; ++k) {
		auto& d = rep.decisions[static_cast<std::size_t>(k)];
		d.low_confidence = d.sign == Sign::Undecided || d.alpha <= rep.alpha0;
		rep.first_pass[static_cast<std::size_t>(k)].low_confidence = d.low_confidence;
		if (d.low_confidence && !d.always_off)
			redo.push_back(k);
	}
	if (!opt.reanalyze)
		return rep;

	for (int round = 1; round <= opt.max_rounds && !redo.empty(); ++round) {
		// committed signs: everything decided with confidence so far
		std::vector<Sign> committed(static_cast<std::size_t>(p.sigs->size()), Sign::Undecided);
		std::vector<bool> pending(static_cast<std::size_t>(n), false);
		for (int k : redo)
			pending[static_cast<std::size_t>(k)] = true;
		for (int k = 0; k < n; ++k)
			if (!pending[static_cast<std::size_t>(k)])
				committed[static_cast<std::size_t>(neurons[static_cast<std::size_t>(k)])] =
				    rep.decisions[static_cast<std::size_t>(k)].sign;

		std::vector<SignDecision> fresh(redo.size());
		parallel_for(static_cast<int>(redo.size()), opt.workers, [&](int r) {
			fresh[static_cast<std::size_t>(r)] =
			    runner.run(neurons[static_cast<std::size_t>(redo[static_cast<std::size_t>(r)])], round, committed);
		});
		std::vector<int> next;
		for (std::size_t r = 0; r < redo.size(); ++r) {
			auto& d = rep.decisions[static_cast<std::size_t>(redo[r])];
			SignDecision f = fresh[r];
			f.low_confidence = true;
			f.t_crit += d.t_crit;
			f.t_wiggle += d.t_wiggle;
			f.t_total += d.t_total;
			f.discarded += d.discarded;
			d = f;
			if (d.sign == Sign::Undecided && !d.always_off)
				next.push_back(redo[r]);
		}
		redo = std::move(next);
	}
	return rep;
}

// ------------------------------------------------------------- last layer

Vec recover_output_coefficient(Oracle& o, const LayerProblem& p, int k, const CriticalPoint& cp)
{
	check_problem(p);
	const Mat a = p.sigs->matrix();
	const Vec& xs = cp.x_star;
	const auto masks = activation_masks(p.prefix, xs);
	const Vec h = forward_hidden(p.prefix, xs);
	const Vec v = a * h + p.sigs->biases();

	// Delta along the input-space gradient of the hypothesis F_k
	Vec g = pullback(p.prefix, xs, a.row(k).transpose());
	const double gn = g.norm();
	if (!(gn > 0.0))
		throw ZeroProjection("neuron cannot be moved from this critical point");
	const Vec u = g / gn;
	const Vec gu = forward_tangent(p.prefix, xs, u).slope;   // Gamma u
	const Vec au = a * gu;

	double t = 1e-2 * std::max(1.0, xs.norm());
	for (Eigen::Index m = 0; m < a.rows(); ++m)
		if (m != k && au(m) != 0.0)
			t = std::min(t, 0.5 * std::abs(v(m)) / std::abs(au(m)));
	for (int tries = 0; tries < 60 && !(prefix_stays(p.prefix, xs, t * u, masks) && prefix_stays(p.prefix, xs, -t * u, masks));
	     ++tries)
		t *= 0.5;

	ScopedPhase phase(Phase::LastLayer);
	const Vec fp = o.query(xs + t * u);
	const Vec f0 = o.query(xs);
	const Vec fm = o.query(xs - t * u);
	const Vec second = fp - 2.0 * f0 + fm;
	const double fmag = f0.lpNorm<Eigen::Infinity>();
	if (second.lpNorm<Eigen::Infinity>() <= std::max(1e-10 * fmag, noise_floor(fmag)))
		throw SecondDiffBelowNoise("second difference vanishes: output coefficient is zero");
	return second / (t * au(k));
}

LastLayerResult recover_signs_last_layer(Oracle& o, const LayerProblem& p, const LastLayerOptions& opt)
{
	check_problem(p);
	if (!p.last_hidden)
		throw std::invalid_argument("last-layer method applies to the last hidden layer only");
	const auto t0 = Clock::now();
	const Mat a = p.sigs->matrix();
	const Vec bias = p.sigs->biases();
	const int dr = static_cast<int>(a.rows());
	const int dout = o.output_dim();
	const int d0 = o.input_dim();
	std::mt19937_64 rng(derive_seed(opt.seed, {static_cast<std::uint64_t>(p.layer), 0x1a57}));

	LastLayerResult res;
	res.coefficients = Mat::Zero(dout, dr);
	std::vector<bool> known(static_cast<std::size_t>(dr), false);
	std::vector<bool> off(static_cast<std::size_t>(dr), false);
	for (int k = 0; k < dr; ++k) {
		TargetNeuron target{{p.layer, k}, a.row(k).transpose(), bias(k)};
		try {
			const CriticalPoint cp = find_critical_point_for_neuron(o, p.prefix, target, standard_normal(d0, rng), rng);
			res.coefficients.col(k) = recover_output_coefficient(o, p, k, cp);
			known[static_cast<std::size_t>(k)] = true;
		} catch (const NeuronAppearsAlwaysOff&) {
			off[static_cast<std::size_t>(k)] = true;
		} catch (const SecondDiffBelowNoise&) {
		}
	}
	std::vector<int> cols;
	for (int k = 0; k < dr; ++k)
		if (known[static_cast<std::size_t>(k)])
			cols.push_back(k);
	const int nu = static_cast<int>(cols.size());

	// Unknowns: s_k for the known columns, then b (d_out entries).
	Mat sys(0, nu + dout);
	Vec rhs(0);
	Vec magnitude(0);   // size of the terms that form each equation, for the rounding floor
	auto add_equations = [&](int count) {
		ScopedPhase phase(Phase::LastLayer);
		for (int t = 0; t < count; ++t) {
			const Vec x = standard_normal(d0, rng);
			const Vec f = o.query(x);
			const Vec v = a * forward_hidden(p.prefix, x) + bias;
			const Vec yminus = (-v).cwiseMax(0.0);
			const Eigen::Index r0 = sys.rows();
			sys.conservativeResize(r0 + dout, Eigen::NoChange);
			rhs.conservativeResize(r0 + dout);
			magnitude.conservativeResize(r0 + dout);
			for (int out = 0; out < dout; ++out) {
				for (int c = 0; c < nu; ++c)
					sys(r0 + out, c) = res.coefficients(out, cols[static_cast<std::size_t>(c)]) * v(cols[static_cast<std::size_t>(c)]);
				for (int b = 0; b < dout; ++b)
					sys(r0 + out, nu + b) = b == out ? 1.0 : 0.0;
				rhs(r0 + out) = f(out) - res.coefficients.row(out).dot(yminus);
				magnitude(r0 + out) = std::abs(f(out)) + res.coefficients.row(out).cwiseAbs().dot(v.cwiseAbs());
			}
		}
	};

	const int base = dr + 1;
	const int needed = (nu + dout + dout - 1) / dout;   // equations per input are d_out
	add_equations(std::max(base, needed));
	Vec sol;
	for (int total = std::max(base, needed);; ) {
		const LstsqResult ls = least_squares(sys, rhs, 1e-10);
		sol = ls.x.col(0);
		const bool full_rank = ls.rank == nu + dout;
		// a right-hand side made of rounding only (all selectors 0, zero bias)
		// still has to pass, hence the floor
		const bool consistent = ls.residual <= 1e-6 * rhs.norm() + noise_floor(magnitude.norm());
		bool binary = true;
		for (int c = 0; c < nu; ++c)
			if (std::abs(sol(c) - std::round(sol(c))) > opt.tau_binary || sol(c) < -opt.tau_binary ||
			    sol(c) > 1.0 + opt.tau_binary)
				binary = false;
		if (full_rank && consistent && binary)
			break;
		if (total >= 2 * base) {
			if (!full_rank)
				throw RankDeficientSystem("last-layer system is rank deficient");
			if (!consistent)
				throw RankDeficientSystem("last-layer system is inconsistent (residual too large)");
			throw NonBinarySolution("selector solution is not binary");
		}
		const int more = std::min(base, 2 * base - total);
		add_equations(more);
		total += more;
	}

	// fix the selectors and refit the output bias
	Vec s = Vec::Zero(nu);
	for (int c = 0; c < nu; ++c)
		s(c) = std::round(std::clamp(sol(c), 0.0, 1.0));
	res.output_bias = Vec::Zero(dout);
	const Eigen::Index rows = sys.rows() / dout;
	for (Eigen::Index r = 0; r < rows; ++r)
		for (int out = 0; out < dout; ++out)
			res.output_bias(out) += (rhs(r * dout + out) - sys.row(r * dout + out).head(nu).dot(s)) / static_cast<double>(rows);

	const double dt = seconds_since(t0);
	std::vector<int> pos(static_cast<std::size_t>(dr), -1);
	for (int c = 0; c < nu; ++c)
		pos[static_cast<std::size_t>(cols[static_cast<std::size_t>(c)])] = c;
	for (int k = 0; k < dr; ++k) {
		SignDecision d;
		d.neuron = {p.layer, k};
		d.method = Method::LastLayer;
		d.t_total = dt / dr;
		d.always_off = off[static_cast<std::size_t>(k)];
		const int c = pos[static_cast<std::size_t>(k)];
		if (c >= 0) {
			d.sign = s(c) > 0.5 ? Sign::Plus : Sign::Minus;
			(d.sign == Sign::Plus ? d.s_plus : d.s_minus) = 1;
			d.alpha = 1.0 - std::abs(sol(c) - s(c));
		} else {
			d.low_confidence = true;
		}
		res.decisions.push_back(d);
	}
	return res;
}

}  // namespace nnx
