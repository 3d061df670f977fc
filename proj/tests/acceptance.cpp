// Acceptance checks. Each criterion prints one PASS/FAIL line with the
// measured values. Arguments select criteria by id (e.g. "A1 A6"); with no
// arguments all of them run. The exit status is nonzero if any check fails.

#include "nnx/pipeline.hpp"
#include "support.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>

using namespace nnx;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t)
{
	return std::chrono::duration<double>(Clock::now() - t).count();
}

struct Outcome
{
	bool pass = false;
	std::string detail;
};

template <class... Args>
std::string fmt(const char* f, Args... args)
{
	char buf[1024];
	std::snprintf(buf, sizeof buf, f, args...);
	return buf;
}

SignatureSet scrambled(const Layer& l, int layer, std::uint64_t seed)
{
	SignatureSet s = signatures_from_layer(l, layer);
	std::mt19937_64 rng(seed);
	for (auto& row : s.rows)
		if (rng() & 1u) {
			row.coords = -row.coords;
			row.bias = -*row.bias;
		}
	return s;
}

// +1 where the signature points along the victim's row.
std::vector<int> truth_signs(const Layer& truth, const SignatureSet& sigs)
{
	std::vector<int> s;
	for (int j = 0; j < sigs.size(); ++j)
		s.push_back(sigs.rows[static_cast<std::size_t>(j)].coords.dot(truth.weights.row(j).transpose()) > 0 ? 1 : -1);
	return s;
}

std::vector<int> as_ints(const std::vector<SignDecision>& d)
{
	std::vector<int> s;
	for (const auto& x : d)
		s.push_back(static_cast<int>(x.sign));
	return s;
}

int count_equal(const std::vector<int>& a, const std::vector<int>& b)
{
	int n = 0;
	for (std::size_t k = 0; k < std::min(a.size(), b.size()); ++k)
		n += a[k] == b[k];
	return n;
}

const Network& mnist_like()
{
	static const Network net = generate_unitary_balanced(Architecture::parse("784-128-1"), 784128);
	return net;
}

// ---------------------------------------------------------------------------

Outcome a1_soe()
{
	const Network& net = mnist_like();
	LocalOracle o(net);
	const SignatureSet sigs = scrambled(net.layer(1), 1, 11);
	const LayerProblem p{{}, &sigs, 1, true};
	std::mt19937_64 rng(12);
	const Vec anchor = pick_anchor(p, 784, rng);
	const auto t0 = Clock::now();
	const auto d = recover_signs_soe(o, p, anchor);
	const double secs = seconds_since(t0);
	const int correct = count_equal(as_ints(d), truth_signs(net.layer(1), sigs));
	const auto soe = o.ledger().count(Phase::Soe);
	return {correct == 128 && soe == 129 && secs < 60.0,
	        fmt("%d/128 signs, SOE ledger %llu (want 129), %.2f s (limit 60 s)", correct,
	            static_cast<unsigned long long>(soe), secs)};
}

Outcome a2_last_layer()
{
	std::vector<Layer> layers = mnist_like().layers();
	const double planted = 0.37;
	layers[1].bias(0) = planted;
	const Network net(mnist_like().arch(), layers);
	LocalOracle o(net);
	const SignatureSet sigs = scrambled(net.layer(1), 1, 21);
	const LayerProblem p{{}, &sigs, 1, true};
	const auto t0 = Clock::now();
	const LastLayerResult res = recover_signs_last_layer(o, p);
	const double secs = seconds_since(t0);
	const int correct = count_equal(as_ints(res.decisions), truth_signs(net.layer(1), sigs));
	const auto ll = o.ledger().count(Phase::LastLayer);
	const double bias_err = std::abs(res.output_bias(0) - planted);
	return {correct == 128 && ll == 513 && bias_err <= 1e-6,
	        fmt("%d/128 signs, last-layer ledger %llu (want 513), output bias error %.2e (limit 1e-6), "
	            "critical-point queries %llu, %.2f s",
	            correct, static_cast<unsigned long long>(ll), bias_err,
	            static_cast<unsigned long long>(o.ledger().count(Phase::CriticalPoints)), secs)};
}

Outcome a3_wiggle()
{
	const Network net = generate_unitary_balanced(Architecture::parse("100-200-200-200-10"), 100200);
	LocalOracle o(net);
	int correct = 0, total = 0, wrong_confident = 0, reanalyzed = 0, undecided = 0;
	std::ostringstream per_layer;
	const auto t0 = Clock::now();
	for (int layer = 1; layer <= 3; ++layer) {
		const SignatureSet sigs = scrambled(net.layer(layer), layer, 300 + static_cast<std::uint64_t>(layer));
		const LayerProblem p{net.prefix(layer - 1), &sigs, layer, layer == 3};
		WiggleOptions opt;
		opt.samples = 200;
		opt.seed = 7;
		const auto tl = Clock::now();
		const WiggleReport rep = recover_signs_wiggle(o, p, opt);
		const auto truth = truth_signs(net.layer(layer), sigs);
		const int c = count_equal(as_ints(rep.decisions), truth);
		correct += c;
		total += sigs.size();
		for (std::size_t j = 0; j < rep.first_pass.size(); ++j) {
			const auto& d = rep.first_pass[j];
			if (d.alpha > rep.alpha0 && static_cast<int>(d.sign) != truth[j])
				++wrong_confident;
		}
		for (const auto& d : rep.decisions) {
			reanalyzed += d.rounds > 0;
			undecided += d.sign == Sign::Undecided;
		}
		per_layer << fmt(" L%d %d/%d (alpha0 %.3f, %.0f s)", layer, c, sigs.size(), rep.alpha0, seconds_since(tl));
	}
	return {correct == 600 && wrong_confident == 0,
	        fmt("%d/600 signs, %d wrong with alpha > alpha0, %d re-analysed, %d undecided, %.0f s;", correct,
	            wrong_confident, reanalyzed, undecided, seconds_since(t0)) +
	            per_layer.str()};
}

// ---------------------------------------------------------------------------

struct A4Case
{
	Architecture arch;
	int layer;
};

A4Case a4_case(int k, std::mt19937_64& rng)
{
	auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
	const int out = pick(1, 4);
	switch (k % 4) {
	case 0: {
		const int w = pick(3, 12);
		return {Architecture({pick(w, w + 8), w, out}), 1};
	}
	case 1: {
		const int w = pick(3, 12);
		return {Architecture({pick(w, w + 8), w, pick(3, 12), out}), 1};
	}
	case 2:
		return {Architecture({pick(8, 24), pick(8, 24), pick(3, 12), out}), 2};
	default:
		return {Architecture({pick(8, 24), pick(8, 24), pick(3, 12), pick(3, 12), out}), 2};
	}
}

Outcome a4_exhaustive()
{
	std::mt19937_64 rng(4040);
	int nets = 0, regenerated = 0, runs = 0, mismatches = 0;
	std::map<std::string, int> per_method;
	std::ostringstream fails;
	std::uint64_t seed = 5000;
	while (nets < 50) {
		const A4Case c = a4_case(nets, rng);
		const Network net = generate_unitary_balanced(c.arch, ++seed, 2000);
		const SignatureSet sigs = scrambled(net.layer(c.layer), c.layer, seed);
		const auto ex = testing::exhaustive_signs(net, c.layer, sigs);
		// a sign that no sampled input can observe has no unique optimum
		if (!(ex.best_error <= 1e-9) || !(ex.runner_up_error > 1e-6)) {
			++regenerated;
			continue;
		}
		++nets;
		const bool last = c.layer == c.arch.hidden_layers();
		const LayerProblem p{net.prefix(c.layer - 1), &sigs, c.layer, last};
		std::vector<Method> methods{Method::Wiggle};
		if (last)
			methods.push_back(Method::LastLayer);
		{
			std::mt19937_64 arng(seed);
			const Vec anchor = pick_anchor(p, c.arch.input_dim(), arng);
			const Mat g = sigs.matrix() * collapse(p.prefix, anchor, 0.0).gamma;
			if (g.rows() > 0 && g.fullPivLu().rank() == sigs.size()) {
				methods.push_back(Method::Soe);
				methods.push_back(Method::Freeze);
			}
		}
		for (Method m : methods) {
			LocalOracle o(net);
			std::vector<SignDecision> d;
			std::string err;
			try {
				std::mt19937_64 arng(seed);
				switch (m) {
				case Method::Wiggle: {
					WiggleOptions opt;
					opt.seed = seed;
					d = recover_signs_wiggle(o, p, opt).decisions;
					break;
				}
				case Method::LastLayer:
					d = recover_signs_last_layer(o, p).decisions;
					break;
				case Method::Soe:
					d = recover_signs_soe(o, p, pick_anchor(p, c.arch.input_dim(), arng));
					break;
				case Method::Freeze:
					d = recover_signs_freeze(o, p, pick_anchor(p, c.arch.input_dim(), arng));
					break;
				}
			} catch (const std::exception& e) {
				err = e.what();
			}
			++runs;
			++per_method[std::string(method_name(m))];
			if (!err.empty() || as_ints(d) != ex.best) {
				++mismatches;
				fails << " [" << c.arch.to_string() << " L" << c.layer << " " << method_name(m) << ": "
				      << (err.empty() ? fmt("%d/%d agree", count_equal(as_ints(d), ex.best), sigs.size()) : err) << "]";
			}
		}
	}
	std::ostringstream counts;
	for (const auto& [name, n] : per_method)
		counts << " " << name << "=" << n;
	return {mismatches == 0, fmt("50 nets, %d method runs, %d mismatches, %d nets redrawn for a non-unique optimum;", runs,
	                             mismatches, regenerated) +
	                             counts.str() + fails.str()};
}

Outcome a5_end_to_end()
{
	const Network& net = mnist_like();
	LocalOracle o(net);
	ExtractionConfig cfg;
	cfg.seed = 55;
	const auto t0 = Clock::now();
	const ExtractionResult res = extract(o, cfg);
	const double secs = seconds_since(t0);
	const auto& rep = res.report;
	if (!res.hypothesis || !rep.deviation)
		return {false, "no hypothesis: " + (rep.errors.empty() ? std::string("unknown") : rep.errors.front())};
	const double dev = rep.deviation->max();
	const auto& l = rep.layers.front();
	return {dev <= 1e-4 && secs < 1800.0 && !rep.partial,
	        fmt("max deviation %.3e over %d normal + %d uniform inputs (limit 1e-4), %d/%d signatures, signs %d/%d, "
	            "%llu queries, %.0f s (limit 1800 s)",
	            dev, rep.deviation->samples, rep.deviation->samples, l.recovered, l.width, l.signs_correct, l.signs_total,
	            static_cast<unsigned long long>(rep.total_queries), secs)};
}

Outcome a6_critical_points()
{
	std::mt19937_64 rng(606);
	auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
	int segments = 0, kinks = 0, missed = 0, spurious = 0, budget = 0;
	std::ostringstream missed_info;
	double worst = 0.0;
	for (int n = 0; n < 20; ++n) {
		const Architecture arch({pick(3, 16), pick(4, 16), pick(4, 16), pick(1, 3)});
		const Network net = generate_unitary_balanced(arch, 6000 + static_cast<std::uint64_t>(n), 2000);
		LocalOracle o(net);
		for (int s = 0; s < 100; ++s, ++segments) {
			const Vec a = 2.0 * testing::random_input(arch.input_dim(), rng);
			const Vec b = 2.0 * testing::random_input(arch.input_dim(), rng);
			const auto truth = testing::exact_kinks(net, a, b);
			const auto found = find_critical_points(o, ProbeSegment(a, b));
			budget += found.budget_exhausted;
			for (const auto& k : truth) {
				// a toggle with no effect on output 0 is not a critical point of f
				if (k.slope_jump <= 1e-12 * std::max(k.slope_scale, 1.0))
					continue;
				++kinks;
				double best = 1.0;
				for (const auto& p : found.points)
					best = std::min(best, std::abs(p.lambda - k.lambda));
				if (best > 1e-6) {
					++missed;
					double gap = 1.0;
					for (const auto& other : truth)
						if (&other != &k)
							gap = std::min(gap, std::abs(other.lambda - k.lambda));
					missed_info << fmt(" [lambda %.6f, relative jump %.1e, nearest kink %.1e away]", k.lambda,
					                   k.slope_jump / std::max(k.slope_scale, 1e-300), gap);
				} else
					worst = std::max(worst, best);
			}
			for (const auto& p : found.points) {
				const bool real = std::any_of(truth.begin(), truth.end(), [&](const testing::Kink& k) {
					return std::abs(p.lambda - k.lambda) <= 1e-6;
				});
				spurious += !real;
			}
		}
	}
	// parallel outer pieces: f = c relu(u.x - a) - c relu(u.x - b) along random lines
	int trap_runs = 0, trap_false = 0, trap_missed = 0;
	std::uniform_real_distribution<double> uni(0.05, 0.95);
	for (int t = 0; t < 500; ++t, ++trap_runs) {
		const int d = pick(1, 6);
		const Vec u = testing::random_input(d, rng).normalized();
		const Vec a = testing::random_input(d, rng);
		Vec b = testing::random_input(d, rng);
		if (std::abs(u.dot(b - a)) < 0.1)
			b = a + u;
		double l1 = uni(rng), l2 = uni(rng);
		if (std::abs(l1 - l2) < 1e-3)
			l2 = l1 < 0.5 ? l1 + 0.2 : l1 - 0.2;
		RowMat w1(2, d);
		w1.row(0) = u.transpose();
		w1.row(1) = u.transpose();
		Vec b1(2);
		b1 << -u.dot(a + l1 * (b - a)), -u.dot(a + l2 * (b - a));
		RowMat w2(1, 2);
		const double c = 0.1 + uni(rng);
		w2 << c, -c;
		const Network net(Architecture({d, 2, 1}), {Layer{w1, b1}, Layer{w2, Vec::Zero(1)}});
		LocalOracle o(net);
		const auto found = find_critical_points(o, ProbeSegment(a, b)).points;
		int hits = 0;
		for (const auto& p : found) {
			const bool real = std::abs(p.lambda - l1) <= 1e-6 || std::abs(p.lambda - l2) <= 1e-6;
			trap_false += !real;
			hits += real;
		}
		trap_missed += hits < 2;
	}
	return {missed == 0 && spurious == 0 && worst <= 1e-6 && trap_false == 0,
	        fmt("%d segments, %d kinks, %d missed, %d spurious, max lambda error %.2e (limit 1e-6), %d budget hits; "
	            "parallel-lines trap: %d runs, %d false positives, %d with a kink missed",
	            segments, kinks, missed, spurious, worst, budget, trap_runs, trap_false, trap_missed) +
	            missed_info.str()};
}

Outcome a7_rank_profile()
{
	const Network net = generate_unitary_balanced(Architecture::parse("3072-256-256-256-256-256-256-256-256-10"), 3072256);
	const RankProfiler prof(net);
	std::mt19937_64 rng(707);
	std::vector<double> mean(8, 0.0);
	const int anchors = 1000;
	for (int k = 0; k < anchors; ++k) {
		const auto r = prof(testing::random_input(3072, rng));
		for (std::size_t i = 0; i < 8; ++i)
			mean[i] += r[i];
	}
	std::ostringstream s;
	bool monotone = true;
	for (std::size_t i = 0; i < 8; ++i) {
		mean[i] /= anchors;
		s << (i ? " " : "") << fmt("%.2f", mean[i]);
		if (i > 0 && mean[i] > mean[i - 1])
			monotone = false;
	}
	const auto [lo, hi] = std::minmax_element(mean.begin() + 3, mean.end());
	const double spread = *hi - *lo;
	return {monotone && spread <= 4.0,
	        std::string("mean ranks [") + s.str() +
	            fmt("], non-increasing: %s, spread over layers 4-8 %.2f (limit 4, i.e. within +-2)", monotone ? "yes" : "no",
	                spread)};
}

Outcome a8_snr()
{
	const int n = 256, d = n / 2, trials = 1000;
	std::mt19937_64 rng(808);
	double sum = 0.0;
	for (int t = 0; t < trials; ++t) {
		// every prefix unit active, so the space of control has exactly d dimensions
		Layer l{RowMat(n, d), Vec::Constant(n, 1e4)};
		for (int r = 0; r < n; ++r)
			l.weights.row(r) = testing::random_input(d, rng).transpose();
		Mat a(1, n);
		a.row(0) = testing::random_input(n, rng).normalized().transpose();
		const Wiggle w = compute_wiggle(std::span<const Layer>(&l, 1), a, 0, testing::random_input(d, rng));
		sum += std::abs(a.row(0).dot(w.delta)) / w.epsilon;
	}
	const double mean = sum / trials;
	return {mean >= 0.6 && mean <= 0.8, fmt("mean |<A_j, delta>|/eps = %.4f over %d trials (want [0.6, 0.8])", mean, trials)};
}

Outcome a9_bench()
{
	const BenchResult res = bench_scaling(BenchConfig{});
	bool increasing = true;
	std::ostringstream s;
	for (std::size_t k = 0; k < res.points.size(); ++k) {
		s << fmt(" d0=%d: %.3f s/neuron", res.points[k].d0, res.points[k].seconds_per_neuron);
		if (k > 0 && !(res.points[k].seconds_per_neuron > res.points[k - 1].seconds_per_neuron))
			increasing = false;
	}
	return {increasing && res.exponent >= 2.3 && res.exponent <= 3.5,
	        fmt("exponent %.3f (want [2.3, 3.5]), strictly increasing: %s;", res.exponent, increasing ? "yes" : "no") +
	            s.str()};
}

}  // namespace

int main(int argc, char** argv)
{
	const std::vector<std::pair<std::string, std::function<Outcome()>>> checks{
	    {"A1", a1_soe},           {"A2", a2_last_layer},      {"A3", a3_wiggle},
	    {"A4", a4_exhaustive},    {"A5", a5_end_to_end},      {"A6", a6_critical_points},
	    {"A7", a7_rank_profile},  {"A8", a8_snr},             {"A9", a9_bench}};
	std::set<std::string> wanted(argv + 1, argv + argc);
	int failed = 0;
	for (const auto& [id, fn] : checks) {
		if (!wanted.empty() && !wanted.count(id))
			continue;
		Outcome out;
		const auto t0 = Clock::now();
		try {
			out = fn();
		} catch (const std::exception& e) {
			out = {false, std::string("exception: ") + e.what()};
		}
		failed += !out.pass;
		std::printf("%s %s: %s [%.1f s]\n", out.pass ? "PASS" : "FAIL", id.c_str(), out.detail.c_str(), seconds_since(t0));
		std::fflush(stdout);
	}
	return failed == 0 ? 0 : 1;
}
