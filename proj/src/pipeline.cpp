#include "nnx/pipeline.hpp"
#include "nnx/wire.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace nnx {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
	return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::map<std::string, std::uint64_t> ledger_diff(const std::map<std::string, std::uint64_t>& after,
                                                 const std::map<std::string, std::uint64_t>& before)
{
	std::map<std::string, std::uint64_t> d;
	for (const auto& [k, v] : after) {
		const auto it = before.find(k);
		const std::uint64_t b = it == before.end() ? 0 : it->second;
		if (v > b)
			d[k] = v - b;
	}
	return d;
}

// Relative size of the smallest hypothesis pre-activation among the
// committed layers at x.
double min_relative_preactivation(std::span<const Layer> prefix, const Vec& x)
{
	double best = std::numeric_limits<double>::infinity();
	Vec h = x;
	for (const Layer& l : prefix) {
		const Vec z = affine(l, h);
		const double in = h.norm();
		for (Eigen::Index j = 0; j < z.size(); ++j) {
			const double scale = l.weights.row(j).norm() * in + std::abs(l.bias(j));
			if (scale > 0.0)
				best = std::min(best, std::abs(z(j)) / scale);
		}
		h = z.cwiseMax(0.0);
	}
	return best;
}

Layer commit_layer(const SignatureSet& sigs, const std::vector<SignDecision>& decisions)
{
	Layer l;
	const Mat a = sigs.matrix();
	const Vec b = sigs.biases();
	l.weights = a;
	l.bias = b;
	for (int j = 0; j < sigs.size(); ++j) {
		const double s = decisions[static_cast<std::size_t>(j)].sign == Sign::Minus ? -1.0 : 1.0;
		l.weights.row(j) *= s;
		l.bias(j) *= s;
	}
	return l;
}

}  // namespace

void ExtractionConfig::validate() const
{
	auto positive = [](double v, const char* name) {
		if (!(v > 0.0))
			throw std::invalid_argument(std::string(name) + " must be positive");
	};
	positive(eps_rel, "eps-rel");
	positive(tau_zero, "tau-zero");
	positive(tie_tol, "tau-tie");
	positive(tau_binary, "tau-binary");
	positive(sig_tol, "tau-sig");
	positive(crit_eps, "crit-eps");
	positive(signature_eps, "signature-eps");
	if (samples < 1)
		throw std::invalid_argument("samples must be at least 1");
	if (workers < 1)
		throw std::invalid_argument("workers must be at least 1");
	if (reanalysis_fraction < 0.0 || reanalysis_fraction > 1.0)
		throw std::invalid_argument("reanalysis fraction must lie in [0, 1]");
	if (arch) {
		const int r = arch->hidden_layers();
		for (const auto& [layer, m] : methods) {
			if (layer < 1 || layer > r)
				throw std::invalid_argument("method override for nonexistent layer " + std::to_string(layer));
			if (m == Method::LastLayer && layer != r)
				throw std::invalid_argument("last-layer method only applies to layer " + std::to_string(r));
		}
	}
}

// ----------------------------------------------------------------- signatures

SignatureSet recover_layer_signatures(Oracle& o, std::span<const Layer> prefix, int layer, int width,
                                      const ExtractionConfig& cfg, std::vector<std::string>& notes)
{
	const int d0 = o.input_dim();
	std::mt19937_64 rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(layer), 0x5167}));
	std::vector<SignatureCluster> clusters;
	CriticalPointOptions cpo;
	cpo.eps = cfg.crit_eps;

	auto declared_count = [&] {
		int n = 0;
		for (const auto& c : clusters)
			if (c.multiplicity() >= 2 && c.merged.full() && !c.ambiguous)
				++n;
		return n;
	};

	const int budget = std::max(2, cfg.segments_per_neuron * width);
	int used = 0, rejected = 0;
	for (; used < budget && declared_count() < width; ++used) {
		const Vec z = standard_normal(d0, rng);
		const Vec shift = 0.1 * standard_normal(d0, rng);
		const CriticalPointSearch found = find_critical_points(o, ProbeSegment(shift - 3.0 * z, shift + 3.0 * z), cpo);
		for (const CriticalPoint& cp : found.points) {
			if (!prefix.empty() && min_relative_preactivation(prefix, cp.x_star) <= 1e-6)
				continue;   // a kink of a layer that is already extracted
			const Vec h = forward_hidden(prefix, cp.x_star);
			bool incident = false;
			for (auto& c : clusters) {
				if (!c.merged.full() || !c.merged.bias)
					continue;
				const double v = c.merged.coords.dot(h) + *c.merged.bias;
				const double scale = c.merged.coords.norm() * h.norm() + std::abs(*c.merged.bias);
				if (std::abs(v) <= 1e-5 * scale) {
					++c.incident_points;
					incident = true;
					break;
				}
			}
			if (incident)
				continue;
			try {
				Signature s = recover_deep_partial_signature(o, prefix, cp, cfg.signature_eps, rng);
				SignatureCandidate cand{cp, std::move(s)};
				std::vector<std::size_t> hits;
				for (std::size_t c = 0; c < clusters.size(); ++c)
					if (signature_mismatch(clusters[c].merged, cand.signature) <= cfg.sig_tol)
						hits.push_back(c);
				if (hits.empty()) {
					SignatureCluster fresh;
					merge_into(fresh, std::move(cand));
					clusters.push_back(std::move(fresh));
				} else {
					if (hits.size() > 1)
						for (std::size_t k : hits)
							clusters[k].ambiguous = true;
					merge_into(clusters[hits.front()], std::move(cand));
				}
			} catch (const NotLayer1&) {
				++rejected;
			} catch (const ZeroDenominator&) {
				++rejected;
			} catch (const RankDeficient&) {
				++rejected;
			} catch (const CriticalAtAnchor&) {
				++rejected;
			}
		}
	}

	std::vector<const SignatureCluster*> keep;
	for (const auto& c : clusters)
		if (c.multiplicity() >= 2 && c.merged.full() && !c.ambiguous)
			keep.push_back(&c);
	std::stable_sort(keep.begin(), keep.end(),
	                 [](const SignatureCluster* a, const SignatureCluster* b) { return a->multiplicity() > b->multiplicity(); });
	if (static_cast<int>(keep.size()) > width) {
		notes.push_back("found " + std::to_string(keep.size()) + " clusters for " + std::to_string(width) +
		                " neurons; kept the most frequently hit");
		keep.resize(static_cast<std::size_t>(width));
	}
	if (static_cast<int>(keep.size()) < width)
		notes.push_back("recovered " + std::to_string(keep.size()) + " of " + std::to_string(width) +
		                " signatures after " + std::to_string(used) + " probe segments");
	if (rejected > 0)
		notes.push_back(std::to_string(rejected) + " critical points gave no usable signature");

	SignatureSet set;
	set.layer = layer;
	for (const SignatureCluster* c : keep) {
		Signature s = c->merged;
		s.layer_guess = layer;
		set.rows.push_back(std::move(s));
	}
	return set;
}

// --------------------------------------------------------------- sign match

namespace {

struct Pairing
{
	std::vector<int> perm;   // hypothesis row -> victim row (-1 when unmatched)
	int correct = 0;
};

// prev_perm maps hypothesis columns to victim columns (identity when empty).
Pairing pair_rows(const Layer& truth, const Layer& hyp, const std::vector<int>& prev_perm)
{
	const Eigen::Index cols = truth.weights.cols();
	Mat h = Mat::Zero(hyp.weights.rows(), cols + 1);
	for (Eigen::Index c = 0; c < hyp.weights.cols(); ++c) {
		const int tc = prev_perm.empty() ? static_cast<int>(c) : prev_perm[static_cast<std::size_t>(c)];
		if (tc >= 0 && tc < cols)
			h.col(tc) = hyp.weights.col(c);
	}
	h.col(cols) = hyp.bias;
	Mat t(truth.weights.rows(), cols + 1);
	t.leftCols(cols) = truth.weights;
	t.col(cols) = truth.bias;
	Pairing p;
	p.perm.assign(static_cast<std::size_t>(h.rows()), -1);
	std::vector<bool> taken(static_cast<std::size_t>(t.rows()), false);
	for (Eigen::Index i = 0; i < h.rows(); ++i) {
		const Vec hi = h.row(i).normalized();
		double best = -1.0;
		int arg = -1;
		double signed_cos = 0.0;
		for (Eigen::Index k = 0; k < t.rows(); ++k) {
			if (taken[static_cast<std::size_t>(k)])
				continue;
			const double c = hi.dot(t.row(k).normalized());
			if (std::abs(c) > best) {
				best = std::abs(c);
				arg = static_cast<int>(k);
				signed_cos = c;
			}
		}
		if (arg >= 0) {
			taken[static_cast<std::size_t>(arg)] = true;
			p.perm[static_cast<std::size_t>(i)] = arg;
			if (signed_cos > 0.0)
				++p.correct;
		}
	}
	return p;
}

}  // namespace

SignAccuracy sign_accuracy(const Layer& truth, const Layer& hypothesis)
{
	const Pairing p = pair_rows(truth, hypothesis, {});
	return {p.correct, static_cast<int>(hypothesis.weights.rows())};
}

// ------------------------------------------------------------ output layer

Layer recover_output_layer(Oracle& o, std::span<const Layer> hidden, std::uint64_t seed)
{
	ScopedPhase phase(Phase::OutputLayer);
	const int d0 = o.input_dim();
	const int dout = o.output_dim();
	const int dr = hidden.empty() ? d0 : static_cast<int>(hidden.back().weights.rows());
	const int n = dr + dout + 10;
	std::mt19937_64 rng(derive_seed(seed, {0x07}));
	Mat features(n, dr + 1), targets(n, dout);
	for (int t = 0; t < n; ++t) {
		const Vec x = standard_normal(d0, rng);
		features.row(t).head(dr) = forward_hidden(hidden, x).transpose();
		features(t, dr) = 1.0;
		targets.row(t) = o.query(x).transpose();
	}
	const LstsqResult ls = least_squares(features, targets, 1e-12);
	Layer out;
	out.weights = ls.x.topRows(dr).transpose();
	out.bias = ls.x.row(dr).transpose();
	return out;
}

DeviationStats verify_equivalence(Oracle& o, const Network& hypothesis, int m, std::uint64_t seed)
{
	if (hypothesis.arch().input_dim() != o.input_dim() || hypothesis.arch().output_dim() != o.output_dim())
		throw ShapeError("hypothesis and oracle dimensions differ");
	ScopedPhase phase(Phase::Verify);
	DeviationStats s;
	s.samples = m;
	std::mt19937_64 rng(derive_seed(seed, {0x7e51f}));
	std::uniform_real_distribution<double> unit(0.0, 1.0);
	auto deviation = [&](const Vec& x) {
		const Vec f = o.query(x);
		const Vec g = evaluate(hypothesis, x);
		return (f - g).lpNorm<Eigen::Infinity>() / (1.0 + f.lpNorm<Eigen::Infinity>());
	};
	for (int k = 0; k < m; ++k) {
		const double d = deviation(standard_normal(o.input_dim(), rng));
		s.max_normal = std::max(s.max_normal, d);
		s.mean_normal += d / m;
	}
	for (int k = 0; k < m; ++k) {
		Vec x(o.input_dim());
		for (Eigen::Index i = 0; i < x.size(); ++i)
			x(i) = unit(rng);
		const double d = deviation(x);
		s.max_uniform = std::max(s.max_uniform, d);
		s.mean_uniform += d / m;
	}
	return s;
}

// ------------------------------------------------------------------ extract

namespace {

std::vector<SignDecision> run_method(Oracle& o, const LayerProblem& p, Method m, const ExtractionConfig& cfg,
                                     LayerReport& lr, std::optional<Vec>& last_bias)
{
	const int d0 = o.input_dim();
	std::mt19937_64 rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(p.layer), 0xa4c}));
	switch (m) {
	case Method::Soe: {
		SoeOptions so;
		so.tau_zero = cfg.tau_zero;
		so.seed = cfg.seed;
		std::string last_error;
		for (int attempt = 0; attempt < 3; ++attempt) {
			const Vec anchor = pick_anchor(p, d0, rng);
			try {
				so.seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(attempt)});
				return recover_signs_soe(o, p, anchor, so);
			} catch (const NumericallyAmbiguous& e) {
				last_error = e.what();
				lr.notes.push_back("soe anchor rejected: " + last_error);
			} catch (const CriticalAtAnchor& e) {
				last_error = e.what();
			}
		}
		throw NumericallyAmbiguous("soe failed at three anchors: " + last_error);
	}
	case Method::Freeze:
		return recover_signs_freeze(o, p, pick_anchor(p, d0, rng));
	case Method::LastLayer: {
		LastLayerOptions lo;
		lo.tau_binary = cfg.tau_binary;
		lo.seed = cfg.seed;
		LastLayerResult res = recover_signs_last_layer(o, p, lo);
		last_bias = res.output_bias;
		return res.decisions;
	}
	case Method::Wiggle: {
		WiggleOptions wo;
		wo.samples = cfg.samples;
		wo.reanalysis_fraction = cfg.reanalysis_fraction;
		wo.max_rounds = cfg.max_rounds;
		wo.eps_rel = cfg.eps_rel;
		wo.tie_tol = cfg.tie_tol;
		wo.seed = cfg.seed;
		wo.workers = cfg.workers;
		WiggleReport rep = recover_signs_wiggle(o, p, wo);
		lr.alpha0 = rep.alpha0;
		return rep.decisions;
	}
	}
	throw std::logic_error("unknown method");
}

Method route(Oracle& o, const LayerProblem& p, const ExtractionConfig& cfg, int r)
{
	if (const auto it = cfg.methods.find(p.layer); it != cfg.methods.end())
		return it->second;
	if (p.layer == r)
		return Method::LastLayer;
	std::mt19937_64 rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(p.layer), 0x7a1}));
	const Vec anchor = pick_anchor(p, o.input_dim(), rng);
	const CollapsedAffine c = collapse(p.prefix, anchor, 0.0);
	const Mat m = p.sigs->matrix() * c.gamma;
	return numerical_rank(m, kRankTol) == p.sigs->size() ? Method::Soe : Method::Wiggle;
}

}  // namespace

ExtractionResult extract(Oracle& o, const ExtractionConfig& cfg)
{
	cfg.validate();
	const auto t0 = Clock::now();
	ExtractionResult result;
	ExtractionReport& rep = result.report;

	std::optional<Network> truth;
	if (!cfg.truth.empty())
		truth = load_network(cfg.truth);
	else if (const auto* local = dynamic_cast<const LocalOracle*>(&o))
		truth = local->network();

	std::optional<Architecture> arch = cfg.arch;
	if (!arch && truth)
		arch = truth->arch();
	if (!arch)
		throw std::invalid_argument("architecture unknown: pass --arch for a remote oracle");
	if (arch->input_dim() != o.input_dim() || arch->output_dim() != o.output_dim())
		throw ShapeError("architecture " + arch->to_string() + " does not match the oracle");
	rep.arch = arch->to_string();

	std::optional<SignatureFile> injected;
	if (!cfg.inject_signatures.empty())
		injected = load_signatures(cfg.inject_signatures);
	else if (cfg.inject_from_truth) {
		if (!truth)
			throw std::invalid_argument("signature injection from the victim needs a ground-truth network");
		injected = signature_file_from_network(*truth);
	}
	if (injected && !(injected->arch == *arch))
		throw ShapeError("signature file architecture " + injected->arch.to_string() + " differs from " +
		                 arch->to_string());

	const int r = arch->hidden_layers();
	std::vector<Layer> canon_truth;
	if (truth && truth->arch() == *arch)
		canon_truth = canonical_hidden_layers(*truth);
	std::vector<Layer> hidden;
	std::vector<int> always_off_out;   // last hidden layer neurons with zero output weight
	std::vector<int> prev_perm;
	std::vector<int> widths{arch->input_dim()};

	for (int i = 1; i <= r; ++i) {
		LayerReport lr;
		lr.layer = i;
		lr.width = arch->width(i);
		const auto before = o.ledger().snapshot();
		const auto tl = Clock::now();
		try {
			SignatureSet sigs = injected ? signatures_from_file(*injected, i)
			                             : recover_layer_signatures(o, hidden, i, lr.width, cfg, lr.notes);
			lr.recovered = sigs.size();
			if (sigs.size() == 0)
				throw std::runtime_error("no signatures recovered for layer " + std::to_string(i));
			if (sigs.size() < lr.width)
				rep.partial = true;

			LayerProblem p{hidden, &sigs, i, i == r};
			Method m = route(o, p, cfg, r);
			if (m == Method::LastLayer && sigs.size() != lr.width)
				m = Method::Wiggle;   // the selector system assumes every neuron is known
			std::optional<Vec> out_bias;
			std::vector<SignDecision> decisions;
			try {
				decisions = run_method(o, p, m, cfg, lr, out_bias);
			} catch (const std::exception& e) {
				if (m == Method::Wiggle)
					throw;
				lr.notes.push_back(std::string(method_name(m)) + " failed (" + e.what() + "); fell back to wiggle");
				m = Method::Wiggle;
				decisions = run_method(o, p, m, cfg, lr, out_bias);
			}
			lr.method = std::string(method_name(m));
			for (const auto& d : decisions) {
				if (d.sign == Sign::Undecided) {
					++lr.undecided;
					rep.partial = true;
				}
				if (d.always_off)
					++lr.always_off;
			}
			if (lr.undecided > 0)
				lr.notes.push_back(std::to_string(lr.undecided) + " neurons unrecoverable; committed with sign +1");
			Layer committed = commit_layer(sigs, decisions);
			if (!canon_truth.empty()) {
				const Pairing pr = pair_rows(canon_truth[static_cast<std::size_t>(i - 1)], committed, prev_perm);
				lr.signs_correct = pr.correct;
				prev_perm = pr.perm;
			}
			lr.signs_total = sigs.size();
			if (i == r) {
				for (int j = 0; j < sigs.size(); ++j)
					if (decisions[static_cast<std::size_t>(j)].always_off)
						always_off_out.push_back(j);
			}
			rep.decisions.insert(rep.decisions.end(), decisions.begin(), decisions.end());
			hidden.push_back(std::move(committed));
			widths.push_back(sigs.size());
		} catch (const TransportFailure&) {
			throw;
		} catch (const std::exception& e) {
			rep.partial = true;
			rep.errors.push_back("layer " + std::to_string(i) + ": " + e.what());
			lr.seconds = seconds_since(tl);
			lr.queries = ledger_diff(o.ledger().snapshot(), before);
			rep.layers.push_back(std::move(lr));
			break;
		}
		lr.seconds = seconds_since(tl);
		lr.queries = ledger_diff(o.ledger().snapshot(), before);
		rep.layers.push_back(std::move(lr));
	}

	if (static_cast<int>(hidden.size()) == r) {
		Layer out = recover_output_layer(o, hidden, cfg.seed);
		for (int j : always_off_out)
			out.weights.col(j).setZero();
		widths.push_back(o.output_dim());
		std::vector<Layer> layers = hidden;
		layers.push_back(std::move(out));
		NetworkInfo info;
		info.seed = cfg.seed;
		info.provenance = "extracted";
		result.hypothesis.emplace(Architecture(widths), std::move(layers), info);
		if (cfg.verify_samples > 0)
			rep.deviation = verify_equivalence(o, *result.hypothesis, cfg.verify_samples,
			                                   derive_seed(cfg.seed, {0x5eed}));
	}
	rep.queries = o.ledger().snapshot();
	rep.total_queries = o.ledger().total();
	rep.seconds = seconds_since(t0);
	return result;
}

// -------------------------------------------------------------------- bench

std::pair<double, double> fit_power_law(const std::vector<double>& x, const std::vector<double>& y)
{
	if (x.size() != y.size() || x.size() < 2)
		throw std::invalid_argument("power-law fit needs at least two points");
	const auto n = static_cast<Eigen::Index>(x.size());
	Mat a(n, 2);
	Vec b(n);
	for (Eigen::Index k = 0; k < n; ++k) {
		a(k, 0) = std::log(x[static_cast<std::size_t>(k)]);
		a(k, 1) = 1.0;
		b(k) = std::log(y[static_cast<std::size_t>(k)]);
	}
	const Vec sol = a.colPivHouseholderQr().solve(b);
	return {sol(0), std::exp(sol(1))};
}

BenchResult bench_scaling(const BenchConfig& cfg)
{
	BenchResult res;
	std::vector<double> xs, ys;
	for (int d0 : cfg.input_dims) {
		std::vector<int> dims{d0};
		for (int k = 0; k < cfg.depth; ++k)
			dims.push_back(cfg.width);
		dims.push_back(cfg.outputs);
		const Network net = generate_unitary_balanced(Architecture(dims), cfg.seed);
		LocalOracle o(net);
		const SignatureSet sigs = signatures_from_layer(net.layer(cfg.layer), cfg.layer);
		const auto prefix = net.prefix(cfg.layer - 1);
		LayerProblem p{prefix, &sigs, cfg.layer, cfg.layer == cfg.depth};
		WiggleOptions wo;
		wo.samples = cfg.samples;
		wo.reanalyze = false;
		wo.seed = cfg.seed;
		wo.neurons.resize(static_cast<std::size_t>(std::min(cfg.neurons, cfg.width)));
		std::iota(wo.neurons.begin(), wo.neurons.end(), 0);
		const auto t0 = Clock::now();
		recover_signs_wiggle(o, p, wo);
		BenchPoint pt;
		pt.d0 = d0;
		pt.neurons = static_cast<int>(wo.neurons.size());
		pt.seconds_per_neuron = seconds_since(t0) / pt.neurons;
		pt.queries = o.ledger().total();
		res.points.push_back(pt);
		xs.push_back(d0);
		ys.push_back(pt.seconds_per_neuron);
	}
	if (xs.size() >= 2)
		std::tie(res.exponent, res.prefactor) = fit_power_law(xs, ys);
	return res;
}

// ------------------------------------------------------------------ outputs

std::string neuron_label(NeuronId id)
{
	return "L" + std::to_string(id.layer) + ":" + std::to_string(id.index);
}

namespace {

std::ofstream open_out(const std::string& path)
{
	std::ofstream f(path);
	if (!f)
		throw std::runtime_error("cannot write " + path);
	f.precision(17);
	return f;
}

std::string sign_text(Sign s)
{
	return s == Sign::Plus ? "+1" : s == Sign::Minus ? "-1" : "0";
}

}  // namespace

void write_decisions_csv(const std::string& path, const std::vector<SignDecision>& decisions)
{
	auto f = open_out(path);
	f << "neuron_id,method,s_minus,s_plus,alpha,sign,t_crit,t_wiggle,t_total\n";
	for (const auto& d : decisions)
		f << neuron_label(d.neuron) << ',' << method_name(d.method) << ',' << d.s_minus << ',' << d.s_plus << ','
		  << d.alpha << ',' << sign_text(d.sign) << ',' << d.t_crit << ',' << d.t_wiggle << ',' << d.t_total << '\n';
}

void write_report_json(const std::string& path, const ExtractionReport& report)
{
	using nlohmann::json;
	json j;
	j["arch"] = report.arch;
	j["status"] = report.partial ? "partial" : "complete";
	j["seconds"] = report.seconds;
	j["queries"] = report.queries;
	j["total_queries"] = report.total_queries;
	j["errors"] = report.errors;
	j["decision_log"] = report.decision_log;
	json layers = json::array();
	for (const auto& l : report.layers) {
		json x;
		x["layer"] = l.layer;
		x["width"] = l.width;
		x["recovered"] = l.recovered;
		x["method"] = l.method;
		x["notes"] = l.notes;
		x["signs_correct"] = l.signs_correct >= 0 ? json(l.signs_correct) : json(nullptr);
		x["signs_total"] = l.signs_total;
		x["undecided"] = l.undecided;
		x["always_off"] = l.always_off;
		x["queries"] = l.queries;
		x["seconds"] = l.seconds;
		x["alpha0"] = l.alpha0 ? json(*l.alpha0) : json(nullptr);
		layers.push_back(std::move(x));
	}
	j["layers"] = std::move(layers);
	if (report.deviation) {
		const auto& d = *report.deviation;
		j["deviation"] = {{"samples_per_distribution", d.samples}, {"max_normal", d.max_normal},
		                  {"mean_normal", d.mean_normal},          {"max_uniform", d.max_uniform},
		                  {"mean_uniform", d.mean_uniform},        {"max", d.max()}};
	}
	auto f = open_out(path);
	f << j.dump(2) << '\n';
}

void write_extract_plotdata(const std::string& path, const ExtractionReport& report)
{
	auto f = open_out(path);
	f << "series,layer,x,y\n";
	for (const auto& d : report.decisions)
		f << "alpha," << d.neuron.layer << ',' << d.neuron.index << ',' << d.alpha << '\n';
	for (const auto& l : report.layers) {
		std::uint64_t total = 0;
		for (const auto& [k, v] : l.queries)
			total += v;
		f << "queries," << l.layer << ',' << l.width << ',' << total << '\n';
		f << "seconds," << l.layer << ',' << l.width << ',' << l.seconds << '\n';
	}
}

void write_bench_csv(const std::string& path, const BenchResult& result)
{
	auto f = open_out(path);
	f << "d0,seconds_per_neuron,fit,neurons,queries\n";
	for (const auto& p : result.points)
		f << p.d0 << ',' << p.seconds_per_neuron << ',' << result.prefactor * std::pow(p.d0, result.exponent) << ','
		  << p.neurons << ',' << p.queries << '\n';
}

}  // namespace nnx
