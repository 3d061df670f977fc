// nnx: generate victims, serve them as oracles, and run the extraction attack.

#include "nnx/nnx_format.hpp"
#include "nnx/pipeline.hpp"
#include "nnx/wire.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <thread>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitPartial = 2;
constexpr int kExitUnreachable = 3;

std::atomic<bool> g_stop{false};

void on_signal(int)
{
	g_stop = true;
}

int run_server(const std::string& file, int port, const std::string& host)
{
	nnx::OracleServer server(nnx::load_network(file), port, host);
	server.start();
	std::printf("serving %s on tcp://%s:%d\n", file.c_str(), host.c_str(), server.port());
	std::fflush(stdout);
	std::signal(SIGINT, on_signal);
	std::signal(SIGTERM, on_signal);
	while (!g_stop)
		std::this_thread::sleep_for(std::chrono::milliseconds(100));
	server.stop();
	std::printf("served %llu queries\n", static_cast<unsigned long long>(server.ledger().total()));
	return kExitOk;
}

std::map<int, nnx::Method> parse_overrides(const std::vector<std::string>& items)
{
	std::map<int, nnx::Method> out;
	for (const auto& item : items) {
		const auto eq = item.find('=');
		if (eq == std::string::npos)
			throw CLI::ValidationError("--method", "expected LAYER=METHOD, got " + item);
		const auto m = nnx::parse_method(item.substr(eq + 1));
		if (!m)
			throw CLI::ValidationError("--method", "unknown method " + item.substr(eq + 1));
		out[std::stoi(item.substr(0, eq))] = *m;
	}
	return out;
}

void print_report(const nnx::ExtractionReport& rep)
{
	std::printf("architecture %s: %s in %.2f s, %llu queries\n", rep.arch.c_str(),
	            rep.partial ? "partial" : "complete", rep.seconds, static_cast<unsigned long long>(rep.total_queries));
	for (const auto& l : rep.layers) {
		std::printf("  layer %d (%s): %d/%d signatures", l.layer, l.method.c_str(), l.recovered, l.width);
		if (l.signs_correct >= 0)
			std::printf(", signs %d/%d correct", l.signs_correct, l.signs_total);
		std::printf(", %.2f s\n", l.seconds);
		for (const auto& n : l.notes)
			std::printf("    %s\n", n.c_str());
	}
	for (const auto& [phase, n] : rep.queries)
		std::printf("  %-20s %llu\n", phase.c_str(), static_cast<unsigned long long>(n));
	if (rep.deviation)
		std::printf("  max deviation %.3e (normal %.3e, uniform %.3e)\n", rep.deviation->max(),
		            rep.deviation->max_normal, rep.deviation->max_uniform);
	for (const auto& e : rep.errors)
		std::printf("  error: %s\n", e.c_str());
}

}  // namespace

int main(int argc, char** argv)
{
	CLI::App app{"Black-box extraction of ReLU networks with sign recovery"};
	app.set_config("--config", "", "key=value configuration file");
	app.require_subcommand(0, 1);

	std::string serve_file;
	int port = 0;
	std::string host = "127.0.0.1";
	app.add_option("--serve", serve_file, "serve this .nnx file as an oracle");
	app.add_option("--port", port, "TCP port for --serve (0: ephemeral)");
	app.add_option("--host", host, "bind address for --serve");

	// generate
	auto* gen = app.add_subcommand("generate", "write a unitary balanced network");
	std::string gen_arch, gen_out, gen_sigs;
	std::uint64_t gen_seed = 1;
	int gen_calib = 10000;
	gen->add_option("--arch", gen_arch, "layer widths, e.g. 784-128-1 or 100-200^3-10")->required();
	gen->add_option("--seed", gen_seed);
	gen->add_option("--calibration", gen_calib, "samples used to balance the biases");
	gen->add_option("--out", gen_out, "output .nnx")->required();
	gen->add_option("--signatures-out", gen_sigs, "also write the normalized signatures");

	// serve
	auto* srv = app.add_subcommand("serve", "answer queries over TCP");
	srv->add_option("file", serve_file, "victim .nnx")->required();
	srv->add_option("--port", port);
	srv->add_option("--host", host);

	// extract
	auto* ext = app.add_subcommand("extract", "full layer-by-layer extraction");
	nnx::ExtractionConfig cfg;
	std::string arch_text, out_path = "hypothesis.nnx", report_path = "report.json", decisions_path = "decisions.csv",
	                       plot_path = "plotdata.csv";
	std::vector<std::string> overrides;
	auto add_common = [&](CLI::App* sc) {
		sc->add_option("--oracle", cfg.oracle, "tcp://host:port or file://victim.nnx (default: $NNX_ORACLE)");
		sc->add_option("--samples", cfg.samples, "wiggle votes per neuron");
		sc->add_option("--eps-rel", cfg.eps_rel, "wiggle norm relative to the layer input");
		sc->add_option("--tau-zero", cfg.tau_zero);
		sc->add_option("--tau-tie", cfg.tie_tol);
		sc->add_option("--tau-binary", cfg.tau_binary);
		sc->add_option("--reanalysis-fraction", cfg.reanalysis_fraction);
		sc->add_option("--max-rounds", cfg.max_rounds);
		sc->add_option("--seed", cfg.seed);
		sc->add_option("--workers", cfg.workers);
		sc->add_option("--decisions", decisions_path, "decision log CSV");
		sc->add_option("--report", report_path, "report JSON");
	};
	add_common(ext);
	ext->add_option("--arch", arch_text, "architecture (required for tcp oracles)");
	ext->add_option("--truth", cfg.truth, "victim .nnx used only to score the result");
	ext->add_option("--inject-signatures", cfg.inject_signatures, "signature file (skip signature recovery)");
	ext->add_flag("--inject-from-truth", cfg.inject_from_truth, "take signatures from --truth");
	ext->add_option("--method", overrides, "per-layer override LAYER=freeze|soe|wiggle|last-layer");
	ext->add_option("--tau-sig", cfg.sig_tol);
	ext->add_option("--crit-eps", cfg.crit_eps);
	ext->add_option("--signature-eps", cfg.signature_eps);
	ext->add_option("--segments-per-neuron", cfg.segments_per_neuron);
	ext->add_option("--verify-samples", cfg.verify_samples);
	ext->add_option("--out", out_path, "hypothesis .nnx");
	ext->add_option("--plotdata", plot_path);

	// signs
	auto* sgn = app.add_subcommand("signs", "sign recovery of one layer with known signatures");
	add_common(sgn);
	std::string victim;
	int layer = 1;
	std::string method_text;
	sgn->add_option("--victim", victim, "victim .nnx providing signatures and lower layers")->required();
	sgn->add_option("--layer", layer)->required();
	sgn->add_option("--method", method_text, "freeze|soe|wiggle|last-layer (default: routed)");

	// verify
	auto* ver = app.add_subcommand("verify", "compare a hypothesis with the oracle");
	std::string hyp_path;
	int verify_m = 10000;
	ver->add_option("--oracle", cfg.oracle);
	ver->add_option("--hypothesis", hyp_path)->required();
	ver->add_option("--samples", verify_m);
	ver->add_option("--seed", cfg.seed);

	// bench
	auto* bench = app.add_subcommand("bench", "wiggle runtime scaling in the input dimension");
	nnx::BenchConfig bc;
	std::string bench_csv = "bench.csv";
	bench->add_option("--dims", bc.input_dims)->delimiter(',');
	bench->add_option("--width", bc.width);
	bench->add_option("--depth", bc.depth);
	bench->add_option("--layer", bc.layer);
	bench->add_option("--neurons", bc.neurons);
	bench->add_option("--samples", bc.samples);
	bench->add_option("--seed", bc.seed);
	bench->add_option("--csv", bench_csv);
	bench->add_option("--plotdata", plot_path);

	try {
		app.parse(argc, argv);
	} catch (const CLI::ParseError& e) {
		return app.exit(e) == 0 ? kExitOk : kExitFailure;
	}

	try {
		if (*gen) {
			const nnx::Network net = nnx::generate_unitary_balanced(nnx::Architecture::parse(gen_arch), gen_seed, gen_calib);
			nnx::save_network(gen_out, net);
			if (!gen_sigs.empty())
				nnx::save_signatures(gen_sigs, nnx::signature_file_from_network(net));
			std::printf("wrote %s (%s)\n", gen_out.c_str(), net.arch().to_string().c_str());
			return kExitOk;
		}
		if (*srv || (!serve_file.empty() && app.get_subcommands().empty()))
			return run_server(serve_file, port, host);
		if (*bench) {
			const nnx::BenchResult res = nnx::bench_scaling(bc);
			nnx::write_bench_csv(bench_csv, res);
			nnx::write_bench_csv(plot_path, res);
			for (const auto& p : res.points)
				std::printf("d0=%d  %.4f s/neuron\n", p.d0, p.seconds_per_neuron);
			std::printf("fitted exponent %.3f\n", res.exponent);
			return kExitOk;
		}
		if (*ext) {
			if (!arch_text.empty())
				cfg.arch = nnx::Architecture::parse(arch_text);
			cfg.methods = parse_overrides(overrides);
			auto oracle = nnx::open_oracle(cfg.oracle);
			nnx::ExtractionResult res = nnx::extract(*oracle, cfg);
			res.report.decision_log = decisions_path;
			if (res.hypothesis)
				nnx::save_network(out_path, *res.hypothesis);
			nnx::write_decisions_csv(decisions_path, res.report.decisions);
			nnx::write_report_json(report_path, res.report);
			nnx::write_extract_plotdata(plot_path, res.report);
			print_report(res.report);
			return res.report.partial || !res.hypothesis ? kExitPartial : kExitOk;
		}
		if (*sgn) {
			const nnx::Network net = nnx::load_network(victim);
			if (layer < 1 || layer > net.arch().hidden_layers())
				throw std::invalid_argument("layer out of range");
			auto oracle = nnx::open_oracle(cfg.oracle.empty() && !std::getenv("NNX_ORACLE") ? "file://" + victim : cfg.oracle);
			const nnx::SignatureSet sigs = nnx::signatures_from_layer(net.layer(layer), layer);
			const bool last = layer == net.arch().hidden_layers();
			nnx::LayerProblem p{net.prefix(layer - 1), &sigs, layer, last};
			nnx::ExtractionConfig c = cfg;
			c.truth = victim;
			nnx::Method m = last ? nnx::Method::LastLayer : nnx::Method::Wiggle;
			if (!method_text.empty()) {
				const auto pm = nnx::parse_method(method_text);
				if (!pm)
					throw std::invalid_argument("unknown method " + method_text);
				m = *pm;
			}
			std::vector<nnx::SignDecision> decisions;
			std::mt19937_64 rng(nnx::derive_seed(cfg.seed, {static_cast<std::uint64_t>(layer), 0xa4c}));
			switch (m) {
			case nnx::Method::Soe: {
				nnx::SoeOptions so;
				so.tau_zero = cfg.tau_zero;
				so.seed = cfg.seed;
				decisions = nnx::recover_signs_soe(*oracle, p, nnx::pick_anchor(p, net.arch().input_dim(), rng), so);
				break;
			}
			case nnx::Method::Freeze:
				decisions = nnx::recover_signs_freeze(*oracle, p, nnx::pick_anchor(p, net.arch().input_dim(), rng));
				break;
			case nnx::Method::LastLayer: {
				nnx::LastLayerOptions lo;
				lo.tau_binary = cfg.tau_binary;
				lo.seed = cfg.seed;
				decisions = nnx::recover_signs_last_layer(*oracle, p, lo).decisions;
				break;
			}
			case nnx::Method::Wiggle: {
				nnx::WiggleOptions wo;
				wo.samples = cfg.samples;
				wo.eps_rel = cfg.eps_rel;
				wo.tie_tol = cfg.tie_tol;
				wo.reanalysis_fraction = cfg.reanalysis_fraction;
				wo.max_rounds = cfg.max_rounds;
				wo.seed = cfg.seed;
				wo.workers = cfg.workers;
				decisions = nnx::recover_signs_wiggle(*oracle, p, wo).decisions;
				break;
			}
			}
			// injected signatures are the victim rows divided by their pivots
			int correct = 0, undecided = 0;
			for (int j = 0; j < sigs.size(); ++j) {
				const auto& d = decisions[static_cast<std::size_t>(j)];
				const double truth_sign = sigs.rows[static_cast<std::size_t>(j)].coords.dot(net.layer(layer).weights.row(j)) > 0 ? 1 : -1;
				if (d.sign == nnx::Sign::Undecided)
					++undecided;
				else if (static_cast<int>(d.sign) == truth_sign)
					++correct;
			}
			nnx::ExtractionReport rep;
			rep.arch = net.arch().to_string();
			nnx::LayerReport lr;
			lr.layer = layer;
			lr.width = sigs.size();
			lr.recovered = sigs.size();
			lr.method = std::string(nnx::method_name(m));
			lr.signs_correct = correct;
			lr.signs_total = sigs.size();
			lr.undecided = undecided;
			lr.queries = oracle->ledger().snapshot();
			rep.layers.push_back(lr);
			rep.decisions = decisions;
			rep.queries = oracle->ledger().snapshot();
			rep.total_queries = oracle->ledger().total();
			rep.partial = undecided > 0;
			rep.decision_log = decisions_path;
			nnx::write_decisions_csv(decisions_path, decisions);
			nnx::write_report_json(report_path, rep);
			print_report(rep);
			return undecided > 0 ? kExitPartial : kExitOk;
		}
		if (*ver) {
			auto oracle = nnx::open_oracle(cfg.oracle);
			const nnx::Network hyp = nnx::load_network(hyp_path);
			const nnx::DeviationStats s = nnx::verify_equivalence(*oracle, hyp, verify_m, cfg.seed);
			std::printf("max deviation %.6e  mean %.6e (normal)  max %.6e  mean %.6e (uniform)\n", s.max_normal,
			            s.mean_normal, s.max_uniform, s.mean_uniform);
			return kExitOk;
		}
		std::cout << app.help();
		return kExitFailure;
	} catch (const nnx::TransportFailure& e) {
		std::fprintf(stderr, "oracle unreachable: %s\n", e.what());
		return kExitUnreachable;
	} catch (const nnx::HandshakeError& e) {
		std::fprintf(stderr, "oracle unreachable: %s\n", e.what());
		return kExitUnreachable;
	} catch (const std::exception& e) {
		std::fprintf(stderr, "error: %s\n", e.what());
		return kExitFailure;
	}
}
