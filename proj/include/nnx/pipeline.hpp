#pragma once

#include "nnx/sign_recovery.hpp"
#include "nnx/signatures.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace nnx {

struct ExtractionConfig
{
	std::string oracle;                       // tcp://host:port or file://victim.nnx; empty: NNX_ORACLE
	std::optional<Architecture> arch;         // required for remote oracles
	std::string truth;                        // ground-truth victim for sign accuracy (optional)
	std::string inject_signatures;            // signature .nnx file (assumption mode)
	bool inject_from_truth = false;           // take signatures from the ground-truth victim
	std::map<int, Method> methods;            // per-layer overrides
	int samples = 200;                        // wiggle votes per neuron
	double eps_rel = 1e-4;                    // wiggle norm relative to |F_hat(x*)|
	double tau_zero = kZeroTol;
	double tie_tol = 1e-9;
	double tau_binary = 0.2;
	double sig_tol = kSigTol;
	double crit_eps = 1e-6;                   // search step relative to the probe length
	double signature_eps = 1e-3;              // radius of the gradient probes around x*
	double reanalysis_fraction = 0.1;
	int max_rounds = 3;
	int segments_per_neuron = 8;              // probe budget: factor * d_i segments per layer
	int verify_samples = 10000;
	std::uint64_t seed = 1;
	int workers = 1;

	void validate() const;
};

struct DeviationStats
{
	double max_normal = 0.0;
	double mean_normal = 0.0;
	double max_uniform = 0.0;
	double mean_uniform = 0.0;
	int samples = 0;

	double max() const { return std::max(max_normal, max_uniform); }
};

struct LayerReport
{
	int layer = 0;
	int width = 0;            // expected neurons
	int recovered = 0;        // signatures obtained
	std::string method;
	std::vector<std::string> notes;
	int signs_correct = -1;   // -1 when no ground truth
	int signs_total = 0;
	int undecided = 0;
	int always_off = 0;
	std::map<std::string, std::uint64_t> queries;
	double seconds = 0.0;
	std::optional<double> alpha0;
};

struct ExtractionReport
{
	std::string arch;
	std::vector<LayerReport> layers;
	std::vector<SignDecision> decisions;
	std::map<std::string, std::uint64_t> queries;   // per phase, whole run
	std::uint64_t total_queries = 0;
	std::optional<DeviationStats> deviation;
	bool partial = false;
	std::vector<std::string> errors;
	double seconds = 0.0;
	std::string decision_log;
};

struct ExtractionResult
{
	std::optional<Network> hypothesis;   // absent when no layer could be committed
	ExtractionReport report;
};

/// Full layer-by-layer attack against `o`. The oracle ledger is not reset.
ExtractionResult extract(Oracle& o, const ExtractionConfig& cfg);

/// Signatures of one layer recovered from probe segments (no injection).
SignatureSet recover_layer_signatures(Oracle& o, std::span<const Layer> prefix, int layer, int width,
                                      const ExtractionConfig& cfg, std::vector<std::string>& notes);

/// Output layer by least squares of f against the hypothesis features.
Layer recover_output_layer(Oracle& o, std::span<const Layer> hidden, std::uint64_t seed);

/// Deviation |f - f_hat|_inf / (1 + |f|_inf) over `m` standard-normal and `m`
/// uniform [0, 1]^d0 inputs (charged to the verify phase).
DeviationStats verify_equivalence(Oracle& o, const Network& hypothesis, int m, std::uint64_t seed);

/// Sign of each hypothesis neuron compared with the victim; neurons are
/// paired by the direction of their rows.
struct SignAccuracy
{
	int correct = 0;
	int total = 0;
};
SignAccuracy sign_accuracy(const Layer& truth, const Layer& hypothesis);

struct BenchConfig
{
	std::vector<int> input_dims{256, 512, 1024};
	int width = 256;
	int depth = 8;
	int outputs = 10;
	int layer = 3;
	int neurons = 4;
	int samples = 10;
	std::uint64_t seed = 1;
};

struct BenchPoint
{
	int d0 = 0;
	double seconds_per_neuron = 0.0;
	std::uint64_t queries = 0;
	int neurons = 0;
};

struct BenchResult
{
	std::vector<BenchPoint> points;
	double exponent = 0.0;
	double prefactor = 0.0;   // t = prefactor * d0^exponent
};

BenchResult bench_scaling(const BenchConfig& cfg);

/// Least-squares slope of log y against log x.
std::pair<double, double> fit_power_law(const std::vector<double>& x, const std::vector<double>& y);

std::string neuron_label(NeuronId id);
void write_decisions_csv(const std::string& path, const std::vector<SignDecision>& decisions);
void write_report_json(const std::string& path, const ExtractionReport& report);
void write_extract_plotdata(const std::string& path, const ExtractionReport& report);
void write_bench_csv(const std::string& path, const BenchResult& result);

}  // namespace nnx
