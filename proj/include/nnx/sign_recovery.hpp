#pragma once

#include "nnx/critical_points.hpp"
#include "nnx/signatures.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace nnx {

enum class Sign : int { Minus = -1, Undecided = 0, Plus = 1 };
enum class Method { Freeze, Soe, Wiggle, LastLayer };

std::string_view method_name(Method m);
std::optional<Method> parse_method(std::string_view s);

struct SignDecision
{
	NeuronId neuron;
	Method method = Method::Wiggle;
	int s_minus = 0;
	int s_plus = 0;
	double alpha = 0.0;
	Sign sign = Sign::Undecided;
	bool low_confidence = false;   // alpha <= alpha_0 in the first pass
	bool always_off = false;
	int rounds = 0;                // re-analysis rounds used
	int discarded = 0;             // samples dropped (ties, nonlinear, no projection)
	double t_crit = 0.0;           // seconds in critical-point search
	double t_wiggle = 0.0;         // seconds computing and voting wiggles
	double t_total = 0.0;

	int samples() const { return s_minus + s_plus; }
};

/// What the attacker knows when recovering the signs of layer `layer`: the
/// committed hypothesis layers below it and the layer's signatures.
struct LayerProblem
{
	std::span<const Layer> prefix;
	const SignatureSet* sigs = nullptr;
	int layer = 1;
	bool last_hidden = false;
};

class InsufficientRank : public std::runtime_error
{
public:
	using std::runtime_error::runtime_error;
};
class NumericallyAmbiguous : public std::runtime_error
{
public:
	using std::runtime_error::runtime_error;
};
class ZeroProjection : public std::runtime_error
{
public:
	using std::runtime_error::runtime_error;
};
class TieWithinTolerance : public std::runtime_error
{
public:
	using std::runtime_error::runtime_error;
};
class NonlinearWiggle : public std::runtime_error
{
public:
	using std::runtime_error::runtime_error;
};
class NonBinarySolution : public std::runtime_error
{
public:
	using std::runtime_error::runtime_error;
};
class RankDeficientSystem : public std::runtime_error
{
public:
	using std::runtime_error::runtime_error;
};
class SecondDiffBelowNoise : public std::runtime_error
{
public:
	using std::runtime_error::runtime_error;
};

/// Hypothesis pre-activations of the layer's neurons at x, using the
/// signatures as rows.
Vec layer_values(const LayerProblem& p, const Vec& x);

/// Random input whose hypothesis pre-activations of layer i stay well away
/// from zero (best of `candidates` standard-normal draws).
Vec pick_anchor(const LayerProblem& p, int input_dim, std::mt19937_64& rng, int candidates = 32);

// ---- SOE -----------------------------------------------------------------

inline constexpr double kZeroTol = 1e-6;

struct SoeSolution
{
	Mat c;                     // d_out x d_i
	std::vector<bool> zero;    // column j classified as vanishing
	std::vector<bool> ambiguous;
};

/// Solves c * y = z for c, with y the d_i x d_i matrix whose columns are y_k
/// and z the d_out x d_i matrix of output differences.
SoeSolution solve_soe_system(const Mat& y, const Mat& z, double tau_zero = kZeroTol);

struct SoeOptions
{
	double tau_zero = kZeroTol;
	std::uint64_t seed = 1;
};

std::vector<SignDecision> recover_signs_soe(Oracle& o, const LayerProblem& p, const Vec& anchor,
                                            const SoeOptions& opt = {});

std::vector<SignDecision> recover_signs_freeze(Oracle& o, const LayerProblem& p, const Vec& anchor);

// ---- Neuron wiggle -------------------------------------------------------

struct Wiggle
{
	Vec delta;         // change of the layer input, F_hat(x*+Delta) - F_hat(x*)
	Vec input_delta;   // Delta
	int target = 0;
	double epsilon = 0.0;
};

/// delta = projection of the target signature onto the space of control at
/// x*, scaled to norm eps_rel * |F_hat(x*)|, and its min-norm preimage.
/// With a non-empty `suppress`, the projection is replaced by a regularized
/// least-squares direction that also keeps those neurons' pre-activations
/// (nearly) still.
Wiggle compute_wiggle(std::span<const Layer> prefix, const Mat& signatures, int target, const Vec& x_star,
                      double eps_rel = 1e-4, std::span<const int> suppress = {}, double mu = 1e-3);

struct VoteOutcome
{
	int vote = 0;
	double left = 0.0;
	double right = 0.0;
	int halvings = 0;
};

VoteOutcome wiggle_vote(Oracle& o, const Wiggle& w, const Vec& x_star, double tie_tol = 1e-9, int max_halvings = 4);

struct WiggleOptions
{
	int samples = 200;
	double reanalysis_fraction = 0.1;
	int max_rounds = 3;
	double eps_rel = 1e-4;
	double tie_tol = 1e-9;
	double suppress_mu = 1e-3;
	bool reanalyze = true;
	bool use_all_outputs = true;   // false: compare output 0 only
	std::uint64_t seed = 1;
	int workers = 1;
	/// Only these neurons (all when empty).
	std::vector<int> neurons;
};

struct WiggleReport
{
	std::vector<SignDecision> decisions;   // final, one per requested neuron
	std::vector<SignDecision> first_pass;
	double alpha0 = 0.5;
};

WiggleReport recover_signs_wiggle(Oracle& o, const LayerProblem& p, const WiggleOptions& opt = {});

// ---- Last hidden layer ---------------------------------------------------

/// c_k per output from the second difference across neuron k's hinge.
Vec recover_output_coefficient(Oracle& o, const LayerProblem& p, int k, const CriticalPoint& cp);

struct LastLayerOptions
{
	double tau_binary = 0.2;
	std::uint64_t seed = 1;
};

struct LastLayerResult
{
	std::vector<SignDecision> decisions;
	Vec output_bias;
	Mat coefficients;   // d_out x d_r
};

LastLayerResult recover_signs_last_layer(Oracle& o, const LayerProblem& p, const LastLayerOptions& opt = {});

}  // namespace nnx
