#pragma once

#include "nnx/linalg.hpp"

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nnx {

class ShapeError : public std::invalid_argument
{
public:
	using std::invalid_argument::invalid_argument;
};

/// Layer widths [d0, d1, ..., d_{r+1}]; layers 1..r are hidden ReLU layers,
/// layer r+1 is the affine output layer.
class Architecture
{
public:
	Architecture() = default;
	explicit Architecture(std::vector<int> dims);

	/// Accepts "784,128,1", "784-128-1" and the exponent shorthand
	/// "100-200^3-10" / "100,200^3,10".
	static Architecture parse(std::string_view text);

	const std::vector<int>& dims() const { return dims_; }
	int input_dim() const { return dims_.front(); }
	int output_dim() const { return dims_.back(); }
	int hidden_layers() const { return static_cast<int>(dims_.size()) - 2; }
	int width(int layer) const { return dims_.at(static_cast<std::size_t>(layer)); }
	int total_neurons() const;
	std::string to_string() const;

	bool operator==(const Architecture&) const = default;

private:
	std::vector<int> dims_;
};

struct NeuronId
{
	int layer = 1;   // 1-based hidden layer index
	int index = 0;   // 0-based within the layer
	auto operator<=>(const NeuronId&) const = default;
};

enum class NeuronState { Active, Inactive, Critical };

struct Layer
{
	RowMat weights;   // d_i x d_{i-1}
	Vec bias;         // d_i
};

/// weights * x + bias with a fixed left-to-right summation order, so that
/// every evaluation path in the library produces bit-identical values.
Vec affine(const Layer& layer, const Vec& x);
void relu_inplace(Vec& v);

struct NetworkInfo
{
	std::optional<std::uint64_t> seed;
	std::string provenance;
};

class Network
{
public:
	Network() = default;
	Network(Architecture arch, std::vector<Layer> layers, NetworkInfo info = {});

	const Architecture& arch() const { return arch_; }
	const std::vector<Layer>& layers() const { return layers_; }
	/// Layer i for i in 1..r+1.
	const Layer& layer(int i) const { return layers_.at(static_cast<std::size_t>(i - 1)); }
	std::span<const Layer> hidden() const { return {layers_.data(), layers_.size() - 1}; }
	std::span<const Layer> prefix(int upto) const { return {layers_.data(), static_cast<std::size_t>(upto)}; }
	const NetworkInfo& info() const { return info_; }
	NetworkInfo& info() { return info_; }

private:
	Architecture arch_;
	std::vector<Layer> layers_;
	NetworkInfo info_;
};

/// Relative threshold under which a pre-activation counts as zero. The scale
/// is |w|*|input| + |b| of that neuron.
inline constexpr double kCritTol = 1e-8;
inline constexpr double kRankTol = 1e-7;

class CriticalAtAnchor : public std::runtime_error
{
public:
	CriticalAtAnchor(NeuronId id, double value);
	NeuronId neuron;
	double value;
};

Vec evaluate(const Network& net, const Vec& x);
double neuron_value(const Network& net, NeuronId id, const Vec& x);
NeuronState neuron_state(const Network& net, NeuronId id, const Vec& x);

/// Instrumented pass: pre-activations of every hidden layer and the output.
struct ForwardTrace
{
	std::vector<Vec> pre;
	Vec output;
};
ForwardTrace trace(const Network& net, const Vec& x);

// --- operations on a stack of hidden layers --------------------------------
//
// The attack works with partially known networks (an extracted prefix), so
// the collapse machinery is written against a span of hidden layers rather
// than a full Network.

Vec forward_hidden(std::span<const Layer> layers, const Vec& x);

/// Value and directional derivative of the last layer of the stack along u.
struct Tangent
{
	Vec value;
	Vec slope;
};
Tangent forward_tangent(std::span<const Layer> layers, const Vec& x, const Vec& u);

/// Per-layer 0/1 activity pattern of the stack at x; throws CriticalAtAnchor
/// when a neuron sits within the critical tolerance (crit_tol = 0 disables
/// the check, exact zeros then count as inactive).
std::vector<std::vector<std::uint8_t>> activation_masks(std::span<const Layer> layers, const Vec& x,
                                                        double crit_tol = kCritTol);

struct CollapsedAffine
{
	Mat gamma;
	Vec beta;
	std::vector<std::vector<std::uint8_t>> masks;
	Vec anchor;
};

CollapsedAffine collapse(std::span<const Layer> layers, const Vec& x, double crit_tol = kCritTol);
CollapsedAffine collapse_prefix(const Network& net, int upto_layer, const Vec& x);

/// Collapsed map from the post-activation of layer `from_layer` (0 = input)
/// to the network output, linearised with the activity pattern at x.
CollapsedAffine collapse_suffix(const Network& net, int from_layer, const Vec& x);

/// Returns the transpose product gamma^T * r without forming gamma, using the
/// activity pattern at x (a backward pass).
Vec pullback(std::span<const Layer> layers, const Vec& x, const Vec& r);

struct ControlSpace
{
	Mat basis;
	int degrees = 0;
	Vec singular_values;
};

ControlSpace space_of_control(std::span<const Layer> prefix, int input_dim, const Vec& x);
ControlSpace space_of_control(const Network& net, int layer, const Vec& x);

/// Ranks of F^{(i)} at many anchors. Works on active-set restricted
/// products M_i = A_i[act_i, act_{i-1}] ... A_2[act_2, act_1], whose rank equals
/// rank(F^{(i)}) whenever the active first-layer rows are independent; that
/// condition is checked on a cached Gram matrix and the direct route is used
/// otherwise.
class RankProfiler
{
public:
	explicit RankProfiler(const Network& net, double rel_tol = kRankTol);
	/// rank of F^{(i)} at x for every hidden layer i = 1..r (entry i-1).
	std::vector<int> operator()(const Vec& x) const;

private:
	const Network* net_;
	double tol_;
	Mat first_gram_;
};

std::vector<int> rank_profile(const Network& net, const Vec& x, double rel_tol = kRankTol);

Network generate_unitary_balanced(const Architecture& arch, std::uint64_t seed, int calibration_samples = 10000);

}  // namespace nnx
