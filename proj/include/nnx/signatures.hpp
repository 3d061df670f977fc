#pragma once

#include "nnx/critical_points.hpp"
#include "nnx/nnx_format.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace nnx {

/// A weight row known up to a signed scale: coords[pivot] == 1. The bias is
/// divided by the same pivot value, so sign * (coords, bias) is a positive
/// multiple of the true (row, bias) for one of the two signs.
struct Signature
{
	Vec coords;
	int pivot = 0;
	std::vector<std::uint8_t> support;   // 1 where the coordinate was recovered
	std::optional<double> bias;
	std::optional<int> layer_guess;

	bool full() const;
	int support_size() const;
	/// Pivot = largest-magnitude coordinate of row.
	static Signature from_row(const Vec& row, std::optional<double> bias = std::nullopt);
	void renormalize();
};

class ZeroDenominator : public std::runtime_error
{
public:
	using std::runtime_error::runtime_error;
};

class NotLayer1 : public std::runtime_error
{
public:
	using std::runtime_error::runtime_error;
};

class RankDeficient : public std::runtime_error
{
public:
	using std::runtime_error::runtime_error;
};

inline constexpr double kSigTol = 1e-4;

/// Signatures for every neuron of one layer.
struct SignatureSet
{
	int layer = 1;
	std::vector<Signature> rows;

	int size() const { return static_cast<int>(rows.size()); }
	Mat matrix() const;   // size x d_{i-1}
	Vec biases() const;   // missing biases read as 0
};

/// Injected signatures (assumption mode): layer `layer` of a known network
/// normalized by each row's pivot.
SignatureSet signatures_from_layer(const Layer& l, int layer);
SignatureSet signatures_from_file(const SignatureFile& sf, int layer);
/// Hidden layers of `net` in the coordinates an extraction commits to: each
/// row divided by the magnitude of its pivot coordinate, with the following
/// layer's columns multiplied by the same magnitudes. The function computed
/// by the hidden stack changes only by a positive scaling per neuron.
std::vector<Layer> canonical_hidden_layers(const Network& net);
/// Signatures of every hidden layer of a network in canonical coordinates,
/// for writing a signature file.
SignatureFile signature_file_from_network(const Network& net);

Signature recover_layer1_signature(Oracle& o, const CriticalPoint& cp, double eps);

Signature recover_deep_partial_signature(Oracle& o, std::span<const Layer> prefix, const CriticalPoint& cp, double eps,
                                         std::mt19937_64& rng);

struct SignatureCandidate
{
	CriticalPoint point;
	Signature signature;
};

struct SignatureCluster
{
	std::vector<SignatureCandidate> members;
	Signature merged;
	int incident_points = 0;   // extra critical points attributed without a signature
	bool ambiguous = false;    // also consistent with another cluster
	bool declared = false;     // >= 2 members and full support

	int multiplicity() const { return static_cast<int>(members.size()) + incident_points; }
};

/// Relative mismatch of two signatures on their common support after the best
/// rescaling; +inf when they share fewer than two coordinates.
double signature_mismatch(const Signature& a, const Signature& b);

void merge_into(SignatureCluster& cluster, SignatureCandidate cand);

std::vector<SignatureCluster> cluster_and_merge(std::vector<SignatureCandidate> candidates, int target_layer,
                                                double tol = kSigTol);

}  // namespace nnx
