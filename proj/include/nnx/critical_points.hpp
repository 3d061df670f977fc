#pragma once

#include "nnx/oracle.hpp"

#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace nnx {

/// mu(lambda) = start + lambda * (end - start), lambda in [0, 1].
struct ProbeSegment
{
	ProbeSegment(Vec start, Vec end);
	Vec start;
	Vec end;
	Vec at(double lambda) const { return start + lambda * (end - start); }
	double length() const { return (end - start).norm(); }
};

struct CriticalPoint
{
	Vec x_star;
	std::optional<NeuronId> neuron;
	Vec direction;            // unit vector of the probe through x_star
	double lambda = 0.0;      // position on the probe segment (when found by a scan)
	double radius = 0.0;      // distance along `direction` known to contain no other kink
	double left_slope = 0.0;  // output-0 directional derivatives on either side
	double right_slope = 0.0;
	double epsilon_used = 0.0;
};

enum class Linearity { Linear, NotLinear };

struct LinearityCertificate
{
	ProbeSegment segment;
	Linearity verdict = Linearity::NotLinear;
	std::vector<Vec> witnesses;   // f at x_a, x_b, x_o, x_a+h, x_b-h, x_o-h, x_o+h
};

struct CriticalPointOptions
{
	double eps = 1e-6;           // relative to the segment length
	int max_depth = 40;
	double match_tol = 1e-6;
	double slope_tol = 1e-7;
	double min_interval = 1e-7;      // relative to the segment; shorter gaps are not resolved
	long max_evaluations = 200000;   // per segment
};

struct CriticalPointSearch
{
	std::vector<CriticalPoint> points;   // sorted by lambda
	bool budget_exhausted = false;
	int degenerate = 0;                  // DegenerateSlopes events (re-probed with a smaller step)
};

CriticalPointSearch find_critical_points(Oracle& o, const ProbeSegment& seg, const CriticalPointOptions& opt = {});

LinearityCertificate check_linearity(Oracle& o, const Vec& x, const Vec& delta, double eps);

class NeuronAppearsAlwaysOff : public std::runtime_error
{
public:
	explicit NeuronAppearsAlwaysOff(NeuronId id);
	NeuronId neuron;
};

/// A hidden neuron of the hypothesis whose row is known up to sign.
struct TargetNeuron
{
	NeuronId id;
	Vec weights;
	double bias = 0.0;
};

struct TargetedSearchOptions
{
	int budget = 64;               // random directions tried
	double radius_factor = 100.0;  // search |x - start| <= factor * max(1, |start|)
	double verify_eps = 1e-6;      // relative to max(1, |x*|)
	double slope_tol = 1e-7;
};

/// Hypothesis pre-activation of the target at x (prefix = extracted layers
/// below the target).
double hypothesis_value(std::span<const Layer> prefix, const TargetNeuron& t, const Vec& x);

CriticalPoint find_critical_point_for_neuron(Oracle& o, std::span<const Layer> prefix, const TargetNeuron& target,
                                             const Vec& start, std::mt19937_64& rng,
                                             const TargetedSearchOptions& opt = {});

}  // namespace nnx
