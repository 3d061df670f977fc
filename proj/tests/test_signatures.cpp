#include "nnx/signatures.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace nnx;

namespace {

Network planted(const Vec& w, double b, double out = 1.0)
{
	Layer l1{RowMat(w.transpose()), Vec::Constant(1, b)};
	Layer l2{RowMat::Constant(1, 1, out), Vec::Zero(1)};
	return Network(Architecture({static_cast<int>(w.size()), 1, 1}), {l1, l2});
}

CriticalPoint cp_on(Oracle& o, const Vec& a, const Vec& b)
{
	const auto res = find_critical_points(o, ProbeSegment(a, b));
	REQUIRE(res.points.size() >= 1);
	return res.points.front();
}

}  // namespace

TEST_CASE("layer-1 signature of a planted neuron")
{
	Vec w(3);
	w << 2, -4, 6;
	LocalOracle o(planted(w, 0.5));
	Vec a(3), b(3);
	a << -1, 1, -1;
	b << 1, -1, 1;
	const CriticalPoint cp = cp_on(o, a, b);
	const std::uint64_t before = o.ledger().total();
	const Signature s = recover_layer1_signature(o, cp, 1e-3);
	CHECK(o.ledger().total() - before <= 4 * 3 + 8);
	CHECK(s.full());
	CHECK(s.pivot == 2);
	const Vec expect = w / 6.0;
	for (int k = 0; k < 3; ++k)
		CHECK(std::abs(s.coords(k) - expect(k)) <= 1e-6 * std::abs(expect(k)));
	REQUIRE(s.bias);
	CHECK(std::abs(*s.bias - 0.5 / 6.0) <= 1e-6);
}

TEST_CASE("zero coordinate moves the pivot")
{
	Vec w(2);
	w << 0, 5;
	LocalOracle o(planted(w, -1.0));
	Vec a(2), b(2);
	a << 0.3, -1;
	b << 0.7, 2;
	const Signature s = recover_layer1_signature(o, cp_on(o, a, b), 1e-3);
	CHECK(s.pivot == 1);
	CHECK(s.support_size() == 2);
	CHECK(std::abs(s.coords(0)) <= 1e-9);
	CHECK(s.coords(1) == 1.0);
}

TEST_CASE("signature is scale invariant and point independent")
{
	const Network net = generate_unitary_balanced(Architecture::parse("8-6-2"), 3, 1000);
	LocalOracle o(net);
	std::vector<Layer> scaled_layers = net.layers();
	scaled_layers[0].weights.row(2) *= 7.5;
	scaled_layers[0].bias(2) *= 7.5;
	LocalOracle o2(Network(net.arch(), scaled_layers));

	std::mt19937_64 rng(6);
	TargetNeuron t{{1, 2}, net.layer(1).weights.row(2).transpose(), net.layer(1).bias(2)};
	std::vector<Signature> sigs;
	for (int k = 0; k < 2; ++k) {
		CriticalPoint cp = find_critical_point_for_neuron(o, {}, t, testing::random_input(8, rng), rng);
		cp.radius = 1e-2;
		sigs.push_back(recover_layer1_signature(o, cp, 1e-3));
		sigs.push_back(recover_layer1_signature(o2, cp, 1e-3));
	}
	for (const auto& s : sigs)
		CHECK(signature_mismatch(s, sigs.front()) <= kSigTol);
	const Signature truth = Signature::from_row(net.layer(1).weights.row(2).transpose());
	CHECK(signature_mismatch(sigs.front(), truth) <= 1e-6);
}

TEST_CASE("deep partial signature on a tiny net")
{
	const Network net = generate_unitary_balanced(Architecture::parse("4-8-8-1"), 12, 2000);
	LocalOracle o(net);
	std::mt19937_64 rng(14);
	int checked = 0;
	for (int j = 0; j < 8 && checked < 5; ++j) {
		TargetNeuron t{{2, j}, net.layer(2).weights.row(j).transpose(), net.layer(2).bias(j)};
		for (int rep = 0; rep < 3; ++rep) {
			CriticalPoint cp;
			try {
				cp = find_critical_point_for_neuron(o, net.prefix(1), t, testing::random_input(4, rng), rng);
			} catch (const NeuronAppearsAlwaysOff&) {
				break;
			}
			cp.radius = 1e-3;
			Signature s;
			try {
				s = recover_deep_partial_signature(o, net.prefix(1), cp, 1e-3, rng);
			} catch (const RankDeficient&) {
				continue;   // more active layer-1 neurons than input dimensions
			}
			const auto masks = activation_masks(net.prefix(1), cp.x_star);
			for (int c = 0; c < 8; ++c)
				CHECK(static_cast<bool>(s.support[static_cast<std::size_t>(c)]) == static_cast<bool>(masks[0][static_cast<std::size_t>(c)]));
			Signature truth = Signature::from_row(net.layer(2).weights.row(j).transpose());
			truth.support = s.support;
			truth.renormalize();
			if (s.support_size() >= 2)   // a single active coordinate carries no ratio
				CHECK(signature_mismatch(s, truth) <= 1e-4);
			if (s.full())
				CHECK(s.support_size() == 8);
			for (int c = 0; c < 8; ++c)
				if (!s.support[static_cast<std::size_t>(c)])
					CHECK(s.coords(c) == 0.0);
			++checked;
		}
	}
	CHECK(checked >= 3);
}

TEST_CASE("clustering and merging")
{
	auto partial = [](const Vec& row, std::vector<std::uint8_t> support) {
		Signature s;
		s.coords = row;
		s.support = std::move(support);
		for (Eigen::Index k = 0; k < row.size(); ++k)
			if (!s.support[static_cast<std::size_t>(k)])
				s.coords(k) = 0.0;
		s.renormalize();
		return s;
	};
	Vec a(5), b(5), junk(5);
	a << 1, 2, -3, 0.5, 4;
	b << 1, 2, 3, -1, 0.25;   // same first-coordinate ratio as a, differs elsewhere
	junk << 0.3, -7, 0.1, 2, 2;
	std::vector<SignatureCandidate> cands;
	const std::vector<std::vector<std::uint8_t>> supports{
	    {1, 1, 1, 0, 0}, {0, 1, 1, 1, 0}, {0, 0, 1, 1, 1}, {1, 0, 1, 0, 1}, {1, 1, 0, 1, 1}};
	for (const auto& sup : supports)
		cands.push_back({CriticalPoint{}, partial(2.5 * a, sup)});
	cands.push_back({CriticalPoint{}, Signature::from_row(b)});
	cands.push_back({CriticalPoint{}, Signature::from_row(-3.0 * b)});
	cands.push_back({CriticalPoint{}, Signature::from_row(junk)});

	const auto clusters = cluster_and_merge(cands, 2);
	REQUIRE(clusters.size() == 3);
	int declared = 0;
	for (const auto& c : clusters) {
		if (!c.declared)
			continue;
		++declared;
		CHECK(c.merged.full());
		const bool is_a = signature_mismatch(c.merged, Signature::from_row(a)) <= 1e-12;
		const bool is_b = signature_mismatch(c.merged, Signature::from_row(b)) <= 1e-12;
		CHECK((is_a || is_b));
		CHECK(c.merged.layer_guess == 2);
	}
	CHECK(declared == 2);
	CHECK(std::count_if(clusters.begin(), clusters.end(), [](const SignatureCluster& c) { return c.members.size() == 5; }) == 1);
}
