#include "nnx/oracle.hpp"

namespace nnx {

namespace {
thread_local Phase t_phase = Phase::Other;
}

std::string_view phase_label(Phase p)
{
	switch (p) {
	case Phase::CriticalPoints: return "critical-points";
	case Phase::Signatures: return "signatures";
	case Phase::Soe: return "soe";
	case Phase::Freeze: return "freeze";
	case Phase::Wiggle: return "wiggle";
	case Phase::LastLayer: return "last-layer";
	case Phase::Linearity: return "linearity-overhead";
	case Phase::OutputLayer: return "output-layer";
	case Phase::Verify: return "verify";
	case Phase::Other: return "other";
	case Phase::Count_: break;
	}
	return "other";
}

QueryLedger::QueryLedger()
{
	reset();
}

void QueryLedger::record(Phase p, std::uint64_t n) noexcept
{
	counts_[static_cast<std::size_t>(p)].fetch_add(n, std::memory_order_relaxed);
}

std::uint64_t QueryLedger::count(Phase p) const noexcept
{
	return counts_[static_cast<std::size_t>(p)].load(std::memory_order_relaxed);
}

std::uint64_t QueryLedger::total() const noexcept
{
	std::uint64_t t = 0;
	for (const auto& c : counts_)
		t += c.load(std::memory_order_relaxed);
	return t;
}

std::map<std::string, std::uint64_t> QueryLedger::snapshot() const
{
	std::map<std::string, std::uint64_t> out;
	for (std::size_t k = 0; k < kPhaseCount; ++k) {
		const auto v = counts_[k].load(std::memory_order_relaxed);
		if (v)
			out[std::string(phase_label(static_cast<Phase>(k)))] = v;
	}
	return out;
}

void QueryLedger::reset() noexcept
{
	for (auto& c : counts_)
		c.store(0, std::memory_order_relaxed);
}

ScopedPhase::ScopedPhase(Phase p) noexcept
    : previous_(t_phase)
{
	t_phase = p;
}

ScopedPhase::~ScopedPhase()
{
	t_phase = previous_;
}

Phase ScopedPhase::current() noexcept
{
	return t_phase;
}

Oracle::Oracle(int d0, int dout)
    : d0_(d0), dout_(dout)
{
}

Vec Oracle::query(const Vec& x)
{
	if (x.size() != d0_)
		throw ShapeError("query of length " + std::to_string(x.size()) + ", oracle expects " + std::to_string(d0_));
	Vec y = evaluate_raw(x);
	ledger_.record(ScopedPhase::current());
	return y;
}

LocalOracle::LocalOracle(Network net)
    : Oracle(net.arch().input_dim(), net.arch().output_dim()), net_(std::move(net))
{
}

Vec LocalOracle::evaluate_raw(const Vec& x)
{
	return evaluate(net_, x);
}

}  // namespace nnx
