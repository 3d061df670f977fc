#pragma once

#include "nnx/network.hpp"

#include <array>
#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>

namespace nnx {

enum class Phase : int
{
	CriticalPoints,
	Signatures,
	Soe,
	Freeze,
	Wiggle,
	LastLayer,
	Linearity,
	OutputLayer,
	Verify,
	Other,
	Count_
};

inline constexpr std::size_t kPhaseCount = static_cast<std::size_t>(Phase::Count_);

std::string_view phase_label(Phase p);

/// Query counters per phase. The total is always the sum of the phases.
class QueryLedger
{
public:
	QueryLedger();
	void record(Phase p, std::uint64_t n = 1) noexcept;
	std::uint64_t count(Phase p) const noexcept;
	std::uint64_t total() const noexcept;
	std::map<std::string, std::uint64_t> snapshot() const;
	void reset() noexcept;

private:
	std::array<std::atomic<std::uint64_t>, kPhaseCount> counts_;
};

/// Sets the phase that queries issued on this thread are charged to, for the
/// lifetime of the guard.
class ScopedPhase
{
public:
	explicit ScopedPhase(Phase p) noexcept;
	~ScopedPhase();
	ScopedPhase(const ScopedPhase&) = delete;
	ScopedPhase& operator=(const ScopedPhase&) = delete;

	static Phase current() noexcept;

private:
	Phase previous_;
};

class TransportFailure : public std::runtime_error
{
public:
	using std::runtime_error::runtime_error;
	bool retriable() const noexcept { return true; }
};

/// Black-box access to f. Implementations must be safe to share between
/// threads.
class Oracle
{
public:
	virtual ~Oracle() = default;
	Oracle(const Oracle&) = delete;
	Oracle& operator=(const Oracle&) = delete;

	int input_dim() const noexcept { return d0_; }
	int output_dim() const noexcept { return dout_; }

	Vec query(const Vec& x);
	QueryLedger& ledger() noexcept { return ledger_; }
	const QueryLedger& ledger() const noexcept { return ledger_; }

protected:
	Oracle(int d0, int dout);
	virtual Vec evaluate_raw(const Vec& x) = 0;

private:
	int d0_;
	int dout_;
	QueryLedger ledger_;
};

class LocalOracle final : public Oracle
{
public:
	explicit LocalOracle(Network net);
	const Network& network() const noexcept { return net_; }

protected:
	Vec evaluate_raw(const Vec& x) override;

private:
	Network net_;
};

}  // namespace nnx
