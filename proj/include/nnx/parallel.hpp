#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace nnx {

inline int default_workers()
{
	return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(k) for k in [0, n) on up to `workers` threads. Work is handed
/// out one index at a time; the first exception is rethrown after all
/// threads finish.
template <class Body>
void parallel_for(int n, int workers, Body&& body)
{
	workers = std::clamp(workers, 1, std::max(1, n));
	if (workers == 1) {
		for (int k = 0; k < n; ++k)
			body(k);
		return;
	}
	std::atomic<int> next{0};
	std::exception_ptr error;
	std::mutex error_mutex;
	auto run = [&] {
		for (;;) {
			const int k = next.fetch_add(1);
			if (k >= n)
				return;
			try {
				body(k);
			} catch (...) {
				std::lock_guard lk(error_mutex);
				if (!error)
					error = std::current_exception();
				next.store(n);
			}
		}
	};
	std::vector<std::thread> pool;
	pool.reserve(static_cast<std::size_t>(workers - 1));
	for (int w = 1; w < workers; ++w)
		pool.emplace_back(run);
	run();
	for (auto& t : pool)
		t.join();
	if (error)
		std::rethrow_exception(error);
}

}  // namespace nnx
