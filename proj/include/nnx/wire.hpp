#pragma once

// Newline-delimited JSON over TCP.
//
//   server -> client, once:  {"hello":1,"d0":<int>,"dout":<int>}
//   client -> server:        {"q":[x0, x1, ...]}
//   server -> client:        {"a":[y0, ...]}   or   {"error":"..."}
//
// Numbers are written with 17 significant digits so every binary64 value
// survives the trip exactly; the server also accepts them as JSON strings.
// Requests on one connection are answered in order, so clients may pipeline.

#include "nnx/oracle.hpp"

#include <atomic>
#include <chrono>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace nnx {

struct Endpoint
{
	std::string host = "127.0.0.1";
	int port = 0;
};

/// "tcp://host:port" or "host:port".
Endpoint parse_tcp_endpoint(std::string_view text);

class HandshakeError : public std::runtime_error
{
public:
	using std::runtime_error::runtime_error;
};

std::string format_number_array(const Vec& v);

class OracleServer
{
public:
	/// Binds immediately; port 0 picks an ephemeral port.
	OracleServer(Network net, int port, std::string bind_host = "127.0.0.1");
	~OracleServer();
	OracleServer(const OracleServer&) = delete;
	OracleServer& operator=(const OracleServer&) = delete;

	int port() const noexcept { return port_; }
	void start();
	void stop();
	const QueryLedger& ledger() const noexcept { return oracle_.ledger(); }

	/// Handles one request line and returns the reply (without newline).
	std::string handle_line(std::string_view line);

private:
	void accept_loop();
	void serve_connection(int fd);

	LocalOracle oracle_;
	int listen_fd_ = -1;
	int port_ = 0;
	std::atomic<bool> running_{false};
	std::thread acceptor_;
	std::mutex conn_mutex_;
	std::vector<int> conn_fds_;
	std::vector<std::thread> workers_;
};

class RemoteOracle final : public Oracle
{
public:
	static std::unique_ptr<RemoteOracle> connect(const Endpoint& ep,
	                                             std::chrono::milliseconds timeout = std::chrono::seconds(30));
	~RemoteOracle() override;

	/// Sends every query before reading any answer. Charged to the current
	/// phase like individual queries.
	std::vector<Vec> query_pipelined(std::span<const Vec> xs);

	int retries = 2;

protected:
	Vec evaluate_raw(const Vec& x) override;

private:
	RemoteOracle(Endpoint ep, std::chrono::milliseconds timeout, int fd, int d0, int dout);
	void reconnect();
	void send_all(const std::string& data);
	std::string read_line();
	Vec parse_answer(const std::string& line) const;

	Endpoint ep_;
	std::chrono::milliseconds timeout_;
	int fd_ = -1;
	std::string buffer_;
	std::mutex mutex_;
};

/// "tcp://host:port" connects to a server, "file://victim.nnx" wraps a local
/// network. An empty string falls back to the NNX_ORACLE environment variable.
std::unique_ptr<Oracle> open_oracle(std::string_view endpoint);

}  // namespace nnx
