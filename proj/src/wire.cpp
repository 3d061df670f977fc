#include "nnx/wire.hpp"
#include "nnx/nnx_format.hpp"

#include <json.hpp>

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace nnx {

using json = nlohmann::json;

namespace {

std::string errno_text(const char* what)
{
	return std::string(what) + ": " + std::strerror(errno);
}

void write_fully(int fd, const char* data, std::size_t n)
{
	while (n > 0) {
		const ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
		if (w < 0) {
			if (errno == EINTR)
				continue;
			throw TransportFailure(errno_text("send"));
		}
		data += w;
		n -= static_cast<std::size_t>(w);
	}
}

// Reads one '\n'-terminated line into out, keeping leftovers in buf.
// Returns false on orderly EOF before any byte of the line.
bool read_line_from(int fd, std::string& buf, std::string& out)
{
	for (;;) {
		const auto nl = buf.find('\n');
		if (nl != std::string::npos) {
			out.assign(buf, 0, nl);
			buf.erase(0, nl + 1);
			if (!out.empty() && out.back() == '\r')
				out.pop_back();
			return true;
		}
		char chunk[65536];
		const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
		if (n == 0) {
			if (buf.empty())
				return false;
			throw TransportFailure("connection closed mid-line");
		}
		if (n < 0) {
			if (errno == EINTR)
				continue;
			throw TransportFailure(errno_text("recv"));
		}
		buf.append(chunk, static_cast<std::size_t>(n));
	}
}

void set_timeouts(int fd, std::chrono::milliseconds t)
{
	timeval tv{};
	tv.tv_sec = static_cast<time_t>(t.count() / 1000);
	tv.tv_usec = static_cast<suseconds_t>((t.count() % 1000) * 1000);
	::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
	::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
	int one = 1;
	::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

int dial(const Endpoint& ep, std::chrono::milliseconds timeout)
{
	addrinfo hints{};
	hints.ai_family = AF_UNSPEC;
	hints.ai_socktype = SOCK_STREAM;
	addrinfo* res = nullptr;
	const std::string port = std::to_string(ep.port);
	if (int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0)
		throw TransportFailure("resolve " + ep.host + ": " + ::gai_strerror(rc));

	std::string last_error = "no address";
	for (addrinfo* ai = res; ai; ai = ai->ai_next) {
		int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
		if (fd < 0)
			continue;
		const int flags = ::fcntl(fd, F_GETFL, 0);
		::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
		int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
		if (rc < 0 && errno == EINPROGRESS) {
			pollfd p{fd, POLLOUT, 0};
			rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
			if (rc == 1) {
				int err = 0;
				socklen_t len = sizeof err;
				::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
				rc = err == 0 ? 0 : -1;
				errno = err;
			} else {
				rc = -1;
				errno = ETIMEDOUT;
			}
		}
		if (rc == 0) {
			::fcntl(fd, F_SETFL, flags);
			set_timeouts(fd, timeout);
			::freeaddrinfo(res);
			return fd;
		}
		last_error = errno_text("connect");
		::close(fd);
	}
	::freeaddrinfo(res);
	throw TransportFailure(ep.host + ":" + port + ": " + last_error);
}

double json_to_double(const json& v)
{
	if (v.is_number())
		return v.get<double>();
	if (v.is_string()) {
		const std::string s = v.get<std::string>();
		char* end = nullptr;
		const double d = std::strtod(s.c_str(), &end);
		if (end == s.c_str() || *end != '\0')
			throw std::invalid_argument("not a number: " + s);
		return d;
	}
	throw std::invalid_argument("array entry is not a number");
}

}  // namespace

Endpoint parse_tcp_endpoint(std::string_view text)
{
	if (text.starts_with("tcp://"))
		text.remove_prefix(6);
	const auto colon = text.rfind(':');
	if (colon == std::string_view::npos)
		throw std::invalid_argument("endpoint needs host:port");
	Endpoint ep;
	ep.host = std::string(text.substr(0, colon));
	if (ep.host.size() > 1 && ep.host.front() == '[' && ep.host.back() == ']')
		ep.host = ep.host.substr(1, ep.host.size() - 2);
	const std::string_view port = text.substr(colon + 1);
	auto r = std::from_chars(port.data(), port.data() + port.size(), ep.port);
	if (r.ec != std::errc{} || r.ptr != port.data() + port.size() || ep.port < 0 || ep.port > 65535)
		throw std::invalid_argument("bad port in endpoint");
	if (ep.host.empty())
		ep.host = "127.0.0.1";
	return ep;
}

std::string format_number_array(const Vec& v)
{
	std::string out = "[";
	char buf[32];
	for (Eigen::Index k = 0; k < v.size(); ++k) {
		if (!std::isfinite(v(k)))
			throw std::invalid_argument("non-finite value cannot be sent");
		const int n = std::snprintf(buf, sizeof buf, "%.17g", v(k));
		if (k)
			out.push_back(',');
		out.append(buf, static_cast<std::size_t>(n));
	}
	out.push_back(']');
	return out;
}

// ---------------------------------------------------------------- server

OracleServer::OracleServer(Network net, int port, std::string bind_host)
    : oracle_(std::move(net))
{
	addrinfo hints{};
	hints.ai_family = AF_UNSPEC;
	hints.ai_socktype = SOCK_STREAM;
	hints.ai_flags = AI_PASSIVE;
	addrinfo* res = nullptr;
	const std::string p = std::to_string(port);
	if (int rc = ::getaddrinfo(bind_host.empty() ? nullptr : bind_host.c_str(), p.c_str(), &hints, &res); rc != 0)
		throw std::runtime_error("bind " + bind_host + ": " + ::gai_strerror(rc));
	for (addrinfo* ai = res; ai; ai = ai->ai_next) {
		int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
		if (fd < 0)
			continue;
		int one = 1;
		::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
		if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 64) == 0) {
			listen_fd_ = fd;
			break;
		}
		::close(fd);
	}
	::freeaddrinfo(res);
	if (listen_fd_ < 0)
		throw std::runtime_error(errno_text(("bind " + bind_host + ":" + p).c_str()));

	sockaddr_storage addr{};
	socklen_t len = sizeof addr;
	::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
	if (addr.ss_family == AF_INET)
		port_ = ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
	else
		port_ = ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port);
}

OracleServer::~OracleServer()
{
	stop();
	if (listen_fd_ >= 0)
		::close(listen_fd_);
}

void OracleServer::start()
{
	if (running_.exchange(true))
		return;
	acceptor_ = std::thread([this] { accept_loop(); });
}

void OracleServer::stop()
{
	if (!running_.exchange(false))
		return;
	if (acceptor_.joinable())
		acceptor_.join();
	{
		std::lock_guard lk(conn_mutex_);
		for (int fd : conn_fds_)
			::shutdown(fd, SHUT_RDWR);
	}
	for (auto& t : workers_)
		if (t.joinable())
			t.join();
	workers_.clear();
}

void OracleServer::accept_loop()
{
	while (running_.load()) {
		pollfd p{listen_fd_, POLLIN, 0};
		const int rc = ::poll(&p, 1, 100);
		if (rc <= 0)
			continue;
		const int fd = ::accept(listen_fd_, nullptr, nullptr);
		if (fd < 0)
			continue;
		int one = 1;
		::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
		std::lock_guard lk(conn_mutex_);
		conn_fds_.push_back(fd);
		workers_.emplace_back([this, fd] { serve_connection(fd); });
	}
}

std::string OracleServer::handle_line(std::string_view line)
{
	json req;
	try {
		req = json::parse(line);
	} catch (const json::exception&) {
		return R"({"error":"malformed JSON"})";
	}
	if (!req.is_object() || !req.contains("q") || !req["q"].is_array())
		return R"({"error":"expected an object with array field q"})";
	const auto& q = req["q"];
	if (static_cast<int>(q.size()) != oracle_.input_dim())
		return json{{"error", "q has " + std::to_string(q.size()) + " entries, expected " +
		                          std::to_string(oracle_.input_dim())}}
		    .dump();
	Vec x(oracle_.input_dim());
	try {
		for (std::size_t k = 0; k < q.size(); ++k) {
			x(static_cast<Eigen::Index>(k)) = json_to_double(q[k]);
			if (!std::isfinite(x(static_cast<Eigen::Index>(k))))
				throw std::invalid_argument("non-finite entry");
		}
	} catch (const std::exception& e) {
		return json{{"error", e.what()}}.dump();
	}
	return "{\"a\":" + format_number_array(oracle_.query(x)) + "}";
}

void OracleServer::serve_connection(int fd)
{
	try {
		const std::string hello = json{{"hello", 1}, {"d0", oracle_.input_dim()}, {"dout", oracle_.output_dim()}}.dump() + "\n";
		write_fully(fd, hello.data(), hello.size());
		std::string buf, line, out;
		while (running_.load() && read_line_from(fd, buf, line)) {
			if (line.empty())
				continue;
			out = handle_line(line);
			out.push_back('\n');
			write_fully(fd, out.data(), out.size());
		}
	} catch (const std::exception&) {
		// peer went away or we are shutting down
	}
	std::lock_guard lk(conn_mutex_);
	std::erase(conn_fds_, fd);
	::close(fd);
}

// ---------------------------------------------------------------- client

RemoteOracle::RemoteOracle(Endpoint ep, std::chrono::milliseconds timeout, int fd, int d0, int dout)
    : Oracle(d0, dout), ep_(std::move(ep)), timeout_(timeout), fd_(fd)
{
}

RemoteOracle::~RemoteOracle()
{
	if (fd_ >= 0)
		::close(fd_);
}

namespace {
std::pair<int, int> read_handshake(int fd, std::string& buf)
{
	std::string line;
	if (!read_line_from(fd, buf, line))
		throw HandshakeError("server closed the connection before the handshake");
	json h;
	try {
		h = json::parse(line);
	} catch (const json::exception&) {
		throw HandshakeError("handshake is not JSON");
	}
	if (!h.is_object() || h.value("hello", 0) != 1 || !h.contains("d0") || !h.contains("dout"))
		throw HandshakeError("unexpected handshake: " + line);
	const int d0 = h["d0"].get<int>(), dout = h["dout"].get<int>();
	if (d0 < 1 || dout < 1)
		throw HandshakeError("handshake advertises invalid dimensions");
	return {d0, dout};
}
}  // namespace

std::unique_ptr<RemoteOracle> RemoteOracle::connect(const Endpoint& ep, std::chrono::milliseconds timeout)
{
	const int fd = dial(ep, timeout);
	std::string buf;
	std::pair<int, int> dims;
	try {
		dims = read_handshake(fd, buf);
	} catch (...) {
		::close(fd);
		throw;
	}
	auto o = std::unique_ptr<RemoteOracle>(new RemoteOracle(ep, timeout, fd, dims.first, dims.second));
	o->buffer_ = std::move(buf);
	return o;
}

void RemoteOracle::reconnect()
{
	if (fd_ >= 0)
		::close(fd_);
	fd_ = -1;
	buffer_.clear();
	fd_ = dial(ep_, timeout_);
	const auto dims = read_handshake(fd_, buffer_);
	if (dims.first != input_dim() || dims.second != output_dim())
		throw HandshakeError("server dimensions changed across reconnect");
}

void RemoteOracle::send_all(const std::string& data)
{
	if (fd_ < 0)
		throw TransportFailure("not connected");
	write_fully(fd_, data.data(), data.size());
}

std::string RemoteOracle::read_line()
{
	std::string line;
	if (!read_line_from(fd_, buffer_, line))
		throw TransportFailure("server closed the connection");
	return line;
}

Vec RemoteOracle::parse_answer(const std::string& line) const
{
	json r;
	try {
		r = json::parse(line);
	} catch (const json::exception&) {
		throw TransportFailure("unparseable reply");
	}
	if (r.contains("error"))
		throw std::runtime_error("oracle error: " + r["error"].dump());
	const auto& a = r.at("a");
	if (static_cast<int>(a.size()) != output_dim())
		throw TransportFailure("reply has wrong length");
	Vec y(output_dim());
	for (std::size_t k = 0; k < a.size(); ++k)
		y(static_cast<Eigen::Index>(k)) = json_to_double(a[k]);
	return y;
}

Vec RemoteOracle::evaluate_raw(const Vec& x)
{
	const std::string req = "{\"q\":" + format_number_array(x) + "}\n";
	std::lock_guard lk(mutex_);
	for (int attempt = 0;; ++attempt) {
		try {
			if (fd_ < 0)
				reconnect();
			send_all(req);
			return parse_answer(read_line());
		} catch (const TransportFailure&) {
			if (fd_ >= 0)
				::close(fd_);
			fd_ = -1;
			if (attempt >= retries)
				throw;
		}
	}
}

std::vector<Vec> RemoteOracle::query_pipelined(std::span<const Vec> xs)
{
	std::string batch;
	for (const Vec& x : xs) {
		if (x.size() != input_dim())
			throw ShapeError("pipelined query has wrong length");
		batch += "{\"q\":" + format_number_array(x) + "}\n";
	}
	std::vector<Vec> out;
	out.reserve(xs.size());
	{
		std::lock_guard lk(mutex_);
		if (fd_ < 0)
			reconnect();
		// A writer thread avoids deadlock when both socket buffers fill up.
		std::exception_ptr send_error;
		std::thread writer([&] {
			try {
				send_all(batch);
			} catch (...) {
				send_error = std::current_exception();
			}
		});
		try {
			for (std::size_t k = 0; k < xs.size(); ++k)
				out.push_back(parse_answer(read_line()));
		} catch (...) {
			::shutdown(fd_, SHUT_RDWR);
			writer.join();
			::close(fd_);
			fd_ = -1;
			throw;
		}
		writer.join();
		if (send_error)
			std::rethrow_exception(send_error);
	}
	ledger().record(ScopedPhase::current(), xs.size());
	return out;
}

std::unique_ptr<Oracle> open_oracle(std::string_view endpoint)
{
	std::string ep(endpoint);
	if (ep.empty()) {
		if (const char* env = std::getenv("NNX_ORACLE"))
			ep = env;
	}
	if (ep.empty())
		throw std::invalid_argument("no oracle endpoint given and NNX_ORACLE is not set");
	if (ep.starts_with("file://"))
		return std::make_unique<LocalOracle>(load_network(ep.substr(7)));
	return RemoteOracle::connect(parse_tcp_endpoint(ep));
}

}  // namespace nnx
