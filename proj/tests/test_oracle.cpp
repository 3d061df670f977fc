#include "nnx/nnx_format.hpp"
#include "nnx/wire.hpp"
#include "support.hpp"

#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>

using namespace nnx;

TEST_CASE("local oracle answers and counts")
{
	Layer l1{RowMat::Identity(2, 2), Vec::Zero(2)};
	Layer l2{RowMat::Identity(2, 2), Vec::Zero(2)};
	LocalOracle o(Network(Architecture({2, 2, 2}), {l1, l2}));
	Vec x(2);
	x << 1, -1;
	const Vec y = o.query(x);
	CHECK(y(0) == 1.0);
	CHECK(y(1) == 0.0);
	CHECK(o.ledger().total() == 1);
	CHECK(o.query(x) == y);
	CHECK(o.ledger().total() == 2);
	CHECK_THROWS_AS(o.query(Vec::Zero(3)), ShapeError);
}

TEST_CASE("ledger phases")
{
	LocalOracle o(generate_unitary_balanced(Architecture::parse("3-4-1"), 1, 100));
	{
		ScopedPhase p(Phase::Soe);
		o.query(Vec::Zero(3));
		{
			ScopedPhase q(Phase::Linearity);
			o.query(Vec::Zero(3));
		}
		o.query(Vec::Zero(3));
	}
	o.query(Vec::Zero(3));
	CHECK(o.ledger().count(Phase::Soe) == 2);
	CHECK(o.ledger().count(Phase::Linearity) == 1);
	CHECK(o.ledger().count(Phase::Other) == 1);
	const auto snap = o.ledger().snapshot();
	CHECK(snap.at("soe") == 2);
	CHECK(snap.at("linearity-overhead") == 1);
	CHECK(o.ledger().total() == 4);
}

TEST_CASE("number formatting round-trips binary64")
{
	Vec v(4);
	v << 0.1, -1.0 / 3.0, 1e-300, 123456789.123456789;
	const std::string s = format_number_array(v);
	CHECK(s.front() == '[');
	Vec bad(1);
	bad << std::numeric_limits<double>::infinity();
	CHECK_THROWS(format_number_array(bad));
}

TEST_CASE("endpoint parsing")
{
	const Endpoint e = parse_tcp_endpoint("tcp://localhost:9000");
	CHECK(e.host == "localhost");
	CHECK(e.port == 9000);
	CHECK(parse_tcp_endpoint("[::1]:7").host == "::1");
	CHECK_THROWS(parse_tcp_endpoint("tcp://nohost"));
}

TEST_CASE("wire oracle is bit-identical to the local oracle")
{
	const Network net = generate_unitary_balanced(Architecture::parse("12-10-10-3"), 77, 1000);
	OracleServer server(net, 0);
	server.start();
	auto remote = RemoteOracle::connect({"127.0.0.1", server.port()});
	CHECK(remote->input_dim() == 12);
	CHECK(remote->output_dim() == 3);
	LocalOracle local(net);
	std::mt19937_64 rng(4);
	for (int k = 0; k < 1000; ++k) {
		const Vec x = 10.0 * testing::random_input(12, rng);
		const Vec a = remote->query(x), b = local.query(x);
		bool same = true;
		for (Eigen::Index i = 0; i < a.size(); ++i)
			same = same && a(i) == b(i);
		REQUIRE(same);
	}
	CHECK(remote->ledger().total() == 1000);

	SUBCASE("pipelined queries are counted on both ends")
	{
		std::vector<Vec> xs;
		for (int k = 0; k < 10000; ++k)
			xs.push_back(testing::random_input(12, rng));
		const std::uint64_t before = server.ledger().total();
		const auto ys = remote->query_pipelined(xs);
		CHECK(ys.size() == xs.size());
		CHECK(ys[1234] == evaluate(net, xs[1234]));
		CHECK(remote->ledger().total() == 11000);
		CHECK(server.ledger().total() - before == 10000);
	}
	server.stop();
}

TEST_CASE("server survives malformed lines")
{
	const Network net = generate_unitary_balanced(Architecture::parse("2-3-1"), 1, 100);
	OracleServer server(net, 0);
	CHECK(server.handle_line("{nonsense").find("error") != std::string::npos);
	CHECK(server.handle_line("{\"q\":[1]}").find("error") != std::string::npos);
	const std::string ok = server.handle_line("{\"q\":[0.5,\"-0.25\"]}");
	CHECK(ok.find("\"a\"") != std::string::npos);

	server.start();
	const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
	sockaddr_in addr{};
	addr.sin_family = AF_INET;
	addr.sin_port = htons(static_cast<std::uint16_t>(server.port()));
	::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
	REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
	const std::string req = "garbage\n{\"q\":[1,2]}\n";
	REQUIRE(::send(fd, req.data(), req.size(), 0) == static_cast<ssize_t>(req.size()));
	std::string got;
	char buf[512];
	while (std::count(got.begin(), got.end(), '\n') < 3) {
		const ssize_t n = ::recv(fd, buf, sizeof buf, 0);
		if (n <= 0)
			break;
		got.append(buf, static_cast<std::size_t>(n));
	}
	::close(fd);
	server.stop();
	CHECK(got.find("\"hello\":1") != std::string::npos);
	CHECK(got.find("\"error\"") != std::string::npos);
	CHECK(got.find("\"a\"") != std::string::npos);
}

TEST_CASE("open_oracle endpoints")
{
	const auto path = std::filesystem::temp_directory_path() / "nnx_oracle_test.nnx";
	save_network(path, generate_unitary_balanced(Architecture::parse("4-3-2"), 1, 100));
	auto o = open_oracle("file://" + path.string());
	CHECK(o->input_dim() == 4);
	::setenv("NNX_ORACLE", ("file://" + path.string()).c_str(), 1);
	CHECK(open_oracle("")->output_dim() == 2);
	::unsetenv("NNX_ORACLE");
	std::filesystem::remove(path);
	CHECK_THROWS_AS(RemoteOracle::connect({"127.0.0.1", 1}, std::chrono::milliseconds(500)), TransportFailure);
}
