#include "nnx/nnx_format.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace nnx {

namespace {

using json = nlohmann::json;

constexpr const char* kFormat = "nnx-1";

void put_f64(std::string& out, double v)
{
	auto bits = std::bit_cast<std::uint64_t>(v);
	char buf[8];
	for (int k = 0; k < 8; ++k)
		buf[k] = static_cast<char>((bits >> (8 * k)) & 0xFF);
	out.append(buf, 8);
}

double get_f64(const std::string& in, std::size_t& pos)
{
	if (pos + 8 > in.size())
		throw FormatError("payload truncated");
	std::uint64_t bits = 0;
	for (int k = 0; k < 8; ++k)
		bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(k)])) << (8 * k);
	pos += 8;
	return std::bit_cast<double>(bits);
}

std::string encode(const json& header, const std::vector<Layer>& layers)
{
	std::string out = header.dump();
	out.push_back('\n');
	for (const Layer& l : layers) {
		for (Eigen::Index i = 0; i < l.weights.rows(); ++i)
			for (Eigen::Index j = 0; j < l.weights.cols(); ++j)
				put_f64(out, l.weights(i, j));
		for (Eigen::Index i = 0; i < l.bias.size(); ++i)
			put_f64(out, l.bias(i));
	}
	return out;
}

struct Decoded
{
	json header;
	std::vector<int> dims;
	std::vector<Layer> layers;
};

Decoded decode(const std::string& bytes, const std::string& expected_kind)
{
	const auto nl = bytes.find('\n');
	if (nl == std::string::npos)
		throw FormatError("missing header line");
	Decoded d;
	try {
		d.header = json::parse(bytes.substr(0, nl));
	} catch (const json::exception& e) {
		throw FormatError(std::string("bad header: ") + e.what());
	}
	if (d.header.value("format", "") != kFormat)
		throw FormatError("unsupported format (expected nnx-1)");
	if (d.header.value("kind", "") != expected_kind)
		throw FormatError("expected kind '" + expected_kind + "', found '" + d.header.value("kind", "") + "'");
	if (d.header.contains("dtype") && d.header["dtype"] != "f64le")
		throw FormatError("unsupported dtype");
	d.dims = d.header.at("dims").get<std::vector<int>>();
	if (d.dims.size() < 3)
		throw FormatError("dims too short");

	const std::size_t n_layers = expected_kind == "network" ? d.dims.size() - 1 : d.dims.size() - 2;
	std::size_t pos = nl + 1;
	for (std::size_t li = 0; li < n_layers; ++li) {
		const int rows = d.dims[li + 1], cols = d.dims[li];
		if (rows < 1 || cols < 1)
			throw FormatError("non-positive width");
		Layer l;
		l.weights.resize(rows, cols);
		l.bias.resize(rows);
		for (int i = 0; i < rows; ++i)
			for (int j = 0; j < cols; ++j)
				l.weights(i, j) = get_f64(bytes, pos);
		for (int i = 0; i < rows; ++i)
			l.bias(i) = get_f64(bytes, pos);
		d.layers.push_back(std::move(l));
	}
	if (pos != bytes.size())
		throw FormatError("trailing bytes after payload");
	return d;
}

}  // namespace

std::string serialize_network(const Network& net)
{
	json h;
	h["format"] = kFormat;
	h["kind"] = "network";
	h["dims"] = net.arch().dims();
	h["seed"] = net.info().seed ? json(*net.info().seed) : json(nullptr);
	h["provenance"] = net.info().provenance;
	h["dtype"] = "f64le";
	return encode(h, net.layers());
}

Network deserialize_network(const std::string& bytes)
{
	Decoded d = decode(bytes, "network");
	NetworkInfo info;
	if (d.header.contains("seed") && !d.header["seed"].is_null())
		info.seed = d.header["seed"].get<std::uint64_t>();
	info.provenance = d.header.value("provenance", "");
	try {
		return Network(Architecture(d.dims), std::move(d.layers), std::move(info));
	} catch (const ShapeError& e) {
		throw FormatError(e.what());
	}
}

std::string serialize_signatures(const SignatureFile& sf)
{
	json h;
	h["format"] = kFormat;
	h["kind"] = "signatures";
	h["dims"] = sf.arch.dims();
	h["seed"] = nullptr;
	h["provenance"] = sf.provenance;
	h["dtype"] = "f64le";
	return encode(h, sf.layers);
}

SignatureFile deserialize_signatures(const std::string& bytes)
{
	Decoded d = decode(bytes, "signatures");
	SignatureFile sf;
	sf.arch = Architecture(d.dims);
	sf.layers = std::move(d.layers);
	sf.provenance = d.header.value("provenance", "");
	return sf;
}

std::string read_file(const std::filesystem::path& path)
{
	std::ifstream in(path, std::ios::binary);
	if (!in)
		throw FormatError("cannot open " + path.string());
	std::ostringstream ss;
	ss << in.rdbuf();
	return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes)
{
	std::ofstream out(path, std::ios::binary | std::ios::trunc);
	if (!out)
		throw FormatError("cannot write " + path.string());
	out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
	if (!out)
		throw FormatError("short write to " + path.string());
}

void save_network(const std::filesystem::path& path, const Network& net)
{
	write_file(path, serialize_network(net));
}

Network load_network(const std::filesystem::path& path)
{
	return deserialize_network(read_file(path));
}

void save_signatures(const std::filesystem::path& path, const SignatureFile& sf)
{
	write_file(path, serialize_signatures(sf));
}

SignatureFile load_signatures(const std::filesystem::path& path)
{
	return deserialize_signatures(read_file(path));
}

}  // namespace nnx
