#pragma once

// .nnx files: one line of compact JSON, a newline, then raw little-endian
// IEEE-754 binary64 values. For every layer, in order, the weight matrix
// (row-major, d_i x d_{i-1}) followed by the bias vector (d_i).
//
// Header keys:
//   format      "nnx-1"
//   kind        "network" (layers 1..r+1) or "signatures" (hidden layers only,
//               rows normalized to a pivot of 1, normalized biases)
//   dims        [d0, ..., d_{r+1}]
//   seed        integer or null
//   provenance  free text
//   dtype       "f64le"

#include "nnx/network.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace nnx {

class FormatError : public std::runtime_error
{
public:
	using std::runtime_error::runtime_error;
};

std::string serialize_network(const Network& net);
Network deserialize_network(const std::string& bytes);

void save_network(const std::filesystem::path& path, const Network& net);
Network load_network(const std::filesystem::path& path);

/// Per-layer signatures for assumption-mode runs.
struct SignatureFile
{
	Architecture arch;
	std::vector<Layer> layers;   // one per hidden layer
	std::string provenance;
};

std::string serialize_signatures(const SignatureFile& sf);
SignatureFile deserialize_signatures(const std::string& bytes);
void save_signatures(const std::filesystem::path& path, const SignatureFile& sf);
SignatureFile load_signatures(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace nnx
