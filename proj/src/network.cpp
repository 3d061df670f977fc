#include "nnx/network.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

namespace nnx {

Architecture::Architecture(std::vector<int> dims)
    : dims_(std::move(dims))
{
	if (dims_.size() < 3)
		throw ShapeError("architecture needs an input, at least one hidden layer and an output");
	for (int d : dims_)
		if (d < 1)
			throw ShapeError("layer widths must be >= 1");
}

Architecture Architecture::parse(std::string_view text)
{
	std::vector<int> dims;
	std::size_t pos = 0;
	while (pos <= text.size()) {
		std::size_t end = text.find_first_of(",- ", pos);
		if (end == std::string_view::npos)
			end = text.size();
		std::string_view tok = text.substr(pos, end - pos);
		pos = end + 1;
		if (tok.empty())
			continue;
		int width = 0, repeat = 1;
		const auto caret = tok.find('^');
		std::string_view w = tok.substr(0, caret);
		auto r1 = std::from_chars(w.data(), w.data() + w.size(), width);
		if (r1.ec != std::errc{} || r1.ptr != w.data() + w.size())
			throw ShapeError("bad architecture token '" + std::string(tok) + "'");
		if (caret != std::string_view::npos) {
			std::string_view rep = tok.substr(caret + 1);
			if (!rep.empty() && rep.front() == '(' && rep.back() == ')')
				rep = rep.substr(1, rep.size() - 2);
			auto r2 = std::from_chars(rep.data(), rep.data() + rep.size(), repeat);
			if (r2.ec != std::errc{} || repeat < 1)
				throw ShapeError("bad repeat in '" + std::string(tok) + "'");
		}
		for (int k = 0; k < repeat; ++k)
			dims.push_back(width);
	}
	return Architecture(std::move(dims));
}

int Architecture::total_neurons() const
{
	int n = 0;
	for (int i = 1; i <= hidden_layers(); ++i)
		n += dims_[static_cast<std::size_t>(i)];
	return n;
}

std::string Architecture::to_string() const
{
	std::ostringstream os;
	for (std::size_t k = 0; k < dims_.size(); ++k)
		os << (k ? "-" : "") << dims_[k];
	return os.str();
}

Network::Network(Architecture arch, std::vector<Layer> layers, NetworkInfo info)
    : arch_(std::move(arch)), layers_(std::move(layers)), info_(std::move(info))
{
	const auto& dims = arch_.dims();
	if (layers_.size() + 1 != dims.size())
		throw ShapeError("layer count does not match architecture");
	for (std::size_t i = 0; i < layers_.size(); ++i) {
		const Layer& l = layers_[i];
		if (l.weights.rows() != dims[i + 1] || l.weights.cols() != dims[i] || l.bias.size() != dims[i + 1])
			throw ShapeError("layer " + std::to_string(i + 1) + " has shape inconsistent with " + arch_.to_string());
		if (!l.weights.allFinite() || !l.bias.allFinite())
			throw ShapeError("layer " + std::to_string(i + 1) + " contains non-finite values");
	}
}

CriticalAtAnchor::CriticalAtAnchor(NeuronId id, double v)
    : std::runtime_error("neuron (" + std::to_string(id.layer) + "," + std::to_string(id.index) +
                         ") is critical at the anchor"),
      neuron(id), value(v)
{
}

Vec affine(const Layer& layer, const Vec& x)
{
	const Eigen::Index rows = layer.weights.rows(), cols = layer.weights.cols();
	if (x.size() != cols)
		throw ShapeError("input of length " + std::to_string(x.size()) + ", expected " + std::to_string(cols));
	Vec out(rows);
	const double* w = layer.weights.data();
	const double* xv = x.data();
	for (Eigen::Index i = 0; i < rows; ++i) {
		const double* row = w + i * cols;
		double s = 0.0;
		for (Eigen::Index j = 0; j < cols; ++j)
			s += row[j] * xv[j];
		out(i) = s + layer.bias(i);
	}
	return out;
}

void relu_inplace(Vec& v)
{
	for (Eigen::Index k = 0; k < v.size(); ++k)
		if (!(v(k) > 0.0))
			v(k) = 0.0;
}

Vec evaluate(const Network& net, const Vec& x)
{
	if (x.size() != net.arch().input_dim())
		throw ShapeError("query has " + std::to_string(x.size()) + " entries, network expects " +
		                 std::to_string(net.arch().input_dim()));
	Vec h = x;
	const auto& layers = net.layers();
	for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
		h = affine(layers[i], h);
		relu_inplace(h);
	}
	return affine(layers.back(), h);
}

ForwardTrace trace(const Network& net, const Vec& x)
{
	ForwardTrace t;
	Vec h = x;
	const auto& layers = net.layers();
	for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
		h = affine(layers[i], h);
		t.pre.push_back(h);
		relu_inplace(h);
	}
	t.output = affine(layers.back(), h);
	return t;
}

namespace {

void check_id(const Network& net, NeuronId id)
{
	const int r = net.arch().hidden_layers();
	if (id.layer < 1 || id.layer > r || id.index < 0 || id.index >= net.arch().width(id.layer))
		throw ShapeError("neuron id out of range");
}

// |w_j| |input| + |b_j|: the magnitude of the terms that cancel at a hinge.
double preactivation_scale(const Layer& layer, int j, const Vec& input)
{
	return layer.weights.row(j).norm() * input.norm() + std::abs(layer.bias(j));
}

}  // namespace

double neuron_value(const Network& net, NeuronId id, const Vec& x)
{
	check_id(net, id);
	const Vec h = id.layer > 1 ? forward_hidden(net.prefix(id.layer - 1), x) : x;
	const Layer& l = net.layer(id.layer);
	if (h.size() != l.weights.cols())
		throw ShapeError("input dimension mismatch");
	double s = 0.0;
	for (Eigen::Index j = 0; j < h.size(); ++j)
		s += l.weights(id.index, j) * h(j);
	return s + l.bias(id.index);
}

NeuronState neuron_state(const Network& net, NeuronId id, const Vec& x)
{
	const double v = neuron_value(net, id, x);
	const Vec h = id.layer > 1 ? forward_hidden(net.prefix(id.layer - 1), x) : x;
	const double tol = kCritTol * std::max(1e-300, preactivation_scale(net.layer(id.layer), id.index, h));
	if (std::abs(v) <= tol)
		return NeuronState::Critical;
	return v > 0 ? NeuronState::Active : NeuronState::Inactive;
}

Vec forward_hidden(std::span<const Layer> layers, const Vec& x)
{
	Vec h = x;
	for (const Layer& l : layers) {
		h = affine(l, h);
		relu_inplace(h);
	}
	return h;
}

Tangent forward_tangent(std::span<const Layer> layers, const Vec& x, const Vec& u)
{
	Tangent t{x, u};
	for (const Layer& l : layers) {
		Vec z = affine(l, t.value);
		Vec dz = l.weights * t.slope;
		for (Eigen::Index k = 0; k < z.size(); ++k) {
			// at an exact zero the direction decides which side we move into
			const bool on = z(k) > 0.0 || (z(k) == 0.0 && dz(k) > 0.0);
			if (!on) {
				z(k) = 0.0;
				dz(k) = 0.0;
			}
		}
		t.value = std::move(z);
		t.slope = std::move(dz);
	}
	return t;
}

std::vector<std::vector<std::uint8_t>> activation_masks(std::span<const Layer> layers, const Vec& x, double crit_tol)
{
	std::vector<std::vector<std::uint8_t>> masks;
	masks.reserve(layers.size());
	Vec h = x;
	int layer_no = 1;
	for (const Layer& l : layers) {
		Vec z = affine(l, h);
		std::vector<std::uint8_t> m(static_cast<std::size_t>(z.size()));
		const double hn = h.norm();
		for (Eigen::Index k = 0; k < z.size(); ++k) {
			if (crit_tol > 0.0) {
				const double scale = l.weights.row(k).norm() * hn + std::abs(l.bias(k));
				if (std::abs(z(k)) <= crit_tol * scale)
					throw CriticalAtAnchor({layer_no, static_cast<int>(k)}, z(k));
			}
			m[static_cast<std::size_t>(k)] = z(k) > 0.0;
		}
		relu_inplace(z);
		h = std::move(z);
		masks.push_back(std::move(m));
		++layer_no;
	}
	return masks;
}

CollapsedAffine collapse(std::span<const Layer> layers, const Vec& x, double crit_tol)
{
	CollapsedAffine c;
	c.anchor = x;
	const Eigen::Index d0 = x.size();
	if (layers.empty()) {
		c.gamma = Mat::Identity(d0, d0);
		c.beta = Vec::Zero(d0);
		return c;
	}
	c.masks = activation_masks(layers, x, crit_tol);

	// Work only on active rows: g holds the rows of gamma for act_prev.
	std::vector<int> act_prev;
	Mat g;
	Vec b;
	for (std::size_t li = 0; li < layers.size(); ++li) {
		const Layer& l = layers[li];
		std::vector<int> act = active_indices(c.masks[li]);
		if (li == 0) {
			g = l.weights(act, Eigen::all);
			b = l.bias(act);
		} else {
			const Mat a = l.weights(act, act_prev);
			g = a * g;
			b = a * b + l.bias(act);
		}
		act_prev = std::move(act);
	}
	const Eigen::Index dl = layers.back().weights.rows();
	c.gamma = Mat::Zero(dl, d0);
	c.beta = Vec::Zero(dl);
	for (std::size_t k = 0; k < act_prev.size(); ++k) {
		c.gamma.row(act_prev[k]) = g.row(static_cast<Eigen::Index>(k));
		c.beta(act_prev[k]) = b(static_cast<Eigen::Index>(k));
	}
	return c;
}

CollapsedAffine collapse_prefix(const Network& net, int upto_layer, const Vec& x)
{
	if (upto_layer < 0 || upto_layer > net.arch().hidden_layers())
		throw ShapeError("collapse_prefix: layer out of range");
	if (x.size() != net.arch().input_dim())
		throw ShapeError("collapse_prefix: input dimension mismatch");
	return collapse(net.prefix(upto_layer), x);
}

CollapsedAffine collapse_suffix(const Network& net, int from_layer, const Vec& x)
{
	const int r = net.arch().hidden_layers();
	if (from_layer < 0 || from_layer > r)
		throw ShapeError("collapse_suffix: layer out of range");
	auto all = activation_masks(net.hidden(), x);
	CollapsedAffine c;
	c.anchor = x;
	Mat g = net.layer(r + 1).weights;
	for (int l = r; l > from_layer; --l) {
		const auto act = active_indices(all[static_cast<std::size_t>(l - 1)]);
		const Mat a = net.layer(l).weights(act, Eigen::all);
		g = g(Eigen::all, act) * a;
	}
	for (int l = from_layer + 1; l <= r; ++l)
		c.masks.push_back(all[static_cast<std::size_t>(l - 1)]);
	const Vec y = from_layer > 0 ? forward_hidden(net.prefix(from_layer), x) : x;
	c.beta = evaluate(net, x) - g * y;
	c.gamma = std::move(g);
	return c;
}

Vec pullback(std::span<const Layer> layers, const Vec& x, const Vec& r)
{
	if (layers.empty())
		return r;
	const auto masks = activation_masks(layers, x, 0.0);
	Vec g = r;
	for (std::size_t li = layers.size(); li-- > 0;) {
		const auto& m = masks[li];
		for (Eigen::Index k = 0; k < g.size(); ++k)
			if (!m[static_cast<std::size_t>(k)])
				g(k) = 0.0;
		g = layers[li].weights.transpose() * g;
	}
	return g;
}

ControlSpace space_of_control(std::span<const Layer> prefix, int input_dim, const Vec& x)
{
	ControlSpace cs;
	if (prefix.empty()) {
		cs.basis = Mat::Identity(input_dim, input_dim);
		cs.degrees = input_dim;
		cs.singular_values = Vec::Ones(input_dim);
		return cs;
	}
	const CollapsedAffine c = collapse(prefix, x);
	RangeBasis rb = column_space(c.gamma, kRankTol);
	cs.basis = std::move(rb.basis);
	cs.degrees = rb.rank;
	cs.singular_values = std::move(rb.singular_values);
	return cs;
}

ControlSpace space_of_control(const Network& net, int layer, const Vec& x)
{
	if (layer < 1 || layer > net.arch().hidden_layers() + 1)
		throw ShapeError("space_of_control: layer out of range");
	return space_of_control(net.prefix(layer - 1), net.arch().input_dim(), x);
}

RankProfiler::RankProfiler(const Network& net, double rel_tol)
    : net_(&net), tol_(rel_tol)
{
	const RowMat& a1 = net.layer(1).weights;
	first_gram_ = a1 * a1.transpose();
}

std::vector<int> RankProfiler::operator()(const Vec& x) const
{
	const Network& net = *net_;
	const int r = net.arch().hidden_layers();
	const auto masks = activation_masks(net.hidden(), x, 0.0);
	std::vector<int> ranks(static_cast<std::size_t>(r), 0);

	const auto act1 = active_indices(masks[0]);
	const int n1 = static_cast<int>(act1.size());
	bool independent = n1 <= net.arch().input_dim();
	if (independent && n1 > 0) {
		// rank via the Gram matrix squares the singular values
		const Mat g = first_gram_(act1, act1);
		independent = numerical_rank(g, tol_ * tol_) == n1;
	}
	if (!independent) {
		for (int i = 1; i <= r; ++i)
			ranks[static_cast<std::size_t>(i - 1)] = numerical_rank(collapse(net.prefix(i), x, 0.0).gamma, tol_);
		return ranks;
	}

	ranks[0] = n1;
	std::vector<int> act_prev = act1;
	Mat m = Mat::Identity(n1, n1);
	for (int i = 2; i <= r; ++i) {
		const auto act = active_indices(masks[static_cast<std::size_t>(i - 1)]);
		const Mat a = net.layer(i).weights(act, act_prev);
		m = a * m;
		ranks[static_cast<std::size_t>(i - 1)] = m.size() ? numerical_rank(m, tol_) : 0;
		act_prev = act;
	}
	return ranks;
}

std::vector<int> rank_profile(const Network& net, const Vec& x, double rel_tol)
{
	return RankProfiler(net, rel_tol)(x);
}

Network generate_unitary_balanced(const Architecture& arch, std::uint64_t seed, int calibration_samples)
{
	std::mt19937_64 wrng(derive_seed(seed, {1}));
	std::mt19937_64 crng(derive_seed(seed, {2}));
	std::normal_distribution<double> nd(0.0, 1.0);

	const int r = arch.hidden_layers();
	const int n = std::max(1, calibration_samples);
	Mat h(n, arch.input_dim());
	for (Eigen::Index i = 0; i < h.rows(); ++i)
		for (Eigen::Index j = 0; j < h.cols(); ++j)
			h(i, j) = nd(crng);

	auto unit_rows = [&](int rows, int cols) {
		RowMat w(rows, cols);
		for (int i = 0; i < rows; ++i) {
			for (int j = 0; j < cols; ++j)
				w(i, j) = nd(wrng);
			double norm = w.row(i).norm();
			while (norm == 0.0) {   // practically unreachable
				for (int j = 0; j < cols; ++j)
					w(i, j) = nd(wrng);
				norm = w.row(i).norm();
			}
			w.row(i) /= norm;
		}
		return w;
	};

	std::vector<Layer> layers;
	std::vector<double> column(static_cast<std::size_t>(n));
	for (int i = 1; i <= r; ++i) {
		Layer l;
		l.weights = unit_rows(arch.width(i), arch.width(i - 1));
		Mat pre = h * l.weights.transpose();
		l.bias.resize(arch.width(i));
		for (int j = 0; j < arch.width(i); ++j) {
			for (int s = 0; s < n; ++s)
				column[static_cast<std::size_t>(s)] = pre(s, j);
			const auto mid = column.begin() + n / 2;
			std::nth_element(column.begin(), mid, column.end());
			double median = *mid;
			if (n % 2 == 0)
				median = 0.5 * (median + *std::max_element(column.begin(), mid));
			l.bias(j) = -median;
		}
		pre.rowwise() += l.bias.transpose();
		h = pre.cwiseMax(0.0);
		layers.push_back(std::move(l));
	}
	Layer out;
	out.weights = unit_rows(arch.output_dim(), arch.width(r));
	out.bias = Vec::Zero(arch.output_dim());
	layers.push_back(std::move(out));

	NetworkInfo info;
	info.seed = seed;
	info.provenance = "unitary-balanced";
	return Network(arch, std::move(layers), std::move(info));
}

}  // namespace nnx
