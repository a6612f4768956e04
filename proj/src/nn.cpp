#include "lir/nn.hpp"

#include <cmath>
#include <random>
#include <string>

#include "lir/binary_io.hpp"
#include "lir/error.hpp"

namespace lir {

namespace {

constexpr std::uint16_t kNetVersion = 1;

void check_dims(const std::vector<int>& dims) {
  if (dims.size() < 2) throw DomainError("a net needs at least an input and an output dimension");
  for (int d : dims)
    if (d < 1) throw DomainError("layer dimensions must be positive");
}

}  // namespace

std::vector<ActivationVector> ForwardTrace::taps() const {
  std::vector<ActivationVector> out;
  out.reserve(hidden.size() + 1);
  for (std::size_t l = 0; l < hidden.size(); ++l)
    out.push_back({std::vector<double>(hidden[l].data(), hidden[l].data() + hidden[l].size()),
                   static_cast<int>(l)});
  out.push_back({std::vector<double>(logits.data(), logits.data() + logits.size()),
                 ActivationVector::kLogits});
  return out;
}

LayeredNet::LayeredNet(std::vector<int> dims) : dims_(std::move(dims)) {
  check_dims(dims_);
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l)
    layers_.push_back({Matrix::Zero(dims_[l + 1], dims_[l]), Vector::Zero(dims_[l + 1])});
}

LayeredNet LayeredNet::zeros(std::vector<int> dims) { return LayeredNet(std::move(dims)); }

LayeredNet::LayeredNet(std::vector<int> dims, std::uint64_t seed) : LayeredNet(std::move(dims)) {
  std::mt19937_64 rng(seed);
  for (auto& layer : layers_) {
    const double s = std::sqrt(6.0 / static_cast<double>(layer.weight.rows() + layer.weight.cols()));
    std::uniform_real_distribution<double> u(-s, s);
    // Row-major fill so the draw order matches the flat parameter order.
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = u(rng);
  }
}

std::size_t LayeredNet::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

ForwardTrace LayeredNet::forward(std::span<const double> x) const {
  if (x.size() != static_cast<std::size_t>(input_dim()))
    throw DomainError("input has dimension " + std::to_string(x.size()) + ", net expects " +
                      std::to_string(input_dim()));
  ForwardTrace trace;
  Vector a = Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size()));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Vector z = layers_[l].weight * a + layers_[l].bias;
    if (l + 1 == layers_.size()) {
      trace.logits = std::move(z);
    } else {
      a = z.cwiseMax(0.0);
      trace.hidden.push_back(a);
    }
  }
  return trace;
}

BatchTrace LayeredNet::forward_batch(const Matrix& x) const {
  if (x.rows() != input_dim())
    throw DomainError("batch has dimension " + std::to_string(x.rows()) + ", net expects " +
                      std::to_string(input_dim()));
  BatchTrace t;
  t.input = x;
  const Matrix* a = &t.input;
  t.post.reserve(num_hidden());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix z = layers_[l].weight * *a;
    z.colwise() += layers_[l].bias;
    t.pre.push_back(std::move(z));
    if (l + 1 < layers_.size()) {
      t.post.push_back(t.pre.back().cwiseMax(0.0));
      a = &t.post.back();
    }
  }
  return t;
}

NetGradient LayeredNet::backward(const BatchTrace& trace, const Matrix& d_logits,
                                 std::span<const Matrix> d_hidden) const {
  if (d_logits.rows() != output_dim() || d_logits.cols() != trace.input.cols())
    throw DomainError("logit gradient shape does not match the trace");
  if (!d_hidden.empty() && d_hidden.size() != num_hidden())
    throw DomainError("hidden gradient list must cover every hidden layer");
  NetGradient grad;
  grad.layers.resize(layers_.size());
  Matrix g = d_logits;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    if (l + 1 < layers_.size()) {
      if (!d_hidden.empty() && d_hidden[l].size() != 0) g += d_hidden[l];
      g = g.cwiseProduct((trace.pre[l].array() > 0.0).cast<double>().matrix());
    }
    const Matrix& in = l == 0 ? trace.input : trace.post[l - 1];
    grad.layers[l].weight = g * in.transpose();
    grad.layers[l].bias = g.rowwise().sum();
    g = layers_[l].weight.transpose() * g;
  }
  grad.d_input = std::move(g);
  return grad;
}

std::vector<double> flatten(const std::vector<DenseLayer>& layers) {
  std::vector<double> p;
  for (const auto& l : layers) {
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) p.push_back(l.weight(i, j));
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) p.push_back(l.bias(i));
  }
  return p;
}

std::vector<double> LayeredNet::flat_parameters() const { return flatten(layers_); }

void LayeredNet::set_flat_parameters(std::span<const double> p) {
  if (p.size() != parameter_count())
    throw DomainError("expected " + std::to_string(parameter_count()) + " parameters, got " +
                      std::to_string(p.size()));
  std::size_t k = 0;
  for (auto& l : layers_) {
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) l.weight(i, j) = p[k++];
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = p[k++];
  }
}

double cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix& d_logits) {
  const auto n = logits.cols();
  if (static_cast<std::size_t>(n) != labels.size()) throw DomainError("logits and labels are not aligned");
  if (n == 0) throw DomainError("cross-entropy of an empty batch");
  d_logits.resize(logits.rows(), n);
  double total = 0.0;
  std::vector<double> col(static_cast<std::size_t>(logits.rows()));
  std::vector<double> p;
  for (Eigen::Index j = 0; j < n; ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    if (y < 0 || y >= logits.rows()) throw DomainError("class label out of range");
    for (Eigen::Index i = 0; i < logits.rows(); ++i) col[static_cast<std::size_t>(i)] = logits(i, j);
    total += log_sum_exp(col) - logits(y, j);
    softmax(col, Temperature{}, p);
    for (Eigen::Index i = 0; i < logits.rows(); ++i)
      d_logits(i, j) = (p[static_cast<std::size_t>(i)] - (i == y ? 1.0 : 0.0)) / static_cast<double>(n);
  }
  return total / static_cast<double>(n);
}

namespace {

std::vector<DenseLayer> zeros_like(const std::vector<DenseLayer>& params) {
  std::vector<DenseLayer> z;
  for (const auto& p : params)
    z.push_back({Matrix::Zero(p.weight.rows(), p.weight.cols()), Vector::Zero(p.bias.size())});
  return z;
}

void check_shapes(const std::vector<DenseLayer>& params, const std::vector<DenseLayer>& grads) {
  if (params.size() != grads.size()) throw DomainError("gradient does not match the parameter list");
  for (std::size_t l = 0; l < params.size(); ++l)
    if (params[l].weight.rows() != grads[l].weight.rows() ||
        params[l].weight.cols() != grads[l].weight.cols() || params[l].bias.size() != grads[l].bias.size())
      throw DomainError("gradient shape mismatch at layer " + std::to_string(l));
}

}  // namespace

void MomentumSgd::step(std::vector<DenseLayer>& params, const std::vector<DenseLayer>& grads) {
  check_shapes(params, grads);
  if (velocity_.empty()) velocity_ = zeros_like(params);
  for (std::size_t l = 0; l < params.size(); ++l) {
    velocity_[l].weight = momentum_ * velocity_[l].weight + grads[l].weight;
    velocity_[l].bias = momentum_ * velocity_[l].bias + grads[l].bias;
    params[l].weight -= lr_ * velocity_[l].weight;
    params[l].bias -= lr_ * velocity_[l].bias;
  }
}

void sgd_step(LayeredNet& net, const NetGradient& grads, double lr, double momentum,
              std::vector<DenseLayer>& velocity) {
  check_shapes(net.layers(), grads.layers);
  if (velocity.empty()) velocity = zeros_like(net.layers());
  auto& params = net.layers();
  for (std::size_t l = 0; l < params.size(); ++l) {
    velocity[l].weight = momentum * velocity[l].weight + grads.layers[l].weight;
    velocity[l].bias = momentum * velocity[l].bias + grads.layers[l].bias;
    params[l].weight -= lr * velocity[l].weight;
    params[l].bias -= lr * velocity[l].bias;
  }
}

void Adam::step(std::vector<DenseLayer>& params, const std::vector<DenseLayer>& grads) {
  check_shapes(params, grads);
  if (m_.empty()) {
    m_ = zeros_like(params);
    v_ = zeros_like(params);
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  };
  for (std::size_t l = 0; l < params.size(); ++l) {
    update(params[l].weight, grads[l].weight, m_[l].weight, v_[l].weight);
    update(params[l].bias, grads[l].bias, m_[l].bias, v_[l].bias);
  }
}

void write_net_body(io::ByteWriter& w, const LayeredNet& net) {
  w.u32(static_cast<std::uint32_t>(net.num_affine()));
  for (int d : net.dims()) w.u32(static_cast<std::uint32_t>(d));
  w.f64s(net.flat_parameters());
}

LayeredNet read_net_body(io::ByteReader& r) {
  const auto at = r.offset();
  const std::uint32_t n_layers = r.u32();
  if (n_layers == 0 || n_layers > 1024)
    throw IoError(IoErrorCode::kCorrupt, "implausible layer count " + std::to_string(n_layers), at);
  std::vector<int> dims;
  for (std::uint32_t i = 0; i <= n_layers; ++i) {
    const auto d_at = r.offset();
    const std::uint32_t d = r.u32();
    if (d == 0 || d > (1u << 24))
      throw IoError(IoErrorCode::kCorrupt, "implausible layer dimension " + std::to_string(d), d_at);
    dims.push_back(static_cast<int>(d));
  }
  auto net = LayeredNet::zeros(std::move(dims));
  net.set_flat_parameters(r.f64s(net.parameter_count()));
  return net;
}

void save_net(const LayeredNet& net, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.magic("LIRN");
  w.u16(kNetVersion);
  write_net_body(w, net);
  w.save(path);
}

LayeredNet load_net(const std::filesystem::path& path) {
  auto r = io::ByteReader::from_file(path);
  r.expect_magic("LIRN");
  const auto at = r.offset();
  if (const auto v = r.u16(); v != kNetVersion)
    throw IoError(IoErrorCode::kUnsupportedVersion, "unsupported net checkpoint version " + std::to_string(v), at);
  auto net = read_net_body(r);
  r.expect_end();
  return net;
}

Matrix columns_from_rows(std::span<const double> rows, std::size_t d) {
  if (d == 0 || rows.size() % d != 0) throw DomainError("row buffer is not a multiple of the row width");
  const auto n = rows.size() / d;
  Matrix m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < d; ++i) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[j * d + i];
  return m;
}

}  // namespace lir
