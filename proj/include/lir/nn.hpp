#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lir/energy.hpp"

namespace lir {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// One affine map. `weight` is (out x in).
struct DenseLayer {
  Matrix weight;
  Vector bias;
};

/// Activations of a single sample: post-ReLU hidden vectors, then logits.
struct ForwardTrace {
  std::vector<Vector> hidden;
  Vector logits;

  /// Hidden layers 0..H-1 followed by the logits, ready for energy_vector().
  std::vector<ActivationVector> taps() const;
};

/// Batched forward pass. Samples are columns.
struct BatchTrace {
  Matrix input;
  std::vector<Matrix> pre;   // pre-activation of every affine layer
  std::vector<Matrix> post;  // post-ReLU output of every hidden layer
  const Matrix& logits() const { return pre.back(); }
  std::size_t batch_size() const noexcept { return static_cast<std::size_t>(input.cols()); }
};

/// Parameter gradient with the same shapes as the net.
struct NetGradient {
  std::vector<DenseLayer> layers;
  Matrix d_input;
};

/// Feedforward classifier: affine layers with ReLU on all but the last.
/// Every hidden activation is a tap for the per-layer energy.
class LayeredNet {
 public:
  LayeredNet() = default;
  /// Uniform(-s, s) weights with s = sqrt(6 / (d_in + d_out)), zero biases.
  LayeredNet(std::vector<int> dims, std::uint64_t seed);
  static LayeredNet zeros(std::vector<int> dims);

  const std::vector<int>& dims() const noexcept { return dims_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  std::size_t num_affine() const noexcept { return layers_.size(); }
  std::size_t num_hidden() const noexcept { return layers_.empty() ? 0 : layers_.size() - 1; }
  /// Hidden layers plus the logits.
  std::size_t num_taps() const noexcept { return layers_.size(); }
  std::size_t parameter_count() const noexcept;

  std::vector<DenseLayer>& layers() noexcept { return layers_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

  ForwardTrace forward(std::span<const double> x) const;
  BatchTrace forward_batch(const Matrix& x) const;

  /// Reverse pass. `d_logits` is dLoss/dlogits; `d_hidden[l]`, when non-empty,
  /// is an extra dLoss/d(post-ReLU hidden l) injected at that tap.
  NetGradient backward(const BatchTrace& trace, const Matrix& d_logits,
                       std::span<const Matrix> d_hidden = {}) const;

  /// Parameters in declaration order: per layer, weight row-major then bias.
  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> p);

 private:
  explicit LayeredNet(std::vector<int> dims);
  std::vector<int> dims_;
  std::vector<DenseLayer> layers_;
};

std::vector<double> flatten(const std::vector<DenseLayer>& layers);

/// Mean cross-entropy over the columns of `logits`; writes dLoss/dlogits
/// (already divided by the batch size) into `d_logits`.
double cross_entropy(const Matrix& logits, std::span<const int> labels, Matrix& d_logits);

/// p <- p - lr * v with v <- momentum * v + g.
class MomentumSgd {
 public:
  MomentumSgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {}
  void step(std::vector<DenseLayer>& params, const std::vector<DenseLayer>& grads);

 private:
  double lr_;
  double momentum_;
  std::vector<DenseLayer> velocity_;
};

/// One-shot form of MomentumSgd for callers that keep their own velocity.
void sgd_step(LayeredNet& net, const NetGradient& grads, double lr, double momentum,
              std::vector<DenseLayer>& velocity);

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(std::vector<DenseLayer>& params, const std::vector<DenseLayer>& grads);

 private:
  double lr_, beta1_, beta2_, eps_;
  long steps_ = 0;
  std::vector<DenseLayer> m_, v_;
};

void save_net(const LayeredNet& net, const std::filesystem::path& path);
LayeredNet load_net(const std::filesystem::path& path);

namespace io {
class ByteWriter;
class ByteReader;
}  // namespace io
/// Layer count u32, dims as u32, then parameters as f64 (no magic).
void write_net_body(io::ByteWriter& w, const LayeredNet& net);
LayeredNet read_net_body(io::ByteReader& r);

/// Converts `n` contiguous rows of width `d` into a (d x n) column matrix.
Matrix columns_from_rows(std::span<const double> rows, std::size_t d);

}  // namespace lir
