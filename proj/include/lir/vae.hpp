#pragma once

#include <cstdint>

#include "lir/nn.hpp"

namespace lir {

struct VaeConfig {
  int hidden = 16;
  int latent = 4;
  double kl_weight = 1.0;
  int epochs = 200;
  int batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

/// Gaussian VAE built from two LayeredNets. The encoder's output is the
/// concatenation (mu, log sigma^2); the decoder output is linear.
class Vae {
 public:
  Vae() = default;
  Vae(int input_dim, const VaeConfig& cfg);
  Vae(LayeredNet encoder, LayeredNet decoder);

  int input_dim() const { return encoder_.input_dim(); }
  int latent_dim() const { return decoder_.input_dim(); }
  LayeredNet& encoder() noexcept { return encoder_; }
  LayeredNet& decoder() noexcept { return decoder_; }
  const LayeredNet& encoder() const noexcept { return encoder_; }
  const LayeredNet& decoder() const noexcept { return decoder_; }

  /// Decoder output at the posterior mean latent.
  Vector reconstruct(std::span<const double> x) const;

 private:
  LayeredNet encoder_;
  LayeredNet decoder_;
};

struct VaeGradient {
  double loss = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
  NetGradient encoder;
  NetGradient decoder;
};

/// Mean negative ELBO over the columns of `x`, with 0.5 * squared error as the
/// reconstruction term, and its exact gradient. `noise` holds the
/// reparameterisation draws (latent x batch).
VaeGradient elbo_grad(const Vae& vae, const Matrix& x, const Matrix& noise, double kl_weight);

}  // namespace lir
