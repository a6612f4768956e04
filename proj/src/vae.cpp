#include "lir/vae.hpp"

#include "lir/error.hpp"

namespace lir {

Vae::Vae(int input_dim, const VaeConfig& cfg)
    : encoder_({input_dim, cfg.hidden, 2 * cfg.latent}, cfg.seed),
      decoder_({cfg.latent, cfg.hidden, input_dim}, cfg.seed + 1) {}

Vae::Vae(LayeredNet encoder, LayeredNet decoder)
    : encoder_(std::move(encoder)), decoder_(std::move(decoder)) {
  if (encoder_.output_dim() != 2 * decoder_.input_dim() || decoder_.output_dim() != encoder_.input_dim())
    throw DomainError("encoder and decoder shapes are inconsistent");
}

Vector Vae::reconstruct(std::span<const double> x) const {
  const auto enc = encoder_.forward(x);
  const Vector mu = enc.logits.head(latent_dim());
  return decoder_.forward(std::span<const double>(mu.data(), static_cast<std::size_t>(mu.size()))).logits;
}

VaeGradient elbo_grad(const Vae& vae, const Matrix& x, const Matrix& noise, double kl_weight) {
  const auto k = vae.latent_dim();
  const auto n = x.cols();
  if (n == 0) throw DomainError("empty VAE batch");
  if (noise.rows() != k || noise.cols() != n) throw DomainError("noise shape does not match latent x batch");
  const double inv_n = 1.0 / static_cast<double>(n);

  const auto enc = vae.encoder().forward_batch(x);
  const Matrix mu = enc.logits().topRows(k);
  const Matrix logvar = enc.logits().bottomRows(k);
  const Matrix sigma = (0.5 * logvar.array()).exp().matrix();
  const Matrix z = mu + sigma.cwiseProduct(noise);
  const auto dec = vae.decoder().forward_batch(z);
  const Matrix diff = dec.logits() - x;

  VaeGradient out;
  out.reconstruction = 0.5 * diff.squaredNorm() * inv_n;
  out.kl = -0.5 * (1.0 + logvar.array() - mu.array().square() - logvar.array().exp()).sum() * inv_n;
  out.loss = out.reconstruction + kl_weight * out.kl;

  out.decoder = vae.decoder().backward(dec, diff * inv_n);
  const Matrix& dz = out.decoder.d_input;
  Matrix d_enc(2 * k, n);
  d_enc.topRows(k) = dz + kl_weight * inv_n * mu;
  d_enc.bottomRows(k) = (dz.array() * noise.array() * 0.5 * sigma.array() +
                         kl_weight * inv_n * 0.5 * (logvar.array().exp() - 1.0))
                            .matrix();
  out.encoder = vae.encoder().backward(enc, d_enc);
  return out;
}

}  // namespace lir
