#include "lir/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "lir/binary_io.hpp"
#include "lir/energy.hpp"
#include "lir/error.hpp"
#include "lir/metrics.hpp"

namespace lir {

namespace {

constexpr std::uint16_t kDetectorVersion = 1;
constexpr double kMinReciprocalCondition = 1e-10;

void check_dim(std::span<const double> v, std::size_t expected) {
  if (v.size() != expected)
    throw DomainError("energy vector has length " + std::to_string(v.size()) + ", detector expects " +
                      std::to_string(expected));
}

Vector as_vector(std::span<const double> v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::string to_string(DetectorKind kind) {
  switch (kind) {
    case DetectorKind::kEboLogits: return "ebo";
    case DetectorKind::kLayerEnergy: return "layer_energy";
    case DetectorKind::kMahalanobis: return "ag_md";
    case DetectorKind::kKnn: return "ag_knn";
    case DetectorKind::kVae: return "ag_vae";
    case DetectorKind::kMsp: return "msp";
  }
  return "unknown";
}

Verdict classify(Orientation o, double score, double threshold) {
  const bool id = o.high_is_id ? score >= threshold : score <= threshold;
  return id ? Verdict::kId : Verdict::kOod;
}

Verdict classify(const Detector& d, double score, double threshold) {
  return classify(d.orientation(), score, threshold);
}

Detector Detector::ebo_logits(std::size_t num_taps) { return {DetectorKind::kEboLogits, {true}, num_taps}; }

Detector Detector::msp(std::size_t num_classes) { return {DetectorKind::kMsp, {true}, num_classes}; }

Detector Detector::layer_energy(std::size_t layer, std::size_t num_taps, Orientation o) {
  if (layer >= num_taps) throw DomainError("layer " + std::to_string(layer) + " is not one of the taps");
  Detector d{DetectorKind::kLayerEnergy, o, num_taps};
  d.layer_ = layer;
  return d;
}

Detector Detector::mahalanobis(MahalanobisState state) {
  if (state.means.empty() || state.means.size() != state.inv_covs.size())
    throw DomainError("Mahalanobis state needs one mean and one inverse covariance per class");
  const auto dim = static_cast<std::size_t>(state.means.front().size());
  for (std::size_t c = 0; c < state.means.size(); ++c)
    if (static_cast<std::size_t>(state.means[c].size()) != dim ||
        static_cast<std::size_t>(state.inv_covs[c].rows()) != dim ||
        static_cast<std::size_t>(state.inv_covs[c].cols()) != dim)
      throw DomainError("Mahalanobis class " + std::to_string(c) + " has inconsistent dimensions");
  Detector d{DetectorKind::kMahalanobis, {false}, dim};
  d.state_ = std::move(state);
  return d;
}

Detector Detector::knn(KnnState state, std::size_t dim) {
  if (dim == 0 || state.refs.size() != state.n * dim) throw DomainError("KNN reference set has the wrong size");
  if (state.k < 1 || state.k > state.n)
    throw FitError("K = " + std::to_string(state.k) + " must lie in [1, " + std::to_string(state.n) + "]");
  Detector d{DetectorKind::kKnn, {false}, dim};
  d.state_ = std::move(state);
  return d;
}

Detector Detector::vae(VaeState state) {
  const auto dim = static_cast<std::size_t>(state.vae.input_dim());
  if (static_cast<std::size_t>(state.mean.size()) != dim || static_cast<std::size_t>(state.scale.size()) != dim)
    throw DomainError("VAE standardisation does not match its input dimension");
  Detector d{DetectorKind::kVae, {false}, dim};
  d.state_ = std::move(state);
  return d;
}

Detector Detector::with_threshold(double t) const {
  Detector d = *this;
  d.threshold_ = t;
  return d;
}

const MahalanobisState& Detector::md_state() const { return std::get<MahalanobisState>(state_); }
const KnnState& Detector::knn_state() const { return std::get<KnnState>(state_); }
const VaeState& Detector::vae_state() const { return std::get<VaeState>(state_); }

double Detector::score_activations(std::span<const double> acts) const {
  switch (kind_) {
    case DetectorKind::kEboLogits:
    case DetectorKind::kLayerEnergy: return -free_energy(acts);
    case DetectorKind::kMsp:
      if (acts.size() != dim_)
        throw DomainError("msp expects " + std::to_string(dim_) + " logits, got " + std::to_string(acts.size()));
      return msp_score(acts);
    default: throw DomainError(to_string(kind_) + " detectors score energy vectors, not activations");
  }
}

double Detector::score_energies(std::span<const double> e) const {
  if (kind_ == DetectorKind::kMsp) throw DomainError("msp needs logits; energy vectors do not carry them");
  check_dim(e, dim_);
  for (double x : e)
    if (!std::isfinite(x)) throw DomainError("energy vector has a non-finite entry");
  switch (kind_) {
    case DetectorKind::kEboLogits: return -e[dim_ - 1];
    case DetectorKind::kLayerEnergy: return -e[layer_];
    case DetectorKind::kMahalanobis: {
      const auto& s = std::get<MahalanobisState>(state_);
      const Vector x = as_vector(e);
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < s.means.size(); ++c) {
        const Vector d = x - s.means[c];
        best = std::min(best, std::sqrt(std::max(0.0, d.dot(s.inv_covs[c] * d))));
      }
      return best;
    }
    case DetectorKind::kKnn: {
      const auto& s = std::get<KnnState>(state_);
      std::vector<double> dist(s.n);
      for (std::size_t i = 0; i < s.n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) {
          const double d = e[j] - s.refs[i * dim_ + j];
          acc += d * d;
        }
        dist[i] = std::sqrt(acc);
      }
      std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(s.k), dist.end());
      double sum = 0.0;
      for (std::size_t i = 0; i < s.k; ++i) sum += dist[i];
      return sum / static_cast<double>(s.k);
    }
    case DetectorKind::kVae: {
      const auto& s = std::get<VaeState>(state_);
      const Vector z = (as_vector(e) - s.mean).cwiseQuotient(s.scale);
      const Vector r = s.vae.reconstruct(std::span<const double>(z.data(), static_cast<std::size_t>(z.size())));
      return (z - r).norm();
    }
    case DetectorKind::kMsp: break;
  }
  throw DomainError("unknown detector kind");
}

std::vector<double> Detector::score_rows(const EnergyMatrix& m) const {
  if (m.l != dim_)
    throw DomainError("energy matrix has " + std::to_string(m.l) + " columns, detector expects " +
                      std::to_string(dim_));
  std::vector<double> out(m.n);
  for (std::size_t i = 0; i < m.n; ++i) out[i] = score_energies(m.row(i));
  return out;
}

Matrix regularized_inverse(const Matrix& cov) {
  const auto l = cov.rows();
  if (l == 0 || cov.cols() != l) throw FitError("covariance must be square and non-empty");
  if (!cov.allFinite()) throw FitError("covariance has non-finite entries");
  const Matrix sym = 0.5 * (cov + cov.transpose());
  const double tr = sym.trace();
  const double unit = tr / static_cast<double>(l);
  for (double eps : {0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2}) {
    Matrix s = sym;
    if (eps > 0.0) {
      if (!(unit > 0.0)) break;
      s.diagonal().array() += eps * unit;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(s, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) continue;
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || lo < kMinReciprocalCondition * hi) continue;
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success) continue;
    Matrix inv = llt.solve(Matrix::Identity(l, l));
    return 0.5 * (inv + inv.transpose());
  }
  throw FitError("covariance is singular even after regularisation up to 1e-2");
}

Detector md_from_moments(const std::vector<Vector>& means, const std::vector<Matrix>& covs) {
  if (means.size() != covs.size()) throw DomainError("need one covariance per class mean");
  MahalanobisState s;
  s.means = means;
  for (const auto& c : covs) s.inv_covs.push_back(regularized_inverse(c));
  return Detector::mahalanobis(std::move(s));
}

Detector fit_md(const EnergyMatrix& train) {
  train.validate();
  if (train.l < 1) throw FitError("energy matrix has no columns");
  if (!train.class_labels) throw FitError("Mahalanobis fit needs class labels");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < train.n; ++i) by_class[(*train.class_labels)[i]].push_back(i);
  if (by_class.empty()) throw FitError("no training rows");
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  const auto l = static_cast<Eigen::Index>(train.l);
  for (const auto& [c, rows] : by_class) {
    if (rows.size() < 2)
      throw FitError("class " + std::to_string(c) + " has " + std::to_string(rows.size()) + " sample(s), need 2");
    Vector mu = Vector::Zero(l);
    for (auto r : rows) mu += as_vector(train.row(r));
    mu /= static_cast<double>(rows.size());
    Matrix cov = Matrix::Zero(l, l);
    for (auto r : rows) {
      const Vector d = as_vector(train.row(r)) - mu;
      cov.noalias() += d * d.transpose();
    }
    cov /= static_cast<double>(rows.size() - 1);
    means.push_back(std::move(mu));
    covs.push_back(std::move(cov));
  }
  return md_from_moments(means, covs);
}

std::size_t default_knn_k(std::size_t n_train) { return std::max<std::size_t>(1, std::min<std::size_t>(50, n_train / 10)); }

Detector fit_knn(const EnergyMatrix& train, std::optional<std::size_t> k) {
  train.validate();
  if (train.l < 1) throw FitError("energy matrix has no columns");
  KnnState s;
  s.n = train.n;
  s.k = k.value_or(default_knn_k(train.n));
  s.refs = train.values;
  return Detector::knn(std::move(s), train.l);
}

Detector fit_vae(const EnergyMatrix& train, const VaeConfig& cfg) {
  train.validate();
  if (train.n < 16) throw FitError("VAE fit needs at least 16 samples, got " + std::to_string(train.n));
  if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.latent < 1 || cfg.hidden < 1)
    throw FitError("invalid VAE configuration");
  const auto l = static_cast<Eigen::Index>(train.l);
  Matrix x = columns_from_rows(train.values, train.l);

  VaeState state;
  state.mean = x.rowwise().mean();
  state.scale.resize(l);
  for (Eigen::Index i = 0; i < l; ++i) {
    const double var = (x.row(i).array() - state.mean(i)).square().mean();
    state.scale(i) = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  x = (x.colwise() - state.mean).array().colwise() / state.scale.array();

  state.vae = Vae(static_cast<int>(l), cfg);
  Adam enc_opt(cfg.lr), dec_opt(cfg.lr);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<std::size_t> order(train.n);
  std::iota(order.begin(), order.end(), 0);
  const auto b = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < train.n; lo += b) {
      const std::size_t hi = std::min(lo + b, train.n);
      Matrix batch(l, static_cast<Eigen::Index>(hi - lo));
      for (std::size_t j = lo; j < hi; ++j) batch.col(static_cast<Eigen::Index>(j - lo)) = x.col(static_cast<Eigen::Index>(order[j]));
      Matrix noise(cfg.latent, batch.cols());
      for (Eigen::Index j = 0; j < noise.cols(); ++j)
        for (Eigen::Index i = 0; i < noise.rows(); ++i) noise(i, j) = unit(rng);
      const auto g = elbo_grad(state.vae, batch, noise, cfg.kl_weight);
      if (!std::isfinite(g.loss))
        throw FitError("VAE loss became non-finite at epoch " + std::to_string(epoch));
      enc_opt.step(state.vae.encoder().layers(), g.encoder.layers);
      dec_opt.step(state.vae.decoder().layers(), g.decoder.layers);
    }
  }
  return Detector::vae(std::move(state));
}

BhlResult bhl(const EnergyMatrix& id, const EnergyMatrix& ood, bool include_logits) {
  if (id.l != ood.l) throw StructuralError("ID and OoD matrices have different layer counts");
  if (id.n == 0 || ood.n == 0) throw DomainError("BHL needs at least one ID and one OoD sample");
  const std::size_t cols = include_logits ? id.l : id.l - 1;
  if (cols == 0) throw StructuralError("no hidden layers to evaluate");
  BhlResult r;
  bool have = false;
  for (std::size_t c = 0; c < cols; ++c) {
    const auto counts = pair_counts(id.column(c), ood.column(c));
    const double raw = counts.auroc();
    const double flipped = counts.flipped().auroc();
    // flipped and 1 - raw are the same number but may round apart by an
    // ulp; taking both keeps max(a, 1 - a) <= oriented exact in either form.
    const double oriented = std::max({raw, flipped, 1.0 - raw});
    r.per_layer_auroc.push_back(raw);
    r.per_layer_oriented.push_back(oriented);
    if (!have || oriented > r.oriented_auroc) {
      have = true;
      r.best_layer = c;
      r.oriented_auroc = oriented;
      r.orientation.high_is_id = raw > flipped;
    }
  }
  return r;
}

Detector bhl_detector(const BhlResult& r, std::size_t num_taps) {
  // The detector scores -E, so its orientation is the opposite of the raw
  // energy's.
  return Detector::layer_energy(r.best_layer, num_taps, Orientation{!r.orientation.high_is_id});
}

std::vector<std::uint8_t> encode_detector(const Detector& d) {
  io::ByteWriter w;
  w.magic("LIRD");
  w.u16(kDetectorVersion);
  w.u8(static_cast<std::uint8_t>(d.kind()));
  w.u8(d.orientation().high_is_id ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(d.dim()));
  switch (d.kind()) {
    case DetectorKind::kEboLogits:
    case DetectorKind::kMsp: break;
    case DetectorKind::kLayerEnergy: w.u32(static_cast<std::uint32_t>(d.layer())); break;
    case DetectorKind::kMahalanobis: {
      const auto& s = d.md_state();
      w.u32(static_cast<std::uint32_t>(s.means.size()));
      for (std::size_t c = 0; c < s.means.size(); ++c) {
        w.f64s(std::span<const double>(s.means[c].data(), static_cast<std::size_t>(s.means[c].size())));
        const auto& m = s.inv_covs[c];
        for (Eigen::Index i = 0; i < m.rows(); ++i)
          for (Eigen::Index j = 0; j < m.cols(); ++j) w.f64(m(i, j));
      }
      break;
    }
    case DetectorKind::kKnn: {
      const auto& s = d.knn_state();
      w.u32(static_cast<std::uint32_t>(s.k));
      w.u32(static_cast<std::uint32_t>(s.n));
      w.f64s(s.refs);
      break;
    }
    case DetectorKind::kVae: {
      const auto& s = d.vae_state();
      w.f64s(std::span<const double>(s.mean.data(), static_cast<std::size_t>(s.mean.size())));
      w.f64s(std::span<const double>(s.scale.data(), static_cast<std::size_t>(s.scale.size())));
      write_net_body(w, s.vae.encoder());
      write_net_body(w, s.vae.decoder());
      break;
    }
  }
  return w.bytes();
}

Detector read_detector(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect_magic("LIRD");
  auto at = r.offset();
  if (const auto v = r.u16(); v != kDetectorVersion)
    throw IoError(IoErrorCode::kUnsupportedVersion, "unsupported detector version " + std::to_string(v), at);
  at = r.offset();
  const auto kind_byte = r.u8();
  if (kind_byte > static_cast<std::uint8_t>(DetectorKind::kMsp))
    throw IoError(IoErrorCode::kCorrupt, "unknown detector kind " + std::to_string(kind_byte), at);
  const auto kind = static_cast<DetectorKind>(kind_byte);
  at = r.offset();
  const auto orient = r.u8();
  if (orient > 1) throw IoError(IoErrorCode::kCorrupt, "orientation byte must be 0 or 1", at);
  const Orientation o{orient == 1};
  at = r.offset();
  const std::size_t dim = r.u32();
  if (dim == 0) throw IoError(IoErrorCode::kCorrupt, "detector dimension is zero", at);

  auto wrap = [&](auto&& make) -> Detector {
    const auto pos = r.offset();
    try {
      return make();
    } catch (const IoError&) {
      throw;
    } catch (const Error& e) {
      throw IoError(IoErrorCode::kCorrupt, e.what(), pos);
    }
  };

  Detector d = wrap([&]() -> Detector {
    switch (kind) {
      case DetectorKind::kEboLogits: return Detector::ebo_logits(dim);
      case DetectorKind::kMsp: return Detector::msp(dim);
      case DetectorKind::kLayerEnergy: return Detector::layer_energy(r.u32(), dim, o);
      case DetectorKind::kMahalanobis: {
        const auto c_at = r.offset();
        const std::uint32_t classes = r.u32();
        const auto per_class = io::checked_mul(dim + 1, dim, c_at);
        r.require(io::checked_mul(io::checked_mul(classes, per_class, c_at), sizeof(double), c_at));
        MahalanobisState s;
        const auto l = static_cast<Eigen::Index>(dim);
        for (std::uint32_t c = 0; c < classes; ++c) {
          const auto mu = r.f64s(dim);
          s.means.push_back(Eigen::Map<const Vector>(mu.data(), l));
          Matrix inv(l, l);
          for (Eigen::Index i = 0; i < l; ++i)
            for (Eigen::Index j = 0; j < l; ++j) inv(i, j) = r.f64();
          s.inv_covs.push_back(std::move(inv));
        }
        return Detector::mahalanobis(std::move(s));
      }
      case DetectorKind::kKnn: {
        KnnState s;
        s.k = r.u32();
        const auto n_at = r.offset();
        s.n = r.u32();
        s.refs = r.f64s(io::checked_mul(s.n, dim, n_at));
        return Detector::knn(std::move(s), dim);
      }
      case DetectorKind::kVae: {
        VaeState s;
        const auto mean = r.f64s(dim);
        const auto scale = r.f64s(dim);
        s.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(dim));
        s.scale = Eigen::Map<const Vector>(scale.data(), static_cast<Eigen::Index>(dim));
        auto enc = read_net_body(r);
        auto dec = read_net_body(r);
        s.vae = Vae(std::move(enc), std::move(dec));
        return Detector::vae(std::move(s));
      }
    }
    throw IoError(IoErrorCode::kCorrupt, "unknown detector kind", at);
  });
  if (d.orientation() != o) {
    // Only layer detectors carry a free orientation; the others are fixed.
    if (kind != DetectorKind::kLayerEnergy)
      throw IoError(IoErrorCode::kCorrupt, "orientation does not match detector kind", 9);
  }
  r.expect_end();
  return d;
}

void save_detector(const Detector& d, const std::filesystem::path& path) { io::save_bytes(encode_detector(d), path); }

Detector load_detector(const std::filesystem::path& path) {
  return read_detector(io::read_file(path));
}

}  // namespace lir
