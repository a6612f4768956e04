#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "lir/data.hpp"
#include "lir/nn.hpp"
#include "lir/vae.hpp"

namespace lir {

/// Whether a high score means in-distribution.
struct Orientation {
  bool high_is_id = true;
  friend bool operator==(Orientation, Orientation) = default;
};

enum class DetectorKind : std::uint8_t {
  kEboLogits = 0,
  kLayerEnergy = 1,
  kMahalanobis = 2,
  kKnn = 3,
  kVae = 4,
  kMsp = 5,
};

std::string to_string(DetectorKind kind);

enum class Verdict { kId, kOod };

/// ID iff the score is on the ID side of the threshold; a score equal to the
/// threshold is ID.
Verdict classify(Orientation o, double score, double threshold);

struct MahalanobisState {
  std::vector<Vector> means;
  std::vector<Matrix> inv_covs;
};

struct KnnState {
  std::size_t k = 1;
  std::size_t n = 0;
  std::vector<double> refs;  // n x dim, row-major
};

struct VaeState {
  Vector mean;   // standardisation, from the training energies
  Vector scale;
  Vae vae;
};

/// A fitted, immutable score function.
///
/// `score_energies` takes one row of an EnergyMatrix (hidden taps followed by
/// the logits column). `score_activations` takes a raw activation vector and
/// only applies to the logit and single-layer detectors.
class Detector {
 public:
  static Detector ebo_logits(std::size_t num_taps);
  static Detector msp(std::size_t num_classes);
  /// Scores -E_l. `orientation` defaults to "low energy is ID".
  static Detector layer_energy(std::size_t layer, std::size_t num_taps, Orientation o = {});
  static Detector mahalanobis(MahalanobisState state);
  static Detector knn(KnnState state, std::size_t dim);
  static Detector vae(VaeState state);

  DetectorKind kind() const noexcept { return kind_; }
  Orientation orientation() const noexcept { return orientation_; }
  /// Expected energy-row length.
  std::size_t dim() const noexcept { return dim_; }
  std::size_t layer() const noexcept { return layer_; }
  const std::optional<double>& threshold() const noexcept { return threshold_; }
  Detector with_threshold(double t) const;

  double score_energies(std::span<const double> energies) const;
  double score_activations(std::span<const double> acts) const;
  /// score_energies over every row, in row order.
  std::vector<double> score_rows(const EnergyMatrix& m) const;
  /// Score negated when low means ID, so that higher is always "more ID".
  double oriented(double s) const noexcept { return orientation_.high_is_id ? s : -s; }

  const MahalanobisState& md_state() const;
  const KnnState& knn_state() const;
  const VaeState& vae_state() const;

 private:
  Detector(DetectorKind kind, Orientation o, std::size_t dim) : kind_(kind), orientation_(o), dim_(dim) {}

  DetectorKind kind_;
  Orientation orientation_;
  std::size_t dim_ = 0;
  std::size_t layer_ = 0;
  std::optional<double> threshold_;
  std::variant<std::monostate, MahalanobisState, KnnState, VaeState> state_;

  friend Detector read_detector(std::vector<std::uint8_t> bytes);
};

Verdict classify(const Detector& d, double score, double threshold);

/// Inverse of cov + eps * trace(cov) / L * I for the smallest eps on the
/// ladder {0, 1e-6, ..., 1e-2} that leaves a well-conditioned SPD matrix.
/// eps = 0 is only taken when cov itself is well conditioned. Throws FitError.
Matrix regularized_inverse(const Matrix& cov);

/// Per-class mean and regularised covariance of the energy vectors; scores by
/// the minimum Mahalanobis distance. Needs class labels and >= 2 rows per
/// class.
Detector fit_md(const EnergyMatrix& train);
/// Builds the detector from given moments, regularising like fit_md.
Detector md_from_moments(const std::vector<Vector>& means, const std::vector<Matrix>& covs);

/// min(50, floor(n / 10)), at least 1.
std::size_t default_knn_k(std::size_t n_train);
/// Mean Euclidean distance to the k nearest training energy vectors.
Detector fit_knn(const EnergyMatrix& train, std::optional<std::size_t> k = std::nullopt);

/// Trains a VAE on standardised energy vectors; scores by the reconstruction
/// error at the posterior mean. Throws FitError on a non-finite loss.
Detector fit_vae(const EnergyMatrix& train, const VaeConfig& cfg = {});

struct BhlResult {
  std::size_t best_layer = 0;
  double oriented_auroc = 0.5;
  /// Orientation of the raw energy at the best layer: high_is_id is true when
  /// ID samples carry the higher energies there.
  Orientation orientation;
  /// AUROC of the raw energy used as a high-is-ID score, per evaluated column.
  std::vector<double> per_layer_auroc;
  /// max(a, 1 - a) per column, computed from the same pair counts.
  std::vector<double> per_layer_oriented;
};

/// Oracle layer selection. Evaluates every hidden column, plus the last
/// (logits) column when include_logits is set. Ties go to the earlier layer.
BhlResult bhl(const EnergyMatrix& id, const EnergyMatrix& ood, bool include_logits = false);

/// Single-layer detector for the BHL choice, oriented accordingly.
Detector bhl_detector(const BhlResult& r, std::size_t num_taps);

std::vector<std::uint8_t> encode_detector(const Detector& d);
Detector read_detector(std::vector<std::uint8_t> bytes);
void save_detector(const Detector& d, const std::filesystem::path& path);
Detector load_detector(const std::filesystem::path& path);

}  // namespace lir
