#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lir/nn.hpp"

namespace lir {

enum class DistLabel : std::uint8_t { kId = 0, kOod = 1 };

/// Dense n x l row-major matrix with optional per-row labels. Used for
/// per-layer energies (one column per tapped layer) and for raw features.
struct LabeledMatrix {
  std::size_t n = 0;
  std::size_t l = 0;
  std::vector<double> values;
  std::optional<std::vector<DistLabel>> dist_labels;
  std::optional<std::vector<int>> class_labels;

  LabeledMatrix() = default;
  LabeledMatrix(std::size_t rows, std::size_t cols) : n(rows), l(cols), values(rows * cols, 0.0) {}

  std::span<const double> row(std::size_t i) const { return {values.data() + i * l, l}; }
  std::span<double> row(std::size_t i) { return {values.data() + i * l, l}; }
  double at(std::size_t i, std::size_t j) const { return values[i * l + j]; }
  std::vector<double> column(std::size_t j) const;

  /// Throws DomainError if any value is non-finite or a label vector has the
  /// wrong length.
  void validate() const;
};

using EnergyMatrix = LabeledMatrix;
using FeatureMatrix = LabeledMatrix;

/// Stacks rows of `a` and `b`; labels are kept only when both carry them.
LabeledMatrix concat_rows(const LabeledMatrix& a, const LabeledMatrix& b);

struct TaskSpec {
  int input_dim = 2;
  int n_classes = 3;
  double radius = 5.0;
  int n_train = 2000;
  int n_seen_ood = 2000;
  int n_eval = 500;

  void validate() const;
};

/// Named covariate shift applied to the ID test features.
struct Corruption {
  enum class Kind { kGaussianNoise, kScale, kShift };
  Kind kind;
  double severity;
  std::string name() const;
};

/// The fixed corruption set: gaussian noise sigma in {0.5, 1, 2}, scale in
/// {0.5, 2}, shift in {1, 3}.
std::vector<Corruption> default_corruptions();

struct SyntheticTask {
  TaskSpec spec;
  FeatureMatrix train_id;
  FeatureMatrix seen_ood;
  FeatureMatrix test_id;
  FeatureMatrix near_ood;
  FeatureMatrix far_ood;
  std::vector<std::pair<std::string, FeatureMatrix>> corrupted_id;

  const FeatureMatrix& corrupted(const std::string& name) const;
};

/// ID: C unit-covariance Gaussian blobs with means on a circle of radius r.
/// Near-OoD: blobs at the angles halfway between ID means. Far-OoD: uniform
/// in the shell 3r <= |x| <= 4r. Seen-OoD: a noisy ring at radius 2r.
SyntheticTask gen_task(const TaskSpec& spec, std::uint64_t seed);

/// One row per sample, one column per tapped layer (hidden layers then
/// logits), at temperature 1. Labels are carried over.
EnergyMatrix extract_energies(const LayeredNet& net, const FeatureMatrix& features);

/// LIRE file: "LIRE", version u16 = 1, flags u16 (bit0 dist labels, bit1 class
/// labels), n u64, l u64, n*l f64 row-major, [n u8 dist labels], [n i32 class
/// labels]. Everything little-endian.
void write_energy_file(const LabeledMatrix& m, const std::filesystem::path& path);
LabeledMatrix read_energy_file(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_energy_file(const LabeledMatrix& m);
LabeledMatrix decode_energy_file(std::vector<std::uint8_t> bytes);

void write_task(const SyntheticTask& task, const std::filesystem::path& dir);
SyntheticTask read_task(const std::filesystem::path& dir);

}  // namespace lir
