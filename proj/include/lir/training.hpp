#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "lir/data.hpp"
#include "lir/nn.hpp"

namespace lir {

/// Hidden-layer energy regularisation settings. Margins are shared by every
/// layer in `layer_set`.
struct REboConfig {
  double m_in = -25.0;   // upper bound for ID energy
  double m_out = -7.0;   // lower bound for seen-OoD energy
  double lambda = 0.1;   // weight relative to cross-entropy
  /// Tap indices (hidden layers 0..H-1, logits = H). Empty means every tap.
  std::vector<int> layer_set;
  /// Replace m_in / m_out by the 10th / 90th percentile of the initial
  /// energies pooled over train-ID and seen-OoD at the selected taps.
  bool calibrate_margins = false;
};

struct TrainConfig {
  std::vector<int> hidden = {16, 16};
  int epochs = 100;
  int batch_size = 64;
  double lr = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  /// Cross-entropy only when empty.
  std::optional<REboConfig> rebo;
};

/// Mean over ID of max(0, E - m_in)^2 plus mean over OoD of
/// max(0, m_out - E)^2. Throws DomainError on an empty side.
double energy_loss_layer(std::span<const double> id_energies, std::span<const double> ood_energies,
                         double m_in, double m_out);

/// Free energies (t = 1) of one tap for every column of a batch trace.
std::vector<double> tap_energies(const BatchTrace& trace, std::size_t tap);

/// Checks that every entry is a valid tap and appears once; an empty set
/// expands to all taps. Throws StructuralError.
std::vector<int> resolve_layer_set(std::span<const int> layer_set, std::size_t num_taps);

/// Sum of energy_loss_layer over the configured layer set.
double rebo_loss(const BatchTrace& id_trace, const BatchTrace& ood_trace, const REboConfig& cfg);

struct ClassifierBatch {
  Matrix id_x;               // d0 x B_id
  std::vector<int> labels;   // B_id
  Matrix ood_x;              // d0 x B_ood, may have zero columns
};

/// ce_weight * CE + lambda * R-EBO (when `rebo` is set).
struct ClassifierLoss {
  double ce_weight = 1.0;
  std::optional<REboConfig> rebo;
  /// Margins used for the per-tap energy losses that are only logged.
  double log_m_in = -25.0;
  double log_m_out = -7.0;
};

struct ClassifierLossResult {
  double total = 0.0;
  double ce = 0.0;
  /// Unweighted energy_loss_layer for every tap; empty without OoD samples.
  std::vector<double> energy_loss;
  NetGradient grad;
};

/// Loss of the batch and its exact gradient w.r.t. every parameter.
ClassifierLossResult grad(const LayeredNet& net, const ClassifierBatch& batch, const ClassifierLoss& loss);

struct EpochLog {
  int epoch = 0;
  double ce_loss = 0.0;
  std::vector<double> energy_loss;  // per tap
  double train_acc = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  double m_in = 0.0;
  double m_out = 0.0;

  /// epoch, ce_loss, energy_loss_layer_0..energy_loss_layer_{L-1}, train_acc
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  LayeredNet net;
  TrainLog log;
};

struct Margins {
  double m_in;
  double m_out;
};

/// 10th / 90th percentile of the energies of `net` over train-ID and seen-OoD
/// features, pooled across the given taps.
Margins calibrate_margins(const LayeredNet& net, const SyntheticTask& task, std::span<const int> taps);

/// Momentum SGD on CE or CE + lambda * R-EBO. Each step pairs one ID batch
/// with one seen-OoD batch; both orders are fixed by the seed. Throws
/// TrainError when the loss stops being finite.
TrainResult train(const SyntheticTask& task, const TrainConfig& cfg);

}  // namespace lir
