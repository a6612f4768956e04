#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace lir {

/// ID and OoD scores of one evaluation split, oriented so that a higher score
/// means "more in-distribution".
struct ScoredSplit {
  std::vector<double> id_scores;
  std::vector<double> ood_scores;
};

/// Pairwise comparison counts between ID and OoD scores.
struct PairCounts {
  std::uint64_t wins = 0;    // id > ood
  std::uint64_t ties = 0;    // id == ood
  std::uint64_t losses = 0;  // id < ood

  std::uint64_t total() const noexcept { return wins + ties + losses; }
  /// (wins + ties / 2) / total.
  double auroc() const noexcept;
  /// The same counts seen from the negated scores.
  PairCounts flipped() const noexcept { return {losses, ties, wins}; }
};

/// Counts in O(n log n) via sorting. Throws DomainError on an empty side or a
/// non-finite score.
PairCounts pair_counts(std::span<const double> id_scores, std::span<const double> ood_scores);

/// P(S_id > S_ood) + 0.5 P(S_id = S_ood).
double auroc(const ScoredSplit& s);

/// Fraction of OoD scores >= T*, where T* is the largest threshold that keeps
/// at least tpr_target of the ID scores (empirical step ROC, no interpolation).
double fpr_at_tpr(const ScoredSplit& s, double tpr_target = 0.95);

/// Threshold T* used by fpr_at_tpr.
double threshold_at_tpr(std::span<const double> id_scores, double tpr_target = 0.95);

/// Fraction of rows whose argmax (ties to the lowest index) equals the label.
/// Rows are stored contiguously, row-major, `n_classes` wide.
double accuracy(std::span<const double> logit_rows, std::size_t n_classes,
                std::span<const int> labels);

/// Index of the largest entry, ties broken toward the lowest index.
std::size_t argmax(std::span<const double> v);

}  // namespace lir
