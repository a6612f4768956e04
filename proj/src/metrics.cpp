#include "lir/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lir/error.hpp"

namespace lir {

namespace {

void check_side(std::span<const double> v, const char* name) {
  if (v.empty()) throw DomainError(std::string(name) + " scores are empty");
  for (double x : v)
    if (!std::isfinite(x)) throw DomainError(std::string(name) + " scores contain a non-finite value");
}

}  // namespace

double PairCounts::auroc() const noexcept {
  // Integer numerator keeps this exact up to the final division.
  return static_cast<double>(2 * wins + ties) / static_cast<double>(2 * total());
}

PairCounts pair_counts(std::span<const double> id_scores, std::span<const double> ood_scores) {
  check_side(id_scores, "ID");
  check_side(ood_scores, "OoD");
  std::vector<double> ood(ood_scores.begin(), ood_scores.end());
  std::sort(ood.begin(), ood.end());
  PairCounts c;
  for (double s : id_scores) {
    const auto lo = std::lower_bound(ood.begin(), ood.end(), s);
    const auto hi = std::upper_bound(lo, ood.end(), s);
    c.wins += static_cast<std::uint64_t>(lo - ood.begin());
    c.ties += static_cast<std::uint64_t>(hi - lo);
    c.losses += static_cast<std::uint64_t>(ood.end() - hi);
  }
  return c;
}

double auroc(const ScoredSplit& s) { return pair_counts(s.id_scores, s.ood_scores).auroc(); }

double threshold_at_tpr(std::span<const double> id_scores, double tpr_target) {
  check_side(id_scores, "ID");
  if (!(tpr_target > 0.0 && tpr_target <= 1.0))
    throw DomainError("tpr_target must lie in (0, 1]");
  std::vector<double> desc(id_scores.begin(), id_scores.end());
  std::sort(desc.begin(), desc.end(), std::greater<>());
  const auto n = static_cast<double>(desc.size());
  // Smallest count c with c / n >= target, evaluated with the same division
  // a direct threshold scan would use.
  std::size_t c = static_cast<std::size_t>(std::ceil(tpr_target * n));
  c = std::clamp<std::size_t>(c, 1, desc.size());
  while (c > 1 && static_cast<double>(c - 1) / n >= tpr_target) --c;
  while (c < desc.size() && static_cast<double>(c) / n < tpr_target) ++c;
  return desc[c - 1];
}

double fpr_at_tpr(const ScoredSplit& s, double tpr_target) {
  check_side(s.ood_scores, "OoD");
  const double t = threshold_at_tpr(s.id_scores, tpr_target);
  const auto passed = std::count_if(s.ood_scores.begin(), s.ood_scores.end(),
                                    [t](double x) { return x >= t; });
  return static_cast<double>(passed) / static_cast<double>(s.ood_scores.size());
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw DomainError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

double accuracy(std::span<const double> logit_rows, std::size_t n_classes,
                std::span<const int> labels) {
  if (n_classes == 0 || logit_rows.size() != n_classes * labels.size())
    throw DomainError("logit rows and labels are not aligned");
  if (labels.empty()) throw DomainError("accuracy of an empty set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = logit_rows.subspan(i * n_classes, n_classes);
    if (static_cast<int>(argmax(row)) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace lir
