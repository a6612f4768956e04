#include "lir/energy.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lir/error.hpp"

namespace lir {

namespace {

void check_finite(std::span<const double> v) {
  if (v.empty()) throw DomainError("activation vector is empty");
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]))
      throw DomainError("activation vector has a non-finite entry at index " +
                        std::to_string(i));
  }
}

// logsumexp of v/t. The maximal term contributes exp(0) = 1 exactly, so the
// remaining mass goes through log1p.
double scaled_lse(std::span<const double> v, double t) {
  check_finite(v);
  const auto max_it = std::max_element(v.begin(), v.end());
  const double m = *max_it / t;
  double rest = 0.0;
  for (auto it = v.begin(); it != v.end(); ++it) {
    if (it == max_it) continue;
    rest += std::exp(*it / t - m);
  }
  return m + std::log1p(rest);
}

}  // namespace

Temperature::Temperature(double t) : t_(t) {
  if (!(t > 0.0) || !std::isfinite(t))
    throw DomainError("temperature must be positive and finite");
}

double log_sum_exp(std::span<const double> v) { return scaled_lse(v, 1.0); }

double free_energy(std::span<const double> v, Temperature t) {
  return -t.value() * scaled_lse(v, t.value());
}

double msp_score(std::span<const double> v, Temperature t) {
  const double lse = scaled_lse(v, t.value());
  const double m = *std::max_element(v.begin(), v.end()) / t.value();
  return std::exp(m - lse);
}

void softmax(std::span<const double> v, Temperature t, std::vector<double>& out) {
  const double lse = scaled_lse(v, t.value());
  out.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::exp(v[i] / t.value() - lse);
}

std::vector<double> energy_vector(std::span<const ActivationVector> acts, Temperature t) {
  if (acts.empty()) throw StructuralError("no tapped layers supplied");
  std::vector<double> out;
  out.reserve(acts.size());
  for (std::size_t i = 0; i < acts.size(); ++i) {
    const int layer = acts[i].layer;
    if (layer == ActivationVector::kLogits) {
      if (i + 1 != acts.size())
        throw StructuralError("logits must be the last tapped layer");
    } else if (layer != static_cast<int>(i)) {
      throw StructuralError("expected layer " + std::to_string(i) + " at position " +
                            std::to_string(i) + ", got layer " + std::to_string(layer));
    }
    out.push_back(free_energy(acts[i].values, t));
  }
  return out;
}

}  // namespace lir
