#pragma once

#include <span>
#include <vector>

namespace lir {

/// Positive temperature scale for the free energy and softmax.
class Temperature {
 public:
  constexpr Temperature() = default;
  explicit Temperature(double t);
  constexpr double value() const noexcept { return t_; }

 private:
  double t_ = 1.0;
};

/// Activations of one tapped layer. Spatial activations are flattened before
/// they get here.
struct ActivationVector {
  static constexpr int kLogits = -1;

  std::vector<double> values;
  int layer = 0;  // hidden layer index, or kLogits
};

/// logsumexp(v) with the max shift. Throws DomainError on empty or
/// non-finite input.
double log_sum_exp(std::span<const double> v);

/// -t * log sum_i exp(v_i / t).
double free_energy(std::span<const double> v, Temperature t = {});

/// max_c softmax(v / t)_c, evaluated in log space.
double msp_score(std::span<const double> v, Temperature t = {});

/// Softmax of v / t, written into out (resized).
void softmax(std::span<const double> v, Temperature t, std::vector<double>& out);

/// Free energy of every tapped layer. Hidden layers must appear as 0..H-1 in
/// ascending order; an optional logits vector may follow as the last entry.
std::vector<double> energy_vector(std::span<const ActivationVector> acts,
                                  Temperature t = {});

}  // namespace lir
