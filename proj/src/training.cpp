#include "lir/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>

#include "lir/energy.hpp"
#include "lir/error.hpp"
#include "lir/metrics.hpp"

namespace lir {

namespace {

std::span<const double> column(const Matrix& m, Eigen::Index j) {
  return {m.data() + j * m.rows(), static_cast<std::size_t>(m.rows())};
}

const Matrix& tap_matrix(const BatchTrace& trace, std::size_t tap) {
  if (tap < trace.post.size()) return trace.post[tap];
  if (tap == trace.post.size()) return trace.logits();
  throw StructuralError("tap " + std::to_string(tap) + " does not exist");
}

// Adds scale * dLoss/dE * dE/da to the gradient of one tap, with
// dE/da = -softmax(a) at t = 1.
void add_energy_grad(const Matrix& acts, std::span<const double> d_energy, Matrix& g) {
  if (g.size() == 0) g = Matrix::Zero(acts.rows(), acts.cols());
  std::vector<double> p;
  for (Eigen::Index j = 0; j < acts.cols(); ++j) {
    const double de = d_energy[static_cast<std::size_t>(j)];
    if (de == 0.0) continue;
    softmax(column(acts, j), Temperature{}, p);
    for (Eigen::Index i = 0; i < acts.rows(); ++i) g(i, j) -= de * p[static_cast<std::size_t>(i)];
  }
}

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Matrix gather_columns(const FeatureMatrix& m, std::span<const std::size_t> rows) {
  Matrix x(static_cast<Eigen::Index>(m.l), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const auto r = m.row(rows[j]);
    for (std::size_t i = 0; i < m.l; ++i) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r[i];
  }
  return x;
}

bool all_finite(const NetGradient& g) {
  for (const auto& l : g.layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

}  // namespace

double energy_loss_layer(std::span<const double> id_energies, std::span<const double> ood_energies,
                         double m_in, double m_out) {
  if (id_energies.empty() || ood_energies.empty())
    throw DomainError("energy loss needs at least one ID and one OoD energy");
  double id_sum = 0.0;
  for (double e : id_energies) {
    const double h = std::max(0.0, e - m_in);
    id_sum += h * h;
  }
  double ood_sum = 0.0;
  for (double e : ood_energies) {
    const double h = std::max(0.0, m_out - e);
    ood_sum += h * h;
  }
  return id_sum / static_cast<double>(id_energies.size()) + ood_sum / static_cast<double>(ood_energies.size());
}

std::vector<double> tap_energies(const BatchTrace& trace, std::size_t tap) {
  const Matrix& a = tap_matrix(trace, tap);
  std::vector<double> e(static_cast<std::size_t>(a.cols()));
  for (Eigen::Index j = 0; j < a.cols(); ++j) e[static_cast<std::size_t>(j)] = free_energy(column(a, j));
  return e;
}

std::vector<int> resolve_layer_set(std::span<const int> layer_set, std::size_t num_taps) {
  std::vector<int> out;
  if (layer_set.empty()) {
    out.resize(num_taps);
    std::iota(out.begin(), out.end(), 0);
    return out;
  }
  std::set<int> seen;
  for (int l : layer_set) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_taps)
      throw StructuralError("layer " + std::to_string(l) + " is not a tap of this net");
    if (!seen.insert(l).second) throw StructuralError("layer " + std::to_string(l) + " appears twice in the layer set");
    out.push_back(l);
  }
  return out;
}

double rebo_loss(const BatchTrace& id_trace, const BatchTrace& ood_trace, const REboConfig& cfg) {
  const auto layers = resolve_layer_set(cfg.layer_set, id_trace.pre.size());
  double total = 0.0;
  for (int l : layers)
    total += energy_loss_layer(tap_energies(id_trace, static_cast<std::size_t>(l)),
                               tap_energies(ood_trace, static_cast<std::size_t>(l)), cfg.m_in, cfg.m_out);
  return total;
}

ClassifierLossResult grad(const LayeredNet& net, const ClassifierBatch& batch, const ClassifierLoss& loss) {
  ClassifierLossResult out;
  const auto id_trace = net.forward_batch(batch.id_x);
  Matrix d_logits;
  out.ce = cross_entropy(id_trace.logits(), batch.labels, d_logits);
  d_logits *= loss.ce_weight;
  out.total = loss.ce_weight * out.ce;

  const bool have_ood = batch.ood_x.cols() > 0;
  if (loss.rebo && !have_ood) throw DomainError("R-EBO needs seen-OoD samples in every batch");
  if (!have_ood) {
    out.grad = net.backward(id_trace, d_logits);
    return out;
  }

  const auto ood_trace = net.forward_batch(batch.ood_x);
  const std::size_t taps = net.num_taps();
  std::vector<std::vector<double>> id_e(taps), ood_e(taps);
  for (std::size_t l = 0; l < taps; ++l) {
    id_e[l] = tap_energies(id_trace, l);
    ood_e[l] = tap_energies(ood_trace, l);
  }
  const double m_in = loss.rebo ? loss.rebo->m_in : loss.log_m_in;
  const double m_out = loss.rebo ? loss.rebo->m_out : loss.log_m_out;
  out.energy_loss.resize(taps);
  for (std::size_t l = 0; l < taps; ++l) out.energy_loss[l] = energy_loss_layer(id_e[l], ood_e[l], m_in, m_out);

  std::vector<Matrix> d_hidden_id(net.num_hidden()), d_hidden_ood(net.num_hidden());
  Matrix d_logits_ood = Matrix::Zero(net.output_dim(), batch.ood_x.cols());
  if (loss.rebo) {
    const double lambda = loss.rebo->lambda;
    const auto n_id = static_cast<double>(batch.id_x.cols());
    const auto n_ood = static_cast<double>(batch.ood_x.cols());
    for (int li : resolve_layer_set(loss.rebo->layer_set, taps)) {
      const auto l = static_cast<std::size_t>(li);
      out.total += lambda * out.energy_loss[l];
      std::vector<double> d_id(id_e[l].size()), d_ood(ood_e[l].size());
      for (std::size_t j = 0; j < d_id.size(); ++j) d_id[j] = lambda * 2.0 * std::max(0.0, id_e[l][j] - m_in) / n_id;
      for (std::size_t j = 0; j < d_ood.size(); ++j)
        d_ood[j] = -lambda * 2.0 * std::max(0.0, m_out - ood_e[l][j]) / n_ood;
      if (l < net.num_hidden()) {
        add_energy_grad(id_trace.post[l], d_id, d_hidden_id[l]);
        add_energy_grad(ood_trace.post[l], d_ood, d_hidden_ood[l]);
      } else {
        add_energy_grad(id_trace.logits(), d_id, d_logits);
        add_energy_grad(ood_trace.logits(), d_ood, d_logits_ood);
      }
    }
  }
  out.grad = net.backward(id_trace, d_logits, d_hidden_id);
  if (loss.rebo) {
    const auto g_ood = net.backward(ood_trace, d_logits_ood, d_hidden_ood);
    for (std::size_t l = 0; l < out.grad.layers.size(); ++l) {
      out.grad.layers[l].weight += g_ood.layers[l].weight;
      out.grad.layers[l].bias += g_ood.layers[l].bias;
    }
  }
  return out;
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError(IoErrorCode::kOpenFailed, "cannot open " + path.string());
  const std::size_t taps = epochs.empty() ? 0 : epochs.front().energy_loss.size();
  out << "epoch,ce_loss";
  for (std::size_t l = 0; l < taps; ++l) out << ",energy_loss_layer_" << l;
  out << ",train_acc\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << fmt::format("{:.17g}", e.ce_loss);
    for (double x : e.energy_loss) out << ',' << fmt::format("{:.17g}", x);
    out << ',' << fmt::format("{:.17g}", e.train_acc) << '\n';
  }
}

Margins calibrate_margins(const LayeredNet& net, const SyntheticTask& task, std::span<const int> taps) {
  const auto layers = resolve_layer_set(taps, net.num_taps());
  std::vector<double> pooled;
  for (const FeatureMatrix* m : {&task.train_id, &task.seen_ood}) {
    const auto e = extract_energies(net, *m);
    for (std::size_t i = 0; i < e.n; ++i)
      for (int l : layers) pooled.push_back(e.at(i, static_cast<std::size_t>(l)));
  }
  if (pooled.empty()) throw DomainError("no samples to calibrate margins on");
  return {percentile(pooled, 0.10), percentile(pooled, 0.90)};
}

TrainResult train(const SyntheticTask& task, const TrainConfig& cfg) {
  const auto& train_set = task.train_id;
  if (!train_set.class_labels) throw DomainError("training split has no class labels");
  if (train_set.n == 0) throw DomainError("training split is empty");
  if (cfg.rebo && task.seen_ood.n == 0) throw DomainError("R-EBO training needs seen-OoD samples");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw DomainError("epochs and batch size must be positive");
  if (cfg.rebo && !(cfg.rebo->lambda >= 0.0)) throw DomainError("lambda must be nonnegative");

  std::vector<int> dims{static_cast<int>(train_set.l)};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(task.spec.n_classes);
  TrainResult result{LayeredNet(dims, cfg.seed), {}};
  LayeredNet& net = result.net;

  ClassifierLoss loss;
  if (cfg.rebo) {
    loss.rebo = *cfg.rebo;
    loss.rebo->layer_set = resolve_layer_set(cfg.rebo->layer_set, net.num_taps());
    if (!std::isfinite(loss.rebo->m_in) || !std::isfinite(loss.rebo->m_out))
      throw DomainError("margins must be finite");
    if (cfg.rebo->calibrate_margins) {
      const auto m = calibrate_margins(net, task, loss.rebo->layer_set);
      loss.rebo->m_in = m.m_in;
      loss.rebo->m_out = m.m_out;
    }
    result.log.m_in = loss.rebo->m_in;
    result.log.m_out = loss.rebo->m_out;
  } else {
    result.log.m_in = loss.log_m_in;
    result.log.m_out = loss.log_m_out;
  }

  // Independent streams so the ID schedule does not depend on the objective.
  std::seed_seq id_seq{cfg.seed, std::uint64_t{1}};
  std::seed_seq ood_seq{cfg.seed, std::uint64_t{2}};
  std::mt19937_64 id_rng(id_seq), ood_rng(ood_seq);
  std::vector<std::size_t> id_order(train_set.n), ood_order(task.seen_ood.n);
  std::iota(id_order.begin(), id_order.end(), 0);
  std::iota(ood_order.begin(), ood_order.end(), 0);

  const auto b = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps = (train_set.n + b - 1) / b;
  MomentumSgd opt(cfg.lr, cfg.momentum);
  const Matrix all_x = gather_columns(train_set, id_order);
  const auto& labels = *train_set.class_labels;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(id_order.begin(), id_order.end(), id_rng);
    if (!ood_order.empty()) std::shuffle(ood_order.begin(), ood_order.end(), ood_rng);
    EpochLog log;
    log.epoch = epoch;
    std::size_t ood_pos = 0;
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t lo = s * b, hi = std::min(lo + b, train_set.n);
      const std::span<const std::size_t> rows(id_order.data() + lo, hi - lo);
      ClassifierBatch batch;
      batch.id_x = gather_columns(train_set, rows);
      for (auto r : rows) batch.labels.push_back(labels[r]);
      if (!ood_order.empty()) {
        std::vector<std::size_t> ood_rows;
        for (std::size_t k = 0; k < rows.size(); ++k) ood_rows.push_back(ood_order[(ood_pos + k) % ood_order.size()]);
        ood_pos = (ood_pos + rows.size()) % ood_order.size();
        batch.ood_x = gather_columns(task.seen_ood, ood_rows);
      }
      ClassifierLossResult r;
      try {
        r = grad(net, batch, loss);
      } catch (const DomainError& e) {
        // Overflowing activations surface as non-finite energies.
        throw TrainError(std::string("training diverged: ") + e.what(), epoch);
      }
      if (!std::isfinite(r.total) || !all_finite(r.grad)) throw TrainError("training loss is not finite", epoch);
      log.ce_loss += r.ce;
      if (log.energy_loss.empty()) log.energy_loss.assign(r.energy_loss.size(), 0.0);
      for (std::size_t l = 0; l < r.energy_loss.size(); ++l) log.energy_loss[l] += r.energy_loss[l];
      opt.step(net.layers(), r.grad.layers);
    }
    log.ce_loss /= static_cast<double>(steps);
    for (double& x : log.energy_loss) x /= static_cast<double>(steps);
    const Matrix logits = net.forward_batch(all_x).logits();
    if (!logits.allFinite()) throw TrainError("logits are not finite", epoch);
    log.train_acc = accuracy(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())),
                             static_cast<std::size_t>(logits.rows()), labels);
    if (!std::isfinite(log.ce_loss)) throw TrainError("training loss is not finite", epoch);
    result.log.epochs.push_back(std::move(log));
  }
  return result;
}

}  // namespace lir
