#include "lir/data.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lir/binary_io.hpp"
#include "lir/energy.hpp"
#include "lir/error.hpp"

namespace lir {

namespace {

constexpr std::uint16_t kEnergyVersion = 1;
constexpr std::uint16_t kHasDist = 1u << 0;
constexpr std::uint16_t kHasClass = 1u << 1;

FeatureMatrix blank(std::size_t n, std::size_t d, DistLabel dist) {
  FeatureMatrix m(n, d);
  m.dist_labels = std::vector<DistLabel>(n, dist);
  return m;
}

// Blob centre for angle theta: first two coordinates on the circle, rest zero.
void gaussian_around(std::span<double> out, double cx, double cy, std::mt19937_64& rng) {
  std::normal_distribution<double> unit(0.0, 1.0);
  for (double& x : out) x = unit(rng);
  out[0] += cx;
  out[1] += cy;
}

FeatureMatrix blobs(const TaskSpec& spec, int n, double angle_offset, bool labelled, DistLabel dist,
                    std::mt19937_64& rng) {
  auto m = blank(static_cast<std::size_t>(n), static_cast<std::size_t>(spec.input_dim), dist);
  if (labelled) m.class_labels = std::vector<int>(static_cast<std::size_t>(n));
  const double step = 2.0 * std::numbers::pi / spec.n_classes;
  for (int i = 0; i < n; ++i) {
    const int c = i % spec.n_classes;
    const double theta = c * step + angle_offset;
    gaussian_around(m.row(static_cast<std::size_t>(i)), spec.radius * std::cos(theta),
                    spec.radius * std::sin(theta), rng);
    if (labelled) (*m.class_labels)[static_cast<std::size_t>(i)] = c;
  }
  return m;
}

FeatureMatrix shell(const TaskSpec& spec, int n, double r_lo, double r_hi, std::mt19937_64& rng) {
  auto m = blank(static_cast<std::size_t>(n), static_cast<std::size_t>(spec.input_dim), DistLabel::kOod);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double d = spec.input_dim;
  const double lo = std::pow(r_lo, d);
  const double hi = std::pow(r_hi, d);
  for (int i = 0; i < n; ++i) {
    auto row = m.row(static_cast<std::size_t>(i));
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (double& x : row) {
        x = unit(rng);
        norm2 += x * x;
      }
    } while (norm2 < 1e-24);
    // Inverse CDF of the radius under a uniform volume density.
    const double rho = std::pow(lo + u(rng) * (hi - lo), 1.0 / d);
    const double scale = rho / std::sqrt(norm2);
    for (double& x : row) x *= scale;
  }
  return m;
}

FeatureMatrix ring(const TaskSpec& spec, int n, double radius, double radial_sd, std::mt19937_64& rng) {
  auto m = blank(static_cast<std::size_t>(n), static_cast<std::size_t>(spec.input_dim), DistLabel::kOod);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  for (int i = 0; i < n; ++i) {
    auto row = m.row(static_cast<std::size_t>(i));
    const double theta = angle(rng);
    const double rho = radius + radial_sd * unit(rng);
    row[0] = rho * std::cos(theta);
    row[1] = rho * std::sin(theta);
    for (std::size_t j = 2; j < row.size(); ++j) row[j] = unit(rng);
  }
  return m;
}

FeatureMatrix corrupt(const FeatureMatrix& clean, const Corruption& c, std::mt19937_64& rng) {
  FeatureMatrix m = clean;
  std::normal_distribution<double> noise(0.0, c.kind == Corruption::Kind::kGaussianNoise ? c.severity : 1.0);
  for (double& x : m.values) {
    switch (c.kind) {
      case Corruption::Kind::kGaussianNoise: x += noise(rng); break;
      case Corruption::Kind::kScale: x *= c.severity; break;
      case Corruption::Kind::kShift: x += c.severity; break;
    }
  }
  return m;
}

std::string format_severity(double s) {
  std::ostringstream os;
  os << s;
  return os.str();
}

}  // namespace

std::vector<double> LabeledMatrix::column(std::size_t j) const {
  if (j >= l) throw DomainError("column " + std::to_string(j) + " out of range");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = values[i * l + j];
  return out;
}

void LabeledMatrix::validate() const {
  if (values.size() != n * l) throw DomainError("matrix buffer does not hold n*l values");
  for (double v : values)
    if (!std::isfinite(v)) throw DomainError("matrix contains a non-finite value");
  if (dist_labels && dist_labels->size() != n) throw DomainError("dist label count differs from row count");
  if (class_labels && class_labels->size() != n) throw DomainError("class label count differs from row count");
}

LabeledMatrix concat_rows(const LabeledMatrix& a, const LabeledMatrix& b) {
  if (a.l != b.l) throw StructuralError("cannot stack matrices with different column counts");
  LabeledMatrix m(a.n + b.n, a.l);
  std::copy(a.values.begin(), a.values.end(), m.values.begin());
  std::copy(b.values.begin(), b.values.end(), m.values.begin() + static_cast<std::ptrdiff_t>(a.values.size()));
  if (a.dist_labels && b.dist_labels) {
    m.dist_labels = *a.dist_labels;
    m.dist_labels->insert(m.dist_labels->end(), b.dist_labels->begin(), b.dist_labels->end());
  }
  if (a.class_labels && b.class_labels) {
    m.class_labels = *a.class_labels;
    m.class_labels->insert(m.class_labels->end(), b.class_labels->begin(), b.class_labels->end());
  }
  return m;
}

void TaskSpec::validate() const {
  if (n_classes < 2) throw DomainError("a task needs at least 2 classes");
  if (input_dim < 2) throw DomainError("input dimension must be at least 2");
  if (!(radius > 0.0) || !std::isfinite(radius)) throw DomainError("radius must be positive");
  if (n_train < 1 || n_seen_ood < 1 || n_eval < 1) throw DomainError("split sizes must be positive");
}

std::string Corruption::name() const {
  switch (kind) {
    case Kind::kGaussianNoise: return "gaussian_noise_" + format_severity(severity);
    case Kind::kScale: return "scale_" + format_severity(severity);
    case Kind::kShift: return "shift_" + format_severity(severity);
  }
  return "unknown";
}

std::vector<Corruption> default_corruptions() {
  using K = Corruption::Kind;
  return {{K::kGaussianNoise, 0.5}, {K::kGaussianNoise, 1.0}, {K::kGaussianNoise, 2.0},
          {K::kScale, 0.5},         {K::kScale, 2.0},         {K::kShift, 1.0},
          {K::kShift, 3.0}};
}

const FeatureMatrix& SyntheticTask::corrupted(const std::string& name) const {
  for (const auto& [n, m] : corrupted_id)
    if (n == name) return m;
  throw DomainError("no corruption named " + name);
}

SyntheticTask gen_task(const TaskSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  SyntheticTask t;
  t.spec = spec;
  const double half_step = std::numbers::pi / spec.n_classes;
  t.train_id = blobs(spec, spec.n_train, 0.0, true, DistLabel::kId, rng);
  t.seen_ood = ring(spec, spec.n_seen_ood, 2.0 * spec.radius, 0.5, rng);
  t.test_id = blobs(spec, spec.n_eval, 0.0, true, DistLabel::kId, rng);
  t.near_ood = blobs(spec, spec.n_eval, half_step, false, DistLabel::kOod, rng);
  t.far_ood = shell(spec, spec.n_eval, 3.0 * spec.radius, 4.0 * spec.radius, rng);
  for (const auto& c : default_corruptions()) t.corrupted_id.emplace_back(c.name(), corrupt(t.test_id, c, rng));
  return t;
}

EnergyMatrix extract_energies(const LayeredNet& net, const FeatureMatrix& features) {
  if (features.l != static_cast<std::size_t>(net.input_dim()))
    throw DomainError("features have dimension " + std::to_string(features.l) + ", net expects " +
                      std::to_string(net.input_dim()));
  EnergyMatrix e(features.n, net.num_taps());
  for (std::size_t i = 0; i < features.n; ++i) {
    const auto taps = net.forward(features.row(i)).taps();
    const auto ev = energy_vector(taps);
    std::copy(ev.begin(), ev.end(), e.row(i).begin());
  }
  e.dist_labels = features.dist_labels;
  e.class_labels = features.class_labels;
  return e;
}

std::vector<std::uint8_t> encode_energy_file(const LabeledMatrix& m) {
  if (m.values.size() != m.n * m.l) throw DomainError("matrix buffer does not hold n*l values");
  if ((m.dist_labels && m.dist_labels->size() != m.n) || (m.class_labels && m.class_labels->size() != m.n))
    throw IoError(IoErrorCode::kLabelLengthMismatch, "label vector length differs from row count " +
                                                         std::to_string(m.n));
  io::ByteWriter w;
  w.magic("LIRE");
  w.u16(kEnergyVersion);
  w.u16(static_cast<std::uint16_t>((m.dist_labels ? kHasDist : 0) | (m.class_labels ? kHasClass : 0)));
  w.u64(m.n);
  w.u64(m.l);
  w.f64s(m.values);
  if (m.dist_labels)
    for (auto d : *m.dist_labels) w.u8(static_cast<std::uint8_t>(d));
  if (m.class_labels)
    for (int c : *m.class_labels) w.i32(c);
  return w.bytes();
}

void write_energy_file(const LabeledMatrix& m, const std::filesystem::path& path) {
  io::save_bytes(encode_energy_file(m), path);
}

LabeledMatrix decode_energy_file(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect_magic("LIRE");
  auto at = r.offset();
  if (const auto v = r.u16(); v != kEnergyVersion)
    throw IoError(IoErrorCode::kUnsupportedVersion, "unsupported energy file version " + std::to_string(v), at);
  at = r.offset();
  const auto flags = r.u16();
  if (flags & ~(kHasDist | kHasClass))
    throw IoError(IoErrorCode::kCorrupt, "unknown flag bits set", at);
  LabeledMatrix m;
  m.n = r.u64();
  at = r.offset();
  m.l = r.u64();
  const auto header_end = r.offset();

  // Expected total size, computed with overflow checks before any allocation.
  const auto cells = io::checked_mul(m.n, m.l, at);
  std::uint64_t expected = io::checked_mul(cells, sizeof(double), at);
  auto add = [&](std::uint64_t extra) {
    if (expected > std::numeric_limits<std::uint64_t>::max() - extra)
      throw IoError(IoErrorCode::kSizeOverflow, "payload size overflows", at);
    expected += extra;
  };
  if (flags & kHasDist) add(m.n);
  if (flags & kHasClass) add(io::checked_mul(m.n, sizeof(std::int32_t), at));
  if (r.remaining() < expected)
    throw IoError(IoErrorCode::kTruncated,
                  "truncated payload: expected " + std::to_string(header_end + expected) + " bytes, file has " +
                      std::to_string(r.size()),
                  r.size());
  if (r.remaining() > expected)
    throw IoError(IoErrorCode::kLabelLengthMismatch,
                  "payload is " + std::to_string(r.remaining()) + " bytes, header and flags imply " +
                      std::to_string(expected),
                  header_end + expected);

  m.values = r.f64s(cells);
  if (flags & kHasDist) {
    std::vector<DistLabel> d(m.n);
    for (auto& x : d) {
      const auto pos = r.offset();
      const auto v = r.u8();
      if (v > 1) throw IoError(IoErrorCode::kCorrupt, "dist label must be 0 or 1", pos);
      x = static_cast<DistLabel>(v);
    }
    m.dist_labels = std::move(d);
  }
  if (flags & kHasClass) {
    std::vector<int> c(m.n);
    for (auto& x : c) x = r.i32();
    m.class_labels = std::move(c);
  }
  r.expect_end();
  for (std::size_t i = 0; i < m.values.size(); ++i)
    if (!std::isfinite(m.values[i]))
      throw IoError(IoErrorCode::kCorrupt, "non-finite value in payload", header_end + i * sizeof(double));
  return m;
}

LabeledMatrix read_energy_file(const std::filesystem::path& path) {
  return decode_energy_file(io::read_file(path));
}

void write_task(const SyntheticTask& task, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["input_dim"] = task.spec.input_dim;
  meta["n_classes"] = task.spec.n_classes;
  meta["radius"] = task.spec.radius;
  meta["n_train"] = task.spec.n_train;
  meta["n_seen_ood"] = task.spec.n_seen_ood;
  meta["n_eval"] = task.spec.n_eval;
  meta["corruptions"] = nlohmann::json::array();
  write_energy_file(task.train_id, dir / "train_id.lire");
  write_energy_file(task.seen_ood, dir / "seen_ood.lire");
  write_energy_file(task.test_id, dir / "test_id.lire");
  write_energy_file(task.near_ood, dir / "near_ood.lire");
  write_energy_file(task.far_ood, dir / "far_ood.lire");
  for (const auto& [name, m] : task.corrupted_id) {
    meta["corruptions"].push_back(name);
    write_energy_file(m, dir / ("corrupted_" + name + ".lire"));
  }
  std::ofstream(dir / "task.json") << meta.dump(2) << '\n';
}

SyntheticTask read_task(const std::filesystem::path& dir) {
  std::ifstream in(dir / "task.json");
  if (!in) throw IoError(IoErrorCode::kOpenFailed, "cannot open " + (dir / "task.json").string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(IoErrorCode::kCorrupt, std::string("task.json: ") + e.what());
  }
  SyntheticTask t;
  t.spec.input_dim = meta.at("input_dim").get<int>();
  t.spec.n_classes = meta.at("n_classes").get<int>();
  t.spec.radius = meta.at("radius").get<double>();
  t.spec.n_train = meta.at("n_train").get<int>();
  t.spec.n_seen_ood = meta.at("n_seen_ood").get<int>();
  t.spec.n_eval = meta.at("n_eval").get<int>();
  t.train_id = read_energy_file(dir / "train_id.lire");
  t.seen_ood = read_energy_file(dir / "seen_ood.lire");
  t.test_id = read_energy_file(dir / "test_id.lire");
  t.near_ood = read_energy_file(dir / "near_ood.lire");
  t.far_ood = read_energy_file(dir / "far_ood.lire");
  for (const auto& name : meta.at("corruptions"))
    t.corrupted_id.emplace_back(name.get<std::string>(),
                                read_energy_file(dir / ("corrupted_" + name.get<std::string>() + ".lire")));
  return t;
}

}  // namespace lir
