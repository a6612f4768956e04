#include "lir/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace lir {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& v, int line) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("cannot parse number \"" + v + "\"", line);
  return out;
}

bool parse_bool(const std::string& v, int line) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected true or false, got \"" + v + "\"", line);
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

template <typename T>
std::string join_numbers(const std::vector<T>& v) {
  std::vector<std::string> s;
  for (const auto& x : v) s.push_back(fmt::format("{}", x));
  return join(s);
}

const std::set<std::string> kDetectorNames = {"ebo", "msp", "layers", "bhl", "md", "knn", "vae"};

}  // namespace

std::filesystem::path RunConfig::seed_dir(std::uint64_t seed) const {
  return out_dir / ("seed_" + std::to_string(seed));
}

std::string RunConfig::canonical() const {
  std::map<std::string, std::string> kv;
  kv["out"] = out_dir.lexically_relative(base_dir).generic_string();
  kv["seeds"] = join_numbers(seeds);
  kv["task.input_dim"] = fmt::format("{}", task.input_dim);
  kv["task.n_classes"] = fmt::format("{}", task.n_classes);
  kv["task.radius"] = fmt::format("{}", task.radius);
  kv["task.n_train"] = fmt::format("{}", task.n_train);
  kv["task.n_seen_ood"] = fmt::format("{}", task.n_seen_ood);
  kv["task.n_eval"] = fmt::format("{}", task.n_eval);
  kv["train.objective"] = train.rebo ? "rebo" : "ce";
  kv["train.hidden"] = join_numbers(train.hidden);
  kv["train.epochs"] = fmt::format("{}", train.epochs);
  kv["train.batch_size"] = fmt::format("{}", train.batch_size);
  kv["train.lr"] = fmt::format("{}", train.lr);
  kv["train.momentum"] = fmt::format("{}", train.momentum);
  if (train.rebo) {
    kv["rebo.lambda"] = fmt::format("{}", train.rebo->lambda);
    kv["rebo.m_in"] = fmt::format("{}", train.rebo->m_in);
    kv["rebo.m_out"] = fmt::format("{}", train.rebo->m_out);
    kv["rebo.margins"] = train.rebo->calibrate_margins ? "calibrated" : "fixed";
    kv["rebo.layers"] = train.rebo->layer_set.empty() ? "all" : join_numbers(train.rebo->layer_set);
  }
  kv["eval.detectors"] = join(detectors);
  kv["eval.include_logits"] = include_logits ? "true" : "false";
  kv["knn.k"] = knn_k ? fmt::format("{}", *knn_k) : "auto";
  kv["vae.hidden"] = fmt::format("{}", vae.hidden);
  kv["vae.latent"] = fmt::format("{}", vae.latent);
  kv["vae.kl_weight"] = fmt::format("{}", vae.kl_weight);
  kv["vae.epochs"] = fmt::format("{}", vae.epochs);
  kv["vae.batch_size"] = fmt::format("{}", vae.batch_size);
  kv["vae.lr"] = fmt::format("{}", vae.lr);
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::string RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return fmt::format("{:016x}", h);
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  cfg.base_dir = base_dir;
  cfg.out_dir = base_dir / "runs";
  std::string objective = "ce";
  REboConfig rebo;

  using Setter = std::function<void(const std::string&, int)>;
  const std::map<std::string, Setter> setters = {
      {"out", [&](const std::string& v, int) { cfg.out_dir = (base_dir / v).lexically_normal(); }},
      {"seeds",
       [&](const std::string& v, int line) {
         cfg.seeds.clear();
         for (const auto& s : split_list(v)) cfg.seeds.push_back(parse_number<std::uint64_t>(s, line));
         if (cfg.seeds.empty()) throw ConfigError("seeds must not be empty", line);
       }},
      {"task.input_dim", [&](const std::string& v, int l) { cfg.task.input_dim = parse_number<int>(v, l); }},
      {"task.n_classes", [&](const std::string& v, int l) { cfg.task.n_classes = parse_number<int>(v, l); }},
      {"task.radius", [&](const std::string& v, int l) { cfg.task.radius = parse_number<double>(v, l); }},
      {"task.n_train", [&](const std::string& v, int l) { cfg.task.n_train = parse_number<int>(v, l); }},
      {"task.n_seen_ood", [&](const std::string& v, int l) { cfg.task.n_seen_ood = parse_number<int>(v, l); }},
      {"task.n_eval", [&](const std::string& v, int l) { cfg.task.n_eval = parse_number<int>(v, l); }},
      {"train.objective",
       [&](const std::string& v, int line) {
         if (v != "ce" && v != "rebo") throw ConfigError("train.objective must be ce or rebo", line);
         objective = v;
       }},
      {"train.hidden",
       [&](const std::string& v, int line) {
         cfg.train.hidden.clear();
         for (const auto& s : split_list(v)) cfg.train.hidden.push_back(parse_number<int>(s, line));
       }},
      {"train.epochs", [&](const std::string& v, int l) { cfg.train.epochs = parse_number<int>(v, l); }},
      {"train.batch_size", [&](const std::string& v, int l) { cfg.train.batch_size = parse_number<int>(v, l); }},
      {"train.lr", [&](const std::string& v, int l) { cfg.train.lr = parse_number<double>(v, l); }},
      {"train.momentum", [&](const std::string& v, int l) { cfg.train.momentum = parse_number<double>(v, l); }},
      {"rebo.lambda", [&](const std::string& v, int l) { rebo.lambda = parse_number<double>(v, l); }},
      {"rebo.m_in", [&](const std::string& v, int l) { rebo.m_in = parse_number<double>(v, l); }},
      {"rebo.m_out", [&](const std::string& v, int l) { rebo.m_out = parse_number<double>(v, l); }},
      {"rebo.margins",
       [&](const std::string& v, int line) {
         if (v != "fixed" && v != "calibrated") throw ConfigError("rebo.margins must be fixed or calibrated", line);
         rebo.calibrate_margins = v == "calibrated";
       }},
      {"rebo.layers",
       [&](const std::string& v, int line) {
         rebo.layer_set.clear();
         if (v == "all") return;
         for (const auto& s : split_list(v)) rebo.layer_set.push_back(parse_number<int>(s, line));
       }},
      {"eval.detectors",
       [&](const std::string& v, int line) {
         cfg.detectors = split_list(v);
         for (const auto& d : cfg.detectors)
           if (!kDetectorNames.contains(d)) throw ConfigError("unknown detector \"" + d + "\"", line);
       }},
      {"eval.include_logits", [&](const std::string& v, int l) { cfg.include_logits = parse_bool(v, l); }},
      {"knn.k",
       [&](const std::string& v, int line) {
         if (v == "auto")
           cfg.knn_k.reset();
         else
           cfg.knn_k = parse_number<std::size_t>(v, line);
       }},
      {"vae.hidden", [&](const std::string& v, int l) { cfg.vae.hidden = parse_number<int>(v, l); }},
      {"vae.latent", [&](const std::string& v, int l) { cfg.vae.latent = parse_number<int>(v, l); }},
      {"vae.kl_weight", [&](const std::string& v, int l) { cfg.vae.kl_weight = parse_number<double>(v, l); }},
      {"vae.epochs", [&](const std::string& v, int l) { cfg.vae.epochs = parse_number<int>(v, l); }},
      {"vae.batch_size", [&](const std::string& v, int l) { cfg.vae.batch_size = parse_number<int>(v, l); }},
      {"vae.lr", [&](const std::string& v, int l) { cfg.vae.lr = parse_number<double>(v, l); }},
  };

  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const auto s = trim(raw);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value", line);
    const auto key = trim(s.substr(0, eq));
    const auto value = trim(s.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown key \"" + key + "\"", line);
    if (!seen.insert(key).second) throw ConfigError("key \"" + key + "\" given twice", line);
    if (value.empty()) throw ConfigError("key \"" + key + "\" has an empty value", line);
    it->second(value, line);
  }

  if (objective == "rebo") cfg.train.rebo = rebo;
  try {
    cfg.task.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (cfg.train.hidden.empty()) throw ConfigError("train.hidden needs at least one hidden layer");
  for (int h : cfg.train.hidden)
    if (h < 1) throw ConfigError("hidden widths must be positive");
  if (cfg.train.epochs < 1 || cfg.train.batch_size < 1) throw ConfigError("train.epochs and train.batch_size must be positive");
  if (cfg.detectors.empty()) throw ConfigError("eval.detectors must name at least one detector");
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
}

}  // namespace lir
