#include "lir/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "lir/energy.hpp"
#include "lir/metrics.hpp"

namespace lir {

namespace {

using nlohmann::json;

template <typename F>
auto in_stage(const std::string& stage, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoErrorCode::kOpenFailed, "cannot open " + path.string() + " for writing");
  out << text;
}

void write_manifest(const RunConfig& cfg, const std::string& command) {
  json m;
  m["command"] = command;
  m["config_hash"] = cfg.hash();
  m["seeds"] = cfg.seeds;
  m["formats"] = {{"LIRE", 1}, {"LIRD", 1}, {"LIRN", 1}};
  m["config"] = cfg.canonical();
  std::filesystem::create_directories(cfg.out_dir);
  write_text(cfg.out_dir / ("manifest_" + command + ".json"), m.dump(2) + "\n");
}

std::string tap_name(std::size_t tap, std::size_t num_hidden) {
  return tap == num_hidden ? "logits" : std::to_string(tap);
}

bool wants(const RunConfig& cfg, const std::string& name) {
  return std::find(cfg.detectors.begin(), cfg.detectors.end(), name) != cfg.detectors.end();
}

EvalRow make_row(std::string detector, std::string layer, const std::string& split, const ScoredSplit& s,
                 bool flipped) {
  EvalRow r;
  r.detector = std::move(detector);
  r.layer = std::move(layer);
  r.split = split;
  r.auroc = auroc(s);
  r.fpr_at_tpr95 = fpr_at_tpr(s, 0.95);
  r.n_id = s.id_scores.size();
  r.n_ood = s.ood_scores.size();
  const double t = threshold_at_tpr(s.id_scores, 0.95);
  r.threshold_tpr95 = flipped ? -t : t;
  return r;
}

std::vector<double> oriented(const Detector& d, std::vector<double> scores) {
  for (double& s : scores) s = d.oriented(s);
  return scores;
}

std::vector<double> msp_scores(const LayeredNet& net, const FeatureMatrix& x) {
  std::vector<double> out(x.n);
  for (std::size_t i = 0; i < x.n; ++i) {
    const auto t = net.forward(x.row(i));
    out[i] = msp_score(std::span<const double>(t.logits.data(), static_cast<std::size_t>(t.logits.size())));
  }
  return out;
}

json row_json(const EvalRow& r) {
  return {{"detector", r.detector}, {"layer", r.layer},          {"split", r.split},
          {"auroc", r.auroc},       {"fpr_at_tpr95", r.fpr_at_tpr95}, {"n_id", r.n_id},
          {"n_ood", r.n_ood},       {"threshold_tpr95", r.threshold_tpr95}};
}

}  // namespace

std::vector<std::pair<std::string, const FeatureMatrix*>> eval_splits(const SyntheticTask& task) {
  std::vector<std::pair<std::string, const FeatureMatrix*>> out{{"near_ood", &task.near_ood},
                                                                {"far_ood", &task.far_ood}};
  for (const auto& [name, m] : task.corrupted_id) out.emplace_back(name, &m);
  return out;
}

SeedEval evaluate(const RunConfig& cfg, std::uint64_t seed, const SyntheticTask& task, const LayeredNet& net,
                  const std::filesystem::path& out_dir) {
  SeedEval result;
  result.seed = seed;
  const std::size_t taps = net.num_taps();
  const std::size_t hidden = net.num_hidden();
  const bool write = !out_dir.empty();
  if (write) {
    std::filesystem::create_directories(out_dir / "energies");
    std::filesystem::create_directories(out_dir / "detectors");
  }

  const auto e_train = in_stage("eval/extract", [&] { return extract_energies(net, task.train_id); });
  const auto e_test = in_stage("eval/extract", [&] { return extract_energies(net, task.test_id); });
  if (write) {
    write_energy_file(e_train, out_dir / "energies" / "train_id.lire");
    write_energy_file(e_test, out_dir / "energies" / "test_id.lire");
  }

  struct Fitted {
    std::string name;
    Detector detector;
  };
  std::vector<Fitted> aggregated;
  in_stage("eval/fit", [&] {
    if (wants(cfg, "md")) aggregated.push_back({"ag_md", fit_md(e_train)});
    if (wants(cfg, "knn")) aggregated.push_back({"ag_knn", fit_knn(e_train, cfg.knn_k)});
    if (wants(cfg, "vae")) {
      VaeConfig vc = cfg.vae;
      vc.seed = seed;
      aggregated.push_back({"ag_vae", fit_vae(e_train, vc)});
    }
    return 0;
  });
  const auto ebo = Detector::ebo_logits(taps);
  if (write) {
    save_detector(ebo, out_dir / "detectors" / "ebo.lird");
    for (const auto& f : aggregated) save_detector(f.detector, out_dir / "detectors" / (f.name + ".lird"));
  }

  std::vector<std::vector<double>> agg_id;
  for (const auto& f : aggregated) agg_id.push_back(oriented(f.detector, f.detector.score_rows(e_test)));
  const auto msp_id = wants(cfg, "msp") ? msp_scores(net, task.test_id) : std::vector<double>{};

  for (const auto& [split, features] : eval_splits(task)) {
    spdlog::debug("seed {} split {}", seed, split);
    const auto e_ood = in_stage("eval/extract", [&] { return extract_energies(net, *features); });
    if (write) write_energy_file(e_ood, out_dir / "energies" / (split + ".lire"));

    if (wants(cfg, "ebo"))
      result.rows.push_back(
          make_row("ebo", "logits", split, {ebo.score_rows(e_test), ebo.score_rows(e_ood)}, false));
    if (wants(cfg, "msp"))
      result.rows.push_back(make_row("msp", "logits", split, {msp_id, msp_scores(net, *features)}, false));
    if (wants(cfg, "layers")) {
      for (std::size_t l = 0; l < taps; ++l) {
        const auto d = Detector::layer_energy(l, taps);
        result.rows.push_back(
            make_row("layer_energy", tap_name(l, hidden), split, {d.score_rows(e_test), d.score_rows(e_ood)}, false));
      }
    }
    if (wants(cfg, "bhl")) {
      const auto b = bhl(e_test, e_ood, cfg.include_logits);
      const auto d = bhl_detector(b, taps);
      if (write) save_detector(d, out_dir / "detectors" / ("bhl_" + split + ".lird"));
      result.rows.push_back(make_row("bhl", tap_name(b.best_layer, hidden), split,
                                     {oriented(d, d.score_rows(e_test)), oriented(d, d.score_rows(e_ood))},
                                     !d.orientation().high_is_id));
    }
    for (std::size_t k = 0; k < aggregated.size(); ++k) {
      const auto& d = aggregated[k].detector;
      result.rows.push_back(
          make_row(aggregated[k].name, "all", split, {agg_id[k], oriented(d, d.score_rows(e_ood))}, true));
    }
    result.profiles.push_back({split, bhl(e_test, e_ood, true)});
  }

  if (write) {
    write_report_csv(result.rows, out_dir / "report.csv");
    json summary;
    summary["seed"] = seed;
    summary["config_hash"] = cfg.hash();
    summary["rows"] = json::array();
    for (const auto& r : result.rows) summary["rows"].push_back(row_json(r));
    summary["layer_profiles"] = json::array();
    for (const auto& p : result.profiles)
      summary["layer_profiles"].push_back({{"split", p.split},
                                           {"best_layer", tap_name(p.bhl.best_layer, hidden)},
                                           {"oriented_auroc", p.bhl.oriented_auroc},
                                           {"energy_high_is_id", p.bhl.orientation.high_is_id},
                                           {"per_layer_auroc", p.bhl.per_layer_auroc},
                                           {"per_layer_oriented_auroc", p.bhl.per_layer_oriented}});
    write_text(out_dir / "summary.json", summary.dump(2) + "\n");
    write_text(out_dir / "profile.svg", profile_svg(result.profiles, hidden));
  }
  return result;
}

void write_report_csv(const std::vector<EvalRow>& rows, const std::filesystem::path& path) {
  std::string out = "detector,layer,split_name,auroc,fpr_at_tpr95,n_id,n_ood\n";
  for (const auto& r : rows)
    out += fmt::format("{},{},{},{:.17g},{:.17g},{},{}\n", r.detector, r.layer, r.split, r.auroc, r.fpr_at_tpr95,
                       r.n_id, r.n_ood);
  write_text(path, out);
}

std::string profile_svg(const std::vector<SplitProfile>& profiles, std::size_t num_hidden) {
  constexpr double kW = 720, kH = 420, kLeft = 60, kRight = 170, kTop = 30, kBottom = 50;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  const std::size_t taps = profiles.empty() ? 1 : profiles.front().bhl.per_layer_oriented.size();
  auto x_of = [&](std::size_t l) { return kLeft + (taps > 1 ? pw * static_cast<double>(l) / static_cast<double>(taps - 1) : pw / 2); };
  // Oriented AUROC lives in [0.5, 1].
  auto y_of = [&](double a) { return kTop + ph * (1.0 - (a - 0.5) / 0.5); };
  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n",
      kW, kH);
  s += fmt::format("<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"white\"/>\n", kW, kH);
  s += fmt::format("<text x=\"{:.1f}\" y=\"18\" text-anchor=\"middle\">Oriented AUROC per layer</text>\n",
                   kLeft + pw / 2);
  for (int i = 0; i <= 5; ++i) {
    const double a = 0.5 + 0.1 * i;
    s += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#dddddd\"/>\n", kLeft,
                     y_of(a), kLeft + pw, y_of(a));
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{:.1f}</text>\n", kLeft - 6, y_of(a) + 4, a);
  }
  for (std::size_t l = 0; l < taps; ++l)
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n", x_of(l), kTop + ph + 18,
                     tap_name(l, num_hidden));
  s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">layer</text>\n", kLeft + pw / 2,
                   kH - 10);
  s += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"none\" stroke=\"black\"/>\n",
                   kLeft, kTop, pw, ph);
  for (std::size_t p = 0; p < profiles.size(); ++p) {
    const char* color = kColors[p % std::size(kColors)];
    std::string pts;
    for (std::size_t l = 0; l < profiles[p].bhl.per_layer_oriented.size(); ++l)
      pts += fmt::format("{}{:.2f},{:.2f}", l ? " " : "", x_of(l), y_of(profiles[p].bhl.per_layer_oriented[l]));
    s += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n", pts, color);
    const double ly = kTop + 14.0 * static_cast<double>(p) + 6;
    s += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                     kLeft + pw + 10, ly, kLeft + pw + 30, ly, color);
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\">{}</text>\n", kLeft + pw + 36, ly + 4, profiles[p].split);
  }
  s += "</svg>\n";
  return s;
}

void cmd_gen(const RunConfig& cfg) {
  for (auto seed : cfg.seeds) {
    in_stage("gen", [&] {
      const auto task = gen_task(cfg.task, seed);
      write_task(task, cfg.seed_dir(seed) / "task");
      spdlog::info("seed {}: wrote task to {}", seed, (cfg.seed_dir(seed) / "task").string());
      return 0;
    });
  }
  write_manifest(cfg, "gen");
}

void cmd_train(const RunConfig& cfg) {
  for (auto seed : cfg.seeds) {
    const auto dir = cfg.seed_dir(seed);
    const auto task = in_stage("train/load-task", [&] { return read_task(dir / "task"); });
    auto tc = cfg.train;
    tc.seed = seed;
    const auto result = in_stage("train", [&] { return train(task, tc); });
    in_stage("train/write", [&] {
      save_net(result.net, dir / "net.lirn");
      result.log.write_csv(dir / "train_log.csv");
      json meta{{"seed", seed},
                {"objective", tc.rebo ? "rebo" : "ce"},
                {"m_in", result.log.m_in},
                {"m_out", result.log.m_out},
                {"final_train_acc", result.log.epochs.back().train_acc}};
      write_text(dir / "train_meta.json", meta.dump(2) + "\n");
      return 0;
    });
    spdlog::info("seed {}: train accuracy {:.4f}", seed, result.log.epochs.back().train_acc);
  }
  write_manifest(cfg, "train");
}

std::vector<SeedEval> cmd_eval(const RunConfig& cfg) {
  std::vector<SeedEval> out;
  for (auto seed : cfg.seeds) {
    const auto dir = cfg.seed_dir(seed);
    const auto task = in_stage("eval/load-task", [&] { return read_task(dir / "task"); });
    const auto net = in_stage("eval/load-net", [&] { return load_net(dir / "net.lirn"); });
    if (net.input_dim() != task.spec.input_dim)
      throw StageError("eval/load-net", "checkpoint input dimension does not match the task");
    out.push_back(evaluate(cfg, seed, task, net, dir / "eval"));
  }
  write_manifest(cfg, "eval");
  return out;
}

void cmd_score(const std::filesystem::path& detector_file, const std::filesystem::path& energy_file,
               double threshold, std::ostream& out) {
  const auto d = in_stage("score/load-detector", [&] { return load_detector(detector_file); });
  const auto e = in_stage("score/load-energies", [&] { return read_energy_file(energy_file); });
  if (e.l != d.dim())
    throw StageError("score", "energy file has " + std::to_string(e.l) + " layers, detector expects " +
                                  std::to_string(d.dim()));
  out << "index,score,verdict\n";
  for (std::size_t i = 0; i < e.n; ++i) {
    const double s = in_stage("score", [&] { return d.score_energies(e.row(i)); });
    out << i << ',' << fmt::format("{:.17g}", s) << ',' << (classify(d, s, threshold) == Verdict::kId ? "ID" : "OOD")
        << '\n';
  }
}

}  // namespace lir
