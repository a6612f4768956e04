#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "lir/detectors.hpp"
#include "lir/run_config.hpp"

namespace lir {

/// Wraps a failure with the name of the pipeline stage that raised it.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage " + stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

/// One EvalReport line.
struct EvalRow {
  std::string detector;
  std::string layer;  // tap index, "logits", or "all"
  std::string split;
  double auroc = 0.0;
  double fpr_at_tpr95 = 0.0;
  std::size_t n_id = 0;
  std::size_t n_ood = 0;
  double threshold_tpr95 = 0.0;  // in the detector's own score units
};

struct SplitProfile {
  std::string split;
  BhlResult bhl;  // over every tap, logits included
};

struct SeedEval {
  std::uint64_t seed = 0;
  std::vector<EvalRow> rows;
  std::vector<SplitProfile> profiles;
};

/// The evaluation splits of a task, in report order: near_ood, far_ood, then
/// every corrupted_id split.
std::vector<std::pair<std::string, const FeatureMatrix*>> eval_splits(const SyntheticTask& task);

/// Fits the configured detectors on the training energies of `net` and scores
/// every evaluation split against test-ID. When `out_dir` is non-empty the
/// energy files, detector files, report.csv, summary.json and profile.svg are
/// written there.
SeedEval evaluate(const RunConfig& cfg, std::uint64_t seed, const SyntheticTask& task, const LayeredNet& net,
                  const std::filesystem::path& out_dir = {});

void write_report_csv(const std::vector<EvalRow>& rows, const std::filesystem::path& path);
std::string profile_svg(const std::vector<SplitProfile>& profiles, std::size_t num_hidden);

void cmd_gen(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
std::vector<SeedEval> cmd_eval(const RunConfig& cfg);
/// Streams "index,score,verdict" CSV for every row of the energy file.
void cmd_score(const std::filesystem::path& detector_file, const std::filesystem::path& energy_file,
               double threshold, std::ostream& out);

}  // namespace lir
