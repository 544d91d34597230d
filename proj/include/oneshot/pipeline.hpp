#ifndef ONESHOT_PIPELINE_HPP
#define ONESHOT_PIPELINE_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "oneshot/geodesic.hpp"
#include "oneshot/phantom.hpp"
#include "oneshot/prnet.hpp"
#include "oneshot/propagate.hpp"
#include "oneshot/segmenter.hpp"

namespace oneshot {

// A stage mean within this distance of the one it should beat still counts as
// "not worse": the trend verdicts are about ordering, not noise-level jitter.
inline constexpr double kTrendTieTolerance = 0.005;

// One experiment: a phantom family with a single support subject (subject 0),
// unlabeled subjects 1..N, and held-out test subjects N+1..N+M.
struct ExperimentConfig {
  PhantomConfig phantom;
  int unlabeled_count = 8;
  int test_count = 4;
  int scribble_points = 8;  // polyline length per class (background matches)

  PRNetConfig prnet;
  PRNetTrainConfig prnet_train;
  PropagateConfig propagate;
  double tau = 0.5;
  GeosConfig geos;
  SegConfig seg;

  std::string out_dir = "out";
  std::uint64_t seed = 20240817;

  void validate() const;  // throws std::invalid_argument
};

// JSON round-trip. Reading starts from defaults and overrides only the keys
// present, so partial configs are valid configs.
nlohmann::json experiment_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);
void save_experiment_config(const std::string& path, const ExperimentConfig& cfg);

// Mean test Dice of one pipeline stage for one foreground class.
struct StageClassDice {
  std::string stage;  // "pseudo_mask" | "trained" | "trained_plc"
  int cls = 0;
  std::vector<double> per_volume;  // test subjects, in subject order
  double mean = 0.0;
};

struct StageVerdicts {
  double mean_pseudo = 0.0;
  double mean_trained = 0.0;
  double mean_plc = 0.0;
  bool trained_vs_pseudo = false;  // mean(trained) >= mean(pseudo) - tolerance
  bool plc_vs_trained = false;     // mean(plc) >= mean(trained) - tolerance
};

struct MetricsReport {
  double tau = 0.5;
  int class_count = 0;  // including background
  std::vector<int> unlabeled_subjects;
  std::vector<int> test_subjects;
  std::vector<StageClassDice> dice;          // stage-major, class-minor
  std::map<std::string, double> stage_mean;  // stage -> mean over classes
  PrecisionReport propagation;               // kept-point precision vs gt
  std::vector<std::string> warnings;         // propagation + mask generation
  StageVerdicts verdicts;
};

// Trend verdicts with the tie tolerance above. Throws if a stage is missing.
StageVerdicts compare_stages(const MetricsReport& report);

// Deterministic serialization: identical reports produce identical bytes.
// Wall-clock numbers are deliberately kept out (they go to timing.json).
nlohmann::json report_to_json(const MetricsReport& report);
void write_report(const std::string& dir, const MetricsReport& report);

// Pipeline stages. Artifacts flow through files: each stage loads what the
// previous stages wrote under cfg.out_dir and persists its own outputs there,
// so any stage can be re-run in isolation from the saved artifacts. Every
// stochastic stage derives its seed from cfg.seed at the point of use;
// re-running a stage from a saved config reproduces it exactly.
void stage_phantom_gen(const ExperimentConfig& cfg);  // volumes/, support scribbles, config.json
void stage_train_prnet(const ExperimentConfig& cfg);  // prnet/ (params, offset bound, loss log)
void stage_propagate(const ExperimentConfig& cfg);    // propagation/ (audit + per-query points)
void stage_geos(const ExperimentConfig& cfg);         // masks/ (+ warnings.json)
void stage_train_seg(const ExperimentConfig& cfg);    // seg/ (per class, plain + corrected)
MetricsReport stage_evaluate(const ExperimentConfig& cfg);  // report.json, report.csv

// The full experiment: phantoms -> support scribbles -> localizer training ->
// propagation + feature filtering -> geodesic pseudo masks -> segmenter
// training without and with label correction -> test-set evaluation. Runs the
// stages above in order; failures abort with the stage name attached.
// Bit-deterministic in cfg.seed. Per-stage wall time goes to timing.json,
// never into the report.
MetricsReport run_pipeline(const ExperimentConfig& cfg);

struct TauSweepRow {
  double tau = 0.0;
  double foreground_precision = 0.0;
  double overall_precision = 0.0;
  double mean_kept_per_volume = 0.0;
  double pseudo_dice_mean = 0.0;  // over unlabeled volumes and fg classes
};

// Propagation runs once with filtering disabled; each row then re-filters the
// same located points at its own threshold, so rows differ only in what the
// feature filter kept. Writes sweep_tau.{json,csv} under cfg.out_dir.
std::vector<TauSweepRow> sweep_tau(const ExperimentConfig& cfg, const std::vector<double>& taus);

}  // namespace oneshot

#endif
