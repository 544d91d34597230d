#include "oneshot/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <stdexcept>

#include "oneshot/metrics.hpp"
#include "oneshot/volume_io.hpp"

namespace oneshot {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSaltScribble = 0x506c536372ull;
constexpr std::uint64_t kSaltPrnet = 0x506c50726eull;
constexpr std::uint64_t kSaltProp = 0x506c507270ull;
constexpr std::uint64_t kSaltSeg = 0x506c536567ull;

std::string sub_name(int subject) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "sub%02d", subject);
  return buf;
}

// --- config (de)serialization: read starts from defaults, overrides present
// keys only, so partial files stay valid ---------------------------------

json adam_json(const AdamConfig& c) {
  return {{"lr", c.lr},         {"beta1", c.beta1},       {"beta2", c.beta2},
          {"eps", c.eps},       {"lr_decay", c.lr_decay}, {"decay_every", c.decay_every}};
}

AdamConfig adam_from(const json& j, AdamConfig c) {
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.decay_every = j.value("decay_every", c.decay_every);
  return c;
}

json phantom_json(const PhantomConfig& c) {
  return {{"shape", c.shape},
          {"spacing", c.spacing},
          {"organ_count", c.organ_count},
          {"organ_offsets", c.organ_offsets},
          {"noise_sigma", c.noise_sigma},
          {"deform_amplitude_vox", c.deform_amplitude_vox},
          {"deform_modes", c.deform_modes},
          {"background_level", c.background_level},
          {"pattern_amplitude", c.pattern_amplitude},
          {"organ_radius_frac_min", c.organ_radius_frac_min},
          {"organ_radius_frac_max", c.organ_radius_frac_max},
          {"min_organ_fraction", c.min_organ_fraction},
          {"max_organ_fraction", c.max_organ_fraction},
          {"seed", c.seed}};
}

PhantomConfig phantom_from(const json& j, PhantomConfig c) {
  c.shape = j.value("shape", c.shape);
  c.spacing = j.value("spacing", c.spacing);
  c.organ_count = j.value("organ_count", c.organ_count);
  c.organ_offsets = j.value("organ_offsets", c.organ_offsets);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.deform_amplitude_vox = j.value("deform_amplitude_vox", c.deform_amplitude_vox);
  c.deform_modes = j.value("deform_modes", c.deform_modes);
  c.background_level = j.value("background_level", c.background_level);
  c.pattern_amplitude = j.value("pattern_amplitude", c.pattern_amplitude);
  c.organ_radius_frac_min = j.value("organ_radius_frac_min", c.organ_radius_frac_min);
  c.organ_radius_frac_max = j.value("organ_radius_frac_max", c.organ_radius_frac_max);
  c.min_organ_fraction = j.value("min_organ_fraction", c.min_organ_fraction);
  c.max_organ_fraction = j.value("max_organ_fraction", c.max_organ_fraction);
  c.seed = j.value("seed", c.seed);
  return c;
}

json prnet_json(const PRNetConfig& c) {
  return {{"patch_size", c.patch_size},   {"enc_channels", c.enc_channels},
          {"dec_channels", c.dec_channels}, {"head_width", c.head_width},
          {"r", c.r}};
}

PRNetConfig prnet_from(const json& j, PRNetConfig c) {
  c.patch_size = j.value("patch_size", c.patch_size);
  c.enc_channels = j.value("enc_channels", c.enc_channels);
  c.dec_channels = j.value("dec_channels", c.dec_channels);
  c.head_width = j.value("head_width", c.head_width);
  c.r = j.value("r", c.r);
  return c;
}

json prnet_train_json(const PRNetTrainConfig& c) {
  return {{"batch", c.batch},
          {"steps_per_epoch", c.steps_per_epoch},
          {"epochs", c.epochs},
          {"adam", adam_json(c.adam)},
          {"seed", c.seed}};
}

PRNetTrainConfig prnet_train_from(const json& j, PRNetTrainConfig c) {
  c.batch = j.value("batch", c.batch);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  c.epochs = j.value("epochs", c.epochs);
  if (j.contains("adam")) c.adam = adam_from(j.at("adam"), c.adam);
  c.seed = j.value("seed", c.seed);
  return c;
}

json propagate_json(const PropagateConfig& c) {
  return {{"restarts", c.restarts}, {"loc_noise_vox", c.loc_noise_vox}};
}

PropagateConfig propagate_from(const json& j, PropagateConfig c) {
  c.restarts = j.value("restarts", c.restarts);
  c.loc_noise_vox = j.value("loc_noise_vox", c.loc_noise_vox);
  return c;
}

json geos_json(const GeosConfig& c) {
  return {{"gamma", c.gamma},
          {"neighborhood", c.neighborhood},
          {"max_passes", c.max_passes},
          {"epsilon", c.epsilon}};
}

GeosConfig geos_from(const json& j, GeosConfig c) {
  c.gamma = j.value("gamma", c.gamma);
  c.neighborhood = j.value("neighborhood", c.neighborhood);
  c.max_passes = j.value("max_passes", c.max_passes);
  c.epsilon = j.value("epsilon", c.epsilon);
  return c;
}

json seg_json(const SegConfig& c) {
  return {{"crop_size", c.crop_size},
          {"depth", c.depth},
          {"base_channels", c.base_channels},
          {"leaky_slope", c.leaky_slope},
          {"epochs", c.epochs},
          {"batch", c.batch},
          {"steps_per_epoch", c.steps_per_epoch},
          {"adam", adam_json(c.adam)},
          {"roi_margin", c.roi_margin},
          {"fg_crop_bias", c.fg_crop_bias},
          {"plc_enabled", c.plc_enabled},
          {"plc_warmup_epochs", c.plc_warmup_epochs},
          {"plc_initial", c.plc_initial},
          {"plc_decay", c.plc_decay},
          {"plc_floor", c.plc_floor},
          {"seed", c.seed}};
}

SegConfig seg_from(const json& j, SegConfig c) {
  c.crop_size = j.value("crop_size", c.crop_size);
  c.depth = j.value("depth", c.depth);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  if (j.contains("adam")) c.adam = adam_from(j.at("adam"), c.adam);
  c.roi_margin = j.value("roi_margin", c.roi_margin);
  c.fg_crop_bias = j.value("fg_crop_bias", c.fg_crop_bias);
  c.plc_enabled = j.value("plc_enabled", c.plc_enabled);
  c.plc_warmup_epochs = j.value("plc_warmup_epochs", c.plc_warmup_epochs);
  c.plc_initial = j.value("plc_initial", c.plc_initial);
  c.plc_decay = j.value("plc_decay", c.plc_decay);
  c.plc_floor = j.value("plc_floor", c.plc_floor);
  c.seed = j.value("seed", c.seed);
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

void ExperimentConfig::validate() const {
  phantom.validate();
  prnet.validate();
  geos.validate();
  seg.validate();
  if (unlabeled_count < 1) throw std::invalid_argument("ExperimentConfig: unlabeled_count >= 1");
  if (test_count < 1) throw std::invalid_argument("ExperimentConfig: test_count >= 1");
  if (scribble_points < 1) throw std::invalid_argument("ExperimentConfig: scribble_points >= 1");
  if (!(tau >= -2.0 && tau <= 1.0))
    throw std::invalid_argument("ExperimentConfig: tau must lie in [-2, 1]");
  if (prnet_train.batch < 1 || prnet_train.steps_per_epoch < 1 || prnet_train.epochs < 1)
    throw std::invalid_argument("ExperimentConfig: prnet_train counts must be >= 1");
  if (propagate.restarts < 1)
    throw std::invalid_argument("ExperimentConfig: propagate.restarts must be >= 1");
  if (propagate.loc_noise_vox < 0)
    throw std::invalid_argument("ExperimentConfig: propagate.loc_noise_vox must be >= 0");
  if (out_dir.empty()) throw std::invalid_argument("ExperimentConfig: out_dir must be set");
  for (int a = 0; a < 3; ++a)
    if (seg.crop_size[a] > phantom.shape[a])
      throw std::invalid_argument("ExperimentConfig: seg crop exceeds the phantom volume");
}

json experiment_to_json(const ExperimentConfig& cfg) {
  return {{"phantom", phantom_json(cfg.phantom)},
          {"unlabeled_count", cfg.unlabeled_count},
          {"test_count", cfg.test_count},
          {"scribble_points", cfg.scribble_points},
          {"prnet", prnet_json(cfg.prnet)},
          {"prnet_train", prnet_train_json(cfg.prnet_train)},
          {"propagate", propagate_json(cfg.propagate)},
          {"tau", cfg.tau},
          {"geos", geos_json(cfg.geos)},
          {"seg", seg_json(cfg.seg)},
          {"out_dir", cfg.out_dir},
          {"seed", cfg.seed}};
}

ExperimentConfig experiment_from_json(const json& j) {
  ExperimentConfig cfg;
  if (j.contains("phantom")) cfg.phantom = phantom_from(j.at("phantom"), cfg.phantom);
  cfg.unlabeled_count = j.value("unlabeled_count", cfg.unlabeled_count);
  cfg.test_count = j.value("test_count", cfg.test_count);
  cfg.scribble_points = j.value("scribble_points", cfg.scribble_points);
  if (j.contains("prnet")) cfg.prnet = prnet_from(j.at("prnet"), cfg.prnet);
  if (j.contains("prnet_train"))
    cfg.prnet_train = prnet_train_from(j.at("prnet_train"), cfg.prnet_train);
  if (j.contains("propagate")) cfg.propagate = propagate_from(j.at("propagate"), cfg.propagate);
  cfg.tau = j.value("tau", cfg.tau);
  if (j.contains("geos")) cfg.geos = geos_from(j.at("geos"), cfg.geos);
  if (j.contains("seg")) cfg.seg = seg_from(j.at("seg"), cfg.seg);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config " + path);
  json j;
  f >> j;
  return experiment_from_json(j);
}

void save_experiment_config(const std::string& path, const ExperimentConfig& cfg) {
  write_text(path, experiment_to_json(cfg).dump(2) + "\n");
}

StageVerdicts compare_stages(const MetricsReport& report) {
  const auto need = [&](const char* stage) {
    const auto it = report.stage_mean.find(stage);
    if (it == report.stage_mean.end())
      throw std::invalid_argument(std::string("compare_stages: report missing stage '") + stage +
                                  "'");
    return it->second;
  };
  StageVerdicts v;
  v.mean_pseudo = need("pseudo_mask");
  v.mean_trained = need("trained");
  v.mean_plc = need("trained_plc");
  v.trained_vs_pseudo = v.mean_trained >= v.mean_pseudo - kTrendTieTolerance;
  v.plc_vs_trained = v.mean_plc >= v.mean_trained - kTrendTieTolerance;
  return v;
}

json report_to_json(const MetricsReport& report) {
  json dice = json::array();
  for (const auto& d : report.dice)
    dice.push_back({{"stage", d.stage},
                    {"class", d.cls},
                    {"per_volume", d.per_volume},
                    {"mean", d.mean}});
  json prop_classes = json::array();
  for (const auto& c : report.propagation.classes)
    prop_classes.push_back({{"class", c.cls},
                            {"kept", c.kept},
                            {"correct", c.correct},
                            {"precision", c.precision},
                            {"empty", c.empty}});
  return {{"tau", report.tau},
          {"class_count", report.class_count},
          {"unlabeled_subjects", report.unlabeled_subjects},
          {"test_subjects", report.test_subjects},
          {"dice", dice},
          {"stage_mean", report.stage_mean},
          {"propagation",
           {{"classes", prop_classes},
            {"overall_precision", report.propagation.overall_precision},
            {"foreground_precision", report.propagation.foreground_precision},
            {"mean_kept_per_volume", report.propagation.mean_kept_per_volume}}},
          {"warnings", report.warnings},
          {"verdicts",
           {{"mean_pseudo", report.verdicts.mean_pseudo},
            {"mean_trained", report.verdicts.mean_trained},
            {"mean_plc", report.verdicts.mean_plc},
            {"trained_vs_pseudo", report.verdicts.trained_vs_pseudo},
            {"plc_vs_trained", report.verdicts.plc_vs_trained}}}};
}

void write_report(const std::string& dir, const MetricsReport& report) {
  write_text(fs::path(dir) / "report.json", report_to_json(report).dump(2) + "\n");

  std::string csv = "metric,stage,class,subject,value\n";
  char buf[160];
  for (const auto& d : report.dice) {
    for (std::size_t i = 0; i < d.per_volume.size(); ++i) {
      std::snprintf(buf, sizeof buf, "dice,%s,%d,%d,%.17g\n", d.stage.c_str(), d.cls,
                    report.test_subjects[i], d.per_volume[i]);
      csv += buf;
    }
    std::snprintf(buf, sizeof buf, "dice_class_mean,%s,%d,,%.17g\n", d.stage.c_str(), d.cls,
                  d.mean);
    csv += buf;
  }
  for (const auto& [stage, mean] : report.stage_mean) {
    std::snprintf(buf, sizeof buf, "dice_stage_mean,%s,,,%.17g\n", stage.c_str(), mean);
    csv += buf;
  }
  for (const auto& c : report.propagation.classes) {
    std::snprintf(buf, sizeof buf, "precision,propagation,%d,,%.17g\n", c.cls, c.precision);
    csv += buf;
    std::snprintf(buf, sizeof buf, "kept,propagation,%d,,%d\n", c.cls, c.kept);
    csv += buf;
  }
  std::snprintf(buf, sizeof buf, "verdict,trained_vs_pseudo,,,%d\n",
                report.verdicts.trained_vs_pseudo ? 1 : 0);
  csv += buf;
  std::snprintf(buf, sizeof buf, "verdict,plc_vs_trained,,,%d\n",
                report.verdicts.plc_vs_trained ? 1 : 0);
  csv += buf;
  std::snprintf(buf, sizeof buf, "tau,,,,%.17g\n", report.tau);
  csv += buf;
  write_text(fs::path(dir) / "report.csv", csv);
}

// --- stage plumbing -------------------------------------------------------

namespace {

int total_subjects(const ExperimentConfig& cfg) {
  return 1 + cfg.unlabeled_count + cfg.test_count;
}

fs::path subject_path(const ExperimentConfig& cfg, int s, const char* suffix) {
  return fs::path(cfg.out_dir) / "volumes" / (sub_name(s) + std::string(suffix));
}

void require_file(const fs::path& p, const char* produced_by) {
  if (!fs::exists(p))
    throw std::runtime_error("missing " + p.string() + " (run the " + produced_by +
                             " stage first)");
}

Volume3 load_subject(const ExperimentConfig& cfg, int s) {
  const fs::path p = subject_path(cfg, s, ".vol3");
  require_file(p, "phantom-gen");
  return load_volume(p.string());
}

LabelGrid load_subject_gt(const ExperimentConfig& cfg, int s) {
  const fs::path p = subject_path(cfg, s, "_gt.vol3");
  require_file(p, "phantom-gen");
  return load_labels(p.string());
}

std::pair<NetworkSpec, ModelParams> load_stage_params(const fs::path& prefix,
                                                      const char* produced_by) {
  require_file(prefix.string() + ".json", produced_by);
  require_file(prefix.string() + ".bin", produced_by);
  return load_params(prefix.string());
}

double load_offset_bound(const ExperimentConfig& cfg) {
  const fs::path p = fs::path(cfg.out_dir) / "prnet" / "meta.json";
  require_file(p, "train-prnet");
  std::ifstream f(p);
  json meta;
  f >> meta;
  return meta.at("r").get<double>();
}

LabelGrid as_class(const LabelGrid& binary, std::uint8_t cls) {
  LabelGrid out(binary.shape);
  for (std::size_t i = 0; i < out.labels.size(); ++i)
    out.labels[i] = binary.labels[i] ? cls : 0;
  return out;
}

LabelGrid binary_of(const LabelGrid& multi, std::uint8_t cls) {
  LabelGrid out(multi.shape);
  for (std::size_t i = 0; i < out.labels.size(); ++i) out.labels[i] = multi.labels[i] == cls;
  return out;
}

// Pseudo mask that degrades to "no foreground" instead of throwing when the
// kept points cannot support mask generation; the reason lands in `warnings`.
LabelGrid robust_pseudo_mask(const Volume3& v, const ScribbleSet& s, const GeosConfig& cfg,
                             int subject, std::vector<std::string>& warnings) {
  bool has_bg = false, has_fg = false;
  for (const auto& p : s.points) (p.label == 0 ? has_bg : has_fg) = true;
  if (!has_bg || !has_fg) {
    warnings.push_back("subject " + std::to_string(subject) + ": mask left empty (" +
                       (has_bg ? "no foreground" : "no background") + " points kept)");
    return LabelGrid(v.shape);
  }
  std::vector<std::string> local;
  LabelGrid mask = pseudo_mask(v, s, cfg, &local);
  for (const auto& w : local)
    warnings.push_back("subject " + std::to_string(subject) + ": " + w);
  return mask;
}

struct StageTimer {
  std::map<std::string, double> seconds;

  template <class F>
  void run(const std::string& name, F&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      fn();
    } catch (const std::exception& e) {
      throw std::runtime_error("stage " + name + ": " + e.what());
    }
    seconds[name] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  void write(const fs::path& path) const {
    json j{{"stages", seconds}};
    double total = 0.0;
    for (const auto& [_, s] : seconds) total += s;
    j["total"] = total;
    write_text(path, j.dump(2) + "\n");
  }
};

}  // namespace

void stage_phantom_gen(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path out(cfg.out_dir);
  fs::create_directories(out / "volumes");
  save_experiment_config((out / "config.json").string(), cfg);

  for (int s = 0; s < total_subjects(cfg); ++s) {
    auto [v, g] = generate_phantom(cfg.phantom, s);
    const Volume3 norm = normalize_intensity(v);
    save_volume(subject_path(cfg, s, ".vol3").string(), norm);
    save_labels(subject_path(cfg, s, "_gt.vol3").string(), g, norm.spacing);
  }

  std::vector<std::uint8_t> classes;
  for (int c = 1; c <= cfg.phantom.organ_count; ++c)
    classes.push_back(static_cast<std::uint8_t>(c));
  std::mt19937_64 rng(mix_seed(cfg.seed, kSaltScribble));
  const LabelGrid support_gt = load_subject_gt(cfg, 0);
  const ScribbleSet support = draw_support_scribbles(support_gt, classes, cfg.scribble_points, rng);
  save_scribbles((out / "volumes" / "support_scribbles.json").string(), support);
}

void stage_train_prnet(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path out(cfg.out_dir);
  fs::create_directories(out / "prnet");

  // SSL sees the support and unlabeled volumes; the test subjects stay out.
  std::vector<Volume3> train;
  for (int s = 0; s <= cfg.unlabeled_count; ++s) train.push_back(load_subject(cfg, s));

  PRNetTrainConfig tcfg = cfg.prnet_train;
  tcfg.seed = mix_seed(cfg.seed, kSaltPrnet);
  tcfg.log_csv_path = (out / "prnet" / "train_log.csv").string();
  const PRNetTrainResult res = train_prnet(train, cfg.prnet, tcfg);
  save_params((out / "prnet" / "params").string(), res.spec, res.params);
  write_text(out / "prnet" / "meta.json", json{{"r", res.r}}.dump(2) + "\n");
}

void stage_propagate(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path out(cfg.out_dir);
  fs::create_directories(out / "propagation");

  const Volume3 support = load_subject(cfg, 0);
  const fs::path scrib_path = out / "volumes" / "support_scribbles.json";
  require_file(scrib_path, "phantom-gen");
  const ScribbleSet scribbles = load_scribbles(scrib_path.string(), support.shape);
  std::vector<Volume3> queries;
  for (int s = 1; s < total_subjects(cfg); ++s) queries.push_back(load_subject(cfg, s));

  auto [spec, params] = load_stage_params(out / "prnet" / "params", "train-prnet");
  const double r = load_offset_bound(cfg);
  const PRNetEncoder enc(std::move(spec), std::move(params), cfg.prnet);
  std::mt19937_64 rng(mix_seed(cfg.seed, kSaltProp));
  const PropagationResult prop =
      propagate_scribbles(enc, r, support, scribbles, queries, cfg.tau, cfg.propagate, rng);

  save_propagation((out / "propagation" / "audit.json").string(), prop);
  for (std::size_t q = 0; q < prop.scribbles.size(); ++q)
    save_scribbles(
        (out / "propagation" / (sub_name(1 + static_cast<int>(q)) + "_scribbles.json")).string(),
        prop.scribbles[q]);
}

void stage_geos(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path out(cfg.out_dir);
  fs::create_directories(out / "masks");

  std::vector<std::string> warnings;
  for (int s = 1; s < total_subjects(cfg); ++s) {
    const Volume3 v = load_subject(cfg, s);
    const fs::path sp = out / "propagation" / (sub_name(s) + "_scribbles.json");
    require_file(sp, "propagate");
    const ScribbleSet scr = load_scribbles(sp.string(), v.shape);
    const LabelGrid mask = robust_pseudo_mask(v, scr, cfg.geos, s, warnings);
    save_labels((out / "masks" / (sub_name(s) + "_mask.vol3")).string(), mask, v.spacing);
  }
  write_text(out / "masks" / "warnings.json", json{{"warnings", warnings}}.dump(2) + "\n");
}

void stage_train_seg(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path out(cfg.out_dir);
  fs::create_directories(out / "seg");

  std::vector<Volume3> tvols;
  std::vector<LabelGrid> masks;
  for (int s = 1; s <= cfg.unlabeled_count; ++s) {
    tvols.push_back(load_subject(cfg, s));
    const fs::path mp = out / "masks" / (sub_name(s) + "_mask.vol3");
    require_file(mp, "geos");
    masks.push_back(load_labels(mp.string()));
  }

  for (int cls = 1; cls <= cfg.phantom.organ_count; ++cls) {
    std::vector<LabelGrid> bmasks;
    for (const auto& m : masks) bmasks.push_back(binary_of(m, static_cast<std::uint8_t>(cls)));
    SegConfig sc = cfg.seg;
    sc.seed = mix_seed(cfg.seed, kSaltSeg + static_cast<std::uint64_t>(cls));
    const std::string base = (out / "seg" / ("cls" + std::to_string(cls))).string();

    // Same seed for both variants: they match exactly until correction starts.
    sc.plc_enabled = false;
    const SegTrainResult plain = train_segmenter(tvols, bmasks, sc, nullptr, base + "_plain_log.csv");
    save_params(base + "_plain", plain.spec, plain.params);

    sc.plc_enabled = true;
    const SegTrainResult plc = train_segmenter(tvols, bmasks, sc, nullptr, base + "_plc_log.csv");
    save_params(base + "_plc", plc.spec, plc.params);
  }
}

MetricsReport stage_evaluate(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path out(cfg.out_dir);
  const int classes = cfg.phantom.organ_count;
  const int total = total_subjects(cfg);

  MetricsReport rep;
  rep.tau = cfg.tau;
  rep.class_count = classes + 1;
  for (int s = 1; s <= cfg.unlabeled_count; ++s) rep.unlabeled_subjects.push_back(s);
  for (int s = 1 + cfg.unlabeled_count; s < total; ++s) rep.test_subjects.push_back(s);

  std::vector<LabelGrid> query_gts;
  for (int s = 1; s < total; ++s) query_gts.push_back(load_subject_gt(cfg, s));
  const fs::path audit = out / "propagation" / "audit.json";
  require_file(audit, "propagate");
  const PropagationResult prop = load_propagation(
      audit.string(), std::vector<Shape3>(query_gts.size(), cfg.phantom.shape));
  rep.propagation = precision_report(prop, query_gts);
  rep.warnings = prop.warnings;

  const fs::path mask_warn = out / "masks" / "warnings.json";
  require_file(mask_warn, "geos");
  {
    std::ifstream f(mask_warn);
    json j;
    f >> j;
    for (const auto& w : j.at("warnings"))
      rep.warnings.push_back(w.get<std::string>());
  }

  std::vector<Volume3> test_vols;
  std::vector<LabelGrid> test_masks;
  for (int s : rep.test_subjects) {
    test_vols.push_back(load_subject(cfg, s));
    const fs::path mp = out / "masks" / (sub_name(s) + "_mask.vol3");
    require_file(mp, "geos");
    test_masks.push_back(load_labels(mp.string()));
  }

  for (const std::string stage : {"pseudo_mask", "trained", "trained_plc"}) {
    double stage_sum = 0.0;
    for (int cls = 1; cls <= classes; ++cls) {
      StageClassDice row;
      row.stage = stage;
      row.cls = cls;
      NetworkSpec spec;
      ModelParams params;
      if (stage != "pseudo_mask") {
        const std::string variant = stage == "trained" ? "_plain" : "_plc";
        std::tie(spec, params) = load_stage_params(
            out / "seg" / ("cls" + std::to_string(cls) + variant), "train-seg");
      }
      for (std::size_t i = 0; i < rep.test_subjects.size(); ++i) {
        LabelGrid pred;
        if (stage == "pseudo_mask") {
          pred = test_masks[i];
        } else {
          const Volume3 probs = predict_volume(cfg.seg, spec, params, test_vols[i]);
          pred = as_class(threshold_mask(probs), static_cast<std::uint8_t>(cls));
        }
        row.per_volume.push_back(
            dice_score(pred, query_gts[rep.test_subjects[i] - 1], static_cast<std::uint8_t>(cls)));
        row.mean += row.per_volume.back();
      }
      row.mean /= row.per_volume.size();
      stage_sum += row.mean;
      rep.dice.push_back(std::move(row));
    }
    rep.stage_mean[stage] = stage_sum / classes;
  }
  rep.verdicts = compare_stages(rep);
  write_report(out.string(), rep);
  return rep;
}

MetricsReport run_pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  StageTimer timer;
  MetricsReport rep;
  timer.run("phantom-gen", [&] { stage_phantom_gen(cfg); });
  timer.run("train-prnet", [&] { stage_train_prnet(cfg); });
  timer.run("propagate", [&] { stage_propagate(cfg); });
  timer.run("geos", [&] { stage_geos(cfg); });
  timer.run("train-seg", [&] { stage_train_seg(cfg); });
  timer.run("evaluate", [&] { rep = stage_evaluate(cfg); });
  timer.write(fs::path(cfg.out_dir) / "timing.json");
  return rep;
}

std::vector<TauSweepRow> sweep_tau(const ExperimentConfig& user_cfg,
                                   const std::vector<double>& taus) {
  ExperimentConfig cfg = user_cfg;
  cfg.validate();
  if (taus.empty()) throw std::invalid_argument("sweep_tau: need at least one tau");

  const fs::path out(cfg.out_dir);
  fs::create_directories(out / "prnet");

  // Phantoms are cheap and deterministic: regenerate rather than load. Only
  // the support and unlabeled subjects take part in the sweep.
  const int total = 1 + cfg.unlabeled_count;
  std::vector<Volume3> vols(total);
  std::vector<LabelGrid> gts(total);
  for (int s = 0; s < total; ++s) {
    auto [v, g] = generate_phantom(cfg.phantom, s);
    vols[s] = normalize_intensity(v);
    gts[s] = std::move(g);
  }
  std::vector<std::uint8_t> classes;
  for (int c = 1; c <= cfg.phantom.organ_count; ++c)
    classes.push_back(static_cast<std::uint8_t>(c));
  std::mt19937_64 srng(mix_seed(cfg.seed, kSaltScribble));
  const ScribbleSet support = draw_support_scribbles(gts[0], classes, cfg.scribble_points, srng);

  // Reuse a previously trained localizer from out_dir when present (the
  // pipeline writes the same files); train one otherwise.
  NetworkSpec spec;
  ModelParams params;
  double r = 0.0;
  const std::string prefix = (out / "prnet" / "params").string();
  if (fs::exists(prefix + ".json") && fs::exists(out / "prnet" / "meta.json")) {
    std::tie(spec, params) = load_params(prefix);
    r = load_offset_bound(cfg);
  } else {
    PRNetTrainConfig tcfg = cfg.prnet_train;
    tcfg.seed = mix_seed(cfg.seed, kSaltPrnet);
    tcfg.log_csv_path = (out / "prnet" / "train_log.csv").string();
    PRNetTrainResult res = train_prnet(vols, cfg.prnet, tcfg);
    save_params(prefix, res.spec, res.params);
    write_text(out / "prnet" / "meta.json", json{{"r", res.r}}.dump(2) + "\n");
    spec = std::move(res.spec);
    params = std::move(res.params);
    r = res.r;
  }

  // One propagation with the filter disabled; every row re-filters the same
  // located points, so differences are purely the threshold's doing.
  const std::vector<Volume3> queries(vols.begin() + 1, vols.end());
  const std::vector<LabelGrid> query_gts(gts.begin() + 1, gts.end());
  PRNetEncoder enc(spec, params, cfg.prnet);
  std::mt19937_64 rng(mix_seed(cfg.seed, kSaltProp));
  const PropagationResult all =
      propagate_scribbles(enc, r, vols[0], support, queries, -1.5, cfg.propagate, rng);

  std::vector<TauSweepRow> rows;
  for (double tau : taus) {
    PropagationResult filtered;
    filtered.audit = all.audit;
    filter_points(filtered.audit, tau);
    filtered.scribbles.assign(queries.size(), ScribbleSet{});
    for (auto& s : filtered.scribbles) s.class_count = support.class_count;
    for (const auto& p : filtered.audit)
      if (p.kept) filtered.scribbles[p.query_id].points.push_back({p.located, p.label});

    TauSweepRow row;
    row.tau = tau;
    const PrecisionReport prec = precision_report(filtered, query_gts);
    row.foreground_precision = prec.foreground_precision;
    row.overall_precision = prec.overall_precision;
    row.mean_kept_per_volume = prec.mean_kept_per_volume;

    std::vector<std::string> warnings;
    double dice_sum = 0.0;
    int dice_count = 0;
    for (std::size_t q = 0; q < queries.size(); ++q) {
      const LabelGrid mask = robust_pseudo_mask(queries[q], filtered.scribbles[q], cfg.geos,
                                                1 + static_cast<int>(q), warnings);
      for (int cls = 1; cls <= cfg.phantom.organ_count; ++cls) {
        dice_sum += dice_score(mask, query_gts[q], static_cast<std::uint8_t>(cls));
        ++dice_count;
      }
    }
    row.pseudo_dice_mean = dice_sum / dice_count;
    rows.push_back(row);
  }

  json jrows = json::array();
  std::string csv =
      "tau,foreground_precision,overall_precision,mean_kept_per_volume,pseudo_dice_mean\n";
  char buf[200];
  for (const auto& w : rows) {
    jrows.push_back({{"tau", w.tau},
                     {"foreground_precision", w.foreground_precision},
                     {"overall_precision", w.overall_precision},
                     {"mean_kept_per_volume", w.mean_kept_per_volume},
                     {"pseudo_dice_mean", w.pseudo_dice_mean}});
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", w.tau,
                  w.foreground_precision, w.overall_precision, w.mean_kept_per_volume,
                  w.pseudo_dice_mean);
    csv += buf;
  }
  write_text(out / "sweep_tau.json", json{{"rows", jrows}}.dump(2) + "\n");
  write_text(out / "sweep_tau.csv", csv);
  return rows;
}

}  // namespace oneshot
