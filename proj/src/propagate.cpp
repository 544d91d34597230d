#include "oneshot/propagate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace oneshot {

using nlohmann::json;

EncodedPoint PRNetEncoder::encode(const Volume3& vol, const Coord3& c) const {
  PRNetOutput out = prnet_forward(spec_, params_, cfg_, crop_patch(vol, c, cfg_.patch_size));
  return {out.p, std::move(out.f2), std::move(out.f4)};
}

namespace {

Coord3 sample_start(const Shape3& shape, const Shape3& patch, std::mt19937_64& rng) {
  Coord3 c;
  for (int a = 0; a < 3; ++a) {
    int margin = std::min(patch[a] / 2, (shape[a] - 1) / 2);
    std::uniform_int_distribution<int> u(margin, shape[a] - 1 - margin);
    c[a] = u(rng);
  }
  return c;
}

int clamp_axis(long v, int dim) {
  return int(std::max(0L, std::min(long(dim) - 1, v)));
}

Coord3 land(const Coord3& c1, const Vec3& dpred, const Vec3& spacing, const Shape3& shape) {
  Coord3 out;
  for (int a = 0; a < 3; ++a)
    out[a] = clamp_axis(c1[a] + std::lround(dpred[a] / spacing[a]), shape[a]);
  return out;
}

double cosine(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("dfd_sim: feature length mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    ab += a.data[i] * b.data[i];
    aa += a.data[i] * a.data[i];
    bb += b.data[i] * b.data[i];
  }
  if (aa == 0.0 || bb == 0.0) return -2.0;  // sentinel, handled by caller
  // sqrt(aa*bb) keeps cos(v,v) exactly 1: ab == aa and sqrt(aa^2) == aa.
  double c = ab / std::sqrt(aa * bb);
  return std::min(1.0, std::max(-1.0, c));
}

}  // namespace

LocatedPoint locate_point(const PatchEncoder& enc, double r, const Volume3& support,
                          const Coord3& c0, int query_id, const Volume3& query,
                          std::mt19937_64& rng) {
  if (!support.in_bounds(c0))
    throw std::invalid_argument("locate_point: support point out of bounds");
  EncodedPoint es = enc.encode(support, c0);
  LocatedPoint lp;
  lp.source = c0;
  lp.query_id = query_id;
  lp.start = sample_start(query.shape, enc.patch(), rng);
  EncodedPoint eq = enc.encode(query, lp.start);
  lp.located = land(lp.start, pred_offset(es.p, eq.p, r), query.spacing, query.shape);
  return lp;
}

double dfd_sim(const Tensor& f2_s, const Tensor& f4_s, const Tensor& f2_q, const Tensor& f4_q) {
  const double c2 = cosine(f2_s, f2_q);
  const double c4 = cosine(f4_s, f4_q);
  if (c2 == -2.0 || c4 == -2.0) return -1.0;
  return c2 * c4;
}

std::vector<LocatedPoint> filter_points(std::vector<LocatedPoint>& points, double tau) {
  std::vector<LocatedPoint> kept;
  for (auto& p : points) {
    p.kept = p.sim > tau;
    if (p.kept) kept.push_back(p);
  }
  return kept;
}

PropagationResult propagate_scribbles(const PatchEncoder& enc, double r, const Volume3& support,
                                      const ScribbleSet& scribbles,
                                      const std::vector<Volume3>& queries, double tau,
                                      const PropagateConfig& cfg, std::mt19937_64& rng) {
  if (scribbles.points.empty())
    throw std::invalid_argument("propagate_scribbles: empty support scribble");
  if (cfg.restarts < 1) throw std::invalid_argument("propagate_scribbles: restarts must be >= 1");
  scribbles.validate(support.shape);

  PropagationResult res;
  res.scribbles.resize(queries.size());
  for (auto& s : res.scribbles) s.class_count = scribbles.class_count;

  for (const ScribblePoint& sp : scribbles.points) {
    const EncodedPoint es = enc.encode(support, sp.voxel);
    for (std::size_t q = 0; q < queries.size(); ++q) {
      const Volume3& query = queries[q];
      LocatedPoint best;
      for (int k = 0; k < cfg.restarts; ++k) {
        LocatedPoint lp;
        lp.source = sp.voxel;
        lp.label = sp.label;
        lp.query_id = int(q);
        lp.start = sample_start(query.shape, enc.patch(), rng);
        EncodedPoint eq = enc.encode(query, lp.start);
        lp.located = land(lp.start, pred_offset(es.p, eq.p, r), query.spacing, query.shape);
        if (cfg.loc_noise_vox > 0) {
          std::uniform_int_distribution<int> jitter(-cfg.loc_noise_vox, cfg.loc_noise_vox);
          for (int a = 0; a < 3; ++a)
            lp.located[a] = clamp_axis(lp.located[a] + jitter(rng), query.shape[a]);
        }
        EncodedPoint el = enc.encode(query, lp.located);
        lp.sim = dfd_sim(es.f2, es.f4, el.f2, el.f4);
        if (best.query_id < 0 || lp.sim > best.sim) best = lp;
      }
      res.audit.push_back(best);
    }
  }

  std::vector<LocatedPoint> kept = filter_points(res.audit, tau);
  for (const LocatedPoint& p : kept)
    res.scribbles[p.query_id].points.push_back({p.located, p.label});

  // Record (volume, class) pairs whose every propagated point was discarded:
  // downstream mask generation will be missing seeds there.
  std::set<std::uint8_t> support_classes;
  for (const auto& sp : scribbles.points) support_classes.insert(sp.label);
  for (std::size_t q = 0; q < queries.size(); ++q)
    for (std::uint8_t cls : support_classes)
      if (!res.scribbles[q].has_class(cls))
        res.warnings.push_back("query " + std::to_string(q) + " class " + std::to_string(cls) +
                               ": all propagated points discarded");
  return res;
}

PrecisionReport precision_report(const PropagationResult& result,
                                 const std::vector<LabelGrid>& gt) {
  std::map<int, ClassPrecision> by_class;
  int total_kept = 0, total_correct = 0;
  std::set<int> volumes_seen;
  for (const LocatedPoint& p : result.audit) {
    volumes_seen.insert(p.query_id);
    by_class.try_emplace(p.label).first->second.cls = p.label;
    if (!p.kept) continue;
    ClassPrecision& cp = by_class[p.label];
    cp.kept += 1;
    if (p.query_id < 0 || p.query_id >= int(gt.size()))
      throw std::invalid_argument("precision_report: query id outside ground-truth list");
    const LabelGrid& g = gt[p.query_id];
    if (g.at(p.located[0], p.located[1], p.located[2]) == p.label) cp.correct += 1;
  }
  PrecisionReport rep;
  double fg_sum = 0.0;
  int fg_n = 0;
  for (auto& [cls, cp] : by_class) {
    cp.empty = cp.kept == 0;
    cp.precision = cp.empty ? 0.0 : double(cp.correct) / double(cp.kept);
    total_kept += cp.kept;
    total_correct += cp.correct;
    if (cls >= 1) {
      fg_sum += cp.precision;
      fg_n += 1;
    }
    rep.classes.push_back(cp);
  }
  rep.overall_precision = total_kept ? double(total_correct) / double(total_kept) : 0.0;
  rep.foreground_precision = fg_n ? fg_sum / fg_n : 0.0;
  rep.mean_kept_per_volume =
      volumes_seen.empty() ? 0.0 : double(total_kept) / double(volumes_seen.size());
  return rep;
}

void save_propagation(const std::string& path, const PropagationResult& result) {
  json j;
  auto pts = json::array();
  for (const LocatedPoint& p : result.audit) {
    pts.push_back({{"source", {p.source[0], p.source[1], p.source[2]}},
                   {"label", int(p.label)},
                   {"query", p.query_id},
                   {"start", {p.start[0], p.start[1], p.start[2]}},
                   {"located", {p.located[0], p.located[1], p.located[2]}},
                   {"sim", p.sim},
                   {"kept", p.kept}});
  }
  j["points"] = pts;
  j["warnings"] = result.warnings;
  j["volumes"] = result.scribbles.size();
  j["class_count"] = result.scribbles.empty() ? 0 : result.scribbles.front().class_count;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_propagation: cannot write " + path);
  f << j.dump(2) << "\n";
}

PropagationResult load_propagation(const std::string& path, const std::vector<Shape3>& bounds) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_propagation: cannot read " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("load_propagation: malformed audit: " + std::string(e.what()));
  }
  PropagationResult res;
  const std::size_t volumes = j.at("volumes").get<std::size_t>();
  if (volumes != bounds.size())
    throw std::runtime_error("load_propagation: audit covers " + std::to_string(volumes) +
                             " volumes, expected " + std::to_string(bounds.size()));
  res.scribbles.resize(volumes);
  for (auto& s : res.scribbles) s.class_count = j.at("class_count").get<int>();
  for (const auto& pj : j.at("points")) {
    LocatedPoint p;
    auto read3 = [&](const char* key) {
      const auto& a = pj.at(key);
      return Coord3{a.at(0).get<int>(), a.at(1).get<int>(), a.at(2).get<int>()};
    };
    p.source = read3("source");
    p.label = std::uint8_t(pj.at("label").get<int>());
    p.query_id = pj.at("query").get<int>();
    p.start = read3("start");
    p.located = read3("located");
    p.sim = pj.at("sim").get<double>();
    p.kept = pj.at("kept").get<bool>();
    if (p.query_id < 0 || p.query_id >= int(volumes))
      throw std::runtime_error("load_propagation: query id out of range");
    const Shape3& sh = bounds[p.query_id];
    for (int a = 0; a < 3; ++a)
      if (p.located[a] < 0 || p.located[a] >= sh[a])
        throw std::runtime_error("load_propagation: located point out of bounds");
    res.audit.push_back(p);
    if (p.kept) res.scribbles[p.query_id].points.push_back({p.located, p.label});
  }
  for (const auto& w : j.at("warnings")) res.warnings.push_back(w.get<std::string>());
  return res;
}

}  // namespace oneshot
