#include "oneshot/volume_io.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace oneshot {

using nlohmann::json;

namespace {

json read_sidecar(const std::string& path) {
  std::ifstream in(path + ".json");
  if (!in) throw std::runtime_error("load: missing sidecar " + path + ".json");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("load: malformed sidecar " + path + ".json: " + e.what());
  }
  return j;
}

void write_sidecar(const std::string& path, const Shape3& shape, const Vec3& spacing,
                   const std::string& dtype) {
  json j;
  j["shape"] = {shape[0], shape[1], shape[2]};
  j["spacing"] = {spacing[0], spacing[1], spacing[2]};
  j["dtype"] = dtype;
  std::ofstream out(path + ".json");
  if (!out) throw std::runtime_error("save: cannot write sidecar " + path + ".json");
  out << j.dump(2) << "\n";
}

void parse_header(const json& j, const std::string& path, const std::string& want_dtype,
                  Shape3& shape, Vec3& spacing) {
  if (!j.contains("shape") || !j.contains("dtype"))
    throw std::runtime_error("load: sidecar missing fields for " + path);
  if (j["dtype"].get<std::string>() != want_dtype)
    throw std::runtime_error("load: dtype mismatch for " + path + " (want " + want_dtype + ")");
  auto s = j["shape"];
  if (!s.is_array() || s.size() != 3) throw std::runtime_error("load: bad shape in " + path);
  for (int a = 0; a < 3; ++a) {
    shape[a] = s[a].get<int>();
    if (shape[a] <= 0) throw std::runtime_error("load: non-positive shape in " + path);
  }
  spacing = {1.0, 1.0, 1.0};
  if (j.contains("spacing")) {
    auto e = j["spacing"];
    if (!e.is_array() || e.size() != 3) throw std::runtime_error("load: bad spacing in " + path);
    for (int a = 0; a < 3; ++a) {
      spacing[a] = e[a].get<double>();
      if (!(spacing[a] > 0.0)) throw std::runtime_error("load: non-positive spacing in " + path);
    }
  }
}

std::size_t file_size(std::ifstream& in) {
  in.seekg(0, std::ios::end);
  const auto n = in.tellg();
  in.seekg(0, std::ios::beg);
  return static_cast<std::size_t>(n);
}

}  // namespace

void save_volume(const std::string& path, const Volume3& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_volume: cannot write " + path);
  out.write(reinterpret_cast<const char*>(v.data.data()),
            static_cast<std::streamsize>(v.data.size() * sizeof(float)));
  write_sidecar(path, v.shape, v.spacing, "f32");
}

Volume3 load_volume(const std::string& path) {
  const json j = read_sidecar(path);
  Shape3 shape;
  Vec3 spacing;
  parse_header(j, path, "f32", shape, spacing);
  Volume3 v(shape, spacing);

  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_volume: cannot read " + path);
  if (file_size(in) != v.numel() * sizeof(float))
    throw std::runtime_error("load_volume: data length does not match sidecar shape for " + path);
  in.read(reinterpret_cast<char*>(v.data.data()),
          static_cast<std::streamsize>(v.numel() * sizeof(float)));
  if (!in) throw std::runtime_error("load_volume: short read on " + path);
  return v;
}

void save_labels(const std::string& path, const LabelGrid& g, const Vec3& spacing) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_labels: cannot write " + path);
  out.write(reinterpret_cast<const char*>(g.labels.data()),
            static_cast<std::streamsize>(g.labels.size()));
  write_sidecar(path, g.shape, spacing, "u8");
}

LabelGrid load_labels(const std::string& path) {
  const json j = read_sidecar(path);
  Shape3 shape;
  Vec3 spacing;
  parse_header(j, path, "u8", shape, spacing);
  LabelGrid g(shape);

  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_labels: cannot read " + path);
  if (file_size(in) != g.numel())
    throw std::runtime_error("load_labels: data length does not match sidecar shape for " + path);
  in.read(reinterpret_cast<char*>(g.labels.data()), static_cast<std::streamsize>(g.numel()));
  if (!in) throw std::runtime_error("load_labels: short read on " + path);
  return g;
}

void save_scribbles(const std::string& path, const ScribbleSet& s) {
  json j;
  j["class_count"] = s.class_count;
  auto pts = json::array();
  for (const auto& p : s.points)
    pts.push_back({p.voxel[0], p.voxel[1], p.voxel[2], int(p.label)});
  j["points"] = pts;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_scribbles: cannot write " + path);
  out << j.dump(2) << "\n";
}

ScribbleSet load_scribbles(const std::string& path, const Shape3& bounds) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_scribbles: cannot read " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("load_scribbles: malformed " + path + ": " + e.what());
  }
  ScribbleSet s;
  s.class_count = j.at("class_count").get<int>();
  for (const auto& p : j.at("points")) {
    if (!p.is_array() || p.size() != 4)
      throw std::runtime_error("load_scribbles: bad point entry in " + path);
    ScribblePoint sp;
    sp.voxel = {p[0].get<int>(), p[1].get<int>(), p[2].get<int>()};
    const int label = p[3].get<int>();
    if (label < 0 || label > 255) throw std::runtime_error("load_scribbles: bad label in " + path);
    sp.label = static_cast<std::uint8_t>(label);
    s.points.push_back(sp);
  }
  s.validate(bounds);
  return s;
}

}  // namespace oneshot
