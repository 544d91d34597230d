#include "oneshot/volume.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

namespace oneshot {

Volume3::Volume3(Shape3 s, Vec3 e) : shape(s), spacing(e) {
  for (int a = 0; a < 3; ++a) {
    if (shape[a] <= 0) throw std::invalid_argument("Volume3: non-positive shape");
    if (!(spacing[a] > 0.0)) throw std::invalid_argument("Volume3: non-positive spacing");
  }
  data.assign(numel(), 0.0f);
}

float Volume3::min_value() const {
  float m = std::numeric_limits<float>::max();
  for (float v : data) m = std::min(m, v);
  return m;
}

float Volume3::max_value() const {
  float m = std::numeric_limits<float>::lowest();
  for (float v : data) m = std::max(m, v);
  return m;
}

std::size_t LabelGrid::count_label(std::uint8_t cls) const {
  std::size_t n = 0;
  for (auto l : labels)
    if (l == cls) ++n;
  return n;
}

void ScribbleSet::validate(const Shape3& shape) const {
  for (const auto& p : points) {
    if (p.voxel[0] < 0 || p.voxel[0] >= shape[0] || p.voxel[1] < 0 || p.voxel[1] >= shape[1] ||
        p.voxel[2] < 0 || p.voxel[2] >= shape[2])
      throw std::runtime_error("ScribbleSet: point out of volume bounds");
    if (p.label >= class_count)
      throw std::runtime_error("ScribbleSet: label " + std::to_string(int(p.label)) +
                               " >= class_count " + std::to_string(class_count));
  }
}

Volume3 normalize_intensity(const Volume3& v) {
  Volume3 out = v;
  const float lo = v.min_value();
  const float hi = v.max_value();
  if (hi <= lo) {
    std::fill(out.data.begin(), out.data.end(), 0.0f);
    return out;
  }
  const float inv = 1.0f / (hi - lo);
  for (float& x : out.data) x = (x - lo) * inv;
  return out;
}

Tensor crop_patch(const Volume3& v, const Coord3& center, const Shape3& size) {
  if (!v.in_bounds(center)) throw std::invalid_argument("crop_patch: center outside volume");
  for (int a = 0; a < 3; ++a)
    if (size[a] > 2 * v.shape[a])
      throw std::invalid_argument("crop_patch: size exceeds 2x volume extent on axis " +
                                  std::to_string(a));
  const float pad = v.min_value();
  Tensor out({size[0], size[1], size[2]});
  const int z0 = center[0] - size[0] / 2;
  const int x0 = center[1] - size[1] / 2;
  const int y0 = center[2] - size[2] / 2;
  std::size_t idx = 0;
  for (int z = 0; z < size[0]; ++z) {
    const int vz = z0 + z;
    for (int x = 0; x < size[1]; ++x) {
      const int vx = x0 + x;
      const bool zx_ok = vz >= 0 && vz < v.shape[0] && vx >= 0 && vx < v.shape[1];
      for (int y = 0; y < size[2]; ++y, ++idx) {
        const int vy = y0 + y;
        out.data[idx] = (zx_ok && vy >= 0 && vy < v.shape[2]) ? v.at(vz, vx, vy) : pad;
      }
    }
  }
  return out;
}

Tensor crop_labels(const LabelGrid& g, std::uint8_t cls, const Coord3& center, const Shape3& size) {
  if (!g.in_bounds(center)) throw std::invalid_argument("crop_labels: center outside grid");
  Tensor out({size[0], size[1], size[2]});
  const int z0 = center[0] - size[0] / 2;
  const int x0 = center[1] - size[1] / 2;
  const int y0 = center[2] - size[2] / 2;
  std::size_t idx = 0;
  for (int z = 0; z < size[0]; ++z) {
    const int vz = z0 + z;
    for (int x = 0; x < size[1]; ++x) {
      const int vx = x0 + x;
      const bool zx_ok = vz >= 0 && vz < g.shape[0] && vx >= 0 && vx < g.shape[1];
      for (int y = 0; y < size[2]; ++y, ++idx) {
        const int vy = y0 + y;
        out.data[idx] =
            (zx_ok && vy >= 0 && vy < g.shape[2] && g.at(vz, vx, vy) == cls) ? 1.0 : 0.0;
      }
    }
  }
  return out;
}

}  // namespace oneshot
