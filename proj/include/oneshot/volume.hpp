#ifndef ONESHOT_VOLUME_HPP
#define ONESHOT_VOLUME_HPP

#include <array>
#include <cstdint>
#include <vector>

#include "oneshot/tensor.hpp"

namespace oneshot {

// Voxel index (z,x,y) and physical vector types. Axis order is (z,x,y)
// throughout, matching anisotropic spacing (e_z, e_x, e_y) in mm.
using Coord3 = std::array<int, 3>;
using Vec3 = std::array<double, 3>;
using Shape3 = std::array<int, 3>;

inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }

// 3D scalar grid with physical voxel spacing. Data is row-major (z,x,y):
// index = (z * H + x) * W + y for shape (D,H,W).
struct Volume3 {
  Shape3 shape{0, 0, 0};     // (D,H,W)
  Vec3 spacing{1.0, 1.0, 1.0};  // (e_z,e_x,e_y) mm, all > 0
  std::vector<float> data;

  Volume3() = default;
  Volume3(Shape3 s, Vec3 e);

  std::size_t numel() const {
    return static_cast<std::size_t>(shape[0]) * shape[1] * shape[2];
  }
  std::size_t index(int z, int x, int y) const {
    return (static_cast<std::size_t>(z) * shape[1] + x) * shape[2] + y;
  }
  float at(int z, int x, int y) const { return data[index(z, x, y)]; }
  float& at(int z, int x, int y) { return data[index(z, x, y)]; }
  bool in_bounds(const Coord3& c) const {
    return c[0] >= 0 && c[0] < shape[0] && c[1] >= 0 && c[1] < shape[1] && c[2] >= 0 && c[2] < shape[2];
  }
  float min_value() const;
  float max_value() const;

  // Physical position of a voxel center, in mm.
  Vec3 to_mm(const Coord3& c) const {
    return {c[0] * spacing[0], c[1] * spacing[1], c[2] * spacing[2]};
  }
};

// Per-voxel class labels, class 0 = background. Shape matches its paired Volume3.
struct LabelGrid {
  Shape3 shape{0, 0, 0};
  std::vector<std::uint8_t> labels;

  LabelGrid() = default;
  explicit LabelGrid(Shape3 s)
      : shape(s), labels(static_cast<std::size_t>(s[0]) * s[1] * s[2], 0) {}

  std::size_t numel() const {
    return static_cast<std::size_t>(shape[0]) * shape[1] * shape[2];
  }
  std::size_t index(int z, int x, int y) const {
    return (static_cast<std::size_t>(z) * shape[1] + x) * shape[2] + y;
  }
  std::uint8_t at(int z, int x, int y) const { return labels[index(z, x, y)]; }
  std::uint8_t& at(int z, int x, int y) { return labels[index(z, x, y)]; }
  bool in_bounds(const Coord3& c) const {
    return c[0] >= 0 && c[0] < shape[0] && c[1] >= 0 && c[1] < shape[1] && c[2] >= 0 && c[2] < shape[2];
  }
  std::size_t count_label(std::uint8_t cls) const;
};

// Sparse labeled voxel points: support annotations and propagated pseudo scribbles.
struct ScribblePoint {
  Coord3 voxel{0, 0, 0};
  std::uint8_t label = 0;
};

struct ScribbleSet {
  int class_count = 0;
  std::vector<ScribblePoint> points;

  bool has_class(std::uint8_t cls) const {
    for (const auto& p : points)
      if (p.label == cls) return true;
    return false;
  }
  std::vector<Coord3> points_of_class(std::uint8_t cls) const {
    std::vector<Coord3> out;
    for (const auto& p : points)
      if (p.label == cls) out.push_back(p.voxel);
    return out;
  }
  // Throws if any point is out of bounds for `shape` or any label >= class_count.
  void validate(const Shape3& shape) const;
};

// Min-max rescale to [0,1]. A constant volume maps to all zeros.
Volume3 normalize_intensity(const Volume3& v);

// Crop a (d,h,w) patch centered at `center` (center index = floor(size/2)).
// Out-of-bounds voxels are padded with the volume's minimum value.
Tensor crop_patch(const Volume3& v, const Coord3& center, const Shape3& size);

// Binary {0,1} crop of `labels == cls`, same geometry as crop_patch, zero padded.
Tensor crop_labels(const LabelGrid& g, std::uint8_t cls, const Coord3& center, const Shape3& size);

}  // namespace oneshot

#endif
