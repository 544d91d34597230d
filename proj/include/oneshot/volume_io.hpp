#ifndef ONESHOT_VOLUME_IO_HPP
#define ONESHOT_VOLUME_IO_HPP

#include <string>

#include "oneshot/volume.hpp"

namespace oneshot {

// `.vol3`: raw little-endian scalars, row-major (z,x,y), with a JSON sidecar
// `<path>.json` holding {"shape":[D,H,W],"spacing":[ez,ex,ey],"dtype":"f32"}.
// LabelGrid uses the same layout with dtype "u8" (spacing carried along for
// convenience but ignored on load).
void save_volume(const std::string& path, const Volume3& v);
Volume3 load_volume(const std::string& path);

void save_labels(const std::string& path, const LabelGrid& g, const Vec3& spacing = {1, 1, 1});
LabelGrid load_labels(const std::string& path);

// ScribbleSet: plain JSON {"class_count":C,"points":[[z,x,y,label],...]}.
void save_scribbles(const std::string& path, const ScribbleSet& s);
// `bounds` validates coordinates; pass the paired volume's shape.
ScribbleSet load_scribbles(const std::string& path, const Shape3& bounds);

}  // namespace oneshot

#endif
