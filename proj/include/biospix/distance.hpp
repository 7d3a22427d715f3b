#pragma once

#include "biospix/image.hpp"

namespace biospix {

// Per-pixel distance to the boundary of the pixel's ground-truth region:
// exact Euclidean distance to the nearest pixel of a different label, minus
// the adjacency offset (1 for 4-connectivity, sqrt(2) for 8-connectivity),
// clamped at 0. Pixels whose chosen neighborhood touches another label get
// d = 0; a single-label image gets +infinity everywhere. The image border is
// not a boundary.
FieldMap distance_field(const LabelMap& labels, int connectivity = 4);

}  // namespace biospix
