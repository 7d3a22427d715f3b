#pragma once

namespace biospix {

// sRGB (D65, components in [0,1]) to CIELAB. L in [0,100], a/b roughly
// within [-110, 110].
void rgb_to_lab(double r, double g, double b, double& l_out, double& a_out, double& b_out);

}  // namespace biospix
