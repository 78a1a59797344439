#include "ddrom/quadrature.hpp"

#include <cmath>

namespace ddrom {

const std::array<TriQuadPoint, 6>& triangle_quadrature_degree4() {
  static const std::array<TriQuadPoint, 6> rule = [] {
    const double a1 = 0.445948490915965;
    const double w1 = 0.223381589678011;
    const double a2 = 0.091576213509771;
    const double w2 = 0.109951743655322;
    std::array<TriQuadPoint, 6> r{};
    r[0] = {1.0 - 2.0 * a1, a1, a1, w1};
    r[1] = {a1, 1.0 - 2.0 * a1, a1, w1};
    r[2] = {a1, a1, 1.0 - 2.0 * a1, w1};
    r[3] = {1.0 - 2.0 * a2, a2, a2, w2};
    r[4] = {a2, 1.0 - 2.0 * a2, a2, w2};
    r[5] = {a2, a2, 1.0 - 2.0 * a2, w2};
    return r;
  }();
  return rule;
}

const std::array<EdgeQuadPoint, 3>& edge_quadrature_gauss3() {
  static const std::array<EdgeQuadPoint, 3> rule = [] {
    const double s = std::sqrt(3.0 / 5.0);
    std::array<EdgeQuadPoint, 3> r{};
    r[0] = {0.5 * (1.0 - s), 5.0 / 18.0};
    r[1] = {0.5, 4.0 / 9.0};
    r[2] = {0.5 * (1.0 + s), 5.0 / 18.0};
    return r;
  }();
  return rule;
}

}  // namespace ddrom
