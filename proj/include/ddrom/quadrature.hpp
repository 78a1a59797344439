#pragma once

#include <array>

namespace ddrom {

// Barycentric quadrature node on the reference triangle; weights sum to 1
// and are scaled by the physical element area during assembly.
struct TriQuadPoint {
  double l0, l1, l2, weight;
};

// 6-point rule, exact for polynomial degree <= 4.
const std::array<TriQuadPoint, 6>& triangle_quadrature_degree4();

struct EdgeQuadPoint {
  double t, weight;  // t in [0,1], weights sum to 1
};

// 3-point Gauss rule on an edge, exact for degree <= 5.
const std::array<EdgeQuadPoint, 3>& edge_quadrature_gauss3();

}  // namespace ddrom
