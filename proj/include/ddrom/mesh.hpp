#pragma once

#include <array>
#include <string>
#include <vector>

#include "ddrom/errors.hpp"

namespace ddrom {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

enum class Benchmark { Step, Cavity };

enum class BoundaryTag { Inlet, Wall, Outlet, Lid, Interface };

std::string to_string(BoundaryTag tag);
std::string to_string(Benchmark benchmark);
Benchmark benchmark_from_string(const std::string& name);

struct BoundaryEdge {
  int v0 = 0;
  int v1 = 0;
  BoundaryTag tag = BoundaryTag::Wall;
};

// Conforming triangulation of one of the two benchmark geometries, split in
// two subdomains that share the interface vertices verbatim. Triangles are
// positively oriented. Immutable after generation.
struct Mesh {
  Benchmark benchmark = Benchmark::Cavity;
  double target_h = 0.0;
  std::vector<Point> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<int> subdomain_of;                    // per triangle: 1 or 2
  std::vector<BoundaryEdge> boundary_edges;         // outer boundary, tagged
  std::vector<std::array<int, 2>> interface_edges;  // shared subdomain split

  double triangle_area(int t) const;
  double domain_area(int subdomain) const;  // 0 = whole domain
};

// Ordered interface vertex chain with strictly increasing arc length.
struct InterfaceTrace {
  std::vector<int> vertices;
  std::vector<std::array<int, 2>> edges;  // edges[k] = {vertices[k], vertices[k+1]}
  std::vector<double> arclength;          // per vertex, starts at 0
  double length() const { return arclength.empty() ? 0.0 : arclength.back(); }
};

// Backward-facing step channel (lengths in cm): upper wall of length 18 at
// y=5, inlet section occupies y in [2,5], expanded section y in [0,5] after
// the step at x=4, vertical split at x=26/3.
Mesh generate_step_mesh(double h);

// Unit square cavity with the lid at y=1 and the split at y=1/2; subdomain 1
// is the lower half.
Mesh generate_cavity_mesh(double h);

InterfaceTrace extract_interface(const Mesh& mesh);

constexpr double kStepInterfaceX = 26.0 / 3.0;

// Exact polygon areas used by area-consistency checks.
double exact_area(Benchmark benchmark, int subdomain);  // 0 = whole

void write_mesh_vtk(const Mesh& mesh, const std::string& path);

}  // namespace ddrom
