#include "ddrom/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace ddrom {

namespace {

constexpr double kGeomTol = 1e-9;

std::vector<double> subdivide(const std::vector<double>& breaks, double h) {
  std::vector<double> coords;
  coords.push_back(breaks.front());
  for (std::size_t s = 0; s + 1 < breaks.size(); ++s) {
    const double a = breaks[s], b = breaks[s + 1];
    const int n = std::max(1, static_cast<int>(std::ceil((b - a) / h - kGeomTol)));
    for (int i = 1; i <= n; ++i) coords.push_back(a + (b - a) * i / n);
  }
  return coords;
}

struct GridSpec {
  std::vector<double> xs, ys;
  // cell predicate: is the cell with lower-left grid index (i,j) in the domain?
  bool step = false;
};

Mesh build_from_grid(Benchmark benchmark, double h, const GridSpec& grid,
                     double split_coord, bool vertical_split) {
  const int nx = static_cast<int>(grid.xs.size());
  const int ny = static_cast<int>(grid.ys.size());
  auto cell_in_domain = [&](int i, int j) {
    if (!grid.step) return true;
    // the notch below the step: x < 4, y < 2
    return !(grid.xs[i + 1] <= 4.0 + kGeomTol && grid.ys[j + 1] <= 2.0 + kGeomTol);
  };

  Mesh mesh;
  mesh.benchmark = benchmark;
  mesh.target_h = h;

  std::vector<int> vertex_id(static_cast<std::size_t>(nx) * ny, -1);
  auto vid = [&](int i, int j) -> int& { return vertex_id[static_cast<std::size_t>(j) * nx + i]; };

  for (int j = 0; j + 1 < ny; ++j) {
    for (int i = 0; i + 1 < nx; ++i) {
      if (!cell_in_domain(i, j)) continue;
      for (int dj = 0; dj <= 1; ++dj)
        for (int di = 0; di <= 1; ++di)
          if (vid(i + di, j + dj) < 0) vid(i + di, j + dj) = 0;
    }
  }
  int next = 0;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i)
      if (vid(i, j) == 0) {
        vid(i, j) = next++;
        mesh.vertices.push_back({grid.xs[i], grid.ys[j]});
      }

  for (int j = 0; j + 1 < ny; ++j) {
    for (int i = 0; i + 1 < nx; ++i) {
      if (!cell_in_domain(i, j)) continue;
      const int bl = vid(i, j), br = vid(i + 1, j);
      const int tr = vid(i + 1, j + 1), tl = vid(i, j + 1);
      const double cx = 0.5 * (grid.xs[i] + grid.xs[i + 1]);
      const double cy = 0.5 * (grid.ys[j] + grid.ys[j + 1]);
      const int sub = vertical_split ? (cx < split_coord ? 1 : 2) : (cy < split_coord ? 1 : 2);
      mesh.triangles.push_back({bl, br, tr});
      mesh.subdomain_of.push_back(sub);
      mesh.triangles.push_back({bl, tr, tl});
      mesh.subdomain_of.push_back(sub);
    }
  }

  // Classify edges by incidence counts.
  std::map<std::pair<int, int>, std::array<int, 2>> edge_tris;
  for (int t = 0; t < static_cast<int>(mesh.triangles.size()); ++t) {
    const auto& tri = mesh.triangles[t];
    for (int e = 0; e < 3; ++e) {
      int a = tri[e], b = tri[(e + 1) % 3];
      if (a > b) std::swap(a, b);
      auto [it, inserted] = edge_tris.try_emplace({a, b}, std::array<int, 2>{t, -1});
      if (!inserted) it->second[1] = t;
    }
  }

  auto classify_boundary = [&](const Point& mid) -> BoundaryTag {
    if (benchmark == Benchmark::Step) {
      if (mid.x < kGeomTol) return BoundaryTag::Inlet;
      if (mid.x > 18.0 - kGeomTol) return BoundaryTag::Outlet;
      return BoundaryTag::Wall;
    }
    if (mid.y > 1.0 - kGeomTol) return BoundaryTag::Lid;
    return BoundaryTag::Wall;
  };

  for (const auto& [key, tris] : edge_tris) {
    const auto& [a, b] = key;
    if (tris[1] < 0) {
      const Point mid{0.5 * (mesh.vertices[a].x + mesh.vertices[b].x),
                      0.5 * (mesh.vertices[a].y + mesh.vertices[b].y)};
      mesh.boundary_edges.push_back({a, b, classify_boundary(mid)});
    } else if (mesh.subdomain_of[tris[0]] != mesh.subdomain_of[tris[1]]) {
      mesh.interface_edges.push_back({a, b});
    }
  }
  return mesh;
}

}  // namespace

std::string to_string(BoundaryTag tag) {
  switch (tag) {
    case BoundaryTag::Inlet: return "inlet";
    case BoundaryTag::Wall: return "wall";
    case BoundaryTag::Outlet: return "outlet";
    case BoundaryTag::Lid: return "lid";
    case BoundaryTag::Interface: return "interface";
  }
  return "unknown";
}

std::string to_string(Benchmark benchmark) {
  return benchmark == Benchmark::Step ? "step" : "cavity";
}

Benchmark benchmark_from_string(const std::string& name) {
  if (name == "step") return Benchmark::Step;
  if (name == "cavity") return Benchmark::Cavity;
  throw UsageError("unknown benchmark '" + name + "' (expected step|cavity)");
}

double Mesh::triangle_area(int t) const {
  const auto& tri = triangles[t];
  const Point& a = vertices[tri[0]];
  const Point& b = vertices[tri[1]];
  const Point& c = vertices[tri[2]];
  return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
}

double Mesh::domain_area(int subdomain) const {
  double area = 0.0;
  for (int t = 0; t < static_cast<int>(triangles.size()); ++t)
    if (subdomain == 0 || subdomain_of[t] == subdomain) area += triangle_area(t);
  return area;
}

double exact_area(Benchmark benchmark, int subdomain) {
  if (benchmark == Benchmark::Step) {
    const double left = 4.0 * 3.0 + (kStepInterfaceX - 4.0) * 5.0;
    const double right = (18.0 - kStepInterfaceX) * 5.0;
    if (subdomain == 1) return left;
    if (subdomain == 2) return right;
    return left + right;
  }
  return subdomain == 0 ? 1.0 : 0.5;
}

Mesh generate_step_mesh(double h) {
  if (h <= 0.0) throw InvalidResolution("step mesh: h must be positive");
  if (h > 2.0) throw InvalidResolution("step mesh: h exceeds the step height 2");
  GridSpec grid;
  grid.xs = subdivide({0.0, 4.0, kStepInterfaceX, 18.0}, h);
  grid.ys = subdivide({0.0, 2.0, 5.0}, h);
  grid.step = true;
  return build_from_grid(Benchmark::Step, h, grid, kStepInterfaceX, true);
}

Mesh generate_cavity_mesh(double h) {
  if (h <= 0.0) throw InvalidResolution("cavity mesh: h must be positive");
  if (h > 0.5) throw InvalidResolution("cavity mesh: h exceeds the half height 0.5");
  GridSpec grid;
  grid.xs = subdivide({0.0, 1.0}, h);
  grid.ys = subdivide({0.0, 0.5, 1.0}, h);
  return build_from_grid(Benchmark::Cavity, h, grid, 0.5, false);
}

InterfaceTrace extract_interface(const Mesh& mesh) {
  if (mesh.interface_edges.empty())
    throw DisconnectedInterface("mesh has no interface edges");

  std::map<int, std::vector<int>> adjacency;
  for (int e = 0; e < static_cast<int>(mesh.interface_edges.size()); ++e) {
    adjacency[mesh.interface_edges[e][0]].push_back(e);
    adjacency[mesh.interface_edges[e][1]].push_back(e);
  }
  std::vector<int> endpoints;
  for (const auto& [v, edges] : adjacency) {
    if (edges.size() == 1) endpoints.push_back(v);
    if (edges.size() > 2)
      throw DisconnectedInterface("interface edge chain branches at a vertex");
  }
  if (endpoints.size() != 2)
    throw DisconnectedInterface("interface is not a single open chain");

  // Start from the lexicographically smallest endpoint for determinism.
  auto less_point = [&](int a, int b) {
    const Point& pa = mesh.vertices[a];
    const Point& pb = mesh.vertices[b];
    if (pa.y != pb.y) return pa.y < pb.y;
    return pa.x < pb.x;
  };
  int start = less_point(endpoints[0], endpoints[1]) ? endpoints[0] : endpoints[1];

  InterfaceTrace trace;
  std::vector<bool> used(mesh.interface_edges.size(), false);
  int current = start;
  trace.vertices.push_back(current);
  trace.arclength.push_back(0.0);
  for (;;) {
    int next_edge = -1;
    for (int e : adjacency[current])
      if (!used[e]) {
        next_edge = e;
        break;
      }
    if (next_edge < 0) break;
    used[next_edge] = true;
    const auto& edge = mesh.interface_edges[next_edge];
    const int next_vertex = edge[0] == current ? edge[1] : edge[0];
    const Point& a = mesh.vertices[current];
    const Point& b = mesh.vertices[next_vertex];
    trace.edges.push_back({current, next_vertex});
    trace.arclength.push_back(trace.arclength.back() + std::hypot(b.x - a.x, b.y - a.y));
    trace.vertices.push_back(next_vertex);
    current = next_vertex;
  }
  if (trace.edges.size() != mesh.interface_edges.size())
    throw DisconnectedInterface("interface edges form more than one chain");
  return trace;
}

void write_mesh_vtk(const Mesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << "# vtk DataFile Version 3.0\n";
  out << "ddrom mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  out << "POINTS " << mesh.vertices.size() << " double\n";
  char buf[128];
  for (const auto& v : mesh.vertices) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g 0\n", v.x, v.y);
    out << buf;
  }
  out << "CELLS " << mesh.triangles.size() << " " << 4 * mesh.triangles.size() << "\n";
  for (const auto& t : mesh.triangles) out << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
  out << "CELL_TYPES " << mesh.triangles.size() << "\n";
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) out << "5\n";
  out << "CELL_DATA " << mesh.triangles.size() << "\n";
  out << "SCALARS subdomain int 1\nLOOKUP_TABLE default\n";
  for (int s : mesh.subdomain_of) out << s << "\n";
}

}  // namespace ddrom
