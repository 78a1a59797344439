#include "ddrom/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"

using namespace ddrom;

namespace {

double chain_length(const Mesh& mesh, const InterfaceTrace& trace) {
  double len = 0.0;
  for (const auto& e : trace.edges) {
    const Point& a = mesh.vertices[e[0]];
    const Point& b = mesh.vertices[e[1]];
    len += std::hypot(b.x - a.x, b.y - a.y);
  }
  return len;
}

}  // namespace

TEST_CASE("step mesh reproduces the exact polygon areas") {
  const Mesh mesh = generate_step_mesh(0.5);
  CHECK(mesh.domain_area(0) == doctest::Approx(82.0).epsilon(1e-10));
  CHECK(mesh.domain_area(1) == doctest::Approx(exact_area(Benchmark::Step, 1)).epsilon(1e-10));
  CHECK(mesh.domain_area(2) == doctest::Approx(exact_area(Benchmark::Step, 2)).epsilon(1e-10));
  for (int t = 0; t < static_cast<int>(mesh.triangles.size()); ++t)
    CHECK(mesh.triangle_area(t) > 0.0);
}

TEST_CASE("step interface spans the full channel height") {
  for (double h : {1.0, 0.5}) {
    const Mesh mesh = generate_step_mesh(h);
    const InterfaceTrace trace = extract_interface(mesh);
    const Point& first = mesh.vertices[trace.vertices.front()];
    const Point& last = mesh.vertices[trace.vertices.back()];
    CHECK(first.x == doctest::Approx(kStepInterfaceX).epsilon(1e-12));
    CHECK(last.x == doctest::Approx(kStepInterfaceX).epsilon(1e-12));
    CHECK(first.y == doctest::Approx(0.0));
    CHECK(last.y == doctest::Approx(5.0));
    CHECK(trace.length() == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(chain_length(mesh, trace) == doctest::Approx(5.0).epsilon(1e-12));
  }
}

TEST_CASE("refinement increases the vertex count") {
  CHECK(generate_step_mesh(0.5).vertices.size() > generate_step_mesh(1.0).vertices.size());
  CHECK(generate_cavity_mesh(0.05).vertices.size() >
        generate_cavity_mesh(0.1).vertices.size());
}

TEST_CASE("step mesh rejects unresolvable h") {
  CHECK_THROWS_AS(generate_step_mesh(2.5), InvalidResolution);
  CHECK_THROWS_AS(generate_step_mesh(0.0), InvalidResolution);
  CHECK_THROWS_AS(generate_cavity_mesh(0.75), InvalidResolution);
  CHECK_THROWS_AS(generate_cavity_mesh(-1.0), InvalidResolution);
}

TEST_CASE("cavity mesh areas and interface") {
  const Mesh mesh = generate_cavity_mesh(0.1);
  CHECK(mesh.domain_area(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mesh.domain_area(1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(mesh.domain_area(2) == doctest::Approx(0.5).epsilon(1e-12));
  const InterfaceTrace trace = extract_interface(mesh);
  CHECK(trace.length() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(trace.vertices.size() == 11);

  // conformity: interface vertices appear in triangles of both subdomains
  std::set<int> verts(trace.vertices.begin(), trace.vertices.end());
  std::map<int, std::set<int>> seen;  // vertex -> subdomains
  for (int t = 0; t < static_cast<int>(mesh.triangles.size()); ++t)
    for (int v : mesh.triangles[t])
      if (verts.count(v)) seen[v].insert(mesh.subdomain_of[t]);
  for (int v : verts) CHECK(seen[v] == std::set<int>{1, 2});
}

TEST_CASE("cavity interface vertices fall on the structured grid") {
  const Mesh mesh = generate_cavity_mesh(0.25);
  const InterfaceTrace trace = extract_interface(mesh);
  REQUIRE(trace.vertices.size() == 5);
  for (std::size_t k = 0; k < trace.vertices.size(); ++k) {
    const Point& p = mesh.vertices[trace.vertices[k]];
    CHECK(p.y == doctest::Approx(0.5));
    CHECK(p.x == doctest::Approx(0.25 * static_cast<double>(k)));
  }
  for (std::size_t k = 1; k < trace.arclength.size(); ++k)
    CHECK(trace.arclength[k] > trace.arclength[k - 1]);
}

TEST_CASE("extract_interface handles a single shared edge") {
  Mesh mesh;
  mesh.benchmark = Benchmark::Cavity;
  mesh.vertices = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  mesh.triangles = {{0, 1, 2}, {0, 2, 3}};
  mesh.subdomain_of = {1, 2};
  mesh.interface_edges = {{0, 2}};
  const InterfaceTrace trace = extract_interface(mesh);
  CHECK(trace.edges.size() == 1);
  CHECK(trace.length() == doctest::Approx(std::sqrt(2.0)));

  Mesh no_iface = mesh;
  no_iface.interface_edges.clear();
  CHECK_THROWS_AS(extract_interface(no_iface), DisconnectedInterface);
}

TEST_CASE("interface edges are shared by one triangle per subdomain") {
  for (const Mesh& mesh : {generate_step_mesh(0.5), generate_cavity_mesh(0.125)}) {
    std::map<std::pair<int, int>, std::vector<int>> incidence;
    for (int t = 0; t < static_cast<int>(mesh.triangles.size()); ++t) {
      const auto& tri = mesh.triangles[t];
      for (int e = 0; e < 3; ++e) {
        int a = tri[e], b = tri[(e + 1) % 3];
        if (a > b) std::swap(a, b);
        incidence[{a, b}].push_back(t);
      }
    }
    for (const auto& edge : mesh.interface_edges) {
      int a = edge[0], b = edge[1];
      if (a > b) std::swap(a, b);
      const auto& tris = incidence.at({a, b});
      REQUIRE(tris.size() == 2);
      CHECK(mesh.subdomain_of[tris[0]] != mesh.subdomain_of[tris[1]]);
    }
  }
}

TEST_CASE("boundary tags partition the boundary edge set") {
  for (const Mesh& mesh : {generate_step_mesh(1.0), generate_cavity_mesh(0.25)}) {
    std::map<std::pair<int, int>, int> count;
    for (int t = 0; t < static_cast<int>(mesh.triangles.size()); ++t) {
      const auto& tri = mesh.triangles[t];
      for (int e = 0; e < 3; ++e) {
        int a = tri[e], b = tri[(e + 1) % 3];
        if (a > b) std::swap(a, b);
        count[{a, b}] += 1;
      }
    }
    std::set<std::pair<int, int>> tagged;
    for (const auto& be : mesh.boundary_edges) {
      int a = be.v0, b = be.v1;
      if (a > b) std::swap(a, b);
      CHECK(tagged.insert({a, b}).second);  // no doubly tagged edge
      CHECK(count.at({a, b}) == 1);
    }
    int n_boundary = 0;
    for (const auto& [edge, c] : count)
      if (c == 1) ++n_boundary;
    CHECK(n_boundary == static_cast<int>(mesh.boundary_edges.size()));

    const bool is_step = mesh.benchmark == Benchmark::Step;
    std::set<BoundaryTag> tags;
    for (const auto& be : mesh.boundary_edges) tags.insert(be.tag);
    if (is_step)
      CHECK(tags == std::set<BoundaryTag>{BoundaryTag::Inlet, BoundaryTag::Wall,
                                          BoundaryTag::Outlet});
    else
      CHECK(tags == std::set<BoundaryTag>{BoundaryTag::Lid, BoundaryTag::Wall});
  }
}
