#include "ddrom/fem.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "ddrom/quadrature.hpp"

namespace ddrom {

namespace {

// --- reference Taylor-Hood element ------------------------------------------

// P2 scalar nodes: vertices 0,1,2 then midpoints of edges (1,2), (2,0), (0,1).
void p2_shapes(double l0, double l1, double l2, double n[6]) {
  n[0] = l0 * (2.0 * l0 - 1.0);
  n[1] = l1 * (2.0 * l1 - 1.0);
  n[2] = l2 * (2.0 * l2 - 1.0);
  n[3] = 4.0 * l1 * l2;
  n[4] = 4.0 * l2 * l0;
  n[5] = 4.0 * l0 * l1;
}

// Reference gradients w.r.t. (xi, eta) with l1 = xi, l2 = eta.
void p2_ref_gradients(double l0, double l1, double l2, double g[6][2]) {
  g[0][0] = -(4.0 * l0 - 1.0);
  g[0][1] = -(4.0 * l0 - 1.0);
  g[1][0] = 4.0 * l1 - 1.0;
  g[1][1] = 0.0;
  g[2][0] = 0.0;
  g[2][1] = 4.0 * l2 - 1.0;
  g[3][0] = 4.0 * l2;
  g[3][1] = 4.0 * l1;
  g[4][0] = -4.0 * l2;
  g[4][1] = 4.0 * (l0 - l2);
  g[5][0] = 4.0 * (l0 - l1);
  g[5][1] = -4.0 * l1;
}

constexpr double kP1RefGrad[3][2] = {{-1.0, -1.0}, {1.0, 0.0}, {0.0, 1.0}};

struct ElementGeometry {
  double inv_jt[2][2];  // J^{-T}
  double area;
};

ElementGeometry element_geometry(const Point& a, const Point& b, const Point& c) {
  const double j00 = b.x - a.x, j01 = c.x - a.x;
  const double j10 = b.y - a.y, j11 = c.y - a.y;
  const double det = j00 * j11 - j01 * j10;
  ElementGeometry g;
  g.area = 0.5 * det;
  const double inv = 1.0 / det;
  // J^{-1} = inv * [j11 -j01; -j10 j00]; transpose it.
  g.inv_jt[0][0] = j11 * inv;
  g.inv_jt[0][1] = -j10 * inv;
  g.inv_jt[1][0] = -j01 * inv;
  g.inv_jt[1][1] = j00 * inv;
  return g;
}

// Values and physical gradients of the P2/P1 bases at every quadrature point
// of one element.
struct ElementTables {
  ElementGeometry geom;
  std::array<std::array<double, 6>, 6> n2;       // [q][i]
  std::array<std::array<double, 6>, 6> dx2, dy2; // [q][i]
  std::array<std::array<double, 3>, 6> n1;
  std::array<double, 3> dx1, dy1;                // P1 gradients are constant
  std::array<double, 6> weight;                  // quadrature weight * area
  std::array<Point, 6> xq;
};

ElementTables element_tables(const Point& a, const Point& b, const Point& c) {
  ElementTables t;
  t.geom = element_geometry(a, b, c);
  const auto& rule = triangle_quadrature_degree4();
  for (int q = 0; q < 6; ++q) {
    const auto& qp = rule[q];
    double n[6], g[6][2];
    p2_shapes(qp.l0, qp.l1, qp.l2, n);
    p2_ref_gradients(qp.l0, qp.l1, qp.l2, g);
    for (int i = 0; i < 6; ++i) {
      t.n2[q][i] = n[i];
      t.dx2[q][i] = t.geom.inv_jt[0][0] * g[i][0] + t.geom.inv_jt[0][1] * g[i][1];
      t.dy2[q][i] = t.geom.inv_jt[1][0] * g[i][0] + t.geom.inv_jt[1][1] * g[i][1];
    }
    t.n1[q] = {qp.l0, qp.l1, qp.l2};
    t.weight[q] = qp.weight * t.geom.area;
    t.xq[q] = {a.x * qp.l0 + b.x * qp.l1 + c.x * qp.l2,
               a.y * qp.l0 + b.y * qp.l1 + c.y * qp.l2};
  }
  for (int i = 0; i < 3; ++i) {
    t.dx1[i] = t.geom.inv_jt[0][0] * kP1RefGrad[i][0] + t.geom.inv_jt[0][1] * kP1RefGrad[i][1];
    t.dy1[i] = t.geom.inv_jt[1][0] * kP1RefGrad[i][0] + t.geom.inv_jt[1][1] * kP1RefGrad[i][1];
  }
  return t;
}

std::pair<int, int> edge_key(int a, int b) { return a < b ? std::make_pair(a, b) : std::make_pair(b, a); }

}  // namespace

// --- DofMap ------------------------------------------------------------------

DofMap build_dofmap(const Mesh& mesh, Domain domain, const InterfaceTrace& trace) {
  DofMap dm;
  dm.mesh_ = std::make_shared<const Mesh>(mesh);
  dm.domain_ = domain;

  const Mesh& m = *dm.mesh_;
  for (int t = 0; t < static_cast<int>(m.triangles.size()); ++t)
    if (domain == Domain::Whole || m.subdomain_of[t] == static_cast<int>(domain))
      dm.tri_ids_.push_back(t);

  std::map<int, int> vertex_node;
  std::map<std::pair<int, int>, int> edge_node;
  // Vertex nodes first (they double as pressure dofs), edge midpoints after.
  for (int t : dm.tri_ids_)
    for (int v : m.triangles[t])
      if (vertex_node.emplace(v, static_cast<int>(vertex_node.size())).second) {
        dm.scalar_coords_.push_back(m.vertices[v]);
        dm.scalar_entity_.emplace_back(v, -1);
        dm.pressure_vertex_.push_back(v);
        dm.pressure_coords_.push_back(m.vertices[v]);
      }
  dm.n_pressure_ = static_cast<int>(vertex_node.size());
  int next = dm.n_pressure_;
  static const int kEdgePairs[3][2] = {{1, 2}, {2, 0}, {0, 1}};
  for (int t : dm.tri_ids_) {
    const auto& tri = m.triangles[t];
    for (const auto& pair : kEdgePairs) {
      const auto key = edge_key(tri[pair[0]], tri[pair[1]]);
      if (edge_node.emplace(key, next).second) {
        dm.scalar_coords_.push_back({0.5 * (m.vertices[key.first].x + m.vertices[key.second].x),
                                     0.5 * (m.vertices[key.first].y + m.vertices[key.second].y)});
        dm.scalar_entity_.push_back(key);
        ++next;
      }
    }
  }
  dm.n_scalar_ = next;

  dm.tri_scalar_.reserve(dm.tri_ids_.size());
  dm.tri_pressure_.reserve(dm.tri_ids_.size());
  for (int t : dm.tri_ids_) {
    const auto& tri = m.triangles[t];
    std::array<int, 6> s{};
    std::array<int, 3> p{};
    for (int i = 0; i < 3; ++i) {
      s[i] = vertex_node.at(tri[i]);
      p[i] = s[i];
    }
    for (int e = 0; e < 3; ++e)
      s[3 + e] = edge_node.at(edge_key(tri[kEdgePairs[e][0]], tri[kEdgePairs[e][1]]));
    dm.tri_scalar_.push_back(s);
    dm.tri_pressure_.push_back(p);
  }

  // Domain boundary: edges incident to exactly one domain triangle. Outer
  // edges keep their mesh tag; split edges are tagged Interface.
  std::map<std::pair<int, int>, BoundaryTag> outer_tags;
  for (const auto& be : m.boundary_edges) outer_tags[edge_key(be.v0, be.v1)] = be.tag;
  std::set<std::pair<int, int>> iface_edges;
  for (const auto& e : m.interface_edges) iface_edges.insert(edge_key(e[0], e[1]));

  std::map<std::pair<int, int>, std::pair<int, int>> edge_incidence;  // -> (count, tri)
  for (std::size_t k = 0; k < dm.tri_ids_.size(); ++k) {
    const auto& tri = m.triangles[dm.tri_ids_[k]];
    for (int e = 0; e < 3; ++e) {
      const auto key = edge_key(tri[e], tri[(e + 1) % 3]);
      auto [it, inserted] = edge_incidence.try_emplace(key, std::pair<int, int>{0, static_cast<int>(k)});
      it->second.first += 1;
    }
  }
  for (const auto& [key, inc] : edge_incidence) {
    if (inc.first != 1) continue;
    BoundaryTag tag;
    if (auto it = outer_tags.find(key); it != outer_tags.end())
      tag = it->second;
    else if (iface_edges.count(key))
      tag = BoundaryTag::Interface;
    else
      continue;  // cannot happen on conforming generated meshes

    const auto& tri = m.triangles[dm.tri_ids_[inc.second]];
    int opp = -1;
    for (int v : tri)
      if (v != key.first && v != key.second) opp = v;
    const Point& a = m.vertices[key.first];
    const Point& b = m.vertices[key.second];
    const Point& o = m.vertices[opp];
    double nx = b.y - a.y, ny = a.x - b.x;
    const double len = std::hypot(nx, ny);
    nx /= len;
    ny /= len;
    // orient away from the opposite vertex
    if (nx * (o.x - a.x) + ny * (o.y - a.y) > 0.0) {
      nx = -nx;
      ny = -ny;
    }
    BoundaryElement el;
    el.scalar_nodes = {vertex_node.at(key.first), edge_node.at(key), vertex_node.at(key.second)};
    el.nx = nx;
    el.ny = ny;
    el.length = len;
    el.tag = tag;
    dm.boundary_.push_back(el);
    for (int s : el.scalar_nodes) dm.tagged_scalar_[tag].push_back(s);
  }
  for (auto& [tag, nodes] : dm.tagged_scalar_) {
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  }

  // Interface trace numbering shared across the subdomain maps.
  if (!trace.vertices.empty()) {
    bool have_all = true;
    for (int v : trace.vertices)
      if (!vertex_node.count(v)) have_all = false;
    if (have_all) {
      for (std::size_t k = 0; k < trace.vertices.size(); ++k) {
        dm.trace_scalar_.push_back(vertex_node.at(trace.vertices[k]));
        if (k + 1 < trace.vertices.size())
          dm.trace_scalar_.push_back(
              edge_node.at(edge_key(trace.vertices[k], trace.vertices[k + 1])));
      }
    }
  }
  return dm;
}

const std::vector<int>& DofMap::tagged_scalar_nodes(BoundaryTag tag) const {
  static const std::vector<int> empty;
  auto it = tagged_scalar_.find(tag);
  return it == tagged_scalar_.end() ? empty : it->second;
}

std::vector<int> scalar_injection(const DofMap& sub, const DofMap& super) {
  std::map<std::pair<int, int>, int> lookup;
  for (int s = 0; s < super.n_scalar(); ++s) lookup[super.scalar_entity(s)] = s;
  std::vector<int> inj(sub.n_scalar());
  for (int s = 0; s < sub.n_scalar(); ++s) {
    auto it = lookup.find(sub.scalar_entity(s));
    if (it == lookup.end())
      throw MeshMismatch("scalar_injection: dof entity not present in target map");
    inj[s] = it->second;
  }
  return inj;
}

Vec restrict_velocity(const DofMap& sub, const DofMap& super, const Vec& u_super) {
  if (u_super.size() != super.n_velocity())
    throw MeshMismatch("restrict_velocity: coefficient length mismatch");
  const auto inj = scalar_injection(sub, super);
  Vec u(sub.n_velocity());
  for (int s = 0; s < sub.n_scalar(); ++s) {
    u[2 * s] = u_super[2 * inj[s]];
    u[2 * s + 1] = u_super[2 * inj[s] + 1];
  }
  return u;
}

Vec restrict_pressure(const DofMap& sub, const DofMap& super, const Vec& p_super) {
  if (p_super.size() != super.n_pressure())
    throw MeshMismatch("restrict_pressure: coefficient length mismatch");
  const auto inj = scalar_injection(sub, super);  // pressure dofs = leading scalars
  Vec p(sub.n_pressure());
  for (int q = 0; q < sub.n_pressure(); ++q) p[q] = p_super[inj[q]];
  return p;
}

// --- trace space --------------------------------------------------------------

TraceSpace build_trace_space(const Mesh& mesh, const InterfaceTrace& trace) {
  TraceSpace ts;
  const int ne = static_cast<int>(trace.edges.size());
  ts.n_nodes = 2 * ne + 1;
  ts.coords.resize(ts.n_nodes);
  ts.arclength.resize(ts.n_nodes);
  for (int k = 0; k <= ne; ++k) {
    ts.coords[2 * k] = mesh.vertices[trace.vertices[k]];
    ts.arclength[2 * k] = trace.arclength[k];
    if (k < ne) {
      const Point& a = mesh.vertices[trace.vertices[k]];
      const Point& b = mesh.vertices[trace.vertices[k + 1]];
      ts.coords[2 * k + 1] = {0.5 * (a.x + b.x), 0.5 * (a.y + b.y)};
      ts.arclength[2 * k + 1] = 0.5 * (trace.arclength[k] + trace.arclength[k + 1]);
    }
  }
  for (int e = 0; e < ne; ++e) ts.elements.push_back({2 * e, 2 * e + 1, 2 * e + 2});

  std::vector<Triplet> triplets;
  const auto& rule = edge_quadrature_gauss3();
  for (const auto& el : ts.elements) {
    const double len = ts.arclength[el[2]] - ts.arclength[el[0]];
    double loc[3][3] = {};
    for (const auto& qp : rule) {
      const double t = qp.t;
      const double n[3] = {(1.0 - t) * (1.0 - 2.0 * t), 4.0 * t * (1.0 - t), t * (2.0 * t - 1.0)};
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) loc[i][j] += qp.weight * len * n[i] * n[j];
    }
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int c = 0; c < 2; ++c)
          triplets.push_back({2 * el[i] + c, 2 * el[j] + c, loc[i][j]});
  }
  ts.mass = SparseMatrix::from_triplets(2 * ts.n_nodes, 2 * ts.n_nodes, triplets);
  return ts;
}

double TraceSpace::inner(const Vec& a, const Vec& b) const {
  if (a.size() != 2 * n_nodes || b.size() != 2 * n_nodes)
    throw TraceMismatch("trace inner product: coefficient length mismatch");
  return a.dot(spmv(mass, b));
}

double TraceSpace::norm(const Vec& a) const { return std::sqrt(std::max(0.0, inner(a, a))); }

// --- problems ------------------------------------------------------------------

SubdomainProblem make_subdomain_problem(std::shared_ptr<const Mesh> mesh,
                                        std::shared_ptr<const DofMap> dofmap,
                                        std::shared_ptr<const TraceSpace> trace,
                                        Domain domain, double nu, double ubar) {
  SubdomainProblem p;
  p.mesh = std::move(mesh);
  p.dofmap = std::move(dofmap);
  p.trace = std::move(trace);
  p.domain = domain;
  p.viscosity = nu;
  p.drive = ubar;
  const Benchmark bench = p.mesh->benchmark;
  if (domain == Domain::Whole) {
    p.interface_sign = 0.0;
    p.dirichlet_tags = bench == Benchmark::Step
                           ? std::vector<BoundaryTag>{BoundaryTag::Inlet, BoundaryTag::Wall}
                           : std::vector<BoundaryTag>{BoundaryTag::Lid, BoundaryTag::Wall};
  } else if (domain == Domain::Subdomain1) {
    p.interface_sign = 1.0;
    p.dirichlet_tags = bench == Benchmark::Step
                           ? std::vector<BoundaryTag>{BoundaryTag::Inlet, BoundaryTag::Wall}
                           : std::vector<BoundaryTag>{BoundaryTag::Wall};
  } else {
    p.interface_sign = -1.0;
    p.dirichlet_tags = bench == Benchmark::Step
                           ? std::vector<BoundaryTag>{BoundaryTag::Wall}
                           : std::vector<BoundaryTag>{BoundaryTag::Lid, BoundaryTag::Wall};
  }
  return p;
}

std::array<double, 2> dirichlet_value(Benchmark benchmark, BoundaryTag tag, const Point& p,
                                      double ubar) {
  if (tag == BoundaryTag::Wall) return {0.0, 0.0};
  if (benchmark == Benchmark::Step && tag == BoundaryTag::Inlet)
    return {ubar * (4.0 / 9.0) * (p.y - 2.0) * (5.0 - p.y), 0.0};
  if (benchmark == Benchmark::Cavity && tag == BoundaryTag::Lid) return {ubar, 0.0};
  return {0.0, 0.0};
}

DirichletSet dirichlet_conditions(const SubdomainProblem& problem) {
  const DofMap& dm = *problem.dofmap;
  const Benchmark bench = problem.mesh->benchmark;
  std::map<int, std::array<double, 2>> values;
  // Non-wall tags first; walls overwrite shared corner nodes.
  for (BoundaryTag tag : problem.dirichlet_tags) {
    if (tag == BoundaryTag::Wall) continue;
    for (int s : dm.tagged_scalar_nodes(tag))
      values[s] = dirichlet_value(bench, tag, dm.scalar_coord(s), problem.drive);
  }
  for (BoundaryTag tag : problem.dirichlet_tags) {
    if (tag != BoundaryTag::Wall) continue;
    for (int s : dm.tagged_scalar_nodes(tag)) values[s] = {0.0, 0.0};
  }
  DirichletSet set;
  set.velocity_dofs.reserve(2 * values.size());
  std::vector<double> vals;
  vals.reserve(2 * values.size());
  for (const auto& [s, v] : values) {
    set.velocity_dofs.push_back(2 * s);
    vals.push_back(v[0]);
    set.velocity_dofs.push_back(2 * s + 1);
    vals.push_back(v[1]);
  }
  set.values = Eigen::Map<Vec>(vals.data(), static_cast<long>(vals.size()));
  return set;
}

// --- assembly -------------------------------------------------------------------

SparseMatrix assemble_vector_laplacian(const DofMap& dm) {
  std::vector<Triplet> trip;
  trip.reserve(dm.triangle_ids().size() * 72);
  const Mesh& mesh = dm.mesh();
  for (std::size_t k = 0; k < dm.triangle_ids().size(); ++k) {
    const auto& tri = mesh.triangles[dm.triangle_ids()[k]];
    const auto tab = element_tables(mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                                    mesh.vertices[tri[2]]);
    const auto& s = dm.triangle_scalar(k);
    double loc[6][6] = {};
    for (int q = 0; q < 6; ++q)
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
          loc[i][j] += tab.weight[q] * (tab.dx2[q][i] * tab.dx2[q][j] + tab.dy2[q][i] * tab.dy2[q][j]);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j)
        for (int c = 0; c < 2; ++c)
          trip.push_back({2 * s[i] + c, 2 * s[j] + c, loc[i][j]});
  }
  return SparseMatrix::from_triplets(dm.n_velocity(), dm.n_velocity(), trip);
}

SparseMatrix assemble_diffusion(const SubdomainProblem& problem) {
  return assemble_vector_laplacian(*problem.dofmap).scaled(problem.viscosity);
}

SparseMatrix assemble_divergence(const SubdomainProblem& problem) {
  const DofMap& dm = *problem.dofmap;
  const Mesh& mesh = dm.mesh();
  std::vector<Triplet> trip;
  trip.reserve(dm.triangle_ids().size() * 36);
  for (std::size_t k = 0; k < dm.triangle_ids().size(); ++k) {
    const auto& tri = mesh.triangles[dm.triangle_ids()[k]];
    const auto tab = element_tables(mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                                    mesh.vertices[tri[2]]);
    const auto& s = dm.triangle_scalar(k);
    const auto& pr = dm.triangle_pressure(k);
    for (int q = 0; q < 6; ++q)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 6; ++j) {
          const double w = -tab.weight[q] * tab.n1[q][i];
          trip.push_back({pr[i], 2 * s[j], w * tab.dx2[q][j]});
          trip.push_back({pr[i], 2 * s[j] + 1, w * tab.dy2[q][j]});
        }
  }
  return SparseMatrix::from_triplets(dm.n_pressure(), dm.n_velocity(), trip);
}

SparseMatrix assemble_velocity_mass(const DofMap& dm) {
  const Mesh& mesh = dm.mesh();
  std::vector<Triplet> trip;
  trip.reserve(dm.triangle_ids().size() * 72);
  for (std::size_t k = 0; k < dm.triangle_ids().size(); ++k) {
    const auto& tri = mesh.triangles[dm.triangle_ids()[k]];
    const auto tab = element_tables(mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                                    mesh.vertices[tri[2]]);
    const auto& s = dm.triangle_scalar(k);
    double loc[6][6] = {};
    for (int q = 0; q < 6; ++q)
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) loc[i][j] += tab.weight[q] * tab.n2[q][i] * tab.n2[q][j];
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j)
        for (int c = 0; c < 2; ++c)
          trip.push_back({2 * s[i] + c, 2 * s[j] + c, loc[i][j]});
  }
  return SparseMatrix::from_triplets(dm.n_velocity(), dm.n_velocity(), trip);
}

SparseMatrix assemble_pressure_mass(const DofMap& dm) {
  const Mesh& mesh = dm.mesh();
  std::vector<Triplet> trip;
  trip.reserve(dm.triangle_ids().size() * 9);
  for (std::size_t k = 0; k < dm.triangle_ids().size(); ++k) {
    const auto& tri = mesh.triangles[dm.triangle_ids()[k]];
    const auto tab = element_tables(mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                                    mesh.vertices[tri[2]]);
    const auto& pr = dm.triangle_pressure(k);
    for (int q = 0; q < 6; ++q)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          trip.push_back({pr[i], pr[j], tab.weight[q] * tab.n1[q][i] * tab.n1[q][j]});
  }
  return SparseMatrix::from_triplets(dm.n_pressure(), dm.n_pressure(), trip);
}

SparseMatrix assemble_convection(const SubdomainProblem& problem, const Vec& w,
                                 ConvectionMode mode) {
  const DofMap& dm = *problem.dofmap;
  if (w.size() != dm.n_velocity())
    throw DimensionMismatch("assemble_convection: field length mismatch");
  const Mesh& mesh = dm.mesh();
  std::vector<Triplet> trip;
  trip.reserve(dm.triangle_ids().size() * 144);
  for (std::size_t k = 0; k < dm.triangle_ids().size(); ++k) {
    const auto& tri = mesh.triangles[dm.triangle_ids()[k]];
    const auto tab = element_tables(mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                                    mesh.vertices[tri[2]]);
    const auto& s = dm.triangle_scalar(k);
    for (int q = 0; q < 6; ++q) {
      double wq[2] = {0.0, 0.0};
      double gw[2][2] = {{0.0, 0.0}, {0.0, 0.0}};  // gw[c][d] = d w_c / d x_d
      for (int i = 0; i < 6; ++i)
        for (int c = 0; c < 2; ++c) {
          const double coeff = w[2 * s[i] + c];
          wq[c] += coeff * tab.n2[q][i];
          gw[c][0] += coeff * tab.dx2[q][i];
          gw[c][1] += coeff * tab.dy2[q][i];
        }
      if (mode == ConvectionMode::Full || mode == ConvectionMode::LinearizedSecond) {
        // c(w, phi_j, phi_m) = ((w . grad) phi_j, phi_m): component diagonal.
        for (int i = 0; i < 6; ++i)
          for (int j = 0; j < 6; ++j) {
            const double adv = wq[0] * tab.dx2[q][j] + wq[1] * tab.dy2[q][j];
            const double v = tab.weight[q] * adv * tab.n2[q][i];
            trip.push_back({2 * s[i], 2 * s[j], v});
            trip.push_back({2 * s[i] + 1, 2 * s[j] + 1, v});
          }
      } else {
        // c(phi_j, w, phi_m) = ((phi_j . grad) w, phi_m): full 2x2 coupling.
        for (int i = 0; i < 6; ++i)
          for (int j = 0; j < 6; ++j) {
            const double base = tab.weight[q] * tab.n2[q][j] * tab.n2[q][i];
            for (int c = 0; c < 2; ++c)
              for (int d = 0; d < 2; ++d)
                trip.push_back({2 * s[i] + c, 2 * s[j] + d, base * gw[c][d]});
          }
      }
    }
  }
  return SparseMatrix::from_triplets(dm.n_velocity(), dm.n_velocity(), trip);
}

Vec velocity_trace(const DofMap& dm, const Vec& u) {
  const auto& tr = dm.trace_scalar_nodes();
  Vec out(2 * tr.size());
  for (std::size_t k = 0; k < tr.size(); ++k) {
    out[2 * k] = u[2 * tr[k]];
    out[2 * k + 1] = u[2 * tr[k] + 1];
  }
  return out;
}

Vec scatter_trace(const DofMap& dm, const Vec& trace_values) {
  const auto& tr = dm.trace_scalar_nodes();
  if (trace_values.size() != 2 * static_cast<long>(tr.size()))
    throw TraceMismatch("scatter_trace: coefficient length mismatch");
  Vec out = Vec::Zero(dm.n_velocity());
  for (std::size_t k = 0; k < tr.size(); ++k) {
    out[2 * tr[k]] = trace_values[2 * k];
    out[2 * tr[k] + 1] = trace_values[2 * k + 1];
  }
  return out;
}

Vec assemble_interface_load(const SubdomainProblem& problem, const ControlVector& g) {
  const DofMap& dm = *problem.dofmap;
  const TraceSpace& ts = *problem.trace;
  if (g.coeffs.size() != 2 * ts.n_nodes)
    throw TraceMismatch("interface load: control length does not match trace space");
  const auto& tr = dm.trace_scalar_nodes();
  if (static_cast<int>(tr.size()) != ts.n_nodes)
    throw TraceMismatch("interface load: dof map does not share the trace nodes");
  for (int k = 0; k < ts.n_nodes; ++k) {
    const Point& a = dm.scalar_coord(tr[k]);
    const Point& b = ts.coords[k];
    if (std::abs(a.x - b.x) > 1e-12 || std::abs(a.y - b.y) > 1e-12)
      throw TraceMismatch("interface load: trace node coordinates disagree");
  }
  const Vec weighted = spmv(ts.mass, g.coeffs);
  return problem.interface_sign * scatter_trace(dm, weighted);
}

Vec assemble_body_force(const SubdomainProblem& problem) {
  const DofMap& dm = *problem.dofmap;
  Vec load = Vec::Zero(dm.n_velocity());
  if (problem.body_force[0] == 0.0 && problem.body_force[1] == 0.0) return load;
  const Mesh& mesh = dm.mesh();
  for (std::size_t k = 0; k < dm.triangle_ids().size(); ++k) {
    const auto& tri = mesh.triangles[dm.triangle_ids()[k]];
    const auto tab = element_tables(mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                                    mesh.vertices[tri[2]]);
    const auto& s = dm.triangle_scalar(k);
    for (int q = 0; q < 6; ++q)
      for (int i = 0; i < 6; ++i)
        for (int c = 0; c < 2; ++c)
          load[2 * s[i] + c] += tab.weight[q] * tab.n2[q][i] * problem.body_force[c];
  }
  return load;
}

// --- nonlinear state solver -----------------------------------------------------

namespace {

struct ConstrainedSystem {
  std::vector<char> constrained;  // per system dof
  std::vector<int> dofs;          // constrained dof list
};

ConstrainedSystem build_constraints(const SubdomainProblem& problem,
                                    const DirichletSet& bc) {
  const DofMap& dm = *problem.dofmap;
  ConstrainedSystem cs;
  cs.constrained.assign(dm.n_total(), 0);
  for (int d : bc.velocity_dofs) {
    cs.constrained[d] = 1;
    cs.dofs.push_back(d);
  }
  // The all-Dirichlet monolithic cavity leaves the pressure defined up to a
  // constant; pin one dof and recenter afterwards.
  if (problem.domain == Domain::Whole && problem.mesh->benchmark == Benchmark::Cavity) {
    const int pin = dm.pressure_offset();
    cs.constrained[pin] = 1;
    cs.dofs.push_back(pin);
  }
  return cs;
}

SparseMatrix assemble_constrained_jacobian(const SubdomainProblem& problem,
                                           const SparseMatrix& lap, const SparseMatrix& div,
                                           const Vec& u, const ConstrainedSystem& cs) {
  const DofMap& dm = *problem.dofmap;
  const int nu = dm.n_velocity();
  const int n = dm.n_total();
  std::vector<Triplet> trip;
  trip.reserve(lap.n_nonzeros() * 3 + div.n_nonzeros() * 2 + cs.dofs.size());

  auto emit = [&](int r, int c, double v) {
    if (cs.constrained[r] || cs.constrained[c] || v == 0.0) return;
    trip.push_back({r, c, v});
  };

  const double nu_visc = problem.viscosity;
  const auto& off = lap.row_offsets();
  const auto& col = lap.col_indices();
  const auto& val = lap.values();
  for (int r = 0; r < nu; ++r)
    for (int k = off[r]; k < off[r + 1]; ++k) emit(r, col[k], nu_visc * val[k]);

  if (problem.include_convection) {
    const SparseMatrix c2 = assemble_convection(problem, u, ConvectionMode::LinearizedSecond);
    const SparseMatrix c1 = assemble_convection(problem, u, ConvectionMode::LinearizedFirst);
    for (const SparseMatrix* m : {&c1, &c2}) {
      const auto& o = m->row_offsets();
      const auto& c = m->col_indices();
      const auto& v = m->values();
      for (int r = 0; r < nu; ++r)
        for (int k = o[r]; k < o[r + 1]; ++k) emit(r, c[k], v[k]);
    }
  }

  const auto& doff = div.row_offsets();
  const auto& dcol = div.col_indices();
  const auto& dval = div.values();
  for (int r = 0; r < div.n_rows(); ++r)
    for (int k = doff[r]; k < doff[r + 1]; ++k) {
      emit(nu + r, dcol[k], dval[k]);        // B block
      emit(dcol[k], nu + r, dval[k]);        // B^T block
    }

  for (int d : cs.dofs) trip.push_back({d, d, 1.0});
  return SparseMatrix::from_triplets(n, n, trip);
}

Vec state_residual(const SubdomainProblem& problem, const SparseMatrix& lap,
                   const SparseMatrix& div, const Vec& load, const Vec& u, const Vec& p,
                   const ConstrainedSystem& cs) {
  const int nu = problem.dofmap->n_velocity();
  Vec r(problem.dofmap->n_total());
  Vec ru = problem.viscosity * spmv(lap, u);
  if (problem.include_convection) {
    const SparseMatrix full = assemble_convection(problem, u, ConvectionMode::Full);
    ru += spmv(full, u);
  }
  ru += spmv_transposed(div, p);
  ru -= load;
  r.head(nu) = ru;
  r.tail(problem.dofmap->n_pressure()) = spmv(div, u);
  for (int d : cs.dofs) r[d] = 0.0;
  return r;
}

StateSolution solve_state_direct(const SubdomainProblem& problem, const Vec& load,
                                 const StateSolution* guess) {
  const DofMap& dm = *problem.dofmap;
  const int nu = dm.n_velocity();
  const int np = dm.n_pressure();

  const DirichletSet bc = dirichlet_conditions(problem);
  const ConstrainedSystem cs = build_constraints(problem, bc);

  const SparseMatrix lap = assemble_vector_laplacian(dm);
  const SparseMatrix div = assemble_divergence(problem);

  Vec u = Vec::Zero(nu);
  Vec p = Vec::Zero(np);
  if (guess && guess->velocity.size() == nu) u = guess->velocity;
  if (guess && guess->pressure.size() == np) p = guess->pressure;
  for (std::size_t k = 0; k < bc.velocity_dofs.size(); ++k)
    u[bc.velocity_dofs[k]] = bc.values[k];

  const double tol = 1e-10 * (1.0 + load.cwiseAbs().maxCoeff());
  const int max_newton = 25;
  double prev_res = std::numeric_limits<double>::infinity();
  int growth_streak = 0;
  NewtonStats stats;

  Vec residual = state_residual(problem, lap, div, load, u, p, cs);
  double res = residual.cwiseAbs().maxCoeff();
  stats.residual_history.push_back(res);
  for (int it = 0; it < max_newton && res > tol; ++it) {
    const SparseMatrix jac = assemble_constrained_jacobian(problem, lap, div, u, cs);
    LuFactorization lu = [&] {
      try {
        return lu_factorize(jac);
      } catch (const SingularMatrix&) {
        throw SingularSystem("state solve: singular Jacobian");
      }
    }();
    const Vec delta = lu.solve(-residual);

    double step = 1.0;
    Vec u_new, p_new, r_new;
    double res_new = 0.0;
    for (int halving = 0; halving <= 8; ++halving) {
      u_new = u + step * delta.head(nu);
      p_new = p + step * delta.tail(np);
      r_new = state_residual(problem, lap, div, load, u_new, p_new, cs);
      res_new = r_new.cwiseAbs().maxCoeff();
      if (res_new < res || halving == 8) break;
      step *= 0.5;
    }
    u = u_new;
    p = p_new;
    residual = r_new;
    prev_res = res;
    res = res_new;
    stats.residual_history.push_back(res);
    stats.iterations = it + 1;
    growth_streak = res >= prev_res ? growth_streak + 1 : 0;
    if (growth_streak >= 4)
      throw NewtonDiverged("state solve: residual grew over 4 successive steps");
    if (!std::isfinite(res)) throw NewtonDiverged("state solve: non-finite residual");
  }
  if (res > tol)
    throw NewtonDiverged("state solve: no convergence within 25 iterations");

  StateSolution sol;
  sol.velocity = std::move(u);
  sol.pressure = std::move(p);
  sol.stats = stats;
  sol.stats.residual = res;

  // Recenter the pinned monolithic cavity pressure to zero mean.
  if (problem.domain == Domain::Whole && problem.mesh->benchmark == Benchmark::Cavity) {
    const SparseMatrix mp = assemble_pressure_mass(dm);
    const Vec ones = Vec::Ones(np);
    const double area = ones.dot(spmv(mp, ones));
    sol.pressure.array() -= ones.dot(spmv(mp, sol.pressure)) / area;
  }

  const SparseMatrix jac = assemble_constrained_jacobian(problem, lap, div, sol.velocity, cs);
  try {
    sol.jacobian = std::make_shared<const LuFactorization>(jac);
  } catch (const SingularMatrix&) {
    throw SingularSystem("state solve: singular Jacobian at the converged state");
  }
  return sol;
}

}  // namespace

StateSolution solve_state(const SubdomainProblem& problem, const ControlVector& g,
                          const StateSolution* guess) {
  Vec load = assemble_body_force(problem);
  if (problem.interface_sign != 0.0) load += assemble_interface_load(problem, g);

  try {
    return solve_state_direct(problem, load, guess);
  } catch (const NewtonDiverged&) {
    if (!problem.include_convection) throw;
  }
  // Viscosity continuation fallback for low-viscosity starts.
  StateSolution stage;
  const StateSolution* warm = nullptr;
  for (double factor : {8.0, 4.0, 2.0, 1.0}) {
    SubdomainProblem eased = problem;
    eased.viscosity = problem.viscosity * factor;
    stage = solve_state_direct(eased, load, warm);
    stage.stats.used_continuation = true;
    warm = &stage;
  }
  return stage;
}

AdjointSolution solve_adjoint(const SubdomainProblem& problem, const StateSolution& state,
                              const Vec& jump_trace) {
  const DofMap& dm = *problem.dofmap;
  if (!state.jacobian) throw SingularSystem("solve_adjoint: state carries no Jacobian");
  const TraceSpace& ts = *problem.trace;
  if (jump_trace.size() != 2 * ts.n_nodes)
    throw TraceMismatch("solve_adjoint: jump length does not match trace space");

  Vec rhs = Vec::Zero(dm.n_total());
  rhs.head(dm.n_velocity()) =
      problem.interface_sign * scatter_trace(dm, spmv(ts.mass, jump_trace));
  const DirichletSet bc = dirichlet_conditions(problem);
  for (int d : bc.velocity_dofs) rhs[d] = 0.0;

  Vec sol;
  try {
    sol = state.jacobian->solve_transposed(rhs);
  } catch (const SingularMatrix&) {
    throw SingularSystem("solve_adjoint: singular adjoint system");
  }
  AdjointSolution adj;
  adj.xi = sol.head(dm.n_velocity());
  adj.lambda = sol.tail(dm.n_pressure());
  return adj;
}

std::pair<Vec, Vec> solve_sensitivity(const SubdomainProblem& problem,
                                      const StateSolution& state, const ControlVector& g_dir) {
  const DofMap& dm = *problem.dofmap;
  if (!state.jacobian) throw SingularSystem("solve_sensitivity: state carries no Jacobian");
  Vec rhs = Vec::Zero(dm.n_total());
  rhs.head(dm.n_velocity()) = assemble_interface_load(problem, g_dir);
  const DirichletSet bc = dirichlet_conditions(problem);
  for (int d : bc.velocity_dofs) rhs[d] = 0.0;
  Vec sol;
  try {
    sol = state.jacobian->solve(rhs);
  } catch (const SingularMatrix&) {
    throw SingularSystem("solve_sensitivity: singular linearized system");
  }
  return {sol.head(dm.n_velocity()), sol.tail(dm.n_pressure())};
}

FeFunction compute_lifting(const SubdomainProblem& problem) {
  const DofMap& dm = *problem.dofmap;
  const DirichletSet bc = dirichlet_conditions(problem);
  if (bc.velocity_dofs.empty())
    throw SingularSystem("compute_lifting: problem has no Dirichlet boundary");
  FeFunction lift{FieldKind::Velocity, &dm, Vec::Zero(dm.n_velocity())};
  if (bc.values.size() == 0 || bc.values.cwiseAbs().maxCoeff() == 0.0) return lift;

  SubdomainProblem stokes = problem;
  stokes.include_convection = false;
  stokes.viscosity = 1.0;
  stokes.interface_sign = 0.0;  // homogeneous Neumann mirrors the original problem
  try {
    const StateSolution sol = solve_state(stokes, ControlVector{Vec::Zero(0)});
    lift.coeffs = sol.velocity;
  } catch (const SingularMatrix&) {
    throw SingularSystem("compute_lifting: Stokes system is underdetermined");
  }
  return lift;
}

FeFunction compute_supremizer(const SubdomainProblem& problem, const Vec& pressure) {
  const DofMap& dm = *problem.dofmap;
  if (pressure.size() != dm.n_pressure())
    throw DimensionMismatch("compute_supremizer: pressure length mismatch");
  const SparseMatrix lap = assemble_vector_laplacian(dm);
  const SparseMatrix div = assemble_divergence(problem);
  const DirichletSet bc = dirichlet_conditions(problem);
  std::vector<char> constrained(dm.n_velocity(), 0);
  for (int d : bc.velocity_dofs) constrained[d] = 1;

  std::vector<Triplet> trip;
  const auto& off = lap.row_offsets();
  const auto& col = lap.col_indices();
  const auto& val = lap.values();
  for (int r = 0; r < dm.n_velocity(); ++r)
    for (int k = off[r]; k < off[r + 1]; ++k)
      if (!constrained[r] && !constrained[col[k]]) trip.push_back({r, col[k], val[k]});
  for (int d : bc.velocity_dofs) trip.push_back({d, d, 1.0});
  const SparseMatrix sys = SparseMatrix::from_triplets(dm.n_velocity(), dm.n_velocity(), trip);

  Vec rhs = spmv_transposed(div, pressure);
  for (int d : bc.velocity_dofs) rhs[d] = 0.0;
  try {
    const LuFactorization lu = lu_factorize(sys);
    return {FieldKind::Velocity, &dm, lu.solve(rhs)};
  } catch (const SingularMatrix&) {
    throw SingularSystem("compute_supremizer: Riesz system is singular");
  }
}

StateSolution solve_monolithic(const Mesh& mesh, const InterfaceTrace& trace, double nu,
                               double ubar, const StateSolution* guess) {
  auto shared_mesh = std::make_shared<const Mesh>(mesh);
  auto dofmap = std::make_shared<const DofMap>(build_dofmap(mesh, Domain::Whole, trace));
  auto ts = std::make_shared<const TraceSpace>(build_trace_space(mesh, trace));
  const SubdomainProblem problem =
      make_subdomain_problem(shared_mesh, dofmap, ts, Domain::Whole, nu, ubar);
  return solve_state(problem, ControlVector::zero(ts->n_nodes), guess);
}

ControlVector extract_interface_flux(const SubdomainProblem& sub1, const DofMap& whole_map,
                                     const StateSolution& monolithic) {
  const DofMap& dm = *sub1.dofmap;
  const Vec u = restrict_velocity(dm, whole_map, monolithic.velocity);
  const Vec p = restrict_pressure(dm, whole_map, monolithic.pressure);

  const SparseMatrix lap = assemble_vector_laplacian(dm);
  const SparseMatrix div = assemble_divergence(sub1);
  Vec r = sub1.viscosity * spmv(lap, u);
  if (sub1.include_convection) {
    const SparseMatrix full = assemble_convection(sub1, u, ConvectionMode::Full);
    r += spmv(full, u);
  }
  r += spmv_transposed(div, p);
  r -= assemble_body_force(sub1);

  const Vec flux_dual = velocity_trace(dm, r);
  try {
    const LuFactorization lu = lu_factorize(sub1.trace->mass);
    return {lu.solve(flux_dual)};
  } catch (const SingularMatrix&) {
    throw SingularSystem("extract_interface_flux: trace mass matrix is singular");
  }
}

double boundary_flux(const DofMap& dm, const Vec& u, BoundaryTag tag) {
  const auto& rule = edge_quadrature_gauss3();
  double flux = 0.0;
  for (const auto& el : dm.boundary_elements()) {
    if (el.tag != tag) continue;
    for (const auto& qp : rule) {
      const double t = qp.t;
      const double n[3] = {(1.0 - t) * (1.0 - 2.0 * t), 4.0 * t * (1.0 - t), t * (2.0 * t - 1.0)};
      double ux = 0.0, uy = 0.0;
      for (int i = 0; i < 3; ++i) {
        ux += n[i] * u[2 * el.scalar_nodes[i]];
        uy += n[i] * u[2 * el.scalar_nodes[i] + 1];
      }
      flux += qp.weight * el.length * (ux * el.nx + uy * el.ny);
    }
  }
  return flux;
}

VelocityQuadTable velocity_quad_table(const DofMap& dm, const DenseMatrix& fields) {
  if (fields.rows() != dm.n_velocity())
    throw DimensionMismatch("velocity_quad_table: field length mismatch");
  const Mesh& mesh = dm.mesh();
  VelocityQuadTable table;
  table.n_fields = static_cast<int>(fields.cols());
  table.n_points = 6 * static_cast<int>(dm.triangle_ids().size());
  table.weight.resize(table.n_points);
  table.value.assign(static_cast<std::size_t>(table.n_points) * table.n_fields, {0.0, 0.0});
  table.grad.assign(static_cast<std::size_t>(table.n_points) * table.n_fields,
                    {0.0, 0.0, 0.0, 0.0});
  for (std::size_t k = 0; k < dm.triangle_ids().size(); ++k) {
    const auto& tri = mesh.triangles[dm.triangle_ids()[k]];
    const auto tab = element_tables(mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                                    mesh.vertices[tri[2]]);
    const auto& s = dm.triangle_scalar(k);
    for (int q = 0; q < 6; ++q) {
      const int point = 6 * static_cast<int>(k) + q;
      table.weight[point] = tab.weight[q];
      for (int f = 0; f < table.n_fields; ++f) {
        auto& val = table.value[static_cast<std::size_t>(point) * table.n_fields + f];
        auto& grd = table.grad[static_cast<std::size_t>(point) * table.n_fields + f];
        for (int i = 0; i < 6; ++i) {
          for (int c = 0; c < 2; ++c) {
            const double coeff = fields(2 * s[i] + c, f);
            val[c] += coeff * tab.n2[q][i];
            grd[2 * c] += coeff * tab.dx2[q][i];
            grd[2 * c + 1] += coeff * tab.dy2[q][i];
          }
        }
      }
    }
  }
  return table;
}

Vec interpolate_velocity(const DofMap& dm,
                         const std::function<std::array<double, 2>(const Point&)>& f) {
  Vec u(dm.n_velocity());
  for (int s = 0; s < dm.n_scalar(); ++s) {
    const auto v = f(dm.scalar_coord(s));
    u[2 * s] = v[0];
    u[2 * s + 1] = v[1];
  }
  return u;
}

Vec interpolate_pressure(const DofMap& dm, const std::function<double(const Point&)>& f) {
  Vec p(dm.n_pressure());
  for (int q = 0; q < dm.n_pressure(); ++q) p[q] = f(dm.pressure_coord(q));
  return p;
}

double l2_norm_velocity(const SparseMatrix& velocity_mass, const Vec& u) {
  return std::sqrt(std::max(0.0, u.dot(spmv(velocity_mass, u))));
}

double l2_norm_pressure(const SparseMatrix& pressure_mass, const Vec& p) {
  return std::sqrt(std::max(0.0, p.dot(spmv(pressure_mass, p))));
}

void write_fields_vtk(const DofMap& dm, const Vec& velocity, const Vec& pressure,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  const Mesh& mesh = dm.mesh();
  out << "# vtk DataFile Version 3.0\n";
  out << "ddrom fields\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  out << "POINTS " << dm.n_pressure() << " double\n";
  char buf[160];
  for (int v = 0; v < dm.n_pressure(); ++v) {
    const Point& p = dm.pressure_coord(v);
    std::snprintf(buf, sizeof(buf), "%.17g %.17g 0\n", p.x, p.y);
    out << buf;
  }
  const auto& tris = dm.triangle_ids();
  out << "CELLS " << tris.size() << " " << 4 * tris.size() << "\n";
  for (std::size_t k = 0; k < tris.size(); ++k) {
    const auto& pr = dm.triangle_pressure(k);
    out << "3 " << pr[0] << " " << pr[1] << " " << pr[2] << "\n";
  }
  out << "CELL_TYPES " << tris.size() << "\n";
  for (std::size_t k = 0; k < tris.size(); ++k) out << "5\n";
  out << "CELL_DATA " << tris.size() << "\n";
  out << "SCALARS subdomain int 1\nLOOKUP_TABLE default\n";
  for (std::size_t k = 0; k < tris.size(); ++k) out << mesh.subdomain_of[tris[k]] << "\n";
  out << "POINT_DATA " << dm.n_pressure() << "\n";
  out << "VECTORS velocity double\n";
  for (int v = 0; v < dm.n_pressure(); ++v) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g 0\n", velocity[2 * v], velocity[2 * v + 1]);
    out << buf;
  }
  out << "SCALARS pressure double 1\nLOOKUP_TABLE default\n";
  for (int v = 0; v < dm.n_pressure(); ++v) {
    std::snprintf(buf, sizeof(buf), "%.17g\n", pressure[v]);
    out << buf;
  }
}

void write_coeffs_csv(const DofMap& dm, const Vec& velocity, const Vec& pressure,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << "dof,x,y,value\n";
  char buf[160];
  for (int s = 0; s < dm.n_scalar(); ++s) {
    const Point& p = dm.scalar_coord(s);
    for (int c = 0; c < 2; ++c) {
      std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", 2 * s + c, p.x, p.y,
                    velocity[2 * s + c]);
      out << buf;
    }
  }
  for (int q = 0; q < dm.n_pressure(); ++q) {
    const Point& p = dm.pressure_coord(q);
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", dm.pressure_offset() + q, p.x,
                  p.y, pressure[q]);
    out << buf;
  }
}

}  // namespace ddrom
