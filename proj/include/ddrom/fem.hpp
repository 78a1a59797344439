#pragma once

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "ddrom/linalg.hpp"
#include "ddrom/mesh.hpp"

namespace ddrom {

enum class Domain { Whole = 0, Subdomain1 = 1, Subdomain2 = 2 };

// Tagged boundary element with the P2 trace nodes (endpoint, midpoint,
// endpoint) and the outward unit normal of the owning domain.
struct BoundaryElement {
  std::array<int, 3> scalar_nodes;  // a, mid, b
  double nx = 0.0, ny = 0.0;
  double length = 0.0;
  BoundaryTag tag = BoundaryTag::Wall;
};

// Taylor-Hood dof bookkeeping for one domain: quadratic scalar nodes
// (vertices + edge midpoints, two velocity components each) and linear
// pressure dofs at vertices. Interface scalar nodes are listed in trace
// order so the two subdomain maps expose identical interface numbering.
class DofMap {
 public:
  DofMap() = default;

  const Mesh& mesh() const { return *mesh_; }
  Domain domain() const { return domain_; }
  int n_scalar() const { return n_scalar_; }
  int n_velocity() const { return 2 * n_scalar_; }
  int n_pressure() const { return n_pressure_; }
  int n_total() const { return n_velocity() + n_pressure_; }
  int pressure_offset() const { return n_velocity(); }

  const std::vector<int>& triangle_ids() const { return tri_ids_; }
  const std::array<int, 6>& triangle_scalar(int k) const { return tri_scalar_[k]; }
  const std::array<int, 3>& triangle_pressure(int k) const { return tri_pressure_[k]; }
  const Point& scalar_coord(int s) const { return scalar_coords_[s]; }
  const Point& pressure_coord(int p) const { return pressure_coords_[p]; }

  const std::vector<BoundaryElement>& boundary_elements() const { return boundary_; }
  const std::vector<int>& tagged_scalar_nodes(BoundaryTag tag) const;
  const std::vector<int>& trace_scalar_nodes() const { return trace_scalar_; }

  // Mesh-entity keys for matching dofs across maps built on the same mesh:
  // vertices map to (v, -1), edge midpoints to the sorted vertex pair.
  std::pair<int, int> scalar_entity(int s) const { return scalar_entity_[s]; }
  int pressure_vertex(int p) const { return pressure_vertex_[p]; }

  friend DofMap build_dofmap(const Mesh& mesh, Domain domain,
                             const InterfaceTrace& trace);

 private:
  std::shared_ptr<const Mesh> mesh_;
  Domain domain_ = Domain::Whole;
  int n_scalar_ = 0;
  int n_pressure_ = 0;
  std::vector<int> tri_ids_;
  std::vector<std::array<int, 6>> tri_scalar_;
  std::vector<std::array<int, 3>> tri_pressure_;
  std::vector<Point> scalar_coords_;
  std::vector<Point> pressure_coords_;
  std::vector<std::pair<int, int>> scalar_entity_;
  std::vector<int> pressure_vertex_;
  std::map<BoundaryTag, std::vector<int>> tagged_scalar_;
  std::vector<BoundaryElement> boundary_;
  std::vector<int> trace_scalar_;
};

DofMap build_dofmap(const Mesh& mesh, Domain domain, const InterfaceTrace& trace);

// Maps dofs of `sub` onto dofs of `super` (same mesh, sub's triangles are a
// subset). Throws MeshMismatch when an entity cannot be resolved.
std::vector<int> scalar_injection(const DofMap& sub, const DofMap& super);
Vec restrict_velocity(const DofMap& sub, const DofMap& super, const Vec& u_super);
Vec restrict_pressure(const DofMap& sub, const DofMap& super, const Vec& p_super);

enum class FieldKind { Velocity, Pressure, InterfaceControl };

struct FeFunction {
  FieldKind kind = FieldKind::Velocity;
  const DofMap* dofmap = nullptr;
  Vec coeffs;
};

// Coefficients of the interface control g: two components per interface
// scalar node, interleaved (x, y), trace-ordered.
struct ControlVector {
  Vec coeffs;

  static ControlVector zero(int n_trace_nodes) {
    return {Vec::Zero(2 * n_trace_nodes)};
  }
};

// Quadratic scalar trace space on the interface with its L2(Gamma_0) mass
// matrix expanded to two interleaved components.
struct TraceSpace {
  int n_nodes = 0;
  std::vector<Point> coords;
  std::vector<double> arclength;
  std::vector<std::array<int, 3>> elements;  // a, mid, b trace node indices
  SparseMatrix mass;                         // 2*n_nodes square

  double inner(const Vec& a, const Vec& b) const;
  double norm(const Vec& a) const;
};

TraceSpace build_trace_space(const Mesh& mesh, const InterfaceTrace& trace);

// One subdomain of the coupled problem (or the whole domain for the
// monolithic oracle). The interface sign follows (-1)^(i+1).
struct SubdomainProblem {
  std::shared_ptr<const Mesh> mesh;
  std::shared_ptr<const DofMap> dofmap;
  std::shared_ptr<const TraceSpace> trace;
  Domain domain = Domain::Whole;
  double viscosity = 1.0;
  double drive = 1.0;  // inflow/lid magnitude U-bar
  double interface_sign = 0.0;
  std::array<double, 2> body_force{0.0, 0.0};
  bool include_convection = true;
  std::vector<BoundaryTag> dirichlet_tags;

  SubdomainProblem with_parameters(double nu, double ubar) const {
    SubdomainProblem copy = *this;
    copy.viscosity = nu;
    copy.drive = ubar;
    return copy;
  }
};

SubdomainProblem make_subdomain_problem(std::shared_ptr<const Mesh> mesh,
                                        std::shared_ptr<const DofMap> dofmap,
                                        std::shared_ptr<const TraceSpace> trace,
                                        Domain domain, double nu, double ubar);

// Dirichlet data of the benchmark: parabolic inlet profile for the step,
// constant lid velocity for the cavity, zero on walls. Wall values win at
// nodes shared between tags, which closes the lid corners.
std::array<double, 2> dirichlet_value(Benchmark benchmark, BoundaryTag tag,
                                      const Point& p, double ubar);

struct DirichletSet {
  std::vector<int> velocity_dofs;  // sorted, unique
  Vec values;                      // aligned with velocity_dofs
};

DirichletSet dirichlet_conditions(const SubdomainProblem& problem);

// --- assembly -------------------------------------------------------------

// (grad u, grad v) on velocity dofs, unit viscosity (also the X inner
// product of the velocity/adjoint/supremizer POD components).
SparseMatrix assemble_vector_laplacian(const DofMap& dofmap);
// nu (grad u, grad v)
SparseMatrix assemble_diffusion(const SubdomainProblem& problem);
// rows: pressure dofs, cols: velocity dofs, entries -(div v, q)
SparseMatrix assemble_divergence(const SubdomainProblem& problem);
SparseMatrix assemble_velocity_mass(const DofMap& dofmap);
SparseMatrix assemble_pressure_mass(const DofMap& dofmap);

enum class ConvectionMode { Full, LinearizedFirst, LinearizedSecond };

// Full / LinearizedSecond: A[m,j] = c(w, phi_j, phi_m), so A*w is the
// nonlinear convection residual. LinearizedFirst: A[m,j] = c(phi_j, w, phi_m).
SparseMatrix assemble_convection(const SubdomainProblem& problem, const Vec& w,
                                 ConvectionMode mode);

// Load vector ((-1)^(i+1) g, v) on Gamma_0, supported on interface dofs.
Vec assemble_interface_load(const SubdomainProblem& problem, const ControlVector& g);

Vec assemble_body_force(const SubdomainProblem& problem);

// --- traces ----------------------------------------------------------------

Vec velocity_trace(const DofMap& dofmap, const Vec& u);           // 2*n_trace
Vec scatter_trace(const DofMap& dofmap, const Vec& trace_values); // to velocity size

// --- solvers ---------------------------------------------------------------

struct NewtonStats {
  int iterations = 0;
  double residual = 0.0;
  bool used_continuation = false;
  std::vector<double> residual_history;  // including the initial residual
};

struct StateSolution {
  Vec velocity;
  Vec pressure;
  NewtonStats stats;
  // Constrained Jacobian at the converged state; its transpose is the
  // adjoint operator and its factorization is reused by the sensitivity
  // solve.
  std::shared_ptr<const LuFactorization> jacobian;
};

StateSolution solve_state(const SubdomainProblem& problem, const ControlVector& g,
                          const StateSolution* guess = nullptr);

struct AdjointSolution {
  Vec xi;      // adjoint velocity, homogeneous on the Dirichlet boundary
  Vec lambda;  // adjoint pressure
};

// jump_trace holds (u1 - u2)|_Gamma0 in trace coefficients.
AdjointSolution solve_adjoint(const SubdomainProblem& problem,
                              const StateSolution& state, const Vec& jump_trace);

// Linearized (Oseen-type) solve at the given state with interface direction
// load; used as the gradient-verification oracle.
std::pair<Vec, Vec> solve_sensitivity(const SubdomainProblem& problem,
                                      const StateSolution& state,
                                      const ControlVector& g_dir);

// Stokes lift of the Dirichlet data (unit viscosity; the velocity part does
// not depend on it). Zero Dirichlet data yields the zero function.
FeFunction compute_lifting(const SubdomainProblem& problem);

// Riesz supremizer: (grad v, grad s) = b(v, p_h) for all v in V_{i,0,h}.
FeFunction compute_supremizer(const SubdomainProblem& problem, const Vec& pressure);

StateSolution solve_monolithic(const Mesh& mesh, const InterfaceTrace& trace,
                               double nu, double ubar,
                               const StateSolution* guess = nullptr);

// Variationally consistent interface flux of a whole-domain solution, i.e.
// the g for which the subdomain problems reproduce the monolithic
// restriction exactly.
ControlVector extract_interface_flux(const SubdomainProblem& sub1,
                                     const DofMap& whole_map,
                                     const StateSolution& monolithic);

// Signed flux integral of u.n over the edges carrying `tag`.
double boundary_flux(const DofMap& dofmap, const Vec& u, BoundaryTag tag);

// Values and gradients of a set of velocity coefficient fields at every
// quadrature point of the domain; used to project the convection tensors.
struct VelocityQuadTable {
  int n_points = 0;
  int n_fields = 0;
  std::vector<double> weight;                // per point, includes the area
  std::vector<std::array<double, 2>> value;  // [point * n_fields + field]
  std::vector<std::array<double, 4>> grad;   // du0/dx, du0/dy, du1/dx, du1/dy

  const std::array<double, 2>& val(int q, int f) const { return value[q * n_fields + f]; }
  const std::array<double, 4>& grd(int q, int f) const { return grad[q * n_fields + f]; }
};

VelocityQuadTable velocity_quad_table(const DofMap& dofmap, const DenseMatrix& fields);

// --- misc helpers ----------------------------------------------------------

Vec interpolate_velocity(const DofMap& dofmap,
                         const std::function<std::array<double, 2>(const Point&)>& f);
Vec interpolate_pressure(const DofMap& dofmap,
                         const std::function<double(const Point&)>& f);

double l2_norm_velocity(const SparseMatrix& velocity_mass, const Vec& u);
double l2_norm_pressure(const SparseMatrix& pressure_mass, const Vec& p);

void write_fields_vtk(const DofMap& dofmap, const Vec& velocity, const Vec& pressure,
                      const std::string& path);
void write_coeffs_csv(const DofMap& dofmap, const Vec& velocity, const Vec& pressure,
                      const std::string& path);

}  // namespace ddrom
