#pragma once

#include <array>
#include <string>
#include <vector>

#include "ddrom/ddsolver.hpp"

namespace ddrom {

struct ParameterRanges {
  double nu_min = 0.5, nu_max = 2.0;
  double ubar_min = 0.5, ubar_max = 6.5;

  static ParameterRanges defaults(Benchmark benchmark);
};

struct ParameterSample {
  double viscosity = 1.0;
  double drive = 1.0;
};

// Tensor-product uniform grid of m points, factored as close to square as
// possible (viscosity gets the smaller factor). A factor of one places the
// midpoint of that range.
std::vector<ParameterSample> sample_parameters(const ParameterRanges& ranges, int m);

// POD components: per-subdomain homogenised velocities, supremizers,
// pressures, adjoint velocities, plus the interface control.
enum PodComponent : int {
  kCompU1 = 0,
  kCompS1,
  kCompP1,
  kCompU2,
  kCompS2,
  kCompP2,
  kCompXi1,
  kCompXi2,
  kCompG,
  kNumComponents
};

std::string component_name(int component);

struct SnapshotSet {
  std::array<std::vector<Vec>, kNumComponents> snapshots;
  std::vector<ParameterSample> samples;  // converged samples, in grid order
  std::vector<std::pair<ParameterSample, std::string>> failures;

  int count(int component) const {
    return static_cast<int>(snapshots[component].size());
  }
};

struct SnapshotConfig {
  OptConfig optimizer;
  int workers = 1;
  bool harvest_adjoints = false;  // keep the adjoint of every accepted iterate
};

// Runs the FOM optimisation at every sample (parallel across samples) and
// stores homogenised velocities, pressures, supremizers, final adjoints and
// the optimal control. Diverged samples are recorded and skipped; if all
// samples fail a SnapshotFailure is thrown.
SnapshotSet collect_snapshots(const CoupledProblem& cp,
                              const std::vector<ParameterSample>& samples,
                              const SnapshotConfig& cfg);

struct PodBasis {
  std::array<Vec, kNumComponents> eigenvalues;    // full spectra
  std::array<DenseMatrix, kNumComponents> modes;  // X-orthonormal columns
  std::array<int, kNumComponents> retained{};
  std::array<int, kNumComponents> requested{};

  bool rank_deficient(int component) const {
    return retained[component] < requested[component];
  }
};

// Per-component POD via the X-weighted correlation eigenproblem. Eigenvalues
// below 1e-12 of the leading one are truncated; when that leaves fewer than
// n_max modes the achievable count is kept (see PodBasis::rank_deficient).
PodBasis compress(const CoupledProblem& cp, const SnapshotSet& snapshots, int n_max);

// E_n = sum_{k<=n} |lambda_k| / sum_k |lambda_k|, nondecreasing with E_N = 1.
Vec retained_energy(const Vec& eigenvalues);

struct ModeCounts {
  int n_u = 10;
  int n_s = 10;  // supremizer enrichment size; 0 disables the enrichment
  int n_p = 10;
  int n_g = 10;
  int n_xi = 30;
};

// Galerkin-projected operators for the online phase. The lifting enters
// through dedicated projected vectors/matrices scaled online by U-bar (the
// Stokes lift is linear in U-bar); the diffusion blocks carry unit viscosity
// and are scaled online by nu.
struct ReducedSubdomainOps {
  int n_u = 0, n_p = 0, n_xi = 0;

  DenseMatrix laplacian;                  // n_u x n_u, unit viscosity
  DenseMatrix divergence;                 // n_p x n_u
  std::vector<DenseMatrix> convection;    // [m](j,k) = c(phi_j, phi_k, phi_m)
  Vec lift_laplacian;                     // (grad l1, grad phi_m)
  Vec lift_convection;                    // c(l1, l1, phi_m)
  DenseMatrix conv_mode_lift;             // (m,j) = c(phi_j, l1, phi_m)
  DenseMatrix conv_lift_mode;             // (m,j) = c(l1, phi_j, phi_m)
  Vec lift_divergence;                    // b(l1, psi_q)
  DenseMatrix control_coupling;           // n_u x n_g

  DenseMatrix adj_laplacian;              // n_xi x n_xi, unit viscosity
  std::vector<DenseMatrix> adj_conv_first;   // per k<=n_u (+ lift): c(xi_m, u_k, xi_j)
  std::vector<DenseMatrix> adj_conv_second;  // per k<=n_u (+ lift): c(u_k, xi_m, xi_j)
  DenseMatrix adj_trace_u1, adj_trace_u2;    // n_xi x n_u(other): trace pairings
  Vec adj_trace_lift;
  DenseMatrix gradient_coupling;          // n_g x n_xi

  DenseMatrix modes_u;    // FE velocity dofs x n_u (supremizers appended)
  DenseMatrix modes_p;
  DenseMatrix modes_xi;
  Vec lifting_unit;       // FE lifting at U-bar = 1
  Vec lifting_trace;      // its interface trace
};

struct ReducedOperators {
  ModeCounts counts;
  bool supremizer_enrichment = true;
  int n_g = 0;
  std::array<ReducedSubdomainOps, 2> sub;

  // interface-functional blocks (trace pairings of velocity modes)
  DenseMatrix jump_11, jump_12, jump_22;
  Vec jump_lift_1, jump_lift_2;  // pairings with (T l1_1 - T l1_2)
  double jump_lift_lift = 0.0;
  DenseMatrix modes_g;  // trace dofs x n_g, L2(Gamma_0)-orthonormal
};

ReducedOperators project_operators(const CoupledProblem& cp, const PodBasis& basis,
                                   const ModeCounts& counts,
                                   bool supremizer_enrichment = true);

struct ReducedState {
  std::array<Vec, 2> u;  // homogenised reduced velocity coefficients
  std::array<Vec, 2> p;
  std::array<NewtonStats, 2> stats;
};

ReducedState solve_reduced_state(const ReducedOperators& ops, double nu, double ubar,
                                 const Vec& g_hat, const ReducedState* guess = nullptr);

// Projected adjoint on the divergence-free adjoint basis (no pressure
// blocks).
std::array<Vec, 2> solve_reduced_adjoint(const ReducedOperators& ops, double nu,
                                         double ubar, const ReducedState& state);

double reduced_functional(const ReducedOperators& ops, double ubar,
                          const ReducedState& state, const Vec& g_hat, double gamma);

double reduced_jump_norm(const ReducedOperators& ops, double ubar,
                         const ReducedState& state);

enum class ReducedGradientMode {
  // Discrete adjoint of the reduced system itself (transposed reduced
  // Jacobian); exact for the reduced functional up to solver tolerance.
  ExactAdjoint,
  // Projection formula gamma g + (xi1_N - xi2_N) with the POD adjoint basis.
  PodAdjoint,
};

ReducedGradientMode gradient_mode_from_string(const std::string& name);
std::string to_string(ReducedGradientMode mode);

Vec reduced_gradient(const ReducedOperators& ops, double nu, double ubar,
                     const ReducedState& state, const Vec& g_hat, double gamma,
                     ReducedGradientMode mode);

// Helpers exposed for verification: the reduced Newton velocity Jacobian
// block and the projected adjoint system matrix at a given state.
DenseMatrix reduced_state_jacobian(const ReducedOperators& ops, int subdomain, double nu,
                                   double ubar, const Vec& u_hat);
DenseMatrix reduced_adjoint_matrix(const ReducedOperators& ops, int subdomain, double nu,
                                   double ubar, const ReducedState& state);

struct ReducedOptResult {
  Vec g_hat;
  ReducedState state;
  std::array<Vec, 2> adjoint;  // POD-basis adjoint at the final iterate
  OptTrace trace;
  StopReason reason = StopReason::IterationCap;
};

ReducedOptResult optimize_reduced(const ReducedOperators& ops, double nu, double ubar,
                                  const OptConfig& cfg,
                                  ReducedGradientMode mode = ReducedGradientMode::ExactAdjoint,
                                  const Vec& g0 = Vec());

// Field reconstruction per the reduced expansions (velocity adds the
// lifting).
Vec reconstruct_velocity(const ReducedOperators& ops, int subdomain, double ubar,
                         const Vec& u_hat);
Vec reconstruct_pressure(const ReducedOperators& ops, int subdomain, const Vec& p_hat);
Vec reconstruct_adjoint(const ReducedOperators& ops, int subdomain, const Vec& xi_hat);
Vec reconstruct_control(const ReducedOperators& ops, const Vec& g_hat);

// Coefficients of the best X-approximation of an FE field in a mode block.
Vec project_onto_modes(const SparseMatrix& x_matrix, const DenseMatrix& modes,
                       const Vec& field);

}  // namespace ddrom
