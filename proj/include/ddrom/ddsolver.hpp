#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ddrom/fem.hpp"

namespace ddrom {

// Shared immutable context for one benchmark at one resolution: mesh, trace
// space, dof maps and the unit (U-bar = 1) Stokes liftings. The liftings are
// linear in U-bar and independent of the viscosity, so they are computed once.
struct CoupledProblem {
  Benchmark benchmark = Benchmark::Cavity;
  double h = 0.0;
  std::shared_ptr<const Mesh> mesh;
  InterfaceTrace iface;
  std::shared_ptr<const TraceSpace> trace;
  std::shared_ptr<const DofMap> whole_map;
  std::shared_ptr<const DofMap> map1;
  std::shared_ptr<const DofMap> map2;
  Vec lifting_unit1;
  Vec lifting_unit2;

  SubdomainProblem subdomain(int index, double nu, double ubar) const;
  SubdomainProblem whole(double nu, double ubar) const;
  Vec lifting(int index, double ubar) const;
};

CoupledProblem build_coupled_problem(Benchmark benchmark, double h);

struct OptConfig {
  enum class Method { SteepestDescent, LBfgs };

  double gamma = 0.0;
  double alpha = 1.0;  // steepest-descent trial step
  int it_max = 40;
  double tol_grad = 1e-5;
  Method method = Method::LBfgs;
  int memory = 10;
  bool concurrent_subdomains = true;
  bool harvest_adjoints = false;

  void validate() const;
};

OptConfig::Method method_from_string(const std::string& name);
std::string to_string(OptConfig::Method method);

struct OptIterate {
  int iteration = 0;
  double functional = 0.0;
  double gradient_norm = 0.0;  // L2(Gamma_0) norm of the Riesz gradient
  double jump_norm = 0.0;      // ||u1 - u2||_{L2(Gamma_0)}
  double seconds = 0.0;        // wall time since the start of the run
};

struct OptTrace {
  std::vector<OptIterate> records;
};

enum class StopReason { GradientTolerance, IterationCap };

// J_gamma = 1/2 ||u1-u2||^2_{L2(Gamma_0)} + gamma/2 ||g||^2_{L2(Gamma_0)}.
double eval_functional(const DofMap& d1, const Vec& u1, const DofMap& d2, const Vec& u2,
                       const TraceSpace& trace, const ControlVector& g, double gamma);

// L2(Gamma_0) Riesz representative of dJ/dg: gamma*g + (xi1 - xi2)|_Gamma0.
ControlVector eval_gradient(const DofMap& d1, const AdjointSolution& adj1,
                            const DofMap& d2, const AdjointSolution& adj2,
                            const TraceSpace& trace, const ControlVector& g, double gamma);

using OptObserver = std::function<void(int iteration, const ControlVector& g,
                                       const StateSolution& s1, const StateSolution& s2)>;

struct OptResult {
  StateSolution state1, state2;
  AdjointSolution adjoint1, adjoint2;
  ControlVector control;
  OptTrace trace;
  StopReason reason = StopReason::IterationCap;
  std::vector<Vec> harvested_xi1, harvested_xi2;  // when cfg.harvest_adjoints
};

OptResult optimize(const SubdomainProblem& p1, const SubdomainProblem& p2,
                   const TraceSpace& trace, const OptConfig& cfg, const ControlVector& g0,
                   const OptObserver& observer = {});

struct ErrorReport {
  double abs_u1 = 0.0, abs_u2 = 0.0, abs_p1 = 0.0, abs_p2 = 0.0;
  std::optional<double> rel_u1, rel_u2, rel_p1, rel_p2;
};

// Per-subdomain L2 errors against the monolithic restriction. Relative
// entries are absent when the corresponding monolithic norm vanishes. For
// the all-Dirichlet cavity the pressure gauge is aligned by a common
// constant before comparing.
ErrorReport compute_errors(const DofMap& d1, const Vec& u1, const Vec& p1,
                           const DofMap& d2, const Vec& u2, const Vec& p2,
                           const DofMap& whole_map, const StateSolution& monolithic);

}  // namespace ddrom
