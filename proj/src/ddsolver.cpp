#include "ddrom/ddsolver.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <future>

namespace ddrom {

namespace {

// Runs the two subdomain solves of one optimiser step, optionally on two
// threads; they touch disjoint problems and are safe to run concurrently.
template <typename F1, typename F2>
auto solve_pair(bool concurrent, F1&& f1, F2&& f2) {
  if (concurrent) {
    auto fut = std::async(std::launch::async, std::forward<F1>(f1));
    auto second = f2();
    return std::make_pair(fut.get(), std::move(second));
  }
  auto first = f1();
  auto second = f2();
  return std::make_pair(std::move(first), std::move(second));
}

}  // namespace

SubdomainProblem CoupledProblem::subdomain(int index, double nu, double ubar) const {
  const Domain domain = index == 1 ? Domain::Subdomain1 : Domain::Subdomain2;
  return make_subdomain_problem(mesh, index == 1 ? map1 : map2, trace, domain, nu, ubar);
}

SubdomainProblem CoupledProblem::whole(double nu, double ubar) const {
  return make_subdomain_problem(mesh, whole_map, trace, Domain::Whole, nu, ubar);
}

Vec CoupledProblem::lifting(int index, double ubar) const {
  return ubar * (index == 1 ? lifting_unit1 : lifting_unit2);
}

CoupledProblem build_coupled_problem(Benchmark benchmark, double h) {
  CoupledProblem cp;
  cp.benchmark = benchmark;
  cp.h = h;
  const Mesh mesh =
      benchmark == Benchmark::Step ? generate_step_mesh(h) : generate_cavity_mesh(h);
  cp.mesh = std::make_shared<const Mesh>(mesh);
  cp.iface = extract_interface(mesh);
  cp.trace = std::make_shared<const TraceSpace>(build_trace_space(mesh, cp.iface));
  cp.whole_map = std::make_shared<const DofMap>(build_dofmap(mesh, Domain::Whole, cp.iface));
  cp.map1 = std::make_shared<const DofMap>(build_dofmap(mesh, Domain::Subdomain1, cp.iface));
  cp.map2 = std::make_shared<const DofMap>(build_dofmap(mesh, Domain::Subdomain2, cp.iface));
  cp.lifting_unit1 = compute_lifting(cp.subdomain(1, 1.0, 1.0)).coeffs;
  cp.lifting_unit2 = compute_lifting(cp.subdomain(2, 1.0, 1.0)).coeffs;
  return cp;
}

void OptConfig::validate() const {
  if (gamma < 0.0) throw InvalidRange("optimiser config: gamma must be >= 0");
  if (it_max < 1) throw InvalidRange("optimiser config: it_max must be >= 1");
  if (tol_grad <= 0.0) throw InvalidRange("optimiser config: tol_grad must be > 0");
  if (alpha <= 0.0) throw InvalidRange("optimiser config: alpha must be > 0");
  if (memory < 1) throw InvalidRange("optimiser config: memory must be >= 1");
}

OptConfig::Method method_from_string(const std::string& name) {
  if (name == "steepest-descent") return OptConfig::Method::SteepestDescent;
  if (name == "l-bfgs") return OptConfig::Method::LBfgs;
  throw UsageError("unknown optimiser method '" + name + "'");
}

std::string to_string(OptConfig::Method method) {
  return method == OptConfig::Method::SteepestDescent ? "steepest-descent" : "l-bfgs";
}

double eval_functional(const DofMap& d1, const Vec& u1, const DofMap& d2, const Vec& u2,
                       const TraceSpace& trace, const ControlVector& g, double gamma) {
  const Vec t1 = velocity_trace(d1, u1);
  const Vec t2 = velocity_trace(d2, u2);
  if (t1.size() != t2.size() || t1.size() != 2 * trace.n_nodes)
    throw TraceMismatch("eval_functional: the two states do not share the trace space");
  const Vec jump = t1 - t2;
  double value = 0.5 * trace.inner(jump, jump);
  if (gamma != 0.0) value += 0.5 * gamma * trace.inner(g.coeffs, g.coeffs);
  return value;
}

ControlVector eval_gradient(const DofMap& d1, const AdjointSolution& adj1, const DofMap& d2,
                            const AdjointSolution& adj2, const TraceSpace& trace,
                            const ControlVector& g, double gamma) {
  const Vec x1 = velocity_trace(d1, adj1.xi);
  const Vec x2 = velocity_trace(d2, adj2.xi);
  if (x1.size() != x2.size() || x1.size() != 2 * trace.n_nodes ||
      g.coeffs.size() != x1.size())
    throw TraceMismatch("eval_gradient: adjoint traces do not match the control space");
  // The dual pairing is M_Gamma (gamma g + xi1 - xi2); the L2 Riesz map
  // cancels the mass matrix, so the representative has these coefficients.
  return {gamma * g.coeffs + x1 - x2};
}

OptResult optimize(const SubdomainProblem& p1, const SubdomainProblem& p2,
                   const TraceSpace& trace, const OptConfig& cfg, const ControlVector& g0,
                   const OptObserver& observer) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  auto elapsed = [&t_start] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  };

  ControlVector g = g0;
  if (g.coeffs.size() == 0) g = ControlVector::zero(trace.n_nodes);

  auto inner = [&trace](const Vec& a, const Vec& b) { return trace.inner(a, b); };

  OptResult result;
  result.control = g;

  auto solve_states = [&](const ControlVector& control, const StateSolution* w1,
                          const StateSolution* w2) {
    return solve_pair(
        cfg.concurrent_subdomains,
        [&]() { return solve_state(p1, control, w1); },
        [&]() { return solve_state(p2, control, w2); });
  };
  auto [s1, s2] = solve_states(g, nullptr, nullptr);

  auto functional = [&](const StateSolution& a, const StateSolution& b,
                        const ControlVector& control) {
    return eval_functional(*p1.dofmap, a.velocity, *p2.dofmap, b.velocity, trace, control,
                           cfg.gamma);
  };
  auto jump_of = [&](const StateSolution& a, const StateSolution& b) {
    return Vec(velocity_trace(*p1.dofmap, a.velocity) - velocity_trace(*p2.dofmap, b.velocity));
  };
  auto adjoints_at = [&](const StateSolution& a, const StateSolution& b) {
    const Vec jump = jump_of(a, b);
    return solve_pair(
        cfg.concurrent_subdomains, [&]() { return solve_adjoint(p1, a, jump); },
        [&]() { return solve_adjoint(p2, b, jump); });
  };

  double j_value = functional(s1, s2, g);
  auto [a1, a2] = adjoints_at(s1, s2);
  ControlVector grad = eval_gradient(*p1.dofmap, a1, *p2.dofmap, a2, trace, g, cfg.gamma);
  double grad_norm = trace.norm(grad.coeffs);

  auto record = [&](int iteration, const StateSolution& a, const StateSolution& b) {
    result.trace.records.push_back(
        {iteration, j_value, grad_norm, trace.norm(jump_of(a, b)), elapsed()});
    if (cfg.harvest_adjoints) {
      result.harvested_xi1.push_back(a1.xi);
      result.harvested_xi2.push_back(a2.xi);
    }
    if (observer) observer(iteration, g, a, b);
  };
  record(0, s1, s2);

  // L-BFGS history in the L2(Gamma_0) metric.
  std::deque<std::pair<Vec, Vec>> history;  // (s, y)
  auto direction = [&]() -> Vec {
    if (cfg.method == OptConfig::Method::SteepestDescent || history.empty())
      return -grad.coeffs;
    Vec q = grad.coeffs;
    std::vector<double> alpha_hist(history.size());
    std::vector<double> rho(history.size());
    for (int i = static_cast<int>(history.size()) - 1; i >= 0; --i) {
      const auto& [s, y] = history[i];
      rho[i] = 1.0 / inner(y, s);
      alpha_hist[i] = rho[i] * inner(s, q);
      q -= alpha_hist[i] * y;
    }
    const auto& [s_last, y_last] = history.back();
    q *= inner(s_last, y_last) / inner(y_last, y_last);
    for (std::size_t i = 0; i < history.size(); ++i) {
      const auto& [s, y] = history[i];
      const double beta = rho[i] * inner(y, q);
      q += (alpha_hist[i] - beta) * s;
    }
    return -q;
  };

  int iteration = 0;
  while (grad_norm > cfg.tol_grad && iteration < cfg.it_max) {
    Vec dir = direction();
    double slope = inner(grad.coeffs, dir);
    if (!(slope < 0.0)) {
      history.clear();
      dir = -grad.coeffs;
      slope = inner(grad.coeffs, dir);
    }
    const double trial =
        cfg.method == OptConfig::Method::SteepestDescent ? cfg.alpha : 1.0;

    bool accepted = false;
    double step = trial;
    ControlVector g_new;
    StateSolution s1_new, s2_new;
    double j_new = 0.0;
    for (int shrink = 0; shrink <= 20; ++shrink) {
      step = trial * std::pow(0.5, shrink);
      g_new = {g.coeffs + step * dir};
      std::tie(s1_new, s2_new) = solve_states(g_new, &s1, &s2);
      j_new = functional(s1_new, s2_new, g_new);
      if (j_new <= j_value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted)
      throw LineSearchFailed("optimize: no Armijo decrease after 20 shrinkages");

    auto [a1_new, a2_new] = adjoints_at(s1_new, s2_new);
    ControlVector grad_new =
        eval_gradient(*p1.dofmap, a1_new, *p2.dofmap, a2_new, trace, g_new, cfg.gamma);

    const Vec s_vec = g_new.coeffs - g.coeffs;
    const Vec y_vec = grad_new.coeffs - grad.coeffs;
    const double sy = inner(s_vec, y_vec);
    if (sy > 1e-14 * trace.norm(s_vec) * trace.norm(y_vec)) {
      history.emplace_back(s_vec, y_vec);
      while (static_cast<int>(history.size()) > cfg.memory) history.pop_front();
    }

    g = std::move(g_new);
    s1 = std::move(s1_new);
    s2 = std::move(s2_new);
    a1 = std::move(a1_new);
    a2 = std::move(a2_new);
    grad = std::move(grad_new);
    j_value = j_new;
    grad_norm = trace.norm(grad.coeffs);
    ++iteration;
    record(iteration, s1, s2);
  }

  result.state1 = std::move(s1);
  result.state2 = std::move(s2);
  result.adjoint1 = std::move(a1);
  result.adjoint2 = std::move(a2);
  result.control = std::move(g);
  result.reason =
      grad_norm <= cfg.tol_grad ? StopReason::GradientTolerance : StopReason::IterationCap;
  return result;
}

ErrorReport compute_errors(const DofMap& d1, const Vec& u1, const Vec& p1, const DofMap& d2,
                           const Vec& u2, const Vec& p2, const DofMap& whole_map,
                           const StateSolution& monolithic) {
  const Vec um1 = restrict_velocity(d1, whole_map, monolithic.velocity);
  const Vec um2 = restrict_velocity(d2, whole_map, monolithic.velocity);
  const Vec pm1 = restrict_pressure(d1, whole_map, monolithic.pressure);
  const Vec pm2 = restrict_pressure(d2, whole_map, monolithic.pressure);

  const SparseMatrix mv1 = assemble_velocity_mass(d1);
  const SparseMatrix mv2 = assemble_velocity_mass(d2);
  const SparseMatrix mp1 = assemble_pressure_mass(d1);
  const SparseMatrix mp2 = assemble_pressure_mass(d2);

  // The all-Dirichlet cavity fixes the monolithic pressure only up to a
  // constant; align the gauge with one shift common to both subdomains.
  double shift = 0.0;
  if (whole_map.mesh().benchmark == Benchmark::Cavity && whole_map.domain() == Domain::Whole) {
    const Vec ones1 = Vec::Ones(d1.n_pressure());
    const Vec ones2 = Vec::Ones(d2.n_pressure());
    const double area = ones1.dot(spmv(mp1, ones1)) + ones2.dot(spmv(mp2, ones2));
    shift = (ones1.dot(spmv(mp1, Vec(p1 - pm1))) + ones2.dot(spmv(mp2, Vec(p2 - pm2)))) / area;
  }

  ErrorReport report;
  report.abs_u1 = l2_norm_velocity(mv1, u1 - um1);
  report.abs_u2 = l2_norm_velocity(mv2, u2 - um2);
  report.abs_p1 = l2_norm_pressure(mp1, p1 - pm1 - shift * Vec::Ones(d1.n_pressure()));
  report.abs_p2 = l2_norm_pressure(mp2, p2 - pm2 - shift * Vec::Ones(d2.n_pressure()));

  auto relative = [](double abs_err, double norm) -> std::optional<double> {
    if (norm == 0.0) return std::nullopt;
    return abs_err / norm;
  };
  report.rel_u1 = relative(report.abs_u1, l2_norm_velocity(mv1, um1));
  report.rel_u2 = relative(report.abs_u2, l2_norm_velocity(mv2, um2));
  report.rel_p1 = relative(report.abs_p1, l2_norm_pressure(mp1, pm1));
  report.rel_p2 = relative(report.abs_p2, l2_norm_pressure(mp2, pm2));
  return report;
}

}  // namespace ddrom
