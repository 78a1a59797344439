#include "ddrom/ddsolver.hpp"

#include <cmath>
#include <random>

#include "doctest.h"

using namespace ddrom;

namespace {

ControlVector random_control(const TraceSpace& trace, std::mt19937_64& rng,
                             double l2_norm = 1.0) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  ControlVector g = ControlVector::zero(trace.n_nodes);
  for (int i = 0; i < g.coeffs.size(); ++i) g.coeffs[i] = unif(rng);
  g.coeffs *= l2_norm / trace.norm(g.coeffs);
  return g;
}

}  // namespace

TEST_CASE("functional oracle values on the cavity interface") {
  const CoupledProblem cp = build_coupled_problem(Benchmark::Cavity, 0.125);
  const TraceSpace& ts = *cp.trace;

  // equal traces, zero control
  const Vec u1 = Vec::Zero(cp.map1->n_velocity());
  const Vec u2 = Vec::Zero(cp.map2->n_velocity());
  CHECK(eval_functional(*cp.map1, u1, *cp.map2, u2, ts, ControlVector::zero(ts.n_nodes),
                        0.0) == 0.0);

  // unit jump in the x component over an interface of length 1
  const Vec ones_x = interpolate_velocity(*cp.map1, [](const Point&) {
    return std::array<double, 2>{1.0, 0.0};
  });
  CHECK(eval_functional(*cp.map1, ones_x, *cp.map2, u2, ts,
                        ControlVector::zero(ts.n_nodes), 0.0) ==
        doctest::Approx(0.5).epsilon(1e-12));

  // pure regularisation: gamma = 2, g = (1, 0)
  ControlVector g = ControlVector::zero(ts.n_nodes);
  for (int k = 0; k < ts.n_nodes; ++k) g.coeffs[2 * k] = 1.0;
  CHECK(eval_functional(*cp.map1, u1, *cp.map2, u2, ts, g, 2.0) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gradient formula degenerate cases") {
  const CoupledProblem cp = build_coupled_problem(Benchmark::Cavity, 0.25);
  const TraceSpace& ts = *cp.trace;
  std::mt19937_64 rng(3);

  AdjointSolution a1{Vec::Zero(cp.map1->n_velocity()), Vec::Zero(cp.map1->n_pressure())};
  AdjointSolution a2{Vec::Zero(cp.map2->n_velocity()), Vec::Zero(cp.map2->n_pressure())};
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int i = 0; i < a1.xi.size(); ++i) a1.xi[i] = unif(rng);

  // xi1 = xi2 (same trace) and gamma = 1: gradient equals g
  AdjointSolution a2_same = a2;
  a2_same.xi = Vec::Zero(cp.map2->n_velocity());
  const Vec t1 = velocity_trace(*cp.map1, a1.xi);
  a2_same.xi = scatter_trace(*cp.map2, t1);
  const ControlVector g = random_control(ts, rng);
  const ControlVector grad1 = eval_gradient(*cp.map1, a1, *cp.map2, a2_same, ts, g, 1.0);
  CHECK((grad1.coeffs - g.coeffs).cwiseAbs().maxCoeff() <= 1e-13);

  // gamma = 0 and xi2 = 0: gradient is the xi1 trace
  const ControlVector grad2 = eval_gradient(*cp.map1, a1, *cp.map2, a2, ts, g, 0.0);
  CHECK((grad2.coeffs - t1).cwiseAbs().maxCoeff() <= 1e-13);
}

TEST_CASE("adjoint gradient matches central finite differences") {
  for (Benchmark bench : {Benchmark::Step, Benchmark::Cavity}) {
    const double h = bench == Benchmark::Step ? 1.0 : 0.25;
    const CoupledProblem cp = build_coupled_problem(bench, h);
    const TraceSpace& ts = *cp.trace;
    const double nu = 1.0, ubar = 1.0;
    const SubdomainProblem p1 = cp.subdomain(1, nu, ubar);
    const SubdomainProblem p2 = cp.subdomain(2, nu, ubar);

    std::mt19937_64 rng(1234);
    const ControlVector g0 = random_control(ts, rng, 0.1);

    for (double gamma : {0.0, 1e-2}) {
      const auto s1 = solve_state(p1, g0);
      const auto s2 = solve_state(p2, g0);
      const Vec jump =
          velocity_trace(*cp.map1, s1.velocity) - velocity_trace(*cp.map2, s2.velocity);
      const auto a1 = solve_adjoint(p1, s1, jump);
      const auto a2 = solve_adjoint(p2, s2, jump);
      const ControlVector grad = eval_gradient(*cp.map1, a1, *cp.map2, a2, ts, g0, gamma);

      for (int dir_id = 0; dir_id < 5; ++dir_id) {
        const ControlVector dir = random_control(ts, rng);
        const double eps = 1e-5;
        ControlVector gp{g0.coeffs + eps * dir.coeffs};
        ControlVector gm{g0.coeffs - eps * dir.coeffs};
        const auto sp1 = solve_state(p1, gp, &s1);
        const auto sp2 = solve_state(p2, gp, &s2);
        const auto sm1 = solve_state(p1, gm, &s1);
        const auto sm2 = solve_state(p2, gm, &s2);
        const double jp =
            eval_functional(*cp.map1, sp1.velocity, *cp.map2, sp2.velocity, ts, gp, gamma);
        const double jm =
            eval_functional(*cp.map1, sm1.velocity, *cp.map2, sm2.velocity, ts, gm, gamma);
        const double fd = (jp - jm) / (2.0 * eps);
        const double directional = ts.inner(grad.coeffs, dir.coeffs);
        CHECK(directional == doctest::Approx(fd).epsilon(1e-4));
      }
    }
  }
}

TEST_CASE("optimize terminates immediately from the exact flux") {
  const CoupledProblem cp = build_coupled_problem(Benchmark::Step, 1.0);
  const SubdomainProblem p1 = cp.subdomain(1, 1.0, 1.0);
  const SubdomainProblem p2 = cp.subdomain(2, 1.0, 1.0);
  const auto mono = solve_monolithic(*cp.mesh, cp.iface, 1.0, 1.0);
  const ControlVector flux = extract_interface_flux(p1, *cp.whole_map, mono);

  // consistency floor: linear response of each subdomain to the per-side
  // divergence defect of the monolithic restriction
  auto deviation = [&](const SubdomainProblem& sub, const StateSolution& state) {
    const Vec um = restrict_velocity(*sub.dofmap, *cp.whole_map, mono.velocity);
    Vec rhs = Vec::Zero(sub.dofmap->n_total());
    rhs.tail(sub.dofmap->n_pressure()) = -spmv(assemble_divergence(sub), um);
    return Vec(state.jacobian->solve(rhs).head(sub.dofmap->n_velocity()));
  };
  const auto s1 = solve_state(p1, flux);
  const auto s2 = solve_state(p2, flux);
  const Vec pred_jump = velocity_trace(*cp.map1, deviation(p1, s1)) -
                        velocity_trace(*cp.map2, deviation(p2, s2));
  const double floor = 0.5 * cp.trace->inner(pred_jump, pred_jump);

  OptConfig cfg;
  cfg.it_max = 2;
  cfg.tol_grad = 1e-7;
  const OptResult result = optimize(p1, p2, *cp.trace, cfg, flux);
  CHECK(result.trace.records.size() <= 3);
  CHECK(result.trace.records.front().functional <= 10.0 * floor);
}

TEST_CASE("steepest descent reproduces the explicit update formula") {
  const CoupledProblem cp = build_coupled_problem(Benchmark::Step, 1.0);
  const SubdomainProblem p1 = cp.subdomain(1, 1.0, 1.0);
  const SubdomainProblem p2 = cp.subdomain(2, 1.0, 1.0);
  const TraceSpace& ts = *cp.trace;

  std::mt19937_64 rng(7);
  const ControlVector g0 = random_control(ts, rng, 0.05);
  const double gamma = 0.3;
  const double alpha = 0.05;

  OptConfig cfg;
  cfg.method = OptConfig::Method::SteepestDescent;
  cfg.gamma = gamma;
  cfg.alpha = alpha;
  cfg.it_max = 1;
  cfg.tol_grad = 1e-14;

  std::vector<ControlVector> iterates;
  const OptResult result = optimize(p1, p2, ts, cfg, g0,
                                    [&](int, const ControlVector& g, const StateSolution&,
                                        const StateSolution&) { iterates.push_back(g); });

  // recompute the adjoint trace difference at g0
  const auto s1 = solve_state(p1, g0);
  const auto s2 = solve_state(p2, g0);
  const Vec jump = velocity_trace(*cp.map1, s1.velocity) - velocity_trace(*cp.map2, s2.velocity);
  const auto a1 = solve_adjoint(p1, s1, jump);
  const auto a2 = solve_adjoint(p2, s2, jump);
  const Vec xdiff = velocity_trace(*cp.map1, a1.xi) - velocity_trace(*cp.map2, a2.xi);
  const Vec expected = (1.0 - alpha * gamma) * g0.coeffs - alpha * xdiff;

  REQUIRE(iterates.size() == 2);  // iteration 0 and the accepted update
  CHECK((iterates[1].coeffs - expected).cwiseAbs().maxCoeff() <=
        1e-11 * (1.0 + expected.cwiseAbs().maxCoeff()));
  CHECK(result.trace.records.size() == 2);
}

TEST_CASE("step benchmark: functional decreases monotonically by orders of magnitude") {
  const CoupledProblem cp = build_coupled_problem(Benchmark::Step, 0.5);
  const SubdomainProblem p1 = cp.subdomain(1, 1.0, 1.0);
  const SubdomainProblem p2 = cp.subdomain(2, 1.0, 1.0);

  OptConfig cfg;
  cfg.it_max = 40;
  cfg.tol_grad = 1e-5;
  const OptResult result = optimize(p1, p2, *cp.trace, cfg, ControlVector{Vec()});

  const auto& rec = result.trace.records;
  REQUIRE(rec.size() >= 2);
  // initial mismatch for (U=1, nu=1) is around 0.5 on the paper's mesh
  CHECK(rec.front().functional > 0.05);
  CHECK(rec.front().functional < 2.0);
  for (std::size_t k = 1; k < rec.size(); ++k)
    CHECK(rec[k].functional <= rec[k - 1].functional + 1e-15);
  CHECK(rec.back().functional <= 1e-3 * rec.front().functional);

  // jump norm and functional are tied when gamma = 0
  for (const auto& r : rec)
    CHECK(r.jump_norm * r.jump_norm == doctest::Approx(2.0 * r.functional).epsilon(1e-9));
}

TEST_CASE("compute_errors against the monolithic restriction") {
  const CoupledProblem cp = build_coupled_problem(Benchmark::Step, 1.0);
  const auto mono = solve_monolithic(*cp.mesh, cp.iface, 1.0, 1.0);

  const Vec u1 = restrict_velocity(*cp.map1, *cp.whole_map, mono.velocity);
  const Vec u2 = restrict_velocity(*cp.map2, *cp.whole_map, mono.velocity);
  const Vec p1 = restrict_pressure(*cp.map1, *cp.whole_map, mono.pressure);
  const Vec p2 = restrict_pressure(*cp.map2, *cp.whole_map, mono.pressure);

  const ErrorReport exact =
      compute_errors(*cp.map1, u1, p1, *cp.map2, u2, p2, *cp.whole_map, mono);
  CHECK(exact.abs_u1 <= 1e-12);
  CHECK(exact.abs_u2 <= 1e-12);
  CHECK(exact.abs_p1 <= 1e-12);
  CHECK(exact.abs_p2 <= 1e-12);
  REQUIRE(exact.rel_u1.has_value());
  CHECK(*exact.rel_u1 <= 1e-12);

  // adding a constant c shifts the absolute velocity error by |c|*sqrt(area)
  const double c = 0.37;
  Vec u1c = u1;
  for (int s = 0; s < cp.map1->n_scalar(); ++s) u1c[2 * s] += c;
  const ErrorReport shifted =
      compute_errors(*cp.map1, u1c, p1, *cp.map2, u2, p2, *cp.whole_map, mono);
  CHECK(shifted.abs_u1 ==
        doctest::Approx(c * std::sqrt(exact_area(Benchmark::Step, 1))).epsilon(1e-10));

  // zero monolithic restriction norms mark relative errors as absent
  StateSolution zero_mono;
  zero_mono.velocity = Vec::Zero(cp.whole_map->n_velocity());
  zero_mono.pressure = Vec::Zero(cp.whole_map->n_pressure());
  const ErrorReport absent = compute_errors(*cp.map1, u1, p1, *cp.map2, u2, p2,
                                            *cp.whole_map, zero_mono);
  CHECK(!absent.rel_u1.has_value());
  CHECK(!absent.rel_p2.has_value());
}

TEST_CASE("optimizer rejects invalid configurations") {
  OptConfig cfg;
  cfg.gamma = -1.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidRange);
  cfg.gamma = 0.0;
  cfg.it_max = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidRange);
  cfg.it_max = 10;
  cfg.tol_grad = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidRange);
}
