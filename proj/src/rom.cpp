#include "ddrom/rom.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <deque>
#include <mutex>
#include <thread>

#include <Eigen/LU>

namespace ddrom {

namespace {

std::pair<int, int> near_square_factors(int m) {
  int best = 1;
  for (int f = 1; f * f <= m; ++f)
    if (m % f == 0) best = f;
  return {best, m / best};
}

std::vector<double> grid_1d(double lo, double hi, int count) {
  std::vector<double> values(count);
  if (count == 1) {
    values[0] = 0.5 * (lo + hi);
  } else {
    for (int i = 0; i < count; ++i)
      values[i] = lo + (hi - lo) * static_cast<double>(i) / (count - 1);
  }
  return values;
}

}  // namespace

ParameterRanges ParameterRanges::defaults(Benchmark benchmark) {
  if (benchmark == Benchmark::Step) return {0.5, 2.0, 0.5, 6.5};
  return {0.05, 2.0, 0.5, 5.0};
}

std::vector<ParameterSample> sample_parameters(const ParameterRanges& ranges, int m) {
  if (m < 1) throw InvalidRange("sample_parameters: need at least one sample");
  if (!(ranges.nu_min <= ranges.nu_max) || !(ranges.ubar_min <= ranges.ubar_max))
    throw InvalidRange("sample_parameters: empty parameter range");
  const auto [n_nu, n_ubar] = near_square_factors(m);
  const auto nus = grid_1d(ranges.nu_min, ranges.nu_max, n_nu);
  const auto ubars = grid_1d(ranges.ubar_min, ranges.ubar_max, n_ubar);
  std::vector<ParameterSample> samples;
  samples.reserve(m);
  for (double nu : nus)
    for (double ubar : ubars) samples.push_back({nu, ubar});
  return samples;
}

std::string component_name(int component) {
  static const char* names[kNumComponents] = {"u1", "s1", "p1", "u2", "s2",
                                              "p2", "xi1", "xi2", "g"};
  return names[component];
}

SnapshotSet collect_snapshots(const CoupledProblem& cp,
                              const std::vector<ParameterSample>& samples,
                              const SnapshotConfig& cfg) {
  struct SampleResult {
    bool ok = false;
    std::string error;
    std::array<std::vector<Vec>, kNumComponents> snaps;
  };
  std::vector<SampleResult> results(samples.size());

  OptConfig opt = cfg.optimizer;
  opt.harvest_adjoints = cfg.harvest_adjoints;
  opt.concurrent_subdomains = false;  // samples already run in parallel

  auto run_sample = [&](std::size_t idx) {
    SampleResult& out = results[idx];
    const auto& sample = samples[idx];
    try {
      const SubdomainProblem p1 = cp.subdomain(1, sample.viscosity, sample.drive);
      const SubdomainProblem p2 = cp.subdomain(2, sample.viscosity, sample.drive);
      const OptResult res = optimize(p1, p2, *cp.trace, opt, ControlVector{Vec()});

      const Vec l1 = cp.lifting(1, sample.drive);
      const Vec l2 = cp.lifting(2, sample.drive);
      out.snaps[kCompU1].push_back(res.state1.velocity - l1);
      out.snaps[kCompU2].push_back(res.state2.velocity - l2);
      out.snaps[kCompP1].push_back(res.state1.pressure);
      out.snaps[kCompP2].push_back(res.state2.pressure);
      out.snaps[kCompS1].push_back(compute_supremizer(p1, res.state1.pressure).coeffs);
      out.snaps[kCompS2].push_back(compute_supremizer(p2, res.state2.pressure).coeffs);
      if (cfg.harvest_adjoints) {
        for (const Vec& xi : res.harvested_xi1) out.snaps[kCompXi1].push_back(xi);
        for (const Vec& xi : res.harvested_xi2) out.snaps[kCompXi2].push_back(xi);
      } else {
        out.snaps[kCompXi1].push_back(res.adjoint1.xi);
        out.snaps[kCompXi2].push_back(res.adjoint2.xi);
      }
      out.snaps[kCompG].push_back(res.control.coeffs);
      out.ok = true;
    } catch (const Error& err) {
      out.error = err.what();
    }
  };

  const int workers = std::max(1, cfg.workers);
  if (workers == 1 || samples.size() <= 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) run_sample(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < std::min<std::size_t>(workers, samples.size()); ++w)
      pool.emplace_back([&] {
        for (;;) {
          const std::size_t idx = next.fetch_add(1);
          if (idx >= samples.size()) return;
          run_sample(idx);
        }
      });
    for (auto& t : pool) t.join();
  }

  SnapshotSet set;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (results[i].ok) {
      set.samples.push_back(samples[i]);
      for (int c = 0; c < kNumComponents; ++c)
        for (auto& v : results[i].snaps[c]) set.snapshots[c].push_back(std::move(v));
    } else {
      set.failures.emplace_back(samples[i], results[i].error);
    }
  }
  if (set.samples.empty())
    throw SnapshotFailure("collect_snapshots: every sample failed to converge");
  return set;
}

namespace {

// X inner-product matrix of each POD component.
std::array<SparseMatrix, kNumComponents> component_inner_products(const CoupledProblem& cp) {
  std::array<SparseMatrix, kNumComponents> x;
  const SparseMatrix k1 = assemble_vector_laplacian(*cp.map1);
  const SparseMatrix k2 = assemble_vector_laplacian(*cp.map2);
  x[kCompU1] = k1;
  x[kCompS1] = k1;
  x[kCompXi1] = k1;
  x[kCompU2] = k2;
  x[kCompS2] = k2;
  x[kCompXi2] = k2;
  x[kCompP1] = assemble_pressure_mass(*cp.map1);
  x[kCompP2] = assemble_pressure_mass(*cp.map2);
  x[kCompG] = cp.trace->mass;
  return x;
}

}  // namespace

PodBasis compress(const CoupledProblem& cp, const SnapshotSet& snapshots, int n_max) {
  if (n_max < 1) throw InvalidRange("compress: n_max must be >= 1");
  const auto inner_products = component_inner_products(cp);

  PodBasis basis;
  for (int c = 0; c < kNumComponents; ++c) {
    const auto& snaps = snapshots.snapshots[c];
    const int m = static_cast<int>(snaps.size());
    basis.requested[c] = std::min(n_max, m);
    if (m == 0) {
      basis.retained[c] = 0;
      continue;
    }
    const int n = static_cast<int>(snaps.front().size());
    DenseMatrix s(n, m);
    for (int j = 0; j < m; ++j) s.col(j) = snaps[j];

    const SparseMatrix& x = inner_products[c];
    DenseMatrix xs(n, m);
    for (int j = 0; j < m; ++j) xs.col(j) = spmv(x, s.col(j));
    DenseMatrix corr = s.transpose() * xs;
    corr = 0.5 * (corr + corr.transpose());

    const EigenDecomposition dec = sym_eig(corr);
    basis.eigenvalues[c] = dec.eigenvalues;

    const double lead = std::abs(dec.eigenvalues[0]);
    int keep = 0;
    while (keep < basis.requested[c] && dec.eigenvalues[keep] > 1e-12 * lead) ++keep;

    DenseMatrix modes(n, keep);
    for (int k = 0; k < keep; ++k)
      modes.col(k) = s * dec.eigenvectors.col(k) / std::sqrt(dec.eigenvalues[k]);

    // One modified Gram-Schmidt pass in the X inner product keeps the
    // near-threshold modes orthonormal to machine precision.
    int kept = 0;
    for (int k = 0; k < keep; ++k) {
      Vec v = modes.col(k);
      for (int j = 0; j < kept; ++j) {
        const Vec xj = spmv(x, modes.col(j));
        v -= xj.dot(v) * modes.col(j);
      }
      const double norm = std::sqrt(std::max(0.0, v.dot(spmv(x, v))));
      if (norm < 1e-8) break;  // numerically dependent; stop here
      modes.col(kept) = v / norm;
      ++kept;
    }
    basis.modes[c] = modes.leftCols(kept);
    basis.retained[c] = kept;
  }
  return basis;
}

Vec retained_energy(const Vec& eigenvalues) {
  Vec energy(eigenvalues.size());
  const double total = eigenvalues.cwiseAbs().sum();
  double acc = 0.0;
  for (int k = 0; k < eigenvalues.size(); ++k) {
    acc += std::abs(eigenvalues[k]);
    energy[k] = total > 0.0 ? acc / total : 1.0;
  }
  return energy;
}

Vec project_onto_modes(const SparseMatrix& x_matrix, const DenseMatrix& modes,
                       const Vec& field) {
  return modes.transpose() * spmv(x_matrix, field);
}

namespace {

struct TraceBlocks {
  DenseMatrix t_u;   // 2*nt x n_u
  DenseMatrix t_xi;  // 2*nt x n_xi
  Vec t_lift;        // 2*nt
};

DenseMatrix trace_of_modes(const DofMap& dm, const DenseMatrix& modes) {
  const auto& tr = dm.trace_scalar_nodes();
  DenseMatrix out(2 * tr.size(), modes.cols());
  for (int f = 0; f < modes.cols(); ++f)
    out.col(f) = velocity_trace(dm, modes.col(f));
  return out;
}

}  // namespace

ReducedOperators project_operators(const CoupledProblem& cp, const PodBasis& basis,
                                   const ModeCounts& counts, bool supremizer_enrichment) {
  ReducedOperators ops;
  ops.counts = counts;
  ops.supremizer_enrichment = supremizer_enrichment;
  ops.n_g = std::min(counts.n_g, basis.retained[kCompG]);
  if (ops.n_g < 1) throw DimensionMismatch("project_operators: no control modes retained");
  ops.modes_g = basis.modes[kCompG].leftCols(ops.n_g);

  const SparseMatrix& trace_mass = cp.trace->mass;
  std::array<TraceBlocks, 2> tb;

  for (int i = 0; i < 2; ++i) {
    ReducedSubdomainOps& sub = ops.sub[i];
    const DofMap& dm = i == 0 ? *cp.map1 : *cp.map2;
    const int comp_u = i == 0 ? kCompU1 : kCompU2;
    const int comp_s = i == 0 ? kCompS1 : kCompS2;
    const int comp_p = i == 0 ? kCompP1 : kCompP2;
    const int comp_xi = i == 0 ? kCompXi1 : kCompXi2;

    const int n_u = std::min(counts.n_u, basis.retained[comp_u]);
    const int n_s = supremizer_enrichment ? std::min(counts.n_s, basis.retained[comp_s]) : 0;
    sub.n_u = n_u + n_s;
    sub.n_p = std::min(counts.n_p, basis.retained[comp_p]);
    sub.n_xi = std::min(counts.n_xi, basis.retained[comp_xi]);
    if (sub.n_u < 1 || sub.n_p < 1 || sub.n_xi < 1)
      throw DimensionMismatch("project_operators: empty reduced space for subdomain");

    sub.modes_u.resize(dm.n_velocity(), sub.n_u);
    sub.modes_u.leftCols(n_u) = basis.modes[comp_u].leftCols(n_u);
    if (n_s > 0) sub.modes_u.rightCols(n_s) = basis.modes[comp_s].leftCols(n_s);
    sub.modes_p = basis.modes[comp_p].leftCols(sub.n_p);
    sub.modes_xi = basis.modes[comp_xi].leftCols(sub.n_xi);
    sub.lifting_unit = i == 0 ? cp.lifting_unit1 : cp.lifting_unit2;
    sub.lifting_trace = velocity_trace(dm, sub.lifting_unit);

    const SparseMatrix lap = assemble_vector_laplacian(dm);
    const SubdomainProblem prob = cp.subdomain(i + 1, 1.0, 1.0);
    const SparseMatrix div = assemble_divergence(prob);

    // diffusion / divergence blocks and their lifting columns
    DenseMatrix lap_u(dm.n_velocity(), sub.n_u);
    for (int j = 0; j < sub.n_u; ++j) lap_u.col(j) = spmv(lap, sub.modes_u.col(j));
    sub.laplacian = sub.modes_u.transpose() * lap_u;
    sub.lift_laplacian = sub.modes_u.transpose() * spmv(lap, sub.lifting_unit);

    DenseMatrix div_u(dm.n_pressure(), sub.n_u);
    for (int j = 0; j < sub.n_u; ++j) div_u.col(j) = spmv(div, sub.modes_u.col(j));
    sub.divergence = sub.modes_p.transpose() * div_u;
    sub.lift_divergence = sub.modes_p.transpose() * spmv(div, sub.lifting_unit);

    // convection tensor over modes + lifting (index n_u is the lifting)
    DenseMatrix u_fields(dm.n_velocity(), sub.n_u + 1);
    u_fields.leftCols(sub.n_u) = sub.modes_u;
    u_fields.col(sub.n_u) = sub.lifting_unit;
    const VelocityQuadTable ut = velocity_quad_table(dm, u_fields);
    const int nf = sub.n_u + 1;

    std::vector<DenseMatrix> conv_full(sub.n_u, DenseMatrix::Zero(nf, nf));
    for (int q = 0; q < ut.n_points; ++q) {
      const double w = ut.weight[q];
      for (int m = 0; m < sub.n_u; ++m) {
        const auto& vm = ut.val(q, m);
        DenseMatrix& target = conv_full[m];
        for (int j = 0; j < nf; ++j) {
          const auto& vj = ut.val(q, j);
          for (int k = 0; k < nf; ++k) {
            const auto& gk = ut.grd(q, k);
            const double adv0 = vj[0] * gk[0] + vj[1] * gk[1];
            const double adv1 = vj[0] * gk[2] + vj[1] * gk[3];
            target(j, k) += w * (adv0 * vm[0] + adv1 * vm[1]);
          }
        }
      }
    }
    sub.convection.assign(sub.n_u, DenseMatrix());
    sub.conv_mode_lift.resize(sub.n_u, sub.n_u);
    sub.conv_lift_mode.resize(sub.n_u, sub.n_u);
    sub.lift_convection.resize(sub.n_u);
    for (int m = 0; m < sub.n_u; ++m) {
      sub.convection[m] = conv_full[m].topLeftCorner(sub.n_u, sub.n_u);
      sub.conv_mode_lift.row(m) = conv_full[m].col(sub.n_u).head(sub.n_u).transpose();
      sub.conv_lift_mode.row(m) = conv_full[m].row(sub.n_u).head(sub.n_u);
      sub.lift_convection[m] = conv_full[m](sub.n_u, sub.n_u);
    }

    // adjoint blocks on the xi basis
    DenseMatrix lap_xi(dm.n_velocity(), sub.n_xi);
    for (int j = 0; j < sub.n_xi; ++j) lap_xi.col(j) = spmv(lap, sub.modes_xi.col(j));
    sub.adj_laplacian = sub.modes_xi.transpose() * lap_xi;

    const VelocityQuadTable xt = velocity_quad_table(dm, sub.modes_xi);
    sub.adj_conv_first.assign(nf, DenseMatrix::Zero(sub.n_xi, sub.n_xi));
    sub.adj_conv_second.assign(nf, DenseMatrix::Zero(sub.n_xi, sub.n_xi));
    for (int q = 0; q < ut.n_points; ++q) {
      const double w = ut.weight[q];
      for (int k = 0; k < nf; ++k) {
        const auto& vu = ut.val(q, k);
        const auto& gu = ut.grd(q, k);
        DenseMatrix& first = sub.adj_conv_first[k];
        DenseMatrix& second = sub.adj_conv_second[k];
        for (int m = 0; m < sub.n_xi; ++m) {
          const auto& vxm = xt.val(q, m);
          const auto& gxm = xt.grd(q, m);
          // c(xi_m, u_k, xi_j): (xi_m . grad u_k) . xi_j
          const double f0 = vxm[0] * gu[0] + vxm[1] * gu[1];
          const double f1 = vxm[0] * gu[2] + vxm[1] * gu[3];
          // c(u_k, xi_m, xi_j): (u_k . grad xi_m) . xi_j
          const double s0 = vu[0] * gxm[0] + vu[1] * gxm[1];
          const double s1 = vu[0] * gxm[2] + vu[1] * gxm[3];
          for (int j = 0; j < sub.n_xi; ++j) {
            const auto& vxj = xt.val(q, j);
            first(m, j) += w * (f0 * vxj[0] + f1 * vxj[1]);
            second(m, j) += w * (s0 * vxj[0] + s1 * vxj[1]);
          }
        }
      }
    }

    tb[i].t_u = trace_of_modes(dm, sub.modes_u);
    tb[i].t_xi = trace_of_modes(dm, sub.modes_xi);
    tb[i].t_lift = sub.lifting_trace;
  }

  // interface pairings
  auto mass_apply = [&](const DenseMatrix& m) {
    DenseMatrix out(m.rows(), m.cols());
    for (int j = 0; j < m.cols(); ++j) out.col(j) = spmv(trace_mass, m.col(j));
    return out;
  };
  const DenseMatrix mt_u1 = mass_apply(tb[0].t_u);
  const DenseMatrix mt_u2 = mass_apply(tb[1].t_u);
  const Vec lift_diff = tb[0].t_lift - tb[1].t_lift;
  const Vec m_lift_diff = spmv(trace_mass, lift_diff);

  ops.jump_11 = tb[0].t_u.transpose() * mt_u1;
  ops.jump_12 = tb[0].t_u.transpose() * mt_u2;
  ops.jump_22 = tb[1].t_u.transpose() * mt_u2;
  ops.jump_lift_1 = tb[0].t_u.transpose() * m_lift_diff;
  ops.jump_lift_2 = tb[1].t_u.transpose() * m_lift_diff;
  ops.jump_lift_lift = lift_diff.dot(m_lift_diff);

  const DenseMatrix m_g = mass_apply(ops.modes_g);
  for (int i = 0; i < 2; ++i) {
    ReducedSubdomainOps& sub = ops.sub[i];
    sub.control_coupling = tb[i].t_u.transpose() * m_g;
    sub.gradient_coupling = m_g.transpose() * tb[i].t_xi;
    sub.adj_trace_u1 = tb[i].t_xi.transpose() * mt_u1;
    sub.adj_trace_u2 = tb[i].t_xi.transpose() * mt_u2;
    sub.adj_trace_lift = tb[i].t_xi.transpose() * m_lift_diff;
  }
  return ops;
}

namespace {

Vec convection_apply(const ReducedSubdomainOps& sub, const Vec& a, const Vec& b) {
  Vec out(sub.n_u);
  for (int m = 0; m < sub.n_u; ++m) out[m] = a.dot(sub.convection[m] * b);
  return out;
}

DenseMatrix convection_jacobian(const ReducedSubdomainOps& sub, const Vec& u) {
  DenseMatrix jac(sub.n_u, sub.n_u);
  for (int m = 0; m < sub.n_u; ++m)
    jac.row(m) = (sub.convection[m] * u + sub.convection[m].transpose() * u).transpose();
  return jac;
}

struct ReducedResidual {
  Vec momentum;
  Vec continuity;
};

ReducedResidual reduced_residual(const ReducedSubdomainOps& sub, double sign, double nu,
                                 double ubar, const Vec& u, const Vec& p, const Vec& g_hat) {
  ReducedResidual r;
  r.momentum = nu * (sub.laplacian * u + ubar * sub.lift_laplacian) +
               convection_apply(sub, u, u) +
               ubar * (sub.conv_mode_lift * u + sub.conv_lift_mode * u) +
               ubar * ubar * sub.lift_convection + sub.divergence.transpose() * p -
               sign * (sub.control_coupling * g_hat);
  r.continuity = sub.divergence * u + ubar * sub.lift_divergence;
  return r;
}

Eigen::PartialPivLU<DenseMatrix> factor_checked(const DenseMatrix& m, const char* where) {
  Eigen::PartialPivLU<DenseMatrix> lu(m);
  if (lu.rcond() < 1e-14)
    throw SingularSystem(std::string(where) + ": reduced system is singular");
  return lu;
}

struct ReducedNewtonResult {
  Vec u, p;
  NewtonStats stats;
};

ReducedNewtonResult reduced_newton(const ReducedSubdomainOps& sub, double sign, double nu,
                                   double ubar, const Vec& g_hat, const Vec& u0,
                                   const Vec& p0) {
  const int n_u = sub.n_u, n_p = sub.n_p;
  Vec u = u0, p = p0;
  const double load_scale =
      (nu * ubar * sub.lift_laplacian + ubar * ubar * sub.lift_convection -
       sign * (sub.control_coupling * g_hat))
          .cwiseAbs()
          .maxCoeff();
  const double tol = 1e-12 * (1.0 + load_scale);

  NewtonStats stats;
  auto residual_norm = [&](const ReducedResidual& r) {
    return std::max(r.momentum.cwiseAbs().maxCoeff(), r.continuity.cwiseAbs().maxCoeff());
  };
  ReducedResidual res = reduced_residual(sub, sign, nu, ubar, u, p, g_hat);
  double rn = residual_norm(res);
  stats.residual_history.push_back(rn);
  int growth = 0;
  for (int it = 0; it < 50 && rn > tol; ++it) {
    DenseMatrix jac = DenseMatrix::Zero(n_u + n_p, n_u + n_p);
    jac.topLeftCorner(n_u, n_u) = nu * sub.laplacian + convection_jacobian(sub, u) +
                                  ubar * (sub.conv_mode_lift + sub.conv_lift_mode);
    jac.topRightCorner(n_u, n_p) = sub.divergence.transpose();
    jac.bottomLeftCorner(n_p, n_u) = sub.divergence;
    const auto lu = factor_checked(jac, "reduced state");

    Vec rhs(n_u + n_p);
    rhs.head(n_u) = -res.momentum;
    rhs.tail(n_p) = -res.continuity;
    const Vec delta = lu.solve(rhs);

    double step = 1.0;
    Vec u_new, p_new;
    ReducedResidual res_new;
    double rn_new = 0.0;
    for (int halving = 0; halving <= 8; ++halving) {
      u_new = u + step * delta.head(n_u);
      p_new = p + step * delta.tail(n_p);
      res_new = reduced_residual(sub, sign, nu, ubar, u_new, p_new, g_hat);
      rn_new = residual_norm(res_new);
      if (rn_new < rn || halving == 8) break;
      step *= 0.5;
    }
    u = u_new;
    p = p_new;
    res = res_new;
    const double prev = rn;
    rn = rn_new;
    stats.residual_history.push_back(rn);
    stats.iterations = it + 1;
    growth = rn >= prev ? growth + 1 : 0;
    if (growth >= 4 || !std::isfinite(rn))
      throw NewtonDiverged("reduced state: residual diverged");
  }
  if (rn > tol) throw NewtonDiverged("reduced state: no convergence in 50 iterations");
  stats.residual = rn;
  return {std::move(u), std::move(p), std::move(stats)};
}

}  // namespace

ReducedState solve_reduced_state(const ReducedOperators& ops, double nu, double ubar,
                                 const Vec& g_hat, const ReducedState* guess) {
  if (g_hat.size() != ops.n_g)
    throw DimensionMismatch("solve_reduced_state: control coefficient length mismatch");
  ReducedState state;
  for (int i = 0; i < 2; ++i) {
    const ReducedSubdomainOps& sub = ops.sub[i];
    const double sign = i == 0 ? 1.0 : -1.0;
    Vec u0 = Vec::Zero(sub.n_u), p0 = Vec::Zero(sub.n_p);
    if (guess && guess->u[i].size() == sub.n_u) u0 = guess->u[i];
    if (guess && guess->p[i].size() == sub.n_p) p0 = guess->p[i];
    try {
      auto res = reduced_newton(sub, sign, nu, ubar, g_hat, u0, p0);
      state.u[i] = std::move(res.u);
      state.p[i] = std::move(res.p);
      state.stats[i] = std::move(res.stats);
    } catch (const NewtonDiverged&) {
      // viscosity continuation from an easier problem
      Vec uc = Vec::Zero(sub.n_u), pc = Vec::Zero(sub.n_p);
      for (double factor : {8.0, 4.0, 2.0, 1.0}) {
        auto res = reduced_newton(sub, sign, nu * factor, ubar, g_hat, uc, pc);
        uc = std::move(res.u);
        pc = std::move(res.p);
        state.stats[i] = std::move(res.stats);
        state.stats[i].used_continuation = true;
      }
      state.u[i] = std::move(uc);
      state.p[i] = std::move(pc);
    }
  }
  return state;
}

DenseMatrix reduced_state_jacobian(const ReducedOperators& ops, int subdomain, double nu,
                                   double ubar, const Vec& u_hat) {
  const ReducedSubdomainOps& sub = ops.sub[subdomain - 1];
  const int n_u = sub.n_u, n_p = sub.n_p;
  DenseMatrix jac = DenseMatrix::Zero(n_u + n_p, n_u + n_p);
  jac.topLeftCorner(n_u, n_u) = nu * sub.laplacian + convection_jacobian(sub, u_hat) +
                                ubar * (sub.conv_mode_lift + sub.conv_lift_mode);
  jac.topRightCorner(n_u, n_p) = sub.divergence.transpose();
  jac.bottomLeftCorner(n_p, n_u) = sub.divergence;
  return jac;
}

DenseMatrix reduced_adjoint_matrix(const ReducedOperators& ops, int subdomain, double nu,
                                   double ubar, const ReducedState& state) {
  const ReducedSubdomainOps& sub = ops.sub[subdomain - 1];
  DenseMatrix m = nu * sub.adj_laplacian;
  const Vec& u = state.u[subdomain - 1];
  for (int k = 0; k < sub.n_u; ++k)
    m += u[k] * (sub.adj_conv_first[k] + sub.adj_conv_second[k]);
  m += ubar * (sub.adj_conv_first[sub.n_u] + sub.adj_conv_second[sub.n_u]);
  return m;
}

std::array<Vec, 2> solve_reduced_adjoint(const ReducedOperators& ops, double nu, double ubar,
                                         const ReducedState& state) {
  std::array<Vec, 2> xi;
  for (int i = 0; i < 2; ++i) {
    const ReducedSubdomainOps& sub = ops.sub[i];
    const double sign = i == 0 ? 1.0 : -1.0;
    const Vec rhs = sign * (sub.adj_trace_u1 * state.u[0] - sub.adj_trace_u2 * state.u[1] +
                            ubar * sub.adj_trace_lift);
    const DenseMatrix m = reduced_adjoint_matrix(ops, i + 1, nu, ubar, state);
    xi[i] = factor_checked(m, "reduced adjoint").solve(rhs);
  }
  return xi;
}

double reduced_jump_norm(const ReducedOperators& ops, double ubar,
                         const ReducedState& state) {
  const Vec& u1 = state.u[0];
  const Vec& u2 = state.u[1];
  const double sq = u1.dot(ops.jump_11 * u1) + u2.dot(ops.jump_22 * u2) -
                    2.0 * u1.dot(ops.jump_12 * u2) +
                    2.0 * ubar * (u1.dot(ops.jump_lift_1) - u2.dot(ops.jump_lift_2)) +
                    ubar * ubar * ops.jump_lift_lift;
  return std::sqrt(std::max(0.0, sq));
}

double reduced_functional(const ReducedOperators& ops, double ubar,
                          const ReducedState& state, const Vec& g_hat, double gamma) {
  const double jump = reduced_jump_norm(ops, ubar, state);
  return 0.5 * jump * jump + 0.5 * gamma * g_hat.squaredNorm();
}

ReducedGradientMode gradient_mode_from_string(const std::string& name) {
  if (name == "exact-adjoint") return ReducedGradientMode::ExactAdjoint;
  if (name == "pod-adjoint") return ReducedGradientMode::PodAdjoint;
  throw UsageError("unknown reduced gradient mode '" + name + "'");
}

std::string to_string(ReducedGradientMode mode) {
  return mode == ReducedGradientMode::ExactAdjoint ? "exact-adjoint" : "pod-adjoint";
}

Vec reduced_gradient(const ReducedOperators& ops, double nu, double ubar,
                     const ReducedState& state, const Vec& g_hat, double gamma,
                     ReducedGradientMode mode) {
  if (mode == ReducedGradientMode::PodAdjoint) {
    const auto xi = solve_reduced_adjoint(ops, nu, ubar, state);
    return gamma * g_hat + ops.sub[0].gradient_coupling * xi[0] -
           ops.sub[1].gradient_coupling * xi[1];
  }
  // discrete adjoint of the reduced system: transposed Newton Jacobian
  Vec grad = gamma * g_hat;
  for (int i = 0; i < 2; ++i) {
    const ReducedSubdomainOps& sub = ops.sub[i];
    const double sign = i == 0 ? 1.0 : -1.0;
    Vec ju;
    if (i == 0)
      ju = ops.jump_11 * state.u[0] - ops.jump_12 * state.u[1] + ubar * ops.jump_lift_1;
    else
      ju = ops.jump_22 * state.u[1] - ops.jump_12.transpose() * state.u[0] -
           ubar * ops.jump_lift_2;
    Vec rhs = Vec::Zero(sub.n_u + sub.n_p);
    rhs.head(sub.n_u) = ju;
    const DenseMatrix jac = reduced_state_jacobian(ops, i + 1, nu, ubar, state.u[i]);
    const Vec zeta = factor_checked(DenseMatrix(jac.transpose()), "reduced gradient").solve(rhs);
    grad += sign * (sub.control_coupling.transpose() * zeta.head(sub.n_u));
  }
  return grad;
}

ReducedOptResult optimize_reduced(const ReducedOperators& ops, double nu, double ubar,
                                  const OptConfig& cfg, ReducedGradientMode mode,
                                  const Vec& g0) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  auto elapsed = [&t_start] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  };

  Vec g = g0.size() == ops.n_g ? g0 : Vec(Vec::Zero(ops.n_g));
  ReducedOptResult result;

  ReducedState state = solve_reduced_state(ops, nu, ubar, g);
  double j_value = reduced_functional(ops, ubar, state, g, cfg.gamma);
  Vec grad = reduced_gradient(ops, nu, ubar, state, g, cfg.gamma, mode);
  double grad_norm = grad.norm();

  auto record = [&](int iteration) {
    result.trace.records.push_back(
        {iteration, j_value, grad_norm, reduced_jump_norm(ops, ubar, state), elapsed()});
  };
  record(0);

  std::deque<std::pair<Vec, Vec>> history;
  auto direction = [&]() -> Vec {
    if (cfg.method == OptConfig::Method::SteepestDescent || history.empty()) return -grad;
    Vec q = grad;
    std::vector<double> alpha_hist(history.size()), rho(history.size());
    for (int i = static_cast<int>(history.size()) - 1; i >= 0; --i) {
      const auto& [s, y] = history[i];
      rho[i] = 1.0 / y.dot(s);
      alpha_hist[i] = rho[i] * s.dot(q);
      q -= alpha_hist[i] * y;
    }
    const auto& [s_last, y_last] = history.back();
    q *= s_last.dot(y_last) / y_last.squaredNorm();
    for (std::size_t i = 0; i < history.size(); ++i) {
      const auto& [s, y] = history[i];
      q += (alpha_hist[i] - rho[i] * y.dot(q)) * s;
    }
    return -q;
  };

  int iteration = 0;
  while (grad_norm > cfg.tol_grad && iteration < cfg.it_max) {
    Vec dir = direction();
    double slope = grad.dot(dir);
    if (!(slope < 0.0)) {
      history.clear();
      dir = -grad;
      slope = grad.dot(dir);
    }
    const double trial = cfg.method == OptConfig::Method::SteepestDescent ? cfg.alpha : 1.0;

    bool accepted = false;
    Vec g_new;
    ReducedState state_new;
    double j_new = 0.0;
    for (int shrink = 0; shrink <= 20; ++shrink) {
      const double step = trial * std::pow(0.5, shrink);
      g_new = g + step * dir;
      state_new = solve_reduced_state(ops, nu, ubar, g_new, &state);
      j_new = reduced_functional(ops, ubar, state_new, g_new, cfg.gamma);
      if (j_new <= j_value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted)
      throw LineSearchFailed("optimize_reduced: no Armijo decrease after 20 shrinkages");

    Vec grad_new = reduced_gradient(ops, nu, ubar, state_new, g_new, cfg.gamma, mode);
    const Vec s_vec = g_new - g;
    const Vec y_vec = grad_new - grad;
    if (s_vec.dot(y_vec) > 1e-14 * s_vec.norm() * y_vec.norm()) {
      history.emplace_back(s_vec, y_vec);
      while (static_cast<int>(history.size()) > cfg.memory) history.pop_front();
    }
    g = std::move(g_new);
    state = std::move(state_new);
    grad = std::move(grad_new);
    j_value = j_new;
    grad_norm = grad.norm();
    ++iteration;
    record(iteration);
  }

  result.g_hat = std::move(g);
  result.adjoint = solve_reduced_adjoint(ops, nu, ubar, state);
  result.state = std::move(state);
  result.reason =
      grad_norm <= cfg.tol_grad ? StopReason::GradientTolerance : StopReason::IterationCap;
  return result;
}

Vec reconstruct_velocity(const ReducedOperators& ops, int subdomain, double ubar,
                         const Vec& u_hat) {
  const ReducedSubdomainOps& sub = ops.sub[subdomain - 1];
  return sub.modes_u * u_hat + ubar * sub.lifting_unit;
}

Vec reconstruct_pressure(const ReducedOperators& ops, int subdomain, const Vec& p_hat) {
  return ops.sub[subdomain - 1].modes_p * p_hat;
}

Vec reconstruct_adjoint(const ReducedOperators& ops, int subdomain, const Vec& xi_hat) {
  return ops.sub[subdomain - 1].modes_xi * xi_hat;
}

Vec reconstruct_control(const ReducedOperators& ops, const Vec& g_hat) {
  return ops.modes_g * g_hat;
}

}  // namespace ddrom
