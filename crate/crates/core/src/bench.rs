//! Reference test problem with a closed-form solution, its exact statistics,
//! error metrics and refinement studies.
//!
//! The problem is
//!
//! ```text
//! u_t = (1 + x^2) u_xx + x u_x + a u (1 - u),   0 < x < 1,
//! ```
//!
//! whose solution for fixed `a > 0` is
//! `u(x, t) = (1 + exp(-5 a t / 6 + sqrt(a / 6) asinh(x)))^-2`.
//! Initial and boundary data are traces of that solution, so they are
//! coherent for every `a`.

use gauss_quad::legendre::GaussLegendre;
use serde::Serialize;

use crate::ensemble::{run_ensemble, EnsembleStats, Sampler, SchemeConfig};
use crate::error::{Error, Result};
use crate::etdsolver::{Surface, TimeMesh};
use crate::randmodel::{
    BoundaryProcess, CoefficientProcess, InitialProcess, Model, ModelBounds, RandomVariableSpec, Shape,
};
use crate::specmat::Grid1D;

/// Name under which the reference problem is registered.
pub const MODEL_NAME: &str = "paper_sec5";

/// Absolute tolerance of the exact-moment quadrature.
pub const MOMENT_TOL: f64 = 1e-10;

/// Reaction amplitude law of the reference problem: N(0.75, 0.08) truncated
/// to [0.01, 1].
pub fn reference_law() -> RandomVariableSpec {
    RandomVariableSpec::TruncatedNormal {
        mu: 0.75,
        sigma: 0.08,
        lo: 0.01,
        hi: 1.0,
    }
}

/// Closed-form solution for a fixed reaction amplitude `a > 0`.
pub fn exact_solution(x: f64, t: f64, a: f64) -> f64 {
    let e = (-5.0 * a * t / 6.0 + (a / 6.0).sqrt() * x.asinh()).exp();
    1.0 / ((1.0 + e) * (1.0 + e))
}

/// The reference heterogeneous problem on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestProblem {
    pub law: RandomVariableSpec,
}

impl Default for TestProblem {
    fn default() -> Self {
        TestProblem {
            law: reference_law(),
        }
    }
}

impl TestProblem {
    pub fn new(law: RandomVariableSpec) -> Self {
        TestProblem { law }
    }

    pub fn deterministic(a: f64) -> Self {
        TestProblem {
            law: RandomVariableSpec::deterministic(a),
        }
    }

    /// `D = 1 + x^2`, `B = x`, `A = a`, data from the exact solution.
    pub fn model(&self) -> Model {
        Model {
            name: MODEL_NAME.into(),
            length: 1.0,
            diffusion: CoefficientProcess::new(Shape::OnePlusXSquared, RandomVariableSpec::deterministic(1.0)),
            advection: CoefficientProcess::new(Shape::IdentityX, RandomVariableSpec::deterministic(1.0)),
            reaction: CoefficientProcess::new(Shape::constant(1.0), self.law),
            initial_amplitude: RandomVariableSpec::deterministic(1.0),
            initial: InitialProcess::new(|x, s| exact_solution(x, 0.0, s.reaction)),
            boundary: BoundaryProcess::new(
                |t, s| exact_solution(0.0, t, s.reaction),
                |t, s| exact_solution(1.0, t, s.reaction),
            ),
            // Constants quoted with the problem; d2 = 1 disagrees with
            // max(1 + x^2) = 2 on [0, 1], which the gate reports.
            reference_bounds: Some(ModelBounds {
                d1: 1.0,
                d2: 1.0,
                b1: 1.0,
                a1: self.law.support().0,
                a2: 1.0,
            }),
        }
    }

    /// Grid `h = 0.1`, step `k = 0.002`, final time `T = 0.01`.
    pub fn reference_config(&self, sampler: Sampler) -> SchemeConfig {
        SchemeConfig::new(
            Grid1D::from_step(1.0, 0.1).expect("valid grid"),
            TimeMesh::from_step(0.01, 0.002).expect("valid mesh"),
            sampler,
        )
    }
}

/// Which statistic [`exact_moments`] returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Moment {
    Mean,
    Second,
    Std,
}

/// Adaptive Gauss-Legendre quadrature: a 10-point and a 20-point rule are
/// compared on each subinterval, which is bisected until they agree to
/// `max(abs_tol * share, rel_tol * |estimate|)`.
pub fn integrate_adaptive(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    abs_tol: f64,
) -> Result<f64> {
    const MAX_INTERVALS: usize = 4096;
    const REL_TOL: f64 = 1e-14;
    let coarse = GaussLegendre::new(10).expect("degree >= 2");
    let fine = GaussLegendre::new(20).expect("degree >= 2");
    let width = hi - lo;
    let mut stack = vec![(lo, hi)];
    let mut total = 0.0;
    let mut intervals = 0;
    while let Some((a, b)) = stack.pop() {
        intervals += 1;
        if intervals > MAX_INTERVALS {
            return Err(Error::QuadratureNonConvergence(format!(
                "more than {MAX_INTERVALS} subintervals on [{lo}, {hi}]"
            )));
        }
        let c = coarse.integrate(a, b, &f);
        let g = fine.integrate(a, b, &f);
        let share = (b - a) / width;
        if (g - c).abs() <= (abs_tol * share).max(REL_TOL * g.abs()) || b - a < 1e-12 * width {
            total += g;
        } else {
            let mid = 0.5 * (a + b);
            stack.push((mid, b));
            stack.push((a, mid));
        }
    }
    Ok(total)
}

/// Exact mean, second moment or standard deviation of the solution at
/// `(x, t)` when the reaction amplitude follows `law`.
pub fn exact_moments(x: f64, t: f64, law: &RandomVariableSpec, which: Moment) -> Result<f64> {
    let (mean, second, std) = exact_statistics(x, t, law)?;
    Ok(match which {
        Moment::Mean => mean,
        Moment::Second => second,
        Moment::Std => std,
    })
}

/// `(mean, second moment, std)` at `(x, t)`.
///
/// The variance is integrated as the central moment `E[(u - mean)^2]` rather
/// than as `E[u^2] - mean^2`, which would lose most digits here: the spread
/// is orders of magnitude below the mean.
pub fn exact_statistics(x: f64, t: f64, law: &RandomVariableSpec) -> Result<(f64, f64, f64)> {
    law.validate()?;
    if !law.is_random() {
        let u = exact_solution(x, t, law.support().0);
        return Ok((u, u * u, 0.0));
    }
    let (lo, hi) = law.support();
    let mean = integrate_adaptive(|a| exact_solution(x, t, a) * law.pdf(a), lo, hi, MOMENT_TOL)?;
    let second = integrate_adaptive(|a| exact_solution(x, t, a).powi(2) * law.pdf(a), lo, hi, MOMENT_TOL)?;
    let var = integrate_adaptive(
        |a| (exact_solution(x, t, a) - mean).powi(2) * law.pdf(a),
        lo,
        hi,
        MOMENT_TOL * 1e-8,
    )?;
    Ok((mean, second, var.max(0.0).sqrt()))
}

/// Exact statistics on every grid node and time level, in the same layout as
/// a numerical ensemble.
pub fn exact_ensemble(grid: &Grid1D, mesh: &TimeMesh, law: &RandomVariableSpec) -> Result<EnsembleStats> {
    let (nodes, levels) = (grid.dim(), mesh.n_steps() + 1);
    let mut mean = Surface::zeros(nodes, levels);
    let mut second = Surface::zeros(nodes, levels);
    let mut std = Surface::zeros(nodes, levels);
    for n in 0..levels {
        for i in 0..nodes {
            let (m, s2, s) = exact_statistics(grid.node(i), mesh.level(n), law)?;
            mean.set(i, n, m);
            second.set(i, n, s2);
            std.set(i, n, s);
        }
    }
    Ok(EnsembleStats {
        mean,
        second_moment: second,
        std,
        mc_standard_error: None,
        count: 0,
        sampler: Sampler::Collocation { n_nodes: 0 },
    })
}

/// Pointwise absolute errors of the numerical statistics at the final time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub t: f64,
    pub x: Vec<f64>,
    pub numeric_mean: Vec<f64>,
    pub exact_mean: Vec<f64>,
    pub mean_error: Vec<f64>,
    pub numeric_std: Vec<f64>,
    pub exact_std: Vec<f64>,
    pub std_error: Vec<f64>,
    pub max_mean_error: f64,
    pub max_std_error: f64,
}

impl ErrorReport {
    pub fn within(&self, mean_tol: f64, std_tol: f64) -> bool {
        self.max_mean_error <= mean_tol && self.max_std_error <= std_tol
    }
}

/// Compares `stats` at the final level with the exact statistics of `problem`.
pub fn error_report(stats: &EnsembleStats, problem: &TestProblem, config: &SchemeConfig) -> Result<ErrorReport> {
    let grid = &config.grid;
    let mesh = &config.mesh;
    if stats.mean.n_nodes() != grid.dim() || stats.mean.n_levels() != mesh.n_steps() + 1 {
        return Err(Error::GridMismatch(format!(
            "statistics are {}x{}, configuration is {}x{}",
            stats.mean.n_nodes(),
            stats.mean.n_levels(),
            grid.dim(),
            mesh.n_steps() + 1
        )));
    }
    let t = mesh.t_final();
    let x: Vec<f64> = grid.nodes().collect();
    let mut exact_mean = Vec::with_capacity(x.len());
    let mut exact_std = Vec::with_capacity(x.len());
    for &xi in &x {
        let (m, _, s) = exact_statistics(xi, t, &problem.law)?;
        exact_mean.push(m);
        exact_std.push(s);
    }
    let numeric_mean = stats.mean.last_level().to_vec();
    let numeric_std = stats.std.last_level().to_vec();
    let abs_diff = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| (p - q).abs()).collect() };
    let mean_error = abs_diff(&numeric_mean, &exact_mean);
    let std_error = abs_diff(&numeric_std, &exact_std);
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    Ok(ErrorReport {
        t,
        max_mean_error: max(&mean_error),
        max_std_error: max(&std_error),
        x,
        numeric_mean,
        exact_mean,
        mean_error,
        numeric_std,
        exact_std,
        std_error,
    })
}

/// Which stepsizes a refinement study halves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Refinement {
    /// Halve `k` with `h` fixed.
    Temporal,
    /// Halve `h` and quarter `k`, keeping `k / h^2` fixed.
    Spatial,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementRow {
    pub h: f64,
    pub k: f64,
    pub max_err_mean: f64,
    /// `log2(previous error / this error)`; absent on the first row.
    pub observed_order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementTable {
    pub kind: Refinement,
    pub rows: Vec<RefinementRow>,
}

impl RefinementTable {
    pub fn min_order(&self) -> Option<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.observed_order)
            .reduce(f64::min)
    }

    pub fn errors_decrease(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].max_err_mean < w[0].max_err_mean)
    }
}

/// Refines `base` `levels - 1` times and records the maximum mean error at
/// the final time against the exact statistics.
///
/// Temporal studies halve `k` on the fixed grid; spatial studies halve `h`
/// and quarter `k`. A level failing the stepsize gate is an error unless
/// `base.allow_inadmissible` is set.
pub fn convergence_study(
    problem: &TestProblem,
    base: &SchemeConfig,
    levels: usize,
    kind: Refinement,
) -> Result<RefinementTable> {
    if levels == 0 {
        return Err(Error::Config("need at least one refinement level".into()));
    }
    let model = problem.model();
    let t_final = base.mesh.t_final();
    let mut rows: Vec<RefinementRow> = Vec::with_capacity(levels);
    for level in 0..levels {
        let scale = 1usize << level;
        let (grid, mesh) = match kind {
            Refinement::Temporal => (
                base.grid,
                TimeMesh::new(t_final, base.mesh.n_steps() * scale)?,
            ),
            Refinement::Spatial => (
                Grid1D::new(base.grid.length(), base.grid.n() * scale)?,
                TimeMesh::new(t_final, base.mesh.n_steps() * scale * scale)?,
            ),
        };
        let config = SchemeConfig {
            grid,
            mesh,
            ..base.clone()
        };
        let report = config.gate(&model)?;
        if !report.admissible && !config.allow_inadmissible {
            return Err(Error::Inadmissible(format!(
                "refinement level {level} (h = {}, k = {}): {}",
                grid.h(),
                mesh.k(),
                report.notes.join("; ")
            )));
        }
        let stats = run_ensemble(&model, &config)?;
        let err = error_report(&stats, problem, &config)?.max_mean_error;
        let observed_order = rows.last().map(|prev| (prev.max_err_mean / err).log2());
        rows.push(RefinementRow {
            h: grid.h(),
            k: mesh.k(),
            max_err_mean: err,
            observed_order,
        });
    }
    Ok(RefinementTable { kind, rows })
}
