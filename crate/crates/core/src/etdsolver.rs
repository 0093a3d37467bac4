//! Stepsize admissibility and the per-sample exponential time differencing
//! loop.
//!
//! One step advances the semidiscrete system `u' = M u + g(u)` by
//!
//! ```text
//! u^{n+1} = exp(M k) u^n + k Lambda[M, k] g^n
//! ```
//!
//! where the boundary entries of `g^n` are forward differences of the
//! Dirichlet data, so the boundary rows reproduce `Phi_1(t^{n+1})` and
//! `Phi_2(t^{n+1})` exactly.

use nalgebra::DVector;
use serde::Serialize;

use crate::ensemble::SchemeConfig;
use crate::error::{Error, Result};
use crate::expmquad::{build_propagators, PropagatorPair};
use crate::randmodel::{check_coherence, BoundaryProcess, Model, ModelBounds, Sample};
use crate::specmat::{build_system_matrix, Grid1D};

/// Absolute slack allowed on `0 <= u <= 1` for floating-point roundoff.
pub const POSITIVITY_TOL: f64 = 1e-12;
/// Absolute tolerance for recovering the boundary data.
pub const BOUNDARY_TOL: f64 = 1e-12;
/// Absolute slack allowed on `0 <= u^0 <= 1`.
pub const INITIAL_TOL: f64 = 1e-12;

/// Time levels `t^n = n k`, `0 <= n <= N_T`, on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeMesh {
    t_final: f64,
    n_steps: usize,
    k: f64,
}

impl TimeMesh {
    pub fn new(t_final: f64, n_steps: usize) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidTimeMesh(format!(
                "final time must be positive, got {t_final}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidTimeMesh("need at least one time step".into()));
        }
        Ok(TimeMesh {
            t_final,
            n_steps,
            k: t_final / n_steps as f64,
        })
    }

    /// Mesh with step `k`; `T / k` must be an integer up to roundoff.
    pub fn from_step(t_final: f64, k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidTimeMesh(format!("step must be positive, got {k}")));
        }
        let ratio = t_final / k;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * n {
            return Err(Error::InvalidTimeMesh(format!(
                "final time {t_final} is not an integer multiple of k = {k}"
            )));
        }
        Self::new(t_final, n as usize)
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    /// Number of steps `N_T`.
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn level(&self, n: usize) -> f64 {
        if n == self.n_steps {
            self.t_final
        } else {
            n as f64 * self.k
        }
    }
}

/// Outcome of the stepsize gate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSizeReport {
    pub bounds: ModelBounds,
    /// `2 d1 / b1`, infinite without advection.
    pub h_max: f64,
    /// `h^2 / (2 d2 + a2 h^2)`; the step must stay strictly below it.
    pub k_max: f64,
    pub h_used: f64,
    pub k_used: f64,
    pub admissible: bool,
    pub notes: Vec<String>,
}

/// Checks `h <= 2 d1 / b1` (operator is Metzler) and
/// `k < h^2 / (2 d2 + a2 h^2)` (scheme is monotone).
pub fn stepsize_gate(bounds: &ModelBounds, h: f64, k: f64) -> Result<StepSizeReport> {
    let ModelBounds { d1, d2, b1, a2, .. } = *bounds;
    let ok = d1 > 0.0 && d2 >= d1 && b1 >= 0.0 && a2 >= 0.0 && h > 0.0 && k > 0.0;
    if !ok || [d1, d2, b1, a2, h, k].iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidBounds(format!(
            "need 0 < d1 <= d2, b1 >= 0, a2 >= 0, h > 0, k > 0; got d1 = {d1}, d2 = {d2}, b1 = {b1}, a2 = {a2}, h = {h}, k = {k}"
        )));
    }
    let h_max = if b1 == 0.0 { f64::INFINITY } else { 2.0 * d1 / b1 };
    let k_max = h * h / (2.0 * d2 + a2 * h * h);
    let mut notes = Vec::new();
    if h > h_max {
        notes.push(format!(
            "h = {h} exceeds 2 d1 / b1 = {h_max}: the operator is not guaranteed Metzler"
        ));
    }
    if k >= k_max {
        notes.push(format!(
            "k = {k} is not below h^2 / (2 d2 + a2 h^2) = {k_max}"
        ));
    }
    Ok(StepSizeReport {
        bounds: *bounds,
        h_max,
        k_max,
        h_used: h,
        k_used: k,
        admissible: h <= h_max && k < k_max,
        notes,
    })
}

/// `u^0 = [Phi_1(0), Phi_0(x_1), ..., Phi_0(x_{N-1}), Phi_2(0)]`.
pub fn discretize_initial(model: &Model, grid: &Grid1D, sample: &Sample) -> Result<DVector<f64>> {
    let n = grid.n();
    let u = DVector::from_fn(grid.dim(), |i, _| {
        if i == 0 {
            model.boundary.left_at(0.0, sample)
        } else if i == n {
            model.boundary.right_at(0.0, sample)
        } else {
            model.initial.at(grid.node(i), sample)
        }
    });
    for (i, &v) in u.iter().enumerate() {
        if !(-INITIAL_TOL..=1.0 + INITIAL_TOL).contains(&v) {
            return Err(Error::InitialOutOfRange { node: i, value: v });
        }
    }
    Ok(u)
}

/// `g^n`: forward differences of the boundary data in the end entries and the
/// logistic term `A(x_i) u_i (1 - u_i)` inside.
pub fn reaction_vector(
    u: &DVector<f64>,
    reaction: &[f64],
    bnd: &BoundaryProcess,
    mesh: &TimeMesh,
    n: usize,
    sample: &Sample,
) -> DVector<f64> {
    let last = u.len() - 1;
    let k = mesh.k();
    let (t0, t1) = (mesh.level(n), mesh.level(n + 1));
    DVector::from_fn(u.len(), |i, _| {
        if i == 0 {
            (bnd.left_at(t1, sample) - bnd.left_at(t0, sample)) / k
        } else if i == last {
            (bnd.right_at(t1, sample) - bnd.right_at(t0, sample)) / k
        } else {
            reaction[i] * u[i] * (1.0 - u[i])
        }
    })
}

/// `exp(M k) u + k Lambda g`.
pub fn etd_step(u: &DVector<f64>, p: &PropagatorPair, g: &DVector<f64>, k: f64) -> DVector<f64> {
    let mut next = &p.full * u;
    next.gemv(k, &p.lambda, g, 1.0);
    next
}

/// Values `u[i][n]` on the `(N + 1) x (N_T + 1)` space-time grid, stored
/// level by level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Surface {
    n_nodes: usize,
    n_levels: usize,
    data: Vec<f64>,
}

impl Surface {
    pub fn zeros(n_nodes: usize, n_levels: usize) -> Self {
        Surface {
            n_nodes,
            n_levels,
            data: vec![0.0; n_nodes * n_levels],
        }
    }

    pub fn from_fn(n_nodes: usize, n_levels: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n_nodes * n_levels);
        for n in 0..n_levels {
            for i in 0..n_nodes {
                data.push(f(i, n));
            }
        }
        Surface {
            n_nodes,
            n_levels,
            data,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn get(&self, i: usize, n: usize) -> f64 {
        self.data[n * self.n_nodes + i]
    }

    pub fn set(&mut self, i: usize, n: usize, v: f64) {
        self.data[n * self.n_nodes + i] = v;
    }

    pub fn level(&self, n: usize) -> &[f64] {
        &self.data[n * self.n_nodes..(n + 1) * self.n_nodes]
    }

    pub fn last_level(&self) -> &[f64] {
        self.level(self.n_levels - 1)
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// One realization of the numerical solution.
#[derive(Debug, Clone, Serialize)]
pub struct SampleTrajectory {
    pub sample_id: u64,
    pub sample: Sample,
    pub values: Surface,
    /// False when solved with stepsizes outside the admissible region.
    pub guarded: bool,
    /// Entries found outside `[0, 1]` (only possible when unguarded).
    pub violations: usize,
}

/// Solves one realization with the amplitudes in `sample`.
///
/// With `guarded` set, an entry leaving `[0, 1]` is an error: the stepsizes
/// were admissible, so the scheme must stay monotone. Unguarded solves count
/// violations instead.
pub fn solve_with_sample(
    model: &Model,
    grid: &Grid1D,
    mesh: &TimeMesh,
    sample: Sample,
    sample_id: u64,
    guarded: bool,
) -> Result<SampleTrajectory> {
    let coherence = check_coherence(&model.initial, &model.boundary, grid.length(), &[sample]);
    if !coherence.passed {
        return Err(Error::Incoherent(format!(
            "|Phi_0(0) - Phi_1(0)| = {:e}, |Phi_0(l) - Phi_2(0)| = {:e}",
            coherence.max_left, coherence.max_right
        )));
    }
    let m = build_system_matrix(
        grid,
        |x| model.diffusion_at(x, &sample),
        |x| model.advection_at(x, &sample),
    )?;
    let k = mesh.k();
    let props = build_propagators(&m, k)?;
    let reaction: Vec<f64> = grid.nodes().map(|x| model.reaction_at(x, &sample)).collect();

    let dim = grid.dim();
    let last = grid.n();
    let mut values = Surface::zeros(dim, mesh.n_steps() + 1);
    let mut u = discretize_initial(model, grid, &sample)?;
    for i in 0..dim {
        values.set(i, 0, u[i]);
    }
    let mut violations = 0;
    for n in 0..mesh.n_steps() {
        let g = reaction_vector(&u, &reaction, &model.boundary, mesh, n, &sample);
        u = etd_step(&u, &props, &g, k);
        let t = mesh.level(n + 1);
        for (node, expected) in [
            (0, model.boundary.left_at(t, &sample)),
            (last, model.boundary.right_at(t, &sample)),
        ] {
            if (u[node] - expected).abs() > BOUNDARY_TOL {
                return Err(Error::BoundaryMismatch {
                    node,
                    level: n + 1,
                    value: u[node],
                    expected,
                });
            }
        }
        for i in 0..dim {
            let v = u[i];
            if !(-POSITIVITY_TOL..=1.0 + POSITIVITY_TOL).contains(&v) {
                if guarded {
                    return Err(Error::PositivityViolation {
                        node: i,
                        level: n + 1,
                        value: v,
                    });
                }
                violations += 1;
            }
            values.set(i, n + 1, v);
        }
    }
    Ok(SampleTrajectory {
        sample_id,
        sample,
        values,
        guarded,
        violations,
    })
}

/// Solves realization `sample_id` of the ensemble described by `config`.
///
/// The amplitudes come from the configured sampler: a per-sample random stream
/// for Monte Carlo, the tensor quadrature node for collocation.
pub fn solve_sample(model: &Model, config: &SchemeConfig, sample_id: u64) -> Result<SampleTrajectory> {
    let report = config.gate(model)?;
    if !report.admissible && !config.allow_inadmissible {
        return Err(Error::Inadmissible(report.notes.join("; ")));
    }
    let (sample, _) = config.sample_for(model, sample_id)?;
    solve_with_sample(
        model,
        &config.grid,
        &config.mesh,
        sample,
        sample_id,
        report.admissible,
    )
}
