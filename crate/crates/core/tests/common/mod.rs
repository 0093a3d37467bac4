//! Oracles and generators shared by the integration tests. Nothing here calls
//! into the solver's own exponential or stencil code.
#![allow(dead_code)]

use fkpp_etd::etdsolver::{stepsize_gate, TimeMesh};
use fkpp_etd::randmodel::{
    BoundaryProcess, CoefficientProcess, InitialProcess, Model, RandomVariableSpec, Sample, Shape,
};
use fkpp_etd::specmat::{inf_norm, Grid1D};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// `exp(a t)` by Taylor series on `a t / 2^s` with `||a t / 2^s|| <= 1/2`,
/// summed until terms stop contributing, then squared `s` times.
pub fn series_exp(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let at = a * t;
    let norm = inf_norm(&at);
    let mut s = 0;
    while norm / 2f64.powi(s) > 0.5 {
        s += 1;
    }
    let x = at / 2f64.powi(s);
    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for j in 1..60 {
        term = &term * &x / j as f64;
        sum += &term;
        if inf_norm(&term) <= 1e-20 * inf_norm(&sum) {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

pub fn rel_inf_err(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    inf_norm(&(a - reference)) / inf_norm(reference).max(f64::MIN_POSITIVE)
}

/// Right-hand side of the semidiscrete system on interior nodes, with the
/// end values overwritten by the boundary data at time `t`.
fn rhs(model: &Model, grid: &Grid1D, s: &Sample, t: f64, u: &DVector<f64>) -> DVector<f64> {
    let n = grid.n();
    let h = grid.h();
    let mut v = u.clone();
    v[0] = model.boundary.left_at(t, s);
    v[n] = model.boundary.right_at(t, s);
    DVector::from_fn(n + 1, |i, _| {
        if i == 0 || i == n {
            return 0.0;
        }
        let x = grid.node(i);
        let d = model.diffusion_at(x, s);
        let b = model.advection_at(x, s);
        let a = model.reaction_at(x, s);
        d * (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h)
            + b * (v[i + 1] - v[i - 1]) / (2.0 * h)
            + a * v[i] * (1.0 - v[i])
    })
}

/// Classical RK4 for the semidiscrete system from `(t0, u0)` to `t1` in
/// `steps` steps; boundary entries are set from the data, not integrated.
pub fn rk4_reference(
    model: &Model,
    grid: &Grid1D,
    s: &Sample,
    u0: &DVector<f64>,
    t0: f64,
    t1: f64,
    steps: usize,
) -> DVector<f64> {
    let dt = (t1 - t0) / steps as f64;
    let mut u = u0.clone();
    for j in 0..steps {
        let t = t0 + j as f64 * dt;
        let k1 = rhs(model, grid, s, t, &u);
        let k2 = rhs(model, grid, s, t + dt / 2.0, &(&u + &k1 * (dt / 2.0)));
        let k3 = rhs(model, grid, s, t + dt / 2.0, &(&u + &k2 * (dt / 2.0)));
        let k4 = rhs(model, grid, s, t + dt, &(&u + &k3 * dt));
        u += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    let n = grid.n();
    u[0] = model.boundary.left_at(t1, s);
    u[n] = model.boundary.right_at(t1, s);
    u
}

fn tn<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> RandomVariableSpec {
    let mu = rng.gen_range(lo..=hi);
    let sigma = rng.gen_range(0.05..1.0) * (hi - lo);
    RandomVariableSpec::truncated_normal(mu, sigma, lo, hi).unwrap()
}

fn maybe_random<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> RandomVariableSpec {
    if rng.gen_bool(0.3) {
        RandomVariableSpec::deterministic(rng.gen_range(lo..=hi))
    } else {
        tn(rng, lo, hi)
    }
}

/// Boundary data relaxing from the initial trace towards `target`.
fn relax(initial: &InitialProcess, end: f64, target: f64, rate: f64) -> impl Fn(f64, &Sample) -> f64 {
    let init = initial.clone();
    move |t, s| target + (init.at(end, s) - target) * (-rate * t).exp()
}

/// A random model whose coefficients satisfy the hypotheses, with data in
/// [0, 1] and coherent corners.
pub fn random_model<R: Rng>(rng: &mut R) -> Model {
    let length = if rng.gen_bool(0.5) { 1.0 } else { rng.gen_range(0.5..3.0) };
    let diffusion_shape = match rng.gen_range(0..3) {
        0 => Shape::constant(rng.gen_range(0.2..2.0)),
        1 => Shape::OnePlusXSquared,
        _ => Shape::Linear {
            intercept: rng.gen_range(0.5..1.5),
            slope: rng.gen_range(0.0..1.0),
        },
    };
    let advection_shape = match rng.gen_range(0..4) {
        0 => Shape::constant(1.0),
        1 => Shape::IdentityX,
        2 => Shape::SinPiX,
        _ => Shape::Linear {
            intercept: rng.gen_range(-1.0..1.0),
            slope: rng.gen_range(-1.0..1.0),
        },
    };
    let reaction_shape = match rng.gen_range(0..3) {
        0 => Shape::constant(1.0),
        1 => Shape::SinPiX,
        _ => Shape::OnePlusXSquared,
    };
    let initial_shape = if rng.gen_bool(0.5) {
        Shape::SinPiX
    } else {
        Shape::constant(rng.gen_range(0.0..=1.0))
    };
    let initial = InitialProcess::separable(initial_shape, length);
    let boundary = BoundaryProcess::new(
        relax(&initial, 0.0, rng.gen_range(0.0..=1.0), rng.gen_range(0.0..50.0)),
        relax(&initial, length, rng.gen_range(0.0..=1.0), rng.gen_range(0.0..50.0)),
    );
    let adv_hi = rng.gen_range(0.01..5.0);
    Model {
        name: "random".into(),
        length,
        diffusion: CoefficientProcess::new(diffusion_shape, maybe_random(rng, 0.1, 2.0)),
        advection: CoefficientProcess::new(advection_shape, maybe_random(rng, -adv_hi, adv_hi)),
        reaction: CoefficientProcess::new(reaction_shape, maybe_random(rng, 0.0, 5.0)),
        initial_amplitude: maybe_random(rng, 0.0, 1.0),
        initial,
        boundary,
        reference_bounds: None,
    }
}

/// A random admissible `(model, grid, mesh)`: the grid is refined until the
/// spatial condition holds and `k` is a random fraction of `k_max`. Models
/// needing more than 120 intervals are redrawn.
pub fn random_admissible<R: Rng>(rng: &mut R) -> (Model, Grid1D, TimeMesh) {
    loop {
        let model = random_model(rng);
        let n0 = rng.gen_range(4..24);
        let grid = Grid1D::new(model.length, n0).unwrap();
        let h_max = stepsize_gate(&model.bounds(&grid).unwrap(), grid.h(), 1e-300)
            .unwrap()
            .h_max;
        let n = n0.max((model.length / h_max).ceil() as usize + 1);
        if n > 120 {
            continue;
        }
        let grid = Grid1D::new(model.length, n).unwrap();
        let bounds = model.bounds(&grid).unwrap();
        let report = stepsize_gate(&bounds, grid.h(), 1e-300).unwrap();
        if grid.h() > report.h_max {
            continue;
        }
        let n_steps = rng.gen_range(1..16);
        let k = rng.gen_range(0.05..0.99) * report.k_max;
        let mesh = TimeMesh::new(k * n_steps as f64, n_steps).unwrap();
        assert!(stepsize_gate(&bounds, grid.h(), mesh.k()).unwrap().admissible);
        return (model, grid, mesh);
    }
}
