//! Ensemble driver: many sample trajectories reduced to pointwise mean,
//! second moment and standard deviation.
//!
//! Two samplers are available. Monte Carlo draws every realization from its
//! own random stream derived from `(seed, sample_id)`. Collocation places the
//! random amplitudes at Gauss-Legendre nodes of their truncated supports and
//! weights each trajectory by the quadrature weight times the density.
//!
//! Moment sums are accumulated with [`ExactSum`], so the statistics do not
//! depend on how samples are split between threads or in which order partial
//! results are merged.

use std::ops::Range;

use gauss_quad::legendre::GaussLegendre;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etdsolver::{solve_with_sample, stepsize_gate, SampleTrajectory, StepSizeReport, Surface, TimeMesh};
use crate::randmodel::{Model, Role, Sample};
use crate::specmat::Grid1D;
use crate::sum::{two_product, ExactSum};

/// Default collocation nodes per random amplitude.
pub const DEFAULT_COLLOCATION_NODES: usize = 64;
/// Monte Carlo fallback when the collocation tensor grid would be too large.
pub const DEFAULT_MC_SAMPLES: u64 = 10_000;

/// How realizations of the random amplitudes are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Sampler {
    MonteCarlo { n_samples: u64, seed: u64 },
    Collocation { n_nodes: usize },
}

impl Sampler {
    /// Collocation when at most two amplitudes are random, Monte Carlo
    /// otherwise.
    pub fn default_for(model: &Model) -> Self {
        if model.random_roles().len() <= 2 {
            Sampler::Collocation {
                n_nodes: DEFAULT_COLLOCATION_NODES,
            }
        } else {
            Sampler::MonteCarlo {
                n_samples: DEFAULT_MC_SAMPLES,
                seed: 0,
            }
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            Sampler::MonteCarlo { n_samples, seed } => {
                format!("monte_carlo(n_samples={n_samples}, seed={seed})")
            }
            Sampler::Collocation { n_nodes } => format!("collocation(n_nodes={n_nodes})"),
        }
    }
}

/// Random stream of realization `sample_id` under master seed `seed`.
pub fn sample_rng(seed: u64, sample_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample_id);
    rng
}

/// Grid, time mesh and sampling budget of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub grid: Grid1D,
    pub mesh: TimeMesh,
    pub sampler: Sampler,
    /// Solve even when the stepsize gate fails; trajectories are then
    /// marked unguarded.
    pub allow_inadmissible: bool,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl SchemeConfig {
    pub fn new(grid: Grid1D, mesh: TimeMesh, sampler: Sampler) -> Self {
        SchemeConfig {
            grid,
            mesh,
            sampler,
            allow_inadmissible: false,
            threads: None,
        }
    }

    /// Stepsize report for `model` on this grid and mesh, with bound notes.
    pub fn gate(&self, model: &Model) -> Result<StepSizeReport> {
        let bounds = model.bounds(&self.grid)?;
        let mut report = stepsize_gate(&bounds, self.grid.h(), self.mesh.k())?;
        report.notes.extend(model.bound_notes(&bounds));
        Ok(report)
    }

    /// Amplitudes and quadrature weight of realization `sample_id`.
    pub fn sample_for(&self, model: &Model, sample_id: u64) -> Result<(Sample, f64)> {
        match self.sampler {
            Sampler::MonteCarlo { n_samples, seed } => {
                if sample_id >= n_samples {
                    return Err(Error::Config(format!(
                        "sample id {sample_id} out of range 0..{n_samples}"
                    )));
                }
                let mut rng = sample_rng(seed, sample_id);
                Ok((model.draw_sample(&mut rng)?, 1.0))
            }
            Sampler::Collocation { n_nodes } => {
                CollocationPlan::new(model, n_nodes)?.sample(sample_id)
            }
        }
    }
}

/// Tensor Gauss-Legendre grid over the random amplitudes.
#[derive(Debug, Clone)]
pub struct CollocationPlan {
    base: Sample,
    roles: Vec<Role>,
    /// Per role: `(amplitude, weight * density)` pairs.
    nodes: Vec<Vec<(f64, f64)>>,
}

impl CollocationPlan {
    pub fn new(model: &Model, n_nodes: usize) -> Result<Self> {
        if n_nodes < 2 {
            return Err(Error::Config(format!(
                "collocation needs at least 2 nodes, got {n_nodes}"
            )));
        }
        let rule = GaussLegendre::new(n_nodes)
            .map_err(|e| Error::Config(format!("Gauss-Legendre rule: {e}")))?;
        let roles = model.random_roles();
        let nodes = roles
            .iter()
            .map(|&role| {
                let law = model.law(role);
                let (lo, hi) = law.support();
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                rule.as_node_weight_pairs()
                    .iter()
                    .map(|&(z, w)| {
                        let a = mid + half * z;
                        (a, w * half * law.pdf(a))
                    })
                    .collect()
            })
            .collect();
        Ok(CollocationPlan {
            base: model.nominal_sample(),
            roles,
            nodes,
        })
    }

    pub fn len(&self) -> u64 {
        self.nodes.iter().map(|n| n.len() as u64).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, id: u64) -> Result<(Sample, f64)> {
        if id >= self.len() {
            return Err(Error::Config(format!(
                "collocation node {id} out of range 0..{}",
                self.len()
            )));
        }
        let mut s = self.base;
        let mut weight = 1.0;
        let mut rest = id;
        // Last role varies fastest.
        for (role, nodes) in self.roles.iter().zip(&self.nodes).rev() {
            let len = nodes.len() as u64;
            let (a, w) = nodes[(rest % len) as usize];
            rest /= len;
            s.set(*role, a);
            weight *= w;
        }
        Ok((s, weight))
    }
}

/// Identity of the run a partial belongs to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsKey {
    pub n_nodes: usize,
    pub n_levels: usize,
    pub h: f64,
    pub k: f64,
    pub sampler: Sampler,
}

impl StatsKey {
    pub fn of(config: &SchemeConfig) -> Self {
        StatsKey {
            n_nodes: config.grid.dim(),
            n_levels: config.mesh.n_steps() + 1,
            h: config.grid.h(),
            k: config.mesh.k(),
            sampler: config.sampler,
        }
    }
}

/// Unnormalized moment sums over a set of sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsPartial {
    key: StatsKey,
    /// Sorted, disjoint, non-adjacent half-open id ranges.
    ids: Vec<Range<u64>>,
    count: u64,
    weight: ExactSum,
    first: Vec<ExactSum>,
    second: Vec<ExactSum>,
}

fn insert_range(ids: &mut Vec<Range<u64>>, r: Range<u64>) -> bool {
    if ids.iter().any(|e| r.start < e.end && e.start < r.end) {
        return false;
    }
    ids.push(r);
    ids.sort_by_key(|r| r.start);
    let mut merged: Vec<Range<u64>> = Vec::with_capacity(ids.len());
    for r in ids.drain(..) {
        match merged.last_mut() {
            Some(last) if last.end == r.start => last.end = r.end,
            _ => merged.push(r),
        }
    }
    *ids = merged;
    true
}

impl StatsPartial {
    pub fn empty(key: StatsKey) -> Self {
        let cells = key.n_nodes * key.n_levels;
        StatsPartial {
            key,
            ids: Vec::new(),
            count: 0,
            weight: ExactSum::new(),
            first: vec![ExactSum::new(); cells],
            second: vec![ExactSum::new(); cells],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn ids(&self) -> &[Range<u64>] {
        &self.ids
    }

    /// Adds one weighted trajectory.
    pub fn push(&mut self, traj: &SampleTrajectory, weight: f64) -> Result<()> {
        let v = &traj.values;
        if v.n_nodes() != self.key.n_nodes || v.n_levels() != self.key.n_levels {
            return Err(Error::MergeMismatch(format!(
                "trajectory {} has shape {}x{}, expected {}x{}",
                traj.sample_id,
                v.n_nodes(),
                v.n_levels(),
                self.key.n_nodes,
                self.key.n_levels
            )));
        }
        if !insert_range(&mut self.ids, traj.sample_id..traj.sample_id + 1) {
            return Err(Error::MergeMismatch(format!(
                "sample {} already accumulated",
                traj.sample_id
            )));
        }
        self.count += 1;
        self.weight.add(weight);
        for (cell, &u) in v.values().iter().enumerate() {
            self.first[cell].add_product(weight, u);
            let (sq, sq_err) = two_product(u, u);
            self.second[cell].add_product(weight, sq);
            self.second[cell].add_product(weight, sq_err);
        }
        Ok(())
    }

    /// Mean, second moment and standard deviation of the accumulated samples.
    ///
    /// The variance is formed as `sum w (u - m)^2 = S2 - 2 m S1 + m^2 W`
    /// evaluated exactly, so it keeps full relative accuracy when the spread
    /// is tiny compared with the mean.
    pub fn finalize(&self) -> Result<EnsembleStats> {
        if self.count == 0 {
            return Err(Error::MergeMismatch("no samples accumulated".into()));
        }
        let total = self.weight.value();
        let (n_nodes, n_levels) = (self.key.n_nodes, self.key.n_levels);
        let monte_carlo = matches!(self.key.sampler, Sampler::MonteCarlo { .. });
        let mut mean = Surface::zeros(n_nodes, n_levels);
        let mut second_moment = Surface::zeros(n_nodes, n_levels);
        let mut std = Surface::zeros(n_nodes, n_levels);
        let mut std_err = Surface::zeros(n_nodes, n_levels);
        for n in 0..n_levels {
            for i in 0..n_nodes {
                let cell = n * n_nodes + i;
                let s1 = &self.first[cell];
                let s2 = &self.second[cell];
                // Mean with one exact residual correction.
                let mut m = s1.value() / total;
                let mut residual = s1.clone();
                residual.add_scaled(&self.weight, -m);
                m += residual.value() / total;

                let mut central = s2.clone();
                central.add_scaled(s1, -2.0 * m);
                let (m2, m2_err) = two_product(m, m);
                central.add_scaled(&self.weight, m2);
                central.add_scaled(&self.weight, m2_err);
                let var = (central.value() / total).max(0.0);

                mean.set(i, n, m);
                second_moment.set(i, n, s2.value() / total);
                std.set(i, n, var.sqrt());
                if monte_carlo && self.count > 1 {
                    let c = self.count as f64;
                    std_err.set(i, n, (central.value().max(0.0) / (c - 1.0) / c).sqrt());
                }
            }
        }
        Ok(EnsembleStats {
            mean,
            second_moment,
            std,
            mc_standard_error: monte_carlo.then_some(std_err),
            count: self.count,
            sampler: self.key.sampler,
        })
    }
}

/// Combines partials over disjoint sample ids of the same run.
pub fn merge_stats(a: &StatsPartial, b: &StatsPartial) -> Result<StatsPartial> {
    if a.key != b.key {
        return Err(Error::MergeMismatch(format!(
            "configuration differs: {:?} vs {:?}",
            a.key, b.key
        )));
    }
    let mut out = a.clone();
    for r in &b.ids {
        if !insert_range(&mut out.ids, r.clone()) {
            return Err(Error::MergeMismatch(format!(
                "sample ids {}..{} overlap",
                r.start, r.end
            )));
        }
    }
    out.count += b.count;
    out.weight.merge(&b.weight);
    for (x, y) in out.first.iter_mut().zip(&b.first) {
        x.merge(y);
    }
    for (x, y) in out.second.iter_mut().zip(&b.second) {
        x.merge(y);
    }
    Ok(out)
}

/// Pointwise ensemble statistics on the space-time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub mean: Surface,
    pub second_moment: Surface,
    pub std: Surface,
    /// Standard error of the Monte Carlo mean, `s / sqrt(n)`.
    pub mc_standard_error: Option<Surface>,
    pub count: u64,
    pub sampler: Sampler,
}

/// Number of realizations the sampler asks for.
pub fn sample_count(model: &Model, config: &SchemeConfig) -> Result<u64> {
    match config.sampler {
        Sampler::MonteCarlo { n_samples, .. } => {
            if n_samples == 0 {
                return Err(Error::Config("need at least one Monte Carlo sample".into()));
            }
            Ok(n_samples)
        }
        Sampler::Collocation { n_nodes } => Ok(CollocationPlan::new(model, n_nodes)?.len()),
    }
}

/// Accumulates realizations `ids` into a partial. Stops at the first failing
/// sample.
pub fn accumulate(model: &Model, config: &SchemeConfig, ids: Range<u64>) -> Result<StatsPartial> {
    let report = config.gate(model)?;
    if !report.admissible && !config.allow_inadmissible {
        return Err(Error::Inadmissible(report.notes.join("; ")));
    }
    let plan = match config.sampler {
        Sampler::Collocation { n_nodes } => Some(CollocationPlan::new(model, n_nodes)?),
        Sampler::MonteCarlo { .. } => None,
    };
    accumulate_range(model, config, plan.as_ref(), report.admissible, ids)
}

fn accumulate_range(
    model: &Model,
    config: &SchemeConfig,
    plan: Option<&CollocationPlan>,
    guarded: bool,
    ids: Range<u64>,
) -> Result<StatsPartial> {
    let mut partial = StatsPartial::empty(StatsKey::of(config));
    for id in ids {
        let fail = |e: Error| Error::SampleFailed {
            sample_id: id,
            source: Box::new(e),
        };
        let (sample, weight) = match plan {
            Some(plan) => plan.sample(id),
            None => config.sample_for(model, id),
        }
        .map_err(fail)?;
        let traj = solve_with_sample(model, &config.grid, &config.mesh, sample, id, guarded).map_err(fail)?;
        partial.push(&traj, weight)?;
    }
    Ok(partial)
}

/// Runs every realization and reduces them in ascending id order.
pub fn run_ensemble(model: &Model, config: &SchemeConfig) -> Result<EnsembleStats> {
    model.validate()?;
    let report = config.gate(model)?;
    if !report.admissible && !config.allow_inadmissible {
        return Err(Error::Inadmissible(report.notes.join("; ")));
    }
    let total = sample_count(model, config)?;
    let plan = match config.sampler {
        Sampler::Collocation { n_nodes } => Some(CollocationPlan::new(model, n_nodes)?),
        Sampler::MonteCarlo { .. } => None,
    };
    let workers = config
        .threads
        .unwrap_or_else(rayon::current_num_threads)
        .max(1) as u64;
    let chunk = total.div_ceil(workers * 4).max(1);
    let chunks: Vec<Range<u64>> = (0..total.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(total))
        .collect();

    let guarded = report.admissible;
    let work = || -> Vec<Result<StatsPartial>> {
        chunks
            .par_iter()
            .map(|r| accumulate_range(model, config, plan.as_ref(), guarded, r.clone()))
            .collect()
    };
    let partials = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };

    let mut acc = StatsPartial::empty(StatsKey::of(config));
    for p in partials {
        acc = merge_stats(&acc, &p?)?;
    }
    acc.finalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randmodel::{
        BoundaryProcess, CoefficientProcess, InitialProcess, RandomVariableSpec, Shape,
    };

    fn model(reaction: RandomVariableSpec) -> Model {
        Model {
            name: "bump".into(),
            length: 1.0,
            diffusion: CoefficientProcess::new(Shape::constant(1.0), RandomVariableSpec::deterministic(0.5)),
            advection: CoefficientProcess::new(Shape::IdentityX, RandomVariableSpec::deterministic(1.0)),
            reaction: CoefficientProcess::new(Shape::constant(1.0), reaction),
            initial_amplitude: RandomVariableSpec::deterministic(0.8),
            initial: InitialProcess::separable(Shape::SinPiX, 1.0),
            boundary: BoundaryProcess::constant(0.0, 0.0),
            reference_bounds: None,
        }
    }

    fn config(sampler: Sampler) -> SchemeConfig {
        SchemeConfig::new(
            Grid1D::new(1.0, 8).unwrap(),
            TimeMesh::new(0.02, 4).unwrap(),
            sampler,
        )
    }

    #[test]
    fn deterministic_ensemble_has_zero_spread() {
        let m = model(RandomVariableSpec::deterministic(0.9));
        let single = solve_with_sample(
            &m,
            &Grid1D::new(1.0, 8).unwrap(),
            &TimeMesh::new(0.02, 4).unwrap(),
            m.nominal_sample(),
            0,
            true,
        )
        .unwrap();
        for sampler in [
            Sampler::MonteCarlo { n_samples: 7, seed: 3 },
            Sampler::Collocation { n_nodes: 16 },
        ] {
            let stats = run_ensemble(&m, &config(sampler)).unwrap();
            assert!(stats.std.values().iter().all(|&s| s == 0.0));
            assert_eq!(stats.mean.values(), single.values.values());
        }
    }

    #[test]
    fn collocation_weights_integrate_density() {
        let law = RandomVariableSpec::truncated_normal(0.75, 0.08, 0.01, 1.0).unwrap();
        let plan = CollocationPlan::new(&model(law), 32).unwrap();
        assert_eq!(plan.len(), 32);
        let total: f64 = (0..32).map(|i| plan.sample(i).unwrap().1).sum();
        assert!((total - 1.0).abs() < 1e-13);
        assert!(plan.sample(32).is_err());
        assert!(CollocationPlan::new(&model(law), 1).is_err());
    }

    #[test]
    fn merge_identity_and_overlap() {
        let law = RandomVariableSpec::truncated_normal(0.75, 0.08, 0.01, 1.0).unwrap();
        let m = model(law);
        let cfg = config(Sampler::MonteCarlo { n_samples: 100, seed: 11 });
        let all = accumulate(&m, &cfg, 0..100).unwrap();
        let empty = StatsPartial::empty(StatsKey::of(&cfg));
        assert_eq!(merge_stats(&all, &empty).unwrap(), all);

        let a = accumulate(&m, &cfg, 0..50).unwrap();
        let b = accumulate(&m, &cfg, 50..100).unwrap();
        let merged = merge_stats(&a, &b).unwrap();
        assert_eq!(merged.ids(), std::slice::from_ref(&(0..100)));
        assert_eq!(merged.finalize().unwrap(), all.finalize().unwrap());
        let reversed = merge_stats(&b, &a).unwrap();
        assert_eq!(reversed.finalize().unwrap(), all.finalize().unwrap());

        let overlap = accumulate(&m, &cfg, 40..60).unwrap();
        assert!(matches!(merge_stats(&a, &overlap), Err(Error::MergeMismatch(_))));

        let other = config(Sampler::MonteCarlo { n_samples: 100, seed: 12 });
        let c = accumulate(&m, &other, 50..100).unwrap();
        assert!(matches!(merge_stats(&a, &c), Err(Error::MergeMismatch(_))));
    }

    #[test]
    fn parallelism_does_not_change_results() {
        let law = RandomVariableSpec::truncated_normal(0.75, 0.3, 0.01, 1.5).unwrap();
        let m = model(law);
        let mut cfg = config(Sampler::MonteCarlo { n_samples: 64, seed: 5 });
        cfg.threads = Some(1);
        let serial = run_ensemble(&m, &cfg).unwrap();
        cfg.threads = Some(5);
        let parallel = run_ensemble(&m, &cfg).unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn moments_are_consistent() {
        let law = RandomVariableSpec::truncated_normal(0.75, 0.3, 0.01, 1.5).unwrap();
        let stats = run_ensemble(&model(law), &config(Sampler::Collocation { n_nodes: 24 })).unwrap();
        for ((&m, &s2), &sd) in stats
            .mean
            .values()
            .iter()
            .zip(stats.second_moment.values())
            .zip(stats.std.values())
        {
            assert!(s2 >= m * m - 1e-14);
            assert!((0.0..=1.0).contains(&m));
            assert!((sd * sd - (s2 - m * m)).abs() < 1e-12);
        }
        assert!(stats.mc_standard_error.is_none());
    }

    #[test]
    fn failing_sample_is_reported() {
        let mut m = model(RandomVariableSpec::deterministic(1.0));
        m.boundary = BoundaryProcess::constant(0.3, 0.0);
        let err = run_ensemble(&m, &config(Sampler::MonteCarlo { n_samples: 4, seed: 0 })).unwrap_err();
        assert!(matches!(err, Error::SampleFailed { sample_id: 0, .. }));
    }
}
