//! Random coefficient, initial and boundary processes.
//!
//! Every coefficient has one degree of randomness: a deterministic spatial
//! shape multiplied by a single random amplitude. The four amplitudes
//! (diffusion, advection, reaction, initial profile) are drawn independently.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};
use crate::specmat::Grid1D;

/// Retry budget of the inverse-CDF sampler before switching to rejection.
const INVERSE_CDF_ATTEMPTS: usize = 64;
/// Retry budget of the rejection fallback.
const REJECTION_ATTEMPTS: usize = 100_000;

/// Default tolerance of [`check_coherence`].
pub const COHERENCE_TOL: f64 = 1e-12;

/// Law of a scalar random amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum RandomVariableSpec {
    Deterministic { value: f64 },
    TruncatedNormal { mu: f64, sigma: f64, lo: f64, hi: f64 },
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

impl RandomVariableSpec {
    pub fn deterministic(value: f64) -> Self {
        RandomVariableSpec::Deterministic { value }
    }

    pub fn truncated_normal(mu: f64, sigma: f64, lo: f64, hi: f64) -> Result<Self> {
        let spec = RandomVariableSpec::TruncatedNormal { mu, sigma, lo, hi };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RandomVariableSpec::Deterministic { value } => {
                if !value.is_finite() {
                    return Err(Error::InvalidDistribution(format!(
                        "deterministic value {value} is not finite"
                    )));
                }
            }
            RandomVariableSpec::TruncatedNormal { mu, sigma, lo, hi } => {
                if !(mu.is_finite() && sigma.is_finite() && lo.is_finite() && hi.is_finite()) {
                    return Err(Error::InvalidDistribution(
                        "truncated normal parameters must be finite".into(),
                    ));
                }
                if sigma <= 0.0 {
                    return Err(Error::InvalidDistribution(format!(
                        "sigma must be positive, got {sigma}"
                    )));
                }
                if lo >= hi {
                    return Err(Error::InvalidDistribution(format!(
                        "empty truncation interval [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_random(&self) -> bool {
        matches!(self, RandomVariableSpec::TruncatedNormal { .. })
    }

    /// Closed support of the law.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            RandomVariableSpec::Deterministic { value } => (value, value),
            RandomVariableSpec::TruncatedNormal { lo, hi, .. } => (lo, hi),
        }
    }

    fn standardized(&self) -> Option<(f64, f64, f64, f64)> {
        match *self {
            RandomVariableSpec::TruncatedNormal { mu, sigma, lo, hi } => {
                Some((mu, sigma, (lo - mu) / sigma, (hi - mu) / sigma))
            }
            RandomVariableSpec::Deterministic { .. } => None,
        }
    }

    /// Probability mass of the untruncated normal inside the truncation
    /// interval, computed on the tail that keeps it accurate.
    fn truncated_mass(alpha: f64, beta: f64) -> f64 {
        if alpha >= 0.0 {
            std_normal_sf(alpha) - std_normal_sf(beta)
        } else {
            std_normal_cdf(beta) - std_normal_cdf(alpha)
        }
    }

    /// Density of the law. Panics for a deterministic law, which has none.
    pub fn pdf(&self, x: f64) -> f64 {
        let (mu, sigma, alpha, beta) = self
            .standardized()
            .expect("a deterministic law has no density");
        let (lo, hi) = self.support();
        if x < lo || x > hi {
            return 0.0;
        }
        let z = (x - mu) / sigma;
        std_normal_pdf(z) / (sigma * Self::truncated_mass(alpha, beta))
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            RandomVariableSpec::Deterministic { value } => {
                if x < value {
                    0.0
                } else {
                    1.0
                }
            }
            RandomVariableSpec::TruncatedNormal { mu, sigma, lo, hi } => {
                if x <= lo {
                    return 0.0;
                }
                if x >= hi {
                    return 1.0;
                }
                let alpha = (lo - mu) / sigma;
                let beta = (hi - mu) / sigma;
                let z = (x - mu) / sigma;
                let mass = Self::truncated_mass(alpha, beta);
                if alpha >= 0.0 {
                    (std_normal_sf(alpha) - std_normal_sf(z)) / mass
                } else {
                    (std_normal_cdf(z) - std_normal_cdf(alpha)) / mass
                }
            }
        }
    }

    /// Draws one amplitude.
    ///
    /// Truncated normals use the inverse-CDF transform of a uniform restricted
    /// to the truncated probability range, evaluated on whichever tail keeps
    /// the range representable. When the range underflows or roundoff keeps
    /// landing on an endpoint, an exponential-proposal rejection sampler takes
    /// over; it gives up after a bounded number of attempts.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let (mu, sigma, alpha, beta) = match self.standardized() {
            Some(p) => p,
            None => return Ok(self.support().0),
        };
        let (lo, hi) = self.support();
        let inside = |x: f64| x > lo && x < hi;

        // Upper tail: work with survival probabilities. Lower tail and the
        // straddling case: work with the CDF (mirrored for the lower tail).
        let (p_lo, p_hi, upper) = if alpha >= 0.0 {
            (std_normal_sf(beta), std_normal_sf(alpha), true)
        } else {
            (std_normal_cdf(alpha), std_normal_cdf(beta), false)
        };
        if p_hi > p_lo && p_hi - p_lo > f64::MIN_POSITIVE {
            for _ in 0..INVERSE_CDF_ATTEMPTS {
                let r: f64 = rng.gen();
                let p = p_lo + (p_hi - p_lo) * r;
                if p <= 0.0 {
                    continue;
                }
                let z = if upper {
                    SQRT_2 * erfc_inv(2.0 * p)
                } else {
                    -SQRT_2 * erfc_inv(2.0 * p)
                };
                let x = mu + sigma * z;
                if inside(x) {
                    return Ok(x);
                }
            }
        }

        // Rejection on the standardized interval. Far tails use the
        // translated-exponential proposal; otherwise plain normal proposals.
        let (a, b, mirrored) = if alpha >= 0.0 {
            (alpha, beta, false)
        } else if beta <= 0.0 {
            (-beta, -alpha, true)
        } else {
            (alpha, beta, false)
        };
        for _ in 0..REJECTION_ATTEMPTS {
            let z = if a > 0.0 {
                let rate = 0.5 * (a + (a * a + 4.0).sqrt());
                let e = -(1.0 - rng.gen::<f64>()).ln() / rate;
                let z = a + e;
                let accept = (-0.5 * (z - rate) * (z - rate)).exp();
                if rng.gen::<f64>() > accept {
                    continue;
                }
                z
            } else {
                // Box-Muller, one branch.
                let u1: f64 = 1.0 - rng.gen::<f64>();
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
            };
            if z <= a || z >= b {
                continue;
            }
            let z = if mirrored { -z } else { z };
            let x = mu + sigma * z;
            if inside(x) {
                return Ok(x);
            }
        }
        Err(Error::SamplingExhausted {
            lo,
            hi,
            attempts: INVERSE_CDF_ATTEMPTS + REJECTION_ATTEMPTS,
        })
    }
}

/// Deterministic spatial factor of a separable coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
    IdentityX,
    OnePlusXSquared,
    Linear { intercept: f64, slope: f64 },
    /// sin(pi x / length): vanishes at both ends of the domain.
    SinPiX,
}

fn one() -> f64 {
    1.0
}

impl Shape {
    pub fn constant(value: f64) -> Self {
        Shape::Constant { value }
    }

    pub fn eval(&self, x: f64, length: f64) -> f64 {
        match *self {
            Shape::Constant { value } => value,
            Shape::IdentityX => x,
            Shape::OnePlusXSquared => 1.0 + x * x,
            Shape::Linear { intercept, slope } => intercept + slope * x,
            Shape::SinPiX => {
                // Reflect onto the nearer end so both ends give exactly 0.
                let r = x / length;
                if r > 0.5 {
                    (PI * (1.0 - r)).sin()
                } else {
                    (PI * r).sin()
                }
            }
        }
    }
}

/// Role a random amplitude plays in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Diffusion,
    Advection,
    Reaction,
    Initial,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Diffusion, Role::Advection, Role::Reaction, Role::Initial];

    pub fn name(self) -> &'static str {
        match self {
            Role::Diffusion => "diffusion",
            Role::Advection => "advection",
            Role::Reaction => "reaction",
            Role::Initial => "initial",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One realization of the four random amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub diffusion: f64,
    pub advection: f64,
    pub reaction: f64,
    pub initial: f64,
}

impl Sample {
    pub fn get(&self, role: Role) -> f64 {
        match role {
            Role::Diffusion => self.diffusion,
            Role::Advection => self.advection,
            Role::Reaction => self.reaction,
            Role::Initial => self.initial,
        }
    }

    pub fn set(&mut self, role: Role, value: f64) {
        match role {
            Role::Diffusion => self.diffusion = value,
            Role::Advection => self.advection = value,
            Role::Reaction => self.reaction = value,
            Role::Initial => self.initial = value,
        }
    }
}

/// Separable random coefficient `shape(x) * amplitude`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientProcess {
    pub shape: Shape,
    pub amplitude: RandomVariableSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_bounds: Option<(f64, f64)>,
}

impl CoefficientProcess {
    pub fn new(shape: Shape, amplitude: RandomVariableSpec) -> Self {
        CoefficientProcess {
            shape,
            amplitude,
            declared_bounds: None,
        }
    }

    pub fn with_declared_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.declared_bounds = Some((lo, hi));
        self
    }

    pub fn eval(&self, x: f64, length: f64, amplitude: f64) -> f64 {
        self.shape.eval(x, length) * amplitude
    }

    /// Infimum and supremum of `shape(x_i) * amplitude` over the grid nodes and
    /// the amplitude support. Fails when declared bounds do not contain them.
    pub fn bounds(&self, grid: &Grid1D, role: Role) -> Result<(f64, f64)> {
        let (amp_lo, amp_hi) = self.amplitude.support();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for x in grid.nodes() {
            let s = self.shape.eval(x, grid.length());
            for v in [s * amp_lo, s * amp_hi] {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if let Some((dlo, dhi)) = self.declared_bounds {
            if lo < dlo || hi > dhi {
                return Err(Error::DeclaredBoundsViolated {
                    role: role.name().to_string(),
                    computed_lo: lo,
                    computed_hi: hi,
                    declared_lo: dlo,
                    declared_hi: dhi,
                });
            }
        }
        Ok((lo, hi))
    }
}

/// `coefficient_bounds` for a single process.
pub fn coefficient_bounds(proc: &CoefficientProcess, grid: &Grid1D) -> Result<(f64, f64)> {
    proc.bounds(grid, Role::Diffusion)
}

/// Closed-form function of `(x or t, sample)`.
pub type SampleFn = Arc<dyn Fn(f64, &Sample) -> f64 + Send + Sync>;

/// Time-dependent Dirichlet data `Phi_1(t, s)` and `Phi_2(t, s)`.
#[derive(Clone)]
pub struct BoundaryProcess {
    pub left: SampleFn,
    pub right: SampleFn,
}

impl BoundaryProcess {
    pub fn new(
        left: impl Fn(f64, &Sample) -> f64 + Send + Sync + 'static,
        right: impl Fn(f64, &Sample) -> f64 + Send + Sync + 'static,
    ) -> Self {
        BoundaryProcess {
            left: Arc::new(left),
            right: Arc::new(right),
        }
    }

    pub fn constant(left: f64, right: f64) -> Self {
        Self::new(move |_, _| left, move |_, _| right)
    }

    pub fn left_at(&self, t: f64, s: &Sample) -> f64 {
        (self.left)(t, s)
    }

    pub fn right_at(&self, t: f64, s: &Sample) -> f64 {
        (self.right)(t, s)
    }
}

impl fmt::Debug for BoundaryProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("BoundaryProcess { .. }")
    }
}

/// Initial profile `Phi_0(x, s)`.
#[derive(Clone)]
pub struct InitialProcess {
    pub profile: SampleFn,
}

impl InitialProcess {
    pub fn new(profile: impl Fn(f64, &Sample) -> f64 + Send + Sync + 'static) -> Self {
        InitialProcess {
            profile: Arc::new(profile),
        }
    }

    /// Separable profile `shape(x) * gamma`, gamma being the initial amplitude.
    pub fn separable(shape: Shape, length: f64) -> Self {
        Self::new(move |x, s| shape.eval(x, length) * s.initial)
    }

    pub fn constant(value: f64) -> Self {
        Self::new(move |_, _| value)
    }

    pub fn at(&self, x: f64, s: &Sample) -> f64 {
        (self.profile)(x, s)
    }
}

impl fmt::Debug for InitialProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("InitialProcess { .. }")
    }
}

/// Bound constants of the model hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelBounds {
    pub d1: f64,
    pub d2: f64,
    pub b1: f64,
    pub a1: f64,
    pub a2: f64,
}

/// A complete random Fisher-KPP model on `[0, length]`.
#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    pub length: f64,
    pub diffusion: CoefficientProcess,
    pub advection: CoefficientProcess,
    pub reaction: CoefficientProcess,
    pub initial_amplitude: RandomVariableSpec,
    pub initial: InitialProcess,
    pub boundary: BoundaryProcess,
    /// Bound constants quoted alongside the model, if any. They are never
    /// used for the stepsize gate; mismatches with the computed bounds are
    /// reported as notes.
    pub reference_bounds: Option<ModelBounds>,
}

impl Model {
    pub fn law(&self, role: Role) -> &RandomVariableSpec {
        match role {
            Role::Diffusion => &self.diffusion.amplitude,
            Role::Advection => &self.advection.amplitude,
            Role::Reaction => &self.reaction.amplitude,
            Role::Initial => &self.initial_amplitude,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::ModelHypothesis(format!(
                "domain length must be positive, got {}",
                self.length
            )));
        }
        for role in Role::ALL {
            self.law(role).validate()?;
        }
        Ok(())
    }

    /// Roles whose amplitude is genuinely random.
    pub fn random_roles(&self) -> Vec<Role> {
        Role::ALL
            .into_iter()
            .filter(|&r| self.law(r).is_random())
            .collect()
    }

    /// Sample with every amplitude at its deterministic value, or at the
    /// lower support endpoint for random ones.
    pub fn nominal_sample(&self) -> Sample {
        let mut s = Sample {
            diffusion: 0.0,
            advection: 0.0,
            reaction: 0.0,
            initial: 0.0,
        };
        for role in Role::ALL {
            s.set(role, self.law(role).support().0);
        }
        s
    }

    /// Draws the four amplitudes in the fixed order diffusion, advection,
    /// reaction, initial.
    pub fn draw_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Sample> {
        let mut s = self.nominal_sample();
        for role in Role::ALL {
            s.set(role, self.law(role).sample(rng)?);
        }
        Ok(s)
    }

    pub fn diffusion_at(&self, x: f64, s: &Sample) -> f64 {
        self.diffusion.eval(x, self.length, s.diffusion)
    }

    pub fn advection_at(&self, x: f64, s: &Sample) -> f64 {
        self.advection.eval(x, self.length, s.advection)
    }

    pub fn reaction_at(&self, x: f64, s: &Sample) -> f64 {
        self.reaction.eval(x, self.length, s.reaction)
    }

    /// Computes `d1, d2, b1, a1, a2` over the grid and amplitude supports and
    /// checks the sign hypotheses on diffusion and reaction.
    pub fn bounds(&self, grid: &Grid1D) -> Result<ModelBounds> {
        let (d1, d2) = self.diffusion.bounds(grid, Role::Diffusion)?;
        let (blo, bhi) = self.advection.bounds(grid, Role::Advection)?;
        let (a1, a2) = self.reaction.bounds(grid, Role::Reaction)?;
        if d1 <= 0.0 {
            return Err(Error::ModelHypothesis(format!(
                "diffusion must be bounded below by a positive constant, got d1 = {d1}"
            )));
        }
        if a1 < 0.0 {
            return Err(Error::ModelHypothesis(format!(
                "reaction must be nonnegative, got a1 = {a1}"
            )));
        }
        Ok(ModelBounds {
            d1,
            d2,
            b1: blo.abs().max(bhi.abs()),
            a1,
            a2,
        })
    }

    /// Notes describing where quoted reference constants disagree with the
    /// computed bounds.
    pub fn bound_notes(&self, computed: &ModelBounds) -> Vec<String> {
        let Some(reference) = self.reference_bounds else {
            return Vec::new();
        };
        let pairs = [
            ("d1", reference.d1, computed.d1),
            ("d2", reference.d2, computed.d2),
            ("b1", reference.b1, computed.b1),
            ("a1", reference.a1, computed.a1),
            ("a2", reference.a2, computed.a2),
        ];
        pairs
            .iter()
            .filter(|(_, r, c)| (r - c).abs() > 1e-12 * c.abs().max(1.0))
            .map(|(name, r, c)| {
                format!("{name}: model {} quotes {r}, computed {c} from the coefficients on the grid; the computed value is used", self.name)
            })
            .collect()
    }
}

/// Result of [`check_coherence`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoherenceReport {
    pub max_left: f64,
    pub max_right: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the initial profile at the domain ends with the boundary data at
/// `t = 0` over the given samples.
pub fn check_coherence(
    init: &InitialProcess,
    bnd: &BoundaryProcess,
    length: f64,
    samples: &[Sample],
) -> CoherenceReport {
    check_coherence_with_tol(init, bnd, length, samples, COHERENCE_TOL)
}

pub fn check_coherence_with_tol(
    init: &InitialProcess,
    bnd: &BoundaryProcess,
    length: f64,
    samples: &[Sample],
    tolerance: f64,
) -> CoherenceReport {
    let mut max_left = 0.0_f64;
    let mut max_right = 0.0_f64;
    for s in samples {
        max_left = max_left.max((init.at(0.0, s) - bnd.left_at(0.0, s)).abs());
        max_right = max_right.max((init.at(length, s) - bnd.right_at(0.0, s)).abs());
    }
    CoherenceReport {
        max_left,
        max_right,
        tolerance,
        passed: max_left <= tolerance && max_right <= tolerance,
    }
}
