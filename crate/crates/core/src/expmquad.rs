//! Dense matrix exponential and the Simpson quadrature matrix of the
//! exponential-time-differencing step.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::specmat::SystemMatrix;

// Scaling-and-squaring with diagonal Pade approximants of degree 3..13
// (Higham 2005). THETA[m] is the largest 1-norm for which the degree-m
// approximant is accurate to unit roundoff.
const THETA_3: f64 = 1.495_585_217_958_292e-2;
const THETA_5: f64 = 2.539_398_330_063_23e-1;
const THETA_7: f64 = 9.504_178_996_162_932e-1;
const THETA_9: f64 = 2.097_847_961_257_068;
const THETA_13: f64 = 5.371_920_351_148_152;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17_297_280.0,
    8_648_640.0,
    1_995_840.0,
    277_200.0,
    25_200.0,
    1_512.0,
    56.0,
    1.0,
];
const B9: [f64; 10] = [
    17_643_225_600.0,
    8_821_612_800.0,
    2_075_673_600.0,
    302_702_400.0,
    30_270_240.0,
    2_162_160.0,
    110_880.0,
    3_960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Numerator and denominator pieces `(U, V)` of a low-degree approximant.
fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let a2 = a * a;
    let mut odd = DMatrix::identity(n, n) * b[1];
    let mut even = DMatrix::identity(n, n) * b[0];
    let mut power = DMatrix::identity(n, n);
    let degree = b.len() - 1;
    for j in (2..=degree).step_by(2) {
        power = &power * &a2;
        even += &power * b[j];
        if j < degree {
            odd += &power * b[j + 1];
        }
    }
    (a * odd, even)
}

fn pade13(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let b = &B13;
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = a * (&a6 * inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let inner_v = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    (u, v)
}

/// `exp(A t)` by scaling and squaring.
pub fn matrix_exp(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    assert!(a.is_square(), "matrix exponential needs a square matrix");
    if !t.is_finite() || a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix exponential argument".into()));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let at = a * t;
    let norm = one_norm(&at);

    let (u, v, squarings) = if norm <= THETA_3 {
        let (u, v) = pade_low(&at, &B3);
        (u, v, 0)
    } else if norm <= THETA_5 {
        let (u, v) = pade_low(&at, &B5);
        (u, v, 0)
    } else if norm <= THETA_7 {
        let (u, v) = pade_low(&at, &B7);
        (u, v, 0)
    } else if norm <= THETA_9 {
        let (u, v) = pade_low(&at, &B9);
        (u, v, 0)
    } else {
        let s = (norm / THETA_13).log2().ceil().max(0.0) as i32;
        let scaled = at * 2f64.powi(-s);
        let (u, v) = pade13(&scaled);
        (u, v, s)
    };

    let p = &v + &u;
    let q = v - u;
    let mut x = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::NonFinite("singular Pade denominator".into()))?;
    for _ in 0..squarings {
        x = &x * &x;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow);
    }
    Ok(x)
}

/// Propagators of one ETD step of size `k`.
#[derive(Debug, Clone)]
pub struct PropagatorPair {
    /// `exp(M k)`.
    pub full: DMatrix<f64>,
    /// `exp(M k / 2)`.
    pub half: DMatrix<f64>,
    /// `(I + 4 exp(M k/2) + exp(M k)) / 6`.
    pub lambda: DMatrix<f64>,
}

impl PropagatorPair {
    pub fn from_dense(m: &DMatrix<f64>, k: f64) -> Result<Self> {
        if k.is_nan() || k <= 0.0 {
            return Err(Error::InvalidTimeMesh(format!("step must be positive, got {k}")));
        }
        let full = matrix_exp(m, k)?;
        let half = matrix_exp(m, 0.5 * k)?;
        let n = m.nrows();
        let lambda = (DMatrix::identity(n, n) + &half * 4.0 + &full) / 6.0;
        Ok(PropagatorPair { full, half, lambda })
    }
}

pub fn build_propagators(m: &SystemMatrix, k: f64) -> Result<PropagatorPair> {
    PropagatorPair::from_dense(&m.to_dense(), k)
}

/// Composite Simpson approximation of `int_0^k exp(M z) dz`, doubling the
/// panel count from `panels` until successive results agree to 1e-12 in the
/// infinity norm.
pub fn integral_exp_oracle(m: &DMatrix<f64>, k: f64, panels: usize) -> Result<DMatrix<f64>> {
    const MAX_PANELS: usize = 1 << 16;
    const TOL: f64 = 1e-12;
    if panels < 64 || !panels.is_multiple_of(2) {
        return Err(Error::QuadratureNonConvergence(format!(
            "panel count must be even and at least 64, got {panels}"
        )));
    }
    let n = m.nrows();
    // Trapezoid sums T_p; Simpson S_{2p} = (4 T_{2p} - T_p) / 3.
    let mut p = panels / 2;
    let mut width = k / p as f64;
    let mut interior = DMatrix::<f64>::zeros(n, n);
    for j in 1..p {
        interior += matrix_exp(m, j as f64 * width)?;
    }
    let ends = DMatrix::<f64>::identity(n, n) + matrix_exp(m, k)?;
    let trapezoid = |interior: &DMatrix<f64>, width: f64| (&ends * 0.5 + interior) * width;
    let mut t_prev = trapezoid(&interior, width);
    let mut s_prev: Option<DMatrix<f64>> = None;
    loop {
        // Refine: add midpoints of the current panels.
        for j in 0..p {
            interior += matrix_exp(m, (j as f64 + 0.5) * width)?;
        }
        p *= 2;
        width = k / p as f64;
        let t_next = trapezoid(&interior, width);
        let s_next = (&t_next * 4.0 - &t_prev) / 3.0;
        if let Some(prev) = &s_prev {
            let change = crate::specmat::inf_norm(&(&s_next - prev));
            if change < TOL {
                return Ok(s_next);
            }
        }
        if p >= MAX_PANELS {
            return Err(Error::QuadratureNonConvergence(format!(
                "no convergence with {p} panels"
            )));
        }
        s_prev = Some(s_next);
        t_prev = t_next;
    }
}
