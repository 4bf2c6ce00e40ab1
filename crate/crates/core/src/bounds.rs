//! Closed-form separation-probability bounds and capacity estimates.
//!
//! Every calculator returns a [`BoundResult`] carrying the raw value next to
//! the clamped one, so callers can chart where a bound stops being
//! informative instead of getting an error. Powers such as `r^n` and
//! `(2α)^-n` are evaluated in log space; nothing underflows before the final
//! `exp`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{invalid_parameter, out_of_domain, Error, Result};
use crate::scalar::Scalar;

/// What a [`BoundResult`] value means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    /// Lower bound on a success probability; vacuous when the raw value is <= 0.
    LowerProbability,
    /// Upper bound on a failure probability; vacuous when the raw value is >= 1.
    UpperProbability,
    /// Asymptotic or approximate probability; never flagged vacuous.
    Estimate,
    /// Admissible number of points; vacuous when fewer than one point fits.
    Capacity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub formula_id: String,
    pub kind: BoundKind,
    /// Reported value: probabilities are clamped to [0, 1], capacities to >= 0.
    pub value: f64,
    /// Value before clamping.
    pub raw: f64,
    pub vacuous: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl BoundResult {
    pub fn new(formula_id: &str, kind: BoundKind, raw: f64) -> Self {
        let (value, vacuous) = match kind {
            BoundKind::LowerProbability => (raw.clamp(0.0, 1.0), raw <= 0.0),
            BoundKind::UpperProbability => (raw.clamp(0.0, 1.0), raw >= 1.0),
            BoundKind::Estimate => (raw.clamp(0.0, 1.0), false),
            BoundKind::Capacity => (raw.max(0.0), raw < 1.0),
        };
        Self {
            formula_id: formula_id.to_owned(),
            kind,
            value,
            raw,
            vacuous,
            note: None,
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

fn check_positive_dim(n: u32) -> Result<()> {
    if n == 0 {
        return Err(invalid_parameter("dimension must be at least 1"));
    }
    Ok(())
}

fn check_unit_open(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(out_of_domain(format!("{name} must lie in (0, 1), got {v}")));
    }
    Ok(())
}

/// Failure probability for a uniform point of the unit ball against `card_y`
/// arbitrary points of the ball: `ψ = |Y| / (2α)^n`, for `α > 1/2`.
pub fn prop1_failure(card_y: f64, alpha: f64, n: u32) -> Result<BoundResult> {
    check_positive_dim(n)?;
    if !(alpha > 0.5 && alpha < 1.0) {
        return Err(out_of_domain(format!("alpha must lie in (1/2, 1), got {alpha}")));
    }
    if !(card_y >= 0.0) {
        return Err(invalid_parameter(format!("|Y| must be non-negative, got {card_y}")));
    }
    let raw = (card_y.ln() - n as f64 * (2.0 * alpha).ln()).exp();
    Ok(BoundResult::new("prop1", BoundKind::UpperProbability, raw))
}

/// Failure probability for densities bounded by `C / (r^n V_n)` against
/// `|Y| < b^n` points: `ψ < C (b / 2rα)^n`, requiring `2rα > b > 1`.
pub fn theorem1_failure(c: f64, r: f64, b: f64, alpha: f64, n: u32) -> Result<BoundResult> {
    check_positive_dim(n)?;
    if !(c > 0.0 && r > 0.0) {
        return Err(invalid_parameter("C and r must be positive"));
    }
    if !(b > 1.0 && 2.0 * r * alpha > b) {
        return Err(out_of_domain(format!(
            "need 2rα > b > 1, got 2rα = {}, b = {b}",
            2.0 * r * alpha
        )));
    }
    let raw = (c.ln() + n as f64 * (b.ln() - (2.0 * r * alpha).ln())).exp();
    Ok(BoundResult::new("theorem1", BoundKind::UpperProbability, raw))
}

/// The three lower bounds for M i.i.d. uniform points in the unit ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallBounds {
    /// One point separated from the rest: `1 - r^n - (M-1)ρ^n / 2`.
    pub single: BoundResult,
    /// Every point separated from every other: `1 - M r^n - M(M-1)ρ^n / 2`.
    pub pairs: BoundResult,
    /// Pairwise r-orthogonality of directions: `1 - M r^n - M(M-1)ρ^n`.
    pub angles: BoundResult,
}

pub fn ball_bounds(m: f64, n: u32, r: f64) -> Result<BallBounds> {
    check_positive_dim(n)?;
    check_unit_open("r", r)?;
    if !(m >= 1.0) {
        return Err(invalid_parameter(format!("M must be at least 1, got {m}")));
    }
    let nf = n as f64;
    let r_n = (nf * r.ln()).exp();
    let rho_n = (nf * 0.5 * (1.0 - r * r).ln()).exp();
    Ok(BallBounds {
        single: BoundResult::new(
            "ball-single",
            BoundKind::LowerProbability,
            1.0 - r_n - 0.5 * (m - 1.0) * rho_n,
        ),
        pairs: BoundResult::new(
            "ball-pairs",
            BoundKind::LowerProbability,
            1.0 - m * r_n - 0.5 * m * (m - 1.0) * rho_n,
        ),
        angles: BoundResult::new(
            "ball-angles",
            BoundKind::LowerProbability,
            1.0 - m * r_n - m * (m - 1.0) * rho_n,
        ),
    })
}

/// Largest sample sizes that keep the ball separation events above `1 - θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallCapacity {
    /// `M < 2(θ - r^n) / ρ^n`.
    pub single: BoundResult,
    /// `M < (r/ρ)^n (sqrt(1 + 2θρ^n / r^{2n}) - 1)`.
    pub pairs: BoundResult,
}

pub fn ball_capacity(r: f64, n: u32, theta: f64) -> Result<BallCapacity> {
    check_positive_dim(n)?;
    check_unit_open("r", r)?;
    check_unit_open("theta", theta)?;
    let nf = n as f64;
    let ln_r = r.ln();
    let ln_rho = 0.5 * (1.0 - r * r).ln();
    let r_n = (nf * ln_r).exp();
    if theta <= r_n {
        return Ok(BallCapacity {
            single: BoundResult::new("ball-capacity-single", BoundKind::Capacity, 0.0),
            pairs: BoundResult::new("ball-capacity-pairs", BoundKind::Capacity, 0.0),
        });
    }
    let single = (2.0f64.ln() + (theta - r_n).ln() - nf * ln_rho).exp();
    // sqrt(1 + a) - 1 = a / (sqrt(1 + a) + 1), with a = 2θρ^n / r^{2n}
    let ln_a = (2.0 * theta).ln() + nf * ln_rho - 2.0 * nf * ln_r;
    let ln_ratio = nf * (ln_r - ln_rho);
    let pairs = if ln_a > 600.0 {
        // sqrt(1 + a) - 1 ~ sqrt(a)
        (ln_ratio + 0.5 * ln_a).exp()
    } else {
        let a = ln_a.exp();
        ln_ratio.exp() * a / ((1.0 + a).sqrt() + 1.0)
    };
    Ok(BallCapacity {
        single: BoundResult::new("ball-capacity-single", BoundKind::Capacity, single),
        pairs: BoundResult::new("ball-capacity-pairs", BoundKind::Capacity, pairs),
    })
}

/// Lower bounds for M i.i.d. centred points of a product distribution in the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeBounds {
    /// One point against the rest: `1 - 2M e^{-2δ²R₀⁴/n} - (M-1) e^{-2R₀⁴(2-3δ)²/n}`.
    pub single: BoundResult,
    /// All ordered pairs: `1 - 2M e^{-2δ²R₀⁴/n} - M(M-1) e^{-2R₀⁴(2-3δ)²/n}`.
    pub pairs: BoundResult,
}

/// `sigma` holds the per-coordinate standard deviations; `n = sigma.len()`.
pub fn cube_bounds(sigma: &[f64], delta: f64, m: f64) -> Result<CubeBounds> {
    if sigma.is_empty() {
        return Err(invalid_parameter("need at least one coordinate"));
    }
    if sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(invalid_parameter("coordinate standard deviations must be positive"));
    }
    if !(delta > 0.0 && delta < 2.0 / 3.0) {
        return Err(out_of_domain(format!("delta must lie in (0, 2/3), got {delta}")));
    }
    if !(m >= 1.0) {
        return Err(invalid_parameter(format!("M must be at least 1, got {m}")));
    }
    let n = sigma.len() as f64;
    let r0_sq: f64 = sigma.iter().map(|s| s * s).sum();
    let q = r0_sq * r0_sq / n;
    let norm_term = 2.0 * m * (-2.0 * delta * delta * q).exp();
    let angle = (-2.0 * q * (2.0 - 3.0 * delta).powi(2)).exp();
    Ok(CubeBounds {
        single: BoundResult::new(
            "cube-single",
            BoundKind::LowerProbability,
            1.0 - norm_term - (m - 1.0) * angle,
        ),
        pairs: BoundResult::new(
            "cube-pairs",
            BoundKind::LowerProbability,
            1.0 - norm_term - m * (m - 1.0) * angle,
        ),
    })
}

/// Caller-supplied constants of the log-concave capacity estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogConcaveConstants {
    pub a: f64,
    /// γ for the general estimate, η for the strongly log-concave one.
    pub base: f64,
    /// Strong-convexity constant c, when known.
    #[serde(default)]
    pub c: Option<f64>,
}

impl LogConcaveConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) {
            return Err(invalid_parameter(format!("a must be positive, got {}", self.a)));
        }
        if !(self.base > 1.0) {
            return Err(invalid_parameter(format!("growth base must exceed 1, got {}", self.base)));
        }
        if let Some(c) = self.c {
            if !(c > 0.0) {
                return Err(invalid_parameter(format!("c must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogConcavity {
    /// `M <= a γ^sqrt(n)`.
    General,
    /// `M <= a sqrt(ψ) η^n`.
    Strong,
    /// Strong case for the isotropic Gaussian (c = 1/8).
    Gaussian,
}

pub fn logconcave_capacity(
    constants: LogConcaveConstants,
    n: u32,
    family: LogConcavity,
    psi: f64,
) -> Result<BoundResult> {
    constants.validate()?;
    check_positive_dim(n)?;
    let nf = n as f64;
    let ln_a = constants.a.ln();
    let ln_base = constants.base.ln();
    match family {
        LogConcavity::General => Ok(BoundResult::new(
            "logconcave",
            BoundKind::Capacity,
            (ln_a + nf.sqrt() * ln_base).exp(),
        )),
        LogConcavity::Strong | LogConcavity::Gaussian => {
            check_unit_open("psi", psi)?;
            let raw = (ln_a + 0.5 * psi.ln() + nf * ln_base).exp();
            let bound = BoundResult::new("strongly-logconcave", BoundKind::Capacity, raw);
            Ok(if family == LogConcavity::Gaussian {
                bound.with_note("isotropic Gaussian: strongly log-concave with c = 1/8")
            } else {
                bound
            })
        }
    }
}

/// Distribution families with known smeared-absolute-continuity constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family")]
pub enum SmacFamily {
    Ball,
    Perturbed { epsilon: f64 },
    /// Uniform cube scaled to side `sqrt(4/n)`.
    Cube,
}

/// Density-ratio constants: `ρ(x) <= C / (r^n V_n(B_n))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmacParams {
    pub c: f64,
    /// For the cube this is the supremum of admissible r.
    pub r: f64,
}

pub fn smac_params(family: SmacFamily) -> Result<SmacParams> {
    match family {
        SmacFamily::Ball => Ok(SmacParams { c: 1.0, r: 1.0 }),
        SmacFamily::Perturbed { epsilon } => {
            check_unit_open("epsilon", epsilon)?;
            Ok(SmacParams { c: 1.0, r: epsilon })
        }
        SmacFamily::Cube => Ok(SmacParams {
            c: 1.0 / (2.0 * std::f64::consts::PI.sqrt()),
            r: (2.0 / (std::f64::consts::PI * std::f64::consts::E)).sqrt(),
        }),
    }
}

/// Asymptotic sphere cap measure `(1-α²)^((n-1)/2) / (α sqrt(2π(n-1)))` for real `n > 1`.
pub fn sphere_p_formula(alpha: f64, n: f64) -> f64 {
    sphere_ln_p_formula(alpha, n).exp()
}

/// Natural logarithm of [`sphere_p_formula`], finite where the value underflows.
pub fn sphere_ln_p_formula(alpha: f64, n: f64) -> f64 {
    let m = n - 1.0;
    0.5 * m * (1.0 - alpha * alpha).ln() - alpha.ln() - 0.5 * (2.0 * std::f64::consts::PI * m).ln()
}

fn check_sphere_args(alpha: f64, n: u32) -> Result<()> {
    check_unit_open("alpha", alpha)?;
    if n < 3 {
        return Err(out_of_domain(format!("sphere estimate needs n >= 3, got {n}")));
    }
    Ok(())
}

/// Probability that a uniform point of the sphere `S^{n-1}` is not Fisher
/// separable from a fixed point of the sphere, asymptotic form.
pub fn sphere_p(alpha: f64, n: u32) -> Result<f64> {
    check_sphere_args(alpha, n)?;
    Ok(sphere_p_formula(alpha, n as f64))
}

/// Exact measure of the cap `{x in S^{n-1} : (x, y) > α}`.
///
/// Writing the first coordinate of a uniform point as `cos φ`, the angle has
/// density proportional to `sin^{n-2} φ` on `[0, π]`. The cap integral over
/// `[0, arccos α]` and the normalizer over `[0, π/2]` are computed by
/// adaptive Simpson quadrature, with no special functions involved.
pub fn exact_cap_oracle(alpha: f64, n: u32) -> Result<f64> {
    check_sphere_args(alpha, n)?;
    let power = n as i32 - 2;
    let density = |phi: f64| phi.sin().powi(power);
    let cap = integrate(&density, 0.0, alpha.acos());
    let half = integrate(&density, 0.0, std::f64::consts::FRAC_PI_2);
    Ok(cap / (2.0 * half))
}

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const PANELS: usize = 64;
    let h = (b - a) / PANELS as f64;
    let coarse: f64 = (0..PANELS)
        .map(|i| {
            let (x0, x1) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            simpson(f(x0), f(0.5 * (x0 + x1)), f(x1), x0, x1)
        })
        .sum();
    let tol = 1e-12 * coarse.abs().max(f64::MIN_POSITIVE);
    (0..PANELS)
        .map(|i| {
            let (x0, x1) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let (f0, fm, f1) = (f(x0), f(0.5 * (x0 + x1)), f(x1));
            adaptive(f, x0, x1, f0, fm, f1, simpson(f0, fm, f1, x0, x1), tol / PANELS as f64, 24)
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Probability that a uniform point of the ball of radius ρ falls in the
/// half-ball beyond the hyperplane at distance `h`: `ψ₁ = ½(1 - h²/ρ²)^{n/2}`.
pub fn cluster_rejection(h: f64, rho: f64, n: u32) -> Result<BoundResult> {
    check_positive_dim(n)?;
    if !(rho > 0.0) {
        return Err(invalid_parameter(format!("rho must be positive, got {rho}")));
    }
    if !(h >= 0.0 && h <= rho) {
        return Err(out_of_domain(format!("need 0 <= h <= rho, got h = {h}, rho = {rho}")));
    }
    let s = 1.0 - (h / rho) * (h / rho);
    let raw = if s <= 0.0 {
        0.0
    } else {
        0.5 * (0.5 * n as f64 * s.ln()).exp()
    };
    Ok(BoundResult::new("cluster-rejection", BoundKind::UpperProbability, raw))
}

/// Upper tail of the standard normal distribution.
pub fn normal_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Chance that a member of a k-point quasi-orthogonal cluster in dimension n
/// is not separated from the origin by the cluster's mean direction:
/// `ψ₋ = P(Z > sqrt(n/k))`.
pub fn quasiortho_miss(n: u32, k: u32) -> Result<BoundResult> {
    if k == 0 {
        return Err(invalid_parameter("cluster size k must be at least 1"));
    }
    if n < k {
        return Err(out_of_domain(format!("need n >= k, got n = {n}, k = {k}")));
    }
    let raw = normal_tail((n as f64 / k as f64).sqrt());
    Ok(BoundResult::new("quasiortho-miss", BoundKind::Estimate, raw).with_note(
        "standard normal tail; the printed 1/(2π) prefactor does not reproduce the quoted 0.025 and 0.0015",
    ))
}

/// Largest stimulus set for which every weight vector within relative
/// distance ξ keeps selectivity with probability `> 1 - ψ`:
/// `M < ψ (1/(2α) + ξ)^{-n}`.
pub fn robust_capacity(alpha: f64, xi: f64, n: u32, psi: f64) -> Result<BoundResult> {
    check_positive_dim(n)?;
    if !(alpha > 0.5 && alpha < 1.0) {
        return Err(out_of_domain(format!("alpha must lie in (1/2, 1), got {alpha}")));
    }
    check_unit_open("psi", psi)?;
    let xi_max = 1.0 - 1.0 / (2.0 * alpha);
    if !(xi >= 0.0 && xi < xi_max) {
        return Err(out_of_domain(format!("xi must lie in [0, {xi_max}), got {xi}")));
    }
    let raw = (psi.ln() - n as f64 * (1.0 / (2.0 * alpha) + xi).ln()).exp();
    Ok(BoundResult::new("robust-capacity", BoundKind::Capacity, raw))
}

/// A threshold neuron `(w, θ)` that fires on `x` iff `(w, x) > θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveNeuron<T: Scalar> {
    pub weights: DVector<T>,
    pub threshold: T,
}

impl<T: Scalar> SelectiveNeuron<T> {
    pub fn potential(&self, x: &DVector<T>) -> Result<T> {
        if x.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                found: x.len(),
            });
        }
        Ok(self.weights.dot(x))
    }

    pub fn fires(&self, x: &DVector<T>) -> Result<bool> {
        Ok(self.potential(x)? > self.threshold)
    }
}

/// Neuron tuned to `x_new` against stimuli centred at `c`:
/// `w = x_new - c`, `θ = α(w, w) + (w, c)`.
pub fn selective_neuron<T: Scalar>(
    x_new: &DVector<T>,
    center: &DVector<T>,
    alpha: T,
) -> Result<SelectiveNeuron<T>> {
    if x_new.len() != center.len() {
        return Err(Error::DimensionMismatch {
            expected: center.len(),
            found: x_new.len(),
        });
    }
    let weights = x_new - center;
    if weights.iter().all(|v| *v == T::zero()) {
        return Err(Error::DegenerateDirection(
            "new stimulus coincides with the centre".into(),
        ));
    }
    let threshold = alpha * weights.dot(&weights) + weights.dot(center);
    Ok(SelectiveNeuron { weights, threshold })
}
