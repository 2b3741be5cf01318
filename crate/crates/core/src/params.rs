//! Admissible parameter triples `(d, γ, p)` and every exponent derived from them.
//!
//! [`ProblemParams`] is the only way into the rest of the crate: every formula
//! downstream reads its exponents from [`DerivedExponents`], so an invalid
//! triple is rejected once, here.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::sphere_area;

/// Rejection of a parameter triple, naming the violated bound.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamsError {
    #[error("dimension d = {d} is too small: d >= 3 is required")]
    DimensionTooSmall { d: u32 },
    #[error("weight exponent gamma = {gamma} is outside [0, 2)")]
    GammaOutOfRange { gamma: f64 },
    #[error("exponent p = {p} is outside the admissible interval ({lower}, {upper})")]
    POutOfRange { p: f64, lower: f64, upper: f64 },
    #[error("diffusion exponent m = {m} is outside the admissible interval ({lower}, {upper})")]
    MOutOfRange { m: f64, lower: f64, upper: f64 },
}

/// A validated triple `(d, γ, p)` with `d ≥ 3`, `0 ≤ γ < 2` and
/// `1 < p < (d−γ)/(d−2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ProblemParams {
    d: u32,
    gamma: f64,
    p: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RawParams {
    d: u32,
    gamma: f64,
    p: f64,
}

impl TryFrom<RawParams> for ProblemParams {
    type Error = ParamsError;

    fn try_from(raw: RawParams) -> Result<Self, Self::Error> {
        validate(raw.d, raw.gamma, raw.p)
    }
}

impl From<ProblemParams> for RawParams {
    fn from(params: ProblemParams) -> Self {
        RawParams {
            d: params.d,
            gamma: params.gamma,
            p: params.p,
        }
    }
}

/// Upper end of the admissible `p` interval, `(d−γ)/(d−2)`.
pub fn p_upper(d: u32, gamma: f64) -> f64 {
    (d as f64 - gamma) / (d as f64 - 2.0)
}

/// Checks `(d, γ, p)` against the admissible range with strict inequalities.
pub fn validate(d: u32, gamma: f64, p: f64) -> Result<ProblemParams, ParamsError> {
    if d < 3 {
        return Err(ParamsError::DimensionTooSmall { d });
    }
    if !(0.0..2.0).contains(&gamma) {
        return Err(ParamsError::GammaOutOfRange { gamma });
    }
    let upper = p_upper(d, gamma);
    if !(p > 1.0 && p < upper) {
        return Err(ParamsError::POutOfRange {
            p,
            lower: 1.0,
            upper,
        });
    }
    Ok(ProblemParams { d, gamma, p })
}

/// Interpolation exponent associated with a fast-diffusion exponent, `p = 1/(2m−1)`.
pub fn p_from_m(m: f64) -> f64 {
    1.0 / (2.0 * m - 1.0)
}

/// Fast-diffusion exponent associated with `p`, `m = (p+1)/(2p)`.
pub fn m_from_p(p: f64) -> f64 {
    (p + 1.0) / (2.0 * p)
}

/// Validates a diffusion exponent `m ∈ (m₁, 1)` and returns the matching params.
pub fn validate_diffusion(d: u32, gamma: f64, m: f64) -> Result<ProblemParams, ParamsError> {
    if d < 3 {
        return Err(ParamsError::DimensionTooSmall { d });
    }
    if !(0.0..2.0).contains(&gamma) {
        return Err(ParamsError::GammaOutOfRange { gamma });
    }
    let lower = m_one(d, gamma);
    if !(m > lower && m < 1.0) {
        return Err(ParamsError::MOutOfRange {
            m,
            lower,
            upper: 1.0,
        });
    }
    validate(d, gamma, p_from_m(m))
}

fn m_one(d: u32, gamma: f64) -> f64 {
    let d = d as f64;
    (2.0 * d - gamma - 2.0) / (2.0 * (d - gamma))
}

/// Every exponent and constant that the formulas of the crate consume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DerivedExponents {
    /// Critical weighted exponent `2*_γ = 2(d−γ)/(d−2)`.
    pub two_star_gamma: f64,
    /// Interpolation exponent ϑ of the gradient norm.
    pub vartheta: f64,
    /// Exponent θ_γ of the non-scale-invariant energy.
    pub theta_gamma: f64,
    /// `η = d − γ − p(d−2)`.
    pub eta: f64,
    pub a_gamma: f64,
    pub b_gamma: f64,
    /// Effective dimension `d_γ = 2(d−γ)/(2−γ)` of the flattened radial problem.
    pub d_gamma: f64,
    /// Diffusion exponent with `p = 1/(2m−1)`.
    pub m_diff: f64,
    pub m_one: f64,
    pub m_c: f64,
    /// `|S^{d−1}|`.
    pub sphere_area: f64,
}

impl ProblemParams {
    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn dim(&self) -> f64 {
        self.d as f64
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// `2 − γ`, the power of `|x|` inside Barenblatt profiles.
    pub fn sigma(&self) -> f64 {
        2.0 - self.gamma
    }

    /// Same `(d, p)` with a different weight exponent.
    pub fn with_gamma(&self, gamma: f64) -> Result<ProblemParams, ParamsError> {
        validate(self.d, gamma, self.p)
    }

    pub fn derive(&self) -> DerivedExponents {
        derive(self)
    }

    /// Exponents `(A, B)` of the dilation `w ↦ λ^{(d−γ)/2p} w(λ·)`:
    /// the gradient term scales as `λ^A` and the `L^{p+1}` term as `λ^{−B}`.
    pub fn dilation_exponents(&self) -> (f64, f64) {
        let (d, g, p) = (self.dim(), self.gamma, self.p);
        let a = (d - g) / p - (d - 2.0);
        let b = (p - 1.0) * (d - g) / (2.0 * p);
        (a, b)
    }

    /// Mass `M = (2pθ_γ J)^{1/(1−θ_γ)}` for which the Lagrange multiplier equals one.
    pub fn mass_from_multiplier(&self, j: f64) -> f64 {
        mass_from_multiplier(j, self.p, self.derive().theta_gamma)
    }
}

/// Derives the exponents of a validated triple.
pub fn derive(params: &ProblemParams) -> DerivedExponents {
    let (d, g, p) = (params.dim(), params.gamma, params.p);
    let two_star_gamma = 2.0 * (d - g) / (d - 2.0);
    let vartheta = (d - g) * (p - 1.0) / (p * (d + 2.0 - 2.0 * g - p * (d - 2.0)));
    let theta_gamma = (d + 2.0 - 2.0 * g - p * (d - 2.0)) / (d - g - p * (d + g - 4.0));
    let eta = d - g - p * (d - 2.0);
    let a_gamma = (2.0 - g) * eta / ((p - 1.0) * (p - 1.0));
    let b_gamma = eta * eta / (p * (p - 1.0) * (p - 1.0));
    DerivedExponents {
        two_star_gamma,
        vartheta,
        theta_gamma,
        eta,
        a_gamma,
        b_gamma,
        d_gamma: 2.0 * (d - g) / (2.0 - g),
        m_diff: m_from_p(p),
        m_one: m_one(params.d, g),
        m_c: (d - 2.0) / (d - g),
        sphere_area: sphere_area(params.d),
    }
}

/// `M = (2pθJ)^{1/(1−θ)}`.
pub fn mass_from_multiplier(j: f64, p: f64, theta_gamma: f64) -> f64 {
    (2.0 * p * theta_gamma * j).powf(1.0 / (1.0 - theta_gamma))
}

/// Closed form of the constant κ with
/// `min_λ G_γ[w^λ] = κ (‖w‖^{2p}_{2p,γ} Q_γ^{2p}[w])^{θ_γ}`.
///
/// Reconstructed from the one-dimensional minimization of
/// `½λ^A X + (p+1)^{−1} λ^{−B} Y`: the minimum equals
/// `(A+B)/(2B) · (2B/(A(p+1)))^{A/(A+B)} X^{B/(A+B)} Y^{A/(A+B)}`.
pub fn kappa(params: &ProblemParams) -> f64 {
    let (a, b) = params.dilation_exponents();
    let p = params.p;
    (a + b) / (2.0 * b) * (2.0 * b / (a * (p + 1.0))).powf(a / (a + b))
}

/// κ by direct numerical minimization over λ, for given gradient energy
/// `x = ‖∇w‖²` and `y = ‖w‖^{p+1}_{p+1,γ}`; independent of `x, y` up to rounding.
pub fn kappa_numeric(params: &ProblemParams, x: f64, y: f64) -> f64 {
    let (a, b) = params.dilation_exponents();
    let p = params.p;
    let g = |log_lambda: f64| {
        let lambda = log_lambda.exp();
        0.5 * lambda.powf(a) * x + lambda.powf(-b) * y / (p + 1.0)
    };
    let span = (50.0 + x.ln().abs() + y.ln().abs()) / (a + b);
    let (_, min) = golden_section(g, -span, span, 1e-13);
    let vt = params.derive().vartheta;
    let th = params.derive().theta_gamma;
    let homogeneous = (x.powf(vt / 2.0) * y.powf((1.0 - vt) / (p + 1.0))).powf(2.0 * p * th);
    min / homogeneous
}

/// Golden-section search for the minimum of a unimodal function on `[lo, hi]`.
pub(crate) fn golden_section<F: Fn(f64) -> f64>(
    f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (hi - lo).abs() > tol * (1.0 + x1.abs()) {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn admissible() -> impl Strategy<Value = ProblemParams> {
        (3u32..9, 0.0f64..1.95, 0.01f64..0.99).prop_filter_map("admissible", |(d, g, frac)| {
            let upper = p_upper(d, g);
            if upper <= 1.0 {
                return None;
            }
            validate(d, g, 1.0 + frac * (upper - 1.0)).ok()
        })
    }

    proptest! {
        #[test]
        fn holder_identity(params in admissible()) {
            let e = params.derive();
            let p = params.p();
            let lhs = 1.0 / (2.0 * p);
            let rhs = e.vartheta / e.two_star_gamma + (1.0 - e.vartheta) / (p + 1.0);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn derived_invariants(params in admissible()) {
            let e = params.derive();
            let p = params.p();
            let g = params.gamma();
            prop_assert!(e.vartheta > 0.0 && e.vartheta <= 1.0);
            prop_assert!(e.theta_gamma > 0.0 && e.theta_gamma < 1.0);
            prop_assert!(e.eta > 0.0 && e.a_gamma > 0.0 && e.b_gamma > 0.0);
            prop_assert!(e.d_gamma >= params.dim());
            if g > 0.0 { prop_assert!(e.d_gamma > params.dim()); }
            prop_assert!(e.m_diff > e.m_one && e.m_diff < 1.0);
            let ratio = e.a_gamma / e.b_gamma;
            prop_assert!((ratio - p * (2.0 - g) / e.eta).abs() < 1e-12 * ratio);
        }

        #[test]
        fn m_and_p_inverse(params in admissible()) {
            let p = params.p();
            prop_assert!((p_from_m(m_from_p(p)) - p).abs() < 1e-12 * p);
        }

        #[test]
        fn kappa_routes_agree(params in admissible(), x in 0.01f64..100.0, y in 0.01f64..100.0) {
            let closed = kappa(&params);
            let numeric = kappa_numeric(&params, x, y);
            prop_assert!((closed - numeric).abs() < 1e-9 * closed);
        }
    }
}
