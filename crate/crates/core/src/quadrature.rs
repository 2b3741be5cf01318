//! Adaptive Gauss–Kronrod integration on finite intervals and on the half line.
//!
//! Half-line integrals are split at `r = 1`; the tail is mapped by `u = 1/r`
//! so that algebraic decay becomes an integrable endpoint behaviour at `u = 0`.
//! Both pieces are graded cubically toward their singular end (`r = 0`,
//! `u = 0`). No tail is ever truncated.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("adaptive refinement exhausted after {subdivisions} panels (value {value:e}, error {error:e})")]
    NonConvergent {
        value: f64,
        error: f64,
        subdivisions: usize,
    },
    #[error("integrand returned NaN at r = {at:e}")]
    NaNEncountered { at: f64 },
}

const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.0,
];

const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077958109831074,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];

/// Value and error estimate of an integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub panels: usize,
}

/// How the half line is mapped onto finite panels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Substitution {
    /// Identity on `[0, 1]`, `u = 1/r` on `[1, ∞)`.
    SplitInversion,
}

/// Tolerances of the adaptive half-line scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialQuadrature {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_panels: usize,
    pub substitution: Substitution,
}

impl Default for RadialQuadrature {
    fn default() -> Self {
        RadialQuadrature {
            rel_tol: 1e-11,
            abs_tol: 0.0,
            max_panels: 4000,
            substitution: Substitution::SplitInversion,
        }
    }
}

/// A panel of the refined partition, with the 21 Kronrod nodes and weights
/// already mapped to the panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub a: f64,
    pub b: f64,
    pub nodes: [f64; 21],
    pub weights: [f64; 21],
}

impl Panel {
    fn new(a: f64, b: f64) -> Panel {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut nodes = [0.0; 21];
        let mut weights = [0.0; 21];
        nodes[10] = c;
        weights[10] = WGK[10] * h;
        for j in 0..10 {
            nodes[j] = c - h * XGK[j];
            nodes[20 - j] = c + h * XGK[j];
            weights[j] = WGK[j] * h;
            weights[20 - j] = WGK[j] * h;
        }
        Panel {
            a,
            b,
            nodes,
            weights,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    resabs: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<Segment, f64> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    if fc.is_nan() {
        return Err(c);
    }
    let mut res_k = WGK[10] * fc;
    let mut res_g = 0.0;
    let mut res_abs = WGK[10] * fc.abs();
    for j in 0..10 {
        let x = h * XGK[j];
        let (x1, x2) = (c - x, c + x);
        let (f1, f2) = (f(x1), f(x2));
        if f1.is_nan() {
            return Err(x1);
        }
        if f2.is_nan() {
            return Err(x2);
        }
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let hh = h.abs();
    let value = res_k * h;
    let res_abs = res_abs * hh;
    // The raw Kronrod–Gauss difference is kept: the usual rescaling is too
    // optimistic on panels touching an algebraic endpoint singularity.
    let mut error = ((res_k - res_g) * h).abs();
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok(Segment {
        a,
        b,
        value,
        error,
        resabs: res_abs,
    })
}

/// Globally adaptive G10K21 on a finite collection of intervals.
///
/// The interval with the largest error estimate is bisected until the total
/// error is below `max(abs_tol, rel_tol·|I|)`, or until round-off makes further
/// refinement pointless.
pub fn integrate_intervals<F: Fn(f64) -> f64>(
    f: F,
    intervals: &[(f64, f64)],
    rel_tol: f64,
    abs_tol: f64,
    max_panels: usize,
) -> Result<Estimate, QuadratureError> {
    adapt(&f, intervals, rel_tol, abs_tol, max_panels).map(|(est, _)| est)
}

/// [`integrate_intervals`] on the single interval `[a, b]`.
pub fn integrate_interval<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<Estimate, QuadratureError> {
    integrate_intervals(f, &[(a, b)], rel_tol, abs_tol, 4000)
}

fn adapt<F: Fn(f64) -> f64>(
    f: &F,
    intervals: &[(f64, f64)],
    rel_tol: f64,
    abs_tol: f64,
    max_panels: usize,
) -> Result<(Estimate, Vec<Segment>), QuadratureError> {
    let mut heap = BinaryHeap::new();
    let mut value = 0.0;
    let mut error = 0.0;
    let mut roundoff = 0.0;
    for &(a, b) in intervals {
        let seg = kronrod(f, a, b).map_err(|at| QuadratureError::NaNEncountered { at })?;
        value += seg.value;
        error += seg.error;
        roundoff += seg.resabs;
        heap.push(seg);
    }
    let mut done = Vec::new();
    loop {
        let target = abs_tol.max(rel_tol * value.abs());
        let floor = 50.0 * f64::EPSILON * roundoff;
        if error <= target || error <= 1.5 * floor {
            break;
        }
        if heap.len() + done.len() >= max_panels {
            return Err(QuadratureError::NonConvergent {
                value,
                error,
                subdivisions: heap.len() + done.len(),
            });
        }
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a.min(worst.b) && mid < worst.a.max(worst.b)) {
            // Interval can no longer be split in floating point.
            done.push(worst);
            if heap.is_empty() {
                break;
            }
            continue;
        }
        let left = kronrod(f, worst.a, mid).map_err(|at| QuadratureError::NaNEncountered { at })?;
        let right =
            kronrod(f, mid, worst.b).map_err(|at| QuadratureError::NaNEncountered { at })?;
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        roundoff += left.resabs + right.resabs - worst.resabs;
        heap.push(left);
        heap.push(right);
    }
    // Re-sum to remove cancellation from incremental updates.
    let mut segments: Vec<Segment> = heap.into_vec();
    segments.extend(done);
    segments.sort_by(|x, y| x.a.total_cmp(&y.a));
    let value: f64 = segments.iter().map(|s| s.value).sum();
    let error: f64 = segments.iter().map(|s| s.error).sum();
    let panels = segments.len();
    Ok((
        Estimate {
            value,
            error,
            panels,
        },
        segments,
    ))
}

impl RadialQuadrature {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        RadialQuadrature {
            rel_tol,
            ..Default::default()
        }
    }

    /// `∫₀^∞ f(r) dr`.
    pub fn half_line<F: Fn(f64) -> f64>(&self, f: F) -> Result<Estimate, QuadratureError> {
        let g = |x: f64| split_integrand(&f, x);
        integrate_intervals(
            g,
            &[(-1.0, 0.0), (0.0, 1.0)],
            self.rel_tol,
            self.abs_tol,
            self.max_panels,
        )
    }

    /// `∫₀^∞ f(r) r^{d−1−γ} dr`. The caller multiplies by `|S^{d−1}|` for
    /// full-space integrals.
    pub fn integrate<F: Fn(f64) -> f64>(
        &self,
        f: F,
        d: u32,
        gamma: f64,
    ) -> Result<Estimate, QuadratureError> {
        let k = d as f64 - 1.0 - gamma;
        self.half_line(|r| {
            let v = f(r);
            if v == 0.0 {
                0.0
            } else {
                v * r.powf(k)
            }
        })
    }

    /// The refined panel set produced for `f`, in the graded variable `x`:
    /// `x ∈ [0,1]` stands for `r = x³` and `x ∈ [−1,0)` for `r = |x|^{−3}`.
    pub fn panels_for<F: Fn(f64) -> f64>(&self, f: F) -> Result<Vec<Panel>, QuadratureError> {
        let g = |x: f64| split_integrand(&f, x);
        let (_, segments) = adapt(
            &g,
            &[(-1.0, 0.0), (0.0, 1.0)],
            self.rel_tol,
            self.abs_tol,
            self.max_panels,
        )?;
        Ok(segments.iter().map(|s| Panel::new(s.a, s.b)).collect())
    }

    /// Self-test `∫₀^∞ r^{d−1−γ} e^{−r} dr = Γ(d−γ)`; returns the relative error.
    pub fn gamma_self_test(&self, d: u32, gamma: f64) -> Result<f64, QuadratureError> {
        let est = self.integrate(|r| (-r).exp(), d, gamma)?;
        let exact = statrs::function::gamma::gamma(d as f64 - gamma);
        Ok((est.value - exact).abs() / exact)
    }
}

// Cubic grading toward both ends of the half line: x in [0,1] maps to
// r = x³, x in [−1,0) maps to u = |x|³, r = 1/u.
fn split_integrand<F: Fn(f64) -> f64>(f: &F, x: f64) -> f64 {
    if x >= 0.0 {
        let r = x * x * x;
        let v = f(r);
        if v == 0.0 {
            0.0
        } else {
            3.0 * x * x * v
        }
    } else {
        let t = -x;
        let u = t * t * t;
        if u <= 0.0 {
            return 0.0;
        }
        let r = 1.0 / u;
        if !r.is_finite() {
            return 0.0;
        }
        let v = f(r);
        if v == 0.0 {
            0.0
        } else {
            3.0 * t * t * v * r * r
        }
    }
}

/// `|S^{n−1}| = 2π^{n/2}/Γ(n/2)`, by the exact two-step recursion.
pub fn sphere_area(n: u32) -> f64 {
    use std::f64::consts::PI;
    match n {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI / (n as f64 - 2.0) * sphere_area(n - 2),
    }
}

/// `∫₀^∞ (b + r^{2−γ})^{−q} r^{d−1−γ} dr = b^{s−q} B(s, q−s)/(2−γ)`, `s = (d−γ)/(2−γ)`.
pub fn barenblatt_moment(d: u32, gamma: f64, b: f64, q: f64) -> f64 {
    let sigma = 2.0 - gamma;
    let s = (d as f64 - gamma) / sigma;
    assert!(q > s, "moment diverges: q = {q} <= {s}");
    let ln_beta = statrs::function::beta::ln_beta(s, q - s);
    ((s - q) * b.ln() + ln_beta).exp() / sigma
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 {
                1.0
            } else if n == 1 {
                z
            } else {
                p1
            };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Product cubature on `S^{d−1}` in hyperspherical angles: Gauss–Legendre in
/// the polar angles (with their sine Jacobians) and a uniform rule in the
/// azimuth. The polar rules converge spectrally for smooth integrands.
pub fn sphere_cubature(d: u32, n: usize) -> Vec<(Vec<f64>, f64)> {
    assert!(d >= 2);
    let (gx, gw) = gauss_legendre(n);
    let polar: Vec<(f64, f64)> = gx
        .iter()
        .zip(&gw)
        .map(|(&x, &w)| {
            (
                std::f64::consts::FRAC_PI_2 * (x + 1.0),
                std::f64::consts::FRAC_PI_2 * w,
            )
        })
        .collect();
    let n_az = 2 * n;
    let mut out = Vec::new();
    let dims = d as usize;
    let n_polar = dims - 2;
    let mut idx = vec![0usize; n_polar];
    loop {
        let mut weight = 1.0;
        let mut prefix = 1.0;
        let mut point = vec![0.0; dims];
        for (k, &i) in idx.iter().enumerate() {
            let (phi, w) = polar[i];
            weight *= w * phi.sin().powi((dims - 2 - k) as i32);
            point[k] = prefix * phi.cos();
            prefix *= phi.sin();
        }
        for j in 0..n_az {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / n_az as f64;
            let mut pt = point.clone();
            pt[dims - 2] = prefix * phi.cos();
            pt[dims - 1] = prefix * phi.sin();
            out.push((pt, weight * 2.0 * std::f64::consts::PI / n_az as f64));
        }
        let mut k = 0;
        loop {
            if k == n_polar {
                return out;
            }
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn linearity(alpha in -3.0f64..3.0, beta in -3.0f64..3.0, b in 0.2f64..3.0) {
            let q = RadialQuadrature::default();
            let f = |r: f64| (-r).exp();
            let g = move |r: f64| (b + r * r).powi(-3);
            let lhs = q.integrate(|r| alpha * f(r) + beta * g(r), 3, 0.5).unwrap().value;
            let rhs = alpha * q.integrate(f, 3, 0.5).unwrap().value + beta * q.integrate(g, 3, 0.5).unwrap().value;
            let scale = alpha.abs() * q.integrate(f, 3, 0.5).unwrap().value + beta.abs() * q.integrate(g, 3, 0.5).unwrap().value;
            prop_assert!((lhs - rhs).abs() <= 1e-10 * scale.max(1e-300));
        }

        #[test]
        fn weight_exponent_consistency(gamma in 0.0f64..1.9, d in 3u32..7) {
            let q = RadialQuadrature::default();
            let f = |r: f64| (1.0 + r * r).powf(-(d as f64) / 2.0 - 1.0);
            let a = q.integrate(f, d, gamma).unwrap().value;
            let b = q.integrate(|r| f(r) * r.powf(-gamma), d, 0.0).unwrap().value;
            prop_assert!((a - b).abs() <= 1e-10 * a.abs());
        }

        #[test]
        fn refinement_monotone(gamma in 0.0f64..1.5, bb in 0.3f64..3.0, extra in 0.5f64..6.0) {
            let d = 3u32;
            let sigma = 2.0 - gamma;
            let s = (d as f64 - gamma) / sigma;
            let qq = s + extra;
            let exact = barenblatt_moment(d, gamma, bb, qq);
            let f = |r: f64| (bb + r.powf(sigma)).powf(-qq);
            let coarse = RadialQuadrature::with_rel_tol(1e-6).integrate(f, d, gamma).unwrap().value;
            let fine = RadialQuadrature::with_rel_tol(5e-7).integrate(f, d, gamma).unwrap().value;
            let (ec, ef) = ((coarse - exact).abs(), (fine - exact).abs());
            prop_assert!(ef <= ec.max(1e-13 * exact), "coarse {} fine {}", ec, ef);
        }
    }
}
