//! Integrals of the `γ → 0` selection argument around the unweighted optimizer
//! `w_0 = (a_0/(b_0 + r²))^{1/(p−1)}`: the kernel `K`, the functions `ℓ`, `m_d`,
//! `G` and `F`, and the inverse-square moment of `K`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{validate, ParamsError, ProblemParams};
use crate::profiles::{Barenblatt, RadialFunction};
use crate::quadrature::{
    integrate_intervals, sphere_area, sphere_cubature, QuadratureError, RadialQuadrature,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("K changes sign {count} times on the scan grid")]
    MultipleSignChanges { count: usize },
}

const ANGLE_TOL: f64 = 1e-13;
const RADIAL_TOL: f64 = 1e-11;

/// Immutable data shared by the selection integrals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SelectionContext {
    pub params: ProblemParams,
    pub profile: Barenblatt,
    /// `∫ w_0^{2p} dx`.
    pub mass: f64,
    /// Crossing radius `R` of `K`, by bisection.
    pub crossing_radius: f64,
}

impl SelectionContext {
    pub fn new(d: u32, p: f64) -> Result<Self, SelectionError> {
        let params = validate(d, 0.0, p)?;
        let profile = Barenblatt::w_gamma_star(&params);
        let q = RadialQuadrature::with_rel_tol(RADIAL_TOL);
        let mass = sphere_area(d)
            * q.integrate(|r| profile.value(r).powf(2.0 * p), d, 0.0)?
                .value;
        let mut ctx = SelectionContext {
            params,
            profile,
            mass,
            crossing_radius: f64::NAN,
        };
        let changes = ctx.sign_changes(4000);
        if changes != 1 {
            return Err(SelectionError::MultipleSignChanges { count: changes });
        }
        ctx.crossing_radius = ctx.bisect_crossing();
        Ok(ctx)
    }

    pub fn d(&self) -> u32 {
        self.params.d()
    }

    pub fn p(&self) -> f64 {
        self.params.p()
    }

    /// `K(r) = w_0^{2p}/2p − w_0^{p+1}/(p+1)`.
    pub fn k_profile(&self, r: f64) -> f64 {
        let p = self.p();
        let w = self.profile.value(r);
        w.powf(2.0 * p) / (2.0 * p) - w.powf(p + 1.0) / (p + 1.0)
    }

    /// Closed form of the crossing radius: `w_0(R)^{p−1} = 2p/(p+1)`.
    pub fn crossing_radius_closed_form(&self) -> f64 {
        let p = self.p();
        (self.profile.a * (p + 1.0) / (2.0 * p) - self.profile.b).sqrt()
    }

    /// Sign changes of `K` on a logarithmic scan over twelve decades.
    pub fn sign_changes(&self, points: usize) -> usize {
        let scale = self.profile.b.sqrt();
        let mut last = self.k_profile(0.0).signum();
        let mut count = 0;
        for i in 0..=points {
            let r = scale * 10f64.powf(-6.0 + 12.0 * i as f64 / points as f64);
            let s = self.k_profile(r);
            if s == 0.0 {
                continue;
            }
            if s.signum() != last {
                count += 1;
                last = s.signum();
            }
        }
        count
    }

    fn bisect_crossing(&self) -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0);
        while self.k_profile(hi) >= 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        while hi - lo > 1e-12 * hi {
            let mid = 0.5 * (lo + hi);
            if self.k_profile(mid) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn radial(&self, f: impl Fn(f64) -> f64) -> Result<f64, SelectionError> {
        Ok(RadialQuadrature::with_rel_tol(RADIAL_TOL)
            .half_line(f)?
            .value)
    }

    /// `∫ K dx` by quadrature.
    pub fn total_k_integral(&self) -> Result<f64, SelectionError> {
        let d = self.d() as f64;
        Ok(sphere_area(self.d()) * self.radial(|r| self.k_profile(r) * r.powf(d - 1.0))?)
    }

    /// `(p−1)(d−2)M/(2p(d+2−p(d−2)))`.
    pub fn total_k_closed_form(&self) -> f64 {
        let (d, p) = (self.d() as f64, self.p());
        (p - 1.0) * (d - 2.0) * self.mass / (2.0 * p * (d + 2.0 - p * (d - 2.0)))
    }

    /// `∫ |x|^{−2} K dx`.
    pub fn inverse_square_integral(&self) -> Result<f64, SelectionError> {
        let d = self.d() as f64;
        Ok(sphere_area(self.d()) * self.radial(|r| self.k_profile(r) * r.powf(d - 3.0))?)
    }

    /// The matrix `∫ (δ_ij/|x|² − 2x_ix_j/|x|⁴) K dx`, angular part by product cubature.
    pub fn orthogonality_matrix(
        &self,
        angular_nodes: usize,
    ) -> Result<Vec<Vec<f64>>, SelectionError> {
        let d = self.d() as usize;
        let dd = self.d() as f64;
        let radial = self.radial(|r| self.k_profile(r) * r.powf(dd - 3.0))?;
        let rule = sphere_cubature(self.d(), angular_nodes);
        let mut m = vec![vec![0.0; d]; d];
        for (x, w) in &rule {
            for i in 0..d {
                for j in 0..d {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    m[i][j] += w * (delta - 2.0 * x[i] * x[j]) * radial;
                }
            }
        }
        Ok(m)
    }

    /// `G′(t) = |S^{d−2}|/t ∫₀^∞ K(r) ℓ(r²/t) r^{d−1} dr`.
    pub fn g_prime(&self, t: f64) -> Result<f64, SelectionError> {
        let d = self.d();
        let dd = d as f64;
        let failure = std::cell::RefCell::new(None);
        let integral = self.radial(|r| {
            let k = self.k_profile(r);
            if k == 0.0 {
                return 0.0;
            }
            match ell(r * r / t, d) {
                Ok(l) => k * l * r.powf(dd - 1.0),
                Err(e) => {
                    *failure.borrow_mut() = Some(e);
                    0.0
                }
            }
        });
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        Ok(sphere_area(d - 1) / t * integral?)
    }

    /// `|S^{d−2}|/t · ℓ(R²/t) ∫₀^∞ K r^{d−1} dr`.
    pub fn g_prime_lower_bound(&self, t: f64) -> Result<f64, SelectionError> {
        let d = self.d();
        let radial = self.total_k_integral()? / sphere_area(d);
        let rr = self.crossing_radius;
        Ok(sphere_area(d - 1) / t * ell(rr * rr / t, d)? * radial)
    }

    /// `G(t) = ∫ K(|x|) log|x + √t e| dx`.
    pub fn g_value(&self, t: f64) -> Result<f64, SelectionError> {
        let d = self.d();
        let dd = d as f64;
        if t == 0.0 {
            return Ok(
                sphere_area(d) * self.radial(|r| self.k_profile(r) * r.ln() * r.powf(dd - 1.0))?
            );
        }
        let y = t.sqrt();
        self.g_at_distance(y.ln(), |r| r / y)
    }

    /// `F(y) = G(|y|²)`, evaluated through `log|y|` so that huge `|y|` stay finite.
    pub fn f_selection(&self, y_mag: f64) -> Result<f64, SelectionError> {
        if y_mag == 0.0 {
            return self.g_value(0.0);
        }
        self.g_at_distance(y_mag.ln(), |r| r / y_mag)
    }

    // log|x + y e| = log|y| + ½ log(1 + 2ρ cos φ + ρ²), ρ = |x|/|y|.
    fn g_at_distance(&self, log_y: f64, rho: impl Fn(f64) -> f64) -> Result<f64, SelectionError> {
        let d = self.d();
        let dd = d as f64;
        let total = self.total_k_integral()?;
        let failure = std::cell::RefCell::new(None);
        let scale = total * (1.0 + log_y.abs());
        let quad = RadialQuadrature {
            abs_tol: RADIAL_TOL * scale / sphere_area(d - 1),
            ..RadialQuadrature::with_rel_tol(RADIAL_TOL)
        };
        let correction = quad.half_line(|r| {
            let k = self.k_profile(r);
            if k == 0.0 {
                return 0.0;
            }
            match log_sphere_average(rho(r), d) {
                Ok(a) => k * a * r.powf(dd - 1.0),
                Err(e) => {
                    *failure.borrow_mut() = Some(e);
                    0.0
                }
            }
        });
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        Ok(log_y * total + sphere_area(d - 1) * correction?.value)
    }
}

/// `∫₀^{π/2} (sin θ)^n dθ`.
pub fn sine_power_integral(n: u32) -> f64 {
    match n {
        0 => std::f64::consts::FRAC_PI_2,
        1 => 1.0,
        _ => (n as f64 - 1.0) / n as f64 * sine_power_integral(n - 2),
    }
}

fn angular(f: impl Fn(f64) -> f64, s: f64) -> Result<f64, QuadratureError> {
    // The integrands peak in a layer of width ~|1−s| at θ = 0.
    let half = std::f64::consts::FRAC_PI_2;
    let eps = (1.0 - s).abs();
    let mut cuts = vec![0.0];
    for k in [0.25, 1.0, 4.0, 16.0] {
        let c = k * eps;
        if c > 0.0 && c < half && c > *cuts.last().unwrap() {
            cuts.push(c);
        }
    }
    cuts.push(half);
    let intervals: Vec<(f64, f64)> = cuts.windows(2).map(|w| (w[0], w[1])).collect();
    Ok(integrate_intervals(f, &intervals, ANGLE_TOL, 1e-300, 8000)?.value)
}

/// `ℓ(s) = ∫₀^{π/2} (1 − s cos 2θ)/(1 + s² − 2s cos 2θ) (sin θ)^{d−2} dθ`,
/// with numerator and denominator written as `(1−s) + 2s sin²θ` and
/// `(1−s)² + 4s sin²θ` to avoid cancellation near `(θ, s) = (0, 1)`.
pub fn ell(s: f64, d: u32) -> Result<f64, SelectionError> {
    let n = (d - 2) as i32;
    let f = |theta: f64| {
        let st = theta.sin();
        let s2 = st * st;
        let num = (1.0 - s) + 2.0 * s * s2;
        let den = (1.0 - s) * (1.0 - s) + 4.0 * s * s2;
        if den == 0.0 {
            return 0.5 * st.powi(n);
        }
        num / den * st.powi(n)
    };
    Ok(angular(f, s)?)
}

/// `m_d(s) = ∫₀^{π/2} (1 − s²)/((1+s)² − 4s cos²θ) (sin θ)^{d−2} dθ`.
pub fn m_d(s: f64, d: u32) -> Result<f64, SelectionError> {
    let n = (d - 2) as i32;
    let f = |theta: f64| {
        let st = theta.sin();
        let den = (1.0 - s) * (1.0 - s) + 4.0 * s * st * st;
        if den == 0.0 {
            return 0.0;
        }
        (1.0 - s * s) / den * st.powi(n)
    };
    Ok(angular(f, s)?)
}

/// `m_3(s) = (1−s)/(2√s) · artanh(2√s/(1+s))`.
pub fn m3_closed(s: f64) -> f64 {
    if s == 1.0 {
        return 0.0;
    }
    let q = s.sqrt();
    // artanh(2q/(1+q²)) = ln|(1+q)/(1−q)|
    (1.0 - s) / (2.0 * q) * ((1.0 + q) / (1.0 - q)).abs().ln()
}

/// `∫₀^π ½ log(1 + 2ρ cos φ + ρ²) (sin φ)^{d−2} dφ`, the sphere average of
/// `log|ρθ + e|` up to the factor `|S^{d−2}|`.
pub fn log_sphere_average(rho: f64, d: u32) -> Result<f64, SelectionError> {
    if rho > 1.0 {
        let full = 2.0 * sine_power_integral(d - 2);
        return Ok(rho.ln() * full + log_sphere_average(1.0 / rho, d)?);
    }
    if rho == 0.0 {
        return Ok(0.0);
    }
    let n = (d - 2) as i32;
    let pi = std::f64::consts::PI;
    let f = |phi: f64| {
        // 1 + 2ρ cos φ + ρ² = (1−ρ)² + 4ρ cos²(φ/2)
        let sn = phi.sin().powi(n);
        if rho < 0.5 {
            return 0.5 * (rho * (2.0 * phi.cos() + rho)).ln_1p() * sn;
        }
        let c = (0.5 * (pi - phi)).sin();
        let arg = (1.0 - rho) * (1.0 - rho) + 4.0 * rho * c * c;
        if arg == 0.0 {
            return 0.0;
        }
        0.5 * arg.ln() * sn
    };
    let eps = (1.0 - rho).max(1e-300);
    let mut cuts = vec![0.0];
    for k in [16.0, 4.0, 1.0, 0.25] {
        let c = pi - k * eps;
        if c > *cuts.last().unwrap() && c < pi {
            cuts.push(c);
        }
    }
    cuts.push(pi);
    let intervals: Vec<(f64, f64)> = cuts.windows(2).map(|w| (w[0], w[1])).collect();
    // A(ρ) = O(ρ²) is a cancellation of O(ρ) terms, so the error is measured against ρ.
    Ok(integrate_intervals(f, &intervals, ANGLE_TOL, ANGLE_TOL * rho, 8000)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn kernel_sign_structure() {
        let ctx = SelectionContext::new(3, 2.0).unwrap();
        assert!((ctx.k_profile(0.0) - (64.0 - 64.0 / 3.0)).abs() < 1e-12);
        assert!(rel(ctx.crossing_radius, ctx.crossing_radius_closed_form()) < 1e-11);
        assert_eq!(ctx.sign_changes(4000), 1);
        let far = [1e2, 1e3, 1e4];
        for r in far {
            assert!(ctx.k_profile(r) < 0.0);
        }
        assert!(ctx.k_profile(1e4).abs() < ctx.k_profile(1e2).abs());
    }

    #[test]
    fn total_k_identity() {
        for (d, p, coef) in [(3, 2.0, 1.0 / 12.0), (4, 1.5, 1.0 / 9.0)] {
            let ctx = SelectionContext::new(d, p).unwrap();
            let num = ctx.total_k_integral().unwrap();
            assert!(rel(num, ctx.total_k_closed_form()) < 1e-8);
            assert!(rel(ctx.total_k_closed_form(), coef * ctx.mass) < 1e-14);
            assert!(num > 0.0);
        }
    }

    #[test]
    fn ell_values() {
        assert!((ell(0.0, 3).unwrap() - 1.0).abs() < 1e-14);
        assert!((ell(1.0, 3).unwrap() - 0.5).abs() < 1e-12);
        assert!(ell(1e3, 3).unwrap() < 1e-2);
        assert!(ell(1e3, 3).unwrap() > 0.0);
    }

    #[test]
    fn m3_values() {
        assert!((m3_closed(0.25) - 0.75 * 3f64.ln()).abs() < 1e-15);
        assert!((m3_closed(0.25) - 0.823959).abs() < 1e-6);
        assert_eq!(m3_closed(1.0), 0.0);
        assert!(m_d(1.0, 3).unwrap().abs() < 1e-15);
        for i in 1..50 {
            let s = i as f64 / 50.0;
            assert!((m_d(s, 3).unwrap() - m3_closed(s)).abs() < 1e-10, "{s}");
        }
    }

    #[test]
    fn m_d_antisymmetry_and_decomposition() {
        for d in [3u32, 4, 5] {
            for s in [0.2, 0.5, 0.8] {
                let (a, b) = (m_d(s, d).unwrap(), m_d(1.0 / s, d).unwrap());
                assert!((a + b).abs() < 1e-9);
                let l = ell(s, d).unwrap();
                assert!((l - 0.5 * sine_power_integral(d - 2) - 0.5 * a).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ell_monotone_and_positive() {
        for d in [3u32, 4, 5] {
            let vals: Vec<f64> = (0..50)
                .map(|i| ell(10f64.powf(-2.0 + 4.0 * i as f64 / 49.0), d).unwrap())
                .collect();
            assert!(vals.iter().all(|&v| v > 0.0));
            assert!(vals.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn m_d_derivative_ordering() {
        let h = 1e-5;
        let deriv = |s: f64, d: u32| (m_d(s + h, d).unwrap() - m_d(s - h, d).unwrap()) / (2.0 * h);
        for i in 1..20 {
            let s = i as f64 / 20.0;
            let m3p = (m3_closed(s + h) - m3_closed(s - h)) / (2.0 * h);
            assert!(m3p < 0.0);
            let d4 = deriv(s, 4);
            let d5 = deriv(s, 5);
            assert!(d4 <= m3p + 1e-7 && d5 <= d4 + 1e-7, "{s}: {m3p} {d4} {d5}");
        }
    }

    #[test]
    fn m_d_decreasing_in_s() {
        let h = 1e-5;
        for d in [3u32, 4, 5] {
            for i in 1..20 {
                let s = i as f64 / 20.0;
                assert!(m_d(s + h, d).unwrap() < m_d(s - h, d).unwrap());
            }
        }
    }

    #[test]
    fn g_prime_positive_and_bounded_below() {
        let ctx = SelectionContext::new(3, 2.0).unwrap();
        for t in [0.1, 1.0, 10.0] {
            let g = ctx.g_prime(t).unwrap();
            let lb = ctx.g_prime_lower_bound(t).unwrap();
            assert!(g > 0.0 && g >= lb, "{t}: {g} {lb}");
        }
    }

    #[test]
    fn g_prime_matches_difference_quotient() {
        let ctx = SelectionContext::new(3, 2.0).unwrap();
        for t in [0.1, 1.0] {
            let h = 1e-4 * t;
            let fd = (ctx.g_value(t + h).unwrap() - ctx.g_value(t - h).unwrap()) / (2.0 * h);
            assert!(rel(ctx.g_prime(t).unwrap(), fd) < 1e-5);
        }
    }

    #[test]
    fn g_prime_small_t_limit() {
        let ctx = SelectionContext::new(3, 2.0).unwrap();
        let limit = (3.0 - 2.0) / 6.0 * ctx.inverse_square_integral().unwrap();
        let g = ctx.g_prime(1e-6).unwrap();
        assert!(rel(g, limit) < 1e-2, "{g} {limit}");
        assert!(g * 1e-6 < 1e-4);
    }

    #[test]
    fn f_selection_minimized_at_origin() {
        let ctx = SelectionContext::new(3, 2.0).unwrap();
        let f0 = ctx.f_selection(0.0).unwrap();
        let f_half = ctx.f_selection(0.5).unwrap();
        let f2 = ctx.f_selection(2.0).unwrap();
        assert!(f_half > f0 && f2 > f_half);
        assert!(rel(f_half, ctx.g_value(0.25).unwrap()) < 1e-12);
    }

    #[test]
    fn f_selection_log_asymptotics() {
        let ctx = SelectionContext::new(3, 2.0).unwrap();
        let total = ctx.total_k_integral().unwrap();
        let f0 = ctx.f_selection(0.0).unwrap();
        let mut last = f64::INFINITY;
        for y in [1e10, 1e50, 1e100] {
            let ratio = (ctx.f_selection(y).unwrap() - f0) / y.ln();
            let dev = (ratio - total).abs() / total;
            assert!(dev < last);
            last = dev;
        }
        assert!(last < 0.02);
    }

    #[test]
    fn log_average_closed_form_in_three_dimensions() {
        // ½∫_{-1}^{1} log(1+ρ²+2ρu) du
        for rho in [0.1, 0.5, 0.9, 0.999, 1.0, 2.0, 30.0] {
            let exact = if rho == 1.0 {
                2.0 * 2f64.ln() - 1.0
            } else {
                let a: f64 = (1.0 + rho) * (1.0 + rho);
                let b: f64 = (1.0 - rho) * (1.0 - rho);
                (a * a.ln() - b * b.ln() - 4.0 * rho) / (4.0 * rho)
            };
            let num = log_sphere_average(rho, 3).unwrap();
            assert!(
                (num - exact).abs() < 1e-11 * exact.abs().max(1.0),
                "{rho} {num} {exact}"
            );
        }
    }

    #[test]
    fn inverse_square_and_orthogonality() {
        for (d, p) in [(3, 2.0), (4, 1.5), (5, 1.2)] {
            let ctx = SelectionContext::new(d, p).unwrap();
            let isi = ctx.inverse_square_integral().unwrap();
            assert!(isi > 0.0);
            let dd = d as f64;
            let by_hand = sphere_area(d)
                * RadialQuadrature::default()
                    .integrate(|r| ctx.k_profile(r), d - 2, 0.0)
                    .unwrap()
                    .value;
            assert!(rel(isi, by_hand) < 1e-10);
            let m = ctx.orthogonality_matrix(24).unwrap();
            for i in 0..d as usize {
                assert!(rel(m[i][i], (dd - 2.0) / dd * isi) < 1e-8);
                for j in 0..d as usize {
                    if i != j {
                        assert!(m[i][j].abs() < 1e-10 * isi);
                    }
                }
            }
        }
    }

    #[test]
    fn positivity_over_admissible_grid() {
        for d in [3u32, 4, 5, 6] {
            let upper = dd_upper(d);
            for frac in [0.1, 0.3, 0.5, 0.7, 0.9] {
                let ctx = SelectionContext::new(d, 1.0 + frac * (upper - 1.0)).unwrap();
                assert!(ctx.total_k_closed_form() > 0.0);
                assert!(ctx.total_k_integral().unwrap() > 0.0);
            }
        }
    }

    fn dd_upper(d: u32) -> f64 {
        d as f64 / (d as f64 - 2.0)
    }
}
