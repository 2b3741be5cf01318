//! Radial profiles: the closed-form Barenblatt family, sampled grid profiles,
//! weighted norms, the interpolation quotient, the energy and the
//! Euler–Lagrange residual.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::ProblemParams;
use crate::quadrature::{QuadratureError, RadialQuadrature};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("weighted norm of order {q} diverges: {reason}")]
    DivergentNorm { q: f64, reason: String },
    #[error("quotient denominator vanishes")]
    ZeroDenominator,
    #[error("second derivative not available at r = {r:e}")]
    MissingSecondDerivative { r: f64 },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("profile i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// A radial function `w(|x|)` with its first derivative.
pub trait RadialFunction: Send + Sync {
    fn value(&self, r: f64) -> f64;

    fn derivative(&self, r: f64) -> f64;

    fn second_derivative(&self, _r: f64) -> Option<f64> {
        None
    }

    /// Decay power `τ` with `w(r) ~ r^{−τ}` as `r → ∞`, when known.
    fn tail_exponent(&self) -> Option<f64> {
        None
    }

    /// `∫₀^∞ |w|^q r^{d−1−γ} dr`.
    fn power_moment(&self, q: f64, d: u32, gamma: f64) -> Result<f64, ProfileError> {
        if let Some(tau) = self.tail_exponent() {
            if tau * q <= d as f64 - gamma {
                return Err(ProfileError::DivergentNorm {
                    q,
                    reason: format!("tail r^-{tau} fails tau*q > d - gamma"),
                });
            }
        }
        let est =
            RadialQuadrature::default().integrate(|r| self.value(r).abs().powf(q), d, gamma)?;
        Ok(est.value)
    }

    /// `∫₀^∞ w′(r)² r^{d−1} dr`.
    fn gradient_moment(&self, d: u32) -> Result<f64, ProfileError> {
        if let Some(tau) = self.tail_exponent() {
            if 2.0 * (tau + 1.0) <= d as f64 {
                return Err(ProfileError::DivergentNorm {
                    q: 2.0,
                    reason: format!("gradient tail r^-{} is not square integrable", tau + 1.0),
                });
            }
        }
        let est = RadialQuadrature::default().integrate(
            |r| {
                let g = self.derivative(r);
                g * g
            },
            d,
            0.0,
        )?;
        Ok(est.value)
    }
}

impl<T: RadialFunction + ?Sized> RadialFunction for &T {
    fn value(&self, r: f64) -> f64 {
        (**self).value(r)
    }
    fn derivative(&self, r: f64) -> f64 {
        (**self).derivative(r)
    }
    fn second_derivative(&self, r: f64) -> Option<f64> {
        (**self).second_derivative(r)
    }
    fn tail_exponent(&self) -> Option<f64> {
        (**self).tail_exponent()
    }
    fn power_moment(&self, q: f64, d: u32, gamma: f64) -> Result<f64, ProfileError> {
        (**self).power_moment(q, d, gamma)
    }
    fn gradient_moment(&self, d: u32) -> Result<f64, ProfileError> {
        (**self).gradient_moment(d)
    }
}

/// `∫₀^∞ (b + r^σ)^{−q} r^{n−1} dr = σ^{−1} b^{n/σ−q} B(n/σ, q−n/σ)`.
pub fn beta_moment(n: f64, sigma: f64, b: f64, q: f64) -> f64 {
    let s = n / sigma;
    ((s - q) * b.ln() + statrs::function::beta::ln_beta(s, q - s)).exp() / sigma
}

/// `(a/(b + r^σ))^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Barenblatt {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    pub k: f64,
}

impl Barenblatt {
    pub fn new(a: f64, b: f64, sigma: f64, k: f64) -> Self {
        Barenblatt { a, b, sigma, k }
    }

    /// `(1 + r^{2−γ})^{−1/(p−1)}`.
    pub fn w_star(params: &ProblemParams) -> Self {
        Barenblatt::new(1.0, 1.0, params.sigma(), 1.0 / (params.p() - 1.0))
    }

    /// The optimizer normalized so that it solves `−Δw + r^{−γ}(w^p − w^{2p−1}) = 0`.
    pub fn w_gamma_star(params: &ProblemParams) -> Self {
        let e = params.derive();
        Barenblatt::new(
            e.a_gamma,
            e.b_gamma,
            params.sigma(),
            1.0 / (params.p() - 1.0),
        )
    }

    /// Stationary density `(C + r^{2−γ})^{1/(m−1)}` of the rescaled flow.
    pub fn stationary(c: f64, m: f64, gamma: f64) -> Self {
        Barenblatt::new(1.0, c, 2.0 - gamma, 1.0 / (1.0 - m))
    }

    pub fn peak(&self) -> f64 {
        (self.a / self.b).powf(self.k)
    }

    /// Closed form of `∫₀^∞ w^q r^{d−1−γ} dr`.
    pub fn moment_closed_form(&self, q: f64, d: u32, gamma: f64) -> f64 {
        self.a.powf(self.k * q) * beta_moment(d as f64 - gamma, self.sigma, self.b, self.k * q)
    }

    /// Closed form of `∫₀^∞ w′² r^{d−1} dr`.
    pub fn gradient_moment_closed_form(&self, d: u32) -> f64 {
        let ks = self.k * self.sigma;
        let n = 2.0 * self.sigma + d as f64 - 2.0;
        ks * ks * self.a.powf(2.0 * self.k) * beta_moment(n, self.sigma, self.b, 2.0 * self.k + 2.0)
    }
}

impl RadialFunction for Barenblatt {
    fn value(&self, r: f64) -> f64 {
        (self.k * (self.a.ln() - (self.b + r.powf(self.sigma)).ln())).exp()
    }

    fn derivative(&self, r: f64) -> f64 {
        if r == 0.0 {
            return 0.0;
        }
        let rs = r.powf(self.sigma);
        -self.k * self.sigma * rs / r * self.value(r) / (self.b + rs)
    }

    fn second_derivative(&self, r: f64) -> Option<f64> {
        let rs = r.powf(self.sigma);
        let dd = self.b + rs;
        let s = self.sigma;
        let w = self.value(r);
        Some(
            -self.k
                * s
                * w
                * ((s - 1.0) * rs / (r * r * dd)
                    - (self.k + 1.0) * s * rs * rs / (r * r * dd * dd)),
        )
    }

    fn tail_exponent(&self) -> Option<f64> {
        Some(self.sigma * self.k)
    }
}

/// `A e^{−(r/L)²}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub amplitude: f64,
    pub width: f64,
}

impl RadialFunction for Gaussian {
    fn value(&self, r: f64) -> f64 {
        let x = r / self.width;
        self.amplitude * (-x * x).exp()
    }
    fn derivative(&self, r: f64) -> f64 {
        -2.0 * r / (self.width * self.width) * self.value(r)
    }
    fn second_derivative(&self, r: f64) -> Option<f64> {
        let w2 = self.width * self.width;
        Some((4.0 * r * r / (w2 * w2) - 2.0 / w2) * self.value(r))
    }
}

/// `w(λr)`.
#[derive(Debug, Clone, Copy)]
pub struct Dilated<W> {
    pub inner: W,
    pub lambda: f64,
}

impl<W: RadialFunction> RadialFunction for Dilated<W> {
    fn value(&self, r: f64) -> f64 {
        self.inner.value(self.lambda * r)
    }
    fn derivative(&self, r: f64) -> f64 {
        self.lambda * self.inner.derivative(self.lambda * r)
    }
    fn second_derivative(&self, r: f64) -> Option<f64> {
        self.inner
            .second_derivative(self.lambda * r)
            .map(|v| self.lambda * self.lambda * v)
    }
    fn tail_exponent(&self) -> Option<f64> {
        self.inner.tail_exponent()
    }
}

/// `c·w(r)`.
#[derive(Debug, Clone, Copy)]
pub struct Scaled<W> {
    pub inner: W,
    pub factor: f64,
}

impl<W: RadialFunction> RadialFunction for Scaled<W> {
    fn value(&self, r: f64) -> f64 {
        self.factor * self.inner.value(r)
    }
    fn derivative(&self, r: f64) -> f64 {
        self.factor * self.inner.derivative(r)
    }
    fn second_derivative(&self, r: f64) -> Option<f64> {
        self.inner.second_derivative(r).map(|v| self.factor * v)
    }
    fn tail_exponent(&self) -> Option<f64> {
        self.inner.tail_exponent()
    }
}

/// `w(r)(1 + ε sin log r)`.
#[derive(Debug, Clone, Copy)]
pub struct Perturbed<W> {
    pub inner: W,
    pub epsilon: f64,
}

impl<W: RadialFunction> RadialFunction for Perturbed<W> {
    fn value(&self, r: f64) -> f64 {
        self.inner.value(r) * (1.0 + self.epsilon * r.ln().sin())
    }
    fn derivative(&self, r: f64) -> f64 {
        let t = r.ln();
        self.inner.derivative(r) * (1.0 + self.epsilon * t.sin())
            + self.inner.value(r) * self.epsilon * t.cos() / r
    }
    fn second_derivative(&self, r: f64) -> Option<f64> {
        let t = r.ln();
        let g = 1.0 + self.epsilon * t.sin();
        let g1 = self.epsilon * t.cos() / r;
        let g2 = -self.epsilon * (t.sin() + t.cos()) / (r * r);
        let w2 = self.inner.second_derivative(r)?;
        Some(w2 * g + 2.0 * self.inner.derivative(r) * g1 + self.inner.value(r) * g2)
    }
    fn tail_exponent(&self) -> Option<f64> {
        self.inner.tail_exponent()
    }
}

/// Geometric grid on `[r_min, r_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GridConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub points_per_decade: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            r_min: 1e-4,
            r_max: 1e4,
            points_per_decade: 64,
        }
    }
}

impl GridConfig {
    pub fn radii(&self) -> Vec<f64> {
        graded_grid(self.r_min, self.r_max, self.points_per_decade)
    }
}

pub fn graded_grid(r_min: f64, r_max: f64, per_decade: usize) -> Vec<f64> {
    let (a, b) = (r_min.log10(), r_max.log10());
    let n = ((b - a) * per_decade as f64).round().max(2.0) as usize;
    (0..=n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / n as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum DerivativeSource {
    Analytic,
    FiniteDifference,
}

/// Sampled radial function on a strictly increasing grid.
///
/// Between nodes the profile is the cubic Hermite interpolant of values and
/// derivatives; below the first node it is continued flat, beyond the last
/// node by the power tail when `tail_exponent` is set and by zero otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", try_from = "RawProfile")]
pub struct RadialProfile {
    radii: Vec<f64>,
    values: Vec<f64>,
    derivatives: Vec<f64>,
    second_derivatives: Vec<f64>,
    tail_exponent: Option<f64>,
    derivative_source: DerivativeSource,
    second_derivative_source: DerivativeSource,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawProfile {
    radii: Vec<f64>,
    values: Vec<f64>,
    derivatives: Vec<f64>,
    second_derivatives: Vec<f64>,
    tail_exponent: Option<f64>,
    derivative_source: DerivativeSource,
    second_derivative_source: DerivativeSource,
}

impl TryFrom<RawProfile> for RadialProfile {
    type Error = ProfileError;

    fn try_from(raw: RawProfile) -> Result<Self, Self::Error> {
        check_grid(&raw.radii, &raw.values)?;
        let n = raw.radii.len();
        if raw.derivatives.len() != n || raw.second_derivatives.len() != n {
            return Err(ProfileError::InvalidProfile("column lengths differ".into()));
        }
        Ok(RadialProfile {
            radii: raw.radii,
            values: raw.values,
            derivatives: raw.derivatives,
            second_derivatives: raw.second_derivatives,
            tail_exponent: raw.tail_exponent,
            derivative_source: raw.derivative_source,
            second_derivative_source: raw.second_derivative_source,
        })
    }
}

fn check_grid(radii: &[f64], values: &[f64]) -> Result<(), ProfileError> {
    if radii.len() < 3 {
        return Err(ProfileError::InvalidProfile(
            "at least three radii are required".into(),
        ));
    }
    if radii.len() != values.len() {
        return Err(ProfileError::InvalidProfile(
            "radii and values differ in length".into(),
        ));
    }
    if !(radii[0] > 0.0) {
        return Err(ProfileError::InvalidProfile(
            "first radius must be positive".into(),
        ));
    }
    if radii.windows(2).any(|w| !(w[1] > w[0])) || !radii[radii.len() - 1].is_finite() {
        return Err(ProfileError::InvalidProfile(
            "radii must be strictly increasing".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ProfileError::InvalidProfile("values must be finite".into()));
    }
    Ok(())
}

/// Second-order differences of `f` with respect to `x` on a nonuniform grid.
fn differentiate(x: &[f64], f: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
        out[i] =
            (h0 * h0 * (f[i + 1] - f[i]) + h1 * h1 * (f[i] - f[i - 1])) / (h0 * h1 * (h0 + h1));
    }
    let one_sided = |i0: usize, i1: usize, i2: usize| {
        let (h1, h2) = (x[i1] - x[i0], x[i2] - x[i0]);
        let (d1, d2) = (f[i1] - f[i0], f[i2] - f[i0]);
        (d1 * h2 * h2 - d2 * h1 * h1) / (h1 * h2 * (h2 - h1))
    };
    out[0] = one_sided(0, 1, 2);
    out[n - 1] = one_sided(n - 1, n - 2, n - 3);
    out
}

impl RadialProfile {
    /// Builds a profile; missing derivatives are computed by differences in `log r`.
    pub fn new(
        radii: Vec<f64>,
        values: Vec<f64>,
        derivatives: Option<Vec<f64>>,
        tail_exponent: Option<f64>,
    ) -> Result<Self, ProfileError> {
        check_grid(&radii, &values)?;
        let t: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
        let (derivatives, derivative_source) = match derivatives {
            Some(d) => {
                if d.len() != radii.len() || d.iter().any(|v| !v.is_finite()) {
                    return Err(ProfileError::InvalidProfile("bad derivative column".into()));
                }
                (d, DerivativeSource::Analytic)
            }
            None => {
                let dt = differentiate(&t, &values);
                let d = dt.iter().zip(&radii).map(|(g, r)| g / r).collect();
                (d, DerivativeSource::FiniteDifference)
            }
        };
        let second_derivatives = second_from_first(&t, &radii, &derivatives);
        Ok(RadialProfile {
            radii,
            values,
            derivatives,
            second_derivatives,
            tail_exponent,
            derivative_source,
            second_derivative_source: DerivativeSource::FiniteDifference,
        })
    }

    /// Samples `f` with its analytic derivatives on `radii`.
    pub fn sample<W: RadialFunction + ?Sized>(f: &W, radii: &[f64]) -> Result<Self, ProfileError> {
        let values = radii.iter().map(|&r| f.value(r)).collect();
        let derivatives = radii.iter().map(|&r| f.derivative(r)).collect();
        let mut profile =
            RadialProfile::new(radii.to_vec(), values, Some(derivatives), f.tail_exponent())?;
        let second: Option<Vec<f64>> = radii.iter().map(|&r| f.second_derivative(r)).collect();
        if let Some(second) = second {
            profile.second_derivatives = second;
            profile.second_derivative_source = DerivativeSource::Analytic;
        }
        Ok(profile)
    }

    /// Replaces the second derivatives by externally supplied values.
    pub fn with_second_derivatives(mut self, second: Vec<f64>) -> Result<Self, ProfileError> {
        if second.len() != self.radii.len() || second.iter().any(|v| !v.is_finite()) {
            return Err(ProfileError::InvalidProfile(
                "bad second-derivative column".into(),
            ));
        }
        self.second_derivatives = second;
        self.second_derivative_source = DerivativeSource::Analytic;
        Ok(self)
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn derivatives(&self) -> &[f64] {
        &self.derivatives
    }
    pub fn second_derivatives(&self) -> &[f64] {
        &self.second_derivatives
    }
    pub fn derivative_source(&self) -> DerivativeSource {
        self.derivative_source
    }
    pub fn second_derivative_source(&self) -> DerivativeSource {
        self.second_derivative_source
    }
    pub fn len(&self) -> usize {
        self.radii.len()
    }
    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }
    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    /// Relative error of the fitted log-log slope over the last two decades
    /// against `−tail_exponent`.
    pub fn tail_slope_error(&self) -> Option<f64> {
        let tau = self.tail_exponent?;
        let r_end = *self.radii.last()?;
        let pts: Vec<(f64, f64)> = self
            .radii
            .iter()
            .zip(&self.values)
            .filter(|(&r, &v)| r >= r_end / 100.0 && v > 0.0)
            .map(|(r, v)| (r.ln(), v.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let slope = sxy / sxx;
        Some((slope + tau).abs() / tau)
    }

    fn locate(&self, r: f64) -> usize {
        match self.radii.binary_search_by(|x| x.total_cmp(&r)) {
            Ok(i) => i.min(self.radii.len() - 2),
            Err(i) => (i - 1).min(self.radii.len() - 2),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("profile serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ProfileError> {
        serde_json::from_str(text).map_err(|e| ProfileError::Io(e.to_string()))
    }

    /// CSV with columns `r,w,dw`; the tail exponent travels in a `# tail_exponent=` line.
    pub fn write_csv<W: Write>(
        &self,
        mut out: W,
        with_derivative: bool,
    ) -> Result<(), ProfileError> {
        let io = |e: std::io::Error| ProfileError::Io(e.to_string());
        if let Some(tau) = self.tail_exponent {
            writeln!(out, "# tail_exponent={tau:?}").map_err(io)?;
        }
        let mut writer = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| ProfileError::Io(e.to_string());
        if with_derivative {
            writer.write_record(["r", "w", "dw"]).map_err(csv_err)?;
        } else {
            writer.write_record(["r", "w"]).map_err(csv_err)?;
        }
        for i in 0..self.radii.len() {
            let mut rec = vec![
                format!("{:?}", self.radii[i]),
                format!("{:?}", self.values[i]),
            ];
            if with_derivative {
                rec.push(format!("{:?}", self.derivatives[i]));
            }
            writer.write_record(&rec).map_err(csv_err)?;
        }
        writer.flush().map_err(|e| ProfileError::Io(e.to_string()))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, ProfileError> {
        let mut text = String::new();
        let mut input = input;
        input
            .read_to_string(&mut text)
            .map_err(|e| ProfileError::Io(e.to_string()))?;
        let mut tail = None;
        for line in text.lines().filter(|l| l.starts_with('#')) {
            if let Some(v) = line
                .trim_start_matches('#')
                .trim()
                .strip_prefix("tail_exponent=")
            {
                tail = Some(
                    v.parse::<f64>()
                        .map_err(|e| ProfileError::Io(e.to_string()))?,
                );
            }
        }
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| ProfileError::Io(e.to_string()))?
            .clone();
        let has_derivative = headers.len() >= 3;
        let (mut radii, mut values, mut derivs) = (Vec::new(), Vec::new(), Vec::new());
        for rec in reader.records() {
            let rec = rec.map_err(|e| ProfileError::Io(e.to_string()))?;
            let parse = |i: usize| -> Result<f64, ProfileError> {
                rec.get(i)
                    .ok_or_else(|| ProfileError::Io("short record".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| ProfileError::Io(e.to_string()))
            };
            radii.push(parse(0)?);
            values.push(parse(1)?);
            if has_derivative {
                derivs.push(parse(2)?);
            }
        }
        RadialProfile::new(radii, values, has_derivative.then_some(derivs), tail)
    }
}

fn second_from_first(t: &[f64], radii: &[f64], derivatives: &[f64]) -> Vec<f64> {
    let dt = differentiate(t, derivatives);
    dt.iter().zip(radii).map(|(g, r)| g / r).collect()
}

impl RadialFunction for RadialProfile {
    fn value(&self, r: f64) -> f64 {
        let n = self.radii.len();
        if r <= self.radii[0] {
            return self.values[0];
        }
        if r >= self.radii[n - 1] {
            return match self.tail_exponent {
                Some(tau) => self.values[n - 1] * (r / self.radii[n - 1]).powf(-tau),
                None if r == self.radii[n - 1] => self.values[n - 1],
                None => 0.0,
            };
        }
        let i = self.locate(r);
        let (r0, r1) = (self.radii[i], self.radii[i + 1]);
        let h = r1 - r0;
        let s = (r - r0) / h;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s),
            s * (1.0 - s) * (1.0 - s),
            s * s * (3.0 - 2.0 * s),
            s * s * (s - 1.0),
        );
        h00 * self.values[i]
            + h10 * h * self.derivatives[i]
            + h01 * self.values[i + 1]
            + h11 * h * self.derivatives[i + 1]
    }

    fn derivative(&self, r: f64) -> f64 {
        let n = self.radii.len();
        if r <= self.radii[0] {
            return self.derivatives[0] * r / self.radii[0];
        }
        if r >= self.radii[n - 1] {
            return match self.tail_exponent {
                Some(tau) => -tau * self.values[n - 1] / r * (r / self.radii[n - 1]).powf(-tau),
                None if r == self.radii[n - 1] => self.derivatives[n - 1],
                None => 0.0,
            };
        }
        let i = self.locate(r);
        let (r0, r1) = (self.radii[i], self.radii[i + 1]);
        let h = r1 - r0;
        let s = (r - r0) / h;
        let (d00, d10, d01, d11) = (
            6.0 * s * (s - 1.0),
            (1.0 - s) * (1.0 - 3.0 * s),
            6.0 * s * (1.0 - s),
            s * (3.0 * s - 2.0),
        );
        (d00 * self.values[i] + d01 * self.values[i + 1]) / h
            + d10 * self.derivatives[i]
            + d11 * self.derivatives[i + 1]
    }

    fn second_derivative(&self, r: f64) -> Option<f64> {
        let n = self.radii.len();
        if r <= self.radii[0] {
            return Some(self.second_derivatives[0]);
        }
        if r >= self.radii[n - 1] {
            return Some(self.second_derivatives[n - 1]);
        }
        let i = self.locate(r);
        let s = (r - self.radii[i]) / (self.radii[i + 1] - self.radii[i]);
        Some((1.0 - s) * self.second_derivatives[i] + s * self.second_derivatives[i + 1])
    }

    fn tail_exponent(&self) -> Option<f64> {
        self.tail_exponent
    }

    /// Trapezoid rule in `log r` on the grid, exact flat continuation below the
    /// first node and the analytic power tail beyond the last one.
    fn power_moment(&self, q: f64, d: u32, gamma: f64) -> Result<f64, ProfileError> {
        let n = d as f64 - gamma;
        let integrand: Vec<f64> = self
            .radii
            .iter()
            .zip(&self.values)
            .map(|(&r, &w)| w.abs().powf(q) * r.powf(n))
            .collect();
        let head = self.values[0].abs().powf(q) * self.radii[0].powf(n) / n;
        let tail = match self.tail_exponent {
            Some(tau) if tau * q > n => integrand[integrand.len() - 1] / (tau * q - n),
            Some(tau) => {
                return Err(ProfileError::DivergentNorm {
                    q,
                    reason: format!("tail r^-{tau} fails tau*q > d - gamma"),
                })
            }
            None => 0.0,
        };
        Ok(head + trapezoid_log(&self.radii, &integrand) + tail)
    }

    fn gradient_moment(&self, d: u32) -> Result<f64, ProfileError> {
        let dd = d as f64;
        let integrand: Vec<f64> = self
            .radii
            .iter()
            .zip(&self.derivatives)
            .map(|(&r, &g)| g * g * r.powf(dd))
            .collect();
        let head = integrand[0] / (dd + 2.0);
        let tail = match self.tail_exponent {
            Some(tau) if 2.0 * (tau + 1.0) > dd => {
                integrand[integrand.len() - 1] / (2.0 * (tau + 1.0) - dd)
            }
            Some(tau) => {
                return Err(ProfileError::DivergentNorm {
                    q: 2.0,
                    reason: format!("gradient tail r^-{} is not square integrable", tau + 1.0),
                })
            }
            None => 0.0,
        };
        Ok(head + trapezoid_log(&self.radii, &integrand) + tail)
    }
}

fn trapezoid_log(radii: &[f64], integrand: &[f64]) -> f64 {
    radii
        .windows(2)
        .zip(integrand.windows(2))
        .map(|(r, f)| 0.5 * (f[0] + f[1]) * (r[1] / r[0]).ln())
        .sum()
}

/// `(1 + r^{2−γ})^{−1/(p−1)}`.
pub fn w_star(params: &ProblemParams, r: f64) -> f64 {
    Barenblatt::w_star(params).value(r)
}

/// `(a_γ/(b_γ + r^{2−γ}))^{1/(p−1)}`.
pub fn w_gamma_star(params: &ProblemParams, r: f64) -> f64 {
    Barenblatt::w_gamma_star(params).value(r)
}

/// `(|S^{d−1}| ∫₀^∞ |w|^q r^{d−1−γ} dr)^{1/q}`.
pub fn weighted_norm<W: RadialFunction + ?Sized>(
    w: &W,
    q: f64,
    gamma: f64,
    params: &ProblemParams,
) -> Result<f64, ProfileError> {
    if !(q >= 1.0 && q.is_finite()) {
        return Err(ProfileError::InvalidProfile(format!(
            "norm order {q} is not in [1, inf)"
        )));
    }
    let area = params.derive().sphere_area;
    Ok((area * w.power_moment(q, params.d(), gamma)?).powf(1.0 / q))
}

/// `(|S^{d−1}| ∫₀^∞ w′² r^{d−1} dr)^{1/2}`.
pub fn gradient_norm<W: RadialFunction + ?Sized>(
    w: &W,
    params: &ProblemParams,
) -> Result<f64, ProfileError> {
    let area = params.derive().sphere_area;
    Ok((area * w.gradient_moment(params.d())?).sqrt())
}

/// The three norms entering the quotient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NormTriple {
    pub gradient: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn norm_triple<W: RadialFunction + ?Sized>(
    w: &W,
    params: &ProblemParams,
) -> Result<NormTriple, ProfileError> {
    let p = params.p();
    let g = params.gamma();
    Ok(NormTriple {
        gradient: gradient_norm(w, params)?,
        lower: weighted_norm(w, p + 1.0, g, params)?,
        upper: weighted_norm(w, 2.0 * p, g, params)?,
    })
}

/// `Q_γ[w] = ‖∇w‖₂^ϑ ‖w‖_{p+1,γ}^{1−ϑ} / ‖w‖_{2p,γ}`.
pub fn quotient<W: RadialFunction + ?Sized>(
    w: &W,
    params: &ProblemParams,
) -> Result<f64, ProfileError> {
    let norms = norm_triple(w, params)?;
    quotient_from_norms(&norms, params)
}

pub fn quotient_from_norms(
    norms: &NormTriple,
    params: &ProblemParams,
) -> Result<f64, ProfileError> {
    if !(norms.upper > 0.0) || !norms.upper.is_finite() {
        return Err(ProfileError::ZeroDenominator);
    }
    let vt = params.derive().vartheta;
    Ok(norms.gradient.powf(vt) * norms.lower.powf(1.0 - vt) / norms.upper)
}

/// `E_γ` and `G_γ` of a profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    pub e: f64,
    pub g: f64,
}

/// `G_γ = ½‖∇w‖² + ‖w‖^{p+1}_{p+1,γ}/(p+1)` and `E_γ = G_γ − J‖w‖^{2pθ_γ}_{2p,γ}`.
pub fn energy<W: RadialFunction + ?Sized>(
    w: &W,
    params: &ProblemParams,
    j: f64,
) -> Result<Energy, ProfileError> {
    let norms = norm_triple(w, params)?;
    let p = params.p();
    let theta = params.derive().theta_gamma;
    let g = 0.5 * norms.gradient * norms.gradient + norms.lower.powf(p + 1.0) / (p + 1.0);
    let e = g - j * norms.upper.powf(2.0 * p * theta);
    Ok(Energy { e, g })
}

/// Largest pointwise residual of `−w″ − (d−1)w′/r + r^{−γ}(w^p − w^{2p−1})`
/// over the interior of `radii`, each relative to the largest of its four terms.
pub fn el_residual<W: RadialFunction + ?Sized>(
    w: &W,
    params: &ProblemParams,
    radii: &[f64],
) -> Result<f64, ProfileError> {
    let (d, g, p) = (params.dim(), params.gamma(), params.p());
    let mut worst: f64 = 0.0;
    if radii.len() < 3 {
        return Ok(0.0);
    }
    for &r in &radii[1..radii.len() - 1] {
        let v = w.value(r);
        let dv = w.derivative(r);
        let d2 = w
            .second_derivative(r)
            .ok_or(ProfileError::MissingSecondDerivative { r })?;
        let weight = r.powf(-g);
        let terms = [
            -d2,
            -(d - 1.0) * dv / r,
            weight * v.abs().powf(p),
            -weight * v.abs().powf(2.0 * p - 1.0),
        ];
        let scale = terms.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        if scale == 0.0 {
            continue;
        }
        let res: f64 = terms.iter().sum();
        worst = worst.max(res.abs() / scale);
    }
    Ok(worst)
}

/// Smallest `C` with `w(r) ≤ C(1+r)^{−τ}` on `radii`, `τ = (2−γ)/(p−1)`.
pub fn barrier_constant<W: RadialFunction + ?Sized>(
    w: &W,
    params: &ProblemParams,
    radii: &[f64],
) -> f64 {
    let tau = params.sigma() / (params.p() - 1.0);
    radii
        .iter()
        .map(|&r| w.value(r) * (1.0 + r).powf(tau))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{kappa, validate};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn w_star_examples() {
        let p0 = validate(3, 0.0, 2.0).unwrap();
        assert_eq!(w_star(&p0, 0.0), 1.0);
        assert!((w_star(&p0, 1.0) - 0.5).abs() < 1e-15);
        let p5 = validate(3, 0.5, 2.0).unwrap();
        assert!((w_star(&p5, 4.0) - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn w_gamma_star_examples() {
        let p0 = validate(3, 0.0, 2.0).unwrap();
        assert!((w_gamma_star(&p0, 0.0) - 4.0).abs() < 1e-14);
        for params in [
            p0,
            validate(3, 0.5, 2.0).unwrap(),
            validate(4, 0.25, 1.5).unwrap(),
        ] {
            let e = params.derive();
            let pm1 = params.p() - 1.0;
            let scale = e.b_gamma.powf(-1.0 / params.sigma());
            for r in [0.0, 0.1, 1.0, 3.0, 50.0] {
                let lhs = w_gamma_star(&params, r);
                let rhs = (e.a_gamma / e.b_gamma).powf(1.0 / pm1) * w_star(&params, scale * r);
                assert!(rel(lhs, rhs) < 1e-13);
            }
            let r = 1e7;
            let asym = w_gamma_star(&params, r) * r.powf(params.sigma() / pm1);
            assert!(rel(asym, e.a_gamma.powf(1.0 / pm1)) < 1e-5);
            let peak = w_gamma_star(&params, 0.0).powf(pm1);
            assert!(rel(peak, params.p() * params.sigma() / e.eta) < 1e-13);
        }
    }

    #[test]
    fn norms_match_beta_closed_form() {
        for params in [
            validate(3, 0.0, 2.0).unwrap(),
            validate(3, 0.5, 2.0).unwrap(),
            validate(4, 0.25, 1.5).unwrap(),
            validate(5, 1.5, 1.1).unwrap(),
        ] {
            let area = params.derive().sphere_area;
            for w in [
                Barenblatt::w_star(&params),
                Barenblatt::w_gamma_star(&params),
            ] {
                for q in [
                    params.p() + 1.0,
                    2.0 * params.p(),
                    params.derive().two_star_gamma,
                ] {
                    let num = weighted_norm(&w, q, params.gamma(), &params).unwrap();
                    let exact =
                        (area * w.moment_closed_form(q, params.d(), params.gamma())).powf(1.0 / q);
                    assert!(rel(num, exact) < 1e-10, "{params:?} q={q} {num} {exact}");
                }
                let g = gradient_norm(&w, &params).unwrap();
                let exact = (area * w.gradient_moment_closed_form(params.d())).sqrt();
                assert!(rel(g, exact) < 1e-10);
            }
        }
    }

    #[test]
    fn gradient_norm_matches_analytic_derivative() {
        let params = validate(3, 0.0, 2.0).unwrap();
        let w = Barenblatt::w_star(&params);
        let (g, p) = (params.gamma(), params.p());
        let analytic = |r: f64| {
            -(2.0 - g) / (p - 1.0) * r.powf(1.0 - g) * (1.0 + r.powf(2.0 - g)).powf(-p / (p - 1.0))
        };
        let q = RadialQuadrature::default();
        let oracle = (params.derive().sphere_area
            * q.integrate(|r| analytic(r).powi(2), 3, 0.0).unwrap().value)
            .sqrt();
        assert!(rel(gradient_norm(&w, &params).unwrap(), oracle) < 1e-8);
    }

    #[test]
    fn constant_profile_has_zero_gradient() {
        let radii = graded_grid(1e-2, 1e2, 16);
        let profile =
            RadialProfile::new(radii.clone(), vec![2.5; radii.len()], None, None).unwrap();
        let params = validate(3, 0.0, 2.0).unwrap();
        assert_eq!(gradient_norm(&profile, &params).unwrap(), 0.0);
    }

    #[test]
    fn finite_difference_gradient_converges() {
        let params = validate(3, 0.5, 2.0).unwrap();
        let w = Barenblatt::w_gamma_star(&params);
        let exact = gradient_norm(&w, &params).unwrap();
        let err = |per_decade: usize| {
            let radii = graded_grid(1e-4, 1e4, per_decade);
            let values = radii.iter().map(|&r| w.value(r)).collect();
            let prof = RadialProfile::new(radii, values, None, w.tail_exponent()).unwrap();
            assert_eq!(prof.derivative_source(), DerivativeSource::FiniteDifference);
            (gradient_norm(&prof, &params).unwrap() - exact).abs()
        };
        let (e1, e2) = (err(16), err(32));
        assert!(e1 / e2 >= 2.0, "{e1} {e2}");
    }

    #[test]
    fn sampled_profile_norms() {
        let params = validate(3, 0.5, 2.0).unwrap();
        let w = Barenblatt::w_gamma_star(&params);
        let prof = RadialProfile::sample(&w, &GridConfig::default().radii()).unwrap();
        let exact = weighted_norm(&w, 4.0, 0.5, &params).unwrap();
        assert!(rel(weighted_norm(&prof, 4.0, 0.5, &params).unwrap(), exact) < 1e-6);
        assert!(prof.tail_slope_error().unwrap() < 0.05);
        assert!(prof.is_nonnegative());
    }

    #[test]
    fn quotient_invariances() {
        let params = validate(3, 0.5, 2.0).unwrap();
        let w = Barenblatt::w_star(&params);
        let q0 = quotient(&w, &params).unwrap();
        for lambda in [0.5, 2.0] {
            let q = quotient(&Dilated { inner: w, lambda }, &params).unwrap();
            assert!(rel(q, q0) < 1e-8);
        }
        let q = quotient(
            &Scaled {
                inner: w,
                factor: 2.3,
            },
            &params,
        )
        .unwrap();
        assert!(rel(q, q0) < 1e-12);
    }

    #[test]
    fn reference_quotient_fixture() {
        // Q_0[w_star] at (3, 0, 2) from the Beta closed forms:
        // ‖∇w‖² = 4π·π/8, ‖w‖³₃ = 4π·π/16, ‖w‖⁴₄ = 4π·π/32.
        let params = validate(3, 0.0, 2.0).unwrap();
        let pi = std::f64::consts::PI;
        let grad = (4.0 * pi * pi / 8.0).sqrt();
        let lower = (4.0 * pi * pi / 16.0).powf(1.0 / 3.0);
        let upper = (4.0 * pi * pi / 32.0).powf(0.25);
        let expected = grad.sqrt() * lower.sqrt() / upper;
        let q = quotient(&Barenblatt::w_star(&params), &params).unwrap();
        assert!(rel(q, expected) < 1e-11, "{q} {expected}");
    }

    fn radial_j(params: &ProblemParams) -> f64 {
        let q = quotient(&Barenblatt::w_star(params), params).unwrap();
        let e = params.derive();
        kappa(params) * q.powf(2.0 * params.p() * e.theta_gamma)
    }

    #[test]
    fn energy_vanishes_at_optimizer() {
        for params in [
            validate(3, 0.0, 2.0).unwrap(),
            validate(3, 0.5, 2.0).unwrap(),
            validate(4, 0.25, 1.5).unwrap(),
        ] {
            let j = radial_j(&params);
            let en = energy(&Barenblatt::w_gamma_star(&params), &params, j).unwrap();
            assert!(en.e.abs() < 1e-6 * en.g, "{params:?} {en:?}");
        }
    }

    #[test]
    fn energy_nonnegative_on_random_profiles() {
        use rand::{Rng, SeedableRng};
        let params = validate(3, 0.5, 2.0).unwrap();
        let j = radial_j(&params);
        let mut rng = rand::rngs::StdRng::seed_from_u64(17);
        for i in 0..20 {
            let en = if i % 2 == 0 {
                let g = Gaussian {
                    amplitude: rng.random_range(0.2..5.0),
                    width: rng.random_range(0.2..5.0),
                };
                energy(
                    &Perturbed {
                        inner: g,
                        epsilon: rng.random_range(0.0..0.5),
                    },
                    &params,
                    j,
                )
                .unwrap()
            } else {
                let w = Barenblatt::new(
                    rng.random_range(0.2..5.0),
                    rng.random_range(0.2..5.0),
                    params.sigma(),
                    rng.random_range(1.2..3.0),
                );
                energy(&w, &params, j).unwrap()
            };
            assert!(en.e >= -1e-9 * en.g, "{i} {en:?}");
        }
    }

    #[test]
    fn energy_increasing_in_amplitude() {
        let params = validate(3, 0.0, 2.0).unwrap();
        let w = Barenblatt::w_star(&params);
        let mut last = 0.0;
        for k in 1..20 {
            let en = energy(
                &Scaled {
                    inner: w,
                    factor: 0.25 * k as f64,
                },
                &params,
                1.0,
            )
            .unwrap();
            assert!(en.g > last);
            last = en.g;
        }
    }

    #[test]
    fn el_residual_cases() {
        let radii = GridConfig::default().radii();
        let params = validate(3, 0.5, 2.0).unwrap();
        let w = Barenblatt::w_gamma_star(&params);
        assert!(el_residual(&w, &params, &radii).unwrap() < 1e-10);
        assert!(el_residual(&Barenblatt::w_star(&params), &params, &radii).unwrap() > 0.1);
        let pert = Perturbed {
            inner: w,
            epsilon: 0.01,
        };
        assert!(el_residual(&pert, &params, &radii).unwrap() > 1e-3);
    }

    #[test]
    fn holder_interpolation_and_barrier() {
        for params in [
            validate(3, 0.5, 2.0).unwrap(),
            validate(4, 0.25, 1.5).unwrap(),
        ] {
            let e = params.derive();
            let g = params.gamma();
            let profiles: Vec<Box<dyn RadialFunction>> = vec![
                Box::new(Barenblatt::w_star(&params)),
                Box::new(Barenblatt::w_gamma_star(&params)),
                Box::new(Gaussian {
                    amplitude: 1.3,
                    width: 0.7,
                }),
                Box::new(Perturbed {
                    inner: Gaussian {
                        amplitude: 1.0,
                        width: 2.0,
                    },
                    epsilon: 0.3,
                }),
            ];
            for w in &profiles {
                let lhs = weighted_norm(w.as_ref(), 2.0 * params.p(), g, &params).unwrap();
                let rhs = weighted_norm(w.as_ref(), e.two_star_gamma, g, &params)
                    .unwrap()
                    .powf(e.vartheta)
                    * weighted_norm(w.as_ref(), params.p() + 1.0, g, &params)
                        .unwrap()
                        .powf(1.0 - e.vartheta);
                assert!(lhs <= rhs * (1.0 + 1e-12));
            }
            let radii = GridConfig::default().radii();
            let c = barrier_constant(&Barenblatt::w_gamma_star(&params), &params, &radii);
            assert!(c.is_finite() && c > 0.0);
            let tau = params.sigma() / (params.p() - 1.0);
            for &r in &radii {
                assert!(w_gamma_star(&params, r) <= c * (1.0 + r).powf(tau) * (1.0 + 1e-14));
            }
        }
    }

    #[test]
    fn divergent_norm_detected() {
        let params = validate(3, 0.0, 2.0).unwrap();
        let slow = Barenblatt::new(1.0, 1.0, 2.0, 0.5);
        assert!(matches!(
            weighted_norm(&slow, 2.0, 0.0, &params),
            Err(ProfileError::DivergentNorm { .. })
        ));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let params = validate(3, 0.5, 2.0).unwrap();
        let prof = RadialProfile::sample(
            &Barenblatt::w_gamma_star(&params),
            &graded_grid(1e-3, 1e3, 37),
        )
        .unwrap();
        let back = RadialProfile::from_json(&prof.to_json()).unwrap();
        assert_eq!(prof, back);
        for (a, b) in prof.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn csv_round_trip() {
        let params = validate(3, 0.5, 2.0).unwrap();
        let prof = RadialProfile::sample(
            &Barenblatt::w_gamma_star(&params),
            &graded_grid(1e-3, 1e3, 11),
        )
        .unwrap();
        let mut buf = Vec::new();
        prof.write_csv(&mut buf, true).unwrap();
        let back = RadialProfile::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.radii(), prof.radii());
        assert_eq!(back.values(), prof.values());
        assert_eq!(back.derivatives(), prof.derivatives());
        assert_eq!(back.tail_exponent(), prof.tail_exponent());
        let mut buf = Vec::new();
        prof.write_csv(&mut buf, false).unwrap();
        let back = RadialProfile::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.derivative_source(), DerivativeSource::FiniteDifference);
    }

    #[test]
    fn invalid_profiles_rejected() {
        assert!(RadialProfile::new(vec![0.0, 1.0, 2.0], vec![1.0; 3], None, None).is_err());
        assert!(RadialProfile::new(vec![1.0, 1.0, 2.0], vec![1.0; 3], None, None).is_err());
        assert!(
            RadialProfile::new(vec![1.0, 2.0, 3.0], vec![1.0, f64::NAN, 1.0], None, None).is_err()
        );
        let bad = r#"{"radii":[2.0,1.0,3.0],"values":[1,1,1],"derivatives":[0,0,0],"secondDerivatives":[0,0,0],"tailExponent":null,"derivativeSource":"analytic","secondDerivativeSource":"analytic"}"#;
        assert!(RadialProfile::from_json(bad).is_err());
    }

    #[test]
    fn hermite_interpolant_reproduces_nodes() {
        let params = validate(3, 0.0, 2.0).unwrap();
        let w = Barenblatt::w_gamma_star(&params);
        let radii = graded_grid(1e-3, 1e3, 32);
        let prof = RadialProfile::sample(&w, &radii).unwrap();
        for &r in &radii {
            assert!(rel(prof.value(r), w.value(r)) < 1e-14);
        }
        for &r in &[0.0123, 0.5, 7.7, 333.0] {
            assert!(rel(prof.value(r), w.value(r)) < 1e-5);
            assert!(rel(prof.derivative(r), w.derivative(r)) < 1e-3);
        }
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use crate::params::validate;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn norm_homogeneity(c in -5.0f64..5.0, gamma in 0.0f64..1.5) {
            prop_assume!(c.abs() > 1e-3);
            let params = validate(3, gamma, 1.4).unwrap();
            let w = Barenblatt::w_gamma_star(&params);
            let n0 = weighted_norm(&w, 3.0, gamma, &params).unwrap();
            let n1 = weighted_norm(&Scaled { inner: w, factor: c }, 3.0, gamma, &params).unwrap();
            prop_assert!((n1 - c.abs() * n0).abs() < 1e-11 * n1);
        }

        #[test]
        fn quotient_dilation_invariance(lambda in 0.1f64..10.0, c in 0.1f64..10.0, gamma in 0.0f64..1.2) {
            let params = validate(4, gamma, 1.3).unwrap();
            let w = Perturbed { inner: Barenblatt::w_star(&params), epsilon: 0.2 };
            let q0 = quotient(&w, &params).unwrap();
            let q1 = quotient(&Scaled { inner: Dilated { inner: w, lambda }, factor: c }, &params).unwrap();
            prop_assert!((q1 - q0).abs() < 1e-8 * q0);
        }

        #[test]
        fn radial_optimizer_is_minimal(a in 0.3f64..3.0, b in 0.3f64..3.0, k in 1.3f64..4.0) {
            let params = validate(3, 0.5, 2.0).unwrap();
            let q_star = quotient(&Barenblatt::w_star(&params), &params).unwrap();
            let q = quotient(&Barenblatt::new(a, b, 1.5, k), &params).unwrap();
            prop_assert!(q >= q_star * (1.0 - 1e-10));
        }
    }
}
