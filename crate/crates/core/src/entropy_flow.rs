//! Radial weighted Fokker–Planck flow
//! `v_t + |x|^γ ∇·[v ∇(v^{m−1} − |x|^{2−γ})] = 0` on a finite-volume mesh.
//!
//! Cells carry point values at their centres and exact weighted volumes
//! `|S^{d−1}| ∫ r^{d−1−γ} dr`. Face fluxes upwind the density on the gradient
//! of `q = v^{m−1} − r^{2−γ}`, so any profile with constant `q` is exactly
//! stationary and the weighted mass telescopes. The discrete Fisher
//! information is the exact dissipation of the discrete free energy under the
//! semi-discrete flow.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{validate_diffusion, ParamsError, ProblemParams};
use crate::profiles::{Barenblatt, ProfileError, RadialFunction, RadialProfile};
use crate::quadrature::sphere_area;

/// Smallest admissible cell value.
pub const POSITIVITY_FLOOR: f64 = 1e-300;
/// Fraction of the linear stability limit used by [`stable_dt`].
const CFL_SAFETY: f64 = 0.45;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("no constant C > 0 matches mass {mass:e}")]
    RootNotBracketed { mass: f64 },
    #[error("time step {dt:e} exceeds the stability limit {limit:e}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("density {value:e} below the positivity floor in cell {cell}")]
    NegativeDensity { cell: usize, value: f64 },
    #[error("invalid initial datum: {0}")]
    InvalidDatum(String),
}

/// Mesh generator: faces at `core·sinh(i·s)`, `i = 0..=cells`, reaching `r_max`.
/// Uniform near the origin, geometric beyond `core`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MeshConfig {
    pub cells: usize,
    pub r_max: f64,
    pub core: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            cells: 400,
            r_max: 100.0,
            core: 0.5,
        }
    }
}

impl MeshConfig {
    /// Same map with every cell split in two.
    pub fn refined(&self) -> Self {
        MeshConfig {
            cells: 2 * self.cells,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowMesh {
    config: MeshConfig,
    faces: Vec<f64>,
    centers: Vec<f64>,
    volumes: Vec<f64>,
    // ρ^{2−γ} at the centres
    confinement: Vec<f64>,
    // |S^{d−1}| f^{d−1} / (ρ_{k} − ρ_{k−1}) for interior face k
    transmissivity: Vec<f64>,
}

impl FlowMesh {
    pub fn new(config: MeshConfig, d: u32, gamma: f64) -> Result<Self, FlowError> {
        if config.cells < 2 || !(config.r_max > 0.0) || !(config.core > 0.0) {
            return Err(FlowError::InvalidDatum(format!("bad mesh {config:?}")));
        }
        let n = config.cells;
        let s = (config.r_max / config.core).asinh() / n as f64;
        let mut faces: Vec<f64> = (0..=n)
            .map(|i| config.core * (s * i as f64).sinh())
            .collect();
        faces[0] = 0.0;
        faces[n] = config.r_max;
        let area = sphere_area(d);
        let e = d as f64 - gamma;
        let centers: Vec<f64> = faces.windows(2).map(|f| 0.5 * (f[0] + f[1])).collect();
        let volumes = faces
            .windows(2)
            .map(|f| area * (f[1].powf(e) - f[0].powf(e)) / e)
            .collect();
        let transmissivity = (1..n)
            .map(|k| area * faces[k].powi(d as i32 - 1) / (centers[k] - centers[k - 1]))
            .collect();
        let confinement = centers.iter().map(|r| r.powf(2.0 - gamma)).collect();
        Ok(FlowMesh {
            config,
            faces,
            centers,
            volumes,
            confinement,
            transmissivity,
        })
    }

    pub fn config(&self) -> MeshConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn faces(&self) -> &[f64] {
        &self.faces
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Weighted cell volumes, sphere area included.
    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }
}

/// `d`, `γ`, `m` and the mesh of a flow run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FlowConfig {
    pub d: u32,
    pub gamma: f64,
    pub m: f64,
    pub mesh: MeshConfig,
}

impl FlowConfig {
    pub fn new(d: u32, gamma: f64, m: f64) -> Self {
        FlowConfig {
            d,
            gamma,
            m,
            mesh: MeshConfig::default(),
        }
    }

    pub fn params(&self) -> Result<ProblemParams, FlowError> {
        Ok(validate_diffusion(self.d, self.gamma, self.m)?)
    }

    /// Decay rate `(2−γ)²` of the free energy.
    pub fn rate_bound(&self) -> f64 {
        (2.0 - self.gamma).powi(2)
    }
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub time: f64,
    pub mesh: Arc<FlowMesh>,
    pub density: Vec<f64>,
    pub mass: f64,
    pub m: f64,
    pub params: ProblemParams,
}

impl FlowState {
    pub fn new(
        mesh: Arc<FlowMesh>,
        density: Vec<f64>,
        m: f64,
        params: ProblemParams,
    ) -> Result<Self, FlowError> {
        if density.len() != mesh.len() {
            return Err(FlowError::InvalidDatum(format!(
                "{} values for {} cells",
                density.len(),
                mesh.len()
            )));
        }
        check_positive(&density)?;
        let mass = weighted_sum(&mesh.volumes, &density);
        Ok(FlowState {
            time: 0.0,
            mesh,
            density,
            mass,
            m,
            params,
        })
    }

    /// Point values of `u0` at the cell centres.
    pub fn from_profile<W: RadialFunction + ?Sized>(
        u0: &W,
        config: &FlowConfig,
    ) -> Result<Self, FlowError> {
        let params = config.params()?;
        let mesh = Arc::new(FlowMesh::new(config.mesh, config.d, config.gamma)?);
        let density = mesh.centers.iter().map(|&r| u0.value(r)).collect();
        FlowState::new(mesh, density, config.m, params)
    }

    pub fn gamma(&self) -> f64 {
        self.params.gamma()
    }

    /// Weighted mass recomputed from the cells.
    pub fn current_mass(&self) -> f64 {
        weighted_sum(&self.mesh.volumes, &self.density)
    }
}

fn weighted_sum(volumes: &[f64], values: &[f64]) -> f64 {
    volumes.iter().zip(values).map(|(a, b)| a * b).sum()
}

fn check_positive(density: &[f64]) -> Result<(), FlowError> {
    match density
        .iter()
        .position(|v| !(*v >= POSITIVITY_FLOOR) || !v.is_finite())
    {
        Some(cell) => Err(FlowError::NegativeDensity {
            cell,
            value: density[cell],
        }),
        None => Ok(()),
    }
}

/// `𝔅 = (C + r^{2−γ})^{1/(m−1)}` together with the mass it was fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryProfile {
    #[serde(rename = "C")]
    pub c: f64,
    pub mass: f64,
    pub m: f64,
    pub gamma: f64,
    pub d: u32,
}

impl StationaryProfile {
    pub fn profile(&self) -> Barenblatt {
        Barenblatt::stationary(self.c, self.m, self.gamma)
    }

    pub fn value(&self, r: f64) -> f64 {
        (self.c + r.powf(2.0 - self.gamma)).powf(1.0 / (self.m - 1.0))
    }

    /// `∫ 𝔅 |x|^{−γ} dx` from the Beta closed form.
    pub fn weighted_mass(&self) -> f64 {
        continuous_mass(self.c, self.m, self.gamma, self.d)
    }

    /// Stationary state of the discrete flow with the same cell mass as `state`.
    pub fn matching(state: &FlowState) -> Result<Self, FlowError> {
        let (m, gamma) = (state.m, state.gamma());
        let mesh = &state.mesh;
        let mass = |c: f64| {
            let b = StationaryProfile {
                c,
                mass: 0.0,
                m,
                gamma,
                d: state.params.d(),
            };
            mesh.volumes
                .iter()
                .zip(&mesh.centers)
                .map(|(v, &r)| v * b.value(r))
                .sum()
        };
        let c = solve_decreasing(mass, state.mass)?;
        Ok(StationaryProfile {
            c,
            mass: state.mass,
            m,
            gamma,
            d: state.params.d(),
        })
    }
}

fn continuous_mass(c: f64, m: f64, gamma: f64, d: u32) -> f64 {
    sphere_area(d) * Barenblatt::stationary(c, m, gamma).moment_closed_form(1.0, d, gamma)
}

/// Bisection in `log C` for a mass that decreases with `C`.
fn solve_decreasing(mass: impl Fn(f64) -> f64, target: f64) -> Result<f64, FlowError> {
    if !(target > 0.0) || !target.is_finite() {
        return Err(FlowError::RootNotBracketed { mass: target });
    }
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    let mut expand = 0;
    while mass(lo.exp()) < target {
        lo -= 2.0;
        expand += 1;
        if expand > 400 {
            return Err(FlowError::RootNotBracketed { mass: target });
        }
    }
    while mass(hi.exp()) > target {
        hi += 2.0;
        expand += 1;
        if expand > 400 {
            return Err(FlowError::RootNotBracketed { mass: target });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Solves `∫ 𝔅 |x|^{−γ} dx = mass` for `C`.
pub fn stationary_profile(
    m: f64,
    gamma: f64,
    d: u32,
    mass: f64,
) -> Result<StationaryProfile, FlowError> {
    validate_diffusion(d, gamma, m)?;
    let c = solve_decreasing(|c| continuous_mass(c, m, gamma, d), mass)?;
    Ok(StationaryProfile {
        c,
        mass,
        m,
        gamma,
        d,
    })
}

struct Faces {
    // signed flux |S| f^{d−1} v_up ∂q through interior face k (between cells k−1, k)
    flux: Vec<f64>,
    dq: Vec<f64>,
    // stability limit of an explicit step
    limit: f64,
}

fn faces(state: &FlowState) -> Faces {
    let v = &state.density;
    let m = state.m;
    let mesh = &state.mesh;
    let n = v.len();
    // v^{m−1} and v^{m−2}
    let mob: Vec<f64> = v.iter().map(|x| x.powf(m - 1.0)).collect();
    let mut out = Faces {
        flux: Vec::with_capacity(n - 1),
        dq: Vec::with_capacity(n - 1),
        limit: f64::INFINITY,
    };
    let mut rate = vec![0.0; n];
    for k in 1..n {
        let dq = (mob[k] - mesh.confinement[k]) - (mob[k - 1] - mesh.confinement[k - 1]);
        // velocity −∂q: outward when dq < 0
        let up = if dq < 0.0 { v[k - 1] } else { v[k] };
        let t = mesh.transmissivity[k - 1];
        let jac = (1.0 - m) * up * (mob[k - 1] / v[k - 1]).max(mob[k] / v[k]);
        let c = t * (dq.abs() + jac);
        rate[k - 1] += c;
        rate[k] += c;
        out.dq.push(dq);
        out.flux.push(t * up * dq);
    }
    out.limit = CFL_SAFETY
        * rate
            .iter()
            .zip(&mesh.volumes)
            .map(|(c, vol)| vol / c)
            .fold(f64::INFINITY, f64::min);
    out
}

/// Largest explicit step accepted by [`step`].
pub fn stable_dt(state: &FlowState) -> f64 {
    faces(state).limit
}

/// One explicit Euler step of size `dt`.
pub fn step(state: &FlowState, dt: f64) -> Result<FlowState, FlowError> {
    advance(state, &faces(state), dt)
}

fn advance(state: &FlowState, f: &Faces, dt: f64) -> Result<FlowState, FlowError> {
    if !(dt > 0.0) || dt > f.limit * (1.0 + 1e-12) {
        return Err(FlowError::CflViolation { dt, limit: f.limit });
    }
    let n = state.density.len();
    let mut density = state.density.clone();
    for (i, v) in density.iter_mut().enumerate() {
        let outer = if i + 1 < n { f.flux[i] } else { 0.0 };
        let inner = if i > 0 { f.flux[i - 1] } else { 0.0 };
        *v -= dt * (outer - inner) / state.mesh.volumes[i];
    }
    check_positive(&density)?;
    Ok(FlowState {
        time: state.time + dt,
        mesh: state.mesh.clone(),
        density,
        mass: state.mass,
        m: state.m,
        params: state.params,
    })
}

/// `(1+δ)^m − 1 − mδ`, accurate for small `δ`.
fn bregman_kernel(delta: f64, m: f64) -> f64 {
    if delta.abs() < 0.05 {
        let mut c = m * (m - 1.0) / 2.0;
        let mut pow = delta * delta;
        let mut sum = 0.0;
        for k in 2..14 {
            sum += c * pow;
            c *= (m - k as f64) / (k as f64 + 1.0);
            pow *= delta;
        }
        sum
    } else {
        (m * delta.ln_1p()).exp_m1() - m * delta
    }
}

/// `(m−1)^{−1} ∫ (v^m − 𝔅^m − m𝔅^{m−1}(v−𝔅)) |x|^{−γ} dx` over the cells.
pub fn free_energy(state: &FlowState, stationary: &StationaryProfile) -> f64 {
    let b: Vec<f64> = state
        .mesh
        .centers
        .iter()
        .map(|&r| stationary.value(r))
        .collect();
    free_energy_against(state, &b, &cell_weights(state, &b))
}

// |cell| 𝔅^m
fn cell_weights(state: &FlowState, b: &[f64]) -> Vec<f64> {
    b.iter()
        .zip(&state.mesh.volumes)
        .map(|(b, vol)| vol * b.powf(state.m))
        .collect()
}

fn free_energy_against(state: &FlowState, b: &[f64], weights: &[f64]) -> f64 {
    let m = state.m;
    let sum: f64 = state
        .density
        .iter()
        .zip(b)
        .zip(weights)
        .map(|((&v, &b), &w)| w * bregman_kernel(v / b - 1.0, m))
        .sum();
    sum / (m - 1.0)
}

fn fisher_from_faces(state: &FlowState, f: &Faces) -> f64 {
    let sum: f64 = f.flux.iter().zip(&f.dq).map(|(g, dq)| g * dq).sum();
    state.m / (1.0 - state.m) * sum
}

/// `m/(1−m) ∫ v |∇v^{m−1} − (2−γ) x|x|^{−γ}|² dx` on the mesh faces.
pub fn fisher_information(state: &FlowState) -> f64 {
    fisher_from_faces(state, &faces(state))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayRecord {
    pub t: f64,
    #[serde(rename = "F")]
    pub free_energy: f64,
    #[serde(rename = "I")]
    pub fisher: f64,
    pub mass: f64,
    /// Step that produced this record; zero for the initial state.
    pub dt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DecaySeries {
    pub config: FlowConfig,
    pub stationary: StationaryProfile,
    pub rate_bound: f64,
    pub records: Vec<DecayRecord>,
}

impl DecaySeries {
    /// `max |M(t) − M(0)| / M(0)`.
    pub fn max_mass_drift(&self) -> f64 {
        let m0 = self.records[0].mass;
        self.records
            .iter()
            .map(|r| ((r.mass - m0) / m0).abs())
            .fold(0.0, f64::max)
    }

    /// `max |ΔF/Δt + I_mid| / max(I_mid, floor)` over consecutive records.
    pub fn identity_residual(&self, floor: f64) -> f64 {
        self.records
            .windows(2)
            .map(|w| {
                let dt = w[1].t - w[0].t;
                let mid = 0.5 * (w[0].fisher + w[1].fisher);
                ((w[1].free_energy - w[0].free_energy) / dt + mid).abs() / mid.max(floor)
            })
            .fold(0.0, f64::max)
    }

    /// `max F(t) / (F(0) e^{−rate·t})`.
    pub fn bound_ratio(&self, rate: f64) -> f64 {
        let f0 = self.records[0].free_energy;
        if f0 == 0.0 {
            return 0.0;
        }
        self.records
            .iter()
            .map(|r| r.free_energy / (f0 * (-rate * r.t).exp()))
            .fold(0.0, f64::max)
    }

    /// `min I/F` over records with `F > floor`.
    pub fn min_ratio(&self, floor: f64) -> f64 {
        self.records
            .iter()
            .filter(|r| r.free_energy > floor)
            .map(|r| r.fisher / r.free_energy)
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether `F` never increases from one record to the next.
    pub fn is_dissipative(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| w[1].free_energy <= w[0].free_energy)
    }

    /// Least-squares decay rate of `log F` over `t ∈ [t0, t1]`.
    pub fn fitted_rate(&self, t0: f64, t1: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .records
            .iter()
            .filter(|r| r.t >= t0 && r.t <= t1 && r.free_energy > 0.0)
            .map(|r| (r.t, r.free_energy.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let (mt, my) = pts
            .iter()
            .fold((0.0, 0.0), |(a, b), (t, y)| (a + t / n, b + y / n));
        let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| {
            (a + (t - mt) * (y - my), b + (t - mt) * (t - mt))
        });
        (sxx > 0.0).then(|| -sxy / sxx)
    }

    /// Decay rate fitted on the second half of the run.
    pub fn asymptotic_rate(&self) -> Option<f64> {
        let t_end = self.records.last()?.t;
        self.fitted_rate(0.5 * t_end, t_end)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r).map_err(std::io::Error::other)?;
        }
        w.flush()
    }
}

/// Runs the flow from `u0` up to time `t_final` with steps at most `dt_max`,
/// recording `(t, F, I, mass, dt)` after every step.
pub fn run_decay<W: RadialFunction + ?Sized>(
    u0: &W,
    config: &FlowConfig,
    t_final: f64,
    dt_max: f64,
) -> Result<DecaySeries, FlowError> {
    let mut state = FlowState::from_profile(u0, config)?;
    let stationary = StationaryProfile::matching(&state)?;
    let b: Vec<f64> = state
        .mesh
        .centers
        .iter()
        .map(|&r| stationary.value(r))
        .collect();
    let weights = cell_weights(&state, &b);
    let mut f = faces(&state);
    let mut records = vec![DecayRecord {
        t: 0.0,
        free_energy: free_energy_against(&state, &b, &weights),
        fisher: fisher_from_faces(&state, &f),
        mass: state.current_mass(),
        dt: 0.0,
    }];
    while state.time < t_final {
        let mut dt = f.limit.min(dt_max);
        let remaining = t_final - state.time;
        if dt >= remaining {
            dt = remaining;
        } else if dt > 0.5 * remaining {
            dt = 0.5 * remaining;
        }
        state = advance(&state, &f, dt)?;
        f = faces(&state);
        records.push(DecayRecord {
            t: state.time,
            free_energy: free_energy_against(&state, &b, &weights),
            fisher: fisher_from_faces(&state, &f),
            mass: state.current_mass(),
            dt,
        });
    }
    Ok(DecaySeries {
        config: *config,
        stationary,
        rate_bound: config.rate_bound(),
        records,
    })
}

/// Time change between the original flow and its self-similar frame:
/// `u(t,x) = R^{γ−d} v((2−γ)^{−1} log R, x/R)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfSimilarMap {
    pub d: u32,
    pub gamma: f64,
    pub m: f64,
}

impl SelfSimilarMap {
    pub fn new(params: &ProblemParams, m: f64) -> Self {
        SelfSimilarMap {
            d: params.d(),
            gamma: params.gamma(),
            m,
        }
    }

    fn exponent(&self) -> f64 {
        let dg = self.d as f64 - self.gamma;
        dg * (self.m - (self.d as f64 - 2.0) / dg)
    }

    /// `R(t) = [1 + (2−γ)(d−γ)(m−m_c)t]^{1/((d−γ)(m−m_c))}`.
    pub fn scale_factor(&self, t: f64) -> f64 {
        let e = self.exponent();
        (1.0 + (2.0 - self.gamma) * e * t).powf(1.0 / e)
    }

    pub fn rescaled_time(&self, t: f64) -> f64 {
        self.scale_factor(t).ln() / (2.0 - self.gamma)
    }

    pub fn original_time(&self, tau: f64) -> f64 {
        let e = self.exponent();
        ((e * (2.0 - self.gamma) * tau).exp_m1()) / ((2.0 - self.gamma) * e)
    }

    fn rescale(&self, w: &RadialProfile, big_r: f64) -> Result<RadialProfile, ProfileError> {
        let amp = big_r.powf(self.d as f64 - self.gamma);
        let radii = w.radii().iter().map(|r| r / big_r).collect();
        let values = w.values().iter().map(|v| amp * v).collect();
        let derivs = w.derivatives().iter().map(|g| amp * big_r * g).collect();
        let second = w
            .second_derivatives()
            .iter()
            .map(|h| amp * big_r * big_r * h)
            .collect();
        RadialProfile::new(radii, values, Some(derivs), w.tail_exponent())?
            .with_second_derivatives(second)
    }

    /// `u(t,·)` to `(τ, v(τ,·))`.
    pub fn to_rescaled(
        &self,
        u: &RadialProfile,
        t: f64,
    ) -> Result<(f64, RadialProfile), ProfileError> {
        let big_r = self.scale_factor(t);
        Ok((self.rescaled_time(t), self.rescale(u, big_r)?))
    }

    /// `v(τ,·)` to `(t, u(t,·))`.
    pub fn to_original(
        &self,
        v: &RadialProfile,
        tau: f64,
    ) -> Result<(f64, RadialProfile), ProfileError> {
        let big_r = ((2.0 - self.gamma) * tau).exp();
        Ok((self.original_time(tau), self.rescale(v, 1.0 / big_r)?))
    }
}
