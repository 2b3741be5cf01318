//! Shooting for the radial ground state.
//!
//! With `r = c s^{2/(2−γ)}`, `c = ((2−γ)/2)^{2/(2−γ)}`, the radial Euler–Lagrange
//! equation becomes `−v″ − (d_γ−1)v′/s + v^p = v^{2p−1}` in the (generally
//! non-integer) dimension `d_γ = 2(d−γ)/(2−γ)`. The ground state is the unique
//! `v(0)` separating trajectories that cross zero from those trapped by the
//! well of `V(v) = v^{2p}/2p − v^{p+1}/(p+1)` around `v = 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::ProblemParams;
use crate::profiles::{ProfileError, RadialProfile};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShootingError {
    #[error("step size underflow at s = {s:e}")]
    StepSizeUnderflow { s: f64 },
    #[error("trajectory from v0 = {v0} neither crossed zero nor settled by s = {s_max:e} (v = {v:e}, v' = {dv:e})")]
    ClassificationAmbiguous {
        v0: f64,
        s_max: f64,
        v: f64,
        dv: f64,
    },
    #[error("no bracket for the ground state found below v0 = {hi}")]
    BracketNotFound { hi: f64 },
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Classification {
    CrossesZero,
    DivergesToPlateau,
    GroundState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ShootingResult {
    pub v0: f64,
    pub classification: Classification,
    /// Trajectory in the flat variable `s`.
    pub profile: RadialProfile,
    pub bisection_history: Vec<(f64, Classification)>,
}

/// Launch point of the regular series at the origin.
pub const S_LAUNCH: f64 = 1e-6;
/// Relative step tolerance of the integrator.
pub const RTOL: f64 = 1e-10;
/// Decay threshold for the ground-state classification at `s_max`.
pub const DECAY_THRESHOLD: f64 = 1e-4;

/// `(d_γ, c)` of the change of variables `r = c s^{2/(2−γ)}`.
pub fn to_flat_variables(params: &ProblemParams) -> (f64, f64) {
    let sigma = params.sigma();
    (params.derive().d_gamma, (sigma / 2.0).powf(2.0 / sigma))
}

pub fn radius_from_flat(params: &ProblemParams, s: f64) -> f64 {
    let (_, c) = to_flat_variables(params);
    c * s.powf(2.0 / params.sigma())
}

pub fn flat_from_radius(params: &ProblemParams, r: f64) -> f64 {
    let (_, c) = to_flat_variables(params);
    (r / c).powf(params.sigma() / 2.0)
}

/// The explicit ground state in the flat variable,
/// `(a_γ/(b_γ + ((2−γ)/2)² s²))^{1/(p−1)}`.
pub fn flat_ground_state(params: &ProblemParams, s: f64) -> f64 {
    let e = params.derive();
    let h = params.sigma() / 2.0;
    (e.a_gamma / (e.b_gamma + h * h * s * s)).powf(1.0 / (params.p() - 1.0))
}

/// `½v′² + v^{2p}/2p − v^{p+1}/(p+1)`.
pub fn trajectory_energy(p: f64, v: f64, dv: f64) -> f64 {
    let a = v.abs();
    0.5 * dv * dv + a.powf(2.0 * p) / (2.0 * p) - a.powf(p + 1.0) / (p + 1.0)
}

fn rhs(d_gamma: f64, p: f64, s: f64, y: [f64; 2]) -> [f64; 2] {
    let v = y[0];
    let a = v.abs();
    let nonlinear = a.powf(p).copysign(v) - a.powf(2.0 * p - 1.0).copysign(v);
    [y[1], nonlinear - (d_gamma - 1.0) / s * y[1]]
}

enum Stop {
    Crossed,
    Turned,
    Decayed,
    End,
}

struct Trajectory {
    s: Vec<f64>,
    v: Vec<f64>,
    dv: Vec<f64>,
    stop: Stop,
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates from the regular series at `S_LAUNCH` to `s_max`, stopping at a
/// zero crossing, at a turning point (`v′ > 0`, which traps the trajectory in
/// the well), or, when `decay` is set, once `v < decay·v0` while decreasing.
fn shoot(
    d_gamma: f64,
    p: f64,
    v0: f64,
    s_max: f64,
    decay: Option<f64>,
) -> Result<Trajectory, ShootingError> {
    let s0 = S_LAUNCH;
    let f0 = v0.powf(p) - v0.powf(2.0 * p - 1.0);
    let mut y = [v0 + f0 * s0 * s0 / (2.0 * d_gamma), f0 * s0 / d_gamma];
    let mut s = s0;
    let mut out = Trajectory {
        s: vec![s],
        v: vec![y[0]],
        dv: vec![y[1]],
        stop: Stop::End,
    };
    let mut h = s0;
    let mut k1 = rhs(d_gamma, p, s, y);
    let atol = 1e-300;
    while s < s_max {
        if s + h > s_max {
            h = s_max - s;
        }
        let stage = |c: f64, a: &[(f64, &[f64; 2])]| {
            let mut yy = y;
            for (coef, k) in a {
                yy[0] += h * coef * k[0];
                yy[1] += h * coef * k[1];
            }
            rhs(d_gamma, p, s + c * h, yy)
        };
        let k2 = stage(C2, &[(A21, &k1)]);
        let k3 = stage(C3, &[(A31, &k1), (A32, &k2)]);
        let k4 = stage(C4, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        let k5 = stage(C5, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
        let k6 = stage(
            1.0,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        );
        let mut yn = y;
        for i in 0..2 {
            yn[i] += h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
        }
        let k7 = rhs(d_gamma, p, s + h, yn);
        let mut err: f64 = 0.0;
        for i in 0..2 {
            let e =
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let scale = atol + RTOL * y[i].abs().max(yn[i].abs());
            err = err.max((e / scale).abs());
        }
        if !err.is_finite() {
            h *= 0.1;
            if h < 1e-14 * s {
                return Err(ShootingError::StepSizeUnderflow { s });
            }
            continue;
        }
        if err <= 1.0 {
            s += h;
            y = yn;
            k1 = k7;
            out.s.push(s);
            out.v.push(y[0]);
            out.dv.push(y[1]);
            if y[0] < 0.0 {
                out.stop = Stop::Crossed;
                return Ok(out);
            }
            if y[1] > 0.0 {
                out.stop = Stop::Turned;
                return Ok(out);
            }
            if let Some(threshold) = decay {
                if y[0] < threshold * v0 {
                    out.stop = Stop::Decayed;
                    return Ok(out);
                }
            }
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        if h < 1e-14 * s {
            return Err(ShootingError::StepSizeUnderflow { s });
        }
    }
    Ok(out)
}

fn build_result(
    d_gamma: f64,
    p: f64,
    v0: f64,
    traj: Trajectory,
    classification: Classification,
) -> Result<ShootingResult, ShootingError> {
    let second: Vec<f64> = traj
        .s
        .iter()
        .zip(traj.v.iter().zip(&traj.dv))
        .map(|(&s, (&v, &dv))| rhs(d_gamma, p, s, [v, dv])[1])
        .collect();
    let profile = RadialProfile::new(traj.s, traj.v, Some(traj.dv), Some(2.0 / (p - 1.0)))?
        .with_second_derivatives(second)?;
    Ok(ShootingResult {
        v0,
        classification,
        profile,
        bisection_history: Vec::new(),
    })
}

/// Integrates the flat radial equation from `v(0) = v0`, `v′(0) = 0`.
///
/// For `v0 ≤ 1` the right-hand side `v^p − v^{2p−1}` is nonnegative, so the
/// trajectory cannot decay and is classified as trapped without integration.
pub fn integrate_ode(
    d_gamma: f64,
    p: f64,
    v0: f64,
    s_max: f64,
) -> Result<ShootingResult, ShootingError> {
    if v0 <= 1.0 {
        let s = vec![S_LAUNCH, 0.5 * (S_LAUNCH + s_max), s_max];
        let profile = RadialProfile::new(s, vec![v0; 3], Some(vec![0.0; 3]), None)?;
        return Ok(ShootingResult {
            v0,
            classification: Classification::DivergesToPlateau,
            profile,
            bisection_history: Vec::new(),
        });
    }
    let traj = shoot(d_gamma, p, v0, s_max, None)?;
    let classification = match traj.stop {
        Stop::Crossed => Classification::CrossesZero,
        Stop::Turned => Classification::DivergesToPlateau,
        _ => {
            let (v, dv) = (*traj.v.last().unwrap(), *traj.dv.last().unwrap());
            if v < DECAY_THRESHOLD && dv < 0.0 {
                Classification::GroundState
            } else {
                return Err(ShootingError::ClassificationAmbiguous { v0, s_max, v, dv });
            }
        }
    };
    build_result(d_gamma, p, v0, traj, classification)
}

/// Far end used when a trial shot must be decided by an event.
const DECIDE_S_MAX: f64 = 1e14;

fn decide(d_gamma: f64, p: f64, v0: f64) -> Result<Classification, ShootingError> {
    if v0 <= 1.0 {
        return Ok(Classification::DivergesToPlateau);
    }
    let traj = shoot(d_gamma, p, v0, DECIDE_S_MAX, None)?;
    Ok(match traj.stop {
        Stop::Crossed => Classification::CrossesZero,
        Stop::Turned => Classification::DivergesToPlateau,
        _ => Classification::GroundState,
    })
}

/// Bisection on `v0` between trapped (below) and crossing (above) shots.
/// `tol` is relative; the returned trajectory is continued until `v` has
/// decayed by a factor `1e-6`.
pub fn find_ground_state(
    params: &ProblemParams,
    tol: f64,
) -> Result<ShootingResult, ShootingError> {
    let (d_gamma, _) = to_flat_variables(params);
    let p = params.p();
    let mut history = Vec::new();
    let mut lo = 1.0;
    let mut hi = 2.0;
    let mut exact = None;
    loop {
        let class = decide(d_gamma, p, hi)?;
        history.push((hi, class));
        match class {
            Classification::CrossesZero => break,
            Classification::DivergesToPlateau => {
                lo = hi;
                hi *= 2.0;
            }
            Classification::GroundState => {
                exact = Some(hi);
                break;
            }
        }
        if hi > 1e12 {
            return Err(ShootingError::BracketNotFound { hi });
        }
    }
    // Bisect well below `tol` so the returned trajectory, not just v0, is accurate.
    let inner_tol = (0.01 * tol).min(1e-12);
    let v0 = match exact {
        Some(v) => v,
        None => {
            while hi - lo > inner_tol * lo {
                let mid = 0.5 * (lo + hi);
                let class = decide(d_gamma, p, mid)?;
                history.push((mid, class));
                match class {
                    Classification::CrossesZero => hi = mid,
                    Classification::DivergesToPlateau => lo = mid,
                    Classification::GroundState => {
                        lo = mid;
                        hi = mid;
                    }
                }
            }
            0.5 * (lo + hi)
        }
    };
    let traj = shoot(d_gamma, p, v0, DECIDE_S_MAX, Some(1e-6))?;
    let mut result = build_result(d_gamma, p, v0, traj, Classification::GroundState)?;
    result.bisection_history = history;
    Ok(result)
}

/// Maps a flat trajectory back to `r = c s^{2/(2−γ)}`, `w(r) = v(s)`, with
/// first and second derivatives from the chain rule.
pub fn map_to_radius(
    params: &ProblemParams,
    flat: &RadialProfile,
) -> Result<RadialProfile, ShootingError> {
    let (_, c) = to_flat_variables(params);
    let beta = 2.0 / params.sigma();
    let n = flat.len();
    let mut radii = Vec::with_capacity(n);
    let mut dw = Vec::with_capacity(n);
    let mut d2w = Vec::with_capacity(n);
    for i in 0..n {
        let s = flat.radii()[i];
        let (dv, d2v) = (flat.derivatives()[i], flat.second_derivatives()[i]);
        let rs = c * beta * s.powf(beta - 1.0);
        let rss = c * beta * (beta - 1.0) * s.powf(beta - 2.0);
        let w1 = dv / rs;
        radii.push(c * s.powf(beta));
        dw.push(w1);
        d2w.push((d2v - w1 * rss) / (rs * rs));
    }
    let tail = params.sigma() / (params.p() - 1.0);
    Ok(
        RadialProfile::new(radii, flat.values().to_vec(), Some(dw), Some(tail))?
            .with_second_derivatives(d2w)?,
    )
}
