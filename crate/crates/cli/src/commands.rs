//! Subcommand bodies. Each returns a JSON result and a CSV body.

use std::path::Path;

use ckn_core::entropy_flow::{run_decay, FlowConfig, FlowError, MeshConfig, StationaryProfile};
use ckn_core::minimizer::{
    best_constant_radial, hs_upper_bound, minimize_radial, Initialization, MinimizationReport,
    MinimizerError, MinimizerOptions,
};
use ckn_core::params::{
    kappa, m_from_p, p_upper, validate, validate_diffusion, ParamsError, ProblemParams,
};
use ckn_core::profiles::{
    graded_grid, Barenblatt, GridConfig, ProfileError, RadialFunction, RadialProfile,
};
use ckn_core::radial_solver::{find_ground_state, map_to_radius, ShootingError};
use ckn_core::selection::{ell, m_d, SelectionContext, SelectionError};
use ckn_core::spectral::{
    hardy_poincare_constant, hardy_poincare_gap, lowest_eigenvalue, transported_operator,
    SpectralError, SpectralGrid, SweepPoint,
};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{
    FlowArgs, InitKind, MinimizeArgs, ParamsArgs, ProfileArgs, ProfileKind, SelectionArgs,
    ShootArgs, SpectralGridArgs, SpectrumArgs, SweepArgs, SweepKind,
};

#[derive(Debug)]
pub enum CliError {
    /// Rejected parameters; exit code 2.
    Validation(String),
    /// Numerical failure inside a module; exit code 3.
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid parameters: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o: {m}"),
        }
    }
}

impl From<ParamsError> for CliError {
    fn from(e: ParamsError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ProfileError> for CliError {
    fn from(e: ProfileError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<ShootingError> for CliError {
    fn from(e: ShootingError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

macro_rules! split_params_error {
    ($($t:ident),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                match e {
                    $t::Params(p) => p.into(),
                    other => CliError::Numerical(other.to_string()),
                }
            }
        }
    )*};
}

split_params_error!(MinimizerError, SpectralError, SelectionError, FlowError);

pub struct Report {
    pub json: Value,
    pub csv: String,
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn profile_csv(profile: &RadialProfile) -> Result<String, CliError> {
    let mut buf = Vec::new();
    profile.write_csv(&mut buf, true)?;
    String::from_utf8(buf).map_err(|e| CliError::Io(e.to_string()))
}

pub fn params(args: &ParamsArgs) -> Result<Report, CliError> {
    let pt = &args.point;
    let params = validate(pt.d, pt.gamma, pt.p)?;
    let derived = params.derive();
    let hs = hs_upper_bound(&params);
    let json = json!({
        "params": params,
        "derived": derived,
        "kappa": kappa(&params),
        "pUpper": p_upper(pt.d, pt.gamma),
        "m": m_from_p(pt.p),
        "hsConstant": hs.c_hs,
        "hsBound": hs.bound,
        "cStar": hs.c_star,
    });
    let mut rows = Vec::new();
    let mut flat = serde_json::to_value(derived).expect("serializes");
    let obj = flat.as_object_mut().expect("object");
    for key in ["kappa", "pUpper", "m", "hsConstant", "hsBound", "cStar"] {
        obj.insert(key.to_string(), json[key].clone());
    }
    for (k, v) in obj.iter() {
        rows.push(vec![k.clone(), v.to_string()]);
    }
    Ok(Report {
        json,
        csv: csv_table(&["key", "value"], rows),
    })
}

pub fn profile(args: &ProfileArgs) -> Result<Report, CliError> {
    let pt = &args.point;
    let params = validate(pt.d, pt.gamma, pt.p)?;
    let w = match args.kind {
        ProfileKind::WStar => Barenblatt::w_star(&params),
        ProfileKind::WGammaStar => Barenblatt::w_gamma_star(&params),
    };
    if !(args.r_min > 0.0 && args.r_max > args.r_min) || args.per_decade == 0 {
        return Err(CliError::Validation(format!(
            "grid needs 0 < r-min < r-max and per-decade > 0 (got {}, {}, {})",
            args.r_min, args.r_max, args.per_decade
        )));
    }
    let profile = RadialProfile::sample(&w, &graded_grid(args.r_min, args.r_max, args.per_decade))?;
    Ok(Report {
        json: json!({ "barenblatt": w, "profile": profile }),
        csv: profile_csv(&profile)?,
    })
}

pub fn shoot(args: &ShootArgs) -> Result<Report, CliError> {
    let pt = &args.point;
    let params = validate(pt.d, pt.gamma, pt.p)?;
    let res = find_ground_state(&params, args.tol)?;
    let eta = params.derive().eta;
    let expected = (pt.p * (2.0 - pt.gamma) / eta).powf(1.0 / (pt.p - 1.0));
    let mapped = map_to_radius(&params, &res.profile)?;
    let w = Barenblatt::w_gamma_star(&params);
    let sup = mapped
        .radii()
        .iter()
        .zip(mapped.values())
        .map(|(&r, &v)| (v - w.value(r)).abs())
        .fold(0.0, f64::max);
    Ok(Report {
        json: json!({
            "v0": res.v0,
            "v0Expected": expected,
            "relativeError": (res.v0 - expected).abs() / expected,
            "classification": res.classification,
            "supError": sup,
            "bisectionHistory": res.bisection_history,
            "profile": mapped,
        }),
        csv: profile_csv(&mapped)?,
    })
}

fn minimize_grid(grid: usize, r_min: f64, r_max: f64) -> Result<GridConfig, CliError> {
    if !(r_min > 0.0 && r_max > r_min) || grid < 8 {
        return Err(CliError::Validation(format!(
            "grid needs 0 < r-min < r-max and at least 8 intervals (got {r_min}, {r_max}, {grid})"
        )));
    }
    let decades = (r_max / r_min).log10();
    Ok(GridConfig {
        r_min,
        r_max,
        points_per_decade: ((grid as f64 / decades).round() as usize).max(1),
    })
}

fn report_summary(report: &MinimizationReport, params: &ProblemParams) -> Value {
    let (c_ref, j_ref) = best_constant_radial(params);
    let c_star = 1.0 / report.best_quotient;
    json!({
        "cStar": c_star,
        "cStarReference": c_ref,
        "relativeError": (c_star - c_ref).abs() / c_ref,
        "jReference": j_ref,
        "report": report,
    })
}

pub fn minimize(args: &MinimizeArgs) -> Result<Report, CliError> {
    let pt = &args.point;
    let params = validate(pt.d, pt.gamma, pt.p)?;
    let grid = minimize_grid(args.grid, args.r_min, args.r_max)?;
    let options = MinimizerOptions {
        mass: args.mass,
        init: match args.init {
            InitKind::Barenblatt => Initialization::Barenblatt {
                factor: args.init_factor,
            },
            InitKind::Gaussian => Initialization::Gaussian,
        },
        max_iterations: args.max_iter,
        richardson: args.richardson,
    };
    let report = minimize_radial(&params, &grid, args.tol, &options)?;
    Ok(Report {
        json: report_summary(&report, &params),
        csv: profile_csv(&report.best_profile)?,
    })
}

fn spectral_grid(g: &SpectralGridArgs) -> Result<SpectralGrid, CliError> {
    if !(g.r_min > 0.0 && g.r_max > g.r_min) || g.nodes < 16 {
        return Err(CliError::Validation(format!(
            "spectral grid needs 0 < r-min < r-max and at least 16 nodes (got {}, {}, {})",
            g.r_min, g.r_max, g.nodes
        )));
    }
    Ok(SpectralGrid {
        r_min: g.r_min,
        r_max: g.r_max,
        nodes: g.nodes,
    })
}

fn sector_point(
    params: &ProblemParams,
    ell: u32,
    grid: &SpectralGrid,
) -> Result<SweepPoint, CliError> {
    let op = transported_operator(params, ell, grid)?;
    let pair = lowest_eigenvalue(&op, None)?;
    Ok(SweepPoint {
        gamma: params.gamma(),
        ell,
        lambda_min: pair.value,
        grid_n: grid.nodes,
        r_max: grid.r_max,
    })
}

const SECTOR_HEADER: [&str; 5] = ["gamma", "ell", "lambdaMin", "gridN", "rMax"];

fn sector_row(s: &SweepPoint) -> Vec<String> {
    vec![
        num(s.gamma),
        s.ell.to_string(),
        num(s.lambda_min),
        s.grid_n.to_string(),
        num(s.r_max),
    ]
}

pub fn spectrum(args: &SpectrumArgs) -> Result<Report, CliError> {
    let pt = &args.point;
    let params = validate(pt.d, pt.gamma, pt.p)?;
    let grid = spectral_grid(&args.grid)?;
    match args.ell {
        Some(ell) => {
            let point = sector_point(&params, ell, &grid)?;
            Ok(Report {
                json: serde_json::to_value(point).expect("serializes"),
                csv: csv_table(&SECTOR_HEADER, [sector_row(&point)]),
            })
        }
        None => {
            if pt.gamma != 0.0 {
                return Err(CliError::Validation(
                    "the Hardy–Poincaré gap is defined at gamma = 0; pass --ell for a sector at gamma > 0".into(),
                ));
            }
            let hp = hardy_poincare_gap(pt.d, pt.p, &grid)?;
            let exact = hardy_poincare_constant(pt.d, pt.p);
            let rows = hp.sectors.iter().map(|(l, v)| vec![l.to_string(), num(*v)]);
            Ok(Report {
                json: json!({
                    "gap": hp.gap,
                    "exact": exact,
                    "relativeError": (hp.gap - exact).abs() / exact,
                    "minimizerEll": hp.minimizer_ell,
                    "correlation": hp.correlation,
                    "sectors": hp.sectors,
                    "gridN": grid.nodes,
                }),
                csv: csv_table(&["ell", "lambdaMin"], rows),
            })
        }
    }
}

/// `𝔅_C (1 + ε cos log r)`.
struct CosPerturbed {
    base: StationaryProfile,
    eps: f64,
}

impl RadialFunction for CosPerturbed {
    fn value(&self, r: f64) -> f64 {
        self.base.value(r) * (1.0 + self.eps * r.ln().cos())
    }
    fn derivative(&self, r: f64) -> f64 {
        let t = r.ln();
        let b = self.base.profile();
        b.derivative(r) * (1.0 + self.eps * t.cos()) - b.value(r) * self.eps * t.sin() / r
    }
}

fn load_profile(path: &Path) -> Result<RadialProfile, CliError> {
    let text = std::fs::read_to_string(path)?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    Ok(if is_json {
        RadialProfile::from_json(&text)?
    } else {
        RadialProfile::read_csv(text.as_bytes())?
    })
}

pub fn flow(args: &FlowArgs) -> Result<Report, CliError> {
    validate_diffusion(args.d, args.gamma, args.m)?;
    if !(args.t_final > 0.0 && args.dt_max > 0.0 && args.c > 0.0) || args.epsilon.abs() >= 1.0 {
        return Err(CliError::Validation(
            "flow needs T > 0, dt-max > 0, c > 0 and |epsilon| < 1".into(),
        ));
    }
    let config = FlowConfig {
        d: args.d,
        gamma: args.gamma,
        m: args.m,
        mesh: MeshConfig {
            cells: args.cells,
            r_max: args.r_max,
            core: args.core,
        },
    };
    let series = match &args.initial {
        Some(path) => run_decay(&load_profile(path)?, &config, args.t_final, args.dt_max)?,
        None => {
            let base = StationaryProfile {
                c: args.c,
                mass: f64::NAN,
                m: args.m,
                gamma: args.gamma,
                d: args.d,
            };
            let u0 = CosPerturbed {
                base,
                eps: args.epsilon,
            };
            run_decay(&u0, &config, args.t_final, args.dt_max)?
        }
    };
    let f0 = series.records[0].free_energy;
    let mut buf = Vec::new();
    series.write_csv(&mut buf)?;
    Ok(Report {
        json: json!({
            "rateBound": series.rate_bound,
            "massDrift": series.max_mass_drift(),
            "identityResidual": series.identity_residual(0.0),
            "boundRatio": series.bound_ratio(series.rate_bound),
            "minRatio": series.min_ratio(1e-12 * f0),
            "asymptoticRate": series.asymptotic_rate(),
            "dissipative": series.is_dissipative(),
            "steps": series.records.len() - 1,
            "stationary": series.stationary,
            "records": series.records,
        }),
        csv: String::from_utf8(buf).map_err(|e| CliError::Io(e.to_string()))?,
    })
}

pub fn selection(args: &SelectionArgs) -> Result<Report, CliError> {
    validate(args.d, 0.0, args.p)?;
    let ctx = SelectionContext::new(args.d, args.p)?;
    let n = args.samples.max(2);
    let xs: Vec<f64> = (0..n)
        .map(|i| 10f64.powf(-2.0 + 4.0 * i as f64 / (n - 1) as f64))
        .collect();
    let mut rows = Vec::with_capacity(n);
    let mut curves = Vec::with_capacity(n);
    let f0 = ctx.f_selection(0.0)?;
    for &x in &xs {
        let l = ell(x, args.d)?;
        let md = m_d(x, args.d)?;
        let gp = ctx.g_prime(x)?;
        let f = ctx.f_selection(x)?;
        rows.push(vec![num(x), num(l), num(md), num(gp), num(f)]);
        curves.push(json!({ "x": x, "ell": l, "mD": md, "gPrime": gp, "f": f }));
    }
    let total = ctx.total_k_integral()?;
    Ok(Report {
        json: json!({
            "mass": ctx.mass,
            "crossingRadius": ctx.crossing_radius,
            "crossingRadiusClosedForm": ctx.crossing_radius_closed_form(),
            "totalK": total,
            "totalKClosedForm": ctx.total_k_closed_form(),
            "inverseSquareIntegral": ctx.inverse_square_integral()?,
            "fAtZero": f0,
            "curves": curves,
        }),
        csv: csv_table(&["x", "ell", "mD", "gPrime", "F"], rows),
    })
}

const MINIMIZE_HEADER: [&str; 7] = ["d", "gamma", "p", "CStar", "J", "gridN", "errEst"];

pub fn sweep(args: &SweepArgs) -> Result<Report, CliError> {
    let gammas = args.gamma_values();
    for &g in &gammas {
        validate(args.d, g, args.p)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let results: Vec<(Value, Vec<String>)> = pool.install(|| {
        gammas
            .par_iter()
            .map(|&g| sweep_point(args, g))
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir)?;
        for (i, (value, _)) in results.iter().enumerate() {
            let doc = json!({ "schema": "ckn.sweep-point.v1", "index": i, "result": value });
            let text = serde_json::to_string_pretty(&doc).expect("serializes");
            std::fs::write(dir.join(format!("point-{i:03}.json")), text + "\n")?;
        }
    }
    let header: &[&str] = match args.kind {
        SweepKind::Minimize => &MINIMIZE_HEADER,
        SweepKind::Spectral => &SECTOR_HEADER,
    };
    let (values, rows): (Vec<Value>, Vec<Vec<String>>) = results.into_iter().unzip();
    Ok(Report {
        json: json!({ "points": values }),
        csv: csv_table(header, rows),
    })
}

fn sweep_point(args: &SweepArgs, gamma: f64) -> Result<(Value, Vec<String>), CliError> {
    let params = validate(args.d, gamma, args.p)?;
    match args.kind {
        SweepKind::Spectral => {
            let point = sector_point(&params, args.ell, &spectral_grid(&args.spectral)?)?;
            Ok((
                serde_json::to_value(point).expect("serializes"),
                sector_row(&point),
            ))
        }
        SweepKind::Minimize => {
            let grid = minimize_grid(args.grid, 1e-4, 1e4)?;
            let report = minimize_radial(&params, &grid, args.tol, &MinimizerOptions::default())?;
            let row = vec![
                args.d.to_string(),
                num(gamma),
                num(args.p),
                num(1.0 / report.best_quotient),
                num(report.j_gamma),
                report.grid_n.to_string(),
                opt(report.err_est),
            ];
            let value = json!({
                "d": args.d,
                "gamma": gamma,
                "p": args.p,
                "CStar": 1.0 / report.best_quotient,
                "J": report.j_gamma,
                "gridN": report.grid_n,
                "errEst": report.err_est,
            });
            Ok((value, row))
        }
    }
}
