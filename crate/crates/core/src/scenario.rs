//! Scenario-driven batch runs: a strict flat config format, end-to-end
//! execution of the three approaches, and the CSV artifact layout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::coherent::{
    coherent_amplitudes, q_function, sphere_embedding, sphere_grid, CoherentError, GridCoord,
};
use crate::dynamics::{trajectory_csv, IntegratorConfig};
use crate::fock::{
    build_hamiltonian, EigenPropagator, FockBasis, FockError, ModeRotation, Observable,
};
use crate::ivr::{
    classical_approximation, principal_trajectory, reconstruct_state, run_ensemble,
    ClassicalObservable, EnsembleResult, FilterConfig, GridSpec, IvrError,
};
use crate::model::{ClassicalModel, ModelError, ModelParams, Su2Model, Su3Model};
use crate::observables::{
    compare, series_from_states, series_semiclassical, Approach, Metric, ObservablesError,
    TimeSeries,
};
use crate::util::{fmt_f64, linspace};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}:{line}: {msg}")]
    Config {
        path: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ivr(#[from] IvrError),
    #[error(transparent)]
    Coherent(#[from] CoherentError),
    #[error(transparent)]
    Observables(#[from] ObservablesError),
}

/// Optional pass/fail thresholds checked after a run; a violation flips the
/// process exit code without aborting other scenarios in a suite.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AcceptThresholds {
    pub max_dev_semiclassical: Option<f64>,
    pub max_rms_semiclassical: Option<f64>,
    pub require_no_filtering: bool,
}

/// Fully resolved scenario description.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub params: ModelParams,
    pub w_i: Vec<C64>,
    pub grid_points: usize,
    pub grid_half_width: f64,
    pub lambda: f64,
    pub horizon: f64,
    pub outputs: usize,
    pub rtol: f64,
    pub atol: f64,
    pub q_times: Vec<f64>,
    pub sphere_theta: usize,
    pub sphere_phi: usize,
    pub dump_principal: bool,
    pub accept: AcceptThresholds,
}

impl ScenarioConfig {
    pub fn output_times(&self) -> Vec<f64> {
        linspace(self.horizon, self.outputs)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.params.validate().map_err(|e| e.to_string())?;
        let d = self.params.modes - 1;
        if self.w_i.len() != d {
            return Err(format!(
                "initial state needs {d} complex components, found {}",
                self.w_i.len()
            ));
        }
        if !self.w_i.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err("initial state must be finite".into());
        }
        if self.grid_points == 0 || self.grid_points % 2 == 0 {
            return Err(format!(
                "grid.points_per_axis must be odd and positive, got {}",
                self.grid_points
            ));
        }
        if !(self.grid_half_width > 0.0 && self.grid_half_width.is_finite()) {
            return Err("grid.half_width must be positive".into());
        }
        if self.lambda <= 0.0 || self.lambda.is_nan() {
            return Err("filter.lambda must be positive (or inf)".into());
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err("time.horizon must be positive".into());
        }
        if self.outputs < 2 {
            return Err("time.outputs must be at least 2".into());
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err("integrator tolerances must be positive".into());
        }
        let dt = self.horizon / (self.outputs - 1) as f64;
        for &t in &self.q_times {
            if !(0.0..=self.horizon).contains(&t) {
                return Err(format!("q_times entry {t} outside [0, horizon]"));
            }
            let nearest = (t / dt).round() * dt;
            if (nearest - t).abs() > dt / 2.0 + 1e-12 {
                return Err(format!("q_times entry {t} does not sit near an output time"));
            }
        }
        if self.params.modes != 2 && !self.q_times.is_empty() {
            return Err("phase-space grids (q_times) are available for modes = 2 only".into());
        }
        if self.sphere_theta < 2 || self.sphere_phi < 2 {
            return Err("sphere grid needs at least 2 points per angle".into());
        }
        Ok(())
    }

    /// Serialize back to the config syntax (all values resolved).
    pub fn to_config_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[model]");
        let _ = writeln!(s, "modes = {}", self.params.modes);
        let _ = writeln!(s, "particles = {}", self.params.particles);
        let _ = writeln!(s, "omega = {}", fmt_f64(self.params.omega));
        let _ = writeln!(s, "chi = {}", fmt_f64(self.params.chi));
        let _ = writeln!(s, "\n[initial]");
        for (j, w) in self.w_i.iter().enumerate() {
            let _ = writeln!(s, "w{}_re = {}", j + 1, fmt_f64(w.re));
            let _ = writeln!(s, "w{}_im = {}", j + 1, fmt_f64(w.im));
        }
        let _ = writeln!(s, "\n[grid]");
        let _ = writeln!(s, "points_per_axis = {}", self.grid_points);
        let _ = writeln!(s, "half_width = {}", fmt_f64(self.grid_half_width));
        let _ = writeln!(s, "\n[filter]");
        let _ = writeln!(
            s,
            "lambda = {}",
            if self.lambda.is_finite() {
                fmt_f64(self.lambda)
            } else {
                "inf".to_string()
            }
        );
        let _ = writeln!(s, "\n[time]");
        let _ = writeln!(s, "horizon = {}", fmt_f64(self.horizon));
        let _ = writeln!(s, "outputs = {}", self.outputs);
        let _ = writeln!(s, "\n[integrator]");
        let _ = writeln!(s, "rtol = {}", fmt_f64(self.rtol));
        let _ = writeln!(s, "atol = {}", fmt_f64(self.atol));
        let _ = writeln!(s, "\n[output]");
        if !self.q_times.is_empty() {
            let list = self
                .q_times
                .iter()
                .map(|t| fmt_f64(*t))
                .collect::<Vec<_>>()
                .join(", ");
            let _ = writeln!(s, "q_times = {list}");
        }
        let _ = writeln!(s, "sphere_theta = {}", self.sphere_theta);
        let _ = writeln!(s, "sphere_phi = {}", self.sphere_phi);
        let _ = writeln!(s, "dump_principal = {}", self.dump_principal);
        let mut accept = String::new();
        if let Some(v) = self.accept.max_dev_semiclassical {
            let _ = writeln!(accept, "max_dev_semiclassical = {}", fmt_f64(v));
        }
        if let Some(v) = self.accept.max_rms_semiclassical {
            let _ = writeln!(accept, "max_rms_semiclassical = {}", fmt_f64(v));
        }
        if self.accept.require_no_filtering {
            let _ = writeln!(accept, "require_no_filtering = true");
        }
        if !accept.is_empty() {
            let _ = writeln!(s, "\n[accept]");
            s.push_str(&accept);
        }
        s
    }
}

/// Parse the strict sectioned key-value format. Unknown sections or keys are
/// errors; messages carry the offending line number.
pub fn parse_config(text: &str, path: &str) -> Result<ScenarioConfig, ScenarioError> {
    let err = |line: usize, msg: String| ScenarioError::Config {
        path: path.to_string(),
        line,
        msg,
    };
    // (section, key) -> (line, value)
    let mut entries: BTreeMap<(String, String), (usize, String)> = BTreeMap::new();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(line_no, "unterminated section header".into()))?;
            section = name.trim().to_string();
            const SECTIONS: &[&str] = &[
                "model",
                "initial",
                "grid",
                "filter",
                "time",
                "integrator",
                "output",
                "accept",
            ];
            if !SECTIONS.contains(&section.as_str()) {
                return Err(err(line_no, format!("unknown section [{section}]")));
            }
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, format!("expected `key = value`, found `{line}`")))?;
        if section.is_empty() {
            return Err(err(line_no, "key outside of any section".into()));
        }
        let key = key.trim().to_string();
        let prev = entries.insert(
            (section.clone(), key.clone()),
            (line_no, value.trim().to_string()),
        );
        if prev.is_some() {
            return Err(err(line_no, format!("duplicate key `{key}` in [{section}]")));
        }
    }

    let mut take = |sec: &str, key: &str| entries.remove(&(sec.to_string(), key.to_string()));
    let parse_f64 = |sec: &str, key: &str, (line, v): (usize, String)| -> Result<f64, ScenarioError> {
        if v == "inf" {
            return Ok(f64::INFINITY);
        }
        v.parse::<f64>()
            .map_err(|_| err(line, format!("[{sec}] {key}: expected a number, found `{v}`")))
    };
    let parse_usize =
        |sec: &str, key: &str, (line, v): (usize, String)| -> Result<usize, ScenarioError> {
            v.parse::<usize>().map_err(|_| {
                err(line, format!("[{sec}] {key}: expected a positive integer, found `{v}`"))
            })
        };
    let parse_bool =
        |sec: &str, key: &str, (line, v): (usize, String)| -> Result<bool, ScenarioError> {
            v.parse::<bool>().map_err(|_| {
                err(line, format!("[{sec}] {key}: expected true or false, found `{v}`"))
            })
        };
    let required = |sec: &str, key: &str, v: Option<(usize, String)>| {
        v.ok_or_else(|| err(0, format!("missing required key `{key}` in [{sec}]")))
    };

    let modes = parse_usize("model", "modes", required("model", "modes", take("model", "modes"))?)?;
    let particles = parse_usize(
        "model",
        "particles",
        required("model", "particles", take("model", "particles"))?,
    )? as u32;
    let omega = parse_f64("model", "omega", required("model", "omega", take("model", "omega"))?)?;
    let chi = parse_f64("model", "chi", required("model", "chi", take("model", "chi"))?)?;

    let d = modes.saturating_sub(1);
    let mut w_i = Vec::with_capacity(d);
    for j in 1..=d {
        let re = parse_f64(
            "initial",
            &format!("w{j}_re"),
            required("initial", &format!("w{j}_re"), take("initial", &format!("w{j}_re")))?,
        )?;
        let im = parse_f64(
            "initial",
            &format!("w{j}_im"),
            required("initial", &format!("w{j}_im"), take("initial", &format!("w{j}_im")))?,
        )?;
        w_i.push(C64::new(re, im));
    }

    let grid_points = parse_usize(
        "grid",
        "points_per_axis",
        required("grid", "points_per_axis", take("grid", "points_per_axis"))?,
    )?;
    let grid_half_width = parse_f64(
        "grid",
        "half_width",
        required("grid", "half_width", take("grid", "half_width"))?,
    )?;
    let lambda = parse_f64(
        "filter",
        "lambda",
        required("filter", "lambda", take("filter", "lambda"))?,
    )?;
    let horizon = parse_f64("time", "horizon", required("time", "horizon", take("time", "horizon"))?)?;
    let outputs = parse_usize(
        "time",
        "outputs",
        required("time", "outputs", take("time", "outputs"))?,
    )?;

    let rtol = match take("integrator", "rtol") {
        Some(v) => parse_f64("integrator", "rtol", v)?,
        None => 1e-8,
    };
    let atol = match take("integrator", "atol") {
        Some(v) => parse_f64("integrator", "atol", v)?,
        None => 1e-10,
    };

    let q_times = match take("output", "q_times") {
        Some((line, v)) => v
            .split(',')
            .map(|item| {
                item.trim().parse::<f64>().map_err(|_| {
                    err(line, format!("[output] q_times: bad entry `{}`", item.trim()))
                })
            })
            .collect::<Result<Vec<f64>, _>>()?,
        None => Vec::new(),
    };
    let sphere_theta = match take("output", "sphere_theta") {
        Some(v) => parse_usize("output", "sphere_theta", v)?,
        None => 181,
    };
    let sphere_phi = match take("output", "sphere_phi") {
        Some(v) => parse_usize("output", "sphere_phi", v)?,
        None => 181,
    };
    let dump_principal = match take("output", "dump_principal") {
        Some(v) => parse_bool("output", "dump_principal", v)?,
        None => false,
    };

    let accept = AcceptThresholds {
        max_dev_semiclassical: match take("accept", "max_dev_semiclassical") {
            Some(v) => Some(parse_f64("accept", "max_dev_semiclassical", v)?),
            None => None,
        },
        max_rms_semiclassical: match take("accept", "max_rms_semiclassical") {
            Some(v) => Some(parse_f64("accept", "max_rms_semiclassical", v)?),
            None => None,
        },
        require_no_filtering: match take("accept", "require_no_filtering") {
            Some(v) => parse_bool("accept", "require_no_filtering", v)?,
            None => false,
        },
    };

    if let Some(((sec, key), (line, _))) = entries.into_iter().next() {
        return Err(err(line, format!("unknown key `{key}` in [{sec}]")));
    }

    let config = ScenarioConfig {
        params: ModelParams {
            modes,
            particles,
            omega,
            chi,
        },
        w_i,
        grid_points,
        grid_half_width,
        lambda,
        horizon,
        outputs,
        rtol,
        atol,
        q_times,
        sphere_theta,
        sphere_phi,
        dump_principal,
        accept,
    };
    config
        .validate()
        .map_err(|msg| err(0, msg))?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, &path.display().to_string())
}

/// Everything a finished scenario reports back.
#[derive(Debug)]
pub struct ScenarioReport {
    pub out_dir: PathBuf,
    pub times: Vec<f64>,
    pub szbar_exact: TimeSeries,
    pub szbar_semiclassical: TimeSeries,
    pub szbar_classical: TimeSeries,
    pub b3_exact: Option<TimeSeries>,
    pub b3_semiclassical: Option<TimeSeries>,
    pub total_trajectories: usize,
    pub contributing: usize,
    pub filtered: usize,
    pub singular: usize,
    pub max_dev_semiclassical: f64,
    pub rms_dev_semiclassical: f64,
    pub max_dev_classical: f64,
    pub rms_dev_classical: f64,
    pub wall_seconds: f64,
    pub accept_violations: Vec<String>,
}

impl ScenarioReport {
    pub fn accept_passed(&self) -> bool {
        self.accept_violations.is_empty()
    }
}

fn write(out_dir: &Path, name: &str, content: &str) -> Result<(), ScenarioError> {
    std::fs::write(out_dir.join(name), content)?;
    Ok(())
}

fn time_label(t: f64) -> String {
    format!("{t}").replace('-', "m")
}

/// Run one scenario to completion, writing all artifacts under `out_dir`.
pub fn run_scenario(config: &ScenarioConfig, out_dir: &Path) -> Result<ScenarioReport, ScenarioError> {
    let started = Instant::now();
    config
        .validate()
        .map_err(|msg| ScenarioError::Config {
            path: "<config>".into(),
            line: 0,
            msg,
        })?;
    std::fs::create_dir_all(out_dir)?;
    write(out_dir, "config.resolved.cfg", &config.to_config_text())?;

    let times = config.output_times();
    let integ = IntegratorConfig {
        rtol: config.rtol,
        atol: config.atol,
        ..Default::default()
    };
    let model: Box<dyn ClassicalModel> = match config.params.modes {
        2 => Box::new(Su2Model::new(config.params.clone())?),
        _ => Box::new(Su3Model::new(config.params.clone())?),
    };
    let basis = FockBasis::new(config.params.modes, config.params.particles)?;
    let rotation = if config.params.modes == 3 {
        Some(ModeRotation::new(&basis)?)
    } else {
        None
    };

    // exact reference
    let hamiltonian = build_hamiltonian(&config.params, &basis)?;
    let propagator = EigenPropagator::new(&hamiltonian)?;
    let psi0 = coherent_amplitudes(&basis, &config.w_i)?;
    let exact_states = propagator.evolve(&psi0, &times)?;
    let szbar_exact = series_from_states(
        &basis,
        &exact_states,
        &times,
        Observable::PopulationImbalance,
        rotation.as_ref(),
        Approach::Exact,
    )?;

    // semiclassical ensemble
    let grid = GridSpec::centered(
        config.w_i.iter().map(|z| z.conj()).collect(),
        config.grid_half_width,
        config.grid_points,
    );
    let ensemble: EnsembleResult = run_ensemble(
        model.as_ref(),
        &basis,
        &config.w_i,
        &grid,
        &FilterConfig {
            lambda: config.lambda,
        },
        &times,
        &integ,
    )?;
    let szbar_semiclassical = series_semiclassical(
        &basis,
        &ensemble.table,
        Observable::PopulationImbalance,
        rotation.as_ref(),
    )?;

    // classical principal-trajectory approximation
    let classical_values = classical_approximation(
        model.as_ref(),
        &config.w_i,
        ClassicalObservable::PopulationImbalance,
        &times,
        &integ,
    )?;
    let szbar_classical = TimeSeries::new(times.clone(), classical_values, Approach::Classical);

    write(out_dir, "szbar_exact.csv", &szbar_exact.csv())?;
    write(out_dir, "szbar_semiclassical.csv", &szbar_semiclassical.csv())?;
    write(out_dir, "szbar_classical.csv", &szbar_classical.csv())?;
    write(
        out_dir,
        "survival.csv",
        &crate::ivr::survival_csv(&ensemble.survival),
    )?;

    let (b3_exact, b3_semiclassical) = if config.params.modes == 3 {
        let exact = series_from_states(
            &basis,
            &exact_states,
            &times,
            Observable::ThirdModeFraction,
            rotation.as_ref(),
            Approach::Exact,
        )?;
        let sc = series_semiclassical(
            &basis,
            &ensemble.table,
            Observable::ThirdModeFraction,
            rotation.as_ref(),
        )?;
        let classical = classical_approximation(
            model.as_ref(),
            &config.w_i,
            ClassicalObservable::ThirdModeFraction,
            &times,
            &integ,
        )?;
        write(out_dir, "b3_exact.csv", &exact.csv())?;
        write(out_dir, "b3_semiclassical.csv", &sc.csv())?;
        write(
            out_dir,
            "b3_classical.csv",
            &TimeSeries::new(times.clone(), classical, Approach::Classical).csv(),
        )?;
        (Some(exact), Some(sc))
    } else {
        (None, None)
    };

    // Husimi grids on the sphere at the requested times
    let dt = config.horizon / (config.outputs - 1) as f64;
    for &t in &config.q_times {
        let ti = (t / dt).round() as usize;
        let label = time_label(times[ti]);
        let exact_q = q_function(
            &basis,
            &exact_states[ti],
            sphere_grid(config.params.particles, config.sphere_theta, config.sphere_phi),
        )?;
        write(
            out_dir,
            &format!("qgrid_t{label}_exact.csv"),
            &qgrid_csv(&exact_q)?,
        )?;
        write(
            out_dir,
            &format!("sphere_t{label}_exact.csv"),
            &sphere_csv(&exact_q)?,
        )?;
        let psi_sc = reconstruct_state(&ensemble.table, &basis, ti)?;
        let sc_q = q_function(
            &basis,
            &psi_sc,
            sphere_grid(config.params.particles, config.sphere_theta, config.sphere_phi),
        )?;
        write(
            out_dir,
            &format!("qgrid_t{label}_semiclassical.csv"),
            &qgrid_csv(&sc_q)?,
        )?;
        write(
            out_dir,
            &format!("sphere_t{label}_semiclassical.csv"),
            &sphere_csv(&sc_q)?,
        )?;
    }

    if config.dump_principal {
        let rec = principal_trajectory(model.as_ref(), &config.w_i, &times, &integ)?;
        write(out_dir, "principal.csv", &trajectory_csv(&rec))?;
    }

    let max_dev_semiclassical = compare(&szbar_semiclassical, &szbar_exact, Metric::MaxAbs)?;
    let rms_dev_semiclassical = compare(&szbar_semiclassical, &szbar_exact, Metric::Rms)?;
    let max_dev_classical = compare(&szbar_classical, &szbar_exact, Metric::MaxAbs)?;
    let rms_dev_classical = compare(&szbar_classical, &szbar_exact, Metric::Rms)?;

    let mut accept_violations = Vec::new();
    if let Some(cap) = config.accept.max_dev_semiclassical {
        if max_dev_semiclassical > cap {
            accept_violations.push(format!(
                "max |semiclassical - exact| = {max_dev_semiclassical:.4e} exceeds {cap:.4e}"
            ));
        }
    }
    if let Some(cap) = config.accept.max_rms_semiclassical {
        if rms_dev_semiclassical > cap {
            accept_violations.push(format!(
                "rms |semiclassical - exact| = {rms_dev_semiclassical:.4e} exceeds {cap:.4e}"
            ));
        }
    }
    if config.accept.require_no_filtering && ensemble.filtered > 0 {
        accept_violations.push(format!(
            "{} trajectories were filtered but none were allowed",
            ensemble.filtered
        ));
    }

    let report = ScenarioReport {
        out_dir: out_dir.to_path_buf(),
        times,
        szbar_exact,
        szbar_semiclassical,
        szbar_classical,
        b3_exact,
        b3_semiclassical,
        total_trajectories: ensemble.total_trajectories,
        contributing: ensemble.contributing_count(),
        filtered: ensemble.filtered,
        singular: ensemble.singular,
        max_dev_semiclassical,
        rms_dev_semiclassical,
        max_dev_classical,
        rms_dev_classical,
        wall_seconds: started.elapsed().as_secs_f64(),
        accept_violations,
    };
    write(out_dir, "summary.txt", &summary_text(config, &report, &ensemble))?;
    Ok(report)
}

fn summary_text(
    config: &ScenarioConfig,
    report: &ScenarioReport,
    ensemble: &EnsembleResult,
) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "model: modes={} particles={} omega={} chi={}",
        config.params.modes, config.params.particles, config.params.omega, config.params.chi
    );
    let _ = writeln!(
        s,
        "grid: {} points per axis, half width {}, {} trajectories",
        config.grid_points, config.grid_half_width, report.total_trajectories
    );
    let _ = writeln!(s, "filter: lambda = {}", config.lambda);
    let _ = writeln!(
        s,
        "trajectories: contributing={} filtered={} singular={}",
        report.contributing, report.filtered, report.singular
    );
    let _ = writeln!(
        s,
        "integrator: accepted_steps={} rejected_steps={}",
        ensemble.steps_accepted, ensemble.steps_rejected
    );
    let _ = writeln!(
        s,
        "deviation semiclassical vs exact: max={:.6e} rms={:.6e}",
        report.max_dev_semiclassical, report.rms_dev_semiclassical
    );
    let _ = writeln!(
        s,
        "deviation classical vs exact:     max={:.6e} rms={:.6e}",
        report.max_dev_classical, report.rms_dev_classical
    );
    let _ = writeln!(s, "wall time: {:.3} s", report.wall_seconds);
    if report.accept_violations.is_empty() {
        let _ = writeln!(s, "accept: PASS");
    } else {
        for v in &report.accept_violations {
            let _ = writeln!(s, "accept: FAIL {v}");
        }
    }
    s
}

fn qgrid_csv(grid: &crate::coherent::QGrid) -> Result<String, ScenarioError> {
    let mut out = String::from("theta,phi,q\n");
    for p in &grid.points {
        match p.coord {
            GridCoord::Sphere { theta, phi } => {
                out.push_str(&format!(
                    "{},{},{}\n",
                    fmt_f64(theta),
                    fmt_f64(phi),
                    fmt_f64(p.q)
                ));
            }
            GridCoord::Plane => {
                let mut row = Vec::new();
                for w in &p.w {
                    row.push(fmt_f64(w.re));
                    row.push(fmt_f64(w.im));
                }
                row.push(fmt_f64(p.q));
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
    }
    Ok(out)
}

fn sphere_csv(grid: &crate::coherent::QGrid) -> Result<String, ScenarioError> {
    let xyz = sphere_embedding(grid)?;
    let mut out = String::from("theta,phi,q,x,y,z\n");
    for (p, v) in grid.points.iter().zip(xyz) {
        if let GridCoord::Sphere { theta, phi } = p.coord {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt_f64(theta),
                fmt_f64(phi),
                fmt_f64(p.q),
                fmt_f64(v[0]),
                fmt_f64(v[1]),
                fmt_f64(v[2])
            ));
        }
    }
    Ok(out)
}

/// Outcome of one suite entry.
#[derive(Debug)]
pub enum SuiteOutcome {
    Completed(ScenarioReport),
    Failed(String),
}

/// Override the integrator tolerances from a single knob: rtol = tol and
/// atol = tol / 100, matching the ratio of the defaults.
pub fn apply_tolerance(config: &mut ScenarioConfig, tol: f64) {
    config.rtol = tol;
    config.atol = tol * 1e-2;
}

/// Run every config in order; failures and threshold violations are recorded
/// but do not stop the remaining scenarios.
pub fn run_suite(
    configs: &[PathBuf],
    out_root: &Path,
    tol_override: Option<f64>,
) -> Result<Vec<(String, SuiteOutcome)>, ScenarioError> {
    std::fs::create_dir_all(out_root)?;
    let mut results = Vec::new();
    for path in configs {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "scenario".to_string());
        let outcome = match load_config(path) {
            Ok(mut config) => {
                if let Some(tol) = tol_override {
                    apply_tolerance(&mut config, tol);
                }
                match run_scenario(&config, &out_root.join(&stem)) {
                    Ok(report) => SuiteOutcome::Completed(report),
                    Err(e) => SuiteOutcome::Failed(e.to_string()),
                }
            }
            Err(e) => SuiteOutcome::Failed(e.to_string()),
        };
        results.push((stem, outcome));
    }
    let mut summary = String::new();
    for (name, outcome) in &results {
        match outcome {
            SuiteOutcome::Completed(r) if r.accept_passed() => {
                let _ = writeln!(
                    summary,
                    "{name}: ok (max dev {:.3e}, {:.1} s)",
                    r.max_dev_semiclassical, r.wall_seconds
                );
            }
            SuiteOutcome::Completed(r) => {
                let _ = writeln!(summary, "{name}: accept FAILED ({})", r.accept_violations.join("; "));
            }
            SuiteOutcome::Failed(msg) => {
                let _ = writeln!(summary, "{name}: error: {msg}");
            }
        }
    }
    std::fs::write(out_root.join("suite_summary.txt"), summary)?;
    Ok(results)
}
