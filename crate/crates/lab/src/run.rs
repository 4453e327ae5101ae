//! Subcommand dispatch and result emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cocycle_core::chain::{contraction_exponent, estimate_sigma2, SigmaEstimate, SigmaOptions};
use cocycle_core::exits::{
    conditional_cdf, harmonic_fixed_point_residual, harmonic_v, kolmogorov_pvalue, ks_statistic, tail_curve,
    ConditionalOptions,
};
use cocycle_core::laws::{check_p1, check_p5, estimate_lyapunov, recenter_to_zero_lyapunov, MatrixLaw};
use cocycle_core::matgroup::{ChainState, Mat};
use cocycle_core::reference::{bm_exit_tail, rayleigh_cdf, srw_exit_dp, LatticeWalkSpec};
use cocycle_core::rng::Streams;
use cocycle_core::spectral::{discretize_operator, estimate_theta, spectral_gap};
use cocycle_core::LabError;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{defaults, ConfigError, ExperimentConfig, LawSpec, SigmaMethodSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Subcommand {
    Lyapunov,
    Sigma,
    Contraction,
    Spectrum,
    Theta,
    Tail,
    Harmonic,
    Conditional,
    OracleCheck,
    PConditions,
}

impl Subcommand {
    pub const ALL: [Subcommand; 10] = [
        Subcommand::Lyapunov,
        Subcommand::Sigma,
        Subcommand::Contraction,
        Subcommand::Spectrum,
        Subcommand::Theta,
        Subcommand::Tail,
        Subcommand::Harmonic,
        Subcommand::Conditional,
        Subcommand::OracleCheck,
        Subcommand::PConditions,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Lyapunov => "lyapunov",
            Subcommand::Sigma => "sigma",
            Subcommand::Contraction => "contraction",
            Subcommand::Spectrum => "spectrum",
            Subcommand::Theta => "theta",
            Subcommand::Tail => "tail",
            Subcommand::Harmonic => "harmonic",
            Subcommand::Conditional => "conditional",
            Subcommand::OracleCheck => "oracle-check",
            Subcommand::PConditions => "p-conditions",
        }
    }

    // distinct stream families per subcommand
    fn tag(self) -> u64 {
        0x100 + Subcommand::ALL.iter().position(|s| *s == self).unwrap() as u64
    }
}

const TAG_RECENTER: u64 = 0x1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Diagnostic,
    Io,
}

#[derive(Debug, thiserror::Error)]
#[error("{message} [config {config_hash}]")]
pub struct RunError {
    pub kind: ErrorKind,
    pub message: String,
    pub config_hash: String,
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Validation => 2,
            ErrorKind::Diagnostic => 3,
            ErrorKind::Io => 1,
        }
    }
}

/// Errors before a config exists carry no hash.
pub fn config_error(e: ConfigError) -> RunError {
    RunError { kind: ErrorKind::Validation, message: e.to_string(), config_hash: "none".into() }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct X0Echo {
    pub matrix: Vec<f64>,
    pub direction: Vec<f64>,
}

/// One estimate. Everything except `wall_time` is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRecord {
    pub name: String,
    pub law: String,
    pub x0: X0Echo,
    pub y: Option<f64>,
    pub n: Option<usize>,
    pub estimate: f64,
    pub stderr: Option<f64>,
    pub seed: u64,
    pub wall_time: f64,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub subcommand: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_hat: Option<f64>,
    pub records: Vec<EstimateRecord>,
    /// Failed diagnostics; non-empty means exit status 3.
    pub failures: Vec<String>,
    pub files: Vec<String>,
    pub wall_time: f64,
    #[serde(skip)]
    pub csv: Vec<(String, String)>,
}

impl RunRecord {
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }

    /// Summary JSON with every `wall_time` removed.
    pub fn estimates_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("record serializes");
        strip_timings(&mut v);
        serde_json::to_string_pretty(&v).expect("value serializes")
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, body) in &self.csv {
            std::fs::write(dir.join(name), body)?;
        }
        std::fs::write(dir.join("summary.json"), self.summary_json())
    }
}

pub fn strip_timings(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("wall_time");
            map.values_mut().for_each(strip_timings);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timings),
        _ => {}
    }
}

pub fn output_dir(cfg: &ExperimentConfig, sub: Subcommand) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out").join(sub.name()))
}

/// Runs `sub` on a pool of `cfg.threads` workers and writes the results
/// to the output directory.
pub fn run_subcommand(sub: Subcommand, cfg: &ExperimentConfig) -> Result<RunRecord, RunError> {
    let record = compute(sub, cfg)?;
    record.write(&output_dir(cfg, sub)).map_err(|e| RunError {
        kind: ErrorKind::Io,
        message: format!("writing results: {e}"),
        config_hash: record.config_hash.clone(),
    })?;
    Ok(record)
}

/// Runs `sub` without touching the filesystem.
pub fn compute(sub: Subcommand, cfg: &ExperimentConfig) -> Result<RunRecord, RunError> {
    let hash = cfg.content_hash();
    let wrap = |kind, message: String| RunError { kind, message, config_hash: hash.clone() };
    cfg.validate().map_err(|e| wrap(ErrorKind::Validation, e.to_string()))?;
    let job = || Runner::new(sub, cfg, &hash).and_then(|r| r.run());
    let out = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| wrap(ErrorKind::Io, format!("thread pool: {e}")))?
            .install(job),
        None => job(),
    };
    out.map_err(|e| match e {
        Failure::Config(c) => wrap(ErrorKind::Validation, c.to_string()),
        Failure::Lab(l) => wrap(lab_kind(&l), l.to_string()),
    })
}

fn lab_kind(e: &LabError) -> ErrorKind {
    match e {
        LabError::InvalidInput(_) | LabError::NonInvertible { .. } | LabError::UnsupportedDimension(_) => {
            ErrorKind::Validation
        }
        _ => ErrorKind::Diagnostic,
    }
}

enum Failure {
    Config(ConfigError),
    Lab(LabError),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        Failure::Lab(e)
    }
}

fn invalid(key: &str, message: impl Into<String>) -> Failure {
    Failure::Config(ConfigError::Invalid { key: key.into(), message: message.into() })
}

struct Runner<'a> {
    sub: Subcommand,
    cfg: &'a ExperimentConfig,
    hash: &'a str,
    law: MatrixLaw,
    gamma_hat: Option<f64>,
    x0: ChainState,
    x0_echo: X0Echo,
    streams: Streams,
    started: Instant,
    records: Vec<EstimateRecord>,
    failures: Vec<String>,
    csv: Vec<(String, String)>,
}

fn flat(m: &Mat) -> Vec<f64> {
    m.as_slice().to_vec()
}

impl<'a> Runner<'a> {
    fn new(sub: Subcommand, cfg: &'a ExperimentConfig, hash: &'a str) -> Result<Self, Failure> {
        let started = Instant::now();
        let base = cfg.build_base_law()?;
        let x0 = cfg.build_x0(base.dim())?;
        let root = Streams::new(cfg.seed);
        let (law, gamma_hat) = if cfg.recenter.unwrap_or(false) {
            let g = estimate_lyapunov(
                &base,
                &x0.moved_dir(),
                cfg.lyapunov_steps.unwrap_or(defaults::LYAPUNOV_STEPS),
                cfg.burn_in.unwrap_or(defaults::BURN_IN),
                cfg.lyapunov_reps.unwrap_or(defaults::LYAPUNOV_REPS),
                root.sub(TAG_RECENTER),
            )?;
            (recenter_to_zero_lyapunov(&base, g.value)?, Some(g.value))
        } else {
            (base, None)
        };
        let x0_echo = X0Echo { matrix: flat(x0.g.matrix()), direction: x0.dir.rep().to_vec() };
        Ok(Runner {
            sub,
            cfg,
            hash,
            law,
            gamma_hat,
            x0,
            x0_echo,
            streams: root.sub(sub.tag()),
            started,
            records: Vec::new(),
            failures: Vec::new(),
            csv: Vec::new(),
        })
    }

    fn run(mut self) -> Result<RunRecord, Failure> {
        match self.sub {
            Subcommand::Lyapunov => self.lyapunov()?,
            Subcommand::Sigma => self.sigma()?,
            Subcommand::Contraction => self.contraction()?,
            Subcommand::Spectrum => self.spectrum()?,
            Subcommand::Theta => self.theta()?,
            Subcommand::Tail => self.tail()?,
            Subcommand::Harmonic => self.harmonic()?,
            Subcommand::Conditional => self.conditional()?,
            Subcommand::OracleCheck => self.oracle_check()?,
            Subcommand::PConditions => self.p_conditions()?,
        }
        Ok(RunRecord {
            subcommand: self.sub.name().into(),
            config_hash: self.hash.to_string(),
            config: self.cfg.clone(),
            gamma_hat: self.gamma_hat,
            records: self.records,
            failures: self.failures,
            files: self.csv.iter().map(|(n, _)| n.clone()).collect(),
            wall_time: self.started.elapsed().as_secs_f64(),
            csv: self.csv,
        })
    }

    fn n(&self) -> usize {
        self.cfg.n.unwrap_or(defaults::N)
    }

    fn n_reps(&self) -> usize {
        self.cfg.n_reps.unwrap_or(defaults::N_REPS)
    }

    fn n_paths(&self) -> usize {
        self.cfg.n_paths.unwrap_or(defaults::N_PATHS)
    }

    fn epsilon(&self) -> f64 {
        self.cfg.epsilon.unwrap_or(defaults::EPSILON)
    }

    fn sigma_opts(&self) -> SigmaOptions {
        SigmaOptions {
            burn_in: self.cfg.burn_in.unwrap_or(defaults::BURN_IN),
            max_lag: self.cfg.max_lag.unwrap_or(defaults::MAX_LAG),
        }
    }

    fn sigma_method(&self) -> SigmaMethodSpec {
        self.cfg.sigma_method.unwrap_or(SigmaMethodSpec::Batch)
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        name: &str,
        y: Option<f64>,
        n: Option<usize>,
        estimate: f64,
        stderr: Option<f64>,
        since: Instant,
        extra: Value,
    ) {
        let extra = match extra {
            Value::Object(m) => m.into_iter().collect(),
            Value::Null => BTreeMap::new(),
            other => BTreeMap::from([("value".to_string(), other)]),
        };
        self.records.push(EstimateRecord {
            name: name.into(),
            law: self.law.label().into(),
            x0: self.x0_echo.clone(),
            y,
            n,
            estimate,
            stderr,
            seed: self.cfg.seed,
            wall_time: since.elapsed().as_secs_f64(),
            extra,
        });
    }

    fn lyapunov(&mut self) -> Result<(), Failure> {
        let t = Instant::now();
        let n = self.cfg.lyapunov_steps.unwrap_or(defaults::LYAPUNOV_STEPS);
        let est = estimate_lyapunov(
            &self.law,
            &self.x0.moved_dir(),
            n,
            self.cfg.burn_in.unwrap_or(defaults::BURN_IN),
            self.cfg.lyapunov_reps.unwrap_or(defaults::LYAPUNOV_REPS),
            self.streams,
        )?;
        self.push("gamma", None, Some(n), est.value, Some(est.stderr), t, json!({ "n_reps": est.n_samples }));
        Ok(())
    }

    fn sigma_estimate(&self, n: usize, reps: usize, streams: Streams) -> Result<SigmaEstimate, Failure> {
        let method = self.sigma_method().into();
        if self.cfg.sigma_method == Some(SigmaMethodSpec::Series) && self.sigma_opts().max_lag >= n {
            return Err(invalid("max_lag", "must be below the trajectory length"));
        }
        Ok(estimate_sigma2(&self.law, &self.x0, n, reps, method, self.sigma_opts(), streams)?)
    }

    fn sigma(&mut self) -> Result<(), Failure> {
        let t = Instant::now();
        let n = self.n();
        let s = self.sigma_estimate(n, self.n_reps(), self.streams)?;
        let extra = json!({
            "method": format!("{:?}", s.method),
            "truncation": s.truncation,
            "degenerate": s.degenerate,
            "sigma": s.sigma(),
            "sigma_stderr": s.sigma_stderr(),
            "n_reps": s.n_reps,
        });
        self.push("sigma2", None, Some(n), s.sigma2, Some(s.stderr), t, extra);
        Ok(())
    }

    fn contraction(&mut self) -> Result<(), Failure> {
        let t = Instant::now();
        let n = self.n();
        let eps = self.epsilon();
        let est = contraction_exponent(&self.law, eps, n, self.n_reps(), self.streams)?;
        self.push("rho_epsilon", None, Some(n), est.value, Some(est.stderr), t, json!({ "epsilon": eps }));
        Ok(())
    }

    fn spectrum(&mut self) -> Result<(), Failure> {
        let m = self.cfg.m_nodes.unwrap_or(defaults::M_NODES);
        let mc = self.cfg.mc_per_node.unwrap_or(defaults::MC_PER_NODE);
        let eta0 = self.cfg.eta0.unwrap_or(defaults::ETA0);
        let mut csv = String::from("t,leading_re,leading_im,leading_modulus,second_modulus\n");
        let mut report = Vec::new();
        for (i, t) in self.cfg.t_values().into_iter().enumerate() {
            let start = Instant::now();
            // one grid stream family shared by all t, so curves in t are smooth
            let grid = discretize_operator(&self.law, t, m, mc, eta0, self.streams)?;
            let r = spectral_gap(&grid)?;
            let gap = r.leading.norm() - r.second_modulus;
            let _ = writeln!(
                csv,
                "{t},{:e},{:e},{:e},{:e}",
                r.leading.re,
                r.leading.im,
                r.leading.norm(),
                r.second_modulus
            );
            report.push(json!({ "t": t, "leading": { "re": r.leading.re, "im": r.leading.im }, "gap": gap }));
            if self.cfg.write_grid.unwrap_or(false) {
                self.csv.push((format!("grid_t{i}.csv"), grid.to_csv()));
            }
            let extra = json!({
                "t": t,
                "leading_re": r.leading.re,
                "leading_im": r.leading.im,
                "second_modulus": r.second_modulus,
                "gap": gap,
                "iterations": r.iterations,
                "m_nodes": m,
                "mc_per_node": mc,
            });
            self.push("leading_modulus", None, None, r.leading.norm(), None, start, extra);
        }
        self.csv.push(("spectrum.csv".into(), csv));
        self.csv.push(("spectrum.json".into(), serde_json::to_string_pretty(&report).unwrap()));
        Ok(())
    }

    fn theta(&mut self) -> Result<(), Failure> {
        let t = Instant::now();
        let nt = self.cfg.truncation_n.unwrap_or(defaults::TRUNCATION_N);
        let th = estimate_theta(&self.law, &self.x0, nt, self.n_paths(), self.streams)?;
        let mut csv = String::from("n,term,stderr\n");
        for (k, (a, s)) in th.per_term.iter().zip(&th.per_term_stderr).enumerate() {
            let _ = writeln!(csv, "{},{a:e},{s:e}", k + 1);
        }
        self.csv.push(("theta_terms.csv".into(), csv));
        let extra = json!({
            "rho": th.rho,
            "p_theta": th.p_theta(),
            "tail_bound": th.tail_bound,
            "decay_ratio": th.decay_ratio,
        });
        self.push("theta", None, Some(nt), th.theta, Some(th.theta_stderr), t, extra);
        Ok(())
    }

    fn tail(&mut self) -> Result<(), Failure> {
        let grid = self.cfg.n_grid();
        for (j, y) in self.cfg.levels().into_iter().enumerate() {
            let t = Instant::now();
            let curve = tail_curve(&self.law, &self.x0, y, &grid, self.n_paths(), self.streams.sub(j as u64))?;
            self.csv.push((format!("tail_y{j}.csv"), curve.to_csv()));
            for p in &curve.points {
                self.push("p_hat", Some(y), Some(p.n), p.p_hat, Some(p.stderr), t, Value::Null);
            }
        }
        Ok(())
    }

    fn harmonic(&mut self) -> Result<(), Failure> {
        let n = self.n();
        let mut csv = String::from("y,v_hat,stderr,v_half,stabilized\n");
        for (j, y) in self.cfg.levels().into_iter().enumerate() {
            let t = Instant::now();
            let streams = self.streams.sub(j as u64);
            let v = harmonic_v(&self.law, &self.x0, y, n, self.n_paths(), streams.sub(0))?;
            let _ = writeln!(csv, "{y},{:e},{:e},{:e},{}", v.v_hat, v.stderr, v.v_half, v.stabilized);
            let extra = json!({ "v_half": v.v_half, "diff_stderr": v.diff_stderr, "stabilized": v.stabilized });
            self.push("v_hat", Some(y), Some(n), v.v_hat, Some(v.stderr), t, extra);
            if self.cfg.fixed_point.unwrap_or(false) {
                let t = Instant::now();
                let inner = self.cfg.inner_horizon.unwrap_or(defaults::INNER_HORIZON);
                let fp = harmonic_fixed_point_residual(
                    &self.law,
                    &self.x0,
                    y,
                    self.n_paths(),
                    inner,
                    self.cfg.inner_reps.unwrap_or(defaults::INNER_REPS),
                    streams.sub(1),
                )?;
                let extra = json!({ "lhs": fp.lhs, "rhs": fp.rhs, "consistent_3se": fp.consistent(3.0) });
                self.push("fixed_point_residual", Some(y), Some(inner), fp.residual, Some(fp.stderr), t, extra);
            }
        }
        self.csv.push(("harmonic.csv".into(), csv));
        Ok(())
    }

    fn conditional(&mut self) -> Result<(), Failure> {
        let n = self.n();
        let sigma = self.sigma_estimate(
            self.cfg.sigma_n.unwrap_or(defaults::SIGMA_N),
            self.cfg.sigma_reps.unwrap_or(defaults::SIGMA_REPS),
            self.streams.sub(0),
        )?;
        let opts = ConditionalOptions {
            max_paths: self.cfg.max_paths.unwrap_or(defaults::MAX_PATHS),
            ..ConditionalOptions::default()
        };
        let count = self.cfg.n_conditioned.unwrap_or(defaults::N_CONDITIONED);
        for (j, y) in self.cfg.levels().into_iter().enumerate() {
            let t = Instant::now();
            let s = conditional_cdf(&self.law, &self.x0, y, n, count, &sigma, opts, self.streams.sub(1 + j as u64))?;
            let ks = ks_statistic(&s.cdf, rayleigh_cdf);
            self.csv.push((format!("conditional_y{j}.csv"), s.cdf.to_csv()));
            let extra = json!({
                "ks_rayleigh": ks,
                "ks_pvalue": kolmogorov_pvalue(ks, s.cdf.n()),
                "acceptance_rate": s.acceptance_rate,
                "paths_used": s.paths_used,
                "sigma": s.sigma,
                "n_conditioned": s.cdf.n(),
            });
            self.push("median", Some(y), Some(n), s.cdf.median(), None, t, extra);
        }
        Ok(())
    }

    /// Coin-law walk against the exact lattice recursion.
    fn oracle_check(&mut self) -> Result<(), Failure> {
        if self.cfg.law != (LawSpec::Coin {}) || self.cfg.recenter.unwrap_or(false) {
            return Err(invalid("law", "oracle-check needs kind = \"coin\" without recentring"));
        }
        let dir = self.x0.moved_dir();
        if !dir.rep().iter().any(|c| (c.abs() - 1.0).abs() < 1e-12) {
            return Err(invalid("x0", "oracle-check needs g·v on a coordinate axis"));
        }
        let step_log = 2f64.ln();
        let grid = self.cfg.n_grid();
        let horizon = *grid.last().unwrap();
        let n_paths = self.n_paths();
        for (j, y) in self.cfg.levels().into_iter().enumerate() {
            let k = (y / step_log).round();
            if (k * step_log - y).abs() > 1e-9 * y.max(1.0) {
                return Err(invalid("y", "oracle-check levels must be multiples of ln 2"));
            }
            let t = Instant::now();
            let dp = srw_exit_dp(&LatticeWalkSpec { start_level: k as u64, step_log, horizon })?;
            let mc = tail_curve(&self.law, &self.x0, y, &grid, n_paths, self.streams.sub(j as u64))?;
            self.csv.push((format!("oracle_dp_tail_y{j}.csv"), dp.tail_csv()));
            self.csv.push((format!("oracle_dp_pmf_y{j}.csv"), dp.pmf_csv()));
            self.csv.push((format!("oracle_mc_tail_y{j}.csv"), mc.to_csv()));
            let mut worst: f64 = 0.0;
            for p in &mc.points {
                let exact = dp.tail[p.n];
                let se = (exact * (1.0 - exact) / n_paths as f64).sqrt();
                let z = if se > 0.0 {
                    (p.p_hat - exact).abs() / se
                } else if p.p_hat == exact {
                    0.0
                } else {
                    f64::INFINITY
                };
                worst = worst.max(z);
                let extra = json!({ "exact": exact, "z": z });
                self.push("p_hat", Some(y), Some(p.n), p.p_hat, Some(p.stderr), t, extra);
            }
            if worst > 3.0 {
                self.failures
                    .push(format!("y = {y}: Monte Carlo tail is {worst:.2} binomial stderr from the exact tail"));
            }
            let sigma = step_log;
            let bm = bm_exit_tail(y, horizon as f64, sigma)?;
            let extra = json!({ "dp": dp.tail[horizon], "bm": bm });
            self.push("dp_over_bm", Some(y), Some(horizon), dp.tail[horizon] / bm, None, t, extra);
        }
        Ok(())
    }

    fn p_conditions(&mut self) -> Result<(), Failure> {
        let samples = self.cfg.n_samples.unwrap_or(defaults::N_SAMPLES);
        let t = Instant::now();
        let delta0 = self.cfg.delta0.unwrap_or(defaults::DELTA0);
        let p1 = check_p1(&self.law, delta0, samples, self.streams.sub(1))?;
        if p1.heavy_tail || !p1.moment.value.is_finite() {
            self.failures.push(format!("P1: E N(g)^{delta0} looks infinite (top 1% of draws dominate)"));
        }
        let extra = json!({ "delta0": delta0, "max_log_n": p1.max_log_n, "heavy_tail": p1.heavy_tail });
        self.push("p1_moment", None, None, p1.moment.value, Some(p1.moment.stderr), t, extra);

        let t = Instant::now();
        let delta = self.cfg.delta.unwrap_or(defaults::DELTA);
        let dirs = self.cfg.n_directions.unwrap_or(defaults::N_DIRECTIONS);
        let p5 = check_p5(&self.law, delta, dirs, samples, self.streams.sub(2))?;
        if p5.min_probability == 0.0 {
            self.failures
                .push(format!("P5: no draw expands the worst direction by more than e^{delta} (probability 0)"));
        }
        let extra = json!({ "delta": delta, "worst_direction": p5.worst_direction, "n_directions": dirs });
        self.push("p5_min_probability", None, None, p5.min_probability, Some(p5.stderr), t, extra);

        let t = Instant::now();
        let n = self.n();
        let eps = self.epsilon();
        let c = contraction_exponent(&self.law, eps, n, self.n_reps(), self.streams.sub(3))?;
        if c.value >= 1.0 - 3.0 * c.stderr {
            self.failures.push(format!("contraction: rho_eps = {:.6} is not below 1", c.value));
        }
        self.push("rho_epsilon", None, Some(n), c.value, Some(c.stderr), t, json!({ "epsilon": eps }));
        Ok(())
    }
}
