//! Experiment configuration: TOML schema, defaults, validation and hashing.

use std::path::PathBuf;

use cocycle_core::chain::SigmaMethod;
use cocycle_core::laws::MatrixLaw;
use cocycle_core::matgroup::{make_group_element, ChainState, GroupElement, Mat, ProjectivePoint};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Values used when a key is absent from the config file.
pub mod defaults {
    pub const Y: f64 = 5.0;
    pub const N: usize = 1000;
    pub const N_GRID_MAX: usize = 64;
    pub const N_PATHS: usize = 100_000;
    pub const N_REPS: usize = 64;
    pub const BURN_IN: usize = 1000;
    pub const MAX_LAG: usize = 50;
    pub const ETA0: f64 = 0.5;
    pub const DELTA0: f64 = 0.5;
    pub const DELTA: f64 = 0.1;
    pub const EPSILON: f64 = 0.25;
    pub const M_NODES: usize = 256;
    pub const MC_PER_NODE: usize = 4000;
    pub const T: [f64; 4] = [0.0, 0.1, 0.25, 0.5];
    pub const TRUNCATION_N: usize = 16;
    pub const N_CONDITIONED: usize = 10_000;
    pub const MAX_PATHS: usize = 50_000_000;
    pub const SIGMA_N: usize = 1000;
    pub const SIGMA_REPS: usize = 1000;
    pub const INNER_HORIZON: usize = 500;
    pub const INNER_REPS: usize = 4;
    pub const N_SAMPLES: usize = 100_000;
    pub const N_DIRECTIONS: usize = 256;
    pub const LYAPUNOV_STEPS: usize = 1_000_000;
    pub const LYAPUNOV_REPS: usize = 16;
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub weight: f64,
    pub matrix: Vec<f64>,
}

/// Law block: a `kind` tag plus the parameters of that kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LawSpec {
    /// diag(2, 1/2) or diag(1/2, 2) with probability 1/2 each.
    Coin {},
    PointMass {
        matrix: Vec<f64>,
    },
    FiniteAtomic {
        atoms: Vec<AtomSpec>,
    },
    SmoothExponential {
        dim: usize,
        scale: f64,
        #[serde(default)]
        log_shift: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        drift: Option<Vec<f64>>,
    },
    ScaledMixture {
        alpha: f64,
        lambda: f64,
        base: Box<LawSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
}

/// A single level or a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Levels {
    One(f64),
    Sweep(Vec<f64>),
}

impl Levels {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Levels::One(y) => vec![*y],
            Levels::Sweep(ys) => ys.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMethodSpec {
    Batch,
    Series,
}

impl From<SigmaMethodSpec> for SigmaMethod {
    fn from(m: SigmaMethodSpec) -> Self {
        match m {
            SigmaMethodSpec::Batch => SigmaMethod::BatchVariance,
            SigmaMethodSpec::Series => SigmaMethod::CovarianceSeries,
        }
    }
}

macro_rules! config_struct {
    ($( $(#[$doc:meta])* $field:ident : $ty:ty ),* $(,)?) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct ExperimentConfig {
            pub seed: u64,
            pub law: LawSpec,
            $(
                $(#[$doc])*
                #[serde(default, skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }
    };
}

config_struct! {
    /// Worker threads; results do not depend on it.
    threads: usize,
    output_dir: PathBuf,
    x0: StateSpec,
    /// Rescale the law to γ = 0 using a Lyapunov estimate.
    recenter: bool,
    lyapunov_steps: usize,
    lyapunov_reps: usize,
    y: Levels,
    n: usize,
    n_grid: Vec<usize>,
    n_paths: usize,
    n_reps: usize,
    sigma_method: SigmaMethodSpec,
    burn_in: usize,
    max_lag: usize,
    sigma_n: usize,
    sigma_reps: usize,
    eta0: f64,
    delta0: f64,
    delta: f64,
    epsilon: f64,
    t: Vec<f64>,
    m_nodes: usize,
    mc_per_node: usize,
    write_grid: bool,
    truncation_n: usize,
    n_conditioned: usize,
    max_paths: usize,
    fixed_point: bool,
    inner_horizon: usize,
    inner_reps: usize,
    n_samples: usize,
    n_directions: usize,
}

/// Command-line values that replace the corresponding config keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with(text, &Overrides::default())
    }

    /// Parses with overrides applied first, so `--seed` can supply a
    /// seed missing from the file.
    pub fn from_toml_with(text: &str, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        if let Some(seed) = overrides.seed {
            let seed = i64::try_from(seed).map_err(|_| invalid("seed", "overrides must fit in 63 bits"))?;
            table.insert("seed".into(), toml::Value::Integer(seed));
        }
        if let Some(threads) = overrides.threads {
            table.insert("threads".into(), toml::Value::Integer(threads as i64));
        }
        if let Some(dir) = &overrides.output_dir {
            table.insert("output_dir".into(), toml::Value::String(dir.display().to_string()));
        }
        let cfg: ExperimentConfig =
            table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of `blob <len>\0<toml>` over the config without the
    /// keys that cannot change results (`threads`, `output_dir`).
    pub fn content_hash(&self) -> String {
        let mut canon = self.clone();
        canon.threads = None;
        canon.output_dir = None;
        let body = canon.to_toml();
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", body.len()).as_bytes());
        h.update(body.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let counts: [(&str, Option<usize>); 22] = [
            ("threads", self.threads),
            ("lyapunov_steps", self.lyapunov_steps),
            ("lyapunov_reps", self.lyapunov_reps),
            ("n", self.n),
            ("n_paths", self.n_paths),
            ("n_reps", self.n_reps),
            ("max_lag", self.max_lag),
            ("sigma_n", self.sigma_n),
            ("sigma_reps", self.sigma_reps),
            ("m_nodes", self.m_nodes),
            ("mc_per_node", self.mc_per_node),
            ("truncation_n", self.truncation_n),
            ("n_conditioned", self.n_conditioned),
            ("max_paths", self.max_paths),
            ("inner_horizon", self.inner_horizon),
            ("inner_reps", self.inner_reps),
            ("n_samples", self.n_samples),
            ("n_directions", self.n_directions),
            ("burn_in", self.burn_in.map(|b| b.max(1))),
            ("n_grid", self.n_grid.as_ref().map(|g| g.len())),
            ("t", self.t.as_ref().map(|t| t.len())),
            ("y", self.y.as_ref().map(|y| y.values().len())),
        ];
        for (key, v) in counts {
            if v == Some(0) {
                return Err(invalid(key, "must be positive (or non-empty)"));
            }
        }
        if let Some(grid) = &self.n_grid {
            if grid[0] == 0 || grid.windows(2).any(|w| w[1] <= w[0]) {
                return Err(invalid("n_grid", "must be positive and strictly increasing"));
            }
        }
        if let Some(y) = &self.y {
            if y.values().iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(invalid("y", "levels must be finite and positive"));
            }
        }
        let eta0 = self.eta0.unwrap_or(defaults::ETA0);
        if !(eta0 > 0.0 && eta0.is_finite()) {
            return Err(invalid("eta0", "must be positive"));
        }
        if let Some(t) = &self.t {
            if t.iter().any(|t| !(t.abs() <= eta0)) {
                return Err(invalid("t", format!("every |t| must be at most eta0 = {eta0}")));
            }
        }
        if let Some(d) = self.delta0 {
            if !(d > 0.0 && d <= 1.0) {
                return Err(invalid("delta0", "must lie in (0, 1]"));
            }
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(invalid("delta", "must be positive"));
            }
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e < 1.0) {
                return Err(invalid("epsilon", "must lie in (0, 1)"));
            }
        }
        let law = self.build_base_law()?;
        if let Some(x0) = &self.x0 {
            build_state(x0, law.dim())?;
        }
        Ok(())
    }

    /// The law as written, before any recentring.
    pub fn build_base_law(&self) -> Result<MatrixLaw, ConfigError> {
        build_law(&self.law, "law")
    }

    pub fn build_x0(&self, dim: usize) -> Result<ChainState, ConfigError> {
        match &self.x0 {
            Some(spec) => build_state(spec, dim),
            None => Ok(ChainState::standard(dim)),
        }
    }

    pub fn levels(&self) -> Vec<f64> {
        self.y.as_ref().map(Levels::values).unwrap_or_else(|| vec![defaults::Y])
    }

    pub fn n_grid(&self) -> Vec<usize> {
        self.n_grid.clone().unwrap_or_else(|| (1..=defaults::N_GRID_MAX).collect())
    }

    pub fn t_values(&self) -> Vec<f64> {
        self.t.clone().unwrap_or_else(|| defaults::T.to_vec())
    }
}

fn matrix_literal(values: &[f64], key: &str) -> Result<GroupElement, ConfigError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid(key, "matrix entries must be finite"));
    }
    let m = Mat::from_row_major(values.to_vec()).map_err(|e| invalid(key, e.to_string()))?;
    if m.dim() < 2 {
        return Err(invalid(key, "matrices must be at least 2×2"));
    }
    make_group_element(m).map_err(|e| invalid(key, e.to_string()))
}

fn build_law(spec: &LawSpec, key: &str) -> Result<MatrixLaw, ConfigError> {
    let law = match spec {
        LawSpec::Coin {} => MatrixLaw::coin(),
        LawSpec::PointMass { matrix } => MatrixLaw::point_mass(matrix_literal(matrix, &format!("{key}.matrix"))?),
        LawSpec::FiniteAtomic { atoms } => {
            let mut built = Vec::with_capacity(atoms.len());
            for (i, a) in atoms.iter().enumerate() {
                built.push((a.weight, matrix_literal(&a.matrix, &format!("{key}.atoms[{i}].matrix"))?));
            }
            let d = built.first().map(|(_, g)| g.dim());
            if built.iter().any(|(_, g)| Some(g.dim()) != d) {
                return Err(invalid(&format!("{key}.atoms"), "all atoms must share one dimension"));
            }
            MatrixLaw::finite_atomic(built).map_err(|e| invalid(&format!("{key}.atoms"), e.to_string()))?
        }
        LawSpec::SmoothExponential { dim, scale, log_shift, drift } => {
            if *dim < 2 {
                return Err(invalid(&format!("{key}.dim"), "must be at least 2"));
            }
            let law = MatrixLaw::smooth_exponential(*dim, *scale, *log_shift)
                .map_err(|e| invalid(&format!("{key}.scale"), e.to_string()))?;
            match drift {
                Some(values) => {
                    let dk = format!("{key}.drift");
                    if values.len() != dim * dim || values.iter().any(|v| !v.is_finite()) {
                        return Err(invalid(&dk, format!("must be {} finite entries", dim * dim)));
                    }
                    let m = Mat::from_row_major(values.clone()).map_err(|e| invalid(&dk, e.to_string()))?;
                    law.with_drift(m).map_err(|e| invalid(&dk, e.to_string()))?
                }
                None => law,
            }
        }
        LawSpec::ScaledMixture { alpha, lambda, base } => {
            let base = build_law(base, &format!("{key}.base"))?;
            MatrixLaw::scaled_mixture(*alpha, *lambda, base).map_err(|e| invalid(key, e.to_string()))?
        }
    };
    Ok(law)
}

fn build_state(spec: &StateSpec, dim: usize) -> Result<ChainState, ConfigError> {
    let g = match &spec.matrix {
        Some(m) => {
            let g = matrix_literal(m, "x0.matrix")?;
            if g.dim() != dim {
                return Err(invalid("x0.matrix", format!("law is {dim}-dimensional")));
            }
            g
        }
        None => GroupElement::identity(dim),
    };
    let dir = match &spec.direction {
        Some(v) => {
            if v.len() != dim {
                return Err(invalid("x0.direction", format!("needs {dim} entries")));
            }
            ProjectivePoint::new(v).map_err(|e| invalid("x0.direction", e.to_string()))?
        }
        None => ProjectivePoint::axis(dim, 0),
    };
    ChainState::new(g, dir).map_err(|e| invalid("x0", e.to_string()))
}
