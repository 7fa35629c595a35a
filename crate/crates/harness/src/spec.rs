//! Experiment specifications (the `--config` JSON schema).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spectral_precond::{NesConfig, SpdKind, TestFunction, UpdateConfig};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    FixedPointFull,
    IterateFull,
    FixedPointKron,
    IterateKron,
    SpdOpt,
    Nes,
    TrainDemo,
    CayleyBench,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::FixedPointFull => "fixed_point_full",
            ExperimentKind::IterateFull => "iterate_full",
            ExperimentKind::FixedPointKron => "fixed_point_kron",
            ExperimentKind::IterateKron => "iterate_kron",
            ExperimentKind::SpdOpt => "spd_opt",
            ExperimentKind::Nes => "nes",
            ExperimentKind::TrainDemo => "train_demo",
            ExperimentKind::CayleyBench => "cayley_bench",
        }
    }

    /// Methods that make sense for this kind.
    pub fn allowed_methods(self) -> &'static [Method] {
        use Method::*;
        match self {
            ExperimentKind::FixedPointFull | ExperimentKind::IterateFull => &[Spectral, SpectralTruncated, DefaultEma],
            ExperimentKind::FixedPointKron | ExperimentKind::IterateKron => {
                &[KronExact, KronTruncated, KronProjection, DefaultEma]
            }
            ExperimentKind::SpdOpt => &[Spectral],
            ExperimentKind::Nes => &[NesSpectral],
            ExperimentKind::TrainDemo => &[KronExact, KronTruncated],
            ExperimentKind::CayleyBench => &[Spectral, SpectralTruncated],
        }
    }

    fn is_kron(self) -> bool {
        matches!(self, ExperimentKind::FixedPointKron | ExperimentKind::IterateKron)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Spectral,
    SpectralTruncated,
    DefaultEma,
    KronExact,
    KronTruncated,
    KronProjection,
    NesSpectral,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Spectral => "spectral",
            Method::SpectralTruncated => "spectral_truncated",
            Method::DefaultEma => "default_ema",
            Method::KronExact => "kron_exact",
            Method::KronTruncated => "kron_truncated",
            Method::KronProjection => "kron_projection",
            Method::NesSpectral => "nes_spectral",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn width(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }
}

/// Starting curvature shared by every method of a matching experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Identity,
    /// Start at the target covariance `Σ` (full-matrix kinds only).
    Target,
}

/// Synthetic classification task and optimizer extras for `train_demo`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoParams {
    pub classes: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub samples_per_class: usize,
    pub batch_size: usize,
    /// Distance scale of the class means relative to unit within-class noise.
    pub separation: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for DemoParams {
    fn default() -> Self {
        Self {
            classes: 10,
            input_dim: 32,
            hidden: 64,
            samples_per_class: 50,
            batch_size: 50,
            separation: 0.7,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemParams {
    /// Condition number of the generated `Σ` (matching) or `Q` (SPD optimization).
    pub cond: f64,
    pub init: InitKind,
    pub spd_kind: SpdKind,
    /// Observations for metric nearness; 0 means `10·d`.
    pub num_points: usize,
    /// Minibatch size for metric nearness; 0 means full batch.
    pub batch_size: usize,
    pub test_function: TestFunction,
    /// NES population settings; the population defaults to `4 + ⌊3 ln d⌋`.
    pub nes: Option<NesConfig>,
    /// Sample the NES starting mean uniformly from this box (defaults per function).
    pub init_box: Option<[f64; 2]>,
    /// Instead, start at this distance from the minimizer in a random direction.
    pub init_distance: Option<f64>,
    /// Initial NES search standard deviation; defaults to a sixth of the box width
    /// or half of `init_distance`.
    pub init_sigma: Option<f64>,
    /// Stop NES once this many objective evaluations have been spent.
    pub max_evaluations: Option<usize>,
    /// Replace `config.beta1/beta2` by the xNES-equivalent rates for NES runs.
    pub nes_auto_rates: bool,
    /// Skew-generator norm for `cayley_bench`.
    pub cayley_norm: f64,
    pub demo: DemoParams,
}

impl Default for ProblemParams {
    fn default() -> Self {
        Self {
            cond: 100.0,
            init: InitKind::Identity,
            spd_kind: SpdKind::LogDet,
            num_points: 0,
            batch_size: 0,
            test_function: TestFunction::Rosenbrock,
            nes: None,
            init_box: None,
            init_distance: None,
            init_sigma: None,
            max_evaluations: None,
            nes_auto_rates: true,
            cayley_norm: 0.4,
            demo: DemoParams::default(),
        }
    }
}

/// Conventional search domains of the test functions.
pub fn standard_box(f: TestFunction) -> [f64; 2] {
    match f {
        TestFunction::Ackley => [-32.768, 32.768],
        TestFunction::Rosenbrock => [-5.0, 10.0],
        TestFunction::Bohachevsky => [-100.0, 100.0],
        TestFunction::Schaffer => [-100.0, 100.0],
        TestFunction::Griewank => [-600.0, 600.0],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub id: String,
    pub kind: ExperimentKind,
    /// `[d]` for full-matrix kinds, `[n, m]` for Kronecker kinds.
    pub dims: Vec<usize>,
    /// Iterations (epochs for `train_demo`, trials for `cayley_bench`).
    pub steps: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub config: UpdateConfig,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub problem: ProblemParams,
    /// Record metrics every this many iterations (the last one is always recorded).
    #[serde(default = "one")]
    pub record_every: usize,
    /// Compute the Wasserstein-2 metric every this many iterations; 0 disables it.
    #[serde(default = "one")]
    pub w2_every: usize,
    #[serde(default)]
    pub precision: Precision,
    /// When false, `wall_time_s` is written as 0 so traces are byte-reproducible.
    #[serde(default = "yes")]
    pub record_wall_time: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl ExperimentSpec {
    /// A spec with default problem settings and paper-scale dims for `kind`.
    pub fn new(id: impl Into<String>, kind: ExperimentKind, methods: Vec<Method>) -> Self {
        let dims = match kind {
            ExperimentKind::FixedPointFull | ExperimentKind::IterateFull => vec![100],
            ExperimentKind::FixedPointKron | ExperimentKind::IterateKron => vec![9, 11],
            ExperimentKind::SpdOpt => vec![60],
            ExperimentKind::Nes => vec![10],
            ExperimentKind::TrainDemo => vec![],
            ExperimentKind::CayleyBench => vec![50],
        };
        Self {
            id: id.into(),
            kind,
            dims,
            steps: 1000,
            seeds: vec![0],
            config: UpdateConfig::default(),
            methods,
            problem: ProblemParams::default(),
            record_every: 1,
            w2_every: 1,
            precision: Precision::F64,
            record_wall_time: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.steps == 0 && self.kind != ExperimentKind::TrainDemo {
            return bad("steps must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return bad("methods must be distinct".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        for m in &self.methods {
            if !self.kind.allowed_methods().contains(m) {
                return bad(format!("method '{}' does not apply to kind '{}'", m.name(), self.kind.name()));
            }
        }
        let want = match self.kind {
            ExperimentKind::TrainDemo => 0,
            k if k.is_kron() => 2,
            _ => 1,
        };
        if self.dims.len() != want || self.dims.contains(&0) {
            return bad(format!("kind '{}' expects {want} positive dims, got {:?}", self.kind.name(), self.dims));
        }
        if self.record_every == 0 {
            return bad("record_every must be positive".into());
        }
        self.config.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        let p = &self.problem;
        if !(p.cond.is_finite() && p.cond >= 1.0) {
            return bad(format!("cond must be >= 1, got {}", p.cond));
        }
        if p.init == InitKind::Target && self.kind.is_kron() {
            return bad("init 'target' is only available for full-matrix kinds".into());
        }
        if let Some(nes) = &p.nes {
            nes.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if let Some([lo, hi]) = p.init_box {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return bad("init_box must be an increasing finite interval".into());
            }
        }
        if self.kind == ExperimentKind::Nes && self.dims[0] < 2 {
            return bad("NES test functions need at least 2 dims".into());
        }
        if self.kind == ExperimentKind::TrainDemo {
            let d = &p.demo;
            if d.classes < 2 || d.input_dim == 0 || d.hidden == 0 || d.samples_per_class == 0 || d.batch_size == 0 {
                return bad("demo sizes must be positive with at least 2 classes".into());
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("spec serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
