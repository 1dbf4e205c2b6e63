//! Experiment orchestration: trial configuration, single trials, metric
//! aggregation, rank statistics and the multi-trial suite.

mod stats;
mod suite;
mod trial;

pub use stats::{aggregate, friedman_iman_davenport, AggregateRow, FriedmanResult};
pub use suite::{
    build_rank_table, read_raw_csv, render_aggregate_table, run_suite, write_aggregate_csv,
    write_raw_csv, RankBlocking, RankSummary, SuiteInputs, SuiteOptions, SuiteOutput, TrialFailure,
    AGGREGATE_HEADER, RAW_HEADER,
};
pub use trial::{run_trial, topk_accuracy, TrialOutcome, TrialResult};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::Architecture;

/// Default label smoothing factor.
pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_KD_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_LAMBDA: f64 = 1e-4;
pub const DEFAULT_HIDDEN: usize = 64;
/// Number of repetitions per configuration.
pub const DEFAULT_SEEDS: [u64; 4] = [0, 1, 2, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Encoding {
    /// One-hot targets.
    Sl,
    /// Label smoothing.
    Ls,
    /// Label-similarity curriculum.
    Lcl,
    /// Knowledge distillation from an SL-trained teacher.
    Kd,
    /// Deep mutual learning of two peers.
    Dml,
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Encoding::Sl => "SL",
            Encoding::Ls => "LS",
            Encoding::Lcl => "LCL",
            Encoding::Kd => "KD",
            Encoding::Dml => "DML",
        })
    }
}

impl FromStr for Encoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SL" => Ok(Encoding::Sl),
            "LS" => Ok(Encoding::Ls),
            "LCL" => Ok(Encoding::Lcl),
            "KD" => Ok(Encoding::Kd),
            "DML" => Ok(Encoding::Dml),
            _ => Err(Error::InvalidConfig(format!("unknown encoding `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SimilaritySourceKind {
    Embedding,
    Attribute,
    Hierarchy,
    File,
}

impl fmt::Display for SimilaritySourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimilaritySourceKind::Embedding => "embedding",
            SimilaritySourceKind::Attribute => "attribute",
            SimilaritySourceKind::Hierarchy => "hierarchy",
            SimilaritySourceKind::File => "file",
        })
    }
}

impl FromStr for SimilaritySourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(SimilaritySourceKind::Embedding),
            "attribute" => Ok(SimilaritySourceKind::Attribute),
            "hierarchy" => Ok(SimilaritySourceKind::Hierarchy),
            "file" => Ok(SimilaritySourceKind::File),
            _ => Err(Error::InvalidConfig(format!(
                "unknown similarity source `{s}`"
            ))),
        }
    }
}

/// One point of the experiment grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub encoding: Encoding,
    /// Cooling parameter, LCL only.
    pub epsilon: Option<f64>,
    /// Smoothing factor, LS only (defaults to 0.1).
    pub alpha: Option<f64>,
    /// Teacher softmax temperature, KD only (defaults to 1).
    pub kd_temperature: Option<f64>,
    pub dr: f64,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub lr_decay: f64,
    pub lambda: f64,
    pub architecture: Architecture,
    /// LCL only.
    pub similarity_source: Option<SimilaritySourceKind>,
    /// Re-checks the curriculum axioms over the epoch budget inside LCL
    /// trials.
    pub debug_verify_curriculum: bool,
}

impl ExperimentConfig {
    /// A config with the library's training defaults for `encoding`.
    pub fn new(encoding: Encoding) -> Self {
        Self {
            encoding,
            epsilon: None,
            alpha: None,
            kd_temperature: None,
            dr: 1.0,
            seeds: DEFAULT_SEEDS.to_vec(),
            epochs: 30,
            batch_size: 16,
            lr: 0.1,
            lr_decay: 1.0,
            lambda: DEFAULT_LAMBDA,
            architecture: Architecture::Linear,
            similarity_source: None,
            debug_verify_curriculum: false,
        }
    }

    pub fn lcl(epsilon: f64) -> Self {
        Self {
            epsilon: Some(epsilon),
            similarity_source: Some(SimilaritySourceKind::Embedding),
            ..Self::new(Encoding::Lcl)
        }
    }

    pub fn effective_alpha(&self) -> f64 {
        self.alpha.unwrap_or(DEFAULT_ALPHA)
    }

    pub fn effective_temperature(&self) -> f64 {
        self.kd_temperature.unwrap_or(DEFAULT_KD_TEMPERATURE)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let enc = self.encoding;
        match (enc, self.epsilon) {
            (Encoding::Lcl, None) => return bad("LCL requires epsilon".into()),
            (Encoding::Lcl, Some(e)) if !(e > 0.0 && e < 1.0) => {
                return bad(format!("epsilon {e} not in (0, 1)"));
            }
            (Encoding::Lcl, _) => {}
            (_, Some(_)) => return bad(format!("epsilon is only valid for LCL, not {enc}")),
            _ => {}
        }
        match (enc, self.similarity_source) {
            (Encoding::Lcl, None) => return bad("LCL requires a similarity source".into()),
            (Encoding::Lcl, _) | (_, None) => {}
            (_, Some(_)) => {
                return bad(format!(
                    "similarity source is only valid for LCL, not {enc}"
                ))
            }
        }
        match (enc, self.alpha) {
            (Encoding::Ls, Some(a)) if !(0.0..=1.0).contains(&a) => {
                return bad(format!("alpha {a} not in [0, 1]"))
            }
            (Encoding::Ls, _) | (_, None) => {}
            (_, Some(_)) => return bad(format!("alpha is only valid for LS, not {enc}")),
        }
        match (enc, self.kd_temperature) {
            (Encoding::Kd, Some(t)) if !(t > 0.0) => {
                return bad(format!("temperature {t} must be positive"))
            }
            (Encoding::Kd, _) | (_, None) => {}
            (_, Some(_)) => return bad(format!("kd_temperature is only valid for KD, not {enc}")),
        }
        if !(self.dr > 0.0 && self.dr <= 1.0) {
            return bad(format!("dr {} not in (0, 1]", self.dr));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay {} not in (0, 1]", self.lr_decay));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be >= 0", self.lambda));
        }
        if self.architecture.hidden() == 0 && matches!(self.architecture, Architecture::Mlp1 { .. })
        {
            return bad("hidden width must be >= 1".into());
        }
        Ok(())
    }

    /// Deterministic identifier built from every field that affects a
    /// trial's outcome except the seed list. Segments are `_`-separated; the
    /// data-ratio segment starts with `dr`.
    pub fn config_id(&self) -> String {
        let mut parts = vec![self.encoding.to_string()];
        if let Some(e) = self.epsilon {
            parts.push(format!("e{e}"));
        }
        if self.encoding == Encoding::Ls {
            parts.push(format!("a{}", self.effective_alpha()));
        }
        if self.encoding == Encoding::Kd {
            parts.push(format!("T{}", self.effective_temperature()));
        }
        if let Some(src) = self.similarity_source {
            parts.push(format!("sim{src}"));
        }
        parts.push(format!("dr{}", self.dr));
        parts.push(self.architecture.to_string());
        parts.push(format!("ep{}", self.epochs));
        parts.push(format!("bs{}", self.batch_size));
        parts.push(format!("lr{}", self.lr));
        parts.push(format!("ld{}", self.lr_decay));
        parts.push(format!("l{}", self.lambda));
        parts.join("_")
    }
}

/// `config_id` with its data-ratio segment removed, identifying a method
/// across data-ratio settings.
pub fn method_key(config_id: &str) -> String {
    config_id
        .split('_')
        .filter(|seg| !seg.starts_with("dr"))
        .collect::<Vec<_>>()
        .join("_")
}
