//! TOML run configuration.
//!
//! ```toml
//! out_dir = "results"
//!
//! [synthetic]            # or [data] with `train` and `test` CSV paths
//! noise_sigma = 4.0
//!
//! [similarity]
//! embedding = "emb.txt"  # optional for synthetic data
//!
//! [defaults]
//! epochs = 100
//! seeds = [0, 1, 2, 3]
//!
//! [[experiment]]
//! encoding = "LCL"
//! epsilon = 0.999
//! similarity = "embedding"
//! dr = 0.05
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use lcl_core::data::SyntheticSpec;
use lcl_core::experiments::{Encoding, ExperimentConfig, SimilaritySourceKind, DEFAULT_HIDDEN};
use lcl_core::model::Architecture;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub out_dir: Option<PathBuf>,
    pub data: Option<DataSection>,
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub similarity: SimilaritySection,
    #[serde(default)]
    pub defaults: TrainingFields,
    #[serde(default, rename = "experiment")]
    pub experiments: Vec<ExperimentEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilaritySection {
    pub embedding: Option<PathBuf>,
    pub attribute: Option<PathBuf>,
    pub hierarchy: Option<PathBuf>,
    pub file: Option<PathBuf>,
    /// Defaults to true.
    pub clamp_negative: Option<bool>,
    pub expected_dim: Option<usize>,
    pub simrank_decay: Option<f64>,
    pub simrank_tol: Option<f64>,
    pub simrank_max_iter: Option<usize>,
}

/// Training settings shared by `[defaults]` and every `[[experiment]]`.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingFields {
    pub dr: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub lr_decay: Option<f64>,
    pub lambda: Option<f64>,
    pub architecture: Option<String>,
    pub hidden: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentEntry {
    pub encoding: String,
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
    pub kd_temperature: Option<f64>,
    pub similarity: Option<String>,
    pub dr: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub lr_decay: Option<f64>,
    pub lambda: Option<f64>,
    pub architecture: Option<String>,
    pub hidden: Option<usize>,
}

/// Where the train/test split comes from.
#[derive(Debug, Clone)]
pub enum DataSource {
    Files { train: PathBuf, test: PathBuf },
    Synthetic(SyntheticSpec),
}

#[derive(Debug)]
pub struct RunPlan {
    pub data: DataSource,
    pub similarity: SimilaritySection,
    pub grid: Vec<ExperimentConfig>,
    pub out_dir: Option<PathBuf>,
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p
    }
}

fn architecture(name: &str, hidden: Option<usize>) -> Result<Architecture, String> {
    match name {
        "linear" => Ok(Architecture::Linear),
        "mlp1" => Ok(Architecture::Mlp1 {
            hidden: hidden.unwrap_or(DEFAULT_HIDDEN),
        }),
        other => Err(format!(
            "unknown architecture `{other}` (expected linear or mlp1)"
        )),
    }
}

fn build_config(
    entry: ExperimentEntry,
    defaults: &TrainingFields,
) -> Result<ExperimentConfig, String> {
    let encoding: Encoding = entry
        .encoding
        .parse()
        .map_err(|e: lcl_core::Error| e.to_string())?;
    let mut cfg = ExperimentConfig::new(encoding);
    cfg.epsilon = entry.epsilon;
    cfg.alpha = entry.alpha;
    cfg.kd_temperature = entry.kd_temperature;
    cfg.similarity_source = match entry.similarity {
        Some(s) => Some(
            s.parse::<SimilaritySourceKind>()
                .map_err(|e| e.to_string())?,
        ),
        None if encoding == Encoding::Lcl => Some(SimilaritySourceKind::Embedding),
        None => None,
    };
    macro_rules! pick {
        ($field:ident) => {
            if let Some(v) = entry.$field.clone().or_else(|| defaults.$field.clone()) {
                cfg.$field = v;
            }
        };
    }
    pick!(dr);
    pick!(seeds);
    pick!(epochs);
    pick!(batch_size);
    pick!(lr);
    pick!(lr_decay);
    pick!(lambda);
    let arch = entry
        .architecture
        .as_deref()
        .or(defaults.architecture.as_deref());
    let hidden = entry.hidden.or(defaults.hidden);
    if let Some(name) = arch {
        cfg.architecture = architecture(name, hidden)?;
    } else if hidden.is_some() {
        return Err("`hidden` requires architecture = \"mlp1\"".into());
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// Parses and validates a run file; `base` is the directory relative paths
/// are resolved against.
pub fn parse_run_file(text: &str, base: &Path) -> Result<RunPlan, String> {
    let file: RunFile = toml::from_str(text).map_err(|e| e.to_string())?;
    let data = match (file.data, file.synthetic) {
        (Some(d), None) => DataSource::Files {
            train: resolve(base, d.train),
            test: resolve(base, d.test),
        },
        (None, Some(spec)) => {
            spec.validate().map_err(|e| e.to_string())?;
            DataSource::Synthetic(spec)
        }
        (Some(_), Some(_)) => return Err("use either [data] or [synthetic], not both".into()),
        (None, None) => return Err("missing [data] or [synthetic] section".into()),
    };
    if file.experiments.is_empty() {
        return Err("no [[experiment]] entries".into());
    }
    let mut similarity = file.similarity;
    for p in [
        &mut similarity.embedding,
        &mut similarity.attribute,
        &mut similarity.hierarchy,
        &mut similarity.file,
    ] {
        *p = p.take().map(|p| resolve(base, p));
    }
    let grid = file
        .experiments
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            build_config(e, &file.defaults).map_err(|msg| format!("experiment {}: {msg}", i + 1))
        })
        .collect::<Result<Vec<_>, _>>()?;
    for cfg in &grid {
        if let Some(kind) = cfg.similarity_source {
            let have = match kind {
                SimilaritySourceKind::Embedding => {
                    similarity.embedding.is_some() || matches!(data, DataSource::Synthetic(_))
                }
                SimilaritySourceKind::Attribute => similarity.attribute.is_some(),
                SimilaritySourceKind::Hierarchy => similarity.hierarchy.is_some(),
                SimilaritySourceKind::File => similarity.file.is_some(),
            };
            if !have {
                return Err(format!(
                    "{} needs a `{kind}` path in [similarity]",
                    cfg.config_id()
                ));
            }
        }
    }
    Ok(RunPlan {
        data,
        similarity,
        grid,
        out_dir: file.out_dir.map(|p| resolve(base, p)),
    })
}
