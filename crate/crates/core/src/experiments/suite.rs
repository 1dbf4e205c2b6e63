use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::stats::{aggregate, friedman_iman_davenport, AggregateRow, FriedmanResult};
use super::trial::{run_trial, TrialResult};
use super::{method_key, Encoding, ExperimentConfig, SimilaritySourceKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::similarity::SimilarityMatrix;

pub const RAW_HEADER: [&str; 11] = [
    "config_id",
    "encoding",
    "epsilon",
    "alpha",
    "dr",
    "seed",
    "top1",
    "top5",
    "final_loss",
    "epochs",
    "wall_ms",
];

pub const AGGREGATE_HEADER: [&str; 10] = [
    "config_id",
    "encoding",
    "epsilon",
    "alpha",
    "dr",
    "n_trials",
    "top1_mean",
    "top1_std",
    "top5_mean",
    "top5_std",
];

pub struct SuiteInputs {
    pub train: Dataset,
    pub test: Dataset,
    pub similarities: BTreeMap<SimilaritySourceKind, SimilarityMatrix>,
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    /// Worker threads; 1 runs trials sequentially.
    pub jobs: usize,
    /// When set, `raw.csv`, `aggregate.csv`, `ranks.txt` and
    /// `failures.csv` are written here.
    pub out_dir: Option<PathBuf>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub config_id: String,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankBlocking {
    /// Rows are data-ratio settings, cells are mean top-1.
    Settings,
    /// Single setting: rows are shared seeds, cells are per-trial top-1.
    Seeds,
}

#[derive(Debug, Clone)]
pub struct RankSummary {
    pub blocking: RankBlocking,
    pub methods: Vec<String>,
    pub rows: Vec<String>,
    pub table: Vec<Vec<f64>>,
    pub result: Option<FriedmanResult>,
    /// Why the test was skipped, if it was.
    pub notice: Option<String>,
}

impl fmt::Display for RankSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# Friedman / Iman-Davenport rank test on top-1 accuracy")?;
        let blocking = match self.blocking {
            RankBlocking::Settings => "data-ratio settings (mean over seeds)",
            RankBlocking::Seeds => "seeds (single setting, paired trials)",
        };
        writeln!(f, "# rows: {blocking}; rank 1 = best")?;
        let Some(r) = &self.result else {
            return writeln!(
                f,
                "rank test skipped: {}",
                self.notice.as_deref().unwrap_or("insufficient data")
            );
        };
        writeln!(f, "N = {} rows, k = {} methods", r.n_rows, r.n_methods)?;
        let width = self
            .methods
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(6)
            .max(6);
        writeln!(f, "{:<4}  {:<width$}  {:>9}", "pos", "method", "avg_rank")?;
        for (pos, &j) in r.order.iter().enumerate() {
            writeln!(
                f,
                "{:<4}  {:<width$}  {:>9.4}",
                pos + 1,
                self.methods[j],
                r.avg_ranks[j]
            )?;
        }
        writeln!(f, "chi2_F = {:.6}", r.chi2_f)?;
        match r.f_f {
            Some(ff) => writeln!(f, "F_F = {ff:.6}")?,
            None => writeln!(f, "F_F = undefined (N(k-1) equals chi2_F)")?,
        }
        if let Some(p) = r.p_value {
            writeln!(
                f,
                "p = {p:.6e} (F with {} and {} d.o.f.)",
                r.n_methods - 1,
                (r.n_methods - 1) * (r.n_rows - 1)
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOutput {
    /// Sorted by config id, then seed.
    pub results: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
    pub aggregates: Vec<AggregateRow>,
    pub ranks: RankSummary,
}

fn sim_for<'a>(
    cfg: &ExperimentConfig,
    inputs: &'a SuiteInputs,
) -> Result<Option<&'a SimilarityMatrix>> {
    if cfg.encoding != Encoding::Lcl {
        return Ok(None);
    }
    let kind = cfg.similarity_source.expect("validated");
    inputs
        .similarities
        .get(&kind)
        .map(Some)
        .ok_or_else(|| Error::InvalidConfig(format!("no `{kind}` similarity matrix supplied")))
}

/// Runs every (config, seed) pair. A failing trial is recorded and the rest
/// of the suite continues.
pub fn run_suite(
    grid: &[ExperimentConfig],
    inputs: &SuiteInputs,
    opts: &SuiteOptions,
) -> Result<SuiteOutput> {
    for cfg in grid {
        cfg.validate()?;
    }
    let tasks: Vec<(&ExperimentConfig, u64)> = grid
        .iter()
        .flat_map(|cfg| cfg.seeds.iter().map(move |&s| (cfg, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let outcomes: Vec<std::result::Result<Vec<TrialResult>, TrialFailure>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(cfg, seed)| {
                let run = sim_for(cfg, inputs)
                    .and_then(|sim| run_trial(cfg, seed, &inputs.train, &inputs.test, sim));
                match run {
                    Ok(o) => {
                        let mut rows = vec![o.result];
                        rows.extend(o.companion.map(|(r, _)| r));
                        Ok(rows)
                    }
                    Err(e) => Err(TrialFailure {
                        config_id: cfg.config_id(),
                        seed,
                        message: e.to_string(),
                    }),
                }
            })
            .collect()
    });

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(rows) => results.extend(rows),
            Err(f) => failures.push(f),
        }
    }
    results.sort_by(|a, b| a.config_id.cmp(&b.config_id).then(a.seed.cmp(&b.seed)));
    failures.sort_by(|a, b| a.config_id.cmp(&b.config_id).then(a.seed.cmp(&b.seed)));
    let aggregates = aggregate(&results)?;
    let ranks = build_rank_table(&results);

    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_raw_csv(dir.join("raw.csv"), &results)?;
        write_aggregate_csv(dir.join("aggregate.csv"), &aggregates)?;
        let ranks_path = dir.join("ranks.txt");
        fs::write(&ranks_path, ranks.to_string()).map_err(|e| Error::io(&ranks_path, e))?;
        write_failures_csv(dir.join("failures.csv"), &failures)?;
    }

    Ok(SuiteOutput {
        results,
        failures,
        aggregates,
        ranks,
    })
}

/// Arranges top-1 results into a rank-test table: methods are config ids
/// without their data-ratio segment; rows are data-ratio settings, or seeds
/// when only one setting exists.
pub fn build_rank_table(results: &[TrialResult]) -> RankSummary {
    let mut cells: BTreeMap<String, BTreeMap<String, Vec<(u64, f64)>>> = BTreeMap::new();
    let mut settings: Vec<f64> = Vec::new();
    for r in results {
        if !settings.contains(&r.dr) {
            settings.push(r.dr);
        }
        cells
            .entry(method_key(&r.config_id))
            .or_default()
            .entry(format!("dr={}", r.dr))
            .or_default()
            .push((r.seed, r.top1));
    }
    settings.sort_by(f64::total_cmp);
    let setting_keys: Vec<String> = settings.iter().map(|d| format!("dr={d}")).collect();

    let skipped = |blocking, methods, rows, notice: String| RankSummary {
        blocking,
        methods,
        rows,
        table: Vec::new(),
        result: None,
        notice: Some(notice),
    };

    let (blocking, methods, rows, table) = if setting_keys.len() >= 2 {
        let methods: Vec<String> = cells
            .iter()
            .filter(|(_, per)| setting_keys.iter().all(|s| per.contains_key(s)))
            .map(|(m, _)| m.clone())
            .collect();
        let table: Vec<Vec<f64>> = setting_keys
            .iter()
            .map(|s| {
                methods
                    .iter()
                    .map(|m| {
                        let mut v: Vec<f64> = cells[m][s].iter().map(|&(_, t)| t).collect();
                        v.sort_by(f64::total_cmp);
                        v.iter().sum::<f64>() / v.len() as f64
                    })
                    .collect()
            })
            .collect();
        (RankBlocking::Settings, methods, setting_keys, table)
    } else {
        let methods: Vec<String> = cells.keys().cloned().collect();
        let seed_sets: Vec<BTreeSet<u64>> = cells
            .values()
            .map(|per| per.values().flatten().map(|&(s, _)| s).collect())
            .collect();
        let common: BTreeSet<u64> = seed_sets
            .iter()
            .skip(1)
            .fold(seed_sets.first().cloned().unwrap_or_default(), |acc, s| {
                acc.intersection(s).copied().collect()
            });
        let table: Vec<Vec<f64>> = common
            .iter()
            .map(|seed| {
                methods
                    .iter()
                    .map(|m| {
                        cells[m]
                            .values()
                            .flatten()
                            .find(|&&(s, _)| s == *seed)
                            .map(|&(_, t)| t)
                            .expect("seed is common to all methods")
                    })
                    .collect()
            })
            .collect();
        let rows = common.iter().map(|s| format!("seed={s}")).collect();
        (RankBlocking::Seeds, methods, rows, table)
    };

    if methods.len() < 2 {
        return skipped(
            blocking,
            methods,
            rows,
            "fewer than two methods to compare".into(),
        );
    }
    if rows.len() < 2 {
        return skipped(
            blocking,
            methods,
            rows,
            "fewer than two blocks (settings or shared seeds)".into(),
        );
    }
    match friedman_iman_davenport(&table) {
        Ok(result) => RankSummary {
            blocking,
            methods,
            rows,
            table,
            result: Some(result),
            notice: None,
        },
        Err(e) => skipped(blocking, methods, rows, e.to_string()),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

pub fn write_raw_csv(path: impl AsRef<Path>, results: &[TrialResult]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(RAW_HEADER)?;
    for r in results {
        w.write_record([
            r.config_id.clone(),
            r.encoding.clone(),
            opt(r.epsilon),
            opt(r.alpha),
            r.dr.to_string(),
            r.seed.to_string(),
            r.top1.to_string(),
            r.top5.to_string(),
            r.final_loss.to_string(),
            r.epochs.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_aggregate_csv(path: impl AsRef<Path>, rows: &[AggregateRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(AGGREGATE_HEADER)?;
    for r in rows {
        w.write_record([
            r.config_id.clone(),
            r.encoding.clone(),
            opt(r.epsilon),
            opt(r.alpha),
            r.dr.to_string(),
            r.n_trials.to_string(),
            r.top1_mean.to_string(),
            r.top1_std.to_string(),
            r.top5_mean.to_string(),
            r.top5_std.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_failures_csv(path: PathBuf, failures: &[TrialFailure]) -> Result<()> {
    let mut w = csv_writer(&path)?;
    w.write_record(["config_id", "seed", "message"])?;
    for f in failures {
        w.write_record([f.config_id.clone(), f.seed.to_string(), f.message.clone()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Reads a raw results CSV. Every column of [`RAW_HEADER`] must be present.
pub fn read_raw_csv(path: impl AsRef<Path>) -> Result<Vec<TrialResult>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers()?.clone();
    let mut col = BTreeMap::new();
    for name in RAW_HEADER {
        let idx = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| {
                Error::parse(1, format!("{}: missing column `{name}`", path.display()))
            })?;
        col.insert(name, idx);
    }
    let mut out = Vec::new();
    for (n, record) in rdr.records().enumerate() {
        let record = record?;
        let line = n + 2;
        let field = |name: &str| record.get(col[name]).unwrap_or("").trim().to_string();
        let num = |name: &str| -> Result<f64> {
            field(name)
                .parse::<f64>()
                .map_err(|_| Error::parse(line, format!("bad `{name}` value `{}`", field(name))))
        };
        let opt_num = |name: &str| -> Result<Option<f64>> {
            let v = field(name);
            if v.is_empty() {
                Ok(None)
            } else {
                num(name).map(Some)
            }
        };
        let int = |name: &str| -> Result<u64> {
            field(name)
                .parse::<u64>()
                .map_err(|_| Error::parse(line, format!("bad `{name}` value `{}`", field(name))))
        };
        out.push(TrialResult {
            config_id: field("config_id"),
            encoding: field("encoding"),
            epsilon: opt_num("epsilon")?,
            alpha: opt_num("alpha")?,
            dr: num("dr")?,
            seed: int("seed")?,
            top1: num("top1")?,
            top5: num("top5")?,
            final_loss: num("final_loss")?,
            epochs: int("epochs")? as usize,
            wall_ms: int("wall_ms")?,
            loss_history: Vec::new(),
        });
    }
    Ok(out)
}

/// Fixed-width aggregate table for terminal output.
pub fn render_aggregate_table(rows: &[AggregateRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.config_id.len())
        .max()
        .unwrap_or(9)
        .max(9);
    let mut out = format!(
        "# standard deviations use divisor n (population)\n{:<width$}  {:>3}  {:>10}  {:>10}  {:>10}  {:>10}\n",
        "config_id", "n", "top1_mean", "top1_std", "top5_mean", "top5_std"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>3}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}\n",
            r.config_id, r.n_trials, r.top1_mean, r.top1_std, r.top5_mean, r.top5_std
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(id: &str, dr: f64, seed: u64, top1: f64) -> TrialResult {
        TrialResult {
            config_id: format!("{id}_dr{dr}_linear"),
            encoding: id.into(),
            epsilon: None,
            alpha: None,
            dr,
            seed,
            top1,
            top5: 1.0,
            final_loss: 0.5,
            epochs: 3,
            wall_ms: 1,
            loss_history: vec![],
        }
    }

    #[test]
    fn settings_blocking_uses_mean_top1() {
        let mut rs = Vec::new();
        for (k, dr) in [0.05, 0.1, 0.2, 1.0].into_iter().enumerate() {
            let base = 0.1 * k as f64;
            rs.push(result("A", dr, 0, base + 0.3));
            rs.push(result("B", dr, 0, base + 0.2));
            rs.push(result("C", dr, 0, base + 0.1));
        }
        let s = build_rank_table(&rs);
        assert_eq!(s.blocking, RankBlocking::Settings);
        let r = s.result.unwrap();
        assert_eq!(r.avg_ranks, vec![1.0, 2.0, 3.0]);
        assert_eq!(s.methods, vec!["A_linear", "B_linear", "C_linear"]);
    }

    #[test]
    fn seed_blocking_for_single_setting() {
        let rs = vec![
            result("A", 1.0, 0, 0.5),
            result("A", 1.0, 1, 0.6),
            result("B", 1.0, 0, 0.4),
            result("B", 1.0, 1, 0.7),
        ];
        let s = build_rank_table(&rs);
        assert_eq!(s.blocking, RankBlocking::Seeds);
        assert_eq!(s.result.unwrap().avg_ranks, vec![1.5, 1.5]);
    }

    #[test]
    fn single_method_skips_test() {
        let s = build_rank_table(&[result("A", 1.0, 0, 0.5), result("A", 1.0, 1, 0.6)]);
        assert!(s.result.is_none());
        assert!(s.to_string().contains("skipped"));
    }

    #[test]
    fn raw_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("raw.csv");
        let mut rs = vec![result("A", 0.05, 0, 0.123456789), result("B", 1.0, 3, 0.5)];
        rs[0].epsilon = Some(0.999);
        write_raw_csv(&p, &rs).unwrap();
        assert_eq!(read_raw_csv(&p).unwrap(), rs);
    }

    #[test]
    fn missing_column_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("raw.csv");
        fs::write(&p, "config_id,encoding\nA,SL\n").unwrap();
        assert!(matches!(read_raw_csv(&p), Err(Error::Parse { .. })));
    }
}
