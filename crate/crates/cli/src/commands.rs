use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use lcl_core::curriculum::{init_targets, verify_curriculum};
use lcl_core::data::{generate_synthetic, load_dataset, SyntheticSpec};
use lcl_core::experiments::{
    aggregate, build_rank_table, read_raw_csv, render_aggregate_table, run_suite,
    write_aggregate_csv, SimilaritySourceKind, SuiteInputs, SuiteOptions,
};
use lcl_core::similarity::{
    build_cosine_with_source, effective_rank, load_embeddings, load_hierarchy, load_similarity_csv,
    simrank, write_spectrum_csv, SimilarityMatrix, SimilaritySource, SimrankParams,
};
use lcl_core::Error;

use crate::config::{parse_run_file, DataSource, SimilaritySection};
use crate::SimKind;

pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn verification(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::input(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

pub struct BuildSimArgs {
    pub kind: SimKind,
    pub input: PathBuf,
    pub out: PathBuf,
    pub clamp: bool,
    pub expected_dim: Option<usize>,
    pub simrank: SimrankParams,
    pub spectrum: Option<PathBuf>,
}

fn cosine_from_file(
    path: &Path,
    clamp: bool,
    expected_dim: Option<usize>,
    source: SimilaritySource,
) -> Result<(SimilarityMatrix, usize), Error> {
    let table = load_embeddings(path, expected_dim)?;
    let build = build_cosine_with_source(&table, clamp, source)?;
    Ok((build.matrix, build.clamped))
}

pub fn build_sim(args: &BuildSimArgs) -> CmdResult {
    let (matrix, clamped) = match args.kind {
        SimKind::Embedding => cosine_from_file(
            &args.input,
            args.clamp,
            args.expected_dim,
            SimilaritySource::EmbeddingCosine,
        )?,
        SimKind::Attribute => cosine_from_file(
            &args.input,
            args.clamp,
            args.expected_dim,
            SimilaritySource::AttributeCosine,
        )?,
        SimKind::Hierarchy => (simrank(&load_hierarchy(&args.input)?, args.simrank)?, 0),
    };
    matrix.write_csv(&args.out)?;
    let eigs = matrix.eigenspectrum()?;
    if let Some(path) = &args.spectrum {
        write_spectrum_csv(path, &eigs)?;
    }
    let top: Vec<String> = eigs.iter().take(5).map(|l| format!("{l:.6}")).collect();
    println!("source: {}", matrix.source());
    println!("classes: {}", matrix.len());
    println!("clamped entries: {clamped}");
    println!("top eigenvalues: {}", top.join(" "));
    println!("effective rank: {:.4}", effective_rank(&eigs));
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn verify(
    sim: Option<&Path>,
    identity: Option<usize>,
    epsilon: f64,
    horizon: u64,
) -> CmdResult {
    let matrix = match (sim, identity) {
        (Some(path), _) => load_similarity_csv(path).map_err(|e| match e {
            Error::DominanceViolation { .. }
            | Error::NegativeSimilarity { .. }
            | Error::InvalidMatrix(_) => Failure::verification(e.to_string()),
            other => Failure::from(other),
        })?,
        (None, Some(c)) if c > 0 => {
            SimilarityMatrix::identity((0..c).map(|i| format!("c{i}")).collect())
        }
        _ => return Err(Failure::input("need --sim or a positive --identity")),
    };
    let schedule = init_targets(&matrix, epsilon).map_err(|e| match e {
        Error::DominanceViolation { .. } => Failure::verification(e.to_string()),
        other => Failure::from(other),
    })?;
    let report = verify_curriculum(&schedule, horizon);
    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::verification(format!(
            "{} curriculum violation(s)",
            report.violations.len()
        )))
    }
}

pub struct RunArgs {
    pub config: PathBuf,
    pub jobs: usize,
    pub out_dir: Option<PathBuf>,
    pub seed_list: Option<Vec<u64>>,
    pub debug_verify_curriculum: bool,
}

fn load_similarities(
    needed: &[SimilaritySourceKind],
    section: &SimilaritySection,
    synthetic_embeddings: Option<&lcl_core::similarity::EmbeddingTable>,
) -> Result<BTreeMap<SimilaritySourceKind, SimilarityMatrix>, Error> {
    let clamp = section.clamp_negative.unwrap_or(true);
    let params = SimrankParams {
        decay: section
            .simrank_decay
            .unwrap_or(SimrankParams::default().decay),
        tol: section.simrank_tol.unwrap_or(SimrankParams::default().tol),
        max_iter: section
            .simrank_max_iter
            .unwrap_or(SimrankParams::default().max_iter),
    };
    let mut out = BTreeMap::new();
    for &kind in needed {
        let matrix = match kind {
            SimilaritySourceKind::Embedding => match (&section.embedding, synthetic_embeddings) {
                (Some(path), _) => {
                    cosine_from_file(
                        path,
                        clamp,
                        section.expected_dim,
                        SimilaritySource::EmbeddingCosine,
                    )?
                    .0
                }
                (None, Some(table)) => {
                    build_cosine_with_source(table, clamp, SimilaritySource::EmbeddingCosine)?
                        .matrix
                }
                (None, None) => return Err(Error::InvalidConfig("no embedding source".into())),
            },
            SimilaritySourceKind::Attribute => {
                let path = section.attribute.as_ref().expect("checked when parsing");
                cosine_from_file(
                    path,
                    clamp,
                    section.expected_dim,
                    SimilaritySource::AttributeCosine,
                )?
                .0
            }
            SimilaritySourceKind::Hierarchy => {
                let path = section.hierarchy.as_ref().expect("checked when parsing");
                simrank(&load_hierarchy(path)?, params)?
            }
            SimilaritySourceKind::File => {
                load_similarity_csv(section.file.as_ref().expect("checked when parsing"))?
            }
        };
        out.insert(kind, matrix);
    }
    Ok(out)
}

pub fn run(args: &RunArgs) -> CmdResult {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Failure::input(format!("{}: {e}", args.config.display())))?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let mut plan = parse_run_file(&text, base)
        .map_err(|msg| Failure::input(format!("{}: {msg}", args.config.display())))?;
    for cfg in &mut plan.grid {
        if let Some(seeds) = &args.seed_list {
            cfg.seeds = seeds.clone();
        }
        cfg.debug_verify_curriculum |= args.debug_verify_curriculum;
    }

    let (train, test, embeddings) = match &plan.data {
        DataSource::Files { train, test } => (load_dataset(train)?, load_dataset(test)?, None),
        DataSource::Synthetic(spec) => {
            let data = generate_synthetic(spec)?;
            (data.train, data.test, Some(data.class_embeddings))
        }
    };
    let mut needed: Vec<SimilaritySourceKind> = plan
        .grid
        .iter()
        .filter_map(|c| c.similarity_source)
        .collect();
    needed.sort();
    needed.dedup();
    let similarities = load_similarities(&needed, &plan.similarity, embeddings.as_ref())?;
    for (kind, m) in &similarities {
        if m.len() != train.num_classes() {
            return Err(Failure::input(format!(
                "`{kind}` similarity has {} classes but the data has {}",
                m.len(),
                train.num_classes()
            )));
        }
    }

    let inputs = SuiteInputs {
        train,
        test,
        similarities,
    };
    let opts = SuiteOptions {
        jobs: args.jobs,
        out_dir: args.out_dir.clone().or(plan.out_dir),
    };
    let out = run_suite(&plan.grid, &inputs, &opts)?;
    print!("{}", render_aggregate_table(&out.aggregates));
    println!();
    print!("{}", out.ranks);
    if let Some(dir) = &opts.out_dir {
        println!("results written to {}", dir.display());
    }
    if out.failures.is_empty() {
        Ok(())
    } else {
        for f in &out.failures {
            eprintln!(
                "trial failed: {} seed {}: {}",
                f.config_id, f.seed, f.message
            );
        }
        Err(Failure::verification(format!(
            "{} trial(s) failed",
            out.failures.len()
        )))
    }
}

pub fn report(raw: &[PathBuf], out_dir: Option<&Path>) -> CmdResult {
    let mut results = Vec::new();
    for path in raw {
        results.extend(read_raw_csv(path)?);
    }
    let rows = aggregate(&results)?;
    let ranks = build_rank_table(&results);
    print!("{}", render_aggregate_table(&rows));
    println!();
    print!("{ranks}");
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
        write_aggregate_csv(dir.join("aggregate.csv"), &rows)?;
        let path = dir.join("ranks.txt");
        fs::write(&path, ranks.to_string())
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

pub fn gen_data(out_dir: &Path, spec: &SyntheticSpec) -> CmdResult {
    let data = generate_synthetic(spec)?;
    fs::create_dir_all(out_dir)
        .map_err(|e| Failure::input(format!("{}: {e}", out_dir.display())))?;
    data.train.write_csv(out_dir.join("train.csv"))?;
    data.test.write_csv(out_dir.join("test.csv"))?;
    data.class_embeddings
        .write(out_dir.join("embeddings.txt"))?;
    println!(
        "wrote {} train and {} test examples ({} classes, d = {}) to {}",
        data.train.len(),
        data.test.len(),
        spec.num_classes(),
        spec.dim,
        out_dir.display()
    );
    Ok(())
}
