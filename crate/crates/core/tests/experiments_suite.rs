use std::collections::BTreeMap;
use std::fs;

use lcl_core::data::{generate_synthetic, SyntheticSpec};
use lcl_core::experiments::{
    friedman_iman_davenport, read_raw_csv, run_suite, Encoding, ExperimentConfig,
    SimilaritySourceKind, SuiteInputs, SuiteOptions,
};
use lcl_core::similarity::build_cosine_similarity;
use proptest::prelude::*;

/// Rank by counting: 1 + (number of strictly better) + ½·(number tied).
fn count_rank(row: &[f64], j: usize) -> f64 {
    let better = row.iter().filter(|&&v| v > row[j]).count() as f64;
    let tied = row.iter().filter(|&&v| v == row[j]).count() as f64 - 1.0;
    1.0 + better + 0.5 * tied
}

fn oracle_chi2(table: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let n = table.len() as f64;
    let k = table[0].len();
    let mut r = vec![0.0; k];
    for row in table {
        for (j, rj) in r.iter_mut().enumerate() {
            *rj += count_rank(row, j) / n;
        }
    }
    let kf = k as f64;
    let chi2 =
        12.0 * n / (kf * (kf + 1.0)) * r.iter().map(|x| x * x).sum::<f64>() - 3.0 * n * (kf + 1.0);
    (r, chi2)
}

#[test]
fn three_by_three_matches_rank_and_sum() {
    let table = vec![
        vec![0.71, 0.65, 0.60],
        vec![0.50, 0.55, 0.40],
        vec![0.90, 0.80, 0.85],
    ];
    let r = friedman_iman_davenport(&table).unwrap();
    let (ranks, chi2) = oracle_chi2(&table);
    for (a, b) in r.avg_ranks.iter().zip(&ranks) {
        assert!((a - b).abs() < 1e-12);
    }
    // R = (4/3, 2, 8/3) by hand
    assert!((ranks[0] - 4.0 / 3.0).abs() < 1e-12 && (ranks[2] - 8.0 / 3.0).abs() < 1e-12);
    assert!((r.chi2_f - chi2).abs() < 1e-12);
    let ff = 2.0 * chi2 / (3.0 * 2.0 - chi2);
    assert!((r.f_f.unwrap() - ff).abs() < 1e-12);
}

proptest! {
    #[test]
    fn friedman_matches_oracle_and_ignores_monotone_transforms(
        table in (2usize..6, 2usize..6).prop_flat_map(|(n, k)| {
            prop::collection::vec(prop::collection::vec(prop::sample::select(vec![0.1, 0.2, 0.3, 0.5, 0.8]), k), n)
        })
    ) {
        let r = friedman_iman_davenport(&table).unwrap();
        let (ranks, chi2) = oracle_chi2(&table);
        for (a, b) in r.avg_ranks.iter().zip(&ranks) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!((r.chi2_f - chi2).abs() < 1e-9);
        let warped: Vec<Vec<f64>> = table.iter().map(|row| row.iter().map(|v| v.powi(3).exp() + 7.0).collect()).collect();
        let w = friedman_iman_davenport(&warped).unwrap();
        prop_assert_eq!(&w.avg_ranks, &r.avg_ranks);
        prop_assert_eq!(w.chi2_f, r.chi2_f);
    }
}

fn small_inputs() -> SuiteInputs {
    let data = generate_synthetic(&SyntheticSpec {
        num_superclusters: 2,
        classes_per_supercluster: 2,
        dim: 4,
        train_per_class: 8,
        test_per_class: 4,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let sim = build_cosine_similarity(&data.class_embeddings, true)
        .unwrap()
        .matrix;
    SuiteInputs {
        train: data.train,
        test: data.test,
        similarities: BTreeMap::from([(SimilaritySourceKind::Embedding, sim)]),
    }
}

fn quick(mut cfg: ExperimentConfig) -> ExperimentConfig {
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg
}

#[test]
fn empty_grid_gives_empty_outputs() {
    let out = run_suite(&[], &small_inputs(), &SuiteOptions::default()).unwrap();
    assert!(out.results.is_empty() && out.aggregates.is_empty() && out.failures.is_empty());
    assert!(out.ranks.result.is_none());
}

#[test]
fn one_config_four_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let opts = SuiteOptions {
        jobs: 1,
        out_dir: Some(dir.path().to_path_buf()),
    };
    let out = run_suite(
        &[quick(ExperimentConfig::new(Encoding::Sl))],
        &small_inputs(),
        &opts,
    )
    .unwrap();
    assert_eq!(out.results.len(), 4);
    assert_eq!(out.aggregates.len(), 1);
    assert_eq!(out.aggregates[0].n_trials, 4);
    let raw = fs::read_to_string(dir.path().join("raw.csv")).unwrap();
    assert_eq!(raw.lines().count(), 5);
    let agg = fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 2);
    assert!(dir.path().join("ranks.txt").exists());
    assert_eq!(read_raw_csv(dir.path().join("raw.csv")).unwrap().len(), 4);
}

fn without_wall_ms(csv: &str) -> String {
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "wall_ms").unwrap();
    csv.lines()
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|&(i, _)| i != col)
                .map(|(_, f)| f)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn reruns_are_identical_apart_from_timing() {
    let grid = vec![
        quick(ExperimentConfig::new(Encoding::Sl)),
        quick(ExperimentConfig::new(Encoding::Ls)),
        quick(ExperimentConfig::lcl(0.9)),
        quick(ExperimentConfig::new(Encoding::Dml)),
    ];
    let inputs = small_inputs();
    let runs: Vec<String> = [1, 3]
        .iter()
        .map(|&jobs| {
            let dir = tempfile::tempdir().unwrap();
            let opts = SuiteOptions {
                jobs,
                out_dir: Some(dir.path().to_path_buf()),
            };
            run_suite(&grid, &inputs, &opts).unwrap();
            without_wall_ms(&fs::read_to_string(dir.path().join("raw.csv")).unwrap())
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    // DML adds a companion row per seed
    assert_eq!(runs[0].lines().count(), 1 + 4 * 5);
}

#[test]
fn seed_blocked_rank_test_runs_on_single_setting() {
    let grid = vec![
        quick(ExperimentConfig::new(Encoding::Sl)),
        quick(ExperimentConfig::lcl(0.99)),
    ];
    let out = run_suite(&grid, &small_inputs(), &SuiteOptions::default()).unwrap();
    let r = out.ranks.result.expect("rank test should run");
    assert_eq!((r.n_rows, r.n_methods), (4, 2));
}
