use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Encoding, ExperimentConfig};
use crate::curriculum::{
    init_targets, label_smoothing, one_hot, verify_curriculum, TargetSchedule,
};
use crate::data::{subsample, Dataset};
use crate::error::{Error, Result};
use crate::model::{
    dml_pair_losses, gradient, loss_and_gradient, sgd_step, ClassifierParams, Sample,
};
use crate::similarity::SimilarityMatrix;

// RNG streams derived from the trial seed. Subsampling uses the seed itself.
const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const PEER_INIT_STREAM: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Outcome of one (config, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub config_id: String,
    /// Encoding label; `DML2` for the second mutual-learning peer.
    pub encoding: String,
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
    pub dr: f64,
    pub seed: u64,
    pub top1: f64,
    pub top5: f64,
    pub final_loss: f64,
    pub epochs: usize,
    /// Excluded from determinism comparisons.
    pub wall_ms: u64,
    /// Mean training objective per epoch; empty when read back from CSV.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub result: TrialResult,
    pub params: ClassifierParams,
    /// Second DML peer.
    pub companion: Option<(TrialResult, ClassifierParams)>,
}

/// Fraction of examples whose label is among the `k` most probable classes.
/// Equal probabilities rank the lower class index first.
pub fn topk_accuracy(pred_probs: &[Vec<f64>], labels: &[usize], k: usize) -> Result<f64> {
    if pred_probs.is_empty() {
        return Err(Error::InvalidArgument("no predictions".into()));
    }
    if pred_probs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: pred_probs.len(),
            found: labels.len(),
            context: "labels vs predictions".into(),
        });
    }
    let c = pred_probs[0].len();
    if k == 0 || k > c {
        return Err(Error::InvalidArgument(format!("k = {k} not in [1, {c}]")));
    }
    let mut hits = 0usize;
    for (probs, &label) in pred_probs.iter().zip(labels) {
        if probs.len() != c || label >= c {
            return Err(Error::InvalidArgument(
                "prediction width or label out of range".into(),
            ));
        }
        let py = probs[label];
        let ahead = probs
            .iter()
            .enumerate()
            .filter(|&(j, &p)| p > py || (p == py && j < label))
            .count();
        if ahead < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Targets for the current epoch: a per-class table or one row per example.
enum Targets {
    PerClass(Vec<f64>),
    PerExample(Vec<f64>),
}

impl Targets {
    fn get(&self, c: usize, index: usize, label: usize) -> &[f64] {
        match self {
            Targets::PerClass(t) => &t[label * c..(label + 1) * c],
            Targets::PerExample(t) => &t[index * c..(index + 1) * c],
        }
    }
}

fn per_class_table(c: usize, row: impl Fn(usize) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    let mut table = Vec::with_capacity(c * c);
    for i in 0..c {
        table.extend(row(i)?);
    }
    Ok(table)
}

fn schedule_table(s: &TargetSchedule) -> Vec<f64> {
    (0..s.num_classes())
        .flat_map(|i| s.row(i).to_vec())
        .collect()
}

struct TrainSetup<'a> {
    config: &'a ExperimentConfig,
    data: &'a Dataset,
    seed: u64,
}

impl TrainSetup<'_> {
    fn lr_at(&self, epoch: usize) -> f64 {
        self.config.lr * self.config.lr_decay.powi(epoch as i32)
    }

    fn batches(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(rng);
        order
            .chunks(self.config.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    fn init(&self, stream_id: u64) -> Result<ClassifierParams> {
        ClassifierParams::init(
            self.config.architecture,
            self.data.dim(),
            self.data.num_classes(),
            &mut stream(self.seed, stream_id),
        )
    }

    /// Mini-batch SGD; `update(epoch, targets)` runs before the epoch's
    /// first batch.
    fn train(
        &self,
        mut params: ClassifierParams,
        mut targets: Targets,
        mut update: impl FnMut(usize, &mut Targets) -> Result<()>,
    ) -> Result<(ClassifierParams, Vec<f64>)> {
        let c = self.data.num_classes();
        let mut rng = stream(self.seed, SHUFFLE_STREAM);
        let mut history = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            update(epoch, &mut targets)?;
            let lr = self.lr_at(epoch);
            let mut total = 0.0;
            let batches = self.batches(&mut rng);
            for batch in &batches {
                let samples: Vec<Sample<'_>> = batch
                    .iter()
                    .map(|&i| Sample {
                        x: self.data.features(i),
                        target: targets.get(c, i, self.data.labels()[i]),
                    })
                    .collect();
                let (loss, grads) = loss_and_gradient(&params, &samples, self.config.lambda)?;
                total += loss;
                params = sgd_step(&params, &grads, lr)?;
            }
            history.push(total / batches.len() as f64);
        }
        Ok((params, history))
    }

    /// Joint training of two peers. Each peer's mimicry gradient
    /// `p_self − p_other` is folded into a cross-entropy gradient against
    /// the mixed target `(target + p_other) / 2`, scaled by 2.
    fn train_mutual(
        &self,
        mut first: ClassifierParams,
        mut second: ClassifierParams,
    ) -> Result<(ClassifierParams, ClassifierParams, Vec<f64>, Vec<f64>)> {
        let c = self.data.num_classes();
        let lambda = self.config.lambda;
        let hard = per_class_table(c, |i| Ok(one_hot(i, c)?.probs))?;
        let mut rng = stream(self.seed, SHUFFLE_STREAM);
        let (mut hist1, mut hist2) = (Vec::new(), Vec::new());
        for epoch in 0..self.config.epochs {
            let lr = self.lr_at(epoch);
            let (mut total1, mut total2) = (0.0, 0.0);
            let batches = self.batches(&mut rng);
            for batch in &batches {
                let mut mixed1 = Vec::with_capacity(batch.len() * c);
                let mut mixed2 = Vec::with_capacity(batch.len() * c);
                let (mut l1, mut l2) = (0.0, 0.0);
                for &i in batch {
                    let x = self.data.features(i);
                    let t = &hard[self.data.labels()[i] * c..(self.data.labels()[i] + 1) * c];
                    let p1 = first.forward(x)?;
                    let p2 = second.forward(x)?;
                    let (a, b) = dml_pair_losses(&p1, &p2, t, t);
                    l1 += a;
                    l2 += b;
                    mixed1.extend(t.iter().zip(&p2).map(|(ti, pi)| 0.5 * (ti + pi)));
                    mixed2.extend(t.iter().zip(&p1).map(|(ti, pi)| 0.5 * (ti + pi)));
                }
                let n = batch.len() as f64;
                total1 += l1 / n + lambda * first.regularizer();
                total2 += l2 / n + lambda * second.regularizer();
                let step = |params: &ClassifierParams, mixed: &[f64]| -> Result<ClassifierParams> {
                    let samples: Vec<Sample<'_>> = batch
                        .iter()
                        .enumerate()
                        .map(|(k, &i)| Sample {
                            x: self.data.features(i),
                            target: &mixed[k * c..(k + 1) * c],
                        })
                        .collect();
                    let mut g = gradient(params, &samples, 0.0)?;
                    g.scale(2.0);
                    g.add_weight_decay(params, lambda);
                    sgd_step(params, &g, lr)
                };
                let next1 = step(&first, &mixed1)?;
                let next2 = step(&second, &mixed2)?;
                first = next1;
                second = next2;
            }
            hist1.push(total1 / batches.len() as f64);
            hist2.push(total2 / batches.len() as f64);
        }
        Ok((first, second, hist1, hist2))
    }
}

fn evaluate(params: &ClassifierParams, test: &Dataset) -> Result<(f64, f64)> {
    let preds = (0..test.len())
        .map(|i| params.forward(test.features(i)))
        .collect::<Result<Vec<_>>>()?;
    let top1 = topk_accuracy(&preds, test.labels(), 1)?;
    let top5 = topk_accuracy(&preds, test.labels(), 5.min(test.num_classes()))?;
    Ok((top1, top5))
}

/// Trains one model (two for DML) under `config` with `seed` and evaluates
/// it on `test` after the last epoch.
///
/// The seed drives the data-ratio subsample, parameter initialization and
/// batch order, so different encodings under the same seed see the same
/// data in the same order from the same starting point.
pub fn run_trial(
    config: &ExperimentConfig,
    seed: u64,
    train: &Dataset,
    test: &Dataset,
    sim: Option<&SimilarityMatrix>,
) -> Result<TrialOutcome> {
    config.validate()?;
    if train.dim() != test.dim() || train.num_classes() != test.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "train (d={}, C={}) and test (d={}, C={}) disagree",
            train.dim(),
            train.num_classes(),
            test.dim(),
            test.num_classes()
        )));
    }
    let c = train.num_classes();
    let started = Instant::now();
    let data = subsample(train, config.dr, seed)?;
    let setup = TrainSetup {
        config,
        data: &data,
        seed,
    };
    let one_hot_table = || per_class_table(c, |i| Ok(one_hot(i, c)?.probs));

    let mut companion = None;
    let (params, history) = match config.encoding {
        Encoding::Sl => setup.train(
            setup.init(INIT_STREAM)?,
            Targets::PerClass(one_hot_table()?),
            |_, _| Ok(()),
        )?,
        Encoding::Ls => {
            let alpha = config.effective_alpha();
            let table = per_class_table(c, |i| Ok(label_smoothing(i, c, alpha)?.probs))?;
            setup.train(
                setup.init(INIT_STREAM)?,
                Targets::PerClass(table),
                |_, _| Ok(()),
            )?
        }
        Encoding::Lcl => {
            let sim = sim.ok_or_else(|| {
                Error::InvalidConfig("LCL trial needs a similarity matrix".into())
            })?;
            if sim.len() != c {
                return Err(Error::ShapeMismatch(format!(
                    "similarity matrix has {} classes, data has {c}",
                    sim.len()
                )));
            }
            let epsilon = config.epsilon.expect("validated");
            let mut schedule = init_targets(sim, epsilon)?;
            if config.debug_verify_curriculum {
                let report = verify_curriculum(&schedule, config.epochs.saturating_sub(1) as u64);
                if !report.passed() {
                    return Err(Error::CurriculumViolation(format!(
                        "{} violations, first: {:?}",
                        report.violations.len(),
                        report.violations[0]
                    )));
                }
            }
            let initial = Targets::PerClass(schedule_table(&schedule));
            setup.train(setup.init(INIT_STREAM)?, initial, |epoch, targets| {
                schedule = schedule.advance_to(epoch as u64)?;
                *targets = Targets::PerClass(schedule_table(&schedule));
                Ok(())
            })?
        }
        Encoding::Kd => {
            let (teacher, _) = setup.train(
                setup.init(INIT_STREAM)?,
                Targets::PerClass(one_hot_table()?),
                |_, _| Ok(()),
            )?;
            let temperature = config.effective_temperature();
            let mut soft = Vec::with_capacity(data.len() * c);
            for i in 0..data.len() {
                soft.extend(teacher.forward_with_temperature(data.features(i), temperature)?);
            }
            setup.train(
                setup.init(INIT_STREAM)?,
                Targets::PerExample(soft),
                |_, _| Ok(()),
            )?
        }
        Encoding::Dml => {
            let (p1, p2, h1, h2) =
                setup.train_mutual(setup.init(INIT_STREAM)?, setup.init(PEER_INIT_STREAM)?)?;
            companion = Some((p2, h2));
            (p1, h1)
        }
    };

    let (top1, top5) = evaluate(&params, test)?;
    let wall_ms = started.elapsed().as_millis() as u64;
    let config_id = config.config_id();
    let result = TrialResult {
        config_id: config_id.clone(),
        encoding: config.encoding.to_string(),
        epsilon: config.epsilon,
        alpha: (config.encoding == Encoding::Ls).then(|| config.effective_alpha()),
        dr: config.dr,
        seed,
        top1,
        top5,
        final_loss: history.last().copied().unwrap_or(f64::NAN),
        epochs: config.epochs,
        wall_ms,
        loss_history: history,
    };
    let companion = match companion {
        Some((p2, h2)) => {
            let (t1, t5) = evaluate(&p2, test)?;
            let r = TrialResult {
                config_id: format!("{config_id}_peer2"),
                encoding: "DML2".into(),
                top1: t1,
                top5: t5,
                final_loss: h2.last().copied().unwrap_or(f64::NAN),
                loss_history: h2,
                ..result.clone()
            };
            Some((r, p2))
        }
        None => None,
    };
    Ok(TrialOutcome {
        result,
        params,
        companion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::similarity::build_cosine_similarity;

    #[test]
    fn topk_examples() {
        let preds = vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.8, 0.1]];
        assert_eq!(topk_accuracy(&preds, &[0, 1], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&preds, &[2, 2], 3).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&preds, &[2, 0], 1).unwrap(), 0.0);
        // tie between classes 0 and 2 on the first row: 0 goes first
        let tied = vec![vec![0.4, 0.2, 0.4]];
        assert_eq!(topk_accuracy(&tied, &[0], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&tied, &[2], 1).unwrap(), 0.0);
        assert!(topk_accuracy(&[], &[], 1).is_err());
        assert!(topk_accuracy(&preds, &[0, 1], 4).is_err());
        assert!(topk_accuracy(&preds, &[0, 1], 0).is_err());
    }

    #[test]
    fn uniform_predictor_top5_counts_low_labels() {
        let labels: Vec<usize> = (0..10).chain([1, 3, 7, 9, 2]).collect();
        let preds = vec![vec![0.1; 10]; labels.len()];
        let brute = labels.iter().filter(|&&l| l < 5).count() as f64 / labels.len() as f64;
        assert_eq!(topk_accuracy(&preds, &labels, 5).unwrap(), brute);
    }

    fn tiny() -> (Dataset, Dataset, SimilarityMatrix) {
        let data = generate_synthetic(&SyntheticSpec {
            num_superclusters: 2,
            classes_per_supercluster: 3,
            dim: 8,
            train_per_class: 12,
            test_per_class: 6,
            seed: 5,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let sim = build_cosine_similarity(&data.class_embeddings, true)
            .unwrap()
            .matrix;
        (data.train, data.test, sim)
    }

    fn quick(mut cfg: ExperimentConfig) -> ExperimentConfig {
        cfg.epochs = 4;
        cfg.batch_size = 8;
        cfg
    }

    #[test]
    fn every_encoding_runs_and_is_deterministic() {
        let (train, test, sim) = tiny();
        let configs = [
            ExperimentConfig::new(Encoding::Sl),
            ExperimentConfig::new(Encoding::Ls),
            ExperimentConfig::lcl(0.9),
            ExperimentConfig::new(Encoding::Kd),
            ExperimentConfig::new(Encoding::Dml),
        ];
        for cfg in configs.into_iter().map(quick) {
            let a = run_trial(&cfg, 3, &train, &test, Some(&sim)).unwrap();
            let b = run_trial(&cfg, 3, &train, &test, Some(&sim)).unwrap();
            assert_eq!(a.params, b.params, "{}", cfg.config_id());
            assert_eq!(a.result.top1, b.result.top1);
            assert_eq!(a.result.loss_history, b.result.loss_history);
            assert!(a.result.top1 <= a.result.top5);
            assert_eq!(a.result.loss_history.len(), 4);
            assert_eq!(a.companion.is_some(), cfg.encoding == Encoding::Dml);
        }
    }

    #[test]
    fn lcl_needs_similarity() {
        let (train, test, _) = tiny();
        let err =
            run_trial(&quick(ExperimentConfig::lcl(0.9)), 0, &train, &test, None).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn zero_epochs_rejected() {
        let (train, test, _) = tiny();
        let mut cfg = ExperimentConfig::new(Encoding::Sl);
        cfg.epochs = 0;
        assert!(matches!(
            run_trial(&cfg, 0, &train, &test, None),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn debug_verification_passes_on_valid_similarity() {
        let (train, test, sim) = tiny();
        let mut cfg = quick(ExperimentConfig::lcl(0.99));
        cfg.debug_verify_curriculum = true;
        assert!(run_trial(&cfg, 1, &train, &test, Some(&sim)).is_ok());
    }

    #[test]
    fn lcl_with_identity_matches_sl() {
        let (train, test, _) = tiny();
        let id = SimilarityMatrix::identity((0..6).map(|i| i.to_string()).collect());
        let sl = run_trial(
            &quick(ExperimentConfig::new(Encoding::Sl)),
            2,
            &train,
            &test,
            None,
        )
        .unwrap();
        let lcl = run_trial(
            &quick(ExperimentConfig::lcl(0.9)),
            2,
            &train,
            &test,
            Some(&id),
        )
        .unwrap();
        assert!(sl.params.max_abs_diff(&lcl.params) < 1e-10);
    }
}
