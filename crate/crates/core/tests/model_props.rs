use lcl_core::curriculum::entropy;
use lcl_core::model::{
    cross_entropy, gradient, kl_divergence, objective, sgd_step, softmax, Architecture,
    ClassifierParams, Sample,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

#[derive(Debug)]
struct Instance {
    params: ClassifierParams,
    xs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    lambda: f64,
}

impl Instance {
    fn batch(&self) -> Vec<Sample<'_>> {
        self.xs
            .iter()
            .zip(&self.targets)
            .map(|(x, t)| Sample { x, target: t })
            .collect()
    }
}

fn distribution(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

fn instance_strategy(arch: Architecture) -> impl Strategy<Value = Instance> {
    (1usize..6, 2usize..6, 1usize..5, any::<u64>(), 0.0f64..0.1).prop_flat_map(
        move |(d, c, n, seed, lambda)| {
            (
                prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), n),
                prop::collection::vec(prop::collection::vec(0.01f64..1.0, c), n),
            )
                .prop_map(move |(xs, raw)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    Instance {
                        params: ClassifierParams::init(arch, d, c, &mut rng).unwrap(),
                        xs,
                        targets: raw.iter().map(|r| distribution(r)).collect(),
                        lambda,
                    }
                })
        },
    )
}

/// Central differences of `f` around `params`, one coordinate at a time.
fn numeric_gradient(params: &ClassifierParams, f: impl Fn(&ClassifierParams) -> f64) -> Vec<f64> {
    (0..params.num_params())
        .map(|k| {
            let mut plus = params.clone();
            *plus.flat_mut(k) += H;
            let mut minus = params.clone();
            *minus.flat_mut(k) -= H;
            (f(&plus) - f(&minus)) / (2.0 * H)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

fn check_gradient(inst: &Instance) -> f64 {
    let batch = inst.batch();
    let analytic = gradient(&inst.params, &batch, inst.lambda)
        .unwrap()
        .flatten();
    let numeric = numeric_gradient(&inst.params, |p| objective(p, &batch, inst.lambda).unwrap());
    relative_error(&analytic, &numeric)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn linear_gradient_matches_finite_differences(inst in instance_strategy(Architecture::Linear)) {
        let err = check_gradient(&inst);
        prop_assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn mlp_gradient_matches_finite_differences(inst in instance_strategy(Architecture::Mlp1 { hidden: 4 })) {
        let err = check_gradient(&inst);
        prop_assert!(err < 1e-4, "relative error {err}");
    }

    /// With the peer's predictions held fixed, the gradient of the mutual
    /// learning loss equals twice the gradient against `(t + p_peer) / 2`.
    #[test]
    fn mutual_learning_gradient_matches_finite_differences(
        inst in instance_strategy(Architecture::Mlp1 { hidden: 3 }),
        peer_seed in any::<u64>(),
    ) {
        let (d, c) = (inst.params.input_dim(), inst.params.num_classes());
        let mut rng = ChaCha8Rng::seed_from_u64(peer_seed);
        let peer = ClassifierParams::init(Architecture::Linear, d, c, &mut rng).unwrap();
        let peer_probs: Vec<Vec<f64>> = inst.xs.iter().map(|x| peer.forward(x).unwrap()).collect();
        let loss = |p: &ClassifierParams| {
            let total: f64 = inst
                .xs
                .iter()
                .zip(&inst.targets)
                .zip(&peer_probs)
                .map(|((x, t), q)| {
                    let pred = p.forward(x).unwrap();
                    cross_entropy(&pred, t) + kl_divergence(q, &pred)
                })
                .sum();
            total / inst.xs.len() as f64 + inst.lambda * p.regularizer()
        };
        let mixed: Vec<Vec<f64>> = inst
            .targets
            .iter()
            .zip(&peer_probs)
            .map(|(t, q)| t.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect())
            .collect();
        let batch: Vec<Sample<'_>> = inst.xs.iter().zip(&mixed).map(|(x, t)| Sample { x, target: t }).collect();
        let mut g = gradient(&inst.params, &batch, 0.0).unwrap();
        g.scale(2.0);
        g.add_weight_decay(&inst.params, inst.lambda);
        let numeric = numeric_gradient(&inst.params, loss);
        let err = relative_error(&g.flatten(), &numeric);
        prop_assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn softmax_ignores_logit_shift(logits in prop::collection::vec(-30.0f64..30.0, 1..20), shift in -100.0f64..100.0) {
        let a = softmax(&logits, 1.0);
        let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
        let b = softmax(&shifted, 1.0);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_steps_do_not_increase_objective(inst in instance_strategy(Architecture::Linear)) {
        let batch = inst.batch();
        let mut params = inst.params.clone();
        let mut prev = objective(&params, &batch, inst.lambda).unwrap();
        for _ in 0..100 {
            let g = gradient(&params, &batch, inst.lambda).unwrap();
            params = sgd_step(&params, &g, 1e-3).unwrap();
            let cur = objective(&params, &batch, inst.lambda).unwrap();
            prop_assert!(cur <= prev + 1e-12, "{cur} > {prev}");
            prev = cur;
        }
    }

    #[test]
    fn self_cross_entropy_is_entropy(raw in prop::collection::vec(0.001f64..1.0, 1..30)) {
        let p = distribution(&raw);
        prop_assert!((cross_entropy(&p, &p) - entropy(&p)).abs() < 1e-12);
        prop_assert!(kl_divergence(&p, &p).abs() < 1e-12);
    }

    #[test]
    fn kl_is_nonnegative(
        pair in (1usize..20).prop_flat_map(|c| (
            prop::collection::vec(0.0f64..1.0, c),
            prop::collection::vec(0.001f64..1.0, c),
        ))
    ) {
        let (raw_p, raw_q) = pair;
        prop_assume!(raw_p.iter().sum::<f64>() > 0.0);
        let (p, q) = (distribution(&raw_p), distribution(&raw_q));
        prop_assert!(kl_divergence(&p, &q) >= -1e-12);
    }
}
