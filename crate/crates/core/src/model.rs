//! Softmax classifiers trained with cross-entropy against soft targets.
//!
//! Two architectures are supported: a linear softmax model and a single
//! hidden ReLU layer (`mlp1`). Weight matrices are stored row-major with
//! shape `(fan_in, fan_out)`, so logits are `Wᵀx + b`.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

/// Lower bound applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

pub const CHECKPOINT_MAGIC: &str = "LCLM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Linear,
    Mlp1 { hidden: usize },
}

impl Architecture {
    pub fn hidden(&self) -> usize {
        match self {
            Architecture::Linear => 0,
            Architecture::Mlp1 { hidden } => *hidden,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::Linear => f.write_str("linear"),
            Architecture::Mlp1 { hidden } => write!(f, "mlp1h{hidden}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    architecture: Architecture,
    input_dim: usize,
    num_classes: usize,
    /// `(d × h)`, empty for the linear model.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `(d × C)` or `(h × C)`.
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

/// `∂J/∂θ`, laid out exactly like [`ClassifierParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros_like(params: &ClassifierParams) -> Self {
        Self {
            w1: vec![0.0; params.w1.len()],
            b1: vec![0.0; params.b1.len()],
            w_out: vec![0.0; params.w_out.len()],
            b_out: vec![0.0; params.b_out.len()],
        }
    }

    fn parts(&self) -> [&Vec<f64>; 4] {
        [&self.w1, &self.b1, &self.w_out, &self.b_out]
    }

    fn parts_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w_out, &mut self.b_out]
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.parts()
            .iter()
            .flat_map(|p| p.iter().copied())
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.parts()
            .iter()
            .flat_map(|p| p.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for part in self.parts_mut() {
            part.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Adds `λ·W` for both weight matrices (the gradient of `λ·½·Σ W²`).
    pub fn add_weight_decay(&mut self, params: &ClassifierParams, lambda: f64) {
        if lambda == 0.0 {
            return;
        }
        self.w1
            .iter_mut()
            .zip(&params.w1)
            .for_each(|(g, w)| *g += lambda * w);
        self.w_out
            .iter_mut()
            .zip(&params.w_out)
            .for_each(|(g, w)| *g += lambda * w);
    }

    pub fn add(&mut self, other: &GradientBundle) -> Result<()> {
        for (a, b) in self.parts_mut().into_iter().zip(other.parts()) {
            if a.len() != b.len() {
                return Err(Error::ShapeMismatch(
                    "gradient bundles differ in shape".into(),
                ));
            }
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }
}

/// One training example: features and the (possibly soft) target it is
/// trained against.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub target: &'a [f64],
}

fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect()
}

/// Numerically stable softmax of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .map(|z| ((z - max) / temperature).exp())
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

struct Activations {
    pre_hidden: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl ClassifierParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(
        architecture: Architecture,
        input_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::InvalidArgument(
                "input_dim and num_classes must be positive".into(),
            ));
        }
        let (w1, b1, out_in) = match architecture {
            Architecture::Linear => (Vec::new(), Vec::new(), input_dim),
            Architecture::Mlp1 { hidden } => {
                if hidden == 0 {
                    return Err(Error::InvalidArgument(
                        "hidden width must be positive".into(),
                    ));
                }
                (glorot(rng, input_dim, hidden), vec![0.0; hidden], hidden)
            }
        };
        let w_out = glorot(rng, out_in, num_classes);
        Ok(Self {
            architecture,
            input_dim,
            num_classes,
            w1,
            b1,
            w_out,
            b_out: vec![0.0; num_classes],
        })
    }

    /// All-zero parameters of the given shape.
    pub fn zeros(architecture: Architecture, input_dim: usize, num_classes: usize) -> Self {
        let h = architecture.hidden();
        let out_in = if h == 0 { input_dim } else { h };
        Self {
            architecture,
            input_dim,
            num_classes,
            w1: vec![0.0; input_dim * h],
            b1: vec![0.0; h],
            w_out: vec![0.0; out_in * num_classes],
            b_out: vec![0.0; num_classes],
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn parts(&self) -> [&Vec<f64>; 4] {
        [&self.w1, &self.b1, &self.w_out, &self.b_out]
    }

    fn parts_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w_out, &mut self.b_out]
    }

    pub fn num_params(&self) -> usize {
        self.parts().iter().map(|p| p.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.parts()
            .iter()
            .flat_map(|p| p.iter().copied())
            .collect()
    }

    /// Mutable access to the `index`-th entry of [`ClassifierParams::flatten`].
    pub fn flat_mut(&mut self, mut index: usize) -> &mut f64 {
        for part in self.parts_mut() {
            if index < part.len() {
                return &mut part[index];
            }
            index -= part.len();
        }
        panic!("parameter index out of range");
    }

    /// Largest absolute difference between corresponding parameters.
    pub fn max_abs_diff(&self, other: &ClassifierParams) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn check_shapes(&self) -> Result<()> {
        let h = self.architecture.hidden();
        let out_in = if h == 0 { self.input_dim } else { h };
        let ok = self.w1.len() == self.input_dim * h
            && self.b1.len() == h
            && self.w_out.len() == out_in * self.num_classes
            && self.b_out.len() == self.num_classes;
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "parameter arrays do not match {} with d={} C={}",
                self.architecture, self.input_dim, self.num_classes
            )))
        }
    }

    fn logits_into(&self, x: &[f64], pre_hidden: &mut Vec<f64>, hidden: &mut Vec<f64>) -> Vec<f64> {
        let c = self.num_classes;
        let input: &[f64] = match self.architecture {
            Architecture::Linear => x,
            Architecture::Mlp1 { hidden: h } => {
                pre_hidden.clear();
                pre_hidden.extend_from_slice(&self.b1);
                for (j, &xj) in x.iter().enumerate() {
                    if xj != 0.0 {
                        let row = &self.w1[j * h..(j + 1) * h];
                        pre_hidden
                            .iter_mut()
                            .zip(row)
                            .for_each(|(a, w)| *a += xj * w);
                    }
                }
                hidden.clear();
                hidden.extend(pre_hidden.iter().map(|&a| a.max(0.0)));
                hidden
            }
        };
        let mut z = self.b_out.clone();
        for (k, &v) in input.iter().enumerate() {
            if v != 0.0 {
                let row = &self.w_out[k * c..(k + 1) * c];
                z.iter_mut().zip(row).for_each(|(zc, w)| *zc += v * w);
            }
        }
        z
    }

    fn activations(&self, x: &[f64]) -> Activations {
        let mut pre_hidden = Vec::new();
        let mut hidden = Vec::new();
        let z = self.logits_into(x, &mut pre_hidden, &mut hidden);
        Activations {
            pre_hidden,
            hidden,
            probs: softmax(&z, 1.0),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: x.len(),
                context: "model input".into(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model input".into()));
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.logits_into(x, &mut Vec::new(), &mut Vec::new()))
    }

    /// Predicted class distribution for `x`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_with_temperature(x, 1.0)
    }

    /// Softmax of `logits / temperature`, used for distillation targets.
    pub fn forward_with_temperature(&self, x: &[f64], temperature: f64) -> Result<Vec<f64>> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature {temperature} must be positive"
            )));
        }
        Ok(softmax(&self.logits(x)?, temperature))
    }

    /// `½·Σ W²` over weight matrices; biases are not regularized.
    pub fn regularizer(&self) -> f64 {
        0.5 * self
            .w1
            .iter()
            .chain(&self.w_out)
            .map(|w| w * w)
            .sum::<f64>()
    }

    /// Writes the versioned text checkpoint.
    pub fn to_checkpoint_string(&self) -> String {
        let mut out = format!(
            "{CHECKPOINT_MAGIC}\narchitecture {}\nshape {} {} {}\n",
            match self.architecture {
                Architecture::Linear => "linear",
                Architecture::Mlp1 { .. } => "mlp1",
            },
            self.input_dim,
            self.architecture.hidden(),
            self.num_classes
        );
        for (name, part) in ["w1", "b1", "w_out", "b_out"].iter().zip(self.parts()) {
            out.push_str(&format!("{name} {}\n", part.len()));
            let vals: Vec<String> = part.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&vals.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("checkpoint truncated before {what}")))
        };
        let (_, magic) = next("magic")?;
        if magic.trim() != CHECKPOINT_MAGIC {
            return Err(Error::parse(1, format!("bad magic `{magic}`")));
        }
        let (n, arch_line) = next("architecture")?;
        let arch_name = arch_line
            .strip_prefix("architecture ")
            .ok_or_else(|| Error::parse(n + 1, "expected `architecture`"))?
            .trim();
        let (n, shape_line) = next("shape")?;
        let dims: Vec<usize> = shape_line
            .strip_prefix("shape ")
            .ok_or_else(|| Error::parse(n + 1, "expected `shape`"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::parse(n + 1, "bad shape")))
            .collect::<Result<_>>()?;
        let [d, h, c] = dims[..] else {
            return Err(Error::parse(n + 1, "shape needs three integers"));
        };
        let architecture = match arch_name {
            "linear" => Architecture::Linear,
            "mlp1" => Architecture::Mlp1 { hidden: h },
            other => return Err(Error::parse(n, format!("unknown architecture `{other}`"))),
        };
        let mut params = Self::zeros(architecture, d, c);
        for name in ["w1", "b1", "w_out", "b_out"] {
            let (n, header) = next(name)?;
            let len: usize = header
                .strip_prefix(name)
                .and_then(|r| r.trim().parse().ok())
                .ok_or_else(|| Error::parse(n + 1, format!("expected `{name} <len>`")))?;
            let (n, body) = next(name)?;
            let vals: Vec<f64> = body
                .split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|_| Error::parse(n + 1, format!("bad number `{t}`")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != len {
                return Err(Error::parse(
                    n + 1,
                    format!("{name}: header says {len}, found {}", vals.len()),
                ));
            }
            let slot = match name {
                "w1" => &mut params.w1,
                "b1" => &mut params.b1,
                "w_out" => &mut params.w_out,
                _ => &mut params.b_out,
            };
            *slot = vals;
        }
        params.check_shapes()?;
        if params.flatten().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text)
    }
}

/// `−Σ target_c · ln pred_c`, with predictions floored at [`PROB_FLOOR`].
pub fn cross_entropy(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .filter(|(_, &t)| t != 0.0)
        .map(|(&p, &t)| -t * p.max(PROB_FLOOR).ln())
        .sum()
}

/// `Σ p_c ln(p_c / q_c)` with `0·ln 0 = 0` and `q` floored.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pc, _)| pc > 0.0)
        .map(|(&pc, &qc)| pc * (pc / qc.max(PROB_FLOOR)).ln())
        .sum()
}

/// Mutual-learning losses for two peers:
/// `CE(pred1, target1) + KL(pred2‖pred1)` and
/// `CE(pred2, target2) + KL(pred1‖pred2)`.
pub fn dml_pair_losses(
    pred1: &[f64],
    pred2: &[f64],
    target1: &[f64],
    target2: &[f64],
) -> (f64, f64) {
    (
        cross_entropy(pred1, target1) + kl_divergence(pred2, pred1),
        cross_entropy(pred2, target2) + kl_divergence(pred1, pred2),
    )
}

fn check_batch(params: &ClassifierParams, batch: &[Sample<'_>]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    params.check_shapes()?;
    for s in batch {
        params.check_input(s.x)?;
        if s.target.len() != params.num_classes {
            return Err(Error::DimensionMismatch {
                expected: params.num_classes,
                found: s.target.len(),
                context: "target".into(),
            });
        }
    }
    Ok(())
}

/// Mean cross-entropy over the batch plus `λ·½·Σ W²`.
pub fn objective(params: &ClassifierParams, batch: &[Sample<'_>], lambda: f64) -> Result<f64> {
    check_batch(params, batch)?;
    let total: f64 = batch
        .iter()
        .map(|s| cross_entropy(&params.activations(s.x).probs, s.target))
        .sum();
    Ok(total / batch.len() as f64 + lambda * params.regularizer())
}

/// Analytic gradient of [`objective`].
pub fn gradient(
    params: &ClassifierParams,
    batch: &[Sample<'_>],
    lambda: f64,
) -> Result<GradientBundle> {
    loss_and_gradient(params, batch, lambda).map(|(_, g)| g)
}

/// Objective value and its gradient from a single forward/backward pass.
pub fn loss_and_gradient(
    params: &ClassifierParams,
    batch: &[Sample<'_>],
    lambda: f64,
) -> Result<(f64, GradientBundle)> {
    check_batch(params, batch)?;
    let c = params.num_classes;
    let scale = 1.0 / batch.len() as f64;
    let mut grads = GradientBundle::zeros_like(params);
    let mut loss = 0.0;
    let mut delta = vec![0.0; c];
    for s in batch {
        let act = params.activations(s.x);
        loss += cross_entropy(&act.probs, s.target);
        for ((d, p), t) in delta.iter_mut().zip(&act.probs).zip(s.target) {
            *d = (p - t) * scale;
        }
        grads
            .b_out
            .iter_mut()
            .zip(&delta)
            .for_each(|(g, d)| *g += d);
        match params.architecture {
            Architecture::Linear => {
                accumulate_outer(&mut grads.w_out, s.x, &delta);
            }
            Architecture::Mlp1 { hidden: h } => {
                accumulate_outer(&mut grads.w_out, &act.hidden, &delta);
                let mut delta_hidden = vec![0.0; h];
                for (k, dh) in delta_hidden.iter_mut().enumerate() {
                    if act.pre_hidden[k] > 0.0 {
                        let row = &params.w_out[k * c..(k + 1) * c];
                        *dh = row.iter().zip(&delta).map(|(w, d)| w * d).sum();
                    }
                }
                grads
                    .b1
                    .iter_mut()
                    .zip(&delta_hidden)
                    .for_each(|(g, d)| *g += d);
                accumulate_outer(&mut grads.w1, s.x, &delta_hidden);
            }
        }
    }
    grads.add_weight_decay(params, lambda);
    Ok((loss * scale + lambda * params.regularizer(), grads))
}

/// `m += u vᵀ` for row-major `m` of shape `(u.len(), v.len())`.
fn accumulate_outer(m: &mut [f64], u: &[f64], v: &[f64]) {
    let cols = v.len();
    for (i, &ui) in u.iter().enumerate() {
        if ui != 0.0 {
            let row = &mut m[i * cols..(i + 1) * cols];
            row.iter_mut().zip(v).for_each(|(mij, vj)| *mij += ui * vj);
        }
    }
}

/// `θ ← θ − lr·g` for every parameter array.
pub fn sgd_step(
    params: &ClassifierParams,
    grads: &GradientBundle,
    lr: f64,
) -> Result<ClassifierParams> {
    let mut next = params.clone();
    for (p, g) in next.parts_mut().into_iter().zip(grads.parts()) {
        if p.len() != g.len() {
            return Err(Error::ShapeMismatch(
                "gradient does not match parameters".into(),
            ));
        }
        p.iter_mut().zip(g).for_each(|(w, gw)| *w -= lr * gw);
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::entropy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_linear_model_is_uniform() {
        let p = ClassifierParams::zeros(Architecture::Linear, 3, 4);
        assert_eq!(p.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn bias_ln2_gives_two_thirds() {
        let mut p = ClassifierParams::zeros(Architecture::Linear, 2, 2);
        p.b_out = vec![2f64.ln(), 0.0];
        let out = p.forward(&[0.3, 0.7]).unwrap();
        assert!((out[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((out[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let p = ClassifierParams::zeros(Architecture::Linear, 2, 2);
        assert!(matches!(
            p.forward(&[f64::NAN, 0.0]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            p.forward(&[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn temperature_flattens_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ClassifierParams::init(Architecture::Linear, 4, 3, &mut rng).unwrap();
        let x = [1.0, 2.0, -1.0, 0.5];
        let sharp = p.forward_with_temperature(&x, 1.0).unwrap();
        let soft = p.forward_with_temperature(&x, 5.0).unwrap();
        assert!(entropy(&soft) > entropy(&sharp));
    }

    #[test]
    fn cross_entropy_examples() {
        let e = 1e-9;
        let near = [1.0 - 3.0 * e, e, e, e];
        let ce = cross_entropy(&near, &[1.0, 0.0, 0.0, 0.0]);
        assert!((ce - (-(1.0 - 3.0 * e).ln())).abs() < 1e-18 && ce < 1e-8);
        let uniform = vec![0.1; 10];
        let mut target = vec![0.0; 10];
        target[3] = 0.7;
        target[8] = 0.3;
        assert!((cross_entropy(&uniform, &target) - std::f64::consts::LN_10).abs() < 1e-14);
        let oracle = -(0.6f64 * 0.7f64.ln()) - 0.4 * 0.3f64.ln();
        assert!((cross_entropy(&[0.7, 0.3], &[0.6, 0.4]) - oracle).abs() < 1e-15);
        assert!((oracle - 0.695594088093614).abs() < 1e-14);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        assert!((kl_divergence(&[1.0, 0.0], &[0.5, 0.5]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn dml_examples() {
        let p = [0.2, 0.8];
        let t = [0.0, 1.0];
        let (l1, l2) = dml_pair_losses(&p, &p, &t, &t);
        assert_eq!(l1, cross_entropy(&p, &t));
        assert_eq!(l2, cross_entropy(&p, &t));

        let p1 = [0.5, 0.5];
        let p2 = [0.75, 0.25];
        let t1 = [1.0, 0.0];
        let t2 = [0.0, 1.0];
        let (a1, a2) = dml_pair_losses(&p1, &p2, &t1, &t2);
        let (b1, b2) = dml_pair_losses(&p2, &p1, &t2, &t1);
        assert_eq!((a1, a2), (b2, b1));
        // KL((0.75, 0.25) || (0.5, 0.5)) = 0.75 ln 1.5 + 0.25 ln 0.5
        let mimic = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((a1 - cross_entropy(&p1, &t1) - mimic).abs() < 1e-15);
    }

    #[test]
    fn objective_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ClassifierParams::init(Architecture::Mlp1 { hidden: 5 }, 3, 4, &mut rng).unwrap();
        let x = [0.5, -1.0, 2.0];
        let t = [0.1, 0.2, 0.3, 0.4];
        let batch = [Sample { x: &x, target: &t }];
        let ce = cross_entropy(&p.forward(&x).unwrap(), &t);
        assert_eq!(objective(&p, &batch, 0.0).unwrap(), ce);
        let expected = ce + 0.3 * p.regularizer();
        assert!((objective(&p, &batch, 0.3).unwrap() - expected).abs() < 1e-15);

        let z = ClassifierParams::zeros(Architecture::Linear, 3, 4);
        let with = objective(&z, &batch, 1.0).unwrap();
        let without = objective(&z, &batch, 0.0).unwrap();
        assert_eq!(with, without);

        assert!(matches!(objective(&p, &[], 0.0), Err(Error::EmptyBatch)));
    }

    #[test]
    fn regularizer_gradient_isolated_by_zero_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = ClassifierParams::init(Architecture::Linear, 3, 2, &mut rng).unwrap();
        let x = [0.0; 3];
        let t = [1.0, 0.0];
        let g = gradient(&p, &[Sample { x: &x, target: &t }], 0.5).unwrap();
        for (gw, w) in g.w_out.iter().zip(&p.w_out) {
            assert_eq!(*gw, 0.5 * w);
        }
    }

    #[test]
    fn stationary_point_has_small_gradient() {
        // With target equal to softmax(b) and x = 0 the linear problem is at
        // its minimum in every direction.
        let mut p = ClassifierParams::zeros(Architecture::Linear, 2, 3);
        p.b_out = vec![0.4, -0.3, 1.1];
        let x = [0.0, 0.0];
        let t = softmax(&p.b_out, 1.0);
        let g = gradient(&p, &[Sample { x: &x, target: &t }], 0.0).unwrap();
        assert!(g.norm() < 1e-8);
    }

    #[test]
    fn sgd_step_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ClassifierParams::init(Architecture::Mlp1 { hidden: 3 }, 2, 2, &mut rng).unwrap();
        let x = [0.0, 0.0];
        let t = [0.5, 0.5];
        let batch = [Sample { x: &x, target: &t }];
        let g = gradient(&p, &batch, 0.0).unwrap();
        assert_eq!(sgd_step(&p, &g, 0.0).unwrap(), p);

        // Linear model, zero input, target equal to the prediction: only the
        // regularizer contributes.
        let q = ClassifierParams::init(Architecture::Linear, 2, 2, &mut rng).unwrap();
        let (lr, lambda) = (0.1, 0.5);
        let g = gradient(&q, &batch, lambda).unwrap();
        let next = sgd_step(&q, &g, lr).unwrap();
        for (a, b) in next.w_out.iter().zip(&q.w_out) {
            assert!((a - (1.0 - lr * lambda) * b).abs() < 1e-15);
        }

        let mut twice = g.clone();
        twice.add(&g).unwrap();
        let two_steps = sgd_step(&sgd_step(&q, &g, lr).unwrap(), &g, lr).unwrap();
        let one_step = sgd_step(&q, &twice, lr).unwrap();
        assert!(two_steps.max_abs_diff(&one_step) < 1e-15);

        let other = GradientBundle::zeros_like(&p);
        assert!(matches!(
            sgd_step(&q, &other, lr),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for arch in [Architecture::Linear, Architecture::Mlp1 { hidden: 4 }] {
            let p = ClassifierParams::init(arch, 3, 5, &mut rng).unwrap();
            let text = p.to_checkpoint_string();
            assert!(text.starts_with("LCLM1\n"));
            assert_eq!(ClassifierParams::from_checkpoint_str(&text).unwrap(), p);
        }
        assert!(ClassifierParams::from_checkpoint_str("LCLM0\n").is_err());
    }
}
