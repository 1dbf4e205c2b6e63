//! Labelled feature datasets, stratified subsampling and a synthetic
//! generator with clustered class structure.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::similarity::EmbeddingTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// `ℓ` examples of dimension `d` with labels in `[0, C)`. Features are
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if dim == 0 || num_classes == 0 {
            return Err(Error::InvalidDataset(
                "dimension and class count must be positive".into(),
            ));
        }
        if labels.is_empty() {
            return Err(Error::InvalidDataset("no examples".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                found: features.len(),
                context: "feature matrix".into(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidDataset(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        let ds = Self {
            features,
            labels,
            dim,
            num_classes,
            split,
        };
        if split == Split::Train {
            if let Some(missing) = ds.class_counts().iter().position(|&n| n == 0) {
                return Err(Error::InvalidDataset(format!(
                    "class {missing} has no training examples"
                )));
            }
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self, index: usize) -> &[f64] {
        &self.features[index * self.dim..(index + 1) * self.dim]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    fn select(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.features(i));
        }
        Self {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    /// CSV text: a `# classes=<C> split=<s>` line, a `label,f1,...,fd`
    /// header, one example per row.
    pub fn to_csv_string(&self) -> String {
        let mut out = format!("# classes={} split={}\nlabel", self.num_classes, self.split);
        for k in 1..=self.dim {
            out.push_str(&format!(",f{k}"));
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&self.labels[i].to_string());
            for v in self.features(i) {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut num_classes = None;
    let mut split = None;
    let mut dim = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        let n = lineno + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            for kv in meta.split_whitespace() {
                match kv.split_once('=') {
                    Some(("classes", v)) => {
                        num_classes = Some(
                            v.parse::<usize>()
                                .map_err(|_| Error::parse(n, "bad class count"))?,
                        )
                    }
                    Some(("split", "train")) => split = Some(Split::Train),
                    Some(("split", "test")) => split = Some(Split::Test),
                    Some(("split", other)) => {
                        return Err(Error::parse(n, format!("unknown split `{other}`")))
                    }
                    _ => {}
                }
            }
            continue;
        }
        if dim.is_none() {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.first() != Some(&"label") || cols.len() < 2 {
                return Err(Error::parse(n, "expected header `label,f1,...,fd`"));
            }
            dim = Some(cols.len() - 1);
            continue;
        }
        let d = dim.expect("header seen");
        let mut fields = line.split(',');
        let label = fields
            .next()
            .and_then(|f| f.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::parse(n, "bad label"))?;
        let row = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(n, format!("bad number `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: row.len(),
                context: format!("line {n}"),
            });
        }
        labels.push(label);
        features.extend(row);
    }
    let num_classes =
        num_classes.ok_or_else(|| Error::parse(0, "missing `# classes=<C>` metadata"))?;
    let split = split.ok_or_else(|| Error::parse(0, "missing `split=<train|test>` metadata"))?;
    let dim = dim.ok_or_else(|| Error::parse(0, "missing header"))?;
    Dataset::new(features, labels, dim, num_classes, split)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

/// Number of examples kept from a class of size `n` at data ratio `dr`.
///
/// The product is nudged down before rounding up so that ratios such as
/// 0.05 or 0.1, which are not exact in binary, do not overshoot by one.
pub fn kept_per_class(n: usize, dr: f64) -> usize {
    let raw = dr * n as f64;
    let kept = (raw - raw.abs() * 1e-12).ceil() as usize;
    kept.clamp(1, n.max(1))
}

/// Stratified subsample without replacement keeping `⌈dr·n_c⌉` examples of
/// every class. Surviving examples keep their original relative order.
pub fn subsample(ds: &Dataset, dr: f64, seed: u64) -> Result<Dataset> {
    if ds.split != Split::Train {
        return Err(Error::InvalidArgument(
            "subsampling applies to training splits only".into(),
        ));
    }
    if !(dr > 0.0 && dr <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "data ratio {dr} not in (0, 1]"
        )));
    }
    if dr == 1.0 {
        return Ok(ds.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut keep = Vec::new();
    for members in &mut by_class {
        let k = kept_per_class(members.len(), dr);
        members.shuffle(&mut rng);
        keep.extend_from_slice(&members[..k]);
    }
    keep.sort_unstable();
    Ok(ds.select(&keep))
}

#[derive(Debug, Clone, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_superclusters: usize,
    pub classes_per_supercluster: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub intra_spread: f64,
    pub inter_spread: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_superclusters: 4,
            classes_per_supercluster: 5,
            dim: 32,
            train_per_class: 100,
            test_per_class: 50,
            intra_spread: 1.0,
            inter_spread: 2.0,
            noise_sigma: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn num_classes(&self) -> usize {
        self.num_superclusters * self.classes_per_supercluster
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.num_superclusters,
            self.classes_per_supercluster,
            self.dim,
            self.train_per_class,
            self.test_per_class,
        ];
        if counts.contains(&0) {
            return Err(Error::InvalidArgument(
                "synthetic spec counts must be positive".into(),
            ));
        }
        for (name, v) in [
            ("intra_spread", self.intra_spread),
            ("inter_spread", self.inter_spread),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.inter_spread <= self.intra_spread {
            return Err(Error::InvalidArgument(
                "inter_spread must exceed intra_spread".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: Dataset,
    pub test: Dataset,
    /// Class centers; cosine similarity is higher within a supercluster.
    pub class_embeddings: EmbeddingTable,
}

/// Gaussian superclusters → class centers → samples, all drawn from one
/// seeded stream.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let draw = |scale: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..d).map(|_| scale * unit.sample(rng)).collect()
    };

    let mut centers = Vec::with_capacity(spec.num_classes());
    for _ in 0..spec.num_superclusters {
        let sc = draw(spec.inter_spread, &mut rng);
        for _ in 0..spec.classes_per_supercluster {
            let offset = draw(spec.intra_spread, &mut rng);
            centers.push(
                sc.iter()
                    .zip(offset)
                    .map(|(a, b)| a + b)
                    .collect::<Vec<f64>>(),
            );
        }
    }

    let sample_split = |per_class: usize, split: Split, rng: &mut ChaCha8Rng| -> Result<Dataset> {
        let mut features = Vec::with_capacity(per_class * centers.len() * d);
        let mut labels = Vec::with_capacity(per_class * centers.len());
        for (label, center) in centers.iter().enumerate() {
            for _ in 0..per_class {
                let noise = draw(spec.noise_sigma, rng);
                features.extend(center.iter().zip(noise).map(|(c, e)| c + e));
                labels.push(label);
            }
        }
        Dataset::new(features, labels, d, centers.len(), split)
    };
    let train = sample_split(spec.train_per_class, Split::Train, &mut rng)?;
    let test = sample_split(spec.test_per_class, Split::Test, &mut rng)?;

    let names = (0..centers.len())
        .map(|c| {
            format!(
                "s{}c{}",
                c / spec.classes_per_supercluster,
                c % spec.classes_per_supercluster
            )
        })
        .collect();
    let class_embeddings = EmbeddingTable::new(names, centers)?;
    Ok(SyntheticData {
        train,
        test,
        class_embeddings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(per_class: usize, classes: usize) -> Dataset {
        let labels: Vec<usize> = (0..classes)
            .flat_map(|c| std::iter::repeat_n(c, per_class))
            .collect();
        let features = (0..labels.len()).map(|i| i as f64).collect();
        Dataset::new(features, labels, 1, classes, Split::Train).unwrap()
    }

    #[test]
    fn parses_small_file() {
        let ds =
            parse_dataset("# classes=2 split=train\nlabel,f1,f2\n0,1.0,2.0\n1,3.0,4.0\n").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.features(1), &[3.0, 4.0]);
        assert_eq!(ds.split(), Split::Train);
    }

    #[test]
    fn rejects_bad_files() {
        let bad_label = parse_dataset("# classes=3 split=test\nlabel,f1\n5,1.0\n");
        assert!(matches!(bad_label, Err(Error::InvalidDataset(_))));
        assert!(parse_dataset("").is_err());
        let missing = parse_dataset("# classes=3 split=train\nlabel,f1\n0,1.0\n1,1.0\n");
        assert!(matches!(missing, Err(Error::InvalidDataset(_))));
        // The test split may omit classes.
        assert!(parse_dataset("# classes=3 split=test\nlabel,f1\n0,1.0\n").is_ok());
        let ragged = parse_dataset("# classes=1 split=train\nlabel,f1,f2\n0,1.0\n");
        assert!(matches!(ragged, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let ds = generate_synthetic(&SyntheticSpec {
            train_per_class: 3,
            test_per_class: 2,
            ..SyntheticSpec::default()
        })
        .unwrap()
        .train;
        assert_eq!(parse_dataset(&ds.to_csv_string()).unwrap(), ds);
    }

    #[test]
    fn subsample_full_ratio_is_identity() {
        let ds = balanced(10, 3);
        assert_eq!(subsample(&ds, 1.0, 7).unwrap(), ds);
    }

    #[test]
    fn subsample_half_keeps_five_per_class() {
        let ds = balanced(10, 4);
        let s = subsample(&ds, 0.5, 7).unwrap();
        assert_eq!(s.class_counts(), vec![5; 4]);
        assert_eq!(s, subsample(&ds, 0.5, 7).unwrap());
        assert_ne!(s, subsample(&ds, 0.5, 8).unwrap());
    }

    #[test]
    fn subsample_small_ratio_keeps_every_class() {
        let ds = balanced(100, 20);
        let s = subsample(&ds, 0.05, 1).unwrap();
        assert_eq!(s.class_counts(), vec![5; 20]);
        let tiny = subsample(&balanced(3, 2), 0.05, 1).unwrap();
        assert_eq!(tiny.class_counts(), vec![1, 1]);
    }

    #[test]
    fn subsample_rejects_bad_arguments() {
        let ds = balanced(4, 2);
        assert!(subsample(&ds, 0.0, 1).is_err());
        assert!(subsample(&ds, 1.5, 1).is_err());
        let test = Dataset::new(vec![0.0], vec![0], 1, 1, Split::Test).unwrap();
        assert!(subsample(&test, 0.5, 1).is_err());
    }

    #[test]
    fn kept_counts_round_up() {
        assert_eq!(kept_per_class(10, 0.5), 5);
        assert_eq!(kept_per_class(11, 0.5), 6);
        assert_eq!(kept_per_class(100, 0.05), 5);
        assert_eq!(kept_per_class(100, 0.1), 10);
        assert_eq!(kept_per_class(100, 0.2), 20);
        assert_eq!(kept_per_class(7, 0.01), 1);
    }

    #[test]
    fn synthetic_single_class() {
        let spec = SyntheticSpec {
            num_superclusters: 1,
            classes_per_supercluster: 1,
            train_per_class: 4,
            test_per_class: 2,
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        assert!(data.train.labels().iter().all(|&l| l == 0));
        assert_eq!(data.class_embeddings.len(), 1);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec {
            seed: 42,
            ..SyntheticSpec::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.class_embeddings, b.class_embeddings);
    }

    #[test]
    fn synthetic_spec_validation() {
        let bad = SyntheticSpec {
            inter_spread: 0.5,
            intra_spread: 1.0,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&bad).is_err());
        let zero = SyntheticSpec {
            dim: 0,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&zero).is_err());
    }
}
