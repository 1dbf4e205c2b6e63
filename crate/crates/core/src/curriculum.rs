//! Label-weighting curricula.
//!
//! A [`TargetSchedule`] holds one target distribution per true class. At
//! step 0 row `i` is the normalized similarity row of class `i`; each
//! [`TargetSchedule::step`] multiplies the off-diagonal entries by the
//! cooling parameter ε and renormalizes with the shared denominator
//! `1 + ε·S_i`, where `S_i` is the row's off-diagonal mass. Rows keep their
//! argmax on the diagonal, lose entropy at every step and converge to the
//! one-hot encoding.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::similarity::SimilarityMatrix;

/// Numerical slack used by the simplex and decay-bound checks.
pub const SIMPLEX_TOL: f64 = 1e-12;
/// Absolute slack for entropy monotonicity.
pub const ENTROPY_TOL: f64 = 1e-14;

/// One target distribution together with the class it labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetVector {
    pub probs: Vec<f64>,
    pub true_class: usize,
}

impl TargetVector {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

pub fn one_hot(class_index: usize, num_classes: usize) -> Result<TargetVector> {
    if class_index >= num_classes {
        return Err(Error::OutOfRange {
            index: class_index,
            len: num_classes,
        });
    }
    let mut probs = vec![0.0; num_classes];
    probs[class_index] = 1.0;
    Ok(TargetVector {
        probs,
        true_class: class_index,
    })
}

/// `(1-α) + α/C` on the true class and `α/C` elsewhere. Does not depend on
/// training time.
pub fn label_smoothing(class_index: usize, num_classes: usize, alpha: f64) -> Result<TargetVector> {
    if class_index >= num_classes {
        return Err(Error::OutOfRange {
            index: class_index,
            len: num_classes,
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "smoothing alpha {alpha} not in [0, 1]"
        )));
    }
    let off = alpha / num_classes as f64;
    let mut probs = vec![off; num_classes];
    probs[class_index] = (1.0 - alpha) + off;
    Ok(TargetVector {
        probs,
        true_class: class_index,
    })
}

/// Shannon entropy in nats with `0·ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Per-class target distributions at a given curriculum step.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSchedule {
    targets: Vec<f64>,
    epsilon: f64,
    step: u64,
    num_classes: usize,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} not in (0, 1)"
        )))
    }
}

/// Strict argmax; `None` when the maximum is shared.
fn strict_argmax(row: &[f64]) -> Option<usize> {
    let mut best = 0;
    let mut unique = true;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
            unique = true;
        } else if v == row[best] {
            unique = false;
        }
    }
    unique.then_some(best)
}

/// Sum of a row excluding the diagonal position `i`.
fn off_diagonal_mass(row: &[f64], i: usize) -> f64 {
    row.iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .sum()
}

/// Initializes the schedule from a similarity matrix: row `i` is row `i` of
/// `sim` divided by its sum.
pub fn init_targets(sim: &SimilarityMatrix, epsilon: f64) -> Result<TargetSchedule> {
    check_epsilon(epsilon)?;
    let c = sim.len();
    let mut targets = Vec::with_capacity(c * c);
    for i in 0..c {
        let row = sim.row(i);
        let total: f64 = row.iter().sum();
        targets.extend(row.iter().map(|&s| s / total));
    }
    let schedule = TargetSchedule {
        targets,
        epsilon,
        step: 0,
        num_classes: c,
    };
    for i in 0..c {
        if strict_argmax(schedule.row(i)) != Some(i) {
            let j = (0..c)
                .filter(|&j| j != i)
                .max_by(|&a, &b| schedule.row(i)[a].total_cmp(&schedule.row(i)[b]))
                .unwrap_or(i);
            return Err(Error::DominanceViolation {
                row: i,
                col: j,
                value: schedule.row(i)[j],
                diagonal: schedule.row(i)[i],
            });
        }
    }
    Ok(schedule)
}

impl TargetSchedule {
    /// Builds a schedule from explicit rows. Only shape, finiteness and ε are
    /// checked here; the curriculum axioms are checked by
    /// [`verify_curriculum`].
    pub fn from_rows(rows: Vec<Vec<f64>>, epsilon: f64, step: u64) -> Result<Self> {
        check_epsilon(epsilon)?;
        let c = rows.len();
        if c == 0 {
            return Err(Error::InvalidArgument(
                "schedule needs at least one class".into(),
            ));
        }
        let mut targets = Vec::with_capacity(c * c);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != c {
                return Err(Error::DimensionMismatch {
                    expected: c,
                    found: row.len(),
                    context: format!("schedule row {i}"),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("schedule row {i}")));
            }
            targets.extend(row);
        }
        Ok(Self {
            targets,
            epsilon,
            step,
            num_classes: c,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Current step counter `t`.
    pub fn current_step(&self) -> u64 {
        self.step
    }

    pub fn row(&self, class_index: usize) -> &[f64] {
        let c = self.num_classes;
        &self.targets[class_index * c..(class_index + 1) * c]
    }

    /// One application of the cooling update to every row.
    pub fn step(&self) -> TargetSchedule {
        let c = self.num_classes;
        let eps = self.epsilon;
        let mut targets = Vec::with_capacity(c * c);
        for i in 0..c {
            let row = self.row(i);
            let denom = 1.0 + eps * off_diagonal_mass(row, i);
            targets.extend(row.iter().enumerate().map(|(j, &v)| {
                if j == i {
                    1.0 / denom
                } else {
                    eps * v / denom
                }
            }));
        }
        TargetSchedule {
            targets,
            epsilon: eps,
            step: self.step + 1,
            num_classes: c,
        }
    }

    /// Applies [`TargetSchedule::step`] until the counter reaches `t`.
    pub fn advance_to(&self, t: u64) -> Result<TargetSchedule> {
        if t < self.step {
            return Err(Error::StepBackwards {
                current: self.step,
                requested: t,
            });
        }
        let mut s = self.clone();
        while s.step < t {
            s = s.step();
        }
        Ok(s)
    }

    pub fn target_for(&self, class_index: usize) -> Result<TargetVector> {
        if class_index >= self.num_classes {
            return Err(Error::OutOfRange {
                index: class_index,
                len: self.num_classes,
            });
        }
        Ok(TargetVector {
            probs: self.row(class_index).to_vec(),
            true_class: class_index,
        })
    }

    /// Off-diagonal mass `S_i` of row `i`.
    pub fn off_diagonal_mass(&self, class_index: usize) -> f64 {
        off_diagonal_mass(self.row(class_index), class_index)
    }

    /// CSV dump: a `# epsilon=<e> step=<t>` comment line, then one row per
    /// class at 17 significant digits.
    pub fn to_csv_string(&self) -> String {
        let mut out = format!("# epsilon={} step={}\n", self.epsilon, self.step);
        for i in 0..self.num_classes {
            let line: Vec<String> = self.row(i).iter().map(|x| format!("{x:.16e}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty schedule file"))?;
        let header = header
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| Error::parse(1, "missing `# epsilon=<e> step=<t>` header"))?;
        let (mut epsilon, mut step) = (None, None);
        for kv in header.split_whitespace() {
            match kv.split_once('=') {
                Some(("epsilon", v)) => epsilon = v.parse::<f64>().ok(),
                Some(("step", v)) => step = v.parse::<u64>().ok(),
                _ => {}
            }
        }
        let epsilon = epsilon.ok_or_else(|| Error::parse(1, "header lacks a valid epsilon"))?;
        let step = step.ok_or_else(|| Error::parse(1, "header lacks a valid step"))?;
        let rows = lines
            .map(|(n, l)| {
                l.split(',')
                    .map(|f| {
                        f.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::parse(n + 1, format!("bad number `{f}`")))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(rows, epsilon, step)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axiom {
    /// Entropy must strictly decrease while off-diagonal mass remains.
    EntropyDecrease,
    /// Rows stay on the probability simplex.
    Simplex,
    /// The true class keeps the strict argmax.
    ArgmaxFixed,
    /// Off-diagonal entries stay below `ε^t` times their initial value.
    GeometricDecay,
}

impl fmt::Display for Axiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axiom::EntropyDecrease => "entropy-decrease",
            Axiom::Simplex => "simplex",
            Axiom::ArgmaxFixed => "argmax-fixed",
            Axiom::GeometricDecay => "geometric-decay",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub row: usize,
    /// Offset from the schedule's starting step.
    pub step: u64,
    pub axiom: Axiom,
    pub detail: String,
}

/// Per-step measurements of one row, indices `0..=horizon`.
#[derive(Debug, Clone, Default)]
pub struct RowTrace {
    pub simplex_residual: Vec<f64>,
    pub argmax: Vec<Option<usize>>,
    pub entropy: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CurriculumReport {
    pub horizon: u64,
    pub epsilon: f64,
    pub rows: Vec<RowTrace>,
    pub violations: Vec<Violation>,
    /// Steps where entropy did not strictly drop but stayed within
    /// [`ENTROPY_TOL`] while off-diagonal mass was still positive.
    pub entropy_ties: usize,
}

impl CurriculumReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for CurriculumReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "curriculum check: classes={} epsilon={} horizon={}",
            self.rows.len(),
            self.epsilon,
            self.horizon
        )?;
        let max_residual = self
            .rows
            .iter()
            .flat_map(|r| r.simplex_residual.iter().copied())
            .fold(0.0, f64::max);
        writeln!(f, "max simplex residual: {max_residual:e}")?;
        writeln!(f, "entropy ties within tolerance: {}", self.entropy_ties)?;
        for v in self.violations.iter().take(20) {
            writeln!(
                f,
                "VIOLATION row={} step={} axiom={}: {}",
                v.row, v.step, v.axiom, v.detail
            )?;
        }
        if self.violations.len() > 20 {
            writeln!(f, "... {} more violations", self.violations.len() - 20)?;
        }
        write!(f, "result: {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Iterates the schedule `horizon` times and checks every axiom on every
/// row at every step, including step 0.
pub fn verify_curriculum(schedule: &TargetSchedule, horizon: u64) -> CurriculumReport {
    let c = schedule.num_classes();
    let eps = schedule.epsilon();
    let initial = schedule.clone();
    let mut rows = vec![RowTrace::default(); c];
    let mut violations = Vec::new();
    let mut entropy_ties = 0;
    let mut current = schedule.clone();
    let mut prev_entropy = vec![0.0; c];
    let mut prev_mass = vec![0.0; c];

    for t in 0..=horizon {
        let decay = eps.powf(t as f64);
        for (i, trace) in rows.iter_mut().enumerate() {
            let row = current.row(i);
            let sum: f64 = row.iter().sum();
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            let residual = (sum - 1.0).abs();
            trace.simplex_residual.push(residual);
            if residual > SIMPLEX_TOL || min < 0.0 {
                violations.push(Violation {
                    row: i,
                    step: t,
                    axiom: Axiom::Simplex,
                    detail: format!("sum={sum:.17} min={min:e}"),
                });
            }

            let argmax = strict_argmax(row);
            trace.argmax.push(argmax);
            if argmax != Some(i) {
                violations.push(Violation {
                    row: i,
                    step: t,
                    axiom: Axiom::ArgmaxFixed,
                    detail: format!("argmax {argmax:?}, expected {i}"),
                });
            }

            for (j, (&v, &v0)) in row.iter().zip(initial.row(i)).enumerate() {
                if j != i && v > decay * v0 + SIMPLEX_TOL {
                    violations.push(Violation {
                        row: i,
                        step: t,
                        axiom: Axiom::GeometricDecay,
                        detail: format!("entry {j}: {v:e} > eps^t*{v0:e}"),
                    });
                }
            }

            let h = entropy(row);
            trace.entropy.push(h);
            if t > 0 && prev_mass[i] > SIMPLEX_TOL {
                if h >= prev_entropy[i] + ENTROPY_TOL {
                    violations.push(Violation {
                        row: i,
                        step: t,
                        axiom: Axiom::EntropyDecrease,
                        detail: format!("entropy {h:e} after {:e}", prev_entropy[i]),
                    });
                } else if h >= prev_entropy[i] {
                    entropy_ties += 1;
                }
            }
            prev_entropy[i] = h;
            prev_mass[i] = off_diagonal_mass(row, i);
        }
        if t < horizon {
            current = current.step();
        }
    }

    CurriculumReport {
        horizon,
        epsilon: eps,
        rows,
        violations,
        entropy_ties,
    }
}
