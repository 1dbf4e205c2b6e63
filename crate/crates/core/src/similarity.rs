//! Class-similarity matrices.
//!
//! A [`SimilarityMatrix`] is a C×C symmetric matrix with unit diagonal whose
//! off-diagonal entries lie in `[0, 1)` and are strictly below the diagonal.
//! It can be built from class embedding vectors or attribute vectors
//! ([`build_cosine_similarity`]), from a label hierarchy ([`simrank`]), or
//! read from a CSV dump.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Off-diagonal cosines within this distance of 1 are treated as duplicate
/// directions.
pub const DOMINANCE_TOL: f64 = 1e-12;

/// Ordered class vectors (`f_enc(c)` for every class label).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    class_names: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(class_names: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if class_names.len() != vectors.len() {
            return Err(Error::DimensionMismatch {
                expected: class_names.len(),
                found: vectors.len(),
                context: "class names vs vectors".into(),
            });
        }
        if vectors.is_empty() {
            return Err(Error::InvalidArgument(
                "embedding table has no classes".into(),
            ));
        }
        let dim = vectors[0].len();
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be >= 1".into(),
            ));
        }
        let mut seen = HashSet::new();
        for (name, v) in class_names.iter().zip(&vectors) {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateClass(name.clone()));
            }
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                    context: format!("vector of class `{name}`"),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("vector of class `{name}`")));
            }
            if v.iter().all(|&x| x == 0.0) {
                return Err(Error::ZeroVector(name.clone()));
            }
        }
        Ok(Self {
            class_names,
            vectors,
        })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    /// Writes the table in the whitespace-separated embedding file format.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for (name, v) in self.class_names.iter().zip(&self.vectors) {
            out.push_str(name);
            for x in v {
                out.push(' ');
                out.push_str(&format!("{x:.16e}"));
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Parses `<class_name> <f_1> ... <f_d>` lines. `#` lines and blank lines are
/// skipped; file order defines the class index.
pub fn parse_embeddings(text: &str, expected_dim: Option<usize>) -> Result<EmbeddingTable> {
    let mut names = Vec::new();
    let mut vectors: Vec<Vec<f64>> = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let name = tokens.next().expect("non-empty line has a token");
        let vector = tokens
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::parse(lineno + 1, format!("bad number `{tok}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vector.is_empty() {
            return Err(Error::parse(
                lineno + 1,
                format!("class `{name}` has no components"),
            ));
        }
        if let Some(d) = expected_dim {
            if vector.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: vector.len(),
                    context: format!("line {}", lineno + 1),
                });
            }
        }
        if let Some(first) = vectors.first() {
            if first.len() != vector.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    found: vector.len(),
                    context: format!("line {}", lineno + 1),
                });
            }
        }
        if !seen.insert(name.to_string()) {
            return Err(Error::DuplicateClass(name.to_string()));
        }
        names.push(name.to_string());
        vectors.push(vector);
    }
    if names.is_empty() {
        return Err(Error::parse(0, "no class vectors found"));
    }
    EmbeddingTable::new(names, vectors)
}

pub fn load_embeddings(
    path: impl AsRef<Path>,
    expected_dim: Option<usize>,
) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, expected_dim)
}

/// Cosine of the angle between `u` and `v`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
            context: "cosine operands".into(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    // Products commute, so cosine(u, v) == cosine(v, u) bit for bit.
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimilaritySource {
    EmbeddingCosine,
    AttributeCosine,
    Simrank,
    External,
}

impl fmt::Display for SimilaritySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimilaritySource::EmbeddingCosine => "embedding-cosine",
            SimilaritySource::AttributeCosine => "attribute-cosine",
            SimilaritySource::Simrank => "simrank",
            SimilaritySource::External => "external",
        })
    }
}

/// Symmetric class-similarity matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    class_names: Vec<String>,
    entries: Vec<f64>,
    source: SimilaritySource,
}

impl SimilarityMatrix {
    /// Builds a matrix and checks every invariant: exact symmetry, entries in
    /// `[0, 1]`, unit diagonal, strict diagonal dominance per row.
    pub fn new(
        class_names: Vec<String>,
        entries: Vec<f64>,
        source: SimilaritySource,
    ) -> Result<Self> {
        let m = Self::for_analysis(class_names, entries, source)?;
        m.validate()?;
        Ok(m)
    }

    /// Builds a matrix checking only shape, finiteness and symmetry. Use this
    /// for spectral analysis of inputs that need not satisfy the curriculum
    /// invariants; [`SimilarityMatrix::validate`] runs the full check.
    pub fn for_analysis(
        class_names: Vec<String>,
        entries: Vec<f64>,
        source: SimilaritySource,
    ) -> Result<Self> {
        let n = class_names.len();
        if n == 0 {
            return Err(Error::InvalidMatrix("empty matrix".into()));
        }
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: entries.len(),
                context: "similarity entries".into(),
            });
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("similarity entries".into()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if entries[i * n + j] != entries[j * n + i] {
                    return Err(Error::InvalidMatrix(format!("not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            class_names,
            entries,
            source,
        })
    }

    pub fn identity(class_names: Vec<String>) -> Self {
        let n = class_names.len();
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        Self {
            class_names,
            entries,
            source: SimilaritySource::External,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for i in 0..n {
            let diag = self.get(i, i);
            if diag != 1.0 {
                return Err(Error::InvalidMatrix(format!(
                    "diagonal entry {i} is {diag}, expected 1"
                )));
            }
            for j in 0..n {
                let v = self.get(i, j);
                if i != j && v >= diag {
                    return Err(Error::DominanceViolation {
                        row: i,
                        col: j,
                        value: v,
                        diagonal: diag,
                    });
                }
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidMatrix(format!(
                        "entry ({i}, {j}) = {v} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_names.is_empty()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn source(&self) -> SimilaritySource {
        self.source
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.entries[i * n..(i + 1) * n]
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Eigenvalues sorted in descending order.
    pub fn eigenspectrum(&self) -> Result<Vec<f64>> {
        symmetric_eigenvalues(self.len(), &self.entries)
    }

    /// `1 - s(c_i, c_j)` entrywise; zero on the diagonal.
    pub fn dissimilarity(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        (0..n)
            .map(|i| (0..n).map(|j| 1.0 - self.get(i, j)).collect())
            .collect()
    }

    /// CSV with a header of class names followed by C data rows at 17
    /// significant digits.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(file);
        w.write_record(&self.class_names)?;
        for i in 0..self.len() {
            w.write_record(self.row(i).iter().map(|x| format!("{x:.16e}")))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Reads a similarity CSV into class names and row-major entries without
/// validating the matrix invariants.
pub fn read_similarity_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<f64>)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let names: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let n = names.len();
    let mut entries = Vec::with_capacity(n * n);
    let mut rows = 0;
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != n {
            return Err(Error::parse(
                idx + 2,
                format!("expected {n} fields, found {}", record.len()),
            ));
        }
        for field in record.iter() {
            let v = field
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(idx + 2, format!("bad number `{field}`")))?;
            entries.push(v);
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: rows,
            context: "similarity CSV rows".into(),
        });
    }
    Ok((names, entries))
}

/// Reads and fully validates a similarity CSV.
pub fn load_similarity_csv(path: impl AsRef<Path>) -> Result<SimilarityMatrix> {
    let (names, entries) = read_similarity_csv(path)?;
    SimilarityMatrix::new(names, entries, SimilaritySource::External)
}

#[derive(Debug, Clone)]
pub struct CosineBuild {
    pub matrix: SimilarityMatrix,
    /// Number of off-diagonal entries (counted per ordered pair) raised to 0.
    pub clamped: usize,
}

/// Pairwise cosine similarity between table rows.
pub fn build_cosine_similarity(
    table: &EmbeddingTable,
    clamp_negative: bool,
) -> Result<CosineBuild> {
    build_cosine_with_source(table, clamp_negative, SimilaritySource::EmbeddingCosine)
}

/// Same as [`build_cosine_similarity`] but tags the result with `source`
/// (e.g. attribute vectors).
pub fn build_cosine_with_source(
    table: &EmbeddingTable,
    clamp_negative: bool,
    source: SimilaritySource,
) -> Result<CosineBuild> {
    let n = table.len();
    let unit: Vec<Vec<f64>> = table
        .vectors()
        .iter()
        .map(|v| {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm).collect()
        })
        .collect();
    let mut entries = vec![0.0; n * n];
    let mut clamped = 0;
    for i in 0..n {
        entries[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let mut c: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
            c = c.min(1.0);
            if c >= 1.0 - DOMINANCE_TOL {
                return Err(Error::DominanceViolation {
                    row: i,
                    col: j,
                    value: c,
                    diagonal: 1.0,
                });
            }
            if c < 0.0 {
                if !clamp_negative {
                    return Err(Error::NegativeSimilarity {
                        row: i,
                        col: j,
                        value: c,
                    });
                }
                c = 0.0;
                clamped += 2;
            }
            entries[i * n + j] = c;
            entries[j * n + i] = c;
        }
    }
    let matrix = SimilarityMatrix::new(table.class_names().to_vec(), entries, source)?;
    Ok(CosineBuild { matrix, clamped })
}

/// A label hierarchy: parent→child edges over internal taxa and leaf classes.
#[derive(Debug, Clone)]
pub struct HierarchyGraph {
    nodes: Vec<String>,
    parents: Vec<Vec<usize>>,
    leaves: Vec<usize>,
}

impl HierarchyGraph {
    pub fn new<S: AsRef<str>>(edges: &[(S, S)], leaves: &[S]) -> Result<Self> {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut nodes: Vec<String> = Vec::new();
        let mut intern = |name: &str, nodes: &mut Vec<String>| -> usize {
            *index.entry(name.to_string()).or_insert_with(|| {
                nodes.push(name.to_string());
                nodes.len() - 1
            })
        };
        let mut edge_ids = Vec::with_capacity(edges.len());
        for (p, c) in edges {
            let (p, c) = (p.as_ref(), c.as_ref());
            if p == c {
                return Err(Error::InvalidHierarchy(format!("self-loop on `{p}`")));
            }
            let pi = intern(p, &mut nodes);
            let ci = intern(c, &mut nodes);
            edge_ids.push((pi, ci));
        }
        let n = nodes.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for &(p, c) in &edge_ids {
            if !parents[c].contains(&p) {
                parents[c].push(p);
                children[p].push(c);
            }
        }

        let mut leaf_ids = Vec::with_capacity(leaves.len());
        let mut seen = HashSet::new();
        for leaf in leaves {
            let leaf = leaf.as_ref();
            if !seen.insert(leaf) {
                return Err(Error::DuplicateClass(leaf.to_string()));
            }
            let &id = index.get(leaf).ok_or_else(|| {
                Error::InvalidHierarchy(format!("leaf `{leaf}` appears in no edge"))
            })?;
            if parents[id].is_empty() {
                return Err(Error::InvalidHierarchy(format!(
                    "leaf `{leaf}` has no parent"
                )));
            }
            if !children[id].is_empty() {
                return Err(Error::InvalidHierarchy(format!(
                    "leaf `{leaf}` has children"
                )));
            }
            leaf_ids.push(id);
        }
        for (id, name) in nodes.iter().enumerate() {
            if children[id].is_empty() && !seen.contains(name.as_str()) {
                return Err(Error::InvalidHierarchy(format!(
                    "childless node `{name}` is missing from the leaf list"
                )));
            }
        }

        // Kahn's algorithm: every node is reached from a root iff there is no cycle.
        let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut queue: Vec<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut visited = 0;
        while let Some(v) = queue.pop() {
            visited += 1;
            for &c in &children[v] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push(c);
                }
            }
        }
        if visited != n {
            return Err(Error::InvalidHierarchy("edges contain a cycle".into()));
        }

        Ok(Self {
            nodes,
            parents,
            leaves: leaf_ids,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_names(&self) -> Vec<String> {
        self.leaves.iter().map(|&i| self.nodes[i].clone()).collect()
    }
}

/// Parses `<parent> <child>` edge lines plus a `@leaves c1 c2 ...` directive.
pub fn parse_hierarchy(text: &str) -> Result<HierarchyGraph> {
    let mut edges = Vec::new();
    let mut leaves: Option<Vec<String>> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens[0] == "@leaves" {
            if leaves.is_some() {
                return Err(Error::parse(lineno + 1, "duplicate @leaves directive"));
            }
            leaves = Some(tokens[1..].iter().map(|s| s.to_string()).collect());
            continue;
        }
        if leaves.is_some() {
            return Err(Error::parse(
                lineno + 1,
                "edge after the trailing @leaves directive",
            ));
        }
        if tokens.len() != 2 {
            return Err(Error::parse(lineno + 1, "expected `<parent> <child>`"));
        }
        edges.push((tokens[0].to_string(), tokens[1].to_string()));
    }
    let leaves = leaves.ok_or_else(|| Error::parse(0, "missing @leaves directive"))?;
    if leaves.is_empty() {
        return Err(Error::parse(0, "@leaves directive lists no classes"));
    }
    HierarchyGraph::new(&edges, &leaves)
}

pub fn load_hierarchy(path: impl AsRef<Path>) -> Result<HierarchyGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_hierarchy(&text)
}

#[derive(Debug, Clone, Copy)]
pub struct SimrankParams {
    pub decay: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SimrankParams {
    fn default() -> Self {
        Self {
            decay: 0.8,
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

/// Parent-side simrank over the hierarchy, restricted to the leaf classes.
pub fn simrank(graph: &HierarchyGraph, params: SimrankParams) -> Result<SimilarityMatrix> {
    let SimrankParams {
        decay,
        tol,
        max_iter,
    } = params;
    if !(decay > 0.0 && decay < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "simrank decay {decay} not in (0, 1)"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "simrank tolerance {tol} must be positive"
        )));
    }
    let n = graph.num_nodes();
    let parents = &graph.parents;
    let mut s = vec![0.0; n * n];
    for a in 0..n {
        s[a * n + a] = 1.0;
    }
    let mut partial = vec![0.0; n * n];
    let mut next = vec![0.0; n * n];
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for _ in 0..max_iter {
        // partial[a][q] = sum over p in I(a) of s[p][q]
        for a in 0..n {
            let row = &mut partial[a * n..(a + 1) * n];
            row.fill(0.0);
            for &p in &parents[a] {
                for (dst, src) in row.iter_mut().zip(&s[p * n..(p + 1) * n]) {
                    *dst += src;
                }
            }
        }
        residual = 0.0;
        for a in 0..n {
            next[a * n + a] = 1.0;
            for b in (a + 1)..n {
                let v = if parents[a].is_empty() || parents[b].is_empty() {
                    0.0
                } else {
                    let sum: f64 = parents[b].iter().map(|&q| partial[a * n + q]).sum();
                    decay * sum / (parents[a].len() * parents[b].len()) as f64
                };
                residual = f64::max(residual, (v - s[a * n + b]).abs());
                next[a * n + b] = v;
                next[b * n + a] = v;
            }
        }
        std::mem::swap(&mut s, &mut next);
        if residual < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: max_iter,
            residual,
        });
    }
    let c = graph.leaves.len();
    let mut entries = vec![0.0; c * c];
    for (i, &a) in graph.leaves.iter().enumerate() {
        for (j, &b) in graph.leaves.iter().enumerate() {
            entries[i * c + j] = if i == j { 1.0 } else { s[a * n + b] };
        }
    }
    SimilarityMatrix::new(graph.leaf_names(), entries, SimilaritySource::Simrank)
}

/// Eigenvalues of a symmetric row-major `n×n` matrix, sorted descending.
pub fn symmetric_eigenvalues(n: usize, entries: &[f64]) -> Result<Vec<f64>> {
    if entries.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            found: entries.len(),
            context: "eigenvalue input".into(),
        });
    }
    let m = DMatrix::from_row_slice(n, n, entries);
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 1000 * n.max(1))
        .ok_or_else(|| Error::Eigen(format!("no convergence for {n}x{n} matrix")))?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// `exp` of the Shannon entropy of the normalized absolute spectrum.
pub fn effective_rank(eigenvalues: &[f64]) -> f64 {
    let total: f64 = eigenvalues.iter().map(|x| x.abs()).sum();
    if total == 0.0 {
        return 0.0;
    }
    let h: f64 = eigenvalues
        .iter()
        .map(|x| x.abs() / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    h.exp()
}

/// Writes `index,eigenvalue` rows for external plotting.
pub fn write_spectrum_csv(path: impl AsRef<Path>, eigenvalues: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = String::from("index,eigenvalue\n");
    for (i, v) in eigenvalues.iter().enumerate() {
        out.push_str(&format!("{i},{v:.16e}\n"));
    }
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
