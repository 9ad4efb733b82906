//! Pre-trained embedding tables and the word adaptation layer `Z` that maps
//! target-domain vectors into the source embedding space.
//!
//! `Z` minimizes `Σᵢ cᵢ ‖xᵢ Z − yᵢ‖²` over pivot-lexicon entries, where `xᵢ`
//! is the target-space vector of `w_t` and `yᵢ` the source-space vector of
//! `w_s`. [`learn_projection`] does this by gradient descent;
//! [`solve_projection_closed_form`] solves the normal equations directly and
//! serves as the reference optimum.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::{info, warn};
use nalgebra::DMatrix;
use nerxfer_autograd::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::corpus_stats::PivotLexicon;
use crate::error::{Error, Result};

pub const PROJECTION_MAGIC: &[u8; 4] = b"SXZ1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    vectors: Vec<f64>,
}

impl EmbeddingMatrix {
    /// Build from `(word, vector)` rows. Duplicate words keep their first row.
    pub fn from_rows<I, S>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut m = Self {
            vocab: Vec::new(),
            index: HashMap::new(),
            dim: 0,
            vectors: Vec::new(),
        };
        for (word, v) in rows {
            let word = word.into();
            if m.vocab.is_empty() {
                if v.is_empty() {
                    return Err(Error::Dimension("embedding dimension is 0".into()));
                }
                m.dim = v.len();
            }
            if v.len() != m.dim {
                return Err(Error::Dimension(format!(
                    "`{word}` has {} entries, expected {}",
                    v.len(),
                    m.dim
                )));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidInput(format!("`{word}` has non-finite entries")));
            }
            m.push(word, &v);
        }
        if m.vocab.is_empty() {
            return Err(Error::InvalidInput("empty embedding table".into()));
        }
        Ok(m)
    }

    fn push(&mut self, word: String, v: &[f64]) -> bool {
        if self.index.contains_key(&word) {
            warn!("duplicate embedding for `{word}`; keeping the first");
            return false;
        }
        self.index.insert(word.clone(), self.vocab.len());
        self.vocab.push(word);
        self.vectors.extend_from_slice(v);
        true
    }

    /// Load the whitespace-separated text format `word v1 … vd`.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(file), path)
    }

    pub(crate) fn parse<R: BufRead>(reader: R, path: &Path) -> Result<Self> {
        let mut m = Self {
            vocab: Vec::new(),
            index: HashMap::new(),
            dim: 0,
            vectors: Vec::new(),
        };
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut cols = line.split_whitespace();
            let Some(word) = cols.next() else { continue };
            let v = cols
                .map(|c| c.parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::parse(path, i + 1, "bad number"))?;
            if m.vocab.is_empty() {
                if v.is_empty() {
                    return Err(Error::parse(path, i + 1, "embedding dimension is 0"));
                }
                m.dim = v.len();
            } else if v.len() != m.dim {
                return Err(Error::parse(path, i + 1, "dim mismatch"));
            }
            m.push(word.to_string(), &v);
        }
        if m.vocab.is_empty() {
            return Err(Error::InvalidInput(format!("{}: no embeddings", path.display())));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            for (i, word) in self.vocab.iter().enumerate() {
                write!(w, "{word}")?;
                for x in self.vector(i) {
                    write!(w, " {x}")?;
                }
                writeln!(w)?;
            }
            w.flush()
        };
        write(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Case-insensitive lookup: the query is lowercased before matching.
    pub fn lookup(&self, word: &str) -> Option<&[f64]> {
        let i = match self.index.get(word) {
            Some(&i) => i,
            None => *self.index.get(&word.to_lowercase())?,
        };
        Some(self.vector(i))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.lookup(word).is_some()
    }

    /// Lookup with out-of-vocabulary words mapped to the zero vector.
    pub fn vector_or_zero(&self, word: &str) -> Vec<f64> {
        self.lookup(word).map_or_else(|| vec![0.0; self.dim], <[f64]>::to_vec)
    }

    /// SHA-256 over the dimension, words and vector bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for (i, w) in self.vocab.iter().enumerate() {
            h.update((w.len() as u64).to_le_bytes());
            h.update(w.as_bytes());
            for x in self.vector(i) {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// The word adaptation layer: a `d_t × d_s` matrix applied as `v · Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    z: Tensor,
    frozen: bool,
}

impl ProjectionMatrix {
    pub fn new(z: Tensor) -> Result<Self> {
        if z.rank() != 2 || !z.is_finite() {
            return Err(Error::InvalidInput("projection must be a finite matrix".into()));
        }
        Ok(Self { z, frozen: false })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            z: Tensor::identity(d),
            frozen: false,
        }
    }

    pub fn target_dim(&self) -> usize {
        self.z.rows()
    }

    pub fn source_dim(&self) -> usize {
        self.z.cols()
    }

    pub fn matrix(&self) -> &Tensor {
        &self.z
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// `v · Z` for a single target-space vector.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let (dt, ds) = (self.target_dim(), self.source_dim());
        assert_eq!(v.len(), dt, "vector length must equal the target dimension");
        let mut out = vec![0.0; ds];
        for (i, &x) in v.iter().enumerate() {
            for (o, z) in out.iter_mut().zip(&self.z.data()[i * ds..(i + 1) * ds]) {
                *o += x * z;
            }
        }
        out
    }

    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(PROJECTION_MAGIC)?;
        w.write_all(&(self.target_dim() as u32).to_le_bytes())?;
        w.write_all(&(self.source_dim() as u32).to_le_bytes())?;
        for x in self.z.data() {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(format!("projection: {m}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != PROJECTION_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|_| bad("truncated header"))?;
        let dt = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4).map_err(|_| bad("truncated header"))?;
        let ds = u32::from_le_bytes(b4) as usize;
        let mut data = Vec::with_capacity(dt * ds);
        let mut b8 = [0u8; 8];
        for _ in 0..dt * ds {
            r.read_exact(&mut b8).map_err(|_| bad("truncated payload"))?;
            data.push(f64::from_le_bytes(b8));
        }
        Self::new(Tensor::matrix(dt, ds, data).map_err(|e| bad(&e.to_string()))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(&mut BufReader::new(file))
    }

    fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.target_dim(), self.source_dim(), self.z.data())
    }

    fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .collect();
        Self {
            z: Tensor::matrix(m.nrows(), m.ncols(), data).expect("non-empty matrix"),
            frozen: false,
        }
    }
}

/// Project a target-domain word into the source space. Unknown words map to
/// the zero vector.
pub fn project_word(word: &str, v_t: &EmbeddingMatrix, z: &ProjectionMatrix) -> Vec<f64> {
    match v_t.lookup(word) {
        Some(v) => z.apply(v),
        None => vec![0.0; z.source_dim()],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionTrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Entries per gradient step; 0 means full batch.
    pub batch_size: usize,
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for ProjectionTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_epochs: 1000,
            batch_size: 0,
            rel_tol: 1e-8,
            seed: 0,
        }
    }
}

/// Stacked lexicon rows: `x` (target vectors), `y` (source vectors), weights.
#[derive(Debug, Clone)]
pub struct ProjectionProblem {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub weights: Vec<f64>,
    pub skipped: usize,
}

impl ProjectionProblem {
    pub fn new(v_s: &EmbeddingMatrix, v_t: &EmbeddingMatrix, lex: &PivotLexicon) -> Result<Self> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut weights = Vec::new();
        let mut skipped = 0;
        for e in &lex.entries {
            match (v_t.lookup(&e.target), v_s.lookup(&e.source)) {
                (Some(x), Some(y)) => {
                    xs.extend_from_slice(x);
                    ys.extend_from_slice(y);
                    weights.push(e.confidence);
                }
                _ => skipped += 1,
            }
        }
        let n = weights.len();
        if n == 0 {
            return Err(Error::NoUsableEntries { skipped });
        }
        if n < v_t.dim() {
            warn!("only {n} usable lexicon entries for target dimension {}", v_t.dim());
        }
        Ok(Self {
            x: DMatrix::from_row_slice(n, v_t.dim(), &xs),
            y: DMatrix::from_row_slice(n, v_s.dim(), &ys),
            weights,
            skipped,
        })
    }

    pub fn usable(&self) -> usize {
        self.weights.len()
    }

    fn residual(&self, z: &DMatrix<f64>, rows: Option<&[usize]>) -> (f64, DMatrix<f64>) {
        let mut grad = DMatrix::zeros(z.nrows(), z.ncols());
        let mut loss = 0.0;
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..self.usable()).collect();
                &all
            }
        };
        for &i in rows {
            let x = self.x.row(i);
            let r = x * z - self.y.row(i);
            let c = self.weights[i];
            loss += c * r.norm_squared();
            grad += (2.0 * c) * x.transpose() * r;
        }
        (loss, grad)
    }

    pub fn loss(&self, z: &ProjectionMatrix) -> f64 {
        self.residual(&z.to_dmatrix(), None).0
    }

    /// Gradient of the weighted loss with respect to `Z`, row-major.
    pub fn gradient(&self, z: &ProjectionMatrix) -> Tensor {
        let g = self.residual(&z.to_dmatrix(), None).1;
        ProjectionMatrix::from_dmatrix(&g).z
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionFit {
    pub projection: ProjectionMatrix,
    /// Full-data loss after each accepted epoch (index 0 is the initial loss).
    pub loss_history: Vec<f64>,
    pub usable: usize,
    pub skipped: usize,
    pub final_learning_rate: f64,
    pub lr_halvings: usize,
}

impl ProjectionFit {
    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("history starts with the initial loss")
    }
}

/// Learn `Z` by (stochastic) gradient descent from a zero initialization.
/// An epoch that increases the full-data loss is undone and retried with half
/// the learning rate.
pub fn learn_projection(
    v_s: &EmbeddingMatrix,
    v_t: &EmbeddingMatrix,
    lex: &PivotLexicon,
    cfg: &ProjectionTrainConfig,
) -> Result<ProjectionFit> {
    if !(cfg.learning_rate > 0.0) || !(cfg.rel_tol > 0.0) {
        return Err(Error::InvalidInput("learning_rate and rel_tol must be positive".into()));
    }
    let problem = ProjectionProblem::new(v_s, v_t, lex)?;
    let n = problem.usable();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut z = DMatrix::<f64>::zeros(v_t.dim(), v_s.dim());
    let mut lr = cfg.learning_rate;
    let mut halvings = 0;
    let mut loss = problem.residual(&z, None).0;
    let mut history = vec![loss];
    let batch = if cfg.batch_size == 0 { n } else { cfg.batch_size.min(n) };
    let mut order: Vec<usize> = (0..n).collect();

    let mut epoch = 0;
    while epoch < cfg.max_epochs && loss > 0.0 {
        let mut candidate = z.clone();
        if batch < n {
            order.shuffle(&mut rng);
        }
        for rows in order.chunks(batch) {
            let (_, g) = problem.residual(&candidate, Some(rows));
            candidate -= lr * g;
        }
        let new_loss = problem.residual(&candidate, None).0;
        if !new_loss.is_finite() || new_loss > loss {
            lr *= 0.5;
            halvings += 1;
            if halvings > 200 {
                warn!("learning rate underflow; stopping after {epoch} epochs");
                break;
            }
            continue;
        }
        let rel_change = (loss - new_loss) / loss;
        z = candidate;
        loss = new_loss;
        history.push(loss);
        epoch += 1;
        if rel_change < cfg.rel_tol {
            break;
        }
    }
    info!(
        "projection: {n} usable entries, {} skipped, loss {:.6e} after {epoch} epochs",
        problem.skipped, loss
    );
    Ok(ProjectionFit {
        projection: ProjectionMatrix::from_dmatrix(&z),
        loss_history: history,
        usable: n,
        skipped: problem.skipped,
        final_learning_rate: lr,
        lr_halvings: halvings,
    })
}

#[derive(Debug, Clone)]
pub struct ClosedFormFit {
    pub projection: ProjectionMatrix,
    pub loss: f64,
    /// Diagonal ridge added when the weighted Gram matrix was singular.
    pub ridge: Option<f64>,
    pub usable: usize,
    pub skipped: usize,
}

pub const CLOSED_FORM_RIDGE: f64 = 1e-8;

/// Weighted least-squares optimum `Z* = (XᵀCX)⁻¹ XᵀCY`.
pub fn solve_projection_closed_form(
    v_s: &EmbeddingMatrix,
    v_t: &EmbeddingMatrix,
    lex: &PivotLexicon,
) -> Result<ClosedFormFit> {
    let problem = ProjectionProblem::new(v_s, v_t, lex)?;
    let c = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(problem.weights.clone()));
    let xtc = problem.x.transpose() * &c;
    let gram = &xtc * &problem.x;
    let rhs = &xtc * &problem.y;
    let (z, ridge) = match gram.clone().cholesky() {
        Some(ch) => (ch.solve(&rhs), None),
        None => {
            warn!("singular weighted Gram matrix; adding ridge {CLOSED_FORM_RIDGE}");
            let d = gram.nrows();
            let reg = gram + DMatrix::identity(d, d) * CLOSED_FORM_RIDGE;
            let z = reg
                .clone()
                .cholesky()
                .map(|ch| ch.solve(&rhs))
                .or_else(|| reg.lu().solve(&rhs))
                .ok_or_else(|| Error::InvalidInput("projection normal equations are singular".into()))?;
            (z, Some(CLOSED_FORM_RIDGE))
        }
    };
    let projection = ProjectionMatrix::from_dmatrix(&z);
    Ok(ClosedFormFit {
        loss: problem.loss(&projection),
        projection,
        ridge,
        usable: problem.usable(),
        skipped: problem.skipped,
    })
}
