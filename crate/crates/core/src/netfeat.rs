//! Network features from regional measurements: similarity `c_kl = |y_k − y_l|`
//! scaled to `[0, 1]`, thresholded adjacency, and average path length (APL)
//! over a threshold sweep. The resulting APL curves can be used as functional
//! responses.
//!
//! Edges require `c_kl > t` strictly. APL averages breadth-first distances
//! over connected pairs only and reports how many there were; a graph with no
//! connected pair has APL 0.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::FunctionalDataset;
use crate::locallinear::lle_curve;
use crate::scalar::Scalar;

/// Symmetric, nonnegative, zero-diagonal matrix with entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix<T: Scalar> {
    values: DMatrix<T>,
}

impl<T: Scalar> SimilarityMatrix<T> {
    pub fn new(values: DMatrix<T>) -> Result<Self> {
        let m = values.nrows();
        if !values.is_square() || m < 2 {
            return Err(Error::Dimension(format!("similarity matrix must be square with m ≥ 2, got {:?}", values.shape())));
        }
        for k in 0..m {
            if values[(k, k)] != T::zero() {
                return Err(Error::Invalid(format!("nonzero diagonal at {k}")));
            }
            for l in 0..m {
                let v = values[(k, l)];
                if !v.is_finite() || v < T::zero() || v > T::one() || v != values[(l, k)] {
                    return Err(Error::Invalid(format!("entry ({k}, {l}) = {:e} breaks symmetry or [0, 1] range", v)));
                }
            }
        }
        Ok(SimilarityMatrix { values })
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }
    pub fn m(&self) -> usize {
        self.values.nrows()
    }
}

/// `|y_k − y_l|` divided by its maximum (left at zero if every entry is zero).
pub fn similarity_from_measurements<T: Scalar>(y: &[T]) -> Result<SimilarityMatrix<T>> {
    if y.len() < 2 {
        return Err(Error::Argument(format!("need at least 2 measurements, got {}", y.len())));
    }
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("non-finite measurement {:e}", v)));
    }
    let m = y.len();
    let raw = DMatrix::from_fn(m, m, |k, l| (y[k] - y[l]).abs());
    let max = raw.iter().fold(T::zero(), |a, &b| a.max(b));
    let values = if max > T::zero() { raw / max } else { raw };
    // Division can leave a hair of asymmetry only if inputs differ; rebuild symmetric.
    let values = DMatrix::from_fn(m, m, |k, l| if k <= l { values[(k, l)] } else { values[(l, k)] });
    SimilarityMatrix::new(values)
}

/// Undirected graph as a dense boolean matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    m: usize,
    edges: Vec<bool>,
}

impl Adjacency {
    pub fn empty(m: usize) -> Self {
        Adjacency { m, edges: vec![false; m * m] }
    }

    pub fn from_edges(m: usize, list: &[(usize, usize)]) -> Result<Self> {
        let mut a = Self::empty(m);
        for &(k, l) in list {
            if k >= m || l >= m || k == l {
                return Err(Error::Argument(format!("invalid edge ({k}, {l}) for {m} nodes")));
            }
            a.set(k, l);
        }
        Ok(a)
    }

    fn set(&mut self, k: usize, l: usize) {
        self.edges[k * self.m + l] = true;
        self.edges[l * self.m + k] = true;
    }

    pub fn m(&self) -> usize {
        self.m
    }
    pub fn has_edge(&self, k: usize, l: usize) -> bool {
        self.edges[k * self.m + l]
    }
    pub fn edge_count(&self) -> usize {
        self.edges.iter().filter(|&&e| e).count() / 2
    }
    fn neighbors(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.m).filter(move |&l| self.edges[k * self.m + l])
    }

    /// Same graph with nodes relabeled: node `k` becomes `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Adjacency {
        let mut out = Self::empty(self.m);
        for k in 0..self.m {
            for l in 0..self.m {
                if self.has_edge(k, l) {
                    out.set(perm[k], perm[l]);
                }
            }
        }
        out
    }
}

/// Edge `(k, l)` for every `c_kl > t`.
pub fn threshold_adjacency<T: Scalar>(sim: &SimilarityMatrix<T>, t: T) -> Result<Adjacency> {
    if !(t > T::zero() && t < T::one()) {
        return Err(Error::Argument(format!("threshold {:e} must lie in (0, 1)", t)));
    }
    let m = sim.m();
    let mut a = Adjacency::empty(m);
    for k in 0..m {
        for l in (k + 1)..m {
            if sim.values[(k, l)] > t {
                a.set(k, l);
            }
        }
    }
    Ok(a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStats {
    pub apl: f64,
    pub connected_pairs: usize,
}

/// Mean shortest-path length over connected unordered pairs.
pub fn path_stats(adj: &Adjacency) -> PathStats {
    let m = adj.m();
    let mut total = 0usize;
    let mut pairs = 0usize;
    let mut dist = vec![usize::MAX; m];
    let mut queue = VecDeque::new();
    for src in 0..m {
        dist.iter_mut().for_each(|d| *d = usize::MAX);
        dist[src] = 0;
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            for v in adj.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        for &d in dist.iter().skip(src + 1) {
            if d != usize::MAX {
                total += d;
                pairs += 1;
            }
        }
    }
    let apl = if pairs == 0 { 0.0 } else { total as f64 / pairs as f64 };
    PathStats { apl, connected_pairs: pairs }
}

pub fn average_path_length(adj: &Adjacency) -> f64 {
    path_stats(adj).apl
}

/// APL per threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct AplCurve {
    pub thresholds: Vec<f64>,
    pub apl: Vec<f64>,
    pub connected_pairs: Vec<usize>,
}

/// `0.01, 0.02, …, 0.99`.
pub fn default_thresholds() -> Vec<f64> {
    (1..=99).map(|k| k as f64 / 100.0).collect()
}

pub fn apl_curve<T: Scalar>(sim: &SimilarityMatrix<T>, thresholds: &[T]) -> Result<AplCurve> {
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument("thresholds must be strictly increasing".into()));
    }
    let stats = thresholds.par_iter().map(|&t| threshold_adjacency(sim, t).map(|a| path_stats(&a))).collect::<Result<Vec<_>>>()?;
    Ok(AplCurve {
        thresholds: thresholds.iter().map(|t| t.as_f64()).collect(),
        apl: stats.iter().map(|s| s.apl).collect(),
        connected_pairs: stats.iter().map(|s| s.connected_pairs).collect(),
    })
}

/// Local-linear smoothing of an APL curve over thresholds (an intercept-only
/// fit of the same estimator used for coefficients).
pub fn presmooth(curve: &AplCurve, h: f64) -> Result<Vec<f64>> {
    let grid = Grid::new(curve.thresholds.clone())?;
    let r = grid.len();
    let y = DMatrix::from_fn(2, r, |_, j| curve.apl[j]);
    let data = FunctionalDataset::new(grid, y, DMatrix::from_element(2, 1, 1.0))?;
    Ok(lle_curve(&data, h)?.beta.column(0).iter().copied().collect())
}

/// Reads `id,roi_1,…,roi_m` rows.
pub fn load_measurements(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<f64>)>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(File::open(path)?);
    let header = rdr.headers().map_err(|e| Error::parse(&name, 1, e.to_string()))?.clone();
    if header.len() < 3 || header.get(0) != Some("id") {
        return Err(Error::parse(&name, 1, "header must be id followed by at least two ROI columns"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(&name, e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let vals = rec
            .iter()
            .skip(1)
            .map(|c| match c.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::parse(&name, line, format!("bad measurement {c:?}"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push((rec[0].to_string(), vals));
    }
    if out.is_empty() {
        return Err(Error::parse(&name, 2, "no subjects"));
    }
    Ok(out)
}

/// Long format `id,t,apl,connected_pairs`.
pub fn write_curves(curves: &[(String, AplCurve)], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "id,t,apl,connected_pairs")?;
    for (id, c) in curves {
        for k in 0..c.thresholds.len() {
            writeln!(w, "{id},{},{:.16e},{}", c.thresholds[k], c.apl[k], c.connected_pairs[k])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Wide format `id,<t_1>,…,<t_K>` that loads as a response file.
pub fn write_pivot(curves: &[(String, AplCurve)], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let Some((_, first)) = curves.first() else {
        return Err(Error::Invalid("no curves to write".into()));
    };
    let head: Vec<String> = first.thresholds.iter().map(|t| t.to_string()).collect();
    writeln!(w, "id,{}", head.join(","))?;
    for (id, c) in curves {
        if c.thresholds != first.thresholds {
            return Err(Error::Invalid(format!("curve {id} uses different thresholds")));
        }
        let row: Vec<String> = c.apl.iter().map(|v| format!("{:.16e}", v)).collect();
        writeln!(w, "{id},{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
