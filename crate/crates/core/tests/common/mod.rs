//! Independent reference computations shared by the oracle and acceptance
//! suites. Nothing here calls into the estimator internals: every quantity
//! is rebuilt from raw loops over subjects and grid points.
#![allow(dead_code)]

pub mod suites;

use llgmm::{kernel_scaled, EigenSystem, FunctionalDataset, Grid, InstrumentSet, MomentWeighting};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha20Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Noisy data with an intercept and `p − 1` random covariates on the midpoint grid.
pub fn random_dataset(n: usize, r: usize, p: usize, seed: u64) -> FunctionalDataset<f64> {
    let mut g = rng(seed);
    let grid = Grid::<f64>::uniform(r).unwrap();
    let x = DMatrix::from_fn(n, p, |_, m| if m == 0 { 1.0 } else { 1.0 + normal(&mut g) });
    let y = DMatrix::from_fn(n, r, |i, j| {
        let s: f64 = grid.points()[j];
        let mut v = 0.0;
        for m in 0..p {
            v += x[(i, m)] * ((m as f64 + 1.0) * 3.0 * s).sin();
        }
        v
    });
    let y = y.map(|v| v + 0.4 * normal(&mut g));
    FunctionalDataset::new(grid, y, x).unwrap()
}

/// Solve `a·x = b` by SVD, independent of the Cholesky path under test.
pub fn svd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    a.clone().svd(true, true).solve(b, 1e-300).unwrap()
}

/// Weighted least squares at `s0` over `rows`, from the stacked design
/// `W_ij = (1, u_j) ⊗ X_i` with weights `K_h(s_j − s0)`.
pub fn dense_lle(data: &FunctionalDataset<f64>, rows: &[usize], s0: f64, h: f64) -> DVector<f64> {
    let p = data.p();
    let pts = data.grid().points();
    let mut design = Vec::new();
    let mut target = Vec::new();
    for &i in rows {
        for (j, &s) in pts.iter().enumerate() {
            let k = kernel_scaled(s - s0, h).unwrap();
            if k <= 0.0 {
                continue;
            }
            let u = (s - s0) / h;
            let sk = k.sqrt();
            let mut row = vec![0.0; 2 * p];
            for m in 0..p {
                row[m] = sk * data.covariates()[(i, m)];
                row[p + m] = sk * u * data.covariates()[(i, m)];
            }
            design.push(row);
            target.push(sk * data.responses()[(i, j)]);
        }
    }
    let a = DMatrix::from_fn(design.len(), 2 * p, |r, c| design[r][c]);
    let b = DVector::from_vec(target);
    a.svd(true, true).solve(&b, 1e-300).unwrap()
}

/// Cross-validation score computed fold by fold with [`dense_lle`].
pub fn cv_oracle(data: &FunctionalDataset<f64>, fold: &[usize], folds: usize, h: f64) -> f64 {
    let (n, r, p) = (data.n(), data.r(), data.p());
    let mut sse = 0.0;
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
        for j in 0..r {
            let g = dense_lle(data, &train, data.grid().points()[j], h);
            for i in (0..n).filter(|&i| fold[i] == f) {
                let pred: f64 = (0..p).map(|m| data.covariates()[(i, m)] * g[m]).sum();
                sse += (data.responses()[(i, j)] - pred).powi(2);
            }
        }
    }
    sse / (n * r) as f64
}

/// Sample moment `ḡ(γ) = (nr)⁻¹ Σ_i Σ_j K_h(s_j − s0)·(z_j ⊗ 𝔐_i)·(Y_ij − (z_j ⊗ X_i)ᵀγ)`.
pub fn moment_bar(data: &FunctionalDataset<f64>, inst: &DMatrix<f64>, s0: f64, h: f64, gamma: &DVector<f64>) -> DVector<f64> {
    let (n, r, p, q) = (data.n(), data.r(), data.p(), inst.ncols());
    let mut g = DVector::zeros(2 * q);
    for i in 0..n {
        for j in 0..r {
            let s = data.grid().points()[j];
            let k = kernel_scaled(s - s0, h).unwrap();
            if k == 0.0 {
                continue;
            }
            let z = [1.0, (s - s0) / h];
            let mut fit = 0.0;
            for a in 0..2 {
                for m in 0..p {
                    fit += z[a] * data.covariates()[(i, m)] * gamma[a * p + m];
                }
            }
            let e = data.responses()[(i, j)] - fit;
            for a in 0..2 {
                for m in 0..q {
                    g[a * q + m] += k * z[a] * inst[(i, m)] * e;
                }
            }
        }
    }
    g / (n * r) as f64
}

/// Spectral objective `Σ_k w_k (ḡᵀφ_k)²` at grid point `j`. Under
/// block-diagonal weighting the level and slope halves of `φ_k` enter as
/// separate terms.
pub fn objective(data: &FunctionalDataset<f64>, inst: &DMatrix<f64>, eig: &EigenSystem<f64>, j: usize, h: f64, weighting: MomentWeighting, gamma: &DVector<f64>) -> f64 {
    let s0 = data.grid().points()[j];
    let g = moment_bar(data, inst, s0, h, gamma);
    let q = inst.ncols();
    let alpha = eig.alpha.unwrap();
    let mut total = 0.0;
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let w = lam / (lam * lam + alpha);
        let phi = eig.eigenfunction(k).column(j).into_owned();
        let (lo, hi): (f64, f64) = ((0..q).map(|l| g[l] * phi[l]).sum(), (q..2 * q).map(|l| g[l] * phi[l]).sum());
        total += match weighting {
            MomentWeighting::Full => w * (lo + hi).powi(2),
            MomentWeighting::BlockDiagonal => w * (lo * lo + hi * hi),
        };
    }
    total
}

/// Minimizer of [`objective`]. The objective is an exact quadratic in `γ`,
/// so its Hessian and gradient at zero are recovered from function values by
/// central differences and the stationarity condition is solved directly.
pub fn objective_minimizer(data: &FunctionalDataset<f64>, inst: &DMatrix<f64>, eig: &EigenSystem<f64>, j: usize, h: f64, weighting: MomentWeighting) -> DVector<f64> {
    let dim = 2 * data.p();
    let f = |g: &DVector<f64>| objective(data, inst, eig, j, h, weighting, g);
    let zero = DVector::zeros(dim);
    let f0 = f(&zero);
    let e = |c: usize| DVector::from_fn(dim, |i, _| if i == c { 1.0 } else { 0.0 });
    let mut grad = DVector::zeros(dim);
    let mut hess = DMatrix::zeros(dim, dim);
    for c in 0..dim {
        let (fp, fm) = (f(&e(c)), f(&(-e(c))));
        grad[c] = (fp - fm) / 2.0;
        hess[(c, c)] = fp + fm - 2.0 * f0;
    }
    for c in 0..dim {
        for d in c + 1..dim {
            // f(e_c + e_d) = f0 + g_c + g_d + (H_cc + H_dd)/2 + H_cd
            let v = f(&(e(c) + e(d))) - f0 - grad[c] - grad[d] - 0.5 * (hess[(c, c)] + hess[(d, d)]);
            hess[(c, d)] = v;
            hess[(d, c)] = v;
        }
    }
    svd_solve(&hess, &(-grad))
}

/// Random positive instruments `[X, X·v]` with `v > 0`, mimicking `X/σ̂²`.
pub fn random_instruments(data: &FunctionalDataset<f64>, seed: u64) -> InstrumentSet<f64> {
    let mut g = rng(seed);
    let (n, p) = (data.n(), data.p());
    let v: Vec<f64> = (0..n).map(|_| 0.3 + g.random::<f64>()).collect();
    InstrumentSet::from_matrix(DMatrix::from_fn(n, 2 * p, |i, c| if c < p { data.covariates()[(i, c)] } else { data.covariates()[(i, c - p)] * v[i] })).unwrap()
}

/// Eigen system with `k` random eigenfunctions (not orthogonalized, which the
/// estimator does not require) and descending eigenvalues.
pub fn random_eigen(d: usize, grid: &Grid<f64>, k: usize, seed: u64) -> EigenSystem<f64> {
    let mut g = rng(seed);
    let phi = DMatrix::from_fn(d * grid.len(), k, |_, _| normal(&mut g));
    let vals: Vec<f64> = (0..k).map(|i| 2.0 / (1.0 + i as f64)).collect();
    let e = EigenSystem::from_parts(vals, phi, d, grid.clone()).unwrap();
    llgmm::select_truncation(&e, 0.9).unwrap()
}

/// All-pairs shortest paths by Floyd–Warshall; `None` for unreachable pairs.
pub fn floyd_warshall(m: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<Vec<Option<usize>>> {
    let mut d = vec![vec![None; m]; m];
    for a in 0..m {
        d[a][a] = Some(0);
        for b in 0..m {
            if a != b && edge(a, b) {
                d[a][b] = Some(1);
            }
        }
    }
    for k in 0..m {
        for a in 0..m {
            for b in 0..m {
                if let (Some(x), Some(y)) = (d[a][k], d[k][b]) {
                    if d[a][b].is_none_or(|z| x + y < z) {
                        d[a][b] = Some(x + y);
                    }
                }
            }
        }
    }
    d
}

/// Mean finite distance over unordered pairs, 0 when none is connected.
pub fn apl_oracle(m: usize, edge: impl Fn(usize, usize) -> bool) -> f64 {
    let d = floyd_warshall(m, edge);
    let (mut sum, mut cnt) = (0usize, 0usize);
    for a in 0..m {
        for b in a + 1..m {
            if let Some(v) = d[a][b] {
                sum += v;
                cnt += 1;
            }
        }
    }
    if cnt == 0 {
        0.0
    } else {
        sum as f64 / cnt as f64
    }
}

/// Average ranks, ties sharing the mean rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}
