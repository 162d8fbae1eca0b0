//! Deterministic checks with pinned tolerances. Each returns the measured
//! worst error next to its bound so callers can both assert and report.

use llgmm::locallinear::LleFit;
use llgmm::netfeat::{path_stats, Adjacency};
use llgmm::simulate::{imae, imse};
use llgmm::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::*;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tol: f64,
}

impl Check {
    pub fn new(name: &'static str, value: f64, tol: f64) -> Self {
        Check { name, value, tol }
    }
    pub fn pass(&self) -> bool {
        self.value.is_finite() && self.value <= self.tol
    }
}

pub fn assert_all(checks: &[Check]) {
    for c in checks {
        assert!(c.pass(), "{}: {:e} exceeds {:e}", c.name, c.value, c.tol);
    }
}

fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// `β_1(s) = 2 + 3s`, `β_2(s) = −1 + s/2`, no noise.
pub fn linear_dataset(n: usize, r: usize) -> FunctionalDataset<f64> {
    let mut g = rng(11);
    let grid = Grid::uniform(r).unwrap();
    let x = DMatrix::from_fn(n, 2, |_, m| if m == 0 { 1.0 } else { 1.0 + normal(&mut g) });
    let y = DMatrix::from_fn(n, r, |i, j| {
        let s = grid.points()[j];
        x[(i, 0)] * (2.0 + 3.0 * s) + x[(i, 1)] * (-1.0 + 0.5 * s)
    });
    FunctionalDataset::new(grid, y, x).unwrap()
}

fn linear_truth(grid: &Grid<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(grid.len(), 2, |j, m| {
        let s = grid.points()[j];
        if m == 0 {
            2.0 + 3.0 * s
        } else {
            -1.0 + 0.5 * s
        }
    })
}

pub fn exactness() -> Vec<Check> {
    let mut out = Vec::new();
    let data = linear_dataset(6, 40);
    let truth = linear_truth(data.grid());

    let lle = lle_curve(&data, 0.2).unwrap();
    out.push(Check::new("local-linear reproduces linear coefficients", max_abs(&lle.beta, &truth), 1e-8));

    // Just identified: instruments equal to the covariates.
    let noisy = random_dataset(12, 30, 2, 3);
    let inst = InstrumentSet::from_matrix(noisy.covariates().clone()).unwrap();
    let eig = random_eigen(4, noisy.grid(), 5, 4);
    let lle = lle_curve(&noisy, 0.15).unwrap();
    let mut worst: f64 = 0.0;
    for w in [MomentWeighting::Full, MomentWeighting::BlockDiagonal] {
        let g = GmmFit::new(&noisy, &inst, &eig, w, 1e-10).unwrap().curve(0.15).unwrap();
        worst = worst.max(max_abs(&g.beta, &lle.beta)).max(max_abs(&g.dbeta_scaled, &lle.dbeta_scaled));
    }
    out.push(Check::new("just-identified GMM equals local-linear", worst, 1e-8));

    let inst = random_instruments(&data, 5);
    let eig = random_eigen(8, data.grid(), 6, 6);
    let mut worst: f64 = 0.0;
    for w in [MomentWeighting::Full, MomentWeighting::BlockDiagonal] {
        let g = GmmFit::new(&data, &inst, &eig, w, 1e-10).unwrap().curve(0.2).unwrap();
        worst = worst.max(max_abs(&g.beta, &truth));
    }
    out.push(Check::new("GMM recovers noiseless linear coefficients", worst, 1e-8));

    // Constant error 0.1 on the 200-point grid, and a 3-point hand example.
    let g200 = Grid::uniform(200).unwrap();
    let est = CoefficientEstimate::new(g200.clone(), DMatrix::from_element(200, 1, 0.1), DMatrix::zeros(200, 1), 0.1).unwrap();
    let zero = DMatrix::zeros(200, 1);
    let g3 = Grid::new(vec![0.25, 0.5, 0.75]).unwrap();
    let est3 = CoefficientEstimate::new(g3, DMatrix::from_column_slice(3, 1, &[0.1, -0.2, 0.3]), DMatrix::zeros(3, 1), 0.1).unwrap();
    let zero3 = DMatrix::zeros(3, 1);
    let err: [f64; 5] = [
        imse(&est, &zero).unwrap()[0] - 0.009975,
        imae(&est, &zero).unwrap()[0] - 0.09975,
        imse(&est3, &zero3).unwrap()[0] - 0.035,
        imae(&est3, &zero3).unwrap()[0] - 0.15,
        imse(&est, &est.beta).unwrap()[0],
    ];
    out.push(Check::new("IMSE/IMAE hand-computed values", err.iter().fold(0.0, |a: f64, b| a.max(b.abs())), 1e-12));
    out
}

/// Two vector functions on `d = 2` components, orthonormal in
/// `Σ_l ∫ f_l g_l` under trapezoid weights.
pub fn orthonormal_pair(grid: &Grid<f64>) -> (DVector<f64>, DVector<f64>) {
    let r = grid.len();
    let w = grid.quadrature_weights();
    let ip = |a: &DVector<f64>, b: &DVector<f64>| (0..2 * r).map(|i| a[i] * b[i] * w[i % r]).sum::<f64>();
    let pi = std::f64::consts::PI;
    let f1 = DVector::from_fn(2 * r, |i, _| {
        let s = grid.points()[i % r];
        if i < r {
            (pi * s).cos() + 0.5
        } else {
            (2.0 * pi * s).sin()
        }
    });
    let f2 = DVector::from_fn(2 * r, |i, _| {
        let s = grid.points()[i % r];
        if i < r {
            s * s
        } else {
            1.0 - s
        }
    });
    let e1 = &f1 / ip(&f1, &f1).sqrt();
    let f2 = &f2 - &e1 * ip(&e1, &f2);
    let e2 = &f2 / ip(&f2, &f2).sqrt();
    (e1, e2)
}

fn gram_error(eig: &EigenSystem<f64>) -> f64 {
    let r = eig.grid.len();
    let w = eig.grid.quadrature_weights();
    let mut worst: f64 = 0.0;
    for a in 0..eig.len() {
        for b in 0..eig.len() {
            let v: f64 = (0..eig.d * r).map(|i| eig.phi[(i, a)] * eig.phi[(i, b)] * w[i % r]).sum();
            worst = worst.max((v - if a == b { 1.0 } else { 0.0 }).abs());
        }
    }
    worst
}

pub fn spectral() -> Vec<Check> {
    let mut out = Vec::new();
    let grid = Grid::uniform(30).unwrap();
    let (e1, e2) = orthonormal_pair(&grid);
    let matrix = &e1 * e1.transpose() * 3.0 + &e2 * e2.transpose() * 1.5;
    let eig = lineup_eigen(&MomentCovariance { matrix, d: 2, grid: grid.clone() }).unwrap();
    let lam_err = if eig.len() == 2 { (eig.eigenvalues[0] - 3.0).abs().max((eig.eigenvalues[1] - 1.5).abs()) } else { f64::INFINITY };
    out.push(Check::new("rank-2 eigenvalues recovered", lam_err, 1e-8));
    let mut fn_err: f64 = 0.0;
    for (k, e) in [&e1, &e2].into_iter().enumerate() {
        let phi = eig.phi.column(k);
        let sign = if phi.dot(e) < 0.0 { -1.0 } else { 1.0 };
        fn_err = fn_err.max((phi * sign - e).amax());
    }
    out.push(Check::new("rank-2 eigenfunctions recovered", fn_err, 1e-6));

    // A full-rank covariance from a random moment sample.
    let mut g = rng(21);
    let values = DMatrix::from_fn(80, 2 * 30, |_, _| normal(&mut g));
    let values = values.map(|v| v * (1.0 + g.random::<f64>()));
    let sample = MomentSample { values, d: 2, grid: grid.clone(), bandwidth: 0.1 };
    let cov = moment_covariance(&sample).unwrap();
    let eig = lineup_eigen(&cov).unwrap();
    out.push(Check::new("orthonormality of eigenfunctions", gram_error(&eig), 1e-8));
    let small = MomentSample { values: sample.values.rows(0, 20).into_owned(), ..sample.clone() };
    out.push(Check::new("orthonormality on the Gram route", gram_error(&lineup_eigen_from_sample(&small).unwrap()), 1e-8));
    let mut recon = DMatrix::zeros(60, 60);
    for k in 0..eig.len() {
        let phi = eig.phi.column(k);
        recon += phi * phi.transpose() * eig.eigenvalues[k];
    }
    let sym = (&cov.matrix + cov.matrix.transpose()) * 0.5;
    out.push(Check::new("Mercer reconstruction (relative Frobenius)", (&recon - &sym).norm() / sym.norm(), 1e-6));

    let trunc = |vals: Vec<f64>, fve: f64| {
        let k = vals.len();
        let e = EigenSystem::from_parts(vals, DMatrix::zeros(2, k), 1, Grid::new(vec![0.25, 0.75]).unwrap()).unwrap();
        let e = select_truncation(&e, fve).unwrap();
        (e.kappa0.unwrap(), e.alpha.unwrap())
    };
    let cases = [(trunc(vec![10.0, 1.0, 0.005], 0.99), (2, 0.005f64 * 0.005)), (trunc(vec![1.0], 0.99), (1, 1e-8)), (trunc(vec![5.0, 5.0], 0.5), (1, 25.0))];
    let worst = cases.iter().fold(0.0f64, |a, ((k, al), (k0, al0))| if k != k0 { f64::INFINITY } else { a.max((al - al0).abs() / al0) });
    out.push(Check::new("truncation (kappa0, alpha) examples", worst, 1e-15));
    out
}

pub fn gmm_oracle() -> Check {
    let data = random_dataset(3, 8, 2, 31);
    let inst = random_instruments(&data, 32);
    let eig = random_eigen(8, data.grid(), 6, 33);
    let h = 0.35;
    let mut worst: f64 = 0.0;
    for w in [MomentWeighting::Full, MomentWeighting::BlockDiagonal] {
        let fit = GmmFit::new(&data, &inst, &eig, w, 1e-10).unwrap().curve(h).unwrap();
        for j in 0..data.r() {
            let g = objective_minimizer(&data, &inst.values, &eig, j, h, w);
            for m in 0..2 {
                worst = worst.max((fit.beta[(j, m)] - g[m]).abs()).max((fit.dbeta_scaled[(j, m)] - g[2 + m]).abs());
            }
        }
    }
    Check::new("gmm_curve equals the objective minimizer", worst, 1e-8)
}

pub fn cv_oracle_check() -> Check {
    let data = random_dataset(4, 6, 2, 41);
    let fit = LleFit { data: &data, jitter: 1e-10 };
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let fold = fold_assignment(4, 2, seed);
        for h in [0.3, 0.45] {
            let got = cv_score(&data, &fold, 2, &fit, h).unwrap();
            worst = worst.max((got - cv_oracle(&data, &fold, 2, h)).abs());
        }
    }
    Check::new("CV score equals the fold-by-fold oracle", worst, 1e-10)
}

fn apl_mismatch(adj: &Adjacency) -> f64 {
    let m = adj.m();
    let st = path_stats(adj);
    let want = apl_oracle(m, |a, b| adj.has_edge(a, b));
    let fw = floyd_warshall(m, |a, b| adj.has_edge(a, b));
    let pairs = (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).filter(|&(a, b)| fw[a][b].is_some()).count();
    if pairs != st.connected_pairs {
        return f64::INFINITY;
    }
    (st.apl - want).abs()
}

pub fn apl_oracle_check() -> Check {
    let pairs: Vec<(usize, usize)> = (0..4).flat_map(|a| (a + 1..4).map(move |b| (a, b))).collect();
    let mut worst: f64 = 0.0;
    for mask in 0u32..(1 << pairs.len()) {
        let edges: Vec<(usize, usize)> = pairs.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, &e)| e).collect();
        worst = worst.max(apl_mismatch(&Adjacency::from_edges(4, &edges).unwrap()));
    }
    let mut g = rng(51);
    for trial in 0..100 {
        let density = 0.1 + 0.6 * (trial as f64 / 100.0);
        let edges: Vec<(usize, usize)> = (0..7).flat_map(|a| (a + 1..7).map(move |b| (a, b))).filter(|_| g.random::<f64>() < density).collect();
        worst = worst.max(apl_mismatch(&Adjacency::from_edges(7, &edges).unwrap()));
    }
    Check::new("APL equals Floyd-Warshall (all 4-node, 100 random 7-node graphs)", worst, 0.0)
}

pub fn oracles() -> Vec<Check> {
    vec![gmm_oracle(), cv_oracle_check(), apl_oracle_check()]
}
