//! Factorization initialization: K-means over pixel spectra for the
//! dictionary, per-pixel non-negative least squares for the abundances.
//!
//! The NNLS core is a gram-form active-set solver. It terminates with an
//! explicit KKT certificate: every positive coefficient has (near-)zero
//! gradient, every zero coefficient has non-negative gradient, both to a
//! caller-set tolerance scaled by the problem size. The same core serves
//! the per-pixel fits here and the per-channel dictionary updates of the
//! least-squares baseline.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{Abundance, Dictionary};

/// Default dictionary size: enough atoms for the palette of elements
/// plausibly present in an easel painting.
pub const DEFAULT_ATOMS: usize = 37;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalize {
    None,
    L2,
}

#[derive(Clone, Debug)]
pub struct KMeansConfig {
    pub clusters: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Relative centroid movement below which iteration stops.
    pub tol: f64,
    /// Optional per-spectrum normalization before clustering.
    pub normalize: Normalize,
}

impl KMeansConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            clusters: DEFAULT_ATOMS,
            max_iters: 100,
            seed,
            tol: 1e-6,
            normalize: Normalize::None,
        }
    }

    pub fn with_clusters(mut self, clusters: usize) -> Self {
        self.clusters = clusters;
        self
    }

    fn validate(&self, n_points: usize) -> Result<()> {
        if self.clusters == 0 || self.clusters > n_points {
            return Err(Error::Config(format!(
                "cluster count must lie in [1, {n_points}], got {}",
                self.clusters
            )));
        }
        if self.max_iters == 0 || !(self.tol > 0.0) {
            return Err(Error::Config(
                "max_iters and tol must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NnlsConfig {
    /// KKT residual tolerance, relative to ‖D‖·‖x‖ per pixel.
    pub kkt_tol: f64,
    /// Iteration cap across active-set changes for one pixel.
    pub max_iters: usize,
}

impl Default for NnlsConfig {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-10,
            max_iters: 10_000,
        }
    }
}

fn dist2(a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// K-means over the columns of x_mat, returning centroids as dictionary
/// atoms. Seeding is distance-weighted (k-means++); assignment ties and
/// reseeding ties resolve to the lowest index, so the result is a pure
/// function of (x_mat, cfg).
pub fn kmeans_dictionary(x_mat: &Array2<f64>, cfg: &KMeansConfig) -> Result<Dictionary> {
    let (channels, n_points) = x_mat.dim();
    cfg.validate(n_points)?;
    if x_mat.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::Invariant(
            "spectra must be finite and non-negative".into(),
        ));
    }

    let points: Array2<f64> = match cfg.normalize {
        Normalize::None => x_mat.clone(),
        Normalize::L2 => {
            let mut p = x_mat.clone();
            for mut col in p.columns_mut() {
                let norm = col.dot(&col).sqrt();
                if norm > 0.0 {
                    col.mapv_inplace(|v| v / norm);
                }
            }
            p
        }
    };

    let mut rng = crate::rng::Mix64::new(cfg.seed);
    let k = cfg.clusters;

    // Distance-weighted seeding.
    let mut centroids = Array2::zeros((channels, k));
    let first = rng.next_index(n_points);
    centroids.column_mut(0).assign(&points.column(first));
    let mut nearest2: Vec<f64> = (0..n_points)
        .map(|j| dist2(&points.column(j), &centroids.column(0)))
        .collect();
    for c in 1..k {
        let total: f64 = nearest2.iter().sum();
        let chosen = if total > 0.0 {
            let target = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut pick = n_points - 1;
            for (j, &d2) in nearest2.iter().enumerate() {
                acc += d2;
                if acc > target {
                    pick = j;
                    break;
                }
            }
            pick
        } else {
            rng.next_index(n_points)
        };
        centroids.column_mut(c).assign(&points.column(chosen));
        for (j, d2) in nearest2.iter_mut().enumerate() {
            *d2 = d2.min(dist2(&points.column(j), &centroids.column(c)));
        }
    }

    let (centroids, _) = run_lloyd(&points, centroids, cfg);
    Dictionary::new(centroids)
}

/// Lloyd iterations from given initial centroids. Split out so the
/// reseeding of empty clusters is testable in isolation.
fn run_lloyd(
    points: &Array2<f64>,
    mut centroids: Array2<f64>,
    cfg: &KMeansConfig,
) -> (Array2<f64>, Vec<usize>) {
    let (channels, n_points) = points.dim();
    let k = centroids.ncols();
    let mut assignment = vec![0usize; n_points];

    #[cfg(debug_assertions)]
    let mut prev_objective = f64::INFINITY;

    for _ in 0..cfg.max_iters {
        // Assignment: nearest centroid, ties to the lowest index.
        let cols: Vec<Array1<f64>> = (0..k).map(|c| centroids.column(c).to_owned()).collect();
        assignment = (0..n_points)
            .into_par_iter()
            .map(|j| {
                let p = points.column(j);
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (c, cent) in cols.iter().enumerate() {
                    let d = dist2(&p, &cent.view());
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                best
            })
            .collect();

        #[cfg(debug_assertions)]
        {
            let objective: f64 = (0..n_points)
                .map(|j| dist2(&points.column(j), &centroids.column(assignment[j])))
                .sum();
            debug_assert!(
                objective <= prev_objective * (1.0 + 1e-9) + 1e-9,
                "clustering objective increased: {prev_objective} -> {objective}"
            );
            prev_objective = objective;
        }

        // Centroid update with a fixed accumulation order.
        let mut sums = Array2::<f64>::zeros((channels, k));
        let mut counts = vec![0usize; k];
        for (j, &c) in assignment.iter().enumerate() {
            let mut col = sums.column_mut(c);
            col += &points.column(j);
            counts[c] += 1;
        }
        let mut new_centroids = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                new_centroids
                    .column_mut(c)
                    .assign(&(&sums.column(c) / counts[c] as f64));
            }
        }

        // Empty clusters steal the points farthest from their centroids,
        // one per empty cluster, farthest first.
        let empties: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empties.is_empty() {
            let mut by_distance: Vec<(usize, f64)> = (0..n_points)
                .map(|j| {
                    (
                        j,
                        dist2(&points.column(j), &new_centroids.column(assignment[j])),
                    )
                })
                .collect();
            by_distance.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap()
                    .then_with(|| a.0.cmp(&b.0))
            });
            for (slot, &c) in empties.iter().enumerate() {
                let (j, _) = by_distance[slot.min(n_points - 1)];
                new_centroids.column_mut(c).assign(&points.column(j));
            }
        }

        let moved: f64 = (0..k)
            .map(|c| dist2(&centroids.column(c), &new_centroids.column(c)))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = centroids.iter().map(|v| v * v).sum::<f64>().sqrt();
        centroids = new_centroids;
        if moved <= cfg.tol * scale.max(1e-12) {
            break;
        }
    }
    (centroids, assignment)
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration with
/// a fixed start vector.
pub(crate) fn lambda_max(gram: &Array2<f64>) -> f64 {
    let m = gram.nrows();
    if m == 0 {
        return 0.0;
    }
    let mut v = Array1::from_elem(m, 1.0 / (m as f64).sqrt());
    let mut lam = 0.0f64;
    for _ in 0..200 {
        let w = gram.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm <= 1e-300 {
            return 0.0;
        }
        let rayleigh = v.dot(&w);
        v = w / norm;
        if (rayleigh - lam).abs() <= 1e-13 * rayleigh.abs().max(1.0) {
            return rayleigh.max(0.0);
        }
        lam = rayleigh;
    }
    lam.max(0.0)
}

/// Solve a small dense symmetric system in place; None when singular.
fn solve_sym(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-13 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in col + 1..n {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

/// Gram-form active-set NNLS: minimize ‖x − Da‖² over a ≥ 0 given
/// G = DᵀD and b = Dᵀx. `kkt_scale` is the absolute gradient tolerance
/// of the certificate (typically kkt_tol·‖D‖·‖x‖).
pub(crate) fn nnls_gram(
    gram: &Array2<f64>,
    b: &ArrayView1<f64>,
    kkt_scale: f64,
    max_iters: usize,
) -> Result<Array1<f64>> {
    let m = b.len();
    let mut a = Array1::<f64>::zeros(m);
    let mut passive = vec![false; m];
    // w = b − G·a is minus half the objective gradient.
    let mut w = b.to_owned();
    let w_tol = 0.5 * kkt_scale;
    let mut iters = 0usize;

    let overrun = || Error::NonConvergence {
        column: 0,
        iters: max_iters,
    };

    loop {
        let mut candidate: Option<(usize, f64)> = None;
        for i in 0..m {
            if !passive[i] && w[i] > w_tol && candidate.map_or(true, |(_, best)| w[i] > best) {
                candidate = Some((i, w[i]));
            }
        }
        let Some((j, _)) = candidate else {
            break;
        };
        passive[j] = true;

        loop {
            iters += 1;
            if iters > max_iters {
                return Err(overrun());
            }
            let idx: Vec<usize> = (0..m).filter(|&i| passive[i]).collect();
            let sys: Vec<Vec<f64>> = idx
                .iter()
                .map(|&r| idx.iter().map(|&c| gram[[r, c]]).collect())
                .collect();
            let rhs: Vec<f64> = idx.iter().map(|&r| b[r]).collect();
            let Some(sol) = solve_sym(sys, rhs) else {
                return Err(overrun());
            };
            if sol.iter().all(|&s| s > 0.0) {
                for (k, &i) in idx.iter().enumerate() {
                    a[i] = sol[k];
                }
                break;
            }
            // Back off toward the previous point until a coefficient
            // hits zero, then free it.
            let mut alpha = 1.0f64;
            for (k, &i) in idx.iter().enumerate() {
                if sol[k] <= 0.0 {
                    let denom = a[i] - sol[k];
                    alpha = if denom > 0.0 { alpha.min(a[i] / denom) } else { 0.0 };
                }
            }
            for (k, &i) in idx.iter().enumerate() {
                a[i] += alpha * (sol[k] - a[i]);
            }
            let mut dropped = false;
            let floor = 1e-12 * a.iter().fold(0.0f64, |mx, v| mx.max(v.abs())).max(1e-300);
            for (k, &i) in idx.iter().enumerate() {
                if sol[k] <= 0.0 && a[i] <= floor {
                    a[i] = 0.0;
                    passive[i] = false;
                    dropped = true;
                }
            }
            if !dropped {
                // Numerical stalemate: force out the smallest offender.
                let (&worst, _) = idx
                    .iter()
                    .zip(sol.iter())
                    .filter(|(_, &s)| s <= 0.0)
                    .min_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                    .expect("inner loop runs only when some s <= 0");
                a[worst] = 0.0;
                passive[worst] = false;
            }
        }
        w = b - &gram.dot(&a);
    }

    // Explicit certificate, in terms of the gradient g = 2(G·a − b).
    for i in 0..m {
        let g = -2.0 * w[i];
        let ok = if a[i] > 0.0 {
            g.abs() <= kkt_scale.max(1e-12)
        } else {
            g >= -kkt_scale.max(1e-12)
        };
        if !ok {
            return Err(overrun());
        }
    }
    Ok(a)
}

/// Per-pixel non-negative least squares against a fixed dictionary.
/// Pixels are independent and solved in parallel; each solution carries
/// the KKT certificate described on [`nnls_gram`].
pub fn nnls_abundance(
    x_mat: &Array2<f64>,
    d: &Dictionary,
    cfg: &NnlsConfig,
) -> Result<Abundance> {
    let (channels, n_points) = x_mat.dim();
    if d.channels() != channels {
        return Err(Error::ShapeMismatch(format!(
            "dictionary has {} channels, data has {channels}",
            d.channels()
        )));
    }
    if !(cfg.kkt_tol > 0.0) || cfg.max_iters == 0 {
        return Err(Error::Config(
            "kkt_tol and max_iters must be positive".into(),
        ));
    }

    let m = d.n_atoms();
    let gram = d.atoms.t().dot(&d.atoms);
    let btx = d.atoms.t().dot(x_mat);
    let sigma = lambda_max(&gram).sqrt();

    let columns: Result<Vec<Array1<f64>>> = (0..n_points)
        .into_par_iter()
        .map(|j| {
            let x_col = x_mat.column(j);
            let x_norm = x_col.dot(&x_col).sqrt();
            let scale = cfg.kkt_tol * sigma * x_norm;
            nnls_gram(&gram, &btx.column(j), scale, cfg.max_iters).map_err(|e| match e {
                Error::NonConvergence { iters, .. } => Error::NonConvergence { column: j, iters },
                other => other,
            })
        })
        .collect();
    let columns = columns?;

    let mut data = Array2::zeros((m, n_points));
    for (j, col) in columns.iter().enumerate() {
        data.column_mut(j).assign(col);
    }
    Abundance::new(data)
}
