//! Unregularized least-squares baseline: alternating non-negative
//! least squares on both factors (MCR-ALS).
//!
//! Both half-steps are exact constrained minimizers, so the Frobenius
//! residual can never increase; the implementation enforces that as a
//! runtime invariant rather than assuming it. Atoms that collapse to
//! zero are reseeded once from the worst-fit pixel spectrum (distinct
//! pixels when several atoms collapse together); a second collapse of
//! the same atom is an error.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::init::{kmeans_dictionary, lambda_max, nnls_abundance, nnls_gram, KMeansConfig, NnlsConfig};
use crate::solver::{recover_rates, SolveReport};
use crate::volume::{Abundance, CountVolume, Dictionary, RateVolume};

#[derive(Clone, Copy, Debug)]
pub struct McrConfig {
    /// Number of dictionary atoms.
    pub atoms: usize,
    /// Cap on outer iterations (one dictionary and one abundance
    /// half-step each).
    pub max_outer: usize,
    /// Stop when the relative residual decrease over one outer
    /// iteration falls below this.
    pub tol: f64,
    /// Seed for the k-means initialization.
    pub seed: u64,
}

impl McrConfig {
    pub fn new(atoms: usize, seed: u64) -> Self {
        Self {
            atoms,
            max_outer: 200,
            tol: 1e-5,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.atoms == 0 {
            return Err(Error::Config("atoms must be positive".into()));
        }
        if self.max_outer == 0 {
            return Err(Error::Config("max_outer must be positive".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config(format!(
                "tol must be positive and finite, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Frobenius norm of X - DA, summed sequentially so the result does not
/// depend on thread count.
fn residual_norm(x_mat: &Array2<f64>, d: &Dictionary, a: &Abundance) -> f64 {
    let p = d.atoms.dot(&a.data);
    let mut acc = 0.0;
    for (x, y) in x_mat.iter().zip(p.iter()) {
        let r = x - y;
        acc += r * r;
    }
    acc.sqrt()
}

/// Exact non-negative least-squares update of the dictionary with the
/// abundances fixed. The problem separates by channel; each row of the
/// result solves min ||x_c - A^T d_c||^2 over d_c >= 0.
fn dictionary_step(
    x_mat: &Array2<f64>,
    a: &Abundance,
    cfg: &NnlsConfig,
) -> Result<Array2<f64>> {
    let channels = x_mat.nrows();
    let m = a.n_atoms();
    let gram = a.data.dot(&a.data.t());
    let sigma = lambda_max(&gram).sqrt();
    let rows: Vec<Array1<f64>> = (0..channels)
        .into_par_iter()
        .map(|ci| {
            let x_c = x_mat.row(ci);
            let b = a.data.dot(&x_c);
            let scale = cfg.kkt_tol * sigma * x_c.dot(&x_c).sqrt();
            nnls_gram(&gram, &b.view(), scale, cfg.max_iters).map_err(|e| match e {
                Error::NonConvergence { iters, .. } => Error::NonConvergence { column: ci, iters },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Array2::from_shape_fn((channels, m), |(ci, j)| rows[ci][j]))
}

/// Run the baseline on a count volume. Returns the factorization, the
/// recovered rates DA/t, and a report whose trace holds the Frobenius
/// residual after every half-step (index 0 is the initialization). The
/// report's `final_terms` is always None: this baseline has no
/// regularized loss decomposition.
pub fn mcr_als(
    x: &CountVolume,
    cfg: &McrConfig,
) -> Result<(Dictionary, Abundance, RateVolume, SolveReport)> {
    cfg.validate()?;
    let x_mat = x.to_matrix();
    let (channels, n) = (x_mat.nrows(), x_mat.ncols());
    let nnls_cfg = NnlsConfig::default();

    let km = KMeansConfig::new(cfg.seed).with_clusters(cfg.atoms);
    let mut d = kmeans_dictionary(&x_mat, &km)?;
    let mut a = nnls_abundance(&x_mat, &d, &nnls_cfg)?;
    let mut trace = vec![residual_norm(&x_mat, &d, &a)];
    let mut reseeded = vec![false; cfg.atoms];
    let slack = |prev: f64| prev * (1.0 + 1e-9) + 1e-9;

    for _ in 0..cfg.max_outer {
        let start = *trace.last().unwrap();

        d = Dictionary::new(dictionary_step(&x_mat, &a, &nnls_cfg)?)?;
        let mut reseeded_now = false;
        // Pixels already consumed by a reseed this pass; atoms that
        // collapse together must draw distinct spectra or they become
        // identical columns and collapse again next pass.
        let mut used_pixels: Vec<usize> = Vec::new();
        for j in 0..cfg.atoms {
            if d.atoms.column(j).iter().any(|&v| v != 0.0) {
                continue;
            }
            if reseeded[j] {
                return Err(Error::Invariant(format!(
                    "atom {j} collapsed to zero again after reseeding"
                )));
            }
            reseeded[j] = true;
            reseeded_now = true;
            // Replace the dead atom with the spectrum of the pixel the
            // current factorization explains worst (lowest index wins
            // ties, so the choice is deterministic).
            let p = d.atoms.dot(&a.data);
            let mut worst = None;
            let mut worst_val = -1.0;
            for pix in 0..n {
                if used_pixels.contains(&pix) {
                    continue;
                }
                let mut r2 = 0.0;
                for c in 0..channels {
                    let r = x_mat[[c, pix]] - p[[c, pix]];
                    r2 += r * r;
                }
                if r2 > worst_val {
                    worst_val = r2;
                    worst = Some(pix);
                }
            }
            // More collapsed atoms than pixels: reuse is unavoidable.
            let worst = worst.unwrap_or(0);
            used_pixels.push(worst);
            for c in 0..channels {
                d.atoms[[c, j]] = x_mat[[c, worst]];
            }
        }
        let after_d = residual_norm(&x_mat, &d, &a);
        if !reseeded_now && after_d > slack(start) {
            return Err(Error::Invariant(format!(
                "dictionary step increased the residual: {start} -> {after_d}"
            )));
        }
        trace.push(after_d);

        a = nnls_abundance(&x_mat, &d, &nnls_cfg)?;
        let after_a = residual_norm(&x_mat, &d, &a);
        if after_a > slack(after_d) {
            return Err(Error::Invariant(format!(
                "abundance step increased the residual: {after_d} -> {after_a}"
            )));
        }
        trace.push(after_a);

        if start <= 0.0 || (start - after_a) / start < cfg.tol {
            break;
        }
    }

    let rates = recover_rates(&d, &a, x.dwell_s, x.order())?;
    let report = SolveReport {
        iterations: trace.len(),
        best_iteration: trace.len() - 1,
        loss_trace: trace,
        prune_events: Vec::new(),
        final_terms: None,
    };
    Ok((d, a, rates, report))
}
