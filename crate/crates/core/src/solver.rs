//! Alternating first-order minimization of the penalized Poisson
//! objective.
//!
//! Each outer iteration takes `alt_block` adaptive-moment steps on the
//! abundances, then one on the dictionary, projecting both onto the
//! non-negative orthant after every step. Coefficients falling below the
//! pruning threshold are zeroed and frozen for the rest of the run. The
//! loop stops `patience` iterations after the last improvement of the
//! total loss and returns the parameters from the best iteration, not
//! the last one.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{
    grad_a_with, grad_d, loss_terms, tv_weights, LossTerms, ObjectiveConfig, TvWeights,
};
use crate::volume::{Abundance, CountVolume, Dictionary, PixelOrder, RateVolume, RgbImage};

#[derive(Clone, Copy, Debug)]
pub struct SolverConfig {
    /// Step size for A; None derives 1e-2 times the median nonzero of
    /// the initial A, falling back to 1e-2 when A starts all-zero.
    pub lr_a: Option<f64>,
    /// Step size for D, derived from the initial D the same way.
    pub lr_d: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Stop this many iterations after the running loss minimum.
    pub patience: usize,
    pub max_iters: usize,
    /// Prune an abundance entry when its rate value/t drops below this.
    pub lasso_tau: f64,
    /// Prune every this many outer iterations.
    pub prune_every: usize,
    /// Abundance steps per dictionary step.
    pub alt_block: usize,
    /// Skip dictionary updates entirely (fit abundances only).
    pub fix_dictionary: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lr_a: None,
            lr_d: None,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            patience: 100,
            max_iters: 2000,
            lasso_tau: 1e-3,
            prune_every: 200,
            alt_block: 10,
            fix_dictionary: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 < b && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        if self.patience == 0 || self.max_iters == 0 || self.prune_every == 0 || self.alt_block == 0
        {
            return Err(Error::Config(
                "patience, max_iters, prune_every, and alt_block must be positive".into(),
            ));
        }
        if self.lasso_tau < 0.0 {
            return Err(Error::Config("lasso_tau must be non-negative".into()));
        }
        for (name, lr) in [("lr_a", self.lr_a), ("lr_d", self.lr_d)] {
            if let Some(v) = lr {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates for one parameter block. Moments
/// persist across projections and pruning; they are never reset.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Array2<f64>,
    v: Array2<f64>,
    steps: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Array2::zeros((rows, cols)),
            v: Array2::zeros((rows, cols)),
            steps: 0,
        }
    }

    /// One bias-corrected moment update of `target`, projected onto the
    /// non-negative orthant. Entries where `active` is false are left
    /// untouched.
    fn apply(
        &mut self,
        p: &AdamParams,
        grad: &Array2<f64>,
        target: &mut Array2<f64>,
        active: Option<&Array2<bool>>,
    ) {
        self.steps += 1;
        let bc1 = 1.0 - p.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - p.beta2.powi(self.steps as i32);
        let update = |t: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = p.beta1 * *m + (1.0 - p.beta1) * g;
            *v = p.beta2 * *v + (1.0 - p.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *t = (*t - p.lr * m_hat / (v_hat.sqrt() + p.eps)).max(0.0);
        };
        match active {
            Some(mask) => {
                ndarray::Zip::from(target)
                    .and(grad)
                    .and(&mut self.m)
                    .and(&mut self.v)
                    .and(mask)
                    .for_each(|t, &g, m, v, &on| {
                        if on {
                            update(t, g, m, v);
                        }
                    });
            }
            None => {
                ndarray::Zip::from(target)
                    .and(grad)
                    .and(&mut self.m)
                    .and(&mut self.v)
                    .for_each(|t, &g, m, v| update(t, g, m, v));
            }
        }
    }
}

/// One abundance step: gradient, moment update, projection. Inactive
/// entries stay exactly zero.
pub fn step_a(
    state: &mut AdamState,
    params: &AdamParams,
    d: &Dictionary,
    a: &mut Abundance,
    x_mat: &Array2<f64>,
    w: &TvWeights,
    cfg: &ObjectiveConfig,
) -> Result<()> {
    let g = grad_a_with(d, a, x_mat, w, cfg);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("abundance gradient"));
    }
    state.apply(params, &g, &mut a.data, Some(&a.active));
    Ok(())
}

/// One dictionary step with the same projection scheme.
pub fn step_d(
    state: &mut AdamState,
    params: &AdamParams,
    d: &mut Dictionary,
    a: &Abundance,
    x_mat: &Array2<f64>,
    cfg: &ObjectiveConfig,
) -> Result<()> {
    let g = grad_d(d, a, x_mat, cfg);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dictionary gradient"));
    }
    state.apply(params, &g, &mut d.atoms, None);
    Ok(())
}

/// Zero and permanently freeze every active entry whose rate value/t is
/// below tau. Returns how many entries were newly pruned.
pub fn prune(a: &mut Abundance, tau: f64, t: f64) -> usize {
    let mut pruned = 0;
    ndarray::Zip::from(&mut a.data)
        .and(&mut a.active)
        .for_each(|v, on| {
            if *on && *v / t < tau {
                *v = 0.0;
                *on = false;
                pruned += 1;
            }
        });
    pruned
}

/// Patience bookkeeping: iteration 0 is the initialization loss; stop
/// when the current iteration is exactly `patience` past the iteration
/// of the smallest loss seen so far. Only strict improvements move the
/// minimum.
#[derive(Clone, Debug)]
pub struct PatienceTracker {
    patience: usize,
    best: f64,
    best_iter: usize,
    current: usize,
}

impl PatienceTracker {
    pub fn new(patience: usize, initial_loss: f64) -> Self {
        Self {
            patience,
            best: initial_loss,
            best_iter: 0,
            current: 0,
        }
    }

    /// Record the loss of the next iteration; true means stop now.
    pub fn observe(&mut self, loss: f64) -> bool {
        self.current += 1;
        if loss < self.best {
            self.best = loss;
            self.best_iter = self.current;
        }
        self.current == self.best_iter + self.patience
    }

    pub fn best_iteration(&self) -> usize {
        self.best_iter
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }

    pub fn current_iteration(&self) -> usize {
        self.current
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PruneEvent {
    pub iteration: usize,
    pub pruned: usize,
}

/// Outcome of a solve: the loss trace (index 0 is the initialization),
/// where the best snapshot sits, and what was pruned when. For the
/// Poisson solver `final_terms` carries the loss decomposition of the
/// returned snapshot; the least-squares baseline reuses this shape with
/// `final_terms` absent.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub best_iteration: usize,
    pub loss_trace: Vec<f64>,
    pub prune_events: Vec<PruneEvent>,
    pub final_terms: Option<LossTerms>,
}

fn median_nonzero(m: &Array2<f64>) -> Option<f64> {
    let mut vals: Vec<f64> = m.iter().copied().filter(|v| *v > 0.0).collect();
    if vals.is_empty() {
        return None;
    }
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = vals.len() / 2;
    Some(if vals.len() % 2 == 0 {
        0.5 * (vals[mid - 1] + vals[mid])
    } else {
        vals[mid]
    })
}

/// Minimize the penalized Poisson objective from the given
/// initialization. Returns the parameters of the best-loss iteration
/// together with the run report.
pub fn solve(
    x: &CountVolume,
    img: &RgbImage,
    d0: &Dictionary,
    a0: &Abundance,
    obj_cfg: &ObjectiveConfig,
    solver_cfg: &SolverConfig,
) -> Result<(Dictionary, Abundance, SolveReport)> {
    obj_cfg.validate()?;
    solver_cfg.validate()?;
    let (height, width, channels) = x.dims();
    if img.dims() != (height, width) {
        return Err(Error::ShapeMismatch(format!(
            "image is {:?}, scan grid is {:?}",
            img.dims(),
            (height, width)
        )));
    }
    if d0.channels() != channels {
        return Err(Error::ShapeMismatch(format!(
            "dictionary has {} channels, scan has {channels}",
            d0.channels()
        )));
    }
    if a0.n_atoms() != d0.n_atoms() || a0.n_pixels() != height * width {
        return Err(Error::ShapeMismatch(format!(
            "abundance is {}x{}, expected {}x{}",
            a0.n_atoms(),
            a0.n_pixels(),
            d0.n_atoms(),
            height * width
        )));
    }
    let rel = (obj_cfg.dwell_s - x.dwell_s).abs() / x.dwell_s;
    if rel > 1e-12 {
        return Err(Error::Config(format!(
            "objective dwell {} does not match scan dwell {}",
            obj_cfg.dwell_s, x.dwell_s
        )));
    }

    let w = tv_weights(img, obj_cfg.beta)?;
    let x_mat = x.to_matrix();
    let mut d = d0.clone();
    let mut a = a0.clone();

    let params_a = AdamParams {
        lr: solver_cfg
            .lr_a
            .unwrap_or_else(|| 1e-2 * median_nonzero(&a0.data).unwrap_or(1.0)),
        beta1: solver_cfg.beta1,
        beta2: solver_cfg.beta2,
        eps: solver_cfg.adam_eps,
    };
    let params_d = AdamParams {
        lr: solver_cfg
            .lr_d
            .unwrap_or_else(|| 1e-2 * median_nonzero(&d0.atoms).unwrap_or(1.0)),
        ..params_a
    };
    let mut state_a = AdamState::new(a.n_atoms(), a.n_pixels());
    let mut state_d = AdamState::new(d.channels(), d.n_atoms());

    let mut terms = loss_terms(&d, &a, &x_mat, &w, obj_cfg);
    let mut loss = terms.total(obj_cfg);
    if !loss.is_finite() {
        return Err(Error::NonFinite("total loss"));
    }
    let mut tracker = PatienceTracker::new(solver_cfg.patience, loss);
    let mut trace = vec![loss];
    let mut best = (d.clone(), a.clone());
    let mut best_terms = terms;
    let mut prune_events = Vec::new();

    for i in 1..=solver_cfg.max_iters {
        for _ in 0..solver_cfg.alt_block {
            step_a(&mut state_a, &params_a, &d, &mut a, &x_mat, &w, obj_cfg)?;
        }
        if !solver_cfg.fix_dictionary {
            step_d(&mut state_d, &params_d, &mut d, &a, &x_mat, obj_cfg)?;
        }
        if solver_cfg.lasso_tau > 0.0 && i % solver_cfg.prune_every == 0 {
            let pruned = prune(&mut a, solver_cfg.lasso_tau, obj_cfg.dwell_s);
            prune_events.push(PruneEvent {
                iteration: i,
                pruned,
            });
        }

        terms = loss_terms(&d, &a, &x_mat, &w, obj_cfg);
        loss = terms.total(obj_cfg);
        if !loss.is_finite() {
            return Err(Error::NonFinite("total loss"));
        }
        trace.push(loss);
        let stop = tracker.observe(loss);
        if tracker.best_iteration() == i {
            best = (d.clone(), a.clone());
            best_terms = terms;
        }
        if stop {
            break;
        }
    }

    let report = SolveReport {
        iterations: trace.len(),
        best_iteration: tracker.best_iteration(),
        loss_trace: trace,
        prune_events,
        final_terms: Some(best_terms),
    };
    Ok((best.0, best.1, report))
}

/// Final rate recovery: the factorization divided by dwell, reshaped to
/// the scan grid.
pub fn recover_rates(
    d: &Dictionary,
    a: &Abundance,
    t: f64,
    order: PixelOrder,
) -> Result<RateVolume> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Config(format!("dwell must be positive, got {t}")));
    }
    let mat = d.atoms.dot(&a.data).mapv(|v| v / t);
    RateVolume::from_matrix(&mat, order.height, order.width)
}
