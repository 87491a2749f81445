//! Slow reference implementations used as test oracles.
//!
//! Everything here trades speed for transparency: scalar loops that
//! transcribe formulas term by term, exhaustive searches, and classical
//! special-function evaluations. Production code must never call into
//! this module; it exists so the optimized implementations can be checked
//! against independently written ones. Compiled for tests and for the
//! `reference` feature (which the acceptance suite enables).

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2};

/// Poisson negative log likelihood by direct summation.
pub fn pnll_direct(d: &Array2<f64>, a: &Array2<f64>, x: &Array2<f64>, eps: f64) -> f64 {
    let (c_dim, m_dim) = d.dim();
    let n_dim = a.ncols();
    let mut total = 0.0;
    for c in 0..c_dim {
        for n in 0..n_dim {
            let mut p = 0.0;
            for m in 0..m_dim {
                p += d[[c, m]] * a[[m, n]];
            }
            total += p - x[[c, n]] * (p + eps).ln();
        }
    }
    total
}

/// Edge weights from an RGB image by direct evaluation.
pub fn tv_weights_direct(img: &Array3<f64>, beta: f64) -> (Array2<f64>, Array2<f64>) {
    let (height, width, _) = img.dim();
    let mut omega_h = Array2::zeros((height.saturating_sub(1), width));
    let mut omega_w = Array2::zeros((height, width.saturating_sub(1)));
    for h in 0..height - 1 {
        for w in 0..width {
            let mut d2 = 0.0;
            for c in 0..3 {
                let diff = img[[h + 1, w, c]] - img[[h, w, c]];
                d2 += diff * diff;
            }
            omega_h[[h, w]] = (-beta * d2).exp();
        }
    }
    for h in 0..height {
        for w in 0..width - 1 {
            let mut d2 = 0.0;
            for c in 0..3 {
                let diff = img[[h, w + 1, c]] - img[[h, w, c]];
                d2 += diff * diff;
            }
            omega_w[[h, w]] = (-beta * d2).exp();
        }
    }
    (omega_h, omega_w)
}

/// Weighted total variation by direct neighbor-pair summation over an
/// (H, W, M) abundance volume.
pub fn tv_loss_direct(
    a_vol: &Array3<f64>,
    omega_h: &Array2<f64>,
    omega_w: &Array2<f64>,
    t: f64,
) -> f64 {
    let (height, width, planes) = a_vol.dim();
    let mut total = 0.0;
    for m in 0..planes {
        for h in 0..height - 1 {
            for w in 0..width {
                let diff = a_vol[[h + 1, w, m]] - a_vol[[h, w, m]];
                total += omega_h[[h, w]] / (t * t) * diff * diff;
            }
        }
        for h in 0..height {
            for w in 0..width - 1 {
                let diff = a_vol[[h, w + 1, m]] - a_vol[[h, w, m]];
                total += omega_w[[h, w]] / (t * t) * diff * diff;
            }
        }
    }
    total
}

/// Elastic net penalty by direct summation.
pub fn elastic_net_direct(a: &Array2<f64>, t: f64, alpha: f64) -> f64 {
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for &v in a.iter() {
        let s = v / t;
        l1 += s.abs();
        l2 += s * s;
    }
    alpha * l2 + (1.0 - alpha) * l1
}

/// Mean squared error by direct loop.
pub fn mse_direct(est: &Array3<f64>, gt: &Array3<f64>) -> f64 {
    let mut total = 0.0;
    for (e, g) in est.iter().zip(gt.iter()) {
        total += (e - g) * (e - g);
    }
    total / est.len() as f64
}

/// Peak signal-to-noise ratio from its defining formula.
pub fn psnr_direct(est: &Array3<f64>, gt: &Array3<f64>, peak: f64) -> f64 {
    let mse = mse_direct(est, gt);
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Mean per-voxel Poisson deviance of a rate estimate against counts.
pub fn pnll_metric_direct(est: &Array3<f64>, counts: &Array3<u32>, t: f64, eps: f64) -> f64 {
    let mut total = 0.0;
    for (e, &k) in est.iter().zip(counts.iter()) {
        let mu = t * e;
        total += mu - f64::from(k) * (mu + eps).ln();
    }
    total / est.len() as f64
}

/// Central finite differences of a scalar function over a matrix
/// argument; the step for each entry is `rel_step * max(|value|, 1)`.
pub fn finite_difference<F>(f: F, at: &Array2<f64>, rel_step: f64) -> Array2<f64>
where
    F: Fn(&Array2<f64>) -> f64,
{
    let mut grad = Array2::zeros(at.dim());
    for i in 0..at.nrows() {
        for j in 0..at.ncols() {
            let h = rel_step * at[[i, j]].abs().max(1.0);
            let mut plus = at.clone();
            plus[[i, j]] += h;
            let mut minus = at.clone();
            minus[[i, j]] -= h;
            grad[[i, j]] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
    }
    grad
}

/// ln(k!) by cumulative summation of logarithms.
pub fn ln_factorial_direct(k: u64) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

/// ln P[Poisson(mu) = k].
pub fn poisson_log_pmf(k: u64, mu: f64) -> f64 {
    if mu == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * mu.ln() - mu - ln_factorial_direct(k)
}

/// ln Γ(x) by the Lanczos approximation (g = 7, 9 terms), accurate to
/// about 1e-13 for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 8] = [
        676.520368121885,
        -1259.1392167224028,
        771.3234287776531,
        -176.6150291621406,
        12.507343278686905,
        -0.13857109526572012,
        9.984369578019572e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx).
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEF.iter().enumerate() {
        acc += c / (z + i as f64 + 1.0);
    }
    let t = z + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(s, x) by its power series.
fn gamma_series_p(s: f64, x: f64) -> f64 {
    let mut term = 1.0 / s;
    let mut sum = term;
    for n in 1..10_000 {
        term *= x / (s + n as f64);
        sum += term;
        if term.abs() < sum.abs() * 1e-15 {
            break;
        }
    }
    sum * (-x + s * x.ln() - ln_gamma(s)).exp()
}

/// Regularized upper incomplete gamma Q(s, x) by continued fraction
/// (modified Lentz).
fn gamma_cf_q(s: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - s;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - s);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-15 {
            break;
        }
    }
    (-x + s * x.ln() - ln_gamma(s)).exp() * h
}

/// Regularized upper incomplete gamma Q(s, x) for s > 0, x ≥ 0.
pub fn reg_gamma_q(s: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x < s + 1.0 {
        1.0 - gamma_series_p(s, x)
    } else {
        gamma_cf_q(s, x)
    }
}

/// Survival function of the chi-squared distribution: P[X > stat].
pub fn chi_squared_sf(stat: f64, df: f64) -> f64 {
    reg_gamma_q(df / 2.0, stat / 2.0)
}

/// Chi-squared goodness-of-fit p-value for Poisson draws against an
/// exact pmf. Consecutive outcomes are merged into bins until each
/// expected count reaches 5; the open upper tail forms the last bin.
pub fn poisson_gof_pvalue(draws: &[u32], mu: f64) -> f64 {
    let n = draws.len() as f64;
    let k_max = draws.iter().copied().max().unwrap_or(0) as usize;

    // Exact pmf evaluated in log space so large means do not underflow
    // at k = 0 before the mode is reached.
    let mut pmf = Vec::with_capacity(k_max + 1);
    let mut ln_fact = 0.0;
    for k in 0..=k_max {
        if k > 0 {
            ln_fact += (k as f64).ln();
        }
        let ln_p = if mu == 0.0 {
            if k == 0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        } else {
            k as f64 * mu.ln() - mu - ln_fact
        };
        pmf.push(ln_p.exp());
    }

    // Greedy binning left to right; the remainder mass joins the final bin.
    let mut edges: Vec<usize> = Vec::new();
    let mut acc = 0.0;
    let mut covered = 0.0;
    for (k, &pk) in pmf.iter().enumerate() {
        acc += n * pk;
        covered += pk;
        if acc >= 5.0 {
            edges.push(k);
            acc = 0.0;
        }
    }
    // Tail expectation: everything beyond the last full bin.
    let tail_expect = acc + n * (1.0 - covered).max(0.0);
    if edges.is_empty() {
        return 1.0;
    }
    if tail_expect < 5.0 {
        // Merge the open tail into the last closed bin.
        edges.pop();
        if edges.is_empty() {
            return 1.0;
        }
    }

    // Observed and expected per bin; the last bin is open-ended.
    let mut observed = vec![0.0; edges.len() + 1];
    for &d in draws {
        let k = d as usize;
        let bin = edges.iter().position(|&e| k <= e).unwrap_or(edges.len());
        observed[bin] += 1.0;
    }
    let mut expected = vec![0.0; edges.len() + 1];
    let mut prev = 0usize;
    let mut mass = 0.0;
    for (b, &e) in edges.iter().enumerate() {
        expected[b] = n * pmf[prev..=e].iter().sum::<f64>();
        mass += pmf[prev..=e].iter().sum::<f64>();
        prev = e + 1;
    }
    expected[edges.len()] = n * (1.0 - mass).max(0.0);

    let mut stat = 0.0;
    for (o, e) in observed.iter().zip(expected.iter()) {
        if *e > 0.0 {
            stat += (o - e) * (o - e) / e;
        }
    }
    let df = observed.len() as f64 - 1.0;
    chi_squared_sf(stat, df)
}

/// Solve a small dense symmetric system by Gaussian elimination with
/// partial pivoting. Returns None when a pivot is (numerically) zero.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale: f64 = a
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1e-300);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot_row][col].abs() < 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
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

/// Non-negative least squares by exhaustive active-set enumeration:
/// solve the unconstrained normal equations on every support, keep the
/// entrywise non-negative candidates, and return the best. Exact (up to
/// arithmetic) because the NNLS optimum is the unconstrained optimum of
/// its own active set. Exponential in the atom count; use only for tiny
/// problems.
pub fn nnls_exhaustive(d: &ArrayView2<f64>, x: &ArrayView1<f64>) -> (Array1<f64>, f64) {
    let (c_dim, m_dim) = d.dim();
    assert!(m_dim <= 20, "exhaustive NNLS is exponential in atoms");

    let objective = |a: &Array1<f64>| -> f64 {
        let mut total = 0.0;
        for c in 0..c_dim {
            let mut r = x[c];
            for m in 0..m_dim {
                r -= d[[c, m]] * a[m];
            }
            total += r * r;
        }
        total
    };

    let mut best = Array1::zeros(m_dim);
    let mut best_obj = objective(&best);
    for support in 1u32..(1 << m_dim) {
        let cols: Vec<usize> = (0..m_dim).filter(|m| support & (1 << m) != 0).collect();
        let k = cols.len();
        let mut gram = vec![vec![0.0; k]; k];
        let mut rhs = vec![0.0; k];
        for (i, &mi) in cols.iter().enumerate() {
            for (j, &mj) in cols.iter().enumerate() {
                gram[i][j] = (0..c_dim).map(|c| d[[c, mi]] * d[[c, mj]]).sum();
            }
            rhs[i] = (0..c_dim).map(|c| d[[c, mi]] * x[c]).sum();
        }
        let Some(sol) = solve_dense(gram, rhs) else {
            continue;
        };
        if sol.iter().any(|&v| v < -1e-10) {
            continue;
        }
        let mut a = Array1::zeros(m_dim);
        for (i, &mi) in cols.iter().enumerate() {
            a[mi] = sol[i].max(0.0);
        }
        let obj = objective(&a);
        if obj < best_obj {
            best_obj = obj;
            best = a;
        }
    }
    (best, best_obj)
}

/// Minimum total squared column distance between two matrices over all
/// column permutations of `candidate`. Factorial in the column count.
pub fn min_permutation_cost(reference: &Array2<f64>, candidate: &Array2<f64>) -> f64 {
    assert_eq!(reference.dim(), candidate.dim());
    let m = reference.ncols();
    assert!(m <= 8, "permutation matching is factorial in columns");
    let cost = |rm: usize, cm: usize| -> f64 {
        reference
            .column(rm)
            .iter()
            .zip(candidate.column(cm).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    let mut used = vec![false; m];
    fn recurse(
        depth: usize,
        m: usize,
        used: &mut Vec<bool>,
        cost: &dyn Fn(usize, usize) -> f64,
        acc: f64,
        best: &mut f64,
    ) {
        if acc >= *best {
            return;
        }
        if depth == m {
            *best = acc;
            return;
        }
        for cand in 0..m {
            if !used[cand] {
                used[cand] = true;
                recurse(depth + 1, m, used, cost, acc + cost(depth, cand), best);
                used[cand] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    recurse(0, m, &mut used, &cost, 0.0, &mut best);
    best
}
