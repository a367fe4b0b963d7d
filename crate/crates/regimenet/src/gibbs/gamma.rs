//! Block (III): conditional draws of the PARAFAC marginals.
//!
//! The likelihood precision for modes 1-3 is diagonal because the design
//! matrices carry a Kronecker factor with an identity block, and the
//! rank-one structure for mode 4 reduces its precision to accumulated
//! z z' outer products. Neither path materializes the IJK x n_h design
//! matrices; `dense` holds the reference assembly they are tested against.

use crate::model::{AugmentedState, NetworkPanel, PriorConfig, RegimeParams, ShrinkageState};
use crate::rng::RngStream;
use crate::tensor::rank_one_vec3;

#[derive(Debug, thiserror::Error)]
pub enum GammaError {
    #[error("posterior covariance factorization failed for mode {h}, rank {r}, regime {l} (jitter escalated to {jitter:.1e})")]
    Factorization { h: usize, r: usize, l: usize, jitter: f64 },
}

/// Posterior precision of one marginal draw; diagonal for modes 1-3, dense
/// (Q x Q, column-major) for mode 4.
#[derive(Debug, Clone)]
pub enum Precision {
    Diagonal(Vec<f64>),
    Dense(Vec<f64>),
}

/// Precision and linear term of the Gaussian full conditional; the mean is
/// `precision^{-1} linear`.
#[derive(Debug, Clone)]
pub struct GammaConditional {
    pub precision: Precision,
    pub linear: Vec<f64>,
}

impl GammaConditional {
    /// Log of the Gaussian kernel -x'Px/2 + b'x at a candidate vector.
    pub fn log_kernel(&self, x: &[f64]) -> f64 {
        let quad = match &self.precision {
            Precision::Diagonal(d) => x.iter().zip(d).map(|(&v, &p)| v * v * p).sum::<f64>(),
            Precision::Dense(p) => {
                let n = x.len();
                let mut acc = 0.0;
                for c in 0..n {
                    for r in 0..n {
                        acc += x[r] * p[c * n + r] * x[c];
                    }
                }
                acc
            }
        };
        let lin: f64 = x.iter().zip(&self.linear).map(|(&v, &b)| v * b).sum();
        -0.5 * quad + lin
    }
}

/// Assemble the full conditional of gamma_{h,l}^{(r)} without forming any
/// design matrix: precision (tau phi_r w_{h,r,l})^{-1} I + sum_t A' Omega A
/// and linear term sum_t A'(kappa - Omega gbar^{(-r)}) plus the prior-mean
/// pull when nonzero means are configured.
#[allow(clippy::too_many_arguments)]
pub fn gamma_conditional_terms(
    panel: &NetworkPanel,
    aug: &AugmentedState,
    params: &RegimeParams,
    shrink: &ShrinkageState,
    prior: &PriorConfig,
    h: usize,
    r: usize,
    l: usize,
) -> GammaConditional {
    let marg = &params.marginals[l];
    let dims = marg.dims();
    let n_h = dims[h];
    let cells = panel.cells();
    let prior_prec = 1.0 / (shrink.tau * shrink.phi_r(r) * shrink.w_at(h, r, l));

    let times: Vec<usize> = (0..panel.t).filter(|&t| aug.s[t] == l).collect();

    // Rank-one vectors of the complementary ranks, reused across times.
    let rank = marg.rank();
    let mut others: Vec<Vec<f64>> = Vec::with_capacity(rank.saturating_sub(1));
    let mut other_ranks: Vec<usize> = Vec::new();
    for v in 0..rank {
        if v != r {
            let mut buf = vec![0.0; cells];
            rank_one_vec3(marg.factor(0, v), marg.factor(1, v), marg.factor(2, v), &mut buf);
            others.push(buf);
            other_ranks.push(v);
        }
    }

    let g1 = marg.factor(0, r).to_vec();
    let g2 = marg.factor(1, r).to_vec();
    let g3 = marg.factor(2, r).to_vec();
    let g4 = marg.factor(3, r).to_vec();
    let (ni, nj, nk) = (dims[0], dims[1], dims[2]);

    // For the mode-4 update the rank-one vector of the own rank is fixed
    // through the whole time loop.
    let mut own = vec![0.0; cells];
    if h == 3 {
        rank_one_vec3(&g1, &g2, &g3, &mut own);
    }

    let mut diag = vec![0.0; n_h];
    let mut dense = if h == 3 { vec![0.0; n_h * n_h] } else { Vec::new() };
    let mut linear = vec![0.0; n_h];
    let mut gbar = vec![0.0; cells];

    for &t in &times {
        let z = panel.covariates(t);
        let xs = panel.slice(t);
        let ds = &aug.d[t * cells..(t + 1) * cells];
        let os = &aug.omega[t * cells..(t + 1) * cells];

        // Rank complement at this time.
        gbar.fill(0.0);
        for (buf, &v) in others.iter().zip(&other_ranks) {
            let c: f64 = marg.factor(3, v).iter().zip(z).map(|(a, b)| a * b).sum();
            if c != 0.0 {
                for (g, &b) in gbar.iter_mut().zip(buf) {
                    *g += c * b;
                }
            }
        }

        if h == 3 {
            // A = vec(g1 o g2 o g3) z'; precision adds alpha_t z z' and the
            // linear term adds beta_t z. Only at-risk cells (d = 0) carry
            // the Polya-Gamma tilt.
            let mut alpha = 0.0;
            let mut beta = 0.0;
            for cell in 0..cells {
                let w = own[cell];
                let at_risk = 1.0 - ds[cell] as f64;
                let omega = at_risk * os[cell];
                let kappa = at_risk * (xs[cell] as f64 - 0.5);
                alpha += omega * w * w;
                beta += w * (kappa - omega * gbar[cell]);
            }
            for (qc, &zc) in z.iter().enumerate() {
                linear[qc] += beta * zc;
                for (qr, &zr) in z.iter().enumerate() {
                    dense[qc * n_h + qr] += alpha * zr * zc;
                }
            }
        } else {
            let c: f64 = g4.iter().zip(z).map(|(a, b)| a * b).sum();
            let c2 = c * c;
            let mut cell = 0;
            for k in 0..nk {
                for j in 0..nj {
                    for i in 0..ni {
                        let at_risk = 1.0 - ds[cell] as f64;
                        let omega = at_risk * os[cell];
                        let kappa = at_risk * (xs[cell] as f64 - 0.5);
                        let resid = kappa - omega * gbar[cell];
                        let (slot, factor) = match h {
                            0 => (i, g2[j] * g3[k]),
                            1 => (j, g1[i] * g3[k]),
                            _ => (k, g1[i] * g2[j]),
                        };
                        diag[slot] += c2 * omega * factor * factor;
                        linear[slot] += c * factor * resid;
                        cell += 1;
                    }
                }
            }
        }
    }

    for idx in 0..n_h {
        let pull = prior.gamma_prior_mean(h, r, l, idx);
        if pull != 0.0 {
            linear[idx] += prior_prec * pull;
        }
    }
    let precision = if h == 3 {
        for qd in 0..n_h {
            dense[qd * n_h + qd] += prior_prec;
        }
        Precision::Dense(dense)
    } else {
        for d in diag.iter_mut() {
            *d += prior_prec;
        }
        Precision::Diagonal(diag)
    };
    GammaConditional { precision, linear }
}

/// Draw gamma_{h,l}^{(r)} from its full conditional and write it into the
/// regime parameters.
#[allow(clippy::too_many_arguments)]
pub fn sample_gamma_marginal(
    panel: &NetworkPanel,
    aug: &AugmentedState,
    params: &mut RegimeParams,
    shrink: &ShrinkageState,
    prior: &PriorConfig,
    h: usize,
    r: usize,
    l: usize,
    base_jitter: f64,
    rng: &mut RngStream,
) -> Result<(), GammaError> {
    let cond = gamma_conditional_terms(panel, aug, params, shrink, prior, h, r, l);
    let draw = sample_from_conditional(&cond, base_jitter, rng)
        .ok_or(GammaError::Factorization { h, r, l, jitter: 1e-6 })?;
    params.marginals[l].factor_mut(h, r).copy_from_slice(&draw);
    Ok(())
}

/// Sample from N(P^{-1} b, P^{-1}). Dense precisions get a symmetric
/// factorization with diagonal jitter escalating from `base_jitter` to 1e-6
/// before giving up.
pub fn sample_from_conditional(
    cond: &GammaConditional,
    base_jitter: f64,
    rng: &mut RngStream,
) -> Option<Vec<f64>> {
    match &cond.precision {
        Precision::Diagonal(d) => {
            let mut out = Vec::with_capacity(d.len());
            for (&p, &b) in d.iter().zip(&cond.linear) {
                if !(p > 0.0) {
                    return None;
                }
                out.push(b / p + rng.standard_normal() / p.sqrt());
            }
            Some(out)
        }
        Precision::Dense(p) => {
            let n = cond.linear.len();
            let scale = (0..n).map(|i| p[i * n + i]).sum::<f64>() / n as f64;
            let mut jitter = 0.0;
            let mut next_jitter = base_jitter.max(1e-300);
            loop {
                let mut fac = p.clone();
                for i in 0..n {
                    fac[i * n + i] += jitter * scale;
                }
                if cholesky_in_place(&mut fac, n) {
                    let mean = chol_solve(&fac, n, &cond.linear);
                    let z: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
                    let dev = upper_solve(&fac, n, &z);
                    return Some(mean.iter().zip(&dev).map(|(m, d)| m + d).collect());
                }
                if jitter > 1e-6 {
                    return None;
                }
                jitter = next_jitter;
                next_jitter *= 10.0;
            }
        }
    }
}

/// In-place lower Cholesky of a column-major symmetric matrix; false if a
/// pivot fails.
pub(crate) fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for c in 0..n {
        let mut d = a[c * n + c];
        for k in 0..c {
            let v = a[k * n + c];
            d -= v * v;
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[c * n + c] = d;
        for r in (c + 1)..n {
            let mut v = a[c * n + r];
            for k in 0..c {
                v -= a[k * n + r] * a[k * n + c];
            }
            a[c * n + r] = v / d;
        }
    }
    // The factor is stored in the lower triangle across column slots: entry
    // (r, c) with r >= c lives at a[c*n + r].
    true
}

/// Solve L L' x = b given the in-place factor.
pub(crate) fn chol_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for r in 0..n {
        for c in 0..r {
            y[r] -= l[c * n + r] * y[c];
        }
        y[r] /= l[r * n + r];
    }
    let mut x = y;
    for r in (0..n).rev() {
        for c in (r + 1)..n {
            x[r] -= l[r * n + c] * x[c];
        }
        x[r] /= l[r * n + r];
    }
    x
}

/// Solve L' x = z, giving a draw with covariance (L L')^{-1}.
pub(crate) fn upper_solve(l: &[f64], n: usize, z: &[f64]) -> Vec<f64> {
    let mut x = z.to_vec();
    for r in (0..n).rev() {
        for c in (r + 1)..n {
            x[r] -= l[r * n + c] * x[c];
        }
        x[r] /= l[r * n + r];
    }
    x
}
