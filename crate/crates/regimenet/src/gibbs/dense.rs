//! Reference assembly for the marginal full conditionals.
//!
//! Materializes the IJK x n_h design matrices and forms the precision and
//! linear terms by plain dense matrix arithmetic, building every piece from
//! the generic tensor operations rather than the structured contractions in
//! [`super::gamma`]. The fast path is validated against this module, and the
//! performance gate measures the two against each other.

use crate::model::{AugmentedState, NetworkPanel, PriorConfig, RegimeParams, ShrinkageState};
use crate::tensor::{mode_n_vec_product, outer_product, parafac_reconstruct, vectorize, DenseTensor, ParafacMarginals};

/// Design matrix A_{h,t} (cells x n_h, column-major) for one rank and mode.
pub fn dense_design_matrix(
    marg: &ParafacMarginals,
    z: &[f64],
    h: usize,
    r: usize,
) -> Vec<f64> {
    let dims = marg.dims();
    let cells = dims[0] * dims[1] * dims[2];
    let n_h = dims[h];
    let mut a = vec![0.0; cells * n_h];
    if h == 3 {
        let v = vectorize(
            &outer_product(&[
                &DenseTensor::from_vec(marg.factor(0, r).to_vec()),
                &DenseTensor::from_vec(marg.factor(1, r).to_vec()),
                &DenseTensor::from_vec(marg.factor(2, r).to_vec()),
            ])
            .expect("rank-one outer product"),
        );
        for (q, &zq) in z.iter().enumerate() {
            for (cell, &vv) in v.iter().enumerate() {
                a[q * cells + cell] = vv * zq;
            }
        }
    } else {
        let c: f64 = marg.factor(3, r).iter().zip(z).map(|(x, y)| x * y).sum();
        for e in 0..n_h {
            let mut basis = vec![0.0; n_h];
            basis[e] = 1.0;
            let parts: [&[f64]; 3] = [
                if h == 0 { &basis } else { marg.factor(0, r) },
                if h == 1 { &basis } else { marg.factor(1, r) },
                if h == 2 { &basis } else { marg.factor(2, r) },
            ];
            let col = vectorize(
                &outer_product(&[
                    &DenseTensor::from_vec(parts[0].to_vec()),
                    &DenseTensor::from_vec(parts[1].to_vec()),
                    &DenseTensor::from_vec(parts[2].to_vec()),
                ])
                .expect("rank-one outer product"),
            );
            for (cell, &vv) in col.iter().enumerate() {
                a[e * cells + cell] = vv * c;
            }
        }
    }
    a
}

/// Rank complement vec(G_l x_4 z) - c_r vec(rank r), built from a full
/// PARAFAC reconstruction with rank r zeroed out.
pub fn dense_rank_complement(marg: &ParafacMarginals, z: &[f64], r: usize) -> Vec<f64> {
    let mut reduced = marg.clone();
    for h in 0..4 {
        reduced.factor_mut(h, r).fill(0.0);
    }
    let g = parafac_reconstruct(&reduced);
    let contracted = mode_n_vec_product(&g, z, 4).expect("mode-4 contraction");
    vectorize(&contracted)
}

/// Dense (n_h x n_h, column-major) precision and linear term of the
/// gamma_{h,l}^{(r)} full conditional.
#[allow(clippy::too_many_arguments)]
pub fn dense_gamma_conditional(
    panel: &NetworkPanel,
    aug: &AugmentedState,
    params: &RegimeParams,
    shrink: &ShrinkageState,
    prior: &PriorConfig,
    h: usize,
    r: usize,
    l: usize,
) -> (Vec<f64>, Vec<f64>) {
    let marg = &params.marginals[l];
    let n_h = marg.dims()[h];
    let cells = panel.cells();
    let prior_prec = 1.0 / (shrink.tau * shrink.phi_r(r) * shrink.w_at(h, r, l));
    let mut prec = vec![0.0; n_h * n_h];
    let mut linear = vec![0.0; n_h];
    for d in 0..n_h {
        prec[d * n_h + d] = prior_prec;
        let pull = prior.gamma_prior_mean(h, r, l, d);
        if pull != 0.0 {
            linear[d] = prior_prec * pull;
        }
    }
    for t in 0..panel.t {
        if aug.s[t] != l {
            continue;
        }
        let z = panel.covariates(t);
        let a = dense_design_matrix(marg, z, h, r);
        let gbar = dense_rank_complement(marg, z, r);
        let xs = panel.slice(t);
        let ds = &aug.d[t * cells..(t + 1) * cells];
        let os = &aug.omega[t * cells..(t + 1) * cells];
        // P += A' diag((1 - d) omega) A and
        // b += A'(kappa - diag((1 - d) omega) gbar): the Polya-Gamma tilt
        // lives only on at-risk cells.
        let masked: Vec<f64> = (0..cells)
            .map(|cell| (1.0 - ds[cell] as f64) * os[cell])
            .collect();
        for c in 0..n_h {
            let ac = &a[c * cells..(c + 1) * cells];
            let mut lin = 0.0;
            for cell in 0..cells {
                let kappa = (1.0 - ds[cell] as f64) * (xs[cell] as f64 - 0.5);
                lin += ac[cell] * (kappa - masked[cell] * gbar[cell]);
            }
            linear[c] += lin;
            for rr in 0..n_h {
                let ar = &a[rr * cells..(rr + 1) * cells];
                let mut acc = 0.0;
                for cell in 0..cells {
                    acc += ar[cell] * masked[cell] * ac[cell];
                }
                prec[c * n_h + rr] += acc;
            }
        }
    }
    (prec, linear)
}
