//! Dense primal-dual interior-point method for the largest common lower
//! eigenvalue bound of a family of affine symmetric pencils:
//!
//! ```text
//! maximize t  subject to  F0_b + Σ_k θ_k F_bk − t·I ⪰ 0  for every block b
//! ```
//!
//! In standard dual form the variables are `y = (θ, t)`, `b = e_t`,
//! `C = ⊕ F0_b`, `A_k = −⊕ F_bk` and `A_t = I`. Search directions use the
//! HKM scaling with a Mehrotra predictor-corrector step.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One symmetric block `constant + Σ_k θ_k coeffs[k]`.
#[derive(Debug, Clone)]
pub struct PencilBlock {
    pub constant: DMatrix<f64>,
    pub coeffs: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub max_iter: usize,
    /// Stop once the duality gap and residuals fall below this.
    pub target: f64,
    /// Largest gap accepted when progress stalls before `target`.
    pub accuracy: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iter: 120,
            target: 1e-11,
            accuracy: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PencilSolution {
    pub theta: Vec<f64>,
    /// Dual objective at termination.
    pub t: f64,
    /// Primal objective, an upper bound on the optimum up to the residual.
    pub upper_bound: f64,
    pub iterations: usize,
    pub gap: f64,
    pub infeasibility: f64,
}

struct Best {
    score: f64,
    theta: Vec<f64>,
    t: f64,
    upper_bound: f64,
    iterations: usize,
    gap: f64,
    infeasibility: f64,
}

struct Iterate {
    x: Vec<DMatrix<f64>>,
    s: Vec<DMatrix<f64>>,
    y: DVector<f64>,
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| u * v).sum()
}

/// Largest step `a ≤ 1/γ` keeping `m + a·d` positive definite, given the
/// Cholesky factor `l` of `m`.
fn max_step(l: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    let linv = l
        .clone()
        .try_inverse()
        .expect("Cholesky factor of a positive definite matrix is invertible");
    let w = &linv * d * linv.transpose();
    let w = (&w + w.transpose()) * 0.5;
    let lmin = w.symmetric_eigen().eigenvalues.min();
    if lmin < 0.0 {
        -1.0 / lmin
    } else {
        f64::INFINITY
    }
}

pub fn maximize_min_eigenvalue(
    blocks: &[PencilBlock],
    settings: &SolverSettings,
) -> Result<PencilSolution> {
    let n_theta = blocks.first().map_or(0, |b| b.coeffs.len());
    if blocks.iter().any(|b| b.coeffs.len() != n_theta) {
        return Err(Error::InvalidParameter(
            "all pencil blocks need the same number of coefficients".into(),
        ));
    }
    let m = n_theta + 1;
    let n_total: usize = blocks.iter().map(|b| b.constant.nrows()).sum();

    // Dual-form data: A_k = −F_bk, A_t = I.
    let a_mats: Vec<Vec<DMatrix<f64>>> = blocks
        .iter()
        .map(|b| {
            let n = b.constant.nrows();
            let mut v: Vec<_> = b.coeffs.iter().map(|f| -f).collect();
            v.push(DMatrix::identity(n, n));
            v
        })
        .collect();
    let mut rhs_b = DVector::zeros(m);
    rhs_b[n_theta] = 1.0;

    let c_norm = blocks
        .iter()
        .map(|b| b.constant.norm_squared())
        .sum::<f64>()
        .sqrt();
    let scale = 1.0 + blocks
        .iter()
        .flat_map(|b| b.constant.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));

    let mut it = Iterate {
        x: blocks
            .iter()
            .map(|b| {
                let n = b.constant.nrows();
                DMatrix::identity(n, n) / n_total as f64
            })
            .collect(),
        s: blocks
            .iter()
            .map(|b| {
                let n = b.constant.nrows();
                DMatrix::identity(n, n) * scale
            })
            .collect(),
        y: DVector::zeros(m),
    };
    // Start from t well below every eigenvalue so the dual residual is small.
    it.y[n_theta] = -scale;

    let apply_a = |mats: &[DMatrix<f64>]| -> DVector<f64> {
        let mut out = DVector::zeros(m);
        for (bi, mat) in mats.iter().enumerate() {
            for (k, a) in a_mats[bi].iter().enumerate() {
                out[k] += inner(a, mat);
            }
        }
        out
    };

    let mut gap = f64::INFINITY;
    let mut infeas = f64::INFINITY;
    let mut slow_steps = 0;
    let mut stagnant = 0;
    let mut best: Option<Best> = None;

    'ipm: for iter in 0..settings.max_iter {
        // Residuals.
        let rp = &rhs_b - apply_a(&it.x);
        let rd: Vec<DMatrix<f64>> = blocks
            .iter()
            .enumerate()
            .map(|(bi, b)| {
                let mut r = &b.constant - &it.s[bi];
                for (k, a) in a_mats[bi].iter().enumerate() {
                    r -= a * it.y[k];
                }
                r
            })
            .collect();
        let pobj: f64 = blocks
            .iter()
            .zip(&it.x)
            .map(|(b, x)| inner(&b.constant, x))
            .sum();
        let dobj = it.y[n_theta];
        let xs: f64 = it.x.iter().zip(&it.s).map(|(x, s)| inner(x, s)).sum();
        let mu = xs / n_total as f64;
        let rd_norm = rd.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt();
        let rel_p = rp.norm() / 2.0;
        let rel_d = rd_norm / (1.0 + c_norm);
        infeas = rel_p.max(rel_d);
        gap = (pobj - dobj).abs().max(xs.abs());

        let scale_obj = 1.0 + dobj.abs();
        if gap <= settings.target * scale_obj && infeas <= settings.target {
            return Ok(PencilSolution {
                theta: it.y.as_slice()[..n_theta].to_vec(),
                t: dobj,
                upper_bound: pobj,
                iterations: iter,
                gap,
                infeasibility: infeas,
            });
        }
        let score = (gap / scale_obj).max(infeas);
        if best.as_ref().is_none_or(|b| score < b.score) {
            best = Some(Best {
                score,
                theta: it.y.as_slice()[..n_theta].to_vec(),
                t: dobj,
                upper_bound: pobj,
                iterations: iter,
                gap,
                infeasibility: infeas,
            });
            stagnant = 0;
        } else if mu < settings.accuracy * scale_obj {
            stagnant += 1;
        }
        // Past this point rounding dominates and the iterates only wander.
        if slow_steps >= 8 || stagnant >= 5 || mu < settings.target * 1e-3 {
            break 'ipm;
        }

        // Schur complement M_ij = tr(A_i X A_j S⁻¹).
        let mut s_inv = Vec::with_capacity(blocks.len());
        let mut x_chol = Vec::with_capacity(blocks.len());
        let mut s_chol = Vec::with_capacity(blocks.len());
        for bi in 0..blocks.len() {
            let sc = match it.s[bi].clone().cholesky() {
                Some(c) => c,
                None => break 'ipm,
            };
            let xc = match it.x[bi].clone().cholesky() {
                Some(c) => c,
                None => break 'ipm,
            };
            s_inv.push(sc.inverse());
            s_chol.push(sc.l());
            x_chol.push(xc.l());
        }
        let mut schur = DMatrix::<f64>::zeros(m, m);
        for bi in 0..blocks.len() {
            let x = &it.x[bi];
            let si = &s_inv[bi];
            for j in 0..m {
                let p = x * &a_mats[bi][j] * si;
                let pt = p.transpose();
                for i in 0..=j {
                    let v = inner(&a_mats[bi][i], &pt);
                    schur[(i, j)] += v;
                }
            }
        }
        for j in 0..m {
            for i in 0..j {
                schur[(j, i)] = schur[(i, j)];
            }
        }
        let schur_chol = match schur.clone().cholesky() {
            Some(c) => c,
            None => {
                // Regularize a numerically singular Schur complement.
                let diag_max = schur.diagonal().max().max(1.0);
                let mut reg = schur.clone();
                for i in 0..m {
                    reg[(i, i)] += 1e-14 * diag_max;
                }
                match reg.cholesky() {
                    Some(c) => c,
                    None => break 'ipm,
                }
            }
        };

        let x_rd_sinv: Vec<DMatrix<f64>> = (0..blocks.len())
            .map(|bi| &it.x[bi] * &rd[bi] * &s_inv[bi])
            .collect();
        let a_x_rd_sinv = apply_a(&x_rd_sinv);

        let solve_direction = |k: &[DMatrix<f64>]| {
            let rhs = &rp - apply_a(k) + &a_x_rd_sinv;
            let dy = schur_chol.solve(&rhs);
            let mut ds = Vec::with_capacity(blocks.len());
            let mut dx = Vec::with_capacity(blocks.len());
            for bi in 0..blocks.len() {
                let mut s_dir = rd[bi].clone();
                for (kk, a) in a_mats[bi].iter().enumerate() {
                    s_dir -= a * dy[kk];
                }
                let x_dir = &k[bi] - &it.x[bi] * &s_dir * &s_inv[bi];
                dx.push((&x_dir + x_dir.transpose()) * 0.5);
                ds.push(s_dir);
            }
            (dx, dy, ds)
        };
        let steps = |dx: &[DMatrix<f64>], ds: &[DMatrix<f64>]| {
            let mut ap = f64::INFINITY;
            let mut ad = f64::INFINITY;
            for bi in 0..blocks.len() {
                ap = ap.min(max_step(&x_chol[bi], &dx[bi]));
                ad = ad.min(max_step(&s_chol[bi], &ds[bi]));
            }
            (ap, ad)
        };

        // Predictor.
        let k_aff: Vec<DMatrix<f64>> = it.x.iter().map(|x| -x).collect();
        let (dx_a, _dy_a, ds_a) = solve_direction(&k_aff);
        let (ap_a, ad_a) = steps(&dx_a, &ds_a);
        let (ap_a, ad_a) = (ap_a.min(1.0), ad_a.min(1.0));
        let xs_aff: f64 = (0..blocks.len())
            .map(|bi| inner(&(&it.x[bi] + &dx_a[bi] * ap_a), &(&it.s[bi] + &ds_a[bi] * ad_a)))
            .sum();
        let mu_aff = xs_aff.max(0.0) / n_total as f64;
        let sigma = if mu > 0.0 {
            (mu_aff / mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };

        // Corrector.
        let k_cor: Vec<DMatrix<f64>> = (0..blocks.len())
            .map(|bi| {
                &s_inv[bi] * (sigma * mu) - &it.x[bi] - &dx_a[bi] * &ds_a[bi] * &s_inv[bi]
            })
            .collect();
        let (dx, dy, ds) = solve_direction(&k_cor);
        let (ap, ad) = steps(&dx, &ds);
        let gamma = 0.95;
        let ap = (gamma * ap).min(1.0);
        let ad = (gamma * ad).min(1.0);

        if ap.min(ad) < 1e-6 {
            slow_steps += 1;
        } else {
            slow_steps = 0;
        }
        for bi in 0..blocks.len() {
            it.x[bi] += &dx[bi] * ap;
            it.s[bi] += &ds[bi] * ad;
            let xb = &it.x[bi];
            it.x[bi] = (xb + xb.transpose()) * 0.5;
            let sb = &it.s[bi];
            it.s[bi] = (sb + sb.transpose()) * 0.5;
        }
        it.y += dy * ad;
    }

    match best {
        Some(b) if b.gap <= settings.accuracy && b.infeasibility <= settings.accuracy => {
            Ok(PencilSolution {
                theta: b.theta,
                t: b.t,
                upper_bound: b.upper_bound,
                iterations: b.iterations,
                gap: b.gap,
                infeasibility: b.infeasibility,
            })
        }
        _ => Err(Error::SolverStall {
            iterations: settings.max_iter,
            gap,
            infeasibility: infeas,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sym(n: usize, f: impl Fn(usize, usize) -> f64) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |r, c| f(r.min(c), r.max(c)));
        (&m + m.transpose()) * 0.5
    }

    #[test]
    fn no_parameters_gives_min_eigenvalue() {
        let c = sym(3, |r, c| if r == c { (r + 1) as f64 } else { 0.3 });
        let expected = c.clone().symmetric_eigen().eigenvalues.min();
        let sol = maximize_min_eigenvalue(
            &[PencilBlock {
                constant: c,
                coeffs: vec![],
            }],
            &SolverSettings::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(sol.t, expected, epsilon = 1e-9);
    }

    #[test]
    fn off_diagonal_parameter_is_zeroed() {
        // [[1, 2+θ], [2+θ, 1]] has min eigenvalue 1 − |2+θ|, maximal at θ = −2.
        let constant = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let coeff = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let sol = maximize_min_eigenvalue(
            &[PencilBlock {
                constant,
                coeffs: vec![coeff],
            }],
            &SolverSettings::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(sol.t, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.theta[0], -2.0, epsilon = 1e-5);
    }

    #[test]
    fn two_blocks_share_parameters() {
        // Block 1 wants θ = 1, block 2 wants θ = −1; the compromise is θ = 0.
        let b1 = PencilBlock {
            constant: DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]),
            coeffs: vec![DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])],
        };
        let b2 = PencilBlock {
            constant: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            coeffs: vec![DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])],
        };
        let sol = maximize_min_eigenvalue(&[b1, b2], &SolverSettings::default()).unwrap();
        assert_abs_diff_eq!(sol.t, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.theta[0], 0.0, epsilon = 1e-5);
    }

    #[test]
    fn mismatched_blocks_rejected() {
        let b1 = PencilBlock {
            constant: DMatrix::identity(2, 2),
            coeffs: vec![DMatrix::zeros(2, 2)],
        };
        let b2 = PencilBlock {
            constant: DMatrix::identity(2, 2),
            coeffs: vec![],
        };
        assert!(maximize_min_eigenvalue(&[b1, b2], &SolverSettings::default()).is_err());
    }
}
