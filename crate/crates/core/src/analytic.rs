//! Closed-form Gaussian benchmarks: PPT of a two-mode squeezed state sent
//! through the loss+noise channel, and the classical fidelity bound for a
//! Gaussian ensemble of coherent states.

use nalgebra::{Matrix2, Matrix4};
use num_complex::Complex64;

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::evm::CMatrix;
use crate::feasibility::min_eigenvalue;

/// Tolerance on `V + (i/2)Ω ⪰ 0`.
pub const BONA_FIDE_TOL: f64 = 1e-10;

/// `ν̃` must fall this far below the vacuum value to count as entangled.
pub const SYMPLECTIC_MARGIN: f64 = 1e-12;

/// Standard symplectic form for two modes in `(x_A, p_A, x_B, p_B)` order.
pub fn symplectic_form() -> Matrix4<f64> {
    Matrix4::new(
        0.0, 1.0, 0.0, 0.0, //
        -1.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 1.0, //
        0.0, 0.0, -1.0, 0.0,
    )
}

/// Two-mode covariance matrix, ordering `(x_A, p_A, x_B, p_B)`, vacuum = I/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoModeCovariance {
    matrix: Matrix4<f64>,
}

impl TwoModeCovariance {
    pub fn new(matrix: Matrix4<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("covariance has non-finite entries".into()));
        }
        let deviation = (matrix - matrix.transpose()).abs().max();
        if deviation > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "covariance is not symmetric (deviation {deviation:.3e})"
            )));
        }
        Ok(Self {
            matrix: (matrix + matrix.transpose()) * 0.5,
        })
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn block_a(&self) -> Matrix2<f64> {
        self.matrix.fixed_view::<2, 2>(0, 0).into_owned()
    }

    pub fn block_b(&self) -> Matrix2<f64> {
        self.matrix.fixed_view::<2, 2>(2, 2).into_owned()
    }

    pub fn block_c(&self) -> Matrix2<f64> {
        self.matrix.fixed_view::<2, 2>(0, 2).into_owned()
    }

    /// Smallest eigenvalue of `V + (i/2)Ω`; non-negative for physical states.
    pub fn bona_fide_eigenvalue(&self) -> f64 {
        let omega = symplectic_form();
        let h = CMatrix::from_fn(4, 4, |r, c| {
            Complex64::new(self.matrix[(r, c)], 0.5 * omega[(r, c)])
        });
        min_eigenvalue(&h)
    }

    pub fn is_bona_fide(&self) -> bool {
        self.bona_fide_eigenvalue() >= -BONA_FIDE_TOL
    }

    /// `p_B → −p_B`, the partial transpose on mode B.
    pub fn partial_transpose(&self) -> Self {
        let flip = Matrix4::from_diagonal(&nalgebra::Vector4::new(1.0, 1.0, 1.0, -1.0));
        Self {
            matrix: flip * self.matrix * flip,
        }
    }

    /// Symplectic eigenvalues in ascending order.
    ///
    /// `V^{1/2}(iΩ)V^{1/2}` is Hermitian with spectrum `±ν_k`, so a Hermitian
    /// eigensolve suffices. Requires `V` positive definite.
    pub fn symplectic_eigenvalues(&self) -> Result<[f64; 2]> {
        let eig = self.matrix.symmetric_eigen();
        let lmin = eig.eigenvalues.min();
        if !(lmin > 0.0) {
            return Err(Error::NonPhysicalCovariance { min_eigenvalue: lmin });
        }
        let sqrt_v = eig.eigenvectors
            * Matrix4::from_diagonal(&eig.eigenvalues.map(f64::sqrt))
            * eig.eigenvectors.transpose();
        let k = sqrt_v * symplectic_form() * sqrt_v;
        let h = CMatrix::from_fn(4, 4, |r, c| Complex64::new(0.0, k[(r, c)]));
        let h = (&h + h.adjoint()) * Complex64::from(0.5);
        let mut ev: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        // Ascending ±ν: the two positive ones are the last two.
        Ok([ev[2], ev[3]])
    }
}

/// Two-mode squeezed vacuum with squeezing `r`.
pub fn tmss_covariance(r: f64) -> Result<TwoModeCovariance> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "squeezing must be finite and non-negative, got {r}"
        )));
    }
    let ch = 0.5 * (2.0 * r).cosh();
    let sh = 0.5 * (2.0 * r).sinh();
    TwoModeCovariance::new(Matrix4::new(
        ch, 0.0, sh, 0.0, //
        0.0, ch, 0.0, -sh, //
        sh, 0.0, ch, 0.0, //
        0.0, -sh, 0.0, ch,
    ))
}

/// Sends mode B through the loss+noise channel.
pub fn channel_on_covariance(ch: &ChannelParams, cm: &TwoModeCovariance) -> TwoModeCovariance {
    let eta = ch.eta();
    let noise = (1.0 - eta) * (0.5 + ch.nbar());
    let mut m = cm.matrix;
    let s = eta.sqrt();
    for r in 0..4 {
        for c in 0..4 {
            let (rb, cb) = (r >= 2, c >= 2);
            m[(r, c)] *= match (rb, cb) {
                (false, false) => 1.0,
                (true, true) => eta,
                _ => s,
            };
        }
    }
    for k in 2..4 {
        m[(k, k)] += noise;
    }
    TwoModeCovariance { matrix: m }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PptWitness {
    pub entangled: bool,
    /// Smallest symplectic eigenvalue of the partially transposed state.
    pub nu_min: f64,
}

pub fn ppt_entangled(cm: &TwoModeCovariance) -> Result<PptWitness> {
    let lmin = cm.bona_fide_eigenvalue();
    if lmin < -BONA_FIDE_TOL {
        return Err(Error::NonPhysicalCovariance { min_eigenvalue: lmin });
    }
    let nu_min = cm.partial_transpose().symplectic_eigenvalues()?[0];
    Ok(PptWitness {
        entangled: nu_min < 0.5 - SYMPLECTIC_MARGIN,
        nu_min,
    })
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!(
            "transmissivity must lie in [0, 1], got {eta}"
        )));
    }
    Ok(())
}

/// Largest thermal photon number `η/(1−η)` for which the squeezed-state
/// test still detects entanglement. Infinite at `η = 1`.
pub fn covariance_noise_threshold(eta: f64) -> Result<f64> {
    check_eta(eta)?;
    if eta == 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok(eta / (1.0 - eta))
}

/// The same threshold found by bisection over [`ppt_entangled`] at squeezing `r`.
pub fn covariance_threshold_bisection(eta: f64, r: f64, precision: f64) -> Result<f64> {
    check_eta(eta)?;
    if eta == 1.0 {
        return Ok(f64::INFINITY);
    }
    if !(precision > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "precision must be positive, got {precision}"
        )));
    }
    let cm = tmss_covariance(r)?;
    let entangled_at = |nbar: f64| -> Result<bool> {
        let ch = ChannelParams::new(eta, nbar)?;
        Ok(ppt_entangled(&channel_on_covariance(&ch, &cm))?.entangled)
    };
    if !entangled_at(0.0)? {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 2.0 * eta / (1.0 - eta) + 1.0;
    if entangled_at(hi)? {
        return Err(Error::Bracket { upper: hi });
    }
    while hi - lo > precision {
        let mid = 0.5 * (lo + hi);
        if entangled_at(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Best average fidelity of a measure-and-prepare strategy for a Gaussian
/// distribution of coherent amplitudes with inverse width `λ`, sent through
/// loss `η`. `λ = ∞` means a single known state.
pub fn gaussian_fidelity_bound(lambda: f64, eta: f64) -> Result<f64> {
    check_eta(eta)?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    if lambda.is_infinite() {
        return Ok(1.0);
    }
    Ok((1.0 + lambda) / (1.0 + lambda + eta))
}

/// Added quadrature variance over the pure-loss output, `(1−η)·n̄`.
pub fn excess_variance(ch: &ChannelParams) -> f64 {
    ch.excess_variance()
}
