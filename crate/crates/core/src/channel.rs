//! Single-mode Gaussian channel models and the quadrature moments they produce.
//!
//! Quadratures follow `x = (a† + a)/√2`, `p = i(a† − a)/√2`, so `[x, p] = i` and
//! the vacuum variance is 1/2. Every variance in this crate uses that unit.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss and thermal noise of a beamsplitter channel: the signal is mixed with
/// a thermal mode of mean photon number `nbar` on a beamsplitter of
/// transmissivity `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    eta: f64,
    nbar: f64,
}

impl ChannelParams {
    pub fn new(eta: f64, nbar: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidParameter(format!(
                "transmissivity must lie in [0, 1], got {eta}"
            )));
        }
        if !(nbar >= 0.0) || !nbar.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "thermal photon number must be finite and >= 0, got {nbar}"
            )));
        }
        Ok(Self { eta, nbar })
    }

    pub fn identity() -> Self {
        Self { eta: 1.0, nbar: 0.0 }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn nbar(&self) -> f64 {
        self.nbar
    }

    /// Quadrature variance added on top of the pure-loss output, `(1 − η)·n̄`.
    pub fn excess_variance(&self) -> f64 {
        (1.0 - self.eta) * self.nbar
    }
}

/// First and second quadrature moments of a single-mode state.
///
/// `cross_re` is `Re⟨x p⟩ = ⟨(xp + px)/2⟩`. Homodyne detection along `x` and
/// `p` does not measure it, in which case it is `None`. The imaginary part of
/// `⟨x p⟩` is fixed to 1/2 by the commutator and stored alongside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub mean_x: f64,
    pub mean_p: f64,
    pub var_x: f64,
    pub var_p: f64,
    pub cross_re: Option<f64>,
    pub cross_im: f64,
}

impl MomentSet {
    pub fn new(mean_x: f64, mean_p: f64, var_x: f64, var_p: f64, cross_re: Option<f64>) -> Self {
        Self {
            mean_x,
            mean_p,
            var_x,
            var_p,
            cross_re,
            cross_im: 0.5,
        }
    }

    /// Moments of a displaced phase-insensitive Gaussian state: both
    /// variances equal `var`, and the symmetrized cross moment factorizes.
    pub fn displaced_thermal(mean: Complex64, var: f64) -> Self {
        let (mx, mp) = (mean.re, mean.im);
        Self::new(mx, mp, var, var, Some(mx * mp))
    }

    /// Drops the symmetrized cross moment, as a homodyne measurement would.
    pub fn homodyne_only(mut self) -> Self {
        self.cross_re = None;
        self
    }

    /// Heisenberg bound `var_x·var_p ≥ 1/4`, with slack `tol`.
    pub fn is_physical(&self, tol: f64) -> bool {
        self.var_x > 0.0 && self.var_p > 0.0 && self.var_x * self.var_p >= 0.25 - tol
    }

    /// Mean vector as a complex number `mean_x + i·mean_p`.
    pub fn mean(&self) -> Complex64 {
        Complex64::new(self.mean_x, self.mean_p)
    }
}

/// Measure-and-prepare channel: heterodyne measurement with outcome `β`,
/// followed by preparation of the coherent state `|gain·β⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MPParams {
    gain: f64,
}

impl MPParams {
    pub fn new(gain: f64) -> Result<Self> {
        if !(gain >= 0.0) || !gain.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "re-preparation gain must be finite and >= 0, got {gain}"
            )));
        }
        Ok(Self { gain })
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }
}

/// Output moments of a coherent input `|α⟩` sent through the loss+noise
/// channel `a → √η a + √(1−η) a_th`.
pub fn apply_loss_noise(ch: &ChannelParams, alpha: Complex64) -> MomentSet {
    let mean = alpha * (2.0 * ch.eta).sqrt();
    MomentSet::displaced_thermal(mean, 0.5 + ch.excess_variance())
}

/// Output moments of a coherent input through the measure-and-prepare
/// channel. The heterodyne outcome has mean `α` and one vacuum unit of
/// spread per quadrature; re-preparing `|gβ⟩` scales that spread by `g²`.
pub fn mp_channel_moments(mp: &MPParams, alpha: Complex64) -> MomentSet {
    let g = mp.gain;
    MomentSet::displaced_thermal(alpha * (g * 2f64.sqrt()), 0.5 + g * g)
}

/// Moments computed from a truncated Fock-space simulation, together with the
/// probability mass lost to truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FockMoments {
    pub moments: MomentSet,
    pub trace_deficit: f64,
}

/// Suggested photon-number cutoff for [`fock_oracle_moments`].
pub fn recommended_cutoff(alpha: Complex64, nbar: f64) -> usize {
    let coherent = (10.0 * alpha.norm_sqr().max(nbar)).ceil() as usize + 20;
    // The thermal weights fall off only geometrically.
    let thermal = if nbar > 0.0 {
        (30.0 / (1.0 + 1.0 / nbar).ln()).ceil() as usize + 20
    } else {
        0
    };
    coherent.max(thermal)
}

/// Brute-force output moments: the coherent state and a thermal ancilla are
/// expanded in the number basis up to `cutoff` photons each, the
/// beamsplitter unitary is applied exactly on every fixed total photon number
/// subspace, and the ancilla output is traced out.
///
/// A cutoff of at least [`recommended_cutoff`] keeps the truncation error
/// well below 1e-8 in trace.
pub fn fock_oracle_moments(
    ch: &ChannelParams,
    alpha: Complex64,
    cutoff: usize,
) -> Result<FockMoments> {
    let dim = 2 * cutoff + 1;
    let theta = ch.eta.sqrt().clamp(0.0, 1.0).acos();

    // Coherent amplitudes e^{-|α|²/2} αⁿ/√n!, built by recursion.
    let mut coherent = Vec::with_capacity(cutoff + 1);
    let mut c = Complex64::from((-0.5 * alpha.norm_sqr()).exp());
    for n in 0..=cutoff {
        if n > 0 {
            c = c * alpha / (n as f64).sqrt();
        }
        coherent.push(c);
    }

    let thermal: Vec<f64> = if ch.nbar == 0.0 {
        vec![1.0]
    } else {
        let ratio = ch.nbar / (1.0 + ch.nbar);
        (0..=cutoff)
            .map(|m| ratio.powi(m as i32) / (1.0 + ch.nbar))
            .collect()
    };

    let unitaries: Vec<DMatrix<f64>> = (0..dim)
        .map(|total| beamsplitter_block(total, theta))
        .collect();

    let mut trace = 0.0;
    let mut a1 = Complex64::new(0.0, 0.0);
    let mut a2 = Complex64::new(0.0, 0.0);
    let mut number = 0.0;

    // amp[k][q]: k photons in the signal output, q in the ancilla output.
    let mut amp = vec![vec![Complex64::new(0.0, 0.0); dim]; dim];
    for (m, &pm) in thermal.iter().enumerate() {
        if pm == 0.0 {
            continue;
        }
        for row in amp.iter_mut() {
            row.fill(Complex64::new(0.0, 0.0));
        }
        for (n, &cn) in coherent.iter().enumerate() {
            let total = n + m;
            let u = &unitaries[total];
            for k in 0..=total {
                amp[k][total - k] += cn * u[(k, n)];
            }
        }
        for k in 0..dim {
            for q in 0..dim {
                let v = amp[k][q];
                let w = v.norm_sqr();
                trace += pm * w;
                number += pm * w * k as f64;
                if k >= 1 {
                    a1 += pm * amp[k - 1][q].conj() * v * (k as f64).sqrt();
                }
                if k >= 2 {
                    a2 += pm * amp[k - 2][q].conj() * v * ((k * (k - 1)) as f64).sqrt();
                }
            }
        }
    }

    if trace < 1.0 - 1e-6 {
        return Err(Error::Truncation { trace });
    }
    let (a1, a2, number) = (a1 / trace, a2 / trace, number / trace);

    let mean_x = 2f64.sqrt() * a1.re;
    let mean_p = 2f64.sqrt() * a1.im;
    let x2 = a2.re + number + 0.5;
    let p2 = -a2.re + number + 0.5;
    let moments = MomentSet::new(
        mean_x,
        mean_p,
        x2 - mean_x * mean_x,
        p2 - mean_p * mean_p,
        Some(a2.im),
    );
    Ok(FockMoments {
        moments,
        trace_deficit: 1.0 - trace,
    })
}

/// `exp(θ(a†b − ab†))` restricted to the subspace spanned by
/// `|k, total − k⟩`, `k = 0..=total`.
fn beamsplitter_block(total: usize, theta: f64) -> DMatrix<f64> {
    let d = total + 1;
    let mut gen = DMatrix::<f64>::zeros(d, d);
    for k in 0..total {
        let v = (((k + 1) * (total - k)) as f64).sqrt();
        gen[(k + 1, k)] = v;
        gen[(k, k + 1)] = -v;
    }
    (gen * theta).exp()
}
