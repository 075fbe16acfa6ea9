//! Noise-threshold search and curves over transmissivity and amplitude.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::covariance_noise_threshold;
use crate::channel::{apply_loss_noise, ChannelParams, MomentSet};
use crate::error::{Error, Result};
use crate::evm::{assemble_partial_evm, assemble_phase_covariant, build_local_block, InputEnsemble, PartialEVM};
use crate::feasibility::{classify, VerdictStatus, DEFAULT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MomentMode {
    /// Means and quadrature variances only; `Re⟨xp⟩` is left free.
    HomodyneOnly,
    FullMoments,
}

impl MomentMode {
    pub fn apply(self, m: MomentSet) -> MomentSet {
        match self {
            MomentMode::HomodyneOnly => m.homodyne_only(),
            MomentMode::FullMoments => m,
        }
    }
}

/// How the EVM is built from simulated output moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assembly {
    /// One measured block per input state.
    #[default]
    Direct,
    /// One block for `|α⟩`, rotated to the other inputs.
    PhaseCovariant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Evm,
    Covariance,
}

impl Criterion {
    pub fn label(self) -> &'static str {
        match self {
            Criterion::Evm => "evm",
            Criterion::Covariance => "covariance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bisection {
    pub lower: f64,
    /// `None` uses `2η/(1−η) + 1`.
    pub upper: Option<f64>,
    pub precision: f64,
}

impl Default for Bisection {
    fn default() -> Self {
        Self {
            lower: 0.0,
            upper: None,
            precision: 1e-3,
        }
    }
}

impl Bisection {
    pub fn upper_for(&self, eta: f64) -> f64 {
        self.upper.unwrap_or(2.0 * eta / (1.0 - eta) + 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub eta_grid: Vec<f64>,
    pub n_states: usize,
    pub alpha: f64,
    pub moment_mode: MomentMode,
    pub tol: f64,
    pub bisection: Bisection,
    #[serde(default)]
    pub assembly: Assembly,
    pub criteria: Vec<Criterion>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            eta_grid: Vec::new(),
            n_states: 3,
            alpha: 0.01,
            moment_mode: MomentMode::FullMoments,
            tol: DEFAULT_TOL,
            bisection: Bisection::default(),
            assembly: Assembly::Direct,
            criteria: vec![Criterion::Evm, Criterion::Covariance],
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(eta) = self.eta_grid.iter().find(|e| !(0.0..1.0).contains(*e)) {
            return Err(Error::InvalidParameter(format!(
                "grid transmissivities must lie in [0, 1), got {eta}"
            )));
        }
        if self.n_states < 2 {
            return Err(Error::InvalidParameter(format!(
                "thresholds need at least 2 input states, got {}",
                self.n_states
            )));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "amplitude must be finite and non-negative, got {}",
                self.alpha
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tolerance must be positive, got {}", self.tol)));
        }
        let b = &self.bisection;
        if !(b.precision > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "bisection precision must be positive, got {}",
                b.precision
            )));
        }
        if !(b.lower >= 0.0) || b.upper.is_some_and(|u| !(u > b.lower)) {
            return Err(Error::InvalidParameter("bisection bracket must satisfy 0 ≤ lower < upper".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub eta: f64,
    pub nbar_threshold: Option<f64>,
    /// `(1−η)·n̄` at the threshold.
    pub excess_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl ThresholdPoint {
    fn from_result(eta: f64, r: Result<f64>) -> Self {
        match r {
            Ok(t) => Self {
                eta,
                nbar_threshold: Some(t),
                excess_variance: Some((1.0 - eta) * t),
                error: None,
            },
            Err(e) => Self {
                eta,
                nbar_threshold: None,
                excess_variance: None,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCurve {
    pub criterion: String,
    pub points: Vec<ThresholdPoint>,
    pub config: SweepConfig,
}

/// EVM for the loss+noise channel under `cfg`'s ensemble and moment mode.
pub fn channel_evm(eta: f64, nbar: f64, cfg: &SweepConfig) -> Result<PartialEVM> {
    let ens = InputEnsemble::equally_spaced(Complex64::new(cfg.alpha, 0.0), cfg.n_states)?;
    let ch = ChannelParams::new(eta, nbar)?;
    match cfg.assembly {
        Assembly::Direct => {
            let moments: Vec<MomentSet> = (0..ens.n_states())
                .map(|j| cfg.moment_mode.apply(apply_loss_noise(&ch, ens.amplitude(j))))
                .collect();
            assemble_partial_evm(&ens, &moments)
        }
        Assembly::PhaseCovariant => {
            let m = cfg.moment_mode.apply(apply_loss_noise(&ch, ens.alpha()));
            let base = build_local_block(&m, ens.probability())?;
            assemble_phase_covariant(&base, &ens)
        }
    }
}

fn is_entangled(eta: f64, nbar: f64, cfg: &SweepConfig) -> Result<bool> {
    let v = classify(&channel_evm(eta, nbar, cfg)?, cfg.tol)?;
    Ok(v.status == VerdictStatus::Entangled)
}

/// Final bisection bracket `(n̄_low, n̄_high)`: entangled at the low end,
/// not at the high end, width at most the configured precision. Both ends
/// equal the lower bound when the channel is not entangled there.
pub fn evm_threshold_bracket(eta: f64, cfg: &SweepConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!(
            "transmissivity must lie in [0, 1), got {eta}"
        )));
    }
    let mut lo = cfg.bisection.lower;
    if eta == 0.0 || !is_entangled(eta, lo, cfg)? {
        return Ok((lo, lo));
    }
    let mut hi = cfg.bisection.upper_for(eta);
    if is_entangled(eta, hi, cfg)? {
        return Err(Error::Bracket { upper: hi });
    }
    while hi - lo > cfg.bisection.precision {
        let mid = 0.5 * (lo + hi);
        if is_entangled(eta, mid, cfg)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, hi))
}

/// Largest thermal photon number at which the EVM test still certifies
/// entanglement, to the bisection precision.
pub fn evm_noise_threshold(eta: f64, cfg: &SweepConfig) -> Result<f64> {
    let (lo, hi) = evm_threshold_bracket(eta, cfg)?;
    Ok(0.5 * (lo + hi))
}

pub fn sweep_criteria(cfg: &SweepConfig) -> Result<Vec<ThresholdCurve>> {
    cfg.validate()?;
    let curves = cfg
        .criteria
        .iter()
        .map(|&criterion| {
            let points = cfg
                .eta_grid
                .par_iter()
                .map(|&eta| {
                    let r = match criterion {
                        Criterion::Evm => evm_noise_threshold(eta, cfg),
                        Criterion::Covariance => covariance_noise_threshold(eta),
                    };
                    ThresholdPoint::from_result(eta, r)
                })
                .collect();
            ThresholdCurve {
                criterion: criterion.label().to_string(),
                points,
                config: cfg.clone(),
            }
        })
        .collect();
    Ok(curves)
}

/// Amplitudes `0.1, 0.2, …, 1.5` searched for the two-state ensemble.
pub fn two_state_alpha_grid() -> Vec<f64> {
    (1..=15).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaPoint {
    pub alpha: f64,
    pub nbar_threshold: Option<f64>,
    pub excess_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// Thresholds against input amplitude for one ensemble size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaCurve {
    pub n_states: usize,
    pub eta: f64,
    pub points: Vec<AlphaPoint>,
    pub config: SweepConfig,
}

impl AlphaCurve {
    /// Largest threshold over the amplitude grid, with its amplitude.
    pub fn best(&self) -> Option<(f64, f64)> {
        self.points
            .iter()
            .filter_map(|p| p.nbar_threshold.map(|t| (p.alpha, t)))
            .fold(None, |acc: Option<(f64, f64)>, (a, t)| match acc {
                Some((_, bt)) if bt >= t => acc,
                _ => Some((a, t)),
            })
    }
}

/// One curve per `N` in `n_list`, evaluated on `alpha_grid` at fixed `η`.
/// `template` supplies the moment mode, tolerance, bisection and assembly.
pub fn alpha_dependence(
    eta: f64,
    n_list: &[usize],
    alpha_grid: &[f64],
    template: &SweepConfig,
) -> Result<Vec<AlphaCurve>> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!(
            "transmissivity must lie in [0, 1), got {eta}"
        )));
    }
    if alpha_grid.iter().any(|a| !(*a > 0.0)) || alpha_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "amplitude grid must be positive and strictly ascending".into(),
        ));
    }
    let configs: Vec<SweepConfig> = n_list
        .iter()
        .map(|&n| SweepConfig {
            eta_grid: vec![eta],
            n_states: n,
            criteria: vec![Criterion::Evm],
            ..template.clone()
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, f64)> = (0..configs.len())
        .flat_map(|i| alpha_grid.iter().map(move |&a| (i, a)))
        .collect();
    let results: Vec<AlphaPoint> = jobs
        .par_iter()
        .map(|&(i, alpha)| {
            let cfg = SweepConfig {
                alpha,
                ..configs[i].clone()
            };
            let p = ThresholdPoint::from_result(eta, evm_noise_threshold(eta, &cfg));
            AlphaPoint {
                alpha,
                nbar_threshold: p.nbar_threshold,
                excess_variance: p.excess_variance,
                error: p.error,
            }
        })
        .collect();
    let mut it = results.into_iter();
    Ok(configs
        .into_iter()
        .map(|config| AlphaCurve {
            n_states: config.n_states,
            eta,
            points: it.by_ref().take(alpha_grid.len()).collect(),
            config,
        })
        .collect())
}

pub fn curves_to_json<T: Serialize>(curves: &[T]) -> Result<String> {
    Ok(serde_json::to_string_pretty(curves)?)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    criterion: &'a str,
    eta: f64,
    nbar_threshold: Option<f64>,
    excess_variance: Option<f64>,
}

fn write_csv<'a>(rows: impl Iterator<Item = CsvRow<'a>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut any = false;
    for row in rows {
        w.serialize(row)?;
        any = true;
    }
    if !any {
        w.write_record(["criterion", "eta", "nbar_threshold", "excess_variance"])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv(csv::Error::from(e.into_error())))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// `criterion,eta,nbar_threshold,excess_variance`; failed points leave the
/// numeric fields empty.
pub fn curves_to_csv(curves: &[ThresholdCurve]) -> Result<String> {
    write_csv(curves.iter().flat_map(|c| {
        c.points.iter().map(move |p| CsvRow {
            criterion: &c.criterion,
            eta: p.eta,
            nbar_threshold: p.nbar_threshold,
            excess_variance: p.excess_variance,
        })
    }))
}

/// Same columns, with the criterion labelled `evm_n{N}_alpha{α}`.
pub fn alpha_curves_to_csv(curves: &[AlphaCurve]) -> Result<String> {
    let labels: Vec<Vec<String>> = curves
        .iter()
        .map(|c| {
            c.points
                .iter()
                .map(|p| format!("evm_n{}_alpha{}", c.n_states, p.alpha))
                .collect()
        })
        .collect();
    write_csv(curves.iter().zip(&labels).flat_map(|(c, l)| {
        c.points.iter().zip(l).map(move |(p, label)| CsvRow {
            criterion: label,
            eta: c.eta,
            nbar_threshold: p.nbar_threshold,
            excess_variance: p.excess_variance,
        })
    }))
}
