//! Measured-moments input files.

use anyhow::{bail, Context, Result};
use cvbench::channel::MomentSet;
use cvbench::evm::{
    assemble_partial_evm_unchecked, assemble_phase_covariant, local_block_unchecked, InputEnsemble,
    PartialEVM, PHYSICALITY_TOL,
};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileMode {
    Direct,
    PhaseCovariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateMoments {
    /// Input phase of this state.
    pub phase: f64,
    pub mean_x: f64,
    pub mean_p: f64,
    pub var_x: f64,
    pub var_p: f64,
    /// Symmetrized covariance of x and p; absent for homodyne-only data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_re: Option<f64>,
}

impl StateMoments {
    pub fn moment_set(&self) -> MomentSet {
        MomentSet::new(self.mean_x, self.mean_p, self.var_x, self.var_p, self.cross_re)
    }
}

/// In `direct` mode `states` lists one entry per input. In
/// `phase_covariant` mode it holds the single measured state, and the
/// ensemble is given by `phases` or by `n_states` equally spaced phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsFile {
    pub mode: FileMode,
    pub alpha: f64,
    pub states: Vec<StateMoments>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_states: Option<usize>,
}

/// A state whose variances break the uncertainty relation.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalityWarning {
    pub state: usize,
    pub product: f64,
}

impl std::fmt::Display for PhysicalityWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "UNPHYSICAL data: states[{}] has var_x*var_p = {:.6} < 1/4",
            self.state, self.product
        )
    }
}

impl MomentsFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: MomentsFile = serde_json::from_str(text).map_err(|e| {
            anyhow::anyhow!("line {}, column {}: {e}", e.line(), e.column())
        })?;
        file.validate()?;
        Ok(file)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            bail!("field `alpha`: must be finite and non-negative, got {}", self.alpha);
        }
        if self.states.is_empty() {
            bail!("field `states`: at least one state is required");
        }
        for (i, s) in self.states.iter().enumerate() {
            let fields = [
                ("phase", s.phase),
                ("mean_x", s.mean_x),
                ("mean_p", s.mean_p),
                ("var_x", s.var_x),
                ("var_p", s.var_p),
            ];
            for (name, v) in fields {
                if !v.is_finite() {
                    bail!("field `states[{i}].{name}`: must be finite, got {v}");
                }
            }
            for (name, v) in [("var_x", s.var_x), ("var_p", s.var_p)] {
                if v <= 0.0 {
                    bail!("field `states[{i}].{name}`: must be positive, got {v}");
                }
            }
            if let Some(c) = s.cross_re {
                if !c.is_finite() {
                    bail!("field `states[{i}].cross_re`: must be finite, got {c}");
                }
            }
        }
        match self.mode {
            FileMode::Direct => {
                if self.phases.is_some() || self.n_states.is_some() {
                    bail!("fields `phases`/`n_states` only apply to phase_covariant mode");
                }
            }
            FileMode::PhaseCovariant => {
                if self.states.len() != 1 {
                    bail!(
                        "field `states`: phase_covariant mode takes exactly one state, got {}",
                        self.states.len()
                    );
                }
                match (&self.phases, self.n_states) {
                    (Some(_), None) | (None, Some(_)) => {}
                    _ => bail!("phase_covariant mode needs exactly one of `phases` or `n_states`"),
                }
            }
        }
        Ok(())
    }

    pub fn physicality_warnings(&self) -> Vec<PhysicalityWarning> {
        self.states
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.moment_set().is_physical(PHYSICALITY_TOL))
            .map(|(state, s)| PhysicalityWarning {
                state,
                product: s.var_x * s.var_p,
            })
            .collect()
    }

    /// Builds the EVM without rejecting unphysical blocks, so that the
    /// solver can report them.
    pub fn to_evm(&self) -> Result<PartialEVM> {
        match self.mode {
            FileMode::Direct => {
                let phases = self.states.iter().map(|s| s.phase).collect();
                let ens = InputEnsemble::with_phases(Complex64::new(self.alpha, 0.0), phases)
                    .context("field `states[].phase`")?;
                let moments: Vec<MomentSet> = self.states.iter().map(StateMoments::moment_set).collect();
                Ok(assemble_partial_evm_unchecked(&ens, &moments)?)
            }
            FileMode::PhaseCovariant => {
                let s = &self.states[0];
                let phases = match (&self.phases, self.n_states) {
                    (Some(p), _) => p.clone(),
                    (None, Some(n)) => {
                        let ens = InputEnsemble::equally_spaced(Complex64::new(self.alpha, 0.0), n)
                            .context("field `n_states`")?;
                        ens.phases().to_vec()
                    }
                    (None, None) => unreachable!("validated"),
                };
                // Measure phases from the measured state so it sits at phase zero.
                let alpha = Complex64::from_polar(self.alpha, s.phase);
                let relative = phases.iter().map(|p| p - s.phase).collect();
                let ens = InputEnsemble::with_phases(alpha, relative).context("field `phases`")?;
                let base = local_block_unchecked(&s.moment_set(), ens.probability());
                Ok(assemble_phase_covariant(&base, &ens)?)
            }
        }
    }
}
