//! Semidefinite completion of a [`PartialEVM`].
//!
//! The question is whether the free entries can be chosen so that the EVM
//! and its partial transpose are both positive semidefinite. It is answered
//! quantitatively: the margin `t*` is the largest achievable lower bound on
//! the smallest eigenvalue of all constrained matrices. A negative margin
//! means no completion exists.

pub mod sdp;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evm::{partial_transpose, CMatrix, PartialEVM};

pub use sdp::SolverSettings;

/// Default verdict tolerance on the margin.
pub const DEFAULT_TOL: f64 = 1e-7;

/// Relative eigenvalue floor used when whitening the overlap block.
pub const DEFAULT_WHITENING_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConstraintSet {
    /// `χ ⪰ 0`.
    PhysicalOnly,
    /// `χ ⪰ 0` and `χ^{T_A} ⪰ 0`.
    PhysicalAndPpt,
}

/// Frame in which eigenvalues are measured.
///
/// For coherent inputs of small amplitude the overlap block is nearly
/// singular, which squeezes every margin towards zero. `OverlapWhitening`
/// applies the local filter `T ⊗ I₃` to `χ` (and `T̄ ⊗ I₃` to `χ^{T_A}`), with
/// `T` the inverse square root of the overlap block, eigenvalues clamped
/// from below at `floor·λ_max`. `T` is invertible, so the set of feasible
/// completions is unchanged; only the scale of the margin differs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Normalization {
    None,
    OverlapWhitening { floor: f64 },
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::OverlapWhitening {
            floor: DEFAULT_WHITENING_FLOOR,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeasibilityProblem {
    pub evm: PartialEVM,
    pub constraint_set: ConstraintSet,
    pub normalization: Normalization,
}

impl FeasibilityProblem {
    /// Raw margin, no normalization.
    pub fn new(evm: PartialEVM, constraint_set: ConstraintSet) -> Self {
        Self {
            evm,
            constraint_set,
            normalization: Normalization::None,
        }
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    /// Number of real free parameters.
    pub fn dimension(&self) -> usize {
        self.evm.n_free()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Smallest eigenvalue over all constrained matrices at `optimizer`.
    pub margin: f64,
    pub optimizer: Vec<f64>,
    /// Per constrained matrix (EVM first, then its partial transpose).
    pub min_eigenvalues: Vec<f64>,
    /// Primal objective of the solver, an upper bound on the supremum.
    pub upper_bound: f64,
    pub iterations: usize,
    pub gap: f64,
    pub infeasibility: f64,
}

/// Real symmetric embedding `[[Re h, −Im h], [Im h, Re h]]` of a Hermitian
/// matrix. Its spectrum is that of `h` with every eigenvalue doubled.
pub fn realify(h: &CMatrix) -> Result<DMatrix<f64>> {
    let d = h.nrows();
    if h.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: h.ncols(),
        });
    }
    let mut deviation: f64 = 0.0;
    for r in 0..d {
        for c in r..d {
            deviation = deviation.max((h[(r, c)] - h[(c, r)].conj()).norm());
        }
    }
    if deviation > 1e-12 {
        return Err(Error::NotHermitian { deviation });
    }
    Ok(realify_unchecked(h))
}

fn realify_unchecked(h: &CMatrix) -> DMatrix<f64> {
    let d = h.nrows();
    let mut out = DMatrix::zeros(2 * d, 2 * d);
    for r in 0..d {
        for c in 0..d {
            let v = h[(r, c)];
            out[(r, c)] = v.re;
            out[(r + d, c + d)] = v.re;
            out[(r, c + d)] = -v.im;
            out[(r + d, c)] = v.im;
        }
    }
    // Exact symmetry, so that eigen-solvers see the same matrix either way.
    let t = out.transpose();
    (out + t) * 0.5
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(h: &CMatrix) -> f64 {
    h.clone().symmetric_eigen().eigenvalues.min()
}

/// Local filter `T` for the overlap block `o`.
fn whitening_filter(o: &CMatrix, floor: f64) -> CMatrix {
    let eig = o.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
    let n = o.nrows();
    let mut t = eig.eigenvectors.adjoint();
    for k in 0..n {
        let s = 1.0 / eig.eigenvalues[k].max(floor * lmax).sqrt();
        for c in 0..n {
            t[(k, c)] *= Complex64::from(s);
        }
    }
    t
}

fn kron_identity3(t: &CMatrix) -> CMatrix {
    let n = t.nrows();
    let mut out = CMatrix::zeros(3 * n, 3 * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..3 {
                out[(3 * i + k, 3 * j + k)] = t[(i, j)];
            }
        }
    }
    out
}

/// An affine Hermitian family `constant + Σ θ_k coeffs[k]`.
struct ComplexPencil {
    constant: CMatrix,
    coeffs: Vec<CMatrix>,
}

impl ComplexPencil {
    fn congruence(self, t: &CMatrix) -> Self {
        let td = t.adjoint();
        let f = |m: &CMatrix| {
            let r = t * m * &td;
            (&r + r.adjoint()) * Complex64::from(0.5)
        };
        Self {
            constant: f(&self.constant),
            coeffs: self.coeffs.iter().map(f).collect(),
        }
    }

    fn at(&self, theta: &[f64]) -> CMatrix {
        let mut m = self.constant.clone();
        for (c, &t) in self.coeffs.iter().zip(theta) {
            m += c * Complex64::from(t);
        }
        m
    }
}

fn pencils(p: &FeasibilityProblem) -> Result<Vec<ComplexPencil>> {
    let evm = &p.evm;
    let n = evm.n_states();
    let dim = evm.dim();
    let coeffs: Vec<CMatrix> = evm
        .free_directions()
        .iter()
        .map(|d| d.to_matrix(dim))
        .collect();
    let mut out = vec![ComplexPencil {
        constant: evm.base().clone(),
        coeffs: coeffs.clone(),
    }];
    if p.constraint_set == ConstraintSet::PhysicalAndPpt {
        out.push(ComplexPencil {
            constant: partial_transpose(evm.base(), n)?,
            coeffs: coeffs
                .iter()
                .map(|c| partial_transpose(c, n))
                .collect::<Result<_>>()?,
        });
    }
    if let Normalization::OverlapWhitening { floor } = p.normalization {
        if let Some(o) = evm.overlap_block() {
            let t = whitening_filter(&o, floor);
            let t_conj = t.map(|v| v.conj());
            let filters = [kron_identity3(&t), kron_identity3(&t_conj)];
            out = out
                .into_iter()
                .zip(filters.iter())
                .map(|(pen, f)| pen.congruence(f))
                .collect();
        }
    }
    Ok(out)
}

/// The same affine family re-expressed over an orthonormal basis of the
/// span of its directions, with the constant's component in that span
/// removed. The optimum depends only on the span, and an orthonormal basis
/// keeps the solver's Schur complement well conditioned even when the
/// whitening filter makes the original directions differ in scale by many
/// orders of magnitude.
struct OrthonormalPencil {
    blocks: Vec<sdp::PencilBlock>,
    r: DMatrix<f64>,
    norms: Vec<f64>,
    offset: nalgebra::DVector<f64>,
}

impl OrthonormalPencil {
    fn new(blocks: &[sdp::PencilBlock]) -> Result<Self> {
        let m = blocks[0].coeffs.len();
        let len: usize = blocks.iter().map(|b| b.constant.len()).sum();
        let mut v = DMatrix::<f64>::zeros(len, m);
        for k in 0..m {
            let mut row = 0;
            for b in blocks {
                for (i, x) in b.coeffs[k].iter().enumerate() {
                    v[(row + i, k)] = *x;
                }
                row += b.constant.len();
            }
        }
        // Equilibrate columns first: whitened directions span many decades.
        let norms: Vec<f64> = (0..m).map(|k| v.column(k).norm()).collect();
        for (k, nk) in norms.iter().enumerate() {
            if *nk == 0.0 {
                return Err(Error::InvalidParameter("free direction is zero".into()));
            }
            v.column_mut(k).scale_mut(1.0 / nk);
        }
        let qr = v.qr();
        let q = qr.q();
        let r = qr.r();
        let rmax = r.diagonal().iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if r.diagonal().iter().any(|x| x.abs() <= 1e-13 * rmax) {
            return Err(Error::InvalidParameter(
                "free directions are linearly dependent".into(),
            ));
        }
        let mut c = nalgebra::DVector::<f64>::zeros(len);
        let mut row = 0;
        for b in blocks {
            for (i, x) in b.constant.iter().enumerate() {
                c[row + i] = *x;
            }
            row += b.constant.len();
        }
        let offset = q.transpose() * &c;
        let reduced = &c - &q * &offset;

        let mut out = Vec::with_capacity(blocks.len());
        let mut row = 0;
        for b in blocks {
            let (nr, nc) = b.constant.shape();
            let take = |col: &dyn Fn(usize) -> f64| {
                let m = DMatrix::from_fn(nr, nc, |i, j| col(row + i + j * nr));
                (&m + m.transpose()) * 0.5
            };
            let constant = take(&|idx| reduced[idx]);
            let coeffs = (0..m).map(|k| take(&|idx| q[(idx, k)])).collect();
            out.push(sdp::PencilBlock { constant, coeffs });
            row += b.constant.len();
        }
        Ok(Self {
            blocks: out,
            r,
            norms,
            offset,
        })
    }

    /// Maps solver parameters back to the original directions.
    fn original_parameters(&self, theta: &[f64]) -> Vec<f64> {
        let rhs = nalgebra::DVector::from_column_slice(theta) - &self.offset;
        let scaled = self
            .r
            .clone()
            .solve_upper_triangular(&rhs)
            .expect("R has a nonzero diagonal");
        scaled.iter().zip(&self.norms).map(|(t, n)| t / n).collect()
    }
}

/// Largest lower bound `t*` on the smallest eigenvalue over completions.
pub fn max_margin(p: &FeasibilityProblem) -> Result<FeasibilityReport> {
    max_margin_with(p, &SolverSettings::default())
}

pub fn max_margin_with(p: &FeasibilityProblem, settings: &SolverSettings) -> Result<FeasibilityReport> {
    let pens = pencils(p)?;
    let (theta, iterations, gap, infeasibility, upper) = if p.dimension() == 0 {
        (Vec::new(), 0, 0.0, 0.0, None)
    } else {
        let blocks: Vec<sdp::PencilBlock> = pens
            .iter()
            .map(|pen| sdp::PencilBlock {
                constant: realify_unchecked(&pen.constant),
                coeffs: pen.coeffs.iter().map(realify_unchecked).collect(),
            })
            .collect();
        let basis = OrthonormalPencil::new(&blocks)?;
        let sol = sdp::maximize_min_eigenvalue(&basis.blocks, settings)?;
        let theta = basis.original_parameters(&sol.theta);
        (theta, sol.iterations, sol.gap, sol.infeasibility, Some(sol.upper_bound))
    };
    let min_eigenvalues: Vec<f64> = pens.iter().map(|pen| min_eigenvalue(&pen.at(&theta))).collect();
    let margin = min_eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let upper_bound = upper.unwrap_or(margin);
    if upper_bound - margin > settings.accuracy {
        return Err(Error::SolverStall {
            iterations,
            gap: upper_bound - margin,
            infeasibility,
        });
    }
    Ok(FeasibilityReport {
        margin,
        optimizer: theta,
        min_eigenvalues,
        upper_bound,
        iterations,
        gap,
        infeasibility,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictStatus {
    /// Some completion is physical, none is compatible with a separable state.
    Entangled,
    /// A physical completion with positive partial transpose exists.
    Compatible,
    /// No completion is positive semidefinite.
    Unphysical,
}

impl VerdictStatus {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(self) -> i32 {
        match self {
            VerdictStatus::Compatible => 0,
            VerdictStatus::Entangled => 2,
            VerdictStatus::Unphysical => 3,
        }
    }
}

impl std::fmt::Display for VerdictStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            VerdictStatus::Entangled => "ENTANGLED",
            VerdictStatus::Compatible => "COMPATIBLE",
            VerdictStatus::Unphysical => "UNPHYSICAL",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    /// Margin of the deciding stage: the physical margin for UNPHYSICAL,
    /// the PPT margin otherwise.
    pub margin: f64,
    pub physical_margin: f64,
    pub ppt_margin: Option<f64>,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    pub tol: f64,
    pub normalization: Normalization,
    pub solver: SolverSettings,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            normalization: Normalization::default(),
            solver: SolverSettings::default(),
        }
    }
}

/// Decides whether the data certifies entanglement. Margins within `tol` of
/// zero count as feasible, so borderline data is never reported as
/// entangled.
pub fn classify(evm: &PartialEVM, tol: f64) -> Result<Verdict> {
    classify_with(
        evm,
        &ClassifyOptions {
            tol,
            ..ClassifyOptions::default()
        },
    )
}

pub fn classify_with(evm: &PartialEVM, opts: &ClassifyOptions) -> Result<Verdict> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {}",
            opts.tol
        )));
    }
    let phys = FeasibilityProblem::new(evm.clone(), ConstraintSet::PhysicalOnly)
        .with_normalization(opts.normalization);
    let t_phys = max_margin_with(&phys, &opts.solver)?.margin;
    if t_phys < -opts.tol {
        return Ok(Verdict {
            status: VerdictStatus::Unphysical,
            margin: t_phys,
            physical_margin: t_phys,
            ppt_margin: None,
            tolerance: opts.tol,
        });
    }
    let ppt = FeasibilityProblem::new(evm.clone(), ConstraintSet::PhysicalAndPpt)
        .with_normalization(opts.normalization);
    let t_ppt = max_margin_with(&ppt, &opts.solver)?.margin;
    let status = if t_ppt < -opts.tol {
        VerdictStatus::Entangled
    } else {
        VerdictStatus::Compatible
    };
    Ok(Verdict {
        status,
        margin: t_ppt,
        physical_margin: t_phys,
        ppt_margin: Some(t_ppt),
        tolerance: opts.tol,
    })
}
