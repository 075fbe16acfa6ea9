//! Partially specified expectation value matrices (EVMs).
//!
//! For an ensemble of `N` coherent inputs `|φ_j⟩` the effective bipartite
//! state is `N^{-1/2} Σ_j |j⟩_A |φ_j⟩_B`. After the channel acts on `B`, the
//! EVM has a 3×3 block for every pair `(i, j)` of `A` labels, indexed by the
//! operators `(1, x, p)` on `B`. Diagonal blocks hold the measured moments of
//! each output; off-diagonal blocks are known only through their top-left
//! entry, the input overlap. Everything else is a free parameter.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::MomentSet;
use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Tolerance on the uncertainty product when building blocks from moments.
pub const PHYSICALITY_TOL: f64 = 1e-9;

/// Equiprobable coherent states `|α·e^{iφ_j}⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputEnsemble {
    alpha: Complex64,
    phases: Vec<f64>,
}

impl InputEnsemble {
    /// `N` equally spaced phases `2πj/N`, `j = 1..=N`.
    pub fn equally_spaced(alpha: Complex64, n_states: usize) -> Result<Self> {
        let phases = (1..=n_states)
            .map(|j| 2.0 * PI * j as f64 / n_states as f64)
            .collect();
        Self::with_phases(alpha, phases)
    }

    pub fn with_phases(alpha: Complex64, phases: Vec<f64>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::InvalidParameter("ensemble needs at least one state".into()));
        }
        if phases.iter().any(|p| !p.is_finite()) || !alpha.re.is_finite() || !alpha.im.is_finite() {
            return Err(Error::InvalidParameter("non-finite amplitude or phase".into()));
        }
        for (i, a) in phases.iter().enumerate() {
            for b in &phases[i + 1..] {
                let d = (a - b).rem_euclid(2.0 * PI);
                if d < 1e-12 || 2.0 * PI - d < 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "phases {a} and {b} coincide modulo 2π"
                    )));
                }
            }
        }
        Ok(Self { alpha, phases })
    }

    pub fn alpha(&self) -> Complex64 {
        self.alpha
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn n_states(&self) -> usize {
        self.phases.len()
    }

    pub fn probability(&self) -> f64 {
        1.0 / self.n_states() as f64
    }

    /// Amplitude of state `j` (zero-based).
    pub fn amplitude(&self, j: usize) -> Complex64 {
        self.alpha * Complex64::from_polar(1.0, self.phases[j])
    }
}

/// `⟨φ_j|φ_i⟩` for zero-based indices.
pub fn input_overlap(ensemble: &InputEnsemble, i: usize, j: usize) -> Result<Complex64> {
    let n = ensemble.n_states();
    for index in [i, j] {
        if index >= n {
            return Err(Error::IndexOutOfRange { index, n_states: n });
        }
    }
    let (ai, aj) = (ensemble.amplitude(i), ensemble.amplitude(j));
    Ok((-0.5 * ai.norm_sqr() - 0.5 * aj.norm_sqr() + aj.conj() * ai).exp())
}

/// The `N×N` matrix `(1/N)⟨φ_i|φ_j⟩` of top-left block entries.
pub fn overlap_matrix(ensemble: &InputEnsemble) -> CMatrix {
    let n = ensemble.n_states();
    let w = ensemble.probability();
    CMatrix::from_fn(n, n, |i, j| {
        input_overlap(ensemble, j, i).expect("indices in range") * w
    })
}

/// One diagonal EVM block, `w·⟨M_k M_l⟩` for `M = (1, x, p)`.
///
/// `free` lists real symmetric directions along which the block is not
/// determined by the data. A homodyne-only block has one: the real part of
/// `⟨x p⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBlock {
    pub entries: Matrix3<Complex64>,
    pub free: Vec<Matrix3<Complex64>>,
}

impl LocalBlock {
    /// Entries not touched by any free direction.
    pub fn known_mask(&self) -> [[bool; 3]; 3] {
        let mut mask = [[true; 3]; 3];
        for d in &self.free {
            for (r, row) in mask.iter_mut().enumerate() {
                for (c, known) in row.iter_mut().enumerate() {
                    if d[(r, c)] != ZERO {
                        *known = false;
                    }
                }
            }
        }
        mask
    }

    /// `entry(1,2) − entry(2,1) − i·entry(0,0)`, zero for a valid block.
    pub fn commutator_defect(&self) -> Complex64 {
        self.entries[(1, 2)] - self.entries[(2, 1)] - I * self.entries[(0, 0)]
    }
}

/// Diagonal block from moments. An unknown `cross_re` leaves the real part
/// of `⟨x p⟩` free; its imaginary part stays at `weight/2`.
pub fn build_local_block(m: &MomentSet, weight: f64) -> Result<LocalBlock> {
    if !m.is_physical(PHYSICALITY_TOL) {
        return Err(Error::Physicality {
            product: m.var_x * m.var_p,
        });
    }
    Ok(local_block_unchecked(m, weight))
}

/// [`build_local_block`] without the uncertainty check, for data that is
/// handed to the solver to be flagged as unphysical.
pub fn local_block_unchecked(m: &MomentSet, weight: f64) -> LocalBlock {
    let (mx, mp) = (m.mean_x, m.mean_p);
    let cross = Complex64::new(m.cross_re.unwrap_or(0.0), m.cross_im);
    let c = |v: f64| Complex64::from(v);
    let entries = Matrix3::new(
        ONE,
        c(mx),
        c(mp),
        c(mx),
        c(m.var_x + mx * mx),
        cross,
        c(mp),
        cross.conj(),
        c(m.var_p + mp * mp),
    ) * Complex64::from(weight);
    let free = if m.cross_re.is_none() {
        let mut d = Matrix3::zeros();
        d[(1, 2)] = ONE;
        d[(2, 1)] = ONE;
        vec![d]
    } else {
        Vec::new()
    };
    LocalBlock { entries, free }
}

fn rotation(phi: f64) -> Matrix3<Complex64> {
    let (s, c) = phi.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c).map(Complex64::from)
}

/// `R(φ)·b·R(φ)ᵀ`: the block of the same channel output after a phase shift
/// `φ` of the input, for a phase-covariant channel.
pub fn rotate_block(b: &LocalBlock, phi: f64) -> LocalBlock {
    let r = rotation(phi);
    let rt = r.transpose();
    LocalBlock {
        entries: r * b.entries * rt,
        free: b.free.iter().map(|d| r * d * rt).collect(),
    }
}

/// A real direction of the affine family of completions, as upper-triangle
/// entries `(row, col, coefficient)`. The lower triangle is implied by
/// Hermiticity; diagonal coefficients must be real.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeDirection {
    pub entries: Vec<(usize, usize, Complex64)>,
}

impl FreeDirection {
    fn single(row: usize, col: usize, coeff: Complex64) -> Self {
        Self {
            entries: vec![(row, col, coeff)],
        }
    }

    fn from_block(d: &Matrix3<Complex64>, offset: usize) -> Self {
        let mut entries = Vec::new();
        for r in 0..3 {
            for c in r..3 {
                if d[(r, c)] != ZERO {
                    entries.push((offset + r, offset + c, d[(r, c)]));
                }
            }
        }
        Self { entries }
    }

    /// The Hermitian matrix this direction adds per unit parameter.
    pub fn to_matrix(&self, dim: usize) -> CMatrix {
        let mut m = CMatrix::zeros(dim, dim);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
            if r != c {
                m[(c, r)] += v.conj();
            }
        }
        m
    }
}

/// The 3N×3N EVM as `base + Σ_k θ_k·H_k` over real parameters `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialEVM {
    n_states: usize,
    base: CMatrix,
    free: Vec<FreeDirection>,
}

impl PartialEVM {
    pub fn new(n_states: usize, base: CMatrix, free: Vec<FreeDirection>) -> Result<Self> {
        let dim = 3 * n_states;
        if n_states == 0 {
            return Err(Error::InvalidParameter("EVM needs at least one state".into()));
        }
        if base.nrows() != dim || base.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: base.nrows().max(base.ncols()),
            });
        }
        let deviation = hermitian_deviation(&base);
        if deviation > 1e-12 {
            return Err(Error::NotHermitian { deviation });
        }
        for d in &free {
            for &(r, c, v) in &d.entries {
                if r > c || c >= dim {
                    return Err(Error::InvalidParameter(format!(
                        "free direction entry ({r}, {c}) is not in the upper triangle of a {dim}×{dim} matrix"
                    )));
                }
                if r == c && v.im != 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "free direction on diagonal entry {r} must be real"
                    )));
                }
            }
        }
        Ok(Self { n_states, base, free })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn dim(&self) -> usize {
        3 * self.n_states
    }

    pub fn base(&self) -> &CMatrix {
        &self.base
    }

    pub fn free_directions(&self) -> &[FreeDirection] {
        &self.free
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    /// `true` where an entry is fixed by the data.
    pub fn fixed_mask(&self) -> DMatrix<bool> {
        let mut mask = DMatrix::from_element(self.dim(), self.dim(), true);
        for d in &self.free {
            for &(r, c, _) in &d.entries {
                mask[(r, c)] = false;
                mask[(c, r)] = false;
            }
        }
        mask
    }

    /// The completion at parameter vector `theta`.
    pub fn complete(&self, theta: &[f64]) -> Result<CMatrix> {
        if theta.len() != self.free.len() {
            return Err(Error::DimensionMismatch {
                expected: self.free.len(),
                actual: theta.len(),
            });
        }
        let mut m = self.base.clone();
        for (d, &t) in self.free.iter().zip(theta) {
            for &(r, c, v) in &d.entries {
                m[(r, c)] += v * t;
                if r != c {
                    m[(c, r)] += v.conj() * t;
                }
            }
        }
        Ok(m)
    }

    /// Block `(i, j)` of the base matrix.
    pub fn block(&self, i: usize, j: usize) -> Matrix3<Complex64> {
        self.base.fixed_view::<3, 3>(3 * i, 3 * j).into_owned()
    }

    /// The top-left entries of all blocks, if none of them is free.
    pub fn overlap_block(&self) -> Option<CMatrix> {
        let mask = self.fixed_mask();
        let n = self.n_states;
        if (0..n).any(|i| (0..n).any(|j| !mask[(3 * i, 3 * j)])) {
            return None;
        }
        Some(CMatrix::from_fn(n, n, |i, j| self.base[(3 * i, 3 * j)]))
    }

    /// Same free structure with every fixed entry multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n_states: self.n_states,
            base: self.base.map(|v| v * c),
            free: self.free.clone(),
        }
    }

    /// A copy with one more free direction.
    pub fn with_extra_free(&self, d: FreeDirection) -> Result<Self> {
        let mut free = self.free.clone();
        free.push(d);
        Self::new(self.n_states, self.base.clone(), free)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&EvmDocument::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: EvmDocument = serde_json::from_str(s)?;
        doc.try_into()
    }
}

fn hermitian_deviation(m: &CMatrix) -> f64 {
    let mut dev: f64 = 0.0;
    for r in 0..m.nrows() {
        for c in r..m.ncols() {
            dev = dev.max((m[(r, c)] - m[(c, r)].conj()).norm());
        }
    }
    dev
}

fn assemble(
    ensemble: &InputEnsemble,
    diagonal: Vec<LocalBlock>,
    shared_free: Vec<FreeDirection>,
) -> Result<PartialEVM> {
    let n = ensemble.n_states();
    let dim = 3 * n;
    let overlaps = overlap_matrix(ensemble);
    let mut base = CMatrix::zeros(dim, dim);
    let mut free = shared_free;

    for (j, b) in diagonal.iter().enumerate() {
        base.view_mut((3 * j, 3 * j), (3, 3)).copy_from(&b.entries);
        free.extend(b.free.iter().map(|d| FreeDirection::from_block(d, 3 * j)));
    }
    for i in 0..n {
        for j in i + 1..n {
            let o = overlaps[(i, j)];
            base[(3 * i, 3 * j)] = o;
            base[(3 * j, 3 * i)] = o.conj();
            for k in 0..3 {
                for l in 0..3 {
                    if k == 0 && l == 0 {
                        continue;
                    }
                    let (r, c) = (3 * i + k, 3 * j + l);
                    free.push(FreeDirection::single(r, c, ONE));
                    free.push(FreeDirection::single(r, c, I));
                }
            }
        }
    }
    PartialEVM::new(n, base, free)
}

/// EVM from per-state output moments. Diagonal blocks carry weight `1/N`;
/// block `(i, j)` has top-left entry `(1/N)⟨φ_i|φ_j⟩`, and all its other
/// entries are free.
pub fn assemble_partial_evm(ensemble: &InputEnsemble, moments: &[MomentSet]) -> Result<PartialEVM> {
    check_len(ensemble, moments)?;
    let w = ensemble.probability();
    let blocks = moments
        .iter()
        .map(|m| build_local_block(m, w))
        .collect::<Result<Vec<_>>>()?;
    assemble(ensemble, blocks, Vec::new())
}

/// [`assemble_partial_evm`] without the per-block uncertainty check.
pub fn assemble_partial_evm_unchecked(
    ensemble: &InputEnsemble,
    moments: &[MomentSet],
) -> Result<PartialEVM> {
    check_len(ensemble, moments)?;
    let w = ensemble.probability();
    let blocks = moments.iter().map(|m| local_block_unchecked(m, w)).collect();
    assemble(ensemble, blocks, Vec::new())
}

fn check_len(ensemble: &InputEnsemble, moments: &[MomentSet]) -> Result<()> {
    if moments.len() != ensemble.n_states() {
        return Err(Error::DimensionMismatch {
            expected: ensemble.n_states(),
            actual: moments.len(),
        });
    }
    Ok(())
}

/// EVM for a phase-covariant channel from the single output block of the
/// phase-zero input `|α⟩`. Block `j` is `base` rotated by `φ_j`, reweighted
/// to `1/N`. Free directions of `base` become parameters shared by all
/// blocks, since they describe the same unknown.
pub fn assemble_phase_covariant(base: &LocalBlock, ensemble: &InputEnsemble) -> Result<PartialEVM> {
    let w = ensemble.probability();
    let weight = base.entries[(0, 0)].re;
    if !(weight > 0.0) {
        return Err(Error::InvalidParameter(
            "base block must have a positive normalization entry".into(),
        ));
    }
    let scale = Complex64::from(w / weight);

    let rotated: Vec<LocalBlock> = ensemble
        .phases()
        .iter()
        .map(|&phi| rotate_block(base, phi))
        .collect();
    let mut shared = Vec::with_capacity(base.free.len());
    for k in 0..base.free.len() {
        let mut entries = Vec::new();
        for (j, b) in rotated.iter().enumerate() {
            entries.extend(FreeDirection::from_block(&(b.free[k] * scale), 3 * j).entries);
        }
        shared.push(FreeDirection { entries });
    }
    let diagonal = rotated
        .into_iter()
        .map(|b| LocalBlock {
            entries: b.entries * scale,
            free: Vec::new(),
        })
        .collect();
    assemble(ensemble, diagonal, shared)
}

/// Partial transpose on the `A` labels: block `(i, j)` is replaced by block
/// `(j, i)`. Entries inside each block are left in place.
pub fn partial_transpose(m: &CMatrix, n_states: usize) -> Result<CMatrix> {
    let dim = 3 * n_states;
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: m.nrows().max(m.ncols()),
        });
    }
    let mut out = CMatrix::zeros(dim, dim);
    for i in 0..n_states {
        for j in 0..n_states {
            out.view_mut((3 * i, 3 * j), (3, 3))
                .copy_from(&m.view((3 * j, 3 * i), (3, 3)));
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct DirectionEntry {
    index: [usize; 2],
    value: [f64; 2],
}

/// JSON layout of a [`PartialEVM`]. Complex numbers are `[re, im]`.
#[derive(Serialize, Deserialize)]
struct EvmDocument {
    n_states: usize,
    dim: usize,
    base: Vec<Vec<[f64; 2]>>,
    /// Upper-triangle indices not fixed by the data.
    free_entries: Vec<[usize; 2]>,
    free_directions: Vec<Vec<DirectionEntry>>,
}

impl From<&PartialEVM> for EvmDocument {
    fn from(evm: &PartialEVM) -> Self {
        let dim = evm.dim();
        let base = (0..dim)
            .map(|r| (0..dim).map(|c| [evm.base[(r, c)].re, evm.base[(r, c)].im]).collect())
            .collect();
        let mask = evm.fixed_mask();
        let free_entries = (0..dim)
            .flat_map(|r| (r..dim).map(move |c| [r, c]))
            .filter(|&[r, c]| !mask[(r, c)])
            .collect();
        let free_directions = evm
            .free
            .iter()
            .map(|d| {
                d.entries
                    .iter()
                    .map(|&(r, c, v)| DirectionEntry {
                        index: [r, c],
                        value: [v.re, v.im],
                    })
                    .collect()
            })
            .collect();
        Self {
            n_states: evm.n_states,
            dim,
            base,
            free_entries,
            free_directions,
        }
    }
}

impl TryFrom<EvmDocument> for PartialEVM {
    type Error = Error;

    fn try_from(doc: EvmDocument) -> Result<Self> {
        let dim = 3 * doc.n_states;
        if doc.dim != dim || doc.base.len() != dim || doc.base.iter().any(|row| row.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: doc.dim,
            });
        }
        let base = CMatrix::from_fn(dim, dim, |r, c| {
            let [re, im] = doc.base[r][c];
            Complex64::new(re, im)
        });
        let free = doc
            .free_directions
            .into_iter()
            .map(|d| FreeDirection {
                entries: d
                    .into_iter()
                    .map(|e| (e.index[0], e.index[1], Complex64::new(e.value[0], e.value[1])))
                    .collect(),
            })
            .collect();
        PartialEVM::new(doc.n_states, base, free)
    }
}
