use approx::assert_abs_diff_eq;
use cvbench::channel::{apply_loss_noise, mp_channel_moments, ChannelParams, MPParams, MomentSet};
use cvbench::evm::{
    assemble_partial_evm, assemble_partial_evm_unchecked, CMatrix, FreeDirection, InputEnsemble,
    PartialEVM,
};
use cvbench::feasibility::{
    classify, max_margin, min_eigenvalue, realify, ConstraintSet, FeasibilityProblem,
    Normalization, VerdictStatus, DEFAULT_TOL,
};
use cvbench::Error;
use num_complex::Complex64;
use proptest::prelude::*;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn loss_evm(n: usize, alpha: f64, eta: f64, nbar: f64) -> PartialEVM {
    let ens = InputEnsemble::equally_spaced(c(alpha, 0.0), n).unwrap();
    let ch = ChannelParams::new(eta, nbar).unwrap();
    let m: Vec<_> = (0..n).map(|j| apply_loss_noise(&ch, ens.amplitude(j))).collect();
    assemble_partial_evm(&ens, &m).unwrap()
}

fn raw(evm: &PartialEVM, cs: ConstraintSet) -> f64 {
    max_margin(&FeasibilityProblem::new(evm.clone(), cs)).unwrap().margin
}

fn whitened(evm: &PartialEVM, cs: ConstraintSet) -> f64 {
    let p = FeasibilityProblem::new(evm.clone(), cs).with_normalization(Normalization::default());
    max_margin(&p).unwrap().margin
}

#[test]
fn realify_identity() {
    let r = realify(&CMatrix::identity(3, 3)).unwrap();
    assert_eq!(r, nalgebra::DMatrix::<f64>::identity(6, 6));
}

#[test]
fn realify_off_diagonal_imaginary() {
    let h = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(0.0, 0.0)]);
    let r = realify(&h).unwrap();
    let mut ev: Vec<f64> = r.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    for (got, want) in ev.iter().zip([-1.0, -1.0, 1.0, 1.0]) {
        assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
    }
}

#[test]
fn realify_rejects_non_hermitian() {
    let h = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.5, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
    assert!(matches!(realify(&h), Err(Error::NotHermitian { .. })));
}

fn hermitian(d: usize, vals: &[f64]) -> CMatrix {
    let mut h = CMatrix::zeros(d, d);
    let mut k = 0;
    for r in 0..d {
        h[(r, r)] = c(vals[k], 0.0);
        k += 1;
        for col in r + 1..d {
            h[(r, col)] = c(vals[k], vals[k + 1]);
            h[(col, r)] = h[(r, col)].conj();
            k += 2;
        }
    }
    h
}

proptest! {
    #[test]
    fn realify_preserves_min_eigenvalue(
        d in 1usize..6,
        vals in prop::collection::vec(-2.0f64..2.0, 36),
    ) {
        let h = hermitian(d, &vals);
        let r = realify(&h).unwrap();
        let lr = r.symmetric_eigen().eigenvalues.min();
        prop_assert!((lr - min_eigenvalue(&h)).abs() < 1e-10);
    }
}

#[test]
fn fully_specified_margin_is_min_eigenvalue() {
    let h = hermitian(3, &[1.0, 0.2, 0.1, 0.0, 0.3, 0.8, -0.1, 0.2, 0.6]);
    let evm = PartialEVM::new(1, h.clone(), vec![]).unwrap();
    let r = max_margin(&FeasibilityProblem::new(evm, ConstraintSet::PhysicalOnly)).unwrap();
    assert_abs_diff_eq!(r.margin, min_eigenvalue(&h), epsilon = 1e-12);
    assert!(r.optimizer.is_empty());
}

#[test]
fn report_meets_its_own_margin() {
    let evm = loss_evm(3, 0.3, 0.5, 0.4);
    for norm in [Normalization::None, Normalization::default()] {
        for cs in [ConstraintSet::PhysicalOnly, ConstraintSet::PhysicalAndPpt] {
            let p = FeasibilityProblem::new(evm.clone(), cs).with_normalization(norm);
            let r = max_margin(&p).unwrap();
            assert_eq!(r.optimizer.len(), p.dimension());
            for ev in &r.min_eigenvalues {
                assert!(*ev >= r.margin - 1e-7);
            }
            assert!(r.upper_bound >= r.margin - 1e-9);
            assert!(r.upper_bound - r.margin <= 1e-7);
        }
    }
}

#[test]
fn unfixing_entries_never_lowers_margin() {
    let evm = loss_evm(2, 0.4, 0.6, 0.3);
    let extra = [
        FreeDirection { entries: vec![(0, 3, c(1.0, 0.0))] },
        FreeDirection { entries: vec![(0, 3, c(0.0, 1.0))] },
        FreeDirection { entries: vec![(1, 1, c(1.0, 0.0))] },
    ];
    for cs in [ConstraintSet::PhysicalOnly, ConstraintSet::PhysicalAndPpt] {
        let mut current = evm.clone();
        let mut t = raw(&current, cs);
        for d in &extra {
            current = current.with_extra_free(d.clone()).unwrap();
            let t_next = raw(&current, cs);
            assert!(t_next >= t - 1e-9, "{cs:?}: {t_next} < {t}");
            t = t_next;
        }
    }
}

#[test]
fn scaling_fixed_entries_scales_margin() {
    let evm = loss_evm(2, 0.5, 0.5, 0.1);
    for cs in [ConstraintSet::PhysicalOnly, ConstraintSet::PhysicalAndPpt] {
        let t = raw(&evm, cs);
        for s in [0.5, 3.0] {
            let ts = raw(&evm.scaled(s), cs);
            assert_abs_diff_eq!(ts, s * t, epsilon = 1e-7 * s.max(1.0));
        }
    }
    let v = classify(&evm, DEFAULT_TOL).unwrap();
    for s in [0.5, 3.0] {
        assert_eq!(classify(&evm.scaled(s), DEFAULT_TOL).unwrap().status, v.status);
    }
}

#[test]
fn physical_margin_dominates_ppt_margin() {
    for (alpha, eta, nbar) in [(0.01, 0.5, 0.2), (0.3, 0.8, 1.0), (0.7, 0.2, 0.0)] {
        let evm = loss_evm(3, alpha, eta, nbar);
        assert!(raw(&evm, ConstraintSet::PhysicalOnly) >= raw(&evm, ConstraintSet::PhysicalAndPpt) - 1e-9);
        assert!(
            whitened(&evm, ConstraintSet::PhysicalOnly)
                >= whitened(&evm, ConstraintSet::PhysicalAndPpt) - 1e-9
        );
    }
}

#[test]
fn solves_are_deterministic() {
    let evm = loss_evm(3, 0.01, 0.5, 0.9);
    let a = whitened(&evm, ConstraintSet::PhysicalAndPpt);
    let b = whitened(&evm, ConstraintSet::PhysicalAndPpt);
    assert!((a - b).abs() < 1e-9);
}

/// Concave objective evaluated directly from eigenvalues.
fn direct_margin(evm: &PartialEVM, theta: &[f64]) -> f64 {
    let chi = evm.complete(theta).unwrap();
    let pt = cvbench::evm::partial_transpose(&chi, evm.n_states()).unwrap();
    min_eigenvalue(&chi).min(min_eigenvalue(&pt))
}

fn grid_search(evm: &PartialEVM, dims: usize) -> f64 {
    let mut center = vec![0.0; dims];
    let mut best = f64::NEG_INFINITY;
    // Coarse scan, then the 1e-3 grid around its maximum, then finer grids.
    for (half_width, step) in [(1.0, 2e-2), (4e-2, 1e-3), (2e-3, 5e-5), (1e-4, 2e-6)] {
        let n = (half_width / step) as i64;
        let mut best_at = center.clone();
        let offsets: Vec<Vec<i64>> = if dims == 1 {
            (-n..=n).map(|i| vec![i]).collect()
        } else {
            (-n..=n).flat_map(|i| (-n..=n).map(move |j| vec![i, j])).collect()
        };
        for off in offsets {
            let theta: Vec<f64> = center
                .iter()
                .zip(&off)
                .map(|(c, o)| c + *o as f64 * step)
                .collect();
            let v = direct_margin(evm, &theta);
            if v > best {
                best = v;
                best_at = theta;
            }
        }
        center = best_at;
    }
    best
}

#[test]
fn matches_grid_search_with_few_parameters() {
    let full = loss_evm(2, 0.5, 0.6, 0.2);
    let base = full.base().clone();
    let one = PartialEVM::new(2, base.clone(), vec![FreeDirection { entries: vec![(1, 4, c(1.0, 0.0))] }])
        .unwrap();
    let two = one
        .with_extra_free(FreeDirection { entries: vec![(1, 4, c(0.0, 1.0))] })
        .unwrap();
    for (evm, dims) in [(one, 1), (two, 2)] {
        let t = raw(&evm, ConstraintSet::PhysicalAndPpt);
        let oracle = grid_search(&evm, dims);
        assert_abs_diff_eq!(t, oracle, epsilon = 1e-5);
    }
}

#[test]
fn mp_channel_data_is_completable() {
    for eta in [0.1f64, 0.4, 0.7, 0.95] {
        let ens = InputEnsemble::equally_spaced(c(0.3, 0.0), 3).unwrap();
        let mp = MPParams::new(eta.sqrt()).unwrap();
        let m: Vec<_> = (0..3).map(|j| mp_channel_moments(&mp, ens.amplitude(j))).collect();
        let evm = assemble_partial_evm(&ens, &m).unwrap();
        assert!(raw(&evm, ConstraintSet::PhysicalAndPpt) >= -1e-7);
        assert!(whitened(&evm, ConstraintSet::PhysicalAndPpt) >= -1e-7);
    }
}

#[test]
fn identity_channel_is_entangled() {
    let evm = loss_evm(3, 0.01, 1.0, 0.0);
    assert!(whitened(&evm, ConstraintSet::PhysicalAndPpt) < -1e-7);
    assert_eq!(classify(&evm, DEFAULT_TOL).unwrap().status, VerdictStatus::Entangled);
}

#[test]
fn classify_sub_vacuum_data_is_unphysical() {
    let ens = InputEnsemble::equally_spaced(c(0.5, 0.0), 2).unwrap();
    let m = vec![MomentSet::new(0.0, 0.0, 0.1, 0.1, Some(0.0)); 2];
    let evm = assemble_partial_evm_unchecked(&ens, &m).unwrap();
    let v = classify(&evm, DEFAULT_TOL).unwrap();
    assert_eq!(v.status, VerdictStatus::Unphysical);
    assert!(v.ppt_margin.is_none());
}

#[test]
fn classify_mp_channel_is_compatible() {
    let ens = InputEnsemble::equally_spaced(c(0.01, 0.0), 3).unwrap();
    let mp = MPParams::new(0.5f64.sqrt()).unwrap();
    let m: Vec<_> = (0..3).map(|j| mp_channel_moments(&mp, ens.amplitude(j))).collect();
    let evm = assemble_partial_evm(&ens, &m).unwrap();
    assert_eq!(classify(&evm, DEFAULT_TOL).unwrap().status, VerdictStatus::Compatible);
}

#[test]
fn classify_below_noise_threshold_is_entangled() {
    let v = classify(&loss_evm(3, 0.01, 0.5, 0.2), DEFAULT_TOL).unwrap();
    assert_eq!(v.status, VerdictStatus::Entangled);
    assert!(v.margin < -DEFAULT_TOL);
}

#[test]
fn classify_vacuum_inputs_is_compatible() {
    let v = classify(&loss_evm(3, 0.0, 0.5, 0.0), DEFAULT_TOL).unwrap();
    assert_eq!(v.status, VerdictStatus::Compatible);
}

#[test]
fn classify_single_state_is_compatible() {
    let v = classify(&loss_evm(1, 0.5, 1.0, 0.0), DEFAULT_TOL).unwrap();
    assert_eq!(v.status, VerdictStatus::Compatible);
}

#[test]
fn classify_needs_positive_tolerance() {
    let evm = loss_evm(2, 0.5, 0.5, 0.0);
    assert!(classify(&evm, 0.0).is_err());
    assert!(classify(&evm, f64::NAN).is_err());
}

#[test]
fn verdict_exit_codes() {
    assert_eq!(VerdictStatus::Compatible.exit_code(), 0);
    assert_eq!(VerdictStatus::Entangled.exit_code(), 2);
    assert_eq!(VerdictStatus::Unphysical.exit_code(), 3);
    assert_eq!(VerdictStatus::Entangled.to_string(), "ENTANGLED");
}
