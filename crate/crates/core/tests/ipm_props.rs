mod common;

use proptest::prelude::*;
use qcqp::ipm::{iterative_refinement, EqualityMethod, IpmIterate, KktBackend, KktVector};
use qcqp::kkt_dense::DenseBackend;
use qcqp::kkt_ocp::RiccatiBackend;
use qcqp::{solve_dense, ExitStatus, IpmSettings, Mode};
use rand::Rng;

fn random_iterate<B: KktBackend>(b: &B, seed: u64) -> IpmIterate {
    let mut r = common::rng(seed);
    let mut it = b.initial_iterate();
    it.y.iter_mut().for_each(|v| *v += r.gen_range(-0.5..0.5));
    it.pi.iter_mut().for_each(|v| *v = r.gen_range(-1.0..1.0));
    it.lam.iter_mut().for_each(|v| *v = r.gen_range(0.1..2.0));
    it.t.iter_mut().for_each(|v| *v = r.gen_range(0.1..2.0));
    it
}

fn random_like(it: &IpmIterate, seed: u64) -> KktVector {
    let mut r = common::rng(seed);
    let mut d = KktVector::zeros_like(it);
    for part in [&mut d.y, &mut d.pi, &mut d.lam, &mut d.t] {
        part.iter_mut().for_each(|v| *v = r.gen_range(-1.0..1.0));
    }
    d
}

fn shifted(it: &IpmIterate, d: &KktVector, h: f64) -> IpmIterate {
    let mut out = it.clone();
    out.apply_step(d, h, h);
    out
}

/// Central differences of `F = -rhs` along `d` against the backend's
/// Newton-matrix product.
fn fd_mismatch<B: KktBackend>(b: &mut B, it: &IpmIterate, d: &KktVector) -> f64 {
    const H: f64 = 1e-6;
    let mut f = |z: &IpmIterate| {
        b.linearize(z);
        b.residuals(z, 0.0).to_rhs().neg()
    };
    let plus = f(&shifted(it, d, H));
    let minus = f(&shifted(it, d, -H));
    let mut fd = plus.sub(&minus);
    fd = KktVector {
        y: fd.y.iter().map(|v| v / (2.0 * H)).collect(),
        pi: fd.pi.iter().map(|v| v / (2.0 * H)).collect(),
        lam: fd.lam.iter().map(|v| v / (2.0 * H)).collect(),
        t: fd.t.iter().map(|v| v / (2.0 * H)).collect(),
    };
    b.linearize(it);
    let jd = b.apply(it, d);
    fd.sub(&jd).norm_inf() / jd.norm_inf().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dense_iterates_stay_interior(seed in any::<u64>()) {
        let p = common::dense_instance(seed);
        let flat = common::flat_dense(&p);
        let mut b = DenseBackend::new(&p, EqualityMethod::Schur);
        let rep = common::observe(&mut b, &flat, &IpmSettings::for_mode(Mode::Balance));
        prop_assert!(rep.positivity_ok);
        prop_assert!(rep.steps_ok);
        prop_assert!(rep.max_rel_err_moderate <= 1e-8, "direction error {}", rep.max_rel_err_moderate);
    }

    #[test]
    fn ocp_iterates_stay_interior(seed in any::<u64>()) {
        let (p, _) = common::ocp_instance(seed);
        let flat = common::flat_ocp(&p);
        let mut b = RiccatiBackend::new(&p);
        let rep = common::observe(&mut b, &flat, &IpmSettings::for_mode(Mode::Balance));
        prop_assert!(rep.positivity_ok);
        prop_assert!(rep.steps_ok);
        prop_assert!(rep.max_rel_err_moderate <= 1e-8, "direction error {}", rep.max_rel_err_moderate);
    }

    #[test]
    fn converged_points_meet_tolerances(seed in any::<u64>(), mode in prop::sample::select(vec![Mode::Speed, Mode::Balance, Mode::Robust])) {
        let p = common::dense_instance(seed);
        let s = IpmSettings::for_mode(mode);
        let mut b = DenseBackend::new(&p, s.equality_method);
        let (it, stats) = qcqp::ipm::solve(&mut b, &s);
        prop_assume!(stats.status == ExitStatus::Converged);
        let mut fresh = DenseBackend::new(&p, s.equality_method);
        fresh.linearize(&it);
        prop_assert!(fresh.residuals(&it, 0.0).norms().within(&s));
        prop_assert_eq!(stats.records.len(), stats.iterations);
    }

    #[test]
    fn dense_jacobian_matches_differences(seed in any::<u64>()) {
        let p = common::dense_instance(seed);
        let mut b = DenseBackend::new(&p, EqualityMethod::Schur);
        let it = random_iterate(&b, seed);
        let d = random_like(&it, !seed);
        prop_assert!(fd_mismatch(&mut b, &it, &d) <= 1e-4);
    }

    #[test]
    fn ocp_jacobian_matches_differences(seed in any::<u64>()) {
        let (p, _) = common::ocp_instance(seed);
        let mut b = RiccatiBackend::new(&p);
        let it = random_iterate(&b, seed);
        let d = random_like(&it, !seed);
        prop_assert!(fd_mismatch(&mut b, &it, &d) <= 1e-4);
    }

    #[test]
    fn robust_refines_at_least_as_much_as_speed(seed in any::<u64>()) {
        let p = common::dense_instance(seed);
        let mut b = DenseBackend::new(&p, EqualityMethod::Schur);
        let it = random_iterate(&b, seed);
        b.linearize(&it);
        let speed = IpmSettings::for_mode(Mode::Speed);
        let robust = IpmSettings::for_mode(Mode::Robust);
        b.factorize(&it, robust.reg_eps).unwrap();
        let rhs = b.residuals(&it, 0.0).to_rhs();
        let d = b.solve(&it, &rhs);
        let (_, ks) = iterative_refinement(&b, &it, &rhs, d.clone(), speed.refine_steps, speed.refine_tol);
        let (_, kr) = iterative_refinement(&b, &it, &rhs, d, robust.refine_steps, robust.refine_tol);
        prop_assert!(kr >= ks);
    }
}

// Complementarity runs far ahead of feasibility here, so the last iteration
// has λ/t near 1e15 and the eliminated system loses most digits. The step
// is still usable.
#[test]
fn extreme_weights_still_converge() {
    let p = common::dense_instance(1144725711382586324);
    let flat = common::flat_dense(&p);
    let mut b = DenseBackend::new(&p, EqualityMethod::Schur);
    let rep = common::observe(&mut b, &flat, &IpmSettings::for_mode(Mode::Balance));
    assert!(rep.max_weight > common::MODERATE_WEIGHT);
    assert!(rep.max_rel_err_moderate <= 1e-8);
    let (_, stats) = solve_dense(&p, &IpmSettings::for_mode(Mode::Balance)).unwrap();
    assert_eq!(stats.status, ExitStatus::Converged);
}
