mod common;

use proptest::prelude::*;
use qcqp::condensing::{
    condense_quadratic_constraint, estimate_condensing_flops, expand_solution, full_condense, partial_condense, remove_x0,
    BlockMap, CondensedSolution, MapKind,
};
use qcqp::linalg::{flops, Mat};
use qcqp::model::OcpStage;
use qcqp::{solve_ocp, DenseQcqp, ExitStatus, IpmSettings, Mode, OcpQcqp};
use rand::Rng;

/// Lower and upper margins of every row of a stage at `z = (u, x)`, in
/// row order; infinite limits give infinite margins.
fn stage_margins(st: &OcpStage, z: &[f64]) -> Vec<(f64, f64)> {
    let idx = st.stacked_box_idx();
    let g = st.stacked_gen();
    let mut out = Vec::new();
    for (k, &i) in idx.iter().enumerate() {
        out.push((z[i] - st.lb[k], st.ub[k] - z[i]));
    }
    for k in 0..g.rows() {
        let a: f64 = g.row(k).iter().zip(z).map(|(c, v)| c * v).sum();
        out.push((a - st.lb[idx.len() + k], st.ub[idx.len() + k] - a));
    }
    out.extend(st.quad.iter().map(|q| (f64::INFINITY, q.upper - q.value(z))));
    out
}

fn dense_margins(d: &DenseQcqp, v: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for (k, &i) in d.box_idx.iter().enumerate() {
        out.push((v[i] - d.lb[k], d.ub[k] - v[i]));
    }
    for k in 0..d.ng() {
        let a: f64 = d.gen_mat.row(k).iter().zip(v).map(|(c, x)| c * x).sum();
        out.push((a - d.lb[d.nb() + k], d.ub[d.nb() + k] - a));
    }
    out.extend(d.quad.iter().map(|q| (f64::INFINITY, q.upper - q.value(v))));
    out
}

fn same(a: f64, b: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= 1e-9 * a.abs().max(1.0)
}

fn stacked(u: &[Vec<f64>], x: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut z = u[n].clone();
    z.extend_from_slice(&x[n]);
    z
}

/// Checks that each condensed row reproduces the margins of its origin row.
fn check_rows(ocp: &OcpQcqp, map: &BlockMap, got: &[(f64, f64)], u: &[Vec<f64>], x: &[Vec<f64>]) -> Result<(), TestCaseError> {
    prop_assert_eq!(map.rows.len(), got.len());
    for (o, g) in map.rows.iter().zip(got) {
        let want = stage_margins(&ocp.stages[o.stage], &stacked(u, x, o.stage))[o.row];
        prop_assert!(same(want.0, g.0) && same(want.1, g.1), "row {:?}: {:?} vs {:?}", o, want, g);
    }
    Ok(())
}

fn random_controls(ocp: &OcpQcqp, seed: u64) -> Vec<Vec<f64>> {
    let mut r = common::rng(seed);
    ocp.stages.iter().map(|s| (0..s.nu()).map(|_| r.gen_range(-2.0..2.0)).collect()).collect()
}

fn zero_slacks(ocp: &OcpQcqp) -> Vec<Vec<f64>> {
    ocp.stages.iter().map(|s| vec![0.0; s.ns()]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn full_condensing_preserves_rows_and_cost(seed in any::<u64>(), fixed in any::<bool>()) {
        let (ocp, x0) = common::ocp_instance(seed);
        let ocp = if fixed { remove_x0(&ocp, &x0).unwrap().0 } else { ocp };
        let (dense, map) = full_condense(&ocp);
        let MapKind::Full(bm) = &map.kind else { panic!("full map expected") };
        let u = random_controls(&ocp, !seed);
        let start: Vec<f64> = if fixed { Vec::new() } else { x0.iter().map(|v| v + 0.5).collect() };
        let x = ocp.rollout(&start, &u);
        let mut v: Vec<f64> = u.iter().flatten().copied().collect();
        v.extend_from_slice(&start);
        prop_assert_eq!(v.len(), dense.nv());
        check_rows(&ocp, bm, &dense_margins(&dense, &v), &u, &x)?;
        let zs = zero_slacks(&ocp);
        let want = ocp.objective(&u, &x, &zs, &zs);
        let got = dense.objective(&v, &vec![0.0; dense.ns()], &vec![0.0; dense.ns()]);
        prop_assert!(same(want, got), "{} vs {}", want, got);
    }

    #[test]
    fn partial_condensing_preserves_rows_and_cost(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let (ocp, x0) = common::ocp_instance(seed);
        let (ocp, _) = remove_x0(&ocp, &x0).unwrap();
        let nb = 1 + pick.index(ocp.horizon());
        let (cond, map) = partial_condense(&ocp, nb).unwrap();
        let MapKind::Partial(maps) = &map.kind else { panic!("partial map expected") };
        prop_assert_eq!(cond.horizon(), nb);
        let u = random_controls(&ocp, !seed);
        let x = ocp.rollout(&[], &u);
        let cu: Vec<Vec<f64>> = maps
            .iter()
            .map(|bm| bm.stages.clone().flat_map(|n| u[n].clone()).collect())
            .collect();
        let cx = cond.rollout(&[], &cu);
        for (b, bm) in maps.iter().enumerate() {
            let first = bm.stages.start;
            for (a, e) in cx[b].iter().zip(&x[first]) {
                prop_assert!(same(*a, *e));
            }
            check_rows(&ocp, bm, &stage_margins(&cond.stages[b], &stacked(&cu, &cx, b)), &u, &x)?;
        }
        let (zs, czs) = (zero_slacks(&ocp), zero_slacks(&cond));
        prop_assert!(same(ocp.objective(&u, &x, &zs, &zs), cond.objective(&cu, &cx, &czs, &czs)));
    }

    #[test]
    fn one_stage_blocks_change_nothing(seed in any::<u64>()) {
        let (ocp, _) = common::ocp_instance(seed);
        let (cond, _) = partial_condense(&ocp, ocp.horizon()).unwrap();
        prop_assert_eq!(cond.dims(), ocp.dims());
        let u = random_controls(&ocp, seed);
        let start = vec![0.3; ocp.stages[0].nx()];
        let (x, cx) = (ocp.rollout(&start, &u), cond.rollout(&start, &u));
        for n in 0..ocp.stages.len() {
            let z = stacked(&u, &x, n);
            let cz = stacked(&u, &cx, n);
            for (a, b) in stage_margins(&ocp.stages[n], &z).iter().zip(stage_margins(&cond.stages[n], &cz)) {
                prop_assert!(same(a.0, b.0) && same(a.1, b.1));
            }
        }
    }

    #[test]
    fn flop_model_tracks_the_kernel(seed in any::<u64>(), n in 10usize..31, nx in 1usize..9, nu in 1usize..4, x0_var in any::<bool>()) {
        let mut r = common::rng(seed);
        let np = n * nu + if x0_var { nx } else { 0 };
        let x_map = Mat::from_row_slice(nx, np, &(0..nx * np).map(|_| r.gen_range(-1.0..1.0)).collect::<Vec<_>>());
        let nz = nu + nx;
        let m = Mat::from_row_slice(nz, nz, &(0..nz * nz).map(|_| r.gen_range(-1.0..1.0)).collect::<Vec<_>>());
        let mut hess = m.mul_tr(&m);
        hess.symmetrize();
        let f: Vec<f64> = (0..nx).map(|_| r.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..nz).map(|_| r.gen_range(-1.0..1.0)).collect();
        let measured = flops::measure(|| condense_quadratic_constraint(&x_map, &f, &hess, &g, nu)).1 as f64;
        let model = estimate_condensing_flops(n as u64, nx as u64, nu as u64, x0_var) as f64;
        let ratio = measured / model;
        prop_assert!((1.0 / 1.5..=1.5).contains(&ratio), "ratio {}", ratio);
    }
}

/// Replaces the stage-0 state box by hard rows `lb = ub = x0` on every
/// state, keeping soft rows and masks of the other rows. Slacks of formerly
/// soft box rows stay behind unattached.
fn pin_initial_state(st: &mut OcpStage, x0: &[f64]) {
    let (nbu, nbx, ng) = (st.nbu(), st.nbx(), st.ng());
    let at = nbu + nbx;
    let splice = |v: &mut Vec<f64>| {
        v.splice(nbu..at, x0.iter().copied());
    };
    splice(&mut st.lb);
    splice(&mut st.ub);
    let extra = x0.len() - nbx;
    for _ in 0..extra {
        st.soft_map.insert(at, None);
        st.mask_lo.insert(at, true);
        st.mask_up.insert(at, true);
    }
    for r in nbu..nbu + x0.len() {
        st.soft_map[r] = None;
        st.mask_lo[r] = true;
        st.mask_up[r] = true;
    }
    st.idxbx = (0..x0.len()).collect();
    debug_assert_eq!(st.lb.len(), nbu + x0.len() + ng);
}

#[test]
fn removing_a_pinned_initial_state_keeps_the_optimum() {
    let s = IpmSettings::for_mode(Mode::Robust);
    let mut checked = 0;
    for seed in 0..40 {
        let (mut ocp, x0) = common::ocp_instance(seed);
        pin_initial_state(&mut ocp.stages[0], &x0);
        assert!(ocp.validate().is_empty(), "{:?}", ocp.validate());

        let (full, full_stats) = solve_ocp(&ocp, &s).unwrap();
        let (reduced, map) = remove_x0(&ocp, &x0).unwrap();
        let (red, red_stats) = solve_ocp(&reduced, &s).unwrap();
        if full_stats.status != ExitStatus::Converged || red_stats.status != ExitStatus::Converged {
            continue;
        }
        let back = expand_solution(&map, CondensedSolution::Ocp(&red)).unwrap();
        let rel = (back.objective - full.objective).abs() / full.objective.abs().max(1.0);
        assert!(rel <= 1e-7, "seed {seed}: objective {} vs {}", back.objective, full.objective);
        let primal = back.u.iter().chain(&back.x).flatten().zip(full.u.iter().chain(&full.x).flatten());
        for (a, b) in primal {
            assert!((a - b).abs() <= 1e-5, "seed {seed}: {a} vs {b}");
        }
        checked += 1;
    }
    assert!(checked >= 30, "only {checked} instance pairs converged");
}
