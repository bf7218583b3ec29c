//! Initial-state elimination, full and partial condensing, and expansion of
//! condensed solutions back to the original stage-wise variables.
//!
//! A condensing block covers consecutive stages `a..b`. Its variables are the
//! stacked controls `ũ = (u_a, …, u_{b-1})` and the boundary state `x̃ = x_a`;
//! the inner states are eliminated through
//!
//! ```text
//! x_n = X_n p_n + f_n,   p_n = (u_a, …, u_{n-1}, x̃)
//! ```
//!
//! where `X_n` are the prefix products of the dynamics. Costs and quadratic
//! constraints at stage `n` are rewritten over `(p_n, u_n)`, affine rows are
//! substituted, and slacks are only re-indexed.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::QcqpError;
use crate::ipm::block::{BlockData, BlockDuals};
use crate::kkt_dense::DenseSolution;
use crate::kkt_ocp::{OcpSolution, RiccatiBackend};
use crate::linalg::{dot, flops, sym_tr_mul, Mat};
use crate::model::{DenseQcqp, Dynamics, OcpQcqp, OcpStage, QuadConstraint, Slacks, X0Mode};

/// Original row of a condensed constraint row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowOrigin {
    pub stage: usize,
    pub row: usize,
}

/// Bookkeeping of one condensing block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockMap {
    pub stages: Range<usize>,
    /// Offset of each `u_n` inside `ũ`.
    pub u_offsets: Vec<usize>,
    pub nu_total: usize,
    pub nx_boundary: usize,
    /// Prefix products `X_n` and offsets `f_n` for each stage of the block.
    pub gammas: Vec<Mat>,
    pub shifts: Vec<Vec<f64>>,
    pub rows: Vec<RowOrigin>,
    /// Offset of each stage's slacks in the condensed slack vector.
    pub slack_offsets: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MapKind {
    RemoveX0 {
        x0: Vec<f64>,
        /// Original stage-0 row of each row of the reduced stage 0.
        kept_rows: Vec<usize>,
        /// Stage-0 state box rows that were removed.
        dropped_rows: Vec<usize>,
    },
    Full(BlockMap),
    Partial(Vec<BlockMap>),
}

/// Everything needed to map a transformed solution back onto `original`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CondensingMap {
    pub original: OcpQcqp,
    pub kind: MapKind,
}

/// Exact value of the leading-order flop model for condensing a quadratic
/// form at stage `n` of a block.
pub fn estimate_condensing_flops(n: u64, nx: u64, nu: u64, x0_is_variable: bool) -> u64 {
    if x0_is_variable {
        n * n * nu * nu * nx + 4 * n * nu * nx * nx + 3 * nx * nx * nx
    } else {
        n * n * nu * nu * nx + 2 * n * nu * nx * nx
    }
}

/// A stage quadratic rewritten over `(p, u_n)` with `x_n = X p + f`.
#[derive(Clone, Debug, PartialEq)]
pub struct CondensedQuad {
    pub h_pp: Mat,
    /// `nu × np` block coupling `u_n` and `p`.
    pub h_up: Mat,
    pub h_uu: Mat,
    pub g_p: Vec<f64>,
    pub g_u: Vec<f64>,
    pub constant: f64,
}

impl CondensedQuad {
    /// Value at `(p, u)`.
    pub fn value(&self, p: &[f64], u: &[f64]) -> f64 {
        self.h_pp.half_quad(p)
            + self.h_uu.half_quad(u)
            + dot(u, &self.h_up.mul_vec(p))
            + dot(&self.g_p, p)
            + dot(&self.g_u, u)
            + self.constant
    }
}

/// Condenses `½ zᵀ H z + gᵀ z` over `z = (u_n, x_n)` with `nu` controls onto
/// `(p, u_n)`.
///
/// The state block `Q` is checked for being zero or diagonal, which removes or
/// cheapens the `Q X` product.
pub fn condense_quadratic_constraint(x_map: &Mat, f: &[f64], hess: &Mat, grad: &[f64], nu: usize) -> CondensedQuad {
    let nx = x_map.rows();
    let np = x_map.cols();
    let q = hess.block(nu, nu, nx, nx);
    let s = hess.block(0, nu, nu, nx);
    let (gu, gx) = grad.split_at(nu);
    let (h_pp, qf) = if q.is_zero() {
        (Mat::zeros(np, np), vec![0.0; nx])
    } else {
        let qx = if q.is_diagonal() {
            let mut out = x_map.clone();
            for i in 0..nx {
                let d = q[(i, i)];
                out.row_mut(i).iter_mut().for_each(|v| *v *= d);
            }
            flops::add((nx * np) as u64);
            out
        } else {
            q.mul(x_map)
        };
        (sym_tr_mul(x_map, &qx), q.mul_vec(f))
    };
    let h_up = if s.is_zero() { Mat::zeros(nu, np) } else { s.mul(x_map) };
    let mut w: Vec<f64> = qf.iter().zip(gx).map(|(a, b)| a + b).collect();
    let g_p = x_map.tr_mul_vec(&w);
    let mut g_u = gu.to_vec();
    s.gemv_acc(1.0, f, &mut g_u);
    for (wi, (qfi, gxi)) in w.iter_mut().zip(qf.iter().zip(gx)) {
        *wi = 0.5 * qfi + gxi;
    }
    let constant = dot(&w, f);
    flops::add(4 * nx as u64);
    CondensedQuad {
        h_pp,
        h_up,
        h_uu: hess.block(0, 0, nu, nu),
        g_p,
        g_u,
        constant,
    }
}

/// Removes the stage-0 state by fixing it to `x0_hat`.
///
/// Every state box row of stage 0 is dropped; costs, general rows, quadratic
/// constraints and the first dynamics offset absorb `x0_hat`.
pub fn remove_x0(ocp: &OcpQcqp, x0_hat: &[f64]) -> Result<(OcpQcqp, CondensingMap), QcqpError> {
    if ocp.x0_mode != X0Mode::Variable {
        return Err(QcqpError::Argument("initial state already removed".into()));
    }
    let st = &ocp.stages[0];
    let (nu, nx) = (st.nu(), st.nx());
    if x0_hat.len() != nx {
        return Err(QcqpError::Dimension(format!("x0 has {} entries, stage 0 has {nx} states", x0_hat.len())));
    }
    let (nbu, nbx, ng) = (st.nbu(), st.nbx(), st.ng());
    let mut out = OcpStage {
        r: st.r.clone(),
        s: Mat::zeros(nu, 0),
        q: Mat::zeros(0, 0),
        rvec: st.rvec.clone(),
        qvec: Vec::new(),
        idxbu: st.idxbu.clone(),
        idxbx: Vec::new(),
        d: st.d.clone(),
        c: Mat::zeros(ng, 0),
        lb: Vec::new(),
        ub: Vec::new(),
        quad: Vec::new(),
        slacks: st.slacks.clone(),
        soft_map: Vec::new(),
        mask_lo: Vec::new(),
        mask_up: Vec::new(),
    };
    st.s.gemv_acc(1.0, x0_hat, &mut out.rvec);
    let constant = st.q.half_quad(x0_hat) + dot(&st.qvec, x0_hat);
    let cx = st.c.mul_vec(x0_hat);
    let mut kept_rows = Vec::new();
    let n_rows = nbu + nbx + ng + st.nq();
    for r in 0..n_rows {
        if (nbu..nbu + nbx).contains(&r) {
            continue;
        }
        kept_rows.push(r);
        out.soft_map.push(st.soft_map[r]);
        out.mask_lo.push(st.mask_lo[r]);
        out.mask_up.push(st.mask_up[r]);
        if r < nbu {
            out.lb.push(st.lb[r]);
            out.ub.push(st.ub[r]);
        } else if r < nbu + nbx + ng {
            let g = r - nbu - nbx;
            out.lb.push(st.lb[r] - cx[g]);
            out.ub.push(st.ub[r] - cx[g]);
        }
    }
    for qc in &st.quad {
        let mut grad = qc.grad[..nu].to_vec();
        qc.hess.block(0, nu, nu, nx).gemv_acc(1.0, x0_hat, &mut grad);
        let shift = qc.hess.block(nu, nu, nx, nx).half_quad(x0_hat) + dot(&qc.grad[nu..], x0_hat);
        out.quad.push(QuadConstraint {
            hess: qc.hess.block(0, 0, nu, nu),
            grad,
            upper: qc.upper - shift,
        });
    }
    let mut reduced = ocp.clone();
    reduced.stages[0] = out;
    if let Some(dy) = reduced.dynamics.first_mut() {
        dy.a.gemv_acc(1.0, x0_hat, &mut dy.offset);
        dy.a = Mat::zeros(dy.a.rows(), 0);
    }
    reduced.const_term += constant;
    reduced.x0_mode = X0Mode::Fixed(x0_hat.to_vec());
    reduced.initial_state = Some(x0_hat.to_vec());
    let map = CondensingMap {
        original: ocp.clone(),
        kind: MapKind::RemoveX0 {
            x0: x0_hat.to_vec(),
            kept_rows,
            dropped_rows: (nbu..nbu + nbx).collect(),
        },
    };
    Ok((reduced, map))
}

struct CondensedBlock {
    stage: OcpStage,
    constant: f64,
    dynamics: Option<Dynamics>,
    map: BlockMap,
}

struct RowAcc {
    lb: f64,
    ub: f64,
    soft: Option<usize>,
    mask_lo: bool,
    mask_up: bool,
    origin: RowOrigin,
}

fn condense_block(ocp: &OcpQcqp, range: Range<usize>) -> CondensedBlock {
    let a = range.start;
    let n_h = ocp.horizon();
    let nxt = ocp.stages[a].nx();
    let mut u_offsets = Vec::new();
    let mut nu_total = 0;
    let mut slack_offsets = Vec::new();
    let mut ns_total = 0;
    for n in range.clone() {
        u_offsets.push(nu_total);
        nu_total += ocp.stages[n].nu();
        slack_offsets.push(ns_total);
        ns_total += ocp.stages[n].ns();
    }
    let nz = nu_total + nxt;
    let mut hess = Mat::zeros(nz, nz);
    let mut grad = vec![0.0; nz];
    let mut constant = 0.0;
    let mut box_u: Vec<(usize, RowAcc)> = Vec::new();
    let mut box_x: Vec<(usize, RowAcc)> = Vec::new();
    let mut gen: Vec<(Vec<f64>, RowAcc)> = Vec::new();
    let mut quad: Vec<(QuadConstraint, RowAcc)> = Vec::new();
    let mut slacks = Slacks::zeros(0);
    let mut gammas = Vec::new();
    let mut shifts = Vec::new();

    let mut x_map = Mat::identity(nxt);
    let mut f = vec![0.0; nxt];
    let mut block_dyn = None;
    for n in range.clone() {
        let st = &ocp.stages[n];
        let (nu, nx) = (st.nu(), st.nx());
        let (nbu, nbx, ng) = (st.nbu(), st.nbx(), st.ng());
        let rel = n - a;
        let uo = u_offsets[rel];
        let np = uo + nxt;
        // prefix coordinate → condensed coordinate
        let pz = |j: usize| if j < uo { j } else { j - uo + nu_total };
        let so = slack_offsets[rel];
        let acc = |r: usize, lb: f64, ub: f64| RowAcc {
            lb,
            ub,
            soft: st.soft_map[r].map(|j| j + so),
            mask_lo: st.mask_lo[r],
            mask_up: st.mask_up[r],
            origin: RowOrigin { stage: n, row: r },
        };
        let scatter_quad = |cq: &CondensedQuad, h: &mut Mat, g: &mut [f64]| {
            for i in 0..np {
                for j in 0..np {
                    h[(pz(i), pz(j))] += cq.h_pp[(i, j)];
                }
                g[pz(i)] += cq.g_p[i];
            }
            for i in 0..nu {
                for j in 0..np {
                    h[(uo + i, pz(j))] += cq.h_up[(i, j)];
                    h[(pz(j), uo + i)] += cq.h_up[(i, j)];
                }
                for j in 0..nu {
                    h[(uo + i, uo + j)] += cq.h_uu[(i, j)];
                }
                g[uo + i] += cq.g_u[i];
            }
        };
        if rel == 0 {
            hess.add_block(0, 0, 1.0, &st.r);
            if nxt > 0 {
                hess.add_block(0, nu_total, 1.0, &st.s);
                hess.add_block(nu_total, 0, 1.0, &st.s.transpose());
                hess.add_block(nu_total, nu_total, 1.0, &st.q);
            }
            for i in 0..nu {
                grad[i] += st.rvec[i];
            }
            for i in 0..nxt {
                grad[nu_total + i] += st.qvec[i];
            }
        } else {
            let cq = condense_quadratic_constraint(&x_map, &f, &st.stacked_hess(), &st.stacked_grad(), nu);
            scatter_quad(&cq, &mut hess, &mut grad);
            constant += cq.constant;
        }
        for (i, &idx) in st.idxbu.iter().enumerate() {
            box_u.push((uo + idx, acc(i, st.lb[i], st.ub[i])));
        }
        for (i, &idx) in st.idxbx.iter().enumerate() {
            let r = nbu + i;
            if rel == 0 {
                box_x.push((nu_total + idx, acc(r, st.lb[r], st.ub[r])));
            } else {
                let mut row = vec![0.0; nz];
                for j in 0..np {
                    row[pz(j)] = x_map[(idx, j)];
                }
                gen.push((row, acc(r, st.lb[r] - f[idx], st.ub[r] - f[idx])));
            }
        }
        if ng > 0 {
            let cx = if rel == 0 { st.c.clone() } else { st.c.mul(&x_map) };
            let cf = st.c.mul_vec(&f);
            for g in 0..ng {
                let r = nbu + nbx + g;
                let mut row = vec![0.0; nz];
                for i in 0..nu {
                    row[uo + i] = st.d[(g, i)];
                }
                for j in 0..np {
                    row[pz(j)] += cx[(g, j)];
                }
                let (lb, ub) = if rel == 0 { (st.lb[r], st.ub[r]) } else { (st.lb[r] - cf[g], st.ub[r] - cf[g]) };
                gen.push((row, acc(r, lb, ub)));
            }
        }
        for (k, qc) in st.quad.iter().enumerate() {
            let r = nbu + nbx + ng + k;
            let mut h = Mat::zeros(nz, nz);
            let mut g = vec![0.0; nz];
            let upper = if rel == 0 {
                h.add_block(0, 0, 1.0, &qc.hess.block(0, 0, nu, nu));
                if nxt > 0 {
                    h.add_block(0, nu_total, 1.0, &qc.hess.block(0, nu, nu, nx));
                    h.add_block(nu_total, 0, 1.0, &qc.hess.block(nu, 0, nx, nu));
                    h.add_block(nu_total, nu_total, 1.0, &qc.hess.block(nu, nu, nx, nx));
                }
                g[..nu].copy_from_slice(&qc.grad[..nu]);
                g[nu_total..].copy_from_slice(&qc.grad[nu..]);
                qc.upper
            } else {
                let cq = condense_quadratic_constraint(&x_map, &f, &qc.hess, &qc.grad, nu);
                scatter_quad(&cq, &mut h, &mut g);
                qc.upper - cq.constant
            };
            quad.push((QuadConstraint { hess: h, grad: g, upper }, acc(r, f64::NEG_INFINITY, upper)));
        }
        append_slacks(&mut slacks, &st.slacks);

        gammas.push(x_map.clone());
        shifts.push(f.clone());
        if n < n_h {
            let dy = &ocp.dynamics[n];
            let ax = dy.a.mul(&x_map);
            let mut next = Mat::zeros(dy.a.rows(), np + nu);
            next.set_block(0, 0, &ax.block(0, 0, ax.rows(), uo));
            next.set_block(0, uo, &dy.b);
            next.set_block(0, uo + nu, &ax.block(0, uo, ax.rows(), nxt));
            let mut nf = dy.offset.clone();
            dy.a.gemv_acc(1.0, &f, &mut nf);
            x_map = next;
            f = nf;
            if n + 1 == range.end {
                block_dyn = Some(Dynamics {
                    a: x_map.block(0, nu_total, x_map.rows(), nxt),
                    b: x_map.block(0, 0, x_map.rows(), nu_total),
                    offset: f.clone(),
                });
            }
        }
    }

    let nbu = box_u.len();
    let nbx = box_x.len();
    let ng = gen.len();
    let mut stage = OcpStage::new(crate::model::StageDims {
        nx: nxt,
        nu: nu_total,
        nbu,
        nbx,
        ng,
        nq: quad.len(),
        ns: ns_total,
    });
    stage.r = hess.block(0, 0, nu_total, nu_total);
    stage.s = hess.block(0, nu_total, nu_total, nxt);
    stage.q = hess.block(nu_total, nu_total, nxt, nxt);
    stage.rvec = grad[..nu_total].to_vec();
    stage.qvec = grad[nu_total..].to_vec();
    stage.idxbu = box_u.iter().map(|b| b.0).collect();
    stage.idxbx = box_x.iter().map(|b| b.0 - nu_total).collect();
    let mut rows = Vec::new();
    let mut push = |stage: &mut OcpStage, r: usize, acc: &RowAcc, affine: bool| {
        if affine {
            stage.lb[r] = acc.lb;
            stage.ub[r] = acc.ub;
        }
        stage.soft_map[r] = acc.soft;
        stage.mask_lo[r] = acc.mask_lo;
        stage.mask_up[r] = acc.mask_up;
        rows.push(acc.origin);
    };
    let mut r = 0;
    for (_, acc) in box_u.iter().chain(box_x.iter()) {
        push(&mut stage, r, acc, true);
        r += 1;
    }
    for (g, (row, acc)) in gen.iter().enumerate() {
        stage.d.row_mut(g).copy_from_slice(&row[..nu_total]);
        stage.c.row_mut(g).copy_from_slice(&row[nu_total..]);
        push(&mut stage, r, acc, true);
        r += 1;
    }
    for (k, (qc, acc)) in quad.into_iter().enumerate() {
        push(&mut stage, r, &acc, false);
        stage.quad[k] = qc;
        r += 1;
    }
    stage.slacks = slacks;
    CondensedBlock {
        stage,
        constant,
        dynamics: block_dyn,
        map: BlockMap {
            stages: range,
            u_offsets,
            nu_total,
            nx_boundary: nxt,
            gammas,
            shifts,
            rows,
            slack_offsets,
        },
    }
}

fn append_slacks(out: &mut Slacks, s: &Slacks) {
    out.hess_lo.extend_from_slice(&s.hess_lo);
    out.hess_up.extend_from_slice(&s.hess_up);
    out.grad_lo.extend_from_slice(&s.grad_lo);
    out.grad_up.extend_from_slice(&s.grad_up);
    out.lb_lo.extend_from_slice(&s.lb_lo);
    out.lb_up.extend_from_slice(&s.lb_up);
}

fn stage_to_dense(st: &OcpStage, const_term: f64) -> DenseQcqp {
    DenseQcqp {
        hess: st.stacked_hess(),
        grad: st.stacked_grad(),
        eq_mat: Mat::zeros(0, st.nu() + st.nx()),
        eq_rhs: Vec::new(),
        box_idx: st.stacked_box_idx(),
        gen_mat: st.stacked_gen(),
        lb: st.lb.clone(),
        ub: st.ub.clone(),
        quad: st.quad.clone(),
        slacks: st.slacks.clone(),
        soft_map: st.soft_map.clone(),
        mask_lo: st.mask_lo.clone(),
        mask_up: st.mask_up.clone(),
        const_term,
    }
}

/// Eliminates every state except `x_0` (if still present).
///
/// Dense variables are `(u_0, …, u_N, x_0)` followed by the stage slacks in
/// stage order. State box rows of later stages become general rows.
pub fn full_condense(ocp: &OcpQcqp) -> (DenseQcqp, CondensingMap) {
    let blk = condense_block(ocp, 0..ocp.stages.len());
    let dense = stage_to_dense(&blk.stage, ocp.const_term + blk.constant);
    (
        dense,
        CondensingMap {
            original: ocp.clone(),
            kind: MapKind::Full(blk.map),
        },
    )
}

/// Stage ranges for `n_blocks` blocks over stages `0..N`, larger blocks first,
/// followed by the terminal stage on its own.
pub fn block_partition(horizon: usize, n_blocks: usize) -> Vec<Range<usize>> {
    let base = horizon / n_blocks;
    let extra = horizon % n_blocks;
    let mut out = Vec::with_capacity(n_blocks + 1);
    let mut start = 0;
    for b in 0..n_blocks {
        let len = base + usize::from(b < extra);
        out.push(start..start + len);
        start += len;
    }
    out.push(horizon..horizon + 1);
    out
}

/// Condenses the stages into `n_blocks` blocks, giving an OCP with horizon
/// `n_blocks`.
pub fn partial_condense(ocp: &OcpQcqp, n_blocks: usize) -> Result<(OcpQcqp, CondensingMap), QcqpError> {
    let n_h = ocp.horizon();
    if n_blocks == 0 || n_blocks > n_h {
        return Err(QcqpError::Argument(format!("block count {n_blocks} outside 1..={n_h}")));
    }
    let mut stages = Vec::new();
    let mut dynamics = Vec::new();
    let mut maps = Vec::new();
    let mut constant = ocp.const_term;
    for range in block_partition(n_h, n_blocks) {
        let blk = condense_block(ocp, range);
        stages.push(blk.stage);
        if let Some(d) = blk.dynamics {
            dynamics.push(d);
        }
        constant += blk.constant;
        maps.push(blk.map);
    }
    let out = OcpQcqp {
        stages,
        dynamics,
        x0_mode: ocp.x0_mode.clone(),
        initial_state: ocp.initial_state.clone(),
        const_term: constant,
    };
    Ok((
        out,
        CondensingMap {
            original: ocp.clone(),
            kind: MapKind::Partial(maps),
        },
    ))
}

/// Number of condensed stages for a block size `k`: `⌈N / k⌉`.
pub fn blocks_for_size(horizon: usize, k: usize) -> Result<usize, QcqpError> {
    if k == 0 {
        return Err(QcqpError::Argument("block size must be positive".into()));
    }
    Ok(horizon.div_ceil(k).max(1).min(horizon.max(1)))
}

/// A solution of a transformed problem.
#[derive(Clone, Copy, Debug)]
pub enum CondensedSolution<'a> {
    Dense(&'a DenseSolution),
    Ocp(&'a OcpSolution),
}

/// Stage-wise primal-dual values in the layout of a problem's stages.
#[derive(Clone, Debug, Default)]
struct StageValues {
    u: Vec<Vec<f64>>,
    x: Vec<Vec<f64>>,
    sl: Vec<Vec<f64>>,
    su: Vec<Vec<f64>>,
    lam: Vec<BlockDuals>,
    t: Vec<BlockDuals>,
}

impl StageValues {
    fn from_ocp(s: &OcpSolution) -> Self {
        StageValues {
            u: s.u.clone(),
            x: s.x.clone(),
            sl: s.sl.clone(),
            su: s.su.clone(),
            lam: s.lam.clone(),
            t: s.t.clone(),
        }
    }

    fn empty_like(ocp: &OcpQcqp) -> Self {
        let mut v = StageValues::default();
        for st in &ocp.stages {
            let ns = st.ns();
            let naff = st.nb() + st.ng();
            let duals = BlockDuals {
                lower: vec![0.0; naff],
                upper: vec![0.0; naff + st.nq()],
                slack_lower: vec![0.0; ns],
                slack_upper: vec![0.0; ns],
            };
            v.u.push(vec![0.0; st.nu()]);
            v.x.push(vec![0.0; st.nx()]);
            v.sl.push(vec![0.0; ns]);
            v.su.push(vec![0.0; ns]);
            v.lam.push(duals.clone());
            v.t.push(duals);
        }
        v
    }
}

fn expand_block(original: &OcpQcqp, map: &BlockMap, c: &StageValues, ci: usize, out: &mut StageValues) {
    let a = map.stages.start;
    let naff_c = c.lam[ci].lower.len();
    out.x[a] = c.x[ci].clone();
    for (rel, n) in map.stages.clone().enumerate() {
        let st = &original.stages[n];
        let uo = map.u_offsets[rel];
        out.u[n] = c.u[ci][uo..uo + st.nu()].to_vec();
        let so = map.slack_offsets[rel];
        let ns = st.ns();
        out.sl[n] = c.sl[ci][so..so + ns].to_vec();
        out.su[n] = c.su[ci][so..so + ns].to_vec();
        for (dst, src) in [(&mut out.lam[n], &c.lam[ci]), (&mut out.t[n], &c.t[ci])] {
            dst.slack_lower.copy_from_slice(&src.slack_lower[so..so + ns]);
            dst.slack_upper.copy_from_slice(&src.slack_upper[so..so + ns]);
        }
        if n > a {
            let dy = &original.dynamics[n - 1];
            let mut x = dy.offset.clone();
            dy.a.gemv_acc(1.0, &out.x[n - 1], &mut x);
            dy.b.gemv_acc(1.0, &out.u[n - 1], &mut x);
            out.x[n] = x;
        }
    }
    for (k, o) in map.rows.iter().enumerate() {
        for (dst, src) in [(&mut out.lam[o.stage], &c.lam[ci]), (&mut out.t[o.stage], &c.t[ci])] {
            if k < naff_c {
                dst.lower[o.row] = src.lower[k];
            }
            dst.upper[o.row] = src.upper[k];
        }
    }
}

fn stage_blocks(ocp: &OcpQcqp) -> Vec<BlockData> {
    ocp.stages
        .iter()
        .map(|st| BlockData::compile(&st.rows(), st.stacked_hess(), st.stacked_grad()))
        .collect()
}

fn stage_y(v: &StageValues, n: usize) -> Vec<f64> {
    let mut y = v.u[n].clone();
    y.extend_from_slice(&v.x[n]);
    y.extend_from_slice(&v.sl[n]);
    y.extend_from_slice(&v.su[n]);
    y
}

/// Stationarity `∇f - ∇hᵀλ` of stage `n` over `(u, x, sˡ, sᵘ)`.
fn stage_stationarity(b: &BlockData, y: &[f64], lam: &[f64]) -> Vec<f64> {
    let lin = b.linearize(&y[..b.nv], lam);
    let t = vec![1.0; lam.len()];
    b.residuals(&lin, y, lam, &t, 0.0).0
}

/// Dynamics multipliers from the state rows of the stage stationarity
/// equations, solved backwards: `π_{n-1} = ∇ₓfₙ - ∇ₓhₙᵀλₙ + Aₙᵀπₙ`.
fn backward_pi(ocp: &OcpQcqp, blocks: &[BlockData], v: &StageValues) -> Vec<Vec<f64>> {
    let n_h = ocp.horizon();
    let mut pi = vec![Vec::new(); n_h];
    for n in (1..=n_h).rev() {
        let b = &blocks[n];
        let nu = ocp.stages[n].nu();
        let nx = ocp.stages[n].nx();
        let g = stage_stationarity(b, &stage_y(v, n), &b.gather(&v.lam[n]));
        let mut p = g[nu..nu + nx].to_vec();
        if n < n_h {
            ocp.dynamics[n].a.tr_gemv_acc(1.0, &pi[n], &mut p);
        }
        pi[n - 1] = p;
    }
    pi
}

fn finish(ocp: &OcpQcqp, v: StageValues, pi: Vec<Vec<f64>>) -> OcpSolution {
    let objective = ocp.objective(&v.u, &v.x, &v.sl, &v.su);
    let mut sol = OcpSolution {
        u: v.u,
        x: v.x,
        sl: v.sl,
        su: v.su,
        pi,
        lam: v.lam,
        t: v.t,
        objective,
        iterate: Default::default(),
    };
    sol.iterate = sol.to_iterate(&RiccatiBackend::new(ocp));
    sol
}

/// Maps the solution of a transformed problem onto the original problem of
/// `map`: states by rollout, inequality multipliers row by row, dynamics
/// multipliers by a backward stationarity pass.
pub fn expand_solution(map: &CondensingMap, sol: CondensedSolution<'_>) -> Result<OcpSolution, QcqpError> {
    let original = &map.original;
    let mismatch = || QcqpError::Dimension("solution does not match the condensing map".into());
    let blocks = stage_blocks(original);
    let mut out = StageValues::empty_like(original);
    match (&map.kind, sol) {
        (MapKind::Full(bm), CondensedSolution::Dense(d)) => {
            if d.v.len() != bm.nu_total + bm.nx_boundary {
                return Err(mismatch());
            }
            let c = StageValues {
                u: vec![d.v[..bm.nu_total].to_vec()],
                x: vec![d.v[bm.nu_total..].to_vec()],
                sl: vec![d.sl.clone()],
                su: vec![d.su.clone()],
                lam: vec![d.lam.clone()],
                t: vec![d.t.clone()],
            };
            expand_block(original, bm, &c, 0, &mut out);
        }
        (MapKind::Partial(maps), CondensedSolution::Ocp(s)) => {
            if s.u.len() != maps.len() {
                return Err(mismatch());
            }
            let c = StageValues::from_ocp(s);
            for (ci, bm) in maps.iter().enumerate() {
                expand_block(original, bm, &c, ci, &mut out);
            }
        }
        (
            MapKind::RemoveX0 {
                x0,
                kept_rows,
                dropped_rows,
            },
            CondensedSolution::Ocp(s),
        ) => {
            if s.u.len() != original.stages.len() {
                return Err(mismatch());
            }
            out = StageValues::from_ocp(s);
            out.x[0] = x0.clone();
            let st0 = &original.stages[0];
            let naff = st0.nb() + st0.ng();
            let mut lam0 = BlockDuals {
                lower: vec![0.0; naff],
                upper: vec![0.0; naff + st0.nq()],
                ..s.lam[0].clone()
            };
            let mut t0 = BlockDuals {
                lower: vec![0.0; naff],
                upper: vec![0.0; naff + st0.nq()],
                ..s.t[0].clone()
            };
            let naff_red = s.lam[0].lower.len();
            for (k, &r) in kept_rows.iter().enumerate() {
                if k < naff_red {
                    lam0.lower[r] = s.lam[0].lower[k];
                    t0.lower[r] = s.t[0].lower[k];
                }
                lam0.upper[r] = s.lam[0].upper[k];
                t0.upper[r] = s.t[0].upper[k];
            }
            out.lam[0] = lam0;
            out.t[0] = t0;
            let pi = backward_pi(original, &blocks, &out);
            // stage-0 state stationarity decides the multipliers of the dropped rows
            let b0 = &blocks[0];
            let y0 = stage_y(&out, 0);
            let nu = st0.nu();
            let mut g = stage_stationarity(b0, &y0, &b0.gather(&out.lam[0]))[nu..nu + st0.nx()].to_vec();
            if let Some(dy) = original.dynamics.first() {
                dy.a.tr_gemv_acc(1.0, &pi[0], &mut g);
            }
            let h = b0.scatter(&b0.side_values(&y0));
            for &r in dropped_rows {
                let gi = g[st0.idxbx[r - st0.nbu()]];
                out.lam[0].lower[r] = gi.max(0.0);
                out.lam[0].upper[r] = (-gi).max(0.0);
                out.t[0].lower[r] = h.lower[r];
                out.t[0].upper[r] = h.upper[r];
            }
            return Ok(finish(original, out, pi));
        }
        _ => return Err(mismatch()),
    }
    let pi = backward_pi(original, &blocks, &out);
    Ok(finish(original, out, pi))
}
