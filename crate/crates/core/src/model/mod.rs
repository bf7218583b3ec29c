//! Problem data for dense and optimal-control QCQPs.
//!
//! Equality constraints other than the dynamics are written as two-sided rows
//! with equal limits. Every affine row (box or general) is two-sided; every
//! quadratic row is one-sided (upper) so that the feasible set stays convex.
//! A row side is *active* when its mask flag is on and its limit is finite;
//! inactive sides never reach the interior-point iteration.

mod io;

use std::borrow::Cow;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::QcqpError;
use crate::linalg::{is_psd, Mat};

pub use io::{from_json_str, read_problem_file, to_json_string, write_problem_file, ProblemFile};

/// Pivot tolerance of the semi-definiteness check.
pub const PSD_TOL: f64 = 1e-12;
/// Relative tolerance of the symmetry check.
pub const SYM_TOL: f64 = 1e-12;

/// One convex quadratic constraint `½ vᵀ H v + gᵀ v ≤ upper`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadConstraint {
    pub hess: Mat,
    pub grad: Vec<f64>,
    pub upper: f64,
}

impl QuadConstraint {
    pub fn zeros(n: usize) -> Self {
        QuadConstraint {
            hess: Mat::zeros(n, n),
            grad: vec![0.0; n],
            upper: 0.0,
        }
    }

    /// `½ vᵀ H v + gᵀ v` (without the limit).
    pub fn value(&self, v: &[f64]) -> f64 {
        self.hess.half_quad(v) + crate::linalg::dot(&self.grad, v)
    }
}

/// Diagonal slack penalties and lower limits for `ns` slack pairs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Slacks {
    /// `Zˡ`, diagonal of the quadratic penalty on the lower slacks.
    pub hess_lo: Vec<f64>,
    /// `Zᵘ`.
    pub hess_up: Vec<f64>,
    /// `zˡ`, linear penalty on the lower slacks.
    pub grad_lo: Vec<f64>,
    pub grad_up: Vec<f64>,
    /// Lower limits `s̲ˡ` of the lower slacks.
    pub lb_lo: Vec<f64>,
    pub lb_up: Vec<f64>,
}

impl Slacks {
    pub fn zeros(ns: usize) -> Self {
        Slacks {
            hess_lo: vec![0.0; ns],
            hess_up: vec![0.0; ns],
            grad_lo: vec![0.0; ns],
            grad_up: vec![0.0; ns],
            lb_lo: vec![0.0; ns],
            lb_up: vec![0.0; ns],
        }
    }

    pub fn len(&self) -> usize {
        self.hess_lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hess_lo.is_empty()
    }

    /// Slack part of the objective.
    pub fn cost(&self, sl: &[f64], su: &[f64]) -> f64 {
        let mut c = 0.0;
        for j in 0..self.len() {
            c += 0.5 * self.hess_lo[j] * sl[j] * sl[j] + self.grad_lo[j] * sl[j];
            c += 0.5 * self.hess_up[j] * su[j] * su[j] + self.grad_up[j] * su[j];
        }
        c
    }

    fn check(&self, ns: usize, prefix: &str, report: &mut ValidationReport) {
        let fields = [
            ("Zl", &self.hess_lo),
            ("Zu", &self.hess_up),
            ("zl", &self.grad_lo),
            ("zu", &self.grad_up),
            ("sl_min", &self.lb_lo),
            ("su_min", &self.lb_up),
        ];
        for (name, v) in fields {
            if v.len() != ns {
                report.push(format!("{prefix}{name} has length {} (expected {ns})", v.len()));
            }
        }
        for (name, v) in [("Zl", &self.hess_lo), ("Zu", &self.hess_up)] {
            if let Some(j) = v.iter().position(|z| !(*z >= 0.0)) {
                report.push(format!("{prefix}slack penalty {name}[{j}] is negative"));
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseDims {
    pub nv: usize,
    pub ne: usize,
    pub nb: usize,
    pub ng: usize,
    pub nq: usize,
    pub ns: usize,
}

/// Dense QCQP over variables `v` and slack pairs `(sˡ, sᵘ)`.
///
/// Rows are ordered box (`nb`), general (`ng`), quadratic (`nq`); `lb`/`ub`
/// cover the affine rows, quadratic limits live in [`QuadConstraint::upper`].
/// `soft_map`, `mask_lo` and `mask_up` cover all `nb + ng + nq` rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseQcqp {
    pub hess: Mat,
    pub grad: Vec<f64>,
    pub eq_mat: Mat,
    pub eq_rhs: Vec<f64>,
    pub box_idx: Vec<usize>,
    pub gen_mat: Mat,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub quad: Vec<QuadConstraint>,
    pub slacks: Slacks,
    pub soft_map: Vec<Option<usize>>,
    pub mask_lo: Vec<bool>,
    pub mask_up: Vec<bool>,
    /// Constant objective term, produced by presolve and condensing.
    pub const_term: f64,
}

impl DenseQcqp {
    pub fn new(dims: DenseDims) -> Self {
        let DenseDims { nv, ne, nb, ng, nq, ns } = dims;
        let rows = nb + ng + nq;
        DenseQcqp {
            hess: Mat::zeros(nv, nv),
            grad: vec![0.0; nv],
            eq_mat: Mat::zeros(ne, nv),
            eq_rhs: vec![0.0; ne],
            box_idx: (0..nb).map(|i| i % nv.max(1)).collect(),
            gen_mat: Mat::zeros(ng, nv),
            lb: vec![0.0; nb + ng],
            ub: vec![0.0; nb + ng],
            quad: (0..nq).map(|_| QuadConstraint::zeros(nv)).collect(),
            slacks: Slacks::zeros(ns),
            soft_map: vec![None; rows],
            mask_lo: vec![true; rows],
            mask_up: vec![true; rows],
            const_term: 0.0,
        }
    }

    pub fn dims(&self) -> DenseDims {
        DenseDims {
            nv: self.nv(),
            ne: self.ne(),
            nb: self.nb(),
            ng: self.ng(),
            nq: self.nq(),
            ns: self.ns(),
        }
    }

    pub fn nv(&self) -> usize {
        self.grad.len()
    }
    pub fn ne(&self) -> usize {
        self.eq_rhs.len()
    }
    pub fn nb(&self) -> usize {
        self.box_idx.len()
    }
    pub fn ng(&self) -> usize {
        self.gen_mat.rows()
    }
    pub fn nq(&self) -> usize {
        self.quad.len()
    }
    pub fn ns(&self) -> usize {
        self.slacks.len()
    }

    /// Objective value at `(v, sˡ, sᵘ)`.
    pub fn objective(&self, v: &[f64], sl: &[f64], su: &[f64]) -> f64 {
        self.hess.half_quad(v) + crate::linalg::dot(&self.grad, v) + self.slacks.cost(sl, su) + self.const_term
    }

    pub(crate) fn rows(&self) -> RowView<'_> {
        RowView {
            nv: self.nv(),
            box_idx: Cow::Borrowed(&self.box_idx),
            gen: Cow::Borrowed(&self.gen_mat),
            lb: &self.lb,
            ub: &self.ub,
            quad: &self.quad,
            slacks: &self.slacks,
            soft_map: &self.soft_map,
            mask_lo: &self.mask_lo,
            mask_up: &self.mask_up,
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let nv = self.nv();
        if self.hess.rows() != nv || self.hess.cols() != nv {
            report.push(format!("H must be {nv}x{nv}"));
        } else {
            check_symmetric(&self.hess, "cost Hessian", &mut report);
        }
        if self.eq_mat.rows() != self.ne() || (self.ne() > 0 && self.eq_mat.cols() != nv) {
            report.push(format!("A must be {}x{nv}", self.ne()));
        }
        self.rows().check("", &mut report);
        report
    }
}

/// Which role the stage-0 state plays.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum X0Mode {
    /// `x₀` is a decision variable.
    #[default]
    Variable,
    /// `x₀` has been removed from the problem and fixed to the stored value.
    Fixed(Vec<f64>),
}

/// Linear dynamics `x_{n+1} = A x_n + B u_n + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dynamics {
    pub a: Mat,
    pub b: Mat,
    pub offset: Vec<f64>,
}

/// One stage of an OCP QCQP. Stage variables are stacked as `(u_n, x_n)`.
///
/// Rows are ordered control box (`nbu`), state box (`nbx`), general (`ng`),
/// quadratic (`nq`). Quadratic constraints act on the stacked `(u, x)` vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcpStage {
    pub r: Mat,
    pub s: Mat,
    pub q: Mat,
    pub rvec: Vec<f64>,
    pub qvec: Vec<f64>,
    pub idxbu: Vec<usize>,
    pub idxbx: Vec<usize>,
    pub d: Mat,
    pub c: Mat,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub quad: Vec<QuadConstraint>,
    pub slacks: Slacks,
    pub soft_map: Vec<Option<usize>>,
    pub mask_lo: Vec<bool>,
    pub mask_up: Vec<bool>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDims {
    pub nx: usize,
    pub nu: usize,
    pub nbu: usize,
    pub nbx: usize,
    pub ng: usize,
    pub nq: usize,
    pub ns: usize,
}

impl OcpStage {
    pub fn new(dims: StageDims) -> Self {
        let StageDims { nx, nu, nbu, nbx, ng, nq, ns } = dims;
        let rows = nbu + nbx + ng + nq;
        OcpStage {
            r: Mat::zeros(nu, nu),
            s: Mat::zeros(nu, nx),
            q: Mat::zeros(nx, nx),
            rvec: vec![0.0; nu],
            qvec: vec![0.0; nx],
            idxbu: (0..nbu).map(|i| i % nu.max(1)).collect(),
            idxbx: (0..nbx).map(|i| i % nx.max(1)).collect(),
            d: Mat::zeros(ng, nu),
            c: Mat::zeros(ng, nx),
            lb: vec![0.0; nbu + nbx + ng],
            ub: vec![0.0; nbu + nbx + ng],
            quad: (0..nq).map(|_| QuadConstraint::zeros(nu + nx)).collect(),
            slacks: Slacks::zeros(ns),
            soft_map: vec![None; rows],
            mask_lo: vec![true; rows],
            mask_up: vec![true; rows],
        }
    }

    pub fn nx(&self) -> usize {
        self.qvec.len()
    }
    pub fn nu(&self) -> usize {
        self.rvec.len()
    }
    pub fn nbu(&self) -> usize {
        self.idxbu.len()
    }
    pub fn nbx(&self) -> usize {
        self.idxbx.len()
    }
    pub fn nb(&self) -> usize {
        self.nbu() + self.nbx()
    }
    pub fn ng(&self) -> usize {
        self.d.rows()
    }
    pub fn nq(&self) -> usize {
        self.quad.len()
    }
    pub fn ns(&self) -> usize {
        self.slacks.len()
    }

    pub fn dims(&self) -> StageDims {
        StageDims {
            nx: self.nx(),
            nu: self.nu(),
            nbu: self.nbu(),
            nbx: self.nbx(),
            ng: self.ng(),
            nq: self.nq(),
            ns: self.ns(),
        }
    }

    /// Stacked cost Hessian `[[R, S], [Sᵀ, Q]]`.
    pub fn stacked_hess(&self) -> Mat {
        let (nu, nx) = (self.nu(), self.nx());
        let mut h = Mat::zeros(nu + nx, nu + nx);
        h.set_block(0, 0, &self.r);
        h.set_block(0, nu, &self.s);
        h.set_block(nu, 0, &self.s.transpose());
        h.set_block(nu, nu, &self.q);
        h
    }

    pub fn stacked_grad(&self) -> Vec<f64> {
        let mut g = self.rvec.clone();
        g.extend_from_slice(&self.qvec);
        g
    }

    /// General-row matrix `[D C]` over the stacked `(u, x)` vector.
    pub fn stacked_gen(&self) -> Mat {
        let (nu, nx) = (self.nu(), self.nx());
        let mut g = Mat::zeros(self.ng(), nu + nx);
        if nu > 0 {
            g.set_block(0, 0, &self.d);
        }
        if nx > 0 {
            g.set_block(0, nu, &self.c);
        }
        g
    }

    /// Box indices over the stacked `(u, x)` vector.
    pub fn stacked_box_idx(&self) -> Vec<usize> {
        let nu = self.nu();
        self.idxbu
            .iter()
            .copied()
            .chain(self.idxbx.iter().map(|i| nu + i))
            .collect()
    }

    /// Stage cost at `(u, x, sˡ, sᵘ)`.
    pub fn cost(&self, u: &[f64], x: &[f64], sl: &[f64], su: &[f64]) -> f64 {
        let mut z = u.to_vec();
        z.extend_from_slice(x);
        self.stacked_hess().half_quad(&z) + crate::linalg::dot(&self.stacked_grad(), &z) + self.slacks.cost(sl, su)
    }

    pub(crate) fn rows(&self) -> RowView<'_> {
        RowView {
            nv: self.nu() + self.nx(),
            box_idx: Cow::Owned(self.stacked_box_idx()),
            gen: Cow::Owned(self.stacked_gen()),
            lb: &self.lb,
            ub: &self.ub,
            quad: &self.quad,
            slacks: &self.slacks,
            soft_map: &self.soft_map,
            mask_lo: &self.mask_lo,
            mask_up: &self.mask_up,
        }
    }
}

/// Per-stage dimensions of an OCP QCQP with horizon `n`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcpDims {
    pub horizon: usize,
    pub nx: Vec<usize>,
    pub nu: Vec<usize>,
    pub nbu: Vec<usize>,
    pub nbx: Vec<usize>,
    pub ng: Vec<usize>,
    pub nq: Vec<usize>,
    pub ns: Vec<usize>,
}

impl OcpDims {
    /// Uniform dimensions with no constraints and `nu[N] = 0`.
    pub fn uniform(horizon: usize, nx: usize, nu: usize) -> Self {
        let k = horizon + 1;
        let mut nus = vec![nu; k];
        nus[horizon] = 0;
        OcpDims {
            horizon,
            nx: vec![nx; k],
            nu: nus,
            nbu: vec![0; k],
            nbx: vec![0; k],
            ng: vec![0; k],
            nq: vec![0; k],
            ns: vec![0; k],
        }
    }

    pub fn stage(&self, n: usize) -> StageDims {
        StageDims {
            nx: self.nx[n],
            nu: self.nu[n],
            nbu: self.nbu[n],
            nbx: self.nbx[n],
            ng: self.ng[n],
            nq: self.nq[n],
            ns: self.ns[n],
        }
    }
}

/// Multi-stage QCQP with linear dynamics between consecutive stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcpQcqp {
    pub stages: Vec<OcpStage>,
    pub dynamics: Vec<Dynamics>,
    pub x0_mode: X0Mode,
    /// Nominal initial state, used by the initial-state presolve.
    pub initial_state: Option<Vec<f64>>,
    pub const_term: f64,
}

impl OcpQcqp {
    pub fn new(dims: &OcpDims) -> Result<Self, QcqpError> {
        let k = dims.horizon + 1;
        for (name, v) in [
            ("nx", &dims.nx),
            ("nu", &dims.nu),
            ("nbu", &dims.nbu),
            ("nbx", &dims.nbx),
            ("ng", &dims.ng),
            ("nq", &dims.nq),
            ("ns", &dims.ns),
        ] {
            if v.len() != k {
                return Err(QcqpError::Dimension(format!(
                    "{name} has {} entries, horizon {} needs {k}",
                    v.len(),
                    dims.horizon
                )));
            }
        }
        let stages = (0..k).map(|n| OcpStage::new(dims.stage(n))).collect();
        let dynamics = (0..dims.horizon)
            .map(|n| Dynamics {
                a: Mat::zeros(dims.nx[n + 1], dims.nx[n]),
                b: Mat::zeros(dims.nx[n + 1], dims.nu[n]),
                offset: vec![0.0; dims.nx[n + 1]],
            })
            .collect();
        Ok(OcpQcqp {
            stages,
            dynamics,
            x0_mode: X0Mode::Variable,
            initial_state: None,
            const_term: 0.0,
        })
    }

    pub fn horizon(&self) -> usize {
        self.stages.len().saturating_sub(1)
    }

    pub fn dims(&self) -> OcpDims {
        let col = |f: fn(&OcpStage) -> usize| self.stages.iter().map(f).collect::<Vec<_>>();
        OcpDims {
            horizon: self.horizon(),
            nx: col(OcpStage::nx),
            nu: col(OcpStage::nu),
            nbu: col(OcpStage::nbu),
            nbx: col(OcpStage::nbx),
            ng: col(OcpStage::ng),
            nq: col(OcpStage::nq),
            ns: col(OcpStage::ns),
        }
    }

    /// Objective along a trajectory given per stage as `(u, x, sˡ, sᵘ)`.
    pub fn objective(&self, u: &[Vec<f64>], x: &[Vec<f64>], sl: &[Vec<f64>], su: &[Vec<f64>]) -> f64 {
        self.stages
            .iter()
            .enumerate()
            .map(|(n, st)| st.cost(&u[n], &x[n], &sl[n], &su[n]))
            .sum::<f64>()
            + self.const_term
    }

    /// Rolls the dynamics forward from `x0` under the controls `u`.
    pub fn rollout(&self, x0: &[f64], u: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut xs = vec![x0.to_vec()];
        for (n, dy) in self.dynamics.iter().enumerate() {
            let mut next = dy.offset.clone();
            dy.a.gemv_acc(1.0, &xs[n], &mut next);
            dy.b.gemv_acc(1.0, &u[n], &mut next);
            xs.push(next);
        }
        xs
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        if self.stages.is_empty() {
            report.push("problem has no stages".to_string());
            return report;
        }
        let n_h = self.horizon();
        if self.dynamics.len() != n_h {
            report.push(format!("{} dynamics blocks for horizon {n_h}", self.dynamics.len()));
        }
        for (n, dy) in self.dynamics.iter().enumerate().take(n_h) {
            let (nx0, nx1, nu) = (self.stages[n].nx(), self.stages[n + 1].nx(), self.stages[n].nu());
            if dy.a.rows() != nx1 || dy.a.cols() != nx0 {
                report.push(format!("stage {n}: A is {}x{} (expected {nx1}x{nx0})", dy.a.rows(), dy.a.cols()));
            }
            if dy.b.rows() != nx1 || dy.b.cols() != nu {
                report.push(format!("stage {n}: B is {}x{} (expected {nx1}x{nu})", dy.b.rows(), dy.b.cols()));
            }
            if dy.offset.len() != nx1 {
                report.push(format!("stage {n}: b has length {} (expected {nx1})", dy.offset.len()));
            }
        }
        if let X0Mode::Fixed(x0) = &self.x0_mode {
            if self.stages[0].nx() != 0 {
                report.push("x0 is fixed but stage 0 still has state variables".to_string());
            }
            if let Some(a0) = self.dynamics.first() {
                // the fixed state has been folded into b_0
                if a0.a.cols() != 0 {
                    report.push(format!("x0 is fixed (length {}) but A_0 has columns", x0.len()));
                }
            }
        }
        for (n, st) in self.stages.iter().enumerate() {
            let prefix = format!("stage {n}: ");
            let (nu, nx) = (st.nu(), st.nx());
            let shapes = [
                ("R", &st.r, nu, nu),
                ("S", &st.s, nu, nx),
                ("Q", &st.q, nx, nx),
                ("D", &st.d, st.ng(), nu),
                ("C", &st.c, st.c.rows(), nx),
            ];
            let mut shapes_ok = true;
            for (name, m, r, c) in shapes {
                if m.rows() != r || (r > 0 && m.cols() != c) {
                    report.push(format!("{prefix}{name} is {}x{} (expected {r}x{c})", m.rows(), m.cols()));
                    shapes_ok = false;
                }
            }
            if st.c.rows() != st.ng() {
                report.push(format!("{prefix}C and D row counts differ"));
                shapes_ok = false;
            }
            if let Some(bad) = st.idxbu.iter().find(|&&i| i >= nu) {
                report.push(format!("{prefix}control box index {bad} out of range"));
                shapes_ok = false;
            }
            if let Some(bad) = st.idxbx.iter().find(|&&i| i >= nx) {
                report.push(format!("{prefix}state box index {bad} out of range"));
                shapes_ok = false;
            }
            if !shapes_ok {
                continue;
            }
            check_symmetric(&st.stacked_hess(), &format!("{prefix}stage cost Hessian"), &mut report);
            st.rows().check(&prefix, &mut report);
        }
        report
    }
}

/// Borrowed view of a constraint row set over a single variable vector.
pub(crate) struct RowView<'a> {
    pub nv: usize,
    pub box_idx: Cow<'a, [usize]>,
    pub gen: Cow<'a, Mat>,
    pub lb: &'a [f64],
    pub ub: &'a [f64],
    pub quad: &'a [QuadConstraint],
    pub slacks: &'a Slacks,
    pub soft_map: &'a [Option<usize>],
    pub mask_lo: &'a [bool],
    pub mask_up: &'a [bool],
}

impl RowView<'_> {
    pub fn nb(&self) -> usize {
        self.box_idx.len()
    }
    pub fn ng(&self) -> usize {
        self.gen.rows()
    }
    pub fn nq(&self) -> usize {
        self.quad.len()
    }

    fn check(&self, prefix: &str, report: &mut ValidationReport) {
        let (nb, ng, nq, nv) = (self.nb(), self.ng(), self.nq(), self.nv);
        let rows = nb + ng + nq;
        let ns = self.slacks.len();
        let mut seen = vec![false; nv];
        for (r, &i) in self.box_idx.iter().enumerate() {
            if i >= nv {
                report.push(format!("{prefix}box index {i} (row {r}) out of range"));
            } else if seen[i] {
                report.push(format!("{prefix}box index {i} repeated"));
            } else {
                seen[i] = true;
            }
        }
        if ng > 0 && self.gen.cols() != nv {
            report.push(format!("{prefix}general constraint matrix has {} columns (expected {nv})", self.gen.cols()));
        }
        if self.lb.len() != nb + ng || self.ub.len() != nb + ng {
            report.push(format!("{prefix}lb/ub must have {} entries", nb + ng));
        }
        for (name, v) in [("soft_map", self.soft_map.len()), ("mask_lo", self.mask_lo.len()), ("mask_up", self.mask_up.len())] {
            if v != rows {
                report.push(format!("{prefix}{name} has {v} entries (expected {rows})"));
            }
        }
        self.slacks.check(ns, prefix, report);
        if report.has_shape_errors() {
            return;
        }
        for r in 0..nb + ng {
            if self.mask_lo[r] && self.mask_up[r] && self.lb[r] > self.ub[r] {
                report.push(format!("{prefix}inconsistent bounds row {r}"));
            }
        }
        let mut used = vec![false; ns];
        for (r, s) in self.soft_map.iter().enumerate() {
            if let Some(j) = s {
                if *j >= ns {
                    report.push(format!("{prefix}soft_map row {r} refers to slack {j} (ns = {ns})"));
                } else if used[*j] {
                    report.push(format!("{prefix}slack {j} is shared by more than one row"));
                } else {
                    used[*j] = true;
                }
            }
        }
        for (k, qc) in self.quad.iter().enumerate() {
            if qc.hess.rows() != nv || qc.hess.cols() != nv || qc.grad.len() != nv {
                report.push(format!("{prefix}quadratic constraint {k} has wrong dimensions"));
                continue;
            }
            if check_symmetric(&qc.hess, &format!("{prefix}quadratic constraint {k}"), report)
                && !is_psd(&qc.hess, PSD_TOL)
            {
                report.push(format!("{prefix}quadratic constraint {k} not PSD"));
            }
        }
    }
}

fn check_symmetric(m: &Mat, what: &str, report: &mut ValidationReport) -> bool {
    let tol = SYM_TOL * m.max_abs().max(1.0);
    if m.asymmetry() > tol {
        report.push(format!("{what} not symmetric"));
        false
    } else {
        true
    }
}

/// Findings of [`DenseQcqp::validate`] / [`OcpQcqp::validate`]; empty when the
/// problem satisfies every structural and convexity requirement.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<String>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn push(&mut self, finding: String) {
        self.findings.push(finding);
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.findings.iter().any(|f| f.contains(needle))
    }

    fn has_shape_errors(&self) -> bool {
        self.findings.iter().any(|f| f.contains("entries") || f.contains("length") || f.contains("columns"))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.findings.join("; "))
    }
}
