//! Per-block constraint machinery shared by the dense and the Riccati backends.
//!
//! A block is one variable vector `v` with its cost, box/general/quadratic rows
//! and slack pairs: the whole problem in the dense case, one stage `(u_n, x_n)`
//! in the OCP case. Its flat primal layout is `[v, sˡ, sᵘ]`.
//!
//! Every active one-sided constraint is written as `h_i(y) ≥ 0` with
//!
//! ```text
//! lower row r:   a_r(v) + sˡ_j - lb_r
//! upper row r:   ub_r - a_r(v) + sᵘ_j
//! slack bound:   sˡ_j - s̲ˡ_j   /   sᵘ_j - s̲ᵘ_j
//! ```
//!
//! and the sides are ordered: lower sides of the affine rows, upper sides of all
//! rows (affine then quadratic), lower-slack bounds, upper-slack bounds. Each
//! slack is attached to at most one row, so its elimination from the augmented
//! system only rescales that row's weight.

use crate::linalg::{dot, flops, Mat};
use crate::model::{QuadConstraint, RowView, Slacks};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SideKind {
    Lower,
    Upper,
    SlackLower,
    SlackUpper,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Side {
    pub kind: SideKind,
    /// Constraint row for row sides, slack index for slack bounds.
    pub index: usize,
    /// Slack attached to a row side.
    pub slack: Option<usize>,
    pub limit: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum RowKind {
    Box(usize),
    Gen(usize),
    Quad(usize),
}

/// `H(λ)` and `C(y)` of one block at the current iterate.
///
/// `ineq_jac` has one row per constraint row (box, general, quadratic): the
/// affine rows are copied verbatim, the quadratic rows hold `-(H_k v + g_k)ᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedData {
    pub lag_hess: Mat,
    pub ineq_jac: Mat,
}

#[derive(Clone, Debug)]
pub(crate) struct BlockData {
    pub nv: usize,
    pub ns: usize,
    pub hess: Mat,
    pub grad: Vec<f64>,
    pub rows: Vec<RowKind>,
    pub gen: Mat,
    pub quad: Vec<QuadConstraint>,
    pub slacks: Slacks,
    pub box_lb: Vec<f64>,
    pub box_ub: Vec<f64>,
    pub box_idx: Vec<usize>,
    pub sides: Vec<Side>,
    /// Row side attached to each lower / upper slack.
    pub slack_lo_side: Vec<Option<usize>>,
    pub slack_up_side: Vec<Option<usize>>,
}

/// Factorization-time quantities of one block.
#[derive(Clone, Debug, Default)]
pub(crate) struct BlockElimination {
    pub w: Vec<f64>,
    pub d_lo: Vec<f64>,
    pub d_up: Vec<f64>,
    /// Reduced Hessian over `v`: `H(λ) + Σ w̃_i ∇h_i ∇h_iᵀ`, no regularization.
    pub aug: Mat,
}

/// Reduced right-hand side and what is needed to recover the slack steps.
#[derive(Clone, Debug)]
pub(crate) struct ReducedRhs {
    pub v: Vec<f64>,
    pub s_lo: Vec<f64>,
    pub s_up: Vec<f64>,
}

impl BlockData {
    pub fn compile(view: &RowView<'_>, hess: Mat, grad: Vec<f64>) -> Self {
        let (nb, ng, nq) = (view.nb(), view.ng(), view.nq());
        let ns = view.slacks.len();
        let mut rows = Vec::with_capacity(nb + ng + nq);
        rows.extend((0..nb).map(|i| RowKind::Box(view.box_idx[i])));
        rows.extend((0..ng).map(RowKind::Gen));
        rows.extend((0..nq).map(RowKind::Quad));
        let mut sides = Vec::new();
        for r in 0..nb + ng {
            if view.mask_lo[r] && view.lb[r].is_finite() {
                sides.push(Side {
                    kind: SideKind::Lower,
                    index: r,
                    slack: view.soft_map[r],
                    limit: view.lb[r],
                });
            }
        }
        for r in 0..nb + ng + nq {
            let limit = if r < nb + ng { view.ub[r] } else { view.quad[r - nb - ng].upper };
            if view.mask_up[r] && limit.is_finite() {
                sides.push(Side {
                    kind: SideKind::Upper,
                    index: r,
                    slack: view.soft_map[r],
                    limit,
                });
            }
        }
        for j in 0..ns {
            if view.slacks.lb_lo[j].is_finite() {
                sides.push(Side {
                    kind: SideKind::SlackLower,
                    index: j,
                    slack: Some(j),
                    limit: view.slacks.lb_lo[j],
                });
            }
        }
        for j in 0..ns {
            if view.slacks.lb_up[j].is_finite() {
                sides.push(Side {
                    kind: SideKind::SlackUpper,
                    index: j,
                    slack: Some(j),
                    limit: view.slacks.lb_up[j],
                });
            }
        }
        let mut slack_lo_side = vec![None; ns];
        let mut slack_up_side = vec![None; ns];
        for (i, s) in sides.iter().enumerate() {
            match (s.kind, s.slack) {
                (SideKind::Lower, Some(j)) => slack_lo_side[j] = Some(i),
                (SideKind::Upper, Some(j)) => slack_up_side[j] = Some(i),
                _ => {}
            }
        }
        BlockData {
            nv: view.nv,
            ns,
            hess,
            grad,
            rows,
            gen: view.gen.clone().into_owned(),
            quad: view.quad.to_vec(),
            slacks: view.slacks.clone(),
            box_lb: view.lb[..nb].to_vec(),
            box_ub: view.ub[..nb].to_vec(),
            box_idx: view.box_idx.to_vec(),
            sides,
            slack_lo_side,
            slack_up_side,
        }
    }

    pub fn ny(&self) -> usize {
        self.nv + 2 * self.ns
    }

    pub fn n_sides(&self) -> usize {
        self.sides.len()
    }

    /// Starting point: `v = 0` and slacks at 0, each projected inside its
    /// bounds with a margin of 0.1 (midpoint when the bounds are closer).
    pub fn initial_primal(&self) -> Vec<f64> {
        const MARGIN: f64 = 0.1;
        let mut y = vec![0.0; self.ny()];
        for (r, &i) in self.box_idx.iter().enumerate() {
            let (lo, up) = (self.box_lb[r], self.box_ub[r]);
            let lo = if lo.is_finite() { lo } else { f64::NEG_INFINITY };
            let up = if up.is_finite() { up } else { f64::INFINITY };
            y[i] = if up - lo <= 2.0 * MARGIN {
                if lo.is_finite() && up.is_finite() {
                    0.5 * (lo + up)
                } else {
                    0.0
                }
            } else {
                y[i].clamp(lo + MARGIN, up - MARGIN)
            };
        }
        for j in 0..self.ns {
            let (lo, up) = (self.slacks.lb_lo[j], self.slacks.lb_up[j]);
            if lo.is_finite() {
                y[self.nv + j] = (lo + MARGIN).max(0.0);
            }
            if up.is_finite() {
                y[self.nv + self.ns + j] = (up + MARGIN).max(0.0);
            }
        }
        y
    }

    /// Value of the row functions `a_r(v)` (affine value or `½vᵀH_kv + g_kᵀv`).
    pub fn row_values(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| match *row {
                RowKind::Box(i) => v[i],
                RowKind::Gen(g) => dot(self.gen.row(g), v),
                RowKind::Quad(k) => self.quad[k].value(v),
            })
            .collect()
    }

    /// `H(λ) = H₀ + Σ λ_k H_k` and `C(y)` at `(v, λ)`.
    pub fn linearize(&self, v: &[f64], lam: &[f64]) -> LinearizedData {
        let mut lag_hess = self.hess.clone();
        let mut ineq_jac = Mat::zeros(self.rows.len(), self.nv);
        for (r, row) in self.rows.iter().enumerate() {
            match *row {
                RowKind::Box(i) => ineq_jac[(r, i)] = 1.0,
                RowKind::Gen(g) => ineq_jac.row_mut(r).copy_from_slice(self.gen.row(g)),
                RowKind::Quad(k) => {
                    let qc = &self.quad[k];
                    let mut hv = qc.hess.mul_vec(v);
                    for (h, g) in hv.iter_mut().zip(&qc.grad) {
                        *h = -(*h + g);
                    }
                    ineq_jac.row_mut(r).copy_from_slice(&hv);
                }
            }
        }
        for (i, side) in self.sides.iter().enumerate() {
            if side.kind != SideKind::Upper {
                continue;
            }
            if let RowKind::Quad(k) = self.rows[side.index] {
                if lam[i] != 0.0 {
                    lag_hess.axpy(lam[i], &self.quad[k].hess);
                }
            }
        }
        LinearizedData { lag_hess, ineq_jac }
    }

    /// Sign such that `∇_v h_i = sign · ineq_jac[row]` for a row side.
    #[inline]
    fn jac_sign(&self, side: &Side) -> f64 {
        match side.kind {
            SideKind::Lower => 1.0,
            SideKind::Upper if matches!(self.rows[side.index], RowKind::Quad(_)) => 1.0,
            SideKind::Upper => -1.0,
            SideKind::SlackLower | SideKind::SlackUpper => 0.0,
        }
    }

    /// Index of the primal entry of the slack attached to a side, if any.
    #[inline]
    fn slack_entry(&self, side: &Side) -> Option<usize> {
        match side.kind {
            SideKind::Lower | SideKind::SlackLower => side.slack.map(|j| self.nv + j),
            SideKind::Upper | SideKind::SlackUpper => side.slack.map(|j| self.nv + self.ns + j),
        }
    }

    /// `∇_v h_i · dv` for a row side.
    #[inline]
    fn grad_dot(&self, lin: &LinearizedData, side: &Side, dv: &[f64]) -> f64 {
        let sign = self.jac_sign(side);
        if sign == 0.0 {
            return 0.0;
        }
        match self.rows[side.index] {
            RowKind::Box(i) => sign * dv[i],
            _ => sign * dot(lin.ineq_jac.row(side.index), dv),
        }
    }

    /// `out_v += alpha · ∇_v h_i`.
    #[inline]
    fn grad_axpy(&self, lin: &LinearizedData, side: &Side, alpha: f64, out_v: &mut [f64]) {
        let sign = self.jac_sign(side);
        if sign == 0.0 || alpha == 0.0 {
            return;
        }
        match self.rows[side.index] {
            RowKind::Box(i) => out_v[i] += sign * alpha,
            _ => crate::linalg::axpy(sign * alpha, lin.ineq_jac.row(side.index), out_v),
        }
    }

    /// `h_i(y)` for every side.
    pub fn side_values(&self, y: &[f64]) -> Vec<f64> {
        let v = &y[..self.nv];
        let a = self.row_values(v);
        self.sides
            .iter()
            .map(|s| {
                let slack = self.slack_entry(s).map_or(0.0, |e| y[e]);
                match s.kind {
                    SideKind::Lower => a[s.index] + slack - s.limit,
                    SideKind::Upper => s.limit - a[s.index] + slack,
                    SideKind::SlackLower | SideKind::SlackUpper => slack - s.limit,
                }
            })
            .collect()
    }

    pub fn objective(&self, y: &[f64]) -> f64 {
        let (v, rest) = y.split_at(self.nv);
        let (sl, su) = rest.split_at(self.ns);
        self.hess.half_quad(v) + dot(&self.grad, v) + self.slacks.cost(sl, su)
    }

    /// Block parts of the residuals: `r_g` over `[v, sˡ, sᵘ]` (without the
    /// coupling term), `r_d` and `r_m` over the sides.
    pub fn residuals(
        &self,
        lin: &LinearizedData,
        y: &[f64],
        lam: &[f64],
        t: &[f64],
        mu_target: f64,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let nv = self.nv;
        let mut rg = self.hess.mul_vec(&y[..nv]);
        for (r, g) in rg.iter_mut().zip(&self.grad) {
            *r += g;
        }
        rg.resize(self.ny(), 0.0);
        for j in 0..self.ns {
            let (sl, su) = (y[nv + j], y[nv + self.ns + j]);
            rg[nv + j] = self.slacks.hess_lo[j] * sl + self.slacks.grad_lo[j];
            rg[nv + self.ns + j] = self.slacks.hess_up[j] * su + self.slacks.grad_up[j];
        }
        for (i, side) in self.sides.iter().enumerate() {
            self.grad_axpy(lin, side, -lam[i], &mut rg[..nv]);
            if let Some(e) = self.slack_entry(side) {
                rg[e] -= lam[i];
            }
        }
        let h = self.side_values(y);
        let rd = h.iter().zip(t).map(|(h, t)| t - h).collect();
        let rm = lam.iter().zip(t).map(|(l, t)| l * t - mu_target).collect();
        (rg, rd, rm)
    }

    /// Weights, slack pivots and the reduced Hessian over `v`.
    pub fn eliminate(&self, lin: &LinearizedData, lam: &[f64], t: &[f64]) -> BlockElimination {
        let w: Vec<f64> = lam.iter().zip(t).map(|(l, t)| l / t).collect();
        let mut d_lo = self.slacks.hess_lo.clone();
        let mut d_up = self.slacks.hess_up.clone();
        for (i, s) in self.sides.iter().enumerate() {
            match (s.kind, s.slack) {
                (SideKind::Lower | SideKind::SlackLower, Some(j)) => d_lo[j] += w[i],
                (SideKind::Upper | SideKind::SlackUpper, Some(j)) => d_up[j] += w[i],
                _ => {}
            }
        }
        flops::add(2 * self.n_sides() as u64);
        let mut aug = lin.lag_hess.clone();
        for (i, s) in self.sides.iter().enumerate() {
            if !matches!(s.kind, SideKind::Lower | SideKind::Upper) {
                continue;
            }
            let weight = match (s.kind, s.slack) {
                (SideKind::Lower, Some(j)) => {
                    flops::add(3);
                    w[i] * (d_lo[j] - w[i]) / d_lo[j]
                }
                (SideKind::Upper, Some(j)) => {
                    flops::add(3);
                    w[i] * (d_up[j] - w[i]) / d_up[j]
                }
                _ => w[i],
            };
            match self.rows[s.index] {
                RowKind::Box(k) => aug[(k, k)] += weight,
                _ => aug.rank1(weight, lin.ineq_jac.row(s.index)),
            }
        }
        BlockElimination { w, d_lo, d_up, aug }
    }

    /// Reduced right-hand side over `v` for a full right-hand side
    /// `(ρ_g, ρ_d, ρ_m)` of the block (coupling rows excluded).
    pub fn reduce_rhs(
        &self,
        lin: &LinearizedData,
        el: &BlockElimination,
        lam: &[f64],
        t: &[f64],
        rho_g: &[f64],
        rho_d: &[f64],
        rho_m: &[f64],
    ) -> ReducedRhs {
        let (nv, ns) = (self.nv, self.ns);
        let mut v = rho_g[..nv].to_vec();
        let mut s_lo = rho_g[nv..nv + ns].to_vec();
        let mut s_up = rho_g[nv + ns..].to_vec();
        let u: Vec<f64> = (0..self.n_sides())
            .map(|i| (rho_m[i] - lam[i] * rho_d[i]) / t[i])
            .collect();
        for (i, s) in self.sides.iter().enumerate() {
            self.grad_axpy(lin, s, u[i], &mut v);
            match (s.kind, s.slack) {
                (SideKind::Lower | SideKind::SlackLower, Some(j)) => s_lo[j] += u[i],
                (SideKind::Upper | SideKind::SlackUpper, Some(j)) => s_up[j] += u[i],
                _ => {}
            }
        }
        for j in 0..ns {
            if let Some(i) = self.slack_lo_side[j] {
                let s = &self.sides[i];
                self.grad_axpy(lin, s, -el.w[i] * s_lo[j] / el.d_lo[j], &mut v);
            }
            if let Some(i) = self.slack_up_side[j] {
                let s = &self.sides[i];
                self.grad_axpy(lin, s, -el.w[i] * s_up[j] / el.d_up[j], &mut v);
            }
        }
        ReducedRhs { v, s_lo, s_up }
    }

    /// Recovers the full block direction `(dy, dλ, dt)` from `dv`.
    #[allow(clippy::too_many_arguments)]
    pub fn recover(
        &self,
        lin: &LinearizedData,
        el: &BlockElimination,
        lam: &[f64],
        t: &[f64],
        red: &ReducedRhs,
        dv: &[f64],
        rho_d: &[f64],
        rho_m: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (nv, ns) = (self.nv, self.ns);
        let mut dy = dv.to_vec();
        dy.resize(self.ny(), 0.0);
        for j in 0..ns {
            let mut rl = red.s_lo[j];
            if let Some(i) = self.slack_lo_side[j] {
                rl -= el.w[i] * self.grad_dot(lin, &self.sides[i], dv);
            }
            dy[nv + j] = rl / el.d_lo[j];
            let mut ru = red.s_up[j];
            if let Some(i) = self.slack_up_side[j] {
                ru -= el.w[i] * self.grad_dot(lin, &self.sides[i], dv);
            }
            dy[nv + ns + j] = ru / el.d_up[j];
        }
        let mut dt = Vec::with_capacity(self.n_sides());
        let mut dlam = Vec::with_capacity(self.n_sides());
        for (i, s) in self.sides.iter().enumerate() {
            let g = self.grad_dot(lin, s, dv) + self.slack_entry(s).map_or(0.0, |e| dy[e]);
            let dti = rho_d[i] + g;
            dt.push(dti);
            dlam.push((rho_m[i] - lam[i] * dti) / t[i]);
        }
        (dy, dlam, dt)
    }

    /// Block rows of the Newton matrix applied to `(dy, dλ, dt)`, coupling
    /// excluded: `(H(λ)dy - ∇hᵀdλ, -∇h dy + dt, T dλ + Λ dt)`.
    #[allow(clippy::too_many_arguments)]
    pub fn apply(
        &self,
        lin: &LinearizedData,
        lam: &[f64],
        t: &[f64],
        dy: &[f64],
        dlam: &[f64],
        dt: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (nv, ns) = (self.nv, self.ns);
        let mut g = lin.lag_hess.mul_vec(&dy[..nv]);
        g.resize(self.ny(), 0.0);
        for j in 0..ns {
            g[nv + j] = self.slacks.hess_lo[j] * dy[nv + j];
            g[nv + ns + j] = self.slacks.hess_up[j] * dy[nv + ns + j];
        }
        let mut d = Vec::with_capacity(self.n_sides());
        let mut m = Vec::with_capacity(self.n_sides());
        for (i, s) in self.sides.iter().enumerate() {
            self.grad_axpy(lin, s, -dlam[i], &mut g[..nv]);
            let slack = self.slack_entry(s);
            if let Some(e) = slack {
                g[e] -= dlam[i];
            }
            let gd = self.grad_dot(lin, s, &dy[..nv]) + slack.map_or(0.0, |e| dy[e]);
            d.push(-gd + dt[i]);
            m.push(t[i] * dlam[i] + lam[i] * dt[i]);
        }
        (g, d, m)
    }
}

/// Multipliers (or slacks) of one block scattered onto its rows; inactive
/// sides read as zero.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlockDuals {
    /// Lower sides of the box and general rows.
    pub lower: Vec<f64>,
    /// Upper sides of the box, general and quadratic rows.
    pub upper: Vec<f64>,
    pub slack_lower: Vec<f64>,
    pub slack_upper: Vec<f64>,
}

impl BlockData {
    pub fn n_affine(&self) -> usize {
        self.box_idx.len() + self.gen.rows()
    }

    pub fn scatter(&self, side_vals: &[f64]) -> BlockDuals {
        let mut out = BlockDuals {
            lower: vec![0.0; self.n_affine()],
            upper: vec![0.0; self.rows.len()],
            slack_lower: vec![0.0; self.ns],
            slack_upper: vec![0.0; self.ns],
        };
        for (s, &v) in self.sides.iter().zip(side_vals) {
            match s.kind {
                SideKind::Lower => out.lower[s.index] = v,
                SideKind::Upper => out.upper[s.index] = v,
                SideKind::SlackLower => out.slack_lower[s.index] = v,
                SideKind::SlackUpper => out.slack_upper[s.index] = v,
            }
        }
        out
    }

    /// Inverse of [`BlockData::scatter`] on the active sides.
    pub fn gather(&self, d: &BlockDuals) -> Vec<f64> {
        self.sides
            .iter()
            .map(|s| match s.kind {
                SideKind::Lower => d.lower[s.index],
                SideKind::Upper => d.upper[s.index],
                SideKind::SlackLower => d.slack_lower[s.index],
                SideKind::SlackUpper => d.slack_upper[s.index],
            })
            .collect()
    }
}
