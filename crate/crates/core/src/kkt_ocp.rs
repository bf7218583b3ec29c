//! Riccati KKT backend for OCP-structured QCQPs.
//!
//! Each stage `(u_n, x_n, sˡ_n, sᵘ_n)` is reduced to its `(u_n, x_n)` part
//! exactly as in the dense backend. What remains is an equality-constrained
//! stage QP
//!
//! ```text
//! min Σ ½ zₙᵀ Mₙ zₙ - ρₙᵀ zₙ   s.t.  dx_{n+1} = Aₙ dxₙ + Bₙ duₙ + cₙ
//! ```
//!
//! which is solved by a backward Riccati recursion and a forward rollout. The
//! costate of the recursion is the equality multiplier step.

use serde::{Deserialize, Serialize};

use crate::error::QcqpError;
use crate::ipm::block::{BlockData, BlockDuals, BlockElimination, LinearizedData};
use crate::ipm::{self, IpmIterate, IpmSettings, IpmStats, KktBackend, KktVector, Residuals};
use crate::linalg::{Cholesky, Mat};
use crate::model::{Dynamics, OcpQcqp};

/// Stage-wise factors of the recursion.
#[derive(Clone, Debug)]
pub struct RiccatiFactorization {
    /// Cost-to-go Hessians `P_0 … P_N`.
    pub p: Vec<Mat>,
    /// Cholesky factors of `R̄ₙ = Rₙ + BₙᵀPₙ₊₁Bₙ`.
    pub l: Vec<Cholesky>,
    /// Feedback gains `Kₙ = -R̄ₙ⁻¹ S̄ₙ`.
    pub k: Vec<Mat>,
    /// Factor of `P_0` when the initial state is free.
    p0: Option<Cholesky>,
    nu: Vec<usize>,
}

/// Backward pass over the stage Hessians `hess[n]` (ordered `(u, x)`, with
/// `nu[n]` controls) already including any regularization.
pub fn riccati_factorize(hess: &[Mat], nu: &[usize], dynamics: &[Dynamics]) -> Result<RiccatiFactorization, QcqpError> {
    let n_stages = hess.len();
    assert_eq!(dynamics.len() + 1, n_stages);
    let mut p = vec![Mat::zeros(0, 0); n_stages];
    let mut l: Vec<Option<Cholesky>> = vec![None; n_stages];
    let mut k = vec![Mat::zeros(0, 0); n_stages];
    for n in (0..n_stages).rev() {
        let m = &hess[n];
        let nun = nu[n];
        let nxn = m.rows() - nun;
        let mut rbar = m.block(0, 0, nun, nun);
        let mut sbar = m.block(0, nun, nun, nxn);
        let mut qbar = m.block(nun, nun, nxn, nxn);
        if n + 1 < n_stages {
            let dy = &dynamics[n];
            let pn = &p[n + 1];
            let pb = pn.mul(&dy.b);
            let pa = pn.mul(&dy.a);
            rbar.axpy(1.0, &dy.b.tr_mul(&pb));
            sbar.axpy(1.0, &dy.b.tr_mul(&pa));
            qbar.axpy(1.0, &dy.a.tr_mul(&pa));
        }
        rbar.symmetrize();
        let chol = Cholesky::factor(&rbar, 0.0).map_err(|pivot| QcqpError::Indefinite { block: n, pivot })?;
        // K = -R̄⁻¹ S̄,  P = Q̄ + S̄ᵀ K
        let mut kn = chol.solve_mat(&sbar);
        kn.scale(-1.0);
        let mut pn = qbar;
        pn.axpy(1.0, &sbar.tr_mul(&kn));
        pn.symmetrize();
        p[n] = pn;
        k[n] = kn;
        l[n] = Some(chol);
    }
    let p0 = if p[0].rows() > 0 {
        Some(Cholesky::factor(&p[0], 0.0).map_err(|pivot| QcqpError::Indefinite { block: 0, pivot })?)
    } else {
        None
    };
    Ok(RiccatiFactorization {
        p,
        l: l.into_iter().map(|c| c.expect("every stage factored")).collect(),
        k,
        p0,
        nu: nu.to_vec(),
    })
}

/// Solves the stage QP for linear terms `-rhs[n]` over `(u, x)` and dynamics
/// offsets `cₙ = -rho_b[n]`. Returns `(dz, dπ)`.
pub fn riccati_solve(
    fact: &RiccatiFactorization,
    dynamics: &[Dynamics],
    rhs: &[Vec<f64>],
    rho_b: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n_stages = rhs.len();
    let mut kvec: Vec<Vec<f64>> = vec![Vec::new(); n_stages];
    let mut pvec: Vec<Vec<f64>> = vec![Vec::new(); n_stages];
    for n in (0..n_stages).rev() {
        let nun = fact.nu[n];
        let mut rbar: Vec<f64> = rhs[n][..nun].iter().map(|v| -v).collect();
        let mut qbar: Vec<f64> = rhs[n][nun..].iter().map(|v| -v).collect();
        if n + 1 < n_stages {
            let dy = &dynamics[n];
            // h = P c + p with c = -ρ_b
            let mut h = pvec[n + 1].clone();
            fact.p[n + 1].gemv_acc(-1.0, &rho_b[n], &mut h);
            dy.b.tr_gemv_acc(1.0, &h, &mut rbar);
            dy.a.tr_gemv_acc(1.0, &h, &mut qbar);
        }
        let mut kn = rbar.clone();
        fact.l[n].solve_in_place(&mut kn);
        kn.iter_mut().for_each(|v| *v = -*v);
        fact.k[n].tr_gemv_acc(1.0, &rbar, &mut qbar);
        kvec[n] = kn;
        pvec[n] = qbar;
    }
    let mut dz = Vec::with_capacity(n_stages);
    let mut dpi = Vec::with_capacity(n_stages.saturating_sub(1));
    let mut dx = match &fact.p0 {
        Some(c) => {
            let mut x = pvec[0].clone();
            c.solve_in_place(&mut x);
            x.iter_mut().for_each(|v| *v = -*v);
            x
        }
        None => Vec::new(),
    };
    for n in 0..n_stages {
        let mut du = kvec[n].clone();
        fact.k[n].gemv_acc(1.0, &dx, &mut du);
        let mut z = du.clone();
        z.extend_from_slice(&dx);
        dz.push(z);
        if n + 1 < n_stages {
            let dy = &dynamics[n];
            let mut next: Vec<f64> = rho_b[n].iter().map(|v| -v).collect();
            dy.a.gemv_acc(1.0, &dx, &mut next);
            dy.b.gemv_acc(1.0, &du, &mut next);
            let mut pi = pvec[n + 1].clone();
            fact.p[n + 1].gemv_acc(1.0, &next, &mut pi);
            dpi.push(pi);
            dx = next;
        }
    }
    (dz, dpi)
}

#[derive(Clone, Debug)]
pub struct RiccatiBackend {
    blocks: Vec<BlockData>,
    dynamics: Vec<Dynamics>,
    const_term: f64,
    /// Offsets of each stage in the flat `y` and side vectors.
    y_off: Vec<usize>,
    s_off: Vec<usize>,
    pi_off: Vec<usize>,
    nu: Vec<usize>,
    lin: Vec<LinearizedData>,
    elim: Vec<BlockElimination>,
    fact: Option<RiccatiFactorization>,
}

fn offsets(sizes: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut out = vec![0];
    for s in sizes {
        out.push(out.last().unwrap() + s);
    }
    out
}

impl RiccatiBackend {
    pub fn new(problem: &OcpQcqp) -> Self {
        let blocks: Vec<BlockData> = problem
            .stages
            .iter()
            .map(|st| BlockData::compile(&st.rows(), st.stacked_hess(), st.stacked_grad()))
            .collect();
        let y_off = offsets(blocks.iter().map(|b| b.ny()));
        let s_off = offsets(blocks.iter().map(|b| b.n_sides()));
        let pi_off = offsets(problem.dynamics.iter().map(|d| d.a.rows()));
        RiccatiBackend {
            nu: problem.stages.iter().map(|s| s.nu()).collect(),
            blocks,
            dynamics: problem.dynamics.clone(),
            const_term: problem.const_term,
            y_off,
            s_off,
            pi_off,
            lin: Vec::new(),
            elim: Vec::new(),
            fact: None,
        }
    }

    pub fn n_stages(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_primal(&self) -> usize {
        *self.y_off.last().unwrap()
    }

    pub fn n_eq(&self) -> usize {
        *self.pi_off.last().unwrap()
    }

    pub fn n_sides(&self) -> usize {
        *self.s_off.last().unwrap()
    }

    /// Flat ranges of stage `n` in `y`, in the side vectors and (for `n < N`)
    /// in `π`.
    pub fn stage_ranges(&self, n: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        (self.y_off[n]..self.y_off[n + 1], self.s_off[n]..self.s_off[n + 1])
    }

    pub fn pi_range(&self, n: usize) -> std::ops::Range<usize> {
        self.pi_off[n]..self.pi_off[n + 1]
    }

    pub fn stage_sides(&self, n: usize) -> &[ipm::Side] {
        &self.blocks[n].sides
    }

    pub fn factorization(&self) -> Option<&RiccatiFactorization> {
        self.fact.as_ref()
    }

    fn nx(&self, n: usize) -> usize {
        self.blocks[n].nv - self.nu[n]
    }

    fn x_range(&self, n: usize) -> std::ops::Range<usize> {
        let o = self.y_off[n] + self.nu[n];
        o..o + self.nx(n)
    }

    fn u_range(&self, n: usize) -> std::ops::Range<usize> {
        self.y_off[n]..self.y_off[n] + self.nu[n]
    }

    /// Adds `-𝒜ᵀπ` to `g`.
    fn add_coupling_transpose(&self, pi: &[f64], g: &mut [f64]) {
        for (n, dy) in self.dynamics.iter().enumerate() {
            let p = &pi[self.pi_range(n)];
            dy.a.tr_gemv_acc(1.0, p, &mut g[self.x_range(n)]);
            dy.b.tr_gemv_acc(1.0, p, &mut g[self.u_range(n)]);
            for (gi, pv) in g[self.x_range(n + 1)].iter_mut().zip(p) {
                *gi -= pv;
            }
        }
    }

    /// `𝒜 y = x_{n+1} - A x_n - B u_n`, stacked.
    fn eq_apply(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_eq()];
        for (n, dy) in self.dynamics.iter().enumerate() {
            let o = &mut out[self.pi_range(n)];
            o.copy_from_slice(&y[self.x_range(n + 1)]);
            dy.a.gemv_acc(-1.0, &y[self.x_range(n)], o);
            dy.b.gemv_acc(-1.0, &y[self.u_range(n)], o);
        }
        out
    }
}

impl KktBackend for RiccatiBackend {
    fn initial_iterate(&self) -> IpmIterate {
        let y = self.blocks.iter().flat_map(|b| b.initial_primal()).collect();
        IpmIterate {
            y,
            pi: vec![0.0; self.n_eq()],
            lam: vec![1.0; self.n_sides()],
            t: vec![1.0; self.n_sides()],
        }
    }

    fn linearize(&mut self, it: &IpmIterate) {
        self.lin = (0..self.n_stages())
            .map(|n| {
                let (yr, sr) = self.stage_ranges(n);
                let b = &self.blocks[n];
                b.linearize(&it.y[yr.start..yr.start + b.nv], &it.lam[sr])
            })
            .collect();
    }

    fn residuals(&self, it: &IpmIterate, mu_target: f64) -> Residuals {
        let mut r_g = Vec::with_capacity(self.n_primal());
        let mut r_d = Vec::with_capacity(self.n_sides());
        let mut r_m = Vec::with_capacity(self.n_sides());
        for (n, b) in self.blocks.iter().enumerate() {
            let (yr, sr) = self.stage_ranges(n);
            let (g, d, m) = b.residuals(&self.lin[n], &it.y[yr], &it.lam[sr.clone()], &it.t[sr], mu_target);
            r_g.extend(g);
            r_d.extend(d);
            r_m.extend(m);
        }
        self.add_coupling_transpose(&it.pi, &mut r_g);
        let ay = self.eq_apply(&it.y);
        let mut r_b = Vec::with_capacity(self.n_eq());
        for (n, dy) in self.dynamics.iter().enumerate() {
            for (i, off) in dy.offset.iter().enumerate() {
                r_b.push(off - ay[self.pi_off[n] + i]);
            }
        }
        Residuals { r_g, r_b, r_d, r_m }
    }

    fn factorize(&mut self, it: &IpmIterate, reg: f64) -> Result<(), QcqpError> {
        self.elim = (0..self.n_stages())
            .map(|n| {
                let (_, sr) = self.stage_ranges(n);
                self.blocks[n].eliminate(&self.lin[n], &it.lam[sr.clone()], &it.t[sr])
            })
            .collect();
        let hess: Vec<Mat> = self
            .elim
            .iter()
            .map(|e| {
                let mut m = e.aug.clone();
                m.add_diag(reg);
                m
            })
            .collect();
        self.fact = Some(riccati_factorize(&hess, &self.nu, &self.dynamics)?);
        Ok(())
    }

    fn solve(&self, it: &IpmIterate, rhs: &KktVector) -> KktVector {
        let fact = self.fact.as_ref().expect("factorize before solve");
        let mut reduced = Vec::with_capacity(self.n_stages());
        let mut red_v = Vec::with_capacity(self.n_stages());
        for (n, b) in self.blocks.iter().enumerate() {
            let (yr, sr) = self.stage_ranges(n);
            let red = b.reduce_rhs(
                &self.lin[n],
                &self.elim[n],
                &it.lam[sr.clone()],
                &it.t[sr.clone()],
                &rhs.y[yr],
                &rhs.lam[sr.clone()],
                &rhs.t[sr],
            );
            red_v.push(red.v.clone());
            reduced.push(red);
        }
        let rho_b: Vec<Vec<f64>> = (0..self.dynamics.len()).map(|n| rhs.pi[self.pi_range(n)].to_vec()).collect();
        let (dz, dpi) = riccati_solve(fact, &self.dynamics, &red_v, &rho_b);
        let mut out = KktVector {
            y: Vec::with_capacity(self.n_primal()),
            pi: dpi.into_iter().flatten().collect(),
            lam: Vec::with_capacity(self.n_sides()),
            t: Vec::with_capacity(self.n_sides()),
        };
        for (n, b) in self.blocks.iter().enumerate() {
            let (_, sr) = self.stage_ranges(n);
            let (dy, dl, dt) = b.recover(
                &self.lin[n],
                &self.elim[n],
                &it.lam[sr.clone()],
                &it.t[sr.clone()],
                &reduced[n],
                &dz[n],
                &rhs.lam[sr.clone()],
                &rhs.t[sr],
            );
            out.y.extend(dy);
            out.lam.extend(dl);
            out.t.extend(dt);
        }
        out
    }

    fn apply(&self, it: &IpmIterate, d: &KktVector) -> KktVector {
        let mut g = Vec::with_capacity(self.n_primal());
        let mut dd = Vec::with_capacity(self.n_sides());
        let mut m = Vec::with_capacity(self.n_sides());
        for (n, b) in self.blocks.iter().enumerate() {
            let (yr, sr) = self.stage_ranges(n);
            let (gn, dn, mn) = b.apply(
                &self.lin[n],
                &it.lam[sr.clone()],
                &it.t[sr.clone()],
                &d.y[yr],
                &d.lam[sr.clone()],
                &d.t[sr],
            );
            g.extend(gn);
            dd.extend(dn);
            m.extend(mn);
        }
        self.add_coupling_transpose(&d.pi, &mut g);
        let b: Vec<f64> = self.eq_apply(&d.y).into_iter().map(|v| -v).collect();
        KktVector { y: g, pi: b, lam: dd, t: m }
    }

    fn objective(&self, it: &IpmIterate) -> f64 {
        self.blocks
            .iter()
            .enumerate()
            .map(|(n, b)| b.objective(&it.y[self.stage_ranges(n).0]))
            .sum::<f64>()
            + self.const_term
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcpSolution {
    pub u: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub sl: Vec<Vec<f64>>,
    pub su: Vec<Vec<f64>>,
    /// Dynamics multipliers, one vector per stage transition.
    pub pi: Vec<Vec<f64>>,
    pub lam: Vec<BlockDuals>,
    pub t: Vec<BlockDuals>,
    pub objective: f64,
    pub iterate: IpmIterate,
}

impl OcpSolution {
    pub fn from_iterate(backend: &RiccatiBackend, it: IpmIterate, objective: f64) -> Self {
        let mut sol = OcpSolution {
            u: Vec::new(),
            x: Vec::new(),
            sl: Vec::new(),
            su: Vec::new(),
            pi: (0..backend.dynamics.len()).map(|n| it.pi[backend.pi_range(n)].to_vec()).collect(),
            lam: Vec::new(),
            t: Vec::new(),
            objective,
            iterate: IpmIterate::default(),
        };
        for (n, b) in backend.blocks.iter().enumerate() {
            let (yr, sr) = backend.stage_ranges(n);
            let y = &it.y[yr];
            let nu = backend.nu[n];
            sol.u.push(y[..nu].to_vec());
            sol.x.push(y[nu..b.nv].to_vec());
            sol.sl.push(y[b.nv..b.nv + b.ns].to_vec());
            sol.su.push(y[b.nv + b.ns..].to_vec());
            sol.lam.push(b.scatter(&it.lam[sr.clone()]));
            sol.t.push(b.scatter(&it.t[sr]));
        }
        sol.iterate = it;
        sol
    }

    /// Flat iterate in the layout of `backend` built from the stage-wise fields.
    pub fn to_iterate(&self, backend: &RiccatiBackend) -> IpmIterate {
        let mut it = IpmIterate::default();
        for (n, b) in backend.blocks.iter().enumerate() {
            it.y.extend_from_slice(&self.u[n]);
            it.y.extend_from_slice(&self.x[n]);
            it.y.extend_from_slice(&self.sl[n]);
            it.y.extend_from_slice(&self.su[n]);
            it.lam.extend(b.gather(&self.lam[n]));
            it.t.extend(b.gather(&self.t[n]));
        }
        it.pi = self.pi.iter().flatten().copied().collect();
        it
    }
}

/// Validates and solves an OCP QCQP with the Riccati backend.
pub fn solve_ocp(problem: &OcpQcqp, settings: &IpmSettings) -> Result<(OcpSolution, IpmStats), QcqpError> {
    settings.validate()?;
    let report = problem.validate();
    if !report.is_empty() {
        return Err(QcqpError::Invalid(report));
    }
    let mut backend = RiccatiBackend::new(problem);
    let (it, stats) = ipm::solve(&mut backend, settings);
    let sol = OcpSolution::from_iterate(&backend, it, stats.objective);
    Ok((sol, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ipm::{ExitStatus, Mode};
    use crate::model::OcpDims;
    use approx::assert_relative_eq;

    fn scalar_ocp() -> OcpQcqp {
        let dims = OcpDims::uniform(1, 1, 1);
        let mut p = OcpQcqp::new(&dims).unwrap();
        for st in &mut p.stages {
            st.q = Mat::identity(1);
            if st.nu() > 0 {
                st.r = Mat::identity(1);
            }
        }
        p.dynamics[0].a = Mat::identity(1);
        p.dynamics[0].b = Mat::identity(1);
        p
    }

    #[test]
    fn scalar_riccati_factors() {
        let p = scalar_ocp();
        let hess: Vec<Mat> = p.stages.iter().map(|s| s.stacked_hess()).collect();
        let f = riccati_factorize(&hess, &[1, 0], &p.dynamics).unwrap();
        assert_relative_eq!(f.p[1][(0, 0)], 1.0);
        assert_relative_eq!(f.l[0].l()[(0, 0)], 2.0_f64.sqrt());
        assert_relative_eq!(f.k[0][(0, 0)], -0.5);
        assert_relative_eq!(f.p[0][(0, 0)], 1.5);
    }

    #[test]
    fn scalar_riccati_direction() {
        let p = scalar_ocp();
        let mut b = RiccatiBackend::new(&p);
        let it = b.initial_iterate();
        b.linearize(&it);
        b.factorize(&it, 0.0).unwrap();
        // r_g = (1, 0, 0) over (u0, x0, x1), everything else zero
        let rhs = KktVector {
            y: vec![-1.0, 0.0, 0.0],
            pi: vec![0.0],
            lam: vec![],
            t: vec![],
        };
        let d = b.solve(&it, &rhs);
        let expect = [-2.0 / 3.0, 1.0 / 3.0, -1.0 / 3.0];
        for (a, e) in d.y.iter().zip(expect) {
            assert_relative_eq!(*a, e, epsilon = 1e-14);
        }
        assert_relative_eq!(d.pi[0], -1.0 / 3.0, epsilon = 1e-14);
        assert!(b.apply(&it, &d).sub(&rhs).norm_inf() < 1e-14);
    }

    #[test]
    fn indefinite_control_block_fails() {
        let mut p = scalar_ocp();
        p.stages[0].r = Mat::from_diag(&[-5.0]);
        let mut b = RiccatiBackend::new(&p);
        let it = b.initial_iterate();
        b.linearize(&it);
        assert!(matches!(b.factorize(&it, 0.0), Err(QcqpError::Indefinite { block: 0, .. })));
    }

    #[test]
    fn bounded_scalar_ocp_converges() {
        let mut p = scalar_ocp();
        // x1 ≥ 0.5 forces u0 + x0 ≥ 0.5
        let st = &mut p.stages[1];
        *st = crate::model::OcpStage::new(crate::model::StageDims { nx: 1, nbx: 1, ..Default::default() });
        st.q = Mat::identity(1);
        st.idxbx = vec![0];
        st.lb = vec![0.5];
        st.ub = vec![f64::INFINITY];
        let (sol, stats) = solve_ocp(&p, &IpmSettings::for_mode(Mode::Robust)).unwrap();
        assert_eq!(stats.status, ExitStatus::Converged);
        assert_relative_eq!(sol.x[1][0], 0.5, epsilon = 1e-7);
        // min ½u² + ½x0² + ½x1² on u + x0 = x1 = 0.5
        assert_relative_eq!(sol.u[0][0], 0.25, epsilon = 1e-7);
        assert_relative_eq!(sol.x[0][0], 0.25, epsilon = 1e-7);
        let back = sol.to_iterate(&RiccatiBackend::new(&p));
        assert_eq!(back, sol.iterate);
    }
}
