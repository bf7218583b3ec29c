//! Dense KKT backend.
//!
//! Inequality slacks, multipliers and soft-constraint slacks are eliminated,
//! leaving `M dv - Aᵀdπ = rhs, -A dv = ρ_b` with `M = H(λ) + Cᵀ W C`. Without
//! equalities `M` is factorized by Cholesky. With equalities the default is the
//! Schur complement `A M⁻¹ Aᵀ`; a null-space method based on a QR of `Aᵀ` can
//! be selected instead.

use serde::{Deserialize, Serialize};

use crate::error::QcqpError;
use crate::ipm::block::{BlockData, BlockDuals, BlockElimination, LinearizedData};
use crate::ipm::{self, EqualityMethod, IpmIterate, IpmSettings, IpmStats, KktBackend, KktVector, Residuals};
use crate::linalg::{householder_qr, Cholesky, Mat};
use crate::model::DenseQcqp;

#[derive(Clone, Debug)]
enum Factor {
    None,
    Plain(Cholesky),
    Schur {
        m: Cholesky,
        /// `M⁻¹ Aᵀ`.
        m_at: Mat,
        s: Cholesky,
    },
    NullSpace {
        y: Mat,
        z: Mat,
        r: Mat,
        zmz: Cholesky,
    },
}

#[derive(Clone, Debug)]
pub struct DenseBackend {
    block: BlockData,
    eq_mat: Mat,
    eq_rhs: Vec<f64>,
    const_term: f64,
    method: EqualityMethod,
    lin: Option<LinearizedData>,
    elim: BlockElimination,
    factor: Factor,
}

impl DenseBackend {
    pub fn new(problem: &DenseQcqp, method: EqualityMethod) -> Self {
        let block = BlockData::compile(&problem.rows(), problem.hess.clone(), problem.grad.clone());
        DenseBackend {
            block,
            eq_mat: problem.eq_mat.clone(),
            eq_rhs: problem.eq_rhs.clone(),
            const_term: problem.const_term,
            method,
            lin: None,
            elim: BlockElimination::default(),
            factor: Factor::None,
        }
    }

    pub fn n_primal(&self) -> usize {
        self.block.ny()
    }

    pub fn n_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn n_sides(&self) -> usize {
        self.block.n_sides()
    }

    pub fn sides(&self) -> &[ipm::Side] {
        &self.block.sides
    }

    pub fn linearization(&self) -> Option<&LinearizedData> {
        self.lin.as_ref()
    }

    /// Reduced Hessian `M` from the last factorization (unregularized).
    pub fn reduced_hessian(&self) -> &Mat {
        &self.elim.aug
    }

    fn lin(&self) -> &LinearizedData {
        self.lin.as_ref().expect("linearize before use")
    }

    /// Eliminates the inequality blocks at the cached linearization.
    pub fn eliminate_ineq(&mut self, it: &IpmIterate) {
        self.elim = self.block.eliminate(self.lin(), &it.lam, &it.t);
    }

    /// Factorizes the reduced system built by [`DenseBackend::eliminate_ineq`].
    pub fn factorize_dense(&mut self, reg: f64) -> Result<(), QcqpError> {
        let ne = self.n_eq();
        let m = &self.elim.aug;
        let fail = |pivot| QcqpError::Indefinite { block: 0, pivot };
        self.factor = if ne == 0 {
            Factor::Plain(Cholesky::factor(m, reg).map_err(fail)?)
        } else {
            match self.method {
                EqualityMethod::Schur => {
                    let mc = Cholesky::factor(m, reg).map_err(fail)?;
                    let at = self.eq_mat.transpose();
                    let m_at = mc.solve_mat(&at);
                    let mut s = self.eq_mat.mul(&m_at);
                    s.symmetrize();
                    let s = Cholesky::factor(&s, reg).map_err(|p| QcqpError::Indefinite { block: 1, pivot: p })?;
                    Factor::Schur { m: mc, m_at, s }
                }
                EqualityMethod::NullSpace => {
                    let nv = self.block.nv;
                    if ne > nv {
                        return Err(QcqpError::Indefinite { block: 1, pivot: nv });
                    }
                    let (q, r) = householder_qr(&self.eq_mat.transpose());
                    let scale = r.max_abs().max(1.0);
                    if let Some(p) = (0..ne).find(|&i| !(r[(i, i)].abs() > 1e-13 * scale)) {
                        return Err(QcqpError::Indefinite { block: 1, pivot: p });
                    }
                    let y = q.block(0, 0, nv, ne);
                    let z = q.block(0, ne, nv, nv - ne);
                    let mut zmz = z.tr_mul(&m.mul(&z));
                    zmz.symmetrize();
                    let zmz = Cholesky::factor(&zmz, reg).map_err(fail)?;
                    Factor::NullSpace { y, z, r, zmz }
                }
            }
        };
        Ok(())
    }

    /// Solves the reduced system for `(dv, dπ)`.
    fn solve_reduced(&self, rhs_v: &[f64], rho_b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match &self.factor {
            Factor::None => panic!("factorize before solve"),
            Factor::Plain(c) => (c.solve(rhs_v), Vec::new()),
            Factor::Schur { m, m_at, s } => {
                let mr = m.solve(rhs_v);
                let mut dpi: Vec<f64> = rho_b.iter().map(|v| -v).collect();
                self.eq_mat.gemv_acc(-1.0, &mr, &mut dpi);
                s.solve_in_place(&mut dpi);
                let mut dv = mr;
                m_at.gemv_acc(1.0, &dpi, &mut dv);
                (dv, dpi)
            }
            Factor::NullSpace { y, z, r, zmz } => {
                let ne = r.rows();
                // Rᵀ p_y = -ρ_b
                let mut py: Vec<f64> = rho_b.iter().map(|v| -v).collect();
                for i in 0..ne {
                    let mut s = py[i];
                    for k in 0..i {
                        s -= r[(k, i)] * py[k];
                    }
                    py[i] = s / r[(i, i)];
                }
                let ypy = y.mul_vec(&py);
                let m = &self.elim.aug;
                let mut t = rhs_v.to_vec();
                m.gemv_acc(-1.0, &ypy, &mut t);
                let pz = zmz.solve(&z.tr_mul_vec(&t));
                let mut dv = ypy;
                z.gemv_acc(1.0, &pz, &mut dv);
                // R dπ = Yᵀ(M dv - rhs)
                let mut w = m.mul_vec(&dv);
                for (a, b) in w.iter_mut().zip(rhs_v) {
                    *a -= b;
                }
                let mut dpi = y.tr_mul_vec(&w);
                for i in (0..ne).rev() {
                    let mut s = dpi[i];
                    for k in i + 1..ne {
                        s -= r[(i, k)] * dpi[k];
                    }
                    dpi[i] = s / r[(i, i)];
                }
                (dv, dpi)
            }
        }
    }

    /// Recovers the full direction from the reduced solution.
    pub fn recover_ineq(&self, it: &IpmIterate, rhs: &KktVector) -> KktVector {
        let lin = self.lin();
        let red = self
            .block
            .reduce_rhs(lin, &self.elim, &it.lam, &it.t, &rhs.y, &rhs.lam, &rhs.t);
        let (dv, dpi) = self.solve_reduced(&red.v, &rhs.pi);
        let (dy, dlam, dt) = self
            .block
            .recover(lin, &self.elim, &it.lam, &it.t, &red, &dv, &rhs.lam, &rhs.t);
        KktVector {
            y: dy,
            pi: dpi,
            lam: dlam,
            t: dt,
        }
    }

    pub fn duals(&self, side_vals: &[f64]) -> BlockDuals {
        self.block.scatter(side_vals)
    }
}

impl KktBackend for DenseBackend {
    fn initial_iterate(&self) -> IpmIterate {
        let y = self.block.initial_primal();
        let n = self.block.n_sides();
        IpmIterate {
            y,
            pi: vec![0.0; self.n_eq()],
            lam: vec![1.0; n],
            t: vec![1.0; n],
        }
    }

    fn linearize(&mut self, it: &IpmIterate) {
        self.lin = Some(self.block.linearize(&it.y[..self.block.nv], &it.lam));
    }

    fn residuals(&self, it: &IpmIterate, mu_target: f64) -> Residuals {
        let (mut r_g, r_d, r_m) = self.block.residuals(self.lin(), &it.y, &it.lam, &it.t, mu_target);
        let nv = self.block.nv;
        let mut r_b = self.eq_rhs.clone();
        if self.n_eq() > 0 {
            self.eq_mat.tr_gemv_acc(-1.0, &it.pi, &mut r_g[..nv]);
            self.eq_mat.gemv_acc(-1.0, &it.y[..nv], &mut r_b);
        }
        Residuals { r_g, r_b, r_d, r_m }
    }

    fn factorize(&mut self, it: &IpmIterate, reg: f64) -> Result<(), QcqpError> {
        self.eliminate_ineq(it);
        self.factorize_dense(reg)
    }

    fn solve(&self, it: &IpmIterate, rhs: &KktVector) -> KktVector {
        self.recover_ineq(it, rhs)
    }

    fn apply(&self, it: &IpmIterate, d: &KktVector) -> KktVector {
        let nv = self.block.nv;
        let (mut g, dd, m) = self.block.apply(self.lin(), &it.lam, &it.t, &d.y, &d.lam, &d.t);
        let mut b = vec![0.0; self.n_eq()];
        if self.n_eq() > 0 {
            self.eq_mat.tr_gemv_acc(-1.0, &d.pi, &mut g[..nv]);
            self.eq_mat.gemv_acc(-1.0, &d.y[..nv], &mut b);
        }
        KktVector { y: g, pi: b, lam: dd, t: m }
    }

    fn objective(&self, it: &IpmIterate) -> f64 {
        self.block.objective(&it.y) + self.const_term
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseSolution {
    pub v: Vec<f64>,
    pub sl: Vec<f64>,
    pub su: Vec<f64>,
    /// Equality multipliers.
    pub pi: Vec<f64>,
    pub lam: BlockDuals,
    /// Inequality slacks `t = h(y)` on the same rows as `lam`.
    pub t: BlockDuals,
    pub objective: f64,
    /// The raw iterate in solver layout.
    pub iterate: IpmIterate,
}

impl DenseSolution {
    fn from_iterate(backend: &DenseBackend, it: IpmIterate, objective: f64) -> Self {
        let nv = backend.block.nv;
        let ns = backend.block.ns;
        DenseSolution {
            v: it.y[..nv].to_vec(),
            sl: it.y[nv..nv + ns].to_vec(),
            su: it.y[nv + ns..].to_vec(),
            pi: it.pi.clone(),
            lam: backend.duals(&it.lam),
            t: backend.duals(&it.t),
            objective,
            iterate: it,
        }
    }
}

/// Validates and solves a dense QCQP.
pub fn solve_dense(problem: &DenseQcqp, settings: &IpmSettings) -> Result<(DenseSolution, IpmStats), QcqpError> {
    settings.validate()?;
    let report = problem.validate();
    if !report.is_empty() {
        return Err(QcqpError::Invalid(report));
    }
    let mut backend = DenseBackend::new(problem, settings.equality_method);
    let (it, stats) = ipm::solve(&mut backend, settings);
    let sol = DenseSolution::from_iterate(&backend, it, stats.objective);
    Ok((sol, stats))
}
