//! Shared fixtures for the integration tests: random convex instances and an
//! independent solve of the flat Newton system with nalgebra.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use qcqp::ipm::{self, IpmIterate, IpmSettings, IterationView};
use qcqp::model::{DenseDims, OcpDims, QuadConstraint, Slacks};
use qcqp::{DenseQcqp, Mat, OcpQcqp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    r.gen_range(lo..hi)
}

fn rand_vec(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| uniform(r, -scale, scale)).collect()
}

fn rand_mat(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    let data = rand_vec(r, rows * cols, scale);
    Mat::from_row_slice(rows, cols, &data)
}

/// `M Mᵀ / n + shift·I` with `M` of the given rank.
fn rand_psd(r: &mut ChaCha8Rng, n: usize, rank: usize, shift: f64) -> Mat {
    let m = rand_mat(r, n, rank, 1.0);
    let mut h = m.mul_tr(&m);
    h.scale(1.0 / n.max(1) as f64);
    h.add_diag(shift);
    h.symmetrize();
    h
}

/// Limits around a value with random gaps; each side is dropped with
/// probability 0.2.
fn limits(r: &mut ChaCha8Rng, value: f64) -> (f64, f64) {
    let lo = if r.gen_bool(0.2) { f64::NEG_INFINITY } else { value - uniform(r, 0.2, 1.5) };
    let up = if r.gen_bool(0.2) { f64::INFINITY } else { value + uniform(r, 0.2, 1.5) };
    (lo, up)
}

fn choose(r: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = r.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k.min(n));
    idx
}

/// Random soft-row assignment and masks for `rows` rows.
fn soften(r: &mut ChaCha8Rng, rows: usize) -> (Vec<Option<usize>>, Slacks, Vec<bool>, Vec<bool>) {
    let mut map = vec![None; rows];
    let mut ns = 0;
    for m in map.iter_mut() {
        if r.gen_bool(0.3) {
            *m = Some(ns);
            ns += 1;
        }
    }
    let mut s = Slacks::zeros(ns);
    for j in 0..ns {
        s.hess_lo[j] = uniform(r, 0.5, 5.0);
        s.hess_up[j] = uniform(r, 0.5, 5.0);
        s.grad_lo[j] = uniform(r, 0.0, 2.0);
        s.grad_up[j] = uniform(r, 0.0, 2.0);
    }
    let mlo = (0..rows).map(|_| !r.gen_bool(0.1)).collect();
    let mup = (0..rows).map(|_| !r.gen_bool(0.1)).collect();
    (map, s, mlo, mup)
}

/// Convex dense QCQP with `nv ≤ 10`, `ne ≤ 3`, `nq ≤ 3`, feasible at a random
/// point in `[-1, 1]^nv`.
pub fn dense_instance(seed: u64) -> DenseQcqp {
    let r = &mut rng(seed);
    let nv = r.gen_range(1..=10);
    let ne = r.gen_range(0..=3.min(nv - 1));
    let nb = r.gen_range(0..=nv);
    let ng = r.gen_range(0..=3);
    let nq = r.gen_range(0..=3);
    let v0 = rand_vec(r, nv, 1.0);
    let (soft_map, slacks, mask_lo, mask_up) = soften(r, nb + ng + nq);
    let mut p = DenseQcqp::new(DenseDims { nv, ne, nb, ng, nq, ns: slacks.len() });
    p.hess = rand_psd(r, nv, nv, 0.1);
    p.grad = rand_vec(r, nv, 1.0);
    p.eq_mat = rand_mat(r, ne, nv, 1.0);
    p.eq_rhs = p.eq_mat.mul_vec(&v0);
    p.box_idx = choose(r, nv, nb);
    for (k, &i) in p.box_idx.clone().iter().enumerate() {
        (p.lb[k], p.ub[k]) = limits(r, v0[i]);
    }
    p.gen_mat = rand_mat(r, ng, nv, 1.0);
    for k in 0..ng {
        let a = qcqp::linalg::dot(p.gen_mat.row(k), &v0);
        (p.lb[nb + k], p.ub[nb + k]) = limits(r, a);
    }
    for q in p.quad.iter_mut() {
        let rank = r.gen_range(1..=nv);
        let mut c = QuadConstraint {
            hess: rand_psd(r, nv, rank, 0.0),
            grad: rand_vec(r, nv, 0.5),
            upper: 0.0,
        };
        c.upper = c.value(&v0) + uniform(r, 0.2, 1.5);
        *q = c;
    }
    p.slacks = slacks;
    p.soft_map = soft_map;
    p.mask_lo = mask_lo;
    p.mask_up = mask_up;
    p
}

/// Convex OCP QCQP with `N ≤ 5`, `nx ≤ 4`, `nu ≤ 2`, feasible along a random
/// rollout. Returns the problem and the feasible initial state.
pub fn ocp_instance(seed: u64) -> (OcpQcqp, Vec<f64>) {
    let r = &mut rng(seed ^ 0x05ee_d0c9);
    let horizon = r.gen_range(1..=5);
    let nx = r.gen_range(1..=4);
    let nu = r.gen_range(1..=2);
    let mut dims = OcpDims::uniform(horizon, nx, nu);
    for n in 0..=horizon {
        let nu_n = dims.nu[n];
        dims.nbu[n] = r.gen_range(0..=nu_n);
        dims.nbx[n] = r.gen_range(0..=nx);
        dims.ng[n] = r.gen_range(0..=2);
        dims.nq[n] = r.gen_range(0..=2);
    }
    let mut masks = Vec::new();
    for n in 0..=horizon {
        let rows = dims.nbu[n] + dims.nbx[n] + dims.ng[n] + dims.nq[n];
        let m = soften(r, rows);
        dims.ns[n] = m.1.len();
        masks.push(m);
    }
    let mut p = OcpQcqp::new(&dims).unwrap();
    let x0 = rand_vec(r, nx, 1.0);
    let us: Vec<Vec<f64>> = (0..=horizon).map(|n| rand_vec(r, dims.nu[n], 1.0)).collect();
    for dy in p.dynamics.iter_mut() {
        let mut a = rand_mat(r, nx, nx, 0.3);
        a.add_diag(1.0);
        dy.a = a;
        dy.b = rand_mat(r, nx, nu, 1.0);
        dy.offset = rand_vec(r, nx, 0.1);
    }
    let xs = p.rollout(&x0, &us);
    for (n, ((st, (soft_map, slacks, mask_lo, mask_up)), x)) in p.stages.iter_mut().zip(masks).zip(&xs).enumerate() {
        let nu_n = dims.nu[n];
        let nz = nu_n + nx;
        let h = rand_psd(r, nz, nz, 0.1);
        st.r = h.block(0, 0, nu_n, nu_n);
        st.s = h.block(0, nu_n, nu_n, nx);
        st.q = h.block(nu_n, nu_n, nx, nx);
        st.rvec = rand_vec(r, nu_n, 1.0);
        st.qvec = rand_vec(r, nx, 1.0);
        let mut z = us[n].clone();
        z.extend_from_slice(x);
        st.idxbu = choose(r, nu_n, dims.nbu[n]);
        st.idxbx = choose(r, nx, dims.nbx[n]);
        let nbu = st.idxbu.len();
        for k in 0..nbu {
            (st.lb[k], st.ub[k]) = limits(r, us[n][st.idxbu[k]]);
        }
        for k in 0..st.idxbx.len() {
            (st.lb[nbu + k], st.ub[nbu + k]) = limits(r, x[st.idxbx[k]]);
        }
        let nb = st.nb();
        let ng = dims.ng[n];
        st.d = rand_mat(r, ng, nu_n, 1.0);
        st.c = rand_mat(r, ng, nx, 1.0);
        for k in 0..ng {
            let a = qcqp::linalg::dot(st.d.row(k), &us[n]) + qcqp::linalg::dot(st.c.row(k), x);
            (st.lb[nb + k], st.ub[nb + k]) = limits(r, a);
        }
        for q in st.quad.iter_mut() {
            let rank = r.gen_range(1..=nz);
            let mut c = QuadConstraint {
                hess: rand_psd(r, nz, rank, 0.0),
                grad: rand_vec(r, nz, 0.5),
                upper: 0.0,
            };
            c.upper = c.value(&z) + uniform(r, 0.2, 1.5);
            *q = c;
        }
        st.slacks = slacks;
        st.soft_map = soft_map;
        st.mask_lo = mask_lo;
        st.mask_up = mask_up;
    }
    (p, x0)
}

/// One inequality side `h(y) = c + aᵀy + ½ yᵀQy ≥ 0` of the flat problem.
pub struct FlatSide {
    pub c: f64,
    pub a: DVector<f64>,
    pub q: Option<DMatrix<f64>>,
}

impl FlatSide {
    fn value(&self, y: &DVector<f64>) -> f64 {
        self.c + self.a.dot(y) + self.q.as_ref().map_or(0.0, |q| 0.5 * y.dot(&(q * y)))
    }

    fn grad(&self, y: &DVector<f64>) -> DVector<f64> {
        match &self.q {
            Some(q) => &self.a + q * y,
            None => self.a.clone(),
        }
    }
}

/// `min ½yᵀHy + gᵀy  s.t.  𝒜y = b, h(y) ≥ 0` assembled directly from the
/// problem data.
pub struct FlatProblem {
    pub hess: DMatrix<f64>,
    pub grad: DVector<f64>,
    pub eq: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub sides: Vec<FlatSide>,
}

fn dm(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

/// Rows of one block over its local variables `z`, embedded into `ny` flat
/// variables at offset `off`; slacks follow `z` as `(sˡ, sᵘ)`.
struct BlockRows<'a> {
    nz: usize,
    box_idx: Vec<usize>,
    gen: Mat,
    lb: &'a [f64],
    ub: &'a [f64],
    quad: &'a [QuadConstraint],
    slacks: &'a Slacks,
    soft_map: &'a [Option<usize>],
    mask_lo: &'a [bool],
    mask_up: &'a [bool],
}

impl BlockRows<'_> {
    /// Sides in solver order: lower sides of affine rows, upper sides of all
    /// rows, slack lower bounds, slack upper bounds.
    fn sides(&self, ny: usize, off: usize) -> Vec<FlatSide> {
        let (nb, ng) = (self.box_idx.len(), self.gen.rows());
        let ns = self.slacks.len();
        let row_grad = |r: usize| {
            let mut a = DVector::zeros(ny);
            if r < nb {
                a[off + self.box_idx[r]] = 1.0;
            } else {
                for j in 0..self.nz {
                    a[off + j] = self.gen[(r - nb, j)];
                }
            }
            a
        };
        let mut out = Vec::new();
        for r in 0..nb + ng {
            if self.mask_lo[r] && self.lb[r].is_finite() {
                let mut a = row_grad(r);
                if let Some(j) = self.soft_map[r] {
                    a[off + self.nz + j] = 1.0;
                }
                out.push(FlatSide { c: -self.lb[r], a, q: None });
            }
        }
        for r in 0..nb + ng + self.quad.len() {
            let (upper, mut a, q) = if r < nb + ng {
                (self.ub[r], -row_grad(r), None)
            } else {
                let qc = &self.quad[r - nb - ng];
                let mut a = DVector::zeros(ny);
                let mut q = DMatrix::zeros(ny, ny);
                for i in 0..self.nz {
                    a[off + i] = -qc.grad[i];
                    for j in 0..self.nz {
                        q[(off + i, off + j)] = -qc.hess[(i, j)];
                    }
                }
                (qc.upper, a, Some(q))
            };
            if self.mask_up[r] && upper.is_finite() {
                if let Some(j) = self.soft_map[r] {
                    a[off + self.nz + ns + j] = 1.0;
                }
                out.push(FlatSide { c: upper, a, q });
            }
        }
        for (k, lims) in [&self.slacks.lb_lo, &self.slacks.lb_up].into_iter().enumerate() {
            for j in 0..ns {
                if lims[j].is_finite() {
                    let mut a = DVector::zeros(ny);
                    a[off + self.nz + k * ns + j] = 1.0;
                    out.push(FlatSide { c: -lims[j], a, q: None });
                }
            }
        }
        out
    }

    fn ny(&self) -> usize {
        self.nz + 2 * self.slacks.len()
    }
}

fn add_objective(
    hess: &mut DMatrix<f64>,
    grad: &mut DVector<f64>,
    off: usize,
    h: &Mat,
    g: &[f64],
    s: &Slacks,
) {
    let nz = g.len();
    let ns = s.len();
    for i in 0..nz {
        grad[off + i] = g[i];
        for j in 0..nz {
            hess[(off + i, off + j)] = h[(i, j)];
        }
    }
    for j in 0..ns {
        hess[(off + nz + j, off + nz + j)] = s.hess_lo[j];
        hess[(off + nz + ns + j, off + nz + ns + j)] = s.hess_up[j];
        grad[off + nz + j] = s.grad_lo[j];
        grad[off + nz + ns + j] = s.grad_up[j];
    }
}

pub fn flat_dense(p: &DenseQcqp) -> FlatProblem {
    let rows = BlockRows {
        nz: p.nv(),
        box_idx: p.box_idx.clone(),
        gen: p.gen_mat.clone(),
        lb: &p.lb,
        ub: &p.ub,
        quad: &p.quad,
        slacks: &p.slacks,
        soft_map: &p.soft_map,
        mask_lo: &p.mask_lo,
        mask_up: &p.mask_up,
    };
    let ny = rows.ny();
    let mut hess = DMatrix::zeros(ny, ny);
    let mut grad = DVector::zeros(ny);
    add_objective(&mut hess, &mut grad, 0, &p.hess, &p.grad, &p.slacks);
    let mut eq = DMatrix::zeros(p.ne(), ny);
    for i in 0..p.ne() {
        for j in 0..p.nv() {
            eq[(i, j)] = p.eq_mat[(i, j)];
        }
    }
    FlatProblem {
        hess,
        grad,
        eq,
        eq_rhs: DVector::from_column_slice(&p.eq_rhs),
        sides: rows.sides(ny, 0),
    }
}

/// Flat OCP with stage variables `(u_n, x_n, sˡ_n, sᵘ_n)` and dynamics rows
/// `x_{n+1} - A_n x_n - B_n u_n = b_n`.
pub fn flat_ocp(p: &OcpQcqp) -> FlatProblem {
    let blocks: Vec<BlockRows> = p
        .stages
        .iter()
        .map(|st| {
            let nu = st.nu();
            let mut gen = Mat::zeros(st.ng(), nu + st.nx());
            for k in 0..st.ng() {
                for j in 0..nu {
                    gen[(k, j)] = st.d[(k, j)];
                }
                for j in 0..st.nx() {
                    gen[(k, nu + j)] = st.c[(k, j)];
                }
            }
            BlockRows {
                nz: nu + st.nx(),
                box_idx: st.idxbu.iter().copied().chain(st.idxbx.iter().map(|i| nu + i)).collect(),
                gen,
                lb: &st.lb,
                ub: &st.ub,
                quad: &st.quad,
                slacks: &st.slacks,
                soft_map: &st.soft_map,
                mask_lo: &st.mask_lo,
                mask_up: &st.mask_up,
            }
        })
        .collect();
    let mut offs = vec![0];
    for b in &blocks {
        offs.push(offs.last().unwrap() + b.ny());
    }
    let ny = *offs.last().unwrap();
    let ne: usize = p.dynamics.iter().map(|d| d.offset.len()).sum();
    let mut hess = DMatrix::zeros(ny, ny);
    let mut grad = DVector::zeros(ny);
    let mut sides = Vec::new();
    for (n, st) in p.stages.iter().enumerate() {
        let nu = st.nu();
        let nz = nu + st.nx();
        let mut h = Mat::zeros(nz, nz);
        for i in 0..nz {
            for j in 0..nz {
                h[(i, j)] = match (i < nu, j < nu) {
                    (true, true) => st.r[(i, j)],
                    (true, false) => st.s[(i, j - nu)],
                    (false, true) => st.s[(j, i - nu)],
                    (false, false) => st.q[(i - nu, j - nu)],
                };
            }
        }
        let g: Vec<f64> = st.rvec.iter().chain(&st.qvec).copied().collect();
        add_objective(&mut hess, &mut grad, offs[n], &h, &g, &st.slacks);
        sides.extend(blocks[n].sides(ny, offs[n]));
    }
    let mut eq = DMatrix::zeros(ne, ny);
    let mut eq_rhs = DVector::zeros(ne);
    let mut row = 0;
    for (n, dy) in p.dynamics.iter().enumerate() {
        let (nu0, nx0) = (p.stages[n].nu(), p.stages[n].nx());
        let nu1 = p.stages[n + 1].nu();
        for i in 0..dy.offset.len() {
            eq[(row, offs[n + 1] + nu1 + i)] = 1.0;
            for j in 0..nx0 {
                eq[(row, offs[n] + nu0 + j)] = -dy.a[(i, j)];
            }
            for j in 0..nu0 {
                eq[(row, offs[n] + j)] = -dy.b[(i, j)];
            }
            eq_rhs[row] = dy.offset[i];
            row += 1;
        }
    }
    FlatProblem { hess, grad, eq, eq_rhs, sides }
}

impl FlatProblem {
    pub fn ny(&self) -> usize {
        self.grad.len()
    }

    /// Residual `F` and Jacobian `J` of the relaxed optimality conditions at
    /// `(y, π, λ, t)` with `μ = 0`, unknowns ordered `(y, π, λ, t)`.
    pub fn system(&self, it: &IpmIterate) -> (DVector<f64>, DMatrix<f64>) {
        let (ny, ne, ni) = (self.ny(), self.eq_rhs.len(), self.sides.len());
        let y = DVector::from_column_slice(&it.y);
        let pi = DVector::from_column_slice(&it.pi);
        let n = ny + ne + 2 * ni;
        let mut f = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, n);
        let mut lag_hess = self.hess.clone();
        let mut rg = &self.hess * &y + &self.grad - self.eq.transpose() * &pi;
        for (i, s) in self.sides.iter().enumerate() {
            let g = s.grad(&y);
            rg -= it.lam[i] * &g;
            if let Some(q) = &s.q {
                lag_hess -= it.lam[i] * q;
            }
            for k in 0..ny {
                j[(k, ny + ne + i)] = -g[k];
                j[(ny + ne + i, k)] = -g[k];
            }
            f[ny + ne + i] = it.t[i] - s.value(&y);
            f[ny + ne + ni + i] = it.lam[i] * it.t[i];
            j[(ny + ne + i, ny + ne + ni + i)] = 1.0;
            j[(ny + ne + ni + i, ny + ne + i)] = it.t[i];
            j[(ny + ne + ni + i, ny + ne + ni + i)] = it.lam[i];
        }
        f.rows_mut(0, ny).copy_from(&rg);
        f.rows_mut(ny, ne).copy_from(&(&self.eq_rhs - &self.eq * &y));
        j.view_mut((0, 0), (ny, ny)).copy_from(&lag_hess);
        j.view_mut((0, ny), (ny, ne)).copy_from(&(-self.eq.transpose()));
        j.view_mut((ny, 0), (ne, ny)).copy_from(&(-&self.eq));
        (f, j)
    }

    /// Newton direction `J d = -F`.
    pub fn newton(&self, it: &IpmIterate) -> DVector<f64> {
        let (f, j) = self.system(it);
        j.lu().solve(&(-f)).expect("flat Newton matrix is singular")
    }
}

pub fn rel_err(a: &[f64], b: &DVector<f64>) -> f64 {
    let scale = b.amax().max(1e-300);
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Iterations whose largest `λ/t` exceeds this are outside the range where
/// the eliminated systems keep 1e-8 accuracy.
pub const MODERATE_WEIGHT: f64 = 1e12;

/// Largest relative deviation of the affine directions from the flat solve
/// over all iterations, plus iteration-level invariant violations.
#[derive(Debug, Default)]
pub struct OracleReport {
    pub iterations: usize,
    pub max_rel_err: f64,
    /// Same, over iterations with `max λ/t ≤ MODERATE_WEIGHT`.
    pub max_rel_err_moderate: f64,
    pub max_weight: f64,
    pub positivity_ok: bool,
    pub steps_ok: bool,
}

pub fn observe<B: ipm::KktBackend>(backend: &mut B, flat: &FlatProblem, settings: &IpmSettings) -> OracleReport {
    let mut rep = OracleReport {
        positivity_ok: true,
        steps_ok: true,
        ..Default::default()
    };
    let (last, _) = ipm::solve_observed(backend, settings, |v: &IterationView<'_>| {
        let d = flat.newton(v.iterate);
        let err = rel_err(&v.affine.to_flat(), &d);
        let w = v.iterate.lam.iter().zip(&v.iterate.t).map(|(l, t)| l / t).fold(0.0, f64::max);
        rep.max_rel_err = rep.max_rel_err.max(err);
        if w <= MODERATE_WEIGHT {
            rep.max_rel_err_moderate = rep.max_rel_err_moderate.max(err);
        }
        rep.max_weight = rep.max_weight.max(w);
        rep.iterations += 1;
        rep.positivity_ok &= v.iterate.lam.iter().chain(&v.iterate.t).all(|x| *x > 0.0);
        rep.steps_ok &= [v.alpha_primal, v.alpha_dual].iter().all(|a| *a > 0.0 && *a <= 1.0);
    });
    rep.positivity_ok &= last.lam.iter().chain(&last.t).all(|x| *x > 0.0);
    rep
}
