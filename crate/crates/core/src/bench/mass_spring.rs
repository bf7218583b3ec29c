//! Chain of unit masses between two walls, linked by unit springs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::QcqpError;
use crate::linalg::{lu_solve, Mat};
use crate::model::{OcpDims, OcpQcqp, QuadConstraint};

/// Constraint configuration of a benchmark instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintConfig {
    /// Control bounds and soft terminal state bounds.
    Qp0,
    /// Control bounds and one soft terminal quadratic constraint.
    Qcqp1,
    /// Quadratic control constraints and one soft terminal quadratic constraint.
    QcqpN,
    /// Control bounds and a soft energy constraint on the second mass.
    QcqpEnergy,
    /// Square approximation of the energy disk.
    Qp4,
    /// Hexagon approximation of the energy disk.
    Qp6,
    /// Octagon approximation of the energy disk.
    Qp8,
}

impl ConstraintConfig {
    pub fn label(self) -> &'static str {
        match self {
            ConstraintConfig::Qp0 => "QP_0",
            ConstraintConfig::Qcqp1 => "QCQP_1",
            ConstraintConfig::QcqpN => "QCQP_N",
            ConstraintConfig::QcqpEnergy => "QCQP_inf",
            ConstraintConfig::Qp4 => "QP_4",
            ConstraintConfig::Qp6 => "QP_6",
            ConstraintConfig::Qp8 => "QP_8",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        [
            ConstraintConfig::Qp0,
            ConstraintConfig::Qcqp1,
            ConstraintConfig::QcqpN,
            ConstraintConfig::QcqpEnergy,
            ConstraintConfig::Qp4,
            ConstraintConfig::Qp6,
            ConstraintConfig::Qp8,
        ]
        .into_iter()
        .find(|c| c.label() == s)
    }

    /// Number of polygon sides for the affine disk approximations.
    pub fn polygon_sides(self) -> Option<usize> {
        match self {
            ConstraintConfig::Qp4 => Some(4),
            ConstraintConfig::Qp6 => Some(6),
            ConstraintConfig::Qp8 => Some(8),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassSpringSpec {
    pub n_masses: usize,
    /// Forces act on the first `n_forces` masses.
    pub n_forces: usize,
    pub horizon: usize,
    /// Sampling period in seconds.
    pub ts: f64,
    pub config: ConstraintConfig,
    /// `|u| ≤ u_bound`.
    pub u_bound: f64,
    /// Half-width of the terminal box, radius of the terminal ball.
    pub terminal_bound: f64,
    /// Radius `ρ` of the energy disk `½(p₂² + v₂²) ≤ ½ρ²`. `None` picks half
    /// the initial distance, so the initial state violates it.
    pub radius: Option<f64>,
    pub state_weight: f64,
    pub control_weight: f64,
    /// Quadratic and linear slack penalties of softened rows.
    pub soft_quad: f64,
    pub soft_lin: f64,
    /// Keeps the energy and polygon rows hard.
    pub hard: bool,
    pub seed: u64,
    /// Overrides the seeded initial state.
    pub x0: Option<Vec<f64>>,
}

impl MassSpringSpec {
    pub fn table1(config: ConstraintConfig, seed: u64) -> Self {
        MassSpringSpec {
            n_masses: 2,
            n_forces: 1,
            horizon: 15,
            ts: 0.5,
            config,
            u_bound: 0.5,
            terminal_bound: 0.1,
            radius: None,
            state_weight: 1.0,
            control_weight: 1.0,
            soft_quad: 1e3,
            soft_lin: 1e2,
            hard: false,
            seed,
            x0: None,
        }
    }

    pub fn table2(config: ConstraintConfig, seed: u64) -> Self {
        MassSpringSpec {
            horizon: 6,
            state_weight: 0.0,
            ..Self::table1(config, seed)
        }
    }

    pub fn nx(&self) -> usize {
        2 * self.n_masses
    }

    pub fn initial_state(&self) -> Vec<f64> {
        if let Some(x0) = &self.x0 {
            return x0.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.nx()).map(|_| rng.gen_range(-1.0..=1.0)).collect()
    }

    /// Radius of the energy disk for this spec.
    pub fn disk_radius(&self) -> f64 {
        self.radius.unwrap_or_else(|| {
            let x0 = self.initial_state();
            let m = self.n_masses;
            0.5 * x0[1].hypot(x0[m + 1])
        })
    }

    fn check(&self) -> Result<(), QcqpError> {
        if self.n_masses == 0 || self.n_forces > self.n_masses {
            return Err(QcqpError::Argument("need 1 ≤ forces ≤ masses".into()));
        }
        if self.horizon == 0 {
            return Err(QcqpError::Argument("horizon must be at least 1".into()));
        }
        let needs_second = matches!(
            self.config,
            ConstraintConfig::QcqpEnergy | ConstraintConfig::Qp4 | ConstraintConfig::Qp6 | ConstraintConfig::Qp8
        );
        if needs_second && self.n_masses < 2 {
            return Err(QcqpError::Argument("energy constraints need a second mass".into()));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != self.nx() {
                return Err(QcqpError::Dimension(format!("x0 needs {} entries", self.nx())));
            }
        }
        Ok(())
    }
}

/// Continuous-time `(A_c, B_c)` for `m` masses with states `(p, v)`.
pub fn continuous_dynamics(m: usize, nu: usize) -> (Mat, Mat) {
    let nx = 2 * m;
    let mut a = Mat::zeros(nx, nx);
    for i in 0..m {
        a[(i, m + i)] = 1.0;
        a[(m + i, i)] = -2.0;
        if i > 0 {
            a[(m + i, i - 1)] = 1.0;
        }
        if i + 1 < m {
            a[(m + i, i + 1)] = 1.0;
        }
    }
    let mut b = Mat::zeros(nx, nu);
    for j in 0..nu {
        b[(m + j, j)] = 1.0;
    }
    (a, b)
}

/// Matrix exponential by scaling and squaring with a (6, 6) Padé approximant.
pub fn expm(a: &Mat) -> Mat {
    let n = a.rows();
    let norm = (0..n).map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let mut x = a.clone();
    x.scale(0.5_f64.powi(s));
    let p = 6;
    let mut c = 1.0;
    let mut num = Mat::identity(n);
    let mut den = Mat::identity(n);
    let mut pow = Mat::identity(n);
    for k in 1..=p {
        c *= (p - k + 1) as f64 / (k * (2 * p - k + 1)) as f64;
        pow = pow.mul(&x);
        num.axpy(c, &pow);
        den.axpy(if k % 2 == 0 { c } else { -c }, &pow);
    }
    let mut e = lu_solve(&den, &num).expect("Padé denominator is well conditioned after scaling");
    for _ in 0..s {
        e = e.mul(&e);
    }
    e
}

/// Zero-order-hold discretization `(A_d, B_d)` at period `ts`.
pub fn zoh(ac: &Mat, bc: &Mat, ts: f64) -> (Mat, Mat) {
    let (nx, nu) = (ac.rows(), bc.cols());
    let mut m = Mat::zeros(nx + nu, nx + nu);
    m.set_block(0, 0, ac);
    m.set_block(0, nx, bc);
    m.scale(ts);
    let e = expm(&m);
    (e.block(0, 0, nx, nx), e.block(0, nx, nx, nu))
}

/// Outward unit normals and the apothem of a regular polygon inscribed in a
/// disk of radius `rho`, one normal per pair of opposite sides.
pub fn polygon_normals(sides: usize, rho: f64) -> Result<(Vec<[f64; 2]>, f64), QcqpError> {
    let (offset, step) = match sides {
        4 => (0.0, 90.0),
        6 => (0.0, 60.0),
        8 => (22.5, 45.0),
        _ => return Err(QcqpError::Argument(format!("unsupported polygon with {sides} sides"))),
    };
    let apothem = rho * (std::f64::consts::PI / sides as f64).cos();
    let normals = (0..sides / 2)
        .map(|k| {
            let th = (offset + step * k as f64).to_radians();
            [th.cos(), th.sin()]
        })
        .collect();
    Ok((normals, apothem))
}

struct StageLayout {
    nbu: usize,
    nbx: usize,
    ng: usize,
    nq: usize,
    ns: usize,
}

fn layout(spec: &MassSpringSpec, n: usize) -> StageLayout {
    let n_h = spec.horizon;
    let nx = spec.nx();
    let has_u = n < n_h;
    let nu = if has_u { spec.n_forces } else { 0 };
    let soft = usize::from(!spec.hard);
    let mut l = StageLayout {
        nbu: 0,
        nbx: if n == 0 { nx } else { 0 },
        ng: 0,
        nq: 0,
        ns: 0,
    };
    match spec.config {
        ConstraintConfig::Qp0 | ConstraintConfig::Qcqp1 | ConstraintConfig::QcqpN => {
            if spec.config == ConstraintConfig::QcqpN {
                l.nq += usize::from(has_u);
            } else {
                l.nbu = nu;
            }
            if n == n_h {
                if spec.config == ConstraintConfig::Qp0 {
                    l.nbx += nx;
                    l.ns = nx;
                } else {
                    l.nq += 1;
                    l.ns = 1;
                }
            }
        }
        ConstraintConfig::QcqpEnergy | ConstraintConfig::Qp4 | ConstraintConfig::Qp6 | ConstraintConfig::Qp8 => {
            l.nbu = nu;
            if n >= 1 {
                let rows = match spec.config {
                    ConstraintConfig::QcqpEnergy => {
                        l.nq = 1;
                        1
                    }
                    ConstraintConfig::Qp4 => {
                        l.nbx += 2;
                        2
                    }
                    c => {
                        l.ng = c.polygon_sides().unwrap() / 2;
                        l.ng
                    }
                };
                l.ns = rows * soft;
            }
        }
    }
    l
}

/// Builds the benchmark OCP with the initial state kept as a variable and
/// pinned by a stage-0 box `lb = ub = x̂₀`.
pub fn mass_spring_ocp(spec: &MassSpringSpec) -> Result<OcpQcqp, QcqpError> {
    spec.check()?;
    let n_h = spec.horizon;
    let (m, nx, nu) = (spec.n_masses, spec.nx(), spec.n_forces);
    let layouts: Vec<StageLayout> = (0..=n_h).map(|n| layout(spec, n)).collect();
    let mut dims = OcpDims::uniform(n_h, nx, nu);
    for (n, l) in layouts.iter().enumerate() {
        dims.nbu[n] = l.nbu;
        dims.nbx[n] = l.nbx;
        dims.ng[n] = l.ng;
        dims.nq[n] = l.nq;
        dims.ns[n] = l.ns;
    }
    let mut p = OcpQcqp::new(&dims)?;
    let (ac, bc) = continuous_dynamics(m, nu);
    let (ad, bd) = zoh(&ac, &bc, spec.ts);
    for dy in &mut p.dynamics {
        dy.a = ad.clone();
        dy.b = bd.clone();
    }
    let x0 = spec.initial_state();
    let rho = spec.disk_radius();
    let (p2, v2) = (1, m + 1);
    for (n, st) in p.stages.iter_mut().enumerate() {
        let l = &layouts[n];
        let nu_n = st.nu();
        st.q = Mat::from_diag(&vec![spec.state_weight; nx]);
        st.r = Mat::from_diag(&vec![spec.control_weight; nu_n]);
        let mut row = 0;
        st.idxbu = (0..l.nbu).collect();
        for _ in 0..l.nbu {
            st.lb[row] = -spec.u_bound;
            st.ub[row] = spec.u_bound;
            row += 1;
        }
        let mut idxbx = Vec::new();
        let mut slack = 0;
        let mut soften = |st: &mut crate::model::OcpStage, r: usize| {
            st.soft_map[r] = Some(slack);
            slack += 1;
        };
        if n == 0 {
            for (i, &x) in x0.iter().enumerate() {
                idxbx.push(i);
                st.lb[row] = x;
                st.ub[row] = x;
                row += 1;
            }
        }
        let terminal_box = n == n_h && spec.config == ConstraintConfig::Qp0;
        if terminal_box {
            for i in 0..nx {
                idxbx.push(i);
                st.lb[row] = -spec.terminal_bound;
                st.ub[row] = spec.terminal_bound;
                soften(st, row);
                row += 1;
            }
        }
        if spec.config == ConstraintConfig::Qp4 && n >= 1 {
            let (normals, a) = polygon_normals(4, rho)?;
            debug_assert_eq!(normals.len(), 2);
            for i in [p2, v2] {
                idxbx.push(i);
                st.lb[row] = -a;
                st.ub[row] = a;
                if !spec.hard {
                    soften(st, row);
                }
                row += 1;
            }
        }
        st.idxbx = idxbx;
        if l.ng > 0 {
            let sides = spec.config.polygon_sides().unwrap();
            let (normals, a) = polygon_normals(sides, rho)?;
            for (g, nrm) in normals.iter().enumerate() {
                st.c[(g, p2)] = nrm[0];
                st.c[(g, v2)] = nrm[1];
                st.lb[row] = -a;
                st.ub[row] = a;
                if !spec.hard {
                    soften(st, row);
                }
                row += 1;
            }
        }
        let nz = nu_n + nx;
        let mut q = 0;
        if spec.config == ConstraintConfig::QcqpN && n < n_h {
            let mut h = Mat::zeros(nz, nz);
            for i in 0..nu_n {
                h[(i, i)] = 1.0;
            }
            st.quad[q] = QuadConstraint {
                hess: h,
                grad: vec![0.0; nz],
                upper: 0.5 * spec.u_bound * spec.u_bound,
            };
            q += 1;
            row += 1;
        }
        if matches!(spec.config, ConstraintConfig::Qcqp1 | ConstraintConfig::QcqpN) && n == n_h {
            let mut h = Mat::zeros(nz, nz);
            for i in 0..nx {
                h[(nu_n + i, nu_n + i)] = 1.0;
            }
            st.quad[q] = QuadConstraint {
                hess: h,
                grad: vec![0.0; nz],
                upper: 0.5 * spec.terminal_bound * spec.terminal_bound,
            };
            soften(st, row);
            q += 1;
            row += 1;
        }
        if spec.config == ConstraintConfig::QcqpEnergy && n >= 1 {
            let mut h = Mat::zeros(nz, nz);
            h[(nu_n + p2, nu_n + p2)] = 1.0;
            h[(nu_n + v2, nu_n + v2)] = 1.0;
            st.quad[q] = QuadConstraint {
                hess: h,
                grad: vec![0.0; nz],
                upper: 0.5 * rho * rho,
            };
            if !spec.hard {
                soften(st, row);
            }
        }
        for j in 0..st.ns() {
            st.slacks.hess_lo[j] = spec.soft_quad;
            st.slacks.hess_up[j] = spec.soft_quad;
            st.slacks.grad_lo[j] = spec.soft_lin;
            st.slacks.grad_up[j] = spec.soft_lin;
        }
    }
    p.initial_state = Some(x0);
    Ok(p)
}

/// The energy-constrained instance with the disk replaced by an inscribed
/// regular polygon with 4, 6 or 8 sides.
pub fn polygon_approximation(spec: &MassSpringSpec, sides: usize) -> Result<OcpQcqp, QcqpError> {
    let config = match sides {
        4 => ConstraintConfig::Qp4,
        6 => ConstraintConfig::Qp6,
        8 => ConstraintConfig::Qp8,
        _ => return Err(QcqpError::Argument(format!("unsupported polygon with {sides} sides"))),
    };
    mass_spring_ocp(&MassSpringSpec { config, ..spec.clone() })
}
