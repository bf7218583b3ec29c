//! Delta-formulation primal-dual interior-point iteration.
//!
//! The iteration only sees flat vectors `(y, π, λ, t)`; problem structure is
//! hidden behind [`KktBackend`]. Each iteration linearizes, checks the
//! residuals, factorizes once and solves for an affine and a corrected
//! direction with the same factorization.

pub mod block;

use serde::{Deserialize, Serialize};

use crate::error::QcqpError;
use crate::linalg::norm_inf;

pub use block::{LinearizedData, Side, SideKind};

/// Settings preset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Speed,
    #[default]
    Balance,
    Robust,
}

impl std::str::FromStr for Mode {
    type Err = QcqpError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "speed" => Ok(Mode::Speed),
            "balance" => Ok(Mode::Balance),
            "robust" => Ok(Mode::Robust),
            _ => Err(QcqpError::Argument(format!("unknown mode '{s}'"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Speed => "speed",
            Mode::Balance => "balance",
            Mode::Robust => "robust",
        })
    }
}

/// How the dense backend treats equality constraints.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum EqualityMethod {
    #[default]
    Schur,
    NullSpace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpmSettings {
    pub mode: Mode,
    pub max_iter: usize,
    pub tol_stat: f64,
    pub tol_eq: f64,
    pub tol_ineq: f64,
    pub tol_comp: f64,
    /// Lower bound on the fraction-to-boundary factor.
    pub tau_min: f64,
    /// The corrected direction is kept when `μ_cor ≤ guard · μ_aff`.
    pub corrector_guard: f64,
    pub refine_steps: usize,
    /// Refinement stops once the relative residual falls below this.
    pub refine_tol: f64,
    pub reg_eps: f64,
    /// Separate primal and dual step lengths.
    pub split_step: bool,
    /// Run exactly `max_iter` iterations, ignoring convergence.
    pub fixed_iterations: bool,
    pub equality_method: EqualityMethod,
}

impl IpmSettings {
    pub fn for_mode(mode: Mode) -> Self {
        match mode {
            Mode::Speed => IpmSettings {
                mode,
                max_iter: 25,
                tol_stat: 1e-6,
                tol_eq: 1e-6,
                tol_ineq: 1e-6,
                tol_comp: 1e-6,
                tau_min: 0.99,
                corrector_guard: 1.1,
                refine_steps: 0,
                refine_tol: 0.0,
                reg_eps: 1e-12,
                split_step: true,
                fixed_iterations: false,
                equality_method: EqualityMethod::Schur,
            },
            Mode::Balance => IpmSettings {
                mode,
                max_iter: 30,
                tol_stat: 1e-6,
                tol_eq: 1e-6,
                tol_ineq: 1e-6,
                tol_comp: 1e-6,
                tau_min: 0.995,
                corrector_guard: 1.1,
                refine_steps: 4,
                refine_tol: 1e-14,
                reg_eps: 1e-10,
                split_step: true,
                fixed_iterations: false,
                equality_method: EqualityMethod::Schur,
            },
            Mode::Robust => IpmSettings {
                mode,
                max_iter: 50,
                tol_stat: 1e-8,
                tol_eq: 1e-8,
                tol_ineq: 1e-8,
                tol_comp: 1e-8,
                tau_min: 0.995,
                corrector_guard: 1.0,
                refine_steps: 6,
                refine_tol: 1e-15,
                reg_eps: 1e-8,
                split_step: false,
                fixed_iterations: false,
                equality_method: EqualityMethod::Schur,
            },
        }
    }

    /// Fixed-iteration variant of a preset.
    pub fn fixed(mode: Mode, iters: usize) -> Self {
        IpmSettings {
            max_iter: iters,
            fixed_iterations: true,
            ..Self::for_mode(mode)
        }
    }

    pub fn validate(&self) -> Result<(), QcqpError> {
        let tols = [self.tol_stat, self.tol_eq, self.tol_ineq, self.tol_comp];
        if tols.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(QcqpError::Argument("tolerances must be positive".into()));
        }
        if !(self.tau_min > 0.0 && self.tau_min < 1.0) {
            return Err(QcqpError::Argument("tau_min must lie in (0, 1)".into()));
        }
        if !(self.corrector_guard >= 1.0) {
            return Err(QcqpError::Argument("corrector_guard must be at least 1".into()));
        }
        if !(self.reg_eps >= 0.0 && self.reg_eps.is_finite()) {
            return Err(QcqpError::Argument("reg_eps must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self::for_mode(Mode::Balance)
    }
}

/// Flat primal-dual iterate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IpmIterate {
    pub y: Vec<f64>,
    pub pi: Vec<f64>,
    pub lam: Vec<f64>,
    pub t: Vec<f64>,
}

impl IpmIterate {
    /// Complementarity measure `λᵀt / n_i` (zero without inequalities).
    pub fn mu(&self) -> f64 {
        if self.lam.is_empty() {
            return 0.0;
        }
        crate::linalg::dot(&self.lam, &self.t) / self.lam.len() as f64
    }

    pub fn apply_step(&mut self, d: &KktVector, alpha_primal: f64, alpha_dual: f64) {
        crate::linalg::axpy(alpha_primal, &d.y, &mut self.y);
        crate::linalg::axpy(alpha_primal, &d.t, &mut self.t);
        crate::linalg::axpy(alpha_dual, &d.pi, &mut self.pi);
        crate::linalg::axpy(alpha_dual, &d.lam, &mut self.lam);
    }
}

/// A vector in the space of the Newton system, ordered `(y, π, λ, t)` for
/// directions and `(g, b, d, m)` for residuals and right-hand sides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktVector {
    pub y: Vec<f64>,
    pub pi: Vec<f64>,
    pub lam: Vec<f64>,
    pub t: Vec<f64>,
}

pub type Direction = KktVector;

impl KktVector {
    pub fn zeros_like(it: &IpmIterate) -> Self {
        KktVector {
            y: vec![0.0; it.y.len()],
            pi: vec![0.0; it.pi.len()],
            lam: vec![0.0; it.lam.len()],
            t: vec![0.0; it.t.len()],
        }
    }

    fn parts(&self) -> [&Vec<f64>; 4] {
        [&self.y, &self.pi, &self.lam, &self.t]
    }

    fn parts_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.y, &mut self.pi, &mut self.lam, &mut self.t]
    }

    pub fn norm_inf(&self) -> f64 {
        self.parts().iter().map(|p| norm_inf(p)).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.parts().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &KktVector) {
        for (a, b) in self.parts_mut().into_iter().zip(other.parts()) {
            crate::linalg::axpy(alpha, b, a);
        }
    }

    pub fn sub(&self, other: &KktVector) -> KktVector {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn neg(&self) -> KktVector {
        let mut out = self.clone();
        for p in out.parts_mut() {
            p.iter_mut().for_each(|v| *v = -*v);
        }
        out
    }

    /// Concatenation `[y, π, λ, t]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.parts().iter().flat_map(|p| p.iter().copied()).collect()
    }
}

/// Residuals of the perturbed optimality conditions.
///
/// ```text
/// r_g = ∇f(y) - 𝒜ᵀπ - ∇h(y)ᵀλ      r_b = b - 𝒜y
/// r_d = t - h(y)                    r_m = λ∘t - μ_target
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub r_g: Vec<f64>,
    pub r_b: Vec<f64>,
    pub r_d: Vec<f64>,
    pub r_m: Vec<f64>,
}

impl Residuals {
    pub fn norms(&self) -> ResidualNorms {
        ResidualNorms {
            stat: norm_inf(&self.r_g),
            eq: norm_inf(&self.r_b),
            ineq: norm_inf(&self.r_d),
            comp: norm_inf(&self.r_m),
        }
    }

    /// Right-hand side `-r` of the Newton system.
    pub fn to_rhs(&self) -> KktVector {
        KktVector {
            y: self.r_g.clone(),
            pi: self.r_b.clone(),
            lam: self.r_d.clone(),
            t: self.r_m.clone(),
        }
        .neg()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualNorms {
    pub stat: f64,
    pub eq: f64,
    pub ineq: f64,
    pub comp: f64,
}

impl ResidualNorms {
    pub fn is_finite(&self) -> bool {
        self.stat.is_finite() && self.eq.is_finite() && self.ineq.is_finite() && self.comp.is_finite()
    }

    pub fn within(&self, s: &IpmSettings) -> bool {
        self.stat <= s.tol_stat && self.eq <= s.tol_eq && self.ineq <= s.tol_ineq && self.comp <= s.tol_comp
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Converged,
    MaxIter,
    MinStep,
    NanDetected,
    FactorizationFailed,
}

impl std::fmt::Display for ExitStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExitStatus::Converged => "converged",
            ExitStatus::MaxIter => "max_iter",
            ExitStatus::MinStep => "min_step",
            ExitStatus::NanDetected => "nan_detected",
            ExitStatus::FactorizationFailed => "factorization_failed",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Residuals at the start of the iteration.
    pub res: ResidualNorms,
    pub mu: f64,
    pub mu_aff: f64,
    pub sigma: f64,
    pub alpha_primal: f64,
    pub alpha_dual: f64,
    pub corrected: bool,
    pub refine_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpmStats {
    pub iterations: usize,
    pub status: ExitStatus,
    pub records: Vec<IterationRecord>,
    /// Residuals at the returned iterate.
    pub final_res: ResidualNorms,
    pub objective: f64,
}

/// Linear algebra a problem structure has to provide to the iteration.
pub trait KktBackend {
    fn initial_iterate(&self) -> IpmIterate;

    /// Evaluates `H(λ)` and `C(y)` at the iterate and caches them.
    fn linearize(&mut self, it: &IpmIterate);

    /// Residuals at the iterate, using the cached linearization.
    fn residuals(&self, it: &IpmIterate, mu_target: f64) -> Residuals;

    /// Factorizes the Newton matrix at the cached linearization.
    fn factorize(&mut self, it: &IpmIterate, reg: f64) -> Result<(), QcqpError>;

    /// Solves `K d = rhs` with the current factorization.
    fn solve(&self, it: &IpmIterate, rhs: &KktVector) -> KktVector;

    /// Product `K d` with the unregularized Newton matrix.
    fn apply(&self, it: &IpmIterate, d: &KktVector) -> KktVector;

    fn objective(&self, it: &IpmIterate) -> f64;
}

/// Centering parameter `(μ_aff / μ)³` clipped to `[0, 1]`.
pub fn mehrotra_sigma(mu: f64, mu_aff: f64) -> f64 {
    if mu <= 0.0 || !mu.is_finite() {
        return 0.0;
    }
    (mu_aff / mu).powi(3).clamp(0.0, 1.0)
}

/// Largest `α ≤ 1` keeping `v + α dv` at a fraction `tau` of the distance to
/// the boundary.
pub fn max_step(v: &[f64], dv: &[f64], tau: f64) -> f64 {
    let mut alpha: f64 = 1.0;
    for (x, d) in v.iter().zip(dv) {
        if *d < 0.0 {
            alpha = alpha.min(-tau * x / d);
        }
    }
    alpha.max(0.0)
}

/// Primal and dual step lengths; equal when `split` is off.
pub fn step_lengths(it: &IpmIterate, d: &KktVector, tau: f64, split: bool) -> (f64, f64) {
    let ap = max_step(&it.t, &d.t, tau);
    let ad = max_step(&it.lam, &d.lam, tau);
    if split {
        (ap, ad)
    } else {
        let a = ap.min(ad);
        (a, a)
    }
}

/// Complementarity after a trial step.
pub fn trial_mu(it: &IpmIterate, d: &KktVector, alpha_primal: f64, alpha_dual: f64) -> f64 {
    let n = it.lam.len();
    if n == 0 {
        return 0.0;
    }
    let s: f64 = (0..n)
        .map(|i| (it.lam[i] + alpha_dual * d.lam[i]) * (it.t[i] + alpha_primal * d.t[i]))
        .sum();
    s / n as f64
}

/// The corrected direction is kept unless it is non-finite or its trial
/// complementarity exceeds `guard · μ_aff`.
pub fn corrector_accepted(corrected: &KktVector, mu_aff: f64, mu_cor: f64, guard: f64) -> bool {
    corrected.is_finite() && mu_cor.is_finite() && mu_cor <= guard * mu_aff
}

/// Iterative refinement of `dir` for `K d = rhs`.
///
/// Takes at most `steps` correction steps, stopping once the residual drops to
/// `tol · ‖rhs‖` or stops improving, and returns the direction with the
/// smallest residual together with the number of steps taken.
pub fn iterative_refinement<B: KktBackend + ?Sized>(
    backend: &B,
    it: &IpmIterate,
    rhs: &KktVector,
    dir: KktVector,
    steps: usize,
    tol: f64,
) -> (KktVector, usize) {
    if steps == 0 {
        return (dir, 0);
    }
    let target = tol * rhs.norm_inf();
    let mut resid = rhs.sub(&backend.apply(it, &dir));
    let mut best_norm = resid.norm_inf();
    let mut best = dir;
    let mut taken = 0;
    while taken < steps && best_norm > target {
        let corr = backend.solve(it, &resid);
        let mut cand = best.clone();
        cand.axpy(1.0, &corr);
        let cand_res = rhs.sub(&backend.apply(it, &cand));
        let n = cand_res.norm_inf();
        taken += 1;
        if !(n < best_norm) {
            break;
        }
        best = cand;
        best_norm = n;
        resid = cand_res;
    }
    (best, taken)
}

/// What an observer sees after the direction of an iteration is chosen.
pub struct IterationView<'a> {
    pub iteration: usize,
    pub iterate: &'a IpmIterate,
    pub residuals: &'a Residuals,
    pub affine: &'a KktVector,
    pub direction: &'a KktVector,
    pub alpha_primal: f64,
    pub alpha_dual: f64,
}

const MIN_STEP: f64 = 1e-12;

/// Upper limit on `τ`, keeping a strictly positive margin to the boundary
/// once `1 - μ` rounds to one.
const TAU_MAX: f64 = 1.0 - 1e-10;

/// `τ = max(τ_min, 1 - μ)`, capped below one.
pub fn fraction_to_boundary(tau_min: f64, mu: f64) -> f64 {
    tau_min.max(1.0 - mu).min(TAU_MAX)
}

pub fn solve<B: KktBackend + ?Sized>(backend: &mut B, settings: &IpmSettings) -> (IpmIterate, IpmStats) {
    solve_observed(backend, settings, |_| {})
}

/// Runs the iteration, calling `observer` once per iteration before the step
/// is applied.
pub fn solve_observed<B, F>(backend: &mut B, settings: &IpmSettings, mut observer: F) -> (IpmIterate, IpmStats)
where
    B: KktBackend + ?Sized,
    F: FnMut(&IterationView<'_>),
{
    let mut it = backend.initial_iterate();
    let mut records = Vec::new();
    let mut small_steps = 0;
    let mut status = ExitStatus::MaxIter;
    let mut stopped = false;
    for k in 0..settings.max_iter {
        backend.linearize(&it);
        let res = backend.residuals(&it, 0.0);
        let norms = res.norms();
        if !norms.is_finite() {
            status = ExitStatus::NanDetected;
            stopped = true;
            break;
        }
        if !settings.fixed_iterations && norms.within(settings) {
            status = ExitStatus::Converged;
            stopped = true;
            break;
        }
        if backend.factorize(&it, settings.reg_eps).is_err()
            && backend.factorize(&it, 10.0 * settings.reg_eps.max(1e-14)).is_err()
        {
            status = ExitStatus::FactorizationFailed;
            stopped = true;
            break;
        }
        let mu = it.mu();
        let rhs_aff = res.to_rhs();
        let aff = backend.solve(&it, &rhs_aff);
        let (aff, r1) = refine(backend, &it, &rhs_aff, aff, settings);
        let tau = fraction_to_boundary(settings.tau_min, mu);
        let (ap, ad) = step_lengths(&it, &aff, tau, settings.split_step);
        let mu_aff = trial_mu(&it, &aff, ap, ad);
        let sigma = mehrotra_sigma(mu, mu_aff);

        let mut rhs_cor = rhs_aff.clone();
        for i in 0..rhs_cor.t.len() {
            rhs_cor.t[i] -= aff.lam[i] * aff.t[i] - sigma * mu;
        }
        let cor = backend.solve(&it, &rhs_cor);
        let (cor, r2) = refine(backend, &it, &rhs_cor, cor, settings);
        let (cp, cd) = step_lengths(&it, &cor, tau, settings.split_step);
        let mu_cor = trial_mu(&it, &cor, cp, cd);
        let corrected = corrector_accepted(&cor, mu_aff, mu_cor, settings.corrector_guard);
        let dir = if corrected {
            cor
        } else {
            // centering without the second-order term
            let mut rhs_cen = rhs_aff.clone();
            for v in &mut rhs_cen.t {
                *v += sigma * mu;
            }
            let cen = backend.solve(&it, &rhs_cen);
            refine(backend, &it, &rhs_cen, cen, settings).0
        };
        if !dir.is_finite() {
            status = ExitStatus::NanDetected;
            stopped = true;
            break;
        }
        let (alpha_primal, alpha_dual) = step_lengths(&it, &dir, tau, settings.split_step);
        observer(&IterationView {
            iteration: k,
            iterate: &it,
            residuals: &res,
            affine: &aff,
            direction: &dir,
            alpha_primal,
            alpha_dual,
        });
        it.apply_step(&dir, alpha_primal, alpha_dual);
        records.push(IterationRecord {
            res: norms,
            mu,
            mu_aff,
            sigma,
            alpha_primal,
            alpha_dual,
            corrected,
            refine_steps: r1 + r2,
        });
        if alpha_primal.min(alpha_dual) < MIN_STEP {
            small_steps += 1;
            if small_steps >= 2 {
                status = ExitStatus::MinStep;
                stopped = true;
                break;
            }
        } else {
            small_steps = 0;
        }
    }
    backend.linearize(&it);
    let final_res = backend.residuals(&it, 0.0).norms();
    if !stopped {
        status = if !final_res.is_finite() {
            ExitStatus::NanDetected
        } else if final_res.within(settings) {
            ExitStatus::Converged
        } else {
            ExitStatus::MaxIter
        };
    }
    let objective = backend.objective(&it);
    let stats = IpmStats {
        iterations: records.len(),
        status,
        records,
        final_res,
        objective,
    };
    (it, stats)
}

fn refine<B: KktBackend + ?Sized>(
    backend: &B,
    it: &IpmIterate,
    rhs: &KktVector,
    dir: KktVector,
    s: &IpmSettings,
) -> (KktVector, usize) {
    iterative_refinement(backend, it, rhs, dir, s.refine_steps, s.refine_tol)
}
