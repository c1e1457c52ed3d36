//! The strictly causal controller with optimal infinite-horizon competitive
//! ratio against the clairvoyant offline optimum.
//!
//! The controller is a static state feedback `u_t = K̂ ξ_t` on a synthetic
//! `2m`-dimensional state
//!
//! ```text
//! ξ_t = [x_t − ν_t ; Σ^{-1/2} Q^{1/2} ν_t],     ν_{t+1} = (A − K Q^{1/2}) ν_t + w_t,  ν_1 = 0
//! ```
//!
//! where `(P, K, Σ)` solve a filtering Riccati equation ([`solve_filter`]) and
//! `K̂` comes from an indefinite Riccati equation ([`solve_phat`]) posed at the
//! competitive ratio α. The optimal ratio α* is the smallest α for which the
//! latter has a solution with `−αI + B̂_wᵀP̂B̂_w ≺ 0`; it is located by
//! bisection in [`compute_alpha_star`].

use crate::classic::{eliminate_disturbance, feedback_gain, riccati_map, MAX_SWEEPS};
use crate::error::{Error, Result};
use crate::lds::{certify_closed_loop, Controller, LtiSystem, StabilityCertificate};
use crate::linalg::{self, converged, spectral_norm, spectral_radius, Mat, Vector};

const SWEEP_TOL: f64 = 1e-12;
const ALPHA_LO: f64 = 1.0 + 1e-6;
const ALPHA_HI: f64 = 1e6;

/// Solution of `P = BR⁻¹Bᵀ + APAᵀ − KΣKᵀ`, `Σ = I + Q^{1/2}PQ^{1/2}`,
/// `K = APQ^{1/2}Σ⁻¹`.
///
/// The input weight enters through `BR⁻¹Bᵀ`, the `BBᵀ` of the plant rescaled
/// to unit input cost.
#[derive(Debug, Clone)]
pub struct FilterSolution {
    pub p: Mat,
    pub k: Mat,
    pub sigma: Mat,
    pub sigma_sqrt: Mat,
    pub sigma_inv_sqrt: Mat,
    pub residual: f64,
    pub iterations: usize,
}

impl FilterSolution {
    /// `A − K Q^{1/2}`, the recursion matrix of ν.
    pub fn closed_loop(&self, sys: &LtiSystem) -> Mat {
        sys.a() - &self.k * sys.q_sqrt()
    }

    /// `Σ^{-1/2} Q^{1/2}`, mapping ν_t to ŵ_t.
    pub fn whitening(&self, sys: &LtiSystem) -> Mat {
        &self.sigma_inv_sqrt * sys.q_sqrt()
    }
}

fn filter_terms(sys: &LtiSystem, p: &Mat) -> Result<(Mat, Mat)> {
    let m = sys.state_dim();
    let qh = sys.q_sqrt();
    let sigma = linalg::symmetrize(&(Mat::identity(m, m) + qh * p * qh));
    // K = A P Q^{1/2} Σ⁻¹, i.e. K Σ = A P Q^{1/2}; Σ is symmetric.
    let rhs = sys.a() * p * qh;
    let k = linalg::solve(&sigma, &rhs.transpose())?.transpose();
    Ok((sigma, k))
}

/// Fixed-point iteration of the filtering equation starting at `P₀ = BR⁻¹Bᵀ`.
pub fn solve_filter(sys: &LtiSystem) -> Result<FilterSolution> {
    let a = sys.a();
    let bbt = linalg::symmetrize(&(sys.b() * linalg::solve(sys.r(), &sys.b().transpose())?));
    let mut p = bbt.clone();
    let mut iterations = 0;
    let mut done = false;
    while iterations < MAX_SWEEPS {
        let (sigma, k) = filter_terms(sys, &p)?;
        let next = linalg::symmetrize(&(&bbt + a * &p * a.transpose() - &k * &sigma * k.transpose()));
        iterations += 1;
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::solver("filter iteration diverged", f64::INFINITY));
        }
        let stop = converged(&next, &p, SWEEP_TOL);
        p = next;
        if stop {
            done = true;
            break;
        }
    }
    let (sigma, k) = filter_terms(sys, &p)?;
    let residual =
        spectral_norm(&(&p - (&bbt + a * &p * a.transpose() - &k * &sigma * k.transpose())));
    if !done {
        return Err(Error::solver("filter iteration did not converge", residual));
    }
    if residual > 1e-9 * (1.0 + spectral_norm(&p)) {
        return Err(Error::solver("filter residual above tolerance", residual));
    }
    let sigma_sqrt = linalg::sym_sqrt(&sigma);
    let sigma_inv_sqrt = linalg::sym_inv_sqrt(&sigma)?;
    Ok(FilterSolution {
        p,
        k,
        sigma,
        sigma_sqrt,
        sigma_inv_sqrt,
        residual,
        iterations,
    })
}

/// The synthetic `2m`-state realization and its stage-cost matrix.
#[derive(Debug, Clone)]
pub struct SyntheticSystem {
    /// `[[A, KΣ^{1/2}], [0, 0]]`
    pub a_hat: Mat,
    /// `[B; 0]`
    pub b_hat_u: Mat,
    /// `[0; I]`
    pub b_hat_w: Mat,
    /// `[[Q, Q^{1/2}Σ^{1/2}], [Σ^{1/2}Q^{1/2}, Σ]]`
    pub cost: Mat,
}

impl SyntheticSystem {
    pub fn new(sys: &LtiSystem, filter: &FilterSolution) -> Self {
        let m = sys.state_dim();
        let n = sys.input_dim();
        let z = Mat::zeros(m, m);
        let a_hat = linalg::block2(sys.a(), &(&filter.k * &filter.sigma_sqrt), &z, &z);
        let b_hat_u = linalg::vstack(sys.b(), &Mat::zeros(m, n));
        let b_hat_w = linalg::vstack(&z, &Mat::identity(m, m));
        let qs = sys.q_sqrt() * &filter.sigma_sqrt;
        let cost = linalg::block2(sys.q(), &qs, &qs.transpose(), &filter.sigma);
        Self {
            a_hat,
            b_hat_u,
            b_hat_w,
            cost,
        }
    }

    /// `B̃ = [B̂_u  B̂_w]`.
    pub fn b_tilde(&self) -> Mat {
        linalg::hstack(&self.b_hat_u, &self.b_hat_w)
    }

    /// `diag(R, −αI)`.
    fn penalty(&self, sys: &LtiSystem, alpha: f64) -> Mat {
        let m = sys.state_dim();
        let n = sys.input_dim();
        linalg::block2(sys.r(), &Mat::zeros(n, m), &Mat::zeros(m, n), &(Mat::identity(m, m) * -alpha))
    }
}

/// Why a level α was rejected.
#[derive(Debug, Clone, PartialEq)]
pub enum Infeasibility {
    /// `−αI + B̂_wᵀP̂B̂_w` lost negative definiteness.
    NotNegativeDefinite,
    /// `H̃` condition number above 1e12.
    SingularH,
    /// `‖P̂‖ > 1e12`.
    Diverged,
    NoConvergence,
}

#[derive(Debug, Clone)]
pub enum PhatOutcome {
    Feasible { p_hat: Mat, iterations: usize },
    Infeasible(Infeasibility),
}

impl PhatOutcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self, PhatOutcome::Feasible { .. })
    }
}

/// Iterates `P̂ ← C + ÂᵀP̂Â − ÂᵀP̂B̃H̃⁻¹B̃ᵀP̂Â` with
/// `H̃ = diag(R, −αI) + B̃ᵀP̂B̃` from `P̂₀ = C`.
pub fn solve_phat(sys: &LtiSystem, filter: &FilterSolution, alpha: f64) -> Result<PhatOutcome> {
    if !(alpha > 1.0) {
        return Err(Error::invalid(format!("competitive level must exceed 1, got {alpha}")));
    }
    let synth = SyntheticSystem::new(sys, filter);
    phat_iteration(sys, &synth, alpha)
}

fn phat_iteration(sys: &LtiSystem, synth: &SyntheticSystem, alpha: f64) -> Result<PhatOutcome> {
    let m = sys.state_dim();
    let bt = synth.b_tilde();
    let d = synth.penalty(sys, alpha);
    let bw = &synth.b_hat_w;
    let neg_def = |p: &Mat| {
        let g = Mat::identity(m, m) * -alpha + bw.transpose() * p * bw;
        linalg::max_sym_eigenvalue(&g) < -1e-10
    };
    let mut p = synth.cost.clone();
    let mut iterations = 0;
    loop {
        if !neg_def(&p) {
            return Ok(PhatOutcome::Infeasible(Infeasibility::NotNegativeDefinite));
        }
        let h = &d + bt.transpose() * &p * &bt;
        if !(linalg::condition_number(&h) <= 1e12) {
            return Ok(PhatOutcome::Infeasible(Infeasibility::SingularH));
        }
        let (next, _) = riccati_map(&synth.cost, &synth.a_hat, &bt, &d, &p)?;
        iterations += 1;
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::solver("P̂ iteration produced non-finite values", f64::INFINITY));
        }
        if next.norm() > 1e12 {
            return Ok(PhatOutcome::Infeasible(Infeasibility::Diverged));
        }
        let stop = converged(&next, &p, SWEEP_TOL);
        p = next;
        if stop {
            break;
        }
        if iterations >= MAX_SWEEPS {
            return Ok(PhatOutcome::Infeasible(Infeasibility::NoConvergence));
        }
    }
    if !neg_def(&p) {
        return Ok(PhatOutcome::Infeasible(Infeasibility::NotNegativeDefinite));
    }
    Ok(PhatOutcome::Feasible { p_hat: p, iterations })
}

/// Everything needed to run the competitive controller and to convert it to
/// a disturbance-action policy.
#[derive(Debug, Clone)]
pub struct CompetitiveSolution {
    pub filter: FilterSolution,
    pub a_hat: Mat,
    pub b_hat_u: Mat,
    pub b_hat_w: Mat,
    pub cost_hat: Mat,
    pub p_hat: Mat,
    pub p_tilde: Mat,
    pub h_tilde: Mat,
    /// `n × 2m` synthetic-state gain.
    pub k_hat: Mat,
    /// First `m` columns of `K̂`.
    pub k_hat_0: Mat,
    /// Last `m` columns of `K̂`.
    pub k_hat_1: Mat,
    pub alpha_star: f64,
    pub p_hat_residual: f64,
}

impl CompetitiveSolution {
    /// `K̂₁ Σ^{-1/2} Q^{1/2} − K̂₀`: the weight with which ν_t enters the
    /// action once `x_t` is fed back through `K̂₀`.
    pub fn nu_gain(&self, sys: &LtiSystem) -> Mat {
        &self.k_hat_1 * self.filter.whitening(sys) - &self.k_hat_0
    }

    /// Checks the strong-stability quantification of `K̂₀` for `(A, B)` and of
    /// `−Kᵀ` for `(Aᵀ, Q^{1/2})`.
    pub fn audit(&self, sys: &LtiSystem) -> Result<AssumptionAudit> {
        let control = certify_closed_loop(sys.a(), sys.b(), &self.k_hat_0)?;
        let filter = certify_closed_loop(
            &sys.a().transpose(),
            sys.q_sqrt(),
            &(-self.filter.k.transpose()),
        )?;
        let k_hat_norm = spectral_norm(&self.k_hat);
        let (kappa, gamma) = StabilityCertificate::shared_constants([&control, &filter]);
        let kappa = kappa
            .max(k_hat_norm)
            .max(spectral_norm(sys.a()))
            .max(spectral_norm(sys.b()));
        Ok(AssumptionAudit {
            control,
            filter,
            k_hat_norm,
            kappa,
            gamma,
        })
    }

    pub fn runtime(&self, sys: &LtiSystem) -> CompetitiveRuntime {
        CompetitiveRuntime::new(self, sys)
    }
}

/// Audited constants shared by the competitive gain and the filter.
#[derive(Debug, Clone)]
pub struct AssumptionAudit {
    pub control: StabilityCertificate,
    pub filter: StabilityCertificate,
    pub k_hat_norm: f64,
    /// Shared κ: bounds both certificates, `‖K̂‖`, `‖A‖` and `‖B‖`.
    pub kappa: f64,
    /// Shared γ: the smaller of the two certified margins.
    pub gamma: f64,
}

/// Assembles `P̃`, `H̃` and `K̂` at a feasible level `alpha`.
pub fn competitive_at(sys: &LtiSystem, filter: &FilterSolution, alpha: f64) -> Result<CompetitiveSolution> {
    if !(alpha > 1.0) {
        return Err(Error::invalid(format!("competitive level must exceed 1, got {alpha}")));
    }
    let synth = SyntheticSystem::new(sys, filter);
    let p_hat = match phat_iteration(sys, &synth, alpha)? {
        PhatOutcome::Feasible { p_hat, .. } => p_hat,
        PhatOutcome::Infeasible(why) => {
            return Err(Error::solver(format!("level {alpha} infeasible: {why:?}"), f64::INFINITY))
        }
    };
    let bt = synth.b_tilde();
    let d = synth.penalty(sys, alpha);
    let (again, h_tilde) = riccati_map(&synth.cost, &synth.a_hat, &bt, &d, &p_hat)?;
    let p_hat_residual = spectral_norm(&(&p_hat - again));
    if p_hat_residual > 1e-8 * (1.0 + spectral_norm(&p_hat)) {
        return Err(Error::solver("P̂ residual above tolerance", p_hat_residual));
    }
    let p_tilde = eliminate_disturbance(&p_hat, &synth.b_hat_w, alpha)?;
    let k_hat = feedback_gain(&p_tilde, &synth.a_hat, &synth.b_hat_u, sys.r())?;
    let m = sys.state_dim();
    let k_hat_0 = k_hat.columns(0, m).into_owned();
    let k_hat_1 = k_hat.columns(m, m).into_owned();

    let rho_control = spectral_radius(&(sys.a() + sys.b() * &k_hat_0));
    let rho_filter = spectral_radius(&filter.closed_loop(sys));
    if rho_control >= 1.0 || rho_filter >= 1.0 {
        return Err(Error::solver(
            format!("competitive loops not stable (control {rho_control}, filter {rho_filter})"),
            p_hat_residual,
        ));
    }
    Ok(CompetitiveSolution {
        filter: filter.clone(),
        a_hat: synth.a_hat,
        b_hat_u: synth.b_hat_u,
        b_hat_w: synth.b_hat_w,
        cost_hat: synth.cost,
        p_hat,
        p_tilde,
        h_tilde,
        k_hat,
        k_hat_0,
        k_hat_1,
        alpha_star: alpha,
        p_hat_residual,
    })
}

/// Smallest feasible α in `[1 + 1e-6, 1e6]` to within multiplicative `tol`,
/// with the controller assembled there.
pub fn compute_alpha_star(sys: &LtiSystem, tol: f64) -> Result<CompetitiveSolution> {
    if !(tol > 0.0) {
        return Err(Error::invalid("bisection tolerance must be positive"));
    }
    let filter = solve_filter(sys)?;
    let synth = SyntheticSystem::new(sys, &filter);
    let feasible = |alpha: f64| -> Result<bool> { Ok(phat_iteration(sys, &synth, alpha)?.is_feasible()) };
    let (mut lo, mut hi) = (ALPHA_LO, ALPHA_HI);
    if !feasible(hi)? {
        return Err(Error::solver(
            format!("no finite competitive ratio up to {ALPHA_HI}"),
            f64::INFINITY,
        ));
    }
    if feasible(lo)? {
        hi = lo;
    }
    while hi / lo > 1.0 + tol {
        let mid = (lo * hi).sqrt();
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    competitive_at(sys, &filter, hi)
}

/// Online execution of the competitive policy. Disturbances are recovered
/// from consecutive states, so only `x_1, …, x_t` are needed at step `t`.
#[derive(Debug, Clone)]
pub struct CompetitiveRuntime {
    a: Mat,
    b: Mat,
    k_hat: Mat,
    filter_loop: Mat,
    whitening: Mat,
    nu: Vector,
    xi: Vector,
    last_x: Option<Vector>,
    last_u: Option<Vector>,
    last_w: Option<Vector>,
    t: usize,
}

impl CompetitiveRuntime {
    pub fn new(solution: &CompetitiveSolution, sys: &LtiSystem) -> Self {
        let m = sys.state_dim();
        Self {
            a: sys.a().clone(),
            b: sys.b().clone(),
            k_hat: solution.k_hat.clone(),
            filter_loop: solution.filter.closed_loop(sys),
            whitening: solution.filter.whitening(sys),
            nu: Vector::zeros(m),
            xi: Vector::zeros(2 * m),
            last_x: None,
            last_u: None,
            last_w: None,
            t: 0,
        }
    }

    /// ν_t at the most recent step.
    pub fn nu(&self) -> &Vector {
        &self.nu
    }

    /// ξ_t at the most recent step.
    pub fn synthetic_state(&self) -> &Vector {
        &self.xi
    }

    /// w_{t−1} as inferred at the most recent step (`None` at t = 1).
    pub fn inferred_disturbance(&self) -> Option<&Vector> {
        self.last_w.as_ref()
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }
}

impl Controller for CompetitiveRuntime {
    fn act(&mut self, t: usize, x: &Vector) -> Result<Vector> {
        if t != self.t + 1 {
            return Err(Error::ProtocolViolation(format!(
                "competitive controller expected step {}, got {t}",
                self.t + 1
            )));
        }
        let m = self.a.nrows();
        if x.len() != m {
            return Err(Error::invalid("state dimension mismatch"));
        }
        if let (Some(px), Some(pu)) = (&self.last_x, &self.last_u) {
            let w = x - &self.a * px - &self.b * pu;
            self.nu = &self.filter_loop * &self.nu + &w;
            self.last_w = Some(w);
        }
        let mut xi = Vector::zeros(2 * m);
        xi.rows_mut(0, m).copy_from(&(x - &self.nu));
        xi.rows_mut(m, m).copy_from(&(&self.whitening * &self.nu));
        let u = &self.k_hat * &xi;
        self.xi = xi;
        self.last_x = Some(x.clone());
        self.last_u = Some(u.clone());
        self.t = t;
        Ok(u)
    }
}
