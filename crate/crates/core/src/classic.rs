//! Baseline controllers: the H₂ (LQR) gain from the discrete algebraic
//! Riccati equation, a central H∞ state-feedback gain found by bisection on
//! the attenuation level, and the clairvoyant offline optimum.

use crate::error::{Error, Result};
use crate::lds::{rollout, LtiSystem, OpenLoop, Trajectory};
use crate::linalg::{self, converged, spectral_norm, spectral_radius, Mat, Vector};

pub(crate) const MAX_SWEEPS: usize = 100_000;
const SWEEP_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p: Mat,
    /// Feedback gain, `u = K x`.
    pub k: Mat,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct OfflineSolution {
    pub trajectory: Trajectory,
    pub opt_cost: f64,
}

/// One sweep of the (possibly indefinite) Riccati map
/// `C + AᵀPA − AᵀP B̃ (D + B̃ᵀP B̃)⁻¹ B̃ᵀP A`.
///
/// Returns the new iterate together with `D + B̃ᵀPB̃`.
pub(crate) fn riccati_map(c: &Mat, a: &Mat, bt: &Mat, d: &Mat, p: &Mat) -> Result<(Mat, Mat)> {
    let pa = p * a;
    let h = d + bt.transpose() * p * bt;
    let x = linalg::solve(&h, &(bt.transpose() * &pa))?;
    let next = c + a.transpose() * &pa - pa.transpose() * bt * x;
    Ok((linalg::symmetrize(&next), h))
}

/// `P̃ = P − P B_w (−level·I + B_wᵀ P B_w)⁻¹ B_wᵀ P`: the value after the
/// maximizing disturbance has been eliminated.
pub(crate) fn eliminate_disturbance(p: &Mat, bw: &Mat, level: f64) -> Result<Mat> {
    let k = bw.ncols();
    let g = Mat::identity(k, k) * (-level) + bw.transpose() * p * bw;
    let pb = p * bw;
    let x = linalg::solve(&g, &pb.transpose())?;
    Ok(linalg::symmetrize(&(p - pb * x)))
}

/// `−(D_u + B_uᵀ P̃ B_u)⁻¹ B_uᵀ P̃ A`.
pub(crate) fn feedback_gain(p_tilde: &Mat, a: &Mat, bu: &Mat, du: &Mat) -> Result<Mat> {
    let h = du + bu.transpose() * p_tilde * bu;
    Ok(-linalg::solve(&h, &(bu.transpose() * p_tilde * a))?)
}

/// Stabilizing solution of the DARE `P = Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA`
/// by value iteration from `P = Q`.
pub fn solve_dare(sys: &LtiSystem) -> Result<RiccatiSolution> {
    let (a, b, q, r) = (sys.a(), sys.b(), sys.q(), sys.r());
    let mut p = q.clone();
    let mut iterations = 0;
    let mut done = false;
    while iterations < MAX_SWEEPS {
        let (next, _) = riccati_map(q, a, b, r, &p)?;
        iterations += 1;
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::solver("DARE iteration diverged", f64::INFINITY));
        }
        let stop = converged(&next, &p, SWEEP_TOL);
        p = next;
        if stop {
            done = true;
            break;
        }
    }
    let residual = dare_residual(sys, &p)?;
    if !done {
        return Err(Error::solver("DARE iteration did not converge", residual));
    }
    if residual > 1e-9 * (1.0 + spectral_norm(&p)) {
        return Err(Error::solver("DARE residual above tolerance", residual));
    }
    let k = feedback_gain(&p, a, b, r)?;
    let rho = spectral_radius(&(a + b * &k));
    if rho >= 1.0 {
        return Err(Error::solver(
            format!("DARE closed loop not stable (spectral radius {rho})"),
            residual,
        ));
    }
    Ok(RiccatiSolution {
        p,
        k,
        residual,
        iterations,
    })
}

/// `‖P − DARE(P)‖`.
pub fn dare_residual(sys: &LtiSystem, p: &Mat) -> Result<f64> {
    let (next, _) = riccati_map(sys.q(), sys.a(), sys.b(), sys.r(), p)?;
    Ok(spectral_norm(&(p - next)))
}

/// Search bracket and step count for [`solve_hinf`].
#[derive(Debug, Clone, Copy)]
pub struct HinfBracket {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Default for HinfBracket {
    fn default() -> Self {
        Self {
            lo: 1e-3,
            hi: 1e6,
            steps: 60,
        }
    }
}

/// Central full-information H∞ state feedback for `x⁺ = Ax + Bu + w` with
/// cost `xᵀQx + uᵀRu` and disturbance penalty `γ²‖w‖²`.
///
/// At level γ the game Riccati recursion
///
/// ```text
/// P ← Q + AᵀPA − AᵀP[B I] (diag(R, −γ²I) + [B I]ᵀP[B I])⁻¹ [B I]ᵀPA
/// ```
///
/// is iterated from `P = Q`. The level is feasible when every iterate keeps
/// `γ²I − P ≻ 0` (equivalently `I − γ⁻²P ≻ 0`), the iteration converges, and
/// the resulting central gain
/// `K = −(R + BᵀP̃B)⁻¹BᵀP̃A`, `P̃ = P + P(γ²I − P)⁻¹P`,
/// stabilizes `A + BK`. The smallest feasible γ is found by geometric
/// bisection, and the gain is returned at `(1 + tol)·γ_min`.
pub fn solve_hinf(sys: &LtiSystem, tol: f64) -> Result<(RiccatiSolution, f64)> {
    solve_hinf_in(sys, tol, HinfBracket::default())
}

pub fn solve_hinf_in(sys: &LtiSystem, tol: f64, bracket: HinfBracket) -> Result<(RiccatiSolution, f64)> {
    if !(tol > 0.0) {
        return Err(Error::invalid("H∞ tolerance must be positive"));
    }
    let (mut lo, mut hi) = (bracket.lo, bracket.hi);
    if hinf_at_level(sys, hi).is_none() {
        return Err(Error::solver(
            format!("no feasible H∞ level in [{lo}, {hi}]"),
            f64::INFINITY,
        ));
    }
    if hinf_at_level(sys, lo).is_some() {
        hi = lo;
    } else {
        for _ in 0..bracket.steps {
            let mid = (lo * hi).sqrt();
            if hinf_at_level(sys, mid).is_some() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    let gamma = (1.0 + tol) * hi;
    let sol = hinf_at_level(sys, gamma).ok_or_else(|| {
        Error::solver(format!("H∞ level {gamma} unexpectedly infeasible"), f64::INFINITY)
    })?;
    Ok((sol, gamma))
}

/// Game Riccati solution at a fixed attenuation level, or `None` when the
/// level is infeasible.
pub fn hinf_at_level(sys: &LtiSystem, gamma: f64) -> Option<RiccatiSolution> {
    let (a, b, q, r) = (sys.a(), sys.b(), sys.q(), sys.r());
    let m = sys.state_dim();
    let n = sys.input_dim();
    let level = gamma * gamma;
    let bt = linalg::hstack(b, &Mat::identity(m, m));
    let d = linalg::block2(r, &Mat::zeros(n, m), &Mat::zeros(m, n), &(Mat::identity(m, m) * -level));
    let feasible = |p: &Mat| linalg::max_sym_eigenvalue(&(p - Mat::identity(m, m) * level)) < -1e-10 * level;

    let mut p = q.clone();
    let mut iterations = 0;
    loop {
        if !feasible(&p) {
            return None;
        }
        let (next, _) = riccati_map(q, a, &bt, &d, &p).ok()?;
        iterations += 1;
        if next.iter().any(|x| !x.is_finite()) || next.norm() > 1e12 {
            return None;
        }
        let stop = converged(&next, &p, SWEEP_TOL);
        p = next;
        if stop {
            break;
        }
        if iterations >= MAX_SWEEPS {
            return None;
        }
    }
    if !feasible(&p) {
        return None;
    }
    let (again, _) = riccati_map(q, a, &bt, &d, &p).ok()?;
    let residual = spectral_norm(&(&p - again));
    let p_tilde = eliminate_disturbance(&p, &Mat::identity(m, m), level).ok()?;
    let k = feedback_gain(&p_tilde, a, b, r).ok()?;
    if spectral_radius(&(a + b * &k)) >= 1.0 {
        return None;
    }
    Some(RiccatiSolution {
        p,
        k,
        residual,
        iterations,
    })
}

/// Minimizes `Σ_{t=1}^T c(x_t, u_t)` over all control sequences with full
/// knowledge of `w_{1:T}`.
///
/// Backward recursion with terminal value zero (`x_{T+1}` is free):
/// `V_t(x) = xᵀP_t x + 2p_tᵀx + const`, optimal `u_t = K_t x_t + k_t` with
///
/// ```text
/// K_t = −(R + BᵀP_{t+1}B)⁻¹ BᵀP_{t+1}A
/// k_t = −(R + BᵀP_{t+1}B)⁻¹ Bᵀ(P_{t+1}w_t + p_{t+1})
/// P_t = Q + AᵀP_{t+1}(A + BK_t)
/// p_t = (A + BK_t)ᵀ(P_{t+1}w_t + p_{t+1})
/// ```
pub fn offline_optimal(sys: &LtiSystem, disturbances: &[Vector]) -> Result<OfflineSolution> {
    let horizon = disturbances.len();
    if horizon == 0 {
        return Err(Error::invalid("offline optimum needs T ≥ 1"));
    }
    for w in disturbances {
        sys.check_state("w", w)?;
    }
    let (a, b, q, r) = (sys.a(), sys.b(), sys.q(), sys.r());
    let m = sys.state_dim();

    let mut gains = Vec::with_capacity(horizon);
    let mut offsets = Vec::with_capacity(horizon);
    let mut p_next = Mat::zeros(m, m);
    let mut v_next = Vector::zeros(m);
    for w in disturbances.iter().rev() {
        let h = r + b.transpose() * &p_next * b;
        let lu = h.clone().lu();
        let k = -lu
            .solve(&(b.transpose() * &p_next * a))
            .ok_or_else(|| Error::solver("singular R + BᵀPB", f64::INFINITY))?;
        let drive = &p_next * w + &v_next;
        let k_ff = -lu
            .solve(&(b.transpose() * &drive))
            .ok_or_else(|| Error::solver("singular R + BᵀPB", f64::INFINITY))?;
        let closed = a + b * &k;
        let p = linalg::symmetrize(&(q + a.transpose() * &p_next * &closed));
        v_next = closed.transpose() * drive;
        p_next = p;
        gains.push(k);
        offsets.push(k_ff);
    }
    gains.reverse();
    offsets.reverse();

    let mut x = Vector::zeros(m);
    let mut controls = Vec::with_capacity(horizon);
    for ((k, k_ff), w) in gains.iter().zip(&offsets).zip(disturbances) {
        let u = k * &x + k_ff;
        x = a * &x + b * &u + w;
        controls.push(u);
    }
    let trajectory = rollout(sys, &mut OpenLoop::new(controls), disturbances)?;
    Ok(OfflineSolution {
        opt_cost: trajectory.total_cost,
        trajectory,
    })
}
