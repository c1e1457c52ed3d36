//! Gradient Perturbation Controller and the best DAC policy in hindsight.
//!
//! GPC plays the DAC policy `u_t = 𝕂x_t + Σ_{i=1}^{H} M_t^{[i−1]} w_{t−i}` and,
//! after every action, takes a projected gradient step on a surrogate loss:
//! the stage cost reached by the ideal closed loop that starts from zero `H`
//! steps ago and is driven by the buffered disturbances under the current
//! weights. The surrogate is a convex quadratic in `M`; its gradient is
//! computed exactly by a backward (adjoint) sweep.

use std::collections::VecDeque;

use crate::classic::solve_dare;
use crate::dac::DacPolicy;
use crate::error::{Error, Result};
use crate::lds::{certify_closed_loop, Controller, LtiSystem, StabilityCertificate};
use crate::linalg::{clip_spectral, max_sym_eigenvalue, spectral_norm, sym_sqrt, Mat, Vector};

/// Constraint set `‖M^{[i]}‖ ≤ θ(1 − γ′)^i`, `i < H`, around a stabilizer.
#[derive(Debug, Clone)]
pub struct DacClass {
    pub k_stab: Mat,
    pub horizon: usize,
    pub theta: f64,
    pub gamma_prime: f64,
}

impl DacClass {
    pub fn new(k_stab: Mat, horizon: usize, theta: f64, gamma_prime: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("DAC memory H must be at least 1"));
        }
        if !(theta > 0.0) || !(gamma_prime > 0.0 && gamma_prime < 1.0) {
            return Err(Error::invalid(format!(
                "class needs theta > 0 and gamma' in (0,1), got {theta}, {gamma_prime}"
            )));
        }
        Ok(Self {
            k_stab,
            horizon,
            theta,
            gamma_prime,
        })
    }

    /// The class used for the competitive controller's DAC image, built
    /// around a certified stabilizer: `θ = 2κ²max(1, β^{1/2})`, `γ′ = γ`.
    pub fn from_certificate(sys: &LtiSystem, k_stab: Mat, cert: &StabilityCertificate, horizon: usize) -> Result<Self> {
        let kappa = cert.kappa.max(spectral_norm(sys.a())).max(spectral_norm(sys.b()));
        let theta = 2.0 * kappa * kappa * sys.beta().sqrt().max(1.0);
        Self::new(k_stab, horizon, theta, cert.gamma)
    }

    /// Class around the LQR (DARE) gain.
    pub fn around_lqr(sys: &LtiSystem, horizon: usize) -> Result<Self> {
        let k = solve_dare(sys)?.k;
        let cert = certify_closed_loop(sys.a(), sys.b(), &k)?;
        Self::from_certificate(sys, k, &cert, horizon)
    }

    pub fn radius(&self, i: usize) -> f64 {
        self.theta * (1.0 - self.gamma_prime).powi(i as i32)
    }

    pub fn contains(&self, weights: &[Mat]) -> bool {
        weights.len() == self.horizon
            && weights
                .iter()
                .enumerate()
                .all(|(i, w)| spectral_norm(w) <= self.radius(i) + crate::dac::DECAY_SLACK)
    }

    /// Per-index rescaling onto the class.
    pub fn project(&self, weights: &[Mat]) -> Vec<Mat> {
        weights
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let (norm, r) = (spectral_norm(w), self.radius(i));
                if norm > r {
                    w * (r / norm)
                } else {
                    w.clone()
                }
            })
            .collect()
    }

    /// Euclidean projection (singular values clipped per index).
    pub fn project_exact(&self, weights: &[Mat]) -> Vec<Mat> {
        weights
            .iter()
            .enumerate()
            .map(|(i, w)| clip_spectral(w, self.radius(i)))
            .collect()
    }

    pub fn zeros(&self) -> Vec<Mat> {
        vec![Mat::zeros(self.k_stab.nrows(), self.k_stab.ncols()); self.horizon]
    }

    pub fn policy(&self, weights: Vec<Mat>) -> Result<DacPolicy> {
        DacPolicy::new(self.k_stab.clone(), weights, self.theta, self.gamma_prime)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepSchedule {
    #[default]
    Constant,
    /// `η / √t`.
    InverseSqrt,
}

#[derive(Debug, Clone)]
pub struct GpcConfig {
    pub class: DacClass,
    pub eta: f64,
    pub schedule: StepSchedule,
}

impl GpcConfig {
    pub fn new(class: DacClass, eta: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be finite and nonnegative, got {eta}")));
        }
        Ok(Self {
            class,
            eta,
            schedule: StepSchedule::Constant,
        })
    }

    pub fn with_schedule(mut self, schedule: StepSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    fn step_size(&self, t: usize) -> f64 {
        match self.schedule {
            StepSchedule::Constant => self.eta,
            StepSchedule::InverseSqrt => self.eta / (t.max(1) as f64).sqrt(),
        }
    }
}

/// Ideal-state cost for weights `m` and a window `w[0] = w_{t−1}, …,
/// w[2H−1] = w_{t−2H}` (shorter windows are zero padded).
pub fn surrogate_loss(sys: &LtiSystem, k_stab: &Mat, weights: &[Mat], window: &[Vector]) -> f64 {
    let (y, v) = ideal_rollout(sys, k_stab, weights, window);
    sys.cost_unchecked(&y, &v)
}

/// Loss and its exact gradient with respect to every `M^{[i]}`.
pub fn surrogate_gradient(sys: &LtiSystem, k_stab: &Mat, weights: &[Mat], window: &[Vector]) -> (f64, Vec<Mat>) {
    let h = weights.len();
    let (y, v) = ideal_rollout(sys, k_stab, weights, window);
    let loss = sys.cost_unchecked(&y, &v);
    let b = |j: usize| window.get(j);
    let mut grad: Vec<Mat> = weights.iter().map(|w| Mat::zeros(w.nrows(), w.ncols())).collect();

    let g_v = 2.0 * sys.r() * &v;
    for (i, g) in grad.iter_mut().enumerate() {
        if let Some(bj) = b(i) {
            *g += &g_v * bj.transpose();
        }
    }
    let mut lambda = 2.0 * sys.q() * &y + k_stab.transpose() * &g_v;
    for s in (0..h).rev() {
        let g_vs = sys.b().transpose() * &lambda;
        for (i, g) in grad.iter_mut().enumerate() {
            if let Some(bj) = b(h - s + i) {
                *g += &g_vs * bj.transpose();
            }
        }
        lambda = sys.a().transpose() * &lambda + k_stab.transpose() * &g_vs;
    }
    (loss, grad)
}

/// Final `(y_H, v_H)` of the ideal closed loop.
fn ideal_rollout(sys: &LtiSystem, k_stab: &Mat, weights: &[Mat], window: &[Vector]) -> (Vector, Vector) {
    let h = weights.len();
    let m = sys.state_dim();
    let mix = |offset: usize, y: &Vector| -> Vector {
        let mut v = k_stab * y;
        for (i, w) in weights.iter().enumerate() {
            if let Some(bj) = window.get(offset + i) {
                v += w * bj;
            }
        }
        v
    };
    let mut y = Vector::zeros(m);
    for s in 0..h {
        let v = mix(h - s, &y);
        y = sys.a() * &y + sys.b() * v;
        if let Some(bj) = window.get(h - s - 1) {
            y += bj;
        }
    }
    let v = mix(0, &y);
    (y, v)
}

/// The online learner. Implements [`Controller`]; disturbances are inferred
/// from consecutive states.
#[derive(Debug, Clone)]
pub struct Gpc {
    sys: LtiSystem,
    config: GpcConfig,
    weights: Vec<Mat>,
    window: VecDeque<Vector>,
    last: Option<(Vector, Vector)>,
    t: usize,
}

impl Gpc {
    pub fn new(sys: &LtiSystem, config: GpcConfig) -> Result<Self> {
        let class = &config.class;
        if class.k_stab.shape() != (sys.input_dim(), sys.state_dim()) {
            return Err(Error::invalid("stabilizer shape does not match the system"));
        }
        let weights = class.zeros();
        Ok(Self {
            sys: sys.clone(),
            window: VecDeque::from(vec![Vector::zeros(sys.state_dim()); 2 * class.horizon]),
            config,
            weights,
            last: None,
            t: 0,
        })
    }

    /// Starts from given weights instead of zero (projected onto the class).
    pub fn with_weights(mut self, weights: Vec<Mat>) -> Result<Self> {
        if weights.len() != self.config.class.horizon
            || weights.iter().any(|w| w.shape() != self.config.class.k_stab.shape())
        {
            return Err(Error::invalid("initial weights do not match the class"));
        }
        self.weights = self.config.class.project(&weights);
        Ok(self)
    }

    pub fn weights(&self) -> &[Mat] {
        &self.weights
    }

    pub fn config(&self) -> &GpcConfig {
        &self.config
    }

    /// Most recent disturbance first, `2H` entries.
    pub fn window(&self) -> &VecDeque<Vector> {
        &self.window
    }

    pub fn policy(&self) -> Result<DacPolicy> {
        self.config.class.policy(self.weights.clone())
    }

    /// One projected gradient step on the current window.
    pub fn update(&mut self) -> Result<()> {
        let window: Vec<Vector> = self.window.iter().cloned().collect();
        let (_, grad) = surrogate_gradient(&self.sys, &self.config.class.k_stab, &self.weights, &window);
        if grad.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::NumericDivergence { step: self.t });
        }
        let eta = self.config.step_size(self.t);
        let stepped: Vec<Mat> = self.weights.iter().zip(&grad).map(|(w, g)| w - g * eta).collect();
        self.weights = self.config.class.project(&stepped);
        Ok(())
    }
}

impl Controller for Gpc {
    fn act(&mut self, t: usize, x: &Vector) -> Result<Vector> {
        if t != self.t + 1 {
            return Err(Error::ProtocolViolation(format!("GPC expected step {}, got {t}", self.t + 1)));
        }
        if x.len() != self.sys.state_dim() {
            return Err(Error::invalid("state dimension mismatch"));
        }
        let observed = self.last.is_some();
        if let Some((px, pu)) = &self.last {
            let w = x - self.sys.a() * px - self.sys.b() * pu;
            self.window.pop_back();
            self.window.push_front(w);
        }
        let mut u = &self.config.class.k_stab * x;
        for (m, w) in self.weights.iter().zip(&self.window) {
            u += m * w;
        }
        self.last = Some((x.clone(), u.clone()));
        self.t = t;
        if observed {
            self.update()?;
        }
        Ok(u)
    }
}

/// Outcome of [`best_dac_in_hindsight`].
#[derive(Debug, Clone)]
pub struct Hindsight {
    pub policy: DacPolicy,
    pub cost: f64,
    pub iterations: usize,
    /// Norm of the final projected-gradient step (gradient mapping).
    pub stationarity: f64,
}

const HINDSIGHT_TOL: f64 = 1e-8;
const HINDSIGHT_MAX_ITERS: usize = 100_000;

/// Stacked `[Q^{1/2}x_t; R^{1/2}u_t]` of the DAC rollout with known `w`.
fn residuals(sys: &LtiSystem, q_half: &Mat, r_half: &Mat, k: &Mat, weights: &[Mat], ws: &[Vector]) -> Vector {
    let (m, n) = (sys.state_dim(), sys.input_dim());
    let mut out = Vector::zeros(ws.len() * (m + n));
    let mut x = Vector::zeros(m);
    for (t, w) in ws.iter().enumerate() {
        let mut u = k * &x;
        for (i, mi) in weights.iter().enumerate().take(t) {
            u += mi * &ws[t - 1 - i];
        }
        let base = t * (m + n);
        out.rows_mut(base, m).copy_from(&(q_half * &x));
        out.rows_mut(base + m, n).copy_from(&(r_half * &u));
        x = sys.a() * &x + sys.b() * &u + w;
    }
    out
}

fn unflatten(v: &Vector, class: &DacClass) -> Vec<Mat> {
    let (n, m) = class.k_stab.shape();
    (0..class.horizon)
        .map(|i| Mat::from_column_slice(n, m, &v.as_slice()[i * n * m..(i + 1) * n * m]))
        .collect()
}

fn flatten(weights: &[Mat]) -> Vector {
    Vector::from_iterator(
        weights.iter().map(|w| w.len()).sum(),
        weights.iter().flat_map(|w| w.iter().copied()),
    )
}

/// Minimizes the true cost `J_T` over the class on a known disturbance
/// sequence. `J_T` is a convex quadratic `vᵀGv + 2gᵀv + c` in the stacked
/// weights; the unconstrained least-squares minimizer is returned when it is
/// feasible, otherwise accelerated projected gradient (with the exact
/// Euclidean projection) runs from its projection until the gradient
/// mapping falls below `1e-8` relative to the problem scale.
pub fn best_dac_in_hindsight(sys: &LtiSystem, ws: &[Vector], class: &DacClass) -> Result<Hindsight> {
    if ws.is_empty() {
        return Err(Error::invalid("hindsight optimum needs T ≥ 1"));
    }
    let q_half = sym_sqrt(sys.q());
    let r_half = sym_sqrt(sys.r());
    let zeros = class.zeros();
    let p = flatten(&zeros).len();
    let base = residuals(sys, &q_half, &r_half, &class.k_stab, &zeros, ws);
    let mut jac = Mat::zeros(base.len(), p);
    for k in 0..p {
        let mut e = Vector::zeros(p);
        e[k] = 1.0;
        let col = residuals(sys, &q_half, &r_half, &class.k_stab, &unflatten(&e, class), ws) - &base;
        jac.set_column(k, &col);
    }
    let gram = jac.transpose() * &jac;
    let lin = jac.transpose() * &base;
    let c0 = base.norm_squared();
    let objective = |v: &Vector| (v.dot(&(&gram * v)) + 2.0 * lin.dot(v) + c0).max(0.0);
    let gradient = |v: &Vector| 2.0 * (&gram * v + &lin);

    let start = jac
        .clone()
        .svd(true, true)
        .solve(&(-&base), 1e-12)
        .map_err(|e| Error::solver(format!("least-squares warm start failed: {e}"), f64::INFINITY))?;
    let project = |v: &Vector| flatten(&class.project_exact(&unflatten(v, class)));

    let lipschitz = 2.0 * max_sym_eigenvalue(&gram).max(0.0);
    // Stationarity is measured on the scale of the objective's gradient at 0.
    let scale = (2.0 * lin.norm()).max(1.0);
    let finish = |v: Vector, iterations: usize, stationarity: f64| -> Result<Hindsight> {
        let weights = unflatten(&v, class);
        let cost = objective(&v);
        Ok(Hindsight {
            policy: class.policy(weights)?,
            cost,
            iterations,
            stationarity,
        })
    };

    if class.contains(&unflatten(&start, class)) || lipschitz == 0.0 {
        let v = project(&start);
        return finish(v, 0, 0.0);
    }

    let step = 1.0 / lipschitz;
    let mut v = project(&start);
    let mut z = v.clone();
    let mut momentum = 1.0f64;
    let mut stationarity = f64::INFINITY;
    for it in 1..=HINDSIGHT_MAX_ITERS {
        let mapped = project(&(&v - gradient(&v) * step));
        stationarity = (&v - &mapped).norm() / step;
        if stationarity <= HINDSIGHT_TOL * scale {
            return finish(v, it, stationarity);
        }
        let candidate = project(&(&z - gradient(&z) * step));
        let next_m = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        // Adaptive restart keeps the iteration monotone.
        if objective(&candidate) > objective(&v) {
            momentum = 1.0;
            z = v.clone();
            continue;
        }
        z = &candidate + (&candidate - &v) * ((momentum - 1.0) / next_m);
        v = candidate;
        momentum = next_m;
    }
    Err(Error::solver(
        "hindsight projected gradient did not reach stationarity",
        stationarity,
    ))
}

/// `J_T` of a fixed DAC policy on a known disturbance sequence.
pub fn dac_cost(sys: &LtiSystem, policy: &DacPolicy, ws: &[Vector]) -> f64 {
    residuals(
        sys,
        &sym_sqrt(sys.q()),
        &sym_sqrt(sys.r()),
        &policy.k_stab,
        &policy.weights,
        ws,
    )
    .norm_squared()
}
