//! Linear time-invariant plants `x_{t+1} = A x_t + B u_t + w_t` with
//! quadratic stage cost `c(x, u) = xᵀQx + uᵀRu`, closed-loop simulation, and
//! strong-stability certificates for linear feedback gains.

use crate::error::{Error, Result};
use crate::linalg::{
    self, condition_number_c, eigen_decompose, spectral_norm, spectral_norm_c, spectral_radius,
    to_complex, CMat, Mat, Vector,
};

/// A plant together with its quadratic cost and the scalar bounds the
/// approximation results are stated in.
#[derive(Debug, Clone)]
pub struct LtiSystem {
    a: Mat,
    b: Mat,
    q: Mat,
    r: Mat,
    q_sqrt: Mat,
    w_bound: f64,
    beta: f64,
    mu: f64,
    kappa: Option<f64>,
}

impl LtiSystem {
    /// Builds a system and derives `beta = max(λmax(Q), λmax(R))` and
    /// `mu = λmin(R)`.
    pub fn new(a: Mat, b: Mat, q: Mat, r: Mat, w_bound: f64) -> Result<Self> {
        let m = a.nrows();
        if m == 0 || a.ncols() != m {
            return Err(Error::invalid(format!("A must be square and nonempty, got {:?}", a.shape())));
        }
        if b.nrows() != m || b.ncols() == 0 {
            return Err(Error::invalid(format!("B must be {m}×n with n ≥ 1, got {:?}", b.shape())));
        }
        let n = b.ncols();
        if q.shape() != (m, m) {
            return Err(Error::invalid(format!("Q must be {m}×{m}, got {:?}", q.shape())));
        }
        if r.shape() != (n, n) {
            return Err(Error::invalid(format!("R must be {n}×{n}, got {:?}", r.shape())));
        }
        if !(w_bound >= 0.0 && w_bound.is_finite()) {
            return Err(Error::invalid("disturbance bound W must be finite and nonnegative"));
        }
        for (name, mtx) in [("A", &a), ("B", &b), ("Q", &q), ("R", &r)] {
            if mtx.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("{name} has non-finite entries")));
            }
        }
        check_symmetric("Q", &q)?;
        check_symmetric("R", &r)?;
        let q_min = linalg::min_sym_eigenvalue(&q);
        let scale_q = spectral_norm(&q).max(1.0);
        if q_min < -1e-12 * scale_q {
            return Err(Error::invalid(format!("Q must be PSD (min eigenvalue {q_min:e})")));
        }
        let mu = linalg::min_sym_eigenvalue(&r);
        if mu <= 0.0 {
            return Err(Error::invalid(format!("R must be PD (min eigenvalue {mu:e})")));
        }
        let beta = linalg::max_sym_eigenvalue(&q).max(linalg::max_sym_eigenvalue(&r));
        let q_sqrt = linalg::sym_sqrt(&q);
        Ok(Self {
            a,
            b,
            q,
            r,
            q_sqrt,
            w_bound,
            beta,
            mu,
            kappa: None,
        })
    }

    /// Overrides the derived cost bounds; the eigenvalues of `Q` must lie in
    /// `[0, beta]` and those of `R` in `[mu, beta]`.
    pub fn with_cost_bounds(mut self, beta: f64, mu: f64) -> Result<Self> {
        let tol = 1e-12 * beta.abs().max(1.0);
        let q_max = linalg::max_sym_eigenvalue(&self.q);
        let r_eig = linalg::sym_eigenvalues(&self.r);
        if q_max > beta + tol || r_eig.max() > beta + tol || r_eig.min() < mu - tol || mu <= 0.0 {
            return Err(Error::invalid(format!(
                "cost bounds beta={beta}, mu={mu} do not bracket the spectra of Q and R"
            )));
        }
        self.beta = beta;
        self.mu = mu;
        Ok(self)
    }

    /// Declares a stability constant; requires `‖A‖, ‖B‖ ≤ kappa`.
    pub fn with_kappa(mut self, kappa: f64) -> Result<Self> {
        let na = spectral_norm(&self.a);
        let nb = spectral_norm(&self.b);
        if na > kappa || nb > kappa {
            return Err(Error::invalid(format!(
                "‖A‖ = {na}, ‖B‖ = {nb} exceed declared kappa {kappa}"
            )));
        }
        self.kappa = Some(kappa);
        Ok(self)
    }

    /// The two-state double integrator with `Q = I`, `R = I`, `W = 1`.
    pub fn double_integrator() -> Self {
        Self::new(
            linalg::mat(&[&[1.0, 1.0], &[0.0, 1.0]]),
            linalg::mat(&[&[0.0], &[1.0]]),
            Mat::identity(2, 2),
            Mat::identity(1, 1),
            1.0,
        )
        .expect("double integrator is well formed")
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn b(&self) -> &Mat {
        &self.b
    }
    pub fn q(&self) -> &Mat {
        &self.q
    }
    pub fn r(&self) -> &Mat {
        &self.r
    }
    /// Symmetric square root of `Q`.
    pub fn q_sqrt(&self) -> &Mat {
        &self.q_sqrt
    }
    pub fn w_bound(&self) -> f64 {
        self.w_bound
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn declared_kappa(&self) -> Option<f64> {
        self.kappa
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn with_w_bound(mut self, w_bound: f64) -> Result<Self> {
        if !(w_bound >= 0.0 && w_bound.is_finite()) {
            return Err(Error::invalid("disturbance bound W must be finite and nonnegative"));
        }
        self.w_bound = w_bound;
        Ok(self)
    }

    /// `A x + B u + w`.
    pub fn step(&self, x: &Vector, u: &Vector, w: &Vector) -> Result<Vector> {
        self.check_state("x", x)?;
        self.check_input(u)?;
        self.check_state("w", w)?;
        Ok(&self.a * x + &self.b * u + w)
    }

    /// `xᵀQx + uᵀRu`.
    pub fn cost(&self, x: &Vector, u: &Vector) -> Result<f64> {
        self.check_state("x", x)?;
        self.check_input(u)?;
        Ok(self.cost_unchecked(x, u))
    }

    pub(crate) fn cost_unchecked(&self, x: &Vector, u: &Vector) -> f64 {
        let c = x.dot(&(&self.q * x)) + u.dot(&(&self.r * u));
        c.max(0.0)
    }

    pub(crate) fn check_state(&self, name: &str, v: &Vector) -> Result<()> {
        if v.len() != self.state_dim() {
            return Err(Error::invalid(format!(
                "{name} has dimension {}, expected {}",
                v.len(),
                self.state_dim()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_input(&self, u: &Vector) -> Result<()> {
        if u.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "control has dimension {}, expected {}",
                u.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

fn check_symmetric(name: &str, m: &Mat) -> Result<()> {
    let asym = (m - m.transpose()).norm();
    if asym > 1e-12 * m.norm().max(1.0) {
        return Err(Error::invalid(format!("{name} is not symmetric (‖{name} − {name}ᵀ‖ = {asym:e})")));
    }
    Ok(())
}

/// A strictly causal feedback law queried once per step.
///
/// `t` is the 1-based step index; implementations that keep internal state
/// reject out-of-order calls with [`Error::ProtocolViolation`].
pub trait Controller {
    fn act(&mut self, t: usize, x: &Vector) -> Result<Vector>;
}

impl<C: Controller + ?Sized> Controller for Box<C> {
    fn act(&mut self, t: usize, x: &Vector) -> Result<Vector> {
        (**self).act(t, x)
    }
}

/// `u = K x`.
#[derive(Debug, Clone)]
pub struct LinearController {
    pub gain: Mat,
}

impl LinearController {
    pub fn new(gain: Mat) -> Self {
        Self { gain }
    }
    pub fn zero(input_dim: usize, state_dim: usize) -> Self {
        Self::new(Mat::zeros(input_dim, state_dim))
    }
}

impl Controller for LinearController {
    fn act(&mut self, _t: usize, x: &Vector) -> Result<Vector> {
        if x.len() != self.gain.ncols() {
            return Err(Error::invalid("state dimension does not match gain"));
        }
        Ok(&self.gain * x)
    }
}

/// Replays a fixed control sequence, ignoring the state.
#[derive(Debug, Clone)]
pub struct OpenLoop {
    controls: Vec<Vector>,
}

impl OpenLoop {
    pub fn new(controls: Vec<Vector>) -> Self {
        Self { controls }
    }
}

impl Controller for OpenLoop {
    fn act(&mut self, t: usize, _x: &Vector) -> Result<Vector> {
        self.controls
            .get(t.wrapping_sub(1))
            .cloned()
            .ok_or_else(|| Error::ProtocolViolation(format!("open-loop sequence has no step {t}")))
    }
}

/// A simulated closed-loop run. `states` has one more entry than `controls`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vector>,
    pub controls: Vec<Vector>,
    pub disturbances: Vec<Vector>,
    pub step_costs: Vec<f64>,
    pub total_cost: f64,
    /// Set when some `‖w_t‖` exceeded the system's declared bound `W`.
    pub exceeded_w_bound: bool,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// Recomputes the states from `x₁`, the controls and the disturbances.
    pub fn resimulate(&self, sys: &LtiSystem) -> Vec<Vector> {
        let mut out = Vec::with_capacity(self.states.len());
        let mut x = self.states[0].clone();
        out.push(x.clone());
        for (u, w) in self.controls.iter().zip(&self.disturbances) {
            x = sys.a() * &x + sys.b() * u + w;
            out.push(x.clone());
        }
        out
    }

    /// Running sum of the stage costs.
    pub fn cumulative_costs(&self) -> Vec<f64> {
        self.step_costs
            .iter()
            .scan(0.0, |acc, c| {
                *acc += c;
                Some(*acc)
            })
            .collect()
    }
}

/// Runs `controller` on `sys` from `x₁ = 0` against the disturbance sequence.
pub fn rollout<C: Controller + ?Sized>(
    sys: &LtiSystem,
    controller: &mut C,
    disturbances: &[Vector],
) -> Result<Trajectory> {
    let m = sys.state_dim();
    let horizon = disturbances.len();
    for w in disturbances {
        sys.check_state("w", w)?;
    }
    let w_tol = sys.w_bound() * (1.0 + 1e-12);
    let exceeded_w_bound = disturbances.iter().any(|w| w.norm() > w_tol);

    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    let mut step_costs = Vec::with_capacity(horizon);
    let mut x = Vector::zeros(m);
    states.push(x.clone());
    let mut total = 0.0;
    for (idx, w) in disturbances.iter().enumerate() {
        let t = idx + 1;
        let u = controller.act(t, &x)?;
        sys.check_input(&u)?;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDivergence { step: t });
        }
        let c = sys.cost_unchecked(&x, &u);
        let next = sys.a() * &x + sys.b() * &u + w;
        if !c.is_finite() || next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDivergence { step: t });
        }
        total += c;
        step_costs.push(c);
        controls.push(u);
        states.push(next.clone());
        x = next;
    }
    Ok(Trajectory {
        states,
        controls,
        disturbances: disturbances.to_vec(),
        step_costs,
        total_cost: total,
        exceeded_w_bound,
    })
}

/// Witness that `A + BK = S L S⁻¹` with `max{1, ‖K‖, ‖S‖‖S⁻¹‖} ≤ kappa` and
/// `max{1/2, ‖L‖} ≤ 1 − gamma`.
#[derive(Debug, Clone)]
pub struct StabilityCertificate {
    pub s: CMat,
    pub l: CMat,
    pub kappa: f64,
    pub gamma: f64,
}

impl StabilityCertificate {
    /// `kappa · (1 − gamma)^t`, an upper bound on `‖(A + BK)^t‖`.
    pub fn power_bound(&self, t: usize) -> f64 {
        self.kappa * (1.0 - self.gamma).powi(t as i32)
    }

    /// Combines certificates of several controllers into one shared pair
    /// (largest kappa, smallest gamma).
    pub fn shared_constants<'a>(certs: impl IntoIterator<Item = &'a StabilityCertificate>) -> (f64, f64) {
        certs
            .into_iter()
            .fold((1.0, 0.5), |(k, g), c| (k.max(c.kappa), g.min(c.gamma)))
    }
}

/// Certifies the gain `K` for the plant of `sys`.
pub fn stability_certificate(sys: &LtiSystem, k: &Mat) -> Result<StabilityCertificate> {
    certify_closed_loop(sys.a(), sys.b(), k)
}

/// Certifies `A + BK` through its eigendecomposition: `S` holds unit-norm
/// eigenvectors and `L` the eigenvalues.
pub fn certify_closed_loop(a: &Mat, b: &Mat, k: &Mat) -> Result<StabilityCertificate> {
    let closed = closed_loop(a, b, k)?;
    let rho = spectral_radius(&closed);
    if rho >= 1.0 {
        return Err(Error::NotStable { spectral_radius: rho });
    }
    let eig = eigen_decompose(&closed);
    let cond = condition_number_c(&eig.vectors);
    if !(cond <= 1e8) {
        return Err(Error::CertificationFailed(format!(
            "eigenbasis condition number {cond:e} exceeds 1e8"
        )));
    }
    let l = CMat::from_diagonal(&eig.values);
    certify_with_basis(a, b, k, eig.vectors, l)
}

/// Certifies `A + BK` with a caller-supplied similarity `S L S⁻¹`.
pub fn certify_with_basis(a: &Mat, b: &Mat, k: &Mat, s: CMat, l: CMat) -> Result<StabilityCertificate> {
    let closed = closed_loop(a, b, k)?;
    let m = closed.nrows();
    if s.shape() != (m, m) || l.shape() != (m, m) {
        return Err(Error::invalid("S and L must match the state dimension"));
    }
    let s_inv = s
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::CertificationFailed("S is singular".into()))?;
    let residual = spectral_norm_c(&(&s * &l * &s_inv - to_complex(&closed)));
    let scale = spectral_norm(&closed);
    if !(residual <= 1e-8 * scale.max(1e-300)) {
        return Err(Error::CertificationFailed(format!(
            "S L S⁻¹ reconstruction residual {residual:e} too large"
        )));
    }
    let l_norm = spectral_norm_c(&l);
    if l_norm >= 1.0 {
        return Err(Error::NotStable { spectral_radius: l_norm });
    }
    let cond = condition_number_c(&s);
    let kappa = round_up(1f64.max(spectral_norm(k)).max(cond));
    let gamma = 1.0 - l_norm.max(0.5);
    Ok(StabilityCertificate { s, l, kappa, gamma })
}

fn closed_loop(a: &Mat, b: &Mat, k: &Mat) -> Result<Mat> {
    let m = a.nrows();
    if a.ncols() != m || b.nrows() != m || k.shape() != (b.ncols(), m) {
        return Err(Error::invalid(format!(
            "gain of shape {:?} does not fit A {:?}, B {:?}",
            k.shape(),
            a.shape(),
            b.shape()
        )));
    }
    Ok(a + b * k)
}

/// Rounds up to the next multiple of 1e-12.
fn round_up(x: f64) -> f64 {
    let r = (x * 1e12).ceil() / 1e12;
    if r < x {
        r + 1e-12
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{mat, vector};

    fn scalar(a: f64, b: f64) -> LtiSystem {
        LtiSystem::new(mat(&[&[a]]), mat(&[&[b]]), mat(&[&[1.0]]), mat(&[&[1.0]]), 1.0).unwrap()
    }

    #[test]
    fn step_double_integrator() {
        let sys = LtiSystem::double_integrator();
        let x = sys.step(&vector(&[0.0, 0.0]), &vector(&[0.0]), &vector(&[1.0, 1.0])).unwrap();
        assert_eq!(x, vector(&[1.0, 1.0]));
        let zero = sys.step(&Vector::zeros(2), &Vector::zeros(1), &Vector::zeros(2)).unwrap();
        assert_eq!(zero, Vector::zeros(2));
    }

    #[test]
    fn step_scalar_arithmetic() {
        let sys = LtiSystem::new(mat(&[&[0.5]]), mat(&[&[1.0]]), mat(&[&[1.0]]), mat(&[&[1.0]]), 1.0).unwrap();
        let x = sys.step(&vector(&[2.0]), &vector(&[1.0]), &vector(&[0.25])).unwrap();
        assert_eq!(x, vector(&[2.25]));
    }

    #[test]
    fn step_rejects_bad_dimensions() {
        let sys = LtiSystem::double_integrator();
        let err = sys.step(&vector(&[0.0]), &vector(&[0.0]), &vector(&[0.0, 0.0]));
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
        let err = sys.cost(&vector(&[0.0, 0.0]), &vector(&[0.0, 1.0]));
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn cost_examples() {
        let sys = LtiSystem::double_integrator();
        assert_eq!(sys.cost(&vector(&[1.0, 1.0]), &vector(&[2.0])).unwrap(), 6.0);
        assert_eq!(sys.cost(&Vector::zeros(2), &Vector::zeros(1)).unwrap(), 0.0);
        let sys2 = LtiSystem::new(
            mat(&[&[1.0, 1.0], &[0.0, 1.0]]),
            mat(&[&[0.0], &[1.0]]),
            mat(&[&[2.0, 0.0], &[0.0, 1.0]]),
            mat(&[&[3.0]]),
            1.0,
        )
        .unwrap();
        assert_eq!(sys2.cost(&vector(&[1.0, 2.0]), &vector(&[1.0])).unwrap(), 9.0);
    }

    #[test]
    fn construction_validates() {
        let bad_q = LtiSystem::new(
            Mat::identity(2, 2),
            mat(&[&[0.0], &[1.0]]),
            mat(&[&[1.0, 2.0], &[0.0, 1.0]]),
            Mat::identity(1, 1),
            1.0,
        );
        assert!(matches!(bad_q, Err(Error::InvalidArgument(_))));
        let bad_r = LtiSystem::new(Mat::identity(1, 1), mat(&[&[1.0]]), mat(&[&[1.0]]), mat(&[&[0.0]]), 1.0);
        assert!(matches!(bad_r, Err(Error::InvalidArgument(_))));
        let sys = LtiSystem::double_integrator();
        assert!(sys.clone().with_kappa(1.0).is_err());
        assert!(sys.clone().with_kappa(2.0).is_ok());
        assert_eq!(sys.beta(), 1.0);
        assert_eq!(sys.mu(), 1.0);
    }

    #[test]
    fn rollout_zero_controller_zero_noise() {
        let sys = LtiSystem::double_integrator();
        let w = vec![Vector::zeros(2); 5];
        let traj = rollout(&sys, &mut LinearController::zero(1, 2), &w).unwrap();
        assert_eq!(traj.total_cost, 0.0);
        assert!(traj.states.iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn rollout_linear_controller_stays_at_origin() {
        let sys = LtiSystem::double_integrator();
        let w = vec![Vector::zeros(2); 5];
        let mut k = LinearController::new(mat(&[&[-0.3, -0.9]]));
        let traj = rollout(&sys, &mut k, &w).unwrap();
        assert!(traj.states.iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn rollout_double_integrator_hand_unrolled() {
        let sys = LtiSystem::double_integrator();
        let w = vec![vector(&[1.0, 1.0]); 2];
        let traj = rollout(&sys, &mut LinearController::zero(1, 2), &w).unwrap();
        // x2 = w1, x3 = A x2 + w2, computed entrywise.
        let x3 = [1.0 + 1.0 + 1.0, 1.0 + 1.0];
        assert_eq!(traj.states, vec![vector(&[0.0, 0.0]), vector(&[1.0, 1.0]), vector(&x3)]);
        assert_eq!(traj.step_costs, vec![0.0, 2.0]);
        assert_eq!(traj.total_cost, 2.0);
        assert!(traj.exceeded_w_bound);
    }

    #[test]
    fn rollout_detects_divergence() {
        let sys = LtiSystem::new(mat(&[&[1e200]]), mat(&[&[1.0]]), mat(&[&[1.0]]), mat(&[&[1.0]]), 1.0).unwrap();
        let w = vec![vector(&[1.0]); 5];
        let err = rollout(&sys, &mut LinearController::zero(1, 1), &w).unwrap_err();
        assert!(matches!(err, Error::NumericDivergence { step } if step >= 2));
    }

    #[test]
    fn rollout_rejects_wrong_action_dimension() {
        let sys = LtiSystem::double_integrator();
        let w = vec![Vector::zeros(2); 2];
        let mut bad = LinearController::new(Mat::zeros(2, 2));
        assert!(matches!(rollout(&sys, &mut bad, &w), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn certificate_zero_closed_loop() {
        let sys = LtiSystem::new(mat(&[&[0.0]]), mat(&[&[1.0]]), mat(&[&[1.0]]), mat(&[&[1.0]]), 1.0).unwrap();
        let cert = stability_certificate(&sys, &mat(&[&[0.0]])).unwrap();
        assert_eq!(cert.kappa, 1.0);
        assert_eq!(cert.gamma, 0.5);
    }

    #[test]
    fn certificate_scalar_half() {
        let sys = scalar(1.0, 1.0);
        let cert = stability_certificate(&sys, &mat(&[&[-0.5]])).unwrap();
        assert!((cert.l[(0, 0)].re - 0.5).abs() < 1e-15);
        assert_eq!(cert.gamma, 0.5);
        assert_eq!(cert.kappa, 1.0);
    }

    #[test]
    fn certificate_rejects_unstable() {
        let sys = scalar(1.0, 1.0);
        assert!(matches!(
            stability_certificate(&sys, &mat(&[&[0.5]])),
            Err(Error::NotStable { .. })
        ));
    }

    #[test]
    fn certificate_rejects_defective_closed_loop() {
        // A + BK is a Jordan block with eigenvalue 0.5.
        let a = mat(&[&[0.5, 1.0], &[0.0, 0.5]]);
        let b = mat(&[&[1.0], &[0.0]]);
        let k = mat(&[&[0.0, 0.0]]);
        assert!(matches!(certify_closed_loop(&a, &b, &k), Err(Error::CertificationFailed(_))));
    }

    #[test]
    fn certificate_override_accepts_scaled_jordan_basis() {
        // S = diag(1, δ) turns the Jordan block into λI + δN.
        let a = mat(&[&[0.5, 1.0], &[0.0, 0.5]]);
        let b = mat(&[&[1.0], &[0.0]]);
        let k = mat(&[&[0.0, 0.0]]);
        let delta = 0.1;
        let s = to_complex(&mat(&[&[1.0, 0.0], &[0.0, delta]]));
        let l = to_complex(&mat(&[&[0.5, delta], &[0.0, 0.5]]));
        let cert = certify_with_basis(&a, &b, &k, s, l).unwrap();
        assert!((cert.kappa - 10.0).abs() < 1e-9);
        assert!(cert.gamma > 0.0 && cert.gamma < 0.5);
    }

    #[test]
    fn shared_constants_take_worst_case() {
        let sys = scalar(1.0, 1.0);
        let c1 = stability_certificate(&sys, &mat(&[&[-0.5]])).unwrap();
        let c2 = stability_certificate(&sys, &mat(&[&[-0.2]])).unwrap();
        let (k, g) = StabilityCertificate::shared_constants([&c1, &c2]);
        assert_eq!(k, 1.0);
        assert!((g - 0.2).abs() < 1e-12);
    }
}
