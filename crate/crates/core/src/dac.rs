//! Disturbance-action policies
//!
//! ```text
//! u_t = 𝕂 x_t + Σ_{i=1}^{H} M^{[i−1]} w_{t−i}
//! ```
//!
//! with the `(H, θ, γ′)` class constraint `‖M^{[i]}‖ ≤ θ(1 − γ′)^i`, and the
//! explicit conversions of the competitive controller into this class.
//!
//! # Text container
//!
//! Policies are persisted as plain text, one token group per line:
//!
//! ```text
//! dac-policy 1
//! theta <value>
//! gamma_prime <value>
//! matrix K_stab <rows> <cols>
//! <row-major values, one matrix row per line>
//! matrix M0 <rows> <cols>
//! ...
//! matrix M<H−1> <rows> <cols>
//! ...
//! ```
//!
//! Values are written with 17 significant digits, which reproduces every
//! `f64` exactly on reload.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::competitive::{AssumptionAudit, CompetitiveSolution};
use crate::error::{Error, Result};
use crate::lds::{certify_closed_loop, Controller, LtiSystem, StabilityCertificate};
use crate::linalg::{spectral_norm, Mat, Vector};

/// Additive slack on the weight-decay check.
pub const DECAY_SLACK: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct DacPolicy {
    pub k_stab: Mat,
    pub weights: Vec<Mat>,
    pub theta: f64,
    pub gamma_prime: f64,
    pub certificate: Option<StabilityCertificate>,
}

impl DacPolicy {
    /// Validates shapes and the class constraint.
    pub fn new(k_stab: Mat, weights: Vec<Mat>, theta: f64, gamma_prime: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("DAC policy needs H ≥ 1 weights"));
        }
        if !(theta > 0.0) || !(gamma_prime > 0.0 && gamma_prime < 1.0) {
            return Err(Error::invalid(format!(
                "class parameters need theta > 0 and gamma' in (0,1), got {theta}, {gamma_prime}"
            )));
        }
        if let Some(bad) = weights.iter().position(|w| w.shape() != k_stab.shape()) {
            return Err(Error::invalid(format!(
                "weight M[{bad}] has shape {:?}, stabilizer has {:?}",
                weights[bad].shape(),
                k_stab.shape()
            )));
        }
        let policy = Self {
            k_stab,
            weights,
            theta,
            gamma_prime,
            certificate: None,
        };
        if let Some(i) = policy.first_violation() {
            return Err(Error::invalid(format!(
                "‖M[{i}]‖ = {} exceeds θ(1−γ′)^{i} = {}",
                spectral_norm(&policy.weights[i]),
                policy.weight_radius(i)
            )));
        }
        Ok(policy)
    }

    pub fn with_certificate(mut self, cert: StabilityCertificate) -> Self {
        self.certificate = Some(cert);
        self
    }

    pub fn horizon(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.k_stab.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.k_stab.ncols()
    }

    /// `θ(1 − γ′)^i`.
    pub fn weight_radius(&self, i: usize) -> f64 {
        self.theta * (1.0 - self.gamma_prime).powi(i as i32)
    }

    fn first_violation(&self) -> Option<usize> {
        self.weights
            .iter()
            .enumerate()
            .position(|(i, w)| spectral_norm(w) > self.weight_radius(i) + DECAY_SLACK)
    }

    pub fn in_class(&self) -> bool {
        self.first_violation().is_none()
    }

    /// `𝕂x + Σ_{i=1}^{H} M^{[i−1]} w_{t−i}`; `w_history[0]` is `w_{t−1}`.
    pub fn action(&self, x: &Vector, w_history: &[Vector]) -> Result<Vector> {
        dac_action(self, x, w_history)
    }

    /// A stateful controller that infers disturbances from observed states.
    pub fn controller(&self, sys: &LtiSystem) -> DacController {
        DacController::new(self.clone(), sys)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("dac-policy 1\n");
        let _ = writeln!(out, "theta {}", fmt17(self.theta));
        let _ = writeln!(out, "gamma_prime {}", fmt17(self.gamma_prime));
        write_matrix(&mut out, "K_stab", &self.k_stab);
        for (i, w) in self.weights.iter().enumerate() {
            write_matrix(&mut out, &format!("M{i}"), w);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Parse("empty policy file".into()))?;
        if header != "dac-policy 1" {
            return Err(Error::Parse(format!("unexpected header {header:?}")));
        }
        let theta = scalar_line(lines.next(), "theta")?;
        let gamma_prime = scalar_line(lines.next(), "gamma_prime")?;
        let mut matrices = Vec::new();
        while let Some(line) = lines.next() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "matrix" {
                return Err(Error::Parse(format!("expected matrix header, got {line:?}")));
            }
            let rows: usize = parse_num(parts[2])?;
            let cols: usize = parse_num(parts[3])?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let row = lines
                    .next()
                    .ok_or_else(|| Error::Parse(format!("matrix {} truncated", parts[1])))?;
                let vals = row.split_whitespace().map(parse_num::<f64>).collect::<Result<Vec<_>>>()?;
                if vals.len() != cols {
                    return Err(Error::Parse(format!("matrix {} row has {} values", parts[1], vals.len())));
                }
                data.extend(vals);
            }
            matrices.push((parts[1].to_string(), Mat::from_row_slice(rows, cols, &data)));
        }
        let mut it = matrices.into_iter();
        let (name, k_stab) = it.next().ok_or_else(|| Error::Parse("missing K_stab".into()))?;
        if name != "K_stab" {
            return Err(Error::Parse(format!("expected K_stab, got {name}")));
        }
        let mut weights = Vec::new();
        for (i, (name, w)) in it.enumerate() {
            if name != format!("M{i}") {
                return Err(Error::Parse(format!("expected M{i}, got {name}")));
            }
            weights.push(w);
        }
        DacPolicy::new(k_stab, weights, theta, gamma_prime)
    }
}

/// Formats with 17 significant digits.
pub(crate) fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_matrix(out: &mut String, name: &str, m: &Mat) {
    let _ = writeln!(out, "matrix {name} {} {}", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt17(m[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

fn scalar_line(line: Option<&str>, key: &str) -> Result<f64> {
    let line = line.ok_or_else(|| Error::Parse(format!("missing {key}")))?;
    match line.split_whitespace().collect::<Vec<_>>().as_slice() {
        [k, v] if *k == key => parse_num(v),
        _ => Err(Error::Parse(format!("expected `{key} <value>`, got {line:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse(format!("bad number {s:?}")))
}

/// `𝕂x + Σ_{i=1}^{H} M^{[i−1]} w_{t−i}`. Missing history entries count as
/// zero (disturbances before the first step vanish).
pub fn dac_action(policy: &DacPolicy, x: &Vector, w_history: &[Vector]) -> Result<Vector> {
    if x.len() != policy.state_dim() {
        return Err(Error::invalid(format!(
            "state has dimension {}, policy expects {}",
            x.len(),
            policy.state_dim()
        )));
    }
    let mut u = &policy.k_stab * x;
    for (m, w) in policy.weights.iter().zip(w_history) {
        if w.len() != policy.state_dim() {
            return Err(Error::invalid("disturbance dimension mismatch"));
        }
        u += m * w;
    }
    Ok(u)
}

/// Runs a fixed DAC policy online.
#[derive(Debug, Clone)]
pub struct DacController {
    policy: DacPolicy,
    a: Mat,
    b: Mat,
    history: VecDeque<Vector>,
    last: Option<(Vector, Vector)>,
    t: usize,
}

impl DacController {
    pub fn new(policy: DacPolicy, sys: &LtiSystem) -> Self {
        Self {
            history: VecDeque::with_capacity(policy.horizon() + 1),
            policy,
            a: sys.a().clone(),
            b: sys.b().clone(),
            last: None,
            t: 0,
        }
    }

    pub fn policy(&self) -> &DacPolicy {
        &self.policy
    }
}

impl Controller for DacController {
    fn act(&mut self, t: usize, x: &Vector) -> Result<Vector> {
        if t != self.t + 1 {
            return Err(Error::ProtocolViolation(format!(
                "DAC controller expected step {}, got {t}",
                self.t + 1
            )));
        }
        if let Some((px, pu)) = &self.last {
            let w = x - &self.a * px - &self.b * pu;
            self.history.push_front(w);
            self.history.truncate(self.policy.horizon());
        }
        let hist = self.history.make_contiguous();
        let u = dac_action(&self.policy, x, hist)?;
        self.last = Some((x.clone(), u.clone()));
        self.t = t;
        Ok(u)
    }
}

/// `M^{[i−1]} = (K̂₁Σ^{-1/2}Q^{1/2} − K̂₀)(A − KQ^{1/2})^{i−1}` for `i = 1..=h`.
fn competitive_weights(sys: &LtiSystem, comp: &CompetitiveSolution, h: usize) -> Vec<Mat> {
    let d = comp.nu_gain(sys);
    let f = comp.filter.closed_loop(sys);
    let mut out = Vec::with_capacity(h);
    let mut fp = Mat::identity(f.nrows(), f.ncols());
    for _ in 0..h {
        out.push(&d * &fp);
        fp = &fp * &f;
    }
    out
}

/// DAC image of the competitive controller with stabilizer `K̂₀`,
/// `θ = 2κ²max(1, β^{1/2})` and `γ′ = γ` from the audited certificates.
pub fn competitive_to_dac(sys: &LtiSystem, comp: &CompetitiveSolution, h: usize) -> Result<DacPolicy> {
    let audit = comp.audit(sys)?;
    competitive_to_dac_audited(sys, comp, &audit, h)
}

pub fn competitive_to_dac_audited(
    sys: &LtiSystem,
    comp: &CompetitiveSolution,
    audit: &AssumptionAudit,
    h: usize,
) -> Result<DacPolicy> {
    if h == 0 {
        return Err(Error::invalid("DAC horizon must be positive"));
    }
    let theta = 2.0 * audit.kappa.powi(2) * sys.beta().sqrt().max(1.0);
    let gamma_prime = audit.gamma;
    let weights = competitive_weights(sys, comp, h);
    build_checked(comp.k_hat_0.clone(), weights, theta, gamma_prime, audit.control.clone())
}

/// DAC image of the competitive controller around an arbitrary certified
/// stabilizer `𝕂`:
///
/// ```text
/// M^{[i−1]} = D F^{i−1} + (K̂₀ − 𝕂) C_{i−1},
/// C_k = Φ^k + Σ_{j=1}^{k} Φ^{k−j} B D F^{j−1},
/// ```
///
/// with `D = K̂₁Σ^{-1/2}Q^{1/2} − K̂₀`, `F = A − KQ^{1/2}`, `Φ = A + BK̂₀`.
/// `C_k` is the response of the competitive closed loop's state to a unit
/// disturbance `k + 1` steps back. Class constants are
/// `θ = 20κ⁵β^{1/2}/γ`, `γ′ = γ/2`, with κ, γ shared by all three
/// certificates.
pub fn competitive_to_dac_general(
    sys: &LtiSystem,
    comp: &CompetitiveSolution,
    k_stab: &Mat,
    h: usize,
) -> Result<DacPolicy> {
    if h == 0 {
        return Err(Error::invalid("DAC horizon must be positive"));
    }
    let audit = comp.audit(sys)?;
    let cert = certify_closed_loop(sys.a(), sys.b(), k_stab)?;
    let (kappa, gamma) = general_constants(&audit, &cert);
    let theta = 20.0 * kappa.powi(5) * sys.beta().max(1.0).sqrt() / gamma;
    let gamma_prime = gamma / 2.0;

    let d = comp.nu_gain(sys);
    let f = comp.filter.closed_loop(sys);
    let phi = sys.a() + sys.b() * &comp.k_hat_0;
    let correction = &comp.k_hat_0 - k_stab;
    let bd = sys.b() * &d;
    let m = sys.state_dim();
    let mut weights = Vec::with_capacity(h);
    let mut fp = Mat::identity(m, m);
    let mut c = Mat::identity(m, m);
    for _ in 0..h {
        weights.push(&d * &fp + &correction * &c);
        c = &phi * &c + &bd * &fp;
        fp = &fp * &f;
    }
    build_checked(k_stab.clone(), weights, theta, gamma_prime, cert)
}

/// κ, γ shared by `K̂₀`, `−Kᵀ` and `𝕂`.
pub fn general_constants(audit: &AssumptionAudit, cert: &StabilityCertificate) -> (f64, f64) {
    (audit.kappa.max(cert.kappa), audit.gamma.min(cert.gamma))
}

fn build_checked(
    k_stab: Mat,
    weights: Vec<Mat>,
    theta: f64,
    gamma_prime: f64,
    cert: StabilityCertificate,
) -> Result<DacPolicy> {
    let policy = DacPolicy {
        k_stab,
        weights,
        theta,
        gamma_prime,
        certificate: Some(cert),
    };
    if let Some(i) = policy.first_violation() {
        return Err(Error::InternalInconsistency(format!(
            "weight decay violated at i = {i}: ‖M[{i}]‖ = {} > θ(1−γ′)^{i} = {}",
            spectral_norm(&policy.weights[i]),
            policy.weight_radius(i)
        )));
    }
    Ok(policy)
}

fn check_bound_args(eps: f64, gamma: f64, horizon: usize) -> Result<()> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {eps}")));
    }
    if !(gamma > 0.0 && gamma <= 0.5) {
        return Err(Error::invalid(format!("gamma must lie in (0, 1/2], got {gamma}")));
    }
    if horizon == 0 {
        return Err(Error::invalid("time horizon must be positive"));
    }
    Ok(())
}

fn ceil_positive(x: f64) -> usize {
    if x.is_finite() && x > 1.0 {
        x.ceil() as usize
    } else {
        1
    }
}

/// Memory length making the `K̂₀`-based DAC ε-close in total cost:
/// `⌈ log(1088 W² κ¹¹ max(1, β²) T / (γ⁴ ε)) / log(1/(1 − γ/2)) ⌉`, at least 1.
pub fn horizon_for_epsilon(eps: f64, w: f64, kappa: f64, gamma: f64, beta: f64, horizon: usize) -> Result<usize> {
    check_bound_args(eps, gamma, horizon)?;
    let arg = 1088.0 * w * w * kappa.powi(11) * beta.powi(2).max(1.0) * horizon as f64 / (gamma.powi(4) * eps);
    Ok(ceil_positive(arg.ln() / (1.0 / (1.0 - gamma / 2.0)).ln()))
}

/// Memory length for an arbitrary stabilizer:
/// `⌈ 2 log(10⁵ β² W² κ¹⁶ T⁵ / (γ⁴ ε)) / γ ⌉`, at least 1.
pub fn horizon_for_epsilon_general(
    eps: f64,
    w: f64,
    kappa: f64,
    gamma: f64,
    beta: f64,
    horizon: usize,
) -> Result<usize> {
    check_bound_args(eps, gamma, horizon)?;
    // Evaluated in log space; κ¹⁶T⁵ overflows nothing here but loses digits.
    let ln_arg = 1e5f64.ln() + 2.0 * beta.ln() + 2.0 * w.ln() + 16.0 * kappa.ln() + 5.0 * (horizon as f64).ln()
        - 4.0 * gamma.ln()
        - eps.ln();
    Ok(ceil_positive(2.0 * ln_arg / gamma))
}

/// `3κ³θW/(γγ′)`: a bound on `‖x_t‖` and `‖u_t‖` along any run of the policy.
pub fn dac_state_bound(policy: &DacPolicy, w: f64, kappa: f64, gamma: f64) -> f64 {
    3.0 * kappa.powi(3) * policy.theta * w / (gamma * policy.gamma_prime)
}

/// `16Wκ⁴max(1, ‖Q‖^{1/2})(1 − γ/2)^H / γ²`: per-step state gap between the
/// competitive controller and its memory-`H` DAC image.
pub fn state_gap_bound(w: f64, kappa: f64, gamma: f64, q_norm: f64, h: usize) -> f64 {
    16.0 * w * kappa.powi(4) * q_norm.sqrt().max(1.0) * (1.0 - gamma / 2.0).powi(h as i32) / gamma.powi(2)
}

/// `20Wκ⁵max(1, ‖Q‖^{1/2})(1 − γ/2)^H / γ²`: the matching action gap.
pub fn action_gap_bound(w: f64, kappa: f64, gamma: f64, q_norm: f64, h: usize) -> f64 {
    20.0 * w * kappa.powi(5) * q_norm.sqrt().max(1.0) * (1.0 - gamma / 2.0).powi(h as i32) / gamma.powi(2)
}
