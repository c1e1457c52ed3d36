//! Numerical property suites behind `compctrl check`, and the tail-cost
//! check for extending a finite-horizon optimum to infinite horizon.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::classic::{offline_optimal, solve_dare};
use crate::competitive::{compute_alpha_star, AssumptionAudit, CompetitiveSolution};
use crate::dac::{
    action_gap_bound, competitive_to_dac_audited, dac_state_bound, horizon_for_epsilon, state_gap_bound, DacPolicy,
};
use crate::error::{Error, Result};
use crate::gpc::{best_dac_in_hindsight, DacClass, Gpc, GpcConfig};
use crate::lds::{certify_closed_loop, rollout, LtiSystem};
use crate::linalg::{spectral_norm, Mat, Vector};
use crate::noise::{generate, NoiseKind, NoiseSpec};

/// Outcome of [`tail_bound_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct TailReport {
    /// Offline optimum on the finite sequence.
    pub opt_cost: f64,
    /// Cost of driving `x_{T+1}` to rest under the stabilizer with `w = 0`.
    pub tail_cost: f64,
    pub extended_cost: f64,
    /// `2βκ⁴/γ² ‖x_{T+1}‖²`.
    pub bound: f64,
    pub terminal_norm: f64,
    pub extension_steps: usize,
    pub passed: bool,
}

const TAIL_MAX_STEPS: usize = 1_000_000;

pub fn tail_bound_check(sys: &LtiSystem, ws: &[Vector], k_stab: &Mat) -> Result<TailReport> {
    tail_bound_check_with(sys, ws, k_stab, 1e-10)
}

/// As [`tail_bound_check`] with a custom stopping threshold on `‖x‖`.
pub fn tail_bound_check_with(sys: &LtiSystem, ws: &[Vector], k_stab: &Mat, threshold: f64) -> Result<TailReport> {
    let cert = certify_closed_loop(sys.a(), sys.b(), k_stab)?;
    let opt = offline_optimal(sys, ws)?;
    let x_end = opt.trajectory.states.last().expect("nonempty trajectory").clone();
    let closed = sys.a() + sys.b() * k_stab;
    let mut x = x_end.clone();
    let mut tail = 0.0;
    let mut steps = 0;
    while x.norm() >= threshold {
        if steps >= TAIL_MAX_STEPS || !x.norm().is_finite() || x.norm() > 1e100 {
            return Err(Error::InternalInconsistency(format!(
                "certified stabilizer failed to settle the tail after {steps} steps"
            )));
        }
        let u = k_stab * &x;
        tail += sys.cost_unchecked(&x, &u);
        x = &closed * &x;
        steps += 1;
    }
    let bound = 2.0 * sys.beta() * cert.kappa.powi(4) / cert.gamma.powi(2) * x_end.norm_squared();
    Ok(TailReport {
        opt_cost: opt.opt_cost,
        tail_cost: tail,
        extended_cost: opt.opt_cost + tail,
        bound,
        terminal_norm: x_end.norm(),
        extension_steps: steps,
        passed: tail <= bound,
    })
}

/// One verdict line of a suite.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Bounds,
    Regret,
    Tail,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bounds" => Ok(Suite::Bounds),
            "regret" => Ok(Suite::Regret),
            "tail" => Ok(Suite::Tail),
            _ => Err(Error::invalid(format!("unknown suite {s:?}; use bounds, regret or tail"))),
        }
    }
}

pub fn run_suite(suite: Suite) -> Result<Vec<CheckLine>> {
    match suite {
        Suite::Bounds => {
            let ctx = Context::double_integrator()?;
            Ok(vec![
                cost_gap_check(&ctx, &[1.0, 0.1], 10, 300)?,
                gap_envelope_check(&ctx, &[2, 4, 8, 16], 10, 200)?,
                state_envelope_check(20, 5, 200)?,
                geometric_sum_check(),
            ])
        }
        Suite::Regret => Ok(vec![regret_check(500, 2000)?]),
        Suite::Tail => Ok(vec![tail_check(10, 100)?]),
    }
}

/// Double integrator with its competitive solution and audited constants.
pub struct Context {
    pub sys: LtiSystem,
    pub comp: CompetitiveSolution,
    pub audit: AssumptionAudit,
}

impl Context {
    pub fn double_integrator() -> Result<Self> {
        let sys = LtiSystem::double_integrator();
        let comp = compute_alpha_star(&sys, 1e-4)?;
        let audit = comp.audit(&sys)?;
        Ok(Self { sys, comp, audit })
    }

    fn dac(&self, memory: usize) -> Result<DacPolicy> {
        competitive_to_dac_audited(&self.sys, &self.comp, &self.audit, memory)
    }
}

/// Disturbances uniform in the unit box, rescaled into the unit ball.
pub fn unit_ball_noise(rng: &mut ChaCha20Rng, m: usize, horizon: usize) -> Vec<Vector> {
    (0..horizon)
        .map(|_| {
            let v = Vector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let n = v.norm();
            if n > 1.0 {
                v / n
            } else {
                v
            }
        })
        .collect()
}

/// `|J_T(DAC) − J_T(competitive)| < ε` with memory from the ε-formula.
pub fn cost_gap_check(ctx: &Context, epsilons: &[f64], runs: usize, horizon: usize) -> Result<CheckLine> {
    let mut rng = ChaCha20Rng::seed_from_u64(0xC057);
    let mut worst = Vec::new();
    let mut passed = true;
    for &eps in epsilons {
        let memory = horizon_for_epsilon(eps, 1.0, ctx.audit.kappa, ctx.audit.gamma, ctx.sys.beta(), horizon)?;
        let policy = ctx.dac(memory)?;
        let mut max_gap = 0.0f64;
        for _ in 0..runs {
            let ws = unit_ball_noise(&mut rng, ctx.sys.state_dim(), horizon);
            let j_comp = rollout(&ctx.sys, &mut ctx.comp.runtime(&ctx.sys), &ws)?.total_cost;
            let j_dac = rollout(&ctx.sys, &mut policy.controller(&ctx.sys), &ws)?.total_cost;
            max_gap = max_gap.max((j_comp - j_dac).abs());
        }
        passed &= max_gap < eps;
        worst.push(format!("eps={eps}: H={memory}, max gap {max_gap:.3e}"));
    }
    Ok(CheckLine {
        name: "dac cost gap".into(),
        passed,
        detail: worst.join("; "),
    })
}

/// Per-step state and action gaps between the competitive controller and
/// its memory-`H` image stay inside the closed-form envelopes, and shrink
/// by at least 1.5× per doubling of `H`.
pub fn gap_envelope_check(ctx: &Context, memories: &[usize], runs: usize, horizon: usize) -> Result<CheckLine> {
    let q_norm = spectral_norm(ctx.sys.q());
    let (kappa, gamma) = (ctx.audit.kappa, ctx.audit.gamma);
    let mut rng = ChaCha20Rng::seed_from_u64(0xE4E1);
    let noises: Vec<Vec<Vector>> = (0..runs)
        .map(|_| unit_ball_noise(&mut rng, ctx.sys.state_dim(), horizon))
        .collect();
    let mut passed = true;
    let mut gaps = Vec::new();
    let mut detail = Vec::new();
    for &h in memories {
        let policy = ctx.dac(h)?;
        let (sb, ab) = (
            state_gap_bound(1.0, kappa, gamma, q_norm, h),
            action_gap_bound(1.0, kappa, gamma, q_norm, h),
        );
        let (mut sg, mut ag) = (0.0f64, 0.0f64);
        for ws in &noises {
            let a = rollout(&ctx.sys, &mut ctx.comp.runtime(&ctx.sys), ws)?;
            let b = rollout(&ctx.sys, &mut policy.controller(&ctx.sys), ws)?;
            for (x, y) in a.states.iter().zip(&b.states) {
                sg = sg.max((x - y).norm());
            }
            for (u, v) in a.controls.iter().zip(&b.controls) {
                ag = ag.max((u - v).norm());
            }
        }
        passed &= sg <= sb && ag <= ab;
        gaps.push(sg.max(ag));
        detail.push(format!("H={h}: state {sg:.2e}/{sb:.2e}, action {ag:.2e}/{ab:.2e}"));
    }
    for pair in gaps.windows(2) {
        passed &= pair[0] >= 1.5 * pair[1];
    }
    Ok(CheckLine {
        name: "state/action gap envelopes".into(),
        passed,
        detail: detail.join("; "),
    })
}

/// Rollouts of random class members stay within `3κ³θW/(γγ′)`.
pub fn state_envelope_check(policies: usize, seeds: usize, horizon: usize) -> Result<CheckLine> {
    let sys = LtiSystem::double_integrator();
    let k = solve_dare(&sys)?.k;
    let cert = certify_closed_loop(sys.a(), sys.b(), &k)?;
    let kappa = cert.kappa.max(spectral_norm(sys.a())).max(spectral_norm(sys.b()));
    let mut rng = ChaCha20Rng::seed_from_u64(0x1E33A3);
    let mut passed = true;
    let mut tightest = 0.0f64;
    for _ in 0..policies {
        let memory = rng.random_range(1..=8);
        let theta = rng.random_range(0.1..4.0);
        let gp = rng.random_range(0.05..0.95);
        let weights: Vec<Mat> = (0..memory)
            .map(|i| {
                let m = Mat::from_fn(1, 2, |_, _| rng.random_range(-1.0..1.0));
                let r = theta * (1.0f64 - gp).powi(i) * rng.random_range(0.0..=1.0);
                &m * (r / spectral_norm(&m).max(1e-300))
            })
            .collect();
        let policy = DacPolicy::new(k.clone(), weights, theta, gp)?;
        let bound = dac_state_bound(&policy, 1.0, kappa, cert.gamma);
        for _ in 0..seeds {
            let ws = unit_ball_noise(&mut rng, 2, horizon);
            let traj = rollout(&sys, &mut policy.controller(&sys), &ws)?;
            let peak = traj
                .states
                .iter()
                .map(|x| x.norm())
                .chain(traj.controls.iter().map(|u| u.norm()))
                .fold(0.0, f64::max);
            passed &= peak <= bound;
            tightest = tightest.max(peak / bound);
        }
    }
    Ok(CheckLine {
        name: "dac state envelope".into(),
        passed,
        detail: format!("{policies} policies x {seeds} seeds, largest peak/bound {tightest:.3e}"),
    })
}

/// `i(1 − γ)^i ≤ 2(1 − γ/2)^i/γ` on a grid.
pub fn geometric_sum_check() -> CheckLine {
    let mut violations = 0;
    for gamma in [0.01f64, 0.05, 0.1, 0.25, 0.5] {
        for i in 0..=200 {
            let lhs = i as f64 * (1.0 - gamma).powi(i);
            let rhs = 2.0 * (1.0 - gamma / 2.0).powi(i) / gamma;
            if lhs > rhs {
                violations += 1;
            }
        }
    }
    CheckLine {
        name: "geometric sum inequality".into(),
        passed: violations == 0,
        detail: format!("{violations} violations over 5 x 201 grid points"),
    }
}

/// Average regret of GPC (memory 3, rate 0.002, LQR stabilizer) against the
/// best DAC policy in hindsight, on sine noise, at two horizons.
pub fn regret_check(short: usize, long: usize) -> Result<CheckLine> {
    let sys = LtiSystem::double_integrator();
    let class = DacClass::around_lqr(&sys, 3)?;
    let avg = |horizon: usize| -> Result<f64> {
        let ws = generate(&NoiseSpec::new(NoiseKind::Sin), horizon, 2)?;
        let mut gpc = Gpc::new(&sys, GpcConfig::new(class.clone(), 0.002)?)?;
        let j = rollout(&sys, &mut gpc, &ws)?.total_cost;
        let best = best_dac_in_hindsight(&sys, &ws, &class)?.cost;
        Ok((j - best) / horizon as f64)
    };
    let (a, b) = (avg(short)?, avg(long)?);
    Ok(CheckLine {
        name: "average regret decreases".into(),
        passed: b < a,
        detail: format!("R/T = {a:.4} at T={short}, {b:.4} at T={long}"),
    })
}

/// [`tail_bound_check`] on random stabilizable systems with their LQR gains.
pub fn tail_check(instances: usize, horizon: usize) -> Result<CheckLine> {
    let mut rng = ChaCha20Rng::seed_from_u64(0x7A11);
    let mut passed = true;
    let mut done = 0;
    let mut ratio = 0.0f64;
    while done < instances {
        let m = rng.random_range(1..=3);
        let n = rng.random_range(1..=2);
        let a = Mat::from_fn(m, m, |_, _| rng.random_range(-0.8..0.8));
        let b = Mat::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let sys = LtiSystem::new(a, b, Mat::identity(m, m), Mat::identity(n, n), 1.0)?;
        let Ok(k) = solve_dare(&sys).map(|s| s.k) else { continue };
        if certify_closed_loop(sys.a(), sys.b(), &k).is_err() {
            continue;
        }
        let ws = unit_ball_noise(&mut rng, m, horizon);
        let rep = tail_bound_check(&sys, &ws, &k)?;
        passed &= rep.passed;
        if rep.bound > 0.0 {
            ratio = ratio.max(rep.tail_cost / rep.bound);
        }
        done += 1;
    }
    Ok(CheckLine {
        name: "tail bound".into(),
        passed,
        detail: format!("{instances} instances, largest tail/bound {ratio:.3e}"),
    })
}
