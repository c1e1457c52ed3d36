//! Experiment harness: controller rosters rolled out on a shared disturbance
//! realization, compared against the clairvoyant offline optimum.

pub mod check;
pub mod config;
pub mod output;

use rayon::prelude::*;

pub use config::{ControllerKind, ExperimentConfig, SystemSpec};

use crate::classic::{offline_optimal, solve_dare, solve_hinf};
use crate::competitive::{compute_alpha_star, CompetitiveSolution};
use crate::dac::{competitive_to_dac, horizon_for_epsilon, DacPolicy};
use crate::error::{Error, Result};
use crate::gpc::{DacClass, Gpc, GpcConfig, StepSchedule};
use crate::lds::{certify_closed_loop, rollout, Controller, LinearController, LtiSystem, Trajectory};
use crate::linalg::{Mat, Vector};
use crate::noise::{self, NoiseSpec};
use config::{ScheduleChoice, StabilizerChoice};

/// Offline prefixes below this make the ratio column empty.
pub const RATIO_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub controller: ControllerKind,
    pub t: usize,
    pub cost: f64,
    pub cum_cost: f64,
    pub cum_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerFailure {
    pub controller: ControllerKind,
    pub message: String,
    pub exit_code: i32,
}

/// Cumulative-cost spread across trials at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialBand {
    pub controller: ControllerKind,
    pub t: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub horizon: usize,
    /// Rows of the first trial, grouped by controller in canonical order.
    pub rows: Vec<ResultRow>,
    pub failures: Vec<ControllerFailure>,
    /// Empty unless `trials > 1`.
    pub bands: Vec<TrialBand>,
    pub alpha_star: Option<f64>,
    pub dac_memory: Option<usize>,
    /// Some `‖w_t‖` exceeded the system's declared bound `W`.
    pub w_bound_exceeded: bool,
}

impl ExperimentReport {
    pub fn final_row(&self, kind: ControllerKind) -> Option<&ResultRow> {
        self.rows.iter().filter(|r| r.controller == kind).max_by_key(|r| r.t)
    }

    pub fn final_cost(&self, kind: ControllerKind) -> Option<f64> {
        self.final_row(kind).map(|r| r.cum_cost)
    }

    /// 0 when every controller ran, otherwise the first failure's code.
    pub fn exit_code(&self) -> i32 {
        self.failures.first().map_or(0, |f| f.exit_code)
    }
}

#[derive(Debug, Clone)]
struct Failure {
    message: String,
    exit_code: i32,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            exit_code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

type Prepared<T> = std::result::Result<T, Failure>;

/// Everything controllers need that does not depend on the disturbances.
struct Plan {
    sys: LtiSystem,
    lqr: Option<Prepared<Mat>>,
    hinf: Option<Prepared<Mat>>,
    competitive: Option<Prepared<CompetitiveSolution>>,
    dac: Option<Prepared<DacPolicy>>,
    gpc: Option<Prepared<GpcConfig>>,
}

impl Plan {
    fn new(cfg: &ExperimentConfig, sys: LtiSystem, horizon: usize) -> Self {
        let roster = cfg.roster();
        let wants = |k: ControllerKind| roster.contains(&k);
        let gpc_on_comp = wants(ControllerKind::Gpc) && cfg.gpc.stabilizer == StabilizerChoice::Competitive;
        let needs_comp = wants(ControllerKind::Competitive) || wants(ControllerKind::DacOfCompetitive) || gpc_on_comp;
        let needs_lqr =
            wants(ControllerKind::H2) || (wants(ControllerKind::Gpc) && cfg.gpc.stabilizer == StabilizerChoice::Lqr);

        let lqr = needs_lqr.then(|| solve_dare(&sys).map(|s| s.k).map_err(Failure::from));
        let hinf = wants(ControllerKind::Hinf)
            .then(|| solve_hinf(&sys, cfg.hinf.tol).map(|(s, _)| s.k).map_err(Failure::from));
        let competitive = needs_comp.then(|| compute_alpha_star(&sys, 1e-4).map_err(Failure::from));
        let dac = wants(ControllerKind::DacOfCompetitive).then(|| match &competitive {
            Some(Ok(comp)) => build_dac(cfg, &sys, comp, horizon).map_err(Failure::from),
            Some(Err(f)) => Err(f.clone()),
            None => unreachable!("competitive solution is prepared whenever the DAC image is requested"),
        });
        let gpc = wants(ControllerKind::Gpc).then(|| {
            let stab = match cfg.gpc.stabilizer {
                StabilizerChoice::Lqr => lqr.clone().expect("prepared above")?,
                StabilizerChoice::Competitive => competitive.clone().expect("prepared above")?.k_hat_0,
            };
            build_gpc(cfg, &sys, stab).map_err(Failure::from)
        });
        Plan {
            sys,
            lqr,
            hinf,
            competitive,
            dac,
            gpc,
        }
    }

    fn controller(&self, kind: ControllerKind) -> Prepared<Box<dyn Controller>> {
        Ok(match kind {
            ControllerKind::H2 => Box::new(LinearController::new(need(&self.lqr)?)),
            ControllerKind::Hinf => Box::new(LinearController::new(need(&self.hinf)?)),
            ControllerKind::Competitive => Box::new(need(&self.competitive)?.runtime(&self.sys)),
            ControllerKind::DacOfCompetitive => Box::new(need(&self.dac)?.controller(&self.sys)),
            ControllerKind::Gpc => Box::new(Gpc::new(&self.sys, need(&self.gpc)?)?),
            ControllerKind::Offline => unreachable!("offline runs are computed directly"),
        })
    }
}

fn need<T: Clone>(p: &Option<Prepared<T>>) -> Prepared<T> {
    p.clone().expect("prepared for every requested controller")
}

fn build_dac(cfg: &ExperimentConfig, sys: &LtiSystem, comp: &CompetitiveSolution, horizon: usize) -> Result<DacPolicy> {
    let memory = match cfg.dac.memory {
        Some(h) => h,
        None => {
            let audit = comp.audit(sys)?;
            horizon_for_epsilon(cfg.dac.epsilon, sys.w_bound(), audit.kappa, audit.gamma, sys.beta(), horizon)?
        }
    };
    competitive_to_dac(sys, comp, memory)
}

fn build_gpc(cfg: &ExperimentConfig, sys: &LtiSystem, stab: Mat) -> Result<GpcConfig> {
    let cert = certify_closed_loop(sys.a(), sys.b(), &stab)?;
    let mut class = DacClass::from_certificate(sys, stab, &cert, cfg.gpc.memory)?;
    if let Some(theta) = cfg.gpc.theta {
        class.theta = theta;
    }
    if let Some(gp) = cfg.gpc.gamma_prime {
        class.gamma_prime = gp;
    }
    let class = DacClass::new(class.k_stab, class.horizon, class.theta, class.gamma_prime)?;
    let schedule = match cfg.gpc.schedule {
        ScheduleChoice::Constant => StepSchedule::Constant,
        ScheduleChoice::InverseSqrt => StepSchedule::InverseSqrt,
    };
    Ok(GpcConfig::new(class, cfg.gpc.eta_for(cfg.noise.kind))?.with_schedule(schedule))
}

/// Disturbances for one trial (`seed + trial`), or the replayed trace.
pub fn trial_disturbances(cfg: &ExperimentConfig, m: usize, trial: usize) -> Result<Vec<Vector>> {
    if let Some(path) = &cfg.noise.trace {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::invalid(format!("cannot open noise trace {}: {e}", path.display())))?;
        let ws = noise::read_csv(file)?;
        if let Some(h) = cfg.horizon {
            if h != ws.len() {
                return Err(Error::invalid(format!("horizon {h} does not match trace length {}", ws.len())));
            }
        }
        if ws[0].len() != m {
            return Err(Error::invalid(format!("trace has {} columns, system has {m} states", ws[0].len())));
        }
        return Ok(ws.into_iter().map(|w| w * cfg.noise.scale).collect());
    }
    let spec = NoiseSpec {
        kind: cfg.noise.kind,
        seed: cfg.seed.wrapping_add(trial as u64),
        scale: cfg.noise.scale,
        per_entry_index: cfg.noise.per_entry_index,
    };
    noise::generate(&spec, cfg.horizon.expect("validated"), m)
}

/// Runs the roster. Per-controller failures are reported in the result and
/// do not stop the other controllers; configuration, noise and offline
/// failures abort the experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let sys = cfg.system.build()?;
    let trials: Vec<Vec<Vector>> = (0..cfg.trials)
        .map(|k| trial_disturbances(cfg, sys.state_dim(), k))
        .collect::<Result<_>>()?;
    let horizon = trials[0].len();
    let w_bound_exceeded = trials
        .iter()
        .any(|ws| ws.iter().any(|w| w.norm() > sys.w_bound() * (1.0 + 1e-12)));
    let plan = Plan::new(cfg, sys, horizon);

    let offline: Vec<Trajectory> = trials
        .par_iter()
        .map(|ws| offline_optimal(&plan.sys, ws).map(|o| o.trajectory))
        .collect::<Result<_>>()?;

    let roster = cfg.roster();
    let jobs: Vec<(ControllerKind, usize)> = roster
        .iter()
        .flat_map(|&k| (0..cfg.trials).map(move |i| (k, i)))
        .collect();
    let mut results: Vec<(ControllerKind, usize, Prepared<Trajectory>)> = jobs
        .par_iter()
        .map(|&(kind, trial)| {
            let traj = if kind == ControllerKind::Offline {
                Ok(offline[trial].clone())
            } else {
                plan.controller(kind).and_then(|mut c| {
                    rollout(&plan.sys, &mut c, &trials[trial]).map_err(Failure::from)
                })
            };
            (kind, trial, traj)
        })
        .collect();
    results.sort_by_key(|(k, i, _)| (*k, *i));

    let offline_cum = offline[0].cumulative_costs();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut bands = Vec::new();
    for kind in &roster {
        let runs: Vec<&Prepared<Trajectory>> =
            results.iter().filter(|(k, _, _)| k == kind).map(|(_, _, r)| r).collect();
        match runs[0] {
            Ok(traj) => {
                let cum = traj.cumulative_costs();
                for (t, (&c, &cc)) in traj.step_costs.iter().zip(&cum).enumerate() {
                    let opt = offline_cum[t];
                    rows.push(ResultRow {
                        controller: *kind,
                        t: t + 1,
                        cost: c,
                        cum_cost: cc,
                        cum_ratio: (opt >= RATIO_FLOOR).then(|| cc / opt),
                    });
                }
            }
            Err(f) => failures.push(ControllerFailure {
                controller: *kind,
                message: f.message.clone(),
                exit_code: f.exit_code,
            }),
        }
        if cfg.trials > 1 {
            let cums: Vec<Vec<f64>> = runs
                .iter()
                .filter_map(|r| r.as_ref().ok())
                .map(|t| t.cumulative_costs())
                .collect();
            if cums.len() == cfg.trials {
                for t in 0..horizon {
                    let vals = cums.iter().map(|c| c[t]);
                    bands.push(TrialBand {
                        controller: *kind,
                        t: t + 1,
                        mean: vals.clone().sum::<f64>() / cfg.trials as f64,
                        min: vals.clone().fold(f64::INFINITY, f64::min),
                        max: vals.fold(f64::NEG_INFINITY, f64::max),
                    });
                }
            }
        }
    }

    Ok(ExperimentReport {
        horizon,
        rows,
        failures,
        bands,
        alpha_star: match &plan.competitive {
            Some(Ok(c)) => Some(c.alpha_star),
            _ => None,
        },
        dac_memory: match &plan.dac {
            Some(Ok(p)) => Some(p.horizon()),
            _ => None,
        },
        w_bound_exceeded,
    })
}
