//! Laplace perturbation with growing scale, the per-learner privacy
//! accountant, and a coupled-run harness that measures sensitivity
//! empirically.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient_memory::{EngineKind, GradientEngine};
use crate::learner::{LearnerState, Message};
use crate::objectives::{l1_norm, ProblemSpec, Sample};
use crate::rng::{open01, Streams};
use crate::schedules::Schedules;
use crate::topology::WeightMatrix;

/// Per-learner noise: scale `sigma * (t+1)^varsigma`, Laplace parameter
/// `scale / sqrt(2)` so each coordinate has variance `scale^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub sigma: f64,
    pub varsigma: f64,
}

impl NoiseSchedule {
    pub fn new(sigma: f64, varsigma: f64) -> Result<Self> {
        let s = NoiseSchedule { sigma, varsigma };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise sigma {} must be > 0", self.sigma)));
        }
        if !(0.0..0.5).contains(&self.varsigma) {
            return Err(Error::InvalidParameter(format!("noise growth {} not in [0, 0.5)", self.varsigma)));
        }
        Ok(())
    }

    /// `(sigma_t, nu_t)` at round `t`.
    pub fn scale(&self, t: usize) -> (f64, f64) {
        let s = self.sigma * ((t + 1) as f64).powf(self.varsigma);
        (s, s / std::f64::consts::SQRT_2)
    }
}

pub fn noise_scale(schedule: &NoiseSchedule, t: usize) -> (f64, f64) {
    schedule.scale(t)
}

/// `dim` independent Laplace(nu) draws by inverse CDF.
pub fn sample_laplace<R: Rng + ?Sized>(nu: f64, dim: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(nu > 0.0) {
        return Err(Error::InvalidParameter(format!("Laplace parameter {nu} must be > 0")));
    }
    Ok((0..dim)
        .map(|_| {
            let u = open01(rng) - 0.5;
            -nu * u.signum() * (1.0 - 2.0 * u.abs()).ln()
        })
        .collect())
}

/// Running privacy account for one learner.
///
/// Two sensitivity bounds are carried side by side: the mixing sum
/// `rho_{t+1} = (1 - wbar gamma_t) rho_t + lambda_t`, whose budget is
/// `sum 2 sqrt(2) C rho_t / sigma_t`, and the one-step recursion
/// `Delta_{t+1} = (1 - wbar gamma_t + sqrt(n) L lambda_t t/(t+1)) Delta_t
/// + 2 lambda_t C/(t+1)`, whose budget is `sum Delta_t / nu_t`. The second
/// is the one reported as `eps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub wbar: f64,
    pub clip: f64,
    /// `sqrt(n)` times the per-sample gradient Lipschitz constant.
    pub sqrt_n_lipschitz: f64,
    pub schedule: NoiseSchedule,
    /// Index of the current round.
    pub t: usize,
    pub rho: f64,
    pub delta_bound: f64,
    pub eps_partial: f64,
    pub eps_rho: f64,
}

impl PrivacyLedger {
    pub fn new(wbar: f64, clip: f64, sample_lipschitz: f64, dim: usize, schedule: NoiseSchedule) -> Result<Self> {
        if !(wbar >= 0.0) {
            return Err(Error::Config(format!("ledger needs wbar >= 0, got {wbar}")));
        }
        if !(clip > 0.0) {
            return Err(Error::Config(format!("ledger needs C > 0, got {clip}")));
        }
        schedule.validate()?;
        Ok(PrivacyLedger {
            wbar,
            clip,
            sqrt_n_lipschitz: (dim as f64).sqrt() * sample_lipschitz,
            schedule,
            t: 0,
            rho: 0.0,
            delta_bound: 0.0,
            eps_partial: 0.0,
            eps_rho: 0.0,
        })
    }

    /// Advance from round `t` to `t + 1` with the round-`t` stepsizes.
    pub fn step(&mut self, gamma_t: f64, lambda_t: f64) -> Result<()> {
        let contraction = self.wbar * gamma_t;
        if contraction >= 1.0 {
            return Err(Error::Config(format!(
                "wbar * gamma_{} = {contraction} >= 1, mixing recursion does not contract",
                self.t
            )));
        }
        let t = self.t as f64;
        self.rho = (1.0 - contraction) * self.rho + lambda_t;
        self.delta_bound = (1.0 - contraction + self.sqrt_n_lipschitz * lambda_t * t / (t + 1.0)) * self.delta_bound
            + 2.0 * lambda_t * self.clip / (t + 1.0);
        self.t += 1;
        let (sigma_t, nu_t) = self.schedule.scale(self.t);
        self.eps_rho += 2.0 * std::f64::consts::SQRT_2 * self.clip * self.rho / sigma_t;
        self.eps_partial += self.delta_bound / nu_t;
        Ok(())
    }
}

pub fn ledger_step(ledger: &mut PrivacyLedger, gamma_t: f64, lambda_t: f64, t: usize) -> Result<()> {
    if ledger.t != t {
        return Err(Error::Config(format!("ledger is at round {}, asked to step round {t}", ledger.t)));
    }
    ledger.step(gamma_t, lambda_t)
}

/// `int_T^inf x^(-p) dx` for `p > 1`.
pub fn tail_integral(t: f64, p: f64) -> f64 {
    if p <= 1.0 {
        f64::INFINITY
    } else {
        t.powf(1.0 - p) / (p - 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetPoint {
    pub t: usize,
    pub eps: f64,
    pub eps_rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub sigma: f64,
    pub varsigma: f64,
    pub checkpoints: Vec<BudgetPoint>,
    /// Decay exponent of the budget increments, `1 + v - u + varsigma`.
    pub tail_exponent: f64,
    /// Bound on the budget spent after the last checkpoint.
    pub tail_estimate: f64,
    pub finite_guaranteed: bool,
    pub warnings: Vec<String>,
}

impl BudgetReport {
    pub fn final_eps(&self) -> f64 {
        self.checkpoints.last().map_or(0.0, |c| c.eps)
    }
}

/// Accumulate the budget up to every horizon in `horizons` and bound the
/// remainder after the largest.
///
/// The tail uses `K = max_{t in [T/10, T]} term_t (t+1)^p` and
/// `K * int_T^inf x^(-p) dx`, which bounds the remainder once the increments
/// follow their power law.
pub fn budget_bound(
    problem: &ProblemSpec,
    wbar: f64,
    schedules: &Schedules,
    noise: &NoiseSchedule,
    horizons: &[usize],
) -> Result<BudgetReport> {
    let mut hs: Vec<usize> = horizons.to_vec();
    hs.sort_unstable();
    hs.dedup();
    let last = *hs.last().ok_or_else(|| Error::InvalidParameter("no horizons given".into()))?;
    let mut ledger = PrivacyLedger::new(wbar, problem.l1_clip, problem.sample_lipschitz, problem.dim(), *noise)?;
    let p = 1.0 + schedules.v - schedules.gamma_exponent() + noise.varsigma;
    let mut warnings = Vec::new();
    let finite = p > 1.0 && schedules.v > schedules.gamma_exponent();
    if schedules.v <= schedules.gamma_exponent() {
        warnings.push(format!(
            "v = {} <= u = {}: a finite total budget is not guaranteed",
            schedules.v,
            schedules.gamma_exponent()
        ));
    }
    let window_start = last / 10;
    let mut k_max: f64 = 0.0;
    let mut out = Vec::with_capacity(hs.len());
    let mut next = 0;
    for t in 0..last {
        let before = ledger.eps_partial;
        ledger.step(schedules.gamma(t), schedules.lambda(t))?;
        let round = t + 1;
        if round >= window_start {
            k_max = k_max.max((ledger.eps_partial - before) * ((round + 1) as f64).powf(p));
        }
        while next < hs.len() && hs[next] == round {
            out.push(BudgetPoint { t: round, eps: ledger.eps_partial, eps_rho: ledger.eps_rho });
            next += 1;
        }
    }
    if hs[0] == 0 {
        out.insert(0, BudgetPoint { t: 0, eps: 0.0, eps_rho: 0.0 });
    }
    let tail = if p > 1.0 { k_max * tail_integral(last as f64 + 1.0, p) } else { f64::INFINITY };
    Ok(BudgetReport {
        sigma: noise.sigma,
        varsigma: noise.varsigma,
        checkpoints: out,
        tail_exponent: p,
        tail_estimate: tail,
        finite_guaranteed: finite,
        warnings,
    })
}

/// Everything a coupled pair of runs shares besides the data.
#[derive(Clone, Debug)]
pub struct CoupledSetup<'a> {
    pub w: &'a WeightMatrix,
    pub problem: &'a ProblemSpec,
    pub schedules: &'a Schedules,
    pub noise: &'a [NoiseSchedule],
    pub engine: EngineKind,
    pub theta0: &'a [Vec<f64>],
    pub seed: u64,
    pub noise_on: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTrace {
    /// Learner whose data differs.
    pub learner: usize,
    /// Round of the differing entry, if any.
    pub differing_round: Option<usize>,
    /// `|theta_t - theta'_t|_1` for `t = 0..=T`.
    pub divergence: Vec<f64>,
    /// Analytic bound for the same rounds.
    pub bound: Vec<f64>,
}

impl SensitivityTrace {
    pub fn first_violation(&self, tol: f64) -> Option<usize> {
        self.divergence.iter().zip(&self.bound).position(|(d, b)| *d > b + tol)
    }
}

/// Run the full protocol on `data_a` and replay the affected learner on `data_b`
/// with the same received messages; `data[t][i]` is learner `i`'s round-`t`
/// sample. The datasets may differ in at most one entry.
pub fn empirical_sensitivity(setup: &CoupledSetup, data_a: &[Vec<Sample>], data_b: &[Vec<Sample>]) -> Result<SensitivityTrace> {
    let m = setup.w.m();
    if data_a.len() != data_b.len() {
        return Err(Error::InvalidParameter("paired datasets have different lengths".into()));
    }
    let mut diff = None;
    for (t, (ra, rb)) in data_a.iter().zip(data_b).enumerate() {
        if ra.len() != m || rb.len() != m {
            return Err(Error::InvalidParameter(format!("round {t} does not have one sample per learner")));
        }
        for i in 0..m {
            if ra[i] != rb[i] {
                if diff.is_some() {
                    return Err(Error::InvalidParameter("datasets differ in more than one entry".into()));
                }
                diff = Some((t, i));
            }
        }
    }
    if setup.noise.len() != m || setup.theta0.len() != m {
        return Err(Error::InvalidParameter("need one noise schedule and one initial point per learner".into()));
    }
    let target = diff.map_or(0, |d| d.1);
    let streams = Streams::new(setup.seed, 0);
    let clip = Some(setup.problem.l1_clip);
    let dim = setup.problem.dim();
    let make = |i: usize| -> Result<LearnerState> {
        let ledger = PrivacyLedger::new(
            setup.w.wbar(),
            setup.problem.l1_clip,
            setup.problem.sample_lipschitz,
            dim,
            setup.noise[i],
        )?;
        LearnerState::new(
            i,
            setup.theta0[i].clone(),
            GradientEngine::new(setup.engine, setup.problem.loss, dim)?,
            setup.noise[i],
            ledger,
            &setup.problem.domain,
        )
    };
    let mut learners: Vec<LearnerState> = (0..m).map(make).collect::<Result<_>>()?;
    let mut twin = make(target)?;
    let mut msgs: Vec<Message> = learners.iter().map(|l| l.make_broadcast(&streams, setup.noise_on)).collect::<Result<_>>()?;
    let mut divergence = vec![0.0];
    let mut bound = vec![0.0];
    for t in 0..data_a.len() {
        let gamma = setup.schedules.gamma(t);
        let lambda = setup.schedules.lambda(t);
        for (i, l) in learners.iter_mut().enumerate() {
            l.observe(std::slice::from_ref(&data_a[t][i]))?;
            let inbox = crate::learner::inbox(setup.w, i, &msgs);
            l.local_update(&inbox, setup.w, gamma, lambda, setup.problem, clip)?;
        }
        twin.observe(std::slice::from_ref(&data_b[t][target]))?;
        let inbox = crate::learner::inbox(setup.w, target, &msgs);
        twin.local_update(&inbox, setup.w, gamma, lambda, setup.problem, clip)?;
        let d: Vec<f64> = learners[target].theta().iter().zip(twin.theta()).map(|(a, b)| a - b).collect();
        divergence.push(l1_norm(&d));
        bound.push(twin.ledger().delta_bound);
        msgs = learners.iter().map(|l| l.make_broadcast(&streams, setup.noise_on)).collect::<Result<_>>()?;
    }
    Ok(SensitivityTrace { learner: target, differing_round: diff.map(|d| d.0), divergence, bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;

    #[test]
    fn noise_scale_examples() {
        let (_, nu) = NoiseSchedule::new(2.0, 0.12).unwrap().scale(0);
        assert!((nu - std::f64::consts::SQRT_2).abs() < 1e-15);
        let (s, _) = NoiseSchedule::new(1.0, 0.2).unwrap().scale(999);
        assert!((s - 3.981_071_705_534_972).abs() < 1e-12);
        let flat = NoiseSchedule::new(1.5, 0.0).unwrap();
        assert_eq!(flat.scale(0).0, 1.5);
        assert_eq!(flat.scale(12345).0, 1.5);
    }

    #[test]
    fn laplace_rejects_bad_parameter() {
        let mut r = Streams::new(0, 0).stream(0, 0, Purpose::Noise);
        assert!(sample_laplace(0.0, 3, &mut r).is_err());
        assert!(sample_laplace(-1.0, 3, &mut r).is_err());
    }

    #[test]
    fn ledger_base_cases() {
        let mut l = PrivacyLedger::new(0.5, 1.0, 2.0, 1, NoiseSchedule::new(1.0, 0.1).unwrap()).unwrap();
        l.step(0.4, 0.3).unwrap();
        assert_eq!(l.rho, 0.3);
        assert_eq!(l.delta_bound, 0.6);
        l.step(0.2, 0.1).unwrap();
        assert!((l.rho - ((1.0 - 0.5 * 0.2) * 0.3 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn ledger_rejects_noncontracting_step() {
        let mut l = PrivacyLedger::new(0.5, 1.0, 2.0, 1, NoiseSchedule::new(1.0, 0.1).unwrap()).unwrap();
        assert!(matches!(l.step(2.0, 0.1), Err(Error::Config(_))));
    }

    #[test]
    fn ledger_step_checks_round() {
        let mut l = PrivacyLedger::new(0.5, 1.0, 2.0, 1, NoiseSchedule::new(1.0, 0.1).unwrap()).unwrap();
        assert!(ledger_step(&mut l, 0.1, 0.1, 3).is_err());
        assert!(ledger_step(&mut l, 0.1, 0.1, 0).is_ok());
    }

    #[test]
    fn tail_integral_closed_form() {
        let t = 1e4f64;
        assert!((tail_integral(t, 1.22) - t.powf(-0.22) / 0.22).abs() < 1e-12);
        assert!(tail_integral(t, 1.0).is_infinite());
    }
}
