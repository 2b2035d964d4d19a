//! Power-law stepsize sequences, the admissibility conditions under which
//! convergence rates are guaranteed, and the resulting rate certificates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::ProblemSpec;
use crate::privacy::NoiseSchedule;
use crate::topology::WeightMatrix;

/// Margin at or below which a satisfied strict inequality is reported as a warning.
pub const NEAR_BOUNDARY: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Strongly convex, stepsizes tuned with global constants.
    Theorem1,
    /// Convex, stepsizes tuned with global constants; regret only.
    Theorem2,
    /// Strongly convex, arbitrary stepsize scales after a switch time.
    Theorem3,
    /// Convex, arbitrary stepsize scales after a switch time; regret only.
    Theorem4,
    /// Constant interaction gain (baseline without decaying gamma).
    AblationConstantGamma,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedules {
    pub gamma0: f64,
    pub u: f64,
    pub lambda0: f64,
    pub v: f64,
    pub regime: Regime,
}

impl Schedules {
    pub fn new(gamma0: f64, u: f64, lambda0: f64, v: f64, regime: Regime) -> Result<Self> {
        let s = Schedules { gamma0, u, lambda0, v, regime };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) || !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma0 {} and lambda0 {} must be positive",
                self.gamma0, self.lambda0
            )));
        }
        if !(0.0..1.0).contains(&self.u) || !(0.0..1.0).contains(&self.v) {
            return Err(Error::InvalidParameter(format!("exponents u {} and v {} must lie in [0, 1)", self.u, self.v)));
        }
        Ok(())
    }

    pub fn gamma(&self, t: usize) -> f64 {
        self.gamma0 / ((t + 1) as f64).powf(self.gamma_exponent())
    }

    pub fn lambda(&self, t: usize) -> f64 {
        self.lambda0 / ((t + 1) as f64).powf(self.v)
    }

    /// Decay exponent actually applied to gamma (0 in the ablation).
    pub fn gamma_exponent(&self) -> f64 {
        match self.regime {
            Regime::AblationConstantGamma => 0.0,
            _ => self.u,
        }
    }
}

pub fn gamma(s: &Schedules, t: usize) -> f64 {
    s.gamma(t)
}

pub fn lambda(s: &Schedules, t: usize) -> f64 {
    s.lambda(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCertificate {
    /// Predicted exponent of the tracking error, when one is guaranteed.
    pub beta: Option<f64>,
    /// Predicted exponent of the instantaneous regret.
    pub beta_regret: Option<f64>,
    /// Switch time after which the bounds apply (0 when they hold from the start).
    pub t0: u64,
    pub constants: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub regime: Regime,
    pub ok: bool,
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
    pub certificate: RateCertificate,
}

#[derive(Default)]
struct Findings {
    violations: Vec<String>,
    warnings: Vec<String>,
}

impl Findings {
    /// Record `lhs < rhs` (strict) or `lhs <= rhs`.
    fn less(&mut self, what: &str, lhs: f64, rhs: f64, strict: bool) {
        // decimal inputs such as (1 + 2*0.7)/3 vs 0.8 land within rounding of each other
        let slack = 1e-12 * rhs.abs().max(1.0);
        let holds = if strict { lhs < rhs - slack } else { lhs <= rhs + slack };
        let op = if strict { "<" } else { "<=" };
        if !holds || lhs.is_nan() || rhs.is_nan() {
            self.violations.push(format!("{what}: {lhs} {op} {rhs} does not hold"));
        } else if strict && lhs != 0.0 && rhs - lhs <= NEAR_BOUNDARY + slack {
            self.warnings.push(format!("{what}: {lhs} {op} {rhs} holds with margin {:.4}", rhs - lhs));
        }
    }

    fn finish(self, regime: Regime, certificate: RateCertificate) -> CheckReport {
        CheckReport { regime, ok: self.violations.is_empty(), violations: self.violations, warnings: self.warnings, certificate }
    }
}

struct Inputs {
    m: f64,
    mu: f64,
    l: f64,
    /// kappa^2 + D^2
    kd: f64,
    d0: f64,
    /// bound on E|theta_0 - theta_0*|^2 for points drawn in the domain
    init: f64,
    sigma_plus: f64,
    vs: f64,
    delta_n: f64,
}

fn inputs(spec: &ProblemSpec, w: &WeightMatrix, noise: &[NoiseSchedule]) -> Inputs {
    let m = w.m() as f64;
    let d0 = spec.diameter();
    Inputs {
        m,
        mu: spec.mu,
        l: spec.lipschitz,
        kd: spec.noise_var + spec.grad_bound * spec.grad_bound,
        d0,
        init: m * d0 * d0,
        sigma_plus: noise.iter().map(|n| n.sigma).fold(0.0, f64::max),
        vs: noise.iter().map(|n| n.varsigma).fold(0.0, f64::max),
        delta_n: w.delta_n(),
    }
}

fn noise_condition(f: &mut Findings, p: &Inputs, u: f64, noise: &[NoiseSchedule], m: usize) {
    if noise.len() != m {
        f.violations.push(format!("{} noise schedules for {m} learners", noise.len()));
    }
    f.less("noise growth: max varsigma + 1/2 < u", p.vs + 0.5, u, true);
}

fn gamma_bound(f: &mut Findings, p: &Inputs, s: &Schedules) {
    f.less("gamma0 <= 1/(-3 delta_N)", s.gamma0, 1.0 / (-3.0 * p.delta_n), false);
}

/// Largest interaction scale allowed by the tuned regimes, `1/(-3 delta_N)`.
pub fn gamma0_max(w: &WeightMatrix) -> f64 {
    1.0 / (-3.0 * w.delta_n())
}

/// Largest gradient scale allowed by the tuned regime of the given family:
/// the strongly convex bound for `Theorem1`, `Theorem3` and the ablation,
/// the convex bound for `Theorem2` and `Theorem4`.
pub fn lambda0_max(regime: Regime, spec: &ProblemSpec, w: &WeightMatrix, gamma0: f64) -> f64 {
    let (mu, l) = (spec.mu, spec.lipschitz);
    let kd = spec.noise_var + spec.grad_bound * spec.grad_bound;
    match regime {
        Regime::Theorem2 | Regime::Theorem4 => -w.delta2() * gamma0 / (l * l + 2.0 * kd),
        _ => -gamma0 * w.delta2() * mu / (mu * mu + 8.0 * l * l),
    }
}

/// Bracket shared by the constants of the strongly convex bounds.
fn strong_bracket(p: &Inputs, s: &Schedules, c1: f64) -> f64 {
    let (g0, l0, u, v) = (s.gamma0, s.lambda0, s.u, s.v);
    let damp = 1.0 + 3.0 * l0 * p.mu / 16.0;
    c1 * (1.0 + (8.0 * (1.0 - v) + 8.0) / (3.0 * l0 * p.mu * (1.0 - v)))
        + 3.0 * p.m * p.sigma_plus.powi(2) * damp * (g0 * g0 + g0 * g0 / (2.0 * u - 2.0 * p.vs - 1.0))
        + 6.0 * p.m * p.kd * damp * (l0 * l0 + l0 * l0 / (2.0 * v - 1.0))
}

fn strong_constants(p: &Inputs, s: &Schedules) -> BTreeMap<String, f64> {
    let (g0, l0, u, v) = (s.gamma0, s.lambda0, s.u, s.v);
    let mu = p.mu;
    let damp = 1.0 + 3.0 * l0 * mu / 16.0;
    let c1 = 32.0 * p.kd * (2.0 / (mu * mu) + 1.0 / (p.l * p.l));
    let c2 = 8.0 * c1 / (3.0 * mu * l0 * (1.0 - v) * 2f64.powf(v - 1.0));
    let c3 = (32.0 * (1.0 - v).powi(2) * 2f64.powf(1.0 - v) / (mu * l0)).max(1.0);
    let c4 = 32.0 * (1.0 - v).powi(2) / (3.0 * mu * l0) * p.init + c3 * strong_bracket(p, s, c1);
    let e = 2.0 * u - 2.0 * p.vs - 1.0;
    let c5 = 3.0 * p.m * p.sigma_plus.powi(2) * damp * g0 * g0 / (2f64.powf(1.0 - 2.0 * u + 2.0 * p.vs) * e);
    let c6 = 6.0 * p.m * p.kd * damp * l0 * l0 / (2f64.powf(1.0 - 2.0 * v) * (2.0 * v - 1.0));
    [("c1", c1), ("c2", c2), ("c3", c3), ("c4", c4), ("c5", c5), ("c6", c6)]
        .into_iter()
        .map(|(k, x)| (k.to_string(), x))
        .collect()
}

/// Regret constants of the convex bounds; `q` is `1/2^(1-v)` for tuned
/// stepsizes and `((t0+1)/(t0+2))^(1-v)` after a switch time.
fn convex_constants(p: &Inputs, s: &Schedules, q: f64, extra_lambda: f64) -> [f64; 3] {
    let (g0, l0, u, v) = (s.gamma0, s.lambda0, s.u, s.v);
    let den = 1.0 - q;
    let e = 2.0 * u - 2.0 * p.vs;
    let c1 = 2.0 * (3.0 * p.d0.powi(3) + 1.0) / (2.0 * den) + 8.0 * p.kd * (1.0 - v * v) / (2.0 * v * den);
    let c2 = (1.0 - v) / (2.0 * l0 * den)
        * (3.0 * p.m * p.sigma_plus.powi(2) * g0 * g0 * e / (e - 1.0)
            + 12.0 * p.m * p.kd * l0 * l0 * v / (2.0 * v - 1.0)
            + (1.0 + extra_lambda) * p.d0 * p.d0);
    let c3 = p.d0 * p.d0 * (1.0 - v) / (2.0 * den);
    [c1, c2, c3]
}

fn single_learner_note(f: &mut Findings, w: &WeightMatrix) -> bool {
    if w.m() < 2 {
        f.warnings.push("single learner: network stepsize conditions do not apply".into());
        true
    } else {
        false
    }
}

pub fn check_theorem1(spec: &ProblemSpec, w: &WeightMatrix, s: &Schedules, noise: &[NoiseSchedule]) -> CheckReport {
    let p = inputs(spec, w, noise);
    let mut f = Findings::default();
    f.less("mu > 0", 0.0, p.mu, true);
    f.less("1/2 < u", 0.5, s.u, true);
    f.less("u < v", s.u, s.v, true);
    f.less("v < 1", s.v, 1.0, true);
    if !single_learner_note(&mut f, w) {
        gamma_bound(&mut f, &p, s);
        let bound = lambda0_max(Regime::Theorem1, spec, w, s.gamma0);
        f.less("lambda0 <= -gamma0 delta_2 mu/(mu^2 + 8L^2)", s.lambda0, bound, false);
    }
    noise_condition(&mut f, &p, s.u, noise, w.m());
    let beta = (1.0 - s.v).min(2.0 * s.u - 2.0 * p.vs - 1.0);
    let cert = RateCertificate {
        beta: Some(beta),
        beta_regret: Some(beta / 2.0),
        t0: 0,
        constants: strong_constants(&p, s),
    };
    f.finish(Regime::Theorem1, cert)
}

pub fn check_theorem2(spec: &ProblemSpec, w: &WeightMatrix, s: &Schedules, noise: &[NoiseSchedule]) -> CheckReport {
    let p = inputs(spec, w, noise);
    let mut f = Findings::default();
    f.less("mu >= 0", 0.0, p.mu, false);
    f.less("2/3 < (1+2u)/3", 2.0 / 3.0, (1.0 + 2.0 * s.u) / 3.0, true);
    f.less("(1+2u)/3 < v", (1.0 + 2.0 * s.u) / 3.0, s.v, true);
    f.less("v < 1", s.v, 1.0, true);
    if !single_learner_note(&mut f, w) {
        gamma_bound(&mut f, &p, s);
        let bound = lambda0_max(Regime::Theorem2, spec, w, s.gamma0);
        f.less("lambda0 <= -delta_2 gamma0/(L^2 + 2(kappa^2 + D^2))", s.lambda0, bound, false);
    }
    noise_condition(&mut f, &p, s.u, noise, w.m());
    let [c1, c2, c3] = convex_constants(&p, s, 1.0 / 2f64.powf(1.0 - s.v), s.lambda0);
    let constants = [("c1_bar", c1), ("c2_bar", c2), ("c3_bar", c3)].into_iter().map(|(k, x)| (k.to_string(), x)).collect();
    let cert = RateCertificate { beta: None, beta_regret: Some((1.0 - s.v) / 2.0), t0: 0, constants };
    f.finish(Regime::Theorem2, cert)
}

fn ceil_nonneg(x: f64) -> u64 {
    if x.is_nan() {
        u64::MAX
    } else if x <= 0.0 {
        0
    } else {
        x.ceil() as u64
    }
}

/// Switch time for tuned-free stepsizes in the strongly convex case.
pub fn compute_t0(spec: &ProblemSpec, w: &WeightMatrix, s: &Schedules) -> Result<u64> {
    if !(s.v > s.u) {
        return Err(Error::InvalidParameter(format!("switch time needs v > u, got u {} v {}", s.u, s.v)));
    }
    if !(spec.mu > 0.0) {
        return Err(Error::InvalidParameter("switch time needs mu > 0".into()));
    }
    let (mu, l) = (spec.mu, spec.lipschitz);
    let first = (-3.0 * w.delta_n() * s.gamma0).powf(1.0 / s.u) - 1.0;
    let second = ((mu * mu + 8.0 * l * l) * s.lambda0 / (-w.delta2() * mu * s.gamma0)).powf(1.0 / (s.v - s.u)) - 1.0;
    Ok(ceil_nonneg(first.max(second)))
}

/// Switch time for tuned-free stepsizes in the convex case.
pub fn compute_t0_tilde(spec: &ProblemSpec, w: &WeightMatrix, s: &Schedules) -> Result<u64> {
    let lo = (2.0 * s.u + 1.0) / 3.0;
    if !(lo < s.v - 1e-12 && s.v < 1.0) {
        return Err(Error::InvalidParameter(format!("need (2u+1)/3 = {lo} < v = {} < 1", s.v)));
    }
    let kd = spec.noise_var + spec.grad_bound * spec.grad_bound;
    let l = spec.lipschitz;
    let first = (-3.0 * w.delta_n() * s.gamma0).powf(1.0 / s.u) - 1.0;
    let expo = (3.0 * s.v - 1.0) / 2.0 - s.u;
    let second = ((l * l + 2.0 * kd) * s.lambda0 / (-w.delta2() * s.gamma0)).powf(1.0 / expo) - 1.0;
    Ok(ceil_nonneg(first.max(second)))
}

pub fn check_theorem3(spec: &ProblemSpec, w: &WeightMatrix, s: &Schedules, noise: &[NoiseSchedule]) -> CheckReport {
    let p = inputs(spec, w, noise);
    let mut f = Findings::default();
    f.less("mu > 0", 0.0, p.mu, true);
    f.less("0 < u", 0.0, s.u, true);
    f.less("u < v", s.u, s.v, true);
    let low = s.v < 0.5;
    if low {
        // The stated exponent range leaves no room for the noise condition,
        // which needs u > 1/2; report the clash without failing the check.
        f.warnings.push(format!(
            "exponents below 1/2: noise growth condition max varsigma + 1/2 < u = {} cannot hold and the predicted rate is not positive",
            s.u
        ));
        if noise.len() != w.m() {
            f.violations.push(format!("{} noise schedules for {} learners", noise.len(), w.m()));
        }
    } else {
        f.less("1/2 < u (exponents not below 1/2)", 0.5, s.u, true);
        f.less("v < 1", s.v, 1.0, true);
        noise_condition(&mut f, &p, s.u, noise, w.m());
    }
    let single = single_learner_note(&mut f, w);
    let mut constants = strong_constants(&p, s);
    let t0 = if single {
        0
    } else {
        match compute_t0(spec, w, s) {
            Ok(t0) => t0,
            Err(e) => {
                f.violations.push(e.to_string());
                0
            }
        }
    };
    if t0 == u64::MAX {
        f.warnings.push("switch time overflows; stepsize scales are far from the tuned range".into());
    }
    let lead = 32.0 * (t0 as f64 + 3.0).powf(s.v) * (1.0 - s.v).powi(2) * 2f64.powf(1.0 - s.v) / (3.0 * p.mu * s.lambda0);
    let c3_hat = lead.max(1.0);
    let c4_hat = lead * p.init + c3_hat * strong_bracket(&p, s, constants["c1"]);
    constants.remove("c3");
    constants.remove("c4");
    constants.insert("c3_hat".into(), c3_hat);
    constants.insert("c4_hat".into(), c4_hat);
    let beta = (1.0 - s.v).min(2.0 * s.u - 2.0 * p.vs - 1.0);
    let cert = RateCertificate { beta: Some(beta), beta_regret: Some(beta / 2.0), t0, constants };
    f.finish(Regime::Theorem3, cert)
}

pub fn check_theorem4(spec: &ProblemSpec, w: &WeightMatrix, s: &Schedules, noise: &[NoiseSchedule]) -> CheckReport {
    let p = inputs(spec, w, noise);
    let mut f = Findings::default();
    f.less("mu >= 0", 0.0, p.mu, false);
    f.less("2/3 < (2u+1)/3", 2.0 / 3.0, (2.0 * s.u + 1.0) / 3.0, true);
    f.less("(2u+1)/3 < v", (2.0 * s.u + 1.0) / 3.0, s.v, true);
    f.less("v < 1", s.v, 1.0, true);
    noise_condition(&mut f, &p, s.u, noise, w.m());
    let single = single_learner_note(&mut f, w);
    let t0 = if single {
        0
    } else {
        match compute_t0_tilde(spec, w, s) {
            Ok(t0) => t0,
            Err(e) => {
                f.violations.push(e.to_string());
                0
            }
        }
    };
    let t0f = t0 as f64;
    let q = ((t0f + 1.0) / (t0f + 2.0)).powf(1.0 - s.v);
    let [c1, c2, c3] = convex_constants(&p, s, q, s.lambda0 / (t0f + 1.0).powf((s.v + 1.0) / 2.0));
    let constants = [("c1_tilde", c1), ("c2_tilde", c2), ("c3_tilde", c3)]
        .into_iter()
        .map(|(k, x)| (k.to_string(), x))
        .collect();
    let cert = RateCertificate { beta: None, beta_regret: Some((1.0 - s.v) / 2.0), t0, constants };
    f.finish(Regime::Theorem4, cert)
}

/// Dispatch on the regime declared in `s`.
pub fn check(spec: &ProblemSpec, w: &WeightMatrix, s: &Schedules, noise: &[NoiseSchedule]) -> CheckReport {
    match s.regime {
        Regime::Theorem1 => check_theorem1(spec, w, s, noise),
        Regime::Theorem2 => check_theorem2(spec, w, s, noise),
        Regime::Theorem3 => check_theorem3(spec, w, s, noise),
        Regime::Theorem4 => check_theorem4(spec, w, s, noise),
        Regime::AblationConstantGamma => CheckReport {
            regime: s.regime,
            ok: true,
            violations: vec![],
            warnings: vec!["constant interaction gain: no convergence guarantee applies".into()],
            certificate: RateCertificate { beta: None, beta_regret: None, t0: 0, constants: BTreeMap::new() },
        },
    }
}
