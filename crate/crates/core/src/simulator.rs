//! Synchronous multi-learner runs: sample streams, the round loop, oracle
//! evaluation at checkpoints and aggregation over replicates.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{
    config_hash, Generator, InitConfig, LossKind, NoiseConfig, Partition, ProblemConfig, RunConfig, ScaleSetting,
    StreamConfig, WeightKind,
};
use crate::error::{Error, Result};
use crate::gradient_memory::{EngineKind, GradientEngine};
use crate::learner::{inbox, LearnerState, Message, ProjectionSet};
use crate::metrics::{max_of_means, rate_fit, ErmOracle, RateFit};
use crate::objectives::{Loss, ProblemSpec, Sample};
use crate::privacy::{budget_bound, empirical_sensitivity, BudgetReport, CoupledSetup, NoiseSchedule, PrivacyLedger, SensitivityTrace};
use crate::rng::{open01, std_normal, Purpose, Streams};
use crate::schedules::{check, gamma0_max, lambda0_max, CheckReport, Schedules};
use crate::topology::{build_weight_matrix, Graph, Scale, WeightMatrix, WeightScheme};

/// Parse svmlight text. Labels go through `label_map`; feature indices are
/// 1-based. With `dim` absent the dimension is the largest index seen.
pub fn parse_svmlight(text: &str, label_map: &BTreeMap<String, f64>, dim: Option<usize>, origin: &str) -> Result<Vec<Sample>> {
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let mut max_index = 0;
    for (k, line) in text.lines().enumerate() {
        let err = |msg: String| Error::Parse { path: origin.to_string(), line: k + 1, msg };
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let raw = toks.next().expect("nonempty line has a token");
        let y = match label_map.get(raw) {
            Some(y) => *y,
            None => return Err(err(format!("label `{raw}` is not in the label map"))),
        };
        let mut feats = Vec::new();
        for tok in toks {
            let (i, v) = tok.split_once(':').ok_or_else(|| err(format!("token `{tok}` is not index:value")))?;
            let i: usize = i.parse().map_err(|_| err(format!("bad feature index `{i}`")))?;
            let v: f64 = v.parse().map_err(|_| err(format!("bad feature value `{v}`")))?;
            if i == 0 {
                return Err(err("feature indices start at 1".into()));
            }
            if !v.is_finite() {
                return Err(err(format!("non-finite feature value `{v}`")));
            }
            if let Some(d) = dim {
                if i > d {
                    return Err(err(format!("feature index {i} exceeds dimension {d}")));
                }
            }
            max_index = max_index.max(i);
            feats.push((i - 1, v));
        }
        rows.push((feats, y));
    }
    if rows.is_empty() {
        return Err(Error::Parse { path: origin.to_string(), line: 0, msg: "no samples".into() });
    }
    let n = dim.unwrap_or(max_index);
    Ok(rows
        .into_iter()
        .map(|(feats, y)| {
            let mut x = vec![0.0; n];
            for (i, v) in feats {
                x[i] = v;
            }
            Sample::new(x, y)
        })
        .collect())
}

/// Affine map of every feature onto `[0, 1]` over the dataset; constant
/// features become 0.
pub fn scale_unit(rows: &mut [Sample]) {
    let Some(n) = rows.first().map(|r| r.dim()) else { return };
    for j in 0..n {
        let lo = rows.iter().map(|r| r.x[j]).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r.x[j]).fold(f64::NEG_INFINITY, f64::max);
        for r in rows.iter_mut() {
            r.x[j] = if hi > lo { (r.x[j] - lo) / (hi - lo) } else { 0.0 };
        }
    }
}

/// Where each learner's samples come from.
#[derive(Clone, Debug, PartialEq)]
pub enum StreamSource {
    Linear { theta: Vec<f64>, bound: f64, noise: f64 },
    Logistic { theta: Vec<f64>, bound: f64, flip: f64 },
    Dataset { rows: Vec<Sample>, parts: Vec<Vec<usize>> },
}

fn uniform_features<R: Rng>(rng: &mut R, n: usize, b: f64) -> Vec<f64> {
    (0..n).map(|_| b * (2.0 * open01(rng) - 1.0)).collect()
}

impl StreamSource {
    pub fn from_config(cfg: &StreamConfig, m: usize) -> Result<Self> {
        Ok(match cfg {
            StreamConfig::SyntheticLinear { theta_true, feature_bound, label_noise } => {
                if !(*feature_bound > 0.0) || !(*label_noise >= 0.0) || theta_true.is_empty() {
                    return Err(Error::Config("synthetic stream needs a target, feature_bound > 0 and label_noise >= 0".into()));
                }
                StreamSource::Linear { theta: theta_true.clone(), bound: *feature_bound, noise: *label_noise }
            }
            StreamConfig::SyntheticLogistic { theta_true, feature_bound, flip_prob } => {
                if !(*feature_bound > 0.0) || !(0.0..=0.5).contains(flip_prob) || theta_true.is_empty() {
                    return Err(Error::Config("synthetic stream needs a target, feature_bound > 0 and flip_prob in [0, 1/2]".into()));
                }
                StreamSource::Logistic { theta: theta_true.clone(), bound: *feature_bound, flip: *flip_prob }
            }
            StreamConfig::Svmlight { path, label_map, scale_features, dim, partition } => {
                let text = std::fs::read_to_string(path)?;
                let mut rows = parse_svmlight(&text, label_map, *dim, &path.display().to_string())?;
                if *scale_features {
                    scale_unit(&mut rows);
                }
                if rows.len() < m {
                    return Err(Error::Config(format!("{} rows cannot be split across {m} learners", rows.len())));
                }
                let parts = match partition {
                    Partition::RoundRobin => (0..m).map(|i| (i..rows.len()).step_by(m).collect()).collect(),
                    Partition::Contiguous => {
                        let per = rows.len() / m;
                        (0..m).map(|i| (i * per..if i + 1 == m { rows.len() } else { (i + 1) * per }).collect()).collect()
                    }
                };
                StreamSource::Dataset { rows, parts }
            }
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            StreamSource::Linear { theta, .. } | StreamSource::Logistic { theta, .. } => theta.len(),
            StreamSource::Dataset { rows, .. } => rows[0].dim(),
        }
    }

    /// Euclidean bound on any feature vector the source emits.
    pub fn feature_bound(&self) -> f64 {
        match self {
            StreamSource::Linear { theta, bound, .. } | StreamSource::Logistic { theta, bound, .. } => bound * (theta.len() as f64).sqrt(),
            StreamSource::Dataset { rows, .. } => rows.iter().map(|r| r.x.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max),
        }
    }

    /// Label magnitude exceeded with negligible probability.
    pub fn label_bound(&self) -> f64 {
        match self {
            StreamSource::Linear { theta, bound, noise } => theta.iter().map(|t| t.abs()).sum::<f64>() * bound + 6.0 * noise,
            StreamSource::Logistic { .. } => 1.0,
            StreamSource::Dataset { rows, .. } => rows.iter().map(|r| r.y.abs()).fold(0.0, f64::max),
        }
    }

    /// Samples one learner holds when the stream is finite.
    pub fn per_learner_size(&self) -> Option<usize> {
        match self {
            StreamSource::Dataset { parts, .. } => parts.iter().map(|p| p.len()).min(),
            _ => None,
        }
    }

    /// `k` samples for `learner` at `round`, drawn from `purpose`'s stream.
    pub fn draw(&self, streams: &Streams, learner: usize, round: usize, k: usize, purpose: Purpose) -> Vec<Sample> {
        let mut rng = streams.stream(learner, round, purpose);
        (0..k)
            .map(|_| match self {
                StreamSource::Linear { theta, bound, noise } => {
                    let x = uniform_features(&mut rng, theta.len(), *bound);
                    let y = x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + noise * std_normal(&mut rng);
                    Sample::new(x, y)
                }
                StreamSource::Logistic { theta, bound, flip } => {
                    let x = uniform_features(&mut rng, theta.len(), *bound);
                    let clean = x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() > 0.0;
                    let y = if open01(&mut rng) < *flip { !clean } else { clean };
                    Sample::new(x, y as u8 as f64)
                }
                StreamSource::Dataset { rows, parts } => {
                    let part = &parts[learner];
                    rows[part[rng.random_range(0..part.len())]].clone()
                }
            })
            .collect()
    }
}

fn problem_from_config(p: &ProblemConfig, domain: &ProjectionSet, source: &StreamSource, horizon: usize, k: usize) -> Result<ProblemSpec> {
    let b = p.feature_bound.unwrap_or_else(|| source.feature_bound());
    let mut spec = match p.loss {
        LossKind::Ridge => {
            let alpha = p.alpha.ok_or_else(|| Error::Config("ridge needs problem.alpha".into()))?;
            ProblemSpec::ridge(alpha, b, p.label_bound.unwrap_or_else(|| source.label_bound()), domain.clone())?
        }
        LossKind::Logistic => {
            let r = match p.r {
                Some(r) => r,
                None => p.r_scale / source.per_learner_size().unwrap_or(horizon * k) as f64,
            };
            ProblemSpec::logistic(r, b, domain.clone())?
        }
    };
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut spec.mu, p.mu);
    set(&mut spec.lipschitz, p.lipschitz);
    set(&mut spec.grad_bound, p.grad_bound);
    set(&mut spec.noise_var, p.noise_var);
    set(&mut spec.l1_clip, p.l1_clip);
    set(&mut spec.sample_lipschitz, p.sample_lipschitz);
    spec.validate()?;
    Ok(spec)
}

fn weights_from_config(cfg: &RunConfig) -> Result<WeightMatrix> {
    let t = &cfg.topology;
    let need_m = || t.m.ok_or_else(|| Error::Config("topology.m is required for this generator".into()));
    let graph = match t.generator {
        Generator::Explicit => {
            let rows = t.matrix.as_ref().ok_or_else(|| Error::Config("explicit topology needs topology.matrix".into()))?;
            return WeightMatrix::from_rows(rows);
        }
        Generator::Ring => Graph::ring(need_m()?)?,
        Generator::Path => Graph::path(need_m()?)?,
        Generator::Complete => Graph::complete(need_m()?)?,
        Generator::ErdosRenyi => {
            let p = t.p.ok_or_else(|| Error::Config("erdos_renyi needs topology.p".into()))?;
            Graph::erdos_renyi(need_m()?, p, cfg.seed, t.max_tries)?
        }
    };
    let scheme = match t.weights {
        WeightKind::Metropolis => WeightScheme::Metropolis,
        WeightKind::Uniform => WeightScheme::Uniform(
            t.uniform_weight.ok_or_else(|| Error::Config("uniform weights need topology.uniform_weight".into()))?,
        ),
    };
    let scale = match &t.scale {
        ScaleSetting::Fixed(s) => Scale::Fixed(*s),
        ScaleSetting::Named(s) if s == "auto" => Scale::Auto,
        ScaleSetting::Named(s) => return Err(Error::Config(format!("topology.scale must be a number or \"auto\", got `{s}`"))),
    };
    build_weight_matrix(&graph, scheme, scale)
}

fn noise_from_config(n: &NoiseConfig, m: usize) -> Result<Vec<NoiseSchedule>> {
    let sigmas = match (&n.sigmas, n.sigma) {
        (Some(v), None) => v.clone(),
        (None, Some(s)) => vec![s; m],
        _ => return Err(Error::Config("give exactly one of noise.sigma and noise.sigmas".into())),
    };
    let vs = match (&n.varsigmas, n.varsigma) {
        (Some(v), None) => v.clone(),
        (None, Some(s)) => (0..m).map(|i| s + n.varsigma_step * i as f64).collect(),
        _ => return Err(Error::Config("give exactly one of noise.varsigma and noise.varsigmas".into())),
    };
    if sigmas.len() != m || vs.len() != m {
        return Err(Error::Config(format!("noise lists must have one entry per learner ({m})")));
    }
    sigmas.iter().zip(&vs).map(|(s, v)| NoiseSchedule::new(*s, *v)).collect()
}

/// Everything a run needs, resolved and validated from a config.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: RunConfig,
    pub hash: String,
    pub w: WeightMatrix,
    pub problem: ProblemSpec,
    pub schedules: Schedules,
    pub noise: Vec<NoiseSchedule>,
    pub engine: EngineKind,
    pub source: StreamSource,
    pub check: CheckReport,
}

impl Experiment {
    /// Resolve a config. Structural problems are errors; the stepsize check is
    /// carried in `check` and left to the caller.
    pub fn build(config: RunConfig) -> Result<Self> {
        let c = &config;
        let mut issues = Vec::new();
        if c.horizon == 0 {
            issues.push("horizon must be positive".to_string());
        }
        if c.replicates == 0 {
            issues.push("replicates must be positive".to_string());
        }
        if c.samples_per_round == 0 {
            issues.push("samples_per_round must be positive".to_string());
        }
        if c.checkpoints_per_octave == 0 {
            issues.push("checkpoints_per_octave must be positive".to_string());
        }
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        c.domain.validate()?;
        let w = weights_from_config(c)?;
        let m = w.m();
        let source = StreamSource::from_config(&c.stream, m)?;
        if source.dim() != c.domain.dim() {
            return Err(Error::DimensionMismatch { expected: c.domain.dim(), got: source.dim() });
        }
        let problem = problem_from_config(&c.problem, &c.domain, &source, c.horizon, c.samples_per_round)?;
        if let (Loss::Logistic { .. }, StreamSource::Dataset { .. } | StreamSource::Logistic { .. }) = (problem.loss, &source) {
        } else if let Loss::Logistic { .. } = problem.loss {
            return Err(Error::Config("logistic loss needs 0/1 labels from a classification stream".into()));
        }
        if let StreamSource::Dataset { rows, .. } = &source {
            for r in rows {
                problem.loss.validate_sample(r, problem.dim())?;
            }
        }
        let needs_samples = !matches!(problem.loss, Loss::Ridge { .. });
        if needs_samples && c.horizon > c.oracle_horizon_cap {
            return Err(Error::Validation(vec![format!(
                "horizon {} exceeds oracle_horizon_cap {} for a loss whose oracle keeps every sample",
                c.horizon, c.oracle_horizon_cap
            )]));
        }
        let engine = c.engine.unwrap_or_else(|| EngineKind::default_for(&problem.loss));
        if engine == EngineKind::Interpolated && c.samples_per_round != 1 {
            return Err(Error::Config("interpolated engine needs samples_per_round = 1".into()));
        }
        let sc = &c.schedules;
        let gamma0 = match sc.gamma0 {
            Some(g) => g,
            None if m >= 2 => sc.gamma0_fraction * gamma0_max(&w),
            None => return Err(Error::Config("a single learner needs an explicit schedules.gamma0".into())),
        };
        let lambda0 = match sc.lambda0 {
            Some(l) => l,
            None if m >= 2 => sc.lambda0_fraction * lambda0_max(sc.regime, &problem, &w, gamma0),
            None => return Err(Error::Config("a single learner needs an explicit schedules.lambda0".into())),
        };
        let schedules = Schedules::new(gamma0, sc.u, lambda0, sc.v, sc.regime)?;
        let noise = noise_from_config(&c.noise, m)?;
        let check = check(&problem, &w, &schedules, &noise);
        let hash = config_hash(c);
        Ok(Experiment { hash, w, problem, schedules, noise, engine, source, check, config })
    }

    /// Rounds at which metrics are recorded: 0, then `2^(j/k)` rounded, the
    /// extra rounds up to the horizon, then the horizon.
    pub fn checkpoints(&self) -> Vec<usize> {
        let mut cps = checkpoints(self.config.horizon, self.config.checkpoints_per_octave);
        cps.extend(self.config.extra_checkpoints.iter().filter(|&&t| t <= self.config.horizon));
        cps.sort_unstable();
        cps.dedup();
        cps
    }

    pub fn initial_points(&self, streams: &Streams) -> Result<Vec<Vec<f64>>> {
        let m = self.w.m();
        let InitConfig { theta0, theta0_per_learner } = &self.config.init;
        let pts = match (theta0, theta0_per_learner) {
            (Some(t), None) => vec![t.clone(); m],
            (None, Some(v)) if v.len() == m => v.clone(),
            (None, Some(_)) => return Err(Error::Config(format!("init.theta0_per_learner needs {m} points"))),
            (None, None) => (0..m).map(|i| self.problem.domain.sample_uniform(&mut streams.stream(i, 0, Purpose::Init))).collect(),
            (Some(_), Some(_)) => return Err(Error::Config("give at most one of init.theta0 and init.theta0_per_learner".into())),
        };
        Ok(pts)
    }

    fn learners(&self, theta0: Vec<Vec<f64>>) -> Result<Vec<LearnerState>> {
        let dim = self.problem.dim();
        theta0
            .into_iter()
            .enumerate()
            .map(|(i, th)| {
                let ledger = PrivacyLedger::new(self.w.wbar(), self.problem.l1_clip, self.problem.sample_lipschitz, dim, self.noise[i])?;
                LearnerState::new(i, th, GradientEngine::new(self.engine, self.problem.loss, dim)?, self.noise[i], ledger, &self.problem.domain)
            })
            .collect()
    }

    /// One replicate; rows follow `checkpoints()`.
    pub fn run_replicate(&self, replicate: usize) -> Result<Vec<ReplicateRow>> {
        let streams = Streams::new(self.config.seed, replicate as u64);
        let m = self.w.m();
        let k = self.config.samples_per_round;
        let noise_on = self.config.noise.enabled;
        let clip = Some(self.problem.l1_clip);
        let cps = self.checkpoints();
        let mut next_cp = 0;
        let mut learners = self.learners(self.initial_points(&streams)?)?;
        let mut oracle = ErmOracle::new(&self.problem);
        let every_round = self.config.record_dynamic_regret;
        let track_drift = every_round || matches!(self.problem.loss, Loss::Ridge { .. });
        let mut prev_opt: Option<Vec<f64>> = None;
        let mut dyn_regret = 0.0;
        let mut rows = Vec::with_capacity(cps.len());
        let mut msgs: Vec<Message> = learners.iter().map(|l| l.make_broadcast(&streams, noise_on)).collect::<Result<_>>()?;
        for t in 0..=self.config.horizon {
            let data: Vec<Vec<Sample>> = (0..m).map(|i| self.source.draw(&streams, i, t, k, Purpose::Data)).collect();
            let is_cp = next_cp < cps.len() && cps[next_cp] == t;
            if track_drift && is_cp && t > 0 && !every_round {
                prev_opt = Some(oracle.optimum()?);
            }
            for s in data.iter().flatten() {
                oracle.add(s)?;
            }
            let opt = if every_round || is_cp { Some(oracle.optimum()?) } else { None };
            if every_round {
                let opt = opt.as_ref().expect("computed every round");
                for (l, xs) in learners.iter().zip(&data) {
                    for x in xs {
                        dyn_regret += self.problem.loss.value(l.theta(), x)? - self.problem.loss.value(opt, x)?;
                    }
                }
            }
            if is_cp {
                let opt = opt.clone().expect("computed at checkpoints");
                let f_star = oracle.objective(&opt)?;
                let theta: Vec<Vec<f64>> = learners.iter().map(|l| l.theta().to_vec()).collect();
                let gaps = theta.iter().map(|th| oracle.objective(th).map(|f| f - f_star)).collect::<Result<Vec<f64>>>()?;
                let drift = if track_drift && t > 0 {
                    prev_opt.as_ref().map(|p| p.iter().zip(&opt).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                } else {
                    None
                };
                rows.push(ReplicateRow {
                    t,
                    eps: learners.iter().map(|l| l.ledger().eps_partial).collect(),
                    eps_rho: learners.iter().map(|l| l.ledger().eps_rho).collect(),
                    theta,
                    optimum: opt,
                    gaps,
                    drift,
                    dynamic_regret: every_round.then_some(dyn_regret),
                });
                next_cp += 1;
            }
            if every_round {
                prev_opt = opt;
            }
            if t == self.config.horizon {
                break;
            }
            let (gamma, lambda) = (self.schedules.gamma(t), self.schedules.lambda(t));
            let lambda = if self.config.disable_gradient { 0.0 } else { lambda };
            for (i, l) in learners.iter_mut().enumerate() {
                l.observe(&data[i])?;
                l.local_update(&inbox(&self.w, i, &msgs), &self.w, gamma, lambda, &self.problem, clip)?;
                if l.theta().iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite { round: t + 1, learner: i, replicate });
                }
            }
            msgs = learners.iter().map(|l| l.make_broadcast(&streams, noise_on)).collect::<Result<_>>()?;
        }
        Ok(rows)
    }

    /// Every replicate, aggregated into one trace.
    pub fn run(&self) -> Result<RunTrace> {
        let per: Vec<Vec<ReplicateRow>> = (0..self.config.replicates)
            .into_par_iter()
            .map(|r| self.run_replicate(r))
            .collect::<Result<_>>()?;
        let reps = per.len() as f64;
        let mut checkpoints = Vec::new();
        for (j, &t) in self.checkpoints().iter().enumerate() {
            let rows: Vec<&ReplicateRow> = per.iter().map(|p| &p[j]).collect();
            let sq: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| r.theta.iter().map(|th| th.iter().zip(&r.optimum).map(|(a, b)| (a - b).powi(2)).sum()).collect())
                .collect();
            let gaps: Vec<Vec<f64>> = rows.iter().map(|r| r.gaps.clone()).collect();
            let mean_opt = |f: fn(&ReplicateRow) -> Option<f64>| -> Option<f64> {
                rows.iter().map(|r| f(r)).sum::<Option<f64>>().map(|s| s / reps)
            };
            checkpoints.push(CheckpointRecord {
                t,
                tracking_error: max_of_means(&sq),
                regret: max_of_means(&gaps),
                eps: rows[0].eps.clone(),
                eps_rho: rows[0].eps_rho.clone(),
                drift: mean_opt(|r| r.drift),
                dynamic_regret: mean_opt(|r| r.dynamic_regret),
                theta: rows.iter().map(|r| r.theta.clone()).collect(),
                optimum: rows.iter().map(|r| r.optimum.clone()).collect(),
                gaps,
            });
        }
        let window = self.config.output.fit_window.unwrap_or([1e3f64.min(self.config.horizon as f64 / 100.0), self.config.horizon as f64]);
        let window = (window[0], window[1]);
        let series = |f: fn(&CheckpointRecord) -> f64| -> Vec<(f64, f64)> { checkpoints.iter().map(|c| (c.t as f64, f(c))).collect() };
        let fits = Fits {
            window,
            tracking_error: rate_fit(&series(|c| c.tracking_error), window).ok(),
            regret: rate_fit(&series(|c| c.regret), window).ok(),
        };
        let budgets = self
            .noise
            .iter()
            .map(|n| budget_bound(&self.problem, self.w.wbar(), &self.schedules, n, &[self.config.horizon]))
            .collect::<Result<Vec<_>>>()?;
        Ok(RunTrace {
            config_hash: self.hash.clone(),
            seed: self.config.seed,
            horizon: self.config.horizon,
            replicates: self.config.replicates,
            m: self.w.m(),
            dim: self.problem.dim(),
            noise_enabled: self.config.noise.enabled,
            gamma0: self.schedules.gamma0,
            lambda0: self.schedules.lambda0,
            check: self.check.clone(),
            checkpoints,
            fits,
            budgets,
        })
    }

    /// Divergence of `learner` when its round-`round` sample is redrawn,
    /// with every message held fixed.
    pub fn sensitivity(&self, round: usize, learner: usize) -> Result<SensitivityTrace> {
        let m = self.w.m();
        if learner >= m || round >= self.config.horizon {
            return Err(Error::InvalidParameter(format!("need learner < {m} and round < {}", self.config.horizon)));
        }
        if self.config.samples_per_round != 1 {
            return Err(Error::Config("sensitivity runs take one sample per learner per round".into()));
        }
        let streams = Streams::new(self.config.seed, 0);
        let data_a: Vec<Vec<Sample>> = (0..self.config.horizon)
            .map(|t| (0..m).map(|i| self.source.draw(&streams, i, t, 1, Purpose::Data).remove(0)).collect())
            .collect();
        let mut data_b = data_a.clone();
        let mut tries = 0;
        loop {
            let cand = self.source.draw(&streams, learner, round + tries * self.config.horizon, 1, Purpose::Misc).remove(0);
            if cand != data_a[round][learner] || tries > 64 {
                data_b[round][learner] = cand;
                break;
            }
            tries += 1;
        }
        let theta0 = self.initial_points(&streams)?;
        let setup = CoupledSetup {
            w: &self.w,
            problem: &self.problem,
            schedules: &self.schedules,
            noise: &self.noise,
            engine: self.engine,
            theta0: &theta0,
            seed: self.config.seed,
            noise_on: self.config.noise.enabled,
        };
        let mut trace = empirical_sensitivity(&setup, &data_a, &data_b)?;
        trace.learner = learner;
        Ok(trace)
    }
}

/// Rounds `0`, `round(2^(j/k))` for `j >= 0`, and `horizon`, deduplicated.
pub fn checkpoints(horizon: usize, per_octave: usize) -> Vec<usize> {
    let mut out = vec![0];
    let mut j = 0u32;
    loop {
        let t = 2f64.powf(j as f64 / per_octave.max(1) as f64).round() as usize;
        if t >= horizon {
            break;
        }
        if *out.last().unwrap() != t {
            out.push(t);
        }
        j += 1;
    }
    if *out.last().unwrap() != horizon {
        out.push(horizon);
    }
    out
}

/// One replicate's state at a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateRow {
    pub t: usize,
    pub theta: Vec<Vec<f64>>,
    pub optimum: Vec<f64>,
    pub gaps: Vec<f64>,
    pub eps: Vec<f64>,
    pub eps_rho: Vec<f64>,
    pub drift: Option<f64>,
    pub dynamic_regret: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub t: usize,
    /// `max_i mean_r |theta_t^i - theta*_t|^2`.
    pub tracking_error: f64,
    /// `max_i mean_r [F_t(theta_t^i) - F_t(theta*_t)]`.
    pub regret: f64,
    /// Accumulated budget of each learner after `t` rounds.
    pub eps: Vec<f64>,
    pub eps_rho: Vec<f64>,
    /// Mean `|theta*_t - theta*_{t-1}|^2`.
    pub drift: Option<f64>,
    pub dynamic_regret: Option<f64>,
    /// `theta[r][i]`.
    pub theta: Vec<Vec<Vec<f64>>>,
    /// `optimum[r]`.
    pub optimum: Vec<Vec<f64>>,
    /// `gaps[r][i]`.
    pub gaps: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fits {
    pub window: (f64, f64),
    pub tracking_error: Option<RateFit>,
    pub regret: Option<RateFit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub config_hash: String,
    pub seed: u64,
    pub horizon: usize,
    pub replicates: usize,
    pub m: usize,
    pub dim: usize,
    pub noise_enabled: bool,
    pub gamma0: f64,
    pub lambda0: f64,
    pub check: CheckReport,
    pub checkpoints: Vec<CheckpointRecord>,
    pub fits: Fits,
    pub budgets: Vec<BudgetReport>,
}

impl RunTrace {
    pub fn at(&self, t: usize) -> Option<&CheckpointRecord> {
        self.checkpoints.iter().find(|c| c.t == t)
    }

    pub fn last(&self) -> &CheckpointRecord {
        self.checkpoints.last().expect("a trace has at least one checkpoint")
    }
}

/// Build and run a config from disk.
pub fn run_file(path: &Path, overrides: &[String]) -> Result<RunTrace> {
    Experiment::build(crate::config::load_config(path, overrides)?)?.run()
}
