//! One learner's state and its two per-round operations: the local update
//! from received noisy messages, and the noisy broadcast.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gradient_memory::GradientEngine;
use crate::objectives::{ProblemSpec, Sample};
use crate::privacy::{sample_laplace, NoiseSchedule, PrivacyLedger};
use crate::rng::{open01, std_normal, Purpose, Streams};
use crate::topology::WeightMatrix;

/// Convex compact feasible set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProjectionSet {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl ProjectionSet {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        let s = ProjectionSet::Ball { center, radius };
        s.validate()?;
        Ok(s)
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let s = ProjectionSet::Box { lo, hi };
        s.validate()?;
        Ok(s)
    }

    /// Box `[lo, hi]^n`.
    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::boxed(vec![lo; n], vec![hi; n])
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ProjectionSet::Ball { center, radius } => {
                if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidParameter("ball center must be a finite nonempty vector".into()));
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::InvalidParameter(format!("ball radius {radius} must be > 0")));
                }
            }
            ProjectionSet::Box { lo, hi } => {
                check_dim(lo.len(), hi.len())?;
                if lo.is_empty() {
                    return Err(Error::InvalidParameter("box must have at least one coordinate".into()));
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
                    return Err(Error::InvalidParameter("box needs finite lo < hi in every coordinate".into()));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            ProjectionSet::Ball { center, .. } => center.len(),
            ProjectionSet::Box { lo, .. } => lo.len(),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            ProjectionSet::Ball { radius, .. } => 2.0 * radius,
            ProjectionSet::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| (h - l).powi(2)).sum::<f64>().sqrt(),
        }
    }

    /// Largest Euclidean norm of a point in the set.
    pub fn max_norm(&self) -> f64 {
        match self {
            ProjectionSet::Ball { center, radius } => center.iter().map(|c| c * c).sum::<f64>().sqrt() + radius,
            ProjectionSet::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| (l * l).max(h * h))
                .sum::<f64>()
                .sqrt(),
        }
    }

    pub fn project_in_place(&self, v: &mut [f64]) {
        match self {
            ProjectionSet::Ball { center, radius } => {
                let dist = v.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
                if dist > *radius {
                    let s = radius / dist;
                    v.iter_mut().zip(center).for_each(|(a, c)| *a = c + (*a - c) * s);
                }
            }
            ProjectionSet::Box { lo, hi } => {
                v.iter_mut().zip(lo.iter().zip(hi)).for_each(|(a, (l, h))| *a = a.clamp(*l, *h));
            }
        }
    }

    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), v.len())?;
        let mut out = v.to_vec();
        self.project_in_place(&mut out);
        Ok(out)
    }

    pub fn contains(&self, v: &[f64], tol: f64) -> bool {
        if v.len() != self.dim() {
            return false;
        }
        match self {
            ProjectionSet::Ball { center, radius } => {
                v.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt() <= radius + tol
            }
            ProjectionSet::Box { lo, hi } => v.iter().zip(lo.iter().zip(hi)).all(|(a, (l, h))| *a >= l - tol && *a <= h + tol),
        }
    }

    /// Uniform point of the set.
    pub fn sample_uniform<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            ProjectionSet::Ball { center, radius } => {
                let n = center.len();
                let dir: Vec<f64> = (0..n).map(|_| std_normal(rng)).collect();
                let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                let r = radius * open01(rng).powf(1.0 / n as f64);
                center.iter().zip(&dir).map(|(c, d)| c + r * d / norm).collect()
            }
            ProjectionSet::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| l + (h - l) * open01(rng)).collect(),
        }
    }
}

pub fn project(set: &ProjectionSet, v: &[f64]) -> Result<Vec<f64>> {
    set.project(v)
}

/// A perturbed parameter as broadcast at the start of `round`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub from: usize,
    pub round: usize,
    pub payload: Vec<f64>,
}

/// Pair every neighbor of `i` with its weight and its message from `msgs`,
/// where `msgs[j]` is learner `j`'s broadcast.
pub fn inbox<'a>(w: &WeightMatrix, i: usize, msgs: &'a [Message]) -> Vec<(f64, &'a Message)> {
    w.neighbors(i).iter().map(|&(j, wij)| (wij, &msgs[j])).collect()
}

#[derive(Clone, Debug)]
pub struct LearnerState {
    id: usize,
    theta: Vec<f64>,
    engine: GradientEngine,
    noise: NoiseSchedule,
    ledger: PrivacyLedger,
    round: usize,
    samples_seen: usize,
}

impl LearnerState {
    pub fn new(
        id: usize,
        theta0: Vec<f64>,
        engine: GradientEngine,
        noise: NoiseSchedule,
        ledger: PrivacyLedger,
        domain: &ProjectionSet,
    ) -> Result<Self> {
        check_dim(domain.dim(), theta0.len())?;
        if !domain.contains(&theta0, 1e-12) {
            return Err(Error::InvalidParameter(format!("initial point of learner {id} is outside the domain")));
        }
        Ok(LearnerState { id, theta: theta0, engine, noise, ledger, round: 0, samples_seen: 0 })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn ledger(&self) -> &PrivacyLedger {
        &self.ledger
    }

    pub fn noise(&self) -> &NoiseSchedule {
        &self.noise
    }

    /// Absorb this round's samples.
    pub fn observe(&mut self, samples: &[Sample]) -> Result<()> {
        self.engine.observe(samples)?;
        self.samples_seen += samples.len();
        Ok(())
    }

    /// `theta <- Proj(theta + gamma sum_j w_ij (msg_j - theta) - lambda d_t(theta))`.
    ///
    /// `neighbor_msgs` must hold exactly the neighbors of this learner with
    /// their weights from `w`, all stamped with the current round.
    pub fn local_update(
        &mut self,
        neighbor_msgs: &[(f64, &Message)],
        w: &WeightMatrix,
        gamma_t: f64,
        lambda_t: f64,
        problem: &ProblemSpec,
        clip: Option<f64>,
    ) -> Result<()> {
        let expected = w.neighbors(self.id);
        if neighbor_msgs.len() != expected.len() {
            return Err(Error::Protocol(format!(
                "learner {} got {} messages for {} neighbors",
                self.id,
                neighbor_msgs.len(),
                expected.len()
            )));
        }
        for (wij, msg) in neighbor_msgs {
            if msg.from == self.id || w.get(self.id, msg.from) != *wij || *wij <= 0.0 {
                return Err(Error::Protocol(format!(
                    "weight {wij} from learner {} is inconsistent with row {} of the weight matrix",
                    msg.from, self.id
                )));
            }
            if msg.round != self.round {
                return Err(Error::Protocol(format!(
                    "learner {} at round {} got a round-{} message from {}",
                    self.id, self.round, msg.round, msg.from
                )));
            }
            check_dim(self.theta.len(), msg.payload.len())?;
        }
        if self.engine.count() != self.samples_seen || self.samples_seen == 0 {
            return Err(Error::Protocol(format!("learner {} updated before observing data", self.id)));
        }
        let d = self.engine.avg_grad(&self.theta, clip)?;
        let mut next = self.theta.clone();
        for (wij, msg) in neighbor_msgs {
            for ((n, p), th) in next.iter_mut().zip(&msg.payload).zip(&self.theta) {
                *n += gamma_t * wij * (p - th);
            }
        }
        next.iter_mut().zip(&d).for_each(|(n, g)| *n -= lambda_t * g);
        problem.domain.project_in_place(&mut next);
        self.theta = next;
        self.ledger.step(gamma_t, lambda_t)?;
        self.round += 1;
        Ok(())
    }

    /// Perturbed copy of the current parameter for the current round.
    pub fn make_broadcast(&self, streams: &Streams, noise_on: bool) -> Result<Message> {
        let mut payload = self.theta.clone();
        if noise_on {
            let (_, nu) = self.noise.scale(self.round);
            let mut rng = streams.stream(self.id, self.round, Purpose::Noise);
            let z = sample_laplace(nu, payload.len(), &mut rng)?;
            payload.iter_mut().zip(&z).for_each(|(p, z)| *p += z);
        }
        Ok(Message { from: self.id, round: self.round, payload })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_projection_example() {
        let b = ProjectionSet::ball(vec![0.0, 0.0], 1.0).unwrap();
        let p = b.project(&[3.0, 4.0]).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        assert_eq!(b.project(&[0.1, -0.2]).unwrap(), vec![0.1, -0.2]);
    }

    #[test]
    fn box_projection_clamps() {
        let b = ProjectionSet::boxed(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(b.project(&[-3.0, 5.0]).unwrap(), vec![-1.0, 2.0]);
        assert!((b.diameter() - 8f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn degenerate_sets_rejected() {
        assert!(ProjectionSet::ball(vec![0.0], 0.0).is_err());
        assert!(ProjectionSet::boxed(vec![1.0], vec![1.0]).is_err());
        assert!(ProjectionSet::boxed(vec![0.0, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn projection_dimension_checked() {
        let b = ProjectionSet::cube(2, -1.0, 1.0).unwrap();
        assert!(b.project(&[0.0]).is_err());
    }
}
