//! Historical-average gradients `d_t(theta) = mean_k grad l(theta, xi_k)`.
//!
//! Three engines share one contract: exact replay over every stored sample,
//! an O(n^2) sufficient-statistics form that is exact for ridge, and an O(n)
//! running mean that estimates the previous average at the new iterate by
//! two-point linear interpolation per coordinate.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::objectives::{clip_l1_in_place, Loss, Sample};

/// Coordinates whose last two iterates differ by less than this fall back to
/// the stored average instead of interpolating.
pub const TIE_TOL: f64 = 1e-12;

/// Append-only sample store; the average is recomputed from scratch.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayMemory {
    dim: usize,
    samples: Vec<Sample>,
}

impl ReplayMemory {
    pub fn new(dim: usize) -> Self {
        ReplayMemory { dim, samples: Vec::new() }
    }

    pub fn append(&mut self, xi: Sample) -> Result<()> {
        check_dim(self.dim, xi.dim())?;
        self.samples.push(xi);
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Mean of the per-sample gradients at `theta`, each clipped to 1-norm
    /// `clip` when given.
    pub fn avg_grad(&self, loss: &Loss, theta: &[f64], clip: Option<f64>) -> Result<Vec<f64>> {
        check_dim(self.dim, theta.len())?;
        if self.samples.is_empty() {
            return Err(Error::EmptyMemory);
        }
        let k = self.samples.len() as f64;
        let mut out = vec![0.0; self.dim];
        match clip {
            None => {
                for s in &self.samples {
                    loss.add_gradient(theta, s, 1.0, &mut out);
                }
            }
            Some(c) => {
                let mut g = vec![0.0; self.dim];
                for s in &self.samples {
                    g.iter_mut().for_each(|x| *x = 0.0);
                    loss.add_gradient(theta, s, 1.0, &mut g);
                    clip_l1_in_place(&mut g, c);
                    out.iter_mut().zip(&g).for_each(|(o, x)| *o += x);
                }
            }
        }
        out.iter_mut().for_each(|x| *x /= k);
        Ok(out)
    }
}

/// Sufficient statistics of the ridge gradient: `A = sum(2 x x^T + 2 alpha I)`,
/// `b = sum(-2 x y)`, so that `d(theta) = (A theta + b) / count`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineAggregate {
    dim: usize,
    alpha: f64,
    a_sum: Vec<f64>,
    b_sum: Vec<f64>,
    count: usize,
}

impl AffineAggregate {
    pub fn new(dim: usize, alpha: f64) -> Self {
        AffineAggregate { dim, alpha, a_sum: vec![0.0; dim * dim], b_sum: vec![0.0; dim], count: 0 }
    }

    pub fn append(&mut self, xi: &Sample) -> Result<()> {
        check_dim(self.dim, xi.dim())?;
        let n = self.dim;
        for i in 0..n {
            for j in 0..n {
                self.a_sum[i * n + j] += 2.0 * xi.x[i] * xi.x[j];
            }
            self.a_sum[i * n + i] += 2.0 * self.alpha;
            self.b_sum[i] -= 2.0 * xi.x[i] * xi.y;
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Size of the stored state in floats; independent of the history length.
    pub fn state_len(&self) -> usize {
        self.a_sum.len() + self.b_sum.len()
    }

    /// Average gradient at `theta`; the clip, if any, is applied to the average.
    pub fn avg_grad(&self, theta: &[f64], clip: Option<f64>) -> Result<Vec<f64>> {
        check_dim(self.dim, theta.len())?;
        if self.count == 0 {
            return Err(Error::EmptyMemory);
        }
        let n = self.dim;
        let k = self.count as f64;
        let mut out: Vec<f64> = (0..n)
            .map(|i| {
                let row = &self.a_sum[i * n..(i + 1) * n];
                (row.iter().zip(theta).map(|(a, t)| a * t).sum::<f64>() + self.b_sum[i]) / k
            })
            .collect();
        if let Some(c) = clip {
            clip_l1_in_place(&mut out, c);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Node {
    theta: Vec<f64>,
    /// Average gradient over the samples seen when this iterate was current.
    avg: Vec<f64>,
}

/// Running-mean state for the interpolated average: the last two iterates
/// with their averages, plus the previous sample.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpState {
    loss: Loss,
    dim: usize,
    count: usize,
    first_sample: Option<Sample>,
    last_sample: Option<Sample>,
    prev: Option<Node>,
    prev2: Option<Node>,
}

impl InterpState {
    pub fn new(loss: Loss, dim: usize) -> Self {
        InterpState { loss, dim, count: 0, first_sample: None, last_sample: None, prev: None, prev2: None }
    }

    /// Number of samples absorbed so far.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_warm(&self) -> bool {
        self.count >= 2
    }

    /// Size of the stored state in floats; independent of the history length.
    pub fn state_len(&self) -> usize {
        let node = |n: &Option<Node>| n.as_ref().map_or(0, |n| n.theta.len() + n.avg.len());
        let smp = |s: &Option<Sample>| s.as_ref().map_or(0, |s| s.x.len() + 1);
        node(&self.prev) + node(&self.prev2) + smp(&self.first_sample) + smp(&self.last_sample)
    }

    fn grad(&self, theta: &[f64], s: &Sample, clip: Option<f64>) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.loss.add_gradient(theta, s, 1.0, &mut g);
        if let Some(c) = clip {
            clip_l1_in_place(&mut g, c);
        }
        g
    }

    /// Absorb the sample of the current round and return the average gradient
    /// at `theta_t`. The first two rounds are computed exactly.
    pub fn step(&mut self, theta_t: &[f64], xi_t: Sample, clip: Option<f64>) -> Result<Vec<f64>> {
        check_dim(self.dim, theta_t.len())?;
        self.loss.validate_sample(&xi_t, self.dim)?;
        match self.count {
            0 => {
                let d = self.grad(theta_t, &xi_t, clip);
                self.prev = Some(Node { theta: theta_t.to_vec(), avg: d.clone() });
                self.first_sample = Some(xi_t.clone());
                self.last_sample = Some(xi_t);
                self.count = 1;
                Ok(d)
            }
            1 => {
                let first = self.first_sample.take().expect("first sample kept during warm-up");
                let g0 = self.grad(theta_t, &first, clip);
                let g1 = self.grad(theta_t, &xi_t, clip);
                let d: Vec<f64> = g0.iter().zip(&g1).map(|(a, b)| 0.5 * (a + b)).collect();
                self.prev2 = self.prev.take();
                self.prev = Some(Node { theta: theta_t.to_vec(), avg: d.clone() });
                self.last_sample = Some(xi_t);
                self.count = 2;
                Ok(d)
            }
            _ => {
                let g_new = self.grad(theta_t, &xi_t, clip);
                let d = self.avg_grad_interpolated(theta_t, &g_new, clip)?;
                self.last_sample = Some(xi_t);
                Ok(d)
            }
        }
    }

    /// One interpolated step given `grad_new = grad l(theta_t, xi_t)`. The
    /// sample `xi_t` itself must be recorded by the caller (see [`step`]).
    ///
    /// [`step`]: InterpState::step
    pub fn avg_grad_interpolated(&mut self, theta_t: &[f64], grad_new: &[f64], clip: Option<f64>) -> Result<Vec<f64>> {
        check_dim(self.dim, theta_t.len())?;
        check_dim(self.dim, grad_new.len())?;
        if self.count < 2 {
            return Err(Error::NotWarmedUp { count: self.count });
        }
        let t = self.count as f64;
        let p1 = self.prev.take().expect("warm state");
        let p2 = self.prev2.take().expect("warm state");
        let last = self.last_sample.as_ref().expect("warm state");
        // previous average, evaluated at the iterate before last
        let g_back = self.grad(&p2.theta, last, clip);
        let d_back: Vec<f64> = p2.avg.iter().zip(&g_back).map(|(d, g)| ((t - 1.0) * d + g) / t).collect();
        let d_prev_at_t = interpolate(theta_t, &p1.theta, &p1.avg, &p2.theta, &d_back);
        let d: Vec<f64> = d_prev_at_t.iter().zip(grad_new).map(|(d, g)| (t * d + g) / (t + 1.0)).collect();
        self.prev2 = Some(p1);
        self.prev = Some(Node { theta: theta_t.to_vec(), avg: d.clone() });
        self.count += 1;
        Ok(d)
    }
}

/// Per-coordinate line through `(a, fa)` and `(b, fb)` evaluated at `x`;
/// coordinates with `|a - b| < TIE_TOL` return `fa`.
pub fn interpolate(x: &[f64], a: &[f64], fa: &[f64], b: &[f64], fb: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|c| {
            let gap = a[c] - b[c];
            if gap.abs() < TIE_TOL {
                fa[c]
            } else {
                fa[c] * (x[c] - b[c]) / gap + fb[c] * (x[c] - a[c]) / (b[c] - a[c])
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Replay,
    Affine,
    Interpolated,
}

impl EngineKind {
    pub fn default_for(loss: &Loss) -> Self {
        match loss {
            Loss::Ridge { .. } => EngineKind::Affine,
            Loss::Logistic { .. } => EngineKind::Replay,
        }
    }
}

/// One learner's gradient memory behind a uniform interface: `observe` the
/// round's samples, then ask for the average at the current iterate.
#[derive(Clone, Debug, PartialEq)]
pub enum GradientEngine {
    Replay { loss: Loss, memory: ReplayMemory },
    Affine(AffineAggregate),
    Interpolated { state: InterpState, pending: Option<Sample> },
}

impl GradientEngine {
    pub fn new(kind: EngineKind, loss: Loss, dim: usize) -> Result<Self> {
        Ok(match kind {
            EngineKind::Replay => GradientEngine::Replay { loss, memory: ReplayMemory::new(dim) },
            EngineKind::Affine => match loss {
                Loss::Ridge { alpha } => GradientEngine::Affine(AffineAggregate::new(dim, alpha)),
                _ => return Err(Error::Config("affine engine requires the ridge loss".into())),
            },
            EngineKind::Interpolated => GradientEngine::Interpolated { state: InterpState::new(loss, dim), pending: None },
        })
    }

    /// Number of samples absorbed, including any pending one.
    pub fn count(&self) -> usize {
        match self {
            GradientEngine::Replay { memory, .. } => memory.count(),
            GradientEngine::Affine(a) => a.count(),
            GradientEngine::Interpolated { state, pending } => state.count() + pending.is_some() as usize,
        }
    }

    pub fn observe(&mut self, samples: &[Sample]) -> Result<()> {
        match self {
            GradientEngine::Replay { loss, memory } => {
                for s in samples {
                    loss.validate_sample(s, memory.dim)?;
                    memory.append(s.clone())?;
                }
            }
            GradientEngine::Affine(a) => {
                for s in samples {
                    a.append(s)?;
                }
            }
            GradientEngine::Interpolated { pending, .. } => {
                if samples.len() != 1 || pending.is_some() {
                    return Err(Error::Config("interpolated engine takes exactly one sample per round".into()));
                }
                *pending = Some(samples[0].clone());
            }
        }
        Ok(())
    }

    pub fn avg_grad(&mut self, theta: &[f64], clip: Option<f64>) -> Result<Vec<f64>> {
        match self {
            GradientEngine::Replay { loss, memory } => memory.avg_grad(loss, theta, clip),
            GradientEngine::Affine(a) => a.avg_grad(theta, clip),
            GradientEngine::Interpolated { state, pending } => {
                let s = pending.take().ok_or(Error::EmptyMemory)?;
                state.step(theta, s, clip)
            }
        }
    }
}
