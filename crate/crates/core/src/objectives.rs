//! Per-sample losses, their gradients, and the problem constants consumed by
//! the condition checkers and the privacy accountant.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::learner::ProjectionSet;

/// One observation: features and a scalar target (real for ridge, 0/1 for logistic).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Sample { x, y }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Loss {
    /// `(y - x.theta)^2 + alpha |theta|^2`
    Ridge { alpha: f64 },
    /// `(1 - b) a.theta - log s(a.theta) + (r/2) |theta|^2`
    Logistic { r: f64 },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Logistic function without overflow for large |z|.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-log s(z)`, evaluated stably.
fn neg_log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

fn check_label(y: f64) -> Result<()> {
    if y == 0.0 || y == 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLabel(y))
    }
}

impl Loss {
    pub fn value(&self, theta: &[f64], s: &Sample) -> Result<f64> {
        check_dim(theta.len(), s.dim())?;
        match *self {
            Loss::Ridge { alpha } => {
                let e = s.y - dot(&s.x, theta);
                Ok(e * e + alpha * dot(theta, theta))
            }
            Loss::Logistic { r } => {
                check_label(s.y)?;
                let z = dot(&s.x, theta);
                Ok((1.0 - s.y) * z + neg_log_sigmoid(z) + 0.5 * r * dot(theta, theta))
            }
        }
    }

    pub fn gradient(&self, theta: &[f64], s: &Sample) -> Result<Vec<f64>> {
        check_dim(theta.len(), s.dim())?;
        if let Loss::Logistic { .. } = self {
            check_label(s.y)?;
        }
        let mut g = vec![0.0; theta.len()];
        self.add_gradient(theta, s, 1.0, &mut g);
        Ok(g)
    }

    /// `out += scale * grad l(theta, s)`; dimensions must already agree.
    pub(crate) fn add_gradient(&self, theta: &[f64], s: &Sample, scale: f64, out: &mut [f64]) {
        match *self {
            Loss::Ridge { alpha } => {
                let c = -2.0 * (s.y - dot(&s.x, theta)) * scale;
                for ((o, x), t) in out.iter_mut().zip(&s.x).zip(theta) {
                    *o += c * x + 2.0 * alpha * scale * t;
                }
            }
            Loss::Logistic { r } => {
                let c = (sigmoid(dot(&s.x, theta)) - s.y) * scale;
                for ((o, x), t) in out.iter_mut().zip(&s.x).zip(theta) {
                    *o += c * x + r * scale * t;
                }
            }
        }
    }

    /// Check a sample against the expected dimension and label set.
    pub fn validate_sample(&self, s: &Sample, dim: usize) -> Result<()> {
        check_dim(dim, s.dim())?;
        if s.x.iter().any(|v| !v.is_finite()) || !s.y.is_finite() {
            return Err(Error::InvalidParameter("non-finite sample".into()));
        }
        if let Loss::Logistic { .. } = self {
            check_label(s.y)?;
        }
        Ok(())
    }

    pub fn has_affine_gradient(&self) -> bool {
        matches!(self, Loss::Ridge { .. })
    }
}

pub fn ridge_loss(theta: &[f64], xi: &Sample, alpha: f64) -> Result<f64> {
    Loss::Ridge { alpha }.value(theta, xi)
}

pub fn ridge_grad(theta: &[f64], xi: &Sample, alpha: f64) -> Result<Vec<f64>> {
    Loss::Ridge { alpha }.gradient(theta, xi)
}

pub fn logistic_loss(theta: &[f64], xi: &Sample, r: f64) -> Result<f64> {
    Loss::Logistic { r }.value(theta, xi)
}

pub fn logistic_grad(theta: &[f64], xi: &Sample, r: f64) -> Result<Vec<f64>> {
    Loss::Logistic { r }.gradient(theta, xi)
}

pub fn l1_norm(g: &[f64]) -> f64 {
    g.iter().map(|x| x.abs()).sum()
}

/// Rescale `g` so its 1-norm is at most `c`.
pub fn clip_l1(g: &[f64], c: f64) -> Vec<f64> {
    let mut out = g.to_vec();
    clip_l1_in_place(&mut out, c);
    out
}

pub fn clip_l1_in_place(g: &mut [f64], c: f64) {
    let n1 = l1_norm(g);
    if n1 > c {
        let s = c / n1;
        g.iter_mut().for_each(|x| *x *= s);
    }
}

/// Loss family together with the constants every guarantee is stated in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub loss: Loss,
    /// Strong convexity modulus of the expected loss.
    pub mu: f64,
    /// Lipschitz constant of the expected gradient.
    pub lipschitz: f64,
    /// Bound on the gradient norm.
    pub grad_bound: f64,
    /// Bound on the gradient noise variance.
    pub noise_var: f64,
    /// 1-norm clip applied to every per-sample gradient.
    pub l1_clip: f64,
    /// Worst-case Lipschitz constant of a single-sample gradient; used by the
    /// sensitivity recursion.
    pub sample_lipschitz: f64,
    pub domain: ProjectionSet,
}

impl ProblemSpec {
    /// Ridge on `domain` with features of Euclidean norm at most `feature_bound`
    /// and targets bounded by `label_bound` in magnitude.
    pub fn ridge(alpha: f64, feature_bound: f64, label_bound: f64, domain: ProjectionSet) -> Result<Self> {
        let r = domain.max_norm();
        let b = feature_bound;
        let lipschitz = 2.0 * (b * b + alpha);
        let grad_bound = 2.0 * b * (b * r + label_bound) + 2.0 * alpha * r;
        let n = domain.dim() as f64;
        let spec = ProblemSpec {
            loss: Loss::Ridge { alpha },
            mu: 2.0 * alpha,
            lipschitz,
            grad_bound,
            noise_var: grad_bound * grad_bound,
            l1_clip: n.sqrt() * grad_bound,
            sample_lipschitz: lipschitz,
            domain,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Logistic loss with ridge weight `r` and features of norm at most `feature_bound`.
    pub fn logistic(r: f64, feature_bound: f64, domain: ProjectionSet) -> Result<Self> {
        let b = feature_bound;
        let lipschitz = b * b / 4.0 + r;
        let grad_bound = b + r * domain.max_norm();
        let n = domain.dim() as f64;
        let spec = ProblemSpec {
            loss: Loss::Logistic { r },
            mu: r,
            lipschitz,
            grad_bound,
            noise_var: grad_bound * grad_bound,
            l1_clip: n.sqrt() * grad_bound,
            sample_lipschitz: lipschitz,
            domain,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn diameter(&self) -> f64 {
        self.domain.diameter()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match self.loss {
            Loss::Ridge { alpha } if !(alpha > 0.0) => return bad(format!("ridge alpha {alpha} must be > 0")),
            Loss::Logistic { r } if !(r >= 0.0) => return bad(format!("logistic r {r} must be >= 0")),
            _ => {}
        }
        if !(self.mu >= 0.0) {
            return bad(format!("mu {} must be >= 0", self.mu));
        }
        if let Loss::Ridge { .. } = self.loss {
            if !(self.mu > 0.0) {
                return bad("ridge requires mu > 0".into());
            }
        }
        if !(self.lipschitz > 0.0) || self.mu > self.lipschitz {
            return bad(format!("need 0 < mu <= L, got mu {} L {}", self.mu, self.lipschitz));
        }
        if !(self.grad_bound > 0.0) {
            return bad(format!("gradient bound {} must be > 0", self.grad_bound));
        }
        if !(self.noise_var >= 0.0) {
            return bad(format!("noise variance {} must be >= 0", self.noise_var));
        }
        if !(self.l1_clip > 0.0) {
            return bad(format!("clip {} must be > 0", self.l1_clip));
        }
        if !(self.sample_lipschitz > 0.0) {
            return bad(format!("sample Lipschitz constant {} must be > 0", self.sample_lipschitz));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: &[f64], y: f64) -> Sample {
        Sample::new(x.to_vec(), y)
    }

    #[test]
    fn ridge_examples() {
        assert_eq!(ridge_loss(&[0.0], &s(&[1.0], 2.0), 1.0).unwrap(), 4.0);
        assert_eq!(ridge_loss(&[1.0], &s(&[1.0], 2.0), 1.0).unwrap(), 2.0);
        assert_eq!(ridge_grad(&[0.0], &s(&[1.0], 2.0), 1.0).unwrap(), vec![-4.0]);
        assert_eq!(ridge_grad(&[1.0], &s(&[1.0], 2.0), 1.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn ridge_dimension_mismatch() {
        assert!(matches!(
            ridge_loss(&[0.0, 1.0], &s(&[1.0], 2.0), 1.0),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn logistic_examples() {
        let g = logistic_grad(&[0.0, 0.0], &s(&[1.0, 0.0], 1.0), 0.0).unwrap();
        assert_eq!(g, vec![-0.5, 0.0]);
        for b in [0.0, 1.0] {
            let l = logistic_loss(&[0.0, 0.0], &s(&[0.3, -2.0], b), 0.7).unwrap();
            assert!((l - 2f64.ln()).abs() < 1e-15);
        }
        assert!(matches!(logistic_loss(&[0.0], &s(&[1.0], 2.0), 0.0), Err(Error::InvalidLabel(_))));
    }

    #[test]
    fn logistic_is_finite_at_extremes() {
        for z in [-800.0, -501.0, 501.0, 800.0] {
            for b in [0.0, 1.0] {
                let l = logistic_loss(&[z], &s(&[1.0], b), 0.0).unwrap();
                let g = logistic_grad(&[z], &s(&[1.0], b), 0.0).unwrap();
                assert!(l.is_finite() && g[0].is_finite());
            }
        }
        // for b = 1 and large positive margin the loss tends to 0
        assert!(logistic_loss(&[800.0], &s(&[1.0], 1.0), 0.0).unwrap() < 1e-300);
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_l1(&[3.0, -1.0], 2.0), vec![1.5, -0.5]);
        assert_eq!(clip_l1(&[0.5, 0.5], 2.0), vec![0.5, 0.5]);
    }

    #[test]
    fn ridge_constants() {
        let dom = ProjectionSet::ball(vec![0.0], 1.0).unwrap();
        let p = ProblemSpec::ridge(0.5, 1.0, 2.0, dom).unwrap();
        assert_eq!(p.mu, 1.0);
        assert_eq!(p.lipschitz, 3.0);
        assert_eq!(p.grad_bound, 2.0 * (1.0 + 2.0) + 1.0);
        assert!(ProblemSpec::ridge(0.0, 1.0, 2.0, ProjectionSet::ball(vec![0.0], 1.0).unwrap()).is_err());
    }
}
