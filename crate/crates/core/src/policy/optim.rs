use std::path::Path;

use super::checkpoint::{write_atomic, ByteReader};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    /// `theta <- theta - lr * grad`
    #[default]
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer together with its per-parameter state.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    steps: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

const MAGIC: &[u8; 8] = b"PRFLOPTM";
const VERSION: u32 = 1;

impl Optimizer {
    pub fn new(kind: OptimizerKind, param_count: usize) -> Self {
        let moments = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam { .. } => param_count,
        };
        Optimizer {
            kind,
            steps: 0,
            first: vec![0.0; moments],
            second: vec![0.0; moments],
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn apply_update(&mut self, params: &mut [f64], grad: &[f64], learning_rate: f64) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::Contract(format!(
                "gradient has {} entries, parameters have {}",
                grad.len(),
                params.len()
            )));
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= learning_rate * g;
                }
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                if self.first.len() != params.len() {
                    return Err(Error::Contract(format!(
                        "optimizer state sized for {} parameters, got {}",
                        self.first.len(),
                        params.len()
                    )));
                }
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * g;
                    self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * g * g;
                    let m = self.first[i] / c1;
                    let v = self.second[i] / c2;
                    params[i] -= learning_rate * m / (v.sqrt() + epsilon);
                }
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let (tag, b1, b2, eps) = match self.kind {
            OptimizerKind::Sgd => (0u8, 0.0, 0.0, 0.0),
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => (1u8, beta1, beta2, epsilon),
        };
        out.push(tag);
        out.extend_from_slice(&self.steps.to_le_bytes());
        for v in [b1, b2, eps] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.first.len() as u64).to_le_bytes());
        for v in self.first.iter().chain(&self.second) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not an optimizer state file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "optimizer state version mismatch: file has {version}, expected {VERSION}"
            )));
        }
        let tag = r.u8()?;
        let steps = r.u64()?;
        let (beta1, beta2, epsilon) = (r.f64()?, r.f64()?, r.f64()?);
        let kind = match tag {
            0 => OptimizerKind::Sgd,
            1 => OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            },
            other => return Err(Error::Checkpoint(format!("unknown optimizer tag {other}"))),
        };
        let n = usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint("length overflows".into()))?;
        let first = r.f64_vec(n)?;
        let second = r.f64_vec(n)?;
        r.finish()?;
        Ok(Optimizer {
            kind,
            steps,
            first,
            second,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_or_rate_leaves_params() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 3);
        let mut p = vec![1.0, -2.0, 3.5];
        opt.apply_update(&mut p, &[0.0; 3], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        opt.apply_update(&mut p, &[1.0, 2.0, 3.0], 0.0).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn quadratic_probe_converges() {
        // closed form: theta_n - 3 = (1 - 2 lr)^n (theta_0 - 3)
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 1);
        let mut theta = vec![0.0];
        for _ in 0..100 {
            let g = vec![2.0 * (theta[0] - 3.0)];
            opt.apply_update(&mut theta, &g, 0.1).unwrap();
        }
        assert!((theta[0] - 3.0).abs() < 1e-6);
        let closed = 3.0 + 0.8f64.powi(100) * (0.0 - 3.0);
        assert!((theta[0] - closed).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 2);
        let mut p = vec![0.0; 2];
        assert!(matches!(opt.apply_update(&mut p, &[1.0], 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn adam_state_round_trips() {
        let mut opt = Optimizer::new(OptimizerKind::adam(), 4);
        let mut p = vec![0.1, 0.2, 0.3, 0.4];
        opt.apply_update(&mut p, &[1.0, -1.0, 0.5, 0.0], 0.01).unwrap();
        let back = Optimizer::decode(&opt.encode()).unwrap();
        assert_eq!(back, opt);
        assert!(Optimizer::decode(&opt.encode()[..20]).is_err());
    }
}
