use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward, init_params, loss, Optimizer, S3mError, S3mParams, TrainConfig};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

// keeps the shuffle stream independent of the init stream for equal seeds
const SHUFFLE_STREAM: u64 = 0x5348_5546_464c_4531;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the per-step losses seen during the epoch, before each update.
    pub mean_loss: f64,
    pub clipped_steps: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: S3mParams,
    pub log: Vec<EpochLog>,
}

struct Adam {
    m: S3mParams,
    v: S3mParams,
    t: i32,
}

impl Adam {
    fn new(like: &S3mParams) -> Self {
        let z = S3mParams::zeros(like.feature_dim(), like.state_dim());
        Adam {
            m: z.clone(),
            v: z,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut S3mParams, grad: &S3mParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        let blocks = params
            .blocks_mut()
            .into_iter()
            .zip(grad.blocks())
            .zip(self.m.blocks_mut().into_iter().zip(self.v.blocks_mut()));
        for ((p, g), (m, v)) in blocks {
            for i in 0..p.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

fn sgd_step(params: &mut S3mParams, grad: &S3mParams, lr: f64) {
    for (p, g) in params.blocks_mut().into_iter().zip(grad.blocks()) {
        for (pi, gi) in p.iter_mut().zip(g) {
            *pi -= lr * gi;
        }
    }
}

/// Average loss over a set of clips.
pub fn mean_loss(params: &S3mParams, clips: &[DMatrix<f64>]) -> Result<f64, S3mError> {
    if clips.is_empty() {
        return Err(S3mError::NoClips);
    }
    let mut total = 0.0;
    for c in clips {
        total += loss(params, c)?;
    }
    Ok(total / clips.len() as f64)
}

/// Fits the model with one update per clip. Clip order is reshuffled every
/// epoch from the configured seed; the learning rate for epoch `e` (0-based)
/// is `lr0 * lr_decay^e`.
pub fn train(clips: &[DMatrix<f64>], cfg: &TrainConfig) -> Result<TrainOutcome, S3mError> {
    cfg.validate()?;
    let first = clips.first().ok_or(S3mError::NoClips)?;
    let dim = first.ncols();
    if let Some(bad) = clips.iter().find(|c| c.ncols() != dim) {
        return Err(S3mError::DimMismatch {
            expected: dim,
            found: bad.ncols(),
        });
    }
    let params = init_params(dim, cfg, first.nrows());
    train_from(params, clips, cfg)
}

/// Same as [`train`] but starting from given parameters.
pub fn train_from(
    mut params: S3mParams,
    clips: &[DMatrix<f64>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, S3mError> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(S3mError::NoClips);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut adam = Adam::new(&params);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr0 * cfg.lr_decay.powi(epoch as i32);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut clipped_steps = 0;
        for (step, &i) in order.iter().enumerate() {
            let (value, mut grad) = match backward(&params, &clips[i]) {
                Ok(v) => v,
                Err(S3mError::NonFinite(_)) => {
                    return Err(S3mError::Diverged {
                        epoch: epoch + 1,
                        step,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            if !value.is_finite() {
                return Err(S3mError::Diverged {
                    epoch: epoch + 1,
                    step,
                    loss: value,
                });
            }
            sum += value;
            if cfg.grad_clip_norm > 0.0 {
                let norm = grad.norm();
                if norm > cfg.grad_clip_norm {
                    grad.scale(cfg.grad_clip_norm / norm);
                    clipped_steps += 1;
                }
            }
            match cfg.optimizer {
                Optimizer::Adam => adam.step(&mut params, &grad, lr),
                Optimizer::Sgd => sgd_step(&mut params, &grad, lr),
            }
        }
        let mean_loss = sum / clips.len() as f64;
        log::debug!("epoch {} lr {lr:.3e} loss {mean_loss:.6e}", epoch + 1);
        log.push(EpochLog {
            epoch: epoch + 1,
            lr,
            mean_loss,
            clipped_steps,
        });
    }
    if !params.is_finite() {
        return Err(S3mError::Diverged {
            epoch: cfg.epochs,
            step: clips.len(),
            loss: f64::NAN,
        });
    }
    Ok(TrainOutcome { params, log })
}
