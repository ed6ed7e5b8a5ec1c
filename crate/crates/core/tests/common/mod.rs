//! Independent oracles shared by the integration tests. None of them call
//! into the code they check.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semvad::s3m::{self, S3mParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_params(d: usize, o: usize, scale: f64, rng: &mut ChaCha8Rng) -> S3mParams {
    let mut p = S3mParams::zeros(d, o);
    for b in p.blocks_mut() {
        for v in b.iter_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
    p
}

pub fn random_seq(t: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(t, d, |_, _| rng.random_range(-1.0..1.0))
}

/// Loss by direct evaluation of the recurrence, written out with plain
/// loops.
pub fn loss_loops(p: &S3mParams, f: &DMatrix<f64>) -> f64 {
    let (t_len, d) = f.shape();
    let o = p.state_dim();
    let mut h = vec![0.0; o];
    let mut total = 0.0;
    for t in 0..t_len - 1 {
        let mut next = vec![0.0; o];
        for i in 0..o {
            let mut acc = p.enc_b[i];
            for j in 0..d {
                acc += p.enc_w[(i, j)] * f[(t, j)];
            }
            for k in 0..o {
                acc += p.transition[(i, k)] * h[k];
            }
            next[i] = acc;
        }
        h = next;
        for j in 0..d {
            let mut pred = p.dec_b[j];
            for k in 0..o {
                pred += p.dec_w[(j, k)] * h[k];
            }
            total += (pred - f[(t + 1, j)]).powi(2);
        }
    }
    total / ((t_len - 1) * d) as f64
}

/// Max relative error between analytic and central-difference gradients,
/// with relative error `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(p: &S3mParams, f: &DMatrix<f64>, eps: f64) -> f64 {
    let (_, grad) = s3m::backward(p, f).unwrap();
    let mut worst: f64 = 0.0;
    let analytic: Vec<f64> = grad.blocks().iter().flat_map(|b| b.iter().copied()).collect();
    let mut idx = 0;
    for block in 0..5 {
        let n = p.blocks()[block].len();
        for k in 0..n {
            let mut plus = p.clone();
            plus.blocks_mut()[block][k] += eps;
            let mut minus = p.clone();
            minus.blocks_mut()[block][k] -= eps;
            let numeric = (loss_loops(&plus, f) - loss_loops(&minus, f)) / (2.0 * eps);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            idx += 1;
        }
    }
    worst
}

/// P(s+ > s-) + 0.5 P(s+ = s-) over all positive/negative pairs.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] == 0 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Direct truncated convolution, renormalized over in-bounds taps.
pub fn smooth_direct(x: &[f64], sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let n = x.len() as i64;
    (0..n)
        .map(|i| {
            let (mut num, mut den) = (0.0, 0.0);
            for k in -r..=r {
                let j = i + k;
                if j < 0 || j >= n {
                    continue;
                }
                let w = (-((k * k) as f64) / (2.0 * sigma * sigma)).exp();
                num += w * x[j as usize];
                den += w;
            }
            num / den
        })
        .collect()
}

/// Noiseless clips from `f_{t+1} = A f_t` with a random stable `A`.
pub fn realizable_clips(d: usize, n: usize, len: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let mut rng = rng(seed);
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let scale = 0.8 / a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let a = a * scale;
    (0..n)
        .map(|_| {
            let mut f = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let mut m = DMatrix::zeros(len, d);
            for t in 0..len {
                m.set_row(t, &f.transpose());
                f = &a * f;
            }
            m
        })
        .collect()
}
