use nalgebra::{DMatrix, DVector};

use super::{S3mError, S3mParams};

/// Intermediate values of one forward pass over a `T x D` sequence.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `(T-1) x O`, row `t` is the state after reading frame `t`.
    pub states: DMatrix<f64>,
    /// `(T-1) x D`, row `t` predicts frame `t + 1`.
    pub predictions: DMatrix<f64>,
}

fn check(params: &S3mParams, seq: &DMatrix<f64>) -> Result<(), S3mError> {
    if seq.nrows() < 2 {
        return Err(S3mError::TooShort(seq.nrows()));
    }
    if seq.ncols() != params.feature_dim() {
        return Err(S3mError::DimMismatch {
            expected: params.feature_dim(),
            found: seq.ncols(),
        });
    }
    Ok(())
}

/// Runs the recurrence over frames `0..T-1` and decodes a prediction of the
/// next frame at every step.
pub fn forward(params: &S3mParams, seq: &DMatrix<f64>) -> Result<Forward, S3mError> {
    check(params, seq)?;
    let steps = seq.nrows() - 1;
    let inputs = seq.rows(0, steps);

    // encoder for all steps at once: (T-1) x O
    let mut states = inputs * params.enc_w.transpose();
    for mut row in states.row_iter_mut() {
        row += params.enc_b.transpose();
    }
    let mut h = DVector::zeros(params.state_dim());
    for t in 0..steps {
        let x = states.row(t).transpose();
        h = &params.transition * h + x;
        states.set_row(t, &h.transpose());
    }
    if states.iter().any(|v| !v.is_finite()) {
        return Err(S3mError::NonFinite("state"));
    }

    let mut predictions = &states * params.dec_w.transpose();
    for mut row in predictions.row_iter_mut() {
        row += params.dec_b.transpose();
    }
    if predictions.iter().any(|v| !v.is_finite()) {
        return Err(S3mError::NonFinite("prediction"));
    }
    Ok(Forward {
        states,
        predictions,
    })
}

fn residuals(fwd: &Forward, seq: &DMatrix<f64>) -> DMatrix<f64> {
    let steps = seq.nrows() - 1;
    &fwd.predictions - seq.rows(1, steps)
}

/// Squared prediction error per predicted frame, divided by `D`. Entry `t`
/// belongs to frame `t + 1` of the sequence.
pub fn temporal_score(params: &S3mParams, seq: &DMatrix<f64>) -> Result<Vec<f64>, S3mError> {
    let fwd = forward(params, seq)?;
    let d = seq.ncols() as f64;
    Ok(residuals(&fwd, seq)
        .row_iter()
        .map(|r| r.norm_squared() / d)
        .collect())
}

/// Mean squared error over all predicted frames and feature channels.
pub fn loss(params: &S3mParams, seq: &DMatrix<f64>) -> Result<f64, S3mError> {
    let fwd = forward(params, seq)?;
    let r = residuals(&fwd, seq);
    Ok(r.norm_squared() / (r.nrows() * r.ncols()) as f64)
}

/// Loss and its exact gradient, by backpropagation through the recurrence.
pub fn backward(params: &S3mParams, seq: &DMatrix<f64>) -> Result<(f64, S3mParams), S3mError> {
    let fwd = forward(params, seq)?;
    let steps = seq.nrows() - 1;
    let r = residuals(&fwd, seq);
    let n = (steps * seq.ncols()) as f64;
    let value = r.norm_squared() / n;

    // dL / d prediction
    let g = r * (2.0 / n);

    let dec_w = g.transpose() * &fwd.states;
    let dec_b = g.row_sum().transpose();

    // dL / d h_t, accumulated backwards through h_{t+1} = C h_t + x_{t+1}
    let direct = &g * &params.dec_w;
    let mut delta = DMatrix::zeros(steps, params.state_dim());
    let mut carry = DVector::zeros(params.state_dim());
    for t in (0..steps).rev() {
        let dt = direct.row(t).transpose() + params.transition.tr_mul(&carry);
        delta.set_row(t, &dt.transpose());
        carry = dt;
    }

    let mut transition = DMatrix::zeros(params.state_dim(), params.state_dim());
    if steps > 1 {
        transition = delta.rows(1, steps - 1).transpose() * fwd.states.rows(0, steps - 1);
    }
    let enc_w = delta.transpose() * seq.rows(0, steps);
    let enc_b = delta.row_sum().transpose();

    let grad = S3mParams {
        enc_w,
        enc_b,
        transition,
        dec_w,
        dec_b,
    };
    if !grad.is_finite() {
        return Err(S3mError::NonFinite("gradient"));
    }
    Ok((value, grad))
}
