use nalgebra::DMatrix;

/// HiPPO-LegS state matrix (sign convention `x' = A x`):
/// `A[n][k] = -sqrt(2n+1) sqrt(2k+1)` below the diagonal, `-(n+1)` on it,
/// zero above.
pub fn hippo_legs(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |row, col| {
        if row > col {
            -((2 * row + 1) as f64).sqrt() * ((2 * col + 1) as f64).sqrt()
        } else if row == col {
            -((row + 1) as f64)
        } else {
            0.0
        }
    })
}

/// Forward-Euler discretization `I + dt * A`.
pub fn hippo_transition(n: usize, dt: f64) -> DMatrix<f64> {
    DMatrix::identity(n, n) + hippo_legs(n) * dt
}
