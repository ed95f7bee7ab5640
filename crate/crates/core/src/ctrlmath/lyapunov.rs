use super::{eigenvalues, is_hurwitz, solve_linear, sym_eig_extremes, LinalgError, Matrix};

/// Solves `AᵀP + PA = −I` for a Hurwitz `A`.
///
/// The equation is vectorized into an n²×n² linear system and solved
/// directly; the result is symmetrized. Intended for the small state
/// dimensions of the control design (n ≤ 10).
pub fn solve_lyapunov(a: &Matrix) -> Result<Matrix, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if !is_hurwitz(a) {
        let eig = eigenvalues(a)
            .map(|e| e.iter().map(|l| (l.re, l.im)).collect())
            .unwrap_or_default();
        return Err(LinalgError::NotHurwitz { eigenvalues: eig });
    }
    let n = a.rows();
    let dim = n * n;
    // Unknown P[k][l] sits at column k*n + l; equation (i, j) at row i*n + j:
    //   Σ_k A[k][i] P[k][j] + Σ_l P[i][l] A[l][j] = −δ_ij
    let mut system = Matrix::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for k in 0..n {
                system[(row, k * n + j)] += a[(k, i)];
                system[(row, i * n + k)] += a[(k, j)];
            }
        }
    }
    let rhs: Vec<f64> = (0..dim)
        .map(|idx| if idx / n == idx % n { -1.0 } else { 0.0 })
        .collect();
    let vec_p = solve_linear(&system, &rhs)?;
    let p = Matrix::new(n, n, vec_p)?.symmetrized();
    let (lambda_min, _) = sym_eig_extremes(&p)?;
    if lambda_min <= 0.0 {
        // Cannot happen for a Hurwitz input unless the solve lost all accuracy.
        return Err(LinalgError::SingularSystem { pivot: lambda_min });
    }
    Ok(p)
}

/// ‖AᵀP + PA + I‖_∞, the residual of the Lyapunov equation.
pub fn lyapunov_residual(a: &Matrix, p: &Matrix) -> f64 {
    let lhs = a
        .transpose()
        .matmul(p)
        .and_then(|ap| p.matmul(a).and_then(|pa| ap.add(&pa)))
        .and_then(|s| s.add(&Matrix::identity(a.rows())))
        .expect("shapes checked by caller");
    lhs.norm_inf()
}
