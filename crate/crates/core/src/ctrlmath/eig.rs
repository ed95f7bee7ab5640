use num_complex::Complex64;

use super::{LinalgError, Matrix};

/// Relative asymmetry accepted by the symmetric routines.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Real-part threshold below which an eigenvalue counts as stable.
pub const HURWITZ_MARGIN: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 100;
const QR_MAX_ITERATIONS: usize = 60;

/// All eigenvalues of a symmetric matrix in ascending order.
///
/// Closed form for n ≤ 2, cyclic Jacobi rotations above that.
pub fn sym_eigenvalues(p: &Matrix) -> Result<Vec<f64>, LinalgError> {
    check_symmetric(p)?;
    let n = p.rows();
    let mut eig = match n {
        1 => vec![p[(0, 0)]],
        2 => {
            let (a, b, c) = (p[(0, 0)], 0.5 * (p[(0, 1)] + p[(1, 0)]), p[(1, 1)]);
            let mean = 0.5 * (a + c);
            let radius = (0.5 * (a - c)).hypot(b);
            vec![mean - radius, mean + radius]
        }
        _ => jacobi(&p.symmetrized()),
    };
    eig.sort_by(|a, b| a.total_cmp(b));
    Ok(eig)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_eig_extremes(p: &Matrix) -> Result<(f64, f64), LinalgError> {
    let eig = sym_eigenvalues(p)?;
    Ok((eig[0], eig[eig.len() - 1]))
}

fn check_symmetric(p: &Matrix) -> Result<(), LinalgError> {
    if !p.is_square() {
        return Err(LinalgError::NotSquare {
            rows: p.rows(),
            cols: p.cols(),
        });
    }
    let asym = p.relative_asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(LinalgError::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

fn jacobi(p: &Matrix) -> Vec<f64> {
    let n = p.rows();
    let mut a = p.clone();
    let total: f64 = a.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= f64::EPSILON * total * 1e-2 || off == 0.0 {
            break;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let apq = a[(i, j)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(j, j)] - a[(i, i)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let aki = a[(k, i)];
                    let akj = a[(k, j)];
                    a[(k, i)] = c * aki - s * akj;
                    a[(k, j)] = s * aki + c * akj;
                }
                for k in 0..n {
                    let aik = a[(i, k)];
                    let ajk = a[(j, k)];
                    a[(i, k)] = c * aik - s * ajk;
                    a[(j, k)] = s * aik + c * ajk;
                }
            }
        }
    }
    (0..n).map(|i| a[(i, i)]).collect()
}

/// Eigenvalues of a general real square matrix.
///
/// Reduces to upper Hessenberg form by stabilized elimination, then runs
/// the shifted double-step QR iteration.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<Complex64>, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let n = a.rows();
    if n == 1 {
        return Ok(vec![Complex64::new(a[(0, 0)], 0.0)]);
    }
    // 1-based working copy keeps the index arithmetic of the classic algorithm.
    let mut h = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            h[i + 1][j + 1] = a[(i, j)];
        }
    }
    hessenberg(&mut h, n);
    for i in 3..=n {
        for j in 1..=(i - 2) {
            h[i][j] = 0.0;
        }
    }
    hqr(&mut h, n)
}

fn hessenberg(a: &mut [Vec<f64>], n: usize) {
    for m in 2..n {
        let mut x: f64 = 0.0;
        let mut i = m;
        for j in m..=n {
            if a[j][m - 1].abs() > x.abs() {
                x = a[j][m - 1];
                i = j;
            }
        }
        if i != m {
            for j in (m - 1)..=n {
                let tmp = a[i][j];
                a[i][j] = a[m][j];
                a[m][j] = tmp;
            }
            for row in a.iter_mut().skip(1) {
                row.swap(i, m);
            }
        }
        if x != 0.0 {
            for i in (m + 1)..=n {
                let mut y = a[i][m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i][m - 1] = y;
                    for j in m..=n {
                        a[i][j] -= y * a[m][j];
                    }
                    for row in a.iter_mut().skip(1) {
                        row[m] += y * row[i];
                    }
                }
            }
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

#[allow(clippy::many_single_char_names)]
// The shift variables carry over between sweeps exactly as in the reference
// algorithm, so several initial values are overwritten before first use.
#[allow(unused_assignments)]
fn hqr(a: &mut [Vec<f64>], n: usize) -> Result<Vec<Complex64>, LinalgError> {
    let mut wr = vec![0.0; n + 1];
    let mut wi = vec![0.0; n + 1];
    let mut anorm = 0.0;
    for i in 1..=n {
        for j in (i.max(2) - 1)..=n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n;
    let mut t = 0.0;
    let (mut p, mut q, mut r) = (0.0, 0.0, 0.0);
    let (mut x, mut y, mut z, mut w) = (0.0, 0.0, 0.0, 0.0);
    while nn >= 1 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l >= 2 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            x = a[nn][nn];
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = 0.0;
                nn -= 1;
            } else {
                y = a[nn - 1][nn - 1];
                w = a[nn][nn - 1] * a[nn - 1][nn];
                if l == nn - 1 {
                    p = 0.5 * (y - x);
                    q = p * p + w;
                    z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        z = p + sign(z, p);
                        wr[nn - 1] = x + z;
                        wr[nn] = x + z;
                        if z != 0.0 {
                            wr[nn] = x - w / z;
                        }
                        wi[nn - 1] = 0.0;
                        wi[nn] = 0.0;
                    } else {
                        wr[nn - 1] = x + p;
                        wr[nn] = x + p;
                        wi[nn - 1] = -z;
                        wi[nn] = z;
                    }
                    nn -= 2;
                } else {
                    if its == QR_MAX_ITERATIONS {
                        return Err(LinalgError::NoConvergence);
                    }
                    if its == 10 || its == 20 {
                        t += x;
                        for i in 1..=nn {
                            a[i][i] -= x;
                        }
                        let s = a[nn][nn - 1].abs() + a[nn - 1][nn - 2].abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;
                    let mut m = nn - 2;
                    loop {
                        z = a[m][m];
                        r = x - z;
                        let s = y - z;
                        p = (r * s - w) / a[m + 1][m] + a[m][m + 1];
                        q = a[m + 1][m + 1] - z - r - s;
                        r = a[m + 2][m + 1];
                        let s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                        let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in (m + 2)..=nn {
                        a[i][i - 2] = 0.0;
                        if i != m + 2 {
                            a[i][i - 3] = 0.0;
                        }
                    }
                    let mut k = m;
                    while k + 1 <= nn {
                        if k != m {
                            p = a[k][k - 1];
                            q = a[k + 1][k - 1];
                            r = 0.0;
                            if k != nn - 1 {
                                r = a[k + 2][k - 1];
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        let s = sign((p * p + q * q + r * r).sqrt(), p);
                        if s != 0.0 {
                            if k == m {
                                if l != m {
                                    a[k][k - 1] = -a[k][k - 1];
                                }
                            } else {
                                a[k][k - 1] = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nn {
                                p = a[k][j] + q * a[k + 1][j];
                                if k != nn - 1 {
                                    p += r * a[k + 2][j];
                                    a[k + 2][j] -= p * z;
                                }
                                a[k + 1][j] -= p * y;
                                a[k][j] -= p * x;
                            }
                            let mmin = if nn < k + 3 { nn } else { k + 3 };
                            for i in l..=mmin {
                                p = x * a[i][k] + y * a[i][k + 1];
                                if k != nn - 1 {
                                    p += z * a[i][k + 2];
                                    a[i][k + 2] -= p * r;
                                }
                                a[i][k + 1] -= p * q;
                                a[i][k] -= p;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if nn < 2 || l + 1 >= nn {
                break;
            }
        }
    }
    Ok((1..=n).map(|i| Complex64::new(wr[i], wi[i])).collect())
}

/// True iff every eigenvalue has real part below `-HURWITZ_MARGIN`.
pub fn is_hurwitz(a: &Matrix) -> bool {
    if !a.is_square() || a.as_slice().iter().any(|v| !v.is_finite()) {
        return false;
    }
    match eigenvalues(a) {
        Ok(eig) => eig.iter().all(|l| l.re < -HURWITZ_MARGIN),
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn extremes_of_lyapunov_solution() {
        let (lo, hi) = sym_eig_extremes(&m(&[&[1.5, 0.5], &[0.5, 0.5]])).unwrap();
        // roots of λ² − 2λ + 0.5
        assert!((lo - (1.0 - 0.5f64.sqrt())).abs() < 1e-15);
        assert!((hi - (1.0 + 0.5f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn extremes_trivial_cases() {
        assert_eq!(sym_eig_extremes(&Matrix::identity(2)).unwrap(), (1.0, 1.0));
        assert_eq!(sym_eig_extremes(&Matrix::diag(&[0.5, 0.25])).unwrap(), (0.25, 0.5));
    }

    #[test]
    fn asymmetric_input_rejected() {
        let r = sym_eig_extremes(&m(&[&[1.0, 0.1], &[0.0, 1.0]]));
        assert!(matches!(r, Err(LinalgError::NotSymmetric { .. })));
    }

    #[test]
    fn jacobi_on_3x3() {
        // eigenvalues 2 - √2, 2, 2 + √2
        let p = m(&[&[2.0, -1.0, 0.0], &[-1.0, 2.0, -1.0], &[0.0, -1.0, 2.0]]);
        let eig = sym_eigenvalues(&p).unwrap();
        let s = 2.0f64.sqrt();
        for (got, want) in eig.iter().zip([2.0 - s, 2.0, 2.0 + s]) {
            assert!((got - want).abs() < 1e-13, "{got} vs {want}");
        }
    }

    #[test]
    fn hurwitz_examples() {
        assert!(is_hurwitz(&m(&[&[0.0, 1.0], &[-1.0, -2.0]])));
        assert!(!is_hurwitz(&m(&[&[0.0, 1.0], &[0.0, 0.0]])));
        assert!(is_hurwitz(&m(&[&[-1.0]])));
        assert!(!is_hurwitz(&m(&[&[0.0, 1.0], &[-1.0, 0.0]])));
    }

    #[test]
    fn complex_pair_from_qr() {
        // companion of s³ + 3s² + 4s + 2 = (s + 1)(s² + 2s + 2)
        let a = m(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[-2.0, -4.0, -3.0]]);
        let mut eig = eigenvalues(&a).unwrap();
        eig.sort_by(|a, b| a.im.total_cmp(&b.im));
        assert!((eig[0] - Complex64::new(-1.0, -1.0)).norm() < 1e-12);
        assert!((eig[1] - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
        assert!((eig[2] - Complex64::new(-1.0, 1.0)).norm() < 1e-12);
    }
}
