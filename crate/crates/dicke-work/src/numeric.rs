//! Small numerical helpers: compensated summation and stable log-sum-exp.

/// Neumaier-compensated sum. Used wherever we add up long probability or
/// moment vectors; naive summation over ~10⁷ terms loses enough precision to
/// break the 1e-10 normalization contracts.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// log(Σ exp(x_i)) with the max subtracted first. Empty input gives -inf.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    let sum = compensated_sum(values.iter().map(|&x| (x - max).exp()));
    max + sum.ln()
}

/// As [`log_sum_exp`] but over a lazily computed sequence of known maximum.
/// Callers must pass the true maximum of the sequence.
pub fn log_sum_exp_with_max(max: f64, values: impl IntoIterator<Item = f64>) -> f64 {
    if max.is_infinite() {
        return max;
    }
    let sum = compensated_sum(values.into_iter().map(|x| (x - max).exp()));
    max + sum.ln()
}

/// Solve a small dense linear system A x = b in place by Gaussian elimination
/// with partial pivoting. Returns None if a pivot is (numerically) zero.
/// Only used for Newton steps on ≤ a handful of fit parameters.
pub fn solve_small(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
    let n = b.len();
    debug_assert!(a.len() == n && a.iter().all(|row| row.len() == n));
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot_row][col].abs() < f64::MIN_POSITIVE.sqrt() {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
        if !x[row].is_finite() {
            return None;
        }
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_beats_naive() {
        // 1 + eps/2 repeated: naive summation drops every increment.
        let n = 1_000_000;
        let tiny = f64::EPSILON / 2.0;
        let mut values = vec![1.0];
        values.extend(std::iter::repeat(tiny).take(n));
        let s = compensated_sum(values.iter().cloned());
        assert!((s - (1.0 + n as f64 * tiny)).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_matches_direct() {
        let xs = [-1.0f64, -2.0, -3.0];
        let direct = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - direct).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_extreme_scale() {
        let xs = [-1.0e4, -1.0e4 + 1.0];
        let got = log_sum_exp(&xs);
        let expect = -1.0e4 + 1.0 + (1.0 + (-1.0f64).exp()).ln();
        assert!((got - expect).abs() < 1e-10);
        assert!(got.is_finite());
    }

    #[test]
    fn solve_small_2x2() {
        let mut a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let mut b = vec![5.0, 10.0];
        let x = solve_small(&mut a, &mut b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn solve_small_singular() {
        let mut a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        let mut b = vec![1.0, 2.0];
        assert!(solve_small(&mut a, &mut b).is_none());
    }
}
