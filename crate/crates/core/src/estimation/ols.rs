//! Least squares without intercept via Householder QR.

use super::stats::two_sided_p;
use super::EstimationError;

/// Relative size below which a diagonal entry of R counts as zero.
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coef: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub rss: f64,
    /// Uncentered total sum of squares `Σ y²`.
    pub tss: f64,
    pub n_obs: usize,
    pub dof: usize,
}

impl OlsFit {
    /// Uncentered R², the usual choice for a model without intercept.
    pub fn r_squared(&self) -> f64 {
        if self.tss == 0.0 {
            if self.rss == 0.0 { 1.0 } else { 0.0 }
        } else {
            1.0 - self.rss / self.tss
        }
    }
}

/// Fits `y = X b + u`. `x` is row-major, one slice per observation, all rows
/// of equal width `k` (which may be zero).
pub fn ols(x: &[Vec<f64>], y: &[f64]) -> Result<OlsFit, EstimationError> {
    let n = y.len();
    if x.len() != n {
        return Err(EstimationError::Domain(format!("{} rows but {} responses", x.len(), n)));
    }
    let k = x.first().map_or(0, |r| r.len());
    if x.iter().any(|r| r.len() != k) {
        return Err(EstimationError::Domain("ragged regressor matrix".into()));
    }
    if n <= k {
        return Err(EstimationError::InsufficientData { n_obs: n, required: k + 1 });
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(EstimationError::Domain("non-finite value in sample".into()));
    }

    // Column-major working copy; overwritten by R above the diagonal.
    let mut a: Vec<Vec<f64>> = (0..k).map(|j| x.iter().map(|r| r[j]).collect()).collect();
    let col_norms: Vec<f64> = a.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut qty = y.to_vec();

    for j in 0..k {
        let norm = a[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if col_norms[j] == 0.0 || norm <= RANK_TOL * col_norms[j] {
            return Err(EstimationError::Degenerate(format!(
                "regressor {j} is (nearly) collinear with the others"
            )));
        }
        let alpha = if a[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[j][j..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|e| e * e).sum();
        let reflect = |col: &mut [f64]| {
            let dot: f64 = v.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            let s = 2.0 * dot / vnorm2;
            for (c, vi) in col.iter_mut().zip(&v) {
                *c -= s * vi;
            }
        };
        for col in a.iter_mut().skip(j) {
            reflect(&mut col[j..]);
        }
        reflect(&mut qty[j..]);
    }

    // Back substitution R b = Q'y (top k entries).
    let r = |i: usize, j: usize| a[j][i];
    let mut coef = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|j| r(i, j) * coef[j]).sum();
        coef[i] = (qty[i] - s) / r(i, i);
    }
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(row, yi)| {
            let fit: f64 = row.iter().zip(&coef).map(|(a, b)| a * b).sum();
            (yi - fit).powi(2)
        })
        .sum();
    let tss: f64 = y.iter().map(|v| v * v).sum();
    let dof = n - k;
    let sigma2 = rss / dof as f64;

    // diag((R'R)^-1) = row sums of squares of R^-1.
    let mut rinv = vec![vec![0.0; k]; k];
    for c in 0..k {
        for i in (0..=c).rev() {
            let rhs = if i == c { 1.0 } else { 0.0 };
            let s: f64 = (i + 1..=c).map(|j| r(i, j) * rinv[j][c]).sum();
            rinv[i][c] = (rhs - s) / r(i, i);
        }
    }
    let mut std_errors = Vec::with_capacity(k);
    let mut t_stats = Vec::with_capacity(k);
    let mut p_values = Vec::with_capacity(k);
    for i in 0..k {
        let var: f64 = rinv[i].iter().map(|v| v * v).sum::<f64>() * sigma2;
        let se = var.sqrt();
        let (t, p) = if se == 0.0 {
            // Exact fit: a nonzero coefficient is certain, a zero one is not.
            if coef[i] == 0.0 { (0.0, 1.0) } else { (f64::INFINITY.copysign(coef[i]), 0.0) }
        } else {
            let t = coef[i] / se;
            (t, two_sided_p(t, dof as f64)?)
        };
        std_errors.push(se);
        t_stats.push(t);
        p_values.push(p);
    }
    Ok(OlsFit {
        coef,
        std_errors,
        t_stats,
        p_values,
        rss,
        tss,
        n_obs: n,
        dof,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    /// Cyclic coordinate descent on the squared loss, run to convergence.
    fn coordinate_descent(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let k = x[0].len();
        let mut b = vec![0.0; k];
        let col_sq: Vec<f64> = (0..k).map(|j| x.iter().map(|r| r[j] * r[j]).sum()).collect();
        for _ in 0..200_000 {
            let mut change = 0.0f64;
            for j in 0..k {
                let partial: f64 = x
                    .iter()
                    .zip(y)
                    .map(|(r, yi)| {
                        let others: f64 = (0..k).filter(|&l| l != j).map(|l| r[l] * b[l]).sum();
                        r[j] * (yi - others)
                    })
                    .sum();
                let nb = partial / col_sq[j];
                change = change.max((nb - b[j]).abs());
                b[j] = nb;
            }
            if change < 1e-13 {
                break;
            }
        }
        b
    }

    fn fixture(seed: u64, n: usize, k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = SplitMix64::new(seed);
        let beta: Vec<f64> = (0..k).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| rng.next_standard_normal() * 3.0).collect())
            .collect();
        let y = x
            .iter()
            .map(|r| r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + rng.next_normal(0.5))
            .collect();
        (x, y)
    }

    #[test]
    fn exact_line() {
        let x: Vec<Vec<f64>> = (1..=5).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (1..=5).map(|i| 2.0 * i as f64).collect();
        let fit = ols(&x, &y).unwrap();
        assert!((fit.coef[0] - 2.0).abs() < 1e-14);
        assert!(fit.rss < 1e-20);
        assert_eq!(fit.p_values[0], 0.0);
    }

    #[test]
    fn textbook_standard_errors() {
        // y on x through the origin: b = Σxy/Σx², se² = s²/Σx².
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = [1.2, 1.9, 3.2, 3.8, 5.3, 5.9];
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let b = sxy / sxx;
        let rss: f64 = x.iter().zip(&y).map(|(a, c)| (c - b * a).powi(2)).sum();
        let se = (rss / 5.0 / sxx).sqrt();
        let rows: Vec<Vec<f64>> = x.iter().map(|v| vec![*v]).collect();
        let fit = ols(&rows, &y).unwrap();
        assert!((fit.coef[0] - b).abs() < 1e-14);
        assert!((fit.std_errors[0] - se).abs() < 1e-14);
        assert_eq!(fit.dof, 5);
    }

    #[test]
    fn collinear_columns_are_degenerate() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, 2.0 * i as f64, 1.0]).collect();
        let y: Vec<f64> = (0..12).map(|i| i as f64).collect();
        assert!(matches!(ols(&x, &y), Err(EstimationError::Degenerate(_))));
        let zero: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, 0.0]).collect();
        assert!(matches!(ols(&zero, &y), Err(EstimationError::Degenerate(_))));
    }

    #[test]
    fn too_few_rows() {
        let x = vec![vec![1.0, 2.0], vec![3.0, 1.0]];
        assert!(matches!(ols(&x, &[1.0, 2.0]), Err(EstimationError::InsufficientData { .. })));
    }

    #[test]
    fn empty_model() {
        let x = vec![Vec::new(); 4];
        let fit = ols(&x, &[1.0, -1.0, 2.0, 0.0]).unwrap();
        assert!(fit.coef.is_empty());
        assert_eq!(fit.rss, 6.0);
        assert_eq!(fit.dof, 4);
    }

    #[test]
    fn matches_coordinate_descent_on_fixtures() {
        for seed in 0..20 {
            let (x, y) = fixture(seed, 40, 3);
            let fit = ols(&x, &y).unwrap();
            let cd = coordinate_descent(&x, &y);
            for (a, b) in fit.coef.iter().zip(&cd) {
                assert!((a - b).abs() < 1e-6, "seed {seed}: {a} vs {b}");
            }
        }
    }

    proptest! {
        #[test]
        fn residuals_orthogonal_to_regressors(seed in any::<u64>(), n in 8usize..60) {
            let (x, y) = fixture(seed, n, 3);
            let fit = ols(&x, &y).unwrap();
            for j in 0..3 {
                let dot: f64 = x.iter().zip(&y).map(|(r, yi)| {
                    let res = yi - r.iter().zip(&fit.coef).map(|(a, b)| a * b).sum::<f64>();
                    res * r[j]
                }).sum();
                let scale: f64 = x.iter().map(|r| r[j].abs()).sum::<f64>() * y.iter().map(|v| v.abs()).sum::<f64>();
                prop_assert!(dot.abs() <= 1e-10 * scale.max(1.0));
            }
        }
    }
}
