use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use super::DataToolError;
use crate::data::Dataset;

/// Fleiss' kappa for `items × raters` categorical ratings. Every row must
/// have the same number (≥ 2) of ratings. When all ratings fall in a single
/// category, agreement is perfect and the result is 1.
pub fn fleiss_kappa<T: Eq + Hash>(ratings: &[Vec<T>]) -> Result<f64, DataToolError> {
    let Some(first) = ratings.first() else {
        return Err(DataToolError::InvalidArgument("no items to rate".into()));
    };
    let r = first.len();
    if r < 2 {
        return Err(DataToolError::InvalidArgument("need at least two raters".into()));
    }
    if let Some(item) = ratings.iter().position(|row| row.len() != r) {
        return Err(DataToolError::MissingCell { item });
    }
    let mut totals: HashMap<&T, usize> = HashMap::new();
    let mut p_bar = 0.0;
    for row in ratings {
        let mut counts: HashMap<&T, usize> = HashMap::new();
        for v in row {
            *counts.entry(v).or_default() += 1;
            *totals.entry(v).or_default() += 1;
        }
        let agree: usize = counts.values().map(|c| c * c).sum();
        p_bar += (agree - r) as f64 / (r * (r - 1)) as f64;
    }
    let n = ratings.len();
    p_bar /= n as f64;
    let total = (n * r) as f64;
    let mut shares: Vec<usize> = totals.into_values().collect();
    shares.sort_unstable();
    let p_e: f64 = shares.iter().map(|&c| (c as f64 / total).powi(2)).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionAgreement {
    pub kappa: f64,
    /// Ratings per category value, keyed by the value as text.
    pub category_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub items: usize,
    pub raters: usize,
    pub sufficiency: DimensionAgreement,
    pub necessity: DimensionAgreement,
    pub salient: DimensionAgreement,
}

fn dimension(rows: Vec<Vec<String>>) -> Result<DimensionAgreement, DataToolError> {
    let mut category_counts = BTreeMap::new();
    for v in rows.iter().flatten() {
        *category_counts.entry(v.clone()).or_default() += 1;
    }
    Ok(DimensionAgreement {
        kappa: fleiss_kappa(&rows)?,
        category_counts,
    })
}

/// Per-dimension kappa from the per-annotator labels of every record.
pub fn agreement_report(dataset: &Dataset) -> Result<AgreementReport, DataToolError> {
    let mut rows = Vec::with_capacity(dataset.len());
    for (item, r) in dataset.records.iter().enumerate() {
        rows.push(r.annotators.as_ref().ok_or(DataToolError::MissingCell { item })?);
    }
    let pick = |f: &dyn Fn(&crate::data::AnnotatorLabel) -> String| -> Vec<Vec<String>> {
        rows.iter().map(|row| row.iter().map(f).collect()).collect()
    };
    Ok(AgreementReport {
        items: rows.len(),
        raters: rows.first().map_or(0, |r| r.len()),
        sufficiency: dimension(pick(&|a| a.sufficiency.to_string()))?,
        necessity: dimension(pick(&|a| a.necessity.to_string()))?,
        salient: dimension(pick(&|a| a.salient.to_string()))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub n: usize,
    /// Slopes in predictor order, then the intercept.
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_p_values: Vec<f64>,
    pub r_squared: f64,
    pub f_statistic: f64,
    pub f_p_value: f64,
}

impl RegressionReport {
    pub fn intercept(&self) -> f64 {
        *self.coefficients.last().expect("intercept present")
    }
}

/// Ordinary least squares of `y` on the given predictors plus an intercept,
/// solved through a QR decomposition. A constant `y` yields zero slopes and
/// R² = 0. Without residual degrees of freedom, p-values are NaN.
pub fn ols(predictors: &[Vec<f64>], y: &[f64]) -> Result<RegressionReport, DataToolError> {
    let n = y.len();
    let k = predictors.len() + 1;
    for p in predictors {
        if p.len() != n {
            return Err(DataToolError::LengthMismatch { left: p.len(), right: n });
        }
    }
    if n < k {
        return Err(DataToolError::InvalidArgument(format!("{n} observations for {k} coefficients")));
    }
    if y.iter().chain(predictors.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(DataToolError::InvalidArgument("non-finite value in regression input".into()));
    }
    let x = DMatrix::from_fn(n, k, |i, j| if j < k - 1 { predictors[j][i] } else { 1.0 });
    let yv = DVector::from_column_slice(y);
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|j| x.column(j).norm()).fold(0.0, f64::max);
    if (0..k).any(|j| r[(j, j)].abs() <= 1e-10 * scale.max(1.0)) {
        return Err(DataToolError::RankDeficient);
    }
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(DataToolError::RankDeficient)?;
    let mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let residuals = &yv - &x * &beta;
    let sse = residuals.norm_squared();
    let df = (n - k) as f64;

    let mut coefficients: Vec<f64> = beta.iter().copied().collect();
    if sst == 0.0 {
        coefficients = vec![0.0; k];
        coefficients[k - 1] = mean;
    }
    let r_squared = if sst == 0.0 { 0.0 } else { (1.0 - sse / sst).clamp(0.0, 1.0) };

    let r_inv = r.clone().try_inverse().ok_or(DataToolError::RankDeficient)?;
    let cov_unscaled = &r_inv * r_inv.transpose();
    let sigma2 = if df > 0.0 { sse / df } else { f64::NAN };
    let std_errors: Vec<f64> = (0..k).map(|j| (sigma2 * cov_unscaled[(j, j)]).sqrt()).collect();
    let t_p_values = coefficients
        .iter()
        .zip(&std_errors)
        .map(|(&b, &se)| {
            if df <= 0.0 {
                f64::NAN
            } else if se == 0.0 {
                if b == 0.0 { 1.0 } else { 0.0 }
            } else {
                let dist = StudentsT::new(0.0, 1.0, df).expect("positive df");
                2.0 * dist.sf((b / se).abs())
            }
        })
        .collect();
    let df_model = (k - 1) as f64;
    let (f_statistic, f_p_value) = if df <= 0.0 || sst == 0.0 {
        (f64::NAN, f64::NAN)
    } else if sse == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = ((sst - sse) / df_model) / (sse / df);
        let dist = FisherSnedecor::new(df_model, df).expect("positive df");
        (f, dist.sf(f.max(0.0)))
    };
    Ok(RegressionReport {
        n,
        coefficients,
        std_errors,
        t_p_values,
        r_squared,
        f_statistic,
        f_p_value,
    })
}

/// Regresses the salient label on sufficiency and necessity.
pub fn regression_fit(dataset: &Dataset) -> Result<RegressionReport, DataToolError> {
    let mut suf = Vec::new();
    let mut nec = Vec::new();
    let mut y = Vec::new();
    for r in &dataset.records {
        match (r.sufficiency, r.necessity, r.salient) {
            (Some(s), Some(n), Some(l)) => {
                suf.push(s);
                nec.push(n);
                y.push(f64::from(l));
            }
            _ => return Err(DataToolError::Unlabeled(dataset.name.clone())),
        }
    }
    if y.len() < 3 {
        return Err(DataToolError::InvalidArgument("regression needs at least 3 records".into()));
    }
    ols(&[suf, nec], &y)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, DataToolError> {
    if x.len() != y.len() {
        return Err(DataToolError::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(DataToolError::InvalidArgument("need at least two observations".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(DataToolError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(DataToolError::ZeroVariance("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of the average-rank vectors.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64, DataToolError> {
    if x.len() != y.len() {
        return Err(DataToolError::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(DataToolError::InvalidArgument("non-finite value".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn kappa_frozen_table() {
        let table = vec![vec![0, 0, 0], vec![0, 1, 1], vec![1, 1, 2], vec![2, 2, 2], vec![0, 2, 1]];
        assert!((fleiss_kappa(&table).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn kappa_perfect_and_errors() {
        assert_eq!(fleiss_kappa(&[vec!["a", "a"], vec!["b", "b"]]).unwrap(), 1.0);
        assert_eq!(fleiss_kappa(&[vec!["a", "a"], vec!["a", "a"]]).unwrap(), 1.0);
        assert!(matches!(fleiss_kappa(&[vec![1, 1], vec![1]]), Err(DataToolError::MissingCell { item: 1 })));
        assert!(fleiss_kappa(&[vec![1]]).is_err());
    }

    #[test]
    fn kappa_near_zero_for_random_ratings() {
        let mut rng = crate::rng::substream(11, "kappa");
        let rows: Vec<Vec<u8>> = (0..1000).map(|_| (0..3).map(|_| rng.random_range(0..2)).collect()).collect();
        assert!(fleiss_kappa(&rows).unwrap().abs() < 0.1);
    }

    #[test]
    fn noiseless_recovery() {
        let suf: Vec<f64> = (0..30).map(|i| [0.0, 0.5, 1.0][i % 3]).collect();
        let nec: Vec<f64> = (0..30).map(|i| [0.0, 0.5, 1.0][(i / 3) % 3]).collect();
        let y: Vec<f64> = suf.iter().zip(&nec).map(|(s, n)| 0.62 * s + 0.39 * n).collect();
        let r = ols(&[suf, nec], &y).unwrap();
        assert!((r.coefficients[0] - 0.62).abs() < 1e-9);
        assert!((r.coefficients[1] - 0.39).abs() < 1e-9);
        assert!(r.intercept().abs() < 1e-9);
        assert!((r.r_squared - 1.0).abs() < 1e-6);
    }

    #[test]
    fn regression_degenerate_cases() {
        let a = vec![0.0, 0.5, 1.0, 1.0];
        let b = vec![1.0, 0.0, 0.5, 1.0];
        let r = ols(&[a.clone(), b.clone()], &[1.0; 4]).unwrap();
        assert_eq!(r.r_squared, 0.0);
        assert_eq!(&r.coefficients[..2], &[0.0, 0.0]);
        assert!(matches!(ols(&[vec![0.5; 4], vec![1.0; 4]], &[0.0, 1.0, 0.0, 1.0]), Err(DataToolError::RankDeficient)));
        let noisy = ols(&[a, b], &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((0.0..=1.0).contains(&noisy.r_squared));
        assert!(noisy.t_p_values.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman_rho(&x, &[2.0, 4.0, 8.0, 16.0, 32.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman_rho(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(spearman_rho(&x, &[1.0; 5]), Err(DataToolError::ZeroVariance(_))));
        assert!(spearman_rho(&x, &[1.0]).is_err());
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }

    proptest! {
        #[test]
        fn spearman_monotone_invariance(x in prop::collection::vec(-50i32..50, 3..40), y in prop::collection::vec(-50i32..50, 3..40)) {
            let n = x.len().min(y.len());
            let x: Vec<f64> = x[..n].iter().map(|&v| v as f64).collect();
            let y: Vec<f64> = y[..n].iter().map(|&v| v as f64).collect();
            if let Ok(rho) = spearman_rho(&x, &y) {
                let tx: Vec<f64> = x.iter().map(|v| (v / 10.0).exp()).collect();
                let ty: Vec<f64> = y.iter().map(|v| v * 3.0 - 1.0).collect();
                prop_assert!((spearman_rho(&tx, &ty).unwrap() - rho).abs() < 1e-12);
            }
        }

        #[test]
        fn kappa_relabeling_invariant(rows in prop::collection::vec(prop::collection::vec(0u8..3, 3), 2..30)) {
            let relabeled: Vec<Vec<u8>> = rows.iter().map(|r| r.iter().map(|v| (v + 1) % 3 + 10).collect()).collect();
            prop_assert!((fleiss_kappa(&rows).unwrap() - fleiss_kappa(&relabeled).unwrap()).abs() < 1e-12);
        }
    }
}
