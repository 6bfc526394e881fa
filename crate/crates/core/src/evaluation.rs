//! Accuracy of estimated effect matrices: MSE, subgroup misclassification
//! rates and ROC curves on the summed per-subject score.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Mean squared entry-wise difference.
pub fn mse(h_hat: &DMatrix<f64>, h_true: &DMatrix<f64>) -> Result<f64> {
    if h_hat.shape() != h_true.shape() {
        return Err(Error::Dimension(format!(
            "estimate is {:?} but truth is {:?}",
            h_hat.shape(),
            h_true.shape()
        )));
    }
    if h_hat.is_empty() {
        return Err(Error::DegenerateInput("empty effect matrix".into()));
    }
    let sum: f64 = h_hat.iter().zip(h_true.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / h_hat.len() as f64)
}

/// Row sums `s_i = sum_j H_ij`.
pub fn subject_scores(h: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(h.nrows(), |i, _| h.row(i).iter().sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationRates {
    pub fpr: f64,
    pub fnr: f64,
    pub tpr: f64,
}

fn check_scores(s_hat: &DVector<f64>, s_true: &DVector<f64>) -> Result<(usize, usize)> {
    if s_hat.len() != s_true.len() {
        return Err(Error::Dimension(format!(
            "{} estimated scores but {} true scores",
            s_hat.len(),
            s_true.len()
        )));
    }
    if s_hat.iter().chain(s_true.iter()).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let positives = s_true.iter().filter(|&&v| v > 0.0).count();
    let negatives = s_true.len() - positives;
    if negatives == 0 {
        return Err(Error::UndefinedRate("negative (true score <= 0)"));
    }
    if positives == 0 {
        return Err(Error::UndefinedRate("positive (true score > 0)"));
    }
    Ok((positives, negatives))
}

/// Rates of calling `s_hat > threshold` against the true sign of `s_true`.
///
/// `FPR = #{s_hat > threshold, s_true <= 0} / #{s_true <= 0}` and
/// `FNR = #{s_hat <= threshold, s_true > 0} / #{s_true > 0}`.
pub fn classification_rates(
    s_hat: &DVector<f64>,
    s_true: &DVector<f64>,
    threshold: f64,
) -> Result<ClassificationRates> {
    let (positives, negatives) = check_scores(s_hat, s_true)?;
    let mut false_pos = 0usize;
    let mut false_neg = 0usize;
    for (&est, &tru) in s_hat.iter().zip(s_true.iter()) {
        if tru > 0.0 && est <= threshold {
            false_neg += 1;
        } else if tru <= 0.0 && est > threshold {
            false_pos += 1;
        }
    }
    let fnr = false_neg as f64 / positives as f64;
    Ok(ClassificationRates {
        fpr: false_pos as f64 / negatives as f64,
        fnr,
        tpr: 1.0 - fnr,
    })
}

/// One operating point: subjects with `s_hat >= threshold` are called positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// From threshold `+inf` at `(0, 0)` down to `-inf` at `(1, 1)`.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

pub fn roc_and_auc(s_hat: &DVector<f64>, s_true: &DVector<f64>) -> Result<RocCurve> {
    let (positives, negatives) = check_scores(s_hat, s_true)?;
    let mut order: Vec<usize> = (0..s_hat.len()).collect();
    order.sort_by(|&a, &b| s_hat[b].total_cmp(&s_hat[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut k = 0;
    while k < order.len() {
        let level = s_hat[order[k]];
        while k < order.len() && s_hat[order[k]] == level {
            if s_true[order[k]] > 0.0 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let prev = *points.last().unwrap();
        let next = RocPoint {
            threshold: level,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        };
        auc += (next.fpr - prev.fpr) * (next.tpr + prev.tpr) / 2.0;
        points.push(next);
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 1.0,
        tpr: 1.0,
    });
    Ok(RocCurve { points, auc })
}

impl RocCurve {
    /// TPR at `fpr` by linear interpolation along the curve; on a vertical
    /// segment the highest TPR is returned.
    pub fn tpr_at(&self, fpr: f64) -> f64 {
        let fpr = fpr.clamp(0.0, 1.0);
        let pts = &self.points;
        let mut best = 0.0f64;
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if fpr < a.fpr || fpr > b.fpr {
                continue;
            }
            let v = if b.fpr == a.fpr {
                a.tpr.max(b.tpr)
            } else {
                a.tpr + (b.tpr - a.tpr) * (fpr - a.fpr) / (b.fpr - a.fpr)
            };
            best = best.max(v);
        }
        best
    }

    /// CSV with header `threshold,fpr,tpr`; sentinels are written as `inf`
    /// and `-inf`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["threshold", "fpr", "tpr"])?;
        for pt in &self.points {
            w.write_record([pt.threshold.to_string(), pt.fpr.to_string(), pt.tpr.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pointwise mean TPR over curves at each false-positive rate in `grid`.
pub fn vertical_average(curves: &[RocCurve], grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&f| {
            if curves.is_empty() {
                f64::NAN
            } else {
                curves.iter().map(|c| c.tpr_at(f)).sum::<f64>() / curves.len() as f64
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    /// Probability that a random positive outscores a random negative, ties
    /// counting one half.
    fn pairwise_auc(s_hat: &[f64], s_true: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &ti) in s_true.iter().enumerate() {
            for (j, &tj) in s_true.iter().enumerate() {
                if ti > 0.0 && tj <= 0.0 {
                    den += 1.0;
                    if s_hat[i] > s_hat[j] {
                        num += 1.0;
                    } else if s_hat[i] == s_hat[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn mse_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DMatrix::from_fn(7, 4, |_, _| rng.random_range(-3.0..3.0));
        let b = DMatrix::from_fn(7, 4, |_, _| rng.random_range(-3.0..3.0));
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let shifted = a.add_scalar(0.75);
        assert!((mse(&shifted, &a).unwrap() - 0.5625).abs() < 1e-12);
        let mut oracle = 0.0;
        for i in 0..7 {
            for j in 0..4 {
                oracle += (a[(i, j)] - b[(i, j)]).powi(2);
            }
        }
        assert!((mse(&a, &b).unwrap() - oracle / 28.0).abs() < 1e-12);
        assert!(mse(&a, &DMatrix::zeros(7, 3)).is_err());
    }

    #[test]
    fn scores_are_row_sums() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 2.0, 0.5]);
        assert_eq!(subject_scores(&h), v(&[0.0, 2.5]));
        assert_eq!(subject_scores(&DMatrix::zeros(3, 2)), DVector::zeros(3));
    }

    #[test]
    fn classification_examples() {
        let s = v(&[1.0, -2.0, 3.0, -0.5]);
        let r = classification_rates(&s, &s, 0.0).unwrap();
        assert_eq!((r.fpr, r.fnr, r.tpr), (0.0, 0.0, 1.0));
        let r = classification_rates(&-&s, &s, 0.0).unwrap();
        assert_eq!((r.fpr, r.fnr), (1.0, 1.0));

        // truth: + + + - - 0 ; estimates call subjects 1, 2, 4 positive.
        let s_true = v(&[2.0, 1.0, 0.5, -1.0, -2.0, 0.0]);
        let s_hat = v(&[0.3, 0.1, -0.2, 0.4, -1.0, 0.0]);
        let r = classification_rates(&s_hat, &s_true, 0.0).unwrap();
        assert!((r.fpr - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.fnr - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_class_is_reported() {
        let s = v(&[1.0, 2.0]);
        assert!(matches!(
            classification_rates(&s, &s, 0.0),
            Err(Error::UndefinedRate(c)) if c.starts_with("negative")
        ));
        let s = v(&[-1.0, 0.0]);
        assert!(matches!(roc_and_auc(&s, &s), Err(Error::UndefinedRate(c)) if c.starts_with("positive")));
    }

    #[test]
    fn auc_extremes() {
        let s = v(&[3.0, -1.0, 2.0, -4.0, 0.5]);
        assert_eq!(roc_and_auc(&s, &s).unwrap().auc, 1.0);
        assert_eq!(roc_and_auc(&-&s, &s).unwrap().auc, 0.0);
    }

    #[test]
    fn curve_shape_and_ties() {
        let s_true = v(&[1.0, -1.0, 1.0, -1.0]);
        let s_hat = v(&[0.5, 0.5, 0.2, 0.1]);
        let roc = roc_and_auc(&s_hat, &s_true).unwrap();
        let coords: Vec<(f64, f64)> = roc.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(coords, vec![(0.0, 0.0), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0), (1.0, 1.0)]);
        assert!((roc.auc - pairwise_auc(s_hat.as_slice(), s_true.as_slice())).abs() < 1e-15);
        assert_eq!(roc.points[0].threshold, f64::INFINITY);
        assert_eq!(roc.points.last().unwrap().threshold, f64::NEG_INFINITY);
    }

    #[test]
    fn independent_scores_give_chance_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let s_hat = DVector::from_fn(10_000, |_, _| rng.random_range(-1.0..1.0));
        let s_true = DVector::from_fn(10_000, |_, _| rng.random_range(-1.0..1.0));
        let auc = roc_and_auc(&s_hat, &s_true).unwrap().auc;
        assert!((auc - 0.5).abs() < 0.02, "auc {auc}");
    }

    #[test]
    fn roc_csv_header() {
        let s = v(&[1.0, -1.0]);
        let mut buf = Vec::new();
        roc_and_auc(&s, &s).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "threshold,fpr,tpr\ninf,0,0\n1,0,1\n-1,1,1\n-inf,1,1\n");
    }

    #[test]
    fn interpolation_and_averaging() {
        let s_true = v(&[1.0, -1.0, 1.0, -1.0]);
        let roc = roc_and_auc(&v(&[4.0, 3.0, 2.0, 1.0]), &s_true).unwrap();
        assert_eq!(roc.tpr_at(0.0), 0.5);
        assert_eq!(roc.tpr_at(0.5), 1.0);
        assert_eq!(roc.tpr_at(0.25), 0.5);
        assert_eq!(roc.tpr_at(0.75), 1.0);
        let perfect = roc_and_auc(&s_true, &s_true).unwrap();
        let avg = vertical_average(&[roc, perfect], &[0.0, 1.0]);
        assert_eq!(avg, vec![0.75, 1.0]);
    }

    fn scores() -> impl proptest::strategy::Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (4usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(-5.0f64..5.0, n),
                proptest::collection::vec(-5.0f64..5.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_oracle((s_hat, s_true) in scores()) {
            prop_assume!(s_true.iter().any(|&v| v > 0.0) && s_true.iter().any(|&v| v <= 0.0));
            let roc = roc_and_auc(&v(&s_hat), &v(&s_true)).unwrap();
            prop_assert!((roc.auc - pairwise_auc(&s_hat, &s_true)).abs() < 1e-12);
            for w in roc.points.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            }
            let last = roc.points.last().unwrap();
            prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        }

        #[test]
        fn auc_invariant_under_increasing_maps((s_hat, s_true) in scores(), a in 0.1f64..10.0, b in -3.0f64..3.0) {
            prop_assume!(s_true.iter().any(|&v| v > 0.0) && s_true.iter().any(|&v| v <= 0.0));
            let base = roc_and_auc(&v(&s_hat), &v(&s_true)).unwrap().auc;
            let affine = v(&s_hat).map(|x| a * x + b);
            let expo = v(&s_hat).map(f64::exp);
            prop_assert!((roc_and_auc(&affine, &v(&s_true)).unwrap().auc - base).abs() < 1e-12);
            prop_assert!((roc_and_auc(&expo, &v(&s_true)).unwrap().auc - base).abs() < 1e-12);
            let flipped = roc_and_auc(&-v(&s_hat), &v(&s_true)).unwrap().auc;
            prop_assert!((flipped - (1.0 - base)).abs() < 1e-12);
        }

        #[test]
        fn mse_permutation_invariant(seed in any::<u64>(), n in 1usize..8, m in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(n, m, |_, _| rng.random_range(-2.0..2.0));
            let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-2.0..2.0));
            let rows: Vec<usize> = (0..n).rev().collect();
            let cols: Vec<usize> = (0..m).map(|j| (j + 1) % m).collect();
            let pa = a.select_rows(&rows).select_columns(&cols);
            let pb = b.select_rows(&rows).select_columns(&cols);
            prop_assert!((mse(&a, &b).unwrap() - mse(&pa, &pb).unwrap()).abs() < 1e-12);
        }
    }
}
