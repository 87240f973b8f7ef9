use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::scan::{local_maximizers, scan_profile, ScanProfile};
use super::{DetectionResult, SelectionRule};
use crate::error::{Error, Result};
use crate::geometry::CoefVector;
use crate::model::derive_seed;

/// CV errors within this fraction of the largest entry count as tied; ties go
/// to the smaller number of change points.
pub const CV_TIE_TOL: f64 = 1e-10;

/// `CV(k)` for each candidate count that could be evaluated.
#[derive(Debug, Clone, Serialize)]
pub struct CvTable {
    pub k_values: Vec<usize>,
    pub cv_errors: Vec<f64>,
    pub folds: usize,
    pub partition_seed: u64,
    /// Why the table stops short of the requested `k_max`, if it does.
    pub truncated: Option<String>,
}

impl CvTable {
    /// Smallest `k` whose error is within the tie tolerance of the minimum.
    pub fn argmin(&self) -> usize {
        let best = self.cv_errors.iter().copied().fold(f64::INFINITY, f64::min);
        let scale = self.cv_errors.iter().copied().fold(0.0, f64::max);
        let tol = CV_TIE_TOL * scale;
        self.k_values
            .iter()
            .zip(&self.cv_errors)
            .find(|(_, &e)| e <= best + tol)
            .map(|(&k, _)| k)
            .unwrap_or(0)
    }
}

/// Fold assignment of one segment: a seeded shuffle dealt round-robin.
///
/// The shuffle is keyed by the segment bounds, so a segment shared by two
/// candidate segmentations gets the same folds in both.
fn fold_partition(start: usize, end: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let key = ((start as u64) << 32) ^ end as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, key));
    let mut idx: Vec<usize> = (start..end).collect();
    idx.shuffle(&mut rng);
    let mut parts = vec![Vec::with_capacity(idx.len() / folds + 1); folds];
    for (r, i) in idx.into_iter().enumerate() {
        parts[r % folds].push(i);
    }
    parts
}

/// Total K-fold cross-validation error of the segmentation induced by
/// `change_points` (split positions, strictly increasing, inside `1..n`).
pub fn cv_error(
    embedded: &[CoefVector],
    change_points: &[usize],
    folds: usize,
    seed: u64,
) -> Result<f64> {
    let n = embedded.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty embedded sequence".into()));
    }
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    let mut edges = Vec::with_capacity(change_points.len() + 2);
    edges.push(0);
    for &c in change_points {
        if c <= *edges.last().unwrap() || c >= n {
            return Err(Error::InvalidArgument(format!(
                "change points {change_points:?} must increase strictly within 1..{n}"
            )));
        }
        edges.push(c);
    }
    edges.push(n);

    let dim = embedded[0].len();
    let mut total = 0.0;
    for seg in edges.windows(2) {
        let (start, end) = (seg[0], seg[1]);
        let len = end - start;
        if len < folds {
            return Err(Error::InfeasibleFolds { len, folds });
        }
        let mut seg_sum = DVector::<f64>::zeros(dim);
        for v in &embedded[start..end] {
            seg_sum += v.as_vector();
        }
        for part in fold_partition(start, end, folds, seed) {
            let mut part_sum = DVector::<f64>::zeros(dim);
            for &i in &part {
                part_sum += embedded[i].as_vector();
            }
            let train_mean = (&seg_sum - part_sum) / (len - part.len()) as f64;
            for &i in &part {
                total += (&train_mean - embedded[i].as_vector()).norm_squared();
            }
        }
    }
    Ok(total)
}

/// Chooses the number of change points by minimising `CV(k)` over the top-`k`
/// local maximizers of the scan, `k = 0..=k_max`.
pub fn select_num_changes(
    embedded: &[CoefVector],
    h: usize,
    folds: usize,
    k_max: usize,
    seed: u64,
) -> Result<(DetectionResult, CvTable)> {
    let profile = scan_profile(embedded, h)?;
    select_from_profile(embedded, &profile, folds, k_max, seed)
}

pub(crate) fn select_from_profile(
    embedded: &[CoefVector],
    profile: &ScanProfile,
    folds: usize,
    k_max: usize,
    seed: u64,
) -> Result<(DetectionResult, CvTable)> {
    let candidates = local_maximizers(profile);
    let mut truncated = None;
    let top = if candidates.len() < k_max {
        truncated = Some(format!(
            "only {} local maximizers for k_max = {k_max}",
            candidates.len()
        ));
        candidates.len()
    } else {
        k_max
    };

    let mut k_values = Vec::with_capacity(top + 1);
    let mut cv_errors = Vec::with_capacity(top + 1);
    for k in 0..=top {
        let mut points: Vec<usize> = candidates[..k].iter().map(|c| c.position).collect();
        points.sort_unstable();
        match cv_error(embedded, &points, folds, seed) {
            Ok(e) => {
                k_values.push(k);
                cv_errors.push(e);
            }
            // the top-k sets are nested, so every larger k fails as well
            Err(Error::InfeasibleFolds { len, folds }) if k > 0 => {
                truncated = Some(format!(
                    "k = {k} leaves a segment of length {len} < {folds} folds"
                ));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let table = CvTable {
        k_values,
        cv_errors,
        folds,
        partition_seed: seed,
        truncated,
    };
    let k_hat = table.argmin();
    let mut chosen = candidates[..k_hat].to_vec();
    chosen.sort_by_key(|c| c.position);
    let result = DetectionResult::from_candidates(
        &chosen,
        profile.h,
        SelectionRule::CrossValidation { folds, k_max, seed },
    );
    Ok((result, table))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(values: &[f64]) -> Vec<CoefVector> {
        values.iter().map(|&v| CoefVector::from(vec![v, -v])).collect()
    }

    fn steps(n: usize, cps: &[usize], levels: &[f64]) -> Vec<CoefVector> {
        seq(&(0..n)
            .map(|i| levels[cps.partition_point(|&c| c <= i)])
            .collect::<Vec<_>>())
    }

    #[test]
    fn correct_segmentation_has_zero_error() {
        let e = steps(40, &[10, 25], &[1.0, 4.0, -2.0]);
        assert!(cv_error(&e, &[10, 25], 5, 1).unwrap() < 1e-20);
    }

    #[test]
    fn missing_change_point_costs() {
        let e = steps(20, &[10], &[0.0, 1.0]);
        let err = cv_error(&e, &[], 5, 1).unwrap();
        // every held-out point is at distance >= 1/2 * sqrt(2) from a mean
        // trained on a mixture; by hand the error is well above zero
        assert!(err > 5.0, "{err}");
    }

    #[test]
    fn hand_computed_two_fold_error() {
        // one segment [0, 2, 4, 6] with two folds: whatever the split, each
        // held-out pair is scored against the other pair's mean.
        let e: Vec<CoefVector> = [0.0, 2.0, 4.0, 6.0].iter().map(|&v| CoefVector::from(vec![v])).collect();
        let parts = fold_partition(0, 4, 2, 3);
        let mut expect = 0.0;
        for p in 0..2 {
            let other = &parts[1 - p];
            let mean = other.iter().map(|&i| e[i][0]).sum::<f64>() / 2.0;
            expect += parts[p].iter().map(|&i| (e[i][0] - mean).powi(2)).sum::<f64>();
        }
        assert!((cv_error(&e, &[], 2, 3).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn folds_are_balanced_and_cover_segment() {
        let parts = fold_partition(7, 30, 5, 42);
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (7..30).collect::<Vec<_>>());
        let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_eq!(parts, fold_partition(7, 30, 5, 42));
    }

    #[test]
    fn infeasible_and_invalid_inputs() {
        let e = seq(&[0.0; 20]);
        assert!(matches!(cv_error(&e, &[3], 5, 0), Err(Error::InfeasibleFolds { len: 3, folds: 5 })));
        assert!(cv_error(&e, &[], 1, 0).is_err());
        assert!(cv_error(&e, &[5, 5], 2, 0).is_err());
        assert!(cv_error(&e, &[20], 2, 0).is_err());
    }

    #[test]
    fn argmin_prefers_fewer_changes_on_ties() {
        let t = CvTable {
            k_values: vec![0, 1, 2, 3],
            cv_errors: vec![10.0, 2.0, 1e-30, 0.0],
            folds: 5,
            partition_seed: 0,
            truncated: None,
        };
        assert_eq!(t.argmin(), 2);
    }

    #[test]
    fn selects_true_step_count() {
        let e = steps(100, &[25, 75], &[0.0, 1.5, 3.0]);
        let (res, table) = select_num_changes(&e, 20, 5, 6, 9).unwrap();
        assert_eq!(res.tau_hat, vec![25, 75]);
        assert_eq!(res.j_hat, 2);
        assert_eq!(table.k_values.len(), table.cv_errors.len());
        assert!(table.cv_errors.iter().all(|&c| c >= 0.0));
    }

    #[test]
    fn constant_sequence_selects_zero() {
        let e = seq(&[2.0; 60]);
        let (res, table) = select_num_changes(&e, 10, 5, 5, 0).unwrap();
        assert_eq!(res.j_hat, 0);
        assert!(table.truncated.is_some());
    }
}
