use nalgebra::DVector;
use serde::Serialize;

use super::{DetectionResult, SelectionRule};
use crate::error::{Error, Result};
use crate::geometry::CoefVector;

/// `G(x, h)` and its norm at every position `x` in `h ..= n - h`.
///
/// Position `x` splits the sequence after its first `x` observations: the left
/// window is 0-based `x-h .. x`, the right window `x .. x+h`.
#[derive(Debug, Clone, Serialize)]
pub struct ScanProfile {
    pub h: usize,
    pub positions: Vec<usize>,
    pub g_vectors: Vec<CoefVector>,
    pub norms: Vec<f64>,
}

impl ScanProfile {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Norm at scan position `x`, if `x` is scanned.
    pub fn norm_at(&self, x: usize) -> Option<f64> {
        x.checked_sub(self.h).and_then(|k| self.norms.get(k).copied())
    }
}

/// A local maximizer of the scan norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Candidate {
    pub position: usize,
    pub norm: f64,
}

fn check_embedded(embedded: &[CoefVector]) -> Result<usize> {
    let dim = embedded
        .first()
        .map(CoefVector::len)
        .ok_or_else(|| Error::InvalidArgument("empty embedded sequence".into()))?;
    if let Some(bad) = embedded.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    Ok(dim)
}

fn check_bandwidth(n: usize, h: usize) -> Result<()> {
    if h == 0 {
        return Err(Error::InvalidArgument("bandwidth h must be >= 1".into()));
    }
    if n < 2 * h {
        return Err(Error::SequenceTooShort { n, h });
    }
    Ok(())
}

/// Left-window average minus right-window average at position `x`.
pub fn scan_statistic(embedded: &[CoefVector], x: usize, h: usize) -> Result<CoefVector> {
    let dim = check_embedded(embedded)?;
    let n = embedded.len();
    check_bandwidth(n, h)?;
    if x < h || x > n - h {
        return Err(Error::InvalidPosition { x, lo: h, hi: n - h });
    }
    let mut g = DVector::zeros(dim);
    for v in &embedded[x - h..x] {
        g += v.as_vector();
    }
    for v in &embedded[x..x + h] {
        g -= v.as_vector();
    }
    Ok(CoefVector::from(g / h as f64))
}

/// Scan over all valid positions with running window sums, `O(n * dim)`.
pub fn scan_profile(embedded: &[CoefVector], h: usize) -> Result<ScanProfile> {
    let dim = check_embedded(embedded)?;
    let n = embedded.len();
    check_bandwidth(n, h)?;

    let mut left = DVector::<f64>::zeros(dim);
    let mut right = DVector::<f64>::zeros(dim);
    for v in &embedded[..h] {
        left += v.as_vector();
    }
    for v in &embedded[h..2 * h] {
        right += v.as_vector();
    }

    let count = n - 2 * h + 1;
    let mut positions = Vec::with_capacity(count);
    let mut g_vectors = Vec::with_capacity(count);
    let mut norms = Vec::with_capacity(count);
    let inv_h = 1.0 / h as f64;
    for x in h..=n - h {
        if x > h {
            // slide both windows one step right
            left += embedded[x - 1].as_vector();
            left -= embedded[x - 1 - h].as_vector();
            right += embedded[x - 1 + h].as_vector();
            right -= embedded[x - 1].as_vector();
        }
        let g = (&left - &right) * inv_h;
        norms.push(g.norm());
        g_vectors.push(CoefVector::from(g));
        positions.push(x);
    }
    Ok(ScanProfile {
        h,
        positions,
        g_vectors,
        norms,
    })
}

/// Positions whose norm is at least every norm within distance `h`, sorted by
/// decreasing norm (ties by position).
///
/// Tied maximizers within `h` of each other form one plateau; only the
/// leftmost member of each plateau is reported.
pub fn local_maximizers(profile: &ScanProfile) -> Vec<Candidate> {
    let h = profile.h;
    let norms = &profile.norms;
    let len = norms.len();
    let is_max: Vec<bool> = (0..len)
        .map(|k| {
            let lo = k.saturating_sub(h);
            let hi = (k + h).min(len - 1);
            norms[lo..=hi].iter().all(|&v| v <= norms[k])
        })
        .collect();

    let mut out = Vec::new();
    for k in 0..len {
        if !is_max[k] {
            continue;
        }
        let lo = k.saturating_sub(h);
        let shadowed = (lo..k).any(|j| is_max[j] && norms[j] == norms[k]);
        if !shadowed {
            out.push(Candidate {
                position: profile.positions[k],
                norm: norms[k],
            });
        }
    }
    sort_by_strength(&mut out);
    out
}

pub(crate) fn sort_by_strength(c: &mut [Candidate]) {
    c.sort_by(|a, b| b.norm.total_cmp(&a.norm).then(a.position.cmp(&b.position)));
}

/// Keeps the candidates with `||G||^2 >= rho`.
pub fn threshold_select(candidates: &[Candidate], rho: f64, h: usize) -> DetectionResult {
    let mut kept: Vec<Candidate> = candidates
        .iter()
        .copied()
        .filter(|c| c.norm * c.norm >= rho)
        .collect();
    kept.sort_by_key(|c| c.position);
    DetectionResult::from_candidates(&kept, h, SelectionRule::Threshold { rho })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(values: &[f64]) -> Vec<CoefVector> {
        values.iter().map(|&v| CoefVector::from(vec![v])).collect()
    }

    fn step(n: usize, at: usize, lo: f64, hi: f64) -> Vec<CoefVector> {
        seq(&(0..n).map(|i| if i < at { lo } else { hi }).collect::<Vec<_>>())
    }

    #[test]
    fn flat_window_is_zero() {
        let e = seq(&[3.0; 10]);
        assert_eq!(scan_statistic(&e, 5, 3).unwrap().as_slice(), &[0.0]);
        let p = scan_profile(&e, 3).unwrap();
        assert!(p.norms.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn positions_and_errors() {
        let e = seq(&[0.0; 10]);
        let p = scan_profile(&e, 3).unwrap();
        assert_eq!(p.positions, (3..=7).collect::<Vec<_>>());
        assert!(matches!(scan_statistic(&e, 2, 3), Err(Error::InvalidPosition { .. })));
        assert!(matches!(scan_statistic(&e, 8, 3), Err(Error::InvalidPosition { .. })));
        assert!(matches!(scan_profile(&e, 6), Err(Error::SequenceTooShort { .. })));
        assert!(scan_profile(&e, 0).is_err());
        assert!(scan_profile(&[], 1).is_err());
    }

    #[test]
    fn step_gives_triangular_peak() {
        let h = 5;
        let e = step(30, 12, 0.0, 2.0);
        let p = scan_profile(&e, h).unwrap();
        for (&x, &v) in p.positions.iter().zip(&p.norms) {
            let overlap = h.saturating_sub(x.abs_diff(12)) as f64;
            assert!((v - 2.0 * overlap / h as f64).abs() < 1e-12, "x={x}");
        }
        let c = local_maximizers(&p);
        assert_eq!(c.len(), 2, "{c:?}");
        assert_eq!(c[0].position, 12);
        assert!((c[0].norm - 2.0).abs() < 1e-12);
        // the leftover zero plateau sits far from the peak
        assert_eq!(c[1].norm, 0.0);
        assert_eq!(threshold_select(&c, 1e-9, h).tau_hat, vec![12]);
    }

    #[test]
    fn statistic_is_linear() {
        let e: Vec<CoefVector> = (0..20)
            .map(|i| CoefVector::from(vec![(i as f64 * 0.7).sin(), (i as f64).cos()]))
            .collect();
        let scaled: Vec<CoefVector> = e
            .iter()
            .map(|v| CoefVector::from(v.as_vector() * -2.5))
            .collect();
        let g = scan_statistic(&e, 9, 4).unwrap();
        let gs = scan_statistic(&scaled, 9, 4).unwrap();
        assert!((gs.as_vector() - g.as_vector() * -2.5).amax() < 1e-14);
    }

    #[test]
    fn sliding_matches_direct() {
        let e: Vec<CoefVector> = (0..60)
            .map(|i| {
                let t = i as f64;
                CoefVector::from(vec![(t * 1.3).sin() * 4.0, (t * 0.2).cos() + t / 10.0, (t * t).sin()])
            })
            .collect();
        for h in [1, 3, 7, 30] {
            let p = scan_profile(&e, h).unwrap();
            for (k, &x) in p.positions.iter().enumerate() {
                let direct = scan_statistic(&e, x, h).unwrap();
                assert!((direct.as_vector() - p.g_vectors[k].as_vector()).amax() < 1e-10);
                assert_eq!(p.norm_at(x), Some(p.norms[k]));
            }
        }
    }

    #[test]
    fn plateau_keeps_leftmost() {
        let profile = ScanProfile {
            h: 2,
            positions: (2..=12).collect(),
            g_vectors: vec![CoefVector::zeros(1); 11],
            norms: vec![0.0, 1.0, 3.0, 3.0, 3.0, 3.0, 1.0, 0.0, 2.0, 0.5, 0.0],
        };
        let c = local_maximizers(&profile);
        let pos: Vec<usize> = c.iter().map(|c| c.position).collect();
        assert_eq!(pos, vec![4, 10]);
    }

    #[test]
    fn flat_zero_profile_has_no_detection() {
        let e = seq(&[1.0; 40]);
        let c = local_maximizers(&scan_profile(&e, 5).unwrap());
        assert_eq!(c.len(), 1);
        for rho in [1e-12, 1.0, 1e9] {
            assert_eq!(threshold_select(&c, rho, 5).j_hat, 0);
        }
    }

    #[test]
    fn threshold_on_squared_norm() {
        let c = vec![
            Candidate { position: 30, norm: 2.0 },
            Candidate { position: 10, norm: 1.0 },
        ];
        assert_eq!(threshold_select(&c, 4.0, 5).tau_hat, vec![30]);
        let r = threshold_select(&c, 1.0, 5);
        assert_eq!(r.tau_hat, vec![10, 30]);
        assert_eq!(r.scan_values, vec![1.0, 2.0]);
        assert_eq!(threshold_select(&c, f64::INFINITY, 5).j_hat, 0);
    }
}
