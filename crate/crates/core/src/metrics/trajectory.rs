use ndarray::{Array2, ArrayView2, ArrayView3};

use crate::data::SkeletonSpec;
use crate::{Error, Result};

pub const VELOCITY_CLIP: f64 = 10.0;

/// Planar hip midpoint per frame, `(N, 2)`.
pub fn root_trajectory(seq: ArrayView3<'_, f64>, skeleton: &SkeletonSpec) -> Array2<f64> {
    let (l, r) = (skeleton.left_hip, skeleton.right_hip);
    Array2::from_shape_fn((seq.shape()[2], 2), |(f, d)| 0.5 * (seq[[l, d, f]] + seq[[r, d, f]]))
}

/// Mean step length over frames `n..N` (zero-based), each step measured from the previous frame.
pub fn trajectory_length(root: ArrayView2<'_, f64>, n: usize) -> Result<f64> {
    let total = root.nrows();
    if n == 0 || n >= total {
        return Err(Error::InvalidArgument(format!("need 0 < n < N, got n={n}, N={total}")));
    }
    let sum: f64 = (n..total)
        .map(|t| {
            let dx = root[[t, 0]] - root[[t - 1, 0]];
            let dy = root[[t, 1]] - root[[t - 1, 1]];
            (dx * dx + dy * dy).sqrt()
        })
        .sum();
    Ok(sum / (total - n) as f64)
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// 1-D Wasserstein-1 distance between two empirical distributions:
/// the integral of `|F_a⁻¹(u) − F_b⁻¹(u)|` over `u ∈ (0, 1)`.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("wasserstein1 needs two nonempty samples".into()));
    }
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len(), b.len());
    // Merge the quantile breakpoints k/na and k/nb.
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < na && j < nb {
        let next_a = (i + 1) as f64 / na as f64;
        let next_b = (j + 1) as f64 / nb as f64;
        let next = next_a.min(next_b);
        total += (next - u) * (a[i] - b[j]).abs();
        u = next;
        // Integer comparison avoids rounding when both breakpoints coincide.
        let (ca, cb) = ((i + 1) * nb, (j + 1) * na);
        if ca <= cb {
            i += 1;
        }
        if cb <= ca {
            j += 1;
        }
    }
    Ok(total)
}

/// Per-frame planar root speed in m/s (clipped), averaged over sequences.
/// Entry `f` is the speed between frames `from + f − 1` and `from + f`.
pub fn velocity_curve<'a>(
    sequences: impl IntoIterator<Item = ArrayView3<'a, f64>>,
    from: usize,
    skeleton: &SkeletonSpec,
    clip: f64,
) -> Result<Vec<f64>> {
    if from == 0 {
        return Err(Error::InvalidArgument("velocity needs a previous frame".into()));
    }
    let fps = skeleton.fps;
    let mut sum: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for seq in sequences {
        let root = root_trajectory(seq, skeleton);
        let len = root.nrows();
        if from >= len {
            return Err(Error::InvalidArgument(format!("sequence of {len} frames has no frames after {from}")));
        }
        if sum.is_empty() {
            sum = vec![0.0; len - from];
        } else if sum.len() != len - from {
            return Err(Error::Shape("velocity curves need equal-length sequences".into()));
        }
        for (k, t) in (from..len).enumerate() {
            let dx = root[[t, 0]] - root[[t - 1, 0]];
            let dy = root[[t, 1]] - root[[t - 1, 1]];
            sum[k] += ((dx * dx + dy * dy).sqrt() * fps).min(clip);
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidArgument("no sequences for the velocity curve".into()));
    }
    Ok(sum.into_iter().map(|v| v / count as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn sk() -> SkeletonSpec {
        SkeletonSpec::default()
    }

    fn walking(len: usize, step: f64) -> Array3<f64> {
        let s = sk();
        Array3::from_shape_fn((17, 3, len), |(j, d, f)| {
            let side = if j == s.left_hip { -0.1 } else if j == s.right_hip { 0.1 } else { 0.0 };
            match d {
                0 => side,
                1 => step * f as f64,
                _ => 1.0,
            }
        })
    }

    #[test]
    fn root_is_hip_midpoint() {
        let s = sk();
        let mut seq = Array3::<f64>::zeros((17, 3, 4));
        for f in 0..4 {
            seq[[s.left_hip, 0, f]] = 0.0;
            seq[[s.right_hip, 0, f]] = 2.0;
        }
        let r = root_trajectory(seq.view(), &s);
        assert!(r.rows().into_iter().all(|row| row[0] == 1.0 && row[1] == 0.0));

        let seq = Array3::from_shape_fn((17, 3, 6), |(j, d, f)| ((j * 7 + d * 3 + f) as f64 * 0.77).sin());
        let r = root_trajectory(seq.view(), &s);
        for f in 0..6 {
            for d in 0..2 {
                assert_eq!(r[[f, d]], (seq[[12, d, f]] + seq[[13, d, f]]) / 2.0);
            }
        }
    }

    #[test]
    fn lengths() {
        let s = sk();
        let still = walking(10, 0.0);
        assert_eq!(trajectory_length(root_trajectory(still.view(), &s).view(), 4).unwrap(), 0.0);
        let line = walking(10, 0.1);
        let d = trajectory_length(root_trajectory(line.view(), &s).view(), 4).unwrap();
        assert!((d - 0.1).abs() < 1e-12);
        let zig = Array2::from_shape_fn((7, 2), |(f, d)| if d == 0 { (f % 2) as f64 * 0.3 } else { 0.4 * f as f64 });
        let mut want = 0.0;
        for t in 3..7 {
            want += ((zig[[t, 0]] - zig[[t - 1, 0]]).powi(2) + (zig[[t, 1]] - zig[[t - 1, 1]]).powi(2)).sqrt();
        }
        assert!((trajectory_length(zig.view(), 3).unwrap() - want / 4.0).abs() < 1e-15);
        assert!(trajectory_length(zig.view(), 7).is_err());
    }

    #[test]
    fn wasserstein_hand_values() {
        assert_eq!(wasserstein1(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), 0.0);
        assert_eq!(wasserstein1(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(wasserstein1(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        // Unequal sizes: {0, 1} vs {0, 0.5, 1}: quantile pieces 1/3·0 + 1/6·0.5 + 1/6·0.5 + 1/3·0.
        assert!((wasserstein1(&[0.0, 1.0], &[0.0, 0.5, 1.0]).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!(wasserstein1(&[], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn wasserstein_metric_axioms(
            a in prop::collection::vec(-5.0f64..5.0, 1..8),
            b in prop::collection::vec(-5.0f64..5.0, 1..8),
            c in prop::collection::vec(-5.0f64..5.0, 1..8),
        ) {
            let ab = wasserstein1(&a, &b).unwrap();
            prop_assert!((ab - wasserstein1(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!(ab >= 0.0);
            prop_assert!(wasserstein1(&a, &a).unwrap().abs() < 1e-12);
            let bc = wasserstein1(&b, &c).unwrap();
            let ac = wasserstein1(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn equal_sizes_are_mean_sorted_difference(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..10)) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let (sa, sb) = (sorted(&a), sorted(&b));
            let want = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
            prop_assert!((wasserstein1(&a, &b).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn velocity_curves() {
        let s = sk();
        let still = velocity_curve([walking(6, 0.0).view()], 1, &s, VELOCITY_CLIP).unwrap();
        assert_eq!(still, vec![0.0; 5]);
        let walker = velocity_curve([walking(6, 1.2 / 25.0).view()], 1, &s, VELOCITY_CLIP).unwrap();
        assert!(walker.iter().all(|v| (v - 1.2).abs() < 1e-12));
        let mut jump = walking(4, 0.0);
        for j in 0..17 {
            jump[[j, 1, 3]] += 12.0 / 25.0;
        }
        let curve = velocity_curve([jump.view(), walking(4, 0.0).view()], 1, &s, VELOCITY_CLIP).unwrap();
        assert_eq!(curve, vec![0.0, 0.0, 5.0]);
    }
}
