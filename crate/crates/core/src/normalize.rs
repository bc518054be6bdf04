//! Person-centric planar normalization and per-channel min-max scaling.

use ndarray::{s, Array2, Array3, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::bps::{encode_scene, BasisPointSet};
use crate::data::{MultiPersonWindow, SkeletonSpec};
use crate::{Error, Result};

/// Rotation about z by `angle`, then translation in the x-y plane. z is untouched.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform2D {
    pub angle: f64,
    pub translation: [f64; 2],
}

impl AffineTransform2D {
    pub fn identity() -> Self {
        Self {
            angle: 0.0,
            translation: [0.0, 0.0],
        }
    }

    pub fn new(angle: f64, translation: [f64; 2]) -> Self {
        Self { angle, translation }
    }

    pub fn apply_xy(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        (
            c * x - s * y + self.translation[0],
            s * x + c * y + self.translation[1],
        )
    }

    pub fn invert_xy(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.translation[0], y - self.translation[1]);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    pub fn inverse(&self) -> Self {
        let (s, c) = self.angle.sin_cos();
        let [tx, ty] = self.translation;
        Self {
            angle: -self.angle,
            translation: [-(c * tx + s * ty), s * tx - c * ty],
        }
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &AffineTransform2D) -> Self {
        let (tx, ty) = self.apply_xy(first.translation[0], first.translation[1]);
        Self {
            angle: self.angle + first.angle,
            translation: [tx, ty],
        }
    }

    /// Apply to a `(J, 3, N)` sequence.
    pub fn apply(&self, seq: ArrayView3<'_, f64>) -> Array3<f64> {
        self.map_xy(seq, |x, y| self.apply_xy(x, y))
    }

    pub fn invert(&self, seq: ArrayView3<'_, f64>) -> Array3<f64> {
        self.map_xy(seq, |x, y| self.invert_xy(x, y))
    }

    fn map_xy(&self, seq: ArrayView3<'_, f64>, f: impl Fn(f64, f64) -> (f64, f64)) -> Array3<f64> {
        let mut out = seq.to_owned();
        let (j, _, n) = seq.dim();
        for k in 0..j {
            for t in 0..n {
                let (x, y) = f(seq[[k, 0, t]], seq[[k, 1, t]]);
                out[[k, 0, t]] = x;
                out[[k, 1, t]] = y;
            }
        }
        out
    }
}

/// Transform that puts the hip midpoint at `frame` on the origin with the
/// left hip on −x and the right hip on +x, so the person faces +y.
pub fn fit_norm(
    seq: ArrayView3<'_, f64>,
    frame: usize,
    skeleton: &SkeletonSpec,
) -> Result<AffineTransform2D> {
    if frame >= seq.dim().2 {
        return Err(Error::InvalidArgument(format!(
            "frame {frame} outside sequence of {} frames",
            seq.dim().2
        )));
    }
    let (l, r) = (skeleton.left_hip, skeleton.right_hip);
    let lx = seq[[l, 0, frame]];
    let ly = seq[[l, 1, frame]];
    let rx = seq[[r, 0, frame]];
    let ry = seq[[r, 1, frame]];
    if ![lx, ly, rx, ry].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("hip joints at frame {frame}")));
    }
    let (dx, dy) = (rx - lx, ry - ly);
    let angle = if dx == 0.0 && dy == 0.0 { 0.0 } else { -dy.atan2(dx) };
    let (mx, my) = (0.5 * (lx + rx), 0.5 * (ly + ry));
    let rotated = AffineTransform2D::new(angle, [0.0, 0.0]).apply_xy(mx, my);
    Ok(AffineTransform2D::new(angle, [-rotated.0, -rotated.1]))
}

pub fn apply_norm(t: &AffineTransform2D, seq: ArrayView3<'_, f64>) -> Array3<f64> {
    t.apply(seq)
}

pub fn invert_norm(t: &AffineTransform2D, seq: ArrayView3<'_, f64>) -> Array3<f64> {
    t.invert(seq)
}

/// One training/inference datapoint seen from person `i`.
#[derive(Clone, Debug)]
pub struct Datapoint {
    /// Primary sequence `(J, 3, N)` in its own normalized frame.
    pub x: Array3<f64>,
    /// Other persons `(P-1, J, 3, N)` under the primary's transform, window order.
    pub others: Array4<f64>,
    /// Scene encoding `(G, B + 13)` under the primary's transform.
    pub scene: Array2<f64>,
    pub presence: Vec<bool>,
    pub input_len: usize,
    pub transform: AffineTransform2D,
}

pub fn build_datapoint(
    window: &MultiPersonWindow,
    i: usize,
    basis: &BasisPointSet,
    skeleton: &SkeletonSpec,
) -> Result<Datapoint> {
    let p = window.person_count();
    if i >= p {
        return Err(Error::InvalidArgument(format!("person {i} not in window of {p}")));
    }
    let (_, j, _, n_total) = window.positions.dim();
    let transform = fit_norm(window.person(i), window.input_len - 1, skeleton)?;
    let x = transform.apply(window.person(i));
    let mut others = Array4::zeros((p - 1, j, 3, n_total));
    for (slot, k) in (0..p).filter(|&k| k != i).enumerate() {
        others
            .slice_mut(s![slot, .., .., ..])
            .assign(&transform.apply(window.person(k)));
    }
    let scene = encode_scene(&window.scene, basis, Some(&transform))?.to_matrix(basis.len());
    Ok(Datapoint {
        x,
        others,
        scene,
        presence: window.presence.row(i).to_vec(),
        input_len: window.input_len,
        transform,
    })
}

pub const SCALE_BOUND: f64 = 3.0;
const DEGENERATE_WIDEN: f64 = 1e-6;

/// Per `(joint, axis)` min-max scaler onto `[-3, 3]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub joints: usize,
    /// Row-major `(J, 3)`.
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    /// Fit over every frame of every `(J, 3, N)` training sequence.
    pub fn fit<'a>(sequences: impl IntoIterator<Item = ArrayView3<'a, f64>>) -> Result<Self> {
        let mut min: Option<Array2<f64>> = None;
        let mut max: Option<Array2<f64>> = None;
        for seq in sequences {
            let lo = seq.fold_axis(Axis(2), f64::INFINITY, |a, b| a.min(*b));
            let hi = seq.fold_axis(Axis(2), f64::NEG_INFINITY, |a, b| a.max(*b));
            match (&mut min, &mut max) {
                (Some(m), Some(mx)) => {
                    if m.dim() != lo.dim() {
                        return Err(Error::Shape(format!(
                            "training sequences disagree on joints: {:?} vs {:?}",
                            m.dim(),
                            lo.dim()
                        )));
                    }
                    m.zip_mut_with(&lo, |a, b| *a = a.min(*b));
                    mx.zip_mut_with(&hi, |a, b| *a = a.max(*b));
                }
                _ => {
                    min = Some(lo);
                    max = Some(hi);
                }
            }
        }
        let (mut min, mut max) = match (min, max) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::InvalidArgument("min-max fit needs at least one sequence".into())),
        };
        if min.iter().chain(max.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training sequences".into()));
        }
        for (lo, hi) in min.iter_mut().zip(max.iter_mut()) {
            if *hi <= *lo {
                *lo -= DEGENERATE_WIDEN;
                *hi += DEGENERATE_WIDEN;
            }
        }
        Ok(Self {
            joints: min.nrows(),
            min: min.into_raw_vec_and_offset().0,
            max: max.into_raw_vec_and_offset().0,
        })
    }

    fn channel(&self, j: usize, d: usize) -> (f64, f64) {
        (self.min[j * 3 + d], self.max[j * 3 + d])
    }

    pub fn scale_value(&self, j: usize, d: usize, v: f64) -> f64 {
        let (lo, hi) = self.channel(j, d);
        (v - lo) / (hi - lo) * (2.0 * SCALE_BOUND) - SCALE_BOUND
    }

    pub fn unscale_value(&self, j: usize, d: usize, v: f64) -> f64 {
        let (lo, hi) = self.channel(j, d);
        (v + SCALE_BOUND) / (2.0 * SCALE_BOUND) * (hi - lo) + lo
    }

    pub fn scale(&self, seq: ArrayView3<'_, f64>) -> Array3<f64> {
        Array3::from_shape_fn(seq.dim(), |(j, d, t)| self.scale_value(j, d, seq[[j, d, t]]))
    }

    pub fn unscale(&self, seq: ArrayView3<'_, f64>) -> Array3<f64> {
        Array3::from_shape_fn(seq.dim(), |(j, d, t)| self.unscale_value(j, d, seq[[j, d, t]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hips(l: [f64; 2], r: [f64; 2]) -> (Array3<f64>, SkeletonSpec) {
        let sk = SkeletonSpec::default();
        let mut seq = Array3::zeros((17, 3, 1));
        seq[[sk.left_hip, 0, 0]] = l[0];
        seq[[sk.left_hip, 1, 0]] = l[1];
        seq[[sk.right_hip, 0, 0]] = r[0];
        seq[[sk.right_hip, 1, 0]] = r[1];
        (seq, sk)
    }

    fn close(a: (f64, f64), b: (f64, f64)) -> bool {
        (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12
    }

    #[test]
    fn translation_only_case() {
        let (seq, sk) = hips([1.0, 1.0], [3.0, 1.0]);
        let t = fit_norm(seq.view(), 0, &sk).unwrap();
        assert_eq!(t.angle, 0.0);
        assert_eq!(t.translation, [-2.0, -1.0]);
        assert!(close(t.apply_xy(1.0, 1.0), (-1.0, 0.0)));
        assert!(close(t.apply_xy(3.0, 1.0), (1.0, 0.0)));
    }

    #[test]
    fn rotated_hips() {
        let (seq, sk) = hips([0.0, 0.0], [0.0, 2.0]);
        let t = fit_norm(seq.view(), 0, &sk).unwrap();
        assert!(close(t.apply_xy(0.0, 0.0), (-1.0, 0.0)));
        assert!(close(t.apply_xy(0.0, 2.0), (1.0, 0.0)));
    }

    #[test]
    fn normalized_sequence_gives_identity() {
        let (seq, sk) = hips([-1.0, 0.0], [1.0, 0.0]);
        let t = fit_norm(seq.view(), 0, &sk).unwrap();
        assert_eq!(t.angle, 0.0);
        assert_eq!(t.translation.map(|v| v + 0.0), [0.0, 0.0]);
    }

    #[test]
    fn coincident_hips_translate_only_and_nan_fails() {
        let (seq, sk) = hips([2.0, 3.0], [2.0, 3.0]);
        let t = fit_norm(seq.view(), 0, &sk).unwrap();
        assert_eq!(t.angle, 0.0);
        assert_eq!(t.translation, [-2.0, -3.0]);
        let (mut seq, sk) = hips([0.0, 0.0], [1.0, 0.0]);
        seq[[sk.left_hip, 0, 0]] = f64::NAN;
        assert!(matches!(fit_norm(seq.view(), 0, &sk), Err(Error::NonFinite(_))));
    }

    #[test]
    fn scaler_endpoints_and_degenerate_channel() {
        let mut a = Array3::zeros((1, 3, 2));
        a[[0, 0, 0]] = -1.0;
        a[[0, 0, 1]] = 1.0;
        a[[0, 1, 0]] = 4.0;
        a[[0, 1, 1]] = 4.0;
        let s = MinMaxScaler::fit([a.view()]).unwrap();
        assert_eq!(s.scale_value(0, 0, 1.0), 3.0);
        assert_eq!(s.scale_value(0, 0, 0.0), 0.0);
        assert!(s.scale_value(0, 1, 4.0).abs() < 1e-12);
        assert!(MinMaxScaler::fit(std::iter::empty()).is_err());
    }

    #[test]
    fn datapoint_for_single_person_has_no_others() {
        let sk = SkeletonSpec::default();
        let mut pos = Array4::zeros((1, 17, 3, 4));
        pos[[0, sk.right_hip, 0, 1]] = 1.0;
        let w = MultiPersonWindow::from_sequences(
            vec!["a".into()],
            pos,
            Array2::from_elem((1, 4), true),
            2,
            vec![],
        )
        .unwrap();
        let basis = BasisPointSet::generate(0, 8, 1.0).unwrap();
        let dp = build_datapoint(&w, 0, &basis, &sk).unwrap();
        assert_eq!(dp.others.dim(), (0, 17, 3, 4));
        assert_eq!(dp.scene.dim(), (0, 8 + 13));
        assert!(build_datapoint(&w, 1, &basis, &sk).is_err());
    }

    proptest! {
        #[test]
        fn inverse_round_trips(angle in -7.0f64..7.0, tx in -20.0f64..20.0, ty in -20.0f64..20.0,
                               x in -10.0f64..10.0, y in -10.0f64..10.0) {
            let t = AffineTransform2D::new(angle, [tx, ty]);
            let (a, b) = t.apply_xy(x, y);
            let (u, v) = t.invert_xy(a, b);
            prop_assert!((u - x).abs() < 1e-9 && (v - y).abs() < 1e-9);
            let (p, q) = t.inverse().apply_xy(a, b);
            prop_assert!((p - x).abs() < 1e-9 && (q - y).abs() < 1e-9);
        }

        #[test]
        fn scaling_is_monotone_and_invertible(vals in prop::collection::vec(-5.0f64..5.0, 2..30)) {
            let seq = Array3::from_shape_fn((1, 3, vals.len()), |(_, d, t)| vals[t] * (d + 1) as f64);
            let s = MinMaxScaler::fit([seq.view()]).unwrap();
            let scaled = s.scale(seq.view());
            for w in 0..vals.len() {
                for u in 0..vals.len() {
                    if seq[[0, 0, w]] < seq[[0, 0, u]] {
                        prop_assert!(scaled[[0, 0, w]] < scaled[[0, 0, u]]);
                    }
                }
                prop_assert!(scaled[[0, 0, w]] >= -3.0 - 1e-12 && scaled[[0, 0, w]] <= 3.0 + 1e-12);
            }
            let back = s.unscale(scaled.view());
            for (a, b) in back.iter().zip(seq.iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
