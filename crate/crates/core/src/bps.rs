//! Basis point set encoding of object point clouds.
//!
//! Every object becomes a fixed-length vector: the distance from each basis
//! point to the nearest point of the object's cloud, followed by a one-hot
//! of the object type.

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{ObjectType, SceneObject, OBJECT_TYPE_COUNT};
use crate::normalize::AffineTransform2D;
use crate::{rng, Error, Result};

pub const DEFAULT_BASIS_SIZE: usize = 2048;
pub const DEFAULT_RADIUS: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisPointSet {
    pub points: Vec<[f64; 3]>,
    pub seed: u64,
    pub radius: f64,
}

impl BasisPointSet {
    /// `size` points drawn uniformly from the ball of `radius` around the origin.
    pub fn generate(seed: u64, size: usize, radius: f64) -> Result<Self> {
        if size == 0 || !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "basis needs size >= 1 and radius > 0, got {size} and {radius}"
            )));
        }
        let mut rng = rng::stream(seed, 0xb95);
        let unit = Uniform::new(0.0f64, 1.0);
        let points = (0..size)
            .map(|_| {
                let mut dir = [0.0f64; 3];
                let norm = loop {
                    for v in dir.iter_mut() {
                        *v = StandardNormal.sample(&mut rng);
                    }
                    let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n > 1e-12 {
                        break n;
                    }
                };
                let r = radius * unit.sample(&mut rng).cbrt();
                [dir[0] / norm * r, dir[1] / norm * r, dir[2] / norm * r]
            })
            .collect();
        Ok(Self { points, seed, radius })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Length of an encoded object vector: distances then the type one-hot.
    pub fn encoding_dim(&self) -> usize {
        self.points.len() + OBJECT_TYPE_COUNT
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectEncoding {
    pub distances: Vec<f64>,
    pub object_type: ObjectType,
}

impl ObjectEncoding {
    pub fn type_onehot(&self) -> [f64; OBJECT_TYPE_COUNT] {
        let mut out = [0.0; OBJECT_TYPE_COUNT];
        out[self.object_type.index()] = 1.0;
        out
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.distances.clone();
        v.extend_from_slice(&self.type_onehot());
        v
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneEncoding {
    pub objects: Vec<ObjectEncoding>,
}

impl SceneEncoding {
    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// `(G, B + 13)` matrix, one row per object.
    pub fn to_matrix(&self, basis_len: usize) -> Array2<f64> {
        let dim = basis_len + OBJECT_TYPE_COUNT;
        let mut out = Array2::zeros((self.objects.len(), dim));
        for (mut row, obj) in out.rows_mut().into_iter().zip(&self.objects) {
            for (dst, src) in row.iter_mut().zip(obj.to_vec()) {
                *dst = src;
            }
        }
        out
    }
}

/// Nearest-point distances from every basis point to `points` (rows of xyz).
pub fn basis_distances(points: ArrayView2<'_, f64>, basis: &BasisPointSet) -> Result<Vec<f64>> {
    if points.nrows() == 0 {
        return Err(Error::InvalidArgument("cannot encode an empty point cloud".into()));
    }
    let cloud: Vec<[f64; 3]> = points.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect();
    Ok(basis
        .points
        .iter()
        .map(|b| {
            cloud
                .iter()
                .map(|p| {
                    let dx = b[0] - p[0];
                    let dy = b[1] - p[1];
                    let dz = b[2] - p[2];
                    dx * dx + dy * dy + dz * dz
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect())
}

/// Encode one object; `transform` moves its points into the person frame first.
pub fn bps_encode(
    object: &SceneObject,
    basis: &BasisPointSet,
    transform: Option<&AffineTransform2D>,
) -> Result<ObjectEncoding> {
    let mut points = object.points.mapv(f64::from);
    if let Some(t) = transform {
        for mut row in points.rows_mut() {
            let (x, y) = t.apply_xy(row[0], row[1]);
            row[0] = x;
            row[1] = y;
        }
    }
    let distances = basis_distances(points.view(), basis).map_err(|_| {
        Error::InvalidArgument(format!("object {} has an empty point cloud", object.object_id))
    })?;
    Ok(ObjectEncoding {
        distances,
        object_type: object.object_type,
    })
}

/// Encode a static scene, preserving object order.
pub fn encode_scene(
    scene: &[SceneObject],
    basis: &BasisPointSet,
    transform: Option<&AffineTransform2D>,
) -> Result<SceneEncoding> {
    let objects = scene
        .iter()
        .map(|o| bps_encode(o, basis, transform))
        .collect::<Result<_>>()?;
    Ok(SceneEncoding { objects })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn basis_of(points: Vec<[f64; 3]>) -> BasisPointSet {
        BasisPointSet { points, seed: 0, radius: 5.0 }
    }

    fn object(points: Array2<f32>) -> SceneObject {
        SceneObject::new("o", ObjectType::Chair, points)
    }

    #[test]
    fn single_point_distances() {
        let basis = basis_of(vec![[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]);
        let enc = bps_encode(&object(array![[0.0f32, 0.0, 0.0]]), &basis, None).unwrap();
        assert_eq!(enc.distances, vec![1.0, 2.0]);
        let onehot = enc.type_onehot();
        assert_eq!(onehot[ObjectType::Chair.index()], 1.0);
        assert_eq!(onehot.iter().sum::<f64>(), 1.0);

        let enc = bps_encode(&object(array![[1.0f32, 0.0, 0.0]]), &basis, None).unwrap();
        assert_eq!(enc.distances[0], 0.0);
        assert!((enc.distances[1] - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn generated_basis_is_deterministic_and_bounded() {
        let a = BasisPointSet::generate(3, DEFAULT_BASIS_SIZE, DEFAULT_RADIUS).unwrap();
        let b = BasisPointSet::generate(3, DEFAULT_BASIS_SIZE, DEFAULT_RADIUS).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2048);
        assert_eq!(a.encoding_dim(), 2061);
        let max = a
            .points
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            .fold(0.0, f64::max);
        assert!(max <= DEFAULT_RADIUS);
        assert!(BasisPointSet::generate(3, 0, 1.0).is_err());
        assert!(BasisPointSet::generate(3, 4, 0.0).is_err());
    }

    #[test]
    fn empty_cloud_is_an_error() {
        let basis = basis_of(vec![[0.0; 3]]);
        assert!(bps_encode(&object(Array2::zeros((0, 3))), &basis, None).is_err());
    }

    #[test]
    fn empty_scene_and_identity_transform() {
        let basis = BasisPointSet::generate(1, 64, 2.0).unwrap();
        assert!(encode_scene(&[], &basis, None).unwrap().is_empty());
        let scene = vec![object(array![[0.5f32, 0.1, 0.2], [0.0, 1.0, 0.0]])];
        let identity = AffineTransform2D::identity();
        assert_eq!(
            encode_scene(&scene, &basis, None).unwrap(),
            encode_scene(&scene, &basis, Some(&identity)).unwrap()
        );
    }

    fn cloud_strategy() -> impl Strategy<Value = Vec<[f32; 3]>> {
        prop::collection::vec(prop::array::uniform3(-3.0f32..3.0), 1..20)
    }

    proptest! {
        #[test]
        fn permutation_and_duplication_invariant(cloud in cloud_strategy(), seed in 0u64..1000) {
            let basis = BasisPointSet::generate(seed, 32, 3.0).unwrap();
            let to_obj = |pts: &[[f32; 3]]| object(Array2::from_shape_fn((pts.len(), 3), |(i, d)| pts[i][d]));
            let base = bps_encode(&to_obj(&cloud), &basis, None).unwrap();
            let mut shuffled = cloud.clone();
            shuffled.reverse();
            shuffled.push(cloud[0]);
            prop_assert_eq!(base, bps_encode(&to_obj(&shuffled), &basis, None).unwrap());
        }

        #[test]
        fn superset_never_increases_distances(cloud in cloud_strategy(), extra in prop::array::uniform3(-3.0f32..3.0)) {
            let basis = BasisPointSet::generate(5, 32, 3.0).unwrap();
            let to_obj = |pts: &[[f32; 3]]| object(Array2::from_shape_fn((pts.len(), 3), |(i, d)| pts[i][d]));
            let base = bps_encode(&to_obj(&cloud), &basis, None).unwrap();
            let mut bigger = cloud.clone();
            bigger.push(extra);
            let grown = bps_encode(&to_obj(&bigger), &basis, None).unwrap();
            for (a, b) in base.distances.iter().zip(&grown.distances) {
                prop_assert!(*b <= *a);
                prop_assert!(*b >= 0.0);
            }
        }
    }
}
