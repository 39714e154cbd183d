//! Rigid transforms, axis-angle rotations, bounding cubes and point-set
//! diameters. All lengths are millimeters.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::spatial::{self, KdTree};

pub type Vec3 = nalgebra::Vector3<f64>;

/// Orthonormality / determinant tolerance for [`Rotation::new`].
pub const ROTATION_TOL: f64 = 1e-6;
/// Below this angle the Rodrigues and Jacobian coefficients use their Taylor forms.
pub const SMALL_ANGLE: f64 = 1e-7;
/// Point count above which [`diameter`] switches from all-pairs to the tree search.
pub const DIAMETER_BRUTE_MAX: usize = 20_000;
/// Default floor added to the exponentiated scale.
pub const DEFAULT_SCALE_OFFSET: f64 = 0.2;

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vec3 {
    Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

fn all_finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Proper rotation matrix (orthonormal, det = +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates orthonormality and determinant within [`ROTATION_TOL`].
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let (ortho, det) = rotation_defect(&m);
        if !(ortho <= ROTATION_TOL && (det - 1.0).abs() <= ROTATION_TOL) {
            return Err(Error::NotARotation { ortho, det });
        }
        Ok(Rotation(m))
    }

    pub fn from_row_major(rows: &[f64; 9]) -> Result<Self> {
        Self::new(Matrix3::from_row_slice(rows))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Rotation by `angle` radians about +y (the camera-frame yaw used by KITTI).
    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Yaw about the z-axis, `atan2(R10, R00)`.
    pub fn yaw(&self) -> f64 {
        self.0[(1, 0)].atan2(self.0[(0, 0)])
    }

    /// Geodesic angle between two rotations, radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        rotation_to_axis_angle_unchecked(&(self.0.transpose() * other.0)).angle()
    }
}

/// Largest |RᵀR − I| entry and the determinant.
pub fn rotation_defect(m: &Matrix3<f64>) -> (f64, f64) {
    let ortho = (m.transpose() * m - Matrix3::identity()).amax();
    let det = m.determinant();
    (if ortho.is_nan() { f64::INFINITY } else { ortho }, det)
}

/// Rotation vector: direction is the axis, norm is the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(pub Vec3);

impl AxisAngle {
    pub fn zero() -> Self {
        AxisAngle(Vec3::zeros())
    }

    pub fn new(axis: Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return AxisAngle::zero();
        }
        AxisAngle(axis * (angle / n))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn to_rotation(&self) -> Rotation {
        axis_angle_to_rotation(self)
    }
}

/// Rodrigues' formula.
pub fn axis_angle_to_rotation(aa: &AxisAngle) -> Rotation {
    let r = aa.0;
    let theta = r.norm();
    let k = skew(&r);
    let k2 = k * k;
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta * theta / 6.0, 0.5 - theta * theta / 24.0)
    } else {
        let half = (0.5 * theta).sin();
        (theta.sin() / theta, 2.0 * half * half / (theta * theta))
    };
    Rotation(Matrix3::identity() + k * a + k2 * b)
}

/// Canonical axis-angle (angle in [0, π]) of a validated rotation.
pub fn rotation_to_axis_angle(r: &Matrix3<f64>) -> Result<AxisAngle> {
    let (ortho, det) = rotation_defect(r);
    if !(ortho <= ROTATION_TOL && (det - 1.0).abs() <= ROTATION_TOL) {
        return Err(Error::NotARotation { ortho, det });
    }
    Ok(rotation_to_axis_angle_unchecked(r))
}

fn rotation_to_axis_angle_unchecked(r: &Matrix3<f64>) -> AxisAngle {
    let w = vee(r);
    let sin = w.norm();
    let cos = 0.5 * (r.trace() - 1.0);
    let theta = sin.atan2(cos);
    if theta < SMALL_ANGLE {
        return AxisAngle(w * (1.0 + theta * theta / 6.0));
    }
    if cos >= 0.0 {
        return AxisAngle(w * (theta / sin));
    }
    // obtuse angles: read the axis off the symmetric part (1 - cos) n nᵀ
    let b = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos;
    let k = (0..3)
        .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
        .unwrap_or(0);
    let mut n: Vec3 = b.column(k).into();
    n /= n.norm();
    if n.dot(&w) < 0.0 {
        n = -n;
    }
    AxisAngle(n * theta)
}

/// Right Jacobian of the exponential map: `d exp(r + δ) = exp(r) [J_r δ]×`.
pub fn right_jacobian(aa: &AxisAngle) -> Matrix3<f64> {
    let r = aa.0;
    let theta = r.norm();
    let k = skew(&r);
    let (a, b) = if theta < SMALL_ANGLE {
        (0.5 - theta * theta / 24.0, 1.0 / 6.0 - theta * theta / 120.0)
    } else {
        let half = (0.5 * theta).sin();
        let t2 = theta * theta;
        (2.0 * half * half / t2, (theta - theta.sin()) / (t2 * theta))
    };
    Matrix3::identity() - k * a + k * k * b
}

/// Rigid transform `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Pose::new(Rotation::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose::new(Rotation::identity(), t)
    }

    pub fn transform(&self, x: &Vec3) -> Vec3 {
        self.rotation.rotate(x) + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation.compose(&other.rotation),
            self.rotation.rotate(&other.translation) + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(inv, -inv.rotate(&self.translation))
    }
}

pub fn apply_pose(p: &Pose, pts: &PointSet) -> PointSet {
    PointSet(pts.0.iter().map(|x| p.transform(x)).collect())
}

/// Non-empty ordered collection of finite points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet(Vec<Vec3>);

impl PointSet {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        if !points.iter().all(all_finite) {
            return Err(Error::NonFinite("point set"));
        }
        Ok(PointSet(points))
    }

    pub fn points(&self) -> &[Vec3] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<Vec3> {
        self.0
    }

    /// Componentwise (min, max).
    pub fn aabb(&self) -> (Vec3, Vec3) {
        let mut lo = self.0[0];
        let mut hi = self.0[0];
        for p in &self.0[1..] {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }
}

/// Sign pattern of each canonical vertex along the cube's (x, y, z) axes.
///
/// Front face (+x) first, then the back face; each face is walked clockwise
/// when looking along +x with +z up: top-left, top-right, bottom-right,
/// bottom-left.
pub const CORNER_SIGNS: [[f64; 3]; 8] = [
    [1.0, 1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, 1.0],
    [-1.0, -1.0, 1.0],
    [-1.0, -1.0, -1.0],
    [-1.0, 1.0, -1.0],
];

/// Neighbors of vertex 0 along the cube's x, y and z edges.
const AXIS_NEIGHBOR: [usize; 3] = [4, 1, 3];

/// Eight vertices in canonical order forming a (possibly degenerate) parallelepiped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingCube {
    vertices: [Vec3; 8],
}

impl BoundingCube {
    /// Validates finiteness, the parallelepiped shape (within 1e-6 relative to
    /// the cube size) and right-handed vertex order.
    pub fn from_vertices(vertices: [Vec3; 8]) -> Result<Self> {
        if !vertices.iter().all(all_finite) {
            return Err(Error::NonFinite("cube vertices"));
        }
        let cube = BoundingCube { vertices };
        let c = cube.centroid();
        let h = cube.half_axes();
        let size = h.iter().map(|v| v.norm()).fold(1.0, f64::max);
        for (v, s) in vertices.iter().zip(CORNER_SIGNS.iter()) {
            let rebuilt = c + h[0] * s[0] + h[1] * s[1] + h[2] * s[2];
            if (rebuilt - v).amax() > 1e-6 * size {
                return Err(Error::NotAParallelepiped);
            }
        }
        if Matrix3::from_columns(&h).determinant() < -1e-6 * size * size * size {
            return Err(Error::NotAParallelepiped);
        }
        Ok(cube)
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != 24 {
            return Err(Error::InvalidParameter("cube needs 24 coordinates"));
        }
        let mut v = [Vec3::zeros(); 8];
        for (i, c) in values.chunks_exact(3).enumerate() {
            v[i] = Vec3::new(c[0], c[1], c[2]);
        }
        Self::from_vertices(v)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }

    pub fn vertices(&self) -> &[Vec3; 8] {
        &self.vertices
    }

    pub fn points(&self) -> PointSet {
        PointSet(self.vertices.to_vec())
    }

    pub fn centroid(&self) -> Vec3 {
        self.vertices.iter().sum::<Vec3>() / 8.0
    }

    /// Half-edge vectors along the cube's own x, y, z axes.
    pub fn half_axes(&self) -> [Vec3; 3] {
        AXIS_NEIGHBOR.map(|j| (self.vertices[0] - self.vertices[j]) * 0.5)
    }

    /// Full edge lengths along the cube's own axes.
    pub fn extents(&self) -> Vec3 {
        let h = self.half_axes();
        Vec3::new(h[0].norm(), h[1].norm(), h[2].norm()) * 2.0
    }

    pub fn volume(&self) -> f64 {
        volume(self)
    }

    pub fn translated(&self, d: &Vec3) -> BoundingCube {
        BoundingCube {
            vertices: self.vertices.map(|v| v + d),
        }
    }

    pub fn transformed(&self, pose: &Pose) -> BoundingCube {
        BoundingCube {
            vertices: self.vertices.map(|v| pose.transform(&v)),
        }
    }
}

/// Axis-aligned cube in canonical vertex order.
pub fn cube_from_aabb(min: &Vec3, max: &Vec3) -> Result<BoundingCube> {
    if !all_finite(min) || !all_finite(max) {
        return Err(Error::NonFinite("extents"));
    }
    for axis in 0..3 {
        if min[axis] > max[axis] {
            return Err(Error::InvalidExtents { axis });
        }
    }
    let vertices = CORNER_SIGNS.map(|s| {
        Vec3::from_fn(|k, _| if s[k] > 0.0 { max[k] } else { min[k] })
    });
    Ok(BoundingCube { vertices })
}

/// Learned scale: `exp(raw) + offset` per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleParam {
    pub raw: Vec3,
    pub offset: f64,
}

impl ScaleParam {
    pub fn new(raw: Vec3, offset: f64) -> Result<Self> {
        if !(offset > 0.0) || !offset.is_finite() {
            return Err(Error::InvalidParameter("scale offset must be positive"));
        }
        Ok(ScaleParam { raw, offset })
    }

    /// Allows `offset == 0`, the unfloored parameterization.
    pub fn unfloored(raw: Vec3) -> Self {
        ScaleParam { raw, offset: 0.0 }
    }

    /// Raw values giving an effective scale of exactly `target` where representable.
    pub fn for_scale(target: &Vec3, offset: f64) -> Result<Self> {
        if target.iter().any(|&s| s <= offset) {
            return Err(Error::InvalidParameter("target scale must exceed the offset"));
        }
        Ok(ScaleParam {
            raw: target.map(|s| (s - offset).ln()),
            offset,
        })
    }

    pub fn identity(offset: f64) -> Self {
        ScaleParam {
            raw: Vec3::repeat((1.0 - offset).ln()),
            offset,
        }
    }

    pub fn effective(&self) -> Vec3 {
        effective_scale(self)
    }
}

pub fn effective_scale(s: &ScaleParam) -> Vec3 {
    s.raw.map(|r| r.exp() + s.offset)
}

/// Scales `prior` per axis about its centroid, in the cube's own axis frame.
pub fn scale_cube(prior: &BoundingCube, scale: &Vec3) -> Result<BoundingCube> {
    if !scale.iter().all(|&s| s > 0.0 && s.is_finite()) {
        return Err(Error::NonPositiveScale([scale.x, scale.y, scale.z]));
    }
    Ok(scale_cube_unchecked(prior, scale))
}

/// Same as [`scale_cube`] without the positivity check; zero scales collapse axes.
pub(crate) fn scale_cube_unchecked(prior: &BoundingCube, scale: &Vec3) -> BoundingCube {
    let h = prior.half_axes();
    let mut vertices = prior.vertices;
    for (v, s) in vertices.iter_mut().zip(CORNER_SIGNS.iter()) {
        for k in 0..3 {
            *v += h[k] * ((scale[k] - 1.0) * s[k]);
        }
    }
    BoundingCube { vertices }
}

pub fn volume(cube: &BoundingCube) -> f64 {
    let v = &cube.vertices;
    let e = AXIS_NEIGHBOR.map(|j| v[j] - v[0]);
    Matrix3::from_columns(&e).determinant().abs()
}

/// Maximum pairwise distance. All-pairs up to [`DIAMETER_BRUTE_MAX`] points,
/// an exact tree-pruned farthest-pair search above that.
pub fn diameter(pts: &PointSet) -> Result<f64> {
    if pts.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: pts.len(),
        });
    }
    if pts.len() <= DIAMETER_BRUTE_MAX {
        Ok(diameter_all_pairs(pts.points()))
    } else {
        Ok(KdTree::build(pts.points()).farthest_pair_sq().sqrt())
    }
}

pub(crate) fn diameter_all_pairs(p: &[Vec3]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            best = best.max(spatial::dist_sq(&p[i], &p[j]));
        }
    }
    best.sqrt()
}
