//! SE(3)-equivariant frames, scalarization/vectorization and neighbour ordering.
//!
//! Frames are built from cross products of positions measured from the mass
//! centre, so every quantity here is equivariant under proper rotations and,
//! after re-centering, under translations. Reflections are not covered.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub type Vec3<T> = [T; 3];

/// Minimum length of a difference or cross product for a frame to be built.
pub const DEGENERACY_EPS: f64 = 1e-8;
/// Absolute tolerance under which two neighbour distances count as equal.
pub const TIE_TOL: f64 = 1e-9;

pub fn sub<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale<T: Real>(a: &Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn norm<T: Real>(a: &Vec3<T>) -> T {
    dot(a, a).sqrt()
}

/// Orthonormal right-handed frame `(e1, e2, e3)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame<T> {
    pub e: [Vec3<T>; 3],
}

impl<T: Real> Frame<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Frame { e: [[o, z, z], [z, o, z], [z, z, o]] }
    }

    /// Largest deviation from orthonormality and right-handedness.
    pub fn defect(&self) -> T {
        let mut worst = T::zero();
        for p in 0..3 {
            for q in 0..3 {
                let target = if p == q { T::one() } else { T::zero() };
                worst = worst.max((dot(&self.e[p], &self.e[q]) - target).abs());
            }
        }
        let c = cross(&self.e[0], &self.e[1]);
        for k in 0..3 {
            worst = worst.max((c[k] - self.e[2][k]).abs());
        }
        worst
    }

    /// Apply a 3×3 rotation (row-major) to every basis vector.
    pub fn rotated(&self, r: &[[T; 3]; 3]) -> Self {
        Frame { e: [apply(r, &self.e[0]), apply(r, &self.e[1]), apply(r, &self.e[2])] }
    }
}

pub fn apply<T: Real>(r: &[[T; 3]; 3], v: &Vec3<T>) -> Vec3<T> {
    [dot(&r[0], v), dot(&r[1], v), dot(&r[2], v)]
}

/// Relative orientation between two frames, `m[p][q] = e_p(a) · e_q(b)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Orientation<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Orientation<T> {
    pub fn zero() -> Self {
        Orientation { m: [[T::zero(); 3]; 3] }
    }

    pub fn flat(&self) -> [T; 9] {
        let m = &self.m;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
    }

    pub fn compose(&self, other: &Self) -> Self {
        let mut m = [[T::zero(); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = (0..3).map(|k| self.m[i][k] * other.m[k][j]).fold(T::zero(), |a, b| a + b);
            }
        }
        Orientation { m }
    }

    pub fn transpose(&self) -> Self {
        let mut m = [[T::zero(); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = self.m[j][i];
            }
        }
        Orientation { m }
    }
}

fn frame_from_generic<T: Real>(diff: Vec3<T>, normal: Vec3<T>, what: &str) -> Result<Frame<T>> {
    let eps = T::lit(DEGENERACY_EPS);
    let (nd, nn) = (norm(&diff), norm(&normal));
    if nd < eps || nn < eps {
        return Err(Error::Degenerate(format!("{what}: |diff| = {nd:?}, |cross| = {nn:?}")));
    }
    let e1 = scale(&diff, nd.recip());
    let e2 = scale(&normal, nn.recip());
    let e3 = cross(&e1, &e2);
    Ok(Frame { e: [e1, e2, e3] })
}

/// Edge-wise frame `((xi−xj)/‖·‖, (xi×xj)/‖·‖, e1×e2)`; positions are taken
/// relative to the mass centre.
pub fn edge_frame<T: Real>(xi: &Vec3<T>, xj: &Vec3<T>) -> Result<Frame<T>> {
    frame_from_generic(sub(xi, xj), cross(xi, xj), "edge frame")
}

/// Node-wise frame built from `xi` and the mean of its neighbours.
pub fn node_frame<T: Real>(xi: &Vec3<T>, neighbors: &[Vec3<T>]) -> Result<Frame<T>> {
    let w = vec![T::one(); neighbors.len()];
    node_frame_weighted(xi, neighbors, &w)
}

/// Node-wise frame built from `xi` and a weighted neighbourhood centre
/// `x̄ = Σ w_j x_j / Σ w_j`, constructed exactly like [`edge_frame`]`(xi, x̄)`.
///
/// Rotation-invariant weights keep the frame equivariant.
pub fn node_frame_weighted<T: Real>(xi: &Vec3<T>, neighbors: &[Vec3<T>], weights: &[T]) -> Result<Frame<T>> {
    if neighbors.is_empty() {
        return Err(Error::Degenerate("node frame needs at least one neighbour".into()));
    }
    assert_eq!(neighbors.len(), weights.len());
    let total = weights.iter().fold(T::zero(), |a, &b| a + b);
    let mut c = [T::zero(); 3];
    for (x, &w) in neighbors.iter().zip(weights) {
        c = add(&c, &scale(x, w));
    }
    let center = scale(&c, total.recip());
    frame_from_generic(sub(xi, &center), cross(xi, &center), "node frame")
}

/// Inverse-distance weights `1/‖xi − xj‖` used for the model's node frames.
///
/// With the mass centre at the origin and every other particle as a
/// neighbour, the plain mean equals `−xi/(N−1)` and the unweighted node frame
/// is always degenerate; weighting by inverse distance breaks that collinearity.
pub fn inverse_distance_weights<T: Real>(xi: &Vec3<T>, neighbors: &[Vec3<T>]) -> Vec<T> {
    neighbors.iter().map(|x| norm(&sub(xi, x)).max(T::lit(DEGENERACY_EPS)).recip()).collect()
}

pub fn scalarize<T: Real>(v: &Vec3<T>, f: &Frame<T>) -> Vec3<T> {
    [dot(v, &f.e[0]), dot(v, &f.e[1]), dot(v, &f.e[2])]
}

pub fn vectorize<T: Real>(s: &Vec3<T>, f: &Frame<T>) -> Vec3<T> {
    let mut out = [T::zero(); 3];
    for k in 0..3 {
        out = add(&out, &scale(&f.e[k], s[k]));
    }
    out
}

pub fn frame_transition<T: Real>(fa: &Frame<T>, fb: &Frame<T>) -> Orientation<T> {
    let mut m = [[T::zero(); 3]; 3];
    for (p, row) in m.iter_mut().enumerate() {
        for (q, x) in row.iter_mut().enumerate() {
            *x = dot(&fa.e[p], &fb.e[q]);
        }
    }
    Orientation { m }
}

/// How the neighbourhood centre of a node frame is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeCenter {
    Mean,
    InverseDistance,
}

pub fn node_frame_with<T: Real>(xi: &Vec3<T>, neighbors: &[Vec3<T>], center: NodeCenter) -> Result<Frame<T>> {
    match center {
        NodeCenter::Mean => node_frame(xi, neighbors),
        NodeCenter::InverseDistance => {
            let w = inverse_distance_weights(xi, neighbors);
            node_frame_weighted(xi, neighbors, &w)
        }
    }
}

/// Invariant edge feature `(‖xi − xj‖, Õ(ij))` with `Õ(ij)` the transition
/// from the node frame of `i` to the edge frame of `(i, j)`.
///
/// `neighbors` lists the node indices forming the neighbourhood of `i`.
pub fn edge_feature<T: Real>(i: usize, j: usize, positions: &[Vec3<T>], neighbors: &[usize]) -> Result<[T; 10]> {
    let nb: Vec<Vec3<T>> = neighbors.iter().map(|&k| positions[k]).collect();
    let fi = node_frame(&positions[i], &nb)?;
    edge_feature_from_frame(&fi, &positions[i], &positions[j])
}

pub fn edge_feature_from_frame<T: Real>(node: &Frame<T>, xi: &Vec3<T>, xj: &Vec3<T>) -> Result<[T; 10]> {
    let fij = edge_frame(xi, xj)?;
    let o = frame_transition(node, &fij).flat();
    let mut out = [T::zero(); 10];
    out[0] = norm(&sub(xi, xj));
    out[1..].copy_from_slice(&o);
    Ok(out)
}

/// Degeneracy-tolerant edge feature: a degenerate frame yields the distance
/// with a zeroed orientation block. The flag reports whether the fallback fired.
pub fn edge_feature_or_fallback<T: Real>(node: Option<&Frame<T>>, xi: &Vec3<T>, xj: &Vec3<T>) -> ([T; 10], bool) {
    if let Some(f) = node {
        if let Ok(e) = edge_feature_from_frame(f, xi, xj) {
            return (e, false);
        }
    }
    let mut out = [T::zero(); 10];
    out[0] = norm(&sub(xi, xj));
    (out, true)
}

/// Neighbours of a node sorted by distance, with groups of equidistant ones.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborOrder {
    pub order: Vec<usize>,
    pub distances: Vec<f64>,
    /// Index ranges into `order`; each group shares a distance within [`TIE_TOL`].
    pub tie_groups: Vec<std::ops::Range<usize>>,
}

/// Sort the neighbours of `i` by Euclidean distance.
///
/// Within a tie group the order is fixed by the lexicographic order of the
/// 10-entry edge feature (inverse-distance node frame, degenerate frames
/// falling back to a zero block), then by the distance bits, then by index.
pub fn order_neighbors(i: usize, positions: &[Vec3<f64>], neighbors: &[usize]) -> NeighborOrder {
    let xi = positions[i];
    let nb: Vec<Vec3<f64>> = neighbors.iter().map(|&k| positions[k]).collect();
    let node = if nb.is_empty() { None } else { node_frame_with(&xi, &nb, NodeCenter::InverseDistance).ok() };
    let mut items: Vec<(usize, f64, [f64; 10])> = neighbors
        .iter()
        .map(|&j| {
            let d = norm(&sub(&xi, &positions[j]));
            let (e, _) = edge_feature_or_fallback(node.as_ref(), &xi, &positions[j]);
            (j, d, e)
        })
        .collect();
    items.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal));

    let mut groups = Vec::new();
    let mut start = 0;
    for k in 1..=items.len() {
        if k == items.len() || items[k].1 - items[start].1 > TIE_TOL {
            groups.push(start..k);
            start = k;
        }
    }
    for g in &groups {
        items[g.clone()].sort_by(|a, b| {
            lex(&a.2, &b.2).then(a.1.to_bits().cmp(&b.1.to_bits())).then(a.0.cmp(&b.0))
        });
    }
    NeighborOrder {
        order: items.iter().map(|x| x.0).collect(),
        distances: items.iter().map(|x| x.1).collect(),
        tie_groups: groups,
    }
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Subtract the (unit-mass) centre of mass; returns the centred positions and the centre.
pub fn center_positions(positions: &[Vec3<f64>]) -> (Vec<Vec3<f64>>, Vec3<f64>) {
    let n = positions.len().max(1) as f64;
    let mut c = [0.0; 3];
    for p in positions {
        c = add(&c, p);
    }
    let c = scale(&c, 1.0 / n);
    (positions.iter().map(|p| sub(p, &c)).collect(), c)
}

/// Rotation matrix from a unit quaternion `(w, x, y, z)`.
pub fn rotation_from_quaternion(q: [f64; 4]) -> [[f64; 3]; 3] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let [w, x, y, z] = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Uniformly random proper rotation.
pub fn random_rotation<R: rand::Rng + ?Sized>(rng: &mut R) -> [[f64; 3]; 3] {
    use rand_distr::{Distribution, StandardNormal};
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    rotation_from_quaternion(q)
}
