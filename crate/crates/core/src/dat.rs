//! Divide-and-truncate: isotropic balls, planar division and the
//! per-tet inversion planes.
//!
//! A planar division plane between two primitives is placed on the segment
//! between their closest points; each side may move up to the plane, and a
//! vertex's displacement is shortened to `γ` times its first hit with any
//! of its planes.

use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broadphase::{min_distance_per_primitive, ContactSet, MinDistances};
use crate::geom::{closest_point_triangle, closest_points_segments, ray_plane_intersection, DivisionPlane, GeomError};
use crate::mesh::{signed_volume, tet_inversion_pairs, Adjacency, PrimPair, TriMesh};
use crate::Vec3;

/// Pairs closer than this (1 nm in scene units of metres) count as
/// touching: their witness direction is too poorly conditioned to place a
/// plane, so they get no room at all.
pub const TOUCH_EPS: f64 = 1e-9;

/// Room shares used by the truncation pipeline are kept inside
/// `[ROOM_SHARE_FLOOR, 1 - ROOM_SHARE_FLOOR]`, so the passive side of a
/// pair is never placed exactly on the plane (which would freeze it).
pub const ROOM_SHARE_FLOOR: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatError {
    #[error("pair is touching (distance {0:e})")]
    Touching(f64),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("tet has non-positive volume {0:e}")]
    InvertedTet(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// How the gap of a pair is split between its two sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPolicy {
    /// Always the midpoint.
    Half,
    /// Each side gets room proportional to its own approach speed.
    #[default]
    ProportionalOwn,
    /// Room proportional to the *other* side's approach speed.
    ProportionalOther,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatConfig {
    #[serde(default = "default_gamma")]
    pub gamma_r: f64,
    pub r_q: f64,
    #[serde(default)]
    pub lambda_policy: LambdaPolicy,
    #[serde(default = "default_true")]
    pub enable_inversion: bool,
}

fn default_gamma() -> f64 {
    0.9
}

fn default_true() -> bool {
    true
}

impl DatConfig {
    pub fn new(r_q: f64) -> Self {
        DatConfig { gamma_r: 0.9, r_q, lambda_policy: LambdaPolicy::ProportionalOwn, enable_inversion: true }
    }

    pub fn validate(&self) -> Result<(), DatError> {
        if !(self.gamma_r > 0.0 && self.gamma_r < 1.0) {
            return Err(DatError::Config(format!("gamma_r must lie in (0,1), got {}", self.gamma_r)));
        }
        if !(self.r_q > 0.0 && self.r_q.is_finite()) {
            return Err(DatError::Config(format!("r_q must be positive, got {}", self.r_q)));
        }
        Ok(())
    }

    /// Largest displacement any vertex may take in one truncation.
    pub fn max_step(&self) -> f64 {
        0.5 * self.gamma_r * self.r_q
    }
}

/// Per-vertex proposed displacement.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DisplacementField {
    pub delta_x: Vec<Vec3>,
}

impl DisplacementField {
    pub fn zeros(n: usize) -> Self {
        DisplacementField { delta_x: vec![Vec3::zeros(); n] }
    }

    pub fn is_finite(&self) -> bool {
        self.delta_x.iter().all(|d| d.iter().all(|x| x.is_finite()))
    }
}

impl From<Vec<Vec3>> for DisplacementField {
    fn from(delta_x: Vec<Vec3>) -> Self {
        DisplacementField { delta_x }
    }
}

impl Deref for DisplacementField {
    type Target = [Vec3];
    fn deref(&self) -> &[Vec3] {
        &self.delta_x
    }
}

impl DerefMut for DisplacementField {
    fn deref_mut(&mut self) -> &mut [Vec3] {
        &mut self.delta_x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PairKind {
    VertexTriangle,
    EdgeEdge,
    TetVertexFace,
    TetEdgeEdge,
}

/// Identifies a constraint pair: index into the contact list of that kind,
/// or for tet kinds `7·tet + slot` as laid out by `tet_inversion_pairs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairId {
    pub kind: PairKind,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationResult {
    pub t_v: Vec<f64>,
    pub truncated_delta: Vec<Vec3>,
    /// Pair that produced `t_v` (none when unconstrained or clamped by the
    /// step bound).
    pub limiting_pair: Vec<Option<PairId>>,
    pub preserved_fraction: Vec<f64>,
}

impl TruncationResult {
    pub fn new(delta: &[Vec3], t_v: Vec<f64>, limiting_pair: Vec<Option<PairId>>) -> Self {
        let truncated_delta = delta.iter().zip(&t_v).map(|(d, &t)| d * t).collect();
        let preserved_fraction =
            delta.iter().zip(&t_v).map(|(d, &t)| if *d == Vec3::zeros() { 1.0 } else { t }).collect();
        TruncationResult { t_v, truncated_delta, limiting_pair, preserved_fraction }
    }

    pub fn identity(delta: &[Vec3]) -> Self {
        Self::new(delta, vec![1.0; delta.len()], vec![None; delta.len()])
    }
}

// ------------------------------------------------------------ isotropic

#[derive(Debug, Clone, PartialEq)]
pub struct IsotropicRadii {
    pub vertex: Vec<f64>,
    pub triangle: Vec<f64>,
    pub edge: Vec<f64>,
}

/// Ball radii `0.5·γ·min(d_min, r_q)`: half the distance to the nearest
/// opposing primitive, never more than the step bound.
pub fn isotropic_radii(d_min: &MinDistances, gamma_r: f64, r_q: f64) -> IsotropicRadii {
    let r = |d: &f64| {
        if *d <= TOUCH_EPS {
            0.0
        } else {
            0.5 * gamma_r * d.min(r_q)
        }
    };
    IsotropicRadii {
        vertex: d_min.vertex.iter().map(r).collect(),
        triangle: d_min.triangle.iter().map(r).collect(),
        edge: d_min.edge.iter().map(r).collect(),
    }
}

/// Tightens vertex radii so that no tet can flatten: every vertex of a tet
/// stays within half of each internal vertex-face / edge-edge distance.
pub fn apply_inversion_radii(radii: &mut IsotropicRadii, mesh: &TriMesh, positions: &[Vec3], gamma_r: f64) {
    for pair in tet_inversion_pairs(&mesh.tets) {
        let d = prim_distance(&pair, positions);
        let r = if d <= TOUCH_EPS { 0.0 } else { 0.5 * gamma_r * d };
        for v in pair.vertices() {
            radii.vertex[v] = radii.vertex[v].min(r);
        }
    }
}

fn prim_distance(pair: &PrimPair, positions: &[Vec3]) -> f64 {
    match *pair {
        PrimPair::VertexTriangle { v, tri } => {
            closest_point_triangle(positions[v], tri.map(|i| positions[i])).map(|r| r.distance).unwrap_or(0.0)
        }
        PrimPair::EdgeEdge { a, b } => {
            closest_points_segments(a.map(|i| positions[i]), b.map(|i| positions[i])).map(|r| r.distance).unwrap_or(0.0)
        }
    }
}

/// `t_v = min(1, bound_v / |Δx_v|)` with `bound_v` the smallest radius
/// among the vertex and its incident triangles and edges.
pub fn isotropic_truncate(adjacency: &Adjacency, delta: &[Vec3], radii: &IsotropicRadii) -> TruncationResult {
    let bounds = isotropic_vertex_bounds(adjacency, radii);
    let t_v: Vec<f64> = delta.par_iter().zip(&bounds).map(|(d, &b)| ratio_for_bound(*d, b)).collect();
    TruncationResult::new(delta, t_v, vec![None; delta.len()])
}

/// Per-vertex displacement bound: the smallest radius among the vertex and
/// its incident triangles and edges.
pub fn isotropic_vertex_bounds(adjacency: &Adjacency, radii: &IsotropicRadii) -> Vec<f64> {
    (0..radii.vertex.len())
        .into_par_iter()
        .map(|v| {
            adjacency.vertex_triangles[v]
                .iter()
                .map(|&t| radii.triangle[t])
                .chain(adjacency.vertex_edges[v].iter().map(|&e| radii.edge[e]))
                .fold(radii.vertex[v], f64::min)
        })
        .collect()
}

pub(crate) fn ratio_for_bound(d: Vec3, bound: f64) -> f64 {
    let l = d.norm();
    if !l.is_finite() {
        return 0.0;
    }
    if l == 0.0 {
        return 1.0;
    }
    (bound / l).min(1.0)
}

/// Isotropic pipeline: distances (search bound `10·r_q`), radii,
/// optional inversion radii, truncation.
pub fn isotropic_dat(
    mesh: &TriMesh,
    adjacency: &Adjacency,
    positions: &[Vec3],
    delta: &[Vec3],
    config: &DatConfig,
) -> TruncationResult {
    let d = min_distance_per_primitive(mesh, positions, 10.0 * config.r_q);
    let mut radii = isotropic_radii(&d, config.gamma_r, config.r_q);
    if config.enable_inversion {
        apply_inversion_radii(&mut radii, mesh, positions, config.gamma_r);
    }
    isotropic_truncate(adjacency, delta, &radii)
}

// ------------------------------------------------------------ planar

fn room_share(own: f64, other: f64, policy: LambdaPolicy) -> f64 {
    let sum = own + other;
    match policy {
        LambdaPolicy::Half => 0.5,
        _ if sum == 0.0 => 0.5,
        LambdaPolicy::ProportionalOwn => own / sum,
        LambdaPolicy::ProportionalOther => other / sum,
    }
}

/// Division of one pair: `plane` points from side B toward side A, side A
/// has room share `mu` and witness `wa`; side B witness is `wb`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDivision {
    pub plane: DivisionPlane,
    pub mu: f64,
    pub wa: Vec3,
    pub wb: Vec3,
}

impl PairDivision {
    /// Same normal, plane point moved to room share `mu`.
    pub fn with_share(&self, mu: f64) -> DivisionPlane {
        DivisionPlane { normal: self.plane.normal, point: self.wa - (self.wa - self.wb) * mu }
    }
}

/// Side A is the vertex, side B the triangle.
pub fn divide_vt(
    x_v: Vec3,
    dx_v: Vec3,
    tri: [Vec3; 3],
    tri_dx: [Vec3; 3],
    policy: LambdaPolicy,
) -> Result<PairDivision, DatError> {
    let cp = closest_point_triangle(x_v, tri)?;
    if cp.distance <= TOUCH_EPS {
        return Err(DatError::Touching(cp.distance));
    }
    let c = cp.point_on_b;
    let n = (x_v - c) / cp.distance;
    let dv = (-dx_v.dot(&n)).max(0.0);
    let dt = tri_dx.iter().map(|d| d.dot(&n)).fold(0.0, f64::max);
    let mu = room_share(dv, dt, policy);
    Ok(PairDivision { plane: DivisionPlane { normal: n, point: x_v - (x_v - c) * mu }, mu, wa: x_v, wb: c })
}

/// Side A is edge `e`, side B edge `f`. The returned plane normal points
/// from `f` toward `e`; [`division_plane_ee`] reports the opposite
/// orientation (from `e` toward `f`).
pub fn divide_ee(
    e: [Vec3; 2],
    e_dx: [Vec3; 2],
    f: [Vec3; 2],
    f_dx: [Vec3; 2],
    policy: LambdaPolicy,
) -> Result<PairDivision, DatError> {
    let cp = closest_points_segments(e, f)?;
    if cp.distance <= TOUCH_EPS {
        return Err(DatError::Touching(cp.distance));
    }
    let (ce, cf) = (cp.point_on_a, cp.point_on_b);
    // n points from e toward f
    let n = (cf - ce) / cp.distance;
    let de = e_dx.iter().map(|d| d.dot(&n)).fold(0.0, f64::max);
    let df = f_dx.iter().map(|d| -d.dot(&n)).fold(0.0, f64::max);
    let mu = room_share(de, df, policy);
    Ok(PairDivision { plane: DivisionPlane { normal: -n, point: ce + (cf - ce) * mu }, mu, wa: ce, wb: cf })
}

/// Plane between a vertex and a triangle; the vertex is on the positive side.
pub fn division_plane_vt(
    x_v: Vec3,
    dx_v: Vec3,
    tri: [Vec3; 3],
    tri_dx: [Vec3; 3],
    policy: LambdaPolicy,
) -> Result<DivisionPlane, DatError> {
    divide_vt(x_v, dx_v, tri, tri_dx, policy).map(|d| d.plane)
}

/// Plane between two edges; `e` is on the negative side, `n` points to `f`.
pub fn division_plane_ee(
    e: [Vec3; 2],
    e_dx: [Vec3; 2],
    f: [Vec3; 2],
    f_dx: [Vec3; 2],
    policy: LambdaPolicy,
) -> Result<DivisionPlane, DatError> {
    divide_ee(e, e_dx, f, f_dx, policy).map(|d| d.plane.flipped())
}

/// Room share of edge `e` for the pair (`e`, `f`).
pub fn room_share_ee(
    e: [Vec3; 2],
    e_dx: [Vec3; 2],
    f: [Vec3; 2],
    f_dx: [Vec3; 2],
    policy: LambdaPolicy,
) -> Result<f64, DatError> {
    divide_ee(e, e_dx, f, f_dx, policy).map(|d| d.mu)
}

/// Truncation ratio of a straight move against a plane the vertex starts
/// on the positive side of: `γ·t_i` if the ray meets the plane at
/// `t_i ∈ [0, 1/γ)`, otherwise 1. A start on or behind the plane gives 0.
pub fn truncation_ratio_linear(x_v: Vec3, dx_v: Vec3, plane: &DivisionPlane, gamma_r: f64) -> f64 {
    let s0 = plane.signed_distance(x_v);
    if !(s0 > 0.0) {
        return 0.0;
    }
    match ray_plane_intersection(x_v, dx_v, plane) {
        None => 1.0,
        Some(ti) if ti < 0.0 || ti >= 1.0 / gamma_r => 1.0,
        Some(ti) => gamma_r * ti,
    }
}

/// The four tet planes (vertex `i` against the opposite face), each with
/// its vertex on the positive side.
pub fn inversion_planes(
    tet: [Vec3; 4],
    tet_dx: [Vec3; 4],
    policy: LambdaPolicy,
) -> Result<[DivisionPlane; 4], DatError> {
    let vol = signed_volume(tet[0], tet[1], tet[2], tet[3]);
    if !(vol > 0.0) {
        return Err(DatError::InvertedTet(vol));
    }
    let mut out = [DivisionPlane { normal: Vec3::zeros(), point: Vec3::zeros() }; 4];
    for (i, slot) in out.iter_mut().enumerate() {
        let o: [usize; 3] = match i {
            0 => [1, 2, 3],
            1 => [0, 2, 3],
            2 => [0, 1, 3],
            _ => [0, 1, 2],
        };
        *slot = division_plane_vt(tet[i], tet_dx[i], o.map(|k| tet[k]), o.map(|k| tet_dx[k]), policy)?;
    }
    Ok(out)
}

/// All constraint pairs of a truncation pass in a fixed order: contact
/// vt pairs, contact ee pairs, then (optionally) the tet pairs.
pub fn collect_pairs(mesh: &TriMesh, contacts: &ContactSet, inversion: bool) -> Vec<(PairId, PrimPair)> {
    let mut out = Vec::with_capacity(contacts.len() + if inversion { 7 * mesh.tets.len() } else { 0 });
    for (k, &(v, t)) in contacts.vt_pairs.iter().enumerate() {
        out.push((
            PairId { kind: PairKind::VertexTriangle, index: k },
            PrimPair::VertexTriangle { v, tri: mesh.triangles[t] },
        ));
    }
    for (k, &(i, j)) in contacts.ee_pairs.iter().enumerate() {
        out.push((
            PairId { kind: PairKind::EdgeEdge, index: k },
            PrimPair::EdgeEdge { a: mesh.edges[i], b: mesh.edges[j] },
        ));
    }
    if inversion {
        for (k, p) in tet_inversion_pairs(&mesh.tets).into_iter().enumerate() {
            let kind = match p {
                PrimPair::VertexTriangle { .. } => PairKind::TetVertexFace,
                PrimPair::EdgeEdge { .. } => PairKind::TetEdgeEdge,
            };
            out.push((PairId { kind, index: k }, p));
        }
    }
    out
}

/// The oriented half-space of each of the pair's four vertices (the vertex
/// starts on the positive side), with the room share clamped into
/// `[floor, 1 - floor]`. `Err` for touching / degenerate pairs, and for
/// pairs whose rounded plane fails to put every vertex strictly on its
/// own side.
pub fn pair_vertex_planes(
    pair: &PrimPair,
    positions: &[Vec3],
    delta: &[Vec3],
    policy: LambdaPolicy,
    floor: f64,
) -> Result<[(usize, DivisionPlane); 4], DatError> {
    let clamp = |mu: f64| mu.clamp(floor, 1.0 - floor);
    match *pair {
        PrimPair::VertexTriangle { v, tri } => {
            let d = divide_vt(positions[v], delta[v], tri.map(|i| positions[i]), tri.map(|i| delta[i]), policy)?;
            let pl = d.with_share(clamp(d.mu));
            let back = pl.flipped();
            strictly_separated([(v, pl), (tri[0], back), (tri[1], back), (tri[2], back)], positions)
        }
        PrimPair::EdgeEdge { a, b } => {
            let d = divide_ee(
                a.map(|i| positions[i]),
                a.map(|i| delta[i]),
                b.map(|i| positions[i]),
                b.map(|i| delta[i]),
                policy,
            )?;
            let pl = d.with_share(clamp(d.mu));
            let back = pl.flipped();
            strictly_separated([(a[0], pl), (a[1], pl), (b[0], back), (b[1], back)], positions)
        }
    }
}

fn strictly_separated(
    planes: [(usize, DivisionPlane); 4],
    positions: &[Vec3],
) -> Result<[(usize, DivisionPlane); 4], DatError> {
    for (v, pl) in &planes {
        let s = pl.signed_distance(positions[*v]);
        if s <= 0.0 {
            return Err(DatError::Touching(s));
        }
    }
    Ok(planes)
}

fn pair_ratios(pair: &PrimPair, positions: &[Vec3], delta: &[Vec3], config: &DatConfig) -> [(usize, f64); 4] {
    match pair_vertex_planes(pair, positions, delta, config.lambda_policy, ROOM_SHARE_FLOOR) {
        Ok(planes) => planes.map(|(v, pl)| (v, truncation_ratio_linear(positions[v], delta[v], &pl, config.gamma_r))),
        Err(_) => pair.vertices().map(|v| (v, 0.0)),
    }
}

fn finish_planar(
    delta: &[Vec3],
    mut t_v: Vec<f64>,
    mut limiting: Vec<Option<PairId>>,
    config: &DatConfig,
) -> TruncationResult {
    let max_step = config.max_step();
    for (v, d) in delta.iter().enumerate() {
        let l = d.norm();
        if !l.is_finite() {
            t_v[v] = 0.0;
            limiting[v] = None;
        } else if t_v[v] * l > max_step {
            t_v[v] = max_step / l;
            limiting[v] = None;
        }
    }
    TruncationResult::new(delta, t_v, limiting)
}

/// Planar divide-and-truncate over all contact (and optionally tet) pairs.
/// Pairs are evaluated in parallel and combined with an atomic minimum.
pub fn planar_dat(
    mesh: &TriMesh,
    positions: &[Vec3],
    delta: &[Vec3],
    contacts: &ContactSet,
    config: &DatConfig,
) -> TruncationResult {
    let pairs = collect_pairs(mesh, contacts, config.enable_inversion);
    let slots: Vec<AtomicU64> = (0..delta.len()).map(|_| AtomicU64::new(1.0f64.to_bits())).collect();
    let per_pair: Vec<[(usize, f64); 4]> = pairs
        .par_iter()
        .map(|(_, p)| {
            let r = pair_ratios(p, positions, delta, config);
            for &(v, t) in &r {
                // non-negative doubles order like their bit patterns
                slots[v].fetch_min(t.to_bits(), Ordering::Relaxed);
            }
            r
        })
        .collect();
    let t_v: Vec<f64> = slots.into_iter().map(|a| f64::from_bits(a.into_inner())).collect();
    let limiting = limiting_pairs(&pairs, &per_pair, &t_v);
    finish_planar(delta, t_v, limiting, config)
}

/// Single-threaded reference of [`planar_dat`].
pub fn planar_dat_serial(
    mesh: &TriMesh,
    positions: &[Vec3],
    delta: &[Vec3],
    contacts: &ContactSet,
    config: &DatConfig,
) -> TruncationResult {
    let pairs = collect_pairs(mesh, contacts, config.enable_inversion);
    let mut t_v = vec![1.0f64; delta.len()];
    let mut per_pair = Vec::with_capacity(pairs.len());
    for (_, p) in &pairs {
        let r = pair_ratios(p, positions, delta, config);
        for &(v, t) in &r {
            t_v[v] = t_v[v].min(t);
        }
        per_pair.push(r);
    }
    let limiting = limiting_pairs(&pairs, &per_pair, &t_v);
    finish_planar(delta, t_v, limiting, config)
}

fn limiting_pairs(pairs: &[(PairId, PrimPair)], per_pair: &[[(usize, f64); 4]], t_v: &[f64]) -> Vec<Option<PairId>> {
    let mut out = vec![None; t_v.len()];
    for ((id, _), r) in pairs.iter().zip(per_pair) {
        for &(v, t) in r {
            if out[v].is_none() && t < 1.0 && t == t_v[v] {
                out[v] = Some(*id);
            }
        }
    }
    out
}
