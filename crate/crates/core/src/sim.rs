//! A small time stepper that runs a truncation after every solver
//! iteration.
//!
//! Each step proposes the inertial displacement, then runs `n_iter`
//! Jacobi iterations. Displacements accumulate against the positions of the
//! last commit; every `cd_every` iterations they are committed, checked by
//! the CCD oracle, and collision detection is re-run.

use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broadphase::{min_distance_per_primitive, query_contact_set, ContactSet};
use crate::dat::{
    apply_inversion_radii, collect_pairs, isotropic_dat, isotropic_radii, isotropic_vertex_bounds, pair_vertex_planes,
    planar_dat, DatConfig, IsotropicRadii, LambdaPolicy, ROOM_SHARE_FLOOR, TOUCH_EPS,
};
use crate::geom::{closest_point_triangle, closest_points_segments, DivisionPlane};
use crate::mesh::{build_adjacency, tet_signed_volume, Adjacency, MeshError, PrimPair, TriMesh};
use crate::project::{dap_step, ProjectError, SpdMetric3};
use crate::rigid::{
    eval_trajectory, rigid_sphere_truncate, rigid_truncate, CurvedTruncConfig, RigidIncrement, RigidPose,
};
use crate::verify::ccd::{ccd_linear, ccd_linear_with_tets, ccd_path, CcdHit, CcdReport};
use crate::{Mat3, Vec3};

/// Stiffness multipliers that keep the Jacobi iteration stable: a spring
/// couples two vertices, a contact up to four.
const SPRING_COUPLING: f64 = 2.0;
const CONTACT_COUPLING: f64 = 4.0;
/// Chords per step used by the oracle for curved rigid paths.
const ORACLE_CHORDS: usize = 16;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Project(#[from] ProjectError),
    #[error("penetration detected at step {step}, iteration {iteration}: {detail}")]
    Penetration { step: usize, iteration: usize, detail: String },
    #[error("tet {tet} inverted at step {step}, iteration {iteration}")]
    Inversion { step: usize, iteration: usize, tet: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationMode {
    Isotropic,
    #[default]
    Planar,
    Dap,
    GlobalCcd,
}

impl TruncationMode {
    pub const ALL: [TruncationMode; 4] =
        [TruncationMode::Isotropic, TruncationMode::Planar, TruncationMode::Dap, TruncationMode::GlobalCcd];

    pub fn name(self) -> &'static str {
        match self {
            TruncationMode::Isotropic => "isotropic",
            TruncationMode::Planar => "planar",
            TruncationMode::Dap => "dap",
            TruncationMode::GlobalCcd => "global_ccd",
        }
    }
}

impl std::str::FromStr for TruncationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        TruncationMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown truncation mode `{s}` (isotropic|planar|dap|global_ccd)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub n_iter: usize,
    pub cd_every: usize,
    /// Contact radius: the penalty is active below this distance.
    pub r_c: f64,
    /// Query radius of the broadphase and the step bound of DAT.
    pub r_q: f64,
    pub gravity: [f64; 3],
    pub truncation_mode: TruncationMode,
    pub gamma_r: f64,
    pub lambda_policy: LambdaPolicy,
    pub enable_inversion: bool,
    /// Contact stiffness `k_c`.
    pub k_c: f64,
    /// Friction coefficient of the tangential damping proxy.
    pub mu_f: f64,
    /// Default shear modulus `μ` of deformables; springs get `k = μ / L₀`.
    pub elastic_mu: f64,
    /// Default mass per vertex.
    pub vertex_mass: f64,
    /// Stop the iterations early once the mean per-vertex force residual
    /// falls below this value. Off by default.
    pub residual_tol: Option<f64>,
    /// Curved-trajectory samples; `None` scales 8 samples at `dt = 1/600`.
    pub curved_samples: Option<usize>,
    pub curved_bisect: u32,
    /// Run the CCD oracle at every commit.
    pub check_oracle: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1.0 / 100.0,
            n_iter: 20,
            cd_every: 5,
            r_c: 0.005,
            r_q: 0.01,
            gravity: [0.0, -9.8, 0.0],
            truncation_mode: TruncationMode::Planar,
            gamma_r: 0.9,
            lambda_policy: LambdaPolicy::default(),
            enable_inversion: true,
            k_c: 1e4,
            mu_f: 0.0,
            elastic_mu: 1e3,
            vertex_mass: 1e-3,
            residual_tol: None,
            curved_samples: None,
            curved_bisect: 16,
            check_oracle: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return err("dt must be positive");
        }
        if !(self.r_c > 0.0) {
            return err("r_c must be positive");
        }
        if !(self.r_q > self.r_c) || !self.r_q.is_finite() {
            return err("r_q must exceed r_c");
        }
        if self.cd_every < 1 {
            return err("cd_every must be at least 1");
        }
        if self.n_iter < 1 {
            return err("n_iter must be at least 1");
        }
        if !(self.gamma_r > 0.0 && self.gamma_r < 1.0) {
            return err("gamma_r must lie in (0, 1)");
        }
        if !(self.k_c >= 0.0 && self.mu_f >= 0.0 && self.elastic_mu >= 0.0) {
            return err("k_c, mu_f and elastic_mu must be non-negative");
        }
        if !(self.vertex_mass > 0.0) {
            return err("vertex_mass must be positive");
        }
        if self.gravity.iter().any(|g| !g.is_finite()) {
            return err("gravity must be finite");
        }
        Ok(())
    }

    pub fn dat_config(&self) -> DatConfig {
        DatConfig {
            gamma_r: self.gamma_r,
            r_q: self.r_q,
            lambda_policy: self.lambda_policy,
            enable_inversion: self.enable_inversion,
        }
    }

    pub fn curved_config(&self) -> CurvedTruncConfig {
        CurvedTruncConfig {
            k_samples: self.curved_samples.unwrap_or_else(|| CurvedTruncConfig::samples_for_dt(self.dt)),
            n_bisect: self.curved_bisect,
            gamma_r: self.gamma_r,
        }
    }

    pub fn gravity(&self) -> Vec3 {
        Vec3::from(self.gravity)
    }
}

// ------------------------------------------------------------ scene

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyKind {
    Deformable,
    Rigid,
    Animated,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Keyframe {
    pub time: f64,
    /// Rotation vector about the object's rest centre.
    #[serde(default)]
    pub theta: [f64; 3],
    /// Translation of the rest centre.
    #[serde(default)]
    pub x: [f64; 3],
}

/// Prescribed motion relative to the rest configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    /// Piecewise-linear keyframes, held constant outside their range.
    Keyframes(Vec<Keyframe>),
    /// Constant rates over `[start, stop]`.
    Rates {
        #[serde(default)]
        angular_velocity: [f64; 3],
        #[serde(default)]
        velocity: [f64; 3],
        #[serde(default)]
        start: f64,
        #[serde(default)]
        stop: Option<f64>,
    },
}

impl Motion {
    /// `(θ, translation)` at time `t`.
    pub fn pose(&self, t: f64) -> (Vec3, Vec3) {
        match self {
            Motion::Keyframes(k) if k.is_empty() => (Vec3::zeros(), Vec3::zeros()),
            Motion::Keyframes(k) => {
                let at = |f: &Keyframe| (Vec3::from(f.theta), Vec3::from(f.x));
                if t <= k[0].time {
                    return at(&k[0]);
                }
                for w in k.windows(2) {
                    if t <= w[1].time {
                        let s = if w[1].time > w[0].time { (t - w[0].time) / (w[1].time - w[0].time) } else { 1.0 };
                        let (a, b) = (at(&w[0]), at(&w[1]));
                        return (a.0 + (b.0 - a.0) * s, a.1 + (b.1 - a.1) * s);
                    }
                }
                at(k.last().unwrap())
            }
            Motion::Rates { angular_velocity, velocity, start, stop } => {
                let end = stop.unwrap_or(f64::INFINITY);
                let s = (t.min(end) - start).max(0.0);
                (Vec3::from(*angular_velocity) * s, Vec3::from(*velocity) * s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub name: String,
    pub kind: BodyKind,
    pub vertices: Range<usize>,
    pub vertex_mass: f64,
    pub elastic_mu: f64,
    /// Required for animated bodies.
    pub motion: Option<Motion>,
    /// Initial velocity of deformable and rigid bodies.
    pub velocity: Vec3,
    /// Initial angular velocity (rigid bodies).
    pub angular_velocity: Vec3,
}

/// Vertices of a deformable that follow a prescribed motion about `center`
/// until `release_time`, then move freely.
#[derive(Debug, Clone, PartialEq)]
pub struct PinGroup {
    pub vertices: Vec<usize>,
    pub center: Vec3,
    pub motion: Option<Motion>,
    pub release_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub mesh: TriMesh,
    pub bodies: Vec<Body>,
    pub pins: Vec<PinGroup>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Role {
    Free,
    Fixed,
    Pinned(usize),
    /// Vertex `local` of rigid or animated body `body`.
    Body {
        body: usize,
        local: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigidBodyState {
    pub pose: RigidPose,
    pub velocity: Vec3,
    pub angular_velocity: Vec3,
    pub mass: f64,
    /// Scalar rotational inertia about the centre.
    pub inertia: f64,
    /// Rest centre (animated motions are relative to it).
    pub rest_center: Vec3,
}

impl RigidBodyState {
    fn positions(&self, incr: &RigidIncrement, t: f64) -> impl Iterator<Item = Vec3> + '_ {
        let incr = *incr;
        (0..self.pose.ref_vertices.len()).map(move |i| eval_trajectory(&self.pose, &incr, i, t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub time: f64,
    pub step: usize,
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    /// Per body; `Some` for rigid and animated bodies.
    pub rigid: Vec<Option<RigidBodyState>>,
}

/// Per-step, deterministic diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub time: f64,
    /// Smallest primitive distance after the step (`+∞` if nothing is
    /// within the query radius).
    pub min_separation: f64,
    /// Contact pairs at the last collision detection.
    pub n_pairs: usize,
    /// Mean truncation ratio over moving vertices and iterations.
    pub mean_t_v: f64,
    /// Mean `|kept| / |proposed|` over moving vertices and iterations.
    pub mean_preserved: f64,
    pub kinetic_energy: f64,
    /// Mean per-vertex displacement magnitude over the step.
    pub mean_displacement: f64,
    pub iterations: usize,
    pub dap_non_converged: usize,
}

/// Wall-clock seconds per phase of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StepTimings {
    pub collision: f64,
    pub solve: f64,
    pub truncate: f64,
    pub oracle: f64,
}

// ------------------------------------------------------------ free functions

/// Inertial prediction `ΔX = Δt·V + Δt²·g`, i.e. `Y − X`.
pub fn initial_guess(velocities: &[Vec3], dt: f64, gravity: Vec3) -> Vec<Vec3> {
    velocities.iter().map(|v| v * dt + gravity * (dt * dt)).collect()
}

/// Uniform scale `γ·toi` of the earliest linear impact, or 1.
pub fn global_ccd_truncate(mesh: &TriMesh, positions: &[Vec3], delta: &[Vec3], gamma_r: f64, with_tets: bool) -> f64 {
    let r = if with_tets { ccd_linear_with_tets(positions, delta, mesh) } else { ccd_linear(positions, delta, mesh) };
    ccd_scale(&r, gamma_r)
}

fn ccd_scale(r: &CcdReport, gamma_r: f64) -> f64 {
    match r.toi {
        Some(t) => gamma_r * t,
        None => 1.0,
    }
}

/// Truncates a per-vertex linear displacement with one of the four modes
/// against `positions` (a standalone entry point; DAP uses the identity
/// metric unless `metrics` is given).
pub fn truncate_linear(
    mode: TruncationMode,
    mesh: &TriMesh,
    positions: &[Vec3],
    delta: &[Vec3],
    config: &DatConfig,
    metrics: Option<&[SpdMetric3]>,
) -> Result<Vec<Vec3>, SimError> {
    Ok(match mode {
        TruncationMode::Isotropic => {
            isotropic_dat(mesh, &build_adjacency(mesh), positions, delta, config).truncated_delta
        }
        TruncationMode::Planar => {
            let c = query_contact_set(mesh, positions, config.r_q);
            planar_dat(mesh, positions, delta, &c, config).truncated_delta
        }
        TruncationMode::Dap => {
            let c = query_contact_set(mesh, positions, config.r_q);
            let id;
            let m = match metrics {
                Some(m) => m,
                None => {
                    id = vec![SpdMetric3::identity(); delta.len()];
                    &id
                }
            };
            dap_step(mesh, positions, delta, &c, m, config)?.truncation.truncated_delta
        }
        TruncationMode::GlobalCcd => {
            let t = global_ccd_truncate(mesh, positions, delta, config.gamma_r, config.enable_inversion);
            delta.iter().map(|d| d * t).collect()
        }
    })
}

// ------------------------------------------------------------ solver

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spring {
    pub a: usize,
    pub b: usize,
    pub rest: f64,
    pub k: f64,
}

/// What the inner solver needs to know about the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverModel {
    /// Per-vertex mass; `+∞` for vertices the solver must not move.
    pub mass: Vec<f64>,
    pub springs: Vec<Spring>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOutput {
    /// Newton step of each vertex's local energy (zero for infinite mass).
    pub increment: Vec<Vec3>,
    /// Local Hessian blocks (coupling factors included).
    pub hessian: Vec<Mat3>,
    /// Elastic, contact and friction force on each vertex.
    pub force: Vec<Vec3>,
    /// Scalar contact stiffness seen by each vertex.
    pub contact_stiffness: Vec<f64>,
    /// Mean force residual over movable vertices.
    pub residual: f64,
}

struct Contribution {
    v: usize,
    f: Vec3,
    h: Mat3,
    k: f64,
}

fn contact_terms(pair: &PrimPair, cur: &[Vec3], start: &[Vec3], config: &SimConfig) -> Vec<Contribution> {
    // side A gets +f·n, side B −f·n; weights split the force over vertices
    let (va, wa, vb, wb, pa, pb): (Vec<usize>, Vec<f64>, Vec<usize>, Vec<f64>, Vec3, Vec3) = match *pair {
        PrimPair::VertexTriangle { v, tri } => match closest_point_triangle(cur[v], tri.map(|i| cur[i])) {
            Ok(r) => (vec![v], vec![1.0], tri.to_vec(), r.weights_b.to_vec(), cur[v], r.point_on_b),
            Err(_) => return vec![],
        },
        PrimPair::EdgeEdge { a, b } => match closest_points_segments(a.map(|i| cur[i]), b.map(|i| cur[i])) {
            Ok(r) => (a.to_vec(), r.weights_a.to_vec(), b.to_vec(), r.weights_b.to_vec(), r.point_on_a, r.point_on_b),
            Err(_) => return vec![],
        },
    };
    let diff = pa - pb;
    let d = diff.norm();
    if d >= config.r_c || d <= 0.0 || config.k_c == 0.0 {
        return vec![];
    }
    let n = diff / d;
    let fn_mag = config.k_c * (config.r_c - d);
    let nn = n * n.transpose();
    // relative tangential motion since the start of the step
    let disp = |vs: &[usize], ws: &[f64]| vs.iter().zip(ws).map(|(&v, &w)| (cur[v] - start[v]) * w).sum::<Vec3>();
    let u = disp(&va, &wa) - disp(&vb, &wb);
    let u_t = u - n * n.dot(&u);
    let eps = (1e-3 * config.dt).max(1e-12);
    let (f_t, h_t) = if config.mu_f > 0.0 {
        let s = config.mu_f * fn_mag / u_t.norm().max(eps);
        (-u_t * s, (Mat3::identity() - nn) * s)
    } else {
        (Vec3::zeros(), Mat3::zeros())
    };
    let f = n * fn_mag + f_t;
    let h = nn * config.k_c + h_t;
    let mut out = Vec::with_capacity(4);
    for (&v, &w) in va.iter().zip(&wa) {
        out.push(Contribution { v, f: f * w, h: h * (w * w), k: config.k_c * w * w });
    }
    for (&v, &w) in vb.iter().zip(&wb) {
        out.push(Contribution { v, f: -f * w, h: h * (w * w), k: config.k_c * w * w });
    }
    out
}

/// One Jacobi pass of per-vertex Newton descent on
/// `½m|x−y|²/Δt² + Σ ½k(|e|−L₀)² + Σ ½k_c·max(0, r_c−d)²` plus the friction
/// proxy, evaluated at `current`. `start` are the positions at the start of
/// the step and `y` the inertial targets.
pub fn solver_iteration(
    model: &SolverModel,
    current: &[Vec3],
    start: &[Vec3],
    y: &[Vec3],
    pairs: &[PrimPair],
    config: &SimConfig,
) -> SolverOutput {
    let n = current.len();
    let mut force = vec![Vec3::zeros(); n];
    let mut hess = vec![Mat3::zeros(); n];
    let mut kc = vec![0.0; n];

    let spring_terms: Vec<(Vec3, Mat3)> = model
        .springs
        .par_iter()
        .map(|s| {
            let e = current[s.a] - current[s.b];
            let l = e.norm();
            if l == 0.0 {
                return (Vec3::zeros(), Mat3::identity() * s.k);
            }
            let d = e / l;
            let dd = d * d.transpose();
            let h = dd * s.k + (Mat3::identity() - dd) * (s.k * (1.0 - s.rest / l).max(0.0));
            (-d * (s.k * (l - s.rest)), h)
        })
        .collect();
    for (s, (f, h)) in model.springs.iter().zip(&spring_terms) {
        force[s.a] += f;
        force[s.b] -= f;
        hess[s.a] += h * SPRING_COUPLING;
        hess[s.b] += h * SPRING_COUPLING;
    }

    let contact: Vec<Vec<Contribution>> = pairs.par_iter().map(|p| contact_terms(p, current, start, config)).collect();
    for c in contact.iter().flatten() {
        force[c.v] += c.f;
        hess[c.v] += c.h * CONTACT_COUPLING;
        kc[c.v] += c.k * CONTACT_COUPLING;
    }

    let inv_dt2 = 1.0 / (config.dt * config.dt);
    let per_vertex: Vec<(Vec3, Mat3, f64)> = (0..n)
        .into_par_iter()
        .map(|v| {
            let m = model.mass[v];
            if !m.is_finite() {
                return (Vec3::zeros(), hess[v], 0.0);
            }
            let h = hess[v] + Mat3::identity() * (m * inv_dt2);
            let r = force[v] - (current[v] - y[v]) * (m * inv_dt2);
            let step = h.lu().solve(&r).unwrap_or_else(|| r / (m * inv_dt2));
            (step, h, r.norm())
        })
        .collect();
    let movable = model.mass.iter().filter(|m| m.is_finite()).count();
    let residual = per_vertex.iter().map(|p| p.2).sum::<f64>() / movable.max(1) as f64;
    let (increment, hessian): (Vec<Vec3>, Vec<Mat3>) = per_vertex.into_iter().map(|(s, h, _)| (s, h)).unzip();
    SolverOutput { increment, hessian, force, contact_stiffness: kc, residual }
}

// ------------------------------------------------------------ simulator

/// Contact state recorded at a collision detection.
struct Detection {
    contacts: ContactSet,
    pairs: Vec<PrimPair>,
    /// Isotropic mode only: per-vertex displacement bounds.
    bounds: Option<Vec<f64>>,
}

struct Truncated {
    delta: Vec<Vec3>,
    incs: Vec<RigidIncrement>,
    t_sum: f64,
    pf_sum: f64,
    moving: usize,
    non_converged: usize,
}

pub struct Simulator {
    pub scene: Scene,
    pub config: SimConfig,
    pub state: SimState,
    model: SolverModel,
    adjacency: Adjacency,
    roles: Vec<Role>,
    /// Object lock group: vertices of one rigid, animated or static body.
    lock: Vec<Option<usize>>,
    rest_positions: Vec<Vec3>,
    rest_tet_sign: Vec<f64>,
    pub timings: StepTimings,
}

impl Simulator {
    pub fn new(scene: Scene, config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let mesh = &scene.mesh;
        let n = mesh.n_vertices();
        let mut roles = vec![Role::Fixed; n];
        let mut lock = vec![None; n];
        let mut mass = vec![f64::INFINITY; n];
        let mut velocities = vec![Vec3::zeros(); n];
        let mut rigid = Vec::with_capacity(scene.bodies.len());
        let mut covered = vec![false; n];
        for (b, body) in scene.bodies.iter().enumerate() {
            if body.vertices.end > n || body.vertices.start > body.vertices.end {
                return Err(SimError::Config(format!("body `{}` has an invalid vertex range", body.name)));
            }
            if !(body.vertex_mass > 0.0) {
                return Err(SimError::Config(format!("body `{}` needs a positive vertex mass", body.name)));
            }
            for v in body.vertices.clone() {
                if std::mem::replace(&mut covered[v], true) {
                    return Err(SimError::Config(format!("vertex {v} belongs to two bodies")));
                }
            }
            match body.kind {
                BodyKind::Deformable => {
                    for v in body.vertices.clone() {
                        roles[v] = Role::Free;
                        mass[v] = body.vertex_mass;
                        velocities[v] = body.velocity;
                    }
                    rigid.push(None);
                }
                BodyKind::Static => {
                    for v in body.vertices.clone() {
                        lock[v] = Some(b);
                    }
                    rigid.push(None);
                }
                BodyKind::Rigid | BodyKind::Animated => {
                    if body.kind == BodyKind::Animated && body.motion.is_none() {
                        return Err(SimError::Config(format!("animated body `{}` has no motion", body.name)));
                    }
                    let pts = &mesh.positions[body.vertices.clone()];
                    if pts.is_empty() {
                        return Err(SimError::Config(format!("body `{}` has no vertices", body.name)));
                    }
                    let c = pts.iter().sum::<Vec3>() / pts.len() as f64;
                    let ref_vertices: Vec<Vec3> = pts.iter().map(|p| p - c).collect();
                    let m = body.vertex_mass * pts.len() as f64;
                    let r2 = ref_vertices.iter().map(|r| r.norm_squared()).sum::<f64>() * body.vertex_mass;
                    for (local, v) in body.vertices.clone().enumerate() {
                        roles[v] = Role::Body { body: b, local };
                        lock[v] = Some(b);
                    }
                    let (theta, x) = match &body.motion {
                        Some(mo) if body.kind == BodyKind::Animated => {
                            let (th, dx) = mo.pose(0.0);
                            (th, c + dx)
                        }
                        _ => (Vec3::zeros(), c),
                    };
                    let st = RigidBodyState {
                        pose: RigidPose { theta, x, ref_vertices },
                        velocity: if body.kind == BodyKind::Rigid { body.velocity } else { Vec3::zeros() },
                        angular_velocity: if body.kind == BodyKind::Rigid {
                            body.angular_velocity
                        } else {
                            Vec3::zeros()
                        },
                        mass: m,
                        inertia: (2.0 / 3.0 * r2).max(m * 1e-12),
                        rest_center: c,
                    };
                    rigid.push(Some(st));
                }
            }
        }
        for (g, pin) in scene.pins.iter().enumerate() {
            for &v in &pin.vertices {
                if v >= n || roles[v] != Role::Free {
                    return Err(SimError::Config(format!("pin group {g}: vertex {v} is not a deformable vertex")));
                }
                roles[v] = Role::Pinned(g);
            }
        }
        let mut springs = Vec::new();
        let mut spring_edges = std::collections::BTreeMap::new();
        for body in scene.bodies.iter().filter(|b| b.kind == BodyKind::Deformable) {
            let inside = |v: usize| body.vertices.contains(&v);
            for e in &mesh.edges {
                if inside(e[0]) && inside(e[1]) {
                    spring_edges.entry(*e).or_insert(body.elastic_mu);
                }
            }
            for t in &mesh.tets {
                if t.iter().all(|&v| inside(v)) {
                    for i in 0..4 {
                        for j in i + 1..4 {
                            let (a, b) = (t[i].min(t[j]), t[i].max(t[j]));
                            spring_edges.entry([a, b]).or_insert(body.elastic_mu);
                        }
                    }
                }
            }
        }
        for ([a, b], mu) in spring_edges {
            let rest = (mesh.positions[a] - mesh.positions[b]).norm();
            if rest > 0.0 && mu > 0.0 {
                springs.push(Spring { a, b, rest, k: mu / rest });
            }
        }
        let rest_tet_sign = mesh.tets.iter().map(|t| tet_signed_volume(&mesh.positions, *t).signum()).collect();
        let mut state = SimState { time: 0.0, step: 0, positions: mesh.positions.clone(), velocities, rigid };
        // animated bodies start at their t = 0 pose
        let body_pos: Vec<(Range<usize>, Vec<Vec3>)> = scene
            .bodies
            .iter()
            .zip(&state.rigid)
            .filter_map(|(b, st)| {
                st.as_ref().map(|s| (b.vertices.clone(), s.positions(&RigidIncrement::default(), 0.0).collect()))
            })
            .collect();
        for (range, pts) in body_pos {
            state.positions[range].copy_from_slice(&pts);
        }
        let adjacency = build_adjacency(mesh);
        let rest_positions = mesh.positions.clone();
        Ok(Simulator {
            model: SolverModel { mass, springs },
            adjacency,
            roles,
            lock,
            rest_positions,
            rest_tet_sign,
            scene,
            config,
            state,
            timings: StepTimings::default(),
        })
    }

    pub fn model(&self) -> &SolverModel {
        &self.model
    }

    fn pin_active(&self, g: usize, t: f64) -> bool {
        self.scene.pins[g].release_time.is_none_or(|r| t < r)
    }

    fn pin_target(&self, g: usize, v: usize, t: f64) -> Vec3 {
        let pin = &self.scene.pins[g];
        let (theta, dx) = pin.motion.as_ref().map(|m| m.pose(t)).unwrap_or((Vec3::zeros(), Vec3::zeros()));
        pin.center + crate::geom::rodrigues(theta, self.rest_positions[v] - pin.center) + dx
    }

    fn detect(&self, base: &[Vec3]) -> Detection {
        let mesh = &self.scene.mesh;
        let mut contacts = query_contact_set(mesh, base, self.config.r_q);
        let locked = |vs: &[usize]| {
            let g = self.lock[vs[0]];
            g.is_some() && vs.iter().all(|&v| self.lock[v] == g)
        };
        contacts.vt_pairs.retain(|&(v, t)| {
            let tri = mesh.triangles[t];
            !locked(&[v, tri[0], tri[1], tri[2]])
        });
        contacts.ee_pairs.retain(|&(a, b)| {
            let (ea, eb) = (mesh.edges[a], mesh.edges[b]);
            !locked(&[ea[0], ea[1], eb[0], eb[1]])
        });
        let pairs = collect_pairs(mesh, &contacts, false).into_iter().map(|(_, p)| p).collect();
        let bounds = (self.config.truncation_mode == TruncationMode::Isotropic).then(|| {
            let d = min_distance_per_primitive(mesh, base, 10.0 * self.config.r_q);
            let mut radii: IsotropicRadii = isotropic_radii(&d, self.config.gamma_r, self.config.r_q);
            if self.config.enable_inversion {
                apply_inversion_radii(&mut radii, mesh, base, self.config.gamma_r);
            }
            isotropic_vertex_bounds(&self.adjacency, &radii)
        });
        Detection { contacts, pairs, bounds }
    }

    /// Positions along the proposed motion at parameter `s`.
    fn config_at(&self, base: &[Vec3], delta: &[Vec3], incs: &[RigidIncrement], s: f64) -> Vec<Vec3> {
        let mut x: Vec<Vec3> = base.iter().zip(delta).map(|(p, d)| p + d * s).collect();
        for (b, st) in self.state.rigid.iter().enumerate() {
            if let Some(st) = st {
                let r = self.scene.bodies[b].vertices.clone();
                for (v, p) in r.zip(st.positions(&incs[b], s)) {
                    x[v] = p;
                }
            }
        }
        x
    }

    fn has_rigid_motion(&self, incs: &[RigidIncrement]) -> bool {
        self.state.rigid.iter().zip(incs).any(|(s, i)| s.is_some() && !i.is_zero())
    }

    /// Applies the configured truncation to a proposed displacement,
    /// measured from the committed `base`.
    fn truncate(
        &self,
        base: &[Vec3],
        proposed: &[Vec3],
        incs: &[RigidIncrement],
        det: &Detection,
        hessian: &[Mat3],
    ) -> Result<Truncated, SimError> {
        let cfg = &self.config;
        let dcfg = cfg.dat_config();
        let mesh = &self.scene.mesh;
        let ccfg = cfg.curved_config();
        let mut non_converged = 0;
        let mut global_t = 1.0;
        let mut frozen_incs: Option<Vec<RigidIncrement>> = None;
        let (mut delta, t_v) = match cfg.truncation_mode {
            TruncationMode::Isotropic => {
                let bounds = det.bounds.as_ref().expect("isotropic bounds");
                let t: Vec<f64> =
                    proposed.iter().zip(bounds).map(|(d, &b)| crate::dat::ratio_for_bound(*d, b)).collect();
                (proposed.iter().zip(&t).map(|(d, &t)| d * t).collect::<Vec<_>>(), t)
            }
            TruncationMode::Planar => {
                let r = planar_dat(mesh, base, proposed, &det.contacts, &dcfg);
                (r.truncated_delta, r.t_v)
            }
            TruncationMode::Dap => {
                let metrics: Vec<SpdMetric3> =
                    hessian.iter().map(|h| SpdMetric3::new(*h).unwrap_or_else(|_| SpdMetric3::identity())).collect();
                let out = dap_step(mesh, base, proposed, &det.contacts, &metrics, &dcfg)?;
                non_converged = out.non_converged;
                (out.truncation.truncated_delta, out.truncation.t_v)
            }
            TruncationMode::GlobalCcd => {
                let (prop, gincs) = self.freeze_touching(base, proposed, incs, det);
                let with_tets = cfg.enable_inversion;
                let r = if self.has_rigid_motion(&gincs) {
                    let k = ccfg.k_samples.max(1);
                    let configs: Vec<Vec<Vec3>> =
                        (0..=k).map(|j| self.config_at(base, &prop, &gincs, j as f64 / k as f64)).collect();
                    ccd_path(&configs, mesh, with_tets)
                } else if with_tets {
                    ccd_linear_with_tets(base, &prop, mesh)
                } else {
                    ccd_linear(base, &prop, mesh)
                };
                global_t = ccd_scale(&r, cfg.gamma_r);
                let t_v = prop.iter().map(|d| if *d == Vec3::zeros() { 0.0 } else { global_t }).collect();
                frozen_incs = Some(gincs);
                (prop.iter().map(|d| d * global_t).collect(), t_v)
            }
        };

        // rigid and animated bodies follow their curved paths
        let mut out_incs = incs.to_vec();
        let body_planes = if matches!(cfg.truncation_mode, TruncationMode::Planar | TruncationMode::Dap) {
            self.rigid_planes(base, proposed, det)
        } else {
            vec![]
        };
        let mut body_t = vec![1.0; incs.len()];
        for (b, st) in self.state.rigid.iter().enumerate() {
            let Some(st) = st else { continue };
            let t_b = match cfg.truncation_mode {
                TruncationMode::Isotropic => {
                    let bounds = det.bounds.as_ref().expect("isotropic bounds");
                    rigid_sphere_truncate(&st.pose, &incs[b], &bounds[self.scene.bodies[b].vertices.clone()], &ccfg)
                }
                TruncationMode::Planar | TruncationMode::Dap => match &body_planes[b] {
                    None => 0.0,
                    Some(planes) => {
                        rigid_truncate(&[(st.pose.clone(), incs[b])], std::slice::from_ref(planes), cfg.r_q, &ccfg).t_b
                            [0]
                    }
                },
                TruncationMode::GlobalCcd => global_t,
            };
            body_t[b] = t_b;
            out_incs[b] = frozen_incs.as_ref().map_or(incs[b], |f| f[b]).scaled(t_b);
            let r = self.scene.bodies[b].vertices.clone();
            for (v, p) in r.zip(st.positions(&out_incs[b], 1.0)) {
                delta[v] = p - base[v];
            }
        }

        let (mut t_sum, mut pf_sum, mut moving) = (0.0, 0.0, 0usize);
        for v in 0..proposed.len() {
            let l = proposed[v].norm();
            if l == 0.0 {
                continue;
            }
            let t = match self.roles[v] {
                Role::Body { body, .. } => body_t[body],
                _ => t_v[v],
            };
            t_sum += t;
            pf_sum += (delta[v].norm() / l).min(1.0);
            moving += 1;
        }
        Ok(Truncated { delta, incs: out_incs, t_sum, pf_sum, moving, non_converged })
    }

    /// Global line search has no per-pair room: pairs already closer than
    /// [`TOUCH_EPS`] stay frozen, as in the divided modes, instead of
    /// creeping geometrically toward contact.
    fn freeze_touching(
        &self,
        base: &[Vec3],
        proposed: &[Vec3],
        incs: &[RigidIncrement],
        det: &Detection,
    ) -> (Vec<Vec3>, Vec<RigidIncrement>) {
        let (mut prop, mut incs) = (proposed.to_vec(), incs.to_vec());
        for pair in &det.pairs {
            let d = match *pair {
                PrimPair::VertexTriangle { v, tri } => crate::broadphase::vt_distance(base, v, tri),
                PrimPair::EdgeEdge { a, b } => crate::broadphase::ee_distance(base, a, b),
            };
            if d > TOUCH_EPS {
                continue;
            }
            for v in pair.vertices() {
                prop[v] = Vec3::zeros();
                if let Role::Body { body, .. } = self.roles[v] {
                    incs[body] = RigidIncrement::default();
                }
            }
        }
        (prop, incs)
    }

    /// Division planes of each rigid body vertex; `None` for a body in a
    /// touching pair (it must not move).
    fn rigid_planes(&self, base: &[Vec3], proposed: &[Vec3], det: &Detection) -> Vec<Option<Vec<Vec<DivisionPlane>>>> {
        let mut out: Vec<Option<Vec<Vec<DivisionPlane>>>> = self
            .scene
            .bodies
            .iter()
            .zip(&self.state.rigid)
            .map(|(b, s)| s.as_ref().map(|_| vec![Vec::new(); b.vertices.len()]))
            .collect();
        if out.iter().all(|o| o.is_none()) {
            return out;
        }
        for pair in &det.pairs {
            let verts = pair.vertices();
            if !verts.iter().any(|&v| matches!(self.roles[v], Role::Body { .. })) {
                continue;
            }
            match pair_vertex_planes(pair, base, proposed, self.config.lambda_policy, ROOM_SHARE_FLOOR) {
                Ok(planes) => {
                    for (v, pl) in planes {
                        if let Role::Body { body, local } = self.roles[v] {
                            if let Some(list) = out[body].as_mut() {
                                list[local].push(pl);
                            }
                        }
                    }
                }
                Err(_) => {
                    for v in verts {
                        if let Role::Body { body, .. } = self.roles[v] {
                            out[body] = None;
                        }
                    }
                }
            }
        }
        out
    }

    fn describe_hit(&self, report: &CcdReport, base: &[Vec3], delta: &[Vec3], det: &Detection) -> String {
        let Some(CcdHit::Pair(p)) = report.pair else {
            return format!("{:?}", report.pair);
        };
        let dist = match p {
            PrimPair::VertexTriangle { v, tri } => crate::broadphase::vt_distance(base, v, tri),
            PrimPair::EdgeEdge { a, b } => crate::broadphase::ee_distance(base, a, b),
        };
        let moves: Vec<String> =
            p.vertices().iter().map(|&v| format!("{v}: {:?} |d|={:.3e}", self.roles[v], delta[v].norm())).collect();
        format!("{p:?} at base distance {dist:.3e} (in contact set: {}); {}", det.pairs.contains(&p), moves.join(", "))
    }

    /// Oracle-checks and commits `base + delta`.
    fn commit(
        &mut self,
        base: &mut Vec<Vec3>,
        delta: &mut [Vec3],
        incs: &mut [RigidIncrement],
        det: &Detection,
        iteration: usize,
    ) -> Result<(), SimError> {
        let mesh = &self.scene.mesh;
        if self.config.check_oracle {
            let t0 = Instant::now();
            let with_tets = self.config.enable_inversion;
            let report = if self.has_rigid_motion(incs) {
                let configs: Vec<Vec<Vec3>> = (0..=ORACLE_CHORDS)
                    .map(|j| self.config_at(base, delta, incs, j as f64 / ORACLE_CHORDS as f64))
                    .collect();
                ccd_path(&configs, mesh, with_tets)
            } else if with_tets {
                ccd_linear_with_tets(base, delta, mesh)
            } else {
                ccd_linear(base, delta, mesh)
            };
            self.timings.oracle += t0.elapsed().as_secs_f64();
            if let Some(toi) = report.toi {
                return Err(SimError::Penetration {
                    step: self.state.step,
                    iteration,
                    detail: format!("toi {toi:.6e}, {}", self.describe_hit(&report, base, delta, det)),
                });
            }
            if !(report.min_separation > 0.0) {
                return Err(SimError::Penetration {
                    step: self.state.step,
                    iteration,
                    detail: format!("minimum separation {:e}", report.min_separation),
                });
            }
        }
        let new_pos = self.config_at(base, delta, incs, 1.0);
        if self.config.enable_inversion {
            for (i, t) in mesh.tets.iter().enumerate() {
                let vol = tet_signed_volume(&new_pos, *t);
                if vol.signum() != self.rest_tet_sign[i] || vol == 0.0 {
                    return Err(SimError::Inversion { step: self.state.step, iteration, tet: i });
                }
            }
        }
        for (st, inc) in self.state.rigid.iter_mut().zip(incs.iter_mut()) {
            if let Some(st) = st {
                st.pose.theta += inc.delta_theta;
                st.pose.x += inc.delta_x;
            }
            *inc = RigidIncrement::default();
        }
        *base = new_pos;
        delta.iter_mut().for_each(|d| *d = Vec3::zeros());
        Ok(())
    }

    /// Proposed displacement of prescribed vertices and animated bodies
    /// toward their targets at time `t1`, from `base`.
    fn prescribed(&self, base: &[Vec3], t1: f64, proposed: &mut [Vec3], incs: &mut [RigidIncrement]) {
        for v in 0..proposed.len() {
            if let Role::Pinned(g) = self.roles[v] {
                if self.pin_active(g, self.state.time) {
                    proposed[v] = self.pin_target(g, v, t1) - base[v];
                }
            }
        }
        for (b, st) in self.state.rigid.iter().enumerate() {
            let (Some(st), BodyKind::Animated) = (st, self.scene.bodies[b].kind) else {
                continue;
            };
            incs[b] = self.animated_advance(b, st, t1);
        }
    }

    /// Increment that takes animated body `b` from its committed pose to
    /// its target at `t1`; truncation meters it, and any remainder carries
    /// over to later iterations and steps.
    pub fn animated_target_increment(&self, b: usize, t1: f64) -> Option<RigidIncrement> {
        let st = self.state.rigid.get(b)?.as_ref()?;
        (self.scene.bodies[b].kind == BodyKind::Animated).then(|| self.animated_advance(b, st, t1))
    }

    fn animated_advance(&self, b: usize, st: &RigidBodyState, t1: f64) -> RigidIncrement {
        let (theta, dx) = self.scene.bodies[b].motion.as_ref().expect("animated body has motion").pose(t1);
        RigidIncrement { delta_theta: theta - st.pose.theta, delta_x: st.rest_center + dx - st.pose.x }
    }

    fn linearized(&self, base: &[Vec3], proposed: &mut [Vec3], incs: &[RigidIncrement]) {
        for (b, st) in self.state.rigid.iter().enumerate() {
            if let Some(st) = st {
                let r = self.scene.bodies[b].vertices.clone();
                for (v, p) in r.zip(st.positions(&incs[b], 1.0)) {
                    proposed[v] = p - base[v];
                }
            }
        }
    }

    /// Advances one time step.
    pub fn step(&mut self) -> Result<StepMetrics, SimError> {
        let cfg = self.config.clone();
        let dt = cfg.dt;
        let g = cfg.gravity();
        let t1 = self.state.time + dt;
        let x_in = self.state.positions.clone();
        let poses_in: Vec<Option<(Vec3, Vec3)>> =
            self.state.rigid.iter().map(|s| s.as_ref().map(|s| (s.pose.theta, s.pose.x))).collect();
        let nb = self.scene.bodies.len();

        // inertial targets
        let guess = initial_guess(&self.state.velocities, dt, g);
        let y: Vec<Vec3> = x_in.iter().zip(&guess).map(|(x, d)| x + d).collect();
        let mut rigid_y = vec![(Vec3::zeros(), Vec3::zeros()); nb];
        let mut proposed = vec![Vec3::zeros(); x_in.len()];
        let mut incs = vec![RigidIncrement::default(); nb];
        for v in 0..proposed.len() {
            match self.roles[v] {
                Role::Free => proposed[v] = guess[v],
                Role::Pinned(g) if !self.pin_active(g, self.state.time) => proposed[v] = guess[v],
                _ => {}
            }
        }
        for (b, st) in self.state.rigid.iter().enumerate() {
            let Some(st) = st else { continue };
            if self.scene.bodies[b].kind == BodyKind::Rigid {
                let d =
                    RigidIncrement { delta_theta: st.angular_velocity * dt, delta_x: st.velocity * dt + g * (dt * dt) };
                rigid_y[b] = (st.pose.theta + d.delta_theta, st.pose.x + d.delta_x);
                incs[b] = d;
            }
        }

        let mut base = x_in.clone();
        let t0 = Instant::now();
        let mut det = self.detect(&base);
        self.timings.collision += t0.elapsed().as_secs_f64();
        self.prescribed(&base, t1, &mut proposed, &mut incs);
        self.linearized(&base, &mut proposed, &incs);
        let mut hessian: Vec<Mat3> = self
            .model
            .mass
            .iter()
            .map(|&m| if m.is_finite() { Mat3::identity() * (m / (dt * dt)) } else { Mat3::identity() })
            .collect();
        let t0 = Instant::now();
        let tr = self.truncate(&base, &proposed, &incs, &det, &hessian)?;
        self.timings.truncate += t0.elapsed().as_secs_f64();
        let (mut t_sum, mut pf_sum, mut moving, mut non_conv) = (tr.t_sum, tr.pf_sum, tr.moving, tr.non_converged);
        let mut delta = tr.delta;
        let mut acc_incs = tr.incs;

        let mut iterations = 0;
        for i in 0..cfg.n_iter {
            if i > 0 && i % cfg.cd_every == 0 {
                self.commit(&mut base, &mut delta, &mut acc_incs, &det, i)?;
                let t0 = Instant::now();
                det = self.detect(&base);
                self.timings.collision += t0.elapsed().as_secs_f64();
            }
            iterations += 1;
            let t0 = Instant::now();
            let current = self.config_at(&base, &delta, &acc_incs, 1.0);
            let out = solver_iteration(&self.model, &current, &x_in, &y, &det.pairs, &cfg);
            let mut proposed: Vec<Vec3> = delta.iter().zip(&out.increment).map(|(d, s)| d + s).collect();
            let mut incs = acc_incs.clone();
            for (b, st) in self.state.rigid.iter().enumerate() {
                let Some(st) = st else { continue };
                if self.scene.bodies[b].kind != BodyKind::Rigid {
                    continue;
                }
                incs[b] = acc_incs[b]
                    + rigid_solver_step(
                        st,
                        &acc_incs[b],
                        rigid_y[b],
                        &current,
                        &out,
                        self.scene.bodies[b].vertices.clone(),
                        dt,
                    );
            }
            self.prescribed(&base, t1, &mut proposed, &mut incs);
            self.linearized(&base, &mut proposed, &incs);
            hessian = out.hessian;
            self.timings.solve += t0.elapsed().as_secs_f64();

            let t0 = Instant::now();
            let tr = self.truncate(&base, &proposed, &incs, &det, &hessian)?;
            self.timings.truncate += t0.elapsed().as_secs_f64();
            t_sum += tr.t_sum;
            pf_sum += tr.pf_sum;
            moving += tr.moving;
            non_conv += tr.non_converged;
            delta = tr.delta;
            acc_incs = tr.incs;
            if cfg.residual_tol.is_some_and(|tol| out.residual < tol) {
                break;
            }
        }
        self.commit(&mut base, &mut delta, &mut acc_incs, &det, cfg.n_iter)?;

        // velocities
        self.state.velocities = base.iter().zip(&x_in).map(|(x, x0)| (x - x0) / dt).collect();
        for (st, p0) in self.state.rigid.iter_mut().zip(&poses_in) {
            if let (Some(st), Some((th0, x0))) = (st, p0) {
                st.angular_velocity = (st.pose.theta - th0) / dt;
                st.velocity = (st.pose.x - x0) / dt;
            }
        }
        self.state.positions = base;
        self.state.time = t1;
        self.state.step += 1;

        let mesh = &self.scene.mesh;
        let d = min_distance_per_primitive(mesh, &self.state.positions, cfg.r_q);
        let min_sep = d.vertex.iter().chain(&d.edge).copied().fold(f64::INFINITY, f64::min);
        let mut ke = 0.0;
        for (v, vel) in self.state.velocities.iter().enumerate() {
            if self.model.mass[v].is_finite() {
                ke += 0.5 * self.model.mass[v] * vel.norm_squared();
            }
        }
        for st in self.state.rigid.iter().flatten() {
            ke += 0.5 * st.mass * st.velocity.norm_squared() + 0.5 * st.inertia * st.angular_velocity.norm_squared();
        }
        let dyn_verts: Vec<usize> = (0..x_in.len()).filter(|&v| self.roles[v] != Role::Fixed).collect();
        let mean_disp = dyn_verts.iter().map(|&v| (self.state.positions[v] - x_in[v]).norm()).sum::<f64>()
            / dyn_verts.len().max(1) as f64;
        let mean = |s: f64| if moving == 0 { 1.0 } else { s / moving as f64 };
        Ok(StepMetrics {
            step: self.state.step,
            time: self.state.time,
            min_separation: min_sep,
            n_pairs: det.contacts.len(),
            mean_t_v: mean(t_sum),
            mean_preserved: mean(pf_sum),
            kinetic_energy: ke,
            mean_displacement: mean_disp,
            iterations,
            dap_non_converged: non_conv,
        })
    }

    /// Whether every tet still has its rest orientation.
    pub fn tets_keep_orientation(&self) -> bool {
        self.scene
            .mesh
            .tets
            .iter()
            .zip(&self.rest_tet_sign)
            .all(|(t, &s)| tet_signed_volume(&self.state.positions, *t).signum() == s)
    }
}

/// Jacobi step of a free rigid body: Newton on the inertia of its centre
/// and (scalar) rotational inertia, driven by the vertex forces.
fn rigid_solver_step(
    st: &RigidBodyState,
    acc: &RigidIncrement,
    y: (Vec3, Vec3),
    current: &[Vec3],
    out: &SolverOutput,
    range: Range<usize>,
    dt: f64,
) -> RigidIncrement {
    let inv_dt2 = 1.0 / (dt * dt);
    let c = st.pose.x + acc.delta_x;
    let theta = st.pose.theta + acc.delta_theta;
    let (mut f, mut tau, mut k_lin, mut k_rot) = (Vec3::zeros(), Vec3::zeros(), 0.0, 0.0);
    for v in range {
        let r = current[v] - c;
        f += out.force[v];
        tau += r.cross(&out.force[v]);
        k_lin += out.contact_stiffness[v];
        k_rot += out.contact_stiffness[v] * r.norm_squared();
    }
    let dx = (f - (c - y.1) * (st.mass * inv_dt2)) / (st.mass * inv_dt2 + k_lin);
    let dth = (tau - (theta - y.0) * (st.inertia * inv_dt2)) / (st.inertia * inv_dt2 + k_rot);
    RigidIncrement { delta_theta: dth, delta_x: dx }
}

impl std::ops::Add for RigidIncrement {
    type Output = RigidIncrement;

    fn add(self, o: RigidIncrement) -> RigidIncrement {
        RigidIncrement { delta_theta: self.delta_theta + o.delta_theta, delta_x: self.delta_x + o.delta_x }
    }
}
