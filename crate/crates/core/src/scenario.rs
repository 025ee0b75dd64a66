//! JSON scene descriptions: objects built from simple shape generators or
//! OBJ files, their kinds, pins and prescribed motions.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::rodrigues;
use crate::mesh::{load_obj, tet_boundary, MeshError, TriMesh};
use crate::sim::{Body, BodyKind, Motion, PinGroup, Scene, SimConfig, SimError};
use crate::Vec3;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("objects[{index}] ({name}): {msg}")]
    Object { index: usize, name: String, msg: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_one")]
    pub steps_per_frame: usize,
    /// Relative paths resolve against the config file's directory.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub sim: SimConfig,
    pub objects: Vec<ObjectConfig>,
}

fn default_frames() -> usize {
    1
}

fn default_one() -> usize {
    1
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectConfig {
    #[serde(default)]
    pub name: String,
    pub kind: BodyKind,
    pub shape: Shape,
    #[serde(default)]
    pub transform: Transform,
    /// Uniform random perturbation of every vertex (seeded).
    #[serde(default)]
    pub jitter: f64,
    pub vertex_mass: Option<f64>,
    pub elastic_mu: Option<f64>,
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub angular_velocity: [f64; 3],
    pub motion: Option<Motion>,
    #[serde(default)]
    pub pins: Vec<PinConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transform {
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Rotation vector.
    #[serde(default)]
    pub rotate: [f64; 3],
    #[serde(default)]
    pub translate: [f64; 3],
}

impl Default for Transform {
    fn default() -> Self {
        Transform { scale: 1.0, rotate: [0.0; 3], translate: [0.0; 3] }
    }
}

impl Transform {
    pub fn apply(&self, p: Vec3) -> Vec3 {
        rodrigues(Vec3::from(self.rotate), p * self.scale) + Vec3::from(self.translate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// Square cloth in the xz-plane, centred at the origin.
    Grid {
        size: [f64; 2],
        resolution: [usize; 2],
    },
    /// Closed box surface, centred at the origin.
    Box {
        size: [f64; 3],
    },
    /// Strip rolled into an Archimedean spiral about the z axis; `u = 0`
    /// (the first vertex of each row) is the outer end.
    Spiral {
        inner_radius: f64,
        /// Radial gain per turn.
        pitch: f64,
        turns: f64,
        width: f64,
        resolution: [usize; 2],
    },
    /// Box volume split into tets (six per cell); the surface is the tet
    /// boundary.
    TetBox {
        size: [f64; 3],
        resolution: [usize; 3],
    },
    Triangle {
        vertices: [[f64; 3]; 3],
    },
    /// A lone vertex.
    Point {
        position: [f64; 3],
    },
    /// Closed extruded gear (teeth around the z axis), centred at the origin.
    Gear {
        radius: f64,
        tooth_depth: f64,
        teeth: usize,
        thickness: f64,
    },
    /// An OBJ file (with an optional `.tets` sidecar).
    Obj {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinConfig {
    /// Local vertex indices.
    #[serde(default)]
    pub vertices: Vec<usize>,
    /// World-space box selecting vertices after the transform.
    pub region: Option<Region>,
    /// Defaults to the centroid of the selected vertices.
    pub center: Option<[f64; 3]>,
    pub motion: Option<Motion>,
    pub release_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

/// A `(nu+1)×(nw+1)` vertex sheet placed by `at(u, w)` with `u, w ∈ [0,1]`.
fn grid_mesh(resolution: [usize; 2], at: impl Fn(f64, f64) -> Vec3) -> Result<TriMesh, MeshError> {
    let [nu, nw] = resolution.map(|r| r.max(1));
    let mut pos = Vec::new();
    for j in 0..=nw {
        for i in 0..=nu {
            pos.push(at(i as f64 / nu as f64, j as f64 / nw as f64));
        }
    }
    let id = |i: usize, j: usize| j * (nu + 1) + i;
    let mut tris = Vec::new();
    for j in 0..nw {
        for i in 0..nu {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            // alternate diagonals for symmetry
            if (i + j) % 2 == 0 {
                tris.push([a, c, b]);
                tris.push([a, d, c]);
            } else {
                tris.push([a, d, b]);
                tris.push([b, d, c]);
            }
        }
    }
    TriMesh::new(pos, tris, vec![], vec![])
}

/// Positions, triangles and tets of a shape before transformation.
pub fn generate_shape(shape: &Shape, base_dir: &Path) -> Result<TriMesh, ScenarioError> {
    let v = |a: [f64; 3]| Vec3::from(a);
    let m = match shape {
        Shape::Grid { size, resolution } => {
            grid_mesh(*resolution, |u, w| Vec3::new((u - 0.5) * size[0], 0.0, (w - 0.5) * size[1]))?
        }
        Shape::Spiral { inner_radius, pitch, turns, width, resolution } => {
            grid_mesh(*resolution, |u, w| {
                // outer end first so that `u = 0` is the free edge
                let a = std::f64::consts::TAU * turns * (1.0 - u);
                let r = inner_radius + pitch * a / std::f64::consts::TAU;
                Vec3::new(r * a.cos(), r * a.sin(), (w - 0.5) * width)
            })?
        }
        Shape::Box { size } => {
            let h = v(*size) * 0.5;
            let pos = (0..8)
                .map(|k| {
                    Vec3::new(
                        if k & 1 == 0 { -h.x } else { h.x },
                        if k & 2 == 0 { -h.y } else { h.y },
                        if k & 4 == 0 { -h.z } else { h.z },
                    )
                })
                .collect();
            let tris = vec![
                [0, 2, 1],
                [1, 2, 3],
                [4, 5, 6],
                [5, 7, 6],
                [0, 1, 4],
                [1, 5, 4],
                [2, 6, 3],
                [3, 6, 7],
                [0, 4, 2],
                [2, 4, 6],
                [1, 3, 5],
                [3, 7, 5],
            ];
            TriMesh::new(pos, tris, vec![], vec![])?
        }
        Shape::TetBox { size, resolution } => {
            let [nx, ny, nz] = resolution.map(|r| r.max(1));
            let mut pos = Vec::new();
            for k in 0..=nz {
                for j in 0..=ny {
                    for i in 0..=nx {
                        pos.push(Vec3::new(
                            (i as f64 / nx as f64 - 0.5) * size[0],
                            (j as f64 / ny as f64 - 0.5) * size[1],
                            (k as f64 / nz as f64 - 0.5) * size[2],
                        ));
                    }
                }
            }
            let id = |i: usize, j: usize, k: usize| (k * (ny + 1) + j) * (nx + 1) + i;
            let mut tets = Vec::new();
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        let c = |b: usize| id(i + (b & 1), j + ((b >> 1) & 1), k + ((b >> 2) & 1));
                        // Kuhn split along the 0–7 diagonal
                        for path in [[1, 3], [1, 5], [2, 3], [2, 6], [4, 5], [4, 6]] {
                            let mut t = [c(0), c(path[0]), c(path[1]), c(7)];
                            if crate::mesh::tet_signed_volume(&pos, t) < 0.0 {
                                t.swap(1, 2);
                            }
                            tets.push(t);
                        }
                    }
                }
            }
            let tris = tet_boundary(&tets);
            TriMesh::new(pos, tris, tets, vec![])?
        }
        Shape::Triangle { vertices } => TriMesh::new(vertices.map(v).to_vec(), vec![[0, 1, 2]], vec![], vec![])?,
        Shape::Point { position } => TriMesh::new(vec![v(*position)], vec![], vec![], vec![])?,
        Shape::Gear { radius, tooth_depth, teeth, thickness } => {
            let n = 2 * teeth.max(&3);
            let ring = |z: f64| -> Vec<Vec3> {
                (0..n)
                    .map(|i| {
                        let a = std::f64::consts::TAU * i as f64 / n as f64;
                        let r = if i % 2 == 0 { *radius } else { radius - tooth_depth };
                        Vec3::new(r * a.cos(), r * a.sin(), z)
                    })
                    .collect()
            };
            let h = 0.5 * thickness;
            let mut pos = ring(-h);
            pos.extend(ring(h));
            let (cb, ct) = (pos.len(), pos.len() + 1);
            pos.push(Vec3::new(0.0, 0.0, -h));
            pos.push(Vec3::new(0.0, 0.0, h));
            let mut tris = Vec::new();
            for i in 0..n {
                let j = (i + 1) % n;
                tris.push([cb, j, i]);
                tris.push([ct, n + i, n + j]);
                tris.push([i, j, n + j]);
                tris.push([i, n + j, n + i]);
            }
            TriMesh::new(pos, tris, vec![], vec![])?
        }
        Shape::Obj { path } => load_obj(&base_dir.join(path))?,
    };
    Ok(m)
}

/// A parsed scenario plus the directory its relative paths refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub base_dir: PathBuf,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io { path: path.display().to_string(), source: e })?;
        let config = Self::parse(&text, &path.display().to_string())?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Scenario { config, base_dir })
    }

    pub fn parse(text: &str, name: &str) -> Result<ScenarioConfig, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse { path: name.to_string(), source: e })
    }

    /// Builds the merged scene (object ids follow the object order).
    pub fn build(&self) -> Result<Scene, ScenarioError> {
        let cfg = &self.config;
        cfg.sim.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut parts = Vec::new();
        let mut bodies = Vec::new();
        let mut pins = Vec::new();
        let mut offset = 0;
        for (index, o) in cfg.objects.iter().enumerate() {
            let err = |msg: String| ScenarioError::Object { index, name: o.name.clone(), msg };
            let mut m = generate_shape(&o.shape, &self.base_dir)?;
            for p in m.positions.iter_mut() {
                *p = o.transform.apply(*p);
                if o.jitter > 0.0 {
                    *p += Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                        * o.jitter;
                }
            }
            m.object_ids = vec![index as u32; m.positions.len()];
            if o.kind == BodyKind::Animated && o.motion.is_none() {
                return Err(err("animated objects need a motion".into()));
            }
            if o.kind != BodyKind::Deformable && !o.pins.is_empty() {
                return Err(err("only deformable objects can be pinned".into()));
            }
            if o.kind != BodyKind::Deformable && !m.tets.is_empty() && o.kind != BodyKind::Static {
                log::debug!("objects[{index}]: tets of a non-deformable object are kept only for output");
            }
            for (pi, pc) in o.pins.iter().enumerate() {
                let mut sel: Vec<usize> = pc.vertices.clone();
                if let Some(&bad) = sel.iter().find(|&&v| v >= m.positions.len()) {
                    return Err(err(format!("pins[{pi}]: vertex {bad} out of range")));
                }
                if let Some(r) = &pc.region {
                    let (lo, hi) = (Vec3::from(r.min), Vec3::from(r.max));
                    sel.extend((0..m.positions.len()).filter(|&v| {
                        let p = m.positions[v];
                        (0..3).all(|k| p[k] >= lo[k] && p[k] <= hi[k])
                    }));
                }
                sel.sort_unstable();
                sel.dedup();
                if sel.is_empty() {
                    return Err(err(format!("pins[{pi}] selects no vertices")));
                }
                let center = pc
                    .center
                    .map(Vec3::from)
                    .unwrap_or_else(|| sel.iter().map(|&v| m.positions[v]).sum::<Vec3>() / sel.len() as f64);
                pins.push(PinGroup {
                    vertices: sel.into_iter().map(|v| v + offset).collect(),
                    center,
                    motion: pc.motion.clone(),
                    release_time: pc.release_time,
                });
            }
            let n = m.positions.len();
            bodies.push(Body {
                name: if o.name.is_empty() { format!("object{index}") } else { o.name.clone() },
                kind: o.kind,
                vertices: offset..offset + n,
                vertex_mass: o.vertex_mass.unwrap_or(cfg.sim.vertex_mass),
                elastic_mu: o.elastic_mu.unwrap_or(cfg.sim.elastic_mu),
                motion: o.motion.clone(),
                velocity: Vec3::from(o.velocity),
                angular_velocity: Vec3::from(o.angular_velocity),
            });
            offset += n;
            parts.push(m);
        }
        let mesh = TriMesh::merge(&parts)?;
        Ok(Scene { mesh, bodies, pins })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::tet_signed_volume;

    #[test]
    fn shapes_are_valid() {
        let d = Path::new(".");
        let g = generate_shape(&Shape::Grid { size: [1.0, 1.0], resolution: [3, 2] }, d).unwrap();
        assert_eq!((g.positions.len(), g.triangles.len()), (12, 12));
        let b = generate_shape(&Shape::Box { size: [1.0, 2.0, 3.0] }, d).unwrap();
        assert_eq!((b.positions.len(), b.triangles.len(), b.edges.len()), (8, 12, 18));
        let t = generate_shape(&Shape::TetBox { size: [1.0; 3], resolution: [2, 2, 2] }, d).unwrap();
        assert_eq!(t.tets.len(), 48);
        assert!(t.tets.iter().all(|&k| tet_signed_volume(&t.positions, k) > 0.0));
        let vol: f64 = t.tets.iter().map(|&k| tet_signed_volume(&t.positions, k)).sum();
        assert!((vol - 1.0).abs() < 1e-12);
        // closed surface: 6 faces × 4 cells × 2 triangles
        assert_eq!(t.triangles.len(), 48);
        let gear = generate_shape(&Shape::Gear { radius: 1.0, tooth_depth: 0.2, teeth: 6, thickness: 0.3 }, d).unwrap();
        assert_eq!(gear.triangles.len(), 48);
    }

    #[test]
    fn closed_box_is_outward() {
        let b = generate_shape(&Shape::Box { size: [1.0; 3] }, Path::new(".")).unwrap();
        let vol: f64 = b
            .triangles
            .iter()
            .map(|t| crate::mesh::signed_volume(Vec3::zeros(), b.positions[t[0]], b.positions[t[1]], b.positions[t[2]]))
            .sum();
        assert!((vol - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parse_errors_name_the_field() {
        let e = Scenario::parse(r#"{"objects": [], "sim": {"dtt": 1}}"#, "x.json").unwrap_err();
        assert!(e.to_string().contains("dtt"), "{e}");
        let e = Scenario::parse(
            r#"{"objects": [{"kind": "soft", "shape": {"type": "point", "position": [0,0,0]}}]}"#,
            "x.json",
        )
        .unwrap_err();
        assert!(e.to_string().contains("soft"), "{e}");
    }

    #[test]
    fn rejects_bad_radii() {
        let s = Scenario {
            config: Scenario::parse(r#"{"sim": {"r_c": 0.02, "r_q": 0.01}, "objects": []}"#, "x").unwrap(),
            base_dir: PathBuf::new(),
        };
        assert!(matches!(s.build(), Err(ScenarioError::Sim(SimError::Config(_)))));
    }
}
