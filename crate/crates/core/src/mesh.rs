//! Piecewise-linear triangulations whose nodes sit on the exact surface.

use std::collections::HashMap;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{project_to_surface, velocity, LevelSet, Point};

/// Node coordinates must satisfy `|d(x, t)| ≤ NODE_TOLERANCE`.
pub const NODE_TOLERANCE: f64 = 1e-10;
pub const MAX_ICOSPHERE_LEVEL: u32 = 8;

/// Snapshot of an evolving triangulation. Connectivity never changes.
#[derive(Clone, Debug)]
pub struct SurfaceMesh {
    pub nodes: Vec<Point>,
    /// Counter-clockwise with respect to the outward normal.
    pub elements: Vec<[usize; 3]>,
    pub time: f64,
    /// Interpolated surface velocity `V_h` at the nodes, when known.
    pub node_velocity: Option<Vec<Vector3<f64>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct MeshQualityReport {
    pub max_h: f64,
    pub min_h: f64,
    /// Degrees.
    pub min_angle: f64,
    /// Degrees.
    pub max_angle: f64,
    pub quasi_uniformity: f64,
    pub min_area: f64,
}

impl SurfaceMesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn vertices(&self, element: usize) -> [Point; 3] {
        let [a, b, c] = self.elements[element];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    /// Area of the flat triangle.
    pub fn element_area(&self, element: usize) -> f64 {
        let [a, b, c] = self.vertices(element);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.element_count()).map(|e| self.element_area(e)).sum()
    }

    /// Unique undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .elements
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .map(|(i, j)| (i.min(j), i.max(j)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Every edge is shared by exactly two triangles, with opposite
    /// orientations, and no node index is out of range.
    pub fn check_closed_manifold(&self) -> Result<()> {
        let n = self.nodes.len();
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (e, &[a, b, c]) in self.elements.iter().enumerate() {
            if a >= n || b >= n || c >= n || a == b || b == c || a == c {
                return Err(Error::Mesh(format!("element {e} has invalid vertices {:?}", [a, b, c])));
            }
            for (i, j) in [(a, b), (b, c), (c, a)] {
                if directed.insert((i, j), e).is_some() {
                    return Err(Error::Mesh(format!(
                        "directed edge ({i}, {j}) appears twice; inconsistent orientation"
                    )));
                }
            }
        }
        for &(i, j) in directed.keys() {
            if !directed.contains_key(&(j, i)) {
                return Err(Error::Mesh(format!("edge ({i}, {j}) is on a boundary")));
            }
        }
        Ok(())
    }

    /// Largest `|d(node, time)|`.
    pub fn max_level_set_residual<S: LevelSet + ?Sized>(&self, surface: &S) -> f64 {
        self.nodes
            .iter()
            .map(|x| surface.value(x, self.time).abs())
            .fold(0.0, f64::max)
    }

    pub fn quality(&self) -> MeshQualityReport {
        mesh_quality(self)
    }
}

const ICOSAHEDRON_FACES: [[usize; 3]; 20] = [
    [0, 11, 5],
    [0, 5, 1],
    [0, 1, 7],
    [0, 7, 10],
    [0, 10, 11],
    [1, 5, 9],
    [5, 11, 4],
    [11, 10, 2],
    [10, 7, 6],
    [7, 1, 8],
    [3, 9, 4],
    [3, 4, 2],
    [3, 2, 6],
    [3, 6, 8],
    [3, 8, 9],
    [4, 9, 5],
    [2, 4, 11],
    [6, 2, 10],
    [8, 6, 7],
    [9, 8, 1],
];

fn icosahedron(radius: f64) -> (Vec<Point>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ];
    let nodes = raw
        .iter()
        .map(|&(x, y, z)| Point::new(x, y, z).normalize() * radius)
        .collect();
    (nodes, ICOSAHEDRON_FACES.to_vec())
}

/// Regular icosahedron refined `level` times by edge bisection, each new
/// node pushed out to the sphere of `radius`, then every node projected onto
/// `Γ(t0)`. Produces `10·4^level + 2` nodes.
pub fn icosphere<S: LevelSet + ?Sized>(
    level: u32,
    radius: f64,
    surface: &S,
    t0: f64,
) -> Result<SurfaceMesh> {
    if level > MAX_ICOSPHERE_LEVEL {
        return Err(Error::InvalidArgument(format!(
            "icosphere level {level} exceeds {MAX_ICOSPHERE_LEVEL}"
        )));
    }
    let (mut nodes, mut elements) = icosahedron(radius);
    for _ in 0..level {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut refined = Vec::with_capacity(elements.len() * 4);
        let mut midpoint = |i: usize, j: usize, nodes: &mut Vec<Point>| {
            *midpoints.entry((i.min(j), i.max(j))).or_insert_with(|| {
                let m = ((nodes[i] + nodes[j]) * 0.5).normalize() * radius;
                nodes.push(m);
                nodes.len() - 1
            })
        };
        for &[a, b, c] in &elements {
            let ab = midpoint(a, b, &mut nodes);
            let bc = midpoint(b, c, &mut nodes);
            let ca = midpoint(c, a, &mut nodes);
            refined.push([a, ab, ca]);
            refined.push([b, bc, ab]);
            refined.push([c, ca, bc]);
            refined.push([ab, bc, ca]);
        }
        elements = refined;
    }
    let nodes = nodes
        .par_iter()
        .map(|x| project_to_surface(surface, x, t0))
        .collect::<Result<Vec<_>>>()?;
    Ok(SurfaceMesh {
        nodes,
        elements,
        time: t0,
        node_velocity: None,
    })
}

/// Advances all nodes along `ẋ = v(x, t)` with the classical fourth-order
/// Runge–Kutta method, `substeps` steps of equal size, then re-projects the
/// nodes onto `Γ(t_target)` and records the node velocities there.
///
/// Nodes are independent, so the parallel evaluation is bit-reproducible.
pub fn evolve_mesh<S: LevelSet + ?Sized>(
    mesh: &SurfaceMesh,
    surface: &S,
    t_target: f64,
    substeps: usize,
) -> Result<SurfaceMesh> {
    if t_target < mesh.time {
        return Err(Error::InvalidArgument(format!(
            "cannot evolve backwards from t = {} to t = {t_target}",
            mesh.time
        )));
    }
    if substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be positive".into()));
    }
    let t0 = mesh.time;
    let h = (t_target - t0) / substeps as f64;
    let advance = |x: &Point| -> Result<(Point, Vector3<f64>)> {
        let mut p = *x;
        if h > 0.0 {
            for k in 0..substeps {
                let t = t0 + k as f64 * h;
                let k1 = velocity(surface, &p, t)?;
                let k2 = velocity(surface, &(p + k1 * (0.5 * h)), t + 0.5 * h)?;
                let k3 = velocity(surface, &(p + k2 * (0.5 * h)), t + 0.5 * h)?;
                let k4 = velocity(surface, &(p + k3 * h), t + h)?;
                p += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
            }
        }
        let p = project_to_surface(surface, &p, t_target)?;
        let v = velocity(surface, &p, t_target)?;
        Ok((p, v))
    };
    let advanced = mesh
        .nodes
        .par_iter()
        .map(advance)
        .collect::<Result<Vec<_>>>()?;
    let (nodes, node_velocity) = advanced.into_iter().unzip();
    Ok(SurfaceMesh {
        nodes,
        elements: mesh.elements.clone(),
        time: t_target,
        node_velocity: Some(node_velocity),
    })
}

/// Fills in `node_velocity` at the current time without moving the nodes.
pub fn with_velocity<S: LevelSet + ?Sized>(mesh: &SurfaceMesh, surface: &S) -> Result<SurfaceMesh> {
    let node_velocity = mesh
        .nodes
        .iter()
        .map(|x| velocity(surface, x, mesh.time))
        .collect::<Result<Vec<_>>>()?;
    Ok(SurfaceMesh {
        node_velocity: Some(node_velocity),
        ..mesh.clone()
    })
}

pub fn mesh_quality(mesh: &SurfaceMesh) -> MeshQualityReport {
    let mut max_h = 0.0f64;
    let mut min_h = f64::INFINITY;
    let mut min_angle = 180.0f64;
    let mut max_angle = 0.0f64;
    let mut min_area = f64::INFINITY;
    for e in 0..mesh.element_count() {
        let v = mesh.vertices(e);
        for i in 0..3 {
            let a = v[i];
            let b = v[(i + 1) % 3];
            let c = v[(i + 2) % 3];
            let len = (b - a).norm();
            max_h = max_h.max(len);
            min_h = min_h.min(len);
            let angle = (b - a).angle(&(c - a)).to_degrees();
            min_angle = min_angle.min(angle);
            max_angle = max_angle.max(angle);
        }
        min_area = min_area.min(mesh.element_area(e));
    }
    MeshQualityReport {
        max_h,
        min_h,
        min_angle,
        max_angle,
        quasi_uniformity: max_h / min_h,
        min_area,
    }
}
