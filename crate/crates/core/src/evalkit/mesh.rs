use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::camera::Vec3;
use crate::error::{invalid, io_err, Result};

use super::tables::{EDGE_TABLE, TRI_TABLE};

/// Triangle soup with shared vertices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

const MIN_AREA: f64 = 1e-12;

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= n) {
                return invalid(format!("triangle {i} indexes past {n} vertices"));
            }
        }
        Ok(())
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let t = self.triangles[i];
        [self.vertices[t[0] as usize], self.vertices[t[1] as usize], self.vertices[t[2] as usize]]
    }

    pub fn area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Volume enclosed by a closed mesh; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|i| {
                let [a, b, c] = self.triangle(i);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Appends `other`, re-indexing its triangles.
    pub fn append(&mut self, other: &Mesh) {
        let off = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + off, t[1] + off, t[2] + off]));
    }

    /// Axis-aligned box with outward winding.
    pub fn cuboid(center: Vec3, half: Vec3) -> Mesh {
        let mut vertices = Vec::with_capacity(8);
        for i in 0..8 {
            let s = |bit: usize| if i >> bit & 1 == 1 { 1.0 } else { -1.0 };
            vertices.push(center + Vec3::new(s(0) * half.x, s(1) * half.y, s(2) * half.z));
        }
        // faces as quads (counter-clockwise seen from outside)
        let quads = [
            [0, 4, 6, 2], // -x
            [1, 3, 7, 5], // +x
            [0, 1, 5, 4], // -y
            [2, 6, 7, 3], // +y
            [0, 2, 3, 1], // -z
            [4, 5, 7, 6], // +z
        ];
        let triangles = quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        Mesh { vertices, triangles }
    }

    /// Latitude-longitude sphere with `stacks` rings and `slices` segments.
    pub fn uv_sphere(center: Vec3, radius: f64, stacks: usize, slices: usize) -> Mesh {
        let (stacks, slices) = (stacks.max(2), slices.max(3));
        let mut vertices = vec![center + Vec3::new(0.0, radius, 0.0)];
        for i in 1..stacks {
            let phi = std::f64::consts::PI * i as f64 / stacks as f64;
            for j in 0..slices {
                let th = 2.0 * std::f64::consts::PI * j as f64 / slices as f64;
                vertices.push(center + radius * Vec3::new(phi.sin() * th.cos(), phi.cos(), phi.sin() * th.sin()));
            }
        }
        vertices.push(center - Vec3::new(0.0, radius, 0.0));
        let bottom = vertices.len() as u32 - 1;
        let ring = |i: usize, j: usize| (1 + (i - 1) * slices + j % slices) as u32;
        let mut triangles = Vec::new();
        for j in 0..slices {
            triangles.push([0, ring(1, j + 1), ring(1, j)]);
            triangles.push([bottom, ring(stacks - 1, j), ring(stacks - 1, j + 1)]);
        }
        for i in 1..stacks - 1 {
            for j in 0..slices {
                let (a, b) = (ring(i, j), ring(i, j + 1));
                let (c, d) = (ring(i + 1, j), ring(i + 1, j + 1));
                triangles.push([a, b, d]);
                triangles.push([a, d, c]);
            }
        }
        Mesh { vertices, triangles }
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj()).map_err(io_err(path))
    }

    /// Parses the `v`/`f` subset written by [`Mesh::to_obj`]; polygon faces
    /// are fanned into triangles.
    pub fn parse_obj(text: &str) -> Result<Mesh> {
        let mut mesh = Mesh::default();
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it.take(3).map(str::parse).collect::<std::result::Result<_, _>>().map_err(|e| {
                        crate::VganError::Invalid(format!("obj line {}: {e}", ln + 1))
                    })?;
                    if c.len() != 3 {
                        return invalid(format!("obj line {}: vertex needs 3 coordinates", ln + 1));
                    }
                    mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<u32> = it
                        .map(|tok| tok.split('/').next().unwrap_or("").parse::<u32>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| crate::VganError::Invalid(format!("obj line {}: {e}", ln + 1)))?;
                    if idx.len() < 3 || idx.contains(&0) {
                        return invalid(format!("obj line {}: malformed face", ln + 1));
                    }
                    for k in 1..idx.len() - 1 {
                        mesh.triangles.push([idx[0] - 1, idx[k] - 1, idx[k + 1] - 1]);
                    }
                }
                _ => {}
            }
        }
        mesh.validate()?;
        Ok(mesh)
    }
}

/// Coordinate of lattice index `i` on a `res`-point lattice over [−1, 1].
pub fn lattice_coord(i: usize, res: usize) -> f64 {
    -1.0 + 2.0 * i as f64 / (res - 1) as f64
}

/// All lattice points, x fastest then y then z.
pub fn lattice_points(res: usize) -> Vec<Vec3> {
    let mut pts = Vec::with_capacity(res * res * res);
    for k in 0..res {
        for j in 0..res {
            for i in 0..res {
                pts.push(Vec3::new(lattice_coord(i, res), lattice_coord(j, res), lattice_coord(k, res)));
            }
        }
    }
    pts
}

// corner offsets (x, y, z) and edge endpoints of one cube
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Isosurface `{values = threshold}` of a scalar field sampled on the
/// [`lattice_points`] of a `res³` lattice. The region above the threshold
/// is treated as inside; triangles wind outward.
pub fn marching_cubes(values: &[f64], res: usize, threshold: f64) -> Result<Mesh> {
    if res < 2 || values.len() != res * res * res {
        return invalid(format!("{} samples do not form a {res}³ lattice", values.len()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return invalid("field contains NaN");
    }
    let idx = |i: usize, j: usize, k: usize| (k * res + j) * res + i;
    let point = |n: usize| {
        let (i, j, k) = (n % res, n / res % res, n / (res * res));
        Vec3::new(lattice_coord(i, res), lattice_coord(j, res), lattice_coord(k, res))
    };
    let mut mesh = Mesh::default();
    // lattice edge (lower corner, axis) -> vertex index
    let mut cache: HashMap<(usize, usize), u32> = HashMap::new();
    for k in 0..res - 1 {
        for j in 0..res - 1 {
            for i in 0..res - 1 {
                let corner: [usize; 8] = CORNERS.map(|c| idx(i + c[0], j + c[1], k + c[2]));
                let mut case = 0usize;
                for (b, &n) in corner.iter().enumerate() {
                    if values[n] < threshold {
                        case |= 1 << b;
                    }
                }
                if EDGE_TABLE[case] == 0 {
                    continue;
                }
                let mut ev = [0u32; 12];
                for (e, ends) in EDGES.iter().enumerate() {
                    if EDGE_TABLE[case] & (1 << e) == 0 {
                        continue;
                    }
                    let (a, b) = (corner[ends[0]], corner[ends[1]]);
                    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                    let axis = match hi - lo {
                        1 => 0,
                        d if d == res => 1,
                        _ => 2,
                    };
                    ev[e] = *cache.entry((lo, axis)).or_insert_with(|| {
                        let (va, vb) = (values[lo], values[hi]);
                        let t = if (vb - va).abs() < 1e-300 { 0.5 } else { ((threshold - va) / (vb - va)).clamp(0.0, 1.0) };
                        let p = point(lo) + (point(hi) - point(lo)) * t;
                        mesh.vertices.push(p);
                        mesh.vertices.len() as u32 - 1
                    });
                }
                for tri in TRI_TABLE[case].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    let t = [ev[tri[0] as usize], ev[tri[1] as usize], ev[tri[2] as usize]];
                    if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                        continue;
                    }
                    mesh.triangles.push(t);
                    if mesh.area(mesh.triangles.len() - 1) <= MIN_AREA {
                        mesh.triangles.pop();
                    }
                }
            }
        }
    }
    compact(&mut mesh);
    Ok(mesh)
}

/// Drops vertices no triangle references.
fn compact(mesh: &mut Mesh) {
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    let mut vertices = Vec::new();
    for t in &mut mesh.triangles {
        for v in t.iter_mut() {
            let slot = &mut remap[*v as usize];
            if *slot == u32::MAX {
                *slot = vertices.len() as u32;
                vertices.push(mesh.vertices[*v as usize]);
            }
            *v = *slot;
        }
    }
    mesh.vertices = vertices;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball(res: usize) -> Vec<f64> {
        lattice_points(res)
            .iter()
            .map(|p| if p.norm() < 0.5 { 20.0 } else { 0.0 })
            .collect()
    }

    #[test]
    fn ball_vertices_near_sphere() {
        let res = 32;
        let m = marching_cubes(&ball(res), res, 10.0).unwrap();
        assert!(!m.is_empty());
        for v in &m.vertices {
            assert!((v.norm() - 0.5).abs() < 2.0 / res as f64, "{}", v.norm());
        }
        assert!(m.signed_volume() > 0.0);
    }

    #[test]
    fn empty_field() {
        let m = marching_cubes(&vec![0.0; 8 * 8 * 8], 8, 10.0).unwrap();
        assert!(m.is_empty() && m.vertices.is_empty());
    }

    #[test]
    fn smooth_field_volume() {
        let res = 40;
        let vals: Vec<f64> = lattice_points(res).iter().map(|p| 1.0 - p.norm()).collect();
        let m = marching_cubes(&vals, res, 0.5).unwrap();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.125;
        assert!((m.signed_volume() - exact).abs() < 0.02 * exact);
        for v in &m.vertices {
            assert!((v.norm() - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn primitives_wind_outward() {
        let c = Mesh::cuboid(Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.2, 0.3, 0.4));
        assert!((c.signed_volume() - 0.4 * 0.6 * 0.8).abs() < 1e-12);
        let s = Mesh::uv_sphere(Vec3::zeros(), 1.0, 32, 64);
        let exact = 4.0 / 3.0 * std::f64::consts::PI;
        assert!(s.signed_volume() > 0.0 && (s.signed_volume() - exact).abs() < 0.02 * exact);
    }

    #[test]
    fn obj_round_trip() {
        let c = Mesh::cuboid(Vec3::zeros(), Vec3::new(0.5, 0.5, 0.5));
        let back = Mesh::parse_obj(&c.to_obj()).unwrap();
        assert_eq!(back, c);
    }
}
