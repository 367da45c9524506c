//! Mesh construction, point location and box mapping.
//!
//! Coordinates are continuous pixels with the origin at the top-left of the
//! image, x rightward and y downward. Mesh vertices are absolute pixel
//! positions. A mesh with `rows` = U and `cols` = V cells stores
//! (U+1)x(V+1) vertices row-major.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Residual tolerance (pixels) for the Newton inverse-bilinear solve.
const NEWTON_TOL: f64 = 1e-9;
/// Acceptance slack on local coordinates when locating in a deformed mesh.
const COORD_TOL: f64 = 1e-6;
/// Residual (pixels) above which a located cell candidate is rejected.
const RESIDUAL_TOL: f64 = 1e-6;

/// 2D point or displacement in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// z-component of the 2D cross product.
    pub fn cross(self, rhs: Vec2) -> f64 {
        self.x * rhs.y - self.y * rhs.x
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl std::ops::Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        v * self
    }
}

impl std::ops::Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Location of a point inside a mesh cell: cell indices plus local bilinear
/// coordinates, `u` vertical and `v` horizontal, both in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellCoord {
    pub row: usize,
    pub col: usize,
    pub u: f64,
    pub v: f64,
}

/// Axis-aligned object bounding box, top-left origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub id: String,
}

impl ObjectBox {
    pub fn new(id: impl Into<String>, x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        if !(x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite()) {
            return Err(Error::InvalidArgument("box coordinates must be finite".into()));
        }
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::InvalidArgument(format!(
                "box must have positive extent, got ({x0}, {y0}, {x1}, {y1})"
            )));
        }
        Ok(ObjectBox { x0, y0, x1, y1, id: id.into() })
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn aspect(&self) -> f64 {
        self.width() / self.height()
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Closed containment test.
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    /// Intersection with an axis-aligned rectangle; `None` when empty.
    pub fn intersect(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> Option<ObjectBox> {
        let nx0 = self.x0.max(x0);
        let ny0 = self.y0.max(y0);
        let nx1 = self.x1.min(x1);
        let ny1 = self.y1.min(y1);
        if nx0 < nx1 && ny0 < ny1 {
            Some(ObjectBox { x0: nx0, y0: ny0, x1: nx1, y1: ny1, id: self.id.clone() })
        } else {
            None
        }
    }

    pub fn scaled(&self, kx: f64, ky: f64) -> ObjectBox {
        ObjectBox {
            x0: self.x0 * kx,
            y0: self.y0 * ky,
            x1: self.x1 * kx,
            y1: self.y1 * ky,
            id: self.id.clone(),
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> ObjectBox {
        ObjectBox {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            id: self.id.clone(),
        }
    }

    /// Overlap test against another axis-aligned rectangle (closed edges).
    pub fn overlaps_rect(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> bool {
        self.x0 <= x1 && x0 <= self.x1 && self.y0 <= y1 && y0 <= self.y1
    }
}

/// Per-vertex displacement grid; the optimization variable.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    rows: usize,
    cols: usize,
    data: Vec<Vec2>,
}

impl MotionField {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        MotionField { rows, cols, data: vec![Vec2::ZERO; (rows + 1) * (cols + 1)] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> Vec2 {
        self.data[i * (self.cols + 1) + j]
    }

    pub fn set(&mut self, i: usize, j: usize, d: Vec2) {
        self.data[i * (self.cols + 1) + j] = d;
    }

    /// Number of scalar components, 2 per vertex.
    pub fn n_components(&self) -> usize {
        self.data.len() * 2
    }

    /// Scalar component access; even k = x, odd k = y of vertex k/2 (row-major).
    pub fn comp(&self, k: usize) -> f64 {
        let v = self.data[k / 2];
        if k % 2 == 0 {
            v.x
        } else {
            v.y
        }
    }

    pub fn set_comp(&mut self, k: usize, value: f64) {
        let v = &mut self.data[k / 2];
        if k % 2 == 0 {
            v.x = value;
        } else {
            v.y = value;
        }
    }

    /// Vertex index (i, j) of scalar component k.
    pub fn comp_vertex(&self, k: usize) -> (usize, usize) {
        let vi = k / 2;
        (vi / (self.cols + 1), vi % (self.cols + 1))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|d| d.is_finite())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec2> {
        self.data.iter()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, d| m.max(d.x.abs()).max(d.y.abs()))
    }
}

/// Grid of (rows+1)x(cols+1) vertex positions spanning `width`x`height` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    rows: usize,
    cols: usize,
    width: f64,
    height: f64,
    vertices: Vec<Vec2>,
}

#[derive(Serialize, Deserialize)]
struct MeshRepr {
    rows: usize,
    cols: usize,
    width: f64,
    height: f64,
    vertices: Vec<[f64; 2]>,
}

impl Serialize for Mesh {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MeshRepr {
            rows: self.rows,
            cols: self.cols,
            width: self.width,
            height: self.height,
            vertices: self.vertices.iter().map(|v| [v.x, v.y]).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mesh {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = MeshRepr::deserialize(d)?;
        Mesh::new(
            repr.rows,
            repr.cols,
            repr.width,
            repr.height,
            repr.vertices.into_iter().map(|[x, y]| Vec2::new(x, y)).collect(),
        )
        .map_err(serde::de::Error::custom)
    }
}

impl Mesh {
    /// Builds a mesh from explicit vertices, validating the count and finiteness.
    pub fn new(rows: usize, cols: usize, width: f64, height: f64, vertices: Vec<Vec2>) -> Result<Self> {
        if rows < 1 || cols < 1 {
            return Err(Error::InvalidArgument(format!("mesh needs at least 1x1 cells, got {rows}x{cols}")));
        }
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::InvalidArgument(format!("mesh dimensions must be positive, got {width}x{height}")));
        }
        let expect = (rows + 1) * (cols + 1);
        if vertices.len() != expect {
            return Err(Error::InvalidArgument(format!(
                "expected {expect} vertices for a {rows}x{cols} mesh, got {}",
                vertices.len()
            )));
        }
        if !vertices.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("mesh vertices must be finite".into()));
        }
        Ok(Mesh { rows, cols, width, height, vertices })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn vertex(&self, i: usize, j: usize) -> Vec2 {
        self.vertices[i * (self.cols + 1) + j]
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    /// The four corners of cell (row, col): q00, q01, q10, q11.
    pub fn quad(&self, row: usize, col: usize) -> [Vec2; 4] {
        [
            self.vertex(row, col),
            self.vertex(row, col + 1),
            self.vertex(row + 1, col),
            self.vertex(row + 1, col + 1),
        ]
    }

    /// True when every vertex sits on the uniform grid within 1e-9 of a pixel.
    pub fn is_rigid(&self) -> bool {
        let tol = 1e-9 * self.width.max(self.height).max(1.0);
        for i in 0..=self.rows {
            for j in 0..=self.cols {
                let expect = Vec2::new(
                    j as f64 * self.width / self.cols as f64,
                    i as f64 * self.height / self.rows as f64,
                );
                let got = self.vertex(i, j);
                if (got.x - expect.x).abs() > tol || (got.y - expect.y).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Copy of the mesh with one vertex displaced.
    pub fn with_vertex_offset(&self, i: usize, j: usize, delta: Vec2) -> Result<Mesh> {
        let mut vertices = self.vertices.clone();
        vertices[i * (self.cols + 1) + j] = vertices[i * (self.cols + 1) + j] + delta;
        Mesh::new(self.rows, self.cols, self.width, self.height, vertices)
    }

    /// Axis-aligned bounding rectangle of cell (row, col).
    pub fn cell_aabb(&self, row: usize, col: usize) -> (Vec2, Vec2) {
        let q = self.quad(row, col);
        let min = Vec2::new(
            q.iter().fold(f64::INFINITY, |m, p| m.min(p.x)),
            q.iter().fold(f64::INFINITY, |m, p| m.min(p.y)),
        );
        let max = Vec2::new(
            q.iter().fold(f64::NEG_INFINITY, |m, p| m.max(p.x)),
            q.iter().fold(f64::NEG_INFINITY, |m, p| m.max(p.y)),
        );
        (min, max)
    }
}

/// Uniform axis-aligned mesh covering `width`x`height` with corner vertices
/// exactly on the image rectangle.
pub fn build_rigid_mesh(width: f64, height: f64, rows: usize, cols: usize) -> Result<Mesh> {
    if !(width > 0.0) || !(height > 0.0) {
        return Err(Error::InvalidArgument(format!("mesh dimensions must be positive, got {width}x{height}")));
    }
    if rows < 1 || cols < 1 {
        return Err(Error::InvalidArgument(format!("mesh needs at least 1x1 cells, got {rows}x{cols}")));
    }
    let mut vertices = Vec::with_capacity((rows + 1) * (cols + 1));
    for i in 0..=rows {
        for j in 0..=cols {
            vertices.push(Vec2::new(j as f64 * width / cols as f64, i as f64 * height / rows as f64));
        }
    }
    Mesh::new(rows, cols, width, height, vertices)
}

/// Adds per-vertex displacements to a base mesh.
pub fn apply_motion(base: &Mesh, motion: &MotionField) -> Result<Mesh> {
    if motion.rows() != base.rows() || motion.cols() != base.cols() {
        return Err(Error::InvalidArgument(format!(
            "motion field {}x{} does not match mesh {}x{}",
            motion.rows(),
            motion.cols(),
            base.rows(),
            base.cols()
        )));
    }
    let mut vertices = Vec::with_capacity(base.vertices.len());
    for i in 0..=base.rows {
        for j in 0..=base.cols {
            vertices.push(base.vertex(i, j) + motion.get(i, j));
        }
    }
    Mesh::new(base.rows, base.cols, base.width, base.height, vertices)
}

/// Scales all vertex positions so the mesh covers the new rectangle.
pub fn rescale_mesh(mesh: &Mesh, new_width: f64, new_height: f64) -> Result<Mesh> {
    if !(new_width > 0.0) || !(new_height > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rescale target must be positive, got {new_width}x{new_height}"
        )));
    }
    let kx = new_width / mesh.width;
    let ky = new_height / mesh.height;
    let vertices = mesh.vertices.iter().map(|v| Vec2::new(v.x * kx, v.y * ky)).collect();
    Mesh::new(mesh.rows, mesh.cols, new_width, new_height, vertices)
}

/// Closed-form location of a point in a rigid mesh. Points on an interior
/// grid line belong to the cell that starts there; the far edge of the last
/// row/column yields u or v = 1.
pub fn locate_in_rigid(mesh: &Mesh, p: Vec2) -> Result<CellCoord> {
    if p.x < 0.0 || p.y < 0.0 || p.x > mesh.width || p.y > mesh.height {
        return Err(Error::OutOfBounds { x: p.x, y: p.y, width: mesh.width, height: mesh.height });
    }
    let fx = p.x * mesh.cols as f64 / mesh.width;
    let fy = p.y * mesh.rows as f64 / mesh.height;
    let col = (fx.floor() as usize).min(mesh.cols - 1);
    let row = (fy.floor() as usize).min(mesh.rows - 1);
    Ok(CellCoord { row, col, u: fy - row as f64, v: fx - col as f64 })
}

/// Bilinear position of local coordinates (u, v) inside cell (row, col).
pub fn eval_in_cell(mesh: &Mesh, row: usize, col: usize, u: f64, v: f64) -> Vec2 {
    let [q00, q01, q10, q11] = mesh.quad(row, col);
    (1.0 - u) * (1.0 - v) * q00 + (1.0 - u) * v * q01 + u * (1.0 - v) * q10 + u * v * q11
}

/// Bilinear position of a located cell coordinate.
pub fn eval_cell_coord(mesh: &Mesh, c: &CellCoord) -> Vec2 {
    eval_in_cell(mesh, c.row, c.col, c.u, c.v)
}

/// Inverse bilinear coordinates of `p` in the quad (q00, q01, q10, q11).
/// Newton from the cell center, closed-form quadratic on stall. Returns
/// (u, v, residual) without range checks.
fn invert_in_quad(q: &[Vec2; 4], p: Vec2) -> Option<(f64, f64, f64)> {
    let a = q[0];
    let b = q[1] - q[0];
    let c = q[2] - q[0];
    let d = q[3] - q[1] - q[2] + q[0];
    let e = p - a;

    // Newton iteration on P(u,v) = a + b v + c u + d u v.
    let mut u = 0.5;
    let mut v = 0.5;
    for _ in 0..20 {
        let pos = b * v + c * u + d * (u * v);
        let r = e - pos;
        let res = r.norm();
        if res <= NEWTON_TOL {
            return Some((u, v, res));
        }
        let du = c + d * v; // dP/du
        let dv = b + d * u; // dP/dv
        let det = du.cross(dv);
        if det.abs() < 1e-14 {
            break;
        }
        // Solve [du dv] [su; sv] = r.
        let su = r.cross(dv) / det;
        let sv = du.cross(r) / det;
        u += su;
        v += sv;
        if !(u.is_finite() && v.is_finite()) {
            break;
        }
        // Newton can wander far outside the quad before diverging.
        if u.abs() > 1e3 || v.abs() > 1e3 {
            break;
        }
    }

    // Quadratic fallback: cross(e - c u, b + d u) = 0.
    let qa = -c.cross(d);
    let qb = e.cross(d) - c.cross(b);
    let qc = e.cross(b);
    let mut best: Option<(f64, f64, f64)> = None;
    let mut consider = |u: f64| {
        if !u.is_finite() || !(-COORD_TOL..=1.0 + COORD_TOL).contains(&u) {
            return;
        }
        let den = b + d * u;
        let v = if den.x.abs() >= den.y.abs() {
            if den.x.abs() < 1e-14 {
                return;
            }
            (e.x - c.x * u) / den.x
        } else {
            if den.y.abs() < 1e-14 {
                return;
            }
            (e.y - c.y * u) / den.y
        };
        if !v.is_finite() {
            return;
        }
        let res = (e - (b * v + c * u + d * (u * v))).norm();
        if best.map_or(true, |(_, _, r)| res < r) {
            best = Some((u, v, res));
        }
    };
    if qa.abs() < 1e-14 {
        if qb.abs() > 1e-14 {
            consider(-qc / qb);
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            // Numerically stable pair of roots.
            let qq = -0.5 * (qb + qb.signum() * sq);
            if qq.abs() > 0.0 {
                consider(qq / qa);
                consider(qc / qq);
            } else {
                consider(0.0);
            }
        }
    }
    best
}

fn candidate_accept(mesh: &Mesh, row: usize, col: usize, p: Vec2) -> Option<(CellCoord, bool)> {
    let (min, max) = mesh.cell_aabb(row, col);
    let slack = COORD_TOL * (mesh.width + mesh.height).max(1.0);
    if p.x < min.x - slack || p.x > max.x + slack || p.y < min.y - slack || p.y > max.y + slack {
        return None;
    }
    let quad = mesh.quad(row, col);
    let (u, v, res) = invert_in_quad(&quad, p)?;
    if res > RESIDUAL_TOL {
        return None;
    }
    let in_range = |t: f64| (-COORD_TOL..=1.0 + COORD_TOL).contains(&t);
    if !in_range(u) || !in_range(v) {
        return None;
    }
    // A point on a shared interior edge belongs to the cell that starts
    // there (local coordinate 0), matching the rigid floor rule.
    let strong_u = u < 1.0 || row == mesh.rows() - 1;
    let strong_v = v < 1.0 || col == mesh.cols() - 1;
    let coord = CellCoord { row, col, u: u.clamp(0.0, 1.0), v: v.clamp(0.0, 1.0) };
    Some((coord, strong_u && strong_v))
}

/// Locates `p` in a (possibly deformed) mesh: hint cell first, then growing
/// rings around it, then a full row-major scan.
pub fn locate_in_deformed(mesh: &Mesh, p: Vec2, hint: Option<CellCoord>) -> Result<CellCoord> {
    let mut weak: Option<CellCoord> = None;
    let try_cell = |row: usize, col: usize, weak: &mut Option<CellCoord>| -> Option<CellCoord> {
        match candidate_accept(mesh, row, col, p) {
            Some((coord, true)) => Some(coord),
            Some((coord, false)) => {
                if weak.is_none() {
                    *weak = Some(coord);
                }
                None
            }
            None => None,
        }
    };

    if let Some(h) = hint {
        let hr = h.row.min(mesh.rows() - 1) as isize;
        let hc = h.col.min(mesh.cols() - 1) as isize;
        for ring in 0..=2isize {
            for dr in -ring..=ring {
                for dc in -ring..=ring {
                    if dr.abs() != ring && dc.abs() != ring {
                        continue;
                    }
                    let (r, c) = (hr + dr, hc + dc);
                    if r < 0 || c < 0 || r >= mesh.rows() as isize || c >= mesh.cols() as isize {
                        continue;
                    }
                    if let Some(found) = try_cell(r as usize, c as usize, &mut weak) {
                        return Ok(found);
                    }
                }
            }
        }
    }
    for row in 0..mesh.rows() {
        for col in 0..mesh.cols() {
            if let Some(found) = try_cell(row, col, &mut weak) {
                return Ok(found);
            }
        }
    }
    weak.ok_or(Error::OutsideMesh { x: p.x, y: p.y })
}

/// Transfers a point from `src` to `dst` through shared cell coordinates.
/// `src` may be rigid (closed-form location) or deformed.
pub fn map_point(src: &Mesh, dst: &Mesh, p: Vec2) -> Result<Vec2> {
    if src.rows() != dst.rows() || src.cols() != dst.cols() {
        return Err(Error::InvalidArgument("meshes must share cell counts".into()));
    }
    let coord = if src.is_rigid() {
        locate_in_rigid(src, p)?
    } else {
        locate_in_deformed(src, p, None)?
    };
    Ok(eval_cell_coord(dst, &coord))
}

fn map_box_samples(src: &Mesh, dst: &Mesh, b: &ObjectBox, midpoints: bool) -> Result<ObjectBox> {
    let cx = 0.5 * (b.x0 + b.x1);
    let cy = 0.5 * (b.y0 + b.y1);
    let mut samples = vec![
        Vec2::new(b.x0, b.y0),
        Vec2::new(b.x1, b.y0),
        Vec2::new(b.x0, b.y1),
        Vec2::new(b.x1, b.y1),
    ];
    if midpoints {
        samples.extend([
            Vec2::new(cx, b.y0),
            Vec2::new(cx, b.y1),
            Vec2::new(b.x0, cy),
            Vec2::new(b.x1, cy),
        ]);
    }
    let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for s in samples {
        let q = map_point(src, dst, s)?;
        min.x = min.x.min(q.x);
        min.y = min.y.min(q.y);
        max.x = max.x.max(q.x);
        max.y = max.y.max(q.y);
    }
    ObjectBox::new(b.id.clone(), min.x, min.y, max.x, max.y)
}

/// Maps a box through the mesh pair: 4 corners plus 4 edge midpoints, then
/// the axis-aligned hull. A bilinear map bows straight edges; the midpoints
/// bound that cheaply.
pub fn map_box(src: &Mesh, dst: &Mesh, b: &ObjectBox) -> Result<ObjectBox> {
    map_box_samples(src, dst, b, true)
}

/// Corner-only variant of [`map_box`], for comparison.
pub fn map_box_corners(src: &Mesh, dst: &Mesh, b: &ObjectBox) -> Result<ObjectBox> {
    map_box_samples(src, dst, b, false)
}

/// Cells whose two triangulations do not both have strictly positive signed
/// area under the (x right, y down) convention. Empty result means the mesh
/// is safe to invert.
pub fn check_foldover(mesh: &Mesh) -> Vec<(usize, usize)> {
    let mut offending = Vec::new();
    for row in 0..mesh.rows() {
        for col in 0..mesh.cols() {
            let [q00, q01, q10, q11] = mesh.quad(row, col);
            // Quad in traversal order q00 -> q01 -> q11 -> q10.
            let t1 = (q01 - q00).cross(q11 - q00);
            let t2 = (q11 - q00).cross(q10 - q00);
            let t3 = (q01 - q00).cross(q10 - q00);
            let t4 = (q11 - q01).cross(q10 - q01);
            if t1 <= 0.0 || t2 <= 0.0 || t3 <= 0.0 || t4 <= 0.0 {
                offending.push((row, col));
            }
        }
    }
    offending
}
