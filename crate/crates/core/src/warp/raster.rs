//! Deterministic triangle rasterizer with a z-buffer.
//!
//! * edge-function coverage at integer pixel centers with a top-left fill rule;
//! * perspective-correct interpolation of depth and color;
//! * strict less-than depth test, so the first submitted primitive wins ties;
//! * triangles are clipped against `z = Z_NEAR` in camera space; no back-face culling.

use nalgebra::Vector3;

use crate::dataset::{DepthMap, RgbImage};
use crate::geometry::Intrinsics;

/// Near clipping plane, meters.
pub const Z_NEAR: f64 = 0.01;

/// Borrowed triangle mesh whose positions are already in the target camera frame.
#[derive(Debug, Clone, Copy)]
pub struct MeshView<'a> {
    pub positions: &'a [Vector3<f64>],
    pub colors: &'a [[u8; 3]],
    pub triangles: &'a [[u32; 3]],
}

/// Raw framebuffer produced by the rasterizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Framebuffer {
    pub width: u32,
    pub height: u32,
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub valid: Vec<bool>,
    /// Pixels written by triangle fragments (a subset of `valid`).
    pub triangle_coverage: usize,
}

impl Framebuffer {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

#[derive(Clone, Copy)]
struct ClipVertex {
    p: Vector3<f64>,
    c: [f64; 3],
}

struct Target {
    width: u32,
    height: u32,
    zbuf: Vec<f64>,
    color: Vec<[f64; 3]>,
}

impl Target {
    fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self { width, height, zbuf: vec![f64::INFINITY; n], color: vec![[0.0; 3]; n] }
    }
}

#[inline]
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Owns samples lying exactly on the edge `a -> b` (interior on the positive side) when the edge is
/// a top edge (horizontal, interior below in a y-down image) or a left edge.
#[inline]
fn owns_boundary(a: (f64, f64), b: (f64, f64)) -> bool {
    let dy = b.1 - a.1;
    let dx = b.0 - a.0;
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

fn clip_near(tri: [ClipVertex; 3]) -> Vec<ClipVertex> {
    let inside = |v: &ClipVertex| v.p.z >= Z_NEAR;
    if tri.iter().all(inside) {
        return tri.to_vec();
    }
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        if inside(&a) {
            out.push(a);
        }
        if inside(&a) != inside(&b) {
            let t = (Z_NEAR - a.p.z) / (b.p.z - a.p.z);
            let mut p = a.p + (b.p - a.p) * t;
            p.z = Z_NEAR;
            let c = [
                a.c[0] + (b.c[0] - a.c[0]) * t,
                a.c[1] + (b.c[1] - a.c[1]) * t,
                a.c[2] + (b.c[2] - a.c[2]) * t,
            ];
            out.push(ClipVertex { p, c });
        }
    }
    out
}

fn draw_triangle(target: &mut Target, k: &Intrinsics, v: [ClipVertex; 3]) {
    let screen = |c: &ClipVertex| (k.fx * c.p.x / c.p.z + k.cx, k.fy * c.p.y / c.p.z + k.cy);
    let mut s = [screen(&v[0]), screen(&v[1]), screen(&v[2])];
    let mut v = v;
    let area = edge(s[0], s[1], s[2]);
    if !area.is_finite() || area == 0.0 {
        return;
    }
    if area < 0.0 {
        s.swap(1, 2);
        v.swap(1, 2);
    }
    let area = area.abs();

    let min_u = s.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_u = s.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let min_v = s.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_v = s.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let (w, h) = (f64::from(target.width), f64::from(target.height));
    if max_u < 0.0 || max_v < 0.0 || min_u > w - 1.0 || min_v > h - 1.0 {
        return;
    }
    let x0 = min_u.ceil().max(0.0) as u32;
    let x1 = max_u.floor().min(w - 1.0) as u32;
    let y0 = min_v.ceil().max(0.0) as u32;
    let y1 = max_v.floor().min(h - 1.0) as u32;

    // edge i is opposite vertex i
    let edges = [(s[1], s[2]), (s[2], s[0]), (s[0], s[1])];
    let owns = [
        owns_boundary(edges[0].0, edges[0].1),
        owns_boundary(edges[1].0, edges[1].1),
        owns_boundary(edges[2].0, edges[2].1),
    ];
    let inv_z = [1.0 / v[0].p.z, 1.0 / v[1].p.z, 1.0 / v[2].p.z];

    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = (f64::from(x), f64::from(y));
            let mut e = [0.0; 3];
            let mut inside = true;
            for i in 0..3 {
                e[i] = edge(edges[i].0, edges[i].1, p);
                if e[i] < 0.0 || (e[i] == 0.0 && !owns[i]) {
                    inside = false;
                    break;
                }
            }
            if !inside {
                continue;
            }
            let l = [e[0] / area, e[1] / area, e[2] / area];
            let wz = l[0] * inv_z[0] + l[1] * inv_z[1] + l[2] * inv_z[2];
            let z = 1.0 / wz;
            let idx = y as usize * target.width as usize + x as usize;
            if !(z < target.zbuf[idx]) {
                continue;
            }
            let mut c = [0.0; 3];
            for (ch, out) in c.iter_mut().enumerate() {
                let num = l[0] * inv_z[0] * v[0].c[ch] + l[1] * inv_z[1] * v[1].c[ch] + l[2] * inv_z[2] * v[2].c[ch];
                *out = num * z;
            }
            target.zbuf[idx] = z;
            target.color[idx] = c;
        }
    }
}

fn rasterize_triangles(target: &mut Target, mesh: MeshView<'_>, k: &Intrinsics) {
    for tri in mesh.triangles {
        let cv = |i: u32| {
            let c = mesh.colors[i as usize];
            ClipVertex { p: mesh.positions[i as usize], c: [f64::from(c[0]), f64::from(c[1]), f64::from(c[2])] }
        };
        let verts = [cv(tri[0]), cv(tri[1]), cv(tri[2])];
        if verts.iter().all(|v| v.p.z < Z_NEAR) {
            continue;
        }
        let poly = clip_near(verts);
        for i in 1..poly.len().saturating_sub(1) {
            draw_triangle(target, k, [poly[0], poly[i], poly[i + 1]]);
        }
    }
}

fn finish(target: Target, triangle_coverage: usize) -> Framebuffer {
    let n = target.zbuf.len();
    let mut rgb = Vec::with_capacity(3 * n);
    let mut depth = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for (z, c) in target.zbuf.iter().zip(&target.color) {
        if z.is_finite() {
            rgb.extend(c.iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
            depth.push(*z);
            valid.push(true);
        } else {
            rgb.extend([0, 0, 0]);
            depth.push(0.0);
            valid.push(false);
        }
    }
    Framebuffer {
        width: target.width,
        height: target.height,
        rgb: RgbImage::new(target.width, target.height, rgb).expect("framebuffer size"),
        depth: DepthMap::new(target.width, target.height, depth).expect("rasterized depth is positive"),
        valid,
        triangle_coverage,
    }
}

/// Rasterizes the triangles of `mesh` into a `k.width x k.height` framebuffer.
pub fn rasterize(mesh: MeshView<'_>, k: &Intrinsics) -> Framebuffer {
    let mut target = Target::new(k.width, k.height);
    rasterize_triangles(&mut target, mesh, k);
    let covered = target.zbuf.iter().filter(|z| z.is_finite()).count();
    finish(target, covered)
}

/// Rasterizes triangles, then splats the listed vertices (nearest pixel, depth-tested among
/// themselves) into pixels that no triangle fragment reached.
pub fn rasterize_with_vertex_fallback(mesh: MeshView<'_>, vertices: &[u32], k: &Intrinsics) -> Framebuffer {
    let mut target = Target::new(k.width, k.height);
    rasterize_triangles(&mut target, mesh, k);
    let covered: Vec<bool> = target.zbuf.iter().map(|z| z.is_finite()).collect();
    let triangle_coverage = covered.iter().filter(|c| **c).count();
    let (w, h) = (f64::from(k.width), f64::from(k.height));
    for &vi in vertices {
        let p = mesh.positions[vi as usize];
        if !(p.z >= Z_NEAR) {
            continue;
        }
        let u = (k.fx * p.x / p.z + k.cx).round();
        let v = (k.fy * p.y / p.z + k.cy).round();
        if !(u >= 0.0 && v >= 0.0 && u < w && v < h) {
            continue;
        }
        let idx = v as usize * k.width as usize + u as usize;
        if covered[idx] || !(p.z < target.zbuf[idx]) {
            continue;
        }
        let c = mesh.colors[vi as usize];
        target.zbuf[idx] = p.z;
        target.color[idx] = [f64::from(c[0]), f64::from(c[1]), f64::from(c[2])];
    }
    finish(target, triangle_coverage)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(w: u32, h: u32) -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 0.0, 0.0, w, h).unwrap()
    }

    /// Camera-frame point that projects to screen `(u, v)` at depth `z` under `k(..)`.
    fn at(u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new(u * z / 100.0, v * z / 100.0, z)
    }

    fn strictly_inside(s: [(f64, f64); 3], p: (f64, f64)) -> bool {
        let d = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        let e = [d(s[0], s[1]), d(s[1], s[2]), d(s[2], s[0])];
        e.iter().all(|v| *v > 0.0) || e.iter().all(|v| *v < 0.0)
    }

    #[test]
    fn single_triangle_matches_brute_force_coverage() {
        let s = [(1.3, 0.7), (17.6, 4.2), (6.1, 13.9)];
        let pos: Vec<_> = s.iter().map(|&(u, v)| at(u, v, 2.0)).collect();
        let colors = vec![[10, 20, 30]; 3];
        let fb = rasterize(MeshView { positions: &pos, colors: &colors, triangles: &[[0, 1, 2]] }, &k(20, 16));
        for y in 0..16 {
            for x in 0..20 {
                let expect = strictly_inside(s, (f64::from(x), f64::from(y)));
                assert_eq!(fb.valid[(y * 20 + x) as usize], expect, "pixel ({x},{y})");
            }
        }
        assert!(fb.valid_count() > 20);
        assert!(fb.depth.values().iter().all(|d| *d == 0.0 || (d - 2.0).abs() < 1e-12));
    }

    #[test]
    fn shared_edges_are_covered_exactly_once() {
        // grid of quads with vertices on pixel centers, split along the down-right diagonal
        let (n, z) = (6u32, 1.5);
        let mut pos = Vec::new();
        for y in 0..n {
            for x in 0..n {
                pos.push(at(f64::from(2 * x), f64::from(2 * y), z));
            }
        }
        let mut tris = Vec::new();
        for y in 0..n - 1 {
            for x in 0..n - 1 {
                let a = y * n + x;
                tris.push([a, a + 1, a + n + 1]);
                tris.push([a, a + n + 1, a + n]);
            }
        }
        let colors = vec![[0; 3]; pos.len()];
        let kk = k(12, 12);
        let mut hits = vec![0u32; 144];
        for t in &tris {
            let fb = rasterize(MeshView { positions: &pos, colors: &colors, triangles: std::slice::from_ref(t) }, &kk);
            for (h, v) in hits.iter_mut().zip(&fb.valid) {
                *h += u32::from(*v);
            }
        }
        for y in 0..=10usize {
            for x in 0..=10usize {
                let interior = x < 10 && y < 10;
                let count = hits[y * 12 + x];
                if interior {
                    assert_eq!(count, 1, "pixel ({x},{y})");
                } else {
                    assert!(count <= 1, "pixel ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn nearer_triangle_wins_regardless_of_order() {
        let s = [(0.5, 0.5), (9.5, 0.5), (0.5, 9.5)];
        let mut pos: Vec<_> = s.iter().map(|&(u, v)| at(u, v, 2.0)).collect();
        pos.extend(s.iter().map(|&(u, v)| at(u, v, 1.0)));
        let colors = vec![[200, 0, 0], [200, 0, 0], [200, 0, 0], [0, 0, 90], [0, 0, 90], [0, 0, 90]];
        for order in [[[0, 1, 2], [3, 4, 5]], [[3, 4, 5], [0, 1, 2]]] {
            let fb = rasterize(MeshView { positions: &pos, colors: &colors, triangles: &order }, &k(10, 10));
            for (i, valid) in fb.valid.iter().enumerate() {
                if *valid {
                    assert!((fb.depth.values()[i] - 1.0).abs() < 1e-12);
                    assert_eq!(&fb.rgb.data()[3 * i..3 * i + 3], &[0, 0, 90]);
                }
            }
        }
    }

    #[test]
    fn equal_depth_keeps_first_submitted() {
        let s = [(0.5, 0.5), (9.5, 0.5), (0.5, 9.5)];
        let mut pos: Vec<_> = s.iter().map(|&(u, v)| at(u, v, 2.0)).collect();
        pos.extend(pos.clone());
        let colors = vec![[1, 1, 1], [1, 1, 1], [1, 1, 1], [9, 9, 9], [9, 9, 9], [9, 9, 9]];
        let fb = rasterize(MeshView { positions: &pos, colors: &colors, triangles: &[[0, 1, 2], [3, 4, 5]] }, &k(10, 10));
        assert!(fb.valid_count() > 0);
        for (i, valid) in fb.valid.iter().enumerate() {
            if *valid {
                assert_eq!(fb.rgb.data()[3 * i], 1);
            }
        }
    }

    #[test]
    fn border_triangles_do_not_wrap() {
        let s = [(-30.0, -5.0), (6.5, 2.5), (-4.0, 40.0)];
        let pos: Vec<_> = s.iter().map(|&(u, v)| at(u, v, 1.0)).collect();
        let colors = vec![[5; 3]; 3];
        let fb = rasterize(MeshView { positions: &pos, colors: &colors, triangles: &[[0, 1, 2]] }, &k(10, 10));
        for y in 0..10 {
            for x in 0..10 {
                let expect = strictly_inside(s, (x as f64, y as f64));
                assert_eq!(fb.valid[y * 10 + x], expect);
            }
        }
        // the right part of the image stays empty: no wraparound
        assert!((7..10).all(|x| (0..10).all(|y| !fb.valid[y * 10 + x])));
    }

    #[test]
    fn perspective_correct_depth_on_slanted_plane() {
        // plane z = 2 + 0.5 x (camera frame); interpolated depth must lie on the plane
        let plane = |x: f64, y: f64| {
            // solve for the point on the ray (x, y, 1) * t with z = 2 + 0.5 * X
            let t = 2.0 / (1.0 - 0.5 * x);
            Vector3::new(x * t, y * t, t)
        };
        let pos = vec![plane(0.0, 0.0), plane(0.3, 0.0), plane(0.0, 0.3)];
        let colors = vec![[0; 3]; 3];
        let fb = rasterize(MeshView { positions: &pos, colors: &colors, triangles: &[[0, 1, 2]] }, &k(40, 40));
        let mut checked = 0;
        for y in 0..40 {
            for x in 0..40 {
                let i = y * 40 + x;
                if fb.valid[i] {
                    let expect = plane(x as f64 / 100.0, y as f64 / 100.0).z;
                    assert!((fb.depth.values()[i] - expect).abs() < 1e-12);
                    checked += 1;
                }
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn near_plane_clipping() {
        let colors = vec![[7; 3]; 3];
        // fully behind
        let behind = vec![Vector3::new(0.0, 0.0, -1.0), Vector3::new(1.0, 0.0, -1.0), Vector3::new(0.0, 1.0, 0.005)];
        let fb = rasterize(MeshView { positions: &behind, colors: &colors, triangles: &[[0, 1, 2]] }, &k(10, 10));
        assert_eq!(fb.valid_count(), 0);
        // straddling: only the part with z >= Z_NEAR survives, all depths >= Z_NEAR
        let straddle = vec![Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.08, 0.0, 1.0), Vector3::new(0.0, 0.08, -1.0)];
        let fb = rasterize(MeshView { positions: &straddle, colors: &colors, triangles: &[[0, 1, 2]] }, &k(10, 10));
        assert!(fb.valid_count() > 0);
        assert!(fb.depth.values().iter().all(|d| *d == 0.0 || (*d >= Z_NEAR && d.is_finite())));
    }

    #[test]
    fn vertex_fallback_fills_only_uncovered_pixels() {
        let pos = vec![at(0.0, 0.0, 1.0), at(4.0, 0.0, 1.0), at(0.0, 4.0, 1.0), at(8.0, 8.0, 3.0), at(1.0, 1.0, 0.5)];
        let colors = vec![[1; 3], [1; 3], [1; 3], [2; 3], [3; 3]];
        let mesh = MeshView { positions: &pos, colors: &colors, triangles: &[[0, 1, 2]] };
        let plain = rasterize(mesh, &k(10, 10));
        let filled = rasterize_with_vertex_fallback(mesh, &[0, 1, 2, 3, 4], &k(10, 10));
        // (8,8) gains a point; (1,1) is triangle-covered so the nearer point is ignored
        assert!(!plain.valid[88] && filled.valid[88]);
        assert_eq!(filled.depth.values()[88], 3.0);
        assert_eq!(filled.rgb.get(1, 1), [1; 3]);
        assert_eq!(filled.triangle_coverage, plain.valid_count());
    }
}
