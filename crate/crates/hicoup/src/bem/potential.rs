//! Off-boundary evaluation of the volume potentials and their gradients by
//! panel quadrature with recursive panel subdivision near the surface.

use super::{dlp_kernel, panels, slp_kernel, Panel};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};
use rayon::prelude::*;

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

#[derive(Clone, Copy, Debug)]
pub struct PotentialConfig {
    /// Panels are split while `dist(x, panel) < split_factor * diam(panel)`.
    pub split_factor: f64,
    /// Maximum subdivision depth.
    pub max_depth: usize,
    /// Triangle-rule degree on leaf panels.
    pub leaf_degree: usize,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        Self {
            split_factor: 2.0,
            max_depth: 6,
            leaf_degree: 5,
        }
    }
}

/// Values (and optionally gradients) of a potential at the query points.
#[derive(Clone, Debug)]
pub struct PotentialValues {
    pub values: Vec<f64>,
    pub gradients: Option<Vec<Point>>,
}

/// Exact distance from a point to a triangle (closest-point computation).
pub fn point_triangle_distance(p: Point, tri: &[Point; 3]) -> f64 {
    let (a, b, c) = (tri[0], tri[1], tri[2]);
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (ap - ab * v).norm();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (ap - ac * w).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (bp - (c - b) * w).norm();
    }
    // interior projection
    let n = ab.cross(&ac);
    (ap.dot(&n) / n.norm()).abs()
}

/// Single-layer potential `V~ phi(x)` for P0 density coefficients `phi`.
pub fn eval_single_layer(
    mesh: &Mesh,
    points: &[Point],
    phi: &[f64],
    want_gradient: bool,
    cfg: &PotentialConfig,
) -> Result<PotentialValues> {
    let pans = panels(mesh);
    if phi.len() != pans.len() {
        return Err(Error::DimensionMismatch(format!(
            "phi has {} entries, expected {}",
            phi.len(),
            pans.len()
        )));
    }
    eval_potential(&pans, points, want_gradient, cfg, |pan| {
        Density::Constant(phi[pan])
    })
}

/// Double-layer potential `K~ u(x)` for boundary-vertex P1 coefficients `u`
/// (indexed like `mesh.boundary_vertices`).
pub fn eval_double_layer(
    mesh: &Mesh,
    points: &[Point],
    u: &[f64],
    want_gradient: bool,
    cfg: &PotentialConfig,
) -> Result<PotentialValues> {
    let pans = panels(mesh);
    let nb = mesh.boundary_vertices.len();
    if u.len() != nb {
        return Err(Error::DimensionMismatch(format!(
            "u has {} entries, expected {nb}",
            u.len()
        )));
    }
    let bvi = &mesh.boundary_vertex_index;
    let nodal: Vec<[f64; 3]> = pans
        .iter()
        .map(|p| {
            let mut d = [0.0; 3];
            for l in 0..3 {
                d[l] = u[bvi[p.ids[l]].unwrap()];
            }
            d
        })
        .collect();
    eval_potential(&pans, points, want_gradient, cfg, |pan| {
        Density::Linear(nodal[pan], pans[pan].normal)
    })
}

enum Density {
    Constant(f64),
    /// nodal values and the panel's outward normal
    Linear([f64; 3], Point),
}

fn eval_potential(
    pans: &[Panel],
    points: &[Point],
    want_gradient: bool,
    cfg: &PotentialConfig,
    density: impl Fn(usize) -> Density + Sync,
) -> Result<PotentialValues> {
    let rule = super::quad::tri_rule(cfg.leaf_degree);
    let results: Vec<Result<(f64, Point)>> = points
        .par_iter()
        .map(|&x| {
            let mut value = 0.0;
            let mut grad = Point::zeros();
            for (q, pan) in pans.iter().enumerate() {
                if point_triangle_distance(x, &pan.pts) < 1e-12 {
                    return Err(Error::PointOnBoundary);
                }
                match density(q) {
                    Density::Constant(c) => {
                        if c != 0.0 {
                            accumulate(
                                x,
                                &pan.pts,
                                &[c; 3],
                                pan.normal,
                                false,
                                cfg,
                                &rule,
                                cfg.max_depth,
                                &mut value,
                                &mut grad,
                                want_gradient,
                            );
                        }
                    }
                    Density::Linear(d, normal) => {
                        if d.iter().any(|&v| v != 0.0) {
                            accumulate(
                                x,
                                &pan.pts,
                                &d,
                                normal,
                                true,
                                cfg,
                                &rule,
                                cfg.max_depth,
                                &mut value,
                                &mut grad,
                                want_gradient,
                            );
                        }
                    }
                }
            }
            Ok((value, grad))
        })
        .collect();
    let mut values = Vec::with_capacity(points.len());
    let mut grads = Vec::with_capacity(points.len());
    for r in results {
        let (v, g) = r?;
        values.push(v);
        grads.push(g);
    }
    Ok(PotentialValues {
        values,
        gradients: want_gradient.then_some(grads),
    })
}

/// Recursive panel contribution; `double_layer` switches the kernel.
#[allow(clippy::too_many_arguments)]
fn accumulate(
    x: Point,
    tri: &[Point; 3],
    nodal: &[f64; 3],
    normal: Point,
    double_layer: bool,
    cfg: &PotentialConfig,
    rule: &[super::quad::TriPoint],
    depth_left: usize,
    value: &mut f64,
    grad: &mut Point,
    want_gradient: bool,
) {
    let diam = [(1usize, 0usize), (2, 0), (2, 1)]
        .iter()
        .map(|&(i, j)| (tri[i] - tri[j]).norm())
        .fold(0.0, f64::max);
    if depth_left > 0 && point_triangle_distance(x, tri) < cfg.split_factor * diam {
        let m01 = (tri[0] + tri[1]) / 2.0;
        let m12 = (tri[1] + tri[2]) / 2.0;
        let m20 = (tri[2] + tri[0]) / 2.0;
        let v01 = 0.5 * (nodal[0] + nodal[1]);
        let v12 = 0.5 * (nodal[1] + nodal[2]);
        let v20 = 0.5 * (nodal[2] + nodal[0]);
        let children: [([Point; 3], [f64; 3]); 4] = [
            ([tri[0], m01, m20], [nodal[0], v01, v20]),
            ([m01, tri[1], m12], [v01, nodal[1], v12]),
            ([m20, m12, tri[2]], [v20, v12, nodal[2]]),
            ([m01, m12, m20], [v01, v12, v20]),
        ];
        for (ctri, cval) in children {
            accumulate(
                x,
                &ctri,
                &cval,
                normal,
                double_layer,
                cfg,
                rule,
                depth_left - 1,
                value,
                grad,
                want_gradient,
            );
        }
        return;
    }
    let area = 0.5 * (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).norm();
    for &(u, v, w) in rule {
        let y = tri[0] + (tri[1] - tri[0]) * u + (tri[2] - tri[1]) * v;
        let lam = [1.0 - u, u - v, v];
        let dens = lam[0] * nodal[0] + lam[1] * nodal[1] + lam[2] * nodal[2];
        let weight = area * w * dens;
        if double_layer {
            *value += weight * dlp_kernel(x, y, normal);
            if want_gradient {
                let d = x - y;
                let r2 = d.norm_squared();
                let r = r2.sqrt();
                let r3 = r2 * r;
                let r5 = r3 * r2;
                let dn = d.dot(&normal);
                *grad += (normal / r3 - d * (3.0 * dn / r5)) * (weight / FOUR_PI);
            }
        } else {
            *value += weight * slp_kernel(x, y);
            if want_gradient {
                let d = x - y;
                let r = d.norm();
                *grad -= d * (weight / (FOUR_PI * r * r * r));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_cube_mesh;

    #[test]
    fn double_layer_of_one_is_gauss_identity() {
        let mesh = build_cube_mesh(2).unwrap();
        let nb = mesh.boundary_vertices.len();
        let ones = vec![1.0; nb];
        let inside = [
            Point::new(0.5, 0.5, 0.5),
            Point::new(0.3, 0.4, 0.6),
            Point::new(0.21, 0.81, 0.43),
            Point::new(0.11, 0.12, 0.13),
            Point::new(0.9, 0.13, 0.77),
        ];
        let vals =
            eval_double_layer(&mesh, &inside, &ones, false, &PotentialConfig::default()).unwrap();
        for (i, v) in vals.values.iter().enumerate() {
            assert!((v + 1.0).abs() < 1e-6, "point {i}: K~1 = {v}");
        }
        let outside = [Point::new(2.0, 2.0, 2.0), Point::new(-0.7, 0.5, 0.5)];
        let vals =
            eval_double_layer(&mesh, &outside, &ones, false, &PotentialConfig::default()).unwrap();
        for (i, v) in vals.values.iter().enumerate() {
            assert!(v.abs() < 1e-6, "point {i}: K~1 = {v}");
        }
    }

    #[test]
    fn on_surface_points_are_rejected() {
        let mesh = build_cube_mesh(1).unwrap();
        let phi = vec![1.0; mesh.boundary_tris.len()];
        let on_gamma = [mesh.tri_centroid(0)];
        let err = eval_single_layer(&mesh, &on_gamma, &phi, false, &PotentialConfig::default());
        assert!(matches!(err, Err(Error::PointOnBoundary)));
    }

    #[test]
    fn single_layer_is_harmonic_in_the_interior() {
        let mesh = build_cube_mesh(2).unwrap();
        // smooth density: sample a linear function at panel centroids
        let phi: Vec<f64> = (0..mesh.boundary_tris.len())
            .map(|t| {
                let c = mesh.tri_centroid(t);
                1.0 + 0.1 * c.x + 0.2 * c.y - 0.15 * c.z
            })
            .collect();
        let x0 = Point::new(0.5, 0.5, 0.5);
        let hstep = 1e-3;
        let mut pts = vec![x0];
        for d in 0..3 {
            for s in [-1.0, 1.0] {
                let mut p = x0;
                p[d] += s * hstep;
                pts.push(p);
            }
        }
        let vals =
            eval_single_layer(&mesh, &pts, &phi, false, &PotentialConfig::default()).unwrap();
        let lap = (vals.values[1..].iter().sum::<f64>() - 6.0 * vals.values[0]) / (hstep * hstep);
        assert!(
            lap.abs() * hstep * hstep <= 1e-4 * vals.values[0].abs(),
            "stencil laplacian residual {lap:.3e} at value {}",
            vals.values[0]
        );
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mesh = build_cube_mesh(1).unwrap();
        let phi: Vec<f64> = (0..mesh.boundary_tris.len())
            .map(|t| 0.5 + mesh.tri_centroid(t).x)
            .collect();
        let x0 = Point::new(0.4, 0.55, 0.6);
        let h = 1e-5;
        let mut pts = vec![x0];
        for d in 0..3 {
            for s in [1.0, -1.0] {
                let mut p = x0;
                p[d] += s * h;
                pts.push(p);
            }
        }
        let cfg = PotentialConfig::default();
        let slp = eval_single_layer(&mesh, &pts, &phi, true, &cfg).unwrap();
        let g = slp.gradients.as_ref().unwrap()[0];
        for d in 0..3 {
            let fd = (slp.values[1 + 2 * d] - slp.values[2 + 2 * d]) / (2.0 * h);
            assert!((g[d] - fd).abs() < 1e-6 * g.norm().max(1.0), "slp d{d}");
        }
        let nb = mesh.boundary_vertices.len();
        let u: Vec<f64> = (0..nb)
            .map(|b| mesh.vertices[mesh.boundary_vertices[b]].y)
            .collect();
        let dlp = eval_double_layer(&mesh, &pts, &u, true, &cfg).unwrap();
        let g = dlp.gradients.as_ref().unwrap()[0];
        for d in 0..3 {
            let fd = (dlp.values[1 + 2 * d] - dlp.values[2 + 2 * d]) / (2.0 * h);
            assert!((g[d] - fd).abs() < 1e-5 * g.norm().max(1.0), "dlp d{d}");
        }
    }

    #[test]
    fn point_triangle_distance_cases() {
        let tri = [
            Point::new(0.0, 0.0, 0.0),
            Point::new(1.0, 0.0, 0.0),
            Point::new(0.0, 1.0, 0.0),
        ];
        assert!((point_triangle_distance(Point::new(0.25, 0.25, 0.5), &tri) - 0.5).abs() < 1e-14);
        assert!((point_triangle_distance(Point::new(-1.0, 0.0, 0.0), &tri) - 1.0).abs() < 1e-14);
        assert!((point_triangle_distance(Point::new(1.0, 1.0, 0.0), &tri)
            - (0.5f64).sqrt())
        .abs()
            < 1e-14);
        assert!(point_triangle_distance(Point::new(0.2, 0.3, 0.0), &tri) < 1e-15);
    }
}
