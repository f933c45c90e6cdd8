//! Evaluate the volume potentials and demonstrate the classical trace and
//! jump relations across the boundary.

use hicoup::bem::potential::{eval_double_layer, eval_single_layer, PotentialConfig};
use hicoup::mesh::{build_cube_mesh, Point};

fn main() {
    let mesh = build_cube_mesh(2).unwrap();
    let m = mesh.boundary_tris.len();
    let nb = mesh.boundary_vertices.len();
    let cfg = PotentialConfig {
        max_depth: 8,
        ..Default::default()
    };

    // Gauss identity: the double layer of a constant is -1 inside, 0 outside
    let ones = vec![1.0; nb];
    let pts = [
        Point::new(0.5, 0.5, 0.5),
        Point::new(0.2, 0.7, 0.4),
        Point::new(1.8, 0.5, 0.5),
    ];
    let vals = eval_double_layer(&mesh, &pts, &ones, false, &cfg).unwrap();
    println!("K~1 at interior points: {:.8}, {:.8}", vals.values[0], vals.values[1]);
    println!("K~1 at an exterior point: {:.2e}", vals.values[2]);

    // normal-derivative jump of the single layer: [d/dn V~ phi] = -phi
    let phi = vec![1.0; m];
    let t = m / 2;
    let c = mesh.tri_centroid(t);
    let n = mesh.tri_normal(t);
    let h = mesh.h();
    let deltas = [h / 8.0, h / 16.0];
    let mut jumps = Vec::new();
    for &d in &deltas {
        let pair = [c + n * d, c - n * d];
        let v = eval_single_layer(&mesh, &pair, &phi, true, &cfg).unwrap();
        let g = v.gradients.as_ref().unwrap();
        jumps.push((g[0] - g[1]).dot(&n));
    }
    let extrapolated = 2.0 * jumps[1] - jumps[0];
    println!("normal-derivative jump of V~phi at a face center: {extrapolated:.6} (density 1)");
}
