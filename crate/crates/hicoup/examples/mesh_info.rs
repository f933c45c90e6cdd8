//! Build the structured cube meshes and print their dof tables and basic
//! geometric invariants.

use hicoup::mesh::{build_cube_mesh, dof_table};

fn main() {
    println!("level |  h     | FEM dofs | BEM dofs | tets   | volume | area | shape const");
    for level in 1..=5u32 {
        let mesh = build_cube_mesh(level).unwrap();
        let dofs = dof_table(&mesh);
        let volume: f64 = (0..mesh.tets.len()).map(|t| mesh.tet_volume(t)).sum();
        let area: f64 = (0..mesh.boundary_tris.len())
            .map(|t| mesh.tri_area(t))
            .sum();
        println!(
            "{level:>5} | {:<6} | {:>8} | {:>8} | {:>6} | {volume:.4} | {area:.2} | {:.4}",
            mesh.h(),
            dofs.n,
            dofs.m,
            mesh.tets.len(),
            mesh.shape_regularity()
        );
    }
}
