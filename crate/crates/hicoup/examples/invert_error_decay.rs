//! H-inverse and H-LU error surrogates versus block rank for the stabilized
//! Johnson-Nedelec operator: the exponential-decay experiment.

use hicoup::bem::QuadratureConfig;
use hicoup::cli::invert_sweep;
use hicoup::coupling::{assemble_coupling, CouplingKind};
use hicoup::fem::Coefficient;
use hicoup::mesh::build_cube_mesh;

fn main() {
    let mesh = build_cube_mesh(3).unwrap();
    let system = assemble_coupling(
        CouplingKind::JohnsonNedelec,
        &mesh,
        &Coefficient::identity(),
        &QuadratureConfig::default(),
    )
    .unwrap();
    println!("stabilized JN operator, {} dofs", system.dim());
    println!("rank |  |I - B B_H|   |I - B (LU)^-1% |  mem inverse | mem LU");
    let rows = invert_sweep(&system, 25, 2.0, &[1, 2, 4, 8, 16]).unwrap();
    for r in rows {
        println!(
            "{:>4} |  {:.4e}  |  {:.4e}  | {:>10} | {:>10}",
            r.rank, r.err_inv, r.err_lu, r.mem_inv_bytes, r.mem_lu_bytes
        );
    }
}
