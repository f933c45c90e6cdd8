//! GMRES iteration counts for the stabilized Johnson-Nedelec system with the
//! rank-r H-LU preconditioner, the block-diagonal variant, and (at level 3)
//! no preconditioner.

use hicoup::bem::QuadratureConfig;
use hicoup::cli::precond_experiment;
use hicoup::coupling::{assemble_coupling, CouplingKind};
use hicoup::fem::Coefficient;
use hicoup::mesh::build_cube_mesh;
use hicoup::util::timed;

fn main() {
    for level in [2u32, 3] {
        let mesh = build_cube_mesh(level).unwrap();
        let (system, t_asm) = timed(|| {
            assemble_coupling(
                CouplingKind::JohnsonNedelec,
                &mesh,
                &Coefficient::identity(),
                &QuadratureConfig::default(),
            )
            .unwrap()
        });
        let rows = precond_experiment(&system, &[1, 10], 25, 2.0, 1e-3, 0x5EED, level == 3, t_asm)
            .unwrap();
        for r in rows {
            println!(
                "level {level} ({}+{} dofs) rank {:>2}: full H-LU P: {:>3} iters, block-diag P: {:>3} iters{}",
                r.fem_dofs,
                r.bem_dofs,
                r.rank,
                r.iters_full,
                r.iters_blockdiag,
                r.iters_nop
                    .map(|v| format!(", unpreconditioned: {v}"))
                    .unwrap_or_default()
            );
        }
    }
}
