use hicoup::coupling::*;
use hicoup::fem::Coefficient;
use hicoup::mesh::build_cube_mesh;
use hicoup::bem::QuadratureConfig;
use hicoup::cli::precond_experiment;
use hicoup::util::timed;

fn main() {
    for level in [3u32, 4] {
        let mesh = build_cube_mesh(level).unwrap();
        let (sys, t) = timed(|| assemble_coupling(CouplingKind::JohnsonNedelec, &mesh, &Coefficient::identity(), &QuadratureConfig::default()).unwrap());
        let rows = precond_experiment(&sys, &[1, 10], 25, 2.0, 1e-3, 0x5EED, level == 3, t).unwrap();
        for r in rows {
            println!("level {level} rank {}: full {} | blockdiag {}{} (asm {:.0}s pc {:.0}s solve {:.1}s)",
                r.rank, r.iters_full, r.iters_blockdiag,
                r.iters_nop.map(|v| format!(" | noP {v}")).unwrap_or_default(),
                r.t_assemble, r.t_precond, r.t_solve_full);
        }
    }
}
