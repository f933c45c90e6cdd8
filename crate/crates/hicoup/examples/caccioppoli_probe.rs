//! Interior-regularity ratio measurement: data localized at one corner, the
//! gradient norm on an interior box controlled by the h-weighted norm on a
//! concentric enlargement.

use hicoup::bem::QuadratureConfig;
use hicoup::coupling::{assemble_coupling, CouplingKind};
use hicoup::fem::Coefficient;
use hicoup::mesh::{build_cube_mesh, Point};
use hicoup::probe::{corner_bump_data, run_probe, BoxPair, ProbeConfig};

fn main() {
    let boxes = BoxPair {
        center: Point::new(0.25, 0.25, 0.25),
        r_side: 0.25,
        eps: 0.5,
    };
    for kind in [
        CouplingKind::BielakMacCamy,
        CouplingKind::Symmetric,
        CouplingKind::JohnsonNedelec,
    ] {
        for level in [2u32, 3] {
            let mesh = build_cube_mesh(level).unwrap();
            let system = assemble_coupling(
                kind,
                &mesh,
                &Coefficient::identity(),
                &QuadratureConfig::default(),
            )
            .unwrap();
            let data = corner_bump_data(&system);
            let report = run_probe(&system, &boxes, &data, &ProbeConfig::default()).unwrap();
            println!(
                "{:>3} level {level}: normalized ratio {:.4e}  (lhs {:.3e}, rhs {:.3e}, \
                 mesh-ratio condition: {})",
                kind.name(),
                report.normalized_ratio,
                report.lhs,
                report.rhs,
                report.mesh_ratio_desc
            );
        }
    }
}
