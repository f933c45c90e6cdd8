//! Compression soundness on the actual coupling operator: at full blockwise
//! rank the H-format reproduces the dense operator, and at moderate rank the
//! relative spectral error is small.

use hicoup::bem::QuadratureConfig;
use hicoup::cluster::build_cluster_tree;
use hicoup::coupling::{assemble_coupling, CouplingKind};
use hicoup::fem::Coefficient;
use hicoup::hmatrix::{compress, CompressOptions};
use hicoup::mesh::{build_cube_mesh, dof_table};

#[test]
fn full_rank_compression_reproduces_the_dense_operator() {
    let mesh = build_cube_mesh(2).unwrap();
    let sys = assemble_coupling(
        CouplingKind::JohnsonNedelec,
        &mesh,
        &Coefficient::identity(),
        &QuadratureConfig::default(),
    )
    .unwrap();
    let dofs = dof_table(&mesh);
    let tree = build_cluster_tree(&dofs, 25).unwrap();
    let oracle = |i: usize, j: usize| sys.entry_stabilized(i, j);
    let (h, _) = compress(
        &oracle,
        &tree,
        2.0,
        &CompressOptions {
            rank: None,
            acu_tol: 1e-12,
            pad_to_rank: false,
        },
    );
    let dense = sys.materialize(true);
    let hd = h.to_dense_original();
    let err = hd.sub(&dense).norm2_exact() / dense.norm2_exact();
    assert!(err <= 1e-10, "full-rank compression error {err:.3e}");
}

#[test]
fn rank_8_compression_is_accurate_to_1e3() {
    let mesh = build_cube_mesh(2).unwrap();
    let sys = assemble_coupling(
        CouplingKind::JohnsonNedelec,
        &mesh,
        &Coefficient::identity(),
        &QuadratureConfig::default(),
    )
    .unwrap();
    let dofs = dof_table(&mesh);
    let tree = build_cluster_tree(&dofs, 25).unwrap();
    let oracle = |i: usize, j: usize| sys.entry_stabilized(i, j);
    let (h, _) = compress(
        &oracle,
        &tree,
        2.0,
        &CompressOptions {
            rank: Some(8),
            acu_tol: 1e-10,
            pad_to_rank: false,
        },
    );
    let dense = sys.materialize(true);
    let bnorm = hicoup::dense::spectral_norm_of(&dense, 2000, 1e-9).value;
    let hd = h.to_dense_original();
    let err = hd.sub(&dense).norm2_exact() / bnorm;
    assert!(err <= 1e-3, "rank-8 compression error {err:.3e}");
}
