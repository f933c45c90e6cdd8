//! CLI driver integration: output schemas are pinned, the main CSVs are
//! byte-deterministic for a fixed config (timings live in a separate file),
//! and the dump flags produce their files.

use hicoup::cli::{parse_args, run};
use std::path::PathBuf;

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "hicoup-cli-{tag}-{}",
        std::process::id()
    ));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn args(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn first_line(path: &PathBuf) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn verify_writes_checklist_and_passes() {
    let dir = tmp_dir("verify");
    let cfg = parse_args(&args(&[
        "verify",
        "--level",
        "1",
        "--out",
        dir.to_str().unwrap(),
    ]))
    .unwrap();
    let code = run(&cfg).unwrap();
    assert_eq!(code, 0, "verify checklist failed");
    assert_eq!(first_line(&dir.join("verify.csv")), "check,pass,value");
    assert!(dir.join("meta.txt").exists());
    assert!(dir.join("plot.gp").exists());
    let meta = std::fs::read_to_string(dir.join("meta.txt")).unwrap();
    assert!(meta.contains("build_id="));
    assert!(meta.contains("command=verify"));
}

#[test]
fn invert_csv_is_byte_deterministic() {
    let dir_a = tmp_dir("invert-a");
    let dir_b = tmp_dir("invert-b");
    for dir in [&dir_a, &dir_b] {
        let cfg = parse_args(&args(&[
            "invert",
            "--level",
            "2",
            "--ranks",
            "1,3",
            "--out",
            dir.to_str().unwrap(),
        ]))
        .unwrap();
        assert_eq!(run(&cfg).unwrap(), 0);
    }
    assert_eq!(
        first_line(&dir_a.join("invert.csv")),
        "rank,err_inv,err_lu,mem_inv_bytes,mem_lu_bytes,failed"
    );
    let a = std::fs::read(dir_a.join("invert.csv")).unwrap();
    let b = std::fs::read(dir_b.join("invert.csv")).unwrap();
    assert_eq!(a, b, "invert.csv must be byte-identical across runs");
    // timings are kept out of the deterministic file
    assert_eq!(
        first_line(&dir_a.join("invert_timings.csv")),
        "rank,wall_seconds"
    );
}

#[test]
fn precond_and_probe_schemas_are_pinned() {
    let dir = tmp_dir("precond");
    let cfg = parse_args(&args(&[
        "precond",
        "--level",
        "2",
        "--ranks",
        "1",
        "--out",
        dir.to_str().unwrap(),
    ]))
    .unwrap();
    assert_eq!(run(&cfg).unwrap(), 0);
    assert_eq!(
        first_line(&dir.join("precond.csv")),
        "level,h,fem_dofs,bem_dofs,rank,iters_full,iters_blockdiag,iters_nop"
    );
    assert_eq!(
        first_line(&dir.join("precond_timings.csv")),
        "level,rank,t_assemble,t_precond,t_solve_full,t_solve_bd,t_solve_nop"
    );

    let dir = tmp_dir("probe");
    let cfg = parse_args(&args(&[
        "probe",
        "--level",
        "2",
        "--kind",
        "jn",
        "--out",
        dir.to_str().unwrap(),
    ]))
    .unwrap();
    assert_eq!(run(&cfg).unwrap(), 0);
    assert_eq!(
        first_line(&dir.join("probe.csv")),
        "level,kind,R,eps,lhs,rhs,normalized_ratio"
    );
}

#[test]
fn dump_flags_produce_their_files() {
    let dir = tmp_dir("dumps");
    let mesh_dir = dir.join("mesh");
    let cfg = parse_args(&args(&[
        "invert",
        "--level",
        "1",
        "--ranks",
        "1",
        "--out",
        dir.to_str().unwrap(),
        "--dump-mesh",
        mesh_dir.to_str().unwrap(),
        "--dump-blocks",
        "--dump-ranks",
        "--dump-operator",
    ]))
    .unwrap();
    assert_eq!(run(&cfg).unwrap(), 0);
    assert_eq!(first_line(&mesh_dir.join("vertices.csv")), "x,y,z");
    assert_eq!(first_line(&mesh_dir.join("tets.csv")), "v0,v1,v2,v3");
    assert_eq!(first_line(&mesh_dir.join("tris.csv")), "v0,v1,v2");
    assert_eq!(
        first_line(&dir.join("blocks.csv")),
        "rowstart,rowend,colstart,colend,kind"
    );
    assert_eq!(
        first_line(&dir.join("ranks.csv")),
        "rowstart,rowend,colstart,colend,kind,rank"
    );
    assert_eq!(first_line(&dir.join("operator.csv")), "row,col,value");
    assert_eq!(first_line(&dir.join("stabilization.csv")), "s");
    // the mesh dump of level 1 has the documented counts
    let verts = std::fs::read_to_string(mesh_dir.join("vertices.csv")).unwrap();
    assert_eq!(verts.lines().count(), 1 + 27);
    let tris = std::fs::read_to_string(mesh_dir.join("tris.csv")).unwrap();
    assert_eq!(tris.lines().count(), 1 + 48);
}
