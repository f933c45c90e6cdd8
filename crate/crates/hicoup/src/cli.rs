//! Experiment driver behind the `hicoup` binary: H-inverse/H-LU error and
//! memory sweeps, preconditioned GMRES tables, interior-regularity probes,
//! and an operator-identity verification checklist. Emits deterministic CSVs
//! (timings go to a sibling file), a gnuplot script, and a meta file.

use crate::bem::potential::{eval_double_layer, eval_single_layer, PotentialConfig};
use crate::bem::QuadratureConfig;
use crate::cluster::{build_block_tree, build_cluster_tree, BlockKind};
use crate::coupling::{
    assemble_coupling, build_dual_basis, check_representation_formula, CouplingKind,
    CouplingSystem,
};
use crate::dense::{svd, truncate, DenseMatrix, LowRank};
use crate::error::{Error, Result};
use crate::fem::Coefficient;
use crate::hmatrix::{compress, error_surrogate, hinvert, hlu, CompressOptions};
use crate::mesh::{build_cube_mesh, dof_table, Point};
use crate::probe::{corner_bump_data, run_probe, BoxPair, ProbeConfig};
use crate::solver::{
    build_block_diag_precond, build_full_hlu_precond, gmres, precond_trees, GmresConfig,
};
use crate::util::{timed, SplitMix64};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: &str = "v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Invert,
    Lu,
    Precond,
    Probe,
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Invert => "invert",
            Command::Lu => "lu",
            Command::Precond => "precond",
            Command::Probe => "probe",
            Command::Verify => "verify",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: Command,
    pub level: u32,
    pub kind: CouplingKind,
    pub ranks: Vec<usize>,
    pub eta: f64,
    pub leaf_size: usize,
    pub tol: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dump_mesh: Option<PathBuf>,
    pub dump_blocks: bool,
    pub dump_ranks: bool,
    pub dump_operator: bool,
    pub with_unpreconditioned: bool,
}

impl RunConfig {
    fn defaults(command: Command) -> Self {
        let ranks = match command {
            Command::Precond => vec![1, 10],
            _ => vec![1, 2, 4, 8, 16],
        };
        Self {
            command,
            level: 3,
            kind: CouplingKind::JohnsonNedelec,
            ranks,
            eta: 2.0,
            leaf_size: 25,
            tol: 1e-3,
            seed: 0x5EED,
            out_dir: PathBuf::from("out"),
            dump_mesh: None,
            dump_blocks: false,
            dump_ranks: false,
            dump_operator: false,
            with_unpreconditioned: false,
        }
    }

    /// Canonical parameter string (used for meta.txt and the build id).
    pub fn canonical(&self) -> String {
        let ranks: Vec<String> = self.ranks.iter().map(|r| r.to_string()).collect();
        format!(
            "command={} level={} kind={} ranks={} eta={} leaf={} tol={:e} seed={:#x} unprec={}",
            self.command.name(),
            self.level,
            self.kind.name(),
            ranks.join(","),
            self.eta,
            self.leaf_size,
            self.tol,
            self.seed,
            self.with_unpreconditioned
        )
    }
}

/// Parse `hicoup <command> [flags]`; unknown flags are rejected.
pub fn parse_args(args: &[String]) -> Result<RunConfig> {
    let usage = "usage: hicoup <invert|lu|precond|probe|verify> [--level K] [--kind bmc|sym|jn] \
                 [--ranks 1,2,4] [--eta X] [--leaf N] [--tol X] [--seed N] [--out DIR] \
                 [--dump-mesh DIR] [--dump-blocks] [--dump-ranks] [--dump-operator] \
                 [--with-unpreconditioned]";
    let command = match args.first().map(String::as_str) {
        Some("invert") => Command::Invert,
        Some("lu") => Command::Lu,
        Some("precond") => Command::Precond,
        Some("probe") => Command::Probe,
        Some("verify") => Command::Verify,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown or missing command {other:?}\n{usage}"
            )))
        }
    };
    let mut cfg = RunConfig::defaults(command);
    let mut it = args[1..].iter();
    while let Some(flag) = it.next() {
        let mut value = |name: &str| -> Result<&String> {
            it.next()
                .ok_or_else(|| Error::InvalidArgument(format!("{name} needs a value")))
        };
        match flag.as_str() {
            "--level" => {
                cfg.level = value("--level")?
                    .parse()
                    .map_err(|e| Error::InvalidArgument(format!("--level: {e}")))?
            }
            "--kind" => cfg.kind = CouplingKind::parse(value("--kind")?)?,
            "--ranks" => {
                cfg.ranks = value("--ranks")?
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|e| Error::InvalidArgument(format!("--ranks: {e}")))
                    })
                    .collect::<Result<Vec<usize>>>()?;
                if cfg.ranks.is_empty() {
                    return Err(Error::InvalidArgument("--ranks must be nonempty".into()));
                }
            }
            "--eta" => {
                cfg.eta = value("--eta")?
                    .parse()
                    .map_err(|e| Error::InvalidArgument(format!("--eta: {e}")))?
            }
            "--leaf" => {
                cfg.leaf_size = value("--leaf")?
                    .parse()
                    .map_err(|e| Error::InvalidArgument(format!("--leaf: {e}")))?
            }
            "--tol" => {
                cfg.tol = value("--tol")?
                    .parse()
                    .map_err(|e| Error::InvalidArgument(format!("--tol: {e}")))?
            }
            "--seed" => {
                cfg.seed = value("--seed")?
                    .parse()
                    .map_err(|e| Error::InvalidArgument(format!("--seed: {e}")))?
            }
            "--out" => cfg.out_dir = PathBuf::from(value("--out")?),
            "--dump-mesh" => cfg.dump_mesh = Some(PathBuf::from(value("--dump-mesh")?)),
            "--dump-blocks" => cfg.dump_blocks = true,
            "--dump-ranks" => cfg.dump_ranks = true,
            "--dump-operator" => cfg.dump_operator = true,
            "--with-unpreconditioned" => cfg.with_unpreconditioned = true,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown flag '{other}'\n{usage}"
                )))
            }
        }
    }
    Ok(cfg)
}

fn fmt_f(v: f64) -> String {
    format!("{v:.17e}")
}

fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    let mut text = String::new();
    writeln!(text, "{header}").unwrap();
    for row in rows {
        writeln!(text, "{}", row.join(",")).unwrap();
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// FNV-1a over the canonical config and crate version; a short reproducible
/// build id for meta.txt.
pub fn build_id(cfg: &RunConfig) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in cfg
        .canonical()
        .bytes()
        .chain(env!("CARGO_PKG_VERSION").bytes())
    {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    format!("{h:016x}")
}

fn write_meta(cfg: &RunConfig) -> Result<()> {
    let text = format!(
        "schema={}\n{}\nbuild_id={}\nversion={}\n",
        SCHEMA_VERSION,
        cfg.canonical().replace(' ', "\n"),
        build_id(cfg),
        env!("CARGO_PKG_VERSION"),
    );
    std::fs::write(cfg.out_dir.join("meta.txt"), text)?;
    Ok(())
}

fn write_plot_script(cfg: &RunConfig) -> Result<()> {
    let body = match cfg.command {
        Command::Invert => {
            "set datafile separator ','\n\
             set logscale y\n\
             set xlabel 'block rank r'\n\
             set ylabel 'error surrogate'\n\
             plot 'invert.csv' using 1:2 with linespoints title 'err_inv', \\\n\
                  'invert.csv' using 1:3 with linespoints title 'err_lu'\n\
             pause -1\n\
             unset logscale y\n\
             set ylabel 'memory (bytes)'\n\
             plot 'invert.csv' using 1:4 with linespoints title 'mem inverse', \\\n\
                  'invert.csv' using 1:5 with linespoints title 'mem LU'\n\
             pause -1\n"
        }
        Command::Lu => {
            "set datafile separator ','\n\
             set logscale y\n\
             set xlabel 'block rank r'\n\
             set ylabel 'error surrogate'\n\
             plot 'lu.csv' using 1:2 with linespoints title 'err_lu'\n\
             pause -1\n"
        }
        Command::Precond => {
            "set datafile separator ','\n\
             set xlabel 'level'\n\
             set ylabel 'GMRES iterations'\n\
             plot 'precond.csv' using 1:6 with linespoints title 'full H-LU P', \\\n\
                  'precond.csv' using 1:7 with linespoints title 'block-diag P'\n\
             pause -1\n"
        }
        Command::Probe => {
            "set datafile separator ','\n\
             set xlabel 'level'\n\
             set ylabel 'normalized ratio'\n\
             plot 'probe.csv' using 1:7 with linespoints title 'Caccioppoli ratio'\n\
             pause -1\n"
        }
        Command::Verify => {
            "set datafile separator ','\n\
             print 'verify produces a checklist; see verify.csv'\n"
        }
    };
    std::fs::write(
        cfg.out_dir.join("plot.gp"),
        format!("# gnuplot script for the {} run\n{body}", cfg.command.name()),
    )?;
    Ok(())
}

fn dump_mesh(dir: &Path, mesh: &crate::mesh::Mesh) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let vrows: Vec<Vec<String>> = mesh
        .vertices
        .iter()
        .map(|p| vec![fmt_f(p.x), fmt_f(p.y), fmt_f(p.z)])
        .collect();
    write_csv(&dir.join("vertices.csv"), "x,y,z", &vrows)?;
    let trows: Vec<Vec<String>> = mesh
        .tets
        .iter()
        .map(|t| t.iter().map(|v| v.to_string()).collect())
        .collect();
    write_csv(&dir.join("tets.csv"), "v0,v1,v2,v3", &trows)?;
    let brows: Vec<Vec<String>> = mesh
        .boundary_tris
        .iter()
        .map(|t| t.iter().map(|v| v.to_string()).collect())
        .collect();
    write_csv(&dir.join("tris.csv"), "v0,v1,v2", &brows)?;
    Ok(())
}

/// Entry point used by the binary; returns a process exit code.
pub fn run(cfg: &RunConfig) -> Result<i32> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_meta(cfg)?;
    write_plot_script(cfg)?;
    let code = match cfg.command {
        Command::Invert => cmd_invert(cfg)?,
        Command::Lu => cmd_lu(cfg)?,
        Command::Precond => cmd_precond(cfg)?,
        Command::Probe => cmd_probe(cfg)?,
        Command::Verify => cmd_verify(cfg)?,
    };
    Ok(code)
}

fn assemble(cfg: &RunConfig, kind: CouplingKind, level: u32) -> Result<CouplingSystem> {
    let mesh = build_cube_mesh(level)?;
    if let Some(dir) = &cfg.dump_mesh {
        dump_mesh(dir, &mesh)?;
    }
    let system = assemble_coupling(kind, &mesh, &Coefficient::identity(), &QuadratureConfig::default())?;
    if cfg.dump_operator {
        let d = system.dim();
        let mut rows = Vec::new();
        for i in 0..d {
            for j in 0..d {
                let v = system.entry(i, j);
                if v != 0.0 {
                    rows.push(vec![i.to_string(), j.to_string(), fmt_f(v)]);
                }
            }
        }
        write_csv(&cfg.out_dir.join("operator.csv"), "row,col,value", &rows)?;
        let srows: Vec<Vec<String>> = system.s.iter().map(|&v| vec![fmt_f(v)]).collect();
        write_csv(&cfg.out_dir.join("stabilization.csv"), "s", &srows)?;
    }
    Ok(system)
}

fn dump_block_structure(cfg: &RunConfig, tree: &crate::cluster::ClusterTree) -> Result<()> {
    if !cfg.dump_blocks {
        return Ok(());
    }
    let bt = build_block_tree(tree, cfg.eta)?;
    let rows: Vec<Vec<String>> = bt
        .blocks
        .iter()
        .map(|b| {
            let nr = tree.node(b.row);
            let nc = tree.node(b.col);
            vec![
                nr.begin.to_string(),
                nr.end.to_string(),
                nc.begin.to_string(),
                nc.end.to_string(),
                match b.kind {
                    BlockKind::Far => "far".into(),
                    BlockKind::Near => "near".into(),
                },
            ]
        })
        .collect();
    write_csv(
        &cfg.out_dir.join("blocks.csv"),
        "rowstart,rowend,colstart,colend,kind",
        &rows,
    )
}

fn dump_rank_map(cfg: &RunConfig, tree: &crate::cluster::ClusterTree, h: &crate::hmatrix::HMatrix) -> Result<()> {
    if !cfg.dump_ranks {
        return Ok(());
    }
    use crate::hmatrix::HBlock;
    fn walk(
        b: &HBlock,
        r0: usize,
        c0: usize,
        rows: &mut Vec<Vec<String>>,
    ) {
        match b {
            HBlock::Dense(d) => rows.push(vec![
                r0.to_string(),
                (r0 + d.rows()).to_string(),
                c0.to_string(),
                (c0 + d.cols()).to_string(),
                "near".into(),
                d.rows().min(d.cols()).to_string(),
            ]),
            HBlock::LowRank(lr) => rows.push(vec![
                r0.to_string(),
                (r0 + lr.rows()).to_string(),
                c0.to_string(),
                (c0 + lr.cols()).to_string(),
                "far".into(),
                lr.rank().to_string(),
            ]),
            HBlock::Split {
                sons,
                row_split,
                col_split,
                ..
            } => {
                walk(&sons[0], r0, c0, rows);
                walk(&sons[1], r0, c0 + col_split, rows);
                walk(&sons[2], r0 + row_split, c0, rows);
                walk(&sons[3], r0 + row_split, c0 + col_split, rows);
            }
        }
    }
    let mut rows = Vec::new();
    walk(&h.root, 0, 0, &mut rows);
    let _ = tree;
    write_csv(
        &cfg.out_dir.join("ranks.csv"),
        "rowstart,rowend,colstart,colend,kind,rank",
        &rows,
    )
}

/// Rank sweep of the H-inverse and H-LU error surrogates and memory.
pub struct InvertRow {
    pub rank: usize,
    pub err_inv: f64,
    pub err_lu: f64,
    pub mem_inv_bytes: usize,
    pub mem_lu_bytes: usize,
    pub wall_seconds: f64,
    pub failed: bool,
}

pub fn invert_sweep(
    system: &CouplingSystem,
    leaf_size: usize,
    eta: f64,
    ranks: &[usize],
) -> Result<Vec<InvertRow>> {
    let dofs = dof_table(&system.mesh);
    let tree = build_cluster_tree(&dofs, leaf_size)?;
    let oracle = |i: usize, j: usize| system.entry_stabilized(i, j);
    // accurate compression once; blockwise projection to rank r afterwards
    let (hb, _) = compress(
        &oracle,
        &tree,
        eta,
        &CompressOptions {
            rank: Some(64),
            acu_tol: 1e-10,
            pad_to_rank: false,
        },
    );
    let d = system.dim();
    let b_apply = |x: &[f64]| system.apply_stabilized(x);
    let b_apply_t = |x: &[f64]| system.apply_stabilized_transpose(x);
    let mut rows = Vec::new();
    for &rank in ranks {
        let ((row, _), wall) = timed(|| -> (InvertRow, ()) {
            let hb_r = hb.truncate_to_rank(rank);
            let inv = hinvert(&hb_r, rank);
            let lu_f = hlu(&hb_r, rank);
            match (inv, lu_f) {
                (Ok((hinv, _)), Ok(hluf)) => {
                    let err_inv = error_surrogate(
                        &b_apply,
                        &b_apply_t,
                        &|x| hinv.matvec(x),
                        &|x| hinv.matvec_t(x),
                        d,
                        600,
                        1e-6,
                    )
                    .value;
                    let err_lu = error_surrogate(
                        &b_apply,
                        &b_apply_t,
                        &|x| hluf.solve(x),
                        &|x| hluf.solve_transpose(x),
                        d,
                        600,
                        1e-6,
                    )
                    .value;
                    (
                        InvertRow {
                            rank,
                            err_inv,
                            err_lu,
                            mem_inv_bytes: hinv.memory_bytes(),
                            mem_lu_bytes: hluf.memory_bytes(),
                            wall_seconds: 0.0,
                            failed: false,
                        },
                        (),
                    )
                }
                _ => (
                    InvertRow {
                        rank,
                        err_inv: f64::NAN,
                        err_lu: f64::NAN,
                        mem_inv_bytes: 0,
                        mem_lu_bytes: 0,
                        wall_seconds: 0.0,
                        failed: true,
                    },
                    (),
                ),
            }
        });
        let mut row = row;
        row.wall_seconds = wall;
        rows.push(row);
    }
    Ok(rows)
}

fn cmd_invert(cfg: &RunConfig) -> Result<i32> {
    let system = assemble(cfg, cfg.kind, cfg.level)?;
    let dofs = dof_table(&system.mesh);
    let tree = build_cluster_tree(&dofs, cfg.leaf_size)?;
    dump_block_structure(cfg, &tree)?;
    if cfg.dump_ranks {
        let oracle = |i: usize, j: usize| system.entry_stabilized(i, j);
        let (hb, _) = compress(
            &oracle,
            &tree,
            cfg.eta,
            &CompressOptions {
                rank: Some(ranks_max(&cfg.ranks)),
                acu_tol: 1e-10,
                pad_to_rank: false,
            },
        );
        dump_rank_map(cfg, &tree, &hb)?;
    }
    let rows = invert_sweep(&system, cfg.leaf_size, cfg.eta, &cfg.ranks)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.rank.to_string(),
                fmt_f(r.err_inv),
                fmt_f(r.err_lu),
                r.mem_inv_bytes.to_string(),
                r.mem_lu_bytes.to_string(),
                if r.failed { "1".into() } else { "0".into() },
            ]
        })
        .collect();
    write_csv(
        &cfg.out_dir.join("invert.csv"),
        "rank,err_inv,err_lu,mem_inv_bytes,mem_lu_bytes,failed",
        &csv_rows,
    )?;
    let timing_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.rank.to_string(), fmt_f(r.wall_seconds)])
        .collect();
    write_csv(
        &cfg.out_dir.join("invert_timings.csv"),
        "rank,wall_seconds",
        &timing_rows,
    )?;
    for r in &rows {
        println!(
            "rank {:>3}: err_inv {:.3e}  err_lu {:.3e}  mem_inv {}  mem_lu {}",
            r.rank, r.err_inv, r.err_lu, r.mem_inv_bytes, r.mem_lu_bytes
        );
    }
    Ok(0)
}

fn ranks_max(ranks: &[usize]) -> usize {
    ranks.iter().copied().max().unwrap_or(1)
}

fn cmd_lu(cfg: &RunConfig) -> Result<i32> {
    let system = assemble(cfg, cfg.kind, cfg.level)?;
    let rows = invert_sweep(&system, cfg.leaf_size, cfg.eta, &cfg.ranks)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.rank.to_string(),
                fmt_f(r.err_lu),
                r.mem_lu_bytes.to_string(),
            ]
        })
        .collect();
    write_csv(
        &cfg.out_dir.join("lu.csv"),
        "rank,err_lu,mem_lu_bytes",
        &csv_rows,
    )?;
    for r in &rows {
        println!("rank {:>3}: err_lu {:.3e}  mem_lu {}", r.rank, r.err_lu, r.mem_lu_bytes);
    }
    Ok(0)
}

pub struct PrecondRow {
    pub level: u32,
    pub fem_dofs: usize,
    pub bem_dofs: usize,
    pub rank: usize,
    pub iters_full: usize,
    pub iters_blockdiag: usize,
    pub iters_nop: Option<usize>,
    pub t_assemble: f64,
    pub t_precond: f64,
    pub t_solve_full: f64,
    pub t_solve_bd: f64,
    pub t_solve_nop: f64,
    pub history_full: Vec<f64>,
    pub history_blockdiag: Vec<f64>,
    pub history_nop: Option<Vec<f64>>,
}

/// One preconditioning experiment: seeded random right-hand side, GMRES with
/// the full-B H-LU preconditioner (reproduces the reference counts), the
/// block-diagonal preconditioner, and optionally no preconditioner.
pub fn precond_experiment(
    system: &CouplingSystem,
    cfg_ranks: &[usize],
    leaf_size: usize,
    eta: f64,
    tol: f64,
    seed: u64,
    with_unprec: bool,
    t_assemble: f64,
) -> Result<Vec<PrecondRow>> {
    let d = system.dim();
    let mut rng = SplitMix64::new(seed);
    let rhs: Vec<f64> = (0..d).map(|_| rng.next_sym()).collect();
    let gcfg = GmresConfig {
        tol,
        max_iters: 20000,
    };
    let apply = |x: &[f64]| system.apply_stabilized(x);
    let (unp, t_nop) = if with_unprec {
        let (r, t) = timed(|| gmres(&apply, &rhs, &gcfg, None));
        (Some(r?), t)
    } else {
        (None, 0.0)
    };
    let dofs = dof_table(&system.mesh);
    let tree = build_cluster_tree(&dofs, leaf_size)?;
    let (tree_a, tree_v) = precond_trees(system, leaf_size)?;
    let mut rows = Vec::new();
    for &rank in cfg_ranks {
        let (full, t_pc) = timed(|| build_full_hlu_precond(system, &tree, rank, eta));
        let full = full?;
        let pre_full = |x: &[f64]| full.apply(x);
        let (res_full, t_sf) = timed(|| gmres(&apply, &rhs, &gcfg, Some(&pre_full)));
        let res_full = res_full?;
        let bd = build_block_diag_precond(system, &tree_a, &tree_v, rank, eta)?;
        let pre_bd = |x: &[f64]| bd.apply(x);
        let (res_bd, t_sb) = timed(|| gmres(&apply, &rhs, &gcfg, Some(&pre_bd)));
        let res_bd = res_bd?;
        rows.push(PrecondRow {
            level: system.mesh.level,
            fem_dofs: system.n,
            bem_dofs: system.m,
            rank,
            iters_full: res_full.iterations,
            iters_blockdiag: res_bd.iterations,
            iters_nop: unp.as_ref().map(|r| r.iterations),
            t_assemble,
            t_precond: t_pc,
            t_solve_full: t_sf,
            t_solve_bd: t_sb,
            t_solve_nop: t_nop,
            history_full: res_full.residual_history,
            history_blockdiag: res_bd.residual_history,
            history_nop: unp.as_ref().map(|r| r.residual_history.clone()),
        });
    }
    Ok(rows)
}

fn cmd_precond(cfg: &RunConfig) -> Result<i32> {
    let mut all = Vec::new();
    for level in 2..=cfg.level {
        let (system, t_asm) = timed(|| assemble(cfg, cfg.kind, level));
        let system = system?;
        // the unpreconditioned run is cost-gated at high levels
        let unprec_here = cfg.with_unpreconditioned && level <= 4;
        let rows = precond_experiment(
            &system,
            &cfg.ranks,
            cfg.leaf_size,
            cfg.eta,
            cfg.tol,
            cfg.seed,
            unprec_here,
            t_asm,
        )?;
        all.extend(rows);
    }
    let csv_rows: Vec<Vec<String>> = all
        .iter()
        .map(|r| {
            vec![
                r.level.to_string(),
                fmt_f(0.5f64.powi(r.level as i32)),
                r.fem_dofs.to_string(),
                r.bem_dofs.to_string(),
                r.rank.to_string(),
                r.iters_full.to_string(),
                r.iters_blockdiag.to_string(),
                r.iters_nop.map(|v| v.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(
        &cfg.out_dir.join("precond.csv"),
        "level,h,fem_dofs,bem_dofs,rank,iters_full,iters_blockdiag,iters_nop",
        &csv_rows,
    )?;
    let timing_rows: Vec<Vec<String>> = all
        .iter()
        .map(|r| {
            vec![
                r.level.to_string(),
                r.rank.to_string(),
                fmt_f(r.t_assemble),
                fmt_f(r.t_precond),
                fmt_f(r.t_solve_full),
                fmt_f(r.t_solve_bd),
                fmt_f(r.t_solve_nop),
            ]
        })
        .collect();
    write_csv(
        &cfg.out_dir.join("precond_timings.csv"),
        "level,rank,t_assemble,t_precond,t_solve_full,t_solve_bd,t_solve_nop",
        &timing_rows,
    )?;
    // residual histories, one file per run
    for r in &all {
        let mut variants: Vec<(&str, &Vec<f64>)> = vec![
            ("full", &r.history_full),
            ("blockdiag", &r.history_blockdiag),
        ];
        if let Some(h) = &r.history_nop {
            variants.push(("nop", h));
        }
        for (tag, history) in variants {
            let rows: Vec<Vec<String>> = history
                .iter()
                .enumerate()
                .map(|(it, &res)| vec![it.to_string(), fmt_f(res)])
                .collect();
            write_csv(
                &cfg.out_dir
                    .join(format!("residuals_L{}_r{}_{tag}.csv", r.level, r.rank)),
                "iter,relres",
                &rows,
            )?;
        }
    }
    for r in &all {
        println!(
            "level {} rank {:>3}: full-P {} iters, block-diag-P {} iters{}",
            r.level,
            r.rank,
            r.iters_full,
            r.iters_blockdiag,
            r.iters_nop
                .map(|v| format!(", no-P {v} iters"))
                .unwrap_or_default()
        );
    }
    Ok(0)
}

fn cmd_probe(cfg: &RunConfig) -> Result<i32> {
    let boxes = BoxPair {
        center: Point::new(0.25, 0.25, 0.25),
        r_side: 0.25,
        eps: 0.5,
    };
    let mut rows = Vec::new();
    for level in 2..=cfg.level {
        let system = assemble(cfg, cfg.kind, level)?;
        let data = corner_bump_data(&system);
        let report = run_probe(&system, &boxes, &data, &ProbeConfig::default())?;
        println!(
            "{} level {level}: normalized ratio {:.5e} (lhs {:.3e}, rhs {:.3e}, mesh ratio ok: {})",
            cfg.kind.name(),
            report.normalized_ratio,
            report.lhs,
            report.rhs,
            report.mesh_ratio_ok
        );
        rows.push(vec![
            level.to_string(),
            cfg.kind.name().to_string(),
            fmt_f(boxes.r_side),
            fmt_f(boxes.eps),
            fmt_f(report.lhs),
            fmt_f(report.rhs),
            fmt_f(report.normalized_ratio),
        ]);
    }
    write_csv(
        &cfg.out_dir.join("probe.csv"),
        "level,kind,R,eps,lhs,rhs,normalized_ratio",
        &rows,
    )?;
    Ok(0)
}

/// One verification check: name, pass, and the measured quantity.
pub struct VerifyCheck {
    pub name: &'static str,
    pub pass: bool,
    pub value: f64,
}

/// Symmetry defect of a matrix relative to its largest entry.
pub fn check_symmetry(m: &DenseMatrix) -> (bool, f64) {
    let defect = m.sub(&m.transpose()).max_abs();
    (defect <= 1e-10 * m.max_abs(), defect)
}

/// The oracle-backed identity checklist at a small level.
pub fn verify_checks(level: u32, seed: u64) -> Result<Vec<VerifyCheck>> {
    let mesh = build_cube_mesh(level)?;
    let quad = QuadratureConfig::default();
    let system = assemble_coupling(
        CouplingKind::Symmetric,
        &mesh,
        &Coefficient::identity(),
        &quad,
    )?;
    let mut checks = Vec::new();

    // dual-basis biorthogonality on sampled pairs
    let dual = build_dual_basis(&mesh);
    let total = system.dim();
    let mut rng = SplitMix64::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let i = rng.next_index(total);
        let j = rng.next_index(total);
        let v = dual.pair_single(&mesh, i, j);
        let expect = if i == j { 1.0 } else { 0.0 };
        worst = worst.max((v - expect).abs());
    }
    checks.push(VerifyCheck {
        name: "dual-basis biorthogonality",
        pass: worst <= 1e-12,
        value: worst,
    });

    // W annihilates constants
    let nb = system.boundary_vertices.len();
    let w1 = system.w.matvec(&vec![1.0; nb]);
    let w1n = crate::util::norm2(&w1);
    let wnorm = crate::dense::spectral_norm_of(&system.w, 2000, 1e-8).value;
    checks.push(VerifyCheck {
        name: "hypersingular kernel (W 1 = 0)",
        pass: w1n <= 1e-8 * wnorm,
        value: w1n / wnorm,
    });

    // V symmetric positive definite
    let (sym_ok, sym_defect) = check_symmetry(&system.v);
    checks.push(VerifyCheck {
        name: "single-layer symmetry",
        pass: sym_ok,
        value: sym_defect,
    });
    let eigs = system.v.sym_eigenvalues();
    checks.push(VerifyCheck {
        name: "single-layer positive definite",
        pass: eigs[0] > 0.0,
        value: eigs[0],
    });

    // Gauss identity at interior points
    let ones = vec![1.0; nb];
    let mut pts = Vec::new();
    let mut grid = SplitMix64::new(seed ^ 0x11);
    while pts.len() < 10 {
        let p = Point::new(
            0.1 + 0.8 * grid.next_f64(),
            0.1 + 0.8 * grid.next_f64(),
            0.1 + 0.8 * grid.next_f64(),
        );
        pts.push(p);
    }
    let vals = eval_double_layer(&mesh, &pts, &ones, false, &PotentialConfig::default())?;
    let gauss_worst = vals
        .values
        .iter()
        .map(|v| (v + 1.0).abs())
        .fold(0.0, f64::max);
    checks.push(VerifyCheck {
        name: "Gauss identity (K~1 = -1 inside)",
        pass: gauss_worst <= 1e-6,
        value: gauss_worst,
    });

    // single-layer value continuity across the boundary (extrapolated)
    let m = system.m;
    let phi = vec![1.0; m];
    let pcfg = PotentialConfig {
        max_depth: 10,
        ..Default::default()
    };
    let deltas = [2e-3, 1e-3];
    let mut jump_worst = 0.0f64;
    for probe in 0..5 {
        let t = (probe * 37) % m;
        let c = mesh.tri_centroid(t);
        let nrm = mesh.tri_normal(t);
        let mut probe_pts = Vec::new();
        for &dl in &deltas {
            probe_pts.push(c + nrm * dl);
            probe_pts.push(c - nrm * dl);
        }
        let v = eval_single_layer(&mesh, &probe_pts, &phi, false, &pcfg)?;
        let coarse = v.values[0] - v.values[1];
        let fine = v.values[2] - v.values[3];
        let jump = (2.0 * fine - coarse).abs();
        jump_worst = jump_worst.max(jump / v.values[3].abs());
    }
    checks.push(VerifyCheck {
        name: "single-layer continuity across Gamma",
        pass: jump_worst <= 1e-3,
        value: jump_worst,
    });

    // representation formula for all three couplings
    let mut rep_worst = 0.0f64;
    for kind in [
        CouplingKind::BielakMacCamy,
        CouplingKind::Symmetric,
        CouplingKind::JohnsonNedelec,
    ] {
        let sys = assemble_coupling(kind, &mesh, &Coefficient::identity(), &quad)?;
        rep_worst = rep_worst.max(check_representation_formula(&sys, &dual, 20, seed)?);
    }
    checks.push(VerifyCheck {
        name: "inverse representation formula",
        pass: rep_worst <= 1e-10,
        value: rep_worst,
    });

    // Eckart-Young randomized
    let mut ey_worst = 0.0f64;
    for _ in 0..200 {
        let r = 3 + rng.next_index(8);
        let c = 3 + rng.next_index(8);
        let a = DenseMatrix::from_fn(r, c, |_, _| rng.next_sym());
        let keep = rng.next_index(r.min(c));
        let lr = LowRank::new(a.clone(), DenseMatrix::identity(c));
        let t = truncate(&lr, keep);
        let (_, s, _) = svd(&a)?;
        let expect = if keep < s.len() { s[keep] } else { 0.0 };
        let err = t.to_dense().sub(&a).norm2_exact();
        ey_worst = ey_worst.max((err - expect).abs() / s[0].max(1.0));
    }
    checks.push(VerifyCheck {
        name: "Eckart-Young truncation",
        pass: ey_worst <= 1e-10,
        value: ey_worst,
    });

    // block partition covers the index set exactly
    let dofs = dof_table(&mesh);
    let tree = build_cluster_tree(&dofs, 25)?;
    let bt = build_block_tree(&tree, 2.0)?;
    let area: usize = bt
        .blocks
        .iter()
        .map(|b| tree.size(b.row) * tree.size(b.col))
        .sum();
    let expect_area = total * total;
    checks.push(VerifyCheck {
        name: "block partition completeness",
        pass: area == expect_area,
        value: area as f64 - expect_area as f64,
    });

    Ok(checks)
}

fn cmd_verify(cfg: &RunConfig) -> Result<i32> {
    let level = cfg.level.min(2);
    let checks = verify_checks(level, cfg.seed)?;
    let mut rows = Vec::new();
    let mut failed = 0;
    for c in &checks {
        println!(
            "CHECK {:<40} {}  ({:.3e})",
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            c.value
        );
        if !c.pass {
            failed += 1;
        }
        rows.push(vec![
            c.name.to_string(),
            if c.pass { "1".into() } else { "0".into() },
            fmt_f(c.value),
        ]);
    }
    write_csv(&cfg.out_dir.join("verify.csv"), "check,pass,value", &rows)?;
    if failed > 0 {
        println!("{failed} check(s) failed");
    }
    Ok(if failed > 0 { 1 } else { 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(args: &[&str]) -> Vec<String> {
        args.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_full_command_line() {
        let cfg = parse_args(&strings(&[
            "precond",
            "--level",
            "4",
            "--kind",
            "sym",
            "--ranks",
            "1,10",
            "--eta",
            "2.0",
            "--leaf",
            "25",
            "--tol",
            "1e-3",
            "--out",
            "results",
            "--with-unpreconditioned",
        ]))
        .unwrap();
        assert_eq!(cfg.command, Command::Precond);
        assert_eq!(cfg.level, 4);
        assert_eq!(cfg.kind, CouplingKind::Symmetric);
        assert_eq!(cfg.ranks, vec![1, 10]);
        assert!(cfg.with_unpreconditioned);
        assert_eq!(cfg.out_dir, PathBuf::from("results"));
    }

    #[test]
    fn rejects_unknown_flags_and_commands() {
        assert!(parse_args(&strings(&["invert", "--frobnicate"])).is_err());
        assert!(parse_args(&strings(&["explode"])).is_err());
        assert!(parse_args(&strings(&[])).is_err());
        assert!(parse_args(&strings(&["invert", "--level"])).is_err());
        assert!(parse_args(&strings(&["invert", "--ranks", "x"])).is_err());
    }

    #[test]
    fn defaults_differ_per_command() {
        let inv = parse_args(&strings(&["invert"])).unwrap();
        assert_eq!(inv.ranks, vec![1, 2, 4, 8, 16]);
        let pre = parse_args(&strings(&["precond"])).unwrap();
        assert_eq!(pre.ranks, vec![1, 10]);
        assert_eq!(pre.eta, 2.0);
        assert_eq!(pre.leaf_size, 25);
        assert_eq!(pre.tol, 1e-3);
        assert_eq!(pre.kind, CouplingKind::JohnsonNedelec);
    }

    #[test]
    fn build_id_is_deterministic_and_config_sensitive() {
        let a = parse_args(&strings(&["invert"])).unwrap();
        let b = parse_args(&strings(&["invert"])).unwrap();
        assert_eq!(build_id(&a), build_id(&b));
        let c = parse_args(&strings(&["invert", "--level", "2"])).unwrap();
        assert_ne!(build_id(&a), build_id(&c));
    }

    #[test]
    fn fault_injected_symmetry_break_is_caught() {
        let mut v = DenseMatrix::identity(4);
        assert!(check_symmetry(&v).0);
        v.set(1, 2, 0.5); // corrupt one side
        assert!(!check_symmetry(&v).0);
    }
}
