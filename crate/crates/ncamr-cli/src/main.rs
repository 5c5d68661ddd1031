//! Command-line front end for the ncamr library: AMR benchmarks with
//! convergence CSVs, space-filling-curve partition statistics, VTK mesh
//! export, prolongation-matrix dumps, and a serial-vs-distributed
//! equivalence check.
//!
//! Exit codes: 0 on success, 1 on runtime errors (and failed equivalence
//! checks), 2 on usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ncamr::adaptivity::{amr_loop, solve_benchmark, AmrMode, BenchmarkProblem, ConvergenceLog};
use ncamr::conforming::conforming_operator;
use ncamr::distsim::{
    build_rank_meshes, construct_parallel_p, distribute, load_balance, max_diff_vs_serial,
    refine_distributed, Transport,
};
use ncamr::meshgen::{quad_grid, quad_grid_rect};
use ncamr::meshio::{load_mesh_from, save_mesh_to};
use ncamr::partition::{cut_size, equipartition, sfc_enumerate, SfcCurve};
use ncamr::vtk::{write_vtk, CellScalars};
use ncamr::FESpace;

#[derive(Parser)]
#[command(
    name = "ncamr",
    version,
    about = "Non-conforming adaptive mesh refinement toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the wave-front AMR benchmark and write its convergence CSV.
    Benchmark(BenchmarkArgs),
    /// Partition a mesh along a space-filling curve and report statistics.
    Partition(PartitionArgs),
    /// Convert a mesh file to a legacy VTK unstructured grid.
    Export(ExportArgs),
    /// Dump the conforming prolongation matrix P of a mesh.
    Pmatrix(PmatrixArgs),
    /// Replay a seeded distributed refine + balance script and verify that
    /// rank states and the parallel operator match the serial run.
    Distcheck(DistcheckArgs),
}

fn parse_mode(s: &str) -> Result<AmrMode, String> {
    AmrMode::parse(s).ok_or_else(|| format!("unknown mode '{s}' (uniform, iso, aniso)"))
}

fn parse_curve(s: &str) -> Result<SfcCurve, String> {
    SfcCurve::parse(s).ok_or_else(|| format!("unknown curve '{s}' (hilbert, z)"))
}

/// Grid spec: `N` for N×N or `NXxNY` (e.g. `10x1`).
fn parse_grid(s: &str) -> Result<(u32, u32), String> {
    let parse1 = |t: &str| {
        t.parse::<u32>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| format!("bad grid size '{t}' (need an integer >= 1)"))
    };
    match s.split_once('x') {
        Some((a, b)) => Ok((parse1(a)?, parse1(b)?)),
        None => parse1(s).map(|n| (n, n)),
    }
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Spatial dimension of the benchmark domain.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(2..=3))]
    dim: u32,
    /// Polynomial order of the nodal elements.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=10))]
    p: u32,
    /// Refinement strategy per iteration: uniform, iso or aniso.
    #[arg(long, default_value = "iso", value_parser = parse_mode)]
    mode: AmrMode,
    /// Stop once the conforming DOF count reaches this.
    #[arg(long, default_value_t = 3000)]
    max_dofs: usize,
    /// Include per-iteration wall times in the CSV (makes the output
    /// non-reproducible byte-for-byte).
    #[arg(long)]
    timing: bool,
    /// Write the convergence CSV here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the final mesh (replay format) here.
    #[arg(long)]
    mesh_out: Option<PathBuf>,
    /// Write the final solution and element errors as VTK cell data here.
    #[arg(long)]
    vtk_out: Option<PathBuf>,
}

#[derive(Args)]
struct PartitionArgs {
    /// Mesh replay file to partition.
    #[arg(long, conflicts_with = "grid")]
    mesh: Option<PathBuf>,
    /// Generate a quad grid instead of loading a mesh: `N` or `NXxNY`.
    #[arg(long, default_value = "8", value_parser = parse_grid)]
    grid: (u32, u32),
    /// Number of ranks.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
    ranks: u32,
    /// Space-filling curve: hilbert or z.
    #[arg(long, default_value = "hilbert", value_parser = parse_curve)]
    curve: SfcCurve,
    /// Write a rank-colored VTK export of the partition here.
    #[arg(long)]
    vtk: Option<PathBuf>,
    /// Write the statistics here instead of stdout.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Mesh replay file to convert.
    #[arg(long)]
    mesh: PathBuf,
    /// Output VTK path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PmatrixArgs {
    /// Mesh replay file.
    #[arg(long)]
    mesh: PathBuf,
    /// Polynomial order of the nodal space.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=10))]
    p: u32,
    /// Output path (default: stdout).  Format: `N̂ N nnz` header, then
    /// one `row col value` line per entry.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DistcheckArgs {
    /// Edge size of the starting quad grid.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
    grid: u32,
    /// Number of simulated ranks.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    ranks: u32,
    /// Polynomial order for the operator comparison.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..=10))]
    p: u32,
    /// Space-filling curve used for distribution.
    #[arg(long, default_value = "hilbert", value_parser = parse_curve)]
    curve: SfcCurve,
    /// Scripted refinement rounds before the load balance.
    #[arg(long, default_value_t = 2)]
    rounds: u32,
    /// Seed of the scripted refinement.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the message-trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn write_out(path: Option<&Path>, text: &str) -> ncamr::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(Into::into),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_benchmark(a: &BenchmarkArgs) -> ncamr::Result<ExitCode> {
    let problem = if a.dim == 2 {
        BenchmarkProblem::wavefront_2d()
    } else {
        BenchmarkProblem::wavefront_3d()
    };
    let (mesh, log) = amr_loop(&problem, a.p as usize, a.max_dofs, a.mode)?;
    write_out(a.csv.as_deref(), &csv_text(&log, a.timing))?;
    if let Some(path) = &a.mesh_out {
        save_mesh_to(&mesh, path)?;
    }
    if let Some(path) = &a.vtk_out {
        let out = solve_benchmark(&problem, &mesh, a.p as usize)?;
        let u_cell: Vec<f64> = mesh
            .dfs_leaves()
            .iter()
            .map(|&l| {
                let cs = mesh.element_corners(l);
                let sum: f64 = cs
                    .iter()
                    .filter_map(|&v| out.space.vertex_dof(v))
                    .map(|d| out.u_hat[d])
                    .sum();
                sum / cs.len() as f64
            })
            .collect();
        let arrays = [
            CellScalars { name: "u", values: u_cell },
            CellScalars { name: "error", values: out.errors.clone() },
        ];
        std::fs::write(path, write_vtk(&mesh, &arrays)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

/// Convergence CSV; wall times only on request, so default output is
/// byte-reproducible.
fn csv_text(log: &ConvergenceLog, timing: bool) -> String {
    if timing {
        return log.to_csv();
    }
    use std::fmt::Write as _;
    let mut out = String::from("iter,dofs,error,elements,irregularity\n");
    for r in &log.records {
        let _ = writeln!(
            out,
            "{},{},{:.12e},{},{}",
            r.iter, r.dofs, r.error, r.elements, r.irregularity
        );
    }
    out
}

fn cmd_partition(a: &PartitionArgs) -> ncamr::Result<ExitCode> {
    let mesh = match &a.mesh {
        Some(p) => load_mesh_from(p)?,
        None => quad_grid_rect(a.grid.0, a.grid.1),
    };
    let seq = sfc_enumerate(&mesh, a.curve)?;
    let assignment = equipartition(&seq, a.ranks as usize);
    let cut = cut_size(&mesh, &assignment);

    use std::fmt::Write as _;
    let mut stats = String::new();
    let _ = writeln!(stats, "curve,{}", a.curve.name());
    let _ = writeln!(stats, "ranks,{}", a.ranks);
    let _ = writeln!(stats, "elements,{}", seq.len());
    let _ = writeln!(stats, "cut_edges,{cut}");
    stats.push_str("rank,size\n");
    for (k, s) in assignment.sizes().iter().enumerate() {
        let _ = writeln!(stats, "{k},{s}");
    }
    write_out(a.stats.as_deref(), &stats)?;

    if let Some(path) = &a.vtk {
        let ranks: Vec<f64> = mesh
            .dfs_leaves()
            .iter()
            .map(|&l| assignment.rank_of(l).unwrap() as f64)
            .collect();
        let arrays = [CellScalars { name: "rank", values: ranks }];
        std::fs::write(path, write_vtk(&mesh, &arrays)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_export(a: &ExportArgs) -> ncamr::Result<ExitCode> {
    let mesh = load_mesh_from(&a.mesh)?;
    std::fs::write(&a.out, write_vtk(&mesh, &[])?)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_pmatrix(a: &PmatrixArgs) -> ncamr::Result<ExitCode> {
    let mesh = load_mesh_from(&a.mesh)?;
    let fes = FESpace::new(&mesh, a.p as usize);
    let op = conforming_operator(&mesh, &fes)?;
    write_out(a.out.as_deref(), &op.export())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_distcheck(a: &DistcheckArgs) -> ncamr::Result<ExitCode> {
    let mut serial = quad_grid(a.grid);
    let mut ranks = distribute(&mut serial, a.ranks, a.curve)?;
    let mut net = Transport::new(a.ranks);

    // Scripted rounds: every rank marks a random subset of its owned
    // leaves; the same refinements are replayed serially by element
    // address.
    for round in 0..a.rounds {
        let mut plans: Vec<Vec<(u32, u8)>> = Vec::new();
        let mut replay: Vec<(u32, Vec<u8>, u8)> = Vec::new();
        for rm in &ranks {
            let mut rng = ChaCha8Rng::seed_from_u64(
                a.seed ^ ((round as u64 + 1) << 32) ^ (rm.rank as u64 + 1),
            );
            let mut plan = Vec::new();
            for l in rm.owned_leaves() {
                if rng.gen::<f64>() < 0.3 {
                    let rt = rm.mesh.element(l).unwrap().geom.iso_ref_type();
                    let (root, path) = rm.mesh.element_address(l);
                    plan.push((l, rt));
                    replay.push((root, path, rt));
                }
            }
            plans.push(plan);
        }
        refine_distributed(&mut ranks, &mut net, &plans)?;
        for (root, path, rt) in replay {
            let id = serial.resolve_address(root, &path).expect("replay address");
            serial.refine(id, rt)?;
        }
        serial.ensure_consistency()?;
    }

    let report = load_balance(&mut ranks, &mut net)?;

    // Gold reference: a fresh distribution of the serially refined mesh
    // (the balancer's target is exactly the fresh equipartition).
    let gold = distribute(&mut serial, a.ranks, a.curve)?;
    let mut state_ok = true;
    for (got, want) in ranks.iter().zip(&gold) {
        if got.canonical_text() != want.canonical_text() {
            state_ok = false;
            println!("rank {}: state differs from fresh distribution", got.rank);
        }
    }
    let _ = build_rank_meshes(&serial, a.ranks, a.curve)?;

    let sizes: Vec<usize> = ranks.iter().map(|r| r.owned_leaves().len()).collect();
    let spread = sizes.iter().max().unwrap() - sizes.iter().min().unwrap();

    let fes = FESpace::new(&serial, a.p as usize);
    let op = conforming_operator(&serial, &fes)?;
    let blocks = construct_parallel_p(&ranks, a.p as usize, &mut net)?;
    let diff = max_diff_vs_serial(&serial, &fes, &op, &blocks)?;

    println!(
        "distcheck: grid={} ranks={} p={} curve={} rounds={} seed={}",
        a.grid,
        a.ranks,
        a.p,
        a.curve.name(),
        a.rounds,
        a.seed
    );
    println!("elements: {} in {:?} parts (spread {})", serial.dfs_leaves().len(), sizes, spread);
    println!("migrations: {}", report.len());
    println!("state: {}", if state_ok { "MATCH" } else { "MISMATCH" });
    println!("operator: max |dP| = {diff:.3e} (tolerance 1e-12)");
    println!("messages: sent={} forwarded={}", net.sent, net.total_forwarded());
    if let Some(path) = &a.trace {
        std::fs::write(path, net.trace_csv())?;
    }

    if state_ok && diff <= 1e-12 && spread <= 1 {
        println!("PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL");
        Ok(ExitCode::FAILURE)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match &cli.command {
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Partition(a) => cmd_partition(a),
        Command::Export(a) => cmd_export(a),
        Command::Pmatrix(a) => cmd_pmatrix(a),
        Command::Distcheck(a) => cmd_distcheck(a),
    };
    match run {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
