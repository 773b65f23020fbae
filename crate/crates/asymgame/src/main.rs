//! Command-line front end: validation, bound reports, solvers, simulations,
//! convergence studies, and CSV artifact emission with a reproducibility
//! manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use asymgame::analysis::{self, Problem};
use asymgame::envelope::{self, BeliefGrid};
use asymgame::game_model::{load_spec, to_json, Belief, SpecDocument};
use asymgame::hj::{self, ActiveTag, Hamiltonian, SchemeConfig};
use asymgame::process_sim::{self, BeliefProcess, Strategy1};
use asymgame::shapley_dp::{self, DpConfig};
use asymgame::{catalog, Error};

#[derive(Parser)]
#[command(name = "asymgame", version, about = "Zero-sum games with a privately observed Markov chain: solvers, bounds, and simulations")]
struct Cli {
    /// Directory for CSV artifacts and the run manifest.
    #[arg(long, default_value = ".", global = true)]
    out_dir: PathBuf,
    /// Worker-thread cap (falls back to ASYMGAME_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for every randomized step.
    #[arg(long, default_value_t = 42, global = true)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProcessKind {
    Flow,
    FullyRevealing,
    TwoStateOptimal,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyKind {
    NonRevealing,
    FullyRevealing,
    Splitting,
}

#[derive(Subcommand)]
enum Command {
    /// Check a spec file and list violations.
    Validate { spec: PathBuf },
    /// One-shot average-game value at a belief.
    Value {
        spec: PathBuf,
        /// Belief as comma-separated probabilities (a single number means
        /// the probability of the first of two states).
        #[arg(long)]
        p: String,
    },
    /// Deterministic belief flow trajectory.
    Flow {
        spec: PathBuf,
        #[arg(long)]
        p: String,
        #[arg(long, default_value_t = 5.0)]
        t_max: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
    },
    /// One-shot value and its concave envelope on a grid.
    Cav {
        spec: PathBuf,
        #[arg(long, default_value_t = 200)]
        grid: usize,
    },
    /// Lower and upper bounds for the limit value on a grid.
    Bounds {
        spec: PathBuf,
        #[arg(long, default_value_t = 200)]
        grid: usize,
    },
    /// Discounted-game value by dynamic programming at stage length 1/n.
    Dp {
        spec: PathBuf,
        #[arg(long, default_value_t = 32)]
        n: u32,
        #[arg(long, default_value_t = 200)]
        grid: usize,
        #[arg(long, default_value_t = 40)]
        x_grid: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Limit value by the obstacle-equation scheme.
    Hj {
        spec: PathBuf,
        #[arg(long, default_value_t = 1000)]
        grid: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Two-sided limit value by the double-obstacle scheme.
    Hj2 {
        spec: PathBuf,
        #[arg(long, default_value_t = 100)]
        grid: usize,
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
    },
    /// Monte Carlo evaluation of a belief process.
    Simulate {
        spec: PathBuf,
        #[arg(long, value_enum, default_value_t = ProcessKind::Flow)]
        process: ProcessKind,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        /// Lower endpoint of the revelation interval (two-state-optimal).
        #[arg(long)]
        p_lo: Option<f64>,
        /// Upper endpoint of the revelation interval (two-state-optimal).
        #[arg(long)]
        p_hi: Option<f64>,
        #[arg(long, default_value_t = 1e-6)]
        tail: f64,
    },
    /// Play the discretized stage game against a Bayesian best-replier.
    Play {
        spec: PathBuf,
        #[arg(long, default_value_t = 32)]
        n: u32,
        #[arg(long, value_enum, default_value_t = StrategyKind::NonRevealing)]
        strategy: StrategyKind,
        #[arg(long, default_value_t = 20_000)]
        paths: usize,
        #[arg(long)]
        p_lo: Option<f64>,
        #[arg(long)]
        p_hi: Option<f64>,
    },
    /// Distance of the dynamic-programming value to the limit field as the
    /// stage frequency grows.
    Convergence {
        spec: PathBuf,
        /// Comma-separated list of stage frequencies.
        #[arg(long, default_value = "8,16,32,64")]
        n: String,
        #[arg(long, default_value_t = 200)]
        grid: usize,
        #[arg(long, default_value_t = 40)]
        x_grid: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Full pipeline on the built-in closed-form instance: dynamic
    /// programming at several n, the obstacle scheme, bounds, and the
    /// closed form, side by side.
    ReproExample {
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        #[arg(long, default_value_t = 1.0)]
        pi: f64,
        #[arg(long, default_value_t = 1000)]
        grid: usize,
        #[arg(long, default_value = "8,16,32")]
        n: String,
    },
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    spec_path: Option<String>,
    spec_sha256: Option<String>,
    parameters: BTreeMap<String, String>,
    seed: u64,
    tool_version: String,
    wall_clock_seconds: f64,
    outputs: Vec<String>,
    diagnostics: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            spec_path: None,
            spec_sha256: None,
            parameters: BTreeMap::new(),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: 0.0,
            outputs: Vec::new(),
            diagnostics: Vec::new(),
        }
    }

    fn param(&mut self, key: &str, value: impl ToString) {
        self.parameters.insert(key.to_string(), value.to_string());
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// RFC-4180-style field quoting; our fields are numbers and plain names,
/// so this only triggers on unusual state labels.
fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_csv(
    path: &Path,
    header: &[&str],
    rows: &[Vec<String>],
    manifest: &mut RunManifest,
) -> asymgame::Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push_str("\r\n");
    for row in rows {
        let cells: Vec<String> = row.iter().map(|c| csv_field(c)).collect();
        out.push_str(&cells.join(","));
        out.push_str("\r\n");
    }
    fs::write(path, out)?;
    manifest.outputs.push(path.display().to_string());
    Ok(())
}

fn load_with_hash(path: &Path, manifest: &mut RunManifest) -> asymgame::Result<SpecDocument> {
    let bytes = fs::read(path)?;
    manifest.spec_path = Some(path.display().to_string());
    manifest.spec_sha256 = Some(sha256_hex(&bytes));
    load_spec(path)
}

fn parse_belief(arg: &str, dim: usize) -> asymgame::Result<Belief> {
    let parts: Vec<f64> = arg
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Domain(format!("belief '{arg}': {e}")))?;
    if parts.len() == 1 && dim == 2 {
        Belief::new(vec![parts[0], 1.0 - parts[0]])
    } else if parts.len() == dim {
        Belief::new(parts)
    } else {
        Err(Error::Dimension(format!(
            "belief '{arg}' has {} entries, the spec has {dim} states",
            parts.len()
        )))
    }
}

fn parse_n_list(arg: &str) -> asymgame::Result<Vec<u32>> {
    arg.split(',')
        .map(|s| {
            s.trim()
                .parse::<u32>()
                .map_err(|e| Error::Domain(format!("stage frequency '{s}': {e}")))
        })
        .collect()
}

fn grid_column(grid: &BeliefGrid, idx: usize) -> Vec<String> {
    let p = grid.point(idx);
    p.as_slice().iter().map(|x| format!("{x}")).collect()
}

fn run(cli: &Cli) -> asymgame::Result<RunManifest> {
    if let Some(k) = cli.threads.or_else(|| {
        std::env::var("ASYMGAME_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    }) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Error::Domain(format!("thread pool: {e}")))?;
    }
    fs::create_dir_all(&cli.out_dir)?;

    match &cli.command {
        Command::Validate { spec } => {
            let mut manifest = RunManifest::new("validate", cli.seed);
            let doc = load_with_hash(spec, &mut manifest)?;
            let violations = doc.validate();
            if violations.is_empty() {
                println!("ok: no violations");
                Ok(manifest)
            } else {
                for v in &violations {
                    println!("violation: {v}");
                    manifest.diagnostics.push(v.to_string());
                }
                Err(Error::Validation(violations))
            }
        }
        Command::Value { spec, p } => {
            let mut manifest = RunManifest::new("value", cli.seed);
            let doc = load_with_hash(spec, &mut manifest)?;
            let prob = Problem::from_document(&doc)?;
            let belief = parse_belief(p, prob.dim())?;
            manifest.param("p", p);
            let u = prob.u(&belief);
            println!("u(p) = {u}");
            write_csv(
                &cli.out_dir.join("value.csv"),
                &["p", "u"],
                &[vec![p.clone(), format!("{u}")]],
                &mut manifest,
            )?;
            Ok(manifest)
        }
        Command::Flow {
            spec,
            p,
            t_max,
            steps,
        } => {
            let mut manifest = RunManifest::new("flow", cli.seed);
            let doc = load_with_hash(spec, &mut manifest)?;
            let prob = Problem::from_document(&doc)?;
            let belief = parse_belief(p, prob.dim())?;
            manifest.param("p", p);
            manifest.param("t_max", t_max);
            manifest.param("steps", steps);
            let mut rows = Vec::new();
            for k in 0..=*steps {
                let t = t_max * k as f64 / *steps as f64;
                let q = prob.flow(&belief, t)?;
                let mut row = vec![format!("{t}")];
                row.extend(q.as_slice().iter().map(|x| format!("{x}")));
                row.push(format!("{}", prob.u(&q)));
                rows.push(row);
            }
            let mut header = vec!["t".to_string()];
            header.extend((0..prob.dim()).map(|s| format!("p{s}")));
            header.push("u".to_string());
            let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
            write_csv(&cli.out_dir.join("flow.csv"), &header_refs, &rows, &mut manifest)?;
            println!("wrote flow.csv ({} rows)", rows.len());
            Ok(manifest)
        }
        Command::Cav { spec, grid } => {
            let mut manifest = RunManifest::new("cav", cli.seed);
            let doc = load_with_hash(spec, &mut manifest)?;
            let prob = Problem::from_document(&doc)?;
            manifest.param("grid", grid);
            let u_field = prob.u_field(Some(*grid))?;
            let cav_field = envelope::cav(&u_field)?;
            let g = u_field.grid();
            let mut rows = Vec::new();
            for idx in 0..g.n_points() {
                let mut row = grid_column(g, idx);
                row.push(format!("{}", u_field.values()[idx]));
                row.push(format!("{}", cav_field.values()[idx]));
                rows.push(row);
            }
            let mut header: Vec<String> = (0..prob.dim()).map(|s| format!("p{s}")).collect();
            header.push("u".into());
            header.push("cav_u".into());
            let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
            write_csv(&cli.out_dir.join("cav.csv"), &header_refs, &rows, &mut manifest)?;
            println!("wrote cav.csv ({} rows)", rows.len());
            Ok(manifest)
        }
        Command::Bounds { spec, grid } => {
            let mut manifest = RunManifest::new("bounds", cli.seed);
            let doc = load_with_hash(spec, &mut manifest)?;
            let prob = Problem::from_document(&doc)?;
            manifest.param("grid", grid);
            let g = BeliefGrid::new(prob.dim(), *grid)?;
            let report = analysis::sandwich_report(&prob, &g)?;
            let mut rows = Vec::new();
            for (idx, row) in report.iter().enumerate() {
                let mut cells = grid_column(&g, idx);
                cells.push(format!("{}", row.lower_nonrevealing));
                cells.push(format!("{}", row.lower_fully_revealing));
                cells.push(format!("{}", row.upper));
                rows.push(cells);
            }
            let mut header: Vec<String> = (0..prob.dim()).map(|s| format!("p{s}")).collect();
            header.extend(
                ["lower_nonrevealing", "lower_fully_revealing", "upper"]
                    .iter()
                    .map(|s| s.to_string()),
            );
            let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
            write_csv(&cli.out_dir.join("bounds.csv"), &header_refs, &rows, &mut manifest)?;
            println!("wrote bounds.csv ({} rows)", rows.len());
            Ok(manifest)
        }
        Command::Dp {
            spec,
            n,
            grid,
            x_grid,
            tol,
        } => {
            let mut manifest = RunManifest::new("dp", cli.seed);
            let doc = load_with_hash(spec, &mut manifest)?;
            let SpecDocument::OneSided(game) = &doc else {
                return Err(Error::Domain(
                    "dynamic programming needs a one-sided game spec with payoffs".into(),
                ));
            };
            manifest.param("n", n);
            manifest.param("grid", grid);
            manifest.param("x_grid", x_grid);
            manifest.param("tol", tol);
            let cfg = DpConfig {
                n: *n,
                grid_m: *grid,
                x_grid_k: *x_grid,
                tol: *tol,
                ..DpConfig::default()
            };
            let sol = shapley_dp::solve_vn(game, &cfg)?;
            manifest
                .diagnostics
                .push(format!("iterations={} residual={}", sol.iterations, sol.residual));
            let g = sol.field.grid();
            let mut rows = Vec::new();
            for idx in 0..g.n_points() {
                let mut row = grid_column(g, idx);
                row.push(format!("{}", sol.field.values()[idx]));
                rows.push(row);
            }
            let mut header: Vec<String> = (0..game.n_states()).map(|s| format!("p{s}")).collect();
            header.push("v_n".into());
            let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
            write_csv(&cli.out_dir.join("dp.csv"), &header_refs, &rows, &mut manifest)?;
            println!(
                "wrote dp.csv ({} rows, {} iterations, residual {})",
                rows.len(),
                sol.iterations,
                sol.residual
            );
            Ok(manifest)
        }
        Command::Hj { spec, grid, tol } => {
            let mut manifest = RunManifest::new("hj", cli.seed);
            let doc = load_with_hash(spec, &mut manifest)?;
            manifest.param("grid", grid);
            manifest.param("tol", tol);
            let h = match &doc {
                SpecDocument::OneSided(game) if !game.rate.is_exogenous() => {
                    Hamiltonian::Endogenous(game.clone())
                }
                SpecDocument::TwoSided(_) => {
                    return Err(Error::Domain(
                        "use hj2 for two-sided instances".into(),
                    ))
                }
                _ => Hamiltonian::Exogenous(Problem::from_document(&doc)?),
            };
            let cfg = SchemeConfig {
                tol: *tol,
                ..SchemeConfig::default()
            };
            let of = hj::solve_obstacle(&h, *grid, &cfg)?;
            manifest
                .diagnostics
                .push(format!("sweeps={} final_change={}", of.sweeps, of.final_change));
            let g = of.field.grid();
            let mut rows = Vec::new();
            for idx in 0..g.n_points() {
                let mut row = grid_column(g, idx);
                row.push(format!("{}", of.field.values()[idx]));
                row.push(
                    match of.tags[idx] {
                        ActiveTag::PdeActive => "pde",
                        ActiveTag::ObstacleActive => "obstacle",
                    }
                    .to_string(),
                );
                rows.push(row);
            }
            let dim = g.dim();
            let mut header: Vec<String> = (0..dim).map(|s| format!("p{s}")).collect();
            header.push("v".into());
            header.push("active".into());
            let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
            write_csv(&cli.out_dir.join("hj.csv"), &header_refs, &rows, &mut manifest)?;
            println!("wrote hj.csv ({} rows, {} sweeps)", rows.len(), of.sweeps);
            Ok(manifest)
        }
        Command::Hj2 { spec, grid, tol } => {
            let mut manifest = RunManifest::new("hj2", cli.seed);
            let doc = load_with_hash(spec, &mut manifest)?;
            let SpecDocument::TwoSided(two) = &doc else {
                return Err(Error::Domain("hj2 needs a two-sided spec".into()));
            };
            manifest.param("grid", grid);
            manifest.param("tol", tol);
            let cfg = SchemeConfig {
                tol: *tol,
                ..SchemeConfig::default()
            };
            let field = hj::solve_double_obstacle(two, *grid, &cfg)?;
            manifest
                .diagnostics
                .push(format!("sweeps={} final_change={}", field.sweeps, field.final_change));
            let mut rows = Vec::new();
            for i in 0..=*grid {
                for j in 0..=*grid {
                    rows.push(vec![
                        format!("{}", i as f64 / *grid as f64),
                        format!("{}", j as f64 / *grid as f64),
                        format!("{}", field.value_at(i, j)),
                    ]);
                }
            }
            write_csv(
                &cli.out_dir.join("hj2.csv"),
                &["p1", "p2", "v"],
                &rows,
                &mut manifest,
            )?;
            println!("wrote hj2.csv ({} rows, {} sweeps)", rows.len(), field.sweeps);
            Ok(manifest)
        }
        Command::Simulate {
            spec,
            process,
            paths,
            p_lo,
            p_hi,
            tail,
        } => {
            let mut manifest = RunManifest::new("simulate", cli.seed);
            let doc = load_with_hash(spec, &mut manifest)?;
            let prob = Problem::from_document(&doc)?;
            manifest.param("paths", paths);
            manifest.param("tail", tail);
            let generator: Vec<Vec<f64>> = {
                let g = prob.semigroup().generator();
                (0..prob.dim())
                    .map(|s| (0..prob.dim()).map(|s2| g[(s, s2)]).collect())
                    .collect()
            };
            let initial = match &doc {
                SpecDocument::OneSided(s) => s.initial_belief.clone(),
                SpecDocument::AbstractU(s) => s.initial_belief.clone(),
                SpecDocument::TwoSided(_) => {
                    return Err(Error::Domain(
                        "simulation needs a one-sided instance".into(),
                    ))
                }
            };
            let proc = match process {
                ProcessKind::Flow => {
                    manifest.param("process", "flow");
                    BeliefProcess::deterministic_flow(&generator, initial.clone())?
                }
                ProcessKind::FullyRevealing => {
                    manifest.param("process", "fully-revealing");
                    BeliefProcess::fully_revealing(&generator, initial.clone())?
                }
                ProcessKind::TwoStateOptimal => {
                    if prob.dim() != 2 {
                        return Err(Error::UnsupportedDimension(
                            "the two-point process needs two states".into(),
                        ));
                    }
                    let (lo, hi) = (p_lo.unwrap_or(0.0), p_hi.unwrap_or(1.0));
                    manifest.param("process", "two-state-optimal");
                    manifest.param("p_lo", lo);
                    manifest.param("p_hi", hi);
                    let rho12 = generator[0][1];
                    let rho21 = generator[1][0];
                    process_sim::two_state_optimal_process(rho12, rho21, lo, hi, initial[0])?
                }
            };
            let (est, hw) = process_sim::evaluate_p1(&proc, &prob, *paths, *tail, cli.seed)?;
            let lower = analysis::lower_bound_nonrevealing(&prob, &initial)?;
            let upper = analysis::upper_bound(&prob, &initial)?;
            println!("estimate = {est} +/- {hw} (bounds: [{lower}, {upper}])");
            write_csv(
                &cli.out_dir.join("simulate.csv"),
                &["estimate", "half_width", "lower_nonrevealing", "upper"],
                &[vec![
                    format!("{est}"),
                    format!("{hw}"),
                    format!("{lower}"),
                    format!("{upper}"),
                ]],
                &mut manifest,
            )?;
            Ok(manifest)
        }
        Command::Play {
            spec,
            n,
            strategy,
            paths,
            p_lo,
            p_hi,
        } => {
            let mut manifest = RunManifest::new("play", cli.seed);
            let doc = load_with_hash(spec, &mut manifest)?;
            let SpecDocument::OneSided(game) = &doc else {
                return Err(Error::Domain(
                    "stage-game play needs a one-sided game spec with payoffs".into(),
                ));
            };
            manifest.param("n", n);
            manifest.param("paths", paths);
            let strat = match strategy {
                StrategyKind::NonRevealing => {
                    manifest.param("strategy", "non-revealing");
                    Strategy1::NonRevealing
                }
                StrategyKind::FullyRevealing => {
                    manifest.param("strategy", "fully-revealing");
                    Strategy1::FullyRevealing
                }
                StrategyKind::Splitting => {
                    let (lo, hi) = (p_lo.unwrap_or(0.0), p_hi.unwrap_or(1.0));
                    manifest.param("strategy", "splitting");
                    manifest.param("p_lo", lo);
                    manifest.param("p_hi", hi);
                    Strategy1::SplittingOptimal { p_lo: lo, p_hi: hi }
                }
            };
            let report = process_sim::play_game(game, *n, &strat, *paths, cli.seed)?;
            println!(
                "payoff = {} +/- {} ({} stages, truncation bound {}, {} zero-probability updates)",
                report.estimate,
                report.half_width,
                report.stages,
                report.truncation_bound,
                report.zero_probability_incidents
            );
            write_csv(
                &cli.out_dir.join("play.csv"),
                &[
                    "estimate",
                    "half_width",
                    "stages",
                    "truncation_bound",
                    "zero_probability_incidents",
                ],
                &[vec![
                    format!("{}", report.estimate),
                    format!("{}", report.half_width),
                    format!("{}", report.stages),
                    format!("{}", report.truncation_bound),
                    format!("{}", report.zero_probability_incidents),
                ]],
                &mut manifest,
            )?;
            Ok(manifest)
        }
        Command::Convergence {
            spec,
            n,
            grid,
            x_grid,
            tol,
        } => {
            let mut manifest = RunManifest::new("convergence", cli.seed);
            let doc = load_with_hash(spec, &mut manifest)?;
            let SpecDocument::OneSided(game) = &doc else {
                return Err(Error::Domain(
                    "the convergence study needs a one-sided game spec".into(),
                ));
            };
            let n_list = parse_n_list(n)?;
            manifest.param("n", n);
            manifest.param("grid", grid);
            manifest.param("x_grid", x_grid);
            manifest.param("tol", tol);
            // reference: the limit field from the obstacle scheme
            let h = if game.rate.is_exogenous() {
                Hamiltonian::Exogenous(Problem::from_game(game)?)
            } else {
                Hamiltonian::Endogenous(game.clone())
            };
            let reference = hj::solve_obstacle(&h, *grid, &SchemeConfig::default())?;
            let cfg = DpConfig {
                grid_m: *grid,
                x_grid_k: *x_grid,
                tol: *tol,
                ..DpConfig::default()
            };
            let rows_data = shapley_dp::convergence_study(game, &n_list, &cfg, &reference.field)?;
            let rows: Vec<Vec<String>> = rows_data
                .iter()
                .map(|row| {
                    vec![
                        format!("{}", row.n),
                        format!("{}", row.distance_to_reference),
                    ]
                })
                .collect();
            write_csv(
                &cli.out_dir.join("convergence.csv"),
                &["n", "sup_distance_to_limit"],
                &rows,
                &mut manifest,
            )?;
            for row in &rows_data {
                println!("n={}: sup distance {}", row.n, row.distance_to_reference);
            }
            Ok(manifest)
        }
        Command::ReproExample { r, pi, grid, n } => {
            let mut manifest = RunManifest::new("repro-example", cli.seed);
            let game = catalog::renault_spec(*r, *pi);
            let doc = SpecDocument::OneSided(game.clone());
            manifest.spec_sha256 = Some(sha256_hex(to_json(&doc)?.as_bytes()));
            let n_list = parse_n_list(n)?;
            manifest.param("r", r);
            manifest.param("pi", pi);
            manifest.param("grid", grid);
            manifest.param("n", n);
            let prob = Problem::from_game(&game)?;
            let h = Hamiltonian::Exogenous(Problem::from_game(&game)?);
            let of = hj::solve_obstacle(&h, *grid, &SchemeConfig::default())?;
            let mut dp_fields = Vec::new();
            for &nn in &n_list {
                let cfg = DpConfig {
                    n: nn,
                    ..DpConfig::default()
                };
                dp_fields.push(shapley_dp::solve_vn(&game, &cfg)?);
            }
            let m = *grid;
            let mut rows = Vec::new();
            let mut sup_hj = 0.0_f64;
            for i in 0..=m {
                let x = i as f64 / m as f64;
                let p = Belief::new(vec![x, 1.0 - x])?;
                let closed = catalog::renault_closed_form(x, *r, *pi)?;
                let vh = of.field.values()[i];
                sup_hj = sup_hj.max((vh - closed).abs());
                let mut row = vec![
                    format!("{x}"),
                    format!("{closed}"),
                    format!("{vh}"),
                    format!("{}", analysis::lower_bound_nonrevealing(&prob, &p)?),
                    format!("{}", analysis::upper_bound(&prob, &p)?),
                ];
                for sol in &dp_fields {
                    row.push(format!("{}", sol.field.eval(&p)));
                }
                rows.push(row);
            }
            let mut header = vec![
                "p".to_string(),
                "closed_form".to_string(),
                "hj".to_string(),
                "lower_nonrevealing".to_string(),
                "upper".to_string(),
            ];
            for nn in &n_list {
                header.push(format!("dp_n{nn}"));
            }
            let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
            write_csv(
                &cli.out_dir.join("repro_example.csv"),
                &header_refs,
                &rows,
                &mut manifest,
            )?;
            manifest
                .diagnostics
                .push(format!("sup_norm_hj_vs_closed_form={sup_hj}"));
            println!("sup-norm |hj - closed form| = {sup_hj}");
            println!("wrote repro_example.csv ({} rows)", rows.len());
            Ok(manifest)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let result = run(&cli);
    let code = match &result {
        Ok(_) => ExitCode::SUCCESS,
        Err(Error::Validation(_)) => ExitCode::from(1),
        Err(Error::NonConvergence(_)) => ExitCode::from(2),
        Err(_) => ExitCode::from(1),
    };
    let mut manifest = match result {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            let mut m = RunManifest::new("failed", cli.seed);
            m.diagnostics.push(e.to_string());
            m
        }
    };
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    let path = cli.out_dir.join("manifest.json");
    if let Ok(json) = serde_json::to_string_pretty(&manifest) {
        let _ = fs::write(&path, json);
    }
    code
}
