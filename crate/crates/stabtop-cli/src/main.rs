//! Command-line driver: optimize / analyze / verify-sens / post-buckle.
//!
//! Exit codes: 0 success, 2 configuration error, 3 analysis failure,
//! 4 verification or acceptance failure.

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use stabtop_cli::config::RunConfig;
use stabtop_cli::io::{self, DensityGrid};
use stabtop::continuation::{
    arc_length_trace, bcc_traverse, branch_switch_simple, extract_solid_submodel,
    trace_post_buckling, EquilibriumPath, PathOptions,
};
use stabtop::fem::{solve_equilibrium, InterpState, SolverOptions};
use stabtop::model::DesignField;
use stabtop::optimizer::run_optimization_with;
use stabtop::sensitivity::verify_sensitivities_cdm;
use stabtop::stability::{analyze_stability, CriticalKind, PseudoMassParams};

#[derive(Parser)]
#[command(name = "stabtop", about = "Finite-strain topology optimization with stability constraints", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimization loop defined by a config file.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Equilibrium + stability eigenanalysis of a given density field.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        density: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Central-difference verification of the adjoint sensitivities.
    VerifySens {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Override the central-difference step.
        #[arg(long)]
        h: Option<f64>,
        /// Test hook: corrupt one analytic kernel ("f0" or "lambdaN").
        #[arg(long, hide = true)]
        corrupt_kernel: Option<String>,
    },
    /// Threshold a density field to a solid mesh and run the post-buckling
    /// path analysis.
    PostBuckle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        density: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

/// Failure category → process exit code.
enum AppError {
    Config(anyhow::Error),
    Analysis(anyhow::Error),
    Verification(anyhow::Error),
}

impl AppError {
    fn code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Analysis(_) => 3,
            AppError::Verification(_) => 4,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            AppError::Config(e) | AppError::Analysis(e) | AppError::Verification(e) => e,
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Optimize { config, out_dir, seed, workers } => {
            cmd_optimize(&config, out_dir.as_deref(), seed, workers)
        }
        Command::Analyze { config, density, out_dir, workers } => {
            cmd_analyze(&config, &density, out_dir.as_deref(), workers)
        }
        Command::VerifySens { config, out_dir, seed, workers, h, corrupt_kernel } => {
            cmd_verify_sens(&config, out_dir.as_deref(), seed, workers, h, corrupt_kernel)
        }
        Command::PostBuckle { config, density, out_dir, seed, threshold, workers } => {
            cmd_post_buckle(&config, &density, out_dir.as_deref(), seed, threshold, workers)
        }
    };
    if let Err(err) = result {
        eprintln!("error: {:#}", err.error());
        std::process::exit(err.code());
    }
}

fn init_workers(cfg_workers: Option<usize>, flag_workers: Option<usize>) {
    let workers = flag_workers.or(cfg_workers);
    #[cfg(feature = "parallel")]
    if let Some(w) = workers {
        if w > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = workers;
}

fn load_config(path: &Path) -> Result<RunConfig, AppError> {
    RunConfig::load(path).map_err(AppError::Config)
}

fn out_dir_for(cfg: &RunConfig, flag: Option<&Path>) -> Result<PathBuf, AppError> {
    let dir = flag
        .map(|p| p.to_path_buf())
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
        .map_err(AppError::Config)?;
    Ok(dir)
}

fn cmd_optimize(
    config_path: &Path,
    out_dir: Option<&Path>,
    _seed: Option<u64>,
    workers: Option<usize>,
) -> Result<(), AppError> {
    let cfg = load_config(config_path)?;
    init_workers(cfg.workers, workers);
    let out = out_dir_for(&cfg, out_dir)?;
    let model = cfg.build_model().map_err(AppError::Config)?;
    let opt = cfg.optimization_config().map_err(AppError::Config)?;
    let symmetry = cfg
        .optimizer
        .as_ref()
        .map(|o| o.symmetry)
        .unwrap_or_default();
    let design = DesignField::uniform(&model, opt.v_f, symmetry.into(), cfg.filter.r_min)
        .map_err(|e| AppError::Config(anyhow!(e)))?;

    let trace_path = out.join("trace.tsv");
    let mut trace_file = std::io::BufWriter::new(
        std::fs::File::create(&trace_path)
            .with_context(|| format!("creating {}", trace_path.display()))
            .map_err(AppError::Config)?,
    );
    use std::io::Write;
    writeln!(trace_file, "{}", io::TRACE_HEADER).ok();
    let snapshot_every = cfg.output.snapshot_every;
    let out_snap = out.clone();
    let model_snap = model.clone();
    let (field, trace) = run_optimization_with(&model, &design, &opt, |rec, f| {
        writeln!(trace_file, "{}", io::trace_line(rec)).ok();
        if snapshot_every > 0 && rec.iteration % snapshot_every == 0 {
            let grid = DensityGrid::from_model(&model_snap, &f.densities());
            let _ = grid.write_csv(&out_snap.join(format!("density_{:04}.csv", rec.iteration)));
        }
    })
    .map_err(|e| AppError::Analysis(anyhow!(e)))?;
    drop(trace_file);

    let rho = field.densities();
    let grid = DensityGrid::from_model(&model, &rho);
    grid.write_csv(&out.join("density.csv")).map_err(AppError::Config)?;
    grid.write_pgm(&out.join("density.pgm")).map_err(AppError::Config)?;

    // machine-readable summary
    let mut summary = String::new();
    if let Some(last) = trace.iterations.last() {
        let _ = writeln!(summary, "iterations = {}", trace.iterations.len());
        let _ = writeln!(summary, "f0 = {:e}", last.f0);
        let _ = writeln!(summary, "f1 = {:e}", last.f1);
        let lambdas: Vec<String> = last.eigenvalues.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(summary, "eigenvalues = [{}]", lambdas.join(", "));
        if let Some(lh) = opt.lambda_hat {
            let ok = last.eigenvalues.first().map(|&l| l >= lh * (1.0 - 1e-3));
            let _ = writeln!(summary, "lambda_hat = {lh:e}");
            let _ = writeln!(summary, "stability_satisfied = {}", ok.unwrap_or(false));
        }
        let _ = writeln!(
            summary,
            "volume_satisfied = {}",
            last.f1 <= 1e-3
        );
        let _ = writeln!(summary, "inner_ever_active = {}", trace.inner_ever_active());
    }
    if let Some(reason) = &trace.aborted {
        let _ = writeln!(summary, "aborted = {reason:?}");
    }
    std::fs::write(out.join("summary.toml"), summary)
        .context("writing summary")
        .map_err(AppError::Config)?;

    if let Some(reason) = trace.aborted {
        return Err(AppError::Analysis(anyhow!("optimization aborted: {reason}")));
    }
    println!("optimize: done ({} iterations), results in {}", trace.iterations.len(), out.display());
    Ok(())
}

fn cmd_analyze(
    config_path: &Path,
    density_path: &Path,
    out_dir: Option<&Path>,
    workers: Option<usize>,
) -> Result<(), AppError> {
    let cfg = load_config(config_path)?;
    init_workers(cfg.workers, workers);
    let out = out_dir_for(&cfg, out_dir)?;
    let model = cfg.build_model().map_err(AppError::Config)?;
    let grid = DensityGrid::read_csv(density_path).map_err(AppError::Config)?;
    if grid.nx != model.nx || grid.ny != model.ny {
        return Err(AppError::Config(anyhow!(
            "density grid is {}x{}, config mesh is {}x{}",
            grid.nx,
            grid.ny,
            model.nx,
            model.ny
        )));
    }
    let gamma = cfg
        .optimizer
        .as_ref()
        .map(|o| o.gamma_target)
        .or(cfg.analysis.gamma_stop)
        .unwrap_or(1.0);
    let m = cfg.optimizer.as_ref().map(|o| o.m_clusters).unwrap_or(6);
    let tol_mult = cfg
        .optimizer
        .as_ref()
        .map(|o| o.multiplicity_tol)
        .unwrap_or(1e-8);

    let solver = SolverOptions::default();
    let pm = PseudoMassParams::default();
    let degenerate = grid.values.iter().all(|&v| v < pm.omega_l);

    let state = solve_equilibrium(&model, &grid.values, gamma, &solver)
        .map_err(|e| AppError::Analysis(anyhow!(e)))?;
    let st = solver.interp_state(&model).with_cutoff(state.cutoff);
    let eig = analyze_stability(
        &model,
        &state.u,
        &grid.values,
        st,
        Some(&pm),
        m,
        tol_mult,
        &Default::default(),
    )
    .map_err(|e| AppError::Analysis(anyhow!(e)))?;

    let (summary_table, modes) = io::eigen_report(&model, &eig);
    std::fs::write(out.join("eigenvalues.tsv"), &summary_table)
        .context("writing eigenvalues")
        .map_err(AppError::Config)?;
    std::fs::write(out.join("modes.tsv"), &modes)
        .context("writing modes")
        .map_err(AppError::Config)?;

    let stable = eig.values[0] > 0.0;
    let mut verdict = String::new();
    let _ = writeln!(verdict, "gamma = {gamma:e}");
    let _ = writeln!(verdict, "lambda1 = {:e}", eig.values[0]);
    let _ = writeln!(verdict, "stable = {stable}");
    let _ = writeln!(verdict, "degenerate = {degenerate}");
    let mults: Vec<String> = eig.multiplicities().iter().map(|v| v.to_string()).collect();
    let _ = writeln!(verdict, "multiplicities = [{}]", mults.join(", "));
    std::fs::write(out.join("verdict.toml"), &verdict)
        .context("writing verdict")
        .map_err(AppError::Config)?;
    if degenerate {
        eprintln!("warning: all-void density field; eigenanalysis is degenerate");
    }
    println!(
        "analyze: lambda1 = {:e} ({}), results in {}",
        eig.values[0],
        if stable { "stable" } else { "unstable" },
        out.display()
    );
    Ok(())
}

fn cmd_verify_sens(
    config_path: &Path,
    out_dir: Option<&Path>,
    seed: Option<u64>,
    workers: Option<usize>,
    h_override: Option<f64>,
    corrupt_kernel: Option<String>,
) -> Result<(), AppError> {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    let cfg = load_config(config_path)?;
    init_workers(cfg.workers, workers);
    let out = out_dir_for(&cfg, out_dir)?;
    let model = cfg.build_model().map_err(AppError::Config)?;
    let Some(verify) = &cfg.verify else {
        return Err(AppError::Config(anyhow!("config has no [verify] section")));
    };
    let seed = seed.unwrap_or(verify.seed);
    let h = h_override.unwrap_or(verify.h);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let rho: Vec<f64> = (0..model.n_elems())
        .map(|_| rng.gen_range(verify.rho_range[0]..verify.rho_range[1]))
        .collect();

    let pm = PseudoMassParams::default();
    let mut report = verify_sensitivities_cdm(
        &model,
        &rho,
        verify.gamma,
        h,
        verify.n_eigs,
        Some(&pm),
        &SolverOptions::default(),
        &Default::default(),
    )
    .map_err(|e| AppError::Analysis(anyhow!(e)))?;

    // negative-control hook: corrupt one kernel's analytic values
    if let Some(name) = &corrupt_kernel {
        let kernel = parse_kernel(name).map_err(AppError::Config)?;
        let mut max_err: f64 = 0.0;
        for entry in report.entries.iter_mut() {
            if entry.kernel == kernel {
                entry.analytic *= 1.5;
                entry.analytic += 1.0;
                entry.rel_err = (entry.analytic - entry.fd).abs() / entry.fd.abs().max(1e-300);
            }
            max_err = max_err.max(entry.rel_err);
        }
        report.max_rel_err = max_err;
    }

    std::fs::write(out.join("cdm_report.tsv"), report.to_table())
        .context("writing report")
        .map_err(AppError::Config)?;
    let worst = report
        .entries
        .iter()
        .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
        .expect("report is nonempty");
    let worst_name = kernel_name(worst.kernel);
    let mut summary = String::new();
    let _ = writeln!(summary, "h = {h:e}");
    let _ = writeln!(summary, "seed = {seed}");
    let _ = writeln!(summary, "max_rel_err = {:e}", report.max_rel_err);
    let _ = writeln!(summary, "worst_kernel = {worst_name:?}");
    let _ = writeln!(summary, "worst_element = {}", worst.element);
    let _ = writeln!(summary, "skipped_elements = {}", report.skipped.len());
    let _ = writeln!(summary, "threshold = {:e}", verify.max_rel_err);
    let pass = report.max_rel_err <= verify.max_rel_err;
    let _ = writeln!(summary, "pass = {pass}");
    std::fs::write(out.join("cdm_summary.toml"), &summary)
        .context("writing summary")
        .map_err(AppError::Config)?;
    for e in &report.skipped {
        eprintln!("warning: FD sample for element {e} failed; excluded");
    }
    println!(
        "verify-sens: max rel err {:e} (worst kernel {worst_name}) — {}",
        report.max_rel_err,
        if pass { "pass" } else { "FAIL" }
    );
    if !pass {
        return Err(AppError::Verification(anyhow!(
            "max relative error {:e} exceeds {:e} (worst kernel {worst_name}, element {})",
            report.max_rel_err,
            verify.max_rel_err,
            worst.element
        )));
    }
    Ok(())
}

fn parse_kernel(name: &str) -> anyhow::Result<usize> {
    if name == "f0" {
        return Ok(0);
    }
    if let Some(num) = name.strip_prefix("lambda") {
        let q: usize = num.parse().context("kernel index")?;
        if q >= 1 {
            return Ok(q);
        }
    }
    bail!("unknown kernel {name:?} (expected \"f0\" or \"lambdaN\")")
}

fn kernel_name(kernel: usize) -> String {
    if kernel == 0 {
        "f0".into()
    } else {
        format!("lambda{kernel}")
    }
}

fn cmd_post_buckle(
    config_path: &Path,
    density_path: &Path,
    out_dir: Option<&Path>,
    seed: Option<u64>,
    threshold: Option<f64>,
    workers: Option<usize>,
) -> Result<(), AppError> {
    let cfg = load_config(config_path)?;
    init_workers(cfg.workers, workers);
    let out = out_dir_for(&cfg, out_dir)?;
    let model = cfg.build_model().map_err(AppError::Config)?;
    let grid = DensityGrid::read_csv(density_path).map_err(AppError::Config)?;
    if grid.nx != model.nx || grid.ny != model.ny {
        return Err(AppError::Config(anyhow!(
            "density grid is {}x{}, config mesh is {}x{}",
            grid.nx,
            grid.ny,
            model.nx,
            model.ny
        )));
    }
    let threshold = threshold.unwrap_or(0.5);
    let seed = seed.unwrap_or(cfg.analysis.seed);
    let sub = extract_solid_submodel(&model, &grid.values, threshold)
        .map_err(|e| AppError::Analysis(anyhow!(e)))?;
    let solid = &sub.model;
    let rho = vec![1.0; solid.n_elems()];
    let st = InterpState::of(solid);
    let gamma_target = cfg
        .analysis
        .gamma_stop
        .or_else(|| cfg.optimizer.as_ref().map(|o| o.gamma_target))
        .unwrap_or(1.0);

    // arc-length scale: fraction of the linear response at the target load
    let ell = match cfg.analysis.ell {
        Some(e) => e,
        None => {
            let lin =
                solve_equilibrium(solid, &rho, gamma_target * 1e-4, &SolverOptions::default())
                    .map_err(|e| AppError::Analysis(anyhow!(e)))?;
            lin.u.norm() * 1e4 / 25.0
        }
    };
    let opts = PathOptions {
        ell,
        max_points: cfg.analysis.max_points,
        gamma_stop: Some(gamma_target),
        ..Default::default()
    };
    let start = stabtop::nalgebra::DVector::zeros(solid.n_dofs());
    let primary = arc_length_trace(solid, &rho, st, &start, 0.0, None, &opts)
        .map_err(|e| AppError::Analysis(anyhow!(e)))?;

    let monitor_full = cfg.monitor_dof(&model).map_err(AppError::Config)?;
    let monitor = remap_dof(monitor_full, &sub.node_map).ok_or_else(|| {
        AppError::Config(anyhow!("monitored node lies outside the solid region"))
    })?;

    let mut all_paths: Vec<EquilibriumPath> = vec![primary.clone()];
    let mut summary = String::new();
    let _ = writeln!(summary, "threshold = {threshold}");
    let _ = writeln!(summary, "gamma_target = {gamma_target:e}");
    let _ = writeln!(summary, "ell = {ell:e}");
    let _ = writeln!(summary, "criticals = {}", primary.criticals.len());
    let reached = primary
        .points
        .iter()
        .any(|p| (p.gamma - gamma_target).abs() <= 1e-9 * gamma_target.abs().max(1.0));
    let _ = writeln!(summary, "reached_target = {reached}");

    for (i, cp) in primary.criticals.iter().enumerate() {
        let _ = writeln!(summary, "\n[critical.{i}]");
        let _ = writeln!(summary, "gamma = {:e}", cp.gamma);
        let _ = writeln!(summary, "kind = \"{}\"", cp.kind);
    }

    if let Some(cp) = primary.criticals.first() {
        if cp.kind == CriticalKind::Bifurcation {
            // branch discovery around the first bifurcation
            let before = primary
                .points
                .iter()
                .rev()
                .find(|p| !p.critical && p.gamma < cp.gamma);
            if let Some(before) = before {
                let dir = (&cp.u - &before.u) / (&cp.u - &before.u).norm();
                let radius = cfg.analysis.r_factor * cp.u.norm();
                let bcc_opts = PathOptions {
                    ell: radius * 0.35,
                    max_points: cfg.analysis.max_points.max(400),
                    ..Default::default()
                };
                match bcc_traverse(
                    solid, &rho, st, cp, &dir, radius, bcc_opts.ell, seed, &bcc_opts,
                ) {
                    Ok((crossings, closed)) => {
                        let _ = writeln!(summary, "\n[bcc]");
                        let _ = writeln!(summary, "crossings = {}", crossings.len());
                        let _ = writeln!(summary, "closed = {closed}");
                        if !closed {
                            eprintln!("warning: BCC did not close; branch list may be partial");
                        }
                        let trace_opts = PathOptions {
                            ell,
                            max_points: cfg.analysis.max_points,
                            detect_criticals: false,
                            ..Default::default()
                        };
                        let branches =
                            trace_post_buckling(solid, &rho, st, cp, &crossings, &trace_opts);
                        for (bi, b) in branches.iter().enumerate() {
                            if let Some(t) = &b.terminated {
                                eprintln!("warning: branch {bi} terminated: {t}");
                            }
                        }
                        all_paths.extend(branches);
                    }
                    Err(e) => {
                        eprintln!("warning: BCC traversal failed: {e}");
                        // fall back to the simple branch switch
                        if let Ok((u, g)) = branch_switch_simple(
                            solid,
                            &rho,
                            st,
                            cp,
                            cfg.analysis.tau,
                            1.0,
                            &opts,
                        ) {
                            let bp = stabtop::continuation::BranchPoint {
                                residual: 0.0,
                                u,
                                gamma: g,
                            };
                            let trace_opts = PathOptions {
                                ell,
                                max_points: cfg.analysis.max_points,
                                detect_criticals: false,
                                ..Default::default()
                            };
                            all_paths.extend(trace_post_buckling(
                                solid,
                                &rho,
                                st,
                                cp,
                                &[bp],
                                &trace_opts,
                            ));
                        }
                    }
                }
            }
        }
    }

    let refs: Vec<&EquilibriumPath> = all_paths.iter().collect();
    std::fs::write(out.join("paths.csv"), io::paths_csv(&refs, monitor))
        .context("writing paths")
        .map_err(AppError::Config)?;
    std::fs::write(out.join("post_buckle.toml"), &summary)
        .context("writing summary")
        .map_err(AppError::Config)?;
    println!(
        "post-buckle: {} path(s), {} critical point(s), results in {}",
        all_paths.len(),
        primary.criticals.len(),
        out.display()
    );
    Ok(())
}

/// Full-model DOF → solid-submodel DOF.
fn remap_dof(dof: usize, node_map: &[usize]) -> Option<usize> {
    let node = dof / 2;
    node_map
        .iter()
        .position(|&n| n == node)
        .map(|local| 2 * local + dof % 2)
}
