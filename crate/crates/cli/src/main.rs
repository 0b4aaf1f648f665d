//! `cape`: command-line front end for the path loss, metrics, synthetic
//! samples and gap repair.
//!
//! Exit codes: 0 success, 1 failed gradient check or other error, 2 usage,
//! parse or missing-file error, 3 shape mismatch, 4 mask disconnection.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cape_core::cape_loss::{cape_forward, CapeConfig};
use cape_core::grid::io::{read_cgrd, read_mask_cgrd, write_cgrd, write_pgm};
use cape_core::grid::{Connectivity, Shape};
use cape_core::gt_graph::io::{read_graph_json, write_graph_json};
use cape_core::metrics::{evaluate, graph_from_prediction, MetricConfig};
use cape_core::optimize::{finite_diff_check, repair, RepairConfig};
use cape_core::synth::{make_sample, read_sample, write_sample, SynthParams};
use cape_core::CapeError;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "cape", version, about = "Connectivity-aware path loss toolkit")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for path evaluation (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Print the resolved configuration to stderr.
    #[arg(long, global = true)]
    verbose: bool,
    /// Also write PGM previews of the grids a command writes.
    #[arg(long, global = true)]
    preview: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ConnectivityArg {
    Full,
    Face,
}

#[derive(Args, Debug)]
struct LossArgs {
    /// Half-width of the endpoint projection window [default: 3].
    #[arg(long)]
    window_radius: Option<usize>,
    /// Corridor radius around each ground-truth path [default: 10].
    #[arg(long)]
    dilation_radius: Option<f64>,
    /// Exponent of the per-cell cost [default: 2].
    #[arg(long)]
    cost_exponent: Option<f64>,
    /// Neighbourhood of the pixel search [default: full].
    #[arg(long, value_enum)]
    connectivity: Option<ConnectivityArg>,
    /// Search the whole grid instead of the corridor.
    #[arg(long)]
    unmasked: bool,
}

impl LossArgs {
    fn resolve(&self, seed: u64) -> CapeConfig {
        let d = CapeConfig::default();
        CapeConfig {
            window_radius: self.window_radius.unwrap_or(d.window_radius),
            dilation_radius: self.dilation_radius.unwrap_or(d.dilation_radius),
            cost_exponent: self.cost_exponent.unwrap_or(d.cost_exponent),
            connectivity: match self.connectivity {
                None => d.connectivity,
                Some(ConnectivityArg::Full) => Connectivity::Full,
                Some(ConnectivityArg::Face) => Connectivity::Face,
            },
            masked: !self.unmasked,
            seed,
            ..d
        }
    }
}

#[derive(Args, Debug)]
struct MetricArgs {
    /// Predicted distance below which a cell is foreground [default: 1.5].
    #[arg(long)]
    threshold: Option<f64>,
    /// CCQ matching tolerance in cells [default: 3].
    #[arg(long)]
    ccq_tolerance: Option<f64>,
    /// Snapping radius for ground-truth nodes [default: 5].
    #[arg(long)]
    snap_radius: Option<f64>,
    /// Maximum number of sampled node pairs [default: 200].
    #[arg(long)]
    num_pairs: Option<usize>,
    /// Relative length tolerance for TLTS [default: 0.15].
    #[arg(long)]
    tlts_tolerance: Option<f64>,
    /// Shortest ground-truth path length of a sampled pair [default: 10].
    #[arg(long)]
    min_path_length: Option<f64>,
    /// Arc-length spacing of pair endpoints along chains; 0 uses every node [default: 20].
    #[arg(long)]
    control_spacing: Option<f64>,
}

impl MetricArgs {
    fn resolve(&self, seed: u64) -> MetricConfig {
        let d = MetricConfig::default();
        MetricConfig {
            threshold: self.threshold.unwrap_or(d.threshold),
            ccq_tolerance: self.ccq_tolerance.unwrap_or(d.ccq_tolerance),
            snap_radius: self.snap_radius.unwrap_or(d.snap_radius),
            num_pairs: self.num_pairs.unwrap_or(d.num_pairs),
            tlts_tolerance: self.tlts_tolerance.unwrap_or(d.tlts_tolerance),
            min_path_length: self.min_path_length.unwrap_or(d.min_path_length),
            control_spacing: self.control_spacing.unwrap_or(d.control_spacing),
            seed,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Path loss of a prediction against a ground-truth graph.
    Loss {
        graph: PathBuf,
        pred: PathBuf,
        /// Write the gradient as a CGRD grid.
        #[arg(long)]
        grad_out: Option<PathBuf>,
        #[command(flatten)]
        loss: LossArgs,
    },
    /// Same as `loss`, writing the gradient to OUT.
    Grad {
        graph: PathBuf,
        pred: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        loss: LossArgs,
    },
    /// Dice, CCQ, APLS and TLTS of a prediction.
    Metrics {
        gt_graph: PathBuf,
        gt_mask: PathBuf,
        pred: PathBuf,
        #[command(flatten)]
        metric: MetricArgs,
    },
    /// Generate a synthetic sample directory.
    Synth {
        /// Output directory.
        out: PathBuf,
        /// Grid extents, slowest axis first, e.g. `128,128` or `64,64,64`.
        #[arg(long, value_delimiter = ',', default_value = "128,128")]
        shape: Vec<usize>,
        #[arg(long)]
        n_curves: Option<usize>,
        #[arg(long)]
        loop_prob: Option<f64>,
        #[arg(long)]
        n_gaps: Option<usize>,
        #[arg(long)]
        gap_len: Option<usize>,
        #[arg(long)]
        gap_value: Option<f64>,
    },
    /// Repair the corrupted map of a sample by gradient descent.
    Repair {
        sample: PathBuf,
        /// Directory for `repaired.cgrd` and `trace.csv`.
        #[arg(long)]
        out: PathBuf,
        /// [default: 200]
        #[arg(long)]
        steps: Option<usize>,
        /// [default: 0.1]
        #[arg(long)]
        lr: Option<f64>,
        /// Weight of the path loss [default: 1].
        #[arg(long)]
        alpha: Option<f64>,
        /// Weight of the pull toward the starting map [default: 0.01].
        #[arg(long)]
        prox_weight: Option<f64>,
        /// [default: 0]
        #[arg(long)]
        clamp_min: Option<f64>,
        /// Resample paths every N steps; 0 keeps the first set [default: 10].
        #[arg(long)]
        resample_every: Option<usize>,
        #[command(flatten)]
        loss: LossArgs,
        #[command(flatten)]
        metric: MetricArgs,
    },
    /// Compare the analytic gradient with central differences.
    Gradcheck {
        graph: PathBuf,
        pred: PathBuf,
        /// Maximum accepted relative error.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// Perturbation size.
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
        /// Maximum number of path cells checked.
        #[arg(long, default_value_t = 200)]
        cells: usize,
        #[command(flatten)]
        loss: LossArgs,
    },
    /// Graph of a thresholded prediction, as graph JSON.
    ExtractGraph {
        pred: PathBuf,
        out: PathBuf,
        /// [default: 1.5]
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn exit_code(e: &CapeError) -> u8 {
    match e {
        CapeError::Io { .. } | CapeError::Format { .. } => 2,
        CapeError::ShapeMismatch { .. } | CapeError::PointOutOfBounds { .. } => 3,
        CapeError::MaskDisconnection { .. } => 4,
        _ => 1,
    }
}

fn verbose(cli: &Cli, value: serde_json::Value) {
    if cli.verbose {
        eprintln!("{}", serde_json::to_string_pretty(&value).expect("config serializes"));
    }
}

fn preview(cli: &Cli, path: &Path, grid: &cape_core::grid::ScalarGrid) -> cape_core::Result<()> {
    if cli.preview {
        write_pgm(path.with_extension("pgm"), grid)?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> cape_core::Result<()> {
    fs::write(path, text).map_err(|source| CapeError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn globals(cli: &Cli) -> serde_json::Value {
    json!({"seed": cli.seed, "threads": cli.threads, "format": format!("{:?}", cli.format).to_lowercase()})
}

fn run_loss(cli: &Cli, graph: &Path, pred: &Path, grad_out: Option<&Path>, args: &LossArgs) -> cape_core::Result<bool> {
    let cfg = args.resolve(cli.seed);
    verbose(cli, json!({"global": globals(cli), "loss": cfg}));
    let g = read_graph_json(graph)?;
    let pred = read_cgrd(pred)?;
    let result = cape_forward(&g, &pred, &cfg)?;
    if let Some(out) = grad_out {
        write_cgrd(out, &result.gradient)?;
        preview(cli, out, &result.gradient)?;
    }
    match cli.format {
        Format::Json => {
            let paths: Vec<_> = result
                .records
                .iter()
                .map(|r| json!({"v1": r.v1, "v2": r.v2, "cost": r.loss}))
                .collect();
            println!("{}", json!({"total": result.total_loss, "paths": paths}));
        }
        Format::Text => {
            println!("total {:.6}", result.total_loss);
            println!("{:>6} {:>6} {:>14}", "v1", "v2", "cost");
            for r in &result.records {
                println!("{:>6} {:>6} {:>14.6}", r.v1, r.v2, r.loss);
            }
        }
    }
    Ok(true)
}

fn run(cli: &Cli) -> cape_core::Result<bool> {
    match &cli.command {
        Command::Loss {
            graph,
            pred,
            grad_out,
            loss,
        } => run_loss(cli, graph, pred, grad_out.as_deref(), loss),
        Command::Grad { graph, pred, out, loss } => run_loss(cli, graph, pred, Some(out), loss),
        Command::Metrics {
            gt_graph,
            gt_mask,
            pred,
            metric,
        } => {
            let cfg = metric.resolve(cli.seed);
            verbose(cli, json!({"global": globals(cli), "metrics": cfg}));
            let g = read_graph_json(gt_graph)?;
            let mask = read_mask_cgrd(gt_mask)?;
            let pred = read_cgrd(pred)?;
            let report = evaluate(&pred, &mask, &g, &cfg)?;
            match cli.format {
                Format::Json => println!("{}", report.to_json()),
                Format::Text => print!("{}", report.to_text()),
            }
            Ok(true)
        }
        Command::Synth {
            out,
            shape,
            n_curves,
            loop_prob,
            n_gaps,
            gap_len,
            gap_value,
        } => {
            let d = SynthParams::default();
            let params = SynthParams {
                n_curves: n_curves.unwrap_or(d.n_curves),
                loop_prob: loop_prob.unwrap_or(d.loop_prob),
                n_gaps: n_gaps.unwrap_or(d.n_gaps),
                gap_len: gap_len.unwrap_or(d.gap_len),
                gap_value: gap_value.unwrap_or(d.gap_value),
            };
            verbose(cli, json!({"global": globals(cli), "shape": shape, "synth": params}));
            let s = make_sample(cli.seed, Shape::new(shape)?, &params)?;
            write_sample(out, &s)?;
            preview(cli, &out.join("gt_map"), &s.gt_map)?;
            preview(cli, &out.join("corrupted"), &s.corrupted_map)?;
            let summary = json!({
                "out": out.display().to_string(),
                "nodes": s.graph.node_count(),
                "edges": s.graph.edge_count(),
                "gaps": s.corruption_log.len(),
            });
            match cli.format {
                Format::Json => println!("{summary}"),
                Format::Text => println!(
                    "wrote {} ({} nodes, {} edges, {} gaps)",
                    out.display(),
                    s.graph.node_count(),
                    s.graph.edge_count(),
                    s.corruption_log.len()
                ),
            }
            Ok(true)
        }
        Command::Repair {
            sample,
            out,
            steps,
            lr,
            alpha,
            prox_weight,
            clamp_min,
            resample_every,
            loss,
            metric,
        } => {
            let d = RepairConfig::default();
            let rcfg = RepairConfig {
                steps: steps.unwrap_or(d.steps),
                learning_rate: lr.unwrap_or(d.learning_rate),
                alpha: alpha.unwrap_or(d.alpha),
                prox_weight: prox_weight.unwrap_or(d.prox_weight),
                clamp_min: clamp_min.unwrap_or(d.clamp_min),
                resample_paths_every: resample_every.unwrap_or(d.resample_paths_every),
            };
            let ccfg = loss.resolve(cli.seed);
            let mcfg = metric.resolve(cli.seed);
            verbose(
                cli,
                json!({"global": globals(cli), "repair": rcfg, "loss": ccfg, "metrics": mcfg}),
            );
            let s = read_sample(sample)?;
            let (y, trace) = repair(&s, &rcfg, &ccfg, &mcfg)?;
            fs::create_dir_all(out).map_err(|source| CapeError::Io {
                path: out.clone(),
                source,
            })?;
            write_cgrd(out.join("repaired.cgrd"), &y)?;
            preview(cli, &out.join("repaired"), &y)?;
            write_text(&out.join("trace.csv"), &trace.to_csv())?;
            let (first, last) = (trace.first(), trace.last());
            match cli.format {
                Format::Json => println!(
                    "{}",
                    json!({
                        "steps": rcfg.steps,
                        "initial": first,
                        "final": last,
                    })
                ),
                Format::Text => {
                    println!("cape {:.6} -> {:.6}", first.cape, last.cape);
                    println!("apls {:.4} -> {:.4}", first.apls, last.apls);
                }
            }
            Ok(true)
        }
        Command::Gradcheck {
            graph,
            pred,
            tol,
            step,
            cells,
            loss,
        } => {
            let cfg = loss.resolve(cli.seed);
            verbose(
                cli,
                json!({"global": globals(cli), "loss": cfg, "tol": tol, "step": step, "cells": cells}),
            );
            let g = read_graph_json(graph)?;
            let pred = read_cgrd(pred)?;
            let check = finite_diff_check(&g, &pred, &cfg, *step, *cells)?;
            let pass = check.max_rel_error <= *tol;
            match cli.format {
                Format::Json => println!(
                    "{}",
                    json!({
                        "max_rel_error": check.max_rel_error,
                        "checked": check.checked,
                        "skipped": check.skipped,
                        "tol": tol,
                        "pass": pass,
                    })
                ),
                Format::Text => println!(
                    "max relative error {:.3e} over {} cells ({} skipped): {}",
                    check.max_rel_error,
                    check.checked,
                    check.skipped,
                    if pass { "ok" } else { "FAILED" }
                ),
            }
            Ok(pass)
        }
        Command::ExtractGraph { pred, out, threshold } => {
            let threshold = threshold.unwrap_or(MetricConfig::default().threshold);
            verbose(cli, json!({"global": globals(cli), "threshold": threshold}));
            let pred = read_cgrd(pred)?;
            let g = graph_from_prediction(&pred, threshold)?;
            write_graph_json(out, &g)?;
            match cli.format {
                Format::Json => println!(
                    "{}",
                    json!({"nodes": g.node_count(), "edges": g.edge_count(), "components": g.component_count()})
                ),
                Format::Text => println!(
                    "{} nodes, {} edges, {} components",
                    g.node_count(),
                    g.edge_count(),
                    g.component_count()
                ),
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| run(&cli)),
            Err(e) => {
                eprintln!("error: cannot start {n} worker threads: {e}");
                return ExitCode::from(1);
            }
        },
        None => run(&cli),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
