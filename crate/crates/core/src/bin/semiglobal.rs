//! Command-line front end for the semi-global filter.
//!
//! Exit codes: 0 on success, 1 on invalid input or usage, 2 when a check
//! (`selftest`, `gradcheck`) fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use semiglobal::autograd::{finite_diff_check, CheckPoint, GradComponent};
use semiglobal::bench::{run_bench, BenchConfig};
use semiglobal::fastpath::Execution;
use semiglobal::io::{self, DType};
use semiglobal::selftest::{parse_sizes, render_results, run_selftest, SelfTestConfig};
use semiglobal::tensor::cross_positions;
use semiglobal::{
    analytic_edge_evals, attention_slice, effective_attention, semi_global_block, BlockParamsF64,
    Error, EvalCounter, HierarchyConfig, MatrixF64, Position, TensorF64,
};

const GRAD_TOL: f64 = 1e-5;

#[derive(Parser)]
#[command(
    name = "semiglobal",
    version,
    about = "Shape-aware semi-global feature aggregation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DTypeArg {
    F64,
    F32,
}

impl From<DTypeArg> for DType {
    fn from(d: DTypeArg) -> Self {
        match d {
            DTypeArg::F64 => DType::F64,
            DTypeArg::F32 => DType::F32,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ExecArg {
    Sequential,
    Parallel,
}

#[derive(clap::Args)]
struct ParamArgs {
    /// Parameter bundle written by `apply --params-out`.
    #[arg(long, conflicts_with = "seed")]
    params: Option<PathBuf>,
    /// Generate parameters from this seed (default 0 when no bundle is given).
    #[arg(long)]
    seed: Option<u64>,
    /// Divide aggregated values by the total weight.
    #[arg(long)]
    normalized: bool,
    /// Number of stacked blocks; all levels share one parameter set.
    #[arg(long, default_value_t = 1)]
    levels: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random tensor, uniform in [-1, 1].
    Gen {
        #[arg(long)]
        channels: usize,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "f64")]
        dtype: DTypeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the block hierarchy on a tensor file.
    Apply {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also save the parameters used.
        #[arg(long)]
        params_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "f64")]
        dtype: DTypeArg,
    },
    /// Export the attention map of one position as a PGM image.
    Attention {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
        /// Position as `x,y`.
        #[arg(long, value_parser = parse_position)]
        pos: Position,
        /// Perturbation size for multi-level maps.
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the fast filter against the brute-force oracle.
    Selftest {
        /// Sizes as `HxW[,HxW...]`.
        #[arg(long, value_parser = parse_size_list)]
        sizes: Option<SizeList>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt one edge weight to confirm the checks notice.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Time the fast filter and the oracle over growing square maps.
    Bench {
        #[arg(long, default_value_t = 32)]
        min: usize,
        #[arg(long, default_value_t = 512)]
        max: usize,
        #[arg(long, default_value_t = 5)]
        points: usize,
        /// Largest side the oracle is timed at; 0 skips it.
        #[arg(long, default_value_t = 128)]
        oracle_max: usize,
        #[arg(long, default_value_t = 4)]
        channels: usize,
        #[arg(long, default_value_t = 1)]
        guide_channels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "sequential")]
        execution: ExecArg,
        /// Milliseconds per timing sample.
        #[arg(long, default_value_t = 40)]
        sample_ms: u64,
        #[arg(long, default_value_t = 5)]
        samples: usize,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the block gradients.
    Gradcheck {
        #[arg(long, value_parser = parse_size_list, default_value = "2x2,3x4,6x6")]
        sizes: SizeList,
        #[arg(long, default_value_t = 3)]
        channels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
}

fn parse_position(s: &str) -> Result<Position, String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let x = x.trim().parse().map_err(|_| format!("bad x in {s:?}"))?;
    let y = y.trim().parse().map_err(|_| format!("bad y in {s:?}"))?;
    Ok(Position::new(x, y))
}

#[derive(Clone)]
struct SizeList(Vec<(usize, usize)>);

fn parse_size_list(s: &str) -> Result<SizeList, String> {
    parse_sizes(s)
        .map(SizeList)
        .ok_or_else(|| format!("expected HxW[,HxW...], got {s:?}"))
}

enum Failure {
    Invalid(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Invalid(e)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::Gen {
            channels,
            height,
            width,
            seed,
            dtype,
            out,
        } => {
            let t = TensorF64::random(channels, height, width, seed)?;
            io::save_tensor(&out, &t, dtype.into())?;
            Ok(())
        }
        Command::Apply {
            input,
            params,
            out,
            params_out,
            dtype,
        } => cmd_apply(&input, &params, &out, params_out.as_deref(), dtype.into()),
        Command::Attention {
            input,
            params,
            pos,
            epsilon,
            out,
        } => cmd_attention(&input, &params, pos, epsilon, &out),
        Command::Selftest {
            sizes,
            seed,
            inject_fault,
        } => {
            let mut cfg = SelfTestConfig {
                seed,
                inject_fault,
                ..Default::default()
            };
            if let Some(sizes) = sizes {
                cfg.sizes = sizes.0;
            }
            let results = run_selftest(&cfg)?;
            print!("{}", render_results(&results));
            let failed: Vec<String> = results
                .iter()
                .filter(|r| !r.passed())
                .map(|r| {
                    format!(
                        "{} at {}x{} (error {:.3e})",
                        r.name, r.height, r.width, r.error
                    )
                })
                .collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Failure::Check(failed.join("; ")))
            }
        }
        Command::Bench {
            min,
            max,
            points,
            oracle_max,
            channels,
            guide_channels,
            seed,
            execution,
            sample_ms,
            samples,
            out,
        } => {
            let cfg = BenchConfig {
                min_side: min,
                max_side: max,
                points,
                oracle_max_side: oracle_max,
                channels,
                guide_channels,
                seed,
                execution: match execution {
                    ExecArg::Sequential => Execution::Sequential,
                    ExecArg::Parallel => Execution::Parallel,
                },
                sample_time: Duration::from_millis(sample_ms),
                samples,
            };
            let text = run_bench(&cfg)?.to_text();
            print!("{text}");
            if let Some(path) = out {
                std::fs::write(path, text).map_err(Error::from)?;
            }
            Ok(())
        }
        Command::Gradcheck {
            sizes,
            channels,
            seed,
            step,
        } => cmd_gradcheck(&sizes.0, channels, seed, step),
    }
}

fn load_setup(
    input: &Path,
    args: &ParamArgs,
) -> Result<(TensorF64, HierarchyConfig, BlockParamsF64), Error> {
    let cfg = HierarchyConfig::new(args.levels, true)?;
    let x: TensorF64 = io::load_tensor(input)?;
    let params = match &args.params {
        Some(path) => {
            io::params_from_tensor(&io::load_tensor(path)?, x.channels(), args.normalized)?
        }
        None => BlockParamsF64::seeded(x.channels(), args.seed.unwrap_or(0))?
            .with_normalized(args.normalized),
    };
    Ok((x, cfg, params))
}

fn cmd_apply(
    input: &Path,
    args: &ParamArgs,
    out: &Path,
    params_out: Option<&Path>,
    dtype: DType,
) -> CmdResult {
    let (x, cfg, params) = load_setup(input, args)?;
    let (height, width) = (x.height(), x.width());
    let analytic = analytic_edge_evals(height, width);
    let counter = EvalCounter::new();
    let mut y = x;
    for level in 0..cfg.levels {
        let before = counter.get();
        y = semi_global_block(&y, &params, &counter)?;
        println!(
            "level {} edge_evals {} analytic {}",
            level + 1,
            counter.get() - before,
            analytic
        );
    }
    println!("total edge_evals {}", counter.get());
    io::save_tensor(out, &y, dtype)?;
    if let Some(path) = params_out {
        io::save_tensor(path, &io::params_to_tensor(&params)?, DType::F64)?;
    }
    Ok(())
}

fn cmd_attention(
    input: &Path,
    args: &ParamArgs,
    u: Position,
    epsilon: f64,
    out: &Path,
) -> CmdResult {
    let (x, cfg, params) = load_setup(input, args)?;
    x.check_position(u)?;
    let (height, width) = (x.height(), x.width());
    let map = if cfg.levels == 1 {
        let slice = attention_slice(&x, &params, u)?;
        let mut data = vec![0.0; height * width];
        for (p, w) in cross_positions(height, width, u).into_iter().zip(slice) {
            data[p.y * width + p.x] = w;
        }
        MatrixF64::from_vec(height, width, data)?
    } else {
        effective_attention(&x, &cfg, std::slice::from_ref(&params), u, epsilon)?
    };
    io::export_pgm(&map, out)?;
    Ok(())
}

fn cmd_gradcheck(sizes: &[(usize, usize)], channels: usize, seed: u64, step: f64) -> CmdResult {
    let mut failed = Vec::new();
    println!("{:<12} {:<10} {:>12}", "mode", "gradient", "max_rel_err");
    for normalized in [false, true] {
        let mode = if normalized { "normalized" } else { "plain" };
        let points = sizes
            .iter()
            .enumerate()
            .map(|(k, &(h, w))| {
                CheckPoint::<f64>::seeded(channels, h, w, normalized, seed.wrapping_add(k as u64))
            })
            .collect::<Result<Vec<_>, _>>()?;
        for comp in GradComponent::ALL {
            let mut worst: f64 = 0.0;
            for p in &points {
                worst = worst.max(finite_diff_check(comp, p, step)?);
            }
            println!("{:<12} {:<10} {:>12.3e}", mode, comp.name(), worst);
            if worst.is_nan() || worst > GRAD_TOL {
                failed.push(format!("{mode} {} ({worst:.3e})", comp.name()));
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "exceeds {GRAD_TOL:e}: {}",
            failed.join(", ")
        )))
    }
}
