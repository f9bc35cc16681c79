//! Wall-clock scaling of the fast filter against the brute-force oracle, with
//! least-squares slopes on log(time) vs log(N).

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::fastpath::{
    analytic_edge_evals, EvalCounter, Execution, FilterOptions, FilterWorkspace,
};
use crate::oracle::crisscross_oracle;
use crate::tensor::Tensor3;
use crate::weights::Scale;

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub min_side: usize,
    pub max_side: usize,
    pub points: usize,
    /// Largest side the oracle is timed at; `0` skips the oracle.
    pub oracle_max_side: usize,
    pub channels: usize,
    pub guide_channels: usize,
    pub seed: u64,
    pub execution: Execution,
    /// Target duration of one timing sample.
    pub sample_time: Duration,
    pub samples: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            min_side: 32,
            max_side: 512,
            points: 5,
            oracle_max_side: 128,
            channels: 4,
            guide_channels: 1,
            seed: 0,
            execution: Execution::Sequential,
            sample_time: Duration::from_millis(40),
            samples: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub side: usize,
    pub nodes: usize,
    pub edge_evals: u64,
    pub fast_secs: f64,
    pub oracle_secs: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub fast_fit: LogLogFit,
    pub oracle_fit: Option<LogLogFit>,
}

/// Geometrically spaced square sides from `min` to `max` inclusive, strictly
/// increasing.
pub fn bench_sides(min: usize, max: usize, points: usize) -> Result<Vec<usize>> {
    if points < 4 {
        return Err(Error::Domain(format!(
            "need at least 4 sizes, got {points}"
        )));
    }
    if min == 0 || max <= min {
        return Err(Error::Domain(format!("invalid side range {min}..{max}")));
    }
    let ratio = max as f64 / min as f64;
    let mut sides: Vec<usize> = (0..points)
        .map(|i| (min as f64 * ratio.powf(i as f64 / (points - 1) as f64)).round() as usize)
        .collect();
    sides.dedup();
    if sides.len() != points {
        return Err(Error::Domain(format!(
            "{points} distinct sizes do not fit between {min} and {max}"
        )));
    }
    Ok(sides)
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn fit_log_log(xs: &[f64], ys: &[f64]) -> Option<LogLogFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Some(LogLogFit {
        slope,
        intercept,
        r_squared,
        points: xs.len(),
    })
}

/// Calls per sample so one sample lasts about `sample_time`.
fn calibrate<F: FnMut()>(f: &mut F, sample_time: Duration) -> u32 {
    let start = Instant::now();
    f();
    let once = start.elapsed().max(Duration::from_nanos(100));
    (sample_time.as_secs_f64() / once.as_secs_f64())
        .ceil()
        .max(1.0) as u32
}

fn sample<F: FnMut()>(f: &mut F, reps: u32) -> f64 {
    let t = Instant::now();
    for _ in 0..reps {
        f();
    }
    t.elapsed().as_secs_f64() / reps as f64
}

/// Times only the two directional filter passes; inputs are generated
/// outside the timed region and scratch buffers are reused across calls.
///
/// Samples are taken round-robin over all sizes and the minimum per size is
/// kept, so a slow stretch on a shared machine hits every size rather than
/// skewing one end of the fit.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    let sides = bench_sides(cfg.min_side, cfg.max_side, cfg.points)?;
    let opts = FilterOptions {
        execution: cfg.execution,
        ..Default::default()
    };
    let scale = Scale::<f64>::default();

    let mut cases = Vec::with_capacity(sides.len());
    for &side in &sides {
        let guide = Tensor3::<f64>::random(cfg.guide_channels, side, side, cfg.seed)?;
        let values = Tensor3::<f64>::random(cfg.channels, side, side, cfg.seed.wrapping_add(1))?;
        let mut ws = FilterWorkspace::new();
        let counter = EvalCounter::new();
        ws.filter(&guide, &values, scale, &counter, &opts)?;
        cases.push((side, guide, values, ws, counter.get()));
    }

    let mut fast_reps = Vec::with_capacity(cases.len());
    let mut oracle_reps = Vec::with_capacity(cases.len());
    for (side, guide, values, ws, _) in &mut cases {
        let mut fast = || {
            black_box(
                ws.filter(guide, values, scale, &EvalCounter::new(), &opts)
                    .is_ok(),
            );
        };
        fast_reps.push(calibrate(&mut fast, cfg.sample_time));
        let mut oracle = || {
            black_box(crisscross_oracle(guide, values, scale).is_ok());
        };
        oracle_reps
            .push((*side <= cfg.oracle_max_side).then(|| calibrate(&mut oracle, cfg.sample_time)));
    }

    let mut fast_best = vec![f64::INFINITY; cases.len()];
    let mut oracle_best = vec![f64::INFINITY; cases.len()];
    for _ in 0..cfg.samples.max(1) {
        for (k, (_, guide, values, ws, _)) in cases.iter_mut().enumerate() {
            let mut fast = || {
                black_box(
                    ws.filter(guide, values, scale, &EvalCounter::new(), &opts)
                        .is_ok(),
                );
            };
            fast_best[k] = fast_best[k].min(sample(&mut fast, fast_reps[k]));
            if let Some(reps) = oracle_reps[k] {
                let mut oracle = || {
                    black_box(crisscross_oracle(guide, values, scale).is_ok());
                };
                oracle_best[k] = oracle_best[k].min(sample(&mut oracle, reps));
            }
        }
    }

    let rows: Vec<BenchRow> = cases
        .iter()
        .enumerate()
        .map(|(k, (side, _, _, _, edge_evals))| BenchRow {
            side: *side,
            nodes: side * side,
            edge_evals: *edge_evals,
            fast_secs: fast_best[k],
            oracle_secs: oracle_reps[k].map(|_| oracle_best[k]),
        })
        .collect();

    let n: Vec<f64> = rows.iter().map(|r| r.nodes as f64).collect();
    let fast: Vec<f64> = rows.iter().map(|r| r.fast_secs).collect();
    let fast_fit = fit_log_log(&n, &fast).expect("at least four distinct sizes");
    let (on, ot): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| r.oracle_secs.map(|t| (r.nodes as f64, t)))
        .unzip();
    let oracle_fit = fit_log_log(&on, &ot);
    Ok(BenchReport {
        rows,
        fast_fit,
        oracle_fit,
    })
}

impl BenchReport {
    /// Whether every measured edge count equals `4WH − 2(W+H)`.
    pub fn edge_counts_exact(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.edge_evals == analytic_edge_evals(r.side, r.side))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "{:>6} {:>9} {:>12} {:>12} {:>14} {:>14}",
            "side", "N", "edge_evals", "analytic", "fast_s", "oracle_s"
        )
        .unwrap();
        for r in &self.rows {
            let oracle = r
                .oracle_secs
                .map_or_else(|| "-".to_string(), |t| format!("{t:.6e}"));
            writeln!(
                s,
                "{:>6} {:>9} {:>12} {:>12} {:>14.6e} {:>14}",
                r.side,
                r.nodes,
                r.edge_evals,
                analytic_edge_evals(r.side, r.side),
                r.fast_secs,
                oracle
            )
            .unwrap();
        }
        let f = &self.fast_fit;
        writeln!(
            s,
            "fast   slope {:.4}  r2 {:.4}  points {}",
            f.slope, f.r_squared, f.points
        )
        .unwrap();
        match &self.oracle_fit {
            Some(o) => writeln!(
                s,
                "oracle slope {:.4}  r2 {:.4}  points {}",
                o.slope, o.r_squared, o.points
            )
            .unwrap(),
            None => writeln!(s, "oracle slope -").unwrap(),
        }
        writeln!(s, "edge counts exact: {}", self.edge_counts_exact()).unwrap();
        s
    }
}
