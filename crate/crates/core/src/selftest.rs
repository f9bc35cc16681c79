//! Fast-path checks runnable from the command line: oracle equivalence, root
//! invariance, exact edge counts and normalization.

use crate::block::{semi_global_block_with, BlockParams};
use crate::error::Result;
use crate::fastpath::{
    analytic_edge_evals, normalizer, semi_global_filter_with, EvalCounter, FilterOptions,
    RootChoice,
};
use crate::oracle::{crisscross_oracle, weight_sum_oracle};
use crate::tensor::{max_relative_error, Tensor3};
use crate::weights::Scale;

pub const EQUIVALENCE_TOL: f64 = 1e-10;
pub const EXACT_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SelfTestConfig {
    /// `(H, W)` pairs.
    pub sizes: Vec<(usize, usize)>,
    pub seed: u64,
    pub inject_fault: bool,
}

impl Default for SelfTestConfig {
    fn default() -> Self {
        Self {
            sizes: vec![
                (1, 1),
                (1, 7),
                (6, 1),
                (2, 3),
                (5, 5),
                (8, 13),
                (16, 9),
                (32, 32),
            ],
            seed: 0,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub height: usize,
    pub width: usize,
    pub error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

/// Parses `HxW[,HxW...]`.
pub fn parse_sizes(s: &str) -> Option<Vec<(usize, usize)>> {
    s.split(',')
        .map(|part| {
            let (h, w) = part.trim().split_once(['x', 'X'])?;
            let (h, w) = (h.parse().ok()?, w.parse().ok()?);
            (h > 0 && w > 0).then_some((h, w))
        })
        .collect()
}

pub fn run_selftest(cfg: &SelfTestConfig) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    let opts = FilterOptions {
        inject_fault: cfg.inject_fault,
        ..Default::default()
    };
    for (k, &(height, width)) in cfg.sizes.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(1000 * k as u64);
        let guide = Tensor3::<f64>::random(2, height, width, seed)?;
        let values = Tensor3::<f64>::random(3, height, width, seed + 1)?;
        let scale = Scale::new(0.8, 1.25)?;
        let mut push = |name, error: f64, tolerance| {
            results.push(CheckResult {
                name,
                height,
                width,
                error,
                tolerance,
            })
        };

        let counter = EvalCounter::new();
        let fast = semi_global_filter_with(&guide, &values, scale, &counter, &opts)?;
        let oracle = crisscross_oracle(&guide, &values, scale)?;
        push(
            "oracle-equivalence",
            max_relative_error(fast.as_slice(), oracle.as_slice()),
            EQUIVALENCE_TOL,
        );

        let expected = analytic_edge_evals(height, width);
        push("edge-count", counter.get().abs_diff(expected) as f64, 0.0);

        let mut root_err: f64 = 0.0;
        for root in [RootChoice::Start, RootChoice::End] {
            let other = semi_global_filter_with(
                &guide,
                &values,
                scale,
                &EvalCounter::new(),
                &FilterOptions { root, ..opts },
            )?;
            root_err = root_err.max(max_relative_error(other.as_slice(), fast.as_slice()));
        }
        push("root-invariance", root_err, EQUIVALENCE_TOL);

        let s = normalizer(&guide, scale)?;
        let s_oracle = weight_sum_oracle(&guide, scale)?;
        push(
            "normalizer",
            max_relative_error(s.as_slice(), s_oracle.as_slice()),
            EQUIVALENCE_TOL,
        );

        // normalized block on an input whose projected values are constant
        let constant = Tensor3::filled(3, height, width, 0.5)?;
        let params = BlockParams::seeded(3, seed + 2)?.with_normalized(true);
        let out = semi_global_block_with(&constant, &params, &EvalCounter::new(), &opts)?;
        let psi_const: Vec<f64> = (0..3)
            .map(|r| params.psi.row(r).iter().sum::<f64>() * 0.5)
            .collect();
        let plane = height * width;
        let expected: Vec<f64> = (0..3 * plane).map(|i| psi_const[i / plane] + 0.5).collect();
        push(
            "normalized-constant",
            max_relative_error(out.as_slice(), &expected),
            EXACT_TOL,
        );
    }
    Ok(results)
}

pub fn render_results(results: &[CheckResult]) -> String {
    let mut s = format!(
        "{:<22} {:>9} {:>12} {:>10} {}\n",
        "check", "size", "max_error", "tolerance", "status"
    );
    for r in results {
        s.push_str(&format!(
            "{:<22} {:>9} {:>12.3e} {:>10.1e} {}\n",
            r.name,
            format!("{}x{}", r.height, r.width),
            r.error,
            r.tolerance,
            if r.passed() { "PASS" } else { "FAIL" }
        ));
    }
    s
}
