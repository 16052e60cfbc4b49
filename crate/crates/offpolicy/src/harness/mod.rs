//! Experiment orchestration: seeding, result tables and CSV emission.
//!
//! Every runner derives one random stream per run or repetition from a base
//! seed, so results do not depend on scheduling or thread count. Tables are
//! assembled in index order before they are written.

mod control_runs;
mod counterexamples;
mod fixed_points;
mod learning;
mod solve;

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{builders, MdpDocument, Problem};

pub use control_runs::{run_control, ControlRow, ControlSpec};
pub use counterexamples::{
    aliased_contrast, baird_expected, kolter_sweep, run_counterexample, tde_bias, AliasedContrast, BairdCurve,
    Counterexample, CounterexampleParams, CounterexampleRow, KolterPoint, KolterSweep, TdeBias, BAIRD_ALGORITHMS,
};
pub use fixed_points::{run_fixed_point_study, FixedPointCell, FixedPointSpec, FixedPointTable, Objective};
pub use learning::{run_learning_curve, ExperimentSpec};
pub use solve::{solve, SolveObjective, SolveReport, SolveSpec};

/// Weight norm above which a learning run is flagged as diverged.
pub const DIVERGENCE_NORM: f64 = 1e8;

/// Stream index reserved for randomness shared by all runs of an experiment.
pub const SHARED_STREAM: u64 = u64::MAX;

/// Builds a problem from a built-in name such as `random_walk:19`, or from
/// a path ending in `.json` holding an [`MdpDocument`].
pub fn load_problem(env: &str) -> Result<Problem> {
    if !env.ends_with(".json") {
        return builders::by_name(env);
    }
    let text =
        std::fs::read_to_string(env).map_err(|e| Error::InvalidParameter(format!("cannot read '{env}': {e}")))?;
    let doc = MdpDocument::from_json(&text)?;
    let (target, behavior) = doc.policies()?;
    Ok(Problem { name: env.to_string(), mdp: doc.to_mdp()?, target, behavior, features: None })
}

/// Independent random stream for one run: the base seed selects the key and
/// the run index selects the ChaCha stream.
pub fn seed_stream(base_seed: u64, run_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(run_index);
    rng
}

/// One long-format measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    /// Run index.
    pub run: usize,
    /// Step at which the value was recorded.
    pub step: usize,
    /// Metric name.
    pub metric: String,
    /// Measured value; `None` marks a diverged run.
    pub value: Option<f64>,
}

/// Header of long-format result tables.
pub const RESULT_HEADER: &str = "run,step,metric,value";

/// Header of fixed-point grids.
pub const FIXED_POINT_HEADER: &str = "representation,objective,weighting,eval_weighting,value,normalized";

/// Header of fixed-point standard-error tables.
pub const FIXED_POINT_STATS_HEADER: &str =
    "representation,objective,weighting,eval_weighting,n,se_value,n_normalized,se_normalized";

/// Header of control tables.
pub const CONTROL_HEADER: &str = "run,step,max_q_error_vs_oracle,return_estimate";

/// Header of counterexample tables.
pub const COUNTEREXAMPLE_HEADER: &str = "x,series,value";

/// Formats a real with 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn format_optional(v: Option<f64>, missing: &str) -> String {
    match v {
        Some(x) if x.is_finite() => format_real(x),
        _ => missing.to_string(),
    }
}

fn write_table<W: Write>(out: W, header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header.split(','))?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a long-format table.
pub fn write_results<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    write_table(
        out,
        RESULT_HEADER,
        rows.iter().map(|r| {
            vec![r.run.to_string(), r.step.to_string(), r.metric.clone(), format_optional(r.value, "diverged")]
        }),
    )
}

/// Writes the fixed-point grid followed by its summary rows.
pub fn write_fixed_points<W: Write>(out: W, table: &FixedPointTable) -> Result<()> {
    let cells = table.cells.iter().map(|c| {
        vec![
            c.representation.clone(),
            c.objective.label().into(),
            c.weighting.label().into(),
            c.eval_weighting.label().into(),
            format_optional(c.mean_value, "skipped"),
            format_optional(c.mean_normalized, "degenerate"),
        ]
    });
    let summary = table.summary.iter().flat_map(|s| {
        [("skipped_singular", s.skipped_singular), ("degenerate_table", s.degenerate)].map(|(what, n)| {
            vec![s.representation.clone(), "summary".into(), what.into(), "all".into(), n.to_string(), n.to_string()]
        })
    });
    write_table(out, FIXED_POINT_HEADER, cells.chain(summary))
}

/// Writes standard errors of the fixed-point grid.
pub fn write_fixed_point_stats<W: Write>(out: W, table: &FixedPointTable) -> Result<()> {
    write_table(
        out,
        FIXED_POINT_STATS_HEADER,
        table.cells.iter().map(|c| {
            vec![
                c.representation.clone(),
                c.objective.label().into(),
                c.weighting.label().into(),
                c.eval_weighting.label().into(),
                c.n.to_string(),
                format_optional(c.se_value, "skipped"),
                c.n_normalized.to_string(),
                format_optional(c.se_normalized, "degenerate"),
            ]
        }),
    )
}

/// Writes a control table.
pub fn write_control<W: Write>(out: W, rows: &[ControlRow]) -> Result<()> {
    write_table(
        out,
        CONTROL_HEADER,
        rows.iter().map(|r| {
            vec![
                r.run.to_string(),
                r.step.to_string(),
                format_optional(r.max_q_error_vs_oracle, "diverged"),
                format_optional(r.return_estimate, "diverged"),
            ]
        }),
    )
}

/// Writes a counterexample table.
pub fn write_counterexample<W: Write>(out: W, rows: &[CounterexampleRow]) -> Result<()> {
    write_table(
        out,
        COUNTEREXAMPLE_HEADER,
        rows.iter().map(|r| vec![r.x.clone(), r.series.clone(), format_optional(r.value, "diverged")]),
    )
}

/// Writes bytes produced by `fill` to `path`, or to standard output when `path` is `None`.
pub fn emit(path: Option<&Path>, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    match path {
        Some(p) => std::fs::write(p, buf)?,
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(())
}

/// Maps `f` over `0..n` in parallel when the `parallel` feature is enabled;
/// the output is in index order either way.
pub(crate) fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn identical_inputs_give_identical_streams() {
        let a: Vec<u64> = (0..8)
            .map({
                let mut r = seed_stream(42, 3);
                move |_| r.random()
            })
            .collect();
        let b: Vec<u64> = (0..8)
            .map({
                let mut r = seed_stream(42, 3);
                move |_| r.random()
            })
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_runs_give_distinct_streams() {
        let mut r0 = seed_stream(42, 0);
        let mut r1 = seed_stream(42, 1);
        let a: Vec<u64> = (0..8).map(|_| r0.random()).collect();
        let b: Vec<u64> = (0..8).map(|_| r1.random()).collect();
        assert_ne!(a, b);
    }

    #[test]
    fn distinct_seeds_give_distinct_streams() {
        let a: u64 = seed_stream(1, 0).random();
        let b: u64 = seed_stream(2, 0).random();
        assert_ne!(a, b);
    }

    #[test]
    fn streams_are_uncorrelated() {
        let mut r0 = seed_stream(7, 0);
        let mut r1 = seed_stream(7, 1);
        let n = 20_000;
        let (xs, ys): (Vec<f64>, Vec<f64>) = (0..n).map(|_| (r0.random::<f64>(), r1.random::<f64>())).unzip();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n as f64;
        // Sample correlation of independent uniforms has standard deviation 1/sqrt(n).
        assert!((cov / (1.0 / 12.0)).abs() < 4.0 / (n as f64).sqrt());
    }

    fn rows() -> Vec<ResultRow> {
        vec![
            ResultRow { run: 0, step: 0, metric: "ve".into(), value: Some(0.1) },
            ResultRow { run: 0, step: 10, metric: "ve".into(), value: Some(1.0 / 3.0) },
            ResultRow { run: 1, step: 10, metric: "ve".into(), value: None },
        ]
    }

    #[test]
    fn result_csv_has_exact_header_and_lf() {
        let mut buf = Vec::new();
        write_results(&mut buf, &rows()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("run,step,metric,value\n"));
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().count(), 4);
        assert!(text.ends_with("1,10,ve,diverged\n"));
    }

    #[test]
    fn result_csv_round_trips_reals() {
        let mut buf = Vec::new();
        write_results(&mut buf, &rows()).unwrap();
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        let parsed: Vec<f64> = rdr.records().filter_map(|r| r.unwrap()[3].parse::<f64>().ok()).collect();
        assert_eq!(parsed, vec![0.1, 1.0 / 3.0]);
    }

    #[test]
    fn reals_carry_seventeen_significant_digits() {
        let s = format_real(1.0 / 3.0);
        let mantissa = s.split('e').next().unwrap().replace(['.', '-'], "");
        assert_eq!(mantissa.len(), 17);
        assert_eq!(s.parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn map_indexed_preserves_order() {
        assert_eq!(map_indexed(100, |i| i * 2), (0..100).map(|i| i * 2).collect::<Vec<_>>());
    }
}
