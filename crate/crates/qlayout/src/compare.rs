//! Merges bundles of one experiment run under different seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{spearman, Bundle};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub runs: usize,
    /// Mean over runs of each run's mean loss change.
    pub mean_delta: f64,
    pub mean_abs_delta: f64,
    pub mean_bound: f64,
    /// Runs where this algorithm's mean loss change is below the reference's.
    pub wins: usize,
    pub losses: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub experiment_key: String,
    pub reference: String,
    pub seeds: Vec<u64>,
    pub algorithms: Vec<AlgorithmSummary>,
    /// Spearman correlation of bound value vs mean loss change, per run.
    pub rank_correlation: Vec<Option<f64>>,
    /// The same over every (run, algorithm) point.
    pub pooled_rank_correlation: Option<f64>,
}

/// Compares algorithms across bundles. Wins and losses are counted against
/// `reference` (an algorithm name present in every bundle).
pub fn compare(bundles: &[Bundle], reference: &str) -> Result<Comparison> {
    let first = bundles
        .first()
        .ok_or_else(|| Error::Config("compare needs at least one bundle".into()))?;
    for b in bundles {
        if b.experiment_key != first.experiment_key {
            return Err(Error::ExperimentMismatch(format!(
                "key {} vs {}",
                &b.experiment_key[..12],
                &first.experiment_key[..12]
            )));
        }
        if b.row(reference).is_none() {
            return Err(Error::Config(format!(
                "reference algorithm `{reference}` missing from a bundle"
            )));
        }
    }
    let mut acc: BTreeMap<&str, AlgorithmSummary> = BTreeMap::new();
    let mut order = Vec::new();
    for b in bundles {
        let ref_mean = b.row(reference).expect("checked").mean_delta;
        for r in &b.table {
            let e = acc.entry(&r.algorithm).or_insert_with(|| {
                order.push(r.algorithm.clone());
                AlgorithmSummary {
                    algorithm: r.algorithm.clone(),
                    runs: 0,
                    mean_delta: 0.0,
                    mean_abs_delta: 0.0,
                    mean_bound: 0.0,
                    wins: 0,
                    losses: 0,
                }
            });
            e.runs += 1;
            e.mean_delta += r.mean_delta;
            e.mean_abs_delta += r.mean_abs_delta;
            e.mean_bound += r.bound_value;
            if r.algorithm != reference {
                if r.mean_delta < ref_mean {
                    e.wins += 1;
                } else if r.mean_delta > ref_mean {
                    e.losses += 1;
                }
            }
        }
    }
    let algorithms = order
        .iter()
        .map(|name| {
            let mut s = acc.remove(name.as_str()).expect("inserted");
            let n = s.runs as f64;
            s.mean_delta /= n;
            s.mean_abs_delta /= n;
            s.mean_bound /= n;
            s
        })
        .collect();
    let (bounds, means): (Vec<f64>, Vec<f64>) = bundles
        .iter()
        .flat_map(|b| b.table.iter().map(|r| (r.bound_value, r.mean_delta)))
        .unzip();
    Ok(Comparison {
        experiment_key: first.experiment_key.clone(),
        reference: reference.into(),
        seeds: bundles.iter().map(|b| b.config.seed).collect(),
        algorithms,
        rank_correlation: bundles.iter().map(|b| b.bound_rank_correlation).collect(),
        pooled_rank_correlation: spearman(&bounds, &means),
    })
}

pub fn summary(c: &Comparison) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "runs {} (seeds {:?}), reference {}",
        c.seeds.len(),
        c.seeds,
        c.reference
    );
    let _ = writeln!(
        s,
        "\n{:<18} {:>13} {:>11} {:>11} {:>5} {:>6}",
        "algorithm", "mean dloss", "mean |d|", "bound", "wins", "losses"
    );
    for a in &c.algorithms {
        let _ = writeln!(
            s,
            "{:<18} {:>+13.4e} {:>11.3e} {:>11.3e} {:>5} {:>6}",
            a.algorithm, a.mean_delta, a.mean_abs_delta, a.mean_bound, a.wins, a.losses
        );
    }
    if let Some(rho) = c.pooled_rank_correlation {
        let _ = writeln!(s, "\npooled rank correlation (bound vs mean dloss): {rho:+.3}");
    }
    s
}

/// One row per (run, algorithm): the scatter of bound value against loss change.
pub fn write_scatter_csv(path: &Path, bundles: &[Bundle]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "seed",
        "algorithm",
        "bound_value",
        "mean_delta",
        "std_delta",
        "mean_abs_delta",
    ])?;
    for b in bundles {
        for r in &b.table {
            w.write_record([
                b.config.seed.to_string(),
                r.algorithm.clone(),
                format!("{:?}", r.bound_value),
                format!("{:?}", r.mean_delta),
                format!("{:?}", r.std_delta),
                format!("{:?}", r.mean_abs_delta),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
