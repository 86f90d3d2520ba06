//! Label-free evaluation: synthetic mixtures, representativeness proxies, and
//! multi-trial strategy comparison.
//!
//! The proxies stand in for downstream task scores. Facility-location cost is
//! the total squared distance from every point to its nearest selected
//! instance; coverage radius is the largest such (plain) distance; diversity
//! is the smallest distance between two selected instances.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::kmeans::{sq_dist, ClusterModel};
use crate::par;
use crate::rng;
use crate::selector::{self, InCluster, SelectionSpec, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixtureSpec {
    pub n: usize,
    pub d: usize,
    pub components: usize,
    /// Distance between neighbouring component centers, in units of the
    /// (unit) per-coordinate standard deviation.
    pub separation: f64,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 || self.n < self.components {
            return Err(Error::InvalidConfig(format!(
                "need n >= components >= 1, got n={} components={}",
                self.n, self.components
            )));
        }
        if self.d == 0 {
            return Err(Error::InvalidConfig("d must be at least 1".into()));
        }
        if self.separation.is_nan() || self.separation <= 0.0 || self.separation.is_infinite() {
            return Err(Error::InvalidConfig(format!("separation must be positive, got {}", self.separation)));
        }
        Ok(())
    }
}

/// Component centers on a scaled integer lattice: component `c` sits at the
/// base-`b` digits of `c` times `separation`, with `b` the smallest base such
/// that `b^d >= components`. Any two centers are at least `separation` apart,
/// and each center has a neighbour at exactly that distance.
pub fn component_centers(spec: &MixtureSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let mut base = 2usize;
    while (base as f64).powi(spec.d.min(64) as i32) < spec.components as f64 {
        base += 1;
    }
    let mut centers = Array2::zeros((spec.components, spec.d));
    for c in 0..spec.components {
        let mut rest = c;
        for axis in 0..spec.d {
            centers[[c, axis]] = (rest % base) as f64 * spec.separation;
            rest /= base;
        }
    }
    Ok(centers)
}

/// Isotropic unit-variance Gaussian blobs with balanced sizes (the remainder
/// goes to the earliest components). Points are laid out component by
/// component; the returned labels give each point's component.
pub fn generate_mixture(spec: &MixtureSpec) -> Result<(EmbeddingMatrix, Vec<usize>)> {
    let centers = component_centers(spec)?;
    let mut rng = rng::rng_from_seed(spec.seed);
    let base = spec.n / spec.components;
    let extra = spec.n % spec.components;
    let mut data = Array2::zeros((spec.n, spec.d));
    let mut labels = Vec::with_capacity(spec.n);
    let mut row = 0;
    for c in 0..spec.components {
        let count = base + usize::from(c < extra);
        for _ in 0..count {
            for axis in 0..spec.d {
                let z: f64 = StandardNormal.sample(&mut rng);
                data[[row, axis]] = centers[[c, axis]] + z;
            }
            labels.push(c);
            row += 1;
        }
    }
    Ok((EmbeddingMatrix::new(data, None)?, labels))
}

fn check_selection(points: &EmbeddingMatrix, indices: &[usize], min_len: usize) -> Result<()> {
    if indices.len() < min_len {
        return Err(Error::InvalidSelection(format!(
            "need at least {min_len} selected indices, got {}",
            indices.len()
        )));
    }
    let mut seen = vec![false; points.n()];
    for &i in indices {
        if i >= points.n() {
            return Err(Error::InvalidSelection(format!("index {i} out of range for n = {}", points.n())));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidSelection(format!("index {i} selected twice")));
        }
    }
    Ok(())
}

fn nearest_selected_sq(points: &EmbeddingMatrix, indices: &[usize]) -> Vec<f64> {
    par::map_range(points.n(), |i| {
        indices
            .iter()
            .map(|&s| sq_dist(points.row(i), points.row(s)))
            .fold(f64::INFINITY, f64::min)
    })
}

/// Sum over all points of the squared distance to the nearest selected point.
pub fn facility_location_cost(points: &EmbeddingMatrix, indices: &[usize]) -> Result<f64> {
    check_selection(points, indices, 1)?;
    Ok(nearest_selected_sq(points, indices).iter().sum())
}

/// Largest distance from any point to its nearest selected point.
pub fn coverage_radius(points: &EmbeddingMatrix, indices: &[usize]) -> Result<f64> {
    check_selection(points, indices, 1)?;
    Ok(nearest_selected_sq(points, indices).into_iter().fold(0.0, f64::max).sqrt())
}

/// Smallest pairwise distance among the selected points.
pub fn diversity(points: &EmbeddingMatrix, indices: &[usize]) -> Result<f64> {
    check_selection(points, indices, 2)?;
    let mut best = f64::INFINITY;
    for (a, &i) in indices.iter().enumerate() {
        for &j in &indices[a + 1..] {
            best = best.min(sq_dist(points.row(i), points.row(j)));
        }
    }
    Ok(best.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    FacilityLocation,
    CoverageRadius,
    Diversity,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::FacilityLocation, Metric::CoverageRadius, Metric::Diversity];

    pub fn name(self) -> &'static str {
        match self {
            Metric::FacilityLocation => "facility-location",
            Metric::CoverageRadius => "coverage-radius",
            Metric::Diversity => "diversity",
        }
    }

    pub fn score(self, points: &EmbeddingMatrix, indices: &[usize]) -> Result<f64> {
        match self {
            Metric::FacilityLocation => facility_location_cost(points, indices),
            Metric::CoverageRadius => coverage_radius(points, indices),
            Metric::Diversity => diversity(points, indices),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "unknown metric {s:?}; expected facility-location, coverage-radius or diversity"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialReport {
    pub strategy: Strategy,
    pub metric_name: String,
    pub trials: usize,
    pub mean: f64,
    /// Population standard deviation (divides by the trial count).
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub per_trial: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl TrialReport {
    pub fn from_scores(strategy: Strategy, metric: Metric, seeds: Vec<u64>, per_trial: Vec<f64>) -> Result<Self> {
        if per_trial.is_empty() || seeds.len() != per_trial.len() {
            return Err(Error::InvalidConfig("a report needs one seed per trial and at least one trial".into()));
        }
        let (mean, std) = mean_std(&per_trial);
        let min = per_trial.iter().copied().fold(f64::INFINITY, f64::min);
        let max = per_trial.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(TrialReport {
            strategy,
            metric_name: metric.name().to_string(),
            trials: per_trial.len(),
            mean: mean.clamp(min, max),
            std,
            min,
            max,
            per_trial,
            seeds,
        })
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let t = values.len() as f64;
    let mean = values.iter().sum::<f64>() / t;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t;
    (mean, var.sqrt())
}

/// Seed of trial `t` under `base_seed`.
pub fn trial_seed(base_seed: u64, t: usize) -> u64 {
    rng::mix(base_seed, t as u64)
}

/// Runs every strategy `trials` times with seeds `trial_seed(base_seed, t)`
/// and scores each selection. Reports come back in `strategies` order.
pub fn compare_strategies(
    points: &EmbeddingMatrix,
    strategies: &[Strategy],
    k: usize,
    trials: usize,
    base_seed: u64,
    metric: Metric,
) -> Result<Vec<TrialReport>> {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    if strategies.is_empty() {
        return Err(Error::InvalidConfig("no strategies to compare".into()));
    }
    let jobs: Vec<(Strategy, usize)> =
        strategies.iter().flat_map(|&s| (0..trials).map(move |t| (s, t))).collect();
    let scores = par::map_slice(&jobs, |&(strategy, t)| -> Result<f64> {
        let spec = SelectionSpec::new(strategy, k, trial_seed(base_seed, t));
        let result = selector::select(points, &spec)?;
        metric.score(points, &result.indices)
    });
    collect_reports(strategies, trials, base_seed, metric, scores)
}

/// Same protocol with the clustering held fixed: only the in-cluster choice
/// and its seed vary between trials.
pub fn compare_in_cluster(
    points: &EmbeddingMatrix,
    model: &ClusterModel,
    modes: &[InCluster],
    trials: usize,
    base_seed: u64,
    metric: Metric,
) -> Result<Vec<TrialReport>> {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    model.check_compatible(points)?;
    let jobs: Vec<(InCluster, usize)> = modes.iter().flat_map(|&m| (0..trials).map(move |t| (m, t))).collect();
    let scores = par::map_slice(&jobs, |&(mode, t)| -> Result<f64> {
        let result = selector::select_with_model(points, model, mode, trial_seed(base_seed, t))?;
        metric.score(points, &result.indices)
    });
    let strategies: Vec<Strategy> = modes.iter().map(|m| m.strategy()).collect();
    collect_reports(&strategies, trials, base_seed, metric, scores)
}

fn collect_reports(
    strategies: &[Strategy],
    trials: usize,
    base_seed: u64,
    metric: Metric,
    scores: Vec<Result<f64>>,
) -> Result<Vec<TrialReport>> {
    let mut scores = scores.into_iter();
    strategies
        .iter()
        .map(|&strategy| {
            let per_trial = scores.by_ref().take(trials).collect::<Result<Vec<f64>>>()?;
            let seeds = (0..trials).map(|t| trial_seed(base_seed, t)).collect();
            TrialReport::from_scores(strategy, metric, seeds, per_trial)
        })
        .collect()
}

/// CSV with columns `strategy,metric,trial,seed,value`, one row per trial.
/// `preamble` lines are written first as `# ` comments.
pub fn write_csv<W: Write>(reports: &[TrialReport], preamble: &[String], out: W) -> Result<()> {
    let mut out = out;
    for line in preamble {
        writeln!(out, "# {line}").map_err(|e| Error::io("<csv>", e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["strategy", "metric", "trial", "seed", "value"])?;
    for r in reports {
        for (t, (value, seed)) in r.per_trial.iter().zip(&r.seeds).enumerate() {
            w.write_record([
                r.strategy.name().to_string(),
                r.metric_name.clone(),
                t.to_string(),
                seed.to_string(),
                format!("{value:?}"),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Human-readable summary table, one line per strategy.
pub fn render_summary(reports: &[TrialReport]) -> String {
    let mut out = format!(
        "{:<16} {:<18} {:>6} {:>14} {:>12} {:>14} {:>14}\n",
        "strategy", "metric", "trials", "mean", "std", "min", "max"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<16} {:<18} {:>6} {:>14.6} {:>12.6} {:>14.6} {:>14.6}\n",
            r.strategy.name(),
            r.metric_name,
            r.trials,
            r.mean,
            r.std,
            r.min,
            r.max
        ));
    }
    out
}
