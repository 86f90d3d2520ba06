//! K-means under the sum-of-squared-errors objective.
//!
//! `fit` runs `n_restarts` independent K-means++ seedings, each refined by
//! Lloyd iterations, and keeps the run with the lowest SSE. Restart `r` draws
//! from `rng::mix(seed, r)`.
//!
//! Reproducibility: assignment (E) steps are evaluated per point in parallel,
//! but every floating-point reduction (centroid sums, SSE totals, K-means++
//! weight totals) is accumulated sequentially in ascending point order, so
//! results are bit-identical at any thread count.

use ndarray::{Array2, ArrayView1};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{self, Rng};

pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITERATIONS: usize = 300;
pub const DEFAULT_REL_TOLERANCE: f64 = 1e-6;
/// Upper bound on `k^n` accepted by [`brute_force_kmeans`].
pub const BRUTE_FORCE_LIMIT: u64 = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub n_restarts: usize,
    pub max_iterations: usize,
    pub rel_tolerance: f64,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            n_restarts: DEFAULT_RESTARTS,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            rel_tolerance: DEFAULT_REL_TOLERANCE,
            seed,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 || self.k > n {
            return Err(Error::InvalidConfig(format!("k must be in [1, {n}], got {}", self.k)));
        }
        if self.n_restarts == 0 {
            return Err(Error::InvalidConfig("n_restarts must be at least 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if self.rel_tolerance.is_nan() || self.rel_tolerance <= 0.0 || self.rel_tolerance.is_infinite() {
            return Err(Error::InvalidConfig(format!(
                "rel_tolerance must be positive, got {}",
                self.rel_tolerance
            )));
        }
        Ok(())
    }

    /// Seed used by restart `r`.
    pub fn restart_seed(&self, r: usize) -> u64 {
        rng::mix(self.seed, r as u64)
    }
}

/// A converged (or iteration-capped) partition. `assignment[i] == j` means
/// point `i` belongs to cluster `j`; every cluster has at least one member
/// and every centroid is the mean of its members.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    pub sse: f64,
    pub iterations: usize,
    pub seed: u64,
    /// SSE after each Lloyd iteration.
    pub sse_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn d(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &j in &self.assignment {
            sizes[j] += 1;
        }
        sizes
    }

    /// Member indices of every cluster, each list ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &j) in self.assignment.iter().enumerate() {
            out[j].push(i);
        }
        out
    }

    pub fn centroid(&self, j: usize) -> ArrayView1<'_, f64> {
        self.centroids.row(j)
    }

    /// Checks that the model can be applied to `points`.
    pub fn check_compatible(&self, points: &EmbeddingMatrix) -> Result<()> {
        if self.n() != points.n() || self.d() != points.d() {
            return Err(Error::Shape(format!(
                "model is {}x{} (n x d), points are {}x{}",
                self.n(),
                self.d(),
                points.n(),
                points.d()
            )));
        }
        if self.centroids.nrows() != self.k {
            return Err(Error::Shape(format!(
                "model declares k={} but has {} centroids",
                self.k,
                self.centroids.nrows()
            )));
        }
        if let Some(i) = self.assignment.iter().position(|&j| j >= self.k) {
            return Err(Error::Shape(format!("point {i} assigned to cluster {} >= k", self.assignment[i])));
        }
        if let Some(j) = self.cluster_sizes().iter().position(|&s| s == 0) {
            return Err(Error::Shape(format!("cluster {j} is empty")));
        }
        Ok(())
    }

    pub fn to_json(&self, config: Option<serde_json::Value>) -> Result<String> {
        let doc = ModelDocument {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            k: self.k,
            n: self.n(),
            d: self.d(),
            seed: self.seed,
            sse: self.sse,
            iterations: self.iterations,
            sse_trace: self.sse_trace.clone(),
            centroids: self.centroids.outer_iter().map(|r| r.to_vec()).collect(),
            assignment: self.assignment.clone(),
            config,
        };
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<ClusterModel> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::MalformedHeader(format!("not a cluster model document: {:?}", doc.format)));
        }
        if doc.version != MODEL_VERSION {
            return Err(Error::MalformedHeader(format!("unsupported model version {}", doc.version)));
        }
        if doc.centroids.len() != doc.k || doc.assignment.len() != doc.n {
            return Err(Error::Shape("centroid or assignment count disagrees with header".into()));
        }
        let mut flat = Vec::with_capacity(doc.k * doc.d);
        for (j, row) in doc.centroids.into_iter().enumerate() {
            if row.len() != doc.d {
                return Err(Error::DimensionMismatch { row: j + 1, expected: doc.d, found: row.len() });
            }
            flat.extend(row);
        }
        let centroids = Array2::from_shape_vec((doc.k, doc.d), flat).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(ClusterModel {
            k: doc.k,
            centroids,
            assignment: doc.assignment,
            sse: doc.sse,
            iterations: doc.iterations,
            seed: doc.seed,
            sse_trace: doc.sse_trace,
        })
    }
}

const MODEL_FORMAT: &str = "fsel-cluster-model";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    k: usize,
    n: usize,
    d: usize,
    seed: u64,
    sse: f64,
    iterations: usize,
    #[serde(default)]
    sse_trace: Vec<f64>,
    centroids: Vec<Vec<f64>>,
    assignment: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
}

#[inline]
pub(crate) fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid and its squared distance; ties go to the lowest index.
#[inline]
fn nearest(point: ArrayView1<'_, f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.outer_iter().enumerate() {
        let d2 = sq_dist(point, c);
        if d2 < best.1 {
            best = (j, d2);
        }
    }
    best
}

fn check_dims(points: &EmbeddingMatrix, centroids: &Array2<f64>) -> Result<()> {
    if centroids.nrows() == 0 {
        return Err(Error::Shape("no centroids".into()));
    }
    if centroids.ncols() != points.d() {
        return Err(Error::Shape(format!(
            "centroids have dimension {}, points have {}",
            centroids.ncols(),
            points.d()
        )));
    }
    Ok(())
}

/// Sum over points of the squared Euclidean distance to the assigned centroid.
pub fn sse(points: &EmbeddingMatrix, centroids: &Array2<f64>, assignment: &[usize]) -> Result<f64> {
    check_dims(points, centroids)?;
    if assignment.len() != points.n() {
        return Err(Error::Shape(format!(
            "assignment has length {}, expected {}",
            assignment.len(),
            points.n()
        )));
    }
    let k = centroids.nrows();
    if let Some(i) = assignment.iter().position(|&j| j >= k) {
        return Err(Error::Shape(format!("point {i} assigned to cluster {} but k = {k}", assignment[i])));
    }
    Ok(sse_unchecked(points, centroids, assignment))
}

fn sse_unchecked(points: &EmbeddingMatrix, centroids: &Array2<f64>, assignment: &[usize]) -> f64 {
    let terms = par::map_range(points.n(), |i| sq_dist(points.row(i), centroids.row(assignment[i])));
    terms.iter().sum()
}

/// K-means++ seeding; returns the chosen row indices in pick order.
pub fn kmeanspp_indices(points: &EmbeddingMatrix, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let distinct = points.distinct_rows();
    if distinct < k {
        return Err(Error::TooFewDistinct { k, distinct });
    }
    let first = rng.random_range(0..points.n());
    kmeanspp_extend(points, vec![first], k, rng)
}

/// Continues K-means++ from already chosen centers until `k` are chosen.
/// Each new center is drawn with probability proportional to its squared
/// distance to the nearest chosen center; points at distance zero are never
/// drawn.
pub fn kmeanspp_extend(
    points: &EmbeddingMatrix,
    mut chosen: Vec<usize>,
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let n = points.n();
    if chosen.is_empty() {
        return Err(Error::InvalidConfig("kmeanspp_extend needs at least one chosen center".into()));
    }
    if let Some(&bad) = chosen.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidConfig(format!("chosen center {bad} out of range")));
    }
    let mut weights = par::map_range(n, |i| {
        chosen
            .iter()
            .map(|&c| sq_dist(points.row(i), points.row(c)))
            .fold(f64::INFINITY, f64::min)
    });
    while chosen.len() < k {
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::TooFewDistinct { k, distinct: chosen.len() });
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
        }
        // rounding can leave `acc` just short of `target`; then the last positive weight wins
        let next = pick.expect("positive total implies a positive weight");
        chosen.push(next);
        let center = points.row(next);
        let updated = par::map_range(n, |i| weights[i].min(sq_dist(points.row(i), center)));
        weights = updated;
    }
    Ok(chosen)
}

pub fn kmeanspp_init(points: &EmbeddingMatrix, k: usize, rng: &mut Rng) -> Result<Array2<f64>> {
    let idx = kmeanspp_indices(points, k, rng)?;
    Ok(points.data().select(ndarray::Axis(0), &idx))
}

fn repair_empty(assignment: &mut [usize], dist2: &mut [f64], k: usize) {
    let mut sizes = vec![0usize; k];
    for &j in assignment.iter() {
        sizes[j] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        // farthest point (from its own centroid) among clusters that can spare one
        let mut donor: Option<usize> = None;
        for i in 0..assignment.len() {
            if sizes[assignment[i]] < 2 {
                continue;
            }
            if donor.is_none_or(|b| dist2[i] > dist2[b]) {
                donor = Some(i);
            }
        }
        // n >= k guarantees a donor exists
        let i = donor.expect("some cluster has at least two members");
        sizes[assignment[i]] -= 1;
        assignment[i] = empty;
        sizes[empty] = 1;
        dist2[i] = 0.0;
    }
}

fn update_centroids(points: &EmbeddingMatrix, assignment: &[usize], k: usize) -> Array2<f64> {
    let d = points.d();
    let mut sums = Array2::<f64>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for (i, &j) in assignment.iter().enumerate() {
        counts[j] += 1;
        let mut row = sums.row_mut(j);
        row += &points.row(i);
    }
    for (j, mut row) in sums.outer_iter_mut().enumerate() {
        let c = counts[j] as f64;
        row.mapv_inplace(|v| v / c);
    }
    sums
}

/// Lloyd iterations from the given initial centroids.
///
/// Stops on an assignment fixpoint, when the relative SSE decrease falls
/// below `rel_tolerance`, or after `max_iterations` update steps. Clusters
/// that empty out are refilled with the point farthest from its centroid.
pub fn lloyd(
    points: &EmbeddingMatrix,
    init: &Array2<f64>,
    max_iterations: usize,
    rel_tolerance: f64,
) -> Result<ClusterModel> {
    check_dims(points, init)?;
    let k = init.nrows();
    if k > points.n() {
        return Err(Error::InvalidConfig(format!("k = {k} exceeds n = {}", points.n())));
    }
    if max_iterations == 0 {
        return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
    }
    let mut centroids = init.clone();
    let mut assignment: Vec<usize> = Vec::new();
    let mut trace: Vec<f64> = Vec::new();

    for _ in 0..max_iterations {
        let nearest_all = par::map_range(points.n(), |i| nearest(points.row(i), &centroids));
        let (mut next, mut dist2): (Vec<usize>, Vec<f64>) = nearest_all.into_iter().unzip();
        if next == assignment {
            break;
        }
        repair_empty(&mut next, &mut dist2, k);
        centroids = update_centroids(points, &next, k);
        let cost = sse_unchecked(points, &centroids, &next);
        assignment = next;
        let prev = trace.last().copied();
        trace.push(cost);
        if let Some(prev) = prev {
            if prev <= 0.0 || (prev - cost) < rel_tolerance * prev {
                break;
            }
        }
    }

    Ok(ClusterModel {
        k,
        centroids,
        assignment,
        sse: *trace.last().expect("at least one iteration runs"),
        iterations: trace.len(),
        seed: 0,
        sse_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub seed: u64,
    pub sse: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: ClusterModel,
    pub best_restart: usize,
    pub restarts: Vec<RestartSummary>,
}

/// One K-means++ + Lloyd run with the given seed.
pub fn fit_once(points: &EmbeddingMatrix, config: &KMeansConfig, seed: u64) -> Result<ClusterModel> {
    let mut rng = rng::rng_from_seed(seed);
    let init = kmeanspp_init(points, config.k, &mut rng)?;
    let mut model = lloyd(points, &init, config.max_iterations, config.rel_tolerance)?;
    model.seed = seed;
    Ok(model)
}

pub fn fit(points: &EmbeddingMatrix, config: &KMeansConfig) -> Result<ClusterModel> {
    fit_with_report(points, config).map(|r| r.model)
}

/// Like [`fit`], also reporting every restart's SSE.
pub fn fit_with_report(points: &EmbeddingMatrix, config: &KMeansConfig) -> Result<FitReport> {
    config.validate(points.n())?;
    let distinct = points.distinct_rows();
    if distinct < config.k {
        return Err(Error::TooFewDistinct { k: config.k, distinct });
    }
    let runs = par::map_range(config.n_restarts, |r| fit_once(points, config, config.restart_seed(r)));
    let mut best: Option<(usize, ClusterModel)> = None;
    let mut restarts = Vec::with_capacity(runs.len());
    for (r, run) in runs.into_iter().enumerate() {
        let model = run?;
        restarts.push(RestartSummary {
            restart: r,
            seed: model.seed,
            sse: model.sse,
            iterations: model.iterations,
        });
        if best.as_ref().is_none_or(|(_, b)| model.sse < b.sse) {
            best = Some((r, model));
        }
    }
    let (best_restart, model) = best.expect("n_restarts >= 1");
    Ok(FitReport { model, best_restart, restarts })
}

/// Exhaustive search over all partitions of the points into exactly `k`
/// non-empty clusters. Refuses inputs with `k^n` above [`BRUTE_FORCE_LIMIT`].
pub fn brute_force_kmeans(points: &EmbeddingMatrix, k: usize) -> Result<ClusterModel> {
    let n = points.n();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("k must be in [1, {n}], got {k}")));
    }
    let space = (k as u64).checked_pow(n as u32).filter(|&s| s <= BRUTE_FORCE_LIMIT);
    if space.is_none() {
        return Err(Error::TooLarge(format!("k^n = {k}^{n} exceeds {BRUTE_FORCE_LIMIT}")));
    }

    // restricted growth strings: labels[0] = 0, labels[i] <= 1 + max(labels[..i])
    let mut labels = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>, Array2<f64>)> = None;
    let mut evaluate = |labels: &[usize]| {
        let centroids = update_centroids(points, labels, k);
        let cost: f64 = (0..n).map(|i| sq_dist(points.row(i), centroids.row(labels[i]))).sum();
        if best.as_ref().is_none_or(|(b, _, _)| cost < *b) {
            best = Some((cost, labels.to_vec(), centroids));
        }
    };
    enumerate_partitions(&mut labels, 1, 1, k, &mut evaluate);

    let (cost, assignment, centroids) = best.expect("k <= n admits a partition");
    Ok(ClusterModel {
        k,
        centroids,
        assignment,
        sse: cost,
        iterations: 0,
        seed: 0,
        sse_trace: Vec::new(),
    })
}

fn enumerate_partitions<F: FnMut(&[usize])>(labels: &mut [usize], pos: usize, used: usize, k: usize, f: &mut F) {
    let n = labels.len();
    if pos == n {
        if used == k {
            f(labels);
        }
        return;
    }
    // not enough positions left to open the remaining blocks
    if k - used > n - pos {
        return;
    }
    let limit = (used + 1).min(k);
    for label in 0..limit {
        labels[pos] = label;
        enumerate_partitions(labels, pos + 1, used.max(label + 1), k, f);
    }
}
