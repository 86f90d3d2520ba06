//! Budgeted selection strategies.
//!
//! | strategy          | what is picked                                              |
//! |-------------------|-------------------------------------------------------------|
//! | `random`          | `k` points uniformly without replacement                    |
//! | `ic-random`       | `k` points uniformly from one cluster of a `k`-means fit     |
//! | `kmeans-closest`  | per cluster, the member nearest its centroid                |
//! | `kmeans-random`   | per cluster, a uniformly random member                      |
//! | `kmeans-farthest` | per cluster, the member farthest from its centroid          |
//!
//! Distance ties inside a cluster go to the lowest instance index. The
//! clustering for the `kmeans-*` and `ic-random` strategies is `fit` with
//! default settings and `SelectionSpec::seed`; any further sampling draws from the
//! independent stream `rng::mix(seed, SELECT_STREAM)`.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::kmeans::{self, sq_dist, ClusterModel, KMeansConfig};
use crate::rng::{self, Rng, SELECT_STREAM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Random,
    IcRandom,
    KmeansClosest,
    KmeansRandom,
    KmeansFarthest,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Random,
        Strategy::IcRandom,
        Strategy::KmeansClosest,
        Strategy::KmeansRandom,
        Strategy::KmeansFarthest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::IcRandom => "ic-random",
            Strategy::KmeansClosest => "kmeans-closest",
            Strategy::KmeansRandom => "kmeans-random",
            Strategy::KmeansFarthest => "kmeans-farthest",
        }
    }

    pub fn in_cluster(self) -> Option<InCluster> {
        match self {
            Strategy::KmeansClosest => Some(InCluster::Closest),
            Strategy::KmeansRandom => Some(InCluster::Random),
            Strategy::KmeansFarthest => Some(InCluster::Farthest),
            Strategy::Random | Strategy::IcRandom => None,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Strategy::ALL.iter().map(|s| s.name()).collect();
                Error::InvalidConfig(format!("unknown strategy {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Which member of each cluster to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InCluster {
    Closest,
    Random,
    Farthest,
}

impl InCluster {
    pub fn strategy(self) -> Strategy {
        match self {
            InCluster::Closest => Strategy::KmeansClosest,
            InCluster::Random => Strategy::KmeansRandom,
            InCluster::Farthest => Strategy::KmeansFarthest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionSpec {
    pub strategy: Strategy,
    pub k: usize,
    pub seed: u64,
}

impl SelectionSpec {
    pub fn new(strategy: Strategy, k: usize, seed: u64) -> Self {
        SelectionSpec { strategy, k, seed }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 || self.k > n {
            return Err(Error::InvalidConfig(format!("budget k must be in [1, {n}], got {}", self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub cluster: usize,
    /// Euclidean distance to the cluster centroid.
    pub distance: f64,
}

/// How the clustering behind a selection was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub best_restart: Option<usize>,
    pub model_seed: u64,
    pub sse: f64,
    pub iterations: usize,
    pub restart_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    /// Parallel to `indices`; `None` for [`Strategy::Random`].
    pub provenance: Option<Vec<Provenance>>,
    pub spec: SelectionSpec,
    pub fit: Option<FitSummary>,
}

impl SelectionResult {
    /// One index per line, in selection order.
    pub fn to_lines(&self) -> String {
        let mut out = String::with_capacity(self.indices.len() * 6);
        for i in &self.indices {
            out.push_str(&i.to_string());
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self, points: &EmbeddingMatrix, config: Option<serde_json::Value>) -> Result<String> {
        let ids = points.ids();
        let records = self.provenance.as_ref().map(|prov| {
            self.indices
                .iter()
                .zip(prov)
                .map(|(&index, p)| ProvenanceRecord {
                    index,
                    id: ids.map(|ids| ids[index].clone()),
                    cluster: p.cluster,
                    distance: p.distance,
                })
                .collect()
        });
        let doc = SelectionDocument {
            format: SELECTION_FORMAT.into(),
            version: SELECTION_VERSION,
            spec: self.spec,
            n: points.n(),
            indices: self.indices.clone(),
            ids: ids.map(|ids| self.indices.iter().map(|&i| ids[i].clone()).collect()),
            provenance: records,
            fit: self.fit.clone(),
            config,
        };
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    /// Reads back the indices and spec of a serialized selection.
    pub fn from_json(text: &str) -> Result<SelectionResult> {
        let doc: SelectionDocument = serde_json::from_str(text)?;
        if doc.format != SELECTION_FORMAT || doc.version != SELECTION_VERSION {
            return Err(Error::MalformedHeader(format!(
                "not a selection document: {:?} v{}",
                doc.format, doc.version
            )));
        }
        Ok(SelectionResult {
            provenance: doc
                .provenance
                .map(|recs| recs.iter().map(|r| Provenance { cluster: r.cluster, distance: r.distance }).collect()),
            indices: doc.indices,
            spec: doc.spec,
            fit: doc.fit,
        })
    }
}

const SELECTION_FORMAT: &str = "fsel-selection";
const SELECTION_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ProvenanceRecord {
    index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    cluster: usize,
    distance: f64,
}

#[derive(Serialize, Deserialize)]
struct SelectionDocument {
    format: String,
    version: u32,
    spec: SelectionSpec,
    n: usize,
    indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Vec<ProvenanceRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fit: Option<FitSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
}

fn selection_rng(seed: u64) -> Rng {
    rng::rng_from_seed(rng::mix(seed, SELECT_STREAM))
}

fn distance_to_centroid(points: &EmbeddingMatrix, model: &ClusterModel, i: usize) -> f64 {
    sq_dist(points.row(i), model.centroid(model.assignment[i])).sqrt()
}

pub fn select(points: &EmbeddingMatrix, spec: &SelectionSpec) -> Result<SelectionResult> {
    spec.validate(points.n())?;
    match spec.strategy {
        Strategy::Random => {
            let mut rng = selection_rng(spec.seed);
            let indices = index::sample(&mut rng, points.n(), spec.k).into_vec();
            Ok(SelectionResult { indices, provenance: None, spec: *spec, fit: None })
        }
        Strategy::IcRandom => {
            let report = kmeans::fit_with_report(points, &KMeansConfig::new(spec.k, spec.seed))?;
            let mut result = ic_random_with_model(points, &report.model, spec.k, spec.seed)?;
            result.fit = Some(summary(&report));
            Ok(result)
        }
        Strategy::KmeansClosest | Strategy::KmeansRandom | Strategy::KmeansFarthest => {
            let report = kmeans::fit_with_report(points, &KMeansConfig::new(spec.k, spec.seed))?;
            let mode = spec.strategy.in_cluster().expect("kmeans strategy");
            let mut result = select_with_model(points, &report.model, mode, spec.seed)?;
            result.fit = Some(summary(&report));
            Ok(result)
        }
    }
}

fn summary(report: &kmeans::FitReport) -> FitSummary {
    FitSummary {
        best_restart: Some(report.best_restart),
        model_seed: report.model.seed,
        sse: report.model.sse,
        iterations: report.model.iterations,
        restart_seeds: report.restarts.iter().map(|r| r.seed).collect(),
    }
}

/// One member per cluster of a given model. Result order follows cluster id.
pub fn select_with_model(
    points: &EmbeddingMatrix,
    model: &ClusterModel,
    in_cluster: InCluster,
    seed: u64,
) -> Result<SelectionResult> {
    model.check_compatible(points)?;
    let mut rng = selection_rng(seed);
    let mut indices = Vec::with_capacity(model.k);
    let mut provenance = Vec::with_capacity(model.k);
    for (cluster, members) in model.members().into_iter().enumerate() {
        let dists: Vec<f64> = members.iter().map(|&i| distance_to_centroid(points, model, i)).collect();
        let pos = match in_cluster {
            InCluster::Closest => extremal(&dists, |a, b| a < b),
            InCluster::Farthest => extremal(&dists, |a, b| a > b),
            InCluster::Random => rng.random_range(0..members.len()),
        };
        indices.push(members[pos]);
        provenance.push(Provenance { cluster, distance: dists[pos] });
    }
    Ok(SelectionResult {
        indices,
        provenance: Some(provenance),
        spec: SelectionSpec::new(in_cluster.strategy(), model.k, seed),
        fit: Some(FitSummary {
            best_restart: None,
            model_seed: model.seed,
            sse: model.sse,
            iterations: model.iterations,
            restart_seeds: Vec::new(),
        }),
    })
}

/// Position of the first element that beats all others under `better`.
fn extremal(values: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (pos, &v) in values.iter().enumerate().skip(1) {
        if better(v, values[best]) {
            best = pos;
        }
    }
    best
}

/// Within-cluster random sampling: all `k` picks come from one cluster.
///
/// The cluster is drawn uniformly among clusters with at least `k` members.
/// When none is that large, the largest cluster (lowest id on ties) is pooled
/// with the clusters whose centroids are nearest to it until `k` members are
/// available.
pub fn ic_random_with_model(
    points: &EmbeddingMatrix,
    model: &ClusterModel,
    k: usize,
    seed: u64,
) -> Result<SelectionResult> {
    model.check_compatible(points)?;
    if k == 0 || k > points.n() {
        return Err(Error::InvalidConfig(format!("budget k must be in [1, {}], got {k}", points.n())));
    }
    let mut rng = selection_rng(seed);
    let members = model.members();
    let eligible: Vec<usize> = (0..model.k).filter(|&j| members[j].len() >= k).collect();
    let pool: Vec<usize> = if eligible.is_empty() {
        merged_pool(model, &members, k)?
    } else {
        members[eligible[rng.random_range(0..eligible.len())]].clone()
    };
    let picks = index::sample(&mut rng, pool.len(), k).into_vec();
    let indices: Vec<usize> = picks.into_iter().map(|p| pool[p]).collect();
    let provenance = indices
        .iter()
        .map(|&i| Provenance { cluster: model.assignment[i], distance: distance_to_centroid(points, model, i) })
        .collect();
    Ok(SelectionResult {
        indices,
        provenance: Some(provenance),
        spec: SelectionSpec::new(Strategy::IcRandom, k, seed),
        fit: None,
    })
}

fn merged_pool(model: &ClusterModel, members: &[Vec<usize>], k: usize) -> Result<Vec<usize>> {
    let largest = (0..model.k)
        .max_by(|&a, &b| members[a].len().cmp(&members[b].len()).then(b.cmp(&a)))
        .expect("k >= 1");
    let anchor = model.centroid(largest);
    let mut others: Vec<(f64, usize)> = (0..model.k)
        .filter(|&j| j != largest)
        .map(|j| (sq_dist(anchor, model.centroid(j)), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut pool = members[largest].clone();
    for (_, j) in others {
        if pool.len() >= k {
            break;
        }
        pool.extend_from_slice(&members[j]);
    }
    if pool.len() < k {
        return Err(Error::InvalidSelection(format!(
            "ic-random: clusters hold only {} points, budget is {k}",
            pool.len()
        )));
    }
    pool.sort_unstable();
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use crate::selector::Strategy;
    use std::collections::HashSet;

    fn line(values: &[f64]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(values.iter().map(|&v| vec![v]).collect()).unwrap()
    }

    fn model_from(points: &EmbeddingMatrix, assignment: Vec<usize>, k: usize) -> ClusterModel {
        let mut centroids = ndarray::Array2::zeros((k, points.d()));
        let mut counts = vec![0.0; k];
        for (i, &j) in assignment.iter().enumerate() {
            counts[j] += 1.0;
            let mut row = centroids.row_mut(j);
            row += &points.row(i);
        }
        for (j, mut row) in centroids.outer_iter_mut().enumerate() {
            row /= counts[j];
        }
        let sse = kmeans::sse(points, &centroids, &assignment).unwrap();
        ClusterModel { k, centroids, assignment, sse, iterations: 1, seed: 0, sse_trace: vec![sse] }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("closest".parse::<Strategy>().is_err());
    }

    #[test]
    fn singleton_clusters_select_everything() {
        let p = line(&[0.0, 3.0, 7.0, 12.0]);
        for s in [Strategy::KmeansClosest, Strategy::KmeansRandom, Strategy::KmeansFarthest] {
            let r = select(&p, &SelectionSpec::new(s, 4, 9)).unwrap();
            let set: HashSet<usize> = r.indices.iter().copied().collect();
            assert_eq!(set, (0..4).collect());
        }
        let c = select(&p, &SelectionSpec::new(Strategy::KmeansClosest, 4, 9)).unwrap();
        let f = select(&p, &SelectionSpec::new(Strategy::KmeansFarthest, 4, 9)).unwrap();
        assert_eq!(c.indices, f.indices);
    }

    #[test]
    fn symmetric_ties_go_to_lowest_index() {
        let p = line(&[0.0, 1.0, 10.0, 11.0]);
        let model = model_from(&p, vec![0, 0, 1, 1], 2);
        assert_eq!(model.centroids, array![[0.5], [10.5]]);
        let c = select_with_model(&p, &model, InCluster::Closest, 0).unwrap();
        let f = select_with_model(&p, &model, InCluster::Farthest, 0).unwrap();
        assert_eq!(c.indices, vec![0, 2]);
        assert_eq!(f.indices, vec![0, 2]);
        // the full pipeline reaches the same clustering
        let full = select(&p, &SelectionSpec::new(Strategy::KmeansClosest, 2, 3)).unwrap();
        let set: HashSet<usize> = full.indices.iter().copied().collect();
        assert_eq!(set, HashSet::from([0, 2]));
    }

    #[test]
    fn asymmetric_clusters() {
        let values = [0.0, 0.4, 1.0, 9.0, 10.0, 10.8];
        let p = line(&values);
        let model = kmeans::fit(&p, &KMeansConfig::new(2, 0)).unwrap();
        let low = model.assignment[0];
        assert_eq!(model.members()[low], vec![0, 1, 2]);
        // distance table by brute force
        let mut closest = Vec::new();
        let mut farthest = Vec::new();
        for members in model.members() {
            let c = members.iter().map(|&i| values[i]).sum::<f64>() / members.len() as f64;
            let by = |i: &&usize| ((values[**i] - c).abs() * 1e12) as i64;
            closest.push(*members.iter().min_by_key(by).unwrap());
            farthest.push(*members.iter().max_by_key(by).unwrap());
        }
        let c = select_with_model(&p, &model, InCluster::Closest, 0).unwrap();
        let f = select_with_model(&p, &model, InCluster::Farthest, 0).unwrap();
        assert_eq!(c.indices, closest);
        assert_eq!(f.indices, farthest);
        // 0.4 and 10 are nearest; 1.0 and 9.0 (|9 - 9.933| > |10.8 - 9.933|) are farthest
        let cs: HashSet<usize> = c.indices.into_iter().collect();
        let fs: HashSet<usize> = f.indices.into_iter().collect();
        assert_eq!(cs, HashSet::from([1, 4]));
        assert_eq!(fs, HashSet::from([2, 3]));
    }

    #[test]
    fn with_model_reproduces_select() {
        let p = EmbeddingMatrix::from_rows(
            (0..40).map(|i| vec![(i * 37 % 11) as f64, (i * 13 % 7) as f64 * 0.5]).collect(),
        )
        .unwrap();
        let spec = SelectionSpec::new(Strategy::KmeansClosest, 5, 42);
        let direct = select(&p, &spec).unwrap();
        let model = kmeans::fit(&p, &KMeansConfig::new(5, 42)).unwrap();
        let via = select_with_model(&p, &model, InCluster::Closest, 42).unwrap();
        assert_eq!(direct.indices, via.indices);
        assert_eq!(direct.provenance, via.provenance);
    }

    #[test]
    fn random_and_ic_random_budgets() {
        let p = EmbeddingMatrix::from_rows((0..60).map(|i| vec![(i % 3) as f64 * 20.0 + (i as f64) * 0.01]).collect())
            .unwrap();
        let r = select(&p, &SelectionSpec::new(Strategy::Random, 7, 1)).unwrap();
        assert_eq!(r.indices.iter().collect::<HashSet<_>>().len(), 7);
        assert!(r.provenance.is_none());
        let ic = select(&p, &SelectionSpec::new(Strategy::IcRandom, 3, 1)).unwrap();
        let prov = ic.provenance.unwrap();
        assert!(prov.iter().all(|q| q.cluster == prov[0].cluster));
        assert!(select(&p, &SelectionSpec::new(Strategy::Random, 61, 1)).is_err());
        assert!(select(&p, &SelectionSpec::new(Strategy::Random, 0, 1)).is_err());
    }

    #[test]
    fn ic_random_merges_when_no_cluster_is_large_enough() {
        // k = n: every cluster is a singleton, so the pool must be the union
        let p = line(&[0.0, 5.0, 20.0]);
        let r = select(&p, &SelectionSpec::new(Strategy::IcRandom, 3, 4)).unwrap();
        let set: HashSet<usize> = r.indices.iter().copied().collect();
        assert_eq!(set, HashSet::from([0, 1, 2]));
        // clusters {0,1} {2} {3,4}, k = 3: largest is cluster 0, nearest other is 1
        let q = line(&[0.0, 1.0, 3.0, 20.0, 21.0]);
        let model = model_from(&q, vec![0, 0, 1, 2, 2], 3);
        let pool = merged_pool(&model, &model.members(), 3).unwrap();
        assert_eq!(pool, vec![0, 1, 2]);
    }

    #[test]
    fn model_mismatch_is_rejected() {
        let p = line(&[0.0, 1.0, 2.0]);
        let q = line(&[0.0, 1.0]);
        let model = model_from(&p, vec![0, 0, 1], 2);
        assert!(select_with_model(&q, &model, InCluster::Closest, 0).is_err());
    }

    #[test]
    fn selection_json_and_lines() {
        let p = line(&[0.0, 1.0, 10.0, 11.0]).with_ids(vec!["a".into(), "b".into(), "c".into(), "d".into()]).unwrap();
        let r = select(&p, &SelectionSpec::new(Strategy::KmeansClosest, 2, 0)).unwrap();
        assert_eq!(r.to_lines().lines().count(), 2);
        let text = r.to_json(&p, None).unwrap();
        assert!(text.contains("\"strategy\": \"kmeans-closest\""));
        assert!(text.contains("\"ids\""));
        let back = SelectionResult::from_json(&text).unwrap();
        assert_eq!(back.indices, r.indices);
        assert_eq!(back.spec, r.spec);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn in_cluster_distance_ordering(seed in any::<u64>(), n in 4usize..60, k in 1usize..5) {
            let mut rng = rng::rng_from_seed(seed);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
            let p = EmbeddingMatrix::from_rows(rows).unwrap();
            let model = kmeans::fit(&p, &KMeansConfig::new(k.min(n), seed)).unwrap();
            let c = select_with_model(&p, &model, InCluster::Closest, seed).unwrap();
            let r = select_with_model(&p, &model, InCluster::Random, seed).unwrap();
            let f = select_with_model(&p, &model, InCluster::Farthest, seed).unwrap();
            let (c, r, f) = (c.provenance.unwrap(), r.provenance.unwrap(), f.provenance.unwrap());
            for j in 0..model.k {
                prop_assert!(c[j].distance <= r[j].distance);
                prop_assert!(r[j].distance <= f[j].distance);
            }
        }

        #[test]
        fn budget_exactness(seed in any::<u64>(), n in 3usize..40, k in 1usize..6, which in 0usize..5) {
            let mut rng = rng::rng_from_seed(seed);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-3.0..3.0)]).collect();
            let p = EmbeddingMatrix::from_rows(rows).unwrap();
            let k = k.min(n);
            let spec = SelectionSpec::new(Strategy::ALL[which], k, seed);
            let r = select(&p, &spec).unwrap();
            prop_assert_eq!(r.indices.len(), k);
            prop_assert_eq!(r.indices.iter().collect::<HashSet<_>>().len(), k);
            prop_assert!(r.indices.iter().all(|&i| i < n));
            prop_assert_eq!(select(&p, &spec).unwrap(), r);
        }
    }
}
