//! Lloyd's k-means with k-means++ seeding over document embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use super::{embed_text, Corpus, CorpusError, DEFAULT_DIMS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansParams {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub dims: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams { max_iterations: 100, tolerance: 1e-6, dims: DEFAULT_DIMS }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    pub doc_ids: Vec<String>,
    /// Cluster index per document, parallel to `doc_ids` (corpus order).
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Objective after every assignment step, followed by the final value.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl Clustering {
    pub fn label_of(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids.iter().position(|d| d == doc_id).map(|i| self.labels[i])
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Members of cluster `j`, as indices into the corpus.
    pub fn members(&self, j: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == j).collect()
    }
}

impl Serialize for Clustering {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let assignments: std::collections::BTreeMap<&str, usize> =
            self.doc_ids.iter().map(String::as_str).zip(self.labels.iter().copied()).collect();
        let mut st = s.serialize_struct("Clustering", 3)?;
        st.serialize_field("k", &self.k)?;
        st.serialize_field("assignments", &assignments)?;
        st.serialize_field("inertia", &self.inertia)?;
        st.end()
    }
}

/// ⌈√(N/2)⌉ clamped to [2, 32], and never above N.
pub fn default_k(n: usize) -> usize {
    let k = ((n as f64) / 2.0).sqrt().ceil() as usize;
    k.clamp(2, 32).min(n.max(1))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            // all remaining points coincide with a center
            (0..n).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    chosen
}

pub fn cluster_corpus(
    corpus: &Corpus,
    k: usize,
    seed: u64,
    params: KMeansParams,
) -> Result<Clustering, CorpusError> {
    let n = corpus.len();
    if n == 0 {
        return Err(CorpusError::Empty);
    }
    if k == 0 || k > n {
        return Err(CorpusError::KTooLarge { k, n });
    }
    let points: Vec<Vec<f64>> =
        corpus.docs().iter().map(|d| embed_text(&d.text, params.dims).values).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> =
        plus_plus_init(&points, k, &mut rng).into_iter().map(|i| points[i].clone()).collect();

    let mut labels = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..params.max_iterations {
        iterations += 1;
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            labels[i] = j;
            inertia += d;
        }
        history.push(inertia);
        repair_empty(&points, &centroids, &mut labels, k);
        let updated = means(&points, &labels, k);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if shift < params.tolerance {
            break;
        }
    }
    let inertia: f64 =
        points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum();
    history.push(inertia);
    Ok(Clustering {
        k,
        doc_ids: corpus.docs().iter().map(|d| d.doc_id.clone()).collect(),
        labels,
        centroids,
        inertia,
        inertia_history: history,
        iterations,
    })
}

/// Give each empty cluster the point farthest from its centroid in the
/// currently largest cluster.
fn repair_empty(points: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..k).max_by_key(|&j| (sizes[j], std::cmp::Reverse(j))).unwrap();
        let far = (0..points.len())
            .filter(|&i| labels[i] == largest)
            .max_by(|&a, &b| {
                sq_dist(&points[a], &centroids[largest])
                    .total_cmp(&sq_dist(&points[b], &centroids[largest]))
                    .then(b.cmp(&a))
            })
            .unwrap();
        labels[far] = empty;
    }
}

fn means(points: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dims = points[0].len();
    let mut sums = vec![vec![0.0; dims]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        for x in s.iter_mut() {
            *x /= c as f64;
        }
    }
    sums
}
