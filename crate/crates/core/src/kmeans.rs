//! K-means over 3-D points: greedy k-means++ seeding, Lloyd iterations
//! (accelerated with Hamerly's distance bounds), then Hartigan single-point
//! transfers to escape poor Lloyd fixed points. The best of several restarts
//! is kept.

use ndarray::Array2;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;
use crate::rng::{derive_seed, rng_from_seed, Rng, STREAM_KMEANS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub max_iters: usize,
    /// Stop once an iteration lowers the inertia by less than this.
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest-inertia run is kept.
    pub n_init: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            n_init: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// K×3, row `c` is the mean of the points assigned to cluster `c`.
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances from each point to its assigned centroid.
    pub inertia: f64,
    /// Inertia after every Lloyd iteration and every refining sweep of the
    /// returned run; never increases.
    pub trace: Vec<f64>,
}

impl KMeansResult {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }
}

#[inline]
fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    let d2 = a[2] - b[2];
    d0 * d0 + d1 * d1 + d2 * d2
}

fn rows_of(pc: &PointCloud) -> Vec<[f64; 3]> {
    pc.points()
        .outer_iter()
        .map(|r| [r[0], r[1], r[2]])
        .collect()
}

/// Number of distinct points, treating `-0.0` and `0.0` as equal.
pub fn count_distinct(pc: &PointCloud) -> usize {
    let mut keys: Vec<[u64; 3]> = rows_of(pc)
        .iter()
        .map(|p| p.map(|v| (v + 0.0).to_bits()))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

pub fn kmeans(pc: &PointCloud, k: usize, seed: u64, cfg: &KMeansConfig) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if cfg.max_iters == 0 {
        return Err(Error::invalid("max_iters must be at least 1"));
    }
    if cfg.tol.is_nan() || cfg.tol < 0.0 {
        return Err(Error::invalid(format!("tol must be nonnegative, got {}", cfg.tol)));
    }
    let distinct = count_distinct(pc);
    if k > distinct {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {distinct} distinct points in the cloud"
        )));
    }
    let points = rows_of(pc);
    if k == distinct {
        return Ok(one_cluster_per_distinct_point(&points));
    }
    let mut best: Option<KMeansResult> = None;
    for run in 0..cfg.n_init.max(1) {
        let run_seed = derive_seed(seed, &[STREAM_KMEANS, run as u64]);
        let result = lloyd(&points, k, run_seed, cfg);
        if best.as_ref().is_none_or(|b| result.inertia < b.inertia) {
            best = Some(result);
        }
        // Nothing beats a perfect fit (e.g. K equal to the distinct count).
        if best.as_ref().is_some_and(|b| b.inertia == 0.0) {
            break;
        }
    }
    Ok(best.expect("at least one run"))
}

/// D²-weighted draw; points already covered by a centroid carry no mass.
fn sample_weighted(d2: &[f64], total: f64, rng: &mut Rng) -> usize {
    let mut target = rng.random::<f64>() * total;
    let mut chosen = None;
    for (i, &w) in d2.iter().enumerate() {
        if w > 0.0 {
            chosen = Some(i);
            if target < w {
                break;
            }
            target -= w;
        }
    }
    chosen.expect("positive mass")
}

/// Greedy k-means++ seeding: each new centroid is the best of `2 + ⌊ln k⌋`
/// D²-weighted candidates, judged by the potential it leaves behind.
/// The exact optimum when K equals the number of distinct points: every
/// distinct point is its own centroid, in order of first appearance.
fn one_cluster_per_distinct_point(points: &[[f64; 3]]) -> KMeansResult {
    let mut centroids: Vec<[f64; 3]> = Vec::new();
    let mut index = std::collections::HashMap::new();
    let assignments = points
        .iter()
        .map(|p| {
            *index.entry(p.map(|v| (v + 0.0).to_bits())).or_insert_with(|| {
                centroids.push(*p);
                centroids.len() - 1
            })
        })
        .collect();
    let flat: Vec<f64> = centroids.iter().flatten().copied().collect();
    KMeansResult {
        centroids: Array2::from_shape_vec((centroids.len(), 3), flat).expect("k × 3"),
        assignments,
        inertia: 0.0,
        trace: vec![0.0],
    }
}

fn kmeans_plus_plus(points: &[[f64; 3]], k: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = rng_from_seed(seed);
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        // k never exceeds the distinct count, so some point is still uncovered.
        debug_assert!(total > 0.0);
        let mut best: Option<(f64, [f64; 3])> = None;
        for _ in 0..trials {
            let candidate = points[sample_weighted(&d2, total, &mut rng)];
            let potential: f64 = d2.iter().zip(points).map(|(d, p)| d.min(sq_dist(p, &candidate))).sum();
            if best.is_none_or(|b| potential < b.0) {
                best = Some((potential, candidate));
            }
        }
        let (_, next) = best.expect("at least one trial");
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &next));
        }
        centroids.push(next);
    }
    centroids
}

/// Nearest-centroid assignment with Hamerly's bounds: per point, an upper
/// bound on the distance to its own centroid and a lower bound on the distance
/// to every other one. Points whose bounds already separate skip the scan.
struct Assigner {
    upper: Vec<f64>,
    lower: Vec<f64>,
    /// False until a full scan has set the bounds, and after any edit that
    /// bypasses them (empty-cluster repair).
    valid: bool,
}

impl Assigner {
    fn new(n: usize) -> Self {
        Self {
            upper: vec![f64::INFINITY; n],
            lower: vec![0.0; n],
            valid: false,
        }
    }

    /// Full scan for one point: nearest (lowest index on ties) and runner-up distances.
    fn scan(p: &[f64; 3], centroids: &[[f64; 3]]) -> (usize, f64, f64) {
        let (mut best, mut d1, mut d2) = (0, f64::INFINITY, f64::INFINITY);
        for (c, centroid) in centroids.iter().enumerate() {
            let d = sq_dist(p, centroid);
            if d < d1 {
                d2 = d1;
                d1 = d;
                best = c;
            } else if d < d2 {
                d2 = d;
            }
        }
        (best, d1.sqrt(), d2.sqrt())
    }

    fn assign(&mut self, points: &[[f64; 3]], centroids: &[[f64; 3]], assignments: &mut [usize]) {
        let k = centroids.len();
        // Half the distance from each centroid to its nearest neighbour.
        let mut half_gap = vec![f64::INFINITY; k];
        for i in 0..k {
            for j in i + 1..k {
                let d = 0.5 * sq_dist(&centroids[i], &centroids[j]).sqrt();
                half_gap[i] = half_gap[i].min(d);
                half_gap[j] = half_gap[j].min(d);
            }
        }
        for (i, p) in points.iter().enumerate() {
            if self.valid {
                let a = assignments[i];
                // Strict comparisons with a little slack keep near-ties on the full scan.
                let bound = half_gap[a].max(self.lower[i]) * (1.0 - 1e-12);
                if self.upper[i] < bound {
                    continue;
                }
                self.upper[i] = sq_dist(p, &centroids[a]).sqrt();
                if self.upper[i] < bound {
                    continue;
                }
            }
            let (best, d1, d2) = Self::scan(p, centroids);
            assignments[i] = best;
            self.upper[i] = d1;
            self.lower[i] = d2;
        }
        self.valid = true;
    }

    /// Loosen the bounds after centroids moved from `old` to `new`.
    fn moved(&mut self, old: &[[f64; 3]], new: &[[f64; 3]], assignments: &[usize]) {
        let shift: Vec<f64> = old.iter().zip(new).map(|(o, n)| sq_dist(o, n).sqrt()).collect();
        let max_shift = shift.iter().copied().fold(0.0, f64::max);
        for ((u, l), &a) in self.upper.iter_mut().zip(self.lower.iter_mut()).zip(assignments) {
            *u += shift[a];
            *l -= max_shift;
        }
    }
}

/// Give every empty cluster the point currently farthest from its own centroid.
/// Returns whether anything was changed.
fn repair_empty(points: &[[f64; 3]], centroids: &mut [[f64; 3]], assignments: &mut [usize]) -> bool {
    let k = centroids.len();
    let mut repaired = false;
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return repaired;
        };
        repaired = true;
        let (far, _) = points
            .iter()
            .zip(assignments.iter())
            .enumerate()
            .filter(|(_, (_, &a))| sizes[a] > 1)
            .map(|(i, (p, &a))| (i, sq_dist(p, &centroids[a])))
            .fold((usize::MAX, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        assert!(far != usize::MAX, "empty cluster with no donor point");
        assignments[far] = empty;
        centroids[empty] = points[far];
    }
}

fn update_means(points: &[[f64; 3]], assignments: &[usize], centroids: &mut [[f64; 3]]) {
    let k = centroids.len();
    let mut sums = vec![[0.0f64; 3]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for j in 0..3 {
            sums[a][j] += p[j];
        }
    }
    for ((c, s), n) in centroids.iter_mut().zip(&sums).zip(&counts) {
        debug_assert!(*n > 0);
        *c = s.map(|v| v / *n as f64);
    }
}

fn inertia_of(points: &[[f64; 3]], centroids: &[[f64; 3]], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

/// Hartigan single-point transfers: move a point from cluster `a` to `b`
/// whenever `n_b/(n_b+1)·|p−c_b|² < n_a/(n_a−1)·|p−c_a|²`, which strictly
/// lowers the inertia. Lloyd stops at any Voronoi-consistent partition;
/// these moves escape many of the poor ones. Returns the inertia after each
/// sweep that moved at least one point.
fn hartigan_refine(
    points: &[[f64; 3]],
    centroids: &mut [[f64; 3]],
    assignments: &mut [usize],
    max_sweeps: usize,
) -> Vec<f64> {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    let scale = inertia_of(points, centroids, assignments).max(f64::MIN_POSITIVE);
    // Centroid-to-centroid distances, refreshed for the two clusters a move touches.
    let mut between = vec![0.0f64; k * k];
    let refresh = |between: &mut [f64], centroids: &[[f64; 3]], c: usize| {
        for j in 0..k {
            let d = sq_dist(&centroids[c], &centroids[j]).sqrt();
            between[c * k + j] = d;
            between[j * k + c] = d;
        }
    };
    for c in 0..k {
        refresh(&mut between, centroids, c);
    }
    let mut trace = Vec::new();
    for _ in 0..max_sweeps {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            let na = counts[a] as f64;
            if counts[a] < 2 {
                continue;
            }
            let da2 = sq_dist(p, &centroids[a]);
            let da = da2.sqrt();
            let remove_gain = na / (na - 1.0) * da2;
            // Ignore moves whose gain is within rounding of the total.
            let mut threshold = remove_gain - 1e-12 * scale;
            let mut target = None;
            for (b, c) in centroids.iter().enumerate() {
                if b == a {
                    continue;
                }
                // n_b/(n_b+1) ≥ ½ and |p − c_b| ≥ |c_a − c_b| − |p − c_a|.
                let gap = between[a * k + b] - da;
                if gap > 0.0 && 0.5 * gap * gap > threshold * (1.0 + 1e-9) {
                    continue;
                }
                let nb = counts[b] as f64;
                let add_cost = nb / (nb + 1.0) * sq_dist(p, c);
                if add_cost < threshold {
                    threshold = add_cost;
                    target = Some(b);
                }
            }
            if let Some(b) = target {
                let nb = counts[b] as f64;
                for j in 0..3 {
                    centroids[a][j] = (na * centroids[a][j] - p[j]) / (na - 1.0);
                    centroids[b][j] = (nb * centroids[b][j] + p[j]) / (nb + 1.0);
                }
                counts[a] -= 1;
                counts[b] += 1;
                assignments[i] = b;
                refresh(&mut between, centroids, a);
                refresh(&mut between, centroids, b);
                moved = true;
            }
        }
        if !moved {
            break;
        }
        // Recompute exactly so incremental updates never accumulate drift.
        update_means(points, assignments, centroids);
        for c in 0..k {
            refresh(&mut between, centroids, c);
        }
        trace.push(inertia_of(points, centroids, assignments));
    }
    trace
}

fn lloyd(points: &[[f64; 3]], k: usize, seed: u64, cfg: &KMeansConfig) -> KMeansResult {
    let mut centroids = kmeans_plus_plus(points, k, seed);
    let mut assignments = vec![0usize; points.len()];
    let mut trace: Vec<f64> = Vec::new();
    let mut assigner = Assigner::new(points.len());
    for _ in 0..cfg.max_iters {
        assigner.assign(points, &centroids, &mut assignments);
        if repair_empty(points, &mut centroids, &mut assignments) {
            assigner.valid = false;
        }
        let before = centroids.clone();
        update_means(points, &assignments, &mut centroids);
        assigner.moved(&before, &centroids, &assignments);
        let inertia = inertia_of(points, &centroids, &assignments);
        let converged = trace.last().is_some_and(|&prev| prev - inertia < cfg.tol);
        trace.push(inertia);
        if converged {
            break;
        }
    }
    trace.extend(hartigan_refine(points, &mut centroids, &mut assignments, cfg.max_iters));
    let flat: Vec<f64> = centroids.iter().flatten().copied().collect();
    KMeansResult {
        centroids: Array2::from_shape_vec((k, 3), flat).expect("k × 3"),
        assignments,
        inertia: *trace.last().expect("max_iters ≥ 1"),
        trace,
    }
}
