//! Problem instances, stage costs and benchmark dataset generation.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the node weights summing to one.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A point in the plane. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    #[inline]
    pub fn coord(&self, c: usize) -> f64 {
        match c {
            0 => self.x,
            _ => self.y,
        }
    }

    #[inline]
    pub fn minus(self, other: Point2) -> Point2 {
        Point2::new(self.x - other.x, self.y - other.y)
    }

    #[inline]
    pub fn squared_distance(self, other: Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

/// Inverse temperature of the annealing. Always positive and finite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct Beta(f64);

impl Beta {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value.is_finite() {
            Ok(Beta(value))
        } else {
            Err(Error::InvalidInput(format!(
                "beta must be positive and finite, got {value}"
            )))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Squared Euclidean transport cost between two points.
pub fn stage_cost(a: Point2, b: Point2) -> Result<f64> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite coordinate in {a:?} or {b:?}")));
    }
    Ok(a.squared_distance(b))
}

/// Cost of terminating at `x` instead of the destination.
pub fn terminal_cost(x: Point2, destination: Point2) -> Result<f64> {
    stage_cost(x, destination)
}

/// An immutable FLPO instance: user nodes, their weights, the destination
/// and the number of facilities to place.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    nodes: Vec<Point2>,
    weights: Vec<f64>,
    destination: Point2,
    facility_count: usize,
    early_exit: bool,
    seed: Option<u64>,
}

impl Network {
    pub fn new(nodes: Vec<Point2>, weights: Vec<f64>, destination: Point2, facility_count: usize) -> Result<Self> {
        let net = Network {
            nodes,
            weights,
            destination,
            facility_count,
            early_exit: true,
            seed: None,
        };
        net.validate().map_err(Error::InvalidInput)?;
        Ok(net)
    }

    /// Network with uniform weights `1/N`.
    pub fn uniform(nodes: Vec<Point2>, destination: Point2, facility_count: usize) -> Result<Self> {
        let n = nodes.len().max(1);
        let weights = vec![1.0 / n as f64; nodes.len()];
        Network::new(nodes, weights, destination, facility_count)
    }

    /// When `false`, the destination is only reachable from the last
    /// facility stage, which forces every route through `M` facilities.
    pub fn with_early_exit(mut self, early_exit: bool) -> Self {
        self.early_exit = early_exit;
        self
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.nodes.is_empty() {
            return Err("network has no nodes".into());
        }
        if self.facility_count == 0 {
            return Err("facility_count must be at least 1".into());
        }
        if self.weights.len() != self.nodes.len() {
            return Err(format!("{} weights for {} nodes", self.weights.len(), self.nodes.len()));
        }
        if let Some(p) = self.nodes.iter().find(|p| !p.is_finite()) {
            return Err(format!("non-finite node position {p:?}"));
        }
        if !self.destination.is_finite() {
            return Err("non-finite destination".into());
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(format!("invalid node weight {w}"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(format!("weights sum to {total}, expected 1"));
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[Point2] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn destination(&self) -> Point2 {
        self.destination
    }

    pub fn facility_count(&self) -> usize {
        self.facility_count
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn early_exit(&self) -> bool {
        self.early_exit
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Weighted centroid of the nodes together with the destination, which
    /// counts as one average node.
    pub fn centroid(&self) -> Point2 {
        let dest_weight = 1.0 / self.nodes.len() as f64;
        let mut sx = dest_weight * self.destination.x;
        let mut sy = dest_weight * self.destination.y;
        for (p, w) in self.nodes.iter().zip(&self.weights) {
            sx += w * p.x;
            sy += w * p.y;
        }
        let total = 1.0 + dest_weight;
        Point2::new(sx / total, sy / total)
    }

    /// All points of the instance: nodes followed by the destination.
    pub fn points(&self) -> impl Iterator<Item = Point2> + '_ {
        self.nodes.iter().copied().chain(std::iter::once(self.destination))
    }

    /// Largest squared distance between any two points of the instance.
    pub fn max_squared_distance(&self) -> f64 {
        let pts: Vec<Point2> = self.points().collect();
        let mut best = 0.0_f64;
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                best = best.max(a.squared_distance(*b));
            }
        }
        best
    }

    /// Smallest positive squared distance between two points of the
    /// instance, or `None` if all points coincide.
    pub fn min_positive_squared_distance(&self) -> Option<f64> {
        let pts: Vec<Point2> = self.points().collect();
        let mut best: Option<f64> = None;
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                let d = a.squared_distance(*b);
                if d > 0.0 {
                    best = Some(best.map_or(d, |m| m.min(d)));
                }
            }
        }
        best
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = NetworkFile::from(self);
        let text = serde_json::to_string_pretty(&file)?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Network::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&NetworkFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        file.try_into()
    }
}

/// On-disk dataset layout.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    nodes: Vec<Point2>,
    weights: Vec<f64>,
    destination: Point2,
    facility_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    early_exit: bool,
}

fn default_true() -> bool {
    true
}

fn is_true(v: &bool) -> bool {
    *v
}

impl From<&Network> for NetworkFile {
    fn from(n: &Network) -> Self {
        NetworkFile {
            nodes: n.nodes.clone(),
            weights: n.weights.clone(),
            destination: n.destination,
            facility_count: n.facility_count,
            seed: n.seed,
            early_exit: n.early_exit,
        }
    }
}

impl TryFrom<NetworkFile> for Network {
    type Error = Error;

    fn try_from(f: NetworkFile) -> Result<Self> {
        let net = Network {
            nodes: f.nodes,
            weights: f.weights,
            destination: f.destination,
            facility_count: f.facility_count,
            early_exit: f.early_exit,
            seed: f.seed,
        };
        net.validate().map_err(Error::Schema)?;
        Ok(net)
    }
}

/// Facility positions `y_j^k` for stages `k = 1..M` (row `k-1`) and
/// facilities `j = 0..M`.
#[derive(Debug, Clone, PartialEq)]
pub struct FacilityLayout {
    positions: Vec<Vec<Point2>>,
    tied: bool,
}

impl FacilityLayout {
    /// One location per facility, shared by every stage.
    pub fn tied(positions: Vec<Point2>) -> Self {
        let m = positions.len();
        FacilityLayout {
            positions: vec![positions; m],
            tied: true,
        }
    }

    /// Independent locations per stage. `grid[k][j]` is facility `j` at
    /// stage `k + 1`.
    pub fn untied(grid: Vec<Vec<Point2>>) -> Result<Self> {
        let m = grid.len();
        if m == 0 || grid.iter().any(|row| row.len() != m) {
            return Err(Error::InvalidInput("layout grid must be M x M".into()));
        }
        Ok(FacilityLayout {
            positions: grid,
            tied: false,
        })
    }

    /// Every facility copy at the same point.
    pub fn collapsed(m: usize, at: Point2, tied: bool) -> Self {
        FacilityLayout {
            positions: vec![vec![at; m]; m],
            tied,
        }
    }

    pub fn facility_count(&self) -> usize {
        self.positions.len()
    }

    pub fn is_tied(&self) -> bool {
        self.tied
    }

    /// Position of facility `j` at stage `k` (1-based stage).
    #[inline]
    pub fn at(&self, stage: usize, j: usize) -> Point2 {
        self.positions[stage - 1][j]
    }

    pub fn stage(&self, stage: usize) -> &[Point2] {
        &self.positions[stage - 1]
    }

    pub fn grid(&self) -> &[Vec<Point2>] {
        &self.positions
    }

    /// Stage-one positions; for a tied layout these are the facility locations.
    pub fn facilities(&self) -> &[Point2] {
        &self.positions[0]
    }

    pub fn check_matches(&self, net: &Network) -> Result<()> {
        if self.facility_count() != net.facility_count() {
            return Err(Error::InvalidInput(format!(
                "layout has {} facilities, network expects {}",
                self.facility_count(),
                net.facility_count()
            )));
        }
        if self.positions.iter().flatten().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("non-finite facility position".into()));
        }
        Ok(())
    }

    /// Number of free scalar parameters: `2M` when tied, `2M²` otherwise.
    pub fn param_count(&self) -> usize {
        let m = self.facility_count();
        if self.tied {
            2 * m
        } else {
            2 * m * m
        }
    }

    /// Flattened free parameters. Tied: `[y_0.x, y_0.y, y_1.x, ...]`;
    /// untied: stage-major, then facility, then coordinate.
    pub fn params(&self) -> Vec<f64> {
        let rows: &[Vec<Point2>] = if self.tied {
            &self.positions[..1]
        } else {
            &self.positions
        };
        rows.iter().flatten().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn with_params(&self, params: &[f64]) -> Self {
        assert_eq!(params.len(), self.param_count(), "parameter vector length");
        let m = self.facility_count();
        let point = |i: usize| Point2::new(params[2 * i], params[2 * i + 1]);
        if self.tied {
            FacilityLayout::tied((0..m).map(point).collect())
        } else {
            let grid = (0..m).map(|k| (0..m).map(|j| point(k * m + j)).collect()).collect();
            FacilityLayout {
                positions: grid,
                tied: false,
            }
        }
    }

    /// Index of the parameter controlling coordinate `c` of `y_j^k`.
    #[inline]
    pub fn param_index(&self, stage: usize, j: usize, c: usize) -> usize {
        if self.tied {
            2 * j + c
        } else {
            2 * ((stage - 1) * self.facility_count() + j) + c
        }
    }
}

/// Recipe for a clustered benchmark instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub seed: u64,
    pub cluster_means: Vec<Point2>,
    pub cluster_sizes: Vec<usize>,
    pub cluster_covariance_scale: f64,
    pub destination: Point2,
    pub facility_count: usize,
}

/// Cluster sizes used for the benchmark datasets.
pub const BENCHMARK_CLUSTER_SIZES: [usize; 5] = [14, 12, 10, 8, 6];
/// Isotropic covariance scale of each benchmark cluster.
pub const BENCHMARK_COVARIANCE: f64 = 0.0005;
/// Facilities placed in each benchmark dataset.
pub const BENCHMARK_FACILITIES: usize = 5;

impl DatasetSpec {
    /// The benchmark recipe for `seed`: five clusters of sizes
    /// [`BENCHMARK_CLUSTER_SIZES`], means uniform in `[0.1, 0.9]²` and the
    /// destination uniform in the unit square, all drawn from `seed`.
    pub fn benchmark(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0fc1_u64);
        let cluster_means = BENCHMARK_CLUSTER_SIZES
            .iter()
            .map(|_| Point2::new(rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)))
            .collect();
        let destination = Point2::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        DatasetSpec {
            seed,
            cluster_means,
            cluster_sizes: BENCHMARK_CLUSTER_SIZES.to_vec(),
            cluster_covariance_scale: BENCHMARK_COVARIANCE,
            destination,
            facility_count: BENCHMARK_FACILITIES,
        }
    }

    pub fn node_count(&self) -> usize {
        self.cluster_sizes.iter().sum()
    }

    fn validate(&self) -> Result<()> {
        if self.cluster_means.is_empty() {
            return Err(Error::InvalidInput("no clusters".into()));
        }
        if self.cluster_means.len() != self.cluster_sizes.len() {
            return Err(Error::InvalidInput("cluster means and sizes differ in length".into()));
        }
        if self.cluster_sizes.contains(&0) {
            return Err(Error::InvalidInput("cluster sizes must be positive".into()));
        }
        if !(self.cluster_covariance_scale > 0.0) || !self.cluster_covariance_scale.is_finite() {
            return Err(Error::InvalidInput("covariance scale must be positive".into()));
        }
        if self.facility_count == 0 {
            return Err(Error::InvalidInput("facility_count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Draws the clustered nodes of `spec`, fits everything into the unit
/// square and assigns uniform weights. Deterministic in `spec.seed`.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Network> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sd = spec.cluster_covariance_scale.sqrt();
    let noise = Normal::new(0.0, sd).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut nodes = Vec::with_capacity(spec.node_count());
    for (mean, &size) in spec.cluster_means.iter().zip(&spec.cluster_sizes) {
        for _ in 0..size {
            nodes.push(Point2::new(
                mean.x + noise.sample(&mut rng),
                mean.y + noise.sample(&mut rng),
            ));
        }
    }
    let mut destination = spec.destination;
    fit_unit_square(&mut nodes, &mut destination);
    Ok(Network::uniform(nodes, destination, spec.facility_count)?.with_seed(Some(spec.seed)))
}

/// Applies one shared scale-and-shift so all points fit in `[0, 1]²`. Points
/// already inside the square are left untouched.
fn fit_unit_square(nodes: &mut [Point2], destination: &mut Point2) {
    let (mut lo_x, mut lo_y) = (destination.x, destination.y);
    let (mut hi_x, mut hi_y) = (lo_x, lo_y);
    for p in nodes.iter() {
        lo_x = lo_x.min(p.x);
        lo_y = lo_y.min(p.y);
        hi_x = hi_x.max(p.x);
        hi_y = hi_y.max(p.y);
    }
    if lo_x >= 0.0 && lo_y >= 0.0 && hi_x <= 1.0 && hi_y <= 1.0 {
        return;
    }
    let extent = (hi_x - lo_x).max(hi_y - lo_y);
    let scale = if extent > 1.0 { 1.0 / extent } else { 1.0 };
    // After scaling, shift each axis by the least amount that brings it inside.
    let shift = |lo: f64, hi: f64| {
        let (lo, hi) = (lo * scale, hi * scale);
        if lo < 0.0 {
            -lo
        } else if hi > 1.0 {
            1.0 - hi
        } else {
            0.0
        }
    };
    let (sx, sy) = (shift(lo_x, hi_x), shift(lo_y, hi_y));
    let map = |p: &mut Point2| {
        p.x = (p.x * scale + sx).clamp(0.0, 1.0);
        p.y = (p.y * scale + sy).clamp(0.0, 1.0);
    };
    nodes.iter_mut().for_each(map);
    map(destination);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    #[test]
    fn stage_cost_examples() {
        assert_eq!(stage_cost(p(0.0, 0.0), p(1.0, 1.0)).unwrap(), 2.0);
        assert_eq!(stage_cost(p(0.3, 0.7), p(0.3, 0.7)).unwrap(), 0.0);
        assert!((stage_cost(p(0.0, 0.0), p(0.5, 0.2)).unwrap() - 0.29).abs() < 1e-15);
        assert!(stage_cost(p(f64::NAN, 0.0), p(0.0, 0.0)).is_err());
        assert!(stage_cost(p(0.0, 0.0), p(0.0, f64::INFINITY)).is_err());
    }

    #[test]
    fn terminal_cost_examples() {
        let z = p(1.0, 0.0);
        assert_eq!(terminal_cost(z, z).unwrap(), 0.0);
        assert_eq!(terminal_cost(p(0.0, 0.0), z).unwrap(), 1.0);
        assert_eq!(terminal_cost(p(0.5, 0.0), z).unwrap(), 0.25);
    }

    #[test]
    fn network_rejects_bad_weights() {
        let nodes = vec![p(0.0, 0.0), p(1.0, 1.0)];
        assert!(Network::new(nodes.clone(), vec![0.5, 0.4], p(0.0, 0.0), 1).is_err());
        assert!(Network::new(nodes.clone(), vec![1.5, -0.5], p(0.0, 0.0), 1).is_err());
        assert!(Network::new(nodes.clone(), vec![1.0], p(0.0, 0.0), 1).is_err());
        assert!(Network::new(nodes, vec![0.5, 0.5], p(0.0, 0.0), 0).is_err());
        assert!(Network::new(vec![], vec![], p(0.0, 0.0), 1).is_err());
    }

    #[test]
    fn benchmark_dataset_shape() {
        let spec = DatasetSpec::benchmark(7);
        assert_eq!(spec.cluster_sizes, vec![14, 12, 10, 8, 6]);
        let net = generate_dataset(&spec).unwrap();
        assert_eq!(net.node_count(), 50);
        assert_eq!(net.facility_count(), 5);
        for q in net.points() {
            assert!((0.0..=1.0).contains(&q.x) && (0.0..=1.0).contains(&q.y), "{q:?}");
        }
        let total: f64 = net.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(net, generate_dataset(&spec).unwrap());
    }

    #[test]
    fn single_node_dataset_stays_near_mean() {
        let spec = DatasetSpec {
            seed: 3,
            cluster_means: vec![p(0.5, 0.5)],
            cluster_sizes: vec![1],
            cluster_covariance_scale: 0.0005,
            destination: p(0.9, 0.1),
            facility_count: 1,
        };
        let net = generate_dataset(&spec).unwrap();
        assert_eq!(net.node_count(), 1);
        assert!(net.nodes()[0].squared_distance(p(0.5, 0.5)) < 0.02);
    }

    #[test]
    fn empty_cluster_list_is_rejected() {
        let spec = DatasetSpec {
            seed: 0,
            cluster_means: vec![],
            cluster_sizes: vec![],
            cluster_covariance_scale: 0.0005,
            destination: p(0.5, 0.5),
            facility_count: 2,
        };
        assert!(matches!(generate_dataset(&spec), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn out_of_square_points_are_fitted_jointly() {
        let mut nodes = vec![p(-1.0, 0.0), p(3.0, 1.0)];
        let mut dest = p(1.0, 2.0);
        fit_unit_square(&mut nodes, &mut dest);
        assert_eq!(nodes[0], p(0.0, 0.0));
        assert_eq!(nodes[1], p(1.0, 0.25));
        assert_eq!(dest, p(0.5, 0.5));
    }

    #[test]
    fn schema_errors_on_load() {
        let bad_sum = r#"{"nodes":[[0,0],[1,1]],"weights":[0.5,0.4],"destination":[0,0],"facility_count":1,"seed":1}"#;
        assert!(matches!(Network::from_json(bad_sum), Err(Error::Schema(_))));
        let missing = r#"{"nodes":[[0,0]],"weights":[1.0],"facility_count":1,"seed":1}"#;
        assert!(matches!(Network::from_json(missing), Err(Error::Schema(_))));
    }

    #[test]
    fn layout_params_round_trip() {
        let tied = FacilityLayout::tied(vec![p(0.1, 0.2), p(0.3, 0.4)]);
        assert_eq!(tied.params(), vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(tied.with_params(&tied.params()), tied);
        assert_eq!(tied.at(2, 1), p(0.3, 0.4));
        let grid = vec![vec![p(0.0, 0.1), p(0.2, 0.3)], vec![p(0.4, 0.5), p(0.6, 0.7)]];
        let untied = FacilityLayout::untied(grid).unwrap();
        assert_eq!(untied.param_count(), 8);
        assert_eq!(untied.params()[untied.param_index(2, 0, 1)], 0.5);
        assert_eq!(untied.with_params(&untied.params()), untied);
    }
}
