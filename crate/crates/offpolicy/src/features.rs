//! Fixed state representations: tabular, aggregation, dependent features,
//! tile coding and frozen random ReLU networks.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::error::{Error, Result};

/// State-to-feature matrix with one row per state.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    x: DMatrix<f64>,
    name: String,
}

impl FeatureMap {
    /// Validates that every row is finite and nonzero.
    pub fn new(x: DMatrix<f64>, name: impl Into<String>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("features contain non-finite values".into()));
        }
        for s in 0..x.nrows() {
            if x.row(s).iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidParameter(format!("state {s} has an all-zero feature row")));
            }
        }
        Ok(FeatureMap { x, name: name.into() })
    }

    /// Feature matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Descriptive name.
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of features.
    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    /// Number of states.
    pub fn n_states(&self) -> usize {
        self.x.nrows()
    }

    /// Feature vector of state `s`.
    pub fn row(&self, s: usize) -> DVector<f64> {
        self.x.row(s).transpose()
    }

    /// Orthonormal basis of the column span, keeping singular directions
    /// above `cutoff` times the largest singular value. Any weight vector for
    /// `self` has an equivalent one for the basis with the same values `X w`.
    pub fn column_basis(&self, cutoff: f64) -> Result<FeatureMap> {
        let svd = self.x.clone().svd(true, false);
        let u = svd.u.as_ref().expect("left singular vectors requested");
        let smax = svd.singular_values.max();
        let keep: Vec<usize> =
            (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > cutoff * smax).collect();
        if keep.is_empty() {
            return Err(Error::InvalidParameter("feature matrix is zero".into()));
        }
        let basis = DMatrix::from_fn(self.n_states(), keep.len(), |i, j| u[(i, keep[j])]);
        FeatureMap::new(basis, format!("{}:basis", self.name))
    }

    /// CSV dump with header `state,feature_0,...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state");
        for j in 0..self.k() {
            out.push_str(&format!(",feature_{j}"));
        }
        out.push('\n');
        for s in 0..self.n_states() {
            out.push_str(&s.to_string());
            for j in 0..self.k() {
                out.push_str(&format!(",{:.16e}", self.x[(s, j)]));
            }
            out.push('\n');
        }
        out
    }
}

/// Identity representation.
pub fn tabular(n: usize) -> FeatureMap {
    FeatureMap { x: DMatrix::identity(n, n), name: "tabular".into() }
}

/// One-hot aggregation of contiguous states into `bins` groups.
///
/// State `i` (zero-based) belongs to bin `((i + 1) * bins - 1) / n`, so with
/// 19 states and 2 bins the first 9 states share the first bin.
pub fn state_aggregation(n: usize, bins: usize) -> Result<FeatureMap> {
    if bins == 0 || bins > n {
        return Err(Error::InvalidParameter(format!("aggregation needs 1 <= bins <= n, got bins={bins}, n={n}")));
    }
    let mut x = DMatrix::zeros(n, bins);
    for i in 0..n {
        x[(i, ((i + 1) * bins - 1) / n)] = 1.0;
    }
    FeatureMap::new(x, format!("agg:{bins}"))
}

/// Overlapping dependent features with `k = ceil((n + 1) / 2)` columns.
///
/// State `i < k` activates features `0..=i`; state `i >= k` activates
/// features `i - k + 1 ..= k - 1`. Rows are scaled to unit Euclidean norm.
pub fn dependent_features(n: usize) -> Result<FeatureMap> {
    if n < 3 {
        return Err(Error::InvalidParameter("dependent features need n >= 3".into()));
    }
    let k = (n + 2) / 2;
    let mut x = DMatrix::zeros(n, k);
    for i in 0..n {
        let (lo, hi) = if i < k { (0, i) } else { (i - k + 1, k - 1) };
        let norm = ((hi - lo + 1) as f64).sqrt();
        for j in lo..=hi {
            x[(i, j)] = 1.0 / norm;
        }
    }
    FeatureMap::new(x, "dependent")
}

/// Tile coding of the state index viewed as a coordinate in `[0, 1]`.
///
/// State `i` sits at `(i + 1/2) / n`. Each tiling partitions `[0, 1]` into
/// `tiles` intervals shifted by an offset drawn uniformly within one tile
/// width; positions falling outside the first or last tile are assigned to
/// it. Every row has exactly `tilings` ones.
pub fn tile_coding<R: Rng + ?Sized>(n: usize, tilings: usize, tiles: usize, rng: &mut R) -> Result<FeatureMap> {
    if tilings == 0 || tiles == 0 || n == 0 {
        return Err(Error::InvalidParameter("tile coding needs positive sizes".into()));
    }
    let mut x = DMatrix::zeros(n, tilings * tiles);
    for t in 0..tilings {
        let offset: f64 = rng.random::<f64>() - 0.5;
        for i in 0..n {
            let pos = (i as f64 + 0.5) / n as f64 * tiles as f64 + offset;
            let tile = (pos.floor().max(0.0) as usize).min(tiles - 1);
            x[(i, t * tiles + tile)] = 1.0;
        }
    }
    FeatureMap::new(x, format!("tile:{tilings}x{tiles}"))
}

/// Frozen two-layer ReLU network with sparse Xavier-uniform weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomReluNet {
    /// Hidden-layer weights, `hidden x 1`.
    pub w1: DMatrix<f64>,
    /// Hidden-layer biases.
    pub b1: DVector<f64>,
    /// Output-layer weights, `out x hidden`.
    pub w2: DMatrix<f64>,
    /// Output-layer biases.
    pub b2: DVector<f64>,
}

fn xavier<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, sparsity: f64) -> DMatrix<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = DMatrix::from_fn(rows, cols, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * limit);
    let total = rows * cols;
    let zeros = (sparsity * total as f64).round() as usize;
    for idx in sample_indices(rng, total, zeros).into_iter() {
        m[idx] = 0.0;
    }
    m
}

impl RandomReluNet {
    /// Samples a network; biases share the Xavier range of their layer.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, hidden: usize, out: usize, sparsity: f64) -> Self {
        let w1 = xavier(rng, hidden, 1, sparsity);
        let l1 = (6.0 / (hidden + 1) as f64).sqrt();
        let b1 = DVector::from_fn(hidden, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * l1);
        let w2 = xavier(rng, out, hidden, sparsity);
        let l2 = (6.0 / (hidden + out) as f64).sqrt();
        let b2 = DVector::from_fn(out, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * l2);
        RandomReluNet { w1, b1, w2, b2 }
    }

    /// Output features for a scalar input.
    pub fn forward(&self, input: f64) -> DVector<f64> {
        let h = (&self.w1 * input + &self.b1).map(|v| v.max(0.0));
        (&self.w2 * h + &self.b2).map(|v| v.max(0.0))
    }

    /// Fraction of weight entries (biases excluded) that are exactly zero.
    pub fn zero_fraction(&self) -> f64 {
        let zeros = self.w1.iter().chain(self.w2.iter()).filter(|&&v| v == 0.0).count();
        zeros as f64 / (self.w1.len() + self.w2.len()) as f64
    }

    /// Features of `n` states placed evenly on `[-1, 1]`.
    pub fn features(&self, n: usize) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(n, self.b2.len());
        for i in 0..n {
            let input = if n == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (n - 1) as f64 };
            x.set_row(i, &self.forward(input).transpose());
        }
        x
    }
}

/// Maximum number of networks drawn while looking for one without dead rows.
pub const RELU_MAX_ATTEMPTS: usize = 1000;

/// Representation from a frozen random ReLU network.
///
/// Networks whose output is identically zero for some state are discarded and
/// redrawn from the same stream.
pub fn random_relu_features<R: Rng + ?Sized>(
    n: usize,
    hidden: usize,
    out: usize,
    sparsity: f64,
    rng: &mut R,
) -> Result<FeatureMap> {
    if !(0.0..1.0).contains(&sparsity) || hidden == 0 || out == 0 {
        return Err(Error::InvalidParameter("invalid ReLU network parameters".into()));
    }
    for _ in 0..RELU_MAX_ATTEMPTS {
        let net = RandomReluNet::sample(rng, hidden, out, sparsity);
        let x = net.features(n);
        if let Ok(f) = FeatureMap::new(x, format!("relu:{hidden}-{out}-{sparsity}")) {
            return Ok(f);
        }
    }
    Err(Error::NonConvergent("no ReLU network without dead rows".into()))
}

/// Eight-feature representation of the seven-state star.
pub fn baird() -> FeatureMap {
    let mut x = DMatrix::zeros(7, 8);
    for i in 0..6 {
        x[(i, i)] = 2.0;
        x[(i, 7)] = 1.0;
    }
    x[(6, 6)] = 1.0;
    x[(6, 7)] = 2.0;
    FeatureMap { x, name: "baird".into() }
}

/// Parsed feature specification such as `agg:2`, `tile:4x4` or `relu:76-9-0.25`.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSpec {
    /// Identity features.
    Tabular,
    /// State aggregation with the given number of bins.
    Aggregation(usize),
    /// Overlapping dependent features.
    Dependent,
    /// Tile coding with `(tilings, tiles)`.
    Tile(usize, usize),
    /// Random ReLU network with `(hidden, out, sparsity)`.
    Relu(usize, usize, f64),
    /// The representation that ships with the environment.
    Native,
}

impl FeatureSpec {
    /// Parses a specification string.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("bad feature spec '{spec}'"));
        let (name, arg) = match spec.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (spec, None),
        };
        match (name, arg) {
            ("tabular", None) => Ok(FeatureSpec::Tabular),
            ("native", None) => Ok(FeatureSpec::Native),
            ("dependent", None) => Ok(FeatureSpec::Dependent),
            ("agg", Some(a)) => Ok(FeatureSpec::Aggregation(a.parse().map_err(|_| bad())?)),
            ("tile", Some(a)) => {
                let (t, k) = a.split_once('x').ok_or_else(bad)?;
                Ok(FeatureSpec::Tile(t.parse().map_err(|_| bad())?, k.parse().map_err(|_| bad())?))
            }
            ("relu", Some(a)) => {
                let parts: Vec<&str> = a.split('-').collect();
                if parts.len() != 3 {
                    return Err(bad());
                }
                Ok(FeatureSpec::Relu(
                    parts[0].parse().map_err(|_| bad())?,
                    parts[1].parse().map_err(|_| bad())?,
                    parts[2].parse().map_err(|_| bad())?,
                ))
            }
            _ => Err(bad()),
        }
    }

    /// Canonical label of the specification.
    pub fn label(&self) -> String {
        match self {
            FeatureSpec::Tabular => "tabular".into(),
            FeatureSpec::Aggregation(b) => format!("agg:{b}"),
            FeatureSpec::Dependent => "dependent".into(),
            FeatureSpec::Tile(t, k) => format!("tile:{t}x{k}"),
            FeatureSpec::Relu(h, o, s) => format!("relu:{h}-{o}-{s}"),
            FeatureSpec::Native => "native".into(),
        }
    }

    /// Builds the representation for `n` states; `native` falls back to tabular.
    pub fn build<R: Rng + ?Sized>(&self, n: usize, native: Option<&FeatureMap>, rng: &mut R) -> Result<FeatureMap> {
        match self {
            FeatureSpec::Tabular => Ok(tabular(n)),
            FeatureSpec::Aggregation(b) => state_aggregation(n, *b),
            FeatureSpec::Dependent => dependent_features(n),
            FeatureSpec::Tile(t, k) => tile_coding(n, *t, *k, rng),
            FeatureSpec::Relu(h, o, s) => random_relu_features(n, *h, *o, *s, rng),
            FeatureSpec::Native => Ok(native.cloned().unwrap_or_else(|| tabular(n))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn column_basis_spans_the_same_space() {
        let x = tile_coding(19, 4, 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let basis = x.column_basis(1e-10).unwrap();
        let q = basis.matrix();
        assert!(basis.k() < x.k());
        assert!((q.transpose() * q - DMatrix::<f64>::identity(basis.k(), basis.k())).abs().max() < 1e-12);
        // Projecting the original columns onto the basis reproduces them.
        let residual = x.matrix() - q * (q.transpose() * x.matrix());
        assert!(residual.abs().max() < 1e-12);
    }

    #[test]
    fn tabular_is_identity() {
        assert_eq!(tabular(3).matrix(), &DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn aggregation_splits_nineteen_states_nine_and_ten() {
        let f = state_aggregation(19, 2).unwrap();
        for i in 0..9 {
            assert_eq!(f.matrix()[(i, 0)], 1.0);
        }
        for i in 9..19 {
            assert_eq!(f.matrix()[(i, 1)], 1.0);
        }
        let sums: Vec<f64> = f.matrix().column_iter().map(|c| c.sum()).collect();
        assert_eq!(sums, vec![9.0, 10.0]);
        assert_eq!(state_aggregation(7, 7).unwrap().matrix(), tabular(7).matrix());
        assert!(state_aggregation(3, 4).is_err());
        assert!(state_aggregation(3, 0).is_err());
    }

    #[test]
    fn dependent_features_have_unit_rows_and_deficient_rank() {
        for n in [3, 5, 8, 19] {
            let f = dependent_features(n).unwrap();
            for s in 0..n {
                assert!((f.row(s).norm() - 1.0).abs() < 1e-12);
            }
            assert!(f.k() < n);
            assert_eq!(f.matrix().rank(1e-10), f.k());
        }
    }

    #[test]
    fn tile_rows_sum_to_tilings_and_single_tiling_is_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = tile_coding(19, 4, 4, &mut rng).unwrap();
        for s in 0..19 {
            assert_eq!(f.row(s).sum(), 4.0);
        }
        let g = tile_coding(7, 1, 7, &mut rng).unwrap();
        for c in g.matrix().column_iter() {
            assert_eq!(c.sum(), 1.0);
        }
        for r in g.matrix().row_iter() {
            assert_eq!(r.sum(), 1.0);
        }
    }

    #[test]
    fn tile_offsets_differ_across_seeds() {
        let mats: Vec<DMatrix<f64>> = (0..100)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                tile_coding(19, 4, 4, &mut rng).unwrap().matrix().clone()
            })
            .collect();
        let mut distinct = 0;
        for i in 0..mats.len() {
            if !(0..i).any(|j| mats[j] == mats[i]) {
                distinct += 1;
            }
        }
        assert!(distinct >= 99);
    }

    #[test]
    fn relu_features_shape_sparsity_and_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = random_relu_features(19, 76, 9, 0.25, &mut rng).unwrap();
        assert_eq!((f.n_states(), f.k()), (19, 9));
        assert!(f.matrix().iter().all(|&v| v >= 0.0));
        let net = RandomReluNet::sample(&mut rng, 76, 9, 0.25);
        assert!((net.zero_fraction() - 0.25).abs() <= 0.02);
    }

    #[test]
    fn feature_construction_is_deterministic() {
        let a = random_relu_features(19, 76, 9, 0.25, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = random_relu_features(19, 76, 9, 0.25, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spec_parsing_round_trips() {
        for s in ["tabular", "agg:2", "dependent", "tile:4x4", "relu:76-9-0.25", "native"] {
            assert_eq!(FeatureSpec::parse(s).unwrap().label(), s);
        }
        assert!(FeatureSpec::parse("agg").is_err());
        assert!(FeatureSpec::parse("tile:4").is_err());
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let csv = state_aggregation(3, 2).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "state,feature_0,feature_1");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn all_zero_rows_are_rejected() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        assert!(FeatureMap::new(x, "bad").is_err());
    }
}
