//! Sample-quality metrics for 2-D generators: discretized Jensen–Shannon
//! divergence, mode coverage, and the Fréchet distance between Gaussian fits.

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::data::MixtureSpec;

pub const GRID_BOUND: f64 = 3.0;
pub const GRID_RESOLUTION: usize = 60;
pub const SMOOTHING: f64 = 1e-9;
pub const COVARIANCE_JITTER: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("histograms are defined on different grids")]
    GridMismatch,
    #[error("no samples")]
    Empty,
    #[error("samples must have two columns, got {0}")]
    Width(usize),
    #[error("covariance is not positive semi-definite (eigenvalue {0})")]
    NotPsd(f64),
    #[error("probabilities must be positive and sum to 1")]
    BadProbabilities,
}

/// Smoothed cell probabilities over a square grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridHistogram {
    bound: f64,
    nx: usize,
    ny: usize,
    probs: Vec<f64>,
}

impl GridHistogram {
    /// Default grid: 60×60 cells on [-3, 3]², additive smoothing 1e-9.
    pub fn from_samples(samples: &Tensor) -> Result<Self, MetricsError> {
        GridHistogram::with_grid(samples, GRID_BOUND, GRID_RESOLUTION, SMOOTHING)
    }

    /// Samples outside the grid are counted in the nearest edge cell.
    pub fn with_grid(
        samples: &Tensor,
        bound: f64,
        resolution: usize,
        alpha: f64,
    ) -> Result<Self, MetricsError> {
        check_samples(samples)?;
        let n = resolution;
        let mut counts = vec![0.0; n * n];
        let cell = 2.0 * bound / n as f64;
        let index = |v: f64| (((v + bound) / cell).floor().max(0.0) as usize).min(n - 1);
        for i in 0..samples.rows() {
            let r = samples.row(i);
            counts[index(r[1]) * n + index(r[0])] += 1.0;
        }
        let total = samples.rows() as f64 + alpha * counts.len() as f64;
        let probs = counts.iter().map(|c| (c + alpha) / total).collect();
        Ok(GridHistogram {
            bound,
            nx: n,
            ny: n,
            probs,
        })
    }

    /// Wraps explicit cell probabilities laid out row-major over `nx × ny` cells.
    pub fn from_probs(bound: f64, nx: usize, ny: usize, probs: Vec<f64>) -> Result<Self, MetricsError> {
        let sum: f64 = probs.iter().sum();
        if probs.len() != nx * ny || probs.iter().any(|&p| !(p > 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(MetricsError::BadProbabilities);
        }
        Ok(GridHistogram { bound, nx, ny, probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

fn check_samples(samples: &Tensor) -> Result<(), MetricsError> {
    if samples.rank() != 2 || samples.cols() != 2 {
        return Err(MetricsError::Width(samples.cols()));
    }
    if samples.rows() == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Jensen–Shannon divergence in nats; lies in `[0, ln 2]`.
pub fn jsd(p: &GridHistogram, q: &GridHistogram) -> Result<f64, MetricsError> {
    if p.nx != q.nx || p.ny != q.ny || p.bound != q.bound {
        return Err(MetricsError::GridMismatch);
    }
    let mut total = 0.0;
    for (&a, &b) in p.probs.iter().zip(&q.probs) {
        let m = 0.5 * (a + b);
        total += 0.5 * (a * (a / m).ln() + b * (b / m).ln());
    }
    Ok(total.clamp(0.0, std::f64::consts::LN_2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeStats {
    /// Samples whose nearest center is each mode.
    pub assigned: Vec<usize>,
    /// Samples within 3 std of their nearest center, per mode.
    pub high_quality: Vec<usize>,
    pub hq_fraction: f64,
    /// Modes holding at least `n / (10 K)` high-quality samples.
    pub covered: usize,
}

pub fn mode_stats(samples: &Tensor, spec: &MixtureSpec) -> Result<ModeStats, MetricsError> {
    check_samples(samples)?;
    let k = spec.modes();
    let mut assigned = vec![0usize; k];
    let mut high_quality = vec![0usize; k];
    let radius = 3.0 * spec.std;
    for i in 0..samples.rows() {
        let r = samples.row(i);
        let (best, dist2) = spec
            .centers
            .iter()
            .map(|c| (r[0] - c[0]).powi(2) + (r[1] - c[1]).powi(2))
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one mode");
        assigned[best] += 1;
        if dist2.sqrt() <= radius {
            high_quality[best] += 1;
        }
    }
    let n = samples.rows() as f64;
    let threshold = n / (10.0 * k as f64);
    let covered = high_quality.iter().filter(|&&c| c as f64 >= threshold).count();
    let hq_fraction = high_quality.iter().sum::<usize>() as f64 / n;
    Ok(ModeStats {
        assigned,
        high_quality,
        hq_fraction,
        covered,
    })
}

/// Mean and covariance of a planar sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrechetStats {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl FrechetStats {
    pub fn from_samples(samples: &Tensor) -> Result<Self, MetricsError> {
        check_samples(samples)?;
        let n = samples.rows() as f64;
        let mut mean = [0.0; 2];
        for i in 0..samples.rows() {
            let r = samples.row(i);
            mean[0] += r[0] / n;
            mean[1] += r[1] / n;
        }
        let mut cov = [[0.0; 2]; 2];
        for i in 0..samples.rows() {
            let r = samples.row(i);
            let d = [r[0] - mean[0], r[1] - mean[1]];
            for a in 0..2 {
                for b in 0..2 {
                    cov[a][b] += d[a] * d[b] / n;
                }
            }
        }
        Ok(FrechetStats { mean, cov })
    }
}

type Mat2 = [[f64; 2]; 2];

fn matmul2(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// Eigenvalues (descending) and unit eigenvectors (columns) of a symmetric 2×2 matrix.
fn sym_eig2(m: &Mat2) -> ([f64; 2], Mat2) {
    let (a, b, c) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    let half_tr = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let l1 = half_tr + disc;
    let l2 = half_tr - disc;
    if b == 0.0 {
        return if a >= c {
            ([a, c], [[1.0, 0.0], [0.0, 1.0]])
        } else {
            ([c, a], [[0.0, 1.0], [1.0, 0.0]])
        };
    }
    let (x, y) = (l1 - c, b);
    let n = (x * x + y * y).sqrt();
    let (x, y) = (x / n, y / n);
    ([l1, l2], [[x, -y], [y, x]])
}

fn sqrt_psd(m: &Mat2) -> Result<Mat2, MetricsError> {
    let (vals, vecs) = sym_eig2(m);
    let mut roots = [0.0; 2];
    for (r, &v) in roots.iter_mut().zip(&vals) {
        if v < -1e-12 {
            return Err(MetricsError::NotPsd(v));
        }
        *r = v.max(0.0).sqrt();
    }
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = (0..2).map(|k| vecs[i][k] * roots[k] * vecs[j][k]).sum();
        }
    }
    Ok(out)
}

fn jittered(c: &Mat2) -> Mat2 {
    let mut out = *c;
    out[0][0] += COVARIANCE_JITTER;
    out[1][1] += COVARIANCE_JITTER;
    out
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2 (Σa Σb)^{1/2})`.
///
/// The trace of the square root is computed from the symmetric product
/// `Σa^{1/2} Σb Σa^{1/2}`, which has the same eigenvalues as `Σa Σb`.
pub fn frechet_distance(a: &FrechetStats, b: &FrechetStats) -> Result<f64, MetricsError> {
    let ca = jittered(&a.cov);
    let cb = jittered(&b.cov);
    let sa = sqrt_psd(&ca)?;
    let inner = matmul2(&matmul2(&sa, &cb), &sa);
    let (vals, _) = sym_eig2(&inner);
    let mut tr_sqrt = 0.0;
    for v in vals {
        if v < -1e-12 {
            return Err(MetricsError::NotPsd(v));
        }
        tr_sqrt += v.max(0.0).sqrt();
    }
    // Validate Σb as well; Σa was checked by the square root.
    sqrt_psd(&cb)?;
    let dm = (a.mean[0] - b.mean[0]).powi(2) + (a.mean[1] - b.mean[1]).powi(2);
    let tr = ca[0][0] + ca[1][1] + cb[0][0] + cb[1][1];
    Ok((dm + tr - 2.0 * tr_sqrt).max(0.0))
}

/// Metric values recorded at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub jsd: f64,
    pub modes: usize,
    pub hq_fraction: f64,
    pub frechet: f64,
}

/// Precomputed statistics of a reference (real) sample.
#[derive(Debug, Clone)]
pub struct Reference {
    pub spec: MixtureSpec,
    pub histogram: GridHistogram,
    pub stats: FrechetStats,
}

impl Reference {
    pub fn new(spec: MixtureSpec, real: &Tensor) -> Result<Self, MetricsError> {
        Ok(Reference {
            histogram: GridHistogram::from_samples(real)?,
            stats: FrechetStats::from_samples(real)?,
            spec,
        })
    }

    pub fn evaluate(&self, generated: &Tensor) -> Result<MetricsReport, MetricsError> {
        let hist = GridHistogram::from_samples(generated)?;
        let modes = mode_stats(generated, &self.spec)?;
        let stats = FrechetStats::from_samples(generated)?;
        Ok(MetricsReport {
            jsd: jsd(&self.histogram, &hist)?,
            modes: modes.covered,
            hq_fraction: modes.hq_fraction,
            frechet: frechet_distance(&self.stats, &stats)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_real, stream_rng, Stream};
    use proptest::prelude::*;

    fn points(rows: &[[f64; 2]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn jsd_identical_is_zero() {
        let x = sample_real(&MixtureSpec::ring8(), 1000, &mut stream_rng(1, Stream::Metrics));
        let h = GridHistogram::from_samples(&x).unwrap();
        assert_eq!(jsd(&h, &h).unwrap(), 0.0);
        assert!((h.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(h.probs().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn jsd_disjoint_is_ln2() {
        let a = GridHistogram::with_grid(&points(&[[-2.0, -2.0]; 10]), 3.0, 60, 0.0).unwrap();
        let b = GridHistogram::with_grid(&points(&[[2.0, 2.0]; 10]), 3.0, 60, 0.0).unwrap();
        // Zero smoothing leaves empty cells at exactly 0; guard the 0·ln 0 terms.
        let direct: f64 = a
            .probs()
            .iter()
            .zip(b.probs())
            .map(|(&p, &q)| {
                let m = 0.5 * (p + q);
                let t = |x: f64| if x > 0.0 { x * (x / m).ln() } else { 0.0 };
                0.5 * (t(p) + t(q))
            })
            .sum();
        assert!((direct - std::f64::consts::LN_2).abs() < 1e-12);
        let a = GridHistogram::from_samples(&points(&[[-2.0, -2.0]; 10])).unwrap();
        let b = GridHistogram::from_samples(&points(&[[2.0, 2.0]; 10])).unwrap();
        assert!((jsd(&a, &b).unwrap() - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn jsd_two_cell_example() {
        let p = GridHistogram::from_probs(1.0, 2, 1, vec![0.5, 0.5]).unwrap();
        let q = GridHistogram::from_probs(1.0, 2, 1, vec![0.9, 0.1]).unwrap();
        // High-precision direct summation: 0.101749225079196688...
        assert!((jsd(&p, &q).unwrap() - 0.101_749_225_079_196_69).abs() < 1e-14);
    }

    #[test]
    fn jsd_grid_mismatch() {
        let p = GridHistogram::from_probs(1.0, 2, 1, vec![0.5, 0.5]).unwrap();
        let q = GridHistogram::from_probs(1.0, 1, 2, vec![0.5, 0.5]).unwrap();
        assert_eq!(jsd(&p, &q), Err(MetricsError::GridMismatch));
    }

    #[test]
    fn modes_all_centers() {
        let spec = MixtureSpec::ring8();
        let rows: Vec<[f64; 2]> = (0..80).map(|i| spec.centers[i % 8]).collect();
        let s = mode_stats(&points(&rows), &spec).unwrap();
        assert_eq!(s.covered, 8);
        assert_eq!(s.hq_fraction, 1.0);
        assert_eq!(s.assigned, vec![10; 8]);
    }

    #[test]
    fn modes_collapsed() {
        let spec = MixtureSpec::ring8();
        let s = mode_stats(&points(&[spec.centers[3]; 50]), &spec).unwrap();
        assert_eq!(s.covered, 1);
    }

    #[test]
    fn modes_outside_quality_radius() {
        let spec = MixtureSpec::ring8();
        let rows: Vec<[f64; 2]> = spec
            .centers
            .iter()
            .map(|c| [c[0] * (1.0 + 4.0 * spec.std / 2.0), c[1] * (1.0 + 4.0 * spec.std / 2.0)])
            .collect();
        let s = mode_stats(&points(&rows), &spec).unwrap();
        assert_eq!(s.hq_fraction, 0.0);
        assert_eq!(s.covered, 0);
    }

    #[test]
    fn frechet_examples() {
        let id = [[1.0, 0.0], [0.0, 1.0]];
        let a = FrechetStats { mean: [0.0, 0.0], cov: id };
        assert!(frechet_distance(&a, &a).unwrap() < 1e-12);
        let b = FrechetStats { mean: [1.0, 0.0], cov: id };
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let c = FrechetStats { mean: [0.0, 0.0], cov: [[4.0, 0.0], [0.0, 4.0]] };
        assert!((frechet_distance(&a, &c).unwrap() - 2.0).abs() < 1e-8);
        let bad = FrechetStats { mean: [0.0, 0.0], cov: [[1.0, 0.0], [0.0, -1.0]] };
        assert!(matches!(frechet_distance(&a, &bad), Err(MetricsError::NotPsd(_))));
    }

    #[test]
    fn frechet_matches_closed_form_for_2x2() {
        // For 2×2 PSD matrices, tr sqrt(AB) = sqrt(tr(AB) + 2 sqrt(det(AB))).
        let a = FrechetStats { mean: [0.3, -0.2], cov: [[2.0, 0.6], [0.6, 0.5]] };
        let b = FrechetStats { mean: [-0.1, 0.4], cov: [[0.7, -0.3], [-0.3, 1.5]] };
        let (ca, cb) = (jittered(&a.cov), jittered(&b.cov));
        let p = matmul2(&ca, &cb);
        let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
        let tr_sqrt = (p[0][0] + p[1][1] + 2.0 * det.sqrt()).sqrt();
        let expected = 0.4f64.powi(2) + 0.6f64.powi(2) + ca[0][0] + ca[1][1] + cb[0][0] + cb[1][1] - 2.0 * tr_sqrt;
        assert!((frechet_distance(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    fn psd() -> impl Strategy<Value = FrechetStats> {
        (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0).prop_map(
            |(m0, m1, a, b, c, d)| {
                // L Lᵀ is PSD for any L.
                let cov = [[a * a + b * b, a * c + b * d], [a * c + b * d, c * c + d * d]];
                FrechetStats { mean: [m0, m1], cov }
            },
        )
    }

    proptest! {
        #[test]
        fn frechet_properties(a in psd(), b in psd()) {
            prop_assert!(frechet_distance(&a, &a).unwrap() < 1e-6);
            prop_assert!(frechet_distance(&a, &b).unwrap() >= 0.0);
        }

        #[test]
        fn jsd_symmetric_and_bounded(seed_a in 0u64..1000, seed_b in 0u64..1000) {
            let x = sample_real(&MixtureSpec::grid25(), 300, &mut stream_rng(seed_a, Stream::Train));
            let y = sample_real(&MixtureSpec::ring8(), 300, &mut stream_rng(seed_b, Stream::Train));
            let (p, q) = (GridHistogram::from_samples(&x).unwrap(), GridHistogram::from_samples(&y).unwrap());
            let (pq, qp) = (jsd(&p, &q).unwrap(), jsd(&q, &p).unwrap());
            prop_assert!((pq - qp).abs() < 1e-12);
            prop_assert!((0.0..=std::f64::consts::LN_2).contains(&pq));
        }

        #[test]
        fn mode_stats_permutation_invariant(seed in 0u64..1000, rot in 1usize..50) {
            let spec = MixtureSpec::ring8();
            let x = sample_real(&spec, 60, &mut stream_rng(seed, Stream::Train));
            let rows: Vec<Vec<f64>> = (0..60).map(|i| x.row((i + rot) % 60).to_vec()).collect();
            let y = Tensor::from_rows(&rows).unwrap();
            prop_assert_eq!(mode_stats(&x, &spec).unwrap(), mode_stats(&y, &spec).unwrap());
        }
    }
}
