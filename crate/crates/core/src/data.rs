//! Toy 2-D data and the latent prior.
//!
//! All randomness goes through [`ChaCha8Rng`]; a run derives independent
//! streams from one seed with [`stream_rng`], so results are reproducible
//! across platforms.

use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;

/// Disjoint random streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Network initialization.
    Init = 0,
    /// Mini-batches, latent draws and interpolation weights.
    Train = 1,
    /// Reference samples and fixed latents for metrics.
    Metrics = 2,
}

/// ChaCha8 generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MixtureName {
    Ring8,
    Grid25,
    TwoMoons,
}

impl MixtureName {
    pub const ALL: [MixtureName; 3] = [MixtureName::Ring8, MixtureName::Grid25, MixtureName::TwoMoons];

    pub fn as_str(self) -> &'static str {
        match self {
            MixtureName::Ring8 => "ring8",
            MixtureName::Grid25 => "grid25",
            MixtureName::TwoMoons => "two_moons",
        }
    }
}

impl fmt::Display for MixtureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MixtureName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MixtureName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown dataset `{s}` (expected ring8, grid25 or two_moons)"))
    }
}

/// Equal-weight isotropic Gaussian mixture in the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub name: MixtureName,
    pub centers: Vec<[f64; 2]>,
    pub std: f64,
}

impl MixtureSpec {
    pub fn new(name: MixtureName, centers: Vec<[f64; 2]>, std: f64) -> Result<Self, String> {
        if centers.is_empty() {
            return Err("a mixture needs at least one mode".into());
        }
        if !(std > 0.0) {
            return Err(format!("mode std must be positive, got {std}"));
        }
        Ok(MixtureSpec { name, centers, std })
    }

    /// Eight modes on the circle of radius 2, std 0.02.
    pub fn ring8() -> Self {
        MixtureSpec::ring(8, 2.0, 0.02)
    }

    pub fn ring(modes: usize, radius: f64, std: f64) -> Self {
        let centers = (0..modes)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / modes as f64;
                [radius * a.cos(), radius * a.sin()]
            })
            .collect();
        MixtureSpec {
            name: MixtureName::Ring8,
            centers,
            std,
        }
    }

    /// 5×5 lattice on [-2, 2]², spacing 1, std 0.05.
    pub fn grid25() -> Self {
        let mut centers = Vec::with_capacity(25);
        for i in -2..=2 {
            for j in -2..=2 {
                centers.push([i as f64, j as f64]);
            }
        }
        MixtureSpec {
            name: MixtureName::Grid25,
            centers,
            std: 0.05,
        }
    }

    /// Eight modes along each of two interleaved half circles, std 0.05.
    pub fn two_moons() -> Self {
        let mut centers = Vec::with_capacity(16);
        for k in 0..8 {
            let a = PI * k as f64 / 7.0;
            centers.push([a.cos() - 0.5, a.sin() - 0.25]);
            centers.push([0.5 - a.cos(), 0.25 - a.sin()]);
        }
        MixtureSpec {
            name: MixtureName::TwoMoons,
            centers,
            std: 0.05,
        }
    }

    pub fn by_name(name: MixtureName) -> Self {
        match name {
            MixtureName::Ring8 => MixtureSpec::ring8(),
            MixtureName::Grid25 => MixtureSpec::grid25(),
            MixtureName::TwoMoons => MixtureSpec::two_moons(),
        }
    }

    pub fn modes(&self) -> usize {
        self.centers.len()
    }
}

/// `m` rows: uniform mode choice, then Gaussian noise around the center.
pub fn sample_real<R: Rng>(spec: &MixtureSpec, m: usize, rng: &mut R) -> Tensor {
    let mut data = Vec::with_capacity(2 * m);
    for _ in 0..m {
        let c = spec.centers[rng.random_range(0..spec.centers.len())];
        let nx: f64 = StandardNormal.sample(rng);
        let ny: f64 = StandardNormal.sample(rng);
        data.push(c[0] + spec.std * nx);
        data.push(c[1] + spec.std * ny);
    }
    Tensor::matrix(m, 2, data).expect("m x 2")
}

/// Standard normal latent distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentPrior {
    pub dim: usize,
}

impl Default for LatentPrior {
    fn default() -> Self {
        LatentPrior { dim: 8 }
    }
}

pub fn sample_latent<R: Rng>(prior: &LatentPrior, m: usize, rng: &mut R) -> Tensor {
    let data = (0..m * prior.dim).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(m, prior.dim, data).expect("m x dim")
}

/// Writes an `x,y` CSV of the rows of a `[n, 2]` tensor.
pub fn write_samples_csv<W: Write>(mut out: W, samples: &Tensor) -> io::Result<()> {
    writeln!(out, "x,y")?;
    for i in 0..samples.rows() {
        let r = samples.row(i);
        writeln!(out, "{:?},{:?}", r[0], r[1])?;
    }
    Ok(())
}

/// Reads an `x,y` CSV (header optional).
pub fn read_samples_csv(text: &str) -> Result<Tensor, String> {
    let mut data = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with(|c: char| c.is_ascii_alphabetic())) {
            continue;
        }
        let mut fields = line.split(',');
        for _ in 0..2 {
            let v = fields
                .next()
                .ok_or_else(|| format!("line {}: expected two columns", i + 1))?
                .trim()
                .parse::<f64>()
                .map_err(|e| format!("line {}: {e}", i + 1))?;
            data.push(v);
        }
        if fields.next().is_some() {
            return Err(format!("line {}: expected two columns", i + 1));
        }
    }
    let n = data.len() / 2;
    Tensor::matrix(n, 2, data).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring8_centers() {
        let spec = MixtureSpec::ring8();
        assert_eq!(spec.modes(), 8);
        for (k, c) in spec.centers.iter().enumerate() {
            assert!(((c[0] * c[0] + c[1] * c[1]).sqrt() - 2.0).abs() < 1e-12);
            let angle = c[1].atan2(c[0]).rem_euclid(2.0 * PI);
            assert!((angle - 2.0 * PI * k as f64 / 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grid25_lattice() {
        let spec = MixtureSpec::grid25();
        assert_eq!(spec.modes(), 25);
        for c in &spec.centers {
            assert!(c.iter().all(|v| v.fract() == 0.0 && v.abs() <= 2.0));
        }
    }

    #[test]
    fn rejects_bad_mixtures() {
        assert!(MixtureSpec::new(MixtureName::Ring8, vec![], 0.1).is_err());
        assert!(MixtureSpec::new(MixtureName::Ring8, vec![[0.0, 0.0]], 0.0).is_err());
        assert!("ring9".parse::<MixtureName>().is_err());
        assert_eq!("two_moons".parse::<MixtureName>(), Ok(MixtureName::TwoMoons));
    }

    #[test]
    fn degenerate_mixture_hits_centers() {
        let spec = MixtureSpec::ring(8, 2.0, 1e-12);
        let mut rng = stream_rng(1, Stream::Train);
        let x = sample_real(&spec, 500, &mut rng);
        for i in 0..x.rows() {
            let r = x.row(i);
            let d = spec
                .centers
                .iter()
                .map(|c| ((r[0] - c[0]).powi(2) + (r[1] - c[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(d < 1e-9);
        }
    }

    #[test]
    fn mode_proportions() {
        let spec = MixtureSpec::ring8();
        let mut rng = stream_rng(4, Stream::Train);
        let n = 100_000;
        let x = sample_real(&spec, n, &mut rng);
        let mut counts = [0usize; 8];
        for i in 0..n {
            let r = x.row(i);
            let k = (0..8)
                .min_by(|&a, &b| {
                    let da = (r[0] - spec.centers[a][0]).powi(2) + (r[1] - spec.centers[a][1]).powi(2);
                    let db = (r[0] - spec.centers[b][0]).powi(2) + (r[1] - spec.centers[b][1]).powi(2);
                    da.total_cmp(&db)
                })
                .unwrap();
            counts[k] += 1;
        }
        let p = 1.0 / 8.0;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - p).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn latent_moments() {
        let prior = LatentPrior::default();
        let mut rng = stream_rng(9, Stream::Train);
        let n = 100_000;
        let z = sample_latent(&prior, n, &mut rng);
        for j in 0..prior.dim {
            let col: Vec<f64> = (0..n).map(|i| z.row(i)[j]).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(mean.abs() < 0.02);
            assert!((var - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn latent_symmetry() {
        let mut rng = stream_rng(2, Stream::Train);
        let z = sample_latent(&LatentPrior { dim: 1 }, 20_000, &mut rng);
        let neg = z.data().iter().filter(|&&v| v < 0.0).count() as f64 / 20_000.0;
        assert!((neg - 0.5).abs() < 0.02);
    }

    #[test]
    fn reproducible_and_streams_disjoint() {
        let spec = MixtureSpec::grid25();
        let a = sample_real(&spec, 32, &mut stream_rng(1, Stream::Train));
        let b = sample_real(&spec, 32, &mut stream_rng(1, Stream::Train));
        let c = sample_real(&spec, 32, &mut stream_rng(1, Stream::Metrics));
        assert_eq!(a, b);
        assert_ne!(a, c);
        let prior = LatentPrior::default();
        assert_eq!(
            sample_latent(&prior, 4, &mut stream_rng(3, Stream::Init)),
            sample_latent(&prior, 4, &mut stream_rng(3, Stream::Init))
        );
    }

    #[test]
    fn csv_round_trip() {
        let x = sample_real(&MixtureSpec::two_moons(), 10, &mut stream_rng(1, Stream::Train));
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &x).unwrap();
        let back = read_samples_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, x);
        assert!(read_samples_csv("x,y\n1,2,3\n").is_err());
    }
}
