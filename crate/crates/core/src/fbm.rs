//! Exact-in-law sampling of fractional Brownian motion on uniform grids.
//!
//! Increments of `B^H` on a uniform grid form fractional Gaussian noise with
//! autocovariance `dt^{2H} (|k+1|^{2H} - 2|k|^{2H} + |k-1|^{2H}) / 2`. Small
//! grids factor that Toeplitz matrix by Cholesky; larger grids use circulant
//! embedding (Davies-Harte). Both are exact, so paths have the covariance
//! `R(s,t) = (|t|^{2H} + |s|^{2H} - |t-s|^{2H}) / 2` at the nodes.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};
use crate::grid::{GridFunction, TimeGrid};

/// Largest grid (in nodes) sampled by Cholesky under [`FbmMethod::Auto`].
pub const CHOLESKY_MAX_NODES: usize = 1 << 12;

/// Hurst parameter `H` in `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct HurstParam(f64);

impl HurstParam {
    pub fn new(h: f64) -> Result<Self> {
        if h > 0.0 && h < 1.0 {
            Ok(Self(h))
        } else {
            Err(invalid("hurst", format!("H must lie in (0, 1), got {h}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Covariance `R(s,t)` of fractional Brownian motion.
pub fn fbm_covariance(h: HurstParam, s: f64, t: f64) -> f64 {
    let two_h = 2.0 * h.0;
    0.5 * (t.abs().powf(two_h) + s.abs().powf(two_h) - (t - s).abs().powf(two_h))
}

/// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(h: HurstParam, k: usize) -> f64 {
    let two_h = 2.0 * h.0;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(two_h) - 2.0 * k.powf(two_h) + (k - 1.0).abs().powf(two_h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FbmMethod {
    /// Cholesky up to [`CHOLESKY_MAX_NODES`] nodes, circulant embedding beyond.
    #[default]
    Auto,
    Cholesky,
    Circulant,
}

/// A sampled fBm path on a uniform grid; `values[0] == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FbmPath {
    pub grid: TimeGrid,
    pub hurst: HurstParam,
    pub values: Vec<f64>,
    pub seed: u64,
}

impl FbmPath {
    pub fn as_grid_function(&self) -> GridFunction {
        GridFunction {
            grid: self.grid,
            values: self.values.clone(),
        }
    }

    /// The same realization seen on a grid with `factor` times fewer intervals.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsen(factor)?;
        Ok(Self {
            grid,
            hurst: self.hurst,
            values: self.values.iter().step_by(factor).copied().collect(),
            seed: self.seed,
        })
    }

    /// The realization restricted to the first `nodes` nodes.
    pub fn prefix(&self, nodes: usize) -> Result<Self> {
        let grid = self.grid.prefix(nodes)?;
        Ok(Self {
            grid,
            hurst: self.hurst,
            values: self.values[..nodes].to_vec(),
            seed: self.seed,
        })
    }

    /// CSV body with header `t,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,value\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{},{}\n", self.grid.time(i), v));
        }
        out
    }

    /// Single metadata line stored next to the CSV file.
    pub fn metadata_line(&self) -> String {
        format!(
            "seed={} hurst={} nodes={} horizon={}\n",
            self.seed,
            self.hurst.value(),
            self.grid.len(),
            self.grid.horizon()
        )
    }
}

enum Factor {
    /// Row-major packed lower-triangular Cholesky factor of the increment covariance.
    Cholesky(Vec<f64>),
    Circulant {
        sqrt_eig: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
}

/// Precomputed factorization for repeated sampling at fixed `(H, grid)`.
///
/// Sampling is a pure function of the seed, so one sampler can be shared
/// across threads.
pub struct FbmSampler {
    hurst: HurstParam,
    grid: TimeGrid,
    scale: f64,
    factor: Factor,
}

impl std::fmt::Debug for FbmSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let method = match self.factor {
            Factor::Cholesky(_) => "cholesky",
            Factor::Circulant { .. } => "circulant",
        };
        f.debug_struct("FbmSampler")
            .field("hurst", &self.hurst)
            .field("grid", &self.grid)
            .field("method", &method)
            .finish()
    }
}

impl FbmSampler {
    pub fn new(hurst: HurstParam, grid: TimeGrid, method: FbmMethod) -> Result<Self> {
        let m = grid.len() - 1;
        let use_cholesky = match method {
            FbmMethod::Auto => grid.len() <= CHOLESKY_MAX_NODES,
            FbmMethod::Cholesky => true,
            FbmMethod::Circulant => false,
        };
        let factor = if use_cholesky || m < 2 {
            Factor::Cholesky(toeplitz_cholesky(hurst, m)?)
        } else {
            circulant_factor(hurst, m)?
        };
        Ok(Self {
            hurst,
            grid,
            scale: grid.dt().powf(hurst.0),
            factor,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn hurst(&self) -> HurstParam {
        self.hurst
    }

    pub fn is_cholesky(&self) -> bool {
        matches!(self.factor, Factor::Cholesky(_))
    }

    pub fn sample(&self, seed: u64) -> FbmPath {
        let m = self.grid.len() - 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let increments = match &self.factor {
            Factor::Cholesky(l) => {
                let z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
                let mut x = vec![0.0; m];
                for (i, xi) in x.iter_mut().enumerate() {
                    let row = &l[i * (i + 1) / 2..i * (i + 1) / 2 + i + 1];
                    *xi = row.iter().zip(&z).map(|(a, b)| a * b).sum();
                }
                x
            }
            Factor::Circulant { sqrt_eig, fft } => {
                let mut buf: Vec<Complex64> = sqrt_eig
                    .iter()
                    .map(|&s| {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        Complex64::new(s * re, s * im)
                    })
                    .collect();
                fft.process(&mut buf);
                buf[..m].iter().map(|c| c.re).collect()
            }
        };
        let mut values = Vec::with_capacity(m + 1);
        let mut acc = 0.0;
        values.push(0.0);
        for dx in increments {
            acc += self.scale * dx;
            values.push(acc);
        }
        FbmPath {
            grid: self.grid,
            hurst: self.hurst,
            values,
            seed,
        }
    }
}

/// Sample one fBm path; deterministic in `seed`.
pub fn sample_fbm(hurst: HurstParam, grid: TimeGrid, seed: u64) -> Result<FbmPath> {
    Ok(FbmSampler::new(hurst, grid, FbmMethod::Auto)?.sample(seed))
}

/// Packed lower Cholesky factor of the fGn Toeplitz covariance, computed with
/// the Schur algorithm in O(m^2).
fn toeplitz_cholesky(hurst: HurstParam, m: usize) -> Result<Vec<f64>> {
    let acov: Vec<f64> = (0..m).map(|k| fgn_autocovariance(hurst, k)).collect();
    let mut l = vec![0.0; m * (m + 1) / 2];
    let idx = |i: usize, j: usize| i * (i + 1) / 2 + j;
    if m == 0 {
        return Ok(l);
    }
    if acov[0].is_nan() || acov[0] <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            index: 0,
            value: acov[0],
        });
    }
    let s = acov[0].sqrt();
    let mut a: Vec<f64> = acov.iter().map(|r| r / s).collect();
    let mut b = a.clone();
    b[0] = 0.0;
    for k in 0..m {
        for i in k..m {
            l[idx(i, k)] = a[i];
        }
        if k + 1 == m {
            break;
        }
        for i in (k + 1..m).rev() {
            a[i] = a[i - 1];
        }
        let rho = b[k + 1] / a[k + 1];
        let slack = 1.0 - rho * rho;
        if slack.is_nan() || slack <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                index: k + 1,
                value: slack,
            });
        }
        let c = slack.sqrt();
        for i in k + 1..m {
            let (ai, bi) = (a[i], b[i]);
            a[i] = (ai - rho * bi) / c;
            b[i] = (bi - rho * ai) / c;
        }
    }
    Ok(l)
}

fn circulant_factor(hurst: HurstParam, m: usize) -> Result<Factor> {
    let size = 2 * m;
    let mut row: Vec<Complex64> = (0..size)
        .map(|k| {
            let lag = if k <= m { k } else { size - k };
            Complex64::new(fgn_autocovariance(hurst, lag), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(size);
    fft.process(&mut row);
    let max = row.iter().fold(0.0f64, |a, c| a.max(c.re));
    let mut clipped = 0usize;
    let mut sqrt_eig = Vec::with_capacity(size);
    for (index, c) in row.iter().enumerate() {
        let value = c.re;
        if value < 0.0 {
            if value < -1e-10 * max {
                return Err(Error::NegativeEigenvalue { index, value });
            }
            clipped += 1;
            sqrt_eig.push(0.0);
        } else {
            sqrt_eig.push((value / size as f64).sqrt());
        }
    }
    if clipped > 0 {
        log::warn!("circulant embedding: {clipped} rounding-level negative eigenvalues set to zero");
    }
    Ok(Factor::Circulant { sqrt_eig, fft })
}

/// Smallest `c >= 0` with `|B(t_i)| <= t_i^2 + c` at every node.
pub fn polynomial_envelope(path: &FbmPath) -> f64 {
    envelope_constant(&path.grid, &path.values)
}

pub(crate) fn envelope_constant(grid: &TimeGrid, values: &[f64]) -> f64 {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let t = grid.time(i);
            v.abs() - t * t
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(v: f64) -> HurstParam {
        HurstParam::new(v).unwrap()
    }

    #[test]
    fn covariance_examples() {
        assert!((fbm_covariance(h(0.5), 1.0, 2.0) - 1.0).abs() < 1e-15);
        assert_eq!(fbm_covariance(h(0.3), 0.0, 5.0), 0.0);
        assert!((fbm_covariance(h(0.75), 2.0, 2.0) - 2f64.powf(1.5)).abs() < 1e-12);
        assert!((fbm_covariance(h(0.75), 2.0, 2.0) - 2.828427).abs() < 1e-6);
    }

    #[test]
    fn covariance_is_symmetric_with_stationary_increments() {
        let grid = TimeGrid::new(3.0, 31).unwrap();
        for &hv in &[0.2, 0.5, 0.75, 0.95] {
            let hp = h(hv);
            for i in 0..grid.len() {
                for j in 0..grid.len() {
                    let (s, t) = (grid.time(i), grid.time(j));
                    assert_eq!(fbm_covariance(hp, s, t), fbm_covariance(hp, t, s));
                    let var = fbm_covariance(hp, t, t) + fbm_covariance(hp, s, s) - 2.0 * fbm_covariance(hp, s, t);
                    let expect = (t - s).abs().powf(2.0 * hv);
                    assert!((var - expect).abs() < 1e-13, "{hv} {s} {t}");
                }
            }
        }
    }

    #[test]
    fn half_reduces_to_min() {
        let grid = TimeGrid::new(2.0, 21).unwrap();
        for i in 0..grid.len() {
            for j in 0..grid.len() {
                let (s, t) = (grid.time(i), grid.time(j));
                assert!((fbm_covariance(h(0.5), s, t) - s.min(t)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rejects_bad_hurst() {
        assert!(HurstParam::new(0.0).is_err());
        assert!(HurstParam::new(1.0).is_err());
        assert!(HurstParam::new(f64::NAN).is_err());
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let grid = TimeGrid::new(1.0, 65).unwrap();
        for method in [FbmMethod::Cholesky, FbmMethod::Circulant] {
            let s = FbmSampler::new(h(0.7), grid, method).unwrap();
            let a = s.sample(42);
            let b = s.sample(42);
            assert_eq!(a.values, b.values);
            assert_eq!(a.values[0], 0.0);
            assert_ne!(a.values, s.sample(43).values);
        }
    }

    #[test]
    fn auto_switches_at_threshold() {
        let small = FbmSampler::new(h(0.7), TimeGrid::new(1.0, 4096).unwrap(), FbmMethod::Auto).unwrap();
        assert!(small.is_cholesky());
        let large = FbmSampler::new(h(0.7), TimeGrid::new(1.0, 4097).unwrap(), FbmMethod::Auto).unwrap();
        assert!(!large.is_cholesky());
    }

    #[test]
    fn envelope_examples() {
        let grid = TimeGrid::new(2.0, 3).unwrap();
        let zero = FbmPath {
            grid,
            hurst: h(0.7),
            values: vec![0.0; 3],
            seed: 0,
        };
        assert_eq!(polynomial_envelope(&zero), 0.0);
        let spike = FbmPath {
            grid,
            hurst: h(0.7),
            values: vec![0.0, 3.0, 0.0],
            seed: 0,
        };
        assert!((polynomial_envelope(&spike) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let p = sample_fbm(h(0.6), grid, 7).unwrap();
        let csv = p.to_csv();
        assert!(csv.starts_with("t,value\n0,0\n"));
        assert_eq!(csv.lines().count(), 4);
        assert!(p.metadata_line().contains("seed=7"));
    }
}
