//! Simulated time-evolving datasets: clustered subjects, constrained-random
//! or evolving-network voxel factors, random or trend temporal profiles.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::numerics::{gaussian_matrix, thin_svd, uniform_matrix, Seed};
use crate::tensor::{reconstruct_parafac2, DenseTensor3, FactorMatrix, NeumaierSum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BSetup {
    Random,
    Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CSetup {
    Random,
    Trends,
}

/// Block layout of the four evolving networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkParams {
    pub base_width: usize,
    /// Start advance per window for the shifting networks; `None` means
    /// `ceil(J / (2K))`.
    pub shift_step: Option<usize>,
    pub grow_step: usize,
    pub jitter: f64,
    /// First node of each network at window 0; `None` uses the default layout.
    pub anchors: Option<[usize; 4]>,
}

impl Default for NetworkParams {
    fn default() -> Self {
        NetworkParams {
            base_width: 15,
            shift_step: None,
            grow_step: 1,
            jitter: 0.1,
            anchors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dims: (usize, usize, usize),
    pub rank: usize,
    pub b_setup: BSetup,
    pub c_setup: CSetup,
    pub noise: f64,
    pub seed: Seed,
    pub cluster_sizes: Vec<usize>,
    pub cluster_jitter: f64,
    pub network: NetworkParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dims: (50, 100, 25),
            rank: 4,
            b_setup: BSetup::Random,
            c_setup: CSetup::Random,
            noise: 0.0,
            seed: Seed(0),
            cluster_sizes: vec![25, 25],
            cluster_jitter: 0.3,
            network: NetworkParams::default(),
        }
    }
}

impl SimConfig {
    /// Parses and validates a TOML simulation file; absent keys take defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let (i, j, k) = self.dims;
        if i == 0 || j == 0 || k == 0 {
            return arg_err(format!("dims must be positive, got {:?}", self.dims));
        }
        if self.rank == 0 || self.rank > j {
            return arg_err(format!("rank must be in 1..={j}, got {}", self.rank));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return arg_err(format!("noise level must be a finite value >= 0, got {}", self.noise));
        }
        if self.cluster_sizes.iter().sum::<usize>() != i {
            return arg_err(format!(
                "cluster sizes {:?} do not sum to I = {i}",
                self.cluster_sizes
            ));
        }
        if !(self.cluster_jitter >= 0.0 && self.cluster_jitter.is_finite()) {
            return arg_err(format!("cluster jitter must be >= 0, got {}", self.cluster_jitter));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimDataset {
    pub noisy: DenseTensor3,
    pub clean: DenseTensor3,
    pub a: FactorMatrix,
    pub b: Vec<FactorMatrix>,
    pub c: FactorMatrix,
    pub labels: Vec<usize>,
}

/// Cluster mean of component `r` for cluster `g` out of `n_clusters`.
///
/// The first `n_clusters` components are cluster indicators; later ones
/// carry ±1 sign patterns, so every component separates the groups without
/// any two components sharing the same mean profile.
fn cluster_mean(g: usize, r: usize, n_clusters: usize) -> f64 {
    if r < n_clusters {
        if g == r {
            1.0
        } else {
            0.0
        }
    } else {
        let mask = (r - n_clusters) as u32;
        if (g as u32 & mask).count_ones().is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }
}

/// Subject factor with one block of rows per cluster. Returns the factor and
/// the cluster label of each row.
pub fn gen_a_clustered(
    i: usize,
    r: usize,
    cluster_sizes: &[usize],
    jitter: f64,
    seed: Seed,
) -> Result<(FactorMatrix, Vec<usize>)> {
    if cluster_sizes.is_empty() || cluster_sizes.contains(&0) {
        return arg_err(format!("clusters must be non-empty, got sizes {cluster_sizes:?}"));
    }
    if cluster_sizes.iter().sum::<usize>() != i {
        return arg_err(format!("cluster sizes {cluster_sizes:?} do not sum to {i}"));
    }
    if r == 0 {
        return arg_err("rank must be positive");
    }
    let noise = Normal::new(0.0, jitter).map_err(|e| crate::Error::Argument(format!("jitter: {e}")))?;
    let mut rng = seed.rng();
    let labels: Vec<usize> = cluster_sizes
        .iter()
        .enumerate()
        .flat_map(|(g, &n)| std::iter::repeat_n(g, n))
        .collect();
    let n_clusters = cluster_sizes.len();
    let mut a = DMatrix::zeros(i, r);
    for (row, &g) in labels.iter().enumerate() {
        for col in 0..r {
            a[(row, col)] = cluster_mean(g, col, n_clusters) + noise.sample(&mut rng);
        }
    }
    Ok((FactorMatrix::new(a)?, labels))
}

/// `B_k = P_k·H` with `P_k` the left singular vectors of a Gaussian `J×R`
/// draw and `H` one Gaussian `R×R` matrix shared by all windows.
pub fn gen_b_random_constrained(j: usize, r: usize, k: usize, seed: Seed) -> Result<Vec<FactorMatrix>> {
    if r == 0 || r > j {
        return arg_err(format!("need 1 <= R <= J, got R={r}, J={j}"));
    }
    let mut rng = seed.rng();
    let h = gaussian_matrix(&mut rng, r, r);
    (0..k)
        .map(|_| {
            let p = thin_svd(&gaussian_matrix(&mut rng, j, r))?.u;
            FactorMatrix::new(p * &h)
        })
        .collect()
}

/// Active index range `[start, start + width)` of network `col` at window `k`.
fn network_block(col: usize, k: usize, j: usize, kk: usize, p: &NetworkParams) -> (usize, usize) {
    let step = p.shift_step.unwrap_or_else(|| j.div_ceil(2 * kk));
    let w = p.base_width;
    let g = p.grow_step;
    let [a0, a1, a2, a3] = p.anchors.unwrap_or([24 * j / 100, 0, 0, 13 * j / 100]);
    match col {
        // shifting
        0 => (a0 + k * step, w),
        // growing
        1 => (a1, w + g * k),
        // shrinking
        2 => (a2, w + g * (kk - 1 - k)),
        // shifting and growing
        _ => (a3 + k * step, w + g * k),
    }
}

/// Four evolving networks over `K` windows: shifting, growing, shrinking,
/// shifting-and-growing. Active entries are `1 + N(0, jitter²)`.
pub fn gen_b_network(j: usize, r: usize, k: usize, params: &NetworkParams, seed: Seed) -> Result<Vec<FactorMatrix>> {
    if r != 4 {
        return arg_err(format!("network factors need R = 4, got {r}"));
    }
    if k == 0 || params.base_width == 0 {
        return arg_err("network needs K >= 1 and a positive base width");
    }
    for col in 0..4 {
        for kk in 0..k {
            let (start, width) = network_block(col, kk, j, k, params);
            if start + width > j {
                return arg_err(format!(
                    "network {} at window {kk} spans [{start}, {}) which exceeds J = {j}",
                    col + 1,
                    start + width
                ));
            }
        }
    }
    let noise = Normal::new(0.0, params.jitter)
        .map_err(|e| crate::Error::Argument(format!("network jitter: {e}")))?;
    let mut rng = seed.rng();
    (0..k)
        .map(|kk| {
            let mut b = DMatrix::zeros(j, 4);
            for col in 0..4 {
                let (start, width) = network_block(col, kk, j, k, params);
                for row in start..start + width {
                    b[(row, col)] = 1.0 + noise.sample(&mut rng);
                }
            }
            FactorMatrix::new(b)
        })
        .collect()
}

/// Temporal factor; every entry is nonnegative.
pub fn gen_c(k: usize, r: usize, setup: CSetup, seed: Seed) -> Result<FactorMatrix> {
    let mut rng = seed.rng();
    match setup {
        CSetup::Random => FactorMatrix::new(uniform_matrix(&mut rng, k, r)),
        CSetup::Trends => {
            if r != 4 {
                return arg_err(format!("trend profiles need R = 4, got {r}"));
            }
            let first = uniform_matrix(&mut rng, k, 1);
            let kf = k as f64;
            let c = DMatrix::from_fn(k, 4, |t, col| {
                let x = t as f64 / kf;
                match col {
                    0 => first[(t, 0)],
                    1 => 0.5 + 0.5 * (2.0 * std::f64::consts::PI * x).sin(),
                    2 => (3.0 * x).exp() / 3f64.exp(),
                    _ => 1.0 / (1.0 + (-10.0 * (x - 0.5)).exp()),
                }
            });
            FactorMatrix::new(c)
        }
    }
}

/// `T + η·E·‖T‖/‖E‖` with standard normal `E`.
pub fn add_noise(t: &DenseTensor3, eta: f64, seed: Seed) -> Result<DenseTensor3> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return arg_err(format!("noise level must be a finite value >= 0, got {eta}"));
    }
    if eta == 0.0 {
        return Ok(t.clone());
    }
    let tn = t.frobenius_norm();
    if tn == 0.0 {
        return arg_err("cannot scale noise to an all-zero tensor");
    }
    let e = gaussian_matrix(&mut seed.rng(), t.values().len(), 1);
    let mut acc = NeumaierSum::default();
    for x in e.iter() {
        acc.add(x * x);
    }
    let scale = eta * tn / acc.total().sqrt();
    let values = t.values().iter().zip(e.iter()).map(|(x, n)| x + scale * n).collect();
    DenseTensor3::new(t.dims(), values)
}

pub fn gen_dataset(cfg: &SimConfig) -> Result<SimDataset> {
    cfg.validate()?;
    let (i, j, k) = cfg.dims;
    let (a, labels) = gen_a_clustered(i, cfg.rank, &cfg.cluster_sizes, cfg.cluster_jitter, cfg.seed.derive(&[1]))?;
    let b = match cfg.b_setup {
        BSetup::Random => gen_b_random_constrained(j, cfg.rank, k, cfg.seed.derive(&[2]))?,
        BSetup::Network => gen_b_network(j, cfg.rank, k, &cfg.network, cfg.seed.derive(&[2]))?,
    };
    let c = gen_c(k, cfg.rank, cfg.c_setup, cfg.seed.derive(&[3]))?;
    let clean = reconstruct_parafac2(&a, &b, &c)?;
    let noisy = add_noise(&clean, cfg.noise, cfg.seed.derive(&[4]))?;
    Ok(SimDataset {
        noisy,
        clean,
        a,
        b,
        c,
        labels,
    })
}
