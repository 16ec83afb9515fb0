//! Synthetic datasets, skewed query generators and trace replication.

use anyhow::{bail, ensure, Result};
use crackivf::VectorSet;
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};

/// A mixture of isotropic Gaussians with centers drawn from N(0, 1).
#[derive(Debug, Clone)]
pub struct Mixture {
    pub centers: VectorSet,
    pub sigma: f32,
}

impl Mixture {
    pub fn new(clusters: usize, dim: usize, sigma: f32, seed: u64) -> Result<Self> {
        ensure!(clusters > 0 && dim > 0, "mixture needs at least one cluster and dimension");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0f32, 1.0)?;
        let centers = (0..clusters * dim).map(|_| unit.sample(&mut rng)).collect();
        Ok(Self {
            centers: VectorSet::new(centers, dim)?,
            sigma,
        })
    }

    pub fn clusters(&self) -> usize {
        self.centers.len()
    }

    /// One point around each given cluster.
    pub fn sample_around(&self, clusters: &[usize], rng: &mut ChaCha8Rng) -> Result<VectorSet> {
        let dim = self.centers.dim();
        let noise = Normal::new(0.0f32, self.sigma)?;
        let mut data = Vec::with_capacity(clusters.len() * dim);
        for &c in clusters {
            data.extend(self.centers.row(c).iter().map(|&x| x + noise.sample(rng)));
        }
        Ok(VectorSet::new(data, dim)?)
    }

    /// `n` points spread evenly over the clusters.
    pub fn points(&self, n: usize, seed: u64) -> Result<VectorSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.clusters())).collect();
        self.sample_around(&labels, &mut rng)
    }
}

/// How query mass is spread over the mixture's clusters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Skew {
    Uniform,
    /// Cluster ranks follow a Zipf law with exponent `s`.
    Zipf { s: f64 },
    /// `hot_fraction` of the clusters receive `hot_mass` of the queries.
    Hotspot { hot_fraction: f64, hot_mass: f64 },
}

impl Skew {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Skew::Uniform => {}
            Skew::Zipf { s } => ensure!(s > 0.0, "zipf exponent must be positive"),
            Skew::Hotspot { hot_fraction, hot_mass } => {
                ensure!(hot_fraction > 0.0 && hot_fraction <= 1.0, "hot fraction must lie in (0, 1]");
                ensure!((0.0..=1.0).contains(&hot_mass), "hot mass must lie in [0, 1]");
            }
        }
        Ok(())
    }

    /// Sampling weight of each cluster. Cluster order is shuffled first so
    /// that the heavy clusters are not simply the low ids.
    pub fn weights(&self, clusters: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.validate()?;
        let mut order: Vec<usize> = (0..clusters).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], rng);
        let mut w = vec![0.0; clusters];
        match *self {
            Skew::Uniform => w.iter_mut().for_each(|x| *x = 1.0),
            Skew::Zipf { s } => {
                for (rank, &c) in order.iter().enumerate() {
                    w[c] = 1.0 / ((rank + 1) as f64).powf(s);
                }
            }
            Skew::Hotspot { hot_fraction, hot_mass } => {
                let hot = ((hot_fraction * clusters as f64).round() as usize).clamp(1, clusters);
                let cold = clusters - hot;
                for (rank, &c) in order.iter().enumerate() {
                    w[c] = if rank < hot {
                        hot_mass / hot as f64
                    } else if cold > 0 {
                        (1.0 - hot_mass) / cold as f64
                    } else {
                        0.0
                    };
                }
            }
        }
        Ok(w)
    }
}

/// `n` distinct queries drawn around clusters picked by `skew`.
pub fn skewed_queries(mix: &Mixture, n: usize, skew: Skew, seed: u64) -> Result<VectorSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = skew.weights(mix.clusters(), &mut rng)?;
    let pick = WeightedIndex::new(&weights)?;
    let labels: Vec<usize> = (0..n).map(|_| pick.sample(&mut rng)).collect();
    mix.sample_around(&labels, &mut rng)
}

/// A Zipf-distributed sample of ranks in `0..n`, for tests and tools.
pub fn zipf_ranks(n: usize, s: f64, count: usize, seed: u64) -> Result<Vec<usize>> {
    ensure!(n > 0, "zipf over an empty range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Zipf::new(n as f64, s)?;
    Ok((0..count).map(|_| z.sample(&mut rng) as usize - 1).collect())
}

/// Row indices into `n_unique` queries forming a trace of `target_len`,
/// sampled uniformly with replacement. With `identity` and a target equal to
/// `n_unique` every query appears once, in order.
pub fn replicate_queries(n_unique: usize, target_len: usize, seed: u64, identity: bool) -> Result<Vec<usize>> {
    if n_unique == 0 {
        bail!("no unique queries to replicate");
    }
    if identity && target_len == n_unique {
        return Ok((0..n_unique).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..target_len).map(|_| rng.random_range(0..n_unique)).collect())
}
