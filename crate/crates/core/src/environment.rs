//! Synthetic environments: instance generation, outcome sampling with
//! common random numbers, and multi-modal observation/fusion.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::pareto::{check_dim, pareto_front, FrontierIndexSet, ObjectiveVector, PointSet};
use crate::rng::{self, Purpose};

/// Coordinates of generated means stay in `[MEAN_LO, MEAN_HI]`.
pub const MEAN_LO: f64 = 0.1;
pub const MEAN_HI: f64 = 0.9;
const CLUSTER_JITTER_RAD: f64 = 0.1;
const SIMPLEX_TOL: f64 = 1e-9;

/// Parameters of the clustered-frontier-plus-confusers construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub k: usize,
    pub d: usize,
    pub clusters: usize,
    pub confuser_gap: f64,
    pub seed: u64,
    /// Number of arms placed on the tradeoff surface; defaults to
    /// `clamp(ceil(K/3), clusters, K)`.
    #[serde(default)]
    pub frontier_arms: Option<usize>,
}

impl InstanceParams {
    pub fn new(k: usize, d: usize, clusters: usize, confuser_gap: f64, seed: u64) -> Self {
        Self {
            k,
            d,
            clusters,
            confuser_gap,
            seed,
            frontier_arms: None,
        }
    }

    fn frontier_count(&self) -> usize {
        self.frontier_arms
            .unwrap_or_else(|| self.k.div_ceil(3))
            .clamp(self.clusters, self.k)
    }

    fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(invalid(format!("K must be >= 2, got {}", self.k)));
        }
        if !(2..=8).contains(&self.d) {
            return Err(invalid(format!("d must be in [2, 8], got {}", self.d)));
        }
        if self.clusters < 1 || self.clusters > self.k {
            return Err(invalid(format!(
                "cluster count must be in [1, K], got {}",
                self.clusters
            )));
        }
        if !(self.confuser_gap > 0.0 && self.confuser_gap <= 0.2) {
            return Err(invalid(format!(
                "confuser gap must be in (0, 0.2], got {}",
                self.confuser_gap
            )));
        }
        if let Some(f) = self.frontier_arms {
            if f < self.clusters || f > self.k {
                return Err(invalid("frontier arm count must be in [clusters, K]"));
            }
        }
        Ok(())
    }
}

/// Ground-truth arm means and their Pareto frontier. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    k: usize,
    d: usize,
    means: Vec<ObjectiveVector>,
    frontier_indices: FrontierIndexSet,
    gen_seed: u64,
    #[serde(default)]
    params: Option<InstanceParams>,
}

impl Instance {
    /// Wraps explicit means (each coordinate in `[0, 1]`).
    pub fn from_means(means: Vec<Vec<f64>>, gen_seed: u64) -> Result<Self> {
        let k = means.len();
        if k == 0 {
            return Err(Error::EmptySet);
        }
        let d = means[0].len();
        if d == 0 {
            return Err(invalid("means must have at least one objective"));
        }
        let set = PointSet::from_rows(d, &means)?;
        if set.iter().flatten().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(invalid("means must lie in [0, 1]"));
        }
        let frontier_indices = pareto_front(&set)?;
        Ok(Self {
            k,
            d,
            means: means.into_iter().map(ObjectiveVector::new).collect(),
            frontier_indices,
            gen_seed,
            params: None,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k]
    }

    pub fn means(&self) -> &[ObjectiveVector] {
        &self.means
    }

    pub fn mean_set(&self) -> PointSet {
        PointSet::from_rows(self.d, &self.means).expect("validated at construction")
    }

    pub fn frontier(&self) -> &FrontierIndexSet {
        &self.frontier_indices
    }

    pub fn frontier_means(&self) -> PointSet {
        self.mean_set().select(&self.frontier_indices.indices)
    }

    pub fn gen_seed(&self) -> u64 {
        self.gen_seed
    }

    pub fn params(&self) -> Option<&InstanceParams> {
        self.params.as_ref()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and re-validates a dumped instance.
    pub fn from_json(s: &str) -> Result<Self> {
        let raw: Instance = serde_json::from_str(s)?;
        let mut inst = Instance::from_means(
            raw.means.iter().map(|m| m.to_vec()).collect(),
            raw.gen_seed,
        )?;
        if raw.k != inst.k || raw.d != inst.d {
            return Err(invalid("instance file: K/d do not match the means matrix"));
        }
        if raw.frontier_indices != inst.frontier_indices {
            return Err(invalid("instance file: stored frontier does not match the means"));
        }
        inst.params = raw.params;
        Ok(inst)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= n;
    }
}

fn positive_orthant_direction<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(StandardNormal).abs())
            .collect();
        if v.iter().any(|&x| x > 1e-12) {
            normalize(&mut v);
            return v;
        }
    }
}

/// Rotates `center` by a random angle of scale `CLUSTER_JITTER_RAD` in a
/// random tangent direction, folded back into the positive orthant.
fn jitter_direction<R: Rng>(rng: &mut R, center: &[f64]) -> Vec<f64> {
    let d = center.len();
    let theta = (CLUSTER_JITTER_RAD * rng.sample::<f64, _>(StandardNormal).abs()).min(FRAC_PI_2);
    let noise: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let along: f64 = noise.iter().zip(center).map(|(a, b)| a * b).sum();
    let mut tangent: Vec<f64> = noise.iter().zip(center).map(|(n, c)| n - along * c).collect();
    let tn = tangent.iter().map(|x| x * x).sum::<f64>().sqrt();
    if tn < 1e-12 {
        return center.to_vec();
    }
    for x in tangent.iter_mut() {
        *x /= tn;
    }
    let mut dir: Vec<f64> = center
        .iter()
        .zip(&tangent)
        .map(|(c, t)| (theta.cos() * c + theta.sin() * t).abs())
        .collect();
    normalize(&mut dir);
    dir
}

/// Builds an instance whose frontier arms lie on the concave surface
/// `Σ_j ((u_j − 0.1)/0.8)² = 1` around `clusters` random directions, and
/// whose remaining arms are near-dominated copies of frontier arms (a
/// nonnegative perturbation with `ℓ∞` norm in `[gap/2, 2·gap]`).
pub fn generate_instance(params: &InstanceParams) -> Result<Instance> {
    params.validate()?;
    let InstanceParams {
        k,
        d,
        clusters,
        confuser_gap,
        seed,
        ..
    } = *params;
    let mut rng = rng::stream(seed, Purpose::Instance, &[k as u64, d as u64]);
    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| positive_orthant_direction(&mut rng, d))
        .collect();
    let n_frontier = params.frontier_count();
    let span = MEAN_HI - MEAN_LO;

    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    for i in 0..n_frontier {
        let dir = jitter_direction(&mut rng, &centers[i % clusters]);
        means.push(dir.iter().map(|x| MEAN_LO + span * x).collect());
    }
    for i in n_frontier..k {
        let parent = means[(i - n_frontier) % n_frontier].clone();
        let room: Vec<f64> = parent.iter().map(|x| x - MEAN_LO).collect();
        let max_room = room.iter().copied().fold(0.0, f64::max);
        let size = rng
            .random_range(0.5 * confuser_gap..=2.0 * confuser_gap)
            .min(max_room);
        let roomy: Vec<usize> = (0..d).filter(|&j| room[j] >= size).collect();
        let lead = roomy[rng.random_range(0..roomy.len())];
        let child: Vec<f64> = (0..d)
            .map(|j| {
                let pert = if j == lead {
                    size
                } else {
                    (size * rng.random::<f64>()).min(room[j])
                };
                parent[j] - pert
            })
            .collect();
        means.push(child);
    }
    means.shuffle(&mut rng);

    let mut inst = Instance::from_means(means, seed)?;
    inst.params = Some(params.clone());
    Ok(inst)
}

/// Latent outcome noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum NoiseSpec {
    /// `clip(μ + N(0, σ²I), 0, 1)`.
    GaussianClipped { sigma: f64 },
    /// Independent Bernoulli coordinates with means `μ_j`.
    Bernoulli,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if let NoiseSpec::GaussianClipped { sigma } = *self {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(invalid(format!("noise sigma must be >= 0, got {sigma}")));
            }
        }
        Ok(())
    }
}

/// One latent outcome `r_t(k)`. The draw is a pure function of
/// `(run_seed, t, k, j)`, independent of what else was sampled.
pub fn sample_outcome(inst: &Instance, noise: &NoiseSpec, run_seed: u64, t: u64, k: usize) -> ObjectiveVector {
    let mut rng = rng::stream(run_seed, Purpose::Outcome, &[t, k as u64]);
    let mu = inst.mean(k);
    let v = match *noise {
        NoiseSpec::GaussianClipped { sigma } => mu
            .iter()
            .map(|&m| {
                let z: f64 = rng.sample(StandardNormal);
                (m + sigma * z).clamp(0.0, 1.0)
            })
            .collect(),
        NoiseSpec::Bernoulli => mu
            .iter()
            .map(|&m| if rng.random::<f64>() < m { 1.0 } else { 0.0 })
            .collect(),
    };
    ObjectiveVector::new(v)
}

/// Noise scales and fusion weights of the observation modalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    sigmas: Vec<f64>,
    alphas: Vec<f64>,
}

impl ModalitySpec {
    pub fn new(sigmas: Vec<f64>, alphas: Vec<f64>) -> Result<Self> {
        check_positive(&sigmas)?;
        check_dim(sigmas.len(), alphas.len())?;
        check_simplex(&alphas)?;
        Ok(Self { sigmas, alphas })
    }

    /// Fusion weights proportional to `σ_m^{-2}`.
    pub fn inverse_variance(sigmas: Vec<f64>) -> Result<Self> {
        let alphas = inverse_variance_weights(&sigmas)?;
        Self::new(sigmas, alphas)
    }

    pub fn m(&self) -> usize {
        self.sigmas.len()
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn effective_sigma(&self) -> f64 {
        effective_sigma(&self.alphas, &self.sigmas).expect("validated at construction")
    }
}

fn check_positive(sigmas: &[f64]) -> Result<()> {
    if sigmas.is_empty() {
        return Err(invalid("need at least one modality"));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(invalid(format!("modality sigma must be positive and finite, got {s}")));
    }
    Ok(())
}

fn check_simplex(alphas: &[f64]) -> Result<()> {
    if alphas.iter().any(|a| !(*a >= 0.0)) {
        return Err(invalid("fusion weights must be nonnegative"));
    }
    let sum: f64 = alphas.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(invalid(format!("fusion weights must sum to 1, got {sum}")));
    }
    Ok(())
}

/// `z^{(m)} = latent + N(0, σ_m² I)` for every modality, unclipped.
pub fn sample_modalities(
    inst: &Instance,
    mods: &ModalitySpec,
    run_seed: u64,
    t: u64,
    k: usize,
    latent: &[f64],
) -> Vec<ObjectiveVector> {
    debug_assert_eq!(latent.len(), inst.d());
    mods.sigmas
        .iter()
        .enumerate()
        .map(|(m, &sigma)| {
            let mut rng = rng::stream(run_seed, Purpose::Modality, &[t, k as u64, m as u64]);
            ObjectiveVector::new(
                latent
                    .iter()
                    .map(|&r| r + sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            )
        })
        .collect()
}

/// Coordinate-wise convex combination `Σ_m α_m z^{(m)}`.
pub fn fuse(observations: &[ObjectiveVector], alphas: &[f64]) -> Result<ObjectiveVector> {
    check_dim(alphas.len(), observations.len())?;
    check_simplex(alphas)?;
    let d = observations.first().ok_or(Error::EmptySet)?.dim();
    let mut out = vec![0.0; d];
    for (z, &a) in observations.iter().zip(alphas) {
        check_dim(d, z.dim())?;
        for (o, x) in out.iter_mut().zip(z.iter()) {
            *o += a * x;
        }
    }
    Ok(ObjectiveVector::new(out))
}

pub fn inverse_variance_weights(sigmas: &[f64]) -> Result<Vec<f64>> {
    check_positive(sigmas)?;
    let precision: Vec<f64> = sigmas.iter().map(|s| 1.0 / (s * s)).collect();
    let total: f64 = precision.iter().sum();
    Ok(precision.iter().map(|p| p / total).collect())
}

/// `sqrt(Σ α_m² σ_m²)`: the noise scale of the fused observation.
pub fn effective_sigma(alphas: &[f64], sigmas: &[f64]) -> Result<f64> {
    check_positive(sigmas)?;
    check_dim(sigmas.len(), alphas.len())?;
    check_simplex(alphas)?;
    Ok(alphas
        .iter()
        .zip(sigmas)
        .map(|(a, s)| a * a * s * s)
        .sum::<f64>()
        .sqrt())
}
