//! The optimistic probe-then-commit learner: confidence bounds, pruning,
//! probe selection, commit rules and the ε-frontier output.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::environment::{fuse, sample_modalities, sample_outcome, Instance, ModalitySpec, NoiseSpec};
use crate::error::{invalid, Error, Result};
use crate::hypervolume::{marginal_unchecked, HvMode, ReferencePoint, DEFAULT_IN_LOOP_MC_SAMPLES};
use crate::pareto::{check_dim, dominates_unchecked, weakly_dominates, ObjectiveVector, PointSet};
use crate::rng::{self, Purpose};
use crate::scalarize::ScalarizerSpec;

/// Radius scale for `[0,1]`-bounded outcomes (Hoeffding parameter).
pub const DEFAULT_SIGMA_SCALE: f64 = 0.5;
pub const DEFAULT_DELTA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Hv,
    Scalar,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Hv => "hv",
            Mode::Scalar => "scalar",
        }
    }
}

/// Dominated-region model used for the probe potential and HV commits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbePotential {
    Boxes,
    Convexified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommitVariant {
    Realized,
    EmpiricalMean,
    UcbIndex,
}

impl CommitVariant {
    pub fn label(self) -> &'static str {
        match self {
            CommitVariant::Realized => "realized",
            CommitVariant::EmpiricalMean => "empirical-mean",
            CommitVariant::UcbIndex => "ucb-index",
        }
    }
}

/// How probe sets are chosen. The non-optimistic rules are control baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeRule {
    Optimistic,
    UniformRandom,
    RoundRobin,
}

impl ProbeRule {
    pub fn label(self) -> &'static str {
        match self {
            ProbeRule::Optimistic => "ptc-ucb",
            ProbeRule::UniformRandom => "uniform-random",
            ProbeRule::RoundRobin => "round-robin",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub mode: Mode,
    pub q: usize,
    /// Required in scalar mode.
    pub scalarizer: Option<ScalarizerSpec>,
    pub probe_potential: ProbePotential,
    pub commit_variant: CommitVariant,
    pub probe_rule: ProbeRule,
    /// Commit with knowledge of the true means (upper reference).
    pub oracle_commit: bool,
    pub multimodal: Option<ModalitySpec>,
    pub init_rounds: usize,
    pub delta: f64,
    /// Defaults to 0.5, or to the fused effective scale in multi-modal runs.
    pub sigma_scale: Option<f64>,
    /// Defaults to the origin.
    pub reference: Option<ReferencePoint>,
    /// Monte-Carlo samples for the convexified potential in `d >= 3`.
    pub mc_samples: usize,
    pub prune: bool,
    /// Keep every probed latent outcome in the round records.
    pub record_observations: bool,
}

impl LearnerConfig {
    pub fn new(mode: Mode, q: usize) -> Self {
        Self {
            mode,
            q,
            scalarizer: None,
            probe_potential: ProbePotential::Boxes,
            commit_variant: CommitVariant::Realized,
            probe_rule: ProbeRule::Optimistic,
            oracle_commit: false,
            multimodal: None,
            init_rounds: 1,
            delta: DEFAULT_DELTA,
            sigma_scale: None,
            reference: None,
            mc_samples: DEFAULT_IN_LOOP_MC_SAMPLES,
            prune: true,
            record_observations: false,
        }
    }

    pub fn scalar(q: usize, spec: ScalarizerSpec) -> Self {
        Self {
            scalarizer: Some(spec),
            ..Self::new(Mode::Scalar, q)
        }
    }

    pub fn hv(q: usize) -> Self {
        Self::new(Mode::Hv, q)
    }

    pub fn resolved_sigma_scale(&self) -> f64 {
        self.sigma_scale.unwrap_or_else(|| match &self.multimodal {
            Some(m) => m.effective_sigma(),
            None => DEFAULT_SIGMA_SCALE,
        })
    }

    /// Short label identifying the algorithm variant.
    pub fn algo_label(&self) -> String {
        let mut label = self.probe_rule.label().to_string();
        if self.multimodal.is_some() {
            label = format!("mm-{label}");
        }
        match self.mode {
            Mode::Hv => {
                if self.probe_potential == ProbePotential::Convexified {
                    label.push_str("-convex");
                }
            }
            Mode::Scalar => {
                if let Some(s) = &self.scalarizer {
                    label.push('-');
                    label.push_str(s.kind().label());
                }
                label.push('-');
                label.push_str(self.commit_variant.label());
            }
        }
        if self.oracle_commit {
            label.push_str("-oracle");
        }
        label
    }

    pub fn validate(&self, k: usize, d: usize) -> Result<()> {
        if self.q < 1 || self.q > k {
            return Err(invalid(format!("q must be in [1, {k}], got {}", self.q)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!("delta must be in (0, 1), got {}", self.delta)));
        }
        let s = self.resolved_sigma_scale();
        if !(s > 0.0 && s.is_finite()) {
            return Err(invalid(format!("sigma_scale must be positive, got {s}")));
        }
        match (&self.scalarizer, self.mode) {
            (None, Mode::Scalar) => return Err(invalid("scalar mode requires a scalarizer")),
            (Some(spec), _) => check_dim(d, spec.dim())?,
            _ => {}
        }
        if let Some(r) = &self.reference {
            check_dim(d, r.dim())?;
            if r.as_slice().iter().any(|&x| x > 0.0) {
                return Err(invalid("reference point must be <= 0 so every outcome lies above it"));
            }
        }
        if self.mode == Mode::Hv && self.probe_potential == ProbePotential::Convexified && d >= 3 && self.mc_samples == 0 {
            return Err(invalid("convexified potential in d >= 3 needs mc_samples >= 1"));
        }
        Ok(())
    }
}

/// Probe counts and running means per arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceState {
    k: usize,
    d: usize,
    counts: Vec<u64>,
    emp_means: Vec<f64>,
    delta: f64,
    sigma_scale: f64,
}

impl ConfidenceState {
    pub fn new(k: usize, d: usize, delta: f64, sigma_scale: f64) -> Self {
        Self {
            k,
            d,
            counts: vec![0; k],
            emp_means: vec![0.0; k * d],
            delta,
            sigma_scale,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total_probes(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn emp_mean(&self, k: usize) -> &[f64] {
        &self.emp_means[k * self.d..(k + 1) * self.d]
    }

    pub fn sigma_scale(&self) -> f64 {
        self.sigma_scale
    }

    /// `β_t = 2·ln(2·K·d·t²/δ)`, floored at zero.
    pub fn beta(&self, t: u64) -> f64 {
        let tf = t as f64;
        (2.0 * (2.0 * self.k as f64 * self.d as f64 * tf * tf / self.delta).ln()).max(0.0)
    }

    pub fn radius(&self, t: u64, k: usize) -> f64 {
        let n = self.counts[k].max(1) as f64;
        self.sigma_scale * (self.beta(t) / n).sqrt()
    }

    /// Incremental mean update with one observation.
    pub fn update(&mut self, k: usize, obs: &[f64]) {
        self.counts[k] += 1;
        let n = self.counts[k] as f64;
        let d = self.d;
        for (m, x) in self.emp_means[k * d..(k + 1) * d].iter_mut().zip(obs) {
            *m += (x - *m) / n;
        }
    }

    /// Clipped bounds; a never-probed arm gets the full box `[0, 1]`.
    pub fn bounds(&self, t: u64) -> BoundVectors {
        let d = self.d;
        let mut ucb = vec![1.0; self.k * d];
        let mut lcb = vec![0.0; self.k * d];
        for k in 0..self.k {
            if self.counts[k] == 0 {
                continue;
            }
            let b = self.radius(t, k);
            for j in 0..d {
                let m = self.emp_means[k * d + j];
                ucb[k * d + j] = (m + b).min(1.0);
                lcb[k * d + j] = (m - b).max(0.0);
            }
        }
        BoundVectors { d, ucb, lcb }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundVectors {
    d: usize,
    ucb: Vec<f64>,
    lcb: Vec<f64>,
}

impl BoundVectors {
    /// Builds bounds from explicit per-arm rows.
    pub fn from_rows(ucb: &[Vec<f64>], lcb: &[Vec<f64>]) -> Result<Self> {
        check_dim(ucb.len(), lcb.len())?;
        let d = ucb.first().ok_or(Error::EmptySet)?.len();
        let u = PointSet::from_rows(d, ucb)?;
        let l = PointSet::from_rows(d, lcb)?;
        if u.iter().zip(l.iter()).any(|(a, b)| !weakly_dominates(a, b)) {
            return Err(invalid("lcb must not exceed ucb"));
        }
        Ok(Self {
            d,
            ucb: u.iter().flatten().copied().collect(),
            lcb: l.iter().flatten().copied().collect(),
        })
    }

    pub fn k(&self) -> usize {
        self.ucb.len() / self.d
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn ucb(&self, k: usize) -> &[f64] {
        &self.ucb[k * self.d..(k + 1) * self.d]
    }

    pub fn lcb(&self, k: usize) -> &[f64] {
        &self.lcb[k * self.d..(k + 1) * self.d]
    }
}

/// Arms of `active` not certifiably dominated by another active arm.
///
/// The arm with the largest ucb sum can never be certified dominated, so
/// the result is never empty.
pub fn prune(active: &[usize], bv: &BoundVectors) -> Vec<usize> {
    active
        .iter()
        .copied()
        .filter(|&k| {
            !active
                .iter()
                .any(|&other| other != k && dominates_unchecked(bv.lcb(other), bv.ucb(k)))
        })
        .collect()
}

fn singleton_volume(u: &[f64], r: &[f64]) -> f64 {
    u.iter().zip(r).map(|(a, b)| (a - b).max(0.0)).product()
}

/// Tops up `chosen` to `q` arms from `pool`, preferring larger singleton
/// ucb volume, then fewer probes, then smaller index.
fn pad(chosen: &mut Vec<usize>, pool: &[usize], q: usize, bv: &BoundVectors, r: &[f64], counts: &[u64]) {
    if chosen.len() >= q {
        return;
    }
    let mut rest: Vec<(f64, usize)> = pool
        .iter()
        .filter(|k| !chosen.contains(k))
        .map(|&k| (singleton_volume(bv.ucb(k), r), k))
        .collect();
    rest.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(counts[a.1].cmp(&counts[b.1]))
            .then(a.1.cmp(&b.1))
    });
    chosen.extend(rest.iter().take(q - chosen.len()).map(|&(_, k)| k));
}

/// Greedy maximization of the optimistic hypervolume `HV({ucb(k) : k ∈ S})`.
///
/// Returns `q` arms: greedy picks from `active`, padded from the remaining
/// arms of `0..K` if `active` is too small. Ties go to fewer probes, then
/// smaller index.
pub fn select_probes_hv(
    active: &[usize],
    bv: &BoundVectors,
    q: usize,
    reference: &ReferencePoint,
    mode: HvMode,
    counts: &[u64],
) -> Vec<usize> {
    let r = reference.as_slice();
    let mut chosen: Vec<usize> = Vec::with_capacity(q);
    if q >= active.len() {
        chosen.extend_from_slice(active);
    } else {
        let mut picked = PointSet::with_dim(bv.d());
        for _ in 0..q {
            let mut best: Option<(f64, usize)> = None;
            for &k in active {
                if chosen.contains(&k) {
                    continue;
                }
                let gain = marginal_unchecked(picked.iter(), bv.ucb(k), r, mode);
                let better = match best {
                    None => true,
                    Some((g, b)) => gain > g || (gain == g && (counts[k], k) < (counts[b], b)),
                };
                if better {
                    best = Some((gain, k));
                }
            }
            let (_, k) = best.expect("q < |active| leaves a candidate");
            chosen.push(k);
            picked.push(bv.ucb(k)).expect("bounds are finite");
        }
    }
    let all: Vec<usize> = (0..bv.k()).collect();
    pad(&mut chosen, &all, q, bv, r, counts);
    chosen
}

/// Top-`q` arms of `active` by `φ(ucb)`, ties to fewer probes then smaller
/// index, padded from the rest of `0..K` in the same order.
pub fn select_probes_scalar(
    active: &[usize],
    bv: &BoundVectors,
    q: usize,
    spec: &ScalarizerSpec,
    counts: &[u64],
) -> Vec<usize> {
    let rank = |arms: &mut Vec<(f64, usize)>| {
        arms.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(counts[a.1].cmp(&counts[b.1]))
                .then(a.1.cmp(&b.1))
        })
    };
    let mut scored: Vec<(f64, usize)> = active.iter().map(|&k| (spec.value(bv.ucb(k)), k)).collect();
    rank(&mut scored);
    let mut chosen: Vec<usize> = scored.iter().take(q).map(|&(_, k)| k).collect();
    if chosen.len() < q {
        let mut rest: Vec<(f64, usize)> = (0..bv.k())
            .filter(|k| !chosen.contains(k))
            .map(|k| (spec.value(bv.ucb(k)), k))
            .collect();
        rank(&mut rest);
        chosen.extend(rest.iter().take(q - chosen.len()).map(|&(_, k)| k));
    }
    chosen
}

/// The `q` least-probed arms of `active` (ties to smaller index), padded
/// from the other arms the same way.
fn least_probed(active: &[usize], k_total: usize, q: usize, counts: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = active.to_vec();
    order.sort_by_key(|&k| (counts[k], k));
    order.truncate(q);
    if order.len() < q {
        let mut rest: Vec<usize> = (0..k_total).filter(|k| !order.contains(k)).collect();
        rest.sort_by_key(|&k| (counts[k], k));
        order.extend(rest.into_iter().take(q - order.len()));
    }
    order
}

/// Probed arm whose estimate adds the most hypervolume to the archive; ties
/// go to the larger coordinate sum, then the smaller index.
pub fn commit_hv(archive: &Archive, probed: &[(usize, &[f64])], reference: &ReferencePoint, mode: HvMode) -> Result<usize> {
    let r = reference.as_slice();
    let mut best: Option<(f64, f64, usize)> = None;
    for &(k, y) in probed {
        check_dim(r.len(), y.len())?;
        let gain = marginal_unchecked(archive.cache().iter(), y, r, mode);
        let sum: f64 = y.iter().sum();
        let better = match best {
            None => true,
            Some((g, s, b)) => gain > g || (gain == g && (sum > s || (sum == s && k < b))),
        };
        if better {
            best = Some((gain, sum, k));
        }
    }
    best.map(|(_, _, k)| k).ok_or(Error::EmptySet)
}

/// Scalar commit. `probed` carries each arm's observed outcome (latent or
/// fused); `state` must already include this round's observations.
pub fn commit_scalar(
    probed: &[(usize, &[f64])],
    bv: &BoundVectors,
    state: &ConfidenceState,
    spec: &ScalarizerSpec,
    variant: CommitVariant,
) -> Result<usize> {
    argmax_by(probed.iter().map(|&(k, y)| {
        let score = match variant {
            CommitVariant::Realized => spec.value(y),
            CommitVariant::EmpiricalMean => spec.value(state.emp_mean(k)),
            CommitVariant::UcbIndex => spec.value(bv.ucb(k)),
        };
        (score, k)
    }))
}

/// Largest score, ties to the smaller arm index.
fn argmax_by(items: impl Iterator<Item = (f64, usize)>) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (s, k) in items {
        let better = match best {
            None => true,
            Some((bs, bk)) => s > bs || (s == bs && k < bk),
        };
        if better {
            best = Some((s, k));
        }
    }
    best.map(|(_, k)| k).ok_or(Error::EmptySet)
}

/// Arms not certified to be `eps`-dominated:
/// `{k : ¬∃k' with lcb(k') ⪰ ucb(k) + eps/2}`.
pub fn eps_frontier_output(bv: &BoundVectors, eps: f64) -> Result<Vec<usize>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidEpsilon(eps));
    }
    let half = eps / 2.0;
    let k_total = bv.k();
    Ok((0..k_total)
        .filter(|&k| {
            !(0..k_total).any(|other| {
                other != k && bv.lcb(other).iter().zip(bv.ucb(k)).all(|(l, u)| *l >= u + half)
            })
        })
        .collect())
}

/// Executed outcomes plus their nondominated subset, which has the same
/// hypervolume under either dominated-region model.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    outcomes: PointSet,
    cache: PointSet,
}

impl Archive {
    pub fn new(d: usize) -> Self {
        Self {
            outcomes: PointSet::with_dim(d),
            cache: PointSet::with_dim(d),
        }
    }

    pub fn push(&mut self, y: &[f64]) -> Result<()> {
        self.outcomes.push(y)?;
        if self.cache.iter().any(|c| weakly_dominates(c, y)) {
            return Ok(());
        }
        let kept: Vec<Vec<f64>> = self
            .cache
            .iter()
            .filter(|c| !weakly_dominates(y, c))
            .map(<[f64]>::to_vec)
            .collect();
        let mut cache = PointSet::from_rows(self.cache.dim(), kept)?;
        cache.push(y)?;
        self.cache = cache;
        Ok(())
    }

    pub fn outcomes(&self) -> &PointSet {
        &self.outcomes
    }

    pub fn cache(&self) -> &PointSet {
        &self.cache
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: u64,
    pub probe_set: Vec<usize>,
    pub committed: usize,
    pub latent_outcome: ObjectiveVector,
    pub fused_outcome: Option<ObjectiveVector>,
    pub active_set_size: usize,
    /// Latent outcomes of every probed arm, aligned with `probe_set`; only
    /// kept when the config asks for it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observations: Option<Vec<ObjectiveVector>>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<RoundRecord>,
    pub state: ConfidenceState,
    pub archive: Archive,
    pub active: Vec<usize>,
}

/// One learner run in progress. Owns all mutable state.
#[derive(Debug, Clone)]
pub struct Learner<'a> {
    config: LearnerConfig,
    instance: &'a Instance,
    noise: NoiseSpec,
    run_seed: u64,
    reference: ReferencePoint,
    state: ConfidenceState,
    active: Vec<usize>,
    archive: Archive,
    init_len: u64,
    t: u64,
}

impl<'a> Learner<'a> {
    pub fn new(config: &LearnerConfig, instance: &'a Instance, noise: NoiseSpec, run_seed: u64) -> Result<Self> {
        let (k, d) = (instance.k(), instance.d());
        config.validate(k, d)?;
        noise.validate()?;
        let reference = config.reference.clone().unwrap_or_else(|| ReferencePoint::origin(d));
        let init_len = (config.init_rounds * k).div_ceil(config.q) as u64;
        Ok(Self {
            state: ConfidenceState::new(k, d, config.delta, config.resolved_sigma_scale()),
            config: config.clone(),
            instance,
            noise,
            run_seed,
            reference,
            active: (0..k).collect(),
            archive: Archive::new(d),
            init_len,
            t: 0,
        })
    }

    pub fn state(&self) -> &ConfidenceState {
        &self.state
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn archive(&self) -> &Archive {
        &self.archive
    }

    /// Rounds completed so far.
    pub fn rounds(&self) -> u64 {
        self.t
    }

    /// Bounds the learner would use at the start of the next round.
    pub fn current_bounds(&self) -> BoundVectors {
        self.state.bounds(self.t + 1)
    }

    fn hv_mode(&self, t: u64, salt: u64) -> HvMode {
        match self.config.probe_potential {
            ProbePotential::Boxes => HvMode::Boxes,
            ProbePotential::Convexified => HvMode::Convex {
                mc_samples: self.config.mc_samples,
                mc_seed: rng::key(self.run_seed, Purpose::HvMonteCarlo, &[t, salt]),
            },
        }
    }

    fn choose_probes(&self, t: u64, bv: &BoundVectors) -> Vec<usize> {
        let q = self.config.q;
        let k_total = self.instance.k();
        let counts = self.state.counts();
        match self.config.probe_rule {
            ProbeRule::UniformRandom => {
                let mut r = rng::stream(self.run_seed, Purpose::ProbeBaseline, &[t]);
                let mut s = sample(&mut r, k_total, q).into_vec();
                s.sort_unstable();
                s
            }
            ProbeRule::RoundRobin => {
                let start = ((t - 1) as usize * q) % k_total;
                (0..q).map(|i| (start + i) % k_total).collect()
            }
            ProbeRule::Optimistic if t <= self.init_len => least_probed(&self.active, k_total, q, counts),
            ProbeRule::Optimistic => match self.config.mode {
                Mode::Hv => select_probes_hv(&self.active, bv, q, &self.reference, self.hv_mode(t, 0), counts),
                Mode::Scalar => select_probes_scalar(
                    &self.active,
                    bv,
                    q,
                    self.config.scalarizer.as_ref().expect("validated"),
                    counts,
                ),
            },
        }
    }

    /// Plays one round.
    pub fn step(&mut self) -> Result<RoundRecord> {
        let t = self.t + 1;
        let bv = self.state.bounds(t);
        if self.config.prune {
            self.active = prune(&self.active, &bv);
        }
        let active_set_size = self.active.len();
        let probe_set = self.choose_probes(t, &bv);
        debug_assert_eq!(probe_set.len(), self.config.q);

        let mut latent = Vec::with_capacity(probe_set.len());
        let mut estimates = Vec::with_capacity(probe_set.len());
        for &k in &probe_set {
            let r = sample_outcome(self.instance, &self.noise, self.run_seed, t, k);
            let est = match &self.config.multimodal {
                Some(mods) => {
                    let z = sample_modalities(self.instance, mods, self.run_seed, t, k, &r);
                    fuse(&z, mods.alphas())?
                }
                None => r.clone(),
            };
            self.state.update(k, &est);
            latent.push(r);
            estimates.push(est);
        }

        let probed: Vec<(usize, &[f64])> = probe_set.iter().copied().zip(estimates.iter().map(|e| e.as_slice())).collect();
        let committed = if self.config.oracle_commit {
            let truth: Vec<(usize, &[f64])> = probe_set.iter().map(|&k| (k, self.instance.mean(k))).collect();
            match (self.config.mode, &self.config.scalarizer) {
                (Mode::Scalar, Some(spec)) => argmax_by(truth.iter().map(|&(k, m)| (spec.value(m), k)))?,
                _ => commit_hv(&self.archive, &truth, &self.reference, self.hv_mode(t, 1))?,
            }
        } else {
            match self.config.mode {
                Mode::Hv => commit_hv(&self.archive, &probed, &self.reference, self.hv_mode(t, 1))?,
                Mode::Scalar => commit_scalar(
                    &probed,
                    &bv,
                    &self.state,
                    self.config.scalarizer.as_ref().expect("validated"),
                    self.config.commit_variant,
                )?,
            }
        };
        let pos = probe_set.iter().position(|&k| k == committed).expect("commit is a probed arm");
        if self.config.mode == Mode::Hv {
            self.archive.push(&estimates[pos])?;
        }
        let fused_outcome = self.config.multimodal.as_ref().map(|_| estimates[pos].clone());
        let latent_outcome = latent[pos].clone();
        self.t = t;
        Ok(RoundRecord {
            t,
            probe_set,
            committed,
            latent_outcome,
            fused_outcome,
            active_set_size,
            observations: self.config.record_observations.then_some(latent),
        })
    }

    pub fn into_trajectory(self, records: Vec<RoundRecord>) -> Trajectory {
        Trajectory {
            records,
            state: self.state,
            archive: self.archive,
            active: self.active,
        }
    }
}

/// Runs `horizon` rounds; deterministic in all inputs.
pub fn run(config: &LearnerConfig, instance: &Instance, noise: NoiseSpec, horizon: u64, run_seed: u64) -> Result<Trajectory> {
    if horizon < 1 {
        return Err(invalid("horizon must be >= 1"));
    }
    let mut learner = Learner::new(config, instance, noise, run_seed)?;
    let mut records = Vec::with_capacity(horizon as usize);
    for _ in 0..horizon {
        records.push(learner.step()?);
    }
    Ok(learner.into_trajectory(records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{generate_instance, InstanceParams};
    use crate::hypervolume::hv_boxes;
    use crate::scalarize::ScalarizerKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ws2() -> ScalarizerSpec {
        ScalarizerSpec::new(ScalarizerKind::WeightedSum, vec![0.5, 0.5]).unwrap()
    }

    fn bv(ucb: &[Vec<f64>], lcb: &[Vec<f64>]) -> BoundVectors {
        BoundVectors::from_rows(ucb, lcb).unwrap()
    }

    fn instance() -> Instance {
        generate_instance(&InstanceParams::new(12, 3, 3, 0.05, 11)).unwrap()
    }

    const NOISE: NoiseSpec = NoiseSpec::GaussianClipped { sigma: 0.1 };

    #[test]
    fn radius_examples() {
        let mut s = ConfidenceState::new(2, 2, 0.05, 1.0);
        // 2·ln(160) = 10.1504…
        assert!((s.beta(1) - 10.149).abs() < 2e-3);
        assert!((s.radius(1, 0) - 3.186).abs() < 1e-3);
        s.counts[0] = 4;
        s.counts[1] = 16;
        assert!((s.radius(7, 1) - 0.5 * s.radius(7, 0)).abs() < 1e-15);
        assert!(s.radius(8, 0) >= s.radius(7, 0));
        let edge = ConfidenceState::new(1, 1, 0.999, 1.0);
        assert!(edge.radius(1, 0) >= 0.0);
        let zero = ConfidenceState { delta: 2.0, ..ConfidenceState::new(1, 1, 0.5, 1.0) };
        assert_eq!(zero.radius(1, 0), 0.0);
    }

    #[test]
    fn bounds_examples() {
        let mut s = ConfidenceState::new(3, 2, 0.05, 0.5);
        let b = s.bounds(1);
        assert_eq!(b.ucb(0), &[1.0, 1.0]);
        assert_eq!(b.lcb(0), &[0.0, 0.0]);
        // pick sigma so that b = 0.2 exactly at N=1
        let beta = s.beta(1);
        s.sigma_scale = 0.2 / beta.sqrt();
        s.update(1, &[0.5, 0.5]);
        s.update(2, &[0.95, 0.95]);
        let b = s.bounds(1);
        assert!((b.ucb(1)[0] - 0.7).abs() < 1e-12 && (b.lcb(1)[0] - 0.3).abs() < 1e-12);
        assert_eq!(b.ucb(2)[0], 1.0);
        assert!((b.lcb(2)[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn prune_examples() {
        let b = bv(&[vec![0.9, 0.9], vec![0.5, 0.5]], &[vec![0.6, 0.6], vec![0.2, 0.2]]);
        assert_eq!(prune(&[0, 1], &b), vec![0]);
        let b = bv(&[vec![0.9, 0.9], vec![0.7, 0.7]], &[vec![0.6, 0.6], vec![0.2, 0.2]]);
        assert_eq!(prune(&[0, 1], &b), vec![0, 1]);
        // an already-removed dominator no longer counts
        let b = bv(&[vec![0.9, 0.9], vec![0.5, 0.5]], &[vec![0.6, 0.6], vec![0.2, 0.2]]);
        assert_eq!(prune(&[1], &b), vec![1]);
    }

    #[test]
    fn hv_probe_examples() {
        let b = bv(
            &[vec![0.9, 0.1], vec![0.5, 0.5], vec![0.2, 0.8], vec![0.4, 0.4]],
            &vec![vec![0.0, 0.0]; 4],
        );
        let r = ReferencePoint::origin(2);
        let counts = [0u64; 4];
        assert_eq!(select_probes_hv(&[0, 1, 2, 3], &b, 1, &r, HvMode::Boxes, &counts), vec![1]);
        let mut all = select_probes_hv(&[0, 1, 2, 3], &b, 4, &r, HvMode::Boxes, &counts);
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
        // padding from pruned arms by singleton volume
        assert_eq!(select_probes_hv(&[2], &b, 3, &r, HvMode::Boxes, &counts), vec![2, 1, 3]);
    }

    #[test]
    fn hv_probe_ties_prefer_fewer_probes() {
        let b = bv(&vec![vec![1.0, 1.0]; 4], &vec![vec![0.0, 0.0]; 4]);
        let r = ReferencePoint::origin(2);
        let counts = [3u64, 1, 0, 1];
        assert_eq!(select_probes_hv(&[0, 1, 2, 3], &b, 3, &r, HvMode::Boxes, &counts), vec![2, 1, 3]);
    }

    #[test]
    fn scalar_probe_examples() {
        let spec = ws2();
        let b = bv(
            &[vec![0.9, 0.1], vec![0.6, 0.6], vec![0.2, 0.8], vec![0.4, 0.4]],
            &vec![vec![0.0, 0.0]; 4],
        );
        assert_eq!(select_probes_scalar(&[0, 1, 2, 3], &b, 2, &spec, &[0; 4]), vec![1, 0]);
        let b = bv(&vec![vec![1.0, 1.0]; 4], &vec![vec![0.0, 0.0]; 4]);
        assert_eq!(select_probes_scalar(&[0, 1, 2, 3], &b, 2, &spec, &[2, 1, 2, 0]), vec![3, 1]);
        assert_eq!(select_probes_scalar(&[0], &b, 2, &spec, &[2, 1, 2, 0]), vec![0, 3]);
    }

    #[test]
    fn commit_hv_examples() {
        let r = ReferencePoint::origin(2);
        let empty = Archive::new(2);
        let probed: Vec<(usize, &[f64])> = vec![(0, &[0.9, 0.1]), (1, &[0.5, 0.5])];
        assert_eq!(commit_hv(&empty, &probed, &r, HvMode::Boxes).unwrap(), 1);
        let mut a = Archive::new(2);
        a.push(&[0.8, 0.8]).unwrap();
        // both inside the dominated region: all gains zero, larger sum wins
        let probed: Vec<(usize, &[f64])> = vec![(3, &[0.1, 0.2]), (5, &[0.3, 0.2])];
        assert_eq!(commit_hv(&a, &probed, &r, HvMode::Boxes).unwrap(), 5);
        assert!(commit_hv(&a, &[], &r, HvMode::Boxes).is_err());
    }

    #[test]
    fn commit_hv_picks_max_marginal_on_random_archives() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = ReferencePoint::origin(3);
        for _ in 0..200 {
            let mut a = Archive::new(3);
            for _ in 0..rng.random_range(0..8) {
                let p: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
                a.push(&p).unwrap();
            }
            let cands: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
            let probed: Vec<(usize, &[f64])> = cands.iter().enumerate().map(|(i, c)| (i, c.as_slice())).collect();
            let k = commit_hv(&a, &probed, &r, HvMode::Boxes).unwrap();
            let base = hv_boxes(a.outcomes(), &r).unwrap().value;
            let gains: Vec<f64> = cands
                .iter()
                .map(|c| {
                    let mut s = a.outcomes().clone();
                    s.push(c).unwrap();
                    hv_boxes(&s, &r).unwrap().value - base
                })
                .collect();
            let max = gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!((gains[k] - max).abs() < 1e-12);
        }
    }

    #[test]
    fn commit_scalar_examples() {
        let spec = ws2();
        let mut s = ConfidenceState::new(2, 2, 0.05, 0.5);
        s.update(0, &[0.8, 0.2]);
        s.update(1, &[0.4, 0.7]);
        let b = s.bounds(1);
        let probed: Vec<(usize, &[f64])> = vec![(0, &[0.8, 0.2]), (1, &[0.4, 0.7])];
        for v in [CommitVariant::Realized, CommitVariant::EmpiricalMean] {
            assert_eq!(commit_scalar(&probed, &b, &s, &spec, v).unwrap(), 1);
        }
        // equal clipped ucb: smaller index
        assert_eq!(commit_scalar(&probed, &b, &s, &spec, CommitVariant::UcbIndex).unwrap(), 0);
        let single: Vec<(usize, &[f64])> = vec![(1, &[0.1, 0.1])];
        for v in [CommitVariant::Realized, CommitVariant::EmpiricalMean, CommitVariant::UcbIndex] {
            assert_eq!(commit_scalar(&single, &b, &s, &spec, v).unwrap(), 1);
        }
        assert!(commit_scalar(&[], &b, &s, &spec, CommitVariant::Realized).is_err());
    }

    #[test]
    fn eps_output_examples() {
        let b = bv(&[vec![0.7, 0.7], vec![0.5, 0.5]], &[vec![0.7, 0.7], vec![0.5, 0.5]]);
        assert_eq!(eps_frontier_output(&b, 0.1).unwrap(), vec![0]);
        let wide = bv(&vec![vec![1.0, 1.0]; 3], &vec![vec![0.0, 0.0]; 3]);
        assert_eq!(eps_frontier_output(&wide, 0.1).unwrap(), vec![0, 1, 2]);
        assert!(eps_frontier_output(&wide, 0.0).is_err());
    }

    #[test]
    fn archive_cache_tracks_hypervolume() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = ReferencePoint::origin(3);
        let mut a = Archive::new(3);
        for _ in 0..300 {
            let p: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            a.push(&p).unwrap();
            let full = hv_boxes(a.outcomes(), &r).unwrap().value;
            let cached = hv_boxes(a.cache(), &r).unwrap().value;
            assert!((full - cached).abs() < 1e-12);
        }
        assert_eq!(a.len(), 300);
    }

    #[test]
    fn step_invariants() {
        let inst = instance();
        for mode in [Mode::Hv, Mode::Scalar] {
            for q in [1, 2, 5, 12] {
                let mut cfg = LearnerConfig::new(mode, q);
                cfg.scalarizer = Some(ScalarizerSpec::uniform_weighted_sum(3));
                let mut l = Learner::new(&cfg, &inst, NOISE, 3).unwrap();
                let mut active_before = l.active().to_vec();
                for _ in 0..200 {
                    let before = l.state().total_probes();
                    let rec = l.step().unwrap();
                    assert_eq!(l.state().total_probes() - before, q as u64);
                    assert!(rec.probe_set.contains(&rec.committed));
                    let mut uniq = rec.probe_set.clone();
                    uniq.sort_unstable();
                    uniq.dedup();
                    assert_eq!(uniq.len(), q);
                    if q <= rec.active_set_size {
                        assert!(rec.probe_set.iter().all(|k| l.active().contains(k)));
                    }
                    assert!(l.active().iter().all(|k| active_before.contains(k)));
                    active_before = l.active().to_vec();
                }
            }
        }
    }

    #[test]
    fn full_information_probes_everything() {
        let inst = instance();
        let cfg = LearnerConfig::scalar(12, ScalarizerSpec::uniform_weighted_sum(3));
        let tr = run(&cfg, &inst, NOISE, 50, 1).unwrap();
        assert!(tr.state.counts().iter().all(|&n| n == 50));
        assert_eq!(tr.records[0].probe_set.len(), 12);
    }

    #[test]
    fn init_phase_probes_every_arm() {
        let inst = generate_instance(&InstanceParams::new(4, 2, 2, 0.05, 1)).unwrap();
        let mut cfg = LearnerConfig::scalar(2, ws2());
        cfg.init_rounds = 3;
        let mut l = Learner::new(&cfg, &inst, NOISE, 2).unwrap();
        for _ in 0..6 {
            l.step().unwrap();
        }
        assert!(l.state().counts().iter().all(|&n| n >= 3));
    }

    #[test]
    fn runs_are_deterministic() {
        let inst = instance();
        for mode in [Mode::Hv, Mode::Scalar] {
            let mut cfg = LearnerConfig::new(mode, 2);
            cfg.scalarizer = Some(ScalarizerSpec::uniform_weighted_sum(3));
            let a = run(&cfg, &inst, NOISE, 300, 9).unwrap();
            let b = run(&cfg, &inst, NOISE, 300, 9).unwrap();
            assert_eq!(a.records, b.records);
            assert_eq!(a.state, b.state);
        }
    }

    #[test]
    fn single_modality_matches_unimodal() {
        let inst = instance();
        let noise = NoiseSpec::GaussianClipped { sigma: 0.02 };
        let mut uni = LearnerConfig::scalar(2, ScalarizerSpec::uniform_weighted_sum(3));
        uni.sigma_scale = Some(0.3);
        let mut mm = uni.clone();
        mm.multimodal = Some(ModalitySpec::new(vec![1e-300], vec![1.0]).unwrap());
        let a = run(&uni, &inst, noise, 500, 4).unwrap();
        let b = run(&mm, &inst, noise, 500, 4).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.probe_set, y.probe_set);
            assert_eq!(x.committed, y.committed);
            assert_eq!(x.latent_outcome, y.latent_outcome);
            assert_eq!(Some(&x.latent_outcome), y.fused_outcome.as_ref());
        }
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn hv_archive_is_monotone() {
        let inst = instance();
        let r = ReferencePoint::origin(3);
        let mut l = Learner::new(&LearnerConfig::hv(3), &inst, NOISE, 6).unwrap();
        let mut last = 0.0;
        for _ in 0..150 {
            l.step().unwrap();
            let v = hv_boxes(l.archive().cache(), &r).unwrap().value;
            assert!(v >= last - 1e-12);
            last = v;
        }
    }

    #[test]
    fn baselines_respect_budget() {
        let inst = instance();
        for rule in [ProbeRule::UniformRandom, ProbeRule::RoundRobin] {
            let mut cfg = LearnerConfig::scalar(5, ScalarizerSpec::uniform_weighted_sum(3));
            cfg.probe_rule = rule;
            let tr = run(&cfg, &inst, NOISE, 120, 2).unwrap();
            assert_eq!(tr.state.total_probes(), 600);
            if rule == ProbeRule::RoundRobin {
                assert!(tr.state.counts().iter().all(|&n| n == 50));
            }
        }
    }

    #[test]
    fn scalar_optimism_when_bounds_hold() {
        let inst = instance();
        let spec = ScalarizerSpec::uniform_weighted_sum(3);
        let best = (0..inst.k()).map(|k| spec.value(inst.mean(k))).fold(f64::MIN, f64::max);
        let mut l = Learner::new(&LearnerConfig::scalar(2, spec.clone()), &inst, NOISE, 12).unwrap();
        for _ in 0..500 {
            let b = l.current_bounds();
            let valid = (0..inst.k()).all(|k| {
                let m = inst.mean(k);
                weakly_dominates(b.ucb(k), m) && weakly_dominates(m, b.lcb(k))
            });
            if valid {
                let top = (0..inst.k()).map(|k| spec.value(b.ucb(k))).fold(f64::MIN, f64::max);
                assert!(top >= best - 1e-12);
            }
            l.step().unwrap();
        }
    }

    #[test]
    fn config_validation() {
        let inst = instance();
        assert!(Learner::new(&LearnerConfig::new(Mode::Scalar, 2), &inst, NOISE, 0).is_err());
        assert!(Learner::new(&LearnerConfig::hv(0), &inst, NOISE, 0).is_err());
        assert!(Learner::new(&LearnerConfig::hv(13), &inst, NOISE, 0).is_err());
        let mut c = LearnerConfig::hv(2);
        c.delta = 1.5;
        assert!(Learner::new(&c, &inst, NOISE, 0).is_err());
        let c = LearnerConfig::scalar(2, ws2());
        assert!(Learner::new(&c, &inst, NOISE, 0).is_err());
        assert!(run(&LearnerConfig::hv(2), &inst, NOISE, 0, 0).is_err());
    }

    #[test]
    fn labels() {
        let mut c = LearnerConfig::scalar(2, ws2());
        assert_eq!(c.algo_label(), "ptc-ucb-weighted-sum-realized");
        c.multimodal = Some(ModalitySpec::inverse_variance(vec![0.1, 0.2]).unwrap());
        assert_eq!(c.algo_label(), "mm-ptc-ucb-weighted-sum-realized");
        assert_eq!(LearnerConfig::hv(1).algo_label(), "ptc-ucb");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bounds_sandwich_and_shrink(
            means in prop::collection::vec(0.0f64..1.0, 6),
            n in 1u64..50,
            t in 1u64..1000,
        ) {
            let mut s = ConfidenceState::new(3, 2, 0.05, 0.5);
            for k in 0..3 {
                s.counts[k] = n * (k as u64 + 1);
                s.emp_means[2 * k..2 * k + 2].copy_from_slice(&means[2 * k..2 * k + 2]);
            }
            let b = s.bounds(t);
            for k in 0..3 {
                prop_assert!(weakly_dominates(b.ucb(k), b.lcb(k)));
                prop_assert!(b.ucb(k).iter().chain(b.lcb(k)).all(|x| (0.0..=1.0).contains(x)));
            }
            let mut more = s.clone();
            more.counts[0] += 5;
            let b2 = more.bounds(t);
            let w = |bv: &BoundVectors, j: usize| bv.ucb(0)[j] - bv.lcb(0)[j];
            prop_assert!(w(&b2, 0) <= w(&b, 0) + 1e-15 && w(&b2, 1) <= w(&b, 1) + 1e-15);
        }

        #[test]
        fn prune_never_empties(rows in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..0.5), 1..10)) {
            let ucb: Vec<Vec<f64>> = rows.iter().map(|&(a, b, w)| vec![(a + w).min(1.0), (b + w).min(1.0)]).collect();
            let lcb: Vec<Vec<f64>> = rows.iter().map(|&(a, b, _)| vec![a, b]).collect();
            let b = bv(&ucb, &lcb);
            let active: Vec<usize> = (0..rows.len()).collect();
            let kept = prune(&active, &b);
            prop_assert!(!kept.is_empty());
            let best = (0..rows.len())
                .max_by(|&x, &y| b.ucb(x).iter().sum::<f64>().total_cmp(&b.ucb(y).iter().sum::<f64>()))
                .unwrap();
            prop_assert!(kept.contains(&best));
        }
    }
}
