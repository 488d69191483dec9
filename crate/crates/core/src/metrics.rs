//! Evaluation metrics: attained-set hypervolume gap, scalarized regret and
//! identification correctness.

use serde::{Deserialize, Serialize};

use crate::environment::Instance;
use crate::error::{Error, Result};
use crate::hypervolume::{hv, HvMode, ReferencePoint};
use crate::learner::{Archive, RoundRecord};
use crate::pareto::eps_dominated;
use crate::rng::{self, Purpose};
use crate::scalarize::ScalarizerSpec;

const GROWTH: f64 = 1.25;

/// `{⌈1.25^i⌉ : i ≥ 0} ∩ [1, T]`, plus `T`, sorted and deduplicated.
pub fn checkpoints(horizon: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut i = 0;
    loop {
        let c = GROWTH.powi(i).ceil() as u64;
        if c > horizon {
            break;
        }
        if out.last() != Some(&c) {
            out.push(c);
        }
        i += 1;
    }
    if out.last() != Some(&horizon) && horizon >= 1 {
        out.push(horizon);
    }
    out
}

/// Hypervolume-gap evaluator with `HV(C*)` computed once per instance.
#[derive(Debug, Clone)]
pub struct HvGapEvaluator {
    reference: ReferencePoint,
    convexified: bool,
    mc_samples: usize,
    mc_seed: u64,
    optimum: f64,
}

impl HvGapEvaluator {
    pub fn new(instance: &Instance, reference: ReferencePoint, convexified: bool, mc_samples: usize, mc_seed: u64) -> Result<Self> {
        let mut ev = Self {
            reference,
            convexified,
            mc_samples,
            mc_seed,
            optimum: 0.0,
        };
        ev.optimum = hv(&instance.frontier_means(), &ev.reference, ev.mode(0))?.value;
        Ok(ev)
    }

    /// Exact union-of-boxes gap, origin reference.
    pub fn boxes(instance: &Instance) -> Result<Self> {
        Self::new(instance, ReferencePoint::origin(instance.d()), false, 0, 0)
    }

    fn mode(&self, salt: u64) -> HvMode {
        if self.convexified {
            HvMode::Convex {
                mc_samples: self.mc_samples,
                mc_seed: rng::key(self.mc_seed, Purpose::MetricMonteCarlo, &[salt]),
            }
        } else {
            HvMode::Boxes
        }
    }

    pub fn optimum(&self) -> f64 {
        self.optimum
    }

    /// `[HV(C*) − HV(archive)]⁺`; `salt` varies the metric Monte-Carlo
    /// stream between checkpoints.
    pub fn gap(&self, archive: &Archive, salt: u64) -> Result<f64> {
        let attained = hv(archive.cache(), &self.reference, self.mode(salt))?.value;
        Ok((self.optimum - attained).max(0.0))
    }
}

/// `max_k φ(μ(k))`.
pub fn best_value(instance: &Instance, spec: &ScalarizerSpec) -> f64 {
    (0..instance.k())
        .map(|k| spec.value(instance.mean(k)))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Cumulative `Σ_s [φ(μ(k*)) − φ(μ(k_s))]` after each round.
pub fn pseudo_regret(records: &[RoundRecord], instance: &Instance, spec: &ScalarizerSpec) -> Vec<f64> {
    let best = best_value(instance, spec);
    cumulative(records.iter().map(|r| best - spec.value(instance.mean(r.committed))))
}

/// Cumulative `Σ_s [φ(μ(k*)) − φ(r_s(k_s))]` on latent executed outcomes.
pub fn realized_regret(records: &[RoundRecord], instance: &Instance, spec: &ScalarizerSpec) -> Vec<f64> {
    let best = best_value(instance, spec);
    cumulative(records.iter().map(|r| best - spec.value(&r.latent_outcome)))
}

fn cumulative(it: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    it.map(|x| {
        acc += x;
        acc
    })
    .collect()
}

/// `(frontier ⊆ output, no output arm is eps-dominated by a mean vector)`.
pub fn identification_check(output: &[usize], instance: &Instance, eps: f64) -> Result<(bool, bool)> {
    if !(eps > 0.0) {
        return Err(Error::InvalidEpsilon(eps));
    }
    let recall = instance.frontier().indices.iter().all(|f| output.contains(f));
    let means = instance.mean_set();
    let mut clean = true;
    for &k in output {
        if eps_dominated(instance.mean(k), &means, eps)? {
            clean = false;
            break;
        }
    }
    Ok((recall, clean))
}

/// Metric values at each checkpoint of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub checkpoints: Vec<u64>,
    pub hv_gap: Vec<f64>,
    pub pseudo_regret: Vec<f64>,
    pub realized_regret: Vec<f64>,
    pub probes_used: Vec<u64>,
    pub probe_cost: Vec<f64>,
    pub active_set_size: Vec<usize>,
}

/// Evaluates a trajectory at the given checkpoints. The hypervolume gap is
/// measured on the archive of latent executed outcomes, independent of
/// what the learner itself archived.
pub fn evaluate(
    records: &[RoundRecord],
    instance: &Instance,
    spec: &ScalarizerSpec,
    hv_eval: &HvGapEvaluator,
    schedule: &[u64],
    q: usize,
    tau: f64,
) -> Result<MetricSeries> {
    let pseudo = pseudo_regret(records, instance, spec);
    let realized = realized_regret(records, instance, spec);
    let mut archive = Archive::new(instance.d());
    let mut series = MetricSeries {
        checkpoints: Vec::new(),
        hv_gap: Vec::new(),
        pseudo_regret: Vec::new(),
        realized_regret: Vec::new(),
        probes_used: Vec::new(),
        probe_cost: Vec::new(),
        active_set_size: Vec::new(),
    };
    let mut next = 0;
    for (i, rec) in records.iter().enumerate() {
        archive.push(&rec.latent_outcome)?;
        let t = i as u64 + 1;
        if next < schedule.len() && schedule[next] == t {
            series.checkpoints.push(t);
            series.hv_gap.push(hv_eval.gap(&archive, t)?);
            series.pseudo_regret.push(pseudo[i]);
            series.realized_regret.push(realized[i]);
            series.probes_used.push(q as u64 * t);
            series.probe_cost.push(tau * (q as u64 * t) as f64);
            series.active_set_size.push(rec.active_set_size);
            next += 1;
        }
    }
    if next < schedule.len() {
        return Err(Error::MissingData(format!(
            "checkpoint {} is beyond the trajectory of {} rounds",
            schedule[next],
            records.len()
        )));
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{generate_instance, InstanceParams, NoiseSpec};
    use crate::learner::{run, LearnerConfig};
    use crate::pareto::ObjectiveVector;
    use crate::scalarize::ScalarizerKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(t: u64, k: usize, latent: Vec<f64>) -> RoundRecord {
        RoundRecord {
            t,
            probe_set: vec![k],
            committed: k,
            latent_outcome: ObjectiveVector::new(latent),
            fused_outcome: None,
            active_set_size: 2,
            observations: None,
        }
    }

    #[test]
    fn checkpoint_schedule() {
        assert_eq!(checkpoints(1), vec![1]);
        assert_eq!(checkpoints(10), vec![1, 2, 3, 4, 5, 6, 8, 10]);
        let c = checkpoints(20_000);
        assert_eq!(*c.last().unwrap(), 20_000);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert!(c.len() < 60);
        assert!(c.contains(&1000) || c.iter().any(|&x| (900..1100).contains(&x)));
    }

    #[test]
    fn hv_gap_examples() {
        let inst = Instance::from_means(vec![vec![0.5, 1.0], vec![1.0, 0.5], vec![0.4, 0.4]], 0).unwrap();
        let ev = HvGapEvaluator::boxes(&inst).unwrap();
        assert!((ev.optimum() - 0.75).abs() < 1e-15);
        let mut a = Archive::new(2);
        assert_eq!(ev.gap(&a, 0).unwrap(), ev.optimum());
        a.push(&[0.5, 1.0]).unwrap();
        a.push(&[1.0, 0.5]).unwrap();
        assert_eq!(ev.gap(&a, 0).unwrap(), 0.0);
        let mut big = Archive::new(2);
        big.push(&[1.0, 1.0]).unwrap();
        assert_eq!(ev.gap(&big, 0).unwrap(), 0.0);

        let conv = HvGapEvaluator::new(&inst, ReferencePoint::origin(2), true, 0, 0).unwrap();
        assert!((conv.optimum() - 0.875).abs() < 1e-15);
        assert_eq!(conv.gap(&a, 0).unwrap(), 0.0);
    }

    #[test]
    fn convex_gap_of_frontier_is_zero_within_mc_error() {
        let inst = generate_instance(&InstanceParams::new(10, 3, 3, 0.05, 2)).unwrap();
        let ev = HvGapEvaluator::new(&inst, ReferencePoint::origin(3), true, 20_000, 5).unwrap();
        let mut a = Archive::new(3);
        for p in inst.frontier_means().iter() {
            a.push(p).unwrap();
        }
        // the optimum and the archive estimate share no samples; allow 3 stderr
        let se = (ev.optimum() * (1.0 - ev.optimum()) / 20_000.0).sqrt();
        assert!(ev.gap(&a, 7).unwrap() <= 3.0 * 1.5 * se);
    }

    #[test]
    fn regret_examples() {
        let inst = Instance::from_means(vec![vec![0.6, 0.6], vec![0.5, 0.5]], 0).unwrap();
        let spec = ScalarizerSpec::uniform_weighted_sum(2);
        let best: Vec<RoundRecord> = (1..=5).map(|t| record(t, 0, vec![0.6, 0.6])).collect();
        assert!(pseudo_regret(&best, &inst, &spec).iter().all(|&x| x == 0.0));
        let wrong: Vec<RoundRecord> = (1..=10).map(|t| record(t, 1, vec![0.5, 0.5])).collect();
        let r = pseudo_regret(&wrong, &inst, &spec);
        assert!((r[9] - 1.0).abs() < 1e-12);
        // zero noise: realized equals pseudo
        assert_eq!(realized_regret(&wrong, &inst, &spec), r);
    }

    #[test]
    fn regret_matches_naive_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = generate_instance(&InstanceParams::new(8, 3, 2, 0.1, 4)).unwrap();
        let spec = ScalarizerSpec::new(ScalarizerKind::Chebyshev, vec![0.2, 0.3, 0.5]).unwrap();
        let recs: Vec<RoundRecord> = (1..=300)
            .map(|t| {
                let k = rng.random_range(0..8);
                record(t, k, (0..3).map(|_| rng.random::<f64>()).collect())
            })
            .collect();
        let p = pseudo_regret(&recs, &inst, &spec);
        let r = realized_regret(&recs, &inst, &spec);
        let mut best = f64::MIN;
        for k in 0..8 {
            let m = inst.mean(k);
            let v = (0..3).map(|j| spec.weights()[j] * m[j]).fold(f64::INFINITY, f64::min);
            best = best.max(v);
        }
        let (mut sp, mut sr) = (0.0, 0.0);
        for (i, rec) in recs.iter().enumerate() {
            let m = inst.mean(rec.committed);
            sp += best - (0..3).map(|j| spec.weights()[j] * m[j]).fold(f64::INFINITY, f64::min);
            let y = &rec.latent_outcome;
            sr += best - (0..3).map(|j| spec.weights()[j] * y[j]).fold(f64::INFINITY, f64::min);
            assert!((p[i] - sp).abs() < 1e-9);
            assert!((r[i] - sr).abs() < 1e-9);
        }
        assert!(p.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn identification_examples() {
        let inst = Instance::from_means(vec![vec![0.8, 0.8], vec![0.5, 0.5], vec![0.75, 0.79]], 0).unwrap();
        assert_eq!(identification_check(&[0], &inst, 0.1).unwrap(), (true, true));
        // arm 1 is 0.1-dominated by arm 0; arm 2 is not
        assert_eq!(identification_check(&[0, 1, 2], &inst, 0.1).unwrap(), (true, false));
        assert_eq!(identification_check(&[0, 2], &inst, 0.1).unwrap(), (true, true));
        assert_eq!(identification_check(&[2], &inst, 0.1).unwrap(), (false, true));
        assert!(identification_check(&[0], &inst, 0.0).is_err());
    }

    #[test]
    fn identification_agrees_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..50 {
            let inst = generate_instance(&InstanceParams::new(10, 3, 2, 0.1, seed)).unwrap();
            let output: Vec<usize> = (0..10).filter(|_| rng.random::<f64>() < 0.7).collect();
            let eps = 0.02 + 0.1 * rng.random::<f64>();
            let recall = (0..10).all(|k| {
                let dominated = (0..10).any(|o| {
                    let (a, b) = (inst.mean(o), inst.mean(k));
                    a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
                });
                dominated || output.contains(&k)
            });
            let clean = output.iter().all(|&k| {
                !(0..10).any(|o| inst.mean(o).iter().zip(inst.mean(k)).all(|(x, y)| *x >= y + eps))
            });
            assert_eq!(identification_check(&output, &inst, eps).unwrap(), (recall, clean));
        }
    }

    #[test]
    fn affine_scalarizer_keeps_commits_and_scales_regret() {
        let inst = generate_instance(&InstanceParams::new(12, 3, 3, 0.05, 5)).unwrap();
        let spec = ScalarizerSpec::new(ScalarizerKind::Gini, vec![0.6, 0.3, 0.1]).unwrap();
        let scaled = spec.clone().with_affine(3.0, 0.7).unwrap();
        let noise = NoiseSpec::GaussianClipped { sigma: 0.1 };
        let a = run(&LearnerConfig::scalar(2, spec.clone()), &inst, noise, 400, 1).unwrap();
        let b = run(&LearnerConfig::scalar(2, scaled.clone()), &inst, noise, 400, 1).unwrap();
        let ka: Vec<usize> = a.records.iter().map(|r| r.committed).collect();
        let kb: Vec<usize> = b.records.iter().map(|r| r.committed).collect();
        assert_eq!(ka, kb);
        let ra = pseudo_regret(&a.records, &inst, &spec);
        let rb = pseudo_regret(&b.records, &inst, &scaled);
        for (x, y) in ra.iter().zip(&rb) {
            assert!((3.0 * x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn evaluate_shapes() {
        let inst = generate_instance(&InstanceParams::new(12, 3, 3, 0.05, 5)).unwrap();
        let spec = ScalarizerSpec::uniform_weighted_sum(3);
        let tr = run(&LearnerConfig::hv(2), &inst, NoiseSpec::GaussianClipped { sigma: 0.1 }, 100, 1).unwrap();
        let ev = HvGapEvaluator::boxes(&inst).unwrap();
        let sched = checkpoints(100);
        let s = evaluate(&tr.records, &inst, &spec, &ev, &sched, 2, 0.5).unwrap();
        assert_eq!(s.checkpoints, sched);
        assert_eq!(*s.probes_used.last().unwrap(), 200);
        assert_eq!(*s.probe_cost.last().unwrap(), 100.0);
        assert!(s.hv_gap.iter().all(|&g| g >= 0.0));
        assert!(s.hv_gap.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(evaluate(&tr.records, &inst, &spec, &ev, &[200], 2, 0.0).is_err());
    }
}
