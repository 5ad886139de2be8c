//! Capability and stability measurements, gap metrics, the coupling fit and
//! the outcome classifier.

use serde::{Deserialize, Serialize};

use crate::dynamics::ConstraintConfig;
use crate::error::{Error, Result};
use crate::model::{DeployedModel, SequenceModel};
use crate::rng::{self, derive_key};
use crate::tasks::{embedding_noise, extend_horizon, generate, SequenceTask};

/// Sample sizes, noise scales and horizon factors shared by every probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// sequences per accuracy or violation estimate
    pub sample_size: usize,
    pub noise_sigmas: [f64; 2],
    pub divergence_sigma: f64,
    pub horizon_factors: [usize; 2],
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            sample_size: 512,
            noise_sigmas: [0.05, 0.10],
            divergence_sigma: 0.05,
            horizon_factors: [2, 4],
            seed: 7919,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_size < 1 {
            return Err(Error::config("probe sample_size must be >= 1"));
        }
        if self.noise_sigmas.iter().chain([&self.divergence_sigma]).any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::config("probe noise scales must be finite and >= 0"));
        }
        if self.horizon_factors.iter().any(|f| *f < 1) {
            return Err(Error::config("horizon factors must be >= 1"));
        }
        Ok(())
    }

    /// Stream seed for one probe. Every model sees the same draws for a
    /// given probe, so differences between models are paired.
    fn probe_seed(&self, probe: &str, task: &SequenceTask) -> u64 {
        derive_key(derive_key(self.seed, probe, task.seed), "stream", task.stream)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapabilityScore {
    pub accuracy: f64,
    /// scored target positions
    pub sample_size: usize,
    pub std_error: f64,
}

fn score_accuracy(correct: usize, total: usize) -> CapabilityScore {
    let a = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
    CapabilityScore {
        accuracy: a,
        sample_size: total,
        std_error: if total == 0 { 0.0 } else { (a * (1.0 - a) / total as f64).sqrt() },
    }
}

/// Index of the largest of the first `classes` logits (first on ties).
pub fn predict(logits: &[f64], classes: usize) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate().take(classes) {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

fn accuracy_on(
    model: &dyn SequenceModel,
    yardstick: &ConstraintConfig,
    task: &SequenceTask,
    samples: usize,
    data_seed: u64,
    noise: Option<(f64, usize, u64)>,
) -> Result<CapabilityScore> {
    let batch = generate(task, samples, &mut rng::stream(data_seed, "data"));
    let mut noise_rng = noise.map(|(_, _, seed)| rng::stream(seed, "noise"));
    let classes = task.num_classes();
    let (mut correct, mut total) = (0, 0);
    for ex in &batch.examples {
        let eps = match (noise, noise_rng.as_mut()) {
            (Some((sigma, dim, _)), Some(r)) => Some(embedding_noise(ex.tokens.len(), dim, sigma, r)?),
            _ => None,
        };
        let logits = model.logits(yardstick, &ex.tokens, eps.as_deref())?;
        for (&p, &label) in ex.target_positions.iter().zip(&ex.labels) {
            correct += usize::from(predict(&logits[p], classes) == label);
            total += 1;
        }
    }
    Ok(score_accuracy(correct, total))
}

/// Exact-match accuracy over target positions at nominal horizon, on a
/// held-out stream derived from the probe seed.
pub fn capability(
    model: &dyn SequenceModel,
    yardstick: &ConstraintConfig,
    task: &SequenceTask,
    probe: &ProbeConfig,
) -> Result<CapabilityScore> {
    probe.validate()?;
    accuracy_on(model, yardstick, task, probe.sample_size, probe.probe_seed("capability", task), None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityProfile {
    pub acc_noise_005: f64,
    pub acc_noise_010: f64,
    pub acc_h2: f64,
    pub acc_h4: f64,
    pub burden_violation_rate: f64,
    pub feasibility_violation_rate: f64,
    /// mean final-state distance under embedding noise, divided by `√n`
    pub divergence: f64,
}

impl StabilityProfile {
    /// The seven components with divergence clipped to `[0, 1]`.
    pub fn components(&self) -> [f64; 7] {
        [
            self.acc_noise_005,
            self.acc_noise_010,
            self.acc_h2,
            self.acc_h4,
            self.burden_violation_rate,
            self.feasibility_violation_rate,
            self.divergence.min(1.0),
        ]
    }
}

/// Stability profile plus the per-step burden mean used by the outcome
/// classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub capability: CapabilityScore,
    pub stability: StabilityProfile,
    pub burden_mean: f64,
}

/// Measures every profile component of a deployed model. Constraint rates
/// are scored against `yardstick` whatever the model was trained with.
pub fn stability_profile(
    model: &DeployedModel,
    yardstick: &ConstraintConfig,
    task: &SequenceTask,
    probe: &ProbeConfig,
) -> Result<StabilityProfile> {
    Ok(profile(model, yardstick, task, probe)?.stability)
}

pub fn profile(
    model: &DeployedModel,
    yardstick: &ConstraintConfig,
    task: &SequenceTask,
    probe: &ProbeConfig,
) -> Result<ProfileReport> {
    probe.validate()?;
    yardstick.validate()?;
    let n = probe.sample_size;
    let dim = model.params.dims().embed;
    let cap = capability(model, yardstick, task, probe)?;

    let mut noisy = [0.0; 2];
    for (i, sigma) in probe.noise_sigmas.iter().enumerate() {
        let data_seed = probe.probe_seed("capability", task);
        let noise_seed = derive_key(probe.probe_seed("noise", task), "sigma", i as u64);
        noisy[i] = accuracy_on(model, yardstick, task, n, data_seed, Some((*sigma, dim, noise_seed)))?.accuracy;
    }

    let mut horizon = [0.0; 2];
    for (i, factor) in probe.horizon_factors.iter().enumerate() {
        let long = extend_horizon(task, *factor)?;
        horizon[i] = accuracy_on(model, yardstick, &long, n, probe.probe_seed("horizon", &long), None)?.accuracy;
    }

    let batch = generate(task, n, &mut rng::stream(probe.probe_seed("capability", task), "data"));
    let mut noise_rng = rng::stream(probe.probe_seed("divergence", task), "noise");
    let (mut steps, mut bviol, mut fviol) = (0usize, 0usize, 0usize);
    let (mut burden_sum, mut div_sum) = (0.0, 0.0);
    for ex in &batch.examples {
        let clean_inputs = model.params.embed_tokens(&ex.tokens)?;
        let clean = model.trajectory_embedded(yardstick, &clean_inputs)?;
        steps += clean.len();
        bviol += clean.burden_violation_count();
        fviol += clean.feasibility_violation_count();
        burden_sum += clean.burdens.iter().sum::<f64>();

        let eps = embedding_noise(ex.tokens.len(), dim, probe.divergence_sigma, &mut noise_rng)?;
        let noisy_inputs: Vec<Vec<f64>> = clean_inputs
            .iter()
            .zip(&eps)
            .map(|(e, z)| e.iter().zip(z).map(|(a, b)| a + b).collect())
            .collect();
        let perturbed = model.trajectory_embedded(yardstick, &noisy_inputs)?;
        let d2: f64 = clean
            .final_state()
            .iter()
            .zip(perturbed.final_state())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        div_sum += d2.sqrt();
    }
    let hidden = model.params.hidden() as f64;
    Ok(ProfileReport {
        capability: cap,
        stability: StabilityProfile {
            acc_noise_005: noisy[0],
            acc_noise_010: noisy[1],
            acc_h2: horizon[0],
            acc_h4: horizon[1],
            burden_violation_rate: bviol as f64 / steps as f64,
            feasibility_violation_rate: fviol as f64 / steps as f64,
            divergence: div_sum / n as f64 / hidden.sqrt(),
        },
        burden_mean: burden_sum / steps as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaps {
    pub delta_k: f64,
    pub delta_r: f64,
}

/// `ΔK = max{0, K_T − K_S}`, `ΔR` the mean absolute componentwise
/// difference of the clipped stability components.
pub fn gaps(teacher_k: f64, student_k: f64, teacher_r: &StabilityProfile, student_r: &StabilityProfile) -> Gaps {
    let t = teacher_r.components();
    let s = student_r.components();
    let delta_r = t.iter().zip(&s).map(|(a, b)| (a - b).abs()).sum::<f64>() / t.len() as f64;
    Gaps {
        delta_k: (teacher_k - student_k).max(0.0),
        delta_r,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingEstimate {
    /// `(ΔK, ΔR)` pairs
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// residual sum of squares
    pub residual: f64,
}

/// Ordinary least squares `ΔR = slope·ΔK + intercept`.
pub fn coupling_fit(points: &[(f64, f64)]) -> Result<CouplingEstimate> {
    if points.len() < 2 {
        return Err(Error::DegenerateRegressor);
    }
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if points.iter().all(|p| p.0 == points[0].0) || !(sxx > 0.0) {
        return Err(Error::DegenerateRegressor);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = points
        .iter()
        .map(|p| {
            let r = p.1 - (slope * p.0 + intercept);
            r * r
        })
        .sum();
    Ok(CouplingEstimate {
        points: points.to_vec(),
        slope,
        intercept,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub epsilon_k: f64,
    pub epsilon_r: f64,
    pub rho_b: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            epsilon_k: 0.05,
            epsilon_r: 0.10,
            rho_b: 1.5,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_k >= 0.0 && self.epsilon_r >= 0.0 && self.rho_b > 0.0) {
            return Err(Error::config("thresholds must be nonnegative and rho_b > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    CapabilityGap,
    StabilityGap,
    HiddenBurden,
    PropositionViolated,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::CapabilityGap => "capability_gap",
            Outcome::StabilityGap => "stability_gap",
            Outcome::HiddenBurden => "hidden_burden",
            Outcome::PropositionViolated => "proposition_violated",
        }
    }
}

/// The satisfied disjuncts, or `[PropositionViolated]` when none hold.
pub fn proposition_outcome(
    delta_k: f64,
    delta_r: f64,
    student_burden_mean: f64,
    teacher_burden_mean: f64,
    thresholds: &Thresholds,
) -> Vec<Outcome> {
    let mut out = Vec::new();
    if delta_k > thresholds.epsilon_k {
        out.push(Outcome::CapabilityGap);
    }
    if delta_r > thresholds.epsilon_r {
        out.push(Outcome::StabilityGap);
    }
    if student_burden_mean > thresholds.rho_b * teacher_burden_mean {
        out.push(Outcome::HiddenBurden);
    }
    if out.is_empty() {
        out.push(Outcome::PropositionViolated);
    }
    out
}

/// Joins outcome labels with `+` for flat tables.
pub fn outcome_label(outcomes: &[Outcome]) -> String {
    outcomes.iter().map(|o| o.name()).collect::<Vec<_>>().join("+")
}
