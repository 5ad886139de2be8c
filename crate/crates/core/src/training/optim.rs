use std::io::Write;

use serde::{Deserialize, Serialize};

use super::objective::{
    draw_stability_noise, evaluate_components, task_only_graph, ObjectiveGraph, ObjectiveWeights,
};
use crate::dynamics::{CellParams, ConstraintConfig, ModelDims};
use crate::error::{Error, GradError, Result};
use crate::numgrad::Tensor;
use crate::rng::{self, derive_key, StreamRng};
use crate::tasks::{generate, SequenceTask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub sigma_stab: f64,
    pub init_scale: f64,
    /// sequences in the fixed per-epoch monitoring batch
    pub monitor_size: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 16,
            batches_per_epoch: 8,
            clip_norm: 5.0,
            seed: 0,
            sigma_stab: 0.01,
            init_scale: 0.2,
            monitor_size: 64,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning rate must be >= 0"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch size must be >= 1"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip norm must be > 0"));
        }
        if !(self.sigma_stab >= 0.0) {
            return Err(Error::config("sigma_stab must be >= 0"));
        }
        if !(self.init_scale >= 0.0) {
            return Err(Error::config("init_scale must be >= 0"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Seeded parameter init, `U[-init_scale, init_scale]` per entry.
pub fn init_params(dims: ModelDims, optim: &OptimConfig) -> CellParams {
    CellParams::init_uniform(dims, optim.init_scale, &mut rng::stream(optim.seed, "init"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub task: f64,
    pub hinge: f64,
    pub feas: f64,
    pub stab: f64,
    pub burden_violation_rate: f64,
    pub feas_violation_rate: f64,
}

/// Per-epoch metrics; row 0 is measured before the first update.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricLog {
    pub rows: Vec<EpochMetrics>,
}

impl MetricLog {
    pub fn first(&self) -> Option<&EpochMetrics> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&EpochMetrics> {
        self.rows.last()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Document(format!("csv: {e}"))
}

/// Random streams consumed by one training run.
pub(crate) struct TrainStreams {
    pub data: StreamRng,
    pub stability: StreamRng,
    pub monitor_seed: u64,
}

impl TrainStreams {
    pub fn new(task: &SequenceTask, optim: &OptimConfig) -> Self {
        let lineage = derive_key(optim.seed, "task", task.seed);
        TrainStreams {
            data: rng::indexed_stream(lineage, "data", task.stream),
            stability: rng::stream(optim.seed, "stability"),
            monitor_seed: derive_key(lineage, "monitor", task.stream),
        }
    }
}

fn monitor(
    params: &CellParams,
    cfg: &ConstraintConfig,
    task: &SequenceTask,
    optim: &OptimConfig,
    monitor_seed: u64,
    epoch: usize,
) -> Result<EpochMetrics> {
    let mut data_rng = rng::stream(monitor_seed, "batch");
    let batch = generate(task, optim.monitor_size.max(1), &mut data_rng);
    let noise = draw_stability_noise(
        &batch,
        params.dims().embed,
        optim.sigma_stab,
        &mut rng::stream(monitor_seed, "noise"),
    )?;
    let (parts, records) = evaluate_components(params, cfg, &ObjectiveWeights::BASELINE, &batch, &noise)?;
    let steps: usize = records.iter().map(|r| r.len()).sum();
    let bviol: usize = records.iter().map(|r| r.burden_violation_count()).sum();
    let fviol: usize = records.iter().map(|r| r.feasibility_violation_count()).sum();
    let row = EpochMetrics {
        epoch,
        task: parts.task,
        hinge: parts.hinge,
        feas: parts.feasibility,
        stab: parts.stability,
        burden_violation_rate: bviol as f64 / steps as f64,
        feas_violation_rate: fviol as f64 / steps as f64,
    };
    for (name, v) in [
        ("task", row.task),
        ("hinge", row.hinge),
        ("feasibility", row.feas),
        ("stability", row.stab),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { component: name, epoch });
        }
    }
    Ok(row)
}

/// Rescales the gradient in place when its global norm exceeds `max_norm`.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|t| t.data.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grads.iter_mut() {
            for g in t.data.iter_mut() {
                *g *= s;
            }
        }
    }
    norm
}

pub(crate) fn sgd_step(params: &mut CellParams, grads: &[Tensor], lr: f64) {
    for (p, g) in params.tensors_mut().into_iter().zip(grads) {
        for (w, d) in p.data.iter_mut().zip(&g.data) {
            *w -= lr * d;
        }
    }
}

/// Minibatch SGD with gradient clipping on the weighted objective.
///
/// Training batches come from the task's data stream, stability noise from
/// a separate stream. Row `k` of the log is measured after epoch `k` on a
/// fixed monitoring batch (row 0 before training).
pub fn train(
    params: CellParams,
    cfg: &ConstraintConfig,
    weights: &ObjectiveWeights,
    task: &SequenceTask,
    optim: &OptimConfig,
) -> Result<(CellParams, MetricLog)> {
    cfg.validate()?;
    weights.validate()?;
    optim.validate()?;
    task.validate()?;
    let mut params = params;
    let mut streams = TrainStreams::new(task, optim);
    let mut log = MetricLog::default();
    log.rows.push(monitor(&params, cfg, task, optim, streams.monitor_seed, 0)?);
    for epoch in 1..=optim.epochs {
        for _ in 0..optim.batches_per_epoch {
            let batch = generate(task, optim.batch_size, &mut streams.data);
            let noise = draw_stability_noise(&batch, params.dims().embed, optim.sigma_stab, &mut streams.stability)?;
            let mut og = ObjectiveGraph::build(&params, cfg, weights, &batch, &noise)?;
            og.forward(&params, epoch)?;
            let mut grads = og.gradients()?;
            clip_gradients(&mut grads, optim.clip_norm);
            sgd_step(&mut params, &grads, optim.learning_rate);
        }
        log.rows.push(monitor(&params, cfg, task, optim, streams.monitor_seed, epoch)?);
    }
    Ok((params, log))
}

/// Reference training path that never constructs a constraint term: the
/// graph holds only the task loss. Consumes the same data stream as
/// [`train`] and records the same monitoring log.
pub fn train_task_only(
    params: CellParams,
    cfg: &ConstraintConfig,
    task: &SequenceTask,
    optim: &OptimConfig,
) -> Result<(CellParams, MetricLog)> {
    optim.validate()?;
    task.validate()?;
    let mut params = params;
    let mut streams = TrainStreams::new(task, optim);
    let mut log = MetricLog::default();
    log.rows.push(monitor(&params, cfg, task, optim, streams.monitor_seed, 0)?);
    for epoch in 1..=optim.epochs {
        for _ in 0..optim.batches_per_epoch {
            let batch = generate(task, optim.batch_size, &mut streams.data);
            let (mut g, p) = task_only_graph(&params, cfg, &batch)?;
            match g.forward(&p.bind(&params)) {
                Ok(_) => {}
                Err(GradError::NonFinite { .. }) => {
                    return Err(Error::NonFiniteLoss { component: "task", epoch })
                }
                Err(e) => return Err(e.into()),
            }
            let mut all = g.backward()?;
            let mut grads: Vec<Tensor> = p.ids().iter().map(|id| all.take(*id)).collect();
            clip_gradients(&mut grads, optim.clip_norm);
            sgd_step(&mut params, &grads, optim.learning_rate);
        }
        log.rows.push(monitor(&params, cfg, task, optim, streams.monitor_seed, epoch)?);
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_caps_global_norm() {
        let mut g = vec![Tensor::vector(vec![3.0, 0.0]), Tensor::vector(vec![0.0, 4.0])];
        let before = clip_gradients(&mut g, 1.0);
        assert_eq!(before, 5.0);
        let after: f64 = g.iter().flat_map(|t| t.data.iter()).map(|x| x * x).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-15);
        let mut small = vec![Tensor::vector(vec![0.1])];
        clip_gradients(&mut small, 1.0);
        assert_eq!(small[0].data[0], 0.1);
    }

    #[test]
    fn optim_validation() {
        OptimConfig::default().validate().unwrap();
        assert!(OptimConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(OptimConfig {
            learning_rate: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn metric_log_csv_header() {
        let log = MetricLog {
            rows: vec![EpochMetrics {
                epoch: 0,
                task: 1.5,
                hinge: 0.0,
                feas: 0.0,
                stab: 0.25,
                burden_violation_rate: 0.0,
                feas_violation_rate: 0.0,
            }],
        };
        let s = log.to_csv_string().unwrap();
        assert!(s.starts_with("epoch,task,hinge,feas,stab,burden_violation_rate,feas_violation_rate\n"));
        assert!(s.contains("0,1.5,0.0,0.0,0.25,0.0,0.0"));
    }
}
