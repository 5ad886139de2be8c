//! Output-only distillation of a frozen teacher into a smaller student.
//!
//! The student only ever sees [`LabeledCorpus`] entries: input tokens and
//! the teacher's logits at the scored positions. Teacher states, burdens
//! and loads never leave [`FrozenTeacher`].

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dynamics::{CellParams, ConstraintConfig, ModelDims};
use crate::error::{Error, GradError, Result};
use crate::model::{DeployedModel, SequenceModel};
use crate::numgrad::{kl_softmax, Graph, NodeId, Tensor};
use crate::rng::{self, derive_key};
use crate::tasks::{generate, SequenceTask};
use crate::training::{
    build_rollout, clip_gradients, sgd_step, OptimConfig, ParamNodes, Tracking,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// number of teacher-labelled sequences
    pub budget: usize,
    pub kd_temperature: f64,
    /// student hidden size as a fraction of the teacher's
    pub shrink: f64,
    /// capability tolerance the student aims for
    pub epsilon_target: f64,
    /// sequences used for the post-training discrepancy estimate
    pub discrepancy_samples: usize,
    pub optim: OptimConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            budget: 1000,
            kd_temperature: 2.0,
            shrink: 0.5,
            epsilon_target: 0.05,
            discrepancy_samples: 256,
            optim: OptimConfig {
                learning_rate: 0.1,
                epochs: 4,
                batch_size: 16,
                ..OptimConfig::default()
            },
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kd_temperature > 0.0) {
            return Err(Error::config("kd_temperature must be > 0"));
        }
        if !(self.shrink > 0.0 && self.shrink <= 1.0) {
            return Err(Error::config("shrink must lie in (0, 1]"));
        }
        self.optim.validate()
    }
}

/// A teacher that exposes nothing but its logits.
pub struct FrozenTeacher {
    model: DeployedModel,
    yardstick: ConstraintConfig,
}

impl FrozenTeacher {
    pub fn new(model: DeployedModel, yardstick: ConstraintConfig) -> Self {
        FrozenTeacher { model, yardstick }
    }

    pub fn dims(&self) -> ModelDims {
        self.model.params.dims()
    }

    /// Logits at each requested position, under the deployed enforcement.
    pub fn logits_at(&self, tokens: &[usize], positions: &[usize]) -> Result<Vec<Vec<f64>>> {
        let all = self.model.logits(&self.yardstick, tokens, None)?;
        Ok(positions.iter().map(|&p| all[p].clone()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub tokens: Vec<usize>,
    pub positions: Vec<usize>,
    pub teacher_logits: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabeledCorpus {
    pub examples: Vec<LabeledExample>,
}

/// Draws `budget` sequences from the task and labels them with the teacher.
pub fn label_corpus(teacher: &FrozenTeacher, task: &SequenceTask, budget: usize, seed: u64) -> Result<LabeledCorpus> {
    let mut data = rng::indexed_stream(derive_key(seed, "task", task.seed), "distill-data", task.stream);
    let batch = generate(task, budget, &mut data);
    let examples = batch
        .examples
        .into_iter()
        .map(|ex| {
            let teacher_logits = teacher.logits_at(&ex.tokens, &ex.target_positions)?;
            Ok(LabeledExample {
                tokens: ex.tokens,
                positions: ex.target_positions,
                teacher_logits,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledCorpus { examples })
}

/// Fresh student with hidden size `⌈shrink·n⌉` and the teacher's embedding
/// and vocabulary sizes.
pub fn make_student(teacher: ModelDims, shrink: f64, init_scale: f64, seed: u64) -> Result<CellParams> {
    if !(shrink > 0.0 && shrink <= 1.0) {
        return Err(Error::config("shrink must lie in (0, 1]"));
    }
    let hidden = (shrink * teacher.hidden as f64 - 1e-9).ceil().max(0.0) as usize;
    if hidden < 2 {
        return Err(Error::ShrinkTooSmall {
            shrink,
            teacher: teacher.hidden,
            hidden,
        });
    }
    let dims = ModelDims::new(hidden, teacher.embed, teacher.vocab);
    Ok(CellParams::init_uniform(dims, init_scale, &mut rng::stream(seed, "student-init")))
}

/// `T² · Σ_positions KL(softmax(teacher/T) ‖ softmax(student/T))`
pub fn distill_loss(student: &[Vec<f64>], teacher: &[Vec<f64>], temperature: f64) -> Result<f64> {
    if student.len() != teacher.len() {
        return Err(Error::DimensionMismatch {
            expected: teacher.len(),
            found: student.len(),
        });
    }
    if !(temperature > 0.0) {
        return Err(Error::config("temperature must be > 0"));
    }
    let mut total = 0.0;
    for (s, t) in student.iter().zip(teacher) {
        if s.len() != t.len() {
            return Err(Error::DimensionMismatch {
                expected: t.len(),
                found: s.len(),
            });
        }
        total += kl_softmax(t, s, temperature);
    }
    Ok(temperature * temperature * total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Summary of one distilled student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentSummary {
    pub teacher: String,
    pub hidden: usize,
    pub budget: usize,
    /// mean corpus distillation loss before training; `None` for budget 0
    pub initial_distill_loss: Option<f64>,
    pub final_distill_loss: Option<f64>,
    pub discrepancy: Discrepancy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentArm {
    pub summary: StudentSummary,
    pub params: CellParams,
}

fn student_graph(
    dims: ModelDims,
    cfg: &ConstraintConfig,
    batch: &[&LabeledExample],
    temperature: f64,
) -> Result<(Graph, ParamNodes)> {
    let mut g = Graph::new();
    let p = ParamNodes::declare(&mut g, dims);
    let soft = cfg.with_enforcement(crate::dynamics::Enforcement::Soft);
    let mut terms = Vec::with_capacity(batch.len());
    for ex in batch {
        let positions = &ex.positions;
        let traj = build_rollout(&mut g, &p, &soft, &ex.tokens, None, Tracking::None, &|t| {
            positions.contains(&t)
        })?;
        let kls: Vec<NodeId> = traj
            .logits
            .iter()
            .zip(&ex.teacher_logits)
            .map(|(s, t)| {
                let tn = g.constant(Tensor::vector(t.clone()));
                g.kl_softmax(tn, *s, temperature)
            })
            .collect::<std::result::Result<_, GradError>>()?;
        let sum = g.sum(&kls)?;
        terms.push(g.scale(sum, temperature * temperature));
    }
    let total = g.sum(&terms)?;
    let mean = g.scale(total, 1.0 / batch.len().max(1) as f64);
    g.set_output(mean)?;
    Ok((g, p))
}

fn corpus_loss(student: &DeployedModel, corpus: &LabeledCorpus, cfg: &ConstraintConfig, temperature: f64) -> Result<f64> {
    let mut acc = 0.0;
    for ex in &corpus.examples {
        let logits = student.logits(cfg, &ex.tokens, None)?;
        let at: Vec<Vec<f64>> = ex.positions.iter().map(|&p| logits[p].clone()).collect();
        acc += distill_loss(&at, &ex.teacher_logits, temperature)?;
    }
    Ok(acc / corpus.examples.len() as f64)
}

/// Trains `student` (unconstrained, soft deployment) to match the corpus.
pub fn train_student(
    student: CellParams,
    corpus: &LabeledCorpus,
    yardstick: &ConstraintConfig,
    dcfg: &DistillConfig,
) -> Result<(CellParams, Option<f64>, Option<f64>)> {
    dcfg.validate()?;
    if corpus.examples.is_empty() {
        return Ok((student, None, None));
    }
    let t = dcfg.kd_temperature;
    let mut params = student;
    let initial = corpus_loss(&DeployedModel::soft(params.clone()), corpus, yardstick, t)?;
    let mut order: Vec<usize> = (0..corpus.examples.len()).collect();
    let mut shuffle = rng::stream(dcfg.optim.seed, "distill-order");
    for epoch in 1..=dcfg.optim.epochs {
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(dcfg.optim.batch_size) {
            let batch: Vec<&LabeledExample> = chunk.iter().map(|&i| &corpus.examples[i]).collect();
            let (mut g, p) = student_graph(params.dims(), yardstick, &batch, t)?;
            match g.forward(&p.bind(&params)) {
                Ok(_) => {}
                Err(GradError::NonFinite { .. }) => {
                    return Err(Error::NonFiniteLoss {
                        component: "distill",
                        epoch,
                    })
                }
                Err(e) => return Err(e.into()),
            }
            let mut all = g.backward()?;
            let mut grads: Vec<Tensor> = p.ids().iter().map(|id| all.take(*id)).collect();
            clip_gradients(&mut grads, dcfg.optim.clip_norm);
            sgd_step(&mut params, &grads, dcfg.optim.learning_rate);
        }
    }
    let fin = corpus_loss(&DeployedModel::soft(params.clone()), corpus, yardstick, t)?;
    Ok((params, Some(initial), Some(fin)))
}

/// Monte Carlo estimate of `E[d(S(x), T(x))]` at temperature 1 over fresh
/// task draws.
pub fn behavior_discrepancy(
    student: &dyn SequenceModel,
    teacher: &dyn SequenceModel,
    yardstick: &ConstraintConfig,
    task: &SequenceTask,
    sample_size: usize,
    seed: u64,
) -> Result<Discrepancy> {
    if sample_size < 1 {
        return Err(Error::config("sample size must be >= 1"));
    }
    let mut data = rng::indexed_stream(derive_key(seed, "task", task.seed), "discrepancy", task.stream);
    let batch = generate(task, sample_size, &mut data);
    let mut values = Vec::with_capacity(sample_size);
    for ex in &batch.examples {
        let s = student.logits(yardstick, &ex.tokens, None)?;
        let t = teacher.logits(yardstick, &ex.tokens, None)?;
        let pick = |l: &Vec<Vec<f64>>| -> Vec<Vec<f64>> { ex.target_positions.iter().map(|&p| l[p].clone()).collect() };
        values.push(distill_loss(&pick(&s), &pick(&t), 1.0)?);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(Discrepancy {
        mean,
        std_error: (var / n).sqrt(),
        samples: values.len(),
    })
}

/// Labels `budget` sequences with the teacher, trains the student on them
/// and estimates the remaining behavioral discrepancy.
pub fn distill(
    teacher: &FrozenTeacher,
    teacher_id: &str,
    student: CellParams,
    dcfg: &DistillConfig,
    task: &SequenceTask,
) -> Result<StudentArm> {
    dcfg.validate()?;
    let corpus = label_corpus(teacher, task, dcfg.budget, dcfg.optim.seed)?;
    let (params, initial, fin) = train_student(student, &corpus, &teacher.yardstick, dcfg)?;
    let student_model = DeployedModel::soft(params.clone());
    let discrepancy = behavior_discrepancy(
        &student_model,
        &teacher.model,
        &teacher.yardstick,
        task,
        dcfg.discrepancy_samples.max(1),
        derive_key(dcfg.optim.seed, "discrepancy", 0),
    )?;
    Ok(StudentArm {
        summary: StudentSummary {
            teacher: teacher_id.to_string(),
            hidden: params.hidden(),
            budget: dcfg.budget,
            initial_distill_loss: initial,
            final_distill_loss: fin,
            discrepancy,
        },
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn student_dims() {
        let t = ModelDims::new(32, 8, 8);
        let s = make_student(t, 0.5, 0.2, 1).unwrap();
        assert_eq!(s.dims(), ModelDims::new(16, 8, 8));
        let same = make_student(t, 1.0, 0.2, 1).unwrap();
        assert_eq!(same.dims(), t);
        assert!(make_student(ModelDims::new(3, 2, 4), 0.1, 0.2, 1).is_err());
        assert!(make_student(t, 0.0, 0.2, 1).is_err());
    }

    #[test]
    fn student_is_smaller_when_shrinking() {
        let t = ModelDims::new(32, 8, 8);
        for shrink in [0.25, 0.5, 0.75, 0.9] {
            let s = make_student(t, shrink, 0.2, 3).unwrap();
            assert!(s.dims().param_count() < t.param_count());
            assert_eq!(s.param_count(), s.dims().param_count());
        }
    }

    #[test]
    fn distill_loss_examples() {
        let a = vec![vec![0.3, -1.0, 2.0]];
        assert_eq!(distill_loss(&a, &a, 2.0).unwrap(), 0.0);
        let teacher = vec![vec![2f64.ln(), 0.0]];
        let student = vec![vec![0.0, 0.0]];
        let expected = (2.0 / 3.0) * (4.0f64 / 3.0).ln() + (1.0 / 3.0) * (2.0f64 / 3.0).ln();
        let got = distill_loss(&student, &teacher, 1.0).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.05664).abs() < 1e-5);
        assert!(distill_loss(&student, &[], 1.0).is_err());
        assert!(distill_loss(&[vec![0.0]], &teacher, 1.0).is_err());
    }

    #[test]
    fn shifted_logits_have_zero_loss() {
        let t = vec![vec![0.1, 0.7, -0.4], vec![1.0, 2.0, 3.0]];
        let s: Vec<Vec<f64>> = t.iter().map(|v| v.iter().map(|x| x + 5.0).collect()).collect();
        assert!(distill_loss(&s, &t, 2.0).unwrap() < 1e-12);
    }
}
