//! Seeded synthetic sequence tasks.
//!
//! * `copy`: `T` symbols, a query marker, then `delay + T` blanks; the
//!   symbols must be reproduced on the last `T` positions.
//! * `parity`: `T` random bits; the last position must emit the sum mod 2.
//! * `modsum`: `T` digits in `[0, k)`; the last position must emit the sum
//!   mod `k`.
//!
//! With [`Supervision::Running`] the accumulation tasks also score every
//! earlier position against the running sum of its prefix.
//!
//! A target at position `p` is scored against the logits produced after the
//! cell has consumed token `p`.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_key, indexed_stream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Copy,
    Parity,
    Modsum,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Copy => "copy",
            TaskKind::Parity => "parity",
            TaskKind::Modsum => "modsum",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "parity" => Ok(TaskKind::Parity),
            "modsum" => Ok(TaskKind::Modsum),
            other => Err(Error::config(format!("unknown task kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceTask {
    pub kind: TaskKind,
    pub vocab: usize,
    /// nominal length `T`
    pub length: usize,
    /// copy only
    #[serde(default)]
    pub delay: usize,
    /// modsum only
    #[serde(default = "default_modulus")]
    pub modulus: usize,
    #[serde(default)]
    pub seed: u64,
    /// parity/modsum: score only the last position or every prefix
    #[serde(default)]
    pub supervision: Supervision,
    /// derived stream id; distinguishes horizon-extended variants
    #[serde(default)]
    pub stream: u64,
}

/// Which positions of an accumulation task (parity, modsum) carry targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supervision {
    /// only the final position: the sum of the whole sequence
    #[default]
    Final,
    /// every position: the running sum of the prefix
    Running,
}

fn default_modulus() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub target_positions: Vec<usize>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Batch {
    pub examples: Vec<Example>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for ex in &self.examples {
            serde_json::to_writer(&mut out, ex)?;
            out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut examples = Vec::new();
        for line in input.lines() {
            let line = line.map_err(|e| Error::io("<jsonl>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            examples.push(serde_json::from_str(&line)?);
        }
        Ok(Batch { examples })
    }
}

impl SequenceTask {
    pub fn copy(vocab: usize, length: usize, delay: usize) -> Self {
        SequenceTask {
            kind: TaskKind::Copy,
            vocab,
            length,
            delay,
            modulus: default_modulus(),
            seed: 0,
            supervision: Supervision::Final,
            stream: 0,
        }
    }

    pub fn parity(vocab: usize, length: usize) -> Self {
        SequenceTask {
            kind: TaskKind::Parity,
            ..Self::copy(vocab, length, 0)
        }
    }

    pub fn modsum(vocab: usize, length: usize, modulus: usize) -> Self {
        SequenceTask {
            kind: TaskKind::Modsum,
            modulus,
            ..Self::copy(vocab, length, 0)
        }
    }

    pub fn with_supervision(mut self, supervision: Supervision) -> Self {
        self.supervision = supervision;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::config("task length must be >= 1"));
        }
        match self.kind {
            TaskKind::Copy if self.vocab < 3 => {
                Err(Error::config("copy needs vocab >= 3 (symbols, blank, marker)"))
            }
            TaskKind::Parity if self.vocab < 2 => Err(Error::config("parity needs vocab >= 2")),
            TaskKind::Modsum if self.modulus < 2 || self.modulus > self.vocab => {
                Err(Error::config("modsum needs 2 <= modulus <= vocab"))
            }
            _ => Ok(()),
        }
    }

    /// Number of output classes scored by the task; predictions are the
    /// argmax over the first `num_classes` logits.
    pub fn num_classes(&self) -> usize {
        match self.kind {
            TaskKind::Copy => self.vocab - 2,
            TaskKind::Parity => 2,
            TaskKind::Modsum => self.modulus,
        }
    }

    pub fn blank_token(&self) -> usize {
        self.vocab - 2
    }

    pub fn marker_token(&self) -> usize {
        self.vocab - 1
    }

    pub fn sequence_len(&self) -> usize {
        match self.kind {
            TaskKind::Copy => 2 * self.length + 1 + self.delay,
            _ => self.length,
        }
    }

    /// Random stream tied to this task's seed lineage.
    pub fn rng(&self, label: &str) -> StreamRng {
        indexed_stream(self.seed, label, self.stream)
    }

    /// Builds the example (tokens and labels) for a given payload.
    pub fn example_from_payload(&self, payload: &[usize]) -> Example {
        let t = payload.len();
        match self.kind {
            TaskKind::Copy => {
                let mut tokens = payload.to_vec();
                tokens.push(self.marker_token());
                tokens.extend(std::iter::repeat(self.blank_token()).take(self.delay + t));
                let first = t + 1 + self.delay;
                Example {
                    tokens,
                    target_positions: (first..first + t).collect(),
                    labels: payload.to_vec(),
                }
            }
            TaskKind::Parity | TaskKind::Modsum => {
                let modulus = if self.kind == TaskKind::Parity { 2 } else { self.modulus };
                let prefix: Vec<usize> = payload
                    .iter()
                    .scan(0, |acc, x| {
                        *acc = (*acc + x) % modulus;
                        Some(*acc)
                    })
                    .collect();
                match self.supervision {
                    Supervision::Final => Example {
                        tokens: payload.to_vec(),
                        target_positions: vec![t - 1],
                        labels: vec![prefix[t - 1]],
                    },
                    Supervision::Running => Example {
                        tokens: payload.to_vec(),
                        target_positions: (0..t).collect(),
                        labels: prefix,
                    },
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Example {
        let alphabet = match self.kind {
            TaskKind::Copy => self.vocab - 2,
            TaskKind::Parity => 2,
            TaskKind::Modsum => self.modulus,
        };
        let payload: Vec<usize> = (0..self.length).map(|_| rng.random_range(0..alphabet)).collect();
        self.example_from_payload(&payload)
    }
}

pub fn generate<R: Rng + ?Sized>(task: &SequenceTask, count: usize, rng: &mut R) -> Batch {
    Batch {
        examples: (0..count).map(|_| task.sample(rng)).collect(),
    }
}

/// Same task at `factor` times the nominal length, on a distinct stream.
pub fn extend_horizon(task: &SequenceTask, factor: usize) -> Result<SequenceTask> {
    if factor < 1 {
        return Err(Error::config("horizon factor must be >= 1"));
    }
    Ok(SequenceTask {
        length: task.length * factor,
        stream: derive_key(task.stream, "horizon", factor as u64),
        ..*task
    })
}

/// Adds i.i.d. `N(0, sigma²)` noise to every embedding vector.
pub fn perturb_embeddings<R: Rng + ?Sized>(
    embeddings: &[Vec<f64>],
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::config(format!("noise scale must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(embeddings.to_vec());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::config(e.to_string()))?;
    Ok(embeddings
        .iter()
        .map(|e| e.iter().map(|x| x + normal.sample(rng)).collect())
        .collect())
}

/// Gaussian noise vectors, one per step, with the same layout as
/// [`perturb_embeddings`] adds.
pub fn embedding_noise<R: Rng + ?Sized>(steps: usize, dim: usize, sigma: f64, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    perturb_embeddings(&vec![vec![0.0; dim]; steps], sigma, rng)
}
