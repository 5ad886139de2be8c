//! Versioned JSON documents for trained models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{CellParams, ConstraintConfig, Enforcement, ModelDims};
use crate::error::{Error, Result};
use crate::numgrad::Tensor;
use crate::tasks::SequenceTask;
use crate::training::ObjectiveWeights;

pub const MODEL_FORMAT: &str = "burdenlab-model";
pub const MODEL_VERSION: u32 = 1;

/// Flattened row-major weights keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsRepr {
    pub dims: ModelDims,
    pub w_h: Vec<f64>,
    pub w_x: Vec<f64>,
    pub b: Vec<f64>,
    pub u_h: Vec<f64>,
    pub u_x: Vec<f64>,
    pub c: Vec<f64>,
    pub w_o: Vec<f64>,
    pub b_o: Vec<f64>,
    pub embed: Vec<f64>,
}

impl From<&CellParams> for ParamsRepr {
    fn from(p: &CellParams) -> Self {
        ParamsRepr {
            dims: p.dims(),
            w_h: p.w_h.data.clone(),
            w_x: p.w_x.data.clone(),
            b: p.b.data.clone(),
            u_h: p.u_h.data.clone(),
            u_x: p.u_x.data.clone(),
            c: p.c.data.clone(),
            w_o: p.w_o.data.clone(),
            b_o: p.b_o.data.clone(),
            embed: p.embed.data.clone(),
        }
    }
}

impl TryFrom<ParamsRepr> for CellParams {
    type Error = Error;

    fn try_from(r: ParamsRepr) -> Result<Self> {
        let shapes = CellParams::shapes(r.dims);
        let flat = [r.w_h, r.w_x, r.b, r.u_h, r.u_x, r.c, r.w_o, r.b_o, r.embed];
        let mut tensors = Vec::with_capacity(9);
        for (data, shape) in flat.into_iter().zip(shapes) {
            if data.len() != shape.len() {
                return Err(Error::Document(format!(
                    "weight array of length {} does not fit shape {shape}",
                    data.len()
                )));
            }
            tensors.push(Tensor::matrix(shape.rows, shape.cols, data));
        }
        let p = CellParams::from_tensors(tensors)?;
        if p.dims() != r.dims {
            return Err(Error::Document("declared dims disagree with weights".into()));
        }
        Ok(p)
    }
}

impl Serialize for CellParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsRepr::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for CellParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = ParamsRepr::deserialize(d)?;
        CellParams::try_from(repr).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelRole {
    Base,
    Cc,
    Student,
}

impl ModelRole {
    pub fn name(self) -> &'static str {
        match self {
            ModelRole::Base => "base",
            ModelRole::Cc => "cc",
            ModelRole::Student => "student",
        }
    }
}

/// A model plus everything needed to deploy and evaluate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub role: ModelRole,
    /// enforcement mode the model runs under
    pub deployment: Enforcement,
    /// the teacher family's constraint yardstick
    pub constraint: ConstraintConfig,
    pub task: SequenceTask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveWeights>,
    pub seed: u64,
    /// students: path or id of the teacher they were distilled from
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    pub params: CellParams,
}

impl ModelDocument {
    pub fn new(
        role: ModelRole,
        params: CellParams,
        deployment: Enforcement,
        constraint: ConstraintConfig,
        task: SequenceTask,
        seed: u64,
    ) -> Self {
        ModelDocument {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            role,
            deployment,
            constraint,
            task,
            objective: None,
            seed,
            teacher: None,
            budget: None,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(s)?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::Document(format!("unexpected format `{}`", doc.format)));
        }
        if doc.version != MODEL_VERSION {
            return Err(Error::Document(format!("unsupported version {}", doc.version)));
        }
        doc.constraint.validate()?;
        doc.task.validate()?;
        if doc.params.vocab() != doc.task.vocab {
            return Err(Error::Document("model vocabulary differs from task vocabulary".into()));
        }
        Ok(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn deployed(&self) -> crate::model::DeployedModel {
        crate::model::DeployedModel::new(self.params.clone(), self.deployment)
    }
}
