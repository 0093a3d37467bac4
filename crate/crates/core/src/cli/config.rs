//! JSON run configuration.
//!
//! ```json
//! {
//!   "grid":     { "length": 1.0, "h": 0.1 },
//!   "time":     { "t_final": 0.01, "k": 0.002 },
//!   "model":    { "name": "paper_sec5" },
//!   "sampling": { "method": "collocation", "n_nodes": 64 },
//!   "output":   { "dir": "out" }
//! }
//! ```
//!
//! `grid` takes either `h` or `n`, `time` either `k` or `n_steps`. Custom
//! models use `"name": "custom"` with `diffusion`, `advection`, `reaction`,
//! `initial` and `boundary` blocks built from the shape registry.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bench::TestProblem;
use crate::ensemble::{Sampler, SchemeConfig};
use crate::error::{Error, Result};
use crate::etdsolver::TimeMesh;
use crate::randmodel::{
    BoundaryProcess, CoefficientProcess, InitialProcess, Model, ModelBounds, RandomVariableSpec, Sample,
    SampleFn, Shape,
};
use crate::specmat::Grid1D;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "unit_length")]
    pub length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

fn unit_length() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_final: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
}

/// Dirichlet data at one end of the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundarySpec {
    Constant { value: f64 },
    /// Holds the initial profile's value at that end for all time.
    InitialTrace,
    /// `target + (Phi_0(end) - target) exp(-rate t)`.
    Relax { target: f64, rate: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    pub left: BoundarySpec,
    pub right: BoundarySpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub shape: Shape,
    #[serde(default = "unit_amplitude")]
    pub amplitude: RandomVariableSpec,
}

fn unit_amplitude() -> RandomVariableSpec {
    RandomVariableSpec::deterministic(1.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomModel {
    pub diffusion: CoefficientProcess,
    pub advection: CoefficientProcess,
    pub reaction: CoefficientProcess,
    pub initial: InitialSection,
    pub boundary: BoundarySection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_bounds: Option<ModelBounds>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name")]
pub enum ModelSection {
    #[serde(rename = "paper_sec5")]
    Reference {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reaction_law: Option<RandomVariableSpec>,
    },
    #[serde(rename = "custom")]
    Custom(Box<CustomModel>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingSection {
    #[serde(flatten)]
    pub sampler: Sampler,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub grid: GridSection,
    pub time: TimeSection,
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingSection>,
    #[serde(default)]
    pub output: OutputSection,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn grid(&self) -> Result<Grid1D> {
        match (self.grid.h, self.grid.n) {
            (Some(h), None) => Grid1D::from_step(self.grid.length, h),
            (None, Some(n)) => Grid1D::new(self.grid.length, n),
            _ => Err(Error::Config("grid needs exactly one of \"h\" or \"n\"".into())),
        }
    }

    pub fn mesh(&self) -> Result<TimeMesh> {
        match (self.time.k, self.time.n_steps) {
            (Some(k), None) => TimeMesh::from_step(self.time.t_final, k),
            (None, Some(n)) => TimeMesh::new(self.time.t_final, n),
            _ => Err(Error::Config("time needs exactly one of \"k\" or \"n_steps\"".into())),
        }
    }

    /// The reference problem, when the config selects it.
    pub fn test_problem(&self) -> Option<TestProblem> {
        match &self.model {
            ModelSection::Reference { reaction_law } => Some(TestProblem::new(
                reaction_law.unwrap_or_else(crate::bench::reference_law),
            )),
            ModelSection::Custom(_) => None,
        }
    }

    pub fn model(&self) -> Result<Model> {
        let model = match &self.model {
            ModelSection::Reference { .. } => {
                let problem = self.test_problem().expect("reference model");
                if (self.grid.length - 1.0).abs() > 0.0 {
                    return Err(Error::Config(
                        "the reference problem lives on [0, 1]; grid length must be 1".into(),
                    ));
                }
                problem.model()
            }
            ModelSection::Custom(c) => build_custom(c, self.grid.length),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn sampler(&self, model: &Model) -> Sampler {
        self.sampling
            .as_ref()
            .map(|s| s.sampler)
            .unwrap_or_else(|| Sampler::default_for(model))
    }

    pub fn scheme(&self, model: &Model) -> Result<SchemeConfig> {
        let mut cfg = SchemeConfig::new(self.grid()?, self.mesh()?, self.sampler(model));
        cfg.threads = self.sampling.as_ref().and_then(|s| s.threads);
        Ok(cfg)
    }
}

fn boundary_fn(spec: BoundarySpec, initial: &InitialProcess, end: f64) -> SampleFn {
    match spec {
        BoundarySpec::Constant { value } => Arc::new(move |_, _| value),
        BoundarySpec::InitialTrace => {
            let init = initial.clone();
            Arc::new(move |_, s: &Sample| init.at(end, s))
        }
        BoundarySpec::Relax { target, rate } => {
            let init = initial.clone();
            Arc::new(move |t, s: &Sample| target + (init.at(end, s) - target) * (-rate * t).exp())
        }
    }
}

fn build_custom(c: &CustomModel, length: f64) -> Model {
    let initial = InitialProcess::separable(c.initial.shape, length);
    let boundary = BoundaryProcess {
        left: boundary_fn(c.boundary.left, &initial, 0.0),
        right: boundary_fn(c.boundary.right, &initial, length),
    };
    Model {
        name: "custom".into(),
        length,
        diffusion: c.diffusion.clone(),
        advection: c.advection.clone(),
        reaction: c.reaction.clone(),
        initial_amplitude: c.initial.amplitude,
        initial,
        boundary,
        reference_bounds: c.reference_bounds,
    }
}
