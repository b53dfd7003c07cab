use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Mlp;
use crate::error::{Error, Result};
use crate::formula::{parse, AtomRegistry, Formula, Modality};
use crate::harness::{DeonticParams, LorenzParams, SwarmParams};
use crate::modal::OperatorConfig;
use crate::sde::{BaseDrift, Diffusion, EvalContext, InitPolicy, SdeLibrary, SdeSpec};
use crate::training::{LossWeights, Objective, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    Swarm,
    Lorenz,
    Deontic,
    Custom,
}

impl ExperimentName {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::Swarm => "swarm",
            ExperimentName::Lorenz => "lorenz",
            ExperimentName::Deontic => "deontic",
            ExperimentName::Custom => "custom",
        }
    }
}

/// Hidden widths and initialization of a correction or diffusion network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetBlock {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_init_scale() -> f64 {
    1.0
}

impl NetBlock {
    pub fn build(&self, input: usize, output: usize) -> Result<Mlp> {
        let mut widths = vec![input];
        widths.extend(&self.hidden);
        widths.push(output);
        Mlp::new(&widths, self.seed, self.init_scale)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiffusionBlock {
    Constant { sigma: Vec<f64> },
    Learned { net: NetBlock },
}

impl Default for DiffusionBlock {
    fn default() -> Self {
        DiffusionBlock::Constant { sigma: Vec::new() }
    }
}

/// One library entry as written in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdeBlock {
    pub horizon: f64,
    #[serde(default = "zero_drift")]
    pub base: BaseDrift,
    #[serde(default)]
    pub correction: Option<NetBlock>,
    /// An empty constant list means zero diffusion.
    #[serde(default)]
    pub diffusion: DiffusionBlock,
    #[serde(default)]
    pub init: InitPolicy,
    #[serde(default)]
    pub time_input: bool,
    #[serde(default)]
    pub obs_dim: usize,
}

fn zero_drift() -> BaseDrift {
    BaseDrift::Zero
}

impl SdeBlock {
    pub fn build(&self, name: &str, dim: usize) -> Result<SdeSpec> {
        let mut spec = SdeSpec::new(name, dim, self.horizon)
            .with_base(self.base.clone())
            .with_init(self.init.clone())
            .with_time_input(self.time_input)
            .with_obs_dim(self.obs_dim);
        let width = spec.net_input_width();
        if let Some(net) = &self.correction {
            spec = spec.with_correction(net.build(width, dim)?);
        }
        spec = match &self.diffusion {
            DiffusionBlock::Constant { sigma } if sigma.is_empty() => spec,
            DiffusionBlock::Constant { sigma } if sigma.len() == 1 => spec.with_sigma(sigma[0]),
            DiffusionBlock::Constant { sigma } => spec.with_diffusion(Diffusion::Constant(sigma.clone())),
            DiffusionBlock::Learned { net } => spec.with_diffusion(Diffusion::Learned(net.build(width, dim)?)),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetBlock {
    /// Key into the `formulas` map.
    pub formula: String,
    #[serde(default)]
    pub objective: Objective,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomTraining {
    pub targets: Vec<TargetBlock>,
    #[serde(default)]
    pub weights: LossWeights,
    pub train: TrainConfig,
}

/// A user-assembled experiment: library, atoms and formulas are given
/// explicitly and evaluated at the listed worlds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomParams {
    pub dim: usize,
    /// Keyed by modality key (`temporal`, `epistemic:a`, ...) or
    /// `action:<name>`.
    pub library: BTreeMap<String, SdeBlock>,
    pub atoms: AtomRegistry,
    pub formulas: BTreeMap<String, String>,
    #[serde(default)]
    pub context: EvalContext,
    pub worlds: Vec<Vec<f64>>,
    #[serde(default)]
    pub training: Option<CustomTraining>,
}

impl CustomParams {
    pub fn build_library(&self) -> Result<SdeLibrary> {
        let mut lib = SdeLibrary::new();
        for (key, block) in &self.library {
            let is_action = key.strip_prefix("action:").is_some_and(|a| !a.is_empty());
            if !is_action && Modality::from_key(key).is_none() {
                return Err(Error::Config(format!("library key `{key}` is not a modality or action")));
            }
            let name = key.replace(':', "_");
            lib.insert_key(key.clone(), block.build(&name, self.dim)?);
        }
        lib.validate()?;
        Ok(lib)
    }

    pub fn parsed_formulas(&self) -> Result<BTreeMap<String, Formula>> {
        self.formulas.iter().map(|(k, v)| Ok((k.clone(), parse(v)?))).collect()
    }
}

/// Top-level experiment file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: ExperimentName,
    pub seed: u64,
    #[serde(default)]
    pub operator: OperatorConfig,
    /// Path count used for reported (not trained) values.
    #[serde(default = "default_eval_n_mc")]
    pub eval_n_mc: usize,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swarm: Option<SwarmParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lorenz: Option<LorenzParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deontic: Option<DeonticParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomParams>,
}

fn default_eval_n_mc() -> usize {
    256
}

impl ExperimentConfig {
    /// The shipped configuration of a case study.
    pub fn preset(name: ExperimentName) -> Self {
        let mut cfg = ExperimentConfig {
            name,
            seed: 7,
            operator: OperatorConfig::default(),
            eval_n_mc: default_eval_n_mc(),
            output_dir: None,
            swarm: None,
            lorenz: None,
            deontic: None,
            custom: None,
        };
        match name {
            ExperimentName::Swarm => cfg.swarm = Some(SwarmParams::default()),
            ExperimentName::Lorenz => cfg.lorenz = Some(LorenzParams::default()),
            ExperimentName::Deontic => cfg.deontic = Some(DeonticParams::default()),
            ExperimentName::Custom => cfg.custom = Some(custom_example()),
        }
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.operator.validate()?;
        if self.eval_n_mc == 0 {
            return Err(Error::Config("eval_n_mc must be at least 1".into()));
        }
        let present = [
            (ExperimentName::Swarm, self.swarm.is_some()),
            (ExperimentName::Lorenz, self.lorenz.is_some()),
            (ExperimentName::Deontic, self.deontic.is_some()),
            (ExperimentName::Custom, self.custom.is_some()),
        ];
        for (n, has) in present {
            if n == self.name && !has {
                return Err(Error::Config(format!("experiment `{}` needs a `{}` block", n.as_str(), n.as_str())));
            }
        }
        if let Some(c) = &self.custom {
            let lib = c.build_library()?;
            let formulas = c.parsed_formulas()?;
            let ev_cfg = self.operator.clone();
            let ev = crate::modal::Evaluator::new(&lib, &c.atoms, &ev_cfg, &c.context);
            for f in formulas.values() {
                ev.check(f, c.dim)?;
            }
            if c.worlds.iter().any(|w| w.len() != c.dim) {
                return Err(Error::Config("every world needs `dim` coordinates".into()));
            }
            if let Some(t) = &c.training {
                for target in &t.targets {
                    if !formulas.contains_key(&target.formula) {
                        return Err(Error::Config(format!("training target `{}` is not a formula", target.formula)));
                    }
                }
                t.weights.validate()?;
                t.train.validate()?;
            }
        }
        Ok(())
    }
}

fn custom_example() -> CustomParams {
    use crate::formula::AtomFn;
    let mut library = BTreeMap::new();
    library.insert(
        "temporal".to_string(),
        SdeBlock {
            horizon: 1.0,
            base: BaseDrift::Zero,
            correction: None,
            diffusion: DiffusionBlock::Constant { sigma: vec![1.0] },
            init: InitPolicy::TrueState,
            time_input: false,
            obs_dim: 0,
        },
    );
    let atoms = AtomRegistry::new().with("p", AtomFn::tanh(vec![1.0], 0.0));
    let mut formulas = BTreeMap::new();
    formulas.insert("box_p".to_string(), "G(p)".to_string());
    formulas.insert("diamond_p".to_string(), "F(p)".to_string());
    CustomParams {
        dim: 1,
        library,
        atoms,
        formulas,
        context: EvalContext::default(),
        worlds: vec![vec![0.0], vec![0.5], vec![-0.5]],
        training: None,
    }
}
