//! User-assembled experiments: optional training, then every formula at
//! every listed world.

use crate::error::{Error, Result};
use crate::harness::{Artifact, ExperimentConfig, MetricsFile, MetricsRecord, ModalSetup, RunOutput};
use crate::modal::{Evaluator, OperatorConfig};
use crate::sde::derive_seed;
use crate::training::{save_checkpoint, to_jsonl, train, FormulaTarget, Problem};

pub(crate) fn setup(cfg: &ExperimentConfig) -> Result<ModalSetup> {
    let c = cfg.custom.as_ref().ok_or_else(|| Error::Config("missing `custom` block".into()))?;
    Ok(ModalSetup { library: c.build_library()?, atoms: c.atoms.clone(), ctx: c.context.clone(), dim: c.dim })
}

pub fn run_custom(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let c = cfg.custom.as_ref().ok_or_else(|| Error::Config("missing `custom` block".into()))?;
    let formulas = c.parsed_formulas()?;
    let mut setup = setup(cfg)?;
    let mut artifacts = Vec::new();
    if let Some(t) = &c.training {
        let targets = t
            .targets
            .iter()
            .map(|b| FormulaTarget::new(b.formula.clone(), formulas[&b.formula].clone(), b.objective))
            .collect();
        let mut problem = Problem {
            library: setup.library,
            atoms: setup.atoms.clone(),
            cfg: cfg.operator.clone(),
            ctx: setup.ctx.clone(),
            targets,
            weights: t.weights.clone(),
            ..Default::default()
        };
        let outcome = train(&mut problem, &t.train, 0)?;
        artifacts.push(Artifact { name: "custom_loss.jsonl".into(), contents: to_jsonl(&outcome.reports) });
        artifacts.push(Artifact { name: "custom.ckpt".into(), contents: save_checkpoint(&problem.library) });
        setup.library = problem.library;
    }

    let eval_cfg = OperatorConfig { n_mc: cfg.eval_n_mc, ..cfg.operator.clone() };
    let ev = Evaluator::new(&setup.library, &setup.atoms, &eval_cfg, &setup.ctx);
    let seeds: Vec<u64> = (0..c.worlds.len()).map(|i| derive_seed(cfg.seed, i as u64, 0x5E)).collect();
    let mut csv = String::from("formula,world,lower,upper\n");
    let mut records = Vec::new();
    for (name, f) in &formulas {
        let vals = ev.eval_many(f, &c.worlds, &seeds)?;
        let mut r = MetricsRecord::new(name.clone());
        for (i, v) in vals.iter().enumerate() {
            r.set(&format!("L_w{i}"), v.lower).set(&format!("U_w{i}"), v.upper);
            csv.push_str(&format!("{name},{i},{},{}\n", v.lower, v.upper));
        }
        records.push(r);
    }
    artifacts.push(Artifact { name: "custom_eval.csv".into(), contents: csv });
    let metrics = MetricsFile::new("custom", cfg.seed, records);
    metrics.validate()?;
    Ok(RunOutput { metrics, artifacts })
}
