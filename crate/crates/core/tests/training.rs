use fluidlogic::autodiff::Mlp;
use fluidlogic::formula::{parse, AtomDef, AtomFn, AtomRegistry, Modality};
use fluidlogic::modal::{Evaluator, OperatorConfig};
use fluidlogic::sde::{BaseDrift, Diffusion, EvalContext, SdeLibrary, SdeSpec};
use fluidlogic::training::{
    contradiction, load_checkpoint, mine_contradictions, save_checkpoint, to_jsonl, total_loss, train, BatchSource,
    FormulaTarget, LambdaSchedule, LossReport, LossWeights, Objective, PhysicsTerm, Problem, TaskData, TrainConfig,
};

fn toy_problem() -> Problem {
    let drift = Mlp::new(&[1, 3, 1], 3, 1.0).unwrap();
    let diffusion = Mlp::new(&[1, 2, 1], 4, 0.5).unwrap();
    let temporal = SdeSpec::new("toy", 1, 1.0)
        .with_base(BaseDrift::Constant { value: vec![-0.2] })
        .with_correction(drift)
        .with_diffusion(Diffusion::Learned(diffusion));
    let epistemic = SdeSpec::new("k", 1, 0.5).with_correction(Mlp::new(&[1, 2, 1], 5, 1.0).unwrap()).with_sigma(0.3);
    let library = SdeLibrary::new()
        .with(Modality::Temporal, temporal)
        .with(Modality::Epistemic("a".into()), epistemic);
    let atoms = AtomRegistry::new()
        .with("p", AtomFn::tanh(vec![1.0], 0.1))
        .with("q", AtomFn::tanh(vec![2.0], -0.3));
    let data = TaskData {
        key: "temporal".into(),
        dt: 0.1,
        starts: vec![vec![0.3], vec![-0.5], vec![1.0]],
        targets: vec![
            vec![vec![0.25], vec![0.2], vec![0.18]],
            vec![vec![-0.4], vec![-0.35], vec![-0.3]],
            vec![vec![0.9], vec![0.85], vec![0.8]],
        ],
        batch: None,
    };
    let mut lambda_axiom = std::collections::BTreeMap::new();
    lambda_axiom.insert("temporal".to_string(), 0.7);
    Problem {
        library,
        atoms,
        cfg: OperatorConfig { n_mc: 8, k_steps: 5, tau_s: 0.2, tau_omega: 0.3, ..Default::default() },
        ctx: EvalContext::default(),
        targets: vec![
            FormulaTarget::new("box_p", parse("G(p)").unwrap(), Objective::Maximize),
            FormulaTarget::new("k_q", parse("K_a(F[0,0.5](q)) | p").unwrap(), Objective::Hinge { margin: 5.0 }),
        ],
        weights: LossWeights {
            beta_contra: 0.5,
            gamma_physics: 0.3,
            lambda_axiom,
            lambda_linn: LambdaSchedule::Constant { value: 1.3 },
        },
        data: Some(data),
        physics: Some(PhysicsTerm {
            key: "temporal".into(),
            reference: BaseDrift::Constant { value: vec![-0.5] },
            points: vec![vec![-1.0], vec![0.0], vec![0.7]],
        }),
        axiom_atoms: vec!["q".into()],
    }
}

fn batch() -> Vec<Vec<f64>> {
    vec![vec![0.2], vec![-0.4], vec![0.9]]
}

fn param_values(problem: &Problem) -> Vec<f64> {
    problem.library.networks().iter().flat_map(|(_, m)| m.params().flat_map(|t| t.values().to_vec())).collect()
}

fn nudge(problem: &mut Problem, index: usize, delta: f64) {
    let mut i = 0;
    for (_, spec) in problem.library.iter_mut() {
        for net in spec.networks_mut() {
            for t in net.params_mut() {
                let n = t.numel();
                if index < i + n {
                    t.values_mut()[index - i] += delta;
                    return;
                }
                i += n;
            }
        }
    }
    panic!("parameter index out of range");
}

fn grads(problem: &Problem) -> Vec<f64> {
    problem
        .library
        .networks()
        .iter()
        .flat_map(|(_, m)| m.params().flat_map(|t| t.grad().map(|g| g.to_vec()).unwrap_or(vec![0.0; t.numel()])))
        .collect()
}

#[test]
fn gradient_matches_central_differences() {
    let mut problem = toy_problem();
    let report = total_loss(&mut problem, &batch(), 0, 77).unwrap();
    assert!(report.task > 0.0 && report.physics > 0.0 && report.linn != 0.0);
    let analytic = grads(&problem);
    let h = 1e-4;
    let mut checked = 0;
    for i in 0..analytic.len() {
        nudge(&mut problem, i, h);
        let up = total_loss(&mut problem, &batch(), 0, 77).unwrap().total;
        nudge(&mut problem, i, -2.0 * h);
        let down = total_loss(&mut problem, &batch(), 0, 77).unwrap().total;
        nudge(&mut problem, i, h);
        let fd = (up - down) / (2.0 * h);
        let scale = fd.abs().max(analytic[i].abs());
        assert!((fd - analytic[i]).abs() <= 1e-3 * scale + 1e-7, "param {i}: analytic {} fd {fd}", analytic[i]);
        checked += 1;
    }
    assert!(checked > 20);
}

#[test]
fn total_is_the_weighted_sum() {
    let mut problem = toy_problem();
    let r = total_loss(&mut problem, &batch(), 3, 1).unwrap();
    assert!((r.total - r.weighted_sum(&problem.weights)).abs() <= 1e-10);
    let explicit = r.task + 0.5 * r.contra + 0.3 * r.physics + 0.7 * r.axiom["temporal"] + 1.3 * r.linn;
    assert!((r.total - explicit).abs() <= 1e-10);
    assert!(r.satisfaction.contains_key("box_p") && r.satisfaction.contains_key("k_q"));
}

#[test]
fn perfect_fit_with_only_task_weight_is_zero() {
    let spec = SdeSpec::new("t", 1, 1.0).with_base(BaseDrift::Constant { value: vec![1.0] });
    let mut problem = Problem {
        library: SdeLibrary::new().with(Modality::Temporal, spec),
        weights: LossWeights { lambda_linn: LambdaSchedule::Constant { value: 0.0 }, ..Default::default() },
        data: Some(TaskData {
            key: "temporal".into(),
            dt: 0.5,
            starts: vec![vec![0.0]],
            targets: vec![vec![vec![0.5], vec![1.0]]],
            batch: None,
        }),
        ..Default::default()
    };
    let r = total_loss(&mut problem, &[vec![0.0]], 0, 0).unwrap();
    assert_eq!(r.total, 0.0);
}

#[test]
fn ramp_schedule() {
    let s = LambdaSchedule::Ramp { start: 10, length: 4, max: 2.0 };
    let vals: Vec<f64> = (8..16).map(|k| s.at(k)).collect();
    assert_eq!(vals, vec![0.0, 0.0, 0.5, 1.0, 1.5, 2.0, 2.0, 2.0]);
    assert!(vals.windows(2).all(|w| w[0] <= w[1]));
}

fn train_cfg(steps: usize) -> TrainConfig {
    TrainConfig {
        adam: Default::default(),
        steps,
        batch: BatchSource::Box { lo: vec![-1.0], hi: vec![1.0], size: 4 },
        seed: 9,
        mining: None,
    }
}

#[test]
fn training_is_deterministic_and_zero_steps_is_identity() {
    let mut a = toy_problem();
    let before = param_values(&a);
    let out = train(&mut a, &train_cfg(0), 0).unwrap();
    assert!(out.reports.is_empty());
    assert_eq!(param_values(&a), before);

    let mut a = toy_problem();
    let mut b = toy_problem();
    let ra = train(&mut a, &train_cfg(5), 0).unwrap();
    let rb = train(&mut b, &train_cfg(5), 0).unwrap();
    assert_eq!(to_jsonl(&ra.reports), to_jsonl(&rb.reports));
    assert_eq!(param_values(&a), param_values(&b));
    assert_ne!(param_values(&a), before);
    for line in to_jsonl(&ra.reports).lines() {
        let r: LossReport = serde_json::from_str(line).unwrap();
        assert!(r.total.is_finite());
    }
}

#[test]
fn divergent_loss_stops_early() {
    let mut p = toy_problem();
    p.data.as_mut().unwrap().targets[0][0][0] = 1e5;
    let out = train(&mut p, &train_cfg(10), 0).unwrap();
    assert_eq!(out.reports.len(), 1);
    assert!(out.stopped_early.unwrap().contains("exceeded"));
}

#[test]
fn checkpoint_round_trip_restores_parameters() {
    let mut p = toy_problem();
    train(&mut p, &train_cfg(2), 0).unwrap();
    let text = save_checkpoint(&p.library);
    let mut fresh = toy_problem();
    load_checkpoint(&mut fresh.library, &text).unwrap();
    assert_eq!(param_values(&fresh), param_values(&p));
}

#[test]
fn maximizing_box_raises_it() {
    // Outward drift; the correction can learn to push back.
    let spec = SdeSpec::new("t", 1, 1.0)
        .with_base(BaseDrift::Constant { value: vec![0.5] })
        .with_correction(Mlp::zeros(&[1, 8, 1]).unwrap().tap_init(1))
        .with_sigma(0.3);
    let mut p = Problem {
        library: SdeLibrary::new().with(Modality::Temporal, spec),
        atoms: AtomRegistry::new().with("inside", AtomFn::linear(vec![-1.0], 1.0)),
        cfg: OperatorConfig { n_mc: 16, k_steps: 8, ..Default::default() },
        targets: vec![FormulaTarget::new("g", parse("G(inside)").unwrap(), Objective::Maximize)],
        ..Default::default()
    };
    let mut cfg = train_cfg(150);
    cfg.adam.lr = 0.05;
    let out = train(&mut p, &cfg, 0).unwrap();
    let avg = |r: &[LossReport]| r.iter().map(|x| x.satisfaction["g"]).sum::<f64>() / r.len() as f64;
    let first = avg(&out.reports[..10]);
    let last = avg(&out.reports[140..]);
    assert!(last > first + 0.1, "{first} -> {last}");
}

trait TapInit {
    fn tap_init(self, seed: u64) -> Self;
}

impl TapInit for Mlp {
    fn tap_init(self, seed: u64) -> Self {
        Mlp::new(self.widths(), seed, 0.5).unwrap()
    }
}

fn frozen_interval_problem() -> (SdeLibrary, AtomRegistry) {
    let lib = SdeLibrary::new().with(Modality::Temporal, SdeSpec::new("frozen", 2, 1.0));
    // Lower bound exceeds the upper bound where x + y > 1.
    let atoms = AtomRegistry::new()
        .with("q", AtomDef::interval(AtomFn::linear(vec![1.0, 1.0], 0.0), AtomFn::constant(1.0)))
        .with("p", AtomFn::tanh(vec![1.0, -1.0], 0.0));
    (lib, atoms)
}

#[test]
fn mining_finds_the_contradictory_region() {
    let (lib, atoms) = frozen_interval_problem();
    let cfg = OperatorConfig { n_mc: 4, k_steps: 4, ..Default::default() };
    let ctx = EvalContext::default();
    let f = parse("G(q)").unwrap();
    let region = [(-1.0, 1.0), (-1.0, 1.0)];
    let found = mine_contradictions(&f, &region, &lib, &atoms, &cfg, &ctx, 32, 20, 0.05, 3).unwrap();
    assert!(!found.is_empty());
    // Grid oracle: cells of width 0.05 with a positive score.
    let ev = Evaluator::new(&lib, &atoms, &cfg, &ctx);
    let cell = 0.05;
    for m in &found {
        assert!(m.world.iter().all(|x| (-1.0..=1.0).contains(x)));
        let cx = ((m.world[0] + 1.0) / cell).floor() * cell - 1.0 + cell;
        let cy = ((m.world[1] + 1.0) / cell).floor() * cell - 1.0 + cell;
        assert!(contradiction(&ev, &f, &[cx, cy], 0).unwrap() > 0.0, "{:?}", m.world);
        assert_eq!(contradiction(&ev, &f, &m.world, m.seed).unwrap(), m.score);
    }
    assert!(found.windows(2).all(|w| w[0].score >= w[1].score));

    let start = mine_contradictions(&f, &region, &lib, &atoms, &cfg, &ctx, 32, 0, 0.05, 3).unwrap();
    assert!(found.len() >= start.len());
    for (a, b) in found.iter().zip(&start) {
        assert!(a.score >= b.score);
    }
}

#[test]
fn consistent_atoms_yield_no_contradictions() {
    let (lib, atoms) = frozen_interval_problem();
    let cfg = OperatorConfig { n_mc: 4, k_steps: 4, ..Default::default() };
    let f = parse("G(p) & !F(p)").unwrap();
    let found =
        mine_contradictions(&f, &[(-1.0, 1.0), (-1.0, 1.0)], &lib, &atoms, &cfg, &EvalContext::default(), 16, 5, 0.1, 0)
            .unwrap();
    assert!(found.is_empty());
}
