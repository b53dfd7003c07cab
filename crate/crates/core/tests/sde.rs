use fluidlogic::sde::{
    compose, ks_statistic, resolve_init, simulate, simulate_with, BaseDrift, DivergencePolicy, EvalContext, InitPolicy,
    NoisePath, SdeSpec, SimOptions,
};

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn brownian_variance_law() {
    let spec = SdeSpec::new("bm", 1, 1.0).with_sigma(1.0);
    let b = simulate(&spec, &[0.0], 4096, 33, 123).unwrap();
    let xs: Vec<f64> = (0..4096).map(|n| b.terminal(n)[0]).collect();
    let (_, var) = mean_var(&xs);
    // Var of the sample variance of a normal is 2 s^4 / (n - 1).
    let se = (2.0 / 4095.0f64).sqrt();
    assert!((var - 1.0).abs() < 3.0 * se, "variance {var}");
    assert_eq!(b.times[0], 0.0);
    assert!(b.times.windows(2).all(|w| w[1] > w[0]));
    assert!((b.times[32] - 1.0).abs() < 1e-15);
}

#[test]
fn lorenz_matches_scratch_euler() {
    let spec = SdeSpec::new("lorenz", 3, 0.5).with_base(BaseDrift::lorenz63());
    let k = 501;
    let b = simulate(&spec, &[1.0, 1.0, 1.0], 1, k, 0).unwrap();
    let dt = 0.5 / (k - 1) as f64;
    let (mut x, mut y, mut z) = (1.0f64, 1.0f64, 1.0f64);
    for step in 1..k {
        let dx = 10.0 * (y - x);
        let dy = x * (28.0 - z) - y;
        let dz = x * y - 8.0 / 3.0 * z;
        x += dx * dt;
        y += dy * dt;
        z += dz * dt;
        let s = b.state(0, step);
        let tol = 1e-10 * (1.0 + s[0].abs().max(s[1].abs()).max(s[2].abs()));
        assert!((s[0] - x).abs() <= tol && (s[1] - y).abs() <= tol && (s[2] - z).abs() <= tol, "step {step}");
    }
}

#[test]
fn scaled_lorenz_is_the_same_flow() {
    let plain = SdeSpec::new("a", 3, 0.3).with_base(BaseDrift::lorenz63());
    let scaled = SdeSpec::new("b", 3, 0.3).with_base(BaseDrift::Lorenz {
        sigma: 10.0,
        rho: 28.0,
        beta: 8.0 / 3.0,
        scale: 10.0,
        shift: vec![0.0, 0.0, 25.0],
    });
    let x0 = [1.0, 2.0, 20.0];
    let u0 = [0.1, 0.2, -0.5];
    let a = simulate(&plain, &x0, 1, 31, 0).unwrap();
    let b = simulate(&scaled, &u0, 1, 31, 0).unwrap();
    for k in 0..31 {
        let (x, u) = (a.state(0, k), b.state(0, k));
        assert!((x[0] - 10.0 * u[0]).abs() < 1e-9);
        assert!((x[2] - (10.0 * u[2] + 25.0)).abs() < 1e-9);
    }
}

#[test]
fn simulation_is_bitwise_reproducible_across_thread_counts() {
    let spec = SdeSpec::new("bm", 2, 1.0)
        .with_base(BaseDrift::Confinement { swirl: 1.0, pressure: 0.5 })
        .with_sigma(0.3);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate(&spec, &[0.1, 0.2], 500, 20, 99).unwrap())
    };
    let a = run(1);
    let b = run(7);
    assert_eq!(a, b);
    assert_eq!(a.noise(17).unwrap(), NoisePath::generate(99, 17, 19, 2, 1.0 / 19.0));
}

#[test]
fn increments_are_uncorrelated_across_paths() {
    let k = 4096;
    let a = NoisePath::generate(5, 0, k, 1, 1.0);
    for j in [1u64, 2, 1000] {
        let b = NoisePath::generate(5, j, k, 1, 1.0);
        let (ma, va) = mean_var(&a.increments);
        let (mb, vb) = mean_var(&b.increments);
        let cov: f64 = a.increments.iter().zip(&b.increments).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>()
            / (k as f64 - 1.0);
        let corr = cov / (va * vb).sqrt();
        assert!(corr.abs() < 0.05, "paths 0 and {j}: {corr}");
    }
    // Across 4096 paths at one step.
    let firsts: Vec<f64> = (0..4096).map(|n| NoisePath::generate(6, n, 2, 1, 1.0).increments[0]).collect();
    let seconds: Vec<f64> = (0..4096).map(|n| NoisePath::generate(6, n + 4096, 2, 1, 1.0).increments[0]).collect();
    let (ma, va) = mean_var(&firsts);
    let (mb, vb) = mean_var(&seconds);
    let cov: f64 = firsts.iter().zip(&seconds).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / 4095.0;
    assert!((cov / (va * vb).sqrt()).abs() < 0.05);
}

#[test]
fn compose_examples() {
    let frozen = SdeSpec::new("f", 1, 1.0);
    let b = compose(&[&frozen, &frozen], &[0.4], 3, 5, 0).unwrap();
    assert_eq!(b.k(), 9);
    assert!(b.states.iter().all(|v| *v == 0.4));
    assert!((b.times[8] - 2.0).abs() < 1e-15);

    let up = SdeSpec::new("up", 1, 1.0).with_base(BaseDrift::Constant { value: vec![1.0] });
    let b = compose(&[&up, &frozen], &[0.0], 2, 11, 0).unwrap();
    assert!((b.state(0, 10)[0] - 1.0).abs() < 1e-12);
    assert!((b.state(0, 20)[0] - 1.0).abs() < 1e-12);
}

#[test]
fn compose_matches_time_switched_sde() {
    let a_drift = BaseDrift::Constant { value: vec![1.0] };
    let b_drift_1d = BaseDrift::Constant { value: vec![-0.5] };
    let a = SdeSpec::new("a", 1, 1.0).with_base(a_drift.clone()).with_sigma(0.5);
    let b = SdeSpec::new("b", 1, 1.0).with_base(b_drift_1d.clone()).with_sigma(0.5);
    let merged = SdeSpec::new("ab", 1, 2.0)
        .with_base(BaseDrift::TimeSwitch { at: 1.0, before: Box::new(a_drift), after: Box::new(b_drift_1d) })
        .with_sigma(0.5);
    let chained = compose(&[&a, &b], &[0.0], 4096, 17, 1).unwrap();
    let direct = simulate(&merged, &[0.0], 4096, 33, 2).unwrap();
    let x: Vec<f64> = (0..4096).map(|n| chained.terminal(n)[0]).collect();
    let y: Vec<f64> = (0..4096).map(|n| direct.terminal(n)[0]).collect();
    assert!(ks_statistic(&x, &y) < 0.05);
}

#[test]
fn markov_semigroup() {
    let spec = SdeSpec::new("ou", 2, 0.5)
        .with_base(BaseDrift::Confinement { swirl: 1.0, pressure: -0.8 })
        .with_sigma(0.4);
    let long = spec.clone().with_horizon(1.0);
    let one = simulate(&long, &[0.5, 0.0], 4096, 41, 3).unwrap();
    let two = compose(&[&spec, &spec], &[0.5, 0.0], 4096, 21, 4).unwrap();
    for j in 0..2 {
        let x: Vec<f64> = (0..4096).map(|n| one.terminal(n)[j]).collect();
        let y: Vec<f64> = (0..4096).map(|n| two.terminal(n)[j]).collect();
        assert!(ks_statistic(&x, &y) < 0.05, "coordinate {j}");
    }
}

#[test]
fn divergence_is_recorded_with_frozen_prefix() {
    let spec = SdeSpec::new("blowup", 1, 1.0).with_base(BaseDrift::Constant { value: vec![1e8] });
    let b = simulate(&spec, &[0.0], 2, 5, 0).unwrap();
    assert_eq!(b.escape_rate(), 1.0);
    assert!(b.states.iter().all(|v| v.is_finite()));
    let last = b.state(0, 4)[0];
    assert_eq!(b.state(0, 1)[0], last);
    let opts = SimOptions { divergence: DivergencePolicy::Error, ..Default::default() };
    let err = simulate_with(&spec, &[0.0], 2, 5, 0, &opts).unwrap_err();
    assert!(err.is_numeric());
}

#[test]
fn init_policies() {
    let ctx = EvalContext::default().with_belief("r3", vec![1.0, 0.0]).with_observation("y", vec![0.5]);
    let t = SdeSpec::new("t", 2, 1.0);
    assert_eq!(resolve_init(&t, &[0.0, 0.0], &ctx).unwrap().state, vec![0.0, 0.0]);
    let b = t.clone().with_init(InitPolicy::BelievedState("r3".into()));
    assert_eq!(resolve_init(&b, &[0.0, 0.0], &ctx).unwrap().state, vec![1.0, 0.0]);
    let missing = t.clone().with_init(InitPolicy::BelievedState("r9".into()));
    assert!(matches!(resolve_init(&missing, &[0.0, 0.0], &ctx), Err(fluidlogic::Error::Config(_))));
    let c = t.with_init(InitPolicy::Conditioned("y".into())).with_obs_dim(1).with_time_input(true);
    let r = resolve_init(&c, &[0.2, 0.3], &ctx).unwrap();
    assert_eq!(r.state, vec![0.2, 0.3]);
    assert_eq!(r.obs, Some(vec![0.5]));
    assert_eq!(c.net_input_width(), 4);
}
