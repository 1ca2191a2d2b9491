mod common;

use common::*;
use gbtd::io::{median, synth_generate, ExperimentConfig};
use gbtd::krylov::steihaug;
use gbtd::optim::{cg_beta, lm_step};
use gbtd::{
    init_random, initialize, minimize, BlockTermModel, ConvergenceTrace, Method, OptimizerConfig,
    ResidualState,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Unconstrained benchmark problem `run`, started from the configured
/// initialization.
fn benchmark_problem(cfg: &ExperimentConfig, run: u64) -> ResidualState {
    let seed = cfg.seed + run;
    let (target, _) = synth_generate(cfg, seed).unwrap();
    let start = initialize(&cfg.template().unwrap(), &target, seed ^ 0x696e_6974, cfg.init);
    ResidualState::new(start, target).unwrap()
}

fn solve(state: ResidualState, method: Method, iters: usize) -> ConvergenceTrace {
    let mut cfg = OptimizerConfig::new(method);
    cfg.max_iters = iters;
    minimize(state, &cfg).unwrap().1
}

#[test]
fn gauss_newton_solves_rank_one_problem_quickly() {
    let t = BlockTermModel::new(&[5, 4, 3], 2, &[], &[1]).unwrap();
    for seed in 0..5 {
        let truth = init_random(&t, seed, 1.0);
        let mut r = rng(seed + 10);
        let x = truth.pack().data.clone();
        let noise = random_vector(x.len(), &mut r) * (0.05 * x.norm() / (x.len() as f64).sqrt());
        let start = truth.unpack((x + noise).as_slice()).unwrap();
        let state = ResidualState::new(start, truth.reconstruct()).unwrap();
        let trace = solve(state, Method::Gn, 5);
        let res = trace.final_relative_residual();
        assert!(res < 1e-10, "seed {seed}: {res} after {} records", trace.records.len());
    }
}

#[test]
fn accepted_objectives_never_increase() {
    let cfg = ExperimentConfig::unconstrained_benchmark();
    for method in Method::ALL {
        for run in 0..2 {
            let mut state = benchmark_problem(&cfg, run);
            // start away from the algebraic solution so every method has work to do
            let x = state.params().clone();
            let mut r = rng(run);
            state.set_params(&(&x + random_vector(x.len(), &mut r) * 0.05)).unwrap();
            let trace = solve(state, method, 30);
            assert!(trace.records.len() > 1, "{method}");
            for w in trace.records.windows(2) {
                assert!(
                    w[1].objective <= w[0].objective,
                    "{method} run {run}: {} -> {} at {}",
                    w[0].objective,
                    w[1].objective,
                    w[1].iter
                );
            }
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let cfg = ExperimentConfig::unconstrained_benchmark();
    for method in [Method::Als, Method::CgPr, Method::LmN, Method::TrDl, Method::ScgFn] {
        let a = solve(benchmark_problem(&cfg, 3), method, 15);
        let b = solve(benchmark_problem(&cfg, 3), method, 15);
        let fa: Vec<u64> = a.records.iter().map(|r| r.objective.to_bits()).collect();
        let fb: Vec<u64> = b.records.iter().map(|r| r.objective.to_bits()).collect();
        assert_eq!(fa, fb, "{method}");
        assert_eq!(a.status, b.status);
    }
}

#[test]
fn steihaug_steps_stay_inside_the_radius() {
    let mut r = rng(7);
    for case in 0..100 {
        let n = r.random_range(2..12);
        let m = DMatrix::from_fn(n, n, |_, _| r.sample::<f64, _>(StandardNormal));
        // alternate definite and indefinite models
        let h = if case % 2 == 0 { &m * m.transpose() } else { &m + m.transpose() };
        let g = random_vector(n, &mut r);
        let radius = 10f64.powf(r.random_range(-3.0..1.0));
        let s = steihaug(|v| &h * v, &g, radius, 100, 1e-10);
        assert!(s.step.norm() <= radius + 1e-12, "case {case}: {} > {radius}", s.step.norm());
    }
}

#[test]
fn levenberg_marquardt_step_turns_to_steepest_descent() {
    let cfg = OptimizerConfig::new(Method::LmQ);
    for (i, t) in [tiny_btd(), glro_template(&[4, 3, 3], 2, 2, 2), gtld_template(&[4, 3, 3], 2, &[2, 2], 2)]
        .into_iter()
        .enumerate()
    {
        for seed in 0..5 {
            let s = random_state(&t, 100 * i as u64 + seed);
            let step = lm_step(&s, 1e8, &cfg);
            let g = s.gradient();
            let cos = -step.dot(&g) / (step.norm() * g.norm());
            assert!(cos >= 0.999, "template {i} seed {seed}: cosine {cos}");
        }
    }
}

#[test]
fn cg_directions_are_conjugate_under_exact_line_search() {
    let mut r = rng(8);
    let n = 8;
    let m = DMatrix::from_fn(n, n, |_, _| r.sample::<f64, _>(StandardNormal));
    let a = &m * m.transpose() + DMatrix::identity(n, n);
    let b = random_vector(n, &mut r);
    for method in [Method::CgFr, Method::CgPr, Method::CgHs, Method::CgDy] {
        let mut x = DVector::zeros(n);
        let mut g = &a * &x - &b;
        let mut d = -&g;
        let mut dirs = vec![d.clone()];
        for _ in 1..n - 2 {
            let alpha = -g.dot(&d) / d.dot(&(&a * &d));
            x += &d * alpha;
            let g_new = &a * &x - &b;
            d = -&g_new + &d * cg_beta(method, &g_new, &g, &d);
            g = g_new;
            dirs.push(d.clone());
        }
        for i in 0..dirs.len() {
            for j in 0..i {
                let ai = dirs[i].dot(&(&a * &dirs[i])).sqrt();
                let aj = dirs[j].dot(&(&a * &dirs[j])).sqrt();
                let c = dirs[i].dot(&(&a * &dirs[j])).abs() / (ai * aj);
                assert!(c <= 1e-6, "{method}: directions {i},{j} cosine {c}");
            }
        }
    }
}

#[test]
fn trust_region_dogleg_leads_second_order_methods() {
    let mut cfg = ExperimentConfig::unconstrained_benchmark();
    cfg.runs = 10;
    // medians of exactly converged runs differ only by rounding
    let floor = 1e-15;
    let med = |m: Method| {
        let mut f: Vec<f64> = (0..cfg.runs as u64)
            .map(|run| solve(benchmark_problem(&cfg, run), m, 100).final_objective())
            .collect();
        median(&mut f)
    };
    let tr = med(Method::TrDl);
    for m in [Method::Gn, Method::LmQ, Method::LmN, Method::ScgQn, Method::ScgFn] {
        let other = med(m);
        assert!(tr <= other.max(floor), "TR_DL {tr} vs {m} {other}");
    }
}
