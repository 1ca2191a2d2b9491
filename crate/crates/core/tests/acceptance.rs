//! One PASS/FAIL line per acceptance criterion. Run with
//! `cargo test -p gbtd --test acceptance -- --nocapture --test-threads=1`.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use common::labels::*;
use common::planted::*;
use common::*;
use gbtd::analysis::{
    adjusted_mutual_info, adjusted_rand, agglomerative, classify, contrast, dendrogram,
    fit_class_models, fit_group_model, fowlkes_mallows, pairwise_distance, principal_angle,
    stratified_kfold_split, ClassModelConfig, Linkage, Metric,
};
use gbtd::constraints::{
    bordered_solve_with, constraint_jacobian, constraint_values, separation_violation,
};
use gbtd::io::{load_labeled, median, synth_generate, ExperimentConfig, LabeledDataset};
use gbtd::{
    init_random, initialize, minimize, minimize_projected, project_model, simplex_box_project,
    BlockTermModel, DenseTensor, GroupFlavor, HessianMode, Method, ResidualState,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

const INIT_SALT: u64 = 0x696e_6974;

fn report(name: &str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn dense_operator(n: usize, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        m.set_column(i, &f(&e));
    }
    m
}

/// Final objectives of `runs` seeded benchmark problems solved by `method`.
fn benchmark(cfg: &ExperimentConfig, method: Method) -> Vec<(f64, f64)> {
    let template = cfg.template().unwrap();
    (0..cfg.runs as u64)
        .map(|run| {
            let seed = cfg.seed + run;
            let (target, _) = synth_generate(cfg, seed).unwrap();
            let start = initialize(&template, &target, seed ^ INIT_SALT, cfg.init);
            let mut opt = cfg.optimizer.clone();
            opt.method = method;
            opt.seed = seed;
            let (_, trace) = minimize(ResidualState::new(start, target).unwrap(), &opt).unwrap();
            (trace.final_objective(), trace.final_relative_residual())
        })
        .collect()
}

#[test]
fn exact_recovery_with_als() {
    let cfg = ExperimentConfig::unconstrained_benchmark();
    let clock = Instant::now();
    let results = benchmark(&cfg, Method::Als);
    let secs = clock.elapsed().as_secs_f64();
    let mut residuals: Vec<f64> = results.iter().map(|r| r.1).collect();
    let recovered = residuals.iter().filter(|&&r| r < 1e-6).count();
    let med = median(&mut residuals);
    let pass = results.len() == 50 && recovered * 10 >= 6 * 50 && med < 1e-4 && secs <= 300.0;
    report(
        "exact recovery (ALS, 50 runs, 500 sweeps)",
        pass,
        format!("{recovered}/50 below 1e-6, median {med:.3e}, {secs:.1} s"),
    );
}

fn random_group_template(flavor: GroupFlavor, r: &mut impl Rng) -> BlockTermModel {
    let n = r.random_range(2..=4);
    let dims = [r.random_range(2..=8), r.random_range(2..=8), n];
    let p = r.random_range(1..=2);
    let l_ind = r.random_range(1..=2);
    match flavor {
        GroupFlavor::Glro => glro_template(&dims, l_ind, r.random_range(1..=3), p),
        GroupFlavor::Gtld => {
            let tucker = [r.random_range(1..=dims[0]), r.random_range(1..=dims[1])];
            gtld_template(&dims, l_ind, &tucker, p)
        }
    }
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut r = rng(100);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for flavor in [GroupFlavor::Glro, GroupFlavor::Gtld] {
        for i in 0..20 {
            let t = random_group_template(flavor, &mut r);
            let s = random_state(&t, 1000 + i);
            worst = worst.max(rel_err(&s.gradient(), &central_fd_gradient(&s)));
            count += 1;
        }
    }
    report(
        "gradient vs central differences",
        count == 40 && worst <= 1e-5,
        format!("{count} instances, worst relative error {worst:.2e}"),
    );
}

fn tiny_templates() -> Vec<BlockTermModel> {
    vec![
        tiny_btd(),
        BlockTermModel::new(&[4, 3, 2, 3], 1, &[vec![2, 1, 2, 2]], &[2, 1]).unwrap(),
        BlockTermModel::new(&[3, 4, 3], 3, &[], &[1, 2]).unwrap(),
        BlockTermModel::new(&[3, 3, 3], 0, &[vec![2, 2, 2], vec![1, 2, 1]], &[]).unwrap(),
        glro_template(&[4, 3, 3], 2, 2, 2),
        glro_template(&[3, 4, 3], 2, 1, 1),
        glro_template(&[3, 3, 2], 1, 2, 2),
        gtld_template(&[4, 3, 3], 2, &[2, 2], 2),
        gtld_template(&[3, 3, 2], 1, &[2, 2], 1),
        gtld_template(&[4, 2, 3], 1, &[3, 2], 2),
    ]
}

#[test]
fn hessian_operators_match_dense_and_difference_oracles() {
    let mut r = rng(200);
    let (mut gn_err, mut fd_err, mut zero_err, mut sym_err): (f64, f64, f64, f64) =
        (0.0, 0.0, 0.0, 0.0);
    for (i, t) in tiny_templates().into_iter().enumerate() {
        let s = random_state(&t, 2000 + i as u64);
        let n = s.n_params();
        let v = random_vector(n, &mut r);
        let j = dense_jacobian(s.model());
        let jtjv = j.transpose() * (&j * &v);
        gn_err = gn_err.max(rel_err(&s.hessian(HessianMode::GaussNewton).apply(&v), &jtjv));

        let full = s.hessian(HessianMode::Full);
        fd_err = fd_err.max(rel_err(&full.apply(&v), &fd_hessian_vector(&s, &v, 1e-5)));

        let h = dense_operator(n, |x| full.apply(x));
        sym_err = sym_err.max((&h - h.transpose()).norm() / h.norm().max(1.0));

        let truth = init_random(&t, 3000 + i as u64, 1.0);
        let target = truth.reconstruct();
        let exact = ResidualState::new(truth, target).unwrap();
        let gn = exact.hessian(HessianMode::GaussNewton).apply(&v);
        let fl = exact.hessian(HessianMode::Full).apply(&v);
        zero_err = zero_err.max((&gn - &fl).norm() / gn.norm().max(1e-300));
    }
    report(
        "Gauss-Newton apply vs dense J^T J v",
        gn_err <= 1e-10,
        format!("worst relative error {gn_err:.2e}"),
    );
    report(
        "full Hessian apply vs differences of the gradient",
        fd_err <= 1e-4,
        format!("worst relative error {fd_err:.2e}"),
    );
    report(
        "full Hessian equals Gauss-Newton at zero residual",
        zero_err <= 1e-10,
        format!("worst relative difference {zero_err:.2e}"),
    );
    report(
        "Hessian operator symmetry",
        sym_err <= 1e-8,
        format!("worst relative asymmetry {sym_err:.2e}"),
    );
}

/// Nearest feasible point on a grid of spacing `h`, by exhaustive search.
fn grid_best(y: &[f64], p_cum: f64, p_min: f64, h: f64) -> f64 {
    fn rec(i: usize, left: usize, cur: &mut Vec<f64>, y: &[f64], p_min: f64, h: f64, best: &mut f64) {
        if i == y.len() - 1 {
            cur.push(p_min + left as f64 * h);
            let d: f64 = cur.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum();
            *best = best.min(d);
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(p_min + k as f64 * h);
            rec(i + 1, left - k, cur, y, p_min, h, best);
            cur.pop();
        }
    }
    let steps = ((p_cum - y.len() as f64 * p_min) / h).round() as usize;
    let mut best = f64::INFINITY;
    rec(0, steps, &mut Vec::new(), y, p_min, h, &mut best);
    best.sqrt()
}

fn dense_kkt(h: &DMatrix<f64>, border: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (h.nrows(), border.ncols());
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(h);
    k.view_mut((0, n), (n, m)).copy_from(border);
    k.view_mut((n, 0), (m, n)).copy_from(&border.transpose());
    k
}

#[test]
fn constraint_machinery() {
    // projected iterations stay feasible
    let (mut worst_sep, mut worst_sum, mut calls): (f64, f64, usize) = (0.0, 0.0, 0);
    for (k, t) in [
        glro_template(&[6, 6, 3], 2, 2, 2),
        gtld_template(&[6, 5, 3], 2, &[3, 3], 2),
    ]
    .into_iter()
    .enumerate()
    {
        let spec = t.group().unwrap().clone();
        for method in [Method::Als, Method::Gd, Method::CgPr, Method::Gn, Method::LmQ, Method::TrDl] {
            let truth = project_model(&init_random(&t, 40 + k as u64, 1.0), &spec).unwrap();
            let start = project_model(&init_random(&t, 140 + k as u64, 1.0), &spec).unwrap();
            let s = ResidualState::new(start, truth.reconstruct()).unwrap();
            let mut cfg = gbtd::OptimizerConfig::new(method);
            cfg.max_iters = 20;
            let mut proj = |m: &mut BlockTermModel| {
                *m = project_model(m, &spec).unwrap();
                calls += 1;
                worst_sep = worst_sep.max(separation_violation(m));
                let p = m.group_weights().unwrap();
                worst_sum = worst_sum.max((p.sum() - spec.p_cum).abs() / spec.p_cum);
            };
            minimize_projected(s, &cfg, &mut proj).unwrap();
        }
    }
    report(
        "projected updates stay feasible",
        calls > 12 && worst_sep <= 1e-10 && worst_sum <= 1e-12,
        format!("{calls} projections, max |U^T C| {worst_sep:.2e}, max relative sum error {worst_sum:.2e}"),
    );

    // simplex-box projection against a 1e-3 grid
    let mut r = rng(300);
    let mut margin = f64::INFINITY;
    let mut cases = 0;
    for n in 2..=4 {
        for _ in 0..4 {
            let (p_cum, p_min) = if n == 4 { (0.3, 0.02) } else { (1.0, 0.05) };
            let y: Vec<f64> = (0..n).map(|_| r.random_range(-0.5..1.0)).collect();
            let yv = DVector::from_vec(y.clone());
            let p = simplex_box_project(&yv, p_cum, p_min).unwrap();
            let feasible = (p.sum() - p_cum).abs() <= 1e-12 && p.min() >= p_min - 1e-12;
            let gap = grid_best(&y, p_cum, p_min, 1e-3) - (&p - &yv).norm();
            margin = margin.min(if feasible { gap } else { f64::NEG_INFINITY });
            cases += 1;
        }
    }
    report(
        "simplex-box projection vs grid oracle",
        margin >= -1e-12,
        format!("{cases} cases, min (grid - ours) distance {margin:.2e}"),
    );

    // bordered solve against a dense KKT solve
    let mut worst: f64 = 0.0;
    for (i, t) in tiny_templates().into_iter().filter(|t| t.group().is_some()).enumerate() {
        let s = random_state(&t, 310 + i as u64);
        let spec = t.group().unwrap().clone();
        let n = s.n_params();
        let h = dense_operator(n, |v| s.gauss_newton_apply(v)) + DMatrix::identity(n, n);
        let m_sep = spec.modes_of_interest.len();
        let live: Vec<usize> = (0..m_sep).chain([m_sep + 1, m_sep + 2]).collect();
        let border = constraint_jacobian(s.model(), &spec).select_columns(&live);
        let c = constraint_values(s.model(), &spec);
        let rhs_c = DVector::from_iterator(live.len(), live.iter().map(|&j| -c[j]));
        let rhs_x = -s.gradient();
        let mut rhs = DVector::zeros(n + live.len());
        rhs.rows_mut(0, n).copy_from(&rhs_x);
        rhs.rows_mut(n, live.len()).copy_from(&rhs_c);
        let direct = dense_kkt(&h, &border).lu().solve(&rhs).unwrap();
        let sol = bordered_solve_with(|v| &h * v, &border, &rhs_x, &rhs_c).unwrap();
        let mut ours = DVector::zeros(n + live.len());
        ours.rows_mut(0, n).copy_from(&sol.dx);
        ours.rows_mut(n, live.len()).copy_from(&sol.dtau);
        worst = worst.max(rel_err(&ours, &direct));
    }
    report(
        "bordered solve vs dense KKT solve",
        worst <= 1e-8,
        format!("worst relative error {worst:.2e}"),
    );
}

#[test]
fn trust_region_dogleg_leads_first_order_methods() {
    let cfg = ExperimentConfig::unconstrained_benchmark();
    let med = |m: Method| {
        let mut f: Vec<f64> = benchmark(&cfg, m).iter().map(|r| r.0).collect();
        median(&mut f)
    };
    let tr = med(Method::TrDl);
    let mut detail = format!("TR_DL {tr:.3e}");
    let mut pass = tr.is_finite();
    for m in [Method::Gd, Method::CgFr, Method::CgPr, Method::CgHs, Method::CgDy] {
        let other = med(m);
        pass &= tr <= other;
        detail.push_str(&format!(", {m} {other:.3e}"));
    }
    report("TR_DL median objective <= GD and CG variants", pass, detail);
}

fn planted_classes(
    r: &mut rand_chacha::ChaCha8Rng,
) -> (Vec<DMatrix<f64>>, Vec<DenseTensor>, Vec<usize>) {
    let dims = [12, 6, 3];
    let q = random_orthonormal(12, 4, r);
    let bases = vec![q.columns(0, 2).into_owned(), q.columns(2, 2).into_owned()];
    let mut train = Vec::new();
    let mut labels = Vec::new();
    for (c, basis) in bases.iter().enumerate() {
        for _ in 0..4 {
            train.push(planted_instance(basis, &dims, 10.0, r));
            labels.push(c);
        }
    }
    (bases, train, labels)
}

/// Instances sharing a scaled rank-2 pattern plus a fixed per-class one.
fn planted_clusters(r: &mut rand_chacha::ChaCha8Rng) -> (Vec<DenseTensor>, Vec<usize>) {
    let g = |m: usize, n: usize, r: &mut rand_chacha::ChaCha8Rng| {
        DMatrix::from_fn(m, n, |_, _| r.sample::<f64, _>(StandardNormal))
    };
    let shared = g(12, 2, r) * g(2, 8, r);
    let patterns: Vec<DMatrix<f64>> = (0..3).map(|_| g(12, 8, r) * 0.3).collect();
    let n = 18;
    let mut objects = Vec::new();
    let mut truth = Vec::new();
    for i in 0..n {
        let c = i % 3;
        let w = 1.0 + 4.0 * i as f64 / (n - 1) as f64;
        let x = &shared * w + &patterns[c] + g(12, 8, r) * 0.01;
        objects.push(DenseTensor::new(vec![12, 8], x.as_slice().to_vec()).unwrap());
        truth.push(c);
    }
    (objects, truth)
}

#[test]
fn pipeline_oracles() {
    let mut r = rng(400);
    let perms: Vec<Vec<Vec<usize>>> = (0..=8).map(permutations).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = r.random_range(2..=8);
        let (ka, kb) = (r.random_range(1..=n), r.random_range(1..=n));
        let a: Vec<usize> = (0..n).map(|_| r.random_range(0..ka)).collect();
        let b: Vec<usize> = (0..n).map(|_| r.random_range(0..kb)).collect();
        worst = worst
            .max((adjusted_rand(&a, &b).unwrap() - ari_oracle(&a, &b)).abs())
            .max((fowlkes_mallows(&a, &b).unwrap() - fm_oracle(&a, &b)).abs())
            .max((adjusted_mutual_info(&a, &b).unwrap() - ami_oracle(&a, &b, &perms[n])).abs());
    }
    report(
        "ARI/AMI/FM vs enumeration (200 labelings)",
        worst <= 1e-10,
        format!("worst absolute difference {worst:.2e}"),
    );

    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let q = random_orthonormal(9, 4, &mut r);
        let theta = 0.05 + 1.4 * i as f64 / 19.0;
        let z = q.columns(0, 2).into_owned();
        let mut s = DMatrix::zeros(9, 2);
        s.set_column(0, &q.column(2));
        s.set_column(1, &(q.column(0) * theta.cos() + q.column(3) * theta.sin()));
        worst = worst.max((principal_angle(&z, &s).unwrap() - theta).abs());
    }
    report(
        "principal angle vs planted angles",
        worst <= 1e-10,
        format!("worst error {worst:.2e}"),
    );

    let d = DMatrix::from_row_slice(
        4,
        4,
        &[0.0, 1.0, 2.0, 4.4, 1.0, 0.0, 6.0, 4.4, 2.0, 6.0, 0.0, 5.0, 4.4, 4.4, 5.0, 0.0],
    );
    let trace = |l: Linkage| -> Vec<(usize, usize, f64)> {
        dendrogram(&d, l).unwrap().merges.iter().map(|m| (m.a, m.b, m.height)).collect()
    };
    let avg = trace(Linkage::Average);
    let complete = trace(Linkage::Complete);
    let same = |got: &[(usize, usize, f64)], want: &[(usize, usize, f64)]| {
        got.len() == want.len()
            && got.iter().zip(want).all(|(g, w)| g.0 == w.0 && g.1 == w.1 && (g.2 - w.2).abs() < 1e-12)
    };
    let pass = same(&avg, &[(0, 1, 1.0), (2, 4, 4.0), (3, 5, 4.6)])
        && same(&complete, &[(0, 1, 1.0), (3, 4, 4.4), (2, 5, 6.0)])
        && agglomerative(&d, Linkage::Average, 2).unwrap() == [0, 0, 0, 1]
        && agglomerative(&d, Linkage::Complete, 2).unwrap() == [0, 0, 1, 0];
    report(
        "dendrograms vs hand traces (4-point fixture)",
        pass,
        format!("average {avg:?}, complete {complete:?}"),
    );

    let (bases, train, labels) = planted_classes(&mut r);
    let mut detail = Vec::new();
    let mut pass = true;
    for flavor in [GroupFlavor::Glro, GroupFlavor::Gtld] {
        let models = fit_class_models(&train, &labels, &ClassModelConfig::new(flavor, 2, 1, 0)).unwrap();
        let mut correct = 0;
        for draw in 0..100 {
            let c = draw % 2;
            let y = planted_instance(&bases[c], &[12, 6, 3], 10.0, &mut r);
            correct += (classify(&y, &models, 0).unwrap() == c) as usize;
        }
        pass &= correct == 100;
        detail.push(format!("{flavor:?} {correct}/100"));
    }
    report("planted 2-class classification accuracy 1.0", pass, detail.join(", "));

    let (objects, truth) = planted_clusters(&mut r);
    let mut detail = Vec::new();
    let mut pass = true;
    for flavor in [GroupFlavor::Glro, GroupFlavor::Gtld] {
        let (model, data, _) = fit_group_model(&objects, &ClassModelConfig::new(flavor, 2, 2, 0)).unwrap();
        let features = contrast(&data, &model).unwrap();
        let dist = pairwise_distance(&features, Metric::Canberra).unwrap();
        let ari = adjusted_rand(&truth, &agglomerative(&dist, Linkage::Complete, 3).unwrap()).unwrap();
        pass &= ari == 1.0;
        detail.push(format!("{flavor:?} ARI {ari}"));
    }
    report("planted clusters ARI 1.0", pass, detail.join(", "));
}

fn cv_accuracy(ds: &LabeledDataset, cfg: &ClassModelConfig, folds: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for f in 0..k {
        let train: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] == f).collect();
        let x: Vec<DenseTensor> = train.iter().map(|&i| ds.instances[i].clone()).collect();
        let y: Vec<usize> = train.iter().map(|&i| ds.labels[i]).collect();
        let models = fit_class_models(&x, &y, cfg).unwrap();
        let correct = test
            .iter()
            .filter(|&&i| classify(&ds.instances[i], &models, cfg.mode).unwrap() == ds.labels[i])
            .count();
        total += correct as f64 / test.len() as f64;
    }
    total / k as f64
}

#[test]
fn eth80_approximate_reproduction() {
    let Some(dir) = std::env::var_os("GBTD_ETH80_DIR").map(PathBuf::from) else {
        println!("SKIP ETH-80 reproduction: GBTD_ETH80_DIR is not set");
        return;
    };
    let ds = load_labeled(dir.join("labels.json")).unwrap();
    let pixel_mode = 1;
    let k = 4;
    let folds = stratified_kfold_split(&ds.labels, k, 0).unwrap();
    let gtld = cv_accuracy(&ds, &ClassModelConfig::new(GroupFlavor::Gtld, 10, 1, pixel_mode), &folds, k);
    let glro = cv_accuracy(&ds, &ClassModelConfig::new(GroupFlavor::Glro, 9, 1, pixel_mode), &folds, k);
    report(
        "ETH-80 classification accuracy",
        gtld >= 0.88 && glro >= 0.86,
        format!("GTLD {gtld:.3} (>= 0.88), GLRO {glro:.3} (>= 0.86)"),
    );

    let cfg = ClassModelConfig::new(GroupFlavor::Gtld, 10, 1, pixel_mode);
    let n_classes = ds.class_names.len();
    let mut total = 0.0;
    for f in 0..k {
        let subset: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] != f).collect();
        let objects: Vec<DenseTensor> = subset.iter().map(|&i| ds.instances[i].clone()).collect();
        let truth: Vec<usize> = subset.iter().map(|&i| ds.labels[i]).collect();
        let (model, data, _) = fit_group_model(&objects, &cfg).unwrap();
        let features = contrast(&data, &model).unwrap();
        let d = pairwise_distance(&features, Metric::Canberra).unwrap();
        total += adjusted_rand(&truth, &agglomerative(&d, Linkage::Complete, n_classes).unwrap()).unwrap();
    }
    let ari = total / k as f64;
    report(
        "ETH-80 clustering ARI (canberra, complete)",
        ari >= 0.45,
        format!("GTLD {ari:.3} (>= 0.45)"),
    );
}
