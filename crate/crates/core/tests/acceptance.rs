//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion.
//!
//! Criteria listed in `KNOWN_FAILURES` do not meet their target with the
//! reference tuning; they are still run at full tolerance and reported as
//! `FAIL`. The process exits non-zero if any other criterion fails, or if a
//! known failure starts passing (so the list cannot go stale).

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use repmtl::losses::{loss_grad, loss_value, restricted_fit, single_task_fit, ModelFamily, TaskData};
use repmtl::mtl::{fit_step1, fit_step2, prox_l2, recommended_gamma, MtlConfig};
use repmtl::simbench::{
    benchmark_h_grid, generate, run_grid, run_replications, HarnessSettings, Method, ResultTable,
    SimSpec, Subset,
};
use repmtl::stiefel::{
    orthonormality_error, procrustes_align, projector_distance_frobenius,
    projector_distance_spectral, projector_distance_spectral_lowrank, qr_retract,
    random_orthobasis, tangent_project, OrthoBasis,
};
use repmtl::tl::rl_tl;

const SEED: u64 = 2024;
const REPS: usize = 50;
const KNOWN_FAILURES: &[u32] = &[1, 5];

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mean(table: &ResultTable, method: Method, h: f64, subset: Subset) -> f64 {
    table.cell(method, h, subset).map_or(f64::NAN, |c| c.mean)
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn linear_task(rng: &mut ChaCha8Rng, n: usize, beta: &DVector<f64>, sd: f64) -> TaskData {
    let x = gaussian(rng, n, beta.len());
    let noise = DVector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
    let y = &x * beta + noise;
    TaskData::new(x, y).unwrap()
}

fn family_task(rng: &mut ChaCha8Rng, family: &ModelFamily, n: usize, beta: &DVector<f64>) -> TaskData {
    let x = gaussian(rng, n, beta.len());
    let eta = &x * beta;
    let y = match family {
        ModelFamily::Linear => eta.map(|u| u + 0.5 * rng.sample::<f64, _>(StandardNormal)),
        ModelFamily::Glm(_) => eta.map(|u| {
            let prob = 1.0 / (1.0 + (-u).exp());
            f64::from(u8::from(rng.random::<f64>() < prob))
        }),
        ModelFamily::Nonlinear(g) => eta.map(|u| g.g(u) + 0.3 * rng.sample::<f64, _>(StandardNormal)),
    };
    TaskData::new(x, y).unwrap()
}

/// Derivative-free simplex search.
fn nelder_mead(f: &dyn Fn(&DVector<f64>) -> f64, start: &DVector<f64>, scale: f64) -> DVector<f64> {
    let d = start.len();
    let mut pts: Vec<DVector<f64>> = vec![start.clone()];
    for i in 0..d {
        let mut v = start.clone();
        v[i] += scale;
        pts.push(v);
    }
    let mut vals: Vec<f64> = pts.iter().map(f).collect();
    for _ in 0..20_000 {
        let mut idx: Vec<usize> = (0..=d).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = idx.iter().map(|&i| pts[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        if vals[d] - vals[0] < 1e-15 && (&pts[d] - &pts[0]).norm() < 1e-12 {
            break;
        }
        let centroid = pts[..d].iter().fold(DVector::zeros(d), |acc, v| acc + v) / d as f64;
        let reflect = &centroid + (&centroid - &pts[d]);
        let fr = f(&reflect);
        if fr < vals[0] {
            let expand = &centroid + 2.0 * (&centroid - &pts[d]);
            let fe = f(&expand);
            if fe < fr {
                pts[d] = expand;
                vals[d] = fe;
            } else {
                pts[d] = reflect;
                vals[d] = fr;
            }
        } else if fr < vals[d - 1] {
            pts[d] = reflect;
            vals[d] = fr;
        } else {
            let contract = &centroid + 0.5 * (&pts[d] - &centroid);
            let fc = f(&contract);
            if fc < vals[d] {
                pts[d] = contract;
                vals[d] = fc;
            } else {
                for i in 1..=d {
                    pts[i] = &pts[0] + 0.5 * (&pts[i] - &pts[0]);
                    vals[i] = f(&pts[i]);
                }
            }
        }
    }
    let best = (0..=d).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    pts[best].clone()
}

fn golden_section(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - phi * (hi - lo);
    let mut b = lo + phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > 1e-12 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

fn criteria_grid(table: &ResultTable) -> [Outcome; 4] {
    let single0 = mean(table, Method::SingleTask, 0.0, Subset::Inliers);
    let oracle0 = mean(table, Method::RlMtlOracle, 0.0, Subset::Inliers);
    let ratio = oracle0 / single0;
    let c1 = check(
        ratio <= 0.85,
        format!("h=0 oracle {oracle0:.4} / single {single0:.4} = {ratio:.4} (target <= 0.85)"),
    );

    let mut worst = (0.0, f64::NEG_INFINITY);
    for h in benchmark_h_grid() {
        let r = mean(table, Method::RlMtlOracle, h, Subset::Inliers)
            / mean(table, Method::SingleTask, h, Subset::Inliers);
        if r > worst.1 || r.is_nan() {
            worst = (h, r);
        }
    }
    let c2 = check(
        worst.1 <= 1.15,
        format!("largest oracle/single ratio {:.4} at h={:.1} (target <= 1.15)", worst.1, worst.0),
    );

    let naive = mean(table, Method::RlMtlNaive, 0.8, Subset::Inliers);
    let single = mean(table, Method::SingleTask, 0.8, Subset::Inliers);
    let c3 = check(naive > single, format!("h=0.8 naive {naive:.4} vs single {single:.4}"));

    let mut parts = Vec::new();
    let mut ok = true;
    for h in [0.0, 0.1] {
        let hits = table
            .diagnostics
            .iter()
            .filter(|d| d.h == h && d.adaptive_r == Some(3))
            .count();
        let total = table.diagnostics.iter().filter(|d| d.h == h).count();
        ok &= total > 0 && hits as f64 >= 0.9 * total as f64;
        parts.push(format!("h={h}: r_hat=3 in {hits}/{total}"));
    }
    let c5 = check(ok, format!("{} (target >= 90%)", parts.join(", ")));
    [c1, c2, c3, c5]
}

fn criterion4() -> Outcome {
    let spec = SimSpec::benchmark_with_outlier(SEED);
    let methods = [Method::RlMtlOracle, Method::RlMtlNaive, Method::SingleTask];
    let table = run_replications(&spec, &methods, REPS, &HarnessSettings::default()).map_err(|e| e.to_string())?;
    let oracle = mean(&table, Method::RlMtlOracle, 0.0, Subset::Inliers);
    let naive = mean(&table, Method::RlMtlNaive, 0.0, Subset::Inliers);
    let single = mean(&table, Method::SingleTask, 0.0, Subset::Inliers);
    check(
        oracle < single && naive > single,
        format!("inliers at h=0: oracle {oracle:.4} < single {single:.4} < naive {naive:.4}"),
    )
}

fn criterion6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_gap: f64 = 0.0;
    for k in 0..20 {
        let p = 2 + k % 4;
        let n = 30;
        let beta = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let data = linear_task(&mut rng, n, &beta, 1.0);
        let anchor = &beta + DVector::from_fn(p, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
        let gamma = rng.random_range(0.2..4.0);
        let objective = |b: &DVector<f64>| {
            let resid = data.y() - data.x() * b;
            resid.norm_squared() / n as f64 + gamma / (n as f64).sqrt() * (b - &anchor).norm()
        };
        let ours = fit_step2(&data, &ModelFamily::Linear, gamma, &anchor).map_err(|e| e.to_string())?;
        let ols = data.x().clone().svd(true, true).solve(data.y(), 1e-12).unwrap();
        let mut best = f64::INFINITY;
        for start in [&anchor, &ols] {
            let mut x = nelder_mead(&objective, start, 0.5);
            for _ in 0..5 {
                x = nelder_mead(&objective, &x, 1e-3);
            }
            best = best.min(objective(&x));
        }
        worst_gap = worst_gap.max((objective(&ours) - best).abs());
    }
    let step2_ok = worst_gap <= 1e-5;

    let families = [ModelFamily::Linear, ModelFamily::logistic(), ModelFamily::tanh_link(0.5)];
    let mut worst_theta: f64 = 0.0;
    for (i, family) in families.iter().enumerate() {
        for _ in 0..5 {
            let p = 6;
            let a = random_orthobasis(&mut rng, p, 1).unwrap();
            let beta = a.lift(&DVector::from_element(1, 0.5 + i as f64 * 0.3));
            let data = family_task(&mut rng, family, 200, &beta);
            let ours = restricted_fit(family, &data, &a).map_err(|e| e.to_string())?;
            let f = |t: f64| loss_value(family, &data, &a.lift(&DVector::from_element(1, t))).unwrap();
            let gs = golden_section(&f, -20.0, 20.0);
            worst_theta = worst_theta.max((ours[0] - gs).abs());
        }
    }
    let restricted_ok = worst_theta <= 1e-6;

    let mut prox_ok = true;
    for _ in 0..50 {
        let v = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let tau: f64 = rng.random_range(0.0..3.0);
        let norm = v.norm();
        let expected = if norm <= tau { DVector::zeros(4) } else { &v * (1.0 - tau / norm) };
        prox_ok &= prox_l2(&v, tau) == expected;
    }
    prox_ok &= prox_l2(&DVector::from_vec(vec![3.0, 4.0]), 2.5) == DVector::from_vec(vec![1.5, 2.0]);
    prox_ok &= prox_l2(&DVector::from_vec(vec![3.0, 4.0]), 5.0) == DVector::zeros(2);

    check(
        step2_ok && restricted_ok && prox_ok,
        format!(
            "step2 brute-force gap {worst_gap:.2e} (<= 1e-5), restricted vs golden {worst_theta:.2e} (<= 1e-6), prox exact {prox_ok}"
        ),
    )
}

fn criterion7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let families = [ModelFamily::Linear, ModelFamily::logistic(), ModelFamily::tanh_link(0.5)];
    let mut worst_fd: f64 = 0.0;
    for family in &families {
        for _ in 0..5 {
            let p = 5;
            let beta = DVector::from_fn(p, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
            let data = family_task(&mut rng, family, 80, &beta);
            let at = DVector::from_fn(p, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
            let grad = loss_grad(family, &data, &at).map_err(|e| e.to_string())?;
            let fd = DVector::from_fn(p, |i, _| {
                let step = 1e-6;
                let mut up = at.clone();
                let mut down = at.clone();
                up[i] += step;
                down[i] -= step;
                (loss_value(family, &data, &up).unwrap() - loss_value(family, &data, &down).unwrap()) / (2.0 * step)
            });
            worst_fd = worst_fd.max((&grad - &fd).norm() / grad.norm().max(1e-12));
        }
    }

    let mut worst_ortho: f64 = 0.0;
    let mut a = random_orthobasis(&mut rng, 12, 4).unwrap();
    for _ in 0..200 {
        let g = gaussian(&mut rng, 12, 4);
        let dir = tangent_project(&a, &g);
        a = qr_retract(&a, &dir, rng.random_range(0.01..2.0)).map_err(|e| e.to_string())?;
        worst_ortho = worst_ortho.max(orthonormality_error(a.matrix()));
    }

    let mut identities_ok = true;
    for k in 0..100 {
        let p = 4 + k % 9;
        let r = 1 + k % p.min(4);
        let a = random_orthobasis(&mut rng, p, r).unwrap();
        let b = random_orthobasis(&mut rng, p, r).unwrap();
        let d2 = projector_distance_spectral(&a, &b).unwrap();
        let d2_back = projector_distance_spectral(&b, &a).unwrap();
        let d2_low = projector_distance_spectral_lowrank(&a, &b).unwrap();
        let df = projector_distance_frobenius(&a, &b).unwrap();
        let q = random_orthobasis(&mut rng, r, r).unwrap().into_matrix();
        let aq = OrthoBasis::new(a.matrix() * &q).unwrap();
        let d2_rot = projector_distance_spectral(&aq, &b).unwrap();
        let proc = procrustes_align(&a, &b).unwrap();
        let aligned_spectral = (a.matrix() - b.matrix() * &proc.rotation).singular_values().max();
        let tol = 1e-10;
        identities_ok &= (d2 - d2_back).abs() < tol
            && (d2 - d2_low).abs() < tol
            && (d2 - d2_rot).abs() < tol
            && projector_distance_spectral(&a, &a).unwrap() < tol
            && d2 <= df + tol
            && df <= (2.0 * r as f64).sqrt() * d2 + tol
            && d2 <= aligned_spectral + tol
            && df / 2f64.sqrt() <= proc.residual + tol
            && proc.residual <= df + tol;
    }

    let mut monotone = true;
    let mut worst_snap: f64 = 0.0;
    for (i, h) in [0.0, 0.3, 0.6].into_iter().enumerate() {
        let (data, _) = generate(&SimSpec::benchmark(70 + i as u64).with_h(h)).map_err(|e| e.to_string())?;
        let cfg = MtlConfig::recommended(3, 20, data.len());
        let fit = fit_step1(&data, &ModelFamily::Linear, &cfg).map_err(|e| e.to_string())?;
        monotone &= fit.objective_trace.windows(2).all(|w| w[1] <= w[0]);

        let max_loss = data
            .iter()
            .map(|d| d.y().norm_squared() / d.n() as f64)
            .fold(0.0, f64::max);
        let mut big = cfg.clone();
        big.lambda = 1e6 * (data[0].n() as f64).sqrt() * max_loss;
        let fit = fit_step1(&data, &ModelFamily::Linear, &big).map_err(|e| e.to_string())?;
        for b in &fit.bases {
            worst_snap = worst_snap.max(projector_distance_spectral(b, &fit.center).unwrap());
        }
    }

    check(
        worst_fd <= 1e-5 && worst_ortho <= 1e-10 && identities_ok && monotone && worst_snap <= 1e-8,
        format!(
            "fd rel err {worst_fd:.2e} (<= 1e-5), retraction orthonormality {worst_ortho:.2e} (<= 1e-10), distance identities {identities_ok}, trace monotone {monotone}, snap distance {worst_snap:.2e} (<= 1e-8)"
        ),
    )
}

fn criterion8() -> Outcome {
    let single = [Method::SingleTask];
    let settings = HarnessSettings::default();
    let small = SimSpec::benchmark(SEED);
    let large = SimSpec { n: 200, ..SimSpec::benchmark(SEED) };
    let e_small = mean(
        &run_replications(&small, &single, REPS, &settings).map_err(|e| e.to_string())?,
        Method::SingleTask,
        0.0,
        Subset::Inliers,
    );
    let e_large = mean(
        &run_replications(&large, &single, REPS, &settings).map_err(|e| e.to_string())?,
        Method::SingleTask,
        0.0,
        Subset::Inliers,
    );
    let ratio = e_small / e_large;
    let rel = ratio / 2f64.sqrt() - 1.0;
    check(
        rel.abs() <= 0.2,
        format!("error n=100 {e_small:.4}, n=200 {e_large:.4}, ratio {ratio:.4} vs sqrt(2) ({:+.1}%, within 20%)", 100.0 * rel),
    )
}

fn criterion9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let family = ModelFamily::Linear;
    let (p, r, tasks) = (20, 3, 6);
    let gamma = recommended_gamma(p, tasks);

    let mut few_shot: f64 = 0.0;
    for _ in 0..10 {
        let center = random_orthobasis(&mut rng, p, r).unwrap();
        let theta = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta = center.lift(&theta);
        let target = linear_task(&mut rng, 2 * r, &beta, 0.0);
        let fit = rl_tl(&target, &family, &center, gamma).map_err(|e| e.to_string())?;
        few_shot = few_shot.max((&fit.beta0 - &beta).amax());
    }

    let center = random_orthobasis(&mut rng, p, r).unwrap();
    let beta = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let target = linear_task(&mut rng, 60, &beta, 1.0);
    let zero = rl_tl(&target, &family, &center, 0.0).map_err(|e| e.to_string())?;
    let ols = single_task_fit(&family, &target).map_err(|e| e.to_string())?;
    let zero_gap = (&zero.beta0 - &ols).amax();
    let huge = rl_tl(&target, &family, &center, 1e8).map_err(|e| e.to_string())?;
    let huge_gap = (&huge.beta0 - &huge.step1_beta0).amax();

    let mut rotation_gap: f64 = 0.0;
    for _ in 0..10 {
        let q = random_orthobasis(&mut rng, r, r).unwrap().into_matrix();
        let rotated = OrthoBasis::new(center.matrix() * &q).unwrap();
        let base = rl_tl(&target, &family, &center, gamma).map_err(|e| e.to_string())?;
        let turned = rl_tl(&target, &family, &rotated, gamma).map_err(|e| e.to_string())?;
        rotation_gap = rotation_gap
            .max((&base.beta0 - &turned.beta0).amax())
            .max((&base.theta0 - &q * &turned.theta0).amax());
    }

    check(
        few_shot <= 1e-5 && zero_gap <= 1e-6 && huge_gap <= 1e-6 && rotation_gap <= 1e-8,
        format!(
            "few-shot n0=2r error {few_shot:.2e} (<= 1e-5), gamma=0 vs OLS {zero_gap:.2e}, gamma=1e8 vs anchor {huge_gap:.2e}, rotation gap {rotation_gap:.2e}"
        ),
    )
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let start = Instant::now();
    let grid = run_grid(
        &SimSpec::benchmark(SEED),
        &benchmark_h_grid(),
        &Method::ALL,
        REPS,
        &HarnessSettings::default(),
    );
    let grid_elapsed = start.elapsed();
    let [c1, c2, c3, c5] = match &grid {
        Ok(table) => criteria_grid(table),
        Err(e) => std::array::from_fn(|_| Err(format!("grid run failed: {e}"))),
    };
    let mut outcomes = vec![
        (1, c1.map(|d| format!("{d}, grid took {grid_elapsed:.1?}"))),
        (2, c2),
        (3, c3),
        (4, criterion4()),
    ];
    outcomes.push((5, c5));
    outcomes.push((6, criterion6()));
    outcomes.push((7, criterion7()));
    outcomes.push((8, criterion8()));
    outcomes.push((9, criterion9()));

    let mut unexpected = 0;
    for (id, outcome) in &outcomes {
        let known = KNOWN_FAILURES.contains(id);
        match outcome {
            Ok(detail) => {
                println!("PASS criterion {id}: {detail}");
                if known {
                    println!("  criterion {id} is listed as a known failure but passed");
                    unexpected += 1;
                }
            }
            Err(detail) => {
                let note = if known { " [known]" } else { "" };
                println!("FAIL criterion {id}: {detail}{note}");
                if !known {
                    unexpected += 1;
                }
            }
        }
    }
    println!("acceptance finished in {:.1?}", start.elapsed());
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
