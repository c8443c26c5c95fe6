//! Acceptance criteria. Each test prints one `[PASS]` or `[FAIL]` line and
//! then asserts. Criteria run one at a time so wall-clock budgets are
//! measured without interference.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use actlab_core::activation::{catalog_all, catalog_get, ActivationSpec};
use actlab_core::analysis::{
    construct_rank1_weights, construct_relu_staircase, count_invariant_permutations,
    feature_rank, polynomial_rank_bound, random_rank, solve_head,
};
use actlab_core::linalg::Matrix;
use actlab_core::network::{init_network, LayerSpec, Network};
use actlab_core::rng;
use actlab_core::tasks::{
    det3_target, nine_dim_candidates, simplex_volume_25, solid_angle, triangle_area, Sampler,
    TaskName, TaskSpec, Wave,
};
use actlab_harness::config::ExperimentConfig;
use actlab_harness::report::{to_json, trials_csv};
use actlab_harness::runner::{run_comparison, run_layer_sweep, ComparisonReport};
use cpu_time::ProcessTime;
use rand::Rng;
use rand_distr::StandardNormal;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn verdict(id: u32, name: &str, pass: bool, elapsed: Duration, detail: &str) {
    let tag = if pass { "[PASS]" } else { "[FAIL]" };
    // Written to the raw handle so the line shows up without --nocapture.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{tag} {id:>2} {name}: {detail} ({:.1}s)", elapsed.as_secs_f64());
    let _ = out.flush();
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn gaussian(rows: usize, cols: usize, r: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
}

// ---------------------------------------------------------------- 1

fn deep_net(first: ActivationSpec, seed: u64) -> Network {
    let mut specs = vec![LayerSpec::dense(9, 100, first).without_bias()];
    for _ in 0..3 {
        specs.push(LayerSpec::dense(100, 100, ActivationSpec::relu()));
    }
    specs.push(LayerSpec::dense(100, 1, ActivationSpec::identity()));
    init_network(specs, seed).unwrap()
}

#[test]
fn c01_even_first_layer_symmetry() {
    let _g = serial();
    let t = Instant::now();
    let mut r = rng::stream(1, "acceptance-u", 0);
    let us: Vec<f64> = (0..4000).map(|_| r.sample(StandardNormal)).collect();
    // Rows (u, -u, 0) and (-u, u, 0).
    let build = |sign: f64| {
        Matrix::from_fn(1000, 9, |i, j| match j {
            0..4 => sign * us[4 * i + j],
            4..8 => -sign * us[4 * i + j - 4],
            _ => 0.0,
        })
    };
    let (a, b) = (build(1.0), build(-1.0));
    let gap = |net: &Network| -> Vec<f64> {
        let (fa, fb) = (net.predict(&a).unwrap(), net.predict(&b).unwrap());
        (0..1000).map(|i| (fa.get(i, 0) - fb.get(i, 0)).abs()).collect()
    };
    let seagull = gap(&deep_net(ActivationSpec::seagull(), 1));
    let relu = gap(&deep_net(ActivationSpec::relu(), 1));
    let worst = seagull.iter().cloned().fold(0.0, f64::max);
    let broken = relu.iter().filter(|&&g| g > 1e-6).count();
    let el = t.elapsed();
    verdict(
        1,
        "evenness and symmetry",
        worst <= 1e-12 && broken >= 990 && el.as_secs_f64() < 5.0,
        el,
        &format!("seagull max gap {worst:.2e}, relu gaps > 1e-6 on {broken}/1000"),
    );
}

// ---------------------------------------------------------------- 2

#[test]
fn c02_polynomial_rank_ceiling() {
    let _g = serial();
    let t = Instant::now();
    let mut ok = 0;
    let mut total = 0;
    let mut worst = String::new();
    for p in 1..=3u32 {
        for d in 2..=3usize {
            let bound = polynomial_rank_bound(d as u64, p as u64).unwrap() as usize;
            for trial in 0..20u64 {
                let mut r = rng::stream(trial, "acceptance-poly", (p as u64) * 10 + d as u64);
                let x = gaussian(200, d, &mut r);
                let (rank, _) = random_rank(&x, 4 * bound, &ActivationSpec::power(p), trial).unwrap();
                total += 1;
                if rank <= bound {
                    ok += 1;
                } else {
                    worst = format!("; p={p} d={d} rank {rank} > {bound}");
                }
            }
        }
    }
    let el = t.elapsed();
    verdict(
        2,
        "polynomial rank bound",
        ok == total && el.as_secs_f64() < 10.0,
        el,
        &format!("{ok}/{total} trials within the bound{worst}"),
    );
}

// ---------------------------------------------------------------- 3

#[test]
fn c03_rank_constructions() {
    let _g = serial();
    let t = Instant::now();
    let mut stair_ok = 0;
    for trial in 0..10u64 {
        let x = gaussian(50, 3, &mut rng::stream(trial, "acceptance-stair", 0));
        let all = [1, 5, 20, 50].iter().all(|&m| {
            let s = construct_relu_staircase(&x, m).unwrap();
            feature_rank(&x, &s.weights, &s.bias, &ActivationSpec::relu()).unwrap().0 == m
        });
        stair_ok += all as usize;
    }
    let mut seagull_ok = 0;
    for trial in 0..10u64 {
        let x = gaussian(100, 9, &mut rng::stream(trial, "acceptance-rank1", 0));
        if let Ok(c) = construct_rank1_weights(&x, 20, &ActivationSpec::seagull(), trial) {
            seagull_ok += (c.achieved_rank == 20) as usize;
        }
    }
    let el = t.elapsed();
    verdict(
        3,
        "rank constructions",
        stair_ok == 10 && seagull_ok >= 9 && el.as_secs_f64() < 30.0,
        el,
        &format!("staircase {stair_ok}/10, seagull rank-1 {seagull_ok}/10"),
    );
}

// ---------------------------------------------------------------- 4

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(p, c);
        b.swap(p, c);
        for i in c + 1..n {
            let f = a[i][c] / a[c][c];
            for k in c..n {
                a[i][k] -= f * a[c][k];
            }
            b[i] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

#[test]
fn c04_closed_form_head() {
    let _g = serial();
    let t = Instant::now();
    let mut r = rng::stream(4, "acceptance-head", 0);
    let mut worst_rel = 0.0f64;
    let mut worst_orth = 0.0f64;
    for _ in 0..50 {
        let n = r.random_range(20..=100);
        let k = r.random_range(1..=16);
        let g = gaussian(n, k, &mut r);
        let y: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
        // Normal equations for [G 1].
        let design = |i: usize, j: usize| if j < k { g.get(i, j) } else { 1.0 };
        let ata: Vec<Vec<f64>> = (0..=k)
            .map(|a| (0..=k).map(|b| (0..n).map(|i| design(i, a) * design(i, b)).sum()).collect())
            .collect();
        let aty: Vec<f64> = (0..=k).map(|a| (0..n).map(|i| design(i, a) * y[i]).sum()).collect();
        let theta = gauss_solve(ata, aty);
        let h = solve_head(&g, &y).unwrap();
        let mut got = h.alpha.clone();
        got.push(h.beta);
        let diff: f64 = got.iter().zip(&theta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = theta.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        worst_rel = worst_rel.max(diff / norm);
        let scale = g.frobenius_norm().max(1.0) * y.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        let mut orth = h.residual.iter().sum::<f64>().abs();
        for j in 0..k {
            let col = g.col(j);
            let mean = col.iter().sum::<f64>() / n as f64;
            let ip: f64 = col.iter().zip(&h.residual).map(|(c, e)| (c - mean) * e).sum();
            orth = orth.max(ip.abs());
        }
        worst_orth = worst_orth.max(orth / scale);
    }
    let el = t.elapsed();
    verdict(
        4,
        "closed-form head",
        worst_rel <= 1e-8 && worst_orth <= 1e-8 && el.as_secs_f64() < 5.0,
        el,
        &format!("max relative error {worst_rel:.2e}, max scaled residual inner product {worst_orth:.2e}"),
    );
}

// ---------------------------------------------------------------- 5

fn gradient_error(act: ActivationSpec) -> f64 {
    const H: f64 = 1e-6;
    let specs = vec![
        LayerSpec::dense(9, 5, act),
        LayerSpec::dense(5, 3, act),
        LayerSpec::dense(3, 1, ActivationSpec::identity()),
    ];
    let mut net = init_network(specs, 5).unwrap();
    let mut r = rng::stream(5, "acceptance-grad", 0);
    for k in 0..3 {
        let w = net.layers()[k].weights.clone();
        let b = (0..w.cols()).map(|_| r.random_range(-0.5..0.5)).collect();
        net.set_layer_params(k, w, b).unwrap();
    }
    let x = gaussian(7, 9, &mut r);
    let probe = gaussian(7, 1, &mut r);
    let objective = |n: &Network| -> f64 {
        let p = n.predict(&x).unwrap();
        p.as_slice().iter().zip(probe.as_slice()).map(|(a, b)| a * b).sum()
    };
    let (_, cache) = net.forward(&x, false, &mut rng::stream(0, "unused", 0)).unwrap();
    let analytic: Vec<f64> = net.backward(&cache, &probe).unwrap().blocks(&net).concat();
    let mut numeric = Vec::new();
    let mut work = net.clone();
    let lens: Vec<usize> = work.params_mut().iter().map(|b| b.len()).collect();
    for (bi, &len) in lens.iter().enumerate() {
        for j in 0..len {
            let orig = work.params_mut()[bi][j];
            work.params_mut()[bi][j] = orig + H;
            let up = objective(&work);
            work.params_mut()[bi][j] = orig - H;
            let down = objective(&work);
            work.params_mut()[bi][j] = orig;
            numeric.push((up - down) / (2.0 * H));
        }
    }
    let scale = analytic.iter().fold(1e-8f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / scale.max(a.abs()))
        .fold(0.0, f64::max)
}

#[test]
fn c05_gradient_correctness() {
    let _g = serial();
    let t = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut count = 0;
    for alpha in [1.0, 1.5, 2.0] {
        for act in catalog_all(alpha) {
            let e = gradient_error(act);
            count += 1;
            if e > worst.0 {
                worst = (e, act.label());
            }
        }
    }
    let el = t.elapsed();
    verdict(
        5,
        "gradient correctness",
        worst.0 < 1e-4 && el.as_secs_f64() < 10.0,
        el,
        &format!("{count} activations, worst relative error {:.2e} ({})", worst.0, worst.1),
    );
}

// ---------------------------------------------------------------- 6

fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn lu_det(mut a: Vec<f64>, n: usize) -> f64 {
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs())).unwrap();
        if a[p * n + c] == 0.0 {
            return 0.0;
        }
        if p != c {
            for k in 0..n {
                a.swap(p * n + k, c * n + k);
            }
            det = -det;
        }
        det *= a[c * n + c];
        for i in c + 1..n {
            let f = a[i * n + c] / a[c * n + c];
            for k in c..n {
                a[i * n + k] -= f * a[c * n + k];
            }
        }
    }
    det
}

/// Hit-or-miss area of the spherical triangle `u, v, w`, sampling a cap
/// around the vertex centroid that contains it (or the whole sphere).
fn monte_carlo_solid_angle(x: &[f64], samples: usize, seed: u64) -> f64 {
    let (u, v, w) = (&x[0..3], &x[3..6], &x[6..9]);
    let (uv, vw, wu) = (cross(u, v), cross(v, w), cross(w, u));
    let orient = dot(&uv, w).signum();
    let unit = |a: [f64; 3]| {
        let n = dot(&a, &a).sqrt();
        [a[0] / n, a[1] / n, a[2] / n]
    };
    let c = unit([u[0] + v[0] + w[0], u[1] + v[1] + w[1], u[2] + v[2] + w[2]]);
    let cos_theta = [u, v, w].iter().map(|p| dot(p, &c)).fold(1.0f64, f64::min);
    let (c, lo) = if cos_theta > 0.0 && c.iter().all(|v| v.is_finite()) {
        (c, cos_theta)
    } else {
        ([0.0, 0.0, 1.0], -1.0)
    };
    let helper = if c[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e1 = unit(cross(&c, &helper));
    let e2 = cross(&c, &e1);
    let mut r = rng::stream(seed, "acceptance-mc", 0);
    let mut inside = 0usize;
    for _ in 0..samples {
        let h: f64 = r.random_range(lo..=1.0);
        let phi: f64 = r.random_range(0.0..std::f64::consts::TAU);
        let s = (1.0 - h * h).max(0.0).sqrt();
        let (a, b) = (s * phi.cos(), s * phi.sin());
        let d: Vec<f64> = (0..3).map(|i| a * e1[i] + b * e2[i] + h * c[i]).collect();
        if orient * dot(&vw, &d) > 0.0 && orient * dot(&wu, &d) > 0.0 && orient * dot(&uv, &d) > 0.0 {
            inside += 1;
        }
    }
    2.0 * std::f64::consts::PI * (1.0 - lo) * inside as f64 / samples as f64
}

#[test]
fn c06_label_oracles() {
    let _g = serial();
    let t = Instant::now();
    let mut r = rng::stream(6, "acceptance-labels", 0);
    let cube = Sampler::UniformCube { lo: -2.0, hi: 2.0 };
    let mut tri_err = 0.0f64;
    for _ in 0..1000 {
        let x = cube.draw(9, &mut r);
        let e1: Vec<f64> = (0..3).map(|i| x[3 + i] - x[i]).collect();
        let e2: Vec<f64> = (0..3).map(|i| x[6 + i] - x[i]).collect();
        let c = cross(&e1, &e2);
        tri_err = tri_err.max((triangle_area(&x).unwrap() - 0.5 * dot(&c, &c).sqrt()).abs());
    }
    let mut det_err = 0.0f64;
    for _ in 0..1000 {
        let m: Vec<f64> = (0..9).map(|_| r.sample(StandardNormal)).collect();
        // First-row cofactor expansion.
        let d = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6]);
        det_err = det_err.max((det3_target(&m, Wave::Cosine).unwrap() - d.cos()).abs());
        det_err = det_err.max((det3_target(&m, Wave::Sine).unwrap() - d.sin()).abs());
    }
    let mut simplex_err = 0.0f64;
    for _ in 0..1000 {
        let m: Vec<f64> = (0..25).map(|_| r.sample(StandardNormal)).collect();
        let oracle = lu_det(m.clone(), 5).abs() / 120.0;
        simplex_err = simplex_err.max((simplex_volume_25(&m).unwrap() - oracle).abs() / oracle.max(1.0));
    }
    let mut solid_bad = Vec::new();
    for k in 0..20u64 {
        let x = Sampler::UnitSphereTriples.draw(9, &mut r);
        let exact = solid_angle(&x).unwrap();
        let mc = monte_carlo_solid_angle(&x, 1_000_000, k);
        if (mc - exact).abs() > 0.01 * mc {
            solid_bad.push(format!("{exact:.4} vs {mc:.4}"));
        }
    }
    let el = t.elapsed();
    let pass = tri_err <= 1e-10
        && det_err <= 1e-12
        && simplex_err <= 1e-12
        && solid_bad.is_empty()
        && el.as_secs_f64() < 60.0;
    verdict(
        6,
        "label-function oracles",
        pass,
        el,
        &format!(
            "triangle {tri_err:.1e}, det3 {det_err:.1e}, simplex {simplex_err:.1e}, \
             solid angle {}/20 within 1%{}",
            20 - solid_bad.len(),
            if solid_bad.is_empty() { String::new() } else { format!(" (misses: {})", solid_bad.join(", ")) }
        ),
    );
}

// ---------------------------------------------------------------- 7

#[test]
fn c07_invariant_permutation_counts() {
    let _g = serial();
    let t = Instant::now();
    let candidates = nine_dim_candidates();
    let mut got = Vec::new();
    for (name, want) in [(TaskName::ALL[0], 12), (TaskName::SolidAngle, 6), (TaskName::Psi, 2)] {
        let task = TaskSpec::new(name);
        let c = count_invariant_permutations(|x: &[f64]| task.label(x), &candidates, &task.sampler, 100, 1e-9, 7)
            .unwrap();
        got.push((name, c.count, want));
    }
    let el = t.elapsed();
    verdict(
        7,
        "invariant-permutation counts",
        got.iter().all(|(_, c, w)| c == w) && el.as_secs_f64() < 5.0,
        el,
        &got.iter().map(|(n, c, w)| format!("{n} {c} (expected {w})")).collect::<Vec<_>>().join(", "),
    );
}

// ---------------------------------------------------------------- 8-11

const BASELINES: [&str; 5] = ["relu", "elu", "sigmoid", "tanh", "softplus"];

fn desk(baseline: &str, noise: f64) -> ExperimentConfig {
    ExperimentConfig {
        baseline: catalog_get(baseline, None).unwrap(),
        noise_fraction: noise,
        ..ExperimentConfig::default()
    }
}

struct Figure1 {
    clean: Vec<ComparisonReport>,
    noisy: Vec<ComparisonReport>,
    cpu_seconds: f64,
}

fn figure1() -> &'static Figure1 {
    static CELL: OnceLock<Figure1> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = ProcessTime::now();
        let run = |noise| {
            BASELINES
                .iter()
                .map(|b| run_comparison(&desk(b, noise), workers()).unwrap())
                .collect()
        };
        let clean = run(0.0);
        let noisy = run(0.05);
        Figure1 { clean, noisy, cpu_seconds: t.elapsed().as_secs_f64() }
    })
}

fn relu_sweep() -> &'static (Vec<ComparisonReport>, f64) {
    static CELL: OnceLock<(Vec<ComparisonReport>, f64)> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = ProcessTime::now();
        let r = run_layer_sweep(&desk("relu", 0.0), workers()).unwrap();
        (r, t.elapsed().as_secs_f64())
    })
}

fn summary(reports: &[ComparisonReport]) -> String {
    reports
        .iter()
        .map(|r| format!("{} {:.3}", r.baseline_activation, r.improvement_ratio))
        .collect::<Vec<_>>()
        .join(", ")
}

#[test]
fn c08_substitution_trend() {
    let _g = serial();
    let t = Instant::now();
    let f = figure1();
    let (_, sweep_cpu) = relu_sweep();
    let cpu = f.cpu_seconds + sweep_cpu;
    let wins = |rs: &[ComparisonReport]| {
        rs.iter().filter(|r| r.median_substituted_mae < r.median_baseline_mae).count()
    };
    let (clean, noisy) = (wins(&f.clean), wins(&f.noisy));
    let el = t.elapsed();
    verdict(
        8,
        "seagull at layer 0 beats baselines",
        clean >= 4 && noisy >= 3 && cpu < 15.0 * 60.0,
        el,
        &format!(
            "clean {clean}/5 [{}], 5% noise {noisy}/5 [{}], {cpu:.0}s CPU with the layer sweep",
            summary(&f.clean),
            summary(&f.noisy)
        ),
    );
}

#[test]
fn c09_layer_position_trend() {
    let _g = serial();
    let t = Instant::now();
    let (sweep, _) = relu_sweep();
    let first = sweep.first().unwrap().improvement_ratio;
    let last = sweep.last().unwrap().improvement_ratio;
    let ratios: Vec<String> = sweep.iter().map(|r| format!("{:.3}", r.improvement_ratio)).collect();
    let el = t.elapsed();
    verdict(
        9,
        "layer-position trend",
        first >= last,
        el,
        &format!("ratios by layer [{}]", ratios.join(", ")),
    );
}

#[test]
fn c10_control_task() {
    let _g = serial();
    let t = Instant::now();
    let cfg = ExperimentConfig { task: "det3_sin".into(), ..desk("relu", 0.0) };
    let sweep = run_layer_sweep(&cfg, workers()).unwrap();
    let worst = sweep.iter().map(|r| r.improvement_ratio).fold(0.0, f64::max);
    let ratios: Vec<String> = sweep.iter().map(|r| format!("{:.3}", r.improvement_ratio)).collect();
    let el = t.elapsed();
    verdict(
        10,
        "control task shows no gain",
        worst <= 1.1 && el.as_secs_f64() < 10.0 * 60.0,
        el,
        &format!("ratios by layer [{}]", ratios.join(", ")),
    );
}

#[test]
fn c11_end_to_end_determinism() {
    let _g = serial();
    let t = Instant::now();
    let first = &figure1().clean[0];
    let again = run_comparison(&desk("relu", 0.0), workers().max(2) - 1).unwrap();
    let same = to_json(first) == to_json(&again) && trials_csv(first) == trials_csv(&again);
    let el = t.elapsed();
    verdict(
        11,
        "end-to-end determinism",
        same,
        el,
        if same { "rerun reports are byte-identical" } else { "rerun reports differ" },
    );
}
