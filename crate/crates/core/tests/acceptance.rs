//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rasa::experiments::{demand_response_instance, experiment1, experiment2, ExperimentConfig};
use rasa::network::{mean_laplacian, GraphModel, GraphSample};
use rasa::ode::{equilibrium_construct, flow, lyapunov_violation};
use rasa::oracle::{brute_force_tiny, kkt_check, solve_dual, DUAL_MAX_ITER, DUAL_TOL};
use rasa::problem::{contains, project, random_instance, LocalSet, Matrix, ProblemSpec, SetKind, Vector};
use rasa::rng::StepStreams;
use rasa::sa::noise::{draw_realization, gradient_noise_bound, GradientNoise};
use rasa::sa::{sa_step_with, AdditiveNoise, NetworkState, NoiseConfig, NoiseRealization, Simulation, StepSchedule};

const INSTANCE_SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// 1. Noiseless run on a fixed ring reaches 1% of the initial distance in 5·10⁴ iterations.
fn noiseless_regression() -> Outcome {
    let t = Instant::now();
    let (p, _) = demand_response_instance(INSTANCE_SEED).unwrap();
    let sol = solve_dual(&p, DUAL_TOL, DUAL_MAX_ITER).unwrap();
    let sim = Simulation::new(p, GraphModel::single(GraphSample::ring(10)), NoiseConfig::noiseless(), StepSchedule::default())
        .unwrap()
        .with_reference(sol.x_star)
        .unwrap()
        .with_cadence(1000)
        .unwrap();
    let run = sim.run_path(50_000, 0).unwrap();
    let ratio = run.trace.last().dist.unwrap() / run.trace.initial.dist.unwrap();
    let el = t.elapsed();
    outcome(
        ratio < 1e-2 && el < Duration::from_secs(10),
        format!("relative distance {ratio:.3e} (< 1e-2), {:.1} s (< 10 s)", secs(el)),
    )
}

/// 2. 50-path Experiment 1: averaged distance below 25% of its start, window means non-increasing after k = 2000.
fn experiment_one() -> Outcome {
    let t = Instant::now();
    let cfg = ExperimentConfig {
        paths: 50,
        ..ExperimentConfig::default()
    };
    let report = experiment1(&cfg).unwrap();
    let el = t.elapsed();
    let mean = report.monte_carlo.mean_trace.as_ref().unwrap();
    let d0 = mean.initial.dist.unwrap();
    let d_end = mean.last().dist.unwrap();
    let windows: Vec<f64> = (2500..=8000)
        .step_by(500)
        .map(|end| {
            let v: Vec<f64> = mean
                .all()
                .filter(|r| r.k > end - 500 && r.k <= end)
                .map(|r| r.dist.unwrap())
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect();
    let monotone = windows.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        d_end < 0.25 * d0 && monotone && report.monte_carlo.diverged.is_empty() && el < Duration::from_secs(120),
        format!(
            "averaged dist {d_end:.3} vs start {d0:.3} (ratio {:.3} < 0.25), window means non-increasing: {monotone}, {:.1} s (< 120 s)",
            d_end / d0,
            secs(el)
        ),
    )
}

/// 3. 20-round Experiment 2: at least 90% of rounds bring balance and consensus below 25% of their start.
fn experiment_two() -> Outcome {
    let t = Instant::now();
    let cfg = ExperimentConfig {
        rounds: 20,
        ..ExperimentConfig::default()
    };
    let report = experiment2(&cfg).unwrap();
    let el = t.elapsed();
    let ok = report
        .rounds
        .iter()
        .filter(|r| r.relative(|x| x.balance) < 0.25 && r.relative(|x| x.consensus) < 0.25)
        .count();
    let frac = ok as f64 / report.rounds.len() as f64;
    outcome(
        frac >= 0.9 && el < Duration::from_secs(120),
        format!("{ok}/{} rounds ({:.0}% >= 90%), {:.1} s (< 120 s)", report.rounds.len(), 100.0 * frac, secs(el)),
    )
}

fn kkt_instances() -> Vec<ProblemSpec> {
    let ns = [2, 5, 10];
    let ms = [1, 3];
    let kinds = [SetKind::Box, SetKind::Polyhedron, SetKind::Unconstrained];
    (0..20)
        .map(|i| random_instance(100 + i as u64, ns[i % 3], ms[(i / 3) % 2], kinds[(i / 6) % 3]).unwrap())
        .collect()
}

/// 4. Oracle passes the KKT check on 20 instances and matches brute force on two-agent scalar boxes.
fn kkt_certification() -> Outcome {
    let mut worst = 0.0f64;
    let mut failures = 0;
    for p in kkt_instances() {
        let s = solve_dual(&p, DUAL_TOL, DUAL_MAX_ITER).unwrap();
        let k = kkt_check(&p, &s.x_star, &s.lambda_star, 1e-6).unwrap();
        worst = worst.max(k.stationarity).max(k.balance).max(k.feasibility);
        failures += usize::from(!k.pass);
    }
    let grid = 1e-3;
    let mut gap = 0.0f64;
    let mut tiny = 0;
    for seed in 0..20 {
        let p = random_instance(500 + seed, 2, 1, SetKind::Box).unwrap();
        let s = solve_dual(&p, DUAL_TOL, DUAL_MAX_ITER).unwrap();
        let b = brute_force_tiny(&p, grid).unwrap();
        gap = gap.max((&s.x_star - &b.x_star).amax());
        tiny += 1;
    }
    outcome(
        failures == 0 && gap <= 2.0 * grid,
        format!("20/20 pass at 1e-6 (worst residual {worst:.2e}; {failures} failures); {tiny} two-agent box instances within {gap:.2e} of brute force (<= 2e-3)"),
    )
}

/// 5. Constructed equilibria have residual < 1e-8 and are fixed points of the noiseless mean-graph step.
fn equilibrium_check() -> Outcome {
    let mut problems: Vec<(ProblemSpec, GraphModel)> = kkt_instances()
        .into_iter()
        .enumerate()
        .map(|(i, p)| {
            let model = GraphModel::erdos_renyi_pool(p.n(), 10, 0.3, 0.6, i as u64).unwrap();
            (p, model)
        })
        .collect();
    for seed in 1..=3 {
        let (p, _) = demand_response_instance(seed).unwrap();
        problems.push((p, GraphModel::erdos_renyi_pool(10, 30, 0.05, 0.1, seed).unwrap()));
    }
    let (mut res, mut step) = (0.0f64, 0.0f64);
    for (p, model) in &problems {
        let lbar = mean_laplacian(model);
        let sol = solve_dual(p, DUAL_TOL, DUAL_MAX_ITER).unwrap();
        let eq = equilibrium_construct(p, &lbar.matrix, &sol).unwrap();
        res = res.max(eq.residual);
        let next = sa_step_with(&eq.state, p, &lbar.mean_adjacency(), 0.5, &NoiseRealization::zeros(p.n(), p.m())).unwrap();
        step = step.max(eq.state.distance(&next));
    }
    outcome(
        res < 1e-8 && step < 1e-12,
        format!("{} equilibria: max residual {res:.2e} (< 1e-8), max step displacement {step:.2e} (< 1e-12)", problems.len()),
    )
}

/// 6. Projected-Euler flow from 5 random starts: Lyapunov non-increasing and terminal distance < 1e-3.
fn lyapunov_check() -> Outcome {
    let (p, _) = demand_response_instance(INSTANCE_SEED).unwrap();
    let model = GraphModel::erdos_renyi_pool(10, 30, 0.05, 0.1, INSTANCE_SEED).unwrap();
    let lbar = mean_laplacian(&model).matrix;
    let sol = solve_dual(&p, DUAL_TOL, DUAL_MAX_ITER).unwrap();
    let eq = equilibrium_construct(&p, &lbar, &sol).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let starts: Vec<NetworkState> = (0..5)
        .map(|_| {
            let mut g = || Matrix::from_fn(10, 3, |_, _| rng.gen_range(-3.0..3.0));
            let x = p.project_rows(&g()).unwrap();
            NetworkState::new(x, g(), g()).unwrap()
        })
        .collect();
    let results: Vec<(bool, f64)> = std::thread::scope(|s| {
        let handles: Vec<_> = starts
            .iter()
            .map(|s0| {
                s.spawn(|| {
                    let f = flow(s0, &p, &lbar, 1e-3, 100_000, Some(&eq), 100_000).unwrap();
                    (lyapunov_violation(&f.lyapunov, 1e-10).is_none(), (&f.final_state.x - &sol.x_star).norm())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let monotone = results.iter().all(|r| r.0);
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    outcome(
        monotone && worst < 1e-3,
        format!("Lyapunov non-increasing on all starts: {monotone}; worst terminal |X - X*| {worst:.3e} (< 1e-3)"),
    )
}

struct Moments {
    sum: Vec<f64>,
    sq: Vec<f64>,
    count: usize,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self {
            sum: vec![0.0; dim],
            sq: vec![0.0; dim],
            count: 0,
        }
    }

    fn push(&mut self, v: &[f64]) {
        for (k, x) in v.iter().enumerate() {
            self.sum[k] += x;
            self.sq[k] += x * x;
        }
        self.count += 1;
    }

    /// Largest `|mean| / SE` and largest relative second-moment error against `sigma²`.
    fn check(&self, sigma2: f64) -> (f64, f64) {
        let n = self.count as f64;
        let mut z = 0.0f64;
        let mut rel = 0.0f64;
        for k in 0..self.sum.len() {
            let mean = self.sum[k] / n;
            let m2 = self.sq[k] / n;
            let se = ((m2 - mean * mean).max(0.0) / n).sqrt();
            z = z.max(mean.abs() / se);
            rel = rel.max((m2 - sigma2).abs() / sigma2);
        }
        (z, rel)
    }
}

/// 7. Noise channels as wired into the engine: zero mean within 4 SE, second moments within 10%,
/// and the sampled-quadratic envelope `E‖ν‖² ≤ c(1 + ‖x‖²)`.
fn noise_premises() -> Outcome {
    let samples = 100_000;
    let m = 3;
    let cfg = NoiseConfig {
        gradient: GradientNoise::Gaussian { sigma: 0.7 },
        resource: AdditiveNoise::Gaussian { sigma: 1.0 },
        channel_lambda: AdditiveNoise::Gaussian { sigma: 1.0 },
        channel_z: AdditiveNoise::Gaussian { sigma: 0.5 },
    };
    let adj = GraphSample::complete(2).adjacency().clone();
    let x = Matrix::from_element(2, m, 1.5);
    let (mut nu, mut delta, mut zeta, mut eps) = (Moments::new(m), Moments::new(m), Moments::new(m), Moments::new(m));
    for k in 0..samples {
        let r = draw_realization(&cfg, &x, &adj, &StepStreams::new(77, k as u64));
        nu.push(r.nu.row(0).transpose().as_slice());
        delta.push(r.delta.row(1).transpose().as_slice());
        zeta.push(r.zeta(0, 1));
        eps.push(r.eps(1, 0));
    }
    let checks = [("nu", nu.check(0.49)), ("delta", delta.check(1.0)), ("zeta", zeta.check(1.0)), ("eps", eps.check(0.25))];
    let mut ok = checks.iter().all(|(_, (z, rel))| *z < 4.0 && *rel < 0.1);
    let mut detail: Vec<String> = checks
        .iter()
        .map(|(name, (z, rel))| format!("{name} |mean|/SE {z:.2} moment err {:.1}%", 100.0 * rel))
        .collect();
    let sq = NoiseConfig {
        gradient: GradientNoise::SampledQuadratic {
            sigma_psi: 0.5f64.sqrt(),
            sigma_theta: 0.5f64.sqrt(),
        },
        ..NoiseConfig::noiseless()
    };
    let c = gradient_noise_bound(&sq.gradient, m);
    let one = Matrix::zeros(1, 1);
    for norm in [0.0, 1.0, 10.0] {
        let xs = Matrix::from_element(1, m, norm / (m as f64).sqrt());
        let mut acc = Moments::new(m);
        let mut e2 = 0.0;
        for k in 0..samples {
            let r = draw_realization(&sq, &xs, &one, &StepStreams::new(91, k as u64));
            let v: Vec<f64> = r.nu.row(0).iter().cloned().collect();
            e2 += v.iter().map(|a| a * a).sum::<f64>();
            acc.push(&v);
        }
        e2 /= samples as f64;
        let (z, _) = acc.check(1.0);
        let bound = c * (1.0 + norm * norm);
        ok &= e2 <= bound && z < 4.0;
        detail.push(format!("|x|={norm}: E|nu|^2 {e2:.3} <= {bound:.3}"));
    }
    outcome(ok, detail.join("; "))
}

fn random_set(rng: &mut ChaCha8Rng, m: usize) -> LocalSet {
    match rng.gen_range(0..3) {
        0 => LocalSet::unconstrained(m),
        1 => {
            let lo = Vector::from_fn(m, |_, _| rng.gen_range(-2.0..1.0));
            let hi = &lo + Vector::from_fn(m, |_, _| rng.gen_range(0.1..3.0));
            LocalSet::boxed(lo, hi).unwrap()
        }
        _ => {
            let rows = rng.gen_range(1..=2 * m + 2);
            let center = Vector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
            let r = Matrix::from_fn(rows, m, |_, _| rng.gen_range(-1.0..1.0));
            let l = &r * &center + Vector::from_fn(rows, |_, _| rng.gen_range(0.2..1.5));
            LocalSet::polyhedron(r, l).unwrap()
        }
    }
}

/// 8. Projection: non-expansive (1e-9), idempotent (1e-9), variational inequality (1e-8) over 10³ cases.
fn projection_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut expand, mut idem, mut vi) = (f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    let mut outside = 0;
    for _ in 0..1000 {
        let m = rng.gen_range(1..=4);
        let set = random_set(&mut rng, m);
        let point = |r: &mut ChaCha8Rng| Vector::from_fn(m, |_, _| r.gen_range(-5.0..5.0));
        let (y1, y2) = (point(&mut rng), point(&mut rng));
        let (p1, p2) = (project(&set, &y1).unwrap(), project(&set, &y2).unwrap());
        expand = expand.max((&p1 - &p2).norm() - (&y1 - &y2).norm());
        idem = idem.max((project(&set, &p1).unwrap() - &p1).norm());
        outside += usize::from(!contains(&set, &p1, 1e-9));
        for _ in 0..5 {
            let w = project(&set, &point(&mut rng)).unwrap();
            vi = vi.max((&y1 - &p1).dot(&(w - &p1)));
        }
    }
    outcome(
        expand <= 1e-9 && idem <= 1e-9 && vi <= 1e-8 && outside == 0,
        format!("max expansion {expand:.1e} (<= 1e-9), idempotence {idem:.1e} (<= 1e-9), VI {vi:.1e} (<= 1e-8), {outside} projections outside the set"),
    )
}

fn run_cli(bin: &str, dir: &Path, threads: usize) -> (Vec<u8>, Vec<u8>) {
    let out = dir.join(format!("t{threads}"));
    let status = Command::new(bin)
        .args(["mc", "--seed", "9", "--paths", "16", "--iters", "400", "--threads"])
        .arg(threads.to_string())
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    (
        std::fs::read(out.join("trace_mean.csv")).unwrap(),
        std::fs::read(out.join("final_metrics.csv")).unwrap(),
    )
}

/// 9. Identical seeds give byte-identical traces with 1 and 8 threads.
fn determinism() -> Outcome {
    let (p, _) = demand_response_instance(INSTANCE_SEED).unwrap();
    let model = GraphModel::erdos_renyi_pool(10, 30, 0.05, 0.1, 4).unwrap();
    let sim = Simulation::new(p, model, NoiseConfig::demand_response(), StepSchedule::default()).unwrap();
    let a = sim.monte_carlo(500, 24, 3, 1).unwrap();
    let b = sim.monte_carlo(500, 24, 3, 8).unwrap();
    let lib_same = a.mean_trace.as_ref().unwrap().to_csv_string() == b.mean_trace.as_ref().unwrap().to_csv_string()
        && a.finals.iter().zip(&b.finals).all(|(x, y)| x.last == y.last);
    let tmp = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_rasa");
    let cli_same = run_cli(bin, tmp.path(), 1) == run_cli(bin, tmp.path(), 8);
    outcome(
        lib_same && cli_same,
        format!("library Monte Carlo identical: {lib_same}; `rasa mc --threads 1` vs `--threads 8` CSVs identical: {cli_same}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("noiseless regression", noiseless_regression),
        ("desk-scale experiment 1", experiment_one),
        ("desk-scale experiment 2", experiment_two),
        ("KKT certification", kkt_certification),
        ("equilibrium construction", equilibrium_check),
        ("Lyapunov flow", lyapunov_check),
        ("noise premises", noise_premises),
        ("projection properties", projection_suite),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        failed += usize::from(!o.pass);
        println!(
            "criterion {}: {} {name}: {} [{:.1} s]",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            secs(t.elapsed())
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
