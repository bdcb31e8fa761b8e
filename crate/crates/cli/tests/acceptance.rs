//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fs;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use num_rational::BigRational;
use qnd_core::ensemble::run_ensemble;
use qnd_core::inference::{identify_pointer, FrequencyHistogram};
use qnd_core::info::chernoff_exponent;
use qnd_core::kernel::{validate_kernel, KernelSchedule};
use qnd_core::oracle::{
    enumerate, exact_conditional_event_probability, exact_event_probability, exact_expectation, parse_rational,
    ExactKernel, Field, DEFAULT_PATH_CAP,
};
use qnd_core::simplex::SimplexState;
use qnd_core::trajectory::{run_trajectory, SimConfig, StopReason};
use qnd_core::unitary::{replay_amplitudes, AmplitudeState, CavityPreset};

const FLOAT_MARTINGALE_TOL: f64 = 1e-10;
const C1_LIMIT: Duration = Duration::from_secs(5);

const BORN_Q0: f64 = 0.3;
const BORN_HALF_WIDTH: f64 = 0.014;
const BORN_TRAJECTORIES: usize = 10_000;
const COLLAPSE_THRESHOLD: f64 = 1.0 - 1e-6;
const C2_LIMIT: Duration = Duration::from_secs(30);

const ENTROPY_RATE: f64 = -0.5493;
const RATE_REL_TOL: f64 = 0.05;
const RATE_MIN_TRAJECTORIES: u64 = 200;
const RATE_WINDOW: u64 = 1000;

const LAMBDA_TOL: f64 = 1e-6;
const S_STAR_TOL: f64 = 1e-4;
const GRID_POINTS: usize = 100_000;
const C4_LIMIT: Duration = Duration::from_secs(1);

const ESCAPE_DEPTH: usize = 10;
const ESCAPE_EPS: &str = "1/20";
const ESCAPE_FACTOR: f64 = 10.0;
const C5_LIMIT: Duration = Duration::from_secs(10);

const IDENTIFY_STEPS: u64 = 500;
const IDENTIFY_RUNS: usize = 1000;
const IDENTIFY_RATE: f64 = 0.99;
const C6_LIMIT: Duration = Duration::from_secs(60);

const UBIQUITY_STEPS: u64 = 1000;
const UBIQUITY_RUNS: usize = 1000;
const UBIQUITY_PEAK: f64 = 0.99;
const UBIQUITY_RATE: f64 = 0.95;

const DEGENERATE_RUNS: usize = 1000;
const DEGENERATE_STEPS: u64 = 1000;
const DEGENERATE_TOL: f64 = 1e-9;

const TRACK_TOL: f64 = 1e-9;
const TRACK_STEPS: u64 = 1000;
const TRACK_SEEDS: u64 = 100;

const REPRO_THREADS: [usize; 3] = [1, 4, 16];

type Outcome = Result<String, String>;

fn symmetric() -> KernelSchedule {
    KernelSchedule::fixed(validate_kernel(&[vec![0.75, 0.25], vec![0.25, 0.75]]).unwrap())
}

fn q(text: &str) -> BigRational {
    parse_rational(text).unwrap()
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    match (result, limit) {
        (Ok(msg), Some(l)) if elapsed > l => Err(format!("{msg}; took {elapsed:.2?}, limit {l:?}")),
        (Ok(msg), _) => Ok(format!("{msg} [{elapsed:.2?}]")),
        (Err(msg), _) => Err(format!("{msg} [{elapsed:.2?}]")),
    }
}

fn exact_martingale() -> Outcome {
    let rows = [["1/5", "1/2", "7/8"], ["4/5", "1/2", "1/8"]];
    let rational: Vec<Vec<BigRational>> = rows.iter().map(|r| r.iter().map(|s| q(s)).collect()).collect();
    let q0 = vec![q("1/6"), q("1/3"), q("1/2")];
    let tree = enumerate(&[ExactKernel::from_rows(&rational).unwrap()], &q0, 8, DEFAULT_PATH_CAP).unwrap();
    for (a, qa) in q0.iter().enumerate() {
        let e = exact_expectation(&tree, a);
        if &e != qa {
            return Err(format!("rational E[q_8({a})] = {e}, q0 = {qa}"));
        }
    }
    let float_rows: Vec<Vec<f64>> = rational.iter().map(|r| r.iter().map(Field::to_f64).collect()).collect();
    let kernel = ExactKernel::from_kernel(&validate_kernel(&float_rows).unwrap());
    let q0f: Vec<f64> = q0.iter().map(Field::to_f64).collect();
    let ftree = enumerate(&[kernel], &q0f, 8, DEFAULT_PATH_CAP).unwrap();
    let worst = (0..3).map(|a| (exact_expectation(&ftree, a) - q0f[a]).abs()).fold(0.0, f64::max);
    if worst > FLOAT_MARTINGALE_TOL {
        return Err(format!("float deviation {worst:e}"));
    }
    Ok(format!("{} paths, rational exact, float max deviation {worst:.1e}", tree.paths.len()))
}

fn born_rule() -> Outcome {
    let mut config = SimConfig::new(symmetric(), SimplexState::new(vec![BORN_Q0, 1.0 - BORN_Q0]).unwrap());
    config.n_trajectories = BORN_TRAJECTORIES;
    config.collapse_threshold = COLLAPSE_THRESHOLD;
    config.max_steps = 1000;
    config.seed = 2024;
    let report = run_ensemble(&config, 0).map_err(|e| e.to_string())?;
    let f = report.collapse_counts[0] as f64 / BORN_TRAJECTORIES as f64;
    let msg = format!("collapse frequency to pointer 0 = {f:.4} (uncollapsed {})", report.uncollapsed);
    if report.uncollapsed == 0 && (f - BORN_Q0).abs() <= BORN_HALF_WIDTH {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn entropy_rate() -> Outcome {
    let mut config = SimConfig::new(symmetric(), SimplexState::uniform(2));
    config.n_trajectories = 600;
    config.max_steps = 1100;
    config.fit_window = RATE_WINDOW;
    config.stop_on_collapse = false;
    config.seed = 7;
    let report = run_ensemble(&config, 0).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut ok = true;
    for (g, a) in [(0, 1), (1, 0)] {
        let row = report.rate(g, a).ok_or("missing rate row")?;
        let rel = (row.mean_slope - ENTROPY_RATE).abs() / ENTROPY_RATE.abs();
        ok &= rel <= RATE_REL_TOL && row.trajectories >= RATE_MIN_TRAJECTORIES;
        parts.push(format!(
            "γ={g}: slope {:.4} over {} trajectories ({:.2}%)",
            row.mean_slope,
            row.trajectories,
            rel * 100.0
        ));
    }
    if ok {
        Ok(parts.join("; "))
    } else {
        Err(parts.join("; "))
    }
}

/// Direct evaluation of `Σ_i p(i|γ)^{1-s} p(i|α)^s` on a uniform grid over `(0, 2]`.
fn grid_oracle(pg: &[f64], pa: &[f64]) -> (f64, f64) {
    (1..=GRID_POINTS)
        .map(|k| {
            let s = 2.0 * k as f64 / GRID_POINTS as f64;
            let l: f64 = pg.iter().zip(pa).map(|(g, a)| g.powf(1.0 - s) * a.powf(s)).sum();
            (l, s)
        })
        .fold((f64::INFINITY, 0.0), |best, x| if x.0 < best.0 { x } else { best })
}

fn chernoff() -> Outcome {
    let k = validate_kernel(&[vec![0.75, 0.25], vec![0.25, 0.75]]).unwrap();
    let e = chernoff_exponent(&k, 0, 1);
    let s = e.s_star.ok_or("no minimizer")?;
    let (grid_l, grid_s) = grid_oracle(k.column(0), k.column(1));
    let target = 3f64.sqrt() / 2.0;
    let msg = format!("λ*={:.9} s*={s:.6}; grid λ={grid_l:.9} at s={grid_s:.5}", e.lambda_star);
    let ok = (e.lambda_star - target).abs() < LAMBDA_TOL
        && (s - 0.5).abs() < S_STAR_TOL
        && (e.lambda_star - grid_l).abs() < LAMBDA_TOL
        && (s - grid_s).abs() < S_STAR_TOL;
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn escape() -> Outcome {
    let k = ExactKernel::from_rows(&[vec![q("3/4"), q("1/4")], vec![q("1/4"), q("3/4")]]).unwrap();
    let q0 = vec![q("19/20"), q("1/20")];
    let tree = enumerate(&[k], &q0, ESCAPE_DEPTH, DEFAULT_PATH_CAP).unwrap();
    let eps = q(ESCAPE_EPS);
    let pred = |s: &[BigRational]| s[1] >= eps;
    let p = exact_event_probability(&tree, pred).to_f64();
    let p_gamma = exact_conditional_event_probability(&tree, 0, &q0[0], pred).to_f64();
    let bound = (3f64.sqrt() / 2.0).powi(ESCAPE_DEPTH as i32);
    let within = |x: f64| x > 0.0 && bound / x <= ESCAPE_FACTOR && x / bound <= ESCAPE_FACTOR;
    let msg = format!("P={p:.6} (given γ: {p_gamma:.6}) vs λ*^10={bound:.6}");
    if within(p) && within(p_gamma) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn cavity_config(preset: &CavityPreset, steps: u64, seed: u64) -> SimConfig {
    let mut config = SimConfig::new(preset.schedule().unwrap(), SimplexState::uniform(preset.n_pointers()));
    config.max_steps = steps;
    config.seed = seed;
    config
}

fn identification() -> Outcome {
    let preset = CavityPreset { n_max: 7, theta: 0.7, phi_schedule: vec![0.0, FRAC_PI_4, FRAC_PI_2, 3.0 * FRAC_PI_4] };
    let mut config = cavity_config(&preset, IDENTIFY_STEPS, 600);
    config.stop_on_collapse = false;
    let period = preset.phi_schedule.len();
    let mut hits = 0;
    for idx in 0..IDENTIFY_RUNS {
        let t = run_trajectory(&config, idx);
        let h = FrequencyHistogram::from_outcomes(&t.outcomes, 2, 0, period);
        let id = identify_pointer(&h, &config.schedule).map_err(|e| e.to_string())?;
        hits += usize::from(t.stop_reason == StopReason::Collapsed(id.pointer));
    }
    let rate = hits as f64 / IDENTIFY_RUNS as f64;
    let msg = format!("{hits}/{IDENTIFY_RUNS} identifications match the stop reason");
    if rate >= IDENTIFY_RATE {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn qnd(args: &[&str]) -> Result<std::process::Output, String> {
    Command::new(env!("CARGO_BIN_EXE_qnd")).args(args).output().map_err(|e| e.to_string())
}

fn ubiquity() -> Outcome {
    let preset = CavityPreset::default();
    let config = cavity_config(&preset, UBIQUITY_STEPS, 700);
    let reached = (0..UBIQUITY_RUNS)
        .filter(|&idx| run_trajectory(&config, idx).snapshots.iter().any(|s| s.argmax().1 >= UBIQUITY_PEAK))
        .count();
    let rate = reached as f64 / UBIQUITY_RUNS as f64;

    // plot data from the CLI: every saved trace starts flat and ends on one peak
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().to_str().unwrap();
    let run = qnd(&[
        "simulate",
        "--preset",
        "cavity",
        "--seed",
        "700",
        "--trajectories",
        "32",
        "--max-steps",
        "1000",
        "--out-dir",
        out,
    ])?;
    if !run.status.success() {
        return Err(format!("qnd simulate failed: {}", String::from_utf8_lossy(&run.stderr)));
    }
    let text = fs::read_to_string(dir.path().join("plot_data.csv")).map_err(|e| e.to_string())?;
    let mut last: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    let mut first: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for line in text.lines().skip(1) {
        let mut cells = line.split(',');
        let id = cells.next().unwrap().to_string();
        cells.next();
        let row: Vec<f64> = cells.map(|c| c.parse().unwrap()).collect();
        first.entry(id.clone()).or_insert_with(|| row.clone());
        last.insert(id, row);
    }
    let flat_start = first.values().all(|r| r.iter().all(|&x| (x - 1.0 / 8.0).abs() < 1e-12));
    let peaked = last
        .values()
        .filter(|r| {
            let max = r.iter().cloned().fold(0.0, f64::max);
            max >= UBIQUITY_PEAK && r.iter().filter(|&&x| x > 1.0 - UBIQUITY_PEAK).count() == 1
        })
        .count();
    let msg = format!(
        "{reached}/{UBIQUITY_RUNS} reach max q ≥ {UBIQUITY_PEAK}; plot data: {peaked}/{} traces end on a single peak",
        last.len()
    );
    if rate >= UBIQUITY_RATE && flat_start && peaked as f64 >= UBIQUITY_RATE * last.len() as f64 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn degeneracy() -> Outcome {
    let preset = CavityPreset { theta: 2.0 * PI, ..CavityPreset::default() };
    let config = cavity_config(&preset, DEGENERATE_STEPS, 800);
    let q0 = config.q0.q.clone();
    let mut collapses = 0;
    let mut worst = 0.0f64;
    for idx in 0..DEGENERATE_RUNS {
        let t = run_trajectory(&config, idx);
        collapses += usize::from(t.collapsed());
        for s in &t.snapshots {
            worst = s.q.iter().zip(&q0).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        }
    }
    let msg = format!("{collapses} collapses; max |q_n − q0| = {worst:.1e}");
    if collapses == 0 && worst <= DEGENERATE_TOL {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn track_consistency() -> Outcome {
    let preset = CavityPreset::default();
    let models = preset.probe_models().map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut steps = 0;
    for seed in 0..TRACK_SEEDS {
        let mut config = cavity_config(&preset, TRACK_STEPS, seed);
        config.stop_on_collapse = false;
        let t = run_trajectory(&config, 0);
        let initial = AmplitudeState::from_probabilities(&config.q0.q).map_err(|e| e.to_string())?;
        let amps = replay_amplitudes(&models, &initial, &t.outcomes).map_err(|e| e.to_string())?;
        for s in &t.snapshots {
            let p = amps[s.step as usize].probabilities();
            worst = p.iter().zip(&s.q).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        }
        steps += t.outcomes.len();
    }
    let msg = format!("{steps} steps over {TRACK_SEEDS} seeds; max |Δq| = {worst:.1e}");
    if worst <= TRACK_TOL && steps as u64 == TRACK_STEPS * TRACK_SEEDS {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    for threads in REPRO_THREADS {
        let out = dir.path().join(format!("t{threads}"));
        let threads_arg = threads.to_string();
        let run = qnd(&[
            "simulate",
            "--preset",
            "cavity",
            "--seed",
            "31",
            "--trajectories",
            "600",
            "--max-steps",
            "400",
            "--threads",
            &threads_arg,
            "--out-dir",
            out.to_str().unwrap(),
        ])?;
        if !run.status.success() {
            return Err(format!("threads={threads}: {}", String::from_utf8_lossy(&run.stderr)));
        }
        reports.push(fs::read(out.join("ensemble_report.json")).map_err(|e| e.to_string())?);
    }
    let identical = reports.windows(2).all(|w| w[0] == w[1]);
    let msg = format!("threads {REPRO_THREADS:?}: {} report bytes each, identical = {identical}", reports[0].len());
    if identical {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Name, optional wall-clock limit, check.
type Criterion = (&'static str, Option<Duration>, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: Vec<Criterion> = vec![
        ("exact martingale", Some(C1_LIMIT), exact_martingale),
        ("Born rule", Some(C2_LIMIT), born_rule),
        ("entropy rate", None, entropy_rate),
        ("Chernoff exponent", Some(C4_LIMIT), chernoff),
        ("escape order of magnitude", Some(C5_LIMIT), escape),
        ("pointer identification", Some(C6_LIMIT), identification),
        ("collapse ubiquity", None, ubiquity),
        ("degeneracy negative control", None, degeneracy),
        ("track consistency", None, track_consistency),
        ("reproducibility", None, reproducibility),
    ];
    let mut failed = 0;
    for (k, (name, limit, f)) in criteria.into_iter().enumerate() {
        match timed(limit, f) {
            Ok(msg) => println!("PASS {:>2} {name}: {msg}", k + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {msg}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
