use std::fmt::Write as _;
use std::fs;

use num_rational::BigRational;
use qnd_core::config::{ArithmeticMode, ConfigError, Resolved, RunConfig};
use qnd_core::ensemble::{run_ensemble, EnsembleReport};
use qnd_core::inference::replay_posterior;
use qnd_core::inference::{analyze_run, reconstruct_q0, InferenceError, ReplayAnalysis, DEFAULT_CONFIDENCE};
use qnd_core::info::{chernoff_exponent_cycle, rate_table_schedule, RateTable};
use qnd_core::kernel::{KernelError, MeasurementKernel};
use qnd_core::oracle::{
    enumerate, exact_conditional_event_probability, exact_event_probability, exact_expectation, parse_rational,
    ExactKernel, Field, OracleError, OutcomeTree,
};
use qnd_core::records::{plot_data_csv, read_outcome_csv, trajectory_csv};
use qnd_core::simplex::SimplexState;
use qnd_core::trajectory::{run_trajectory, TrajectoryError};
use qnd_core::unitary::CavityPreset;
use serde::Serialize;

use crate::output::{sha256_hex, unix_now, Outputs};
use crate::{Cli, Command, Common, Failure, Prior};

/// Float-mode martingale tolerance.
const FLOAT_MARTINGALE_TOL: f64 = 1e-10;

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<KernelError> for Failure {
    fn from(e: KernelError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<TrajectoryError> for Failure {
    fn from(e: TrajectoryError) -> Self {
        match e {
            TrajectoryError::InvalidConfig(_) => Failure::Invalid(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::TreeTooLarge { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<InferenceError> for Failure {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::NoCompatiblePointer | InferenceError::NoRuns | InferenceError::Kernel(_) => {
                Failure::Runtime(e.to_string())
            }
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let mut config = load_config(&cli.common)?;
    match &cli.command {
        Command::Validate => validate(&config, &cli.common),
        Command::Simulate { save_trajectories } => {
            if save_trajectories.is_some() {
                config.simulation.save_trajectories = *save_trajectories;
            }
            simulate(&config, &cli.common)
        }
        Command::Enumerate { depth, mode, path_cap, event_pointer, event_threshold } => {
            if let Some(d) = depth {
                config.enumeration.depth = *d;
            }
            if let Some(m) = mode {
                config.enumeration.mode = (*m).into();
            }
            if let Some(c) = path_cap {
                config.enumeration.path_cap = *c;
            }
            let event = match (event_pointer, event_threshold) {
                (Some(p), t) => Some((p.clone(), t.clone().unwrap_or_else(|| "0.05".into()))),
                _ => None,
            };
            enumerate_cmd(&config, &cli.common, event)
        }
        Command::Rates => rates(&config, &cli.common),
        Command::Identify { outcomes, prior } => identify(&config, &cli.common, outcomes, *prior),
    }
}

/// Config file or preset, with flag and environment overrides applied.
pub fn load_config(c: &Common) -> Result<RunConfig, Failure> {
    let mut config = match (&c.config, c.preset) {
        (Some(path), preset) => {
            let config =
                RunConfig::from_path(path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
            if preset.is_some() && config.cavity.is_none() {
                return Err(Failure::Invalid(format!(
                    "--preset cavity conflicts with the `{}` source in {}",
                    config.source_name(),
                    path.display()
                )));
            }
            config
        }
        (None, Some(_)) => RunConfig::cavity(CavityPreset::default()),
        (None, None) => return Err(Failure::Invalid("give --config <file> or --preset cavity".into())),
    };
    if c.theta.is_some() || c.phi_schedule.is_some() || c.n_max.is_some() {
        let cavity = config.cavity.as_mut().ok_or_else(|| {
            Failure::Invalid("--theta, --phi-schedule and --n-max apply only to the cavity preset".into())
        })?;
        if let Some(t) = c.theta {
            cavity.theta = t;
        }
        if let Some(p) = &c.phi_schedule {
            cavity.phi_schedule = p.clone();
        }
        if let Some(n) = c.n_max {
            cavity.n_max = n;
        }
    }
    let sim = &mut config.simulation;
    if let Some(s) = c.seed {
        sim.seed = s;
    }
    if let Some(n) = c.trajectories {
        sim.trajectories = n;
    }
    if let Some(m) = c.max_steps {
        sim.max_steps = m;
    }
    if let Some(t) = c.threads {
        sim.threads = t;
    }
    Ok(config)
}

fn source_label(config: &RunConfig, common: &Common) -> String {
    match &common.config {
        Some(p) => format!("{} ({})", p.display(), config.source_name()),
        None => "preset cavity".into(),
    }
}

fn fmt_pairs(pairs: &[(usize, usize)], labels: &[String]) -> String {
    pairs.iter().map(|&(a, b)| format!("({},{})", labels[a], labels[b])).collect::<Vec<_>>().join(" ")
}

fn rate_summary(table: &RateTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "  {:>8} {:>8} {:>14} {:>12} {:>10}", "gamma", "alpha", "S [nats]", "lambda*", "s*");
    let n = table.pointers.len();
    for g in 0..n {
        for a in (0..n).filter(|&a| a != g) {
            let e = &table.exponents[g][a];
            let s_star = e.s_star.map_or("-".into(), |s| format!("{s:.6}"));
            let flag = if e.degenerate {
                " degenerate"
            } else if e.boundary {
                " boundary"
            } else {
                ""
            };
            let _ = writeln!(
                out,
                "  {:>8} {:>8} {:>14.6} {:>12.6} {:>10}{flag}",
                table.pointers[g], table.pointers[a], table.entropy[g][a], e.lambda_star, s_star
            );
        }
    }
    out
}

fn validate(config: &RunConfig, common: &Common) -> Result<(), Failure> {
    let resolved = config.resolve()?;
    config.sim_config(&resolved)?;
    let schedule = &resolved.schedule;
    let base = schedule.base();
    let pointers = base.pointer_labels().to_vec();
    let n = schedule.n_pointers();
    println!("config: {}", source_label(config, common));
    println!("pointers: {n} [{}]", pointers.join(" "));
    println!("outcomes: {} [{}]", schedule.n_outcomes(), base.outcome_labels().join(" "));
    println!("schedule period: {}", schedule.period().map_or("aperiodic".into(), |p| p.to_string()));
    println!("columns: normalized");
    if let Some(models) = &resolved.models {
        println!("probe models: {} (dimension {}, unitaries checked)", models.len(), models[0].dim());
    }
    println!("exact rational entries: {}", if resolved.exact.is_some() { "yes" } else { "no" });
    let pairs = schedule.degenerate_pairs(base.degeneracy_tol())?;
    let total_pairs = n * (n - 1) / 2;
    if pairs.is_empty() {
        println!("degenerate pairs: none");
    } else {
        println!("degenerate pairs: {}", fmt_pairs(&pairs, &pointers));
    }
    let table = rate_table_schedule(schedule)?;
    println!("rate table:");
    print!("{}", rate_summary(&table));
    if total_pairs > 0 && pairs.len() == total_pairs {
        eprintln!("warning: fully degenerate kernel: no outcome distinguishes any pair of pointers");
        println!("status: WARNING (fully degenerate kernel)");
    } else if !pairs.is_empty() {
        eprintln!("warning: {} of {total_pairs} pointer pairs are degenerate", pairs.len());
        println!("status: WARNING (partially degenerate kernel)");
    } else {
        println!("status: OK");
    }
    Ok(())
}

fn simulate(config: &RunConfig, common: &Common) -> Result<(), Failure> {
    let started = unix_now();
    let resolved = config.resolve()?;
    let sim = config.sim_config(&resolved)?;
    let report = run_ensemble(&sim, config.simulation.threads)?;
    let base = sim.schedule.base();
    let (outcome_labels, pointer_labels) = (base.outcome_labels().to_vec(), base.pointer_labels().to_vec());

    let mut out = Outputs::create(&common.out_dir)?;
    let config_json = config.canonical_json();
    out.write("config.json", &config_json)?;
    out.write("ensemble_report.json", &report.to_json())?;
    let mut traces = Vec::new();
    for idx in 0..config.simulation.saved() {
        let t = run_trajectory(&sim, idx);
        // every step, regardless of the snapshot spacing
        let states = replay_posterior(&t.outcomes, &sim.schedule, &sim.q0)?;
        out.write(
            &format!("trajectories/trajectory_{idx:05}.csv"),
            &trajectory_csv(&states, &t.outcomes, &outcome_labels, &pointer_labels),
        )?;
        traces.push((idx, states));
    }
    out.write("plot_data.csv", &plot_data_csv(&traces, &pointer_labels))?;
    print_report(&report);
    println!("wrote {}", common.out_dir.display());
    out.finish("simulate", sha256_hex(config_json.as_bytes()), sim.seed, config.simulation.threads, started)
}

fn print_report(r: &EnsembleReport) {
    println!(
        "trajectories: {} (seed {}, max steps {}); uncollapsed {}, failed {}",
        r.n_trajectories, r.seed, r.max_steps, r.uncollapsed, r.failed
    );
    println!("  {:>8} {:>10} {:>8} {:>10} {:>10}  3-sigma", "pointer", "q0", "count", "frequency", "sigma");
    for b in &r.born {
        println!(
            "  {:>8} {:>10.6} {:>8} {:>10.6} {:>10.6}  {}",
            b.pointer,
            b.expected,
            b.count,
            b.frequency,
            b.sigma,
            if b.within_3sigma { "ok" } else { "OUTSIDE" }
        );
    }
    println!(
        "martingale: max |z| = {:.3} over {} grid steps: {}",
        r.martingale.max_abs_z,
        r.martingale.steps.len(),
        if r.martingale.within_3sigma { "PASS" } else { "FAIL" }
    );
    for rate in &r.rates {
        let expected = rate.expected_slope.map_or("-".into(), |s| format!("{s:.6}"));
        println!(
            "rate {}->{}: slope {:.6} ± {:.6} over {} trajectories (expected {expected})",
            rate.gamma, rate.alpha, rate.mean_slope, rate.stderr, rate.trajectories
        );
    }
    println!("frequency histograms within 3 sigma: {}/{}", r.frequency_within_band, r.frequency_tested);
    println!("basin escapes: {}", r.escapes.len());
}

fn rates(config: &RunConfig, common: &Common) -> Result<(), Failure> {
    let started = unix_now();
    let resolved = config.resolve()?;
    let table = rate_table_schedule(&resolved.schedule)?;
    let mut out = Outputs::create(&common.out_dir)?;
    let config_json = config.canonical_json();
    out.write("config.json", &config_json)?;
    out.write("rates.csv", &table.to_csv())?;
    print!("{}", rate_summary(&table));
    out.finish("rates", sha256_hex(config_json.as_bytes()), config.simulation.seed, config.simulation.threads, started)
}

#[derive(Serialize)]
struct ExpectationRow {
    pointer: String,
    expectation: String,
    q0: String,
    equal: bool,
}

#[derive(Serialize)]
struct EventReport {
    pointer: String,
    threshold: String,
    probability: String,
    reference_pointer: String,
    conditional_probability: String,
    lambda_star: f64,
    lambda_star_pow_depth: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct EnumerationReport {
    mode: &'static str,
    depth: usize,
    paths: usize,
    total_weight: String,
    expectations: Vec<ExpectationRow>,
    martingale_pass: bool,
    event: Option<EventReport>,
}

fn enumerate_cmd(config: &RunConfig, common: &Common, event: Option<(String, String)>) -> Result<(), Failure> {
    let started = unix_now();
    let resolved = config.resolve()?;
    let e = &config.enumeration;
    let exact = match (e.mode, &resolved.exact) {
        (ArithmeticMode::Float, _) => None,
        (_, Some(x)) => Some(x),
        (ArithmeticMode::Rational, None) => {
            return Err(Failure::Invalid(
                "rational mode needs every kernel and q0 entry to be an exact rational summing to 1".into(),
            ))
        }
        (ArithmeticMode::Auto, None) => {
            log::info!("kernel entries are not exact rationals; enumerating in floating point");
            None
        }
    };
    let kernels = resolved.schedule.kernels_over_period()?;
    let base = resolved.schedule.base();
    let pointers = base.pointer_labels().to_vec();
    let event = event
        .map(|(p, t)| {
            let alpha = base.pointer_index(&p).ok_or_else(|| Failure::Invalid(format!("unknown pointer {p:?}")))?;
            let eps = parse_rational(&t)?;
            Ok::<_, Failure>((alpha, eps, t))
        })
        .transpose()?;

    let report = match exact {
        Some(x) => {
            let tree = enumerate(&x.kernels, &x.q0, e.depth, e.path_cap)?;
            let event = event.map(|(alpha, eps, text)| (alpha, move |q: &[BigRational]| q[alpha] >= eps, text));
            build_report("rational", &tree, &x.q0, &pointers, &kernels, event, |a, b| a == b)
        }
        None => {
            let float: Vec<ExactKernel<f64>> = kernels.iter().map(|k| ExactKernel::from_kernel(k)).collect();
            let tree = enumerate(&float, &resolved.q0.q, e.depth, e.path_cap)?;
            let event = event.map(|(alpha, eps, text)| {
                let eps = Field::to_f64(&eps);
                (alpha, move |q: &[f64]| q[alpha] >= eps, text)
            });
            build_report("float", &tree, &resolved.q0.q, &pointers, &kernels, event, |a, b| {
                (a - b).abs() <= FLOAT_MARTINGALE_TOL
            })
        }
    };

    let (report, tree_csv) = report;
    let mut out = Outputs::create(&common.out_dir)?;
    let config_json = config.canonical_json();
    out.write("config.json", &config_json)?;
    out.write("enumeration.csv", &tree_csv)?;
    out.write("enumeration_report.json", &serde_json::to_string_pretty(&report).expect("report serializes"))?;

    println!("mode: {}, depth {}, paths {}", report.mode, report.depth, report.paths);
    println!("total weight: {}", report.total_weight);
    for row in &report.expectations {
        println!(
            "E[q_{}({})] = {}   q0 = {}   {}",
            report.depth,
            row.pointer,
            row.expectation,
            row.q0,
            if row.equal { "equal" } else { "DIFFERENT" }
        );
    }
    println!("martingale: {}", if report.martingale_pass { "PASS" } else { "FAIL" });
    if let Some(ev) = &report.event {
        println!("P[q_{}({}) >= {}] = {}", report.depth, ev.pointer, ev.threshold, ev.probability);
        println!(
            "given pointer {}: {}; lambda*^{} = {:.6} (ratio {:.4})",
            ev.reference_pointer, ev.conditional_probability, report.depth, ev.lambda_star_pow_depth, ev.ratio
        );
    }
    out.finish(
        "enumerate",
        sha256_hex(config_json.as_bytes()),
        config.simulation.seed,
        config.simulation.threads,
        started,
    )
}

#[allow(clippy::type_complexity)]
fn build_report<T: Field, P: Fn(&[T]) -> bool>(
    mode: &'static str,
    tree: &OutcomeTree<T>,
    q0: &[T],
    pointers: &[String],
    kernels: &[std::borrow::Cow<'_, MeasurementKernel>],
    event: Option<(usize, P, String)>,
    equal: impl Fn(&T, &T) -> bool,
) -> (EnumerationReport, String) {
    let expectations: Vec<ExpectationRow> = q0
        .iter()
        .enumerate()
        .map(|(a, q)| {
            let e = exact_expectation(tree, a);
            ExpectationRow {
                pointer: pointers[a].clone(),
                equal: equal(&e, q),
                expectation: e.to_string(),
                q0: q.to_string(),
            }
        })
        .collect();
    let martingale_pass = expectations.iter().all(|r| r.equal) && equal(&tree.total_weight(), &T::one());
    let event = event.map(|(alpha, predicate, threshold)| {
        let probability = exact_event_probability(tree, &predicate);
        // reference pointer: the most likely other pointer under q0
        let gamma = (0..q0.len())
            .filter(|&g| g != alpha)
            .max_by(|&a, &b| q0[a].to_f64().total_cmp(&q0[b].to_f64()).then(b.cmp(&a)))
            .unwrap_or(alpha);
        let conditional = if q0[gamma].is_zero() {
            String::from("-")
        } else {
            exact_conditional_event_probability(tree, gamma, &q0[gamma], &predicate).to_string()
        };
        let refs: Vec<&MeasurementKernel> = kernels.iter().map(|k| k.as_ref()).collect();
        let lambda_star = chernoff_exponent_cycle(&refs, gamma, alpha).lambda_star;
        let pow = lambda_star.powi(tree.depth as i32);
        EventReport {
            pointer: pointers[alpha].clone(),
            threshold,
            ratio: pow / probability.to_f64(),
            probability: probability.to_string(),
            reference_pointer: pointers[gamma].clone(),
            conditional_probability: conditional,
            lambda_star,
            lambda_star_pow_depth: pow,
        }
    });
    let report = EnumerationReport {
        mode,
        depth: tree.depth,
        paths: tree.paths.len(),
        total_weight: tree.total_weight().to_string(),
        expectations,
        martingale_pass,
        event,
    };
    let outcome_labels = kernels[0].outcome_labels().to_vec();
    (report, tree.to_csv(&outcome_labels, pointers))
}

#[derive(Serialize)]
struct IdentifiedRun {
    file: String,
    pointer: String,
    analysis: ReplayAnalysis,
}

#[derive(Serialize)]
struct IdentifyReport {
    prior: Vec<f64>,
    runs: Vec<IdentifiedRun>,
    reconstruction: qnd_core::inference::ReconstructionResult,
}

fn identify(config: &RunConfig, common: &Common, files: &[std::path::PathBuf], prior: Prior) -> Result<(), Failure> {
    let started = unix_now();
    let resolved: Resolved = config.resolve()?;
    let schedule = &resolved.schedule;
    let base = schedule.base();
    let (outcome_labels, pointer_labels) = (base.outcome_labels().to_vec(), base.pointer_labels().to_vec());
    let mut q_prior = match prior {
        Prior::Uniform => SimplexState::uniform(schedule.n_pointers()),
        Prior::Config => resolved.q0.clone(),
    };

    let mut out = Outputs::create(&common.out_dir)?;
    let config_json = config.canonical_json();
    out.write("config.json", &config_json)?;
    let mut runs = Vec::new();
    for (k, path) in files.iter().enumerate() {
        let text =
            fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))?;
        let record = read_outcome_csv(&text, &outcome_labels)
            .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
        q_prior.step = record.start_step;
        let (states, analysis) = analyze_run(&record.outcomes, schedule, &q_prior)
            .map_err(|e| Failure::from(e).context(&path.display().to_string()))?;
        let id = &analysis.identification;
        println!(
            "{}: pointer {} margin {:.6}{} ({} outcomes, posterior {} at {:.6})",
            path.display(),
            pointer_labels[id.pointer],
            id.margin,
            if id.tie { " TIE" } else { "" },
            analysis.steps,
            pointer_labels[analysis.posterior_pointer],
            analysis.posterior_max
        );
        out.write(
            &format!("replay/replay_{k:04}.csv"),
            &trajectory_csv(&states, &record.outcomes, &outcome_labels, &pointer_labels),
        )?;
        runs.push(IdentifiedRun {
            file: path.display().to_string(),
            pointer: pointer_labels[id.pointer].clone(),
            analysis,
        });
    }
    let ids: Vec<_> = runs.iter().map(|r| r.analysis.identification.clone()).collect();
    let reconstruction = reconstruct_q0(&ids, schedule.n_pointers(), DEFAULT_CONFIDENCE)?;
    if runs.len() > 1 {
        println!("reconstructed q0 from {} runs ({:.2}% joint intervals):", runs.len(), DEFAULT_CONFIDENCE * 100.0);
        for (a, label) in pointer_labels.iter().enumerate() {
            let (lo, hi) = reconstruction.intervals[a];
            println!("  {label:>8} {:.4}  [{lo:.4}, {hi:.4}]", reconstruction.q_hat[a]);
        }
    }
    let report = IdentifyReport { prior: q_prior.q.clone(), runs, reconstruction };
    out.write("identify_report.json", &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    out.finish(
        "identify",
        sha256_hex(config_json.as_bytes()),
        config.simulation.seed,
        config.simulation.threads,
        started,
    )
}

impl Failure {
    fn context(self, what: &str) -> Self {
        match self {
            Failure::Invalid(m) => Failure::Invalid(format!("{what}: {m}")),
            Failure::Runtime(m) => Failure::Runtime(format!("{what}: {m}")),
        }
    }
}
