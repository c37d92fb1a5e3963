//! The experiment subcommands. Each one maps a configuration onto library
//! calls, emits CSV/JSON artifacts, and evaluates its assertion set; with
//! `--check` a failed assertion turns into a nonzero exit.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use flipchain::chain::BoundaryCondition;
use flipchain::conductivity::{
    estimate_kappa_mc, estimate_kappa_resolvent_ensemble, insulator_decay, realize_chain,
    resolvent_pairing, scaling_sweep, variational_lower_bound, InsulatorConfig, KappaEstimate,
    McKappaConfig, ResolventKappaConfig, SweepConfig,
};
use flipchain::quadform::{exponential_bound_stats, poisson_closed_form};
use flipchain::spectral::{
    eigen_recurrence_residual, mode_overlap_decay, participation_ratios,
};

use crate::artifacts::{f, Csv, Emitter};
use crate::config::{ExperimentConfig, VariantKind};

pub struct CommandRun {
    pub emitter: Emitter,
    /// Human-readable assertion failures; nonempty + `--check` ⇒ exit 1.
    pub failures: Vec<String>,
}

#[derive(Debug)]
pub enum CommandError {
    /// Bad configuration for this subcommand (exit 2).
    Usage(String),
    /// Numeric failure inside the library (exit 3).
    Numeric(String),
    Io(std::io::Error),
}

impl From<flipchain::Error> for CommandError {
    fn from(e: flipchain::Error) -> Self {
        match e {
            flipchain::Error::Parameter(m) => CommandError::Usage(m),
            other => CommandError::Numeric(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CommandError {
    fn from(e: std::io::Error) -> Self {
        CommandError::Io(e)
    }
}

type CmdResult = Result<CommandRun, CommandError>;

fn kappa_csv_columns() -> Vec<&'static str> {
    vec![
        "variant",
        "n",
        "bc",
        "lambda",
        "lambda_prime",
        "temperature",
        "method",
        "t_end",
        "z_sequence",
        "value",
        "stderr",
        "n_disorder",
        "n_trajectories",
    ]
}

fn kappa_csv_row(variant: &str, est: &KappaEstimate) -> Vec<String> {
    vec![
        variant.to_string(),
        est.n.to_string(),
        est.bc.to_string(),
        f(est.lambda),
        f(est.lambda_prime),
        f(est.temperature),
        est.method.to_string(),
        est.t_end.map(f).unwrap_or_default(),
        est.z_sequence
            .as_ref()
            .map(|zs| {
                zs.iter()
                    .map(|z| f(*z))
                    .collect::<Vec<_>>()
                    .join(";")
            })
            .unwrap_or_default(),
        f(est.value),
        f(est.stderr),
        est.n_disorder.to_string(),
        est.n_trajectories.to_string(),
    ]
}

// ───────────────────────── spectrum ─────────────────────────

pub fn spectrum(cfg: &ExperimentConfig, out: &Path, seed: u64) -> CmdResult {
    let n = cfg.experiment.n;
    let bc = cfg.experiment.bc;
    let variant = cfg.variant();
    let chains: Vec<_> = (0..cfg.ensemble.n_disorder)
        .into_par_iter()
        .map(|i| realize_chain(variant, n, bc, i, seed))
        .collect::<Result<_, _>>()?;

    let mut table = Csv::new("spectrum.csv", &["draw", "mode", "omega2", "participation"]);
    let mut failures = Vec::new();
    for (i, chain) in chains.iter().enumerate() {
        let pr = participation_ratios(&chain.decomp);
        for k in 0..n {
            table.row(&[
                i.to_string(),
                k.to_string(),
                f(chain.decomp.omega2[k]),
                f(pr[k]),
            ]);
        }
        // Eigenvalue band for the pinned (unit-mass) variants.
        if !matches!(variant, flipchain::conductivity::ChainVariant::UnpinnedMassDisordered { .. })
        {
            let lo = chain.disorder.nu.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = chain.disorder.nu.iter().cloned().fold(0.0f64, f64::max) + 4.0;
            for &w2 in chain.decomp.omega2.iter() {
                if w2 < lo - 1e-10 || w2 > hi + 1e-10 {
                    failures.push(format!("draw {i}: eigenvalue {w2} outside [{lo}, {hi}]"));
                }
            }
        }
        if bc == BoundaryCondition::Fixed {
            let res = eigen_recurrence_residual(&chain.decomp, &chain.disorder, bc)?;
            if res > 1e-9 {
                failures.push(format!("draw {i}: recurrence residual {res:.3e} > 1e-9"));
            }
        }
        if matches!(
            variant,
            flipchain::conductivity::ChainVariant::PinnedDisordered { .. }
        ) && chain.decomp.is_degenerate()
        {
            failures.push(format!("draw {i}: degenerate spectrum flagged"));
        }
    }
    let mut emitter = Emitter::new(out);
    emitter.add_csv(table);
    Ok(CommandRun { emitter, failures })
}

// ───────────────────────── localization ─────────────────────────

#[derive(Serialize)]
struct LocalizationSummary {
    rate: f64,
    rate_stderr: f64,
    window_lo: usize,
    window_hi: usize,
    n_draws: usize,
    mean_participation: f64,
}

pub fn localization(cfg: &ExperimentConfig, out: &Path, seed: u64) -> CmdResult {
    let n = cfg.experiment.n;
    let bc = cfg.experiment.bc;
    let variant = cfg.variant();
    let decomps: Vec<_> = (0..cfg.ensemble.n_disorder)
        .into_par_iter()
        .map(|i| realize_chain(variant, n, bc, i, seed).map(|c| c.decomp))
        .collect::<Result<_, _>>()?;
    let mean_pr = {
        let per_draw: Vec<f64> = decomps
            .iter()
            .map(|d| participation_ratios(d).mean().unwrap())
            .collect();
        flipchain::stats::mean(&per_draw)
    };
    let decay = mode_overlap_decay(&decomps)?;

    let mut table = Csv::new("overlap.csv", &["separation", "mean_overlap", "stderr"]);
    for (i, &sep) in decay.separation.iter().enumerate() {
        table.row(&[sep.to_string(), f(decay.mean[i]), f(decay.stderr[i])]);
    }
    let mut emitter = Emitter::new(out);
    emitter.add_csv(table);
    emitter.add_json(
        "localization.json",
        &LocalizationSummary {
            rate: decay.rate,
            rate_stderr: decay.rate_stderr,
            window_lo: decay.window.0,
            window_hi: decay.window.1,
            n_draws: decomps.len(),
            mean_participation: mean_pr,
        },
    );
    let mut failures = Vec::new();
    if !(decay.rate > 0.0) {
        failures.push(format!("overlap decay rate {} not positive", decay.rate));
    } else if decay.rate / decay.rate_stderr <= 5.0 {
        failures.push(format!(
            "overlap decay rate {} ± {} below 5σ significance",
            decay.rate, decay.rate_stderr
        ));
    }
    Ok(CommandRun { emitter, failures })
}

// ───────────────────────── poisson-check ─────────────────────────

pub fn poisson_check(cfg: &ExperimentConfig, out: &Path, seed: u64) -> CmdResult {
    if cfg.experiment.bc != BoundaryCondition::Fixed {
        return Err(CommandError::Usage(
            "poisson-check needs fixed boundaries".into(),
        ));
    }
    let n = cfg.experiment.n;
    let t = cfg.experiment.temperature;
    let variant = cfg.variant();
    let results: Vec<_> = (0..cfg.ensemble.n_disorder)
        .into_par_iter()
        .map(|i| -> Result<_, flipchain::Error> {
            let chain = realize_chain(variant, n, BoundaryCondition::Fixed, i, seed)?;
            let sol = poisson_closed_form(&chain.phi, &chain.decomp, t)?;
            // Commutator defect of the assembled blocks.
            let b = &chain.current.beta;
            let comm = chain.phi.matrix.dot(&sol.u.gamma) - sol.u.gamma.dot(&chain.phi.matrix);
            let target = 0.5 * (b - &b.t());
            let num = (&comm - &target).iter().map(|x| x * x).sum::<f64>().sqrt();
            let den = target.iter().map(|x| x * x).sum::<f64>().sqrt();
            Ok((sol.residual, sol.current_norm, num / den.max(1e-300)))
        })
        .collect::<Result<_, _>>()?;

    let mut table = Csv::new(
        "poisson.csv",
        &["draw", "residual", "current_norm", "residual_rel", "commutator_rel"],
    );
    let mut failures = Vec::new();
    for (i, (res, norm, comm)) in results.iter().enumerate() {
        table.row(&[
            i.to_string(),
            f(*res),
            f(*norm),
            f(res / norm),
            f(*comm),
        ]);
        if res / norm > 1e-8 {
            failures.push(format!("draw {i}: relative residual {:.3e} > 1e-8", res / norm));
        }
        if *comm > 1e-10 {
            failures.push(format!("draw {i}: commutator defect {comm:.3e} > 1e-10"));
        }
    }

    // Decay statistics of the per-bond blocks over the same ensemble.
    let solutions = (0..cfg.ensemble.n_disorder).into_par_iter().map(|i| {
        let chain = realize_chain(variant, n, BoundaryCondition::Fixed, i, seed).unwrap();
        poisson_closed_form(&chain.phi, &chain.decomp, t).unwrap()
    });
    let mut emitter = Emitter::new(out);
    if cfg.ensemble.n_disorder >= 20 {
        let solutions: Vec<_> = solutions.collect();
        let stats = exponential_bound_stats(solutions)?;
        let mut decay = Csv::new(
            "poisson_decay.csv",
            &["distance", "mean_gamma_sq", "mean_alpha_sq", "count"],
        );
        for (i, &d) in stats.distance.iter().enumerate() {
            decay.row(&[
                d.to_string(),
                f(stats.mean_gamma_sq[i]),
                f(stats.mean_alpha_sq[i]),
                stats.count[i].to_string(),
            ]);
        }
        emitter.add_csv(decay);
        #[derive(Serialize)]
        struct DecaySummary {
            gamma_rate: f64,
            gamma_rate_stderr: f64,
            alpha_rate: f64,
            alpha_rate_stderr: f64,
            max_abs_gamma_bulk: f64,
            window_lo: usize,
            window_hi: usize,
        }
        emitter.add_json(
            "poisson_decay.json",
            &DecaySummary {
                gamma_rate: stats.gamma_rate,
                gamma_rate_stderr: stats.gamma_rate_stderr,
                alpha_rate: stats.alpha_rate,
                alpha_rate_stderr: stats.alpha_rate_stderr,
                max_abs_gamma_bulk: stats.max_abs_gamma_bulk,
                window_lo: stats.window.0,
                window_hi: stats.window.1,
            },
        );
        if stats.max_abs_gamma_bulk > 1.0 + 1e-10 {
            failures.push(format!(
                "pathwise bound violated: max |γ(l)| = {}",
                stats.max_abs_gamma_bulk
            ));
        }
        if !(stats.gamma_rate > 0.0) {
            failures.push("gamma decay rate not positive".into());
        }
    }
    emitter.add_csv(table);
    Ok(CommandRun { emitter, failures })
}

// ───────────────────────── kappa-mc ─────────────────────────

pub fn kappa_mc(cfg: &ExperimentConfig, out: &Path, seed: u64) -> CmdResult {
    let lambda_prime = cfg.noise.lambda_prime;
    if lambda_prime > 0.0 {
        let min_lambda = cfg.noise.lambda.iter().cloned().fold(f64::INFINITY, f64::min);
        if lambda_prime > min_lambda {
            return Err(CommandError::Usage(
                "noise-dominant regime requires lambda_prime <= min(lambda)".into(),
            ));
        }
    }
    let mut table = Csv::new("kappa_mc.csv", &kappa_csv_columns());
    let mut estimates = Vec::new();
    for &lambda in &cfg.noise.lambda {
        let mcfg = McKappaConfig {
            variant: cfg.variant(),
            n: cfg.experiment.n,
            bc: cfg.experiment.bc,
            temperature: cfg.experiment.temperature,
            lambda,
            lambda_prime,
            potential: (lambda_prime > 0.0).then(flipchain::chain::AnharmonicPotential::default),
            t_end: cfg.schedule.t_end,
            dt: (cfg.schedule.dt > 0.0).then_some(cfg.schedule.dt),
            n_disorder: cfg.ensemble.n_disorder,
            n_trajectories: cfg.ensemble.n_trajectories,
        };
        let est = estimate_kappa_mc(&mcfg, seed)?;
        table.row(&kappa_csv_row(cfg.variant().label(), &est));
        estimates.push(est);
    }
    let mut failures = Vec::new();
    for est in &estimates {
        if !est.value.is_finite() {
            failures.push(format!("non-finite estimate at lambda = {}", est.lambda));
        }
    }
    // Noise-dominant regime: no superlinear blow-up across the grid.
    if lambda_prime > 0.0 && estimates.len() >= 2 {
        let first = &estimates[0];
        let last = &estimates[estimates.len() - 1];
        let (lo, hi) = if first.lambda < last.lambda {
            (first, last)
        } else {
            (last, first)
        };
        let ratio = hi.value / lo.value;
        let lambda_ratio = hi.lambda / lo.lambda;
        if ratio > 1.5 * lambda_ratio {
            failures.push(format!(
                "kappa ratio {ratio:.3} exceeds {:.3} (superlinear growth)",
                1.5 * lambda_ratio
            ));
        }
    }
    let mut emitter = Emitter::new(out);
    emitter.add_csv(table);
    Ok(CommandRun { emitter, failures })
}

// ───────────────────────── kappa-resolvent & scaling-sweep ─────────────────────────

#[derive(Serialize)]
struct SlopeSummary {
    variant: String,
    n: usize,
    bc: String,
    slope: f64,
    slope_stderr: f64,
}

pub fn kappa_resolvent(cfg: &ExperimentConfig, out: &Path, seed: u64) -> CmdResult {
    let mut table = Csv::new("kappa_resolvent.csv", &kappa_csv_columns());
    let mut values = Vec::new();
    for &lambda in &cfg.noise.lambda {
        if !(lambda > 0.0) {
            return Err(CommandError::Usage(
                "kappa-resolvent needs strictly positive lambda".into(),
            ));
        }
        let rcfg = ResolventKappaConfig {
            variant: cfg.variant(),
            n: cfg.experiment.n,
            bc: cfg.experiment.bc,
            temperature: cfg.experiment.temperature,
            lambda,
            z_factors: cfg.schedule.z_factors.clone(),
            n_disorder: cfg.ensemble.n_disorder,
        };
        let est = estimate_kappa_resolvent_ensemble(&rcfg, seed)?;
        table.row(&kappa_csv_row(cfg.variant().label(), &est));
        values.push((lambda, est.value));
    }
    let mut emitter = Emitter::new(out);
    emitter.add_csv(table);
    if values.len() >= 2 {
        let xs: Vec<f64> = values.iter().map(|(l, _)| l.ln()).collect();
        let ys: Vec<f64> = values.iter().map(|(_, v)| v.ln()).collect();
        let fit = flipchain::stats::fit_line(&xs, &ys);
        emitter.add_json(
            "kappa_resolvent.json",
            &SlopeSummary {
                variant: cfg.variant().label().to_string(),
                n: cfg.experiment.n,
                bc: cfg.experiment.bc.to_string(),
                slope: fit.slope,
                slope_stderr: fit.slope_stderr,
            },
        );
    }
    let failures = values
        .iter()
        .filter(|(_, v)| !v.is_finite() || *v <= 0.0)
        .map(|(l, v)| format!("bad estimate {v} at lambda = {l}"))
        .collect();
    Ok(CommandRun { emitter, failures })
}

pub fn sweep(cfg: &ExperimentConfig, out: &Path, seed: u64) -> CmdResult {
    let scfg = SweepConfig {
        variant: cfg.variant(),
        n: cfg.experiment.n,
        bc: cfg.experiment.bc,
        temperature: cfg.experiment.temperature,
        lambdas: cfg.noise.lambda.clone(),
        z_factors: cfg.schedule.z_factors.clone(),
        n_disorder: cfg.ensemble.n_disorder,
    };
    let result = scaling_sweep(&scfg, seed)?;
    let mut table = Csv::new("sweep.csv", &kappa_csv_columns());
    for est in &result.estimates {
        table.row(&kappa_csv_row(cfg.variant().label(), est));
    }
    let mut emitter = Emitter::new(out);
    emitter.add_csv(table);
    emitter.add_json(
        "sweep.json",
        &SlopeSummary {
            variant: cfg.variant().label().to_string(),
            n: cfg.experiment.n,
            bc: cfg.experiment.bc.to_string(),
            slope: result.slope,
            slope_stderr: result.slope_stderr,
        },
    );
    // Slope windows per variant; the mass-disorder scaling is a heuristic
    // claim and is reported without gating the exit code.
    let mut failures = Vec::new();
    match cfg.experiment.variant {
        VariantKind::PinnedDisordered => {
            if (result.slope - 1.0).abs() > 0.15 {
                failures.push(format!(
                    "slope {:.3} ± {:.3} outside 1.0 ± 0.15",
                    result.slope, result.slope_stderr
                ));
            }
        }
        VariantKind::PinnedOrdered => {
            if (result.slope + 1.0).abs() > 0.2 {
                failures.push(format!(
                    "slope {:.3} ± {:.3} outside −1.0 ± 0.2",
                    result.slope, result.slope_stderr
                ));
            }
        }
        VariantKind::UnpinnedMassDisordered => {
            let inside = result.slope > -0.7 && result.slope < -0.3;
            println!(
                "INFO unpinned-mass-disordered slope {:.3} ± {:.3} ({} the heuristic window (−0.7, −0.3); informational only)",
                result.slope,
                result.slope_stderr,
                if inside { "inside" } else { "outside" }
            );
        }
    }
    Ok(CommandRun { emitter, failures })
}

// ───────────────────────── lower-bound ─────────────────────────

pub fn lower_bound(cfg: &ExperimentConfig, out: &Path, seed: u64) -> CmdResult {
    if cfg.experiment.bc != BoundaryCondition::Periodic {
        return Err(CommandError::Usage(
            "lower-bound needs periodic boundaries".into(),
        ));
    }
    let n = cfg.experiment.n;
    let t = cfg.experiment.temperature;
    let variant = cfg.variant();
    let mut table = Csv::new(
        "lower_bound.csv",
        &[
            "lambda",
            "draw",
            "z",
            "bound",
            "a_opt",
            "j_term_per_a",
            "s_term_per_a2",
            "a_term_per_a2",
            "resolvent_pairing",
        ],
    );
    let mut failures = Vec::new();
    for &lambda in &cfg.noise.lambda {
        if !(lambda > 0.0) {
            return Err(CommandError::Usage("lower-bound needs lambda > 0".into()));
        }
        let z = cfg.schedule.z_factors.last().unwrap() * lambda;
        let rows: Vec<_> = (0..cfg.ensemble.n_disorder)
            .into_par_iter()
            .map(|i| -> Result<_, flipchain::Error> {
                let chain = realize_chain(variant, n, BoundaryCondition::Periodic, i, seed)?;
                let lb = variational_lower_bound(&chain.phi, lambda, z, t)?;
                let pairing =
                    resolvent_pairing(&chain.phi, &chain.decomp, &chain.current, lambda, z, t)?;
                Ok((lb, pairing))
            })
            .collect::<Result<_, _>>()?;
        for (i, (lb, pairing)) in rows.iter().enumerate() {
            table.row(&[
                f(lambda),
                i.to_string(),
                f(z),
                f(lb.bound),
                f(lb.a_opt),
                f(lb.j_term_per_a),
                f(lb.s_term_per_a2),
                f(lb.a_term_per_a2),
                f(*pairing),
            ]);
            let expect = t * t * n as f64;
            if (lb.j_term_per_a - expect).abs() > 1e-9 * expect {
                failures.push(format!(
                    "λ={lambda} draw {i}: current term {} differs from T²N = {expect}",
                    lb.j_term_per_a
                ));
            }
            if *pairing < lb.bound * (1.0 - 1e-9) {
                failures.push(format!(
                    "λ={lambda} draw {i}: resolvent {pairing} below bound {}",
                    lb.bound
                ));
            }
        }
    }
    let mut emitter = Emitter::new(out);
    emitter.add_csv(table);
    Ok(CommandRun { emitter, failures })
}

// ───────────────────────── insulator ─────────────────────────

#[derive(Serialize)]
struct InsulatorSummary {
    slope: f64,
    slope_stderr: f64,
    max_growth_ratio: f64,
}

pub fn insulator(cfg: &ExperimentConfig, out: &Path, seed: u64) -> CmdResult {
    if cfg.noise.lambda.iter().any(|&l| l != 0.0) || cfg.noise.lambda_prime != 0.0 {
        return Err(CommandError::Usage(
            "the insulator diagnostic requires lambda = lambda_prime = 0".into(),
        ));
    }
    let icfg = InsulatorConfig {
        variant: cfg.variant(),
        n: cfg.experiment.n,
        bc: cfg.experiment.bc,
        temperature: cfg.experiment.temperature,
        lambda: 0.0,
        times: cfg.schedule.times.clone(),
        n_disorder: cfg.ensemble.n_disorder,
        n_trajectories: cfg.ensemble.n_trajectories,
    };
    let result = insulator_decay(&icfg, seed)?;
    let mut table = Csv::new(
        "insulator.csv",
        &["t", "variance", "stderr", "rms_integral"],
    );
    for row in &result.rows {
        table.row(&[f(row.t), f(row.variance), f(row.stderr), f(row.rms_integral)]);
    }
    let mut emitter = Emitter::new(out);
    emitter.add_csv(table);
    emitter.add_json(
        "insulator.json",
        &InsulatorSummary {
            slope: result.slope,
            slope_stderr: result.slope_stderr,
            max_growth_ratio: result.max_growth_ratio,
        },
    );
    let mut failures = Vec::new();
    if (result.slope + 1.0).abs() > 0.2 {
        failures.push(format!(
            "variance slope {:.3} ± {:.3} outside −1.0 ± 0.2",
            result.slope, result.slope_stderr
        ));
    }
    if result.max_growth_ratio > 10.0 {
        failures.push(format!(
            "integrated current grew {:.2}× (bound is 10×)",
            result.max_growth_ratio
        ));
    }
    Ok(CommandRun { emitter, failures })
}

/// Dispatch by subcommand name; `run_started` is used for the wall clock.
pub fn dispatch(
    name: &str,
    cfg: &ExperimentConfig,
    out: &Path,
    seed: u64,
    threads: usize,
    check: bool,
    run_started: Instant,
) -> Result<Vec<String>, CommandError> {
    let run = match name {
        "spectrum" => spectrum(cfg, out, seed)?,
        "localization" => localization(cfg, out, seed)?,
        "poisson-check" => poisson_check(cfg, out, seed)?,
        "kappa-mc" => kappa_mc(cfg, out, seed)?,
        "kappa-resolvent" => kappa_resolvent(cfg, out, seed)?,
        "lower-bound" => lower_bound(cfg, out, seed)?,
        "insulator" => insulator(cfg, out, seed)?,
        "scaling-sweep" => sweep(cfg, out, seed)?,
        other => return Err(CommandError::Usage(format!("unknown subcommand {other}"))),
    };
    run.emitter.finish(
        name,
        &cfg.canonical(),
        seed,
        threads,
        check,
        run_started.elapsed().as_secs_f64(),
    )?;
    Ok(run.failures)
}
