//! Green-Kubo conductivity estimation by two independent routes, disorder
//! averaging, scaling fits, the zero-noise insulator diagnostic, and the
//! variational lower bound for periodic chains.
//!
//! The Monte Carlo route evaluates the defining variance
//! `κ = (1/T²)·E[(1/√t ∫₀ᵗ 𝒥 ds)²]` over Gibbs-initialized noisy
//! trajectories. The resolvent route computes `μ_T(𝒥 · (z−L)⁻¹𝒥)/T²` per
//! disorder realization and extrapolates `z → 0`; since that limit is the
//! one-sided time integral of the current autocorrelation, the variance
//! growth rate is twice it, and the estimator reports `2·lim` so the two
//! routes share a scale.
//!
//! Every ensemble is evaluated as a parallel map into pre-indexed slots and
//! reduced by pairwise summation in index order, so results are
//! bit-identical at any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{
    build_phi, build_phi_effective, sample_disorder, AnharmonicPotential, BoundaryCondition,
    ChainState, CouplingMatrix, DisorderLaw, DisorderRealization, GibbsParams,
};
use crate::dynamics::{
    default_dt, gibbs_modes, simulate_anharmonic, simulate_harmonic_flip, NoiseParams, SimContext,
};
use crate::error::{Error, Result};
use crate::quadform::{
    apply_generator, build_current_form, build_current_form_mass, solve_resolvent, GibbsPairer,
    QuadraticForm, ResolventOptions,
};
use crate::rng;
use crate::spectral::{eigendecompose, EigenDecomposition};
use crate::stats;

// ───────────────────────── variants & results ─────────────────────────

/// The three chain families studied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ChainVariant {
    PinnedDisordered { nu_min: f64, nu_max: f64 },
    PinnedOrdered { nu: f64 },
    UnpinnedMassDisordered { mass_min: f64, mass_max: f64 },
}

impl ChainVariant {
    pub fn label(&self) -> &'static str {
        match self {
            ChainVariant::PinnedDisordered { .. } => "pinned-disordered",
            ChainVariant::PinnedOrdered { .. } => "pinned-ordered",
            ChainVariant::UnpinnedMassDisordered { .. } => "unpinned-mass-disordered",
        }
    }

    /// Realize draw `idx`; the ordered variant is deterministic.
    pub fn draw(&self, n: usize, idx: usize, seed: u64) -> Result<DisorderRealization> {
        let draw_seed = rng::derive_seed(seed, 0x0d15, idx as u64);
        match *self {
            ChainVariant::PinnedDisordered { nu_min, nu_max } => {
                sample_disorder(n, nu_min, nu_max, None, draw_seed)
            }
            ChainVariant::PinnedOrdered { nu } => Ok(DisorderRealization::ordered(n, nu)),
            ChainVariant::UnpinnedMassDisordered { mass_min, mass_max } => sample_disorder(
                n,
                0.0,
                0.0,
                Some(DisorderLaw::uniform(mass_min, mass_max)),
                draw_seed,
            ),
        }
    }
}

/// One realized chain in the coordinates where the machinery is unit-mass:
/// plain coordinates for pinned chains, mass-reduced ones otherwise.
pub struct RealizedChain {
    pub disorder: DisorderRealization,
    pub phi: CouplingMatrix,
    pub decomp: EigenDecomposition,
    pub current: QuadraticForm,
}

pub fn realize_chain(
    variant: ChainVariant,
    n: usize,
    bc: BoundaryCondition,
    idx: usize,
    seed: u64,
) -> Result<RealizedChain> {
    let disorder = variant.draw(n, idx, seed)?;
    let (phi, current) = match variant {
        ChainVariant::UnpinnedMassDisordered { .. } => (
            build_phi_effective(&disorder, bc),
            build_current_form_mass(&disorder, bc),
        ),
        _ => (build_phi(&disorder, bc), build_current_form(n, bc)),
    };
    let decomp = eigendecompose(&phi)?;
    Ok(RealizedChain {
        disorder,
        phi,
        decomp,
        current,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mc,
    Resolvent,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Mc => write!(f, "mc"),
            Method::Resolvent => write!(f, "resolvent"),
        }
    }
}

/// A conductivity value with uncertainty and the parameters it came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KappaEstimate {
    pub value: f64,
    pub stderr: f64,
    pub method: Method,
    pub n: usize,
    pub bc: BoundaryCondition,
    pub lambda: f64,
    pub lambda_prime: f64,
    pub temperature: f64,
    pub t_end: Option<f64>,
    pub z_sequence: Option<Vec<f64>>,
    pub n_disorder: usize,
    pub n_trajectories: usize,
}

// ───────────────────────── Monte Carlo estimator ─────────────────────────

#[derive(Debug, Clone)]
pub struct McKappaConfig {
    pub variant: ChainVariant,
    pub n: usize,
    pub bc: BoundaryCondition,
    pub temperature: f64,
    pub lambda: f64,
    pub lambda_prime: f64,
    pub potential: Option<AnharmonicPotential>,
    pub t_end: f64,
    /// Splitting step for `λ' > 0`; `None` picks [`default_dt`].
    pub dt: Option<f64>,
    pub n_disorder: usize,
    pub n_trajectories: usize,
}

impl McKappaConfig {
    fn validate(&self) -> Result<()> {
        if self.n_disorder == 0 || self.n_trajectories == 0 {
            return Err(Error::parameter("ensemble sizes must be positive"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::parameter("temperature must be positive"));
        }
        if self.lambda < 0.0 || self.lambda_prime < 0.0 {
            return Err(Error::parameter("noise rates must be nonnegative"));
        }
        if self.t_end <= 0.0 {
            return Err(Error::parameter("t_end must be positive"));
        }
        if self.lambda_prime > 0.0 && self.potential.is_none() {
            return Err(Error::parameter("lambda_prime > 0 requires a potential"));
        }
        if self.lambda_prime > 0.0
            && !matches!(
                self.variant,
                ChainVariant::PinnedDisordered { .. } | ChainVariant::PinnedOrdered { .. }
            )
        {
            return Err(Error::parameter(
                "anharmonic runs support pinned unit-mass chains only",
            ));
        }
        Ok(())
    }
}

/// Monte Carlo Green-Kubo estimate: for each disorder draw, average
/// `(1/√t ∫𝒥)²/T²` over Gibbs-initialized noisy trajectories; the
/// disorder-averaged mean is reported with a nested standard error
/// (between-disorder jackknife plus pooled within-disorder variance).
pub fn estimate_kappa_mc(cfg: &McKappaConfig, seed: u64) -> Result<KappaEstimate> {
    cfg.validate()?;
    let d = cfg.n_disorder;
    let r = cfg.n_trajectories;

    let chains: Vec<RealizedChain> = (0..d)
        .into_par_iter()
        .map(|idx| realize_chain(cfg.variant, cfg.n, cfg.bc, idx, seed))
        .collect::<Result<_>>()?;

    // v[d][r] = (I/√t)²/T², filled position-by-position.
    let values: Vec<Result<f64>> = (0..d * r)
        .into_par_iter()
        .map(|flat| {
            let di = flat / r;
            let ri = flat % r;
            let chain = &chains[di];
            let value = if cfg.lambda_prime == 0.0 {
                let ctx = SimContext {
                    decomp: chain.decomp.clone(),
                    current: crate::dynamics::ModeForm::from_site(&chain.current, &chain.decomp),
                };
                let mut grng = rng::gibbs_stream(seed, di as u64, ri as u64);
                let (qm, pm) = gibbs_modes(&ctx.decomp, cfg.temperature, &mut grng);
                let x0 = ctx.decomp.from_modes(&qm, &pm);
                let mut trng = rng::trajectory_stream(seed, di as u64, ri as u64);
                simulate_harmonic_flip(&x0, &ctx, cfg.lambda, cfg.t_end, &mut trng)?
                    .integrated_current
            } else {
                let potential = cfg.potential.as_ref().unwrap();
                let params = GibbsParams::anharmonic(
                    cfg.temperature,
                    cfg.lambda_prime,
                    *potential,
                );
                let mut grng = rng::gibbs_stream(seed, di as u64, ri as u64);
                let x0: ChainState = crate::chain::sample_gibbs(
                    &chain.phi,
                    None,
                    &params,
                    &mut grng,
                )?;
                let noise = NoiseParams {
                    lambda: cfg.lambda,
                    lambda_prime: cfg.lambda_prime,
                };
                let (_, nu_max) = chain.disorder.law.bounds();
                let dt = cfg.dt.unwrap_or_else(|| default_dt(nu_max));
                let mut trng = rng::trajectory_stream(seed, di as u64, ri as u64);
                simulate_anharmonic(
                    &x0,
                    &chain.disorder,
                    cfg.bc,
                    noise,
                    Some(potential),
                    dt,
                    cfg.t_end,
                    &mut trng,
                )?
                .integrated_current
            };
            Ok(value * value / (cfg.t_end * cfg.temperature * cfg.temperature))
        })
        .collect();
    let values: Vec<f64> = values.into_iter().collect::<Result<_>>()?;

    // Nested reduction in fixed order.
    let mut draw_means = Vec::with_capacity(d);
    let mut within = Vec::with_capacity(d);
    for di in 0..d {
        let slice = &values[di * r..(di + 1) * r];
        draw_means.push(stats::mean(slice));
        if r > 1 {
            within.push(stats::sample_variance(slice));
        }
    }
    let (value, between_se) = stats::jackknife_mean(&draw_means);
    let within_var = if within.is_empty() {
        0.0
    } else {
        stats::mean(&within) / (d as f64 * r as f64)
    };
    let stderr = (between_se * between_se + within_var).sqrt();

    Ok(KappaEstimate {
        value,
        stderr,
        method: Method::Mc,
        n: cfg.n,
        bc: cfg.bc,
        lambda: cfg.lambda,
        lambda_prime: cfg.lambda_prime,
        temperature: cfg.temperature,
        t_end: Some(cfg.t_end),
        z_sequence: None,
        n_disorder: d,
        n_trajectories: r,
    })
}

// ───────────────────────── resolvent estimator ─────────────────────────

/// `μ_T(𝒥 · (z−L)⁻¹𝒥)/T²` for one realization at one `z`.
pub fn resolvent_pairing(
    phi: &CouplingMatrix,
    decomp: &EigenDecomposition,
    current: &QuadraticForm,
    lambda: f64,
    z: f64,
    temperature: f64,
) -> Result<f64> {
    let u = solve_resolvent(phi, decomp, lambda, z, current, &ResolventOptions::default())?;
    let pairer = GibbsPairer::new(phi, temperature)?;
    Ok(pairer.pairing(current, &u) / (temperature * temperature))
}

/// Resolvent Green-Kubo estimate for a single disorder realization:
/// pairings along a decreasing `z` sequence, two-point Richardson
/// extrapolation to `z = 0` on the smallest two, doubled into the variance
/// normalization. The spread between the extrapolation and the smallest-`z`
/// value is the reported uncertainty.
pub fn estimate_kappa_resolvent(
    phi: &CouplingMatrix,
    decomp: &EigenDecomposition,
    current: &QuadraticForm,
    lambda: f64,
    z_sequence: &[f64],
    temperature: f64,
) -> Result<KappaEstimate> {
    if !(lambda > 0.0) {
        return Err(Error::parameter("the resolvent estimator needs λ > 0"));
    }
    if z_sequence.len() < 2 {
        return Err(Error::parameter("need at least two z values"));
    }
    if z_sequence.windows(2).any(|w| w[0] <= w[1]) || z_sequence.iter().any(|&z| z <= 0.0) {
        return Err(Error::parameter("z sequence must be positive decreasing"));
    }
    let mut pairings = Vec::with_capacity(z_sequence.len());
    for &z in z_sequence {
        pairings.push(resolvent_pairing(phi, decomp, current, lambda, z, temperature)?);
    }
    let m = pairings.len();
    let (z1, z2) = (z_sequence[m - 2], z_sequence[m - 1]);
    let (v1, v2) = (pairings[m - 2], pairings[m - 1]);
    let extrapolated = v2 + (v2 - v1) * z2 / (z1 - z2);
    // The Green-Kubo variance grows at twice the one-sided correlation-time
    // integral that the resolvent limit computes.
    let value = 2.0 * extrapolated;
    let stderr = 2.0 * (extrapolated - v2).abs();
    Ok(KappaEstimate {
        value,
        stderr,
        method: Method::Resolvent,
        n: phi.n(),
        bc: phi.bc,
        lambda,
        lambda_prime: 0.0,
        temperature,
        t_end: None,
        z_sequence: Some(z_sequence.to_vec()),
        n_disorder: 1,
        n_trajectories: 0,
    })
}

#[derive(Debug, Clone)]
pub struct ResolventKappaConfig {
    pub variant: ChainVariant,
    pub n: usize,
    pub bc: BoundaryCondition,
    pub temperature: f64,
    pub lambda: f64,
    /// `z = factor·λ`, positive decreasing; defaults to {0.1, 0.01, 0.001}.
    pub z_factors: Vec<f64>,
    pub n_disorder: usize,
}

pub fn default_z_factors() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3]
}

/// Disorder-averaged resolvent estimate; stderr combines the jackknife over
/// draws with the mean extrapolation spread.
pub fn estimate_kappa_resolvent_ensemble(
    cfg: &ResolventKappaConfig,
    seed: u64,
) -> Result<KappaEstimate> {
    if cfg.n_disorder == 0 {
        return Err(Error::parameter("ensemble size must be positive"));
    }
    let z_seq: Vec<f64> = cfg.z_factors.iter().map(|f| f * cfg.lambda).collect();
    let per_draw: Vec<Result<(f64, f64)>> = (0..cfg.n_disorder)
        .into_par_iter()
        .map(|idx| {
            let chain = realize_chain(cfg.variant, cfg.n, cfg.bc, idx, seed)?;
            let est = estimate_kappa_resolvent(
                &chain.phi,
                &chain.decomp,
                &chain.current,
                cfg.lambda,
                &z_seq,
                cfg.temperature,
            )?;
            Ok((est.value, est.stderr))
        })
        .collect();
    let per_draw: Vec<(f64, f64)> = per_draw.into_iter().collect::<Result<_>>()?;
    let values: Vec<f64> = per_draw.iter().map(|p| p.0).collect();
    let spreads: Vec<f64> = per_draw.iter().map(|p| p.1).collect();
    let (value, jack_se) = stats::jackknife_mean(&values);
    let spread = stats::mean(&spreads);
    let stderr = (jack_se * jack_se + spread * spread).sqrt();
    Ok(KappaEstimate {
        value,
        stderr,
        method: Method::Resolvent,
        n: cfg.n,
        bc: cfg.bc,
        lambda: cfg.lambda,
        lambda_prime: 0.0,
        temperature: cfg.temperature,
        t_end: None,
        z_sequence: Some(z_seq),
        n_disorder: cfg.n_disorder,
        n_trajectories: 0,
    })
}

// ───────────────────────── variational lower bound ─────────────────────────

/// The three Gaussian expectations behind the bound, per unit `a` (the
/// current term) and per `a²` (the quadratic costs), plus the optimized
/// value of `μ_T(J(z−L)⁻¹J)/(NT²)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LowerBound {
    pub bound: f64,
    pub a_opt: f64,
    /// `μ_T(J_N·f)/a`; equals `T²N` identically.
    pub j_term_per_a: f64,
    /// `μ_T(f·(z−λS)f)/a²`.
    pub s_term_per_a2: f64,
    /// `μ_T(A_har f·(z−λS)⁻¹A_har f)/a²`.
    pub a_term_per_a2: f64,
}

/// Variational lower bound on the resolvent pairing for periodic chains,
/// with the test function `f = a⟨q, ΦM p⟩`, `M` the antisymmetric
/// nearest-neighbor difference. `A_har f` is a pure off-diagonal momentum
/// form, so `(z−λS)⁻¹` acts on it as the scalar `1/(z+4λ)`, and the
/// optimization over `a` is a closed-form quadratic.
pub fn variational_lower_bound(
    phi: &CouplingMatrix,
    lambda: f64,
    z: f64,
    temperature: f64,
) -> Result<LowerBound> {
    if phi.bc != BoundaryCondition::Periodic {
        return Err(Error::parameter(
            "the variational bound is set up for periodic boundaries",
        ));
    }
    if !(lambda > 0.0) {
        return Err(Error::parameter("lambda must be positive"));
    }
    if z < 0.0 {
        return Err(Error::parameter("z must be nonnegative"));
    }
    let n = phi.n();
    let t = temperature;
    // M: antisymmetric cyclic difference; β_f = ΦM.
    let mut m = ndarray::Array2::<f64>::zeros((n, n));
    for i in 0..n {
        m[(i, (i + 1) % n)] = 1.0;
        m[(i, (i + n - 1) % n)] = -1.0;
    }
    let beta_f = phi.matrix.dot(&m);
    let f = QuadraticForm {
        alpha: ndarray::Array2::zeros((n, n)),
        beta: beta_f,
        gamma: ndarray::Array2::zeros((n, n)),
        c: 0.0,
    };
    let pairer = GibbsPairer::new(phi, t)?;
    let j_form = crate::quadform::total_current_form(n, BoundaryCondition::Periodic);
    let j_term_per_a = pairer.pairing(&j_form, &f);
    // f is a pure q·p form: S f = −2f, so (z−λS)f = (z+2λ)f.
    let s_term_per_a2 = (z + 2.0 * lambda) * pairer.pairing(&f, &f);
    // A_har f is momentum-only with zero diagonal: S-eigenvalue −4.
    let af = apply_generator(&f, phi, 0.0);
    let a_term_per_a2 = pairer.pairing(&af, &af) / (z + 4.0 * lambda);
    let denom = s_term_per_a2 + a_term_per_a2;
    let a_opt = j_term_per_a / denom;
    let bound = j_term_per_a * a_opt / (n as f64 * t * t);
    Ok(LowerBound {
        bound,
        a_opt,
        j_term_per_a,
        s_term_per_a2,
        a_term_per_a2,
    })
}

// ───────────────────────── scaling sweeps ─────────────────────────

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub variant: ChainVariant,
    pub n: usize,
    pub bc: BoundaryCondition,
    pub temperature: f64,
    pub lambdas: Vec<f64>,
    pub z_factors: Vec<f64>,
    pub n_disorder: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub estimates: Vec<KappaEstimate>,
    /// Least-squares slope of `log κ` against `log λ`.
    pub slope: f64,
    pub slope_stderr: f64,
}

/// Resolvent-method conductivity across a `λ` grid with a log-log slope fit.
pub fn scaling_sweep(cfg: &SweepConfig, seed: u64) -> Result<SweepResult> {
    if cfg.lambdas.len() < 2 {
        return Err(Error::parameter("lambda grid needs at least two points"));
    }
    let lo = cfg.lambdas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = cfg.lambdas.iter().cloned().fold(0.0f64, f64::max);
    if !(lo > 0.0) || hi / lo < 10.0f64.sqrt() {
        return Err(Error::parameter(
            "lambda grid must be positive and span at least half a decade",
        ));
    }
    let mut estimates = Vec::with_capacity(cfg.lambdas.len());
    for &lambda in &cfg.lambdas {
        let rcfg = ResolventKappaConfig {
            variant: cfg.variant,
            n: cfg.n,
            bc: cfg.bc,
            temperature: cfg.temperature,
            lambda,
            z_factors: cfg.z_factors.clone(),
            n_disorder: cfg.n_disorder,
        };
        estimates.push(estimate_kappa_resolvent_ensemble(&rcfg, seed)?);
    }
    let xs: Vec<f64> = cfg.lambdas.iter().map(|l| l.ln()).collect();
    let ys: Vec<f64> = estimates.iter().map(|e| e.value.ln()).collect();
    let fit = stats::fit_line(&xs, &ys);
    Ok(SweepResult {
        estimates,
        slope: fit.slope,
        slope_stderr: fit.slope_stderr,
    })
}

// ───────────────────────── insulator diagnostic ─────────────────────────

#[derive(Debug, Clone)]
pub struct InsulatorConfig {
    pub variant: ChainVariant,
    pub n: usize,
    pub bc: BoundaryCondition,
    pub temperature: f64,
    /// Must be zero: the diagnostic is about the unperturbed flow.
    pub lambda: f64,
    pub times: Vec<f64>,
    pub n_disorder: usize,
    pub n_trajectories: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InsulatorRow {
    pub t: f64,
    /// `E[(1/√t ∫₀ᵗ 𝒥)²]/T²`.
    pub variance: f64,
    pub stderr: f64,
    /// RMS of the raw integral `∫₀ᵗ 𝒥` over the ensemble.
    pub rms_integral: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InsulatorResult {
    pub rows: Vec<InsulatorRow>,
    /// Slope of `log variance` against `log t`.
    pub slope: f64,
    pub slope_stderr: f64,
    /// `max_t RMS(∫𝒥)(t) / RMS(∫𝒥)(t_min)`: stays O(1) when the integrated
    /// current is bounded in L², grows for ballistic transport.
    pub max_growth_ratio: f64,
}

/// Variance of the normalized integrated current against the horizon for
/// the noiseless flow. Closed-form integrals from a common initial state
/// give every horizon in one pass per trajectory.
pub fn insulator_decay(cfg: &InsulatorConfig, seed: u64) -> Result<InsulatorResult> {
    if cfg.lambda != 0.0 {
        return Err(Error::parameter(
            "the insulator diagnostic requires lambda = 0",
        ));
    }
    if cfg.times.len() < 2 || cfg.times.iter().any(|&t| t <= 0.0) {
        return Err(Error::parameter("need at least two positive horizons"));
    }
    if cfg.n_disorder == 0 || cfg.n_trajectories == 0 {
        return Err(Error::parameter("ensemble sizes must be positive"));
    }
    let d = cfg.n_disorder;
    let r = cfg.n_trajectories;
    let nt = cfg.times.len();

    let chains: Vec<RealizedChain> = (0..d)
        .into_par_iter()
        .map(|idx| realize_chain(cfg.variant, cfg.n, cfg.bc, idx, seed))
        .collect::<Result<_>>()?;

    // integrals[(di*r + ri)*nt + ti] = ∫₀^{t_i} 𝒥 ds for that trajectory.
    let integrals: Vec<Vec<f64>> = (0..d * r)
        .into_par_iter()
        .map(|flat| {
            let di = flat / r;
            let chain = &chains[di];
            let ri = flat % r;
            let mut grng = rng::gibbs_stream(seed, di as u64, ri as u64);
            let (qm, pm) = gibbs_modes(&chain.decomp, cfg.temperature, &mut grng);
            let current =
                crate::dynamics::ModeForm::from_site(&chain.current, &chain.decomp);
            cfg.times
                .iter()
                .map(|&t| {
                    crate::dynamics::integrate_mode_form(
                        &current,
                        &qm,
                        &pm,
                        &chain.decomp.omega,
                        t,
                    )
                })
                .collect()
        })
        .collect();

    let t2 = cfg.temperature * cfg.temperature;
    let mut rows = Vec::with_capacity(nt);
    for (ti, &t) in cfg.times.iter().enumerate() {
        let mut draw_means = Vec::with_capacity(d);
        let mut sq_all = Vec::with_capacity(d * r);
        for di in 0..d {
            let vals: Vec<f64> = (0..r)
                .map(|ri| {
                    let i = integrals[di * r + ri][ti];
                    i * i / (t * t2)
                })
                .collect();
            draw_means.push(stats::mean(&vals));
            sq_all.extend(integrals[(di * r)..(di * r + r)].iter().map(|row| {
                let i = row[ti];
                i * i
            }));
        }
        let (variance, se) = stats::jackknife_mean(&draw_means);
        let rms = (stats::mean(&sq_all)).sqrt();
        rows.push(InsulatorRow {
            t,
            variance,
            stderr: se,
            rms_integral: rms,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.t.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.variance.ln()).collect();
    let fit = stats::fit_line(&xs, &ys);
    let rms0 = rows[0].rms_integral;
    let max_growth_ratio = rows
        .iter()
        .map(|r| r.rms_integral / rms0)
        .fold(0.0f64, f64::max);
    Ok(InsulatorResult {
        rows,
        slope: fit.slope,
        slope_stderr: fit.slope_stderr,
        max_growth_ratio,
    })
}
