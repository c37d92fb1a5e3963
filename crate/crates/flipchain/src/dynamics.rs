//! The full Markov process: exact harmonic flow interrupted by Poisson
//! momentum flips, and a splitting integrator for the anharmonic chain.
//!
//! For `λ' = 0` the dynamics is simulated without time-discretization error:
//! between flips the state advances by the exact mode flow, and the time
//! integral of any quadratic observable over an inter-flip interval is a
//! closed-form combination of `∫cos·cos`, `∫cos·sin`, `∫sin·sin` at the mode
//! frequencies. Flips are scheduled by a single global exponential clock of
//! rate `Nλ` with a uniform site choice, which is equal in law to N
//! independent site clocks.
//!
//! For `λ' > 0` a Strang-split velocity-Verlet step handles the smooth part
//! and per-site flips with probability `1 − e^{−λ·dt}` handle the noise; the
//! current integral is accumulated by the trapezoid rule, consistent with
//! the O(dt²) integrator order.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::chain::{
    anharmonic_gradient, AnharmonicPotential, BoundaryCondition, ChainState,
    DisorderRealization,
};
use crate::error::{Error, Result};
use crate::quadform::QuadraticForm;
use crate::spectral::{propagate_modes, EigenDecomposition};

// ───────────────────────── parameters & results ─────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct NoiseParams {
    /// Flip rate per site.
    pub lambda: f64,
    /// Anharmonic coupling strength.
    pub lambda_prime: f64,
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || self.lambda_prime < 0.0 {
            return Err(Error::parameter("noise rates must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryResult {
    pub final_state: ChainState,
    /// `∫₀ᵗ 𝒥_N(X^s) ds`.
    pub integrated_current: f64,
    pub flip_count: u64,
    pub elapsed: f64,
}

// ───────────────────── quadratics in mode coordinates ─────────────────────

/// A quadratic observable expressed in the eigenmode coordinates
/// `(Q, P) = (Ξᵀq, Ξᵀp)`; absent blocks are skipped by the integrator.
#[derive(Debug, Clone)]
pub struct ModeForm {
    pub alpha: Option<Array2<f64>>,
    pub beta: Option<Array2<f64>>,
    pub gamma: Option<Array2<f64>>,
}

impl ModeForm {
    /// Conjugate a site-basis form into mode coordinates, dropping blocks
    /// that are identically zero.
    pub fn from_site(form: &QuadraticForm, decomp: &EigenDecomposition) -> Self {
        let xi = &decomp.xi;
        let lift = |m: &Array2<f64>| -> Option<Array2<f64>> {
            if m.iter().all(|&x| x == 0.0) {
                None
            } else {
                Some(xi.t().dot(m).dot(xi))
            }
        };
        ModeForm {
            alpha: lift(&form.alpha),
            beta: lift(&form.beta),
            gamma: lift(&form.gamma),
        }
    }

    pub fn evaluate(&self, q_modes: &Array1<f64>, p_modes: &Array1<f64>) -> f64 {
        let mut v = 0.0;
        if let Some(a) = &self.alpha {
            v += q_modes.dot(&a.dot(q_modes));
        }
        if let Some(b) = &self.beta {
            v += q_modes.dot(&b.dot(p_modes));
        }
        if let Some(g) = &self.gamma {
            v += p_modes.dot(&g.dot(p_modes));
        }
        v
    }
}

/// Relative frequency gap below which the equal-frequency limit formulas
/// replace the generic ones (removable singularity).
const EQUAL_FREQ_RTOL: f64 = 1e-8;

/// `∫₀^τ u(Q(s), P(s)) ds` for the harmonic mode flow started at `(Q, P)`.
///
/// Each pair `(j,k)` contributes Laplace-type primitives
/// `∫cos ω_j s·cos ω_k s`, `∫cos·sin`, `∫sin·sin`; the difference-frequency
/// kernels `sin(dτ)/d` and `(1−cos(dτ))/d` switch to their `d → 0` limits
/// when `|ω_j − ω_k| < 1e−8 (ω_j + ω_k)`.
pub fn integrate_mode_form(
    form: &ModeForm,
    q_modes: &Array1<f64>,
    p_modes: &Array1<f64>,
    omega: &Array1<f64>,
    tau: f64,
) -> f64 {
    let n = omega.len();
    if tau == 0.0 {
        return 0.0;
    }
    // Per-mode sin/cos at time τ; all pair frequencies come from these.
    let mut sc = Vec::with_capacity(n);
    for k in 0..n {
        sc.push((omega[k] * tau).sin_cos());
    }
    let mut total = 0.0;
    for j in 0..n {
        let (sj, cj) = sc[j];
        let wj = omega[j];
        for k in 0..n {
            let aw = form.alpha.as_ref().map_or(0.0, |m| m[(j, k)]);
            let bw = form.beta.as_ref().map_or(0.0, |m| m[(j, k)]);
            let gw = form.gamma.as_ref().map_or(0.0, |m| m[(j, k)]);
            if aw == 0.0 && bw == 0.0 && gw == 0.0 {
                continue;
            }
            let (sk, ck) = sc[k];
            let wk = omega[k];
            let dp = wj + wk;
            let dm = wj - wk;
            // sin/cos of (ω_j ± ω_k)τ via product formulas.
            let sin_p = sj * ck + cj * sk;
            let cos_p = cj * ck - sj * sk;
            let ksin_p = sin_p / dp;
            let kcos_p = (1.0 - cos_p) / dp;
            let (ksin_m, kcos_m) = if dm.abs() < EQUAL_FREQ_RTOL * dp {
                (tau, 0.0)
            } else {
                let sin_m = sj * ck - cj * sk;
                let cos_m = cj * ck + sj * sk;
                (sin_m / dm, (1.0 - cos_m) / dm)
            };
            let icc = 0.5 * (ksin_m + ksin_p);
            let iss = 0.5 * (ksin_m - ksin_p);
            let ics = 0.5 * (kcos_p - kcos_m);
            let isc = 0.5 * (kcos_p + kcos_m);

            let qj = q_modes[j];
            let qk = q_modes[k];
            let pj = p_modes[j];
            let pk = p_modes[k];
            if aw != 0.0 {
                let int_qq = qj * qk * icc
                    + qj * pk / wk * ics
                    + pj / wj * qk * isc
                    + pj * pk / (wj * wk) * iss;
                total += aw * int_qq;
            }
            if bw != 0.0 {
                let int_qp = -wk * qj * qk * ics + qj * pk * icc - (wk / wj) * pj * qk * iss
                    + pj * pk / wj * isc;
                total += bw * int_qp;
            }
            if gw != 0.0 {
                let int_pp = wj * wk * qj * qk * iss - wj * qj * pk * isc - wk * pj * qk * ics
                    + pj * pk * icc;
                total += gw * int_pp;
            }
        }
    }
    total
}

// ───────────────────────── simulation context ─────────────────────────

/// Per-disorder shared data for event-driven runs: the eigendecomposition
/// and the rescaled current in mode coordinates. Read-only across threads.
pub struct SimContext {
    pub decomp: EigenDecomposition,
    pub current: ModeForm,
}

impl SimContext {
    /// Context for the pinned (unit-mass) chain.
    pub fn new(decomp: EigenDecomposition, bc: BoundaryCondition) -> Self {
        let n = decomp.n();
        let current = ModeForm::from_site(&crate::quadform::build_current_form(n, bc), &decomp);
        SimContext { decomp, current }
    }

    /// Context in mass-reduced coordinates: decomposition of
    /// `M^{-1/2}ΦM^{-1/2}` and the matching current form. States handed to
    /// the simulators must already be in tilde coordinates.
    pub fn new_mass(
        decomp_effective: EigenDecomposition,
        disorder: &DisorderRealization,
        bc: BoundaryCondition,
    ) -> Self {
        let current = ModeForm::from_site(
            &crate::quadform::build_current_form_mass(disorder, bc),
            &decomp_effective,
        );
        SimContext {
            decomp: decomp_effective,
            current,
        }
    }

    pub fn n(&self) -> usize {
        self.decomp.n()
    }
}

/// Draw `(Q, P)` directly from the Gibbs measure in mode coordinates:
/// independent Gaussians with `Var Q_k = T/ω²_k`, `Var P_k = T`.
pub fn gibbs_modes(
    decomp: &EigenDecomposition,
    temperature: f64,
    rng: &mut impl Rng,
) -> (Array1<f64>, Array1<f64>) {
    let n = decomp.n();
    let mut q = Array1::zeros(n);
    let mut p = Array1::zeros(n);
    for k in 0..n {
        let gq: f64 = rng.sample(StandardNormal);
        let gp: f64 = rng.sample(StandardNormal);
        q[k] = (temperature.sqrt() / decomp.omega[k]) * gq;
        p[k] = temperature.sqrt() * gp;
    }
    (q, p)
}

// ───────────────────── event-driven flip dynamics ─────────────────────

/// Event-driven simulation of the harmonic chain under momentum flips, with
/// the integrals of the current and of any extra mode-coordinate forms
/// accumulated in closed form over every inter-event interval.
///
/// Waiting times are `Exp(Nλ)`; at each event a uniformly chosen site `j`
/// has `p_j ↦ −p_j`. The flow between events is exact, so total energy is
/// conserved to roundoff over the whole run.
pub fn simulate_harmonic_flip_tracked(
    x0: &ChainState,
    ctx: &SimContext,
    extra_forms: &[&ModeForm],
    lambda: f64,
    t_end: f64,
    rng: &mut impl Rng,
) -> Result<(TrajectoryResult, Vec<f64>)> {
    if t_end < 0.0 {
        return Err(Error::parameter("t_end must be nonnegative"));
    }
    if lambda < 0.0 {
        return Err(Error::parameter("lambda must be nonnegative"));
    }
    let n = ctx.n();
    if x0.len() != n {
        return Err(Error::parameter("state size mismatch"));
    }
    let decomp = &ctx.decomp;
    let (mut q_modes, mut p_modes) = decomp.to_modes(x0);
    let mut current_integral = 0.0;
    let mut extra = vec![0.0; extra_forms.len()];
    let mut t = 0.0;
    let mut flips: u64 = 0;
    let total_rate = lambda * n as f64;

    loop {
        let wait = if total_rate > 0.0 {
            // Exp(Nλ) waiting time by inversion; (0,1] avoids ln(0).
            let u: f64 = 1.0 - rng.random::<f64>();
            -u.ln() / total_rate
        } else {
            f64::INFINITY
        };
        let remaining = t_end - t;
        let step = wait.min(remaining);
        current_integral +=
            integrate_mode_form(&ctx.current, &q_modes, &p_modes, &decomp.omega, step);
        for (acc, form) in extra.iter_mut().zip(extra_forms) {
            *acc += integrate_mode_form(form, &q_modes, &p_modes, &decomp.omega, step);
        }
        propagate_modes(&mut q_modes, &mut p_modes, &decomp.omega, step);
        if wait >= remaining {
            break;
        }
        t += wait;
        // Flip a uniformly chosen site: p ↦ p − 2p_j e_j, i.e. in mode
        // coordinates P ↦ P − 2p_j Ξ_{j,·}.
        let j = rng.random_range(0..n);
        let mut pj = 0.0;
        for k in 0..n {
            pj += decomp.xi[(j, k)] * p_modes[k];
        }
        for k in 0..n {
            p_modes[k] -= 2.0 * pj * decomp.xi[(j, k)];
        }
        flips += 1;
    }

    let final_state = decomp.from_modes(&q_modes, &p_modes);
    Ok((
        TrajectoryResult {
            final_state,
            integrated_current: current_integral,
            flip_count: flips,
            elapsed: t_end,
        },
        extra,
    ))
}

/// [`simulate_harmonic_flip_tracked`] without extra observables.
pub fn simulate_harmonic_flip(
    x0: &ChainState,
    ctx: &SimContext,
    lambda: f64,
    t_end: f64,
    rng: &mut impl Rng,
) -> Result<TrajectoryResult> {
    simulate_harmonic_flip_tracked(x0, ctx, &[], lambda, t_end, rng).map(|(r, _)| r)
}

/// `∫₀^τ 𝒥_N(X^s) ds` along the pure harmonic flow from `state`.
pub fn integrate_current_interval(
    state: &ChainState,
    decomp: &EigenDecomposition,
    bc: BoundaryCondition,
    tau: f64,
) -> Result<f64> {
    if tau < 0.0 {
        return Err(Error::parameter("tau must be nonnegative"));
    }
    let current =
        ModeForm::from_site(&crate::quadform::build_current_form(state.len(), bc), decomp);
    let (q_modes, p_modes) = decomp.to_modes(state);
    Ok(integrate_mode_form(
        &current,
        &q_modes,
        &p_modes,
        &decomp.omega,
        tau,
    ))
}

// ───────────────────── splitting integrator (λ' ≥ 0) ─────────────────────

/// Instantaneous rescaled current `𝒥_N` evaluated in O(N) (unit masses).
fn rescaled_current_site(
    q: &Array1<f64>,
    p: &Array1<f64>,
    bc: BoundaryCondition,
    lambda_prime: f64,
    potential: Option<&AnharmonicPotential>,
) -> f64 {
    let n = q.len();
    let mut j_total = 0.0;
    for k in 0..n - 1 {
        let vsum = p[k] + p[k + 1];
        let dq = q[k] - q[k + 1];
        j_total += 0.5 * vsum * dq;
        if lambda_prime > 0.0 {
            j_total += lambda_prime * 0.5 * vsum * potential.unwrap().v_prime(dq);
        }
    }
    if bc == BoundaryCondition::Periodic {
        let vsum = p[n - 1] + p[0];
        let dq = q[n - 1] - q[0];
        j_total += 0.5 * vsum * dq;
        if lambda_prime > 0.0 {
            j_total += lambda_prime * 0.5 * vsum * potential.unwrap().v_prime(dq);
        }
    }
    j_total / (n as f64).sqrt()
}

/// Default time step: the fastest mode (`ω² ≤ ν₊ + 4`) is resolved by at
/// least ~60 steps per period.
pub fn default_dt(nu_plus: f64) -> f64 {
    1e-2 / (nu_plus + 4.0).sqrt().max(1.0)
}

/// Strang-split trajectory of the full dynamics: velocity-Verlet for the
/// deterministic force `−Φq − λ'∇H_anh`, then per-site flips with
/// probability `1 − e^{−λ·dt}`. The step actually used is `t_end/round(t_end/dt)`
/// so the horizon is hit exactly; the current integral is trapezoidal.
/// Deterministic given the generator state and `dt`. Unit masses.
pub fn simulate_anharmonic(
    x0: &ChainState,
    disorder: &DisorderRealization,
    bc: BoundaryCondition,
    noise: NoiseParams,
    potential: Option<&AnharmonicPotential>,
    dt: f64,
    t_end: f64,
    rng: &mut impl Rng,
) -> Result<TrajectoryResult> {
    noise.validate()?;
    if !(dt > 0.0) {
        return Err(Error::parameter("dt must be positive"));
    }
    if t_end < 0.0 {
        return Err(Error::parameter("t_end must be nonnegative"));
    }
    if noise.lambda_prime > 0.0 && potential.is_none() {
        return Err(Error::parameter("lambda_prime > 0 requires a potential"));
    }
    if disorder.masses.is_some() {
        return Err(Error::parameter(
            "the splitting integrator assumes unit masses",
        ));
    }
    let n = x0.len();
    let phi = crate::chain::build_phi(disorder, bc);
    let lp = noise.lambda_prime;

    let force = |q: &Array1<f64>| -> Array1<f64> {
        let mut f = -phi.matvec(q);
        if lp > 0.0 {
            let g = anharmonic_gradient(q, bc, potential.unwrap());
            f = f - &(lp * &g);
        }
        f
    };

    let steps = (t_end / dt).round().max(1.0) as usize;
    let h = t_end / steps as f64;
    let p_flip = if noise.lambda > 0.0 {
        1.0 - (-noise.lambda * h).exp()
    } else {
        0.0
    };

    let mut q = x0.q.clone();
    let mut p = x0.p.clone();
    let mut f = force(&q);
    let mut flips: u64 = 0;
    let mut current_integral = 0.0;
    let mut j_prev = rescaled_current_site(&q, &p, bc, lp, potential);

    for _ in 0..steps {
        if !f.iter().all(|x| x.is_finite()) {
            return Err(Error::numeric("force evaluation overflowed"));
        }
        // Velocity Verlet.
        let p_half = &p + &(0.5 * h * &f);
        q = &q + &(h * &p_half);
        f = force(&q);
        p = &p_half + &(0.5 * h * &f);
        // Momentum flips.
        if p_flip > 0.0 {
            for k in 0..n {
                if rng.random::<f64>() < p_flip {
                    p[k] = -p[k];
                    flips += 1;
                }
            }
        }
        let j_now = rescaled_current_site(&q, &p, bc, lp, potential);
        current_integral += 0.5 * (j_prev + j_now) * h;
        j_prev = j_now;
    }

    Ok(TrajectoryResult {
        final_state: ChainState::new(q, p),
        integrated_current: current_integral,
        flip_count: flips,
        elapsed: t_end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_phi, observables, sample_disorder, GibbsParams};
    use crate::quadform::{apply_noise, poisson_closed_form};
    use crate::rng;
    use crate::spectral::{eigendecompose, harmonic_propagate};
    use crate::stats;

    fn setup(n: usize, seed: u64, bc: BoundaryCondition) -> (DisorderRealization, SimContext) {
        let d = sample_disorder(n, 1.0, 2.0, None, seed).unwrap();
        let phi = build_phi(&d, bc);
        let decomp = eigendecompose(&phi).unwrap();
        (d, SimContext::new(decomp, bc))
    }

    fn gibbs_state(ctx: &SimContext, t: f64, seed: u64) -> ChainState {
        let mut r = rng::gibbs_stream(seed, 0, 0);
        let (q, p) = gibbs_modes(&ctx.decomp, t, &mut r);
        ctx.decomp.from_modes(&q, &p)
    }

    /// Composite Gauss-Legendre quadrature of 𝒥 along the exact flow.
    fn quadrature_current(
        state: &ChainState,
        decomp: &EigenDecomposition,
        bc: BoundaryCondition,
        tau: f64,
    ) -> f64 {
        // 10-point nodes/weights on [-1, 1].
        let nodes = [
            -0.973906528517172,
            -0.865063366688985,
            -0.679409568299024,
            -0.433395394129247,
            -0.148874338981631,
            0.148874338981631,
            0.433395394129247,
            0.679409568299024,
            0.865063366688985,
            0.973906528517172,
        ];
        let weights = [
            0.066671344308688,
            0.149451349150581,
            0.219086362515982,
            0.269266719309996,
            0.295524224714753,
            0.295524224714753,
            0.269266719309996,
            0.219086362515982,
            0.149451349150581,
            0.066671344308688,
        ];
        let panels = 200;
        let n = state.len();
        let d_dummy = DisorderRealization::ordered(n, 1.0);
        let h = tau / panels as f64;
        let mut total = 0.0;
        for panel in 0..panels {
            let a = panel as f64 * h;
            for (x, w) in nodes.iter().zip(weights.iter()) {
                let s = a + 0.5 * h * (x + 1.0);
                let xs = harmonic_propagate(state, decomp, s);
                let obs = observables(&xs, &d_dummy, bc, 0.0, None).unwrap();
                total += w * obs.rescaled_current * 0.5 * h;
            }
        }
        total
    }

    use crate::chain::DisorderRealization;

    #[test]
    fn zero_rate_means_pure_harmonic_flow() {
        let (_, ctx) = setup(12, 1, BoundaryCondition::Fixed);
        let x0 = gibbs_state(&ctx, 1.0, 10);
        let mut r = rng::trajectory_stream(1, 0, 0);
        let res = simulate_harmonic_flip(&x0, &ctx, 0.0, 7.0, &mut r).unwrap();
        assert_eq!(res.flip_count, 0);
        let flow = harmonic_propagate(&x0, &ctx.decomp, 7.0);
        for k in 0..12 {
            assert!((res.final_state.q[k] - flow.q[k]).abs() < 1e-10);
            assert!((res.final_state.p[k] - flow.p[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn flip_counts_follow_the_poisson_rate() {
        let (_, ctx) = setup(16, 2, BoundaryCondition::Fixed);
        let lambda = 1.0;
        let t_end = 100.0;
        let runs = 100;
        let mut counts = Vec::with_capacity(runs);
        for i in 0..runs {
            let x0 = gibbs_state(&ctx, 1.0, 100 + i as u64);
            let mut r = rng::trajectory_stream(2, 0, i as u64);
            let res = simulate_harmonic_flip(&x0, &ctx, lambda, t_end, &mut r).unwrap();
            counts.push(res.flip_count as f64);
        }
        let expected = 16.0 * lambda * t_end;
        let ratio = stats::mean(&counts) / expected;
        assert!(
            (ratio - 1.0).abs() < 0.05,
            "flip count ratio {ratio} outside 1 ± 0.05"
        );
    }

    #[test]
    fn event_driven_run_conserves_energy() {
        let (d, ctx) = setup(16, 3, BoundaryCondition::Fixed);
        let x0 = gibbs_state(&ctx, 1.0, 77);
        let h0 = observables(&x0, &d, BoundaryCondition::Fixed, 0.0, None)
            .unwrap()
            .hamiltonian;
        let mut r = rng::trajectory_stream(3, 0, 0);
        let res = simulate_harmonic_flip(&x0, &ctx, 1.0, 1000.0, &mut r).unwrap();
        let h1 = observables(&res.final_state, &d, BoundaryCondition::Fixed, 0.0, None)
            .unwrap()
            .hamiltonian;
        assert!(
            (h1 - h0).abs() <= 1e-9 * h0.abs(),
            "energy drift {} over t=1000",
            (h1 - h0).abs() / h0.abs()
        );
    }

    #[test]
    fn current_integral_zero_horizon() {
        let (_, ctx) = setup(4, 4, BoundaryCondition::Fixed);
        let x0 = gibbs_state(&ctx, 1.0, 5);
        assert_eq!(
            integrate_current_interval(&x0, &ctx.decomp, BoundaryCondition::Fixed, 0.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn current_integral_matches_quadrature_two_site_period() {
        // Two sites, p = 0 start, one full period of the slow mode.
        let d = DisorderRealization::ordered(2, 1.0);
        let phi = build_phi(&d, BoundaryCondition::Fixed);
        let decomp = eigendecompose(&phi).unwrap();
        let state = ChainState::new(ndarray::array![1.0, -0.3], ndarray::array![0.0, 0.0]);
        let tau = 2.0 * std::f64::consts::PI / decomp.omega[0];
        let exact =
            integrate_current_interval(&state, &decomp, BoundaryCondition::Fixed, tau).unwrap();
        let quad = quadrature_current(&state, &decomp, BoundaryCondition::Fixed, tau);
        assert!(
            (exact - quad).abs() <= 1e-8 * quad.abs().max(1.0),
            "closed form {exact} vs quadrature {quad}"
        );
    }

    #[test]
    fn current_integral_matches_quadrature_random_state() {
        let (_, ctx) = setup(32, 5, BoundaryCondition::Fixed);
        let state = gibbs_state(&ctx, 1.0, 11);
        let tau = 5.0;
        let exact =
            integrate_current_interval(&state, &ctx.decomp, BoundaryCondition::Fixed, tau)
                .unwrap();
        let quad = quadrature_current(&state, &ctx.decomp, BoundaryCondition::Fixed, tau);
        assert!(
            (exact - quad).abs() <= 1e-8 * quad.abs().max(1.0),
            "closed form {exact} vs quadrature {quad}"
        );
    }

    #[test]
    fn mode_form_integral_of_the_energy_is_linear_in_time() {
        // The energy form is constant along the flow, so its integral is
        // H·τ; this exercises the equal-frequency branch on the diagonal.
        let (_, ctx) = setup(10, 6, BoundaryCondition::Fixed);
        let n = 10;
        let mut alpha = Array2::<f64>::zeros((n, n));
        let mut gamma = Array2::<f64>::zeros((n, n));
        for k in 0..n {
            alpha[(k, k)] = 0.5 * ctx.decomp.omega2[k];
            gamma[(k, k)] = 0.5;
        }
        let energy_form = ModeForm {
            alpha: Some(alpha),
            beta: None,
            gamma: Some(gamma),
        };
        let state = gibbs_state(&ctx, 1.0, 21);
        let (qm, pm) = ctx.decomp.to_modes(&state);
        let h = energy_form.evaluate(&qm, &pm);
        let tau = 3.7;
        let integral = integrate_mode_form(&energy_form, &qm, &pm, &ctx.decomp.omega, tau);
        assert!(
            (integral - h * tau).abs() <= 1e-10 * (h * tau).abs(),
            "∫H = {integral} vs H·τ = {}",
            h * tau
        );
    }

    #[test]
    fn splitting_energy_drift_is_second_order() {
        // Richardson triplet: halving dt quarters the drift (λ = λ' = 0).
        let d = sample_disorder(8, 1.0, 2.0, None, 7).unwrap();
        let phi = build_phi(&d, BoundaryCondition::Fixed);
        let decomp = eigendecompose(&phi).unwrap();
        let ctx = SimContext::new(decomp, BoundaryCondition::Fixed);
        let x0 = gibbs_state(&ctx, 1.0, 31);
        let h0 = observables(&x0, &d, BoundaryCondition::Fixed, 0.0, None)
            .unwrap()
            .hamiltonian;
        let noise = NoiseParams {
            lambda: 0.0,
            lambda_prime: 0.0,
        };
        let mut drifts = Vec::new();
        for &dt in &[1e-2, 5e-3, 2.5e-3] {
            let mut r = rng::trajectory_stream(7, 0, 0);
            let res =
                simulate_anharmonic(&x0, &d, BoundaryCondition::Fixed, noise, None, dt, 10.0, &mut r)
                    .unwrap();
            let h1 = observables(&res.final_state, &d, BoundaryCondition::Fixed, 0.0, None)
                .unwrap()
                .hamiltonian;
            drifts.push((h1 - h0).abs() / h0.abs());
        }
        let r1 = drifts[0] / drifts[1];
        let r2 = drifts[1] / drifts[2];
        assert!(
            (2.5..6.0).contains(&r1) && (2.5..6.0).contains(&r2),
            "drift ratios {r1:.2}, {r2:.2} not ≈ 4 (drifts {drifts:?})"
        );
    }

    #[test]
    fn splitting_flip_statistics_match_event_driven() {
        // Two-sample chi-square on binned flip counts, p > 0.01.
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let n = 8;
        let (d, ctx) = setup(n, 8, BoundaryCondition::Fixed);
        let lambda = 1.0;
        let t_end = 10.0;
        let runs = 200;
        let mut event_counts = Vec::with_capacity(runs);
        let mut split_counts = Vec::with_capacity(runs);
        let noise = NoiseParams {
            lambda,
            lambda_prime: 0.0,
        };
        for i in 0..runs {
            let x0 = gibbs_state(&ctx, 1.0, 4000 + i as u64);
            let mut r1 = rng::trajectory_stream(8, 1, i as u64);
            event_counts.push(
                simulate_harmonic_flip(&x0, &ctx, lambda, t_end, &mut r1)
                    .unwrap()
                    .flip_count as f64,
            );
            let mut r2 = rng::trajectory_stream(8, 2, i as u64);
            split_counts.push(
                simulate_anharmonic(
                    &x0,
                    &d,
                    BoundaryCondition::Fixed,
                    noise,
                    None,
                    4e-3,
                    t_end,
                    &mut r2,
                )
                .unwrap()
                .flip_count as f64,
            );
        }
        // Common bins around the Poisson mean Nλt = 80.
        let edges = [0.0, 60.0, 70.0, 78.0, 86.0, 94.0, 104.0, f64::INFINITY];
        let bin = |xs: &[f64]| -> Vec<f64> {
            let mut c = vec![0.0; edges.len() - 1];
            for &x in xs {
                for b in 0..edges.len() - 1 {
                    if x >= edges[b] && x < edges[b + 1] {
                        c[b] += 1.0;
                        break;
                    }
                }
            }
            c
        };
        let o1 = bin(&event_counts);
        let o2 = bin(&split_counts);
        let mut chi2 = 0.0;
        let mut dof = 0;
        for b in 0..o1.len() {
            let tot = o1[b] + o2[b];
            if tot > 0.0 {
                chi2 += (o1[b] - o2[b]) * (o1[b] - o2[b]) / tot;
                dof += 1;
            }
        }
        let dist = ChiSquared::new((dof - 1) as f64).unwrap();
        let p = 1.0 - dist.cdf(chi2);
        assert!(p > 0.01, "chi-square p = {p} (χ² = {chi2}, dof = {dof})");
    }

    #[test]
    fn splitting_converges_to_harmonic_flow_as_anharmonicity_vanishes() {
        // λ = 0: deviation from the λ' = 0 exact flow scales linearly in λ'.
        let d = sample_disorder(8, 1.0, 2.0, None, 9).unwrap();
        let phi = build_phi(&d, BoundaryCondition::Fixed);
        let decomp = eigendecompose(&phi).unwrap();
        let ctx = SimContext::new(decomp, BoundaryCondition::Fixed);
        let x0 = gibbs_state(&ctx, 1.0, 51);
        let t_end = 5.0;
        let reference = harmonic_propagate(&x0, &ctx.decomp, t_end);
        let pot = AnharmonicPotential::default();
        let mut devs = Vec::new();
        for &lp in &[0.01, 0.02, 0.04] {
            let noise = NoiseParams {
                lambda: 0.0,
                lambda_prime: lp,
            };
            let mut r = rng::trajectory_stream(9, 0, 0);
            let res = simulate_anharmonic(
                &x0,
                &d,
                BoundaryCondition::Fixed,
                noise,
                Some(&pot),
                1e-3,
                t_end,
                &mut r,
            )
            .unwrap();
            let mut dev = 0.0f64;
            for k in 0..8 {
                dev = dev.max((res.final_state.q[k] - reference.q[k]).abs());
                dev = dev.max((res.final_state.p[k] - reference.p[k]).abs());
            }
            devs.push(dev);
        }
        let r1 = devs[1] / devs[0];
        let r2 = devs[2] / devs[1];
        assert!(
            (1.6..2.4).contains(&r1) && (1.6..2.4).contains(&r2),
            "deviation ratios {r1:.2}, {r2:.2} not ≈ 2 (linear response)"
        );
    }

    #[test]
    fn simulators_agree_in_law_on_the_integrated_current() {
        // Marginal variance of ∫𝒥 at t = 10 within 3σ of each other.
        let n = 8;
        let (d, ctx) = setup(n, 10, BoundaryCondition::Fixed);
        let lambda = 1.0;
        let t_end = 10.0;
        let runs = 300;
        let noise = NoiseParams {
            lambda,
            lambda_prime: 0.0,
        };
        let mut i_event = Vec::with_capacity(runs);
        let mut i_split = Vec::with_capacity(runs);
        for i in 0..runs {
            let x0 = gibbs_state(&ctx, 1.0, 9000 + i as u64);
            let mut r1 = rng::trajectory_stream(10, 1, i as u64);
            i_event.push(
                simulate_harmonic_flip(&x0, &ctx, lambda, t_end, &mut r1)
                    .unwrap()
                    .integrated_current,
            );
            let x1 = gibbs_state(&ctx, 1.0, 90_000 + i as u64);
            let mut r2 = rng::trajectory_stream(10, 2, i as u64);
            i_split.push(
                simulate_anharmonic(
                    &x1,
                    &d,
                    BoundaryCondition::Fixed,
                    noise,
                    None,
                    4e-3,
                    t_end,
                    &mut r2,
                )
                .unwrap()
                .integrated_current,
            );
        }
        let v1 = stats::sample_variance(&i_event);
        let v2 = stats::sample_variance(&i_split);
        // stderr of a variance estimate ≈ v√(2/(n−1)).
        let se = (v1 * v1 + v2 * v2).sqrt() * (2.0 / (runs as f64 - 1.0)).sqrt();
        assert!(
            (v1 - v2).abs() < 3.0 * se,
            "Var event {v1} vs split {v2} (3σ = {})",
            3.0 * se
        );
    }

    #[test]
    fn integrated_current_uncorrelated_with_integrated_noise_image() {
        // Time-reversal: ∫𝒥 is odd and ∫Su_N even under path reversal, so
        // their stationary covariance vanishes.
        let n = 16;
        let d = sample_disorder(n, 1.0, 2.0, None, 11).unwrap();
        let phi = build_phi(&d, BoundaryCondition::Fixed);
        let decomp = eigendecompose(&phi).unwrap();
        let sol = poisson_closed_form(&phi, &decomp, 1.0).unwrap();
        let su = apply_noise(&sol.u);
        let ctx = SimContext::new(decomp, BoundaryCondition::Fixed);
        let su_mode = ModeForm::from_site(&su, &ctx.decomp);
        let lambda = 0.5;
        let t_end = 20.0;
        let runs = 200;
        let mut ij = Vec::with_capacity(runs);
        let mut is = Vec::with_capacity(runs);
        for i in 0..runs {
            let mut gr = rng::gibbs_stream(11, 3, i as u64);
            let (qm, pm) = gibbs_modes(&ctx.decomp, 1.0, &mut gr);
            let x0 = ctx.decomp.from_modes(&qm, &pm);
            let mut r = rng::trajectory_stream(11, 4, i as u64);
            let (res, extra) =
                simulate_harmonic_flip_tracked(&x0, &ctx, &[&su_mode], lambda, t_end, &mut r)
                    .unwrap();
            ij.push(res.integrated_current);
            is.push(extra[0]);
        }
        let corr = stats::correlation(&ij, &is);
        let threshold = 3.0 / (runs as f64).sqrt();
        assert!(
            corr.abs() < threshold,
            "correlation {corr} exceeds 3σ = {threshold}"
        );
    }

    #[test]
    fn negative_horizon_rejected() {
        let (_, ctx) = setup(4, 12, BoundaryCondition::Fixed);
        let x0 = gibbs_state(&ctx, 1.0, 1);
        let mut r = rng::trajectory_stream(12, 0, 0);
        assert!(simulate_harmonic_flip(&x0, &ctx, 1.0, -1.0, &mut r).is_err());
        let d = sample_disorder(4, 1.0, 2.0, None, 12).unwrap();
        let noise = NoiseParams {
            lambda: 0.0,
            lambda_prime: 0.0,
        };
        assert!(simulate_anharmonic(
            &x0,
            &d,
            BoundaryCondition::Fixed,
            noise,
            None,
            0.0,
            1.0,
            &mut r
        )
        .is_err());
    }
}
