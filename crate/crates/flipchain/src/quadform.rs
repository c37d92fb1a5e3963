//! The closed algebra of quadratic observables
//! `u(q,p) = ⟨q,αq⟩ + ⟨q,βp⟩ + ⟨p,γp⟩ + c`.
//!
//! The full generator `L = A_har + λS` maps this space into itself:
//!
//! ```text
//! α' = −(βΦ + Φβᵀ)/2
//! β' = 2α − 2Φγ − 2λβ
//! γ' = (β + βᵀ)/2 − 4λγ̃          γ̃ = off-diagonal part of γ
//! c' = 0
//! ```
//!
//! so stationary-measure pairings, resolvent equations `(z−L)u = rhs`, and
//! the Poisson equation of the harmonic flow all become finite
//! linear-algebra problems. The resolvent solver is GMRES with the generator
//! applied matrix-free through [`apply_generator`]; it is preconditioned by
//! an exact structured inverse (eigenbasis 2×2 blocks plus a rank-N
//! correction for the site-diagonal part of the noise), so it converges in
//! a handful of iterations at any `z > 0`.

use ndarray::{Array1, Array2};

use crate::chain::{
    AnharmonicPotential, BoundaryCondition, ChainState, CouplingMatrix, DisorderRealization,
    GibbsParams,
};
use crate::error::{Error, Result};
use crate::spectral::EigenDecomposition;
use crate::stats;

// ───────────────────────── the quadratic form ─────────────────────────

/// A quadratic observable; `alpha` and `gamma` are symmetrized on
/// construction and stay symmetric under every operation in this module.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub alpha: Array2<f64>,
    pub beta: Array2<f64>,
    pub gamma: Array2<f64>,
    pub c: f64,
}

fn symmetrize(m: &Array2<f64>) -> Array2<f64> {
    0.5 * (m + &m.t())
}

impl QuadraticForm {
    pub fn new(alpha: Array2<f64>, beta: Array2<f64>, gamma: Array2<f64>, c: f64) -> Self {
        let n = beta.nrows();
        assert_eq!(alpha.dim(), (n, n));
        assert_eq!(gamma.dim(), (n, n));
        QuadraticForm {
            alpha: symmetrize(&alpha),
            beta,
            gamma: symmetrize(&gamma),
            c,
        }
    }

    pub fn zero(n: usize) -> Self {
        QuadraticForm {
            alpha: Array2::zeros((n, n)),
            beta: Array2::zeros((n, n)),
            gamma: Array2::zeros((n, n)),
            c: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.beta.nrows()
    }

    /// The monomial `q_i q_j`.
    pub fn q_pair(n: usize, i: usize, j: usize) -> Self {
        let mut alpha = Array2::zeros((n, n));
        if i == j {
            alpha[(i, i)] = 1.0;
        } else {
            alpha[(i, j)] = 0.5;
            alpha[(j, i)] = 0.5;
        }
        QuadraticForm::new(alpha, Array2::zeros((n, n)), Array2::zeros((n, n)), 0.0)
    }

    /// The monomial `p_i p_j`.
    pub fn p_pair(n: usize, i: usize, j: usize) -> Self {
        let mut gamma = Array2::zeros((n, n));
        if i == j {
            gamma[(i, i)] = 1.0;
        } else {
            gamma[(i, j)] = 0.5;
            gamma[(j, i)] = 0.5;
        }
        QuadraticForm::new(Array2::zeros((n, n)), Array2::zeros((n, n)), gamma, 0.0)
    }

    /// The monomial `q_i p_j`.
    pub fn qp(n: usize, i: usize, j: usize) -> Self {
        let mut beta = Array2::zeros((n, n));
        beta[(i, j)] = 1.0;
        QuadraticForm::new(Array2::zeros((n, n)), beta, Array2::zeros((n, n)), 0.0)
    }

    pub fn evaluate(&self, state: &ChainState) -> f64 {
        let q = &state.q;
        let p = &state.p;
        q.dot(&self.alpha.dot(q)) + q.dot(&self.beta.dot(p)) + p.dot(&self.gamma.dot(p)) + self.c
    }

    pub fn scale(&self, s: f64) -> Self {
        QuadraticForm {
            alpha: &self.alpha * s,
            beta: &self.beta * s,
            gamma: &self.gamma * s,
            c: self.c * s,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        QuadraticForm {
            alpha: &self.alpha + &other.alpha,
            beta: &self.beta + &other.beta,
            gamma: &self.gamma + &other.gamma,
            c: self.c + other.c,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        QuadraticForm {
            alpha: &self.alpha - &other.alpha,
            beta: &self.beta - &other.beta,
            gamma: &self.gamma - &other.gamma,
            c: self.c - other.c,
        }
    }

    /// Frobenius norm of the coefficient blocks (the constant included).
    pub fn coeff_norm(&self) -> f64 {
        let mut s = self.c * self.c;
        for m in [&self.alpha, &self.beta, &self.gamma] {
            s += m.iter().map(|&x| x * x).sum::<f64>();
        }
        s.sqrt()
    }

    fn pack(&self) -> Vec<f64> {
        let n = self.n();
        let mut v = Vec::with_capacity(3 * n * n);
        v.extend(self.alpha.iter());
        v.extend(self.beta.iter());
        v.extend(self.gamma.iter());
        v
    }

    /// Unpack without symmetrizing (GMRES basis vectors live in the full
    /// coefficient space).
    fn unpack_raw(n: usize, v: &[f64]) -> Self {
        let nn = n * n;
        QuadraticForm {
            alpha: Array2::from_shape_vec((n, n), v[..nn].to_vec()).unwrap(),
            beta: Array2::from_shape_vec((n, n), v[nn..2 * nn].to_vec()).unwrap(),
            gamma: Array2::from_shape_vec((n, n), v[2 * nn..].to_vec()).unwrap(),
            c: 0.0,
        }
    }
}

// ───────────────────────── generator action ─────────────────────────

/// Apply `L = A_har + λS` to a quadratic form. The constant term maps to 0.
pub fn apply_generator(u: &QuadraticForm, phi: &CouplingMatrix, lambda: f64) -> QuadraticForm {
    let phi_m = &phi.matrix;
    let beta_phi = u.beta.dot(phi_m);
    // α' = −(βΦ + Φβᵀ)/2 = −sym(βΦ)  (Φ symmetric)
    let alpha_new = -0.5 * (&beta_phi + &beta_phi.t());
    // β' = 2α − 2Φγ − 2λβ
    let beta_new = 2.0 * &u.alpha - 2.0 * phi_m.dot(&u.gamma) - 2.0 * lambda * &u.beta;
    // γ' = sym(β) − 4λγ̃
    let mut gamma_new = symmetrize(&u.beta);
    if lambda != 0.0 {
        let n = u.n();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    gamma_new[(i, j)] -= 4.0 * lambda * u.gamma[(i, j)];
                }
            }
        }
    }
    QuadraticForm {
        alpha: alpha_new,
        beta: beta_new,
        gamma: gamma_new,
        c: 0.0,
    }
}

/// The flip-noise part alone: `S u` has blocks `(0, −2β, −4γ̃, 0)`.
pub fn apply_noise(u: &QuadraticForm) -> QuadraticForm {
    let n = u.n();
    let mut gamma = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                gamma[(i, j)] = -4.0 * u.gamma[(i, j)];
            }
        }
    }
    QuadraticForm {
        alpha: Array2::zeros((n, n)),
        beta: -2.0 * &u.beta,
        gamma,
        c: 0.0,
    }
}

// ───────────────────────── Gaussian pairings ─────────────────────────

/// Cached second moments of the `λ' = 0` Gibbs measure: `Cov(q) = TΦ⁻¹`,
/// `Cov(p) = T·Id`, `q ⟂ p`. Factor once per disorder realization and reuse
/// for every pairing.
pub struct GibbsPairer {
    phi_inv: Array2<f64>,
    pub temperature: f64,
}

impl GibbsPairer {
    pub fn new(phi: &CouplingMatrix, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::parameter("temperature must be positive"));
        }
        Ok(GibbsPairer {
            phi_inv: phi.inverse()?,
            temperature,
        })
    }

    /// Stationary mean `μ_T(u) = T·tr(αΦ⁻¹) + T·tr(γ) + c`.
    pub fn mean(&self, u: &QuadraticForm) -> f64 {
        let t = self.temperature;
        let mut tr_alpha = 0.0;
        for i in 0..u.n() {
            tr_alpha += u.alpha.row(i).dot(&self.phi_inv.column(i));
        }
        let tr_gamma: f64 = (0..u.n()).map(|i| u.gamma[(i, i)]).sum();
        t * tr_alpha + t * tr_gamma + u.c
    }

    /// Exact Gaussian second-moment pairing `μ_T(u·v)` by Wick contraction:
    ///
    /// `μ(uv) = μ(u)μ(v) + 2T²tr(α₁Φ⁻¹α₂Φ⁻¹) + 2T²tr(γ₁γ₂) + T²tr(β₁ᵀΦ⁻¹β₂)`
    pub fn pairing(&self, u: &QuadraticForm, v: &QuadraticForm) -> f64 {
        let t = self.temperature;
        let s = &self.phi_inv;
        let a = u.alpha.dot(s);
        let b = v.alpha.dot(s);
        let mut tr_aa = 0.0;
        for i in 0..u.n() {
            tr_aa += a.row(i).dot(&b.column(i));
        }
        let mut tr_gg = 0.0;
        for i in 0..u.n() {
            tr_gg += u.gamma.row(i).dot(&v.gamma.column(i));
        }
        let sb = s.dot(&v.beta);
        let mut tr_bb = 0.0;
        for i in 0..u.n() {
            tr_bb += u.beta.column(i).dot(&sb.column(i));
        }
        self.mean(u) * self.mean(v) + 2.0 * t * t * tr_aa + 2.0 * t * t * tr_gg + t * t * tr_bb
    }

    /// `‖u‖_{L²(μ_T)} = √μ_T(u²)`.
    pub fn norm(&self, u: &QuadraticForm) -> f64 {
        self.pairing(u, u).max(0.0).sqrt()
    }

    pub fn phi_inv(&self) -> &Array2<f64> {
        &self.phi_inv
    }
}

/// One-shot pairing `μ_T(u·v)` under the exact Gaussian measure. Errors for
/// `λ' > 0` — anharmonic expectations have no closed form and are estimated
/// by Monte Carlo elsewhere.
pub fn gibbs_pairing(
    u: &QuadraticForm,
    v: &QuadraticForm,
    phi: &CouplingMatrix,
    gibbs: &GibbsParams,
) -> Result<f64> {
    if gibbs.lambda_prime > 0.0 {
        return Err(Error::UnsupportedMeasure(
            "exact pairings exist only for the λ' = 0 Gaussian measure".into(),
        ));
    }
    Ok(GibbsPairer::new(phi, gibbs.temperature)?.pairing(u, v))
}

// ───────────────────────── current forms ─────────────────────────

/// The unscaled total current `J_N = ⟨q, Bp⟩`.
///
/// Fixed boundaries: `J = ½(q₁p₁ − q_N p_N) + ½Σ_{k<N}(q_k p_{k+1} − q_{k+1} p_k)`.
/// Periodic: the cyclic bond sum without the diagonal terms.
pub fn total_current_form(n: usize, bc: BoundaryCondition) -> QuadraticForm {
    assert!(n >= 2, "current needs at least one bond");
    let mut b = Array2::<f64>::zeros((n, n));
    for k in 0..n - 1 {
        b[(k, k + 1)] += 0.5;
        b[(k + 1, k)] -= 0.5;
    }
    match bc {
        BoundaryCondition::Fixed => {
            b[(0, 0)] += 0.5;
            b[(n - 1, n - 1)] -= 0.5;
        }
        BoundaryCondition::Periodic => {
            b[(n - 1, 0)] += 0.5;
            b[(0, n - 1)] -= 0.5;
        }
    }
    QuadraticForm {
        alpha: Array2::zeros((n, n)),
        beta: b,
        gamma: Array2::zeros((n, n)),
        c: 0.0,
    }
}

/// The rescaled current `𝒥_N = J_N/√N` as a quadratic form.
pub fn build_current_form(n: usize, bc: BoundaryCondition) -> QuadraticForm {
    total_current_form(n, bc).scale(1.0 / (n as f64).sqrt())
}

/// Rescaled current in the mass-reduced coordinates
/// `(q̃, p̃) = (M^{1/2}q, M^{-1/2}p)`: the unit-mass matrix sandwiched with
/// `M^{-1/2}` on both sides.
pub fn build_current_form_mass(
    disorder: &DisorderRealization,
    bc: BoundaryCondition,
) -> QuadraticForm {
    let n = disorder.len();
    let mut form = build_current_form(n, bc);
    if let Some(masses) = &disorder.masses {
        let d: Vec<f64> = masses.iter().map(|&m| 1.0 / m.sqrt()).collect();
        for i in 0..n {
            for j in 0..n {
                form.beta[(i, j)] *= d[i] * d[j];
            }
        }
    }
    form
}

// ───────────────────────── resolvent solver ─────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct ResolventOptions {
    /// Relative residual target in the coefficient Frobenius norm.
    pub tol: f64,
    /// GMRES restart length.
    pub restart: usize,
    /// Maximum outer (restart) cycles.
    pub max_restarts: usize,
}

impl Default for ResolventOptions {
    fn default() -> Self {
        ResolventOptions {
            tol: 1e-8,
            restart: 24,
            max_restarts: 40,
        }
    }
}

struct LuFactors {
    lu: Array2<f64>,
    piv: Vec<usize>,
}

fn lu_factor(mut a: Array2<f64>) -> Result<LuFactors> {
    let n = a.nrows();
    let mut piv: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut imax = k;
        let mut vmax = a[(k, k)].abs();
        for i in (k + 1)..n {
            if a[(i, k)].abs() > vmax {
                vmax = a[(i, k)].abs();
                imax = i;
            }
        }
        if vmax == 0.0 {
            return Err(Error::numeric("singular diagonal-coupling system"));
        }
        if imax != k {
            for j in 0..n {
                let t = a[(k, j)];
                a[(k, j)] = a[(imax, j)];
                a[(imax, j)] = t;
            }
            piv.swap(k, imax);
        }
        for i in (k + 1)..n {
            let f = a[(i, k)] / a[(k, k)];
            a[(i, k)] = f;
            for j in (k + 1)..n {
                a[(i, j)] -= f * a[(k, j)];
            }
        }
    }
    Ok(LuFactors { lu: a, piv })
}

impl LuFactors {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.nrows();
        let mut x: Vec<f64> = self.piv.iter().map(|&i| b[i]).collect();
        for i in 1..n {
            for k in 0..i {
                let f = self.lu[(i, k)] * x[k];
                x[i] -= f;
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let f = self.lu[(i, k)] * x[k];
                x[i] -= f;
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }
}

/// Exact inverse of `(z−L)` split into an eigenbasis part that decouples
/// into 2×2 blocks and a rank-N correction coupling the site diagonal of γ.
struct StructuredInverse<'a> {
    phi: &'a CouplingMatrix,
    xi: &'a Array2<f64>,
    omega2: &'a Array1<f64>,
    z: f64,
    lambda: f64,
    /// LU factors of the N×N self-consistency system for the site diagonal
    /// of sym(β); `None` when `λ = 0` (no coupling).
    diag_system: Option<LuFactors>,
    /// `2κ_z` with `κ_z = 4λ / (z(z+4λ))`.
    two_kappa: f64,
}

impl<'a> StructuredInverse<'a> {
    fn new(
        phi: &'a CouplingMatrix,
        decomp: &'a EigenDecomposition,
        z: f64,
        lambda: f64,
    ) -> Result<Self> {
        let n = phi.n();
        let two_kappa = if lambda > 0.0 {
            2.0 * 4.0 * lambda / (z * (z + 4.0 * lambda))
        } else {
            0.0
        };
        let mut inv = StructuredInverse {
            phi,
            xi: &decomp.xi,
            omega2: &decomp.omega2,
            z,
            lambda,
            diag_system: None,
            two_kappa,
        };
        if lambda > 0.0 {
            // W: response of the eigenbasis block solve to the rank-one
            // right-hand sides Ω²bbᵀ coming from a site-diagonal source.
            let mut w = Array2::<f64>::zeros((n, n));
            for j in 0..n {
                for k in 0..n {
                    let (a11, a12, a21, a22) = inv.block_coeffs(j, k);
                    if j == k {
                        w[(j, k)] = inv.omega2[j] / a11;
                    } else {
                        let det = a11 * a22 - a12 * a21;
                        w[(j, k)] = (a22 * inv.omega2[j] - a12 * inv.omega2[k]) / det;
                    }
                }
            }
            let ws = symmetrize(&w);
            // K_{mi} = v_{mi}ᵀ Ws v_{mi} with v_{mi} = row_m(Ξ) ∘ row_i(Ξ).
            let mut kmat = Array2::<f64>::zeros((n, n));
            let mut v = vec![0.0; n];
            let mut wsv = vec![0.0; n];
            for m in 0..n {
                for i in m..n {
                    for (jj, vv) in v.iter_mut().enumerate() {
                        *vv = inv.xi[(m, jj)] * inv.xi[(i, jj)];
                    }
                    for (jj, t) in wsv.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for kk in 0..n {
                            acc += ws[(jj, kk)] * v[kk];
                        }
                        *t = acc;
                    }
                    let mut kv = 0.0;
                    for jj in 0..n {
                        kv += v[jj] * wsv[jj];
                    }
                    kmat[(m, i)] = kv;
                    kmat[(i, m)] = kv;
                }
            }
            let system = Array2::<f64>::eye(n) + &(two_kappa * &kmat);
            inv.diag_system = Some(lu_factor(system)?);
        }
        Ok(inv)
    }

    /// Coefficients of the 2×2 system coupling `β̄_{jk}` and `β̄_{kj}`.
    fn block_coeffs(&self, j: usize, k: usize) -> (f64, f64, f64, f64) {
        let z = self.z;
        let lam = self.lambda;
        let w2j = self.omega2[j];
        let w2k = self.omega2[k];
        if j == k {
            let a = z + 2.0 * lam + 2.0 * w2j / z + 2.0 * w2j / (z + 4.0 * lam);
            (a, 0.0, 0.0, a)
        } else {
            let a11 = z + 2.0 * lam + w2k / z + w2j / (z + 4.0 * lam);
            let a12 = w2j / z + w2j / (z + 4.0 * lam);
            let a21 = w2k / z + w2k / (z + 4.0 * lam);
            let a22 = z + 2.0 * lam + w2j / z + w2k / (z + 4.0 * lam);
            (a11, a12, a21, a22)
        }
    }

    /// Solve the decoupled eigenbasis system blockwise.
    fn block_solve(&self, rbar: &Array2<f64>) -> Array2<f64> {
        let n = rbar.nrows();
        let mut out = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let (a, _, _, _) = self.block_coeffs(j, j);
            out[(j, j)] = rbar[(j, j)] / a;
            for k in (j + 1)..n {
                let (a11, a12, a21, a22) = self.block_coeffs(j, k);
                let det = a11 * a22 - a12 * a21;
                let r1 = rbar[(j, k)];
                let r2 = rbar[(k, j)];
                out[(j, k)] = (a22 * r1 - a12 * r2) / det;
                out[(k, j)] = (a11 * r2 - a21 * r1) / det;
            }
        }
        out
    }

    /// Entrywise scaling of the γ elimination: diagonal by `1/z`,
    /// off-diagonal by `1/(z+4λ)`.
    fn gamma_scale(&self, x: &Array2<f64>) -> Array2<f64> {
        let n = x.nrows();
        let mut out = x / (self.z + 4.0 * self.lambda);
        for i in 0..n {
            out[(i, i)] = x[(i, i)] / self.z;
        }
        out
    }

    /// Apply the exact inverse to a right-hand side.
    fn solve(&self, rhs: &QuadraticForm) -> QuadraticForm {
        let n = rhs.n();
        let z = self.z;
        let phi_m = &self.phi.matrix;
        // Eliminate α and γ in favor of β.
        let r_prime =
            &rhs.beta + &((2.0 / z) * &rhs.alpha) - 2.0 * phi_m.dot(&self.gamma_scale(&rhs.gamma));
        let rbar = self.xi.t().dot(&r_prime).dot(self.xi);
        let mut beta_bar = self.block_solve(&rbar);
        if let Some(lu) = &self.diag_system {
            // Site-diagonal self-consistency: d = diag_site(sym β).
            let beta_site0 = self.xi.dot(&beta_bar).dot(&self.xi.t());
            let d0: Vec<f64> = (0..n).map(|i| beta_site0[(i, i)]).collect();
            let d = lu.solve(&d0);
            // β̄ −= 2κ_z · T⁻¹(Ω² Ξᵀ diag(d) Ξ)
            let mut dxi = self.xi.clone();
            for i in 0..n {
                for j in 0..n {
                    dxi[(i, j)] *= d[i];
                }
            }
            let mut gbar = self.xi.t().dot(&dxi);
            for j in 0..n {
                for k in 0..n {
                    gbar[(j, k)] *= self.omega2[j];
                }
            }
            let corr = self.block_solve(&gbar);
            beta_bar = beta_bar - &(self.two_kappa * &corr);
        }
        let beta = self.xi.dot(&beta_bar).dot(&self.xi.t());
        let sym_beta = symmetrize(&beta);
        let gamma = self.gamma_scale(&(&rhs.gamma + &sym_beta));
        let beta_phi = beta.dot(phi_m);
        let alpha = (&rhs.alpha - &(0.5 * (&beta_phi + &beta_phi.t()))) / z;
        QuadraticForm {
            alpha,
            beta,
            gamma,
            c: rhs.c / z,
        }
    }
}

/// Solve `(z − L)u = rhs` on the quadratic algebra.
///
/// Restarted right-preconditioned GMRES; the operator is applied matrix-free
/// by [`apply_generator`], and the preconditioner is the structured
/// eigenbasis inverse, so the iteration normally verifies the residual and
/// stops after one or two steps. Returns a numeric error carrying the
/// residual when the budget runs out.
pub fn solve_resolvent(
    phi: &CouplingMatrix,
    decomp: &EigenDecomposition,
    lambda: f64,
    z: f64,
    rhs: &QuadraticForm,
    opts: &ResolventOptions,
) -> Result<QuadraticForm> {
    if !(z > 0.0) {
        return Err(Error::parameter("resolvent requires z > 0"));
    }
    if lambda < 0.0 {
        return Err(Error::parameter("lambda must be nonnegative"));
    }
    let n = rhs.n();
    if phi.n() != n {
        return Err(Error::parameter("dimension mismatch"));
    }
    let rhs_norm = rhs.coeff_norm();
    if rhs_norm == 0.0 {
        return Ok(QuadraticForm::zero(n));
    }
    let pre = StructuredInverse::new(phi, decomp, z, lambda)?;

    let apply =
        |u: &QuadraticForm| -> QuadraticForm { u.scale(z).sub(&apply_generator(u, phi, lambda)) };

    // x₀ from the structured inverse alone; GMRES mops up the roundoff.
    let mut x = pre.solve(rhs);
    let mut residual = rhs.sub(&apply(&x));
    let mut res_norm = residual.coeff_norm();
    let tol_abs = opts.tol * rhs_norm;
    let mut cycles = 0;
    while res_norm > tol_abs {
        if cycles >= opts.max_restarts {
            return Err(Error::NonConvergence {
                residual: res_norm / rhs_norm,
                tol: opts.tol,
            });
        }
        cycles += 1;
        let dx = gmres_cycle(&apply, &pre, &residual, opts.restart, tol_abs);
        x = x.add(&dx);
        residual = rhs.sub(&apply(&x));
        res_norm = residual.coeff_norm();
    }
    Ok(x)
}

/// One restart cycle of right-preconditioned GMRES on the quadratic-form
/// coefficient space; returns the correction for the given residual.
fn gmres_cycle<F>(
    apply: &F,
    pre: &StructuredInverse,
    rhs: &QuadraticForm,
    m: usize,
    tol_abs: f64,
) -> QuadraticForm
where
    F: Fn(&QuadraticForm) -> QuadraticForm,
{
    let n = rhs.n();
    let beta0 = rhs.coeff_norm();
    let mut v: Vec<Vec<f64>> = vec![rhs.scale(1.0 / beta0).pack()];
    let mut h: Vec<Vec<f64>> = Vec::new();
    let mut cs: Vec<f64> = Vec::new();
    let mut sn: Vec<f64> = Vec::new();
    let mut g = vec![beta0];
    let mut steps = 0;

    for j in 0..m {
        let vj = QuadraticForm::unpack_raw(n, &v[j]);
        let w_form = apply(&pre.solve(&vj));
        let mut w = w_form.pack();
        let mut hcol = vec![0.0; j + 2];
        for (i, vi) in v.iter().enumerate() {
            let dot: f64 = w.iter().zip(vi.iter()).map(|(a, b)| a * b).sum();
            hcol[i] = dot;
            for (wk, vk) in w.iter_mut().zip(vi.iter()) {
                *wk -= dot * vk;
            }
        }
        let wnorm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        hcol[j + 1] = wnorm;
        for i in 0..j {
            let t = cs[i] * hcol[i] + sn[i] * hcol[i + 1];
            hcol[i + 1] = -sn[i] * hcol[i] + cs[i] * hcol[i + 1];
            hcol[i] = t;
        }
        let denom = hcol[j].hypot(hcol[j + 1]);
        let (c, s) = if denom == 0.0 {
            (1.0, 0.0)
        } else {
            (hcol[j] / denom, hcol[j + 1] / denom)
        };
        cs.push(c);
        sn.push(s);
        hcol[j] = c * hcol[j] + s * hcol[j + 1];
        hcol[j + 1] = 0.0;
        g.push(-s * g[j]);
        g[j] *= c;
        h.push(hcol);
        steps = j + 1;
        if wnorm == 0.0 || g[j + 1].abs() < tol_abs {
            break;
        }
        v.push(w.iter().map(|x| x / wnorm).collect());
    }

    // Back substitution for y, then the correction is M(V y).
    let mut y = vec![0.0; steps];
    for i in (0..steps).rev() {
        let mut s = g[i];
        for k in (i + 1)..steps {
            s -= h[k][i] * y[k];
        }
        y[i] = s / h[i][i];
    }
    let mut acc = vec![0.0; 3 * n * n];
    for (k, yk) in y.iter().enumerate() {
        for (a, vk) in acc.iter_mut().zip(v[k].iter()) {
            *a += yk * vk;
        }
    }
    pre.solve(&QuadraticForm::unpack_raw(n, &acc))
}

// ───────────────── closed-form Poisson solution ─────────────────

/// Closed-form solution of `−A_har u_N = 𝒥_N` for fixed boundaries,
/// assembled bond by bond from the eigenmode sums.
#[derive(Debug, Clone)]
pub struct PoissonSolution {
    /// The assembled, centered solution `u_N`.
    pub u: QuadraticForm,
    /// Per-bond momentum blocks `γ(l)`, `l = 1..N` (index 0 is the wrap
    /// bond `l = 1`).
    pub gamma_l: Vec<Array2<f64>>,
    /// Per-bond position blocks `α(l) = Φγ(l) − B(l)/2`.
    pub alpha_l: Vec<Array2<f64>>,
    /// `‖A_har u_N + 𝒥_N‖_{L²(μ_T)}`.
    pub residual: f64,
    /// `‖𝒥_N‖_{L²(μ_T)}`.
    pub current_norm: f64,
}

impl PoissonSolution {
    pub fn residual_rel(&self) -> f64 {
        self.residual / self.current_norm
    }
}

/// Bond difference matrices (1-based bond index): `B(l)` has `+1` at
/// `(l, l−1)` and `−1` at `(l−1, l)` for `l ≥ 2`; `B(1)` has `+1` at `(N,N)`
/// and `−1` at `(1,1)`.
fn bond_matrix(n: usize, l: usize) -> Array2<f64> {
    let mut b = Array2::<f64>::zeros((n, n));
    if l == 1 {
        b[(n - 1, n - 1)] = 1.0;
        b[(0, 0)] = -1.0;
    } else {
        b[(l - 1, l - 2)] = 1.0;
        b[(l - 2, l - 1)] = -1.0;
    }
    b
}

/// Build the closed-form Poisson solution from an eigendecomposition of the
/// fixed-boundary Φ. Fails on periodic input and on degenerate spectra (the
/// mode sums assume simple eigenvalues).
pub fn poisson_closed_form(
    phi: &CouplingMatrix,
    decomp: &EigenDecomposition,
    temperature: f64,
) -> Result<PoissonSolution> {
    if phi.bc != BoundaryCondition::Fixed {
        return Err(Error::parameter(
            "the closed-form Poisson solution is defined for fixed boundaries",
        ));
    }
    if decomp.is_degenerate() {
        return Err(Error::Degenerate(
            "closed-form mode sums require a simple spectrum".into(),
        ));
    }
    let n = phi.n();
    if n < 2 {
        return Err(Error::parameter("need at least two sites"));
    }
    let xi = &decomp.xi;
    let pairer = GibbsPairer::new(phi, temperature)?;

    // Squared components: sq[(j,k)] = ⟨j,ξ^k⟩².
    let sq = xi.mapv(|x| x * x);

    let mut gamma_l: Vec<Array2<f64>> = Vec::with_capacity(n);
    let mut alpha_l: Vec<Array2<f64>> = Vec::with_capacity(n);

    // Wrap bond l = 1: γ(1) = ¼ Σ_k (⟨N,ξ^k⟩² − ⟨1,ξ^k⟩²)/ω²_k · ξ^k (ξ^k)ᵀ.
    let mut w1 = Array1::<f64>::zeros(n);
    for k in 0..n {
        w1[k] = 0.25 * (sq[(n - 1, k)] - sq[(0, k)]) / decomp.omega2[k];
    }
    let mut scaled = xi.clone();
    for i in 0..n {
        for k in 0..n {
            scaled[(i, k)] *= w1[k];
        }
    }
    gamma_l.push(symmetrize(&scaled.dot(&xi.t())));

    // Bulk bonds l ≥ 2: γ(l) = Ξ diag(ρ(l)) Ξᵀ − P_{<l}, where
    // ρ(l)_k = Σ_{j≤l−1} ⟨j,ξ^k⟩² accumulates row by row.
    let mut rho = Array1::<f64>::zeros(n);
    for l in 2..=n {
        for k in 0..n {
            rho[k] += sq[(l - 2, k)];
        }
        let mut scaled = xi.clone();
        for i in 0..n {
            for k in 0..n {
                scaled[(i, k)] *= rho[k];
            }
        }
        let mut g = scaled.dot(&xi.t());
        for s in 0..(l - 1) {
            g[(s, s)] -= 1.0;
        }
        gamma_l.push(symmetrize(&g));
    }

    for (idx, g) in gamma_l.iter().enumerate() {
        let l = idx + 1;
        let a = phi.matrix.dot(g) - &(0.5 * bond_matrix(n, l));
        alpha_l.push(symmetrize(&a));
    }

    // Assemble u_N = −(1/2√N) Σ_l w_l with each w_l centered under μ_T.
    let scale = -1.0 / (2.0 * (n as f64).sqrt());
    let mut alpha = Array2::<f64>::zeros((n, n));
    let mut gamma = Array2::<f64>::zeros((n, n));
    let mut c = 0.0;
    for idx in 0..n {
        alpha = alpha + &alpha_l[idx];
        gamma = gamma + &gamma_l[idx];
        let w = QuadraticForm {
            alpha: alpha_l[idx].clone(),
            beta: Array2::zeros((n, n)),
            gamma: gamma_l[idx].clone(),
            c: 0.0,
        };
        c -= pairer.mean(&w);
    }
    let u = QuadraticForm {
        alpha: &alpha * scale,
        beta: Array2::zeros((n, n)),
        gamma: &gamma * scale,
        c: c * scale,
    };

    let current = build_current_form(n, BoundaryCondition::Fixed);
    let res_form = apply_generator(&u, phi, 0.0).add(&current);
    let residual = pairer.norm(&res_form);
    let current_norm = pairer.norm(&current);

    Ok(PoissonSolution {
        u,
        gamma_l,
        alpha_l,
        residual,
        current_norm,
    })
}

// ───────────── decay statistics of the bond blocks ─────────────

/// Disorder-averaged squared entries of `γ(l)` and `α(l)`, binned by the
/// distance `|j−l| + |k−l|` (wrap convention for the `l = 1` bond), with an
/// exponential-decay fit.
#[derive(Debug, Clone)]
pub struct DecayStats {
    pub distance: Vec<usize>,
    pub mean_gamma_sq: Vec<f64>,
    pub mean_alpha_sq: Vec<f64>,
    pub count: Vec<u64>,
    pub gamma_rate: f64,
    pub gamma_rate_stderr: f64,
    pub alpha_rate: f64,
    pub alpha_rate_stderr: f64,
    /// Largest `|γ_{j,k}(l)|` seen over `l ≥ 2` (bounded by 1 pathwise).
    pub max_abs_gamma_bulk: f64,
    pub window: (usize, usize),
    pub n_draws: usize,
}

/// Accumulate decay statistics across an ensemble of Poisson solutions.
/// Solutions are consumed one at a time, so the ensemble never needs to be
/// resident in memory at once.
pub fn exponential_bound_stats<I>(solutions: I) -> Result<DecayStats>
where
    I: IntoIterator<Item = PoissonSolution>,
{
    let mut n = 0usize;
    let mut gamma_sum: Vec<f64> = Vec::new();
    let mut alpha_sum: Vec<f64> = Vec::new();
    let mut count: Vec<u64> = Vec::new();
    let mut max_abs_gamma_bulk = 0.0f64;
    let mut n_draws = 0usize;

    for sol in solutions {
        if n == 0 {
            n = sol.u.n();
            gamma_sum = vec![0.0; 2 * n];
            alpha_sum = vec![0.0; 2 * n];
            count = vec![0; 2 * n];
        } else if sol.u.n() != n {
            return Err(Error::parameter("ensemble members differ in size"));
        }
        n_draws += 1;
        for (idx, (g, a)) in sol.gamma_l.iter().zip(&sol.alpha_l).enumerate() {
            let l = idx + 1; // 1-based bond index
            for j in 0..n {
                let dj = if l == 1 {
                    j.min(n - 1 - j)
                } else {
                    (j + 1).abs_diff(l)
                };
                for k in 0..n {
                    let dk = if l == 1 {
                        k.min(n - 1 - k)
                    } else {
                        (k + 1).abs_diff(l)
                    };
                    let d = dj + dk;
                    gamma_sum[d] += g[(j, k)] * g[(j, k)];
                    alpha_sum[d] += a[(j, k)] * a[(j, k)];
                    count[d] += 1;
                    if l >= 2 {
                        max_abs_gamma_bulk = max_abs_gamma_bulk.max(g[(j, k)].abs());
                    }
                }
            }
        }
    }
    if n_draws < 20 {
        return Err(Error::parameter("need at least 20 disorder draws"));
    }

    let max_d = (0..2 * n).rev().find(|&d| count[d] > 0).unwrap_or(0);
    let distance: Vec<usize> = (0..=max_d).collect();
    let mean_gamma_sq: Vec<f64> = distance
        .iter()
        .map(|&d| gamma_sum[d] / count[d].max(1) as f64)
        .collect();
    let mean_alpha_sq: Vec<f64> = distance
        .iter()
        .map(|&d| alpha_sum[d] / count[d].max(1) as f64)
        .collect();

    // Fit −log(mean) against distance on [2, N/2], skipping bins at the
    // roundoff floor.
    let lo = 2usize;
    let hi = (n / 2).max(lo + 2);
    let fit_on = |means: &[f64]| -> Result<stats::LineFit> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for d in lo..=hi.min(max_d) {
            if means[d] > 1e-28 {
                xs.push(d as f64);
                ys.push(-means[d].ln());
            }
        }
        if xs.len() < 3 {
            return Err(Error::parameter("decay fit window too small"));
        }
        Ok(stats::fit_line(&xs, &ys))
    };
    let gfit = fit_on(&mean_gamma_sq)?;
    let afit = fit_on(&mean_alpha_sq)?;

    Ok(DecayStats {
        distance,
        mean_gamma_sq,
        mean_alpha_sq,
        count,
        gamma_rate: gfit.slope,
        gamma_rate_stderr: gfit.slope_stderr,
        alpha_rate: afit.slope,
        alpha_rate_stderr: afit.slope_stderr,
        max_abs_gamma_bulk,
        window: (lo, hi.min(max_d)),
        n_draws,
    })
}

// ───────────── norm tables for the assembled solution ─────────────

#[derive(Debug, Clone)]
pub struct NormBoundsRow {
    pub n: usize,
    /// `‖u_N‖²` in `L²(E_ν μ_T)`, with its standard error over draws.
    pub u_norm_sq: f64,
    pub u_norm_sq_stderr: f64,
    /// Monte Carlo estimate of `‖A_anh u_N‖²` under the anharmonic measure.
    pub anh_norm_sq: Option<f64>,
    pub anh_norm_sq_stderr: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct AnhNormConfig {
    pub lambda_prime: f64,
    pub potential: AnharmonicPotential,
    pub n_samples: usize,
}

/// `A_anh u = Σ_l φ_l(q) p_l` with `φ = −2γ g(q)` for the anharmonic
/// gradient `g`; returns `Σ_l φ_l(q)²`.
pub fn anh_image_sq(
    u: &QuadraticForm,
    q: &Array1<f64>,
    bc: BoundaryCondition,
    potential: &AnharmonicPotential,
) -> f64 {
    let g = crate::chain::anharmonic_gradient(q, bc, potential);
    let phi_vec = u.gamma.dot(&g) * (-2.0);
    phi_vec.dot(&phi_vec)
}

/// Tables of `‖u_N‖²` (exact pairing) and, when configured, `‖A_anh u_N‖²`
/// (Monte Carlo under the anharmonic Gibbs marginal) across chain sizes.
pub fn norm_bounds_u(
    sizes: &[usize],
    nu_interval: (f64, f64),
    n_draws: usize,
    temperature: f64,
    anh: Option<AnhNormConfig>,
    seed: u64,
) -> Result<Vec<NormBoundsRow>> {
    let mut rows = Vec::with_capacity(sizes.len());
    for (si, &n) in sizes.iter().enumerate() {
        let mut u_norms = Vec::with_capacity(n_draws);
        let mut anh_norms = Vec::with_capacity(n_draws);
        for draw in 0..n_draws {
            let d = crate::chain::sample_disorder(
                n,
                nu_interval.0,
                nu_interval.1,
                None,
                seed.wrapping_add((si * n_draws + draw) as u64),
            )?;
            let phi = crate::chain::build_phi(&d, BoundaryCondition::Fixed);
            let decomp = crate::spectral::eigendecompose(&phi)?;
            let sol = poisson_closed_form(&phi, &decomp, temperature)?;
            let pairer = GibbsPairer::new(&phi, temperature)?;
            u_norms.push(pairer.pairing(&sol.u, &sol.u));
            if let Some(cfg) = anh {
                let params = GibbsParams::anharmonic(temperature, cfg.lambda_prime, cfg.potential);
                let mut sampler =
                    crate::chain::AnharmonicGibbsSampler::new(&phi, params, cfg.potential)?;
                let mut rng = crate::rng::stream(
                    seed,
                    crate::rng::Purpose::Auxiliary,
                    si as u64,
                    draw as u64,
                );
                sampler.burn_in(&mut rng)?;
                let mut acc = Vec::with_capacity(cfg.n_samples);
                for _ in 0..cfg.n_samples {
                    let q = sampler.sample(&mut rng);
                    acc.push(
                        temperature
                            * anh_image_sq(&sol.u, &q, BoundaryCondition::Fixed, &cfg.potential),
                    );
                }
                anh_norms.push(stats::mean(&acc));
            }
        }
        let (u_mean, u_se) = stats::jackknife_mean(&u_norms);
        let (a_mean, a_se) = if anh.is_some() {
            let (m, s) = stats::jackknife_mean(&anh_norms);
            (Some(m), Some(s))
        } else {
            (None, None)
        };
        rows.push(NormBoundsRow {
            n,
            u_norm_sq: u_mean,
            u_norm_sq_stderr: u_se,
            anh_norm_sq: a_mean,
            anh_norm_sq_stderr: a_se,
        });
    }
    Ok(rows)
}
