//! The disordered chain itself: random pinnings (and optional masses), the
//! coupling matrix Φ, Gibbs-measure sampling, and the local energy/current
//! observables.
//!
//! Conventions. A state is `x = (q, p) ∈ R^{2N}`. The harmonic Hamiltonian is
//! `H_har = ⟨p, M⁻¹p⟩/2 + ⟨q, Φq⟩/2` with `Φ = −Δ + W`,
//!
//! ```text
//! Φ_{j,k} = (2 + ν_k) δ_{j,k} − δ_{j,k+1} − δ_{j,k−1}            (fixed)
//! Φ_{j,k} = ...same... − δ_{j,1}δ_{k,N} − δ_{j,N}δ_{k,1}          (periodic)
//! ```
//!
//! Fixed boundaries are Dirichlet on both ends (`q_0 = q_{N+1} = 0`); the
//! boundary terms of the local energies `e_1` and `e_N` carry weight 1/2
//! instead of 1/4 so that `Σ_k e_k = H` holds exactly. The anharmonic part
//! `λ' Σ_k (U(q_k) + V(q_{k+1} − q_k))` has no left-boundary coupling bond
//! for fixed boundaries, matching its local-energy splitting the same way.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ───────────────────────── disorder ─────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    Fixed,
    Periodic,
}

impl std::fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundaryCondition::Fixed => write!(f, "fixed"),
            BoundaryCondition::Periodic => write!(f, "periodic"),
        }
    }
}

/// Sampling law of an i.i.d. disorder sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DisorderLaw {
    /// Uniform on `[lo, hi]`; `lo == hi` degenerates to a constant.
    Uniform { lo: f64, hi: f64 },
}

impl DisorderLaw {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        DisorderLaw::Uniform { lo, hi }
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            DisorderLaw::Uniform { lo, hi } => {
                if lo == hi {
                    lo
                } else {
                    lo + (hi - lo) * rng.random::<f64>()
                }
            }
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            DisorderLaw::Uniform { lo, hi } => (lo, hi),
        }
    }
}

impl std::fmt::Display for DisorderLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            DisorderLaw::Uniform { lo, hi } => write!(f, "uniform {lo} {hi}"),
        }
    }
}

/// One realization of the random environment: pinnings `ν_k` (and optional
/// masses `m_k`), plus the metadata needed to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderRealization {
    pub nu: Vec<f64>,
    pub masses: Option<Vec<f64>>,
    pub seed: u64,
    pub law: DisorderLaw,
    pub mass_law: Option<DisorderLaw>,
}

impl DisorderRealization {
    pub fn len(&self) -> usize {
        self.nu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nu.is_empty()
    }

    /// Pinned constant-ν chain (the ordered reference system).
    pub fn ordered(n: usize, nu: f64) -> Self {
        DisorderRealization {
            nu: vec![nu; n],
            masses: None,
            seed: 0,
            law: DisorderLaw::uniform(nu, nu),
            mass_law: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu.is_empty() {
            return Err(Error::parameter("empty disorder realization"));
        }
        let (lo, hi) = self.law.bounds();
        if let Some(masses) = &self.masses {
            if masses.len() != self.nu.len() {
                return Err(Error::parameter("masses length mismatch"));
            }
            if masses.iter().any(|&m| !(m > 0.0)) {
                return Err(Error::parameter("masses must be positive"));
            }
            if self.nu.iter().any(|&v| v < 0.0) {
                return Err(Error::parameter("pinnings must be nonnegative"));
            }
        } else if self.nu.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::parameter(
                "pinnings must be strictly positive when masses are absent",
            ));
        }
        if self.nu.iter().any(|&v| v < lo - 1e-15 || v > hi + 1e-15) {
            return Err(Error::parameter("pinning outside the law's support"));
        }
        Ok(())
    }
}

/// Draw an i.i.d. disorder realization.
///
/// `nu_minus = nu_plus = 0` is allowed only together with a mass law (the
/// unpinned, mass-disordered variant). Deterministic given `seed`.
pub fn sample_disorder(
    n: usize,
    nu_minus: f64,
    nu_plus: f64,
    mass_law: Option<DisorderLaw>,
    seed: u64,
) -> Result<DisorderRealization> {
    if n == 0 {
        return Err(Error::parameter("chain length must be at least 1"));
    }
    if nu_minus > nu_plus {
        return Err(Error::parameter(format!(
            "inverted pinning interval [{nu_minus}, {nu_plus}]"
        )));
    }
    if mass_law.is_none() && nu_minus <= 0.0 {
        return Err(Error::parameter(
            "nu_minus must be positive unless masses are disordered",
        ));
    }
    if let Some(law) = &mass_law {
        let (lo, _) = law.bounds();
        if lo <= 0.0 {
            return Err(Error::parameter("mass law must be bounded away from 0"));
        }
    }
    let mut rng = crate::rng::disorder_stream(seed, 0);
    let law = DisorderLaw::uniform(nu_minus, nu_plus);
    let nu: Vec<f64> = (0..n).map(|_| law.draw(&mut rng)).collect();
    let masses = mass_law.map(|ml| (0..n).map(|_| ml.draw(&mut rng)).collect());
    Ok(DisorderRealization {
        nu,
        masses,
        seed,
        law,
        mass_law,
    })
}

// ───────────────────── text round-trip format ─────────────────────

/// Serialize a disorder realization to the line-oriented text format:
/// a header carrying `(N, bc, law, seed)` and one `ν_k` (plus optional
/// `m_k`) per line. Floats print in shortest round-trip form, so parsing
/// recovers every bit.
pub fn disorder_to_text(d: &DisorderRealization, bc: BoundaryCondition) -> String {
    let mut out = String::from("flipchain-disorder v1\n");
    let mass_law = match &d.mass_law {
        Some(law) => format!("{law}"),
        None => "none".to_string(),
    };
    out.push_str(&format!(
        "n={} bc={} law={} seed={} masses={}\n",
        d.len(),
        bc,
        d.law,
        d.seed,
        mass_law
    ));
    for k in 0..d.len() {
        match &d.masses {
            Some(m) => out.push_str(&format!("{} {}\n", d.nu[k], m[k])),
            None => out.push_str(&format!("{}\n", d.nu[k])),
        }
    }
    out
}

fn parse_law(s: &str) -> Result<DisorderLaw> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    match parts.as_slice() {
        ["uniform", lo, hi] => {
            let lo: f64 = lo.parse().map_err(|e| Error::Parse(format!("{e}")))?;
            let hi: f64 = hi.parse().map_err(|e| Error::Parse(format!("{e}")))?;
            Ok(DisorderLaw::uniform(lo, hi))
        }
        _ => Err(Error::Parse(format!("unknown law `{s}`"))),
    }
}

pub fn disorder_from_text(text: &str) -> Result<(DisorderRealization, BoundaryCondition)> {
    let mut lines = text.lines();
    match lines.next() {
        Some("flipchain-disorder v1") => {}
        other => return Err(Error::Parse(format!("bad magic line {other:?}"))),
    }
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("missing header".into()))?;
    let mut n = None;
    let mut bc = None;
    let mut seed = None;
    let mut law = None;
    let mut mass_law = None;
    // `law=uniform 1 2` contains spaces, so split on `key=` boundaries.
    let mut fields: Vec<(String, String)> = Vec::new();
    for tok in header.split_whitespace() {
        if let Some(eq) = tok.find('=') {
            fields.push((tok[..eq].to_string(), tok[eq + 1..].to_string()));
        } else if let Some(last) = fields.last_mut() {
            last.1.push(' ');
            last.1.push_str(tok);
        }
    }
    for (key, value) in fields {
        match key.as_str() {
            "n" => n = Some(value.parse::<usize>().map_err(|e| Error::Parse(e.to_string()))?),
            "bc" => {
                bc = Some(match value.as_str() {
                    "fixed" => BoundaryCondition::Fixed,
                    "periodic" => BoundaryCondition::Periodic,
                    other => return Err(Error::Parse(format!("bad bc `{other}`"))),
                })
            }
            "seed" => seed = Some(value.parse::<u64>().map_err(|e| Error::Parse(e.to_string()))?),
            "law" => law = Some(parse_law(&value)?),
            "masses" => {
                mass_law = Some(if value == "none" {
                    None
                } else {
                    Some(parse_law(&value)?)
                })
            }
            other => return Err(Error::Parse(format!("unknown header key `{other}`"))),
        }
    }
    let (n, bc, seed, law, mass_law) = match (n, bc, seed, law, mass_law) {
        (Some(n), Some(bc), Some(seed), Some(law), Some(ml)) => (n, bc, seed, law, ml),
        _ => return Err(Error::Parse("incomplete header".into())),
    };
    let mut nu = Vec::with_capacity(n);
    let mut masses = mass_law.as_ref().map(|_| Vec::with_capacity(n));
    for line in lines.take(n) {
        let mut cols = line.split_whitespace();
        let v: f64 = cols
            .next()
            .ok_or_else(|| Error::Parse("short row".into()))?
            .parse()
            .map_err(|e: std::num::ParseFloatError| Error::Parse(e.to_string()))?;
        nu.push(v);
        if let Some(m) = masses.as_mut() {
            let mv: f64 = cols
                .next()
                .ok_or_else(|| Error::Parse("missing mass column".into()))?
                .parse()
                .map_err(|e: std::num::ParseFloatError| Error::Parse(e.to_string()))?;
            m.push(mv);
        }
    }
    if nu.len() != n {
        return Err(Error::Parse(format!("expected {n} rows, got {}", nu.len())));
    }
    Ok((
        DisorderRealization {
            nu,
            masses,
            seed,
            law,
            mass_law,
        },
        bc,
    ))
}

// ───────────────────────── coupling matrix ─────────────────────────

/// The symmetric positive-definite matrix `Φ` (dense storage plus extracted
/// bands for fast matrix-vector products).
#[derive(Debug, Clone)]
pub struct CouplingMatrix {
    pub matrix: Array2<f64>,
    pub bc: BoundaryCondition,
    diag: Vec<f64>,
    sub: Vec<f64>,
    /// Corner entries `(1,N)/(N,1)` for periodic boundaries.
    corner: f64,
}

/// Build `Φ` from the pinnings: diagonal `2 + ν_k`, off-diagonals `−1`,
/// plus `−1` corner entries for periodic boundaries.
pub fn build_phi(disorder: &DisorderRealization, bc: BoundaryCondition) -> CouplingMatrix {
    let n = disorder.len();
    let diag: Vec<f64> = disorder.nu.iter().map(|&v| 2.0 + v).collect();
    let sub = vec![-1.0; n.saturating_sub(1)];
    let corner = match bc {
        BoundaryCondition::Periodic if n > 2 => -1.0,
        _ => 0.0,
    };
    CouplingMatrix::from_bands(diag, sub, corner, bc)
}

/// The mass-reduced matrix `M^{-1/2} Φ M^{-1/2}` in the coordinates
/// `q̃ = M^{1/2} q`, `p̃ = M^{-1/2} p`, in which the kinetic term is unit-mass
/// and the flip noise still acts site by site. Identical to [`build_phi`]
/// when no masses are present.
pub fn build_phi_effective(
    disorder: &DisorderRealization,
    bc: BoundaryCondition,
) -> CouplingMatrix {
    let plain = build_phi(disorder, bc);
    match &disorder.masses {
        None => plain,
        Some(masses) => {
            let n = disorder.len();
            let inv_sqrt: Vec<f64> = masses.iter().map(|&m| 1.0 / m.sqrt()).collect();
            let mut diag = Vec::with_capacity(n);
            let mut sub = Vec::with_capacity(n.saturating_sub(1));
            for k in 0..n {
                diag.push(plain.diag[k] * inv_sqrt[k] * inv_sqrt[k]);
            }
            for k in 0..n.saturating_sub(1) {
                sub.push(plain.sub[k] * inv_sqrt[k] * inv_sqrt[k + 1]);
            }
            let corner = plain.corner * inv_sqrt[0] * inv_sqrt[n - 1];
            CouplingMatrix::from_bands(diag, sub, corner, bc)
        }
    }
}

impl CouplingMatrix {
    pub fn from_bands(diag: Vec<f64>, sub: Vec<f64>, corner: f64, bc: BoundaryCondition) -> Self {
        let n = diag.len();
        let mut matrix = Array2::zeros((n, n));
        for k in 0..n {
            matrix[(k, k)] = diag[k];
        }
        for k in 0..n.saturating_sub(1) {
            matrix[(k, k + 1)] = sub[k];
            matrix[(k + 1, k)] = sub[k];
        }
        if corner != 0.0 {
            matrix[(0, n - 1)] = corner;
            matrix[(n - 1, 0)] = corner;
        }
        CouplingMatrix {
            matrix,
            bc,
            diag,
            sub,
            corner,
        }
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn sub(&self) -> &[f64] {
        &self.sub
    }

    pub fn is_tridiagonal(&self) -> bool {
        self.corner == 0.0
    }

    /// `y = Φ x` using the band structure.
    pub fn matvec(&self, x: &Array1<f64>) -> Array1<f64> {
        let n = self.n();
        let mut y = Array1::zeros(n);
        for k in 0..n {
            let mut acc = self.diag[k] * x[k];
            if k > 0 {
                acc += self.sub[k - 1] * x[k - 1];
            }
            if k + 1 < n {
                acc += self.sub[k] * x[k + 1];
            }
            y[k] = acc;
        }
        if self.corner != 0.0 {
            y[0] += self.corner * x[n - 1];
            y[n - 1] += self.corner * x[0];
        }
        y
    }

    /// Lower Cholesky factor `L` with `Φ = L Lᵀ`. Fails on non-PD input.
    pub fn cholesky_lower(&self) -> Result<Array2<f64>> {
        cholesky_lower(&self.matrix)
    }

    /// Dense inverse via Cholesky (used to cache `Φ⁻¹` for Gaussian moments).
    pub fn inverse(&self) -> Result<Array2<f64>> {
        let l = self.cholesky_lower()?;
        let n = self.n();
        let mut inv = Array2::zeros((n, n));
        for j in 0..n {
            let mut e = Array1::zeros(n);
            e[j] = 1.0;
            let x = solve_cholesky(&l, &e);
            inv.column_mut(j).assign(&x);
        }
        // Symmetrize away the last-bit asymmetry from the columnwise solves.
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        Ok(inv)
    }
}

/// Dense lower Cholesky factorization.
pub fn cholesky_lower(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::numeric(format!(
                "Cholesky pivot {d:.3e} at index {j}: matrix not positive definite"
            )));
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(l)
}

/// Solve `L Lᵀ x = b` given the lower factor.
pub fn solve_cholesky(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

// ───────────────────────── states & potentials ─────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub q: Array1<f64>,
    pub p: Array1<f64>,
}

impl ChainState {
    pub fn new(q: Array1<f64>, p: Array1<f64>) -> Self {
        assert_eq!(q.len(), p.len());
        ChainState { q, p }
    }

    pub fn zero(n: usize) -> Self {
        ChainState {
            q: Array1::zeros(n),
            p: Array1::zeros(n),
        }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// Built-in even on-site potentials `U` with `U'' ≥ 0` and `e^{−U}`
/// integrable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OnSitePotential {
    /// `U(x) = x⁴/4`
    Quartic,
}

/// Built-in even coupling potentials `V` with `0 < V'' ≤ 1`, so that
/// `c ≤ 1 + λ'V'' ≤ c⁻¹` holds with `c = 1/(1 + λ')`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingPotential {
    /// `V(x) = √(1+x²) − 1`
    BoundedHessian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnharmonicPotential {
    pub onsite: OnSitePotential,
    pub coupling: CouplingPotential,
}

impl Default for AnharmonicPotential {
    fn default() -> Self {
        AnharmonicPotential {
            onsite: OnSitePotential::Quartic,
            coupling: CouplingPotential::BoundedHessian,
        }
    }
}

impl AnharmonicPotential {
    pub fn u(&self, x: f64) -> f64 {
        match self.onsite {
            OnSitePotential::Quartic => 0.25 * x * x * x * x,
        }
    }

    pub fn u_prime(&self, x: f64) -> f64 {
        match self.onsite {
            OnSitePotential::Quartic => x * x * x,
        }
    }

    pub fn u_second(&self, x: f64) -> f64 {
        match self.onsite {
            OnSitePotential::Quartic => 3.0 * x * x,
        }
    }

    pub fn v(&self, x: f64) -> f64 {
        match self.coupling {
            CouplingPotential::BoundedHessian => (1.0 + x * x).sqrt() - 1.0,
        }
    }

    pub fn v_prime(&self, x: f64) -> f64 {
        match self.coupling {
            CouplingPotential::BoundedHessian => x / (1.0 + x * x).sqrt(),
        }
    }

    pub fn v_second(&self, x: f64) -> f64 {
        match self.coupling {
            CouplingPotential::BoundedHessian => (1.0 + x * x).powf(-1.5),
        }
    }

    /// Check the standing hypotheses on a sampled grid: symmetry of `U` and
    /// `V`, convexity of `U`, and `c ≤ 1 + λ'V'' ≤ c⁻¹` for `c = 1/(1+λ')`.
    pub fn validate(&self, lambda_prime: f64) -> Result<()> {
        let c = 1.0 / (1.0 + lambda_prime.max(0.0));
        for i in -50..=50 {
            let x = 0.2 * i as f64;
            if (self.u(x) - self.u(-x)).abs() > 1e-12 * (1.0 + self.u(x).abs()) {
                return Err(Error::parameter("on-site potential is not even"));
            }
            if (self.v(x) - self.v(-x)).abs() > 1e-12 * (1.0 + self.v(x).abs()) {
                return Err(Error::parameter("coupling potential is not even"));
            }
            if self.u_second(x) < 0.0 {
                return Err(Error::parameter("on-site potential is not convex"));
            }
            let h = 1.0 + lambda_prime * self.v_second(x);
            if h < c - 1e-12 || h > 1.0 / c + 1e-12 {
                return Err(Error::parameter(
                    "coupling Hessian bound violated on the test grid",
                ));
            }
        }
        Ok(())
    }
}

// ───────────────────────── Gibbs sampling ─────────────────────────

/// Metropolis controls for the anharmonic (`λ' > 0`) position sampler.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetropolisParams {
    pub burn_in_sweeps: usize,
    pub thinning_sweeps: usize,
    pub initial_step: f64,
}

impl Default for MetropolisParams {
    fn default() -> Self {
        MetropolisParams {
            burn_in_sweeps: 200,
            thinning_sweeps: 10,
            initial_step: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GibbsParams {
    pub temperature: f64,
    pub lambda_prime: f64,
    pub potential: Option<AnharmonicPotential>,
    pub metropolis: MetropolisParams,
}

impl GibbsParams {
    pub fn harmonic(temperature: f64) -> Self {
        GibbsParams {
            temperature,
            lambda_prime: 0.0,
            potential: None,
            metropolis: MetropolisParams::default(),
        }
    }

    pub fn anharmonic(temperature: f64, lambda_prime: f64, potential: AnharmonicPotential) -> Self {
        GibbsParams {
            temperature,
            lambda_prime,
            potential: Some(potential),
            metropolis: MetropolisParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::parameter("temperature must be positive"));
        }
        if self.lambda_prime < 0.0 {
            return Err(Error::parameter("lambda_prime must be nonnegative"));
        }
        if self.lambda_prime > 0.0 && self.potential.is_none() {
            return Err(Error::parameter("lambda_prime > 0 requires a potential"));
        }
        Ok(())
    }
}

/// Draw a state from the Gibbs measure `∝ e^{−H/T}`.
///
/// Momenta are exactly Gaussian with variance `T m_k`. For `λ' = 0` the
/// positions are exactly Gaussian with covariance `T Φ⁻¹`, realized as
/// `q = L⁻ᵀ g` for `Φ/T = L Lᵀ` and `g` standard normal. For `λ' > 0` the
/// positions come from a per-site random-walk Metropolis chain targeting the
/// anharmonic marginal; the result is an approximate sample after the
/// configured burn-in.
pub fn sample_gibbs(
    phi: &CouplingMatrix,
    masses: Option<&[f64]>,
    params: &GibbsParams,
    rng: &mut impl Rng,
) -> Result<ChainState> {
    params.validate()?;
    let n = phi.n();
    let t = params.temperature;
    let mut p = Array1::zeros(n);
    for k in 0..n {
        let m = masses.map_or(1.0, |m| m[k]);
        let g: f64 = rng.sample(StandardNormal);
        p[k] = (t * m).sqrt() * g;
    }
    let q = if params.lambda_prime == 0.0 {
        sample_gaussian_positions(phi, t, rng)?
    } else {
        let potential = params.potential.as_ref().unwrap();
        let mut sampler = AnharmonicGibbsSampler::new(phi, params.clone(), *potential)?;
        sampler.burn_in(rng)?;
        sampler.sample(rng)
    };
    Ok(ChainState::new(q, p))
}

fn sample_gaussian_positions(
    phi: &CouplingMatrix,
    t: f64,
    rng: &mut impl Rng,
) -> Result<Array1<f64>> {
    let n = phi.n();
    let scaled = &phi.matrix / t;
    let l = cholesky_lower(&scaled)?;
    let g: Array1<f64> = Array1::from_iter((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    // Solve Lᵀ q = g so that Cov(q) = (L Lᵀ)⁻¹ = T Φ⁻¹.
    let mut q = g;
    for i in (0..n).rev() {
        let mut s = q[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * q[k];
        }
        q[i] = s / l[(i, i)];
    }
    Ok(q)
}

/// Persistent Metropolis chain on the positions for `λ' > 0`; reusable when
/// many samples from the same measure are needed.
pub struct AnharmonicGibbsSampler<'a> {
    phi: &'a CouplingMatrix,
    params: GibbsParams,
    potential: AnharmonicPotential,
    q: Array1<f64>,
    step: f64,
    burned_in: bool,
}

impl<'a> AnharmonicGibbsSampler<'a> {
    pub fn new(
        phi: &'a CouplingMatrix,
        params: GibbsParams,
        potential: AnharmonicPotential,
    ) -> Result<Self> {
        params.validate()?;
        potential.validate(params.lambda_prime)?;
        Ok(AnharmonicGibbsSampler {
            phi,
            q: Array1::zeros(phi.n()),
            step: params.metropolis.initial_step,
            params,
            potential,
            burned_in: false,
        })
    }

    /// Local energy change when `q_k` moves to `new`.
    fn local_delta(&self, k: usize, new: f64) -> f64 {
        let q = &self.q;
        let n = q.len();
        let old = q[k];
        let phi = self.phi;
        // Harmonic: Δ(½⟨q,Φq⟩) touches row k only.
        let mut cross = 0.0;
        if k > 0 {
            cross += phi.sub()[k - 1] * q[k - 1];
        }
        if k + 1 < n {
            cross += phi.sub()[k] * q[k + 1];
        }
        if !phi.is_tridiagonal() {
            if k == 0 {
                cross += phi.corner * q[n - 1];
            } else if k == n - 1 {
                cross += phi.corner * q[0];
            }
        }
        let mut delta = 0.5 * phi.diag()[k] * (new * new - old * old) + (new - old) * cross;
        // Anharmonic: on-site term plus the bonds adjacent to k.
        let lp = self.params.lambda_prime;
        let pot = &self.potential;
        let mut anh = pot.u(new) - pot.u(old);
        let left = match (self.phi.bc, k) {
            (BoundaryCondition::Fixed, 0) => None, // no left coupling bond
            (BoundaryCondition::Periodic, 0) => Some(q[n - 1]),
            _ => Some(q[k - 1]),
        };
        if let Some(ql) = left {
            anh += pot.v(new - ql) - pot.v(old - ql);
        }
        let right = match (self.phi.bc, k) {
            (BoundaryCondition::Fixed, _) if k == n - 1 => Some(0.0), // q_{N+1} = 0
            (BoundaryCondition::Periodic, _) if k == n - 1 => Some(q[0]),
            _ => Some(q[k + 1]),
        };
        if let Some(qr) = right {
            anh += pot.v(qr - new) - pot.v(qr - old);
        }
        delta += lp * anh;
        delta
    }

    /// One sweep of per-site proposals; returns the acceptance fraction.
    pub fn sweep(&mut self, rng: &mut impl Rng) -> f64 {
        let n = self.q.len();
        let t = self.params.temperature;
        let mut accepted = 0usize;
        for k in 0..n {
            let g: f64 = rng.sample(StandardNormal);
            let proposal = self.q[k] + self.step * g;
            let delta = self.local_delta(k, proposal);
            if delta <= 0.0 || rng.random::<f64>() < (-delta / t).exp() {
                self.q[k] = proposal;
                accepted += 1;
            }
        }
        accepted as f64 / n as f64
    }

    /// Run the burn-in, adapting the step toward ~40% acceptance. The step is
    /// frozen afterwards so the sampling phase satisfies detailed balance.
    pub fn burn_in(&mut self, rng: &mut impl Rng) -> Result<()> {
        let sweeps = self.params.metropolis.burn_in_sweeps.max(1);
        let block = 10usize;
        let mut acc_block = 0.0;
        for s in 0..sweeps {
            acc_block += self.sweep(rng);
            if (s + 1) % block == 0 {
                let acc = acc_block / block as f64;
                if acc > 0.45 {
                    self.step *= 1.2;
                } else if acc < 0.35 {
                    self.step *= 0.8;
                }
                acc_block = 0.0;
            }
        }
        if !self.step.is_finite() || self.step <= 0.0 {
            return Err(Error::numeric("Metropolis step adaptation diverged"));
        }
        self.burned_in = true;
        Ok(())
    }

    /// Advance by the thinning stride and return the current positions.
    pub fn sample(&mut self, rng: &mut impl Rng) -> Array1<f64> {
        debug_assert!(self.burned_in, "sample() called before burn_in()");
        for _ in 0..self.params.metropolis.thinning_sweeps.max(1) {
            self.sweep(rng);
        }
        self.q.clone()
    }
}

// ───────────────────────── observables ─────────────────────────

#[derive(Debug, Clone)]
pub struct Observables {
    /// Local energies `e_k`, `k = 1..N`.
    pub energy: Vec<f64>,
    /// Local currents `j_k`, `k = 1..N` (`j_N = 0` for fixed boundaries).
    pub current: Vec<f64>,
    /// `J_N = Σ_k j_k`.
    pub total_current: f64,
    /// `𝒥_N = J_N / √N`.
    pub rescaled_current: f64,
    /// The Hamiltonian evaluated from its defining formula.
    pub hamiltonian: f64,
}

/// Local energies, local currents, their totals, and the Hamiltonian.
///
/// `Σ_k e_k = H` holds exactly (same summands, regrouped); the returned
/// `hamiltonian` is evaluated independently from the defining formula so the
/// identity is a real check on the boundary conventions.
pub fn observables(
    state: &ChainState,
    disorder: &DisorderRealization,
    bc: BoundaryCondition,
    lambda_prime: f64,
    potential: Option<&AnharmonicPotential>,
) -> Result<Observables> {
    let n = state.len();
    if disorder.len() != n {
        return Err(Error::parameter("state/disorder length mismatch"));
    }
    if lambda_prime > 0.0 && potential.is_none() {
        return Err(Error::parameter("lambda_prime > 0 requires a potential"));
    }
    let q = &state.q;
    let p = &state.p;
    let nu = &disorder.nu;
    let inv_mass: Vec<f64> = match &disorder.masses {
        Some(m) => m.iter().map(|&m| 1.0 / m).collect(),
        None => vec![1.0; n],
    };

    // Neighbor positions with the boundary conventions folded in:
    // left(k) = q_{k-1} (periodic wrap, or the Dirichlet wall 0 at k = 1),
    // right(k) = q_{k+1} (wrap or wall). The fixed-boundary walls carry
    // doubled weight in e_1 and e_N.
    let left = |k: usize| -> Option<(f64, f64)> {
        // (value, weight of the squared-difference term)
        if k == 0 {
            match bc {
                BoundaryCondition::Fixed => Some((0.0, 0.5)),
                BoundaryCondition::Periodic => Some((q[n - 1], 0.25)),
            }
        } else {
            Some((q[k - 1], 0.25))
        }
    };
    let right = |k: usize| -> Option<(f64, f64)> {
        if k == n - 1 {
            match bc {
                BoundaryCondition::Fixed => Some((0.0, 0.5)),
                BoundaryCondition::Periodic => Some((q[0], 0.25)),
            }
        } else {
            Some((q[k + 1], 0.25))
        }
    };

    let mut energy = Vec::with_capacity(n);
    for k in 0..n {
        let mut e = 0.5 * p[k] * p[k] * inv_mass[k] + 0.5 * nu[k] * q[k] * q[k];
        if let Some((ql, w)) = left(k) {
            e += w * (q[k] - ql) * (q[k] - ql);
        }
        if let Some((qr, w)) = right(k) {
            e += w * (qr - q[k]) * (qr - q[k]);
        }
        if lambda_prime > 0.0 {
            let pot = potential.unwrap();
            let mut ea = pot.u(q[k]);
            // Fixed boundaries: no left coupling bond at k = 1; the right
            // boundary bond at k = N enters with weight 1 (doubled half).
            match bc {
                BoundaryCondition::Fixed => {
                    if k > 0 {
                        ea += 0.5 * pot.v(q[k] - q[k - 1]);
                    }
                    if k + 1 < n {
                        ea += 0.5 * pot.v(q[k + 1] - q[k]);
                    } else {
                        ea += pot.v(-q[k]);
                    }
                }
                BoundaryCondition::Periodic => {
                    let ql = if k == 0 { q[n - 1] } else { q[k - 1] };
                    let qr = if k == n - 1 { q[0] } else { q[k + 1] };
                    ea += 0.5 * pot.v(q[k] - ql) + 0.5 * pot.v(qr - q[k]);
                }
            }
            e += lambda_prime * ea;
        }
        energy.push(e);
    }

    let mut current = Vec::with_capacity(n);
    for k in 0..n {
        let j = if k + 1 < n {
            let vsum = p[k] * inv_mass[k] + p[k + 1] * inv_mass[k + 1];
            let dq = q[k] - q[k + 1];
            let mut j = 0.5 * vsum * dq;
            if lambda_prime > 0.0 {
                j += lambda_prime * 0.5 * vsum * potential.unwrap().v_prime(dq);
            }
            j
        } else {
            match bc {
                BoundaryCondition::Fixed => 0.0,
                BoundaryCondition::Periodic => {
                    let vsum = p[n - 1] * inv_mass[n - 1] + p[0] * inv_mass[0];
                    let dq = q[n - 1] - q[0];
                    let mut j = 0.5 * vsum * dq;
                    if lambda_prime > 0.0 {
                        j += lambda_prime * 0.5 * vsum * potential.unwrap().v_prime(dq);
                    }
                    j
                }
            }
        };
        current.push(j);
    }

    let total_current = crate::stats::pairwise_sum(&current);
    let rescaled_current = total_current / (n as f64).sqrt();

    // Independent evaluation of H from the defining formula.
    let mut h = 0.0;
    for k in 0..n {
        h += 0.5 * p[k] * p[k] * inv_mass[k] + 0.5 * nu[k] * q[k] * q[k];
    }
    for k in 0..n {
        // Bond (k, k+1); fixed boundaries close on the Dirichlet walls.
        let (dq, include) = if k + 1 < n {
            (q[k + 1] - q[k], true)
        } else {
            match bc {
                BoundaryCondition::Fixed => (-q[n - 1], true),
                BoundaryCondition::Periodic => (q[0] - q[n - 1], true),
            }
        };
        if include {
            h += 0.5 * dq * dq;
            if lambda_prime > 0.0 {
                h += lambda_prime * potential.unwrap().v(dq);
            }
        }
    }
    if bc == BoundaryCondition::Fixed {
        // Left Dirichlet wall bond (q_1 − q_0)² with q_0 = 0; harmonic only —
        // the anharmonic sum carries no left bond.
        h += 0.5 * q[0] * q[0];
    }
    if lambda_prime > 0.0 {
        let pot = potential.unwrap();
        for k in 0..n {
            h += lambda_prime * pot.u(q[k]);
        }
    }

    Ok(Observables {
        energy,
        current,
        total_current,
        rescaled_current,
        hamiltonian: h,
    })
}

/// Gradient of the anharmonic energy: `g_k = ∂_{q_k} H_anh`, with the same
/// boundary conventions as [`observables`].
pub fn anharmonic_gradient(
    q: &Array1<f64>,
    bc: BoundaryCondition,
    potential: &AnharmonicPotential,
) -> Array1<f64> {
    let n = q.len();
    let mut g = Array1::zeros(n);
    for k in 0..n {
        let mut gk = potential.u_prime(q[k]);
        match bc {
            BoundaryCondition::Fixed => {
                if k > 0 {
                    gk += potential.v_prime(q[k] - q[k - 1]);
                }
                if k + 1 < n {
                    gk -= potential.v_prime(q[k + 1] - q[k]);
                } else {
                    gk -= potential.v_prime(-q[k]);
                }
            }
            BoundaryCondition::Periodic => {
                let ql = if k == 0 { q[n - 1] } else { q[k - 1] };
                let qr = if k == n - 1 { q[0] } else { q[k + 1] };
                gk += potential.v_prime(q[k] - ql) - potential.v_prime(qr - q[k]);
            }
        }
        g[k] = gk;
    }
    g
}
