//! Closed-form machinery: modified Bessel functions, Gaussian propagators
//! with complex diffusion and drift, the exact solutions of the two worked
//! dephasing-random-walk examples, and their positivity thresholds.

pub mod bessel;
pub mod quad;

pub use bessel::{bessel_i, bessel_i_scaled};

use crate::linalg::cr;
use crate::{CMatrix, Complex64};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalyticError {
    #[error("{what} = {value:.6e} exceeds supported range (max {max:.0e})")]
    Range {
        what: &'static str,
        value: f64,
        max: f64,
    },
    #[error("domain error: {reason}")]
    Domain { reason: String },
}

fn domain(reason: impl Into<String>) -> AnalyticError {
    AnalyticError::Domain {
        reason: reason.into(),
    }
}

// ---------------------------------------------------------------------------
// Gaussian propagator
// ---------------------------------------------------------------------------

/// Gaussian propagator with complex diffusion coefficient and drift,
/// `(2 pi (sigma0^2 + D t))^{-1/2} exp(-(q - q0 - v t)^2 / (2 (sigma0^2 + D t)))`,
/// principal square root.
///
/// The real part of the variance must be positive; a nonpositive real part
/// signals a diffusive closed form outside its validity region (a solution
/// that diverges in time) and is refused rather than extrapolated.
pub fn gaussian_propagator(
    q: f64,
    t: f64,
    q0: f64,
    sigma0: f64,
    diffusion: Complex64,
    drift: Complex64,
) -> Result<Complex64, AnalyticError> {
    let variance = cr(sigma0 * sigma0) + diffusion * t;
    if variance.re <= 0.0 {
        return Err(domain(format!(
            "propagator variance {variance} has nonpositive real part"
        )));
    }
    let dq = cr(q - q0) - drift * t;
    let two_pi_var = variance * std::f64::consts::TAU;
    Ok((-dq * dq / (variance * 2.0)).exp() / two_pi_var.sqrt())
}

// ---------------------------------------------------------------------------
// Example parameter sets
// ---------------------------------------------------------------------------

/// Dephasing-correlated random walk: classical hopping at rate `phi`
/// combined with dephasing hops at rate `gamma` (jump operator `sigma_z`).
#[derive(Debug, Clone)]
pub struct Example1Params {
    pub phi: f64,
    pub gamma: f64,
    pub n0: i64,
    pub rho0: CMatrix,
}

impl Example1Params {
    pub fn new(phi: f64, gamma: f64, n0: i64, rho0: CMatrix) -> Result<Self, AnalyticError> {
        if !(phi >= 0.0) || !(gamma >= 0.0) {
            return Err(domain(format!("rates must be nonnegative: phi={phi}, gamma={gamma}")));
        }
        Ok(Self {
            phi,
            gamma,
            n0,
            rho0,
        })
    }
}

/// Generalization with non-diagonal coherent couplings `lambda_up` (hops
/// `n-1 -> n`) and `lambda_dn` (hops `n+1 -> n`), each constrained by
/// `|lambda|^2 <= gamma phi`.
#[derive(Debug, Clone)]
pub struct Example2Params {
    pub phi: f64,
    pub gamma: f64,
    pub lambda_up: Complex64,
    pub lambda_dn: Complex64,
    pub n0: i64,
    pub rho0: CMatrix,
}

impl Example2Params {
    pub fn new(
        phi: f64,
        gamma: f64,
        lambda_up: Complex64,
        lambda_dn: Complex64,
        n0: i64,
        rho0: CMatrix,
    ) -> Result<Self, AnalyticError> {
        if !(phi >= 0.0) || !(gamma >= 0.0) {
            return Err(domain(format!("rates must be nonnegative: phi={phi}, gamma={gamma}")));
        }
        let p = Self {
            phi,
            gamma,
            lambda_up,
            lambda_dn,
            n0,
            rho0,
        };
        let (up, dn) = p.cp_ratios();
        if up > 1.0 + 1e-9 || dn > 1.0 + 1e-9 {
            return Err(domain(format!(
                "coherent coupling outside the positivity ellipse: |lambda_up|^2/(gamma phi) = {up:.6}, |lambda_dn|^2/(gamma phi) = {dn:.6}"
            )));
        }
        Ok(p)
    }

    /// `lambda = lambda_up + lambda_dn`
    pub fn lambda(&self) -> Complex64 {
        self.lambda_up + self.lambda_dn
    }

    /// `delta_lambda = lambda_up - lambda_dn`
    pub fn delta_lambda(&self) -> Complex64 {
        self.lambda_up - self.lambda_dn
    }

    /// Real frequency `omega = i (lambda - lambda*) = -2 Im lambda`.
    pub fn omega(&self) -> f64 {
        -2.0 * self.lambda().im
    }

    /// The two positivity ratios `|lambda|^2 / (gamma phi)`; both must be
    /// at most one, with one corresponding to the boundary of the ellipse.
    pub fn cp_ratios(&self) -> (f64, f64) {
        let gp = self.gamma * self.phi;
        if gp == 0.0 {
            let z = self.lambda_up.norm_sqr() == 0.0 && self.lambda_dn.norm_sqr() == 0.0;
            return if z { (0.0, 0.0) } else { (f64::INFINITY, f64::INFINITY) };
        }
        (
            self.lambda_up.norm_sqr() / gp,
            self.lambda_dn.norm_sqr() / gp,
        )
    }

    /// The parameter set of the second worked example: `gamma/phi = 1/2`,
    /// `lambda_up/phi = sqrt(1/20)(3 - i)`, `lambda_dn/phi = (1 + i)/2`,
    /// which saturates both positivity ellipses.
    pub fn reference(phi: f64, rho0: CMatrix) -> Self {
        let s = (1.0f64 / 20.0).sqrt();
        Self::new(
            phi,
            phi / 2.0,
            Complex64::new(3.0 * s, -s) * phi,
            Complex64::new(0.5, 0.5) * phi,
            0,
            rho0,
        )
        .expect("reference parameters sit on the positivity boundary")
    }
}

/// Coefficients of the continuum (diffusive) forms.
#[derive(Debug, Clone, Copy)]
pub struct DiffusionParams {
    /// `D_phi = 2 phi r0^2`
    pub d_phi: f64,
    /// `D_gamma = 2 gamma r0^2`
    pub d_gamma: f64,
    /// `F_lambda = 2 delta_lambda r0`
    pub f_lambda: Complex64,
    /// `D_lambda = 2 lambda r0^2`
    pub d_lambda: Complex64,
    pub sigma0: f64,
    pub q0: f64,
}

impl DiffusionParams {
    pub fn example1(p: &Example1Params, r0: f64, sigma0: f64) -> Self {
        Self {
            d_phi: 2.0 * p.phi * r0 * r0,
            d_gamma: 2.0 * p.gamma * r0 * r0,
            f_lambda: Complex64::default(),
            d_lambda: Complex64::default(),
            sigma0,
            q0: p.n0 as f64 * r0,
        }
    }

    pub fn example2(p: &Example2Params, r0: f64, sigma0: f64) -> Self {
        Self {
            d_phi: 2.0 * p.phi * r0 * r0,
            d_gamma: 2.0 * p.gamma * r0 * r0,
            f_lambda: p.delta_lambda() * 2.0 * r0,
            d_lambda: p.lambda() * 2.0 * r0 * r0,
            sigma0,
            q0: p.n0 as f64 * r0,
        }
    }

    /// Limit in which both elementary transformations become infinitesimal:
    /// `D_gamma -> 0`, `D_lambda -> 0`, keeping the first-order drift.
    pub fn qfp_limit(&self) -> Self {
        Self {
            d_gamma: 0.0,
            d_lambda: Complex64::default(),
            ..*self
        }
    }
}

// ---------------------------------------------------------------------------
// Discrete closed forms
// ---------------------------------------------------------------------------

/// Exact site-wise solution of the first example:
/// `p_n^{(s)}(t) = e^{-2(phi+gamma)t} I_{|n-n0|}(2(phi+gamma)t) <s|rho0|s>`
/// and
/// `c_n(t) = e^{-4 gamma t} e^{-2(phi-gamma)t} I_{|n-n0|}(2(phi-gamma)t) <+|rho0|->`,
/// with `I_n(-x) = (-1)^n I_n(x)` carrying the alternating sign when
/// `phi < gamma`.
pub fn example1_discrete_solution(
    p: &Example1Params,
    n: i64,
    t: f64,
) -> Result<(f64, f64, Complex64), AnalyticError> {
    if t < 0.0 {
        return Err(domain("time must be nonnegative"));
    }
    let m = (n - p.n0).abs();
    let x = 2.0 * (p.phi + p.gamma) * t;
    let pop_factor = bessel_i_scaled(m, cr(x))?.re;
    let p_plus = pop_factor * p.rho0[(0, 0)].re;
    let p_minus = pop_factor * p.rho0[(1, 1)].re;

    let y = 2.0 * (p.phi - p.gamma) * t;
    // e^{-4 gamma t} e^{-y} I_m(y), with exponents combined before
    // exponentiating so the phi < gamma branch cannot overflow
    let coh_factor = if y >= 0.0 {
        bessel_i_scaled(m, cr(y))?.re * (-4.0 * p.gamma * t).exp()
    } else {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        sign * bessel_i_scaled(m, cr(-y))?.re * (-4.0 * p.phi * t).exp()
    };
    let c = p.rho0[(0, 1)] * coh_factor;
    Ok((p_plus, p_minus, c))
}

/// Solution of the biased nearest-neighbor walk
/// `df_n/dt = alpha f_{n+1} + beta f_{n-1} - (alpha + beta) f_n` with
/// `f_n(0) = delta_{n,n0}`:
/// `f_n(t) = e^{-(alpha+beta)t} I_{n-n0}(2t sqrt(alpha beta)) (beta/alpha)^{(n-n0)/2}`.
///
/// Complex coefficients are admitted through principal branches, with the
/// pair `(sqrt(alpha beta), sqrt(beta/alpha))` kept mutually consistent as
/// `w = sqrt(alpha beta)`, `(beta/alpha)^{1/2} = w/alpha`. One-sided walks
/// (`alpha = 0` or `beta = 0`) reduce to Poisson streams; `alpha = beta = 0`
/// returns the unmoved delta.
pub fn asym_rw_solution(
    n: i64,
    t: f64,
    alpha: Complex64,
    beta: Complex64,
    n0: i64,
) -> Result<Complex64, AnalyticError> {
    if t < 0.0 {
        return Err(domain("time must be nonnegative"));
    }
    let m = n - n0;
    if t == 0.0 || (alpha.norm() == 0.0 && beta.norm() == 0.0) {
        return Ok(cr(if m == 0 { 1.0 } else { 0.0 }));
    }
    if alpha.norm() == 0.0 {
        return Ok(poisson_stream(m, beta * t));
    }
    if beta.norm() == 0.0 {
        return Ok(poisson_stream(-m, alpha * t));
    }
    let w = (alpha * beta).sqrt();
    let z = w * (2.0 * t);
    let scaled = bessel_i_scaled(m, z)?;
    if scaled.norm() == 0.0 {
        return Ok(Complex64::default());
    }
    // e^{-(alpha+beta)t} I_m(z) = e^{2t Re w - (alpha+beta)t} [e^{-Re z} I_m(z)]
    let pre = (cr(2.0 * t * w.re) - (alpha + beta) * t).exp();
    let branch = (w / alpha).powi(m as i32);
    Ok(pre * scaled * branch)
}

/// `e^{-x} x^k / k!` for `k >= 0`, zero otherwise.
fn poisson_stream(k: i64, x: Complex64) -> Complex64 {
    if k < 0 {
        return Complex64::default();
    }
    let mut value = (-x).exp();
    for j in 1..=k {
        value *= x / j as f64;
    }
    value
}

/// Exact site-wise solution of the second example, assembled from
/// [`asym_rw_solution`] per matrix-element channel.
///
/// Populations hop with rates `gamma + phi + 2 s Re(lambda_dn)` (from the
/// right) and `gamma + phi + 2 s Re(lambda_up)` (from the left); the
/// coherence channel carries complex rates `phi - gamma + 2i Im(lambda)`
/// and the overall prefactor `e^{-(i omega + 4 gamma) t}`.
pub fn example2_discrete_solution(
    p: &Example2Params,
    n: i64,
    t: f64,
) -> Result<(f64, f64, Complex64), AnalyticError> {
    let base = p.gamma + p.phi;
    let mut pops = [0.0; 2];
    for (idx, s) in [(0usize, 1.0f64), (1, -1.0)] {
        let alpha = cr(base + 2.0 * s * p.lambda_dn.re);
        let beta = cr(base + 2.0 * s * p.lambda_up.re);
        let f = asym_rw_solution(n, t, alpha, beta, p.n0)?;
        pops[idx] = f.re * p.rho0[(idx, idx)].re;
    }
    let alpha = cr(p.phi - p.gamma) + Complex64::new(0.0, 2.0 * p.lambda_dn.im);
    let beta = cr(p.phi - p.gamma) + Complex64::new(0.0, 2.0 * p.lambda_up.im);
    let f = asym_rw_solution(n, t, alpha, beta, p.n0)?;
    let pre = (-(Complex64::new(0.0, p.omega()) + cr(4.0 * p.gamma)) * t).exp();
    let c = pre * f * p.rho0[(0, 1)];
    Ok((pops[0], pops[1], c))
}

// ---------------------------------------------------------------------------
// Continuum closed forms
// ---------------------------------------------------------------------------

/// Continuum solution of the first example in density units:
/// populations diffuse with `D_phi + D_gamma`, the coherence with
/// `D_phi - D_gamma` under the extra damping `e^{-4 gamma t}`.
pub fn example1_continuum_solution(
    p: &Example1Params,
    diff: &DiffusionParams,
    q: f64,
    t: f64,
) -> Result<(f64, f64, Complex64), AnalyticError> {
    if diff.d_phi <= diff.d_gamma {
        return Err(domain(format!(
            "coherence diffusion requires D_phi > D_gamma (got {} <= {}); the closed form diverges in time",
            diff.d_phi, diff.d_gamma
        )));
    }
    let zero = Complex64::default();
    let g_pop = gaussian_propagator(q, t, diff.q0, diff.sigma0, cr(diff.d_phi + diff.d_gamma), zero)?;
    let g_coh = gaussian_propagator(q, t, diff.q0, diff.sigma0, cr(diff.d_phi - diff.d_gamma), zero)?;
    let damp = (-4.0 * p.gamma * t).exp();
    Ok((
        g_pop.re * p.rho0[(0, 0)].re,
        g_pop.re * p.rho0[(1, 1)].re,
        g_coh * damp * p.rho0[(0, 1)],
    ))
}

/// Continuum solution of the second example: populations drift with
/// `s F_{lambda R}` and diffuse with `D(s) = D_phi + D_gamma + s D_{lambda R}`;
/// the coherence carries the prefactor `e^{-(i omega + 4 gamma)t}`, the
/// imaginary drift `i F_{lambda I}` and the complex diffusion
/// `D_phi - D_gamma + i D_{lambda I}`.
pub fn example2_continuum_solution(
    p: &Example2Params,
    diff: &DiffusionParams,
    q: f64,
    t: f64,
) -> Result<(f64, f64, Complex64), AnalyticError> {
    if diff.d_phi <= diff.d_gamma {
        return Err(domain(format!(
            "coherence diffusion requires D_phi > D_gamma (got {} <= {})",
            diff.d_phi, diff.d_gamma
        )));
    }
    let mut pops = [0.0; 2];
    for (idx, s) in [(0usize, 1.0f64), (1, -1.0)] {
        let d_s = diff.d_phi + diff.d_gamma + s * diff.f_real_diffusion();
        let g = gaussian_propagator(q, t, diff.q0, diff.sigma0, cr(d_s), cr(s * diff.f_lambda.re))?;
        pops[idx] = g.re * p.rho0[(idx, idx)].re;
    }
    let d_tilde = cr(diff.d_phi - diff.d_gamma) + Complex64::new(0.0, diff.d_lambda.im);
    let drift = Complex64::new(0.0, diff.f_lambda.im);
    let g = gaussian_propagator(q, t, diff.q0, diff.sigma0, d_tilde, drift)?;
    let pre = (-(Complex64::new(0.0, p.omega()) + cr(4.0 * p.gamma)) * t).exp();
    Ok((pops[0], pops[1], g * pre * p.rho0[(0, 1)]))
}

impl DiffusionParams {
    fn f_real_diffusion(&self) -> f64 {
        self.d_lambda.re
    }
}

/// Quantum-Fokker-Planck limit of the second example: the same drifts with
/// state-independent diffusion `D_phi` in every channel.
pub fn example2_qfp_solution(
    p: &Example2Params,
    diff: &DiffusionParams,
    q: f64,
    t: f64,
) -> Result<(f64, f64, Complex64), AnalyticError> {
    example2_continuum_solution(p, &diff.qfp_limit(), q, t)
}

// ---------------------------------------------------------------------------
// Positivity thresholds
// ---------------------------------------------------------------------------

/// Positivity-onset data for the diffusive approximations with a localized
/// pure initial condition.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdReport {
    /// Onset time in `phi t` units at which the determinant at the initial
    /// coordinate turns nonnegative.
    pub phi_t_star: f64,
    /// Minimal initial squared width curing the transient,
    /// `D_gamma / (4 gamma) = r0^2 / 2`.
    pub sigma0_min_sq: f64,
    /// Whether `phi t* < 1`, the restriction under which the formula is
    /// meaningful (unphysical behavior confined to the short-time scale).
    pub short_time_ok: bool,
    /// Dimensionless parameters of the generalized formula; for the first
    /// example `a = 0` and `b = (phi + gamma)/(phi - gamma)`.
    pub a: f64,
    pub b: f64,
}

/// `phi t* = (phi / 8 gamma) ln((phi + gamma)/(phi - gamma))`, requiring
/// `phi > gamma`.
pub fn positivity_thresholds_example1(
    p: &Example1Params,
    r0: f64,
) -> Result<ThresholdReport, AnalyticError> {
    if p.phi <= p.gamma {
        return Err(domain(format!(
            "onset formula requires phi > gamma (got phi={}, gamma={})",
            p.phi, p.gamma
        )));
    }
    let sigma0_min_sq = r0 * r0 / 2.0;
    if p.gamma == 0.0 {
        return Ok(ThresholdReport {
            phi_t_star: 0.0,
            sigma0_min_sq,
            short_time_ok: true,
            a: 0.0,
            b: 1.0,
        });
    }
    let b = (p.phi + p.gamma) / (p.phi - p.gamma);
    let phi_t_star = p.phi / (8.0 * p.gamma) * b.ln();
    Ok(ThresholdReport {
        phi_t_star,
        sigma0_min_sq,
        short_time_ok: phi_t_star < 1.0,
        a: 0.0,
        b,
    })
}

/// Generalized onset time
/// `phi t* = (phi / 8 gamma) (1 - A)^{-1} ln B` with
/// `A = (1/8 gamma) [F_R^2 (D_phi + D_gamma) / ((D_phi + D_gamma)^2 - D_R^2)
///      + F_I^2 (D_phi - D_gamma) / ((D_phi - D_gamma)^2 + D_I^2)]`
/// and
/// `B = sqrt(((D_phi + D_gamma)^2 - D_R^2) / ((D_phi - D_gamma)^2 + D_I^2))`.
pub fn positivity_thresholds_example2(
    p: &Example2Params,
    r0: f64,
) -> Result<ThresholdReport, AnalyticError> {
    if p.gamma <= 0.0 {
        return Err(domain("onset formula requires gamma > 0"));
    }
    let diff = DiffusionParams::example2(p, r0, 0.0);
    let sum = diff.d_phi + diff.d_gamma;
    let dif = diff.d_phi - diff.d_gamma;
    let num = sum * sum - diff.d_lambda.re * diff.d_lambda.re;
    let den = dif * dif + diff.d_lambda.im * diff.d_lambda.im;
    if num <= 0.0 || den <= 0.0 {
        return Err(domain(format!(
            "variance combinations inside A, B must be positive (got {num:.6e}, {den:.6e})"
        )));
    }
    let fr2 = diff.f_lambda.re * diff.f_lambda.re;
    let fi2 = diff.f_lambda.im * diff.f_lambda.im;
    let a = (fr2 * sum / num + fi2 * dif / den) / (8.0 * p.gamma);
    let b = (num / den).sqrt();
    let sigma0_min_sq = r0 * r0 / 2.0;
    if b <= 1.0 {
        // determinant at the origin is nonnegative from the start
        return Ok(ThresholdReport {
            phi_t_star: 0.0,
            sigma0_min_sq,
            short_time_ok: true,
            a,
            b,
        });
    }
    if a >= 1.0 {
        return Err(domain(format!(
            "no finite onset: A = {a:.6} >= 1 with B = {b:.6} > 1"
        )));
    }
    let phi_t_star = p.phi / (8.0 * p.gamma) * b.ln() / (1.0 - a);
    Ok(ThresholdReport {
        phi_t_star,
        sigma0_min_sq,
        short_time_ok: phi_t_star < 1.0,
        a,
        b,
    })
}

// ---------------------------------------------------------------------------
// Worked transition-rate model
// ---------------------------------------------------------------------------

/// Two-sided exponential jump kernel
/// `phi(r|q) = [1/tau0 + sgn(r)/delta_tau0] (1/(2 r0)) e^{-|r|/r0}`.
pub fn example_rate_kernel(tau0: f64, delta_tau0: f64, r0: f64) -> impl Fn(f64) -> f64 {
    move |r: f64| {
        let sgn = if r > 0.0 {
            1.0
        } else if r < 0.0 {
            -1.0
        } else {
            0.0
        };
        (1.0 / tau0 + sgn / delta_tau0) * (-r.abs() / r0).exp() / (2.0 * r0)
    }
}

/// Whether the kernel above is nonnegative for all displacements,
/// i.e. `1/tau0 >= |1/delta_tau0|`.
pub fn example_rate_kernel_nonneg(tau0: f64, delta_tau0: f64) -> bool {
    1.0 / tau0 >= (1.0 / delta_tau0).abs() - 1e-15
}

/// Jump moments of the kernel: `1/tau0`, `r0/delta_tau0`, `2 r0^2/tau0`
/// in closed form for `m <= 2`; higher moments by adaptive quadrature.
pub fn example_rate_moments(
    tau0: f64,
    delta_tau0: f64,
    r0: f64,
    m: u32,
) -> Result<f64, AnalyticError> {
    if !(tau0 > 0.0) || !(r0 > 0.0) {
        return Err(domain(format!("need tau0 > 0 and r0 > 0 (got {tau0}, {r0})")));
    }
    if delta_tau0 == 0.0 {
        return Err(domain("delta_tau0 must be nonzero (use infinity for a symmetric kernel)"));
    }
    Ok(match m {
        0 => 1.0 / tau0,
        1 => r0 / delta_tau0,
        2 => 2.0 * r0 * r0 / tau0,
        _ => {
            let kernel = example_rate_kernel(tau0, delta_tau0, r0);
            let f = |r: f64| kernel(r) * r.powi(m as i32);
            let reach = r0 * (45.0 + 4.0 * m as f64);
            quad::adaptive_simpson(&f, -reach, 0.0, 1e-12) + quad::adaptive_simpson(&f, 0.0, reach, 1e-12)
        }
    })
}
