//! Hybrid states: a finite lattice of unnormalized conditional quantum
//! states with classical-site metadata, marginals and positivity
//! diagnostics.
//!
//! The lattice is a finite window standing in for an infinite chain;
//! constructors reject configurations whose initial mass outside the window
//! exceeds [`TRUNCATION_TOL`]. Continuum densities are represented on the
//! same lattice with `density(n r0) = rho_n / r0`; a Dirac-delta initial
//! condition becomes Kronecker mass at the nearest site.

use crate::linalg::{hermitian_defect, hermitian_eigenvalues, trace};
use crate::{CMatrix, Complex64};
use thiserror::Error;

/// Default absolute tolerance on Hermiticity defects and eigenvalues.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Relative Gaussian mass allowed outside the lattice window.
pub const TRUNCATION_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("invalid lattice: need n_min < n_max and r0 > 0 (got [{n_min}, {n_max}], r0 = {r0})")]
    InvalidLattice { n_min: i64, n_max: i64, r0: f64 },
    #[error("site {n} outside lattice window [{n_min}, {n_max}]")]
    OutOfBounds { n: i64, n_min: i64, n_max: i64 },
    #[error("not a quantum state: {reason}")]
    InvalidState { reason: String },
    #[error("initial mass outside lattice window is {mass:.3e} (> {TRUNCATION_TOL:.0e}); enlarge the window")]
    Truncation { mass: f64 },
    #[error("operation requires a two-level quantum subsystem, got d = {d}")]
    UnsupportedDimension { d: usize },
}

/// Finite window of classical sites `n_min..=n_max` with spacing `r0`;
/// site `n` sits at coordinate `q = n * r0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    n_min: i64,
    n_max: i64,
    r0: f64,
}

impl Lattice {
    pub fn new(n_min: i64, n_max: i64, r0: f64) -> Result<Self, StateError> {
        if n_min >= n_max || !(r0 > 0.0) {
            return Err(StateError::InvalidLattice { n_min, n_max, r0 });
        }
        Ok(Self { n_min, n_max, r0 })
    }

    /// Window `|n| <= half_width`.
    pub fn symmetric(half_width: i64, r0: f64) -> Result<Self, StateError> {
        Self::new(-half_width, half_width, r0)
    }

    pub fn n_min(&self) -> i64 {
        self.n_min
    }

    pub fn n_max(&self) -> i64 {
        self.n_max
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn len(&self) -> usize {
        (self.n_max - self.n_min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, n: i64) -> bool {
        n >= self.n_min && n <= self.n_max
    }

    /// Storage index of site `n`.
    pub fn index_of(&self, n: i64) -> Option<usize> {
        self.contains(n).then_some((n - self.n_min) as usize)
    }

    /// Site label of storage index `idx`.
    pub fn site_at(&self, idx: usize) -> i64 {
        self.n_min + idx as i64
    }

    pub fn sites(&self) -> impl Iterator<Item = i64> {
        self.n_min..=self.n_max
    }

    /// Coordinate of site `n`.
    pub fn coord(&self, n: i64) -> f64 {
        n as f64 * self.r0
    }

    /// Site nearest to coordinate `q`.
    pub fn nearest_site(&self, q: f64) -> i64 {
        (q / self.r0).round() as i64
    }
}

/// Lattice of unnormalized conditional quantum states; `Tr rho_n` is the
/// probability of classical site `n` and the total trace is one.
///
/// Values are immutable snapshots; evolution produces new snapshots.
#[derive(Debug, Clone)]
pub struct HybridState {
    lattice: Lattice,
    d: usize,
    rho: Vec<CMatrix>,
    time: f64,
}

impl HybridState {
    /// All-zero field (not a valid state until filled).
    pub fn zero(d: usize, lattice: Lattice) -> Self {
        Self {
            lattice,
            d,
            rho: vec![CMatrix::zeros(d, d); lattice.len()],
            time: 0.0,
        }
    }

    /// Assemble from raw per-site matrices without validation.
    pub fn from_parts(lattice: Lattice, d: usize, rho: Vec<CMatrix>, time: f64) -> Self {
        assert_eq!(rho.len(), lattice.len(), "one matrix per lattice site");
        Self {
            lattice,
            d,
            rho,
            time,
        }
    }

    /// State fully localized at site `n0`: `rho_{n0} = rho0`, zero elsewhere.
    pub fn localized(
        d: usize,
        rho0: &CMatrix,
        n0: i64,
        lattice: Lattice,
    ) -> Result<Self, StateError> {
        check_density_matrix(d, rho0)?;
        if !lattice.contains(n0) {
            return Err(StateError::OutOfBounds {
                n: n0,
                n_min: lattice.n_min,
                n_max: lattice.n_max,
            });
        }
        let mut state = Self::zero(d, lattice);
        state.rho[lattice.index_of(n0).unwrap()] = rho0.clone();
        Ok(state)
    }

    /// State with Gaussian classical weights `w_n ~ exp(-(n r0 - q0)^2 / 2 sigma0^2)`
    /// around `q0`, renormalized to unit total mass. `sigma0 = 0` falls back
    /// to localization at the nearest site.
    pub fn gaussian(
        d: usize,
        rho0: &CMatrix,
        q0: f64,
        sigma0: f64,
        lattice: Lattice,
    ) -> Result<Self, StateError> {
        check_density_matrix(d, rho0)?;
        if sigma0 < 0.0 {
            return Err(StateError::InvalidState {
                reason: format!("sigma0 must be nonnegative, got {sigma0}"),
            });
        }
        if sigma0 == 0.0 {
            return Self::localized(d, rho0, lattice.nearest_site(q0), lattice);
        }
        let r0 = lattice.r0();
        let weight = |n: i64| {
            let x = (n as f64 * r0 - q0) / sigma0;
            (-0.5 * x * x).exp()
        };
        let inside: f64 = lattice.sites().map(weight).sum();
        // Mass on the infinite chain, summed far enough into the tails.
        let center = lattice.nearest_site(q0);
        let reach = (12.0 * sigma0 / r0).ceil() as i64 + 2;
        let total: f64 = (center - reach..=center + reach).map(weight).sum();
        let outside = (total - inside).max(0.0);
        if outside > TRUNCATION_TOL * total {
            return Err(StateError::Truncation {
                mass: outside / total,
            });
        }
        let mut state = Self::zero(d, lattice);
        for (idx, n) in lattice.sites().enumerate() {
            state.rho[idx] = rho0.scale(weight(n) / inside);
        }
        Ok(state)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    /// Conditional state at site `n`.
    pub fn site(&self, n: i64) -> &CMatrix {
        &self.rho[self.lattice.index_of(n).expect("site inside lattice")]
    }

    /// Per-site matrices in storage order.
    pub fn matrices(&self) -> &[CMatrix] {
        &self.rho
    }

    pub fn matrices_mut(&mut self) -> &mut [CMatrix] {
        &mut self.rho
    }

    /// Partial states: the quantum marginal `sum_n rho_n` and the classical
    /// probabilities `p_n = Tr rho_n`.
    pub fn marginals(&self) -> (CMatrix, Vec<f64>) {
        let mut quantum = CMatrix::zeros(self.d, self.d);
        let mut probs = Vec::with_capacity(self.rho.len());
        for m in &self.rho {
            quantum += m;
            probs.push(trace(m).re);
        }
        (quantum, probs)
    }

    /// `sum_n Tr rho_n`.
    pub fn total_trace(&self) -> f64 {
        self.rho.iter().map(|m| trace(m).re).sum()
    }

    /// Per-site determinant `p+_n p-_n - |c_n|^2` of the two-level
    /// conditional states; the site-wise positivity criterion.
    ///
    /// For d > 2 the criterion as such is not available; use
    /// [`HybridState::validate`] and its minimum eigenvalues instead.
    pub fn determinant_field(&self) -> Result<Vec<f64>, StateError> {
        if self.d != 2 {
            return Err(StateError::UnsupportedDimension { d: self.d });
        }
        Ok(self
            .rho
            .iter()
            .map(|m| m[(0, 0)].re * m[(1, 1)].re - m[(0, 1)].norm_sqr())
            .collect())
    }

    /// Two-level matrix elements per site: `(p+, p-, c)` with `c` the upper
    /// off-diagonal coherence.
    pub fn matrix_elements(&self) -> Result<(Vec<f64>, Vec<f64>, Vec<Complex64>), StateError> {
        if self.d != 2 {
            return Err(StateError::UnsupportedDimension { d: self.d });
        }
        let mut pp = Vec::with_capacity(self.rho.len());
        let mut pm = Vec::with_capacity(self.rho.len());
        let mut cc = Vec::with_capacity(self.rho.len());
        for m in &self.rho {
            pp.push(m[(0, 0)].re);
            pm.push(m[(1, 1)].re);
            cc.push(m[(0, 1)]);
        }
        Ok((pp, pm, cc))
    }

    /// Probability within `margin` sites of either lattice edge.
    pub fn edge_mass(&self, margin: usize) -> f64 {
        let len = self.rho.len();
        let margin = margin.min(len);
        let mut mass = 0.0;
        for i in 0..margin {
            mass += trace(&self.rho[i]).re.abs();
            mass += trace(&self.rho[len - 1 - i]).re.abs();
        }
        mass
    }

    /// Per-site Hermiticity defects, minimum eigenvalues and traces, with
    /// flags for eigenvalues below `-tol`.
    pub fn validate(&self, tol: f64) -> ValidationReport {
        let mut sites = Vec::with_capacity(self.rho.len());
        for (idx, m) in self.rho.iter().enumerate() {
            let n = self.lattice.site_at(idx);
            sites.push(SiteCheck {
                n,
                hermiticity_defect: hermitian_defect(m),
                min_eigenvalue: hermitian_eigenvalues(m)[0],
                trace: trace(m).re,
            });
        }
        let total_trace = sites.iter().map(|s| s.trace).sum();
        let max_hermiticity_defect = sites
            .iter()
            .map(|s| s.hermiticity_defect)
            .fold(0.0, f64::max);
        let min_eigenvalue = sites
            .iter()
            .map(|s| s.min_eigenvalue)
            .fold(f64::INFINITY, f64::min);
        let negative_sites = sites
            .iter()
            .filter(|s| s.min_eigenvalue < -tol)
            .map(|s| s.n)
            .collect::<Vec<_>>();
        let hermiticity_ok = max_hermiticity_defect <= tol;
        ValidationReport {
            sites,
            total_trace,
            max_hermiticity_defect,
            min_eigenvalue,
            negative_sites,
            hermiticity_ok,
            trace_ok: (total_trace - 1.0).abs() <= tol.max(1e-8),
        }
    }
}

/// Per-site entry of a [`ValidationReport`].
#[derive(Debug, Clone)]
pub struct SiteCheck {
    pub n: i64,
    pub hermiticity_defect: f64,
    pub min_eigenvalue: f64,
    pub trace: f64,
}

/// Outcome of [`HybridState::validate`].
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub sites: Vec<SiteCheck>,
    pub total_trace: f64,
    pub max_hermiticity_defect: f64,
    pub min_eigenvalue: f64,
    /// Sites whose minimum eigenvalue is below `-tol`.
    pub negative_sites: Vec<i64>,
    pub hermiticity_ok: bool,
    pub trace_ok: bool,
}

impl ValidationReport {
    pub fn positivity_ok(&self) -> bool {
        self.negative_sites.is_empty()
    }

    pub fn all_ok(&self) -> bool {
        self.positivity_ok() && self.hermiticity_ok && self.trace_ok
    }
}

/// Reject matrices that are not density matrices of dimension `d`
/// (Hermitian, positive semidefinite, unit trace).
pub fn check_density_matrix(d: usize, rho0: &CMatrix) -> Result<(), StateError> {
    if rho0.nrows() != d || rho0.ncols() != d {
        return Err(StateError::InvalidState {
            reason: format!("expected {d}x{d}, got {}x{}", rho0.nrows(), rho0.ncols()),
        });
    }
    let defect = hermitian_defect(rho0);
    if defect > DEFAULT_TOL {
        return Err(StateError::InvalidState {
            reason: format!("Hermiticity defect {defect:.3e}"),
        });
    }
    let tr = trace(rho0).re;
    if (tr - 1.0).abs() > DEFAULT_TOL {
        return Err(StateError::InvalidState {
            reason: format!("trace {tr} != 1"),
        });
    }
    let min = hermitian_eigenvalues(rho0)[0];
    if min < -DEFAULT_TOL {
        return Err(StateError::InvalidState {
            reason: format!("negative eigenvalue {min:.3e}"),
        });
    }
    Ok(())
}

/// The `x`-eigenstate density matrix `(1/2) [[1, 1], [1, 1]]`, the pure
/// initial condition used throughout the worked examples.
pub fn plus_x_state() -> CMatrix {
    CMatrix::from_row_slice(
        2,
        2,
        &[
            Complex64::new(0.5, 0.0),
            Complex64::new(0.5, 0.0),
            Complex64::new(0.5, 0.0),
            Complex64::new(0.5, 0.0),
        ],
    )
}
