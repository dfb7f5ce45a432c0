//! The four quantum-classical coupling mechanisms and the general
//! rate-matrix form: spec validation, complete-positivity checks, generator
//! assembly, closed partial dynamics, and the bipartite Lindblad embedding.
//!
//! Hop rates are stored as displacement-indexed tables `rate(r | n)` with
//! `r = destination - source` and finite support; each table entry is
//! either uniform over sites or per-source-site.

use crate::generator::HybridGenerator;
use crate::linalg::{
    commutator, dagger, hamiltonian_superop, hermitian_defect, hermitian_eigenvalues, identity,
    leading_minors, left_superop, max_abs, right_superop, sandwich_superop, trace,
};
use crate::state::{HybridState, Lattice};
use crate::{CMatrix, Complex64};
use thiserror::Error;

/// Default relative tolerance for positivity of rate matrices: eigenvalues
/// are accepted down to `-DEFAULT_CP_TOL * scale(matrix)`.
pub const DEFAULT_CP_TOL: f64 = 1e-12;

/// Largest bipartite dimension `d * d_c` for the dense embedding.
pub const MAX_EMBED_DIM: usize = 64;

#[derive(Debug, Error)]
pub enum MechanismError {
    #[error("{what} is not Hermitian (defect {defect:.3e})")]
    NotHermitian { what: String, defect: f64 },
    #[error("{what} is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositive { what: String, min_eigenvalue: f64 },
    #[error("complete positivity violated for the pair (source {from_site}, destination {to_site}): min eigenvalue {min_eigenvalue:.3e}")]
    CpViolation {
        from_site: i64,
        to_site: i64,
        min_eigenvalue: f64,
    },
    #[error("negative rate in {what}: {value}")]
    NegativeRate { what: String, value: f64 },
    #[error("hop displacement must be nonzero")]
    ZeroDisplacement,
    #[error("shape error: {what}")]
    Shape { what: String },
    #[error("bipartite dimension {dim} exceeds the dense-embedding limit {MAX_EMBED_DIM}")]
    TooLarge { dim: usize },
}

// ---------------------------------------------------------------------------
// Operator basis
// ---------------------------------------------------------------------------

/// Traceless operator set `{V_mu}` spanning the non-identity directions used
/// by a mechanism; at most `d^2 - 1` elements.
#[derive(Debug, Clone)]
pub struct OperatorBasis {
    d: usize,
    ops: Vec<CMatrix>,
}

impl OperatorBasis {
    pub fn new(d: usize, ops: Vec<CMatrix>) -> Result<Self, MechanismError> {
        if ops.len() > d * d - 1 {
            return Err(MechanismError::Shape {
                what: format!("{} operators exceed d^2 - 1 = {}", ops.len(), d * d - 1),
            });
        }
        for (i, v) in ops.iter().enumerate() {
            if v.nrows() != d || v.ncols() != d {
                return Err(MechanismError::Shape {
                    what: format!("operator {i} is {}x{}, expected {d}x{d}", v.nrows(), v.ncols()),
                });
            }
            let tr = trace(v).norm();
            if tr > 1e-12 * max_abs(v).max(1.0) {
                return Err(MechanismError::Shape {
                    what: format!("operator {i} has trace {tr:.3e}; the set must be traceless"),
                });
            }
        }
        Ok(Self { d, ops })
    }

    pub fn single(op: CMatrix) -> Result<Self, MechanismError> {
        let d = op.nrows();
        Self::new(d, vec![op])
    }

    /// The three Pauli matrices for a two-level subsystem.
    pub fn pauli() -> Self {
        Self::new(
            2,
            vec![
                crate::linalg::pauli_x(),
                crate::linalg::pauli_y(),
                crate::linalg::pauli_z(),
            ],
        )
        .unwrap()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn count(&self) -> usize {
        self.ops.len()
    }

    pub fn op(&self, mu: usize) -> &CMatrix {
        &self.ops[mu]
    }

    pub fn ops(&self) -> &[CMatrix] {
        &self.ops
    }
}

// ---------------------------------------------------------------------------
// Rate tables
// ---------------------------------------------------------------------------

/// Per-site value of a hop-rate entry: one shared value or one per source
/// site (indexed in lattice storage order).
#[derive(Debug, Clone)]
pub enum SiteProfile<T> {
    Uniform(T),
    PerSite(Vec<T>),
}

impl<T> SiteProfile<T> {
    pub fn at(&self, idx: usize) -> &T {
        match self {
            SiteProfile::Uniform(v) => v,
            SiteProfile::PerSite(v) => &v[idx],
        }
    }

    fn check_len(&self, len: usize, what: &str) -> Result<(), MechanismError> {
        if let SiteProfile::PerSite(v) = self {
            if v.len() != len {
                return Err(MechanismError::Shape {
                    what: format!("{what}: per-site table has {} entries, lattice has {len}", v.len()),
                });
            }
        }
        Ok(())
    }
}

/// One displacement entry of a jump table.
#[derive(Debug, Clone)]
pub struct HopTable<T> {
    pub offset: i64,
    pub value: SiteProfile<T>,
}

impl<T> HopTable<T> {
    pub fn uniform(offset: i64, value: T) -> Self {
        Self {
            offset,
            value: SiteProfile::Uniform(value),
        }
    }

    pub fn per_site(offset: i64, values: Vec<T>) -> Self {
        Self {
            offset,
            value: SiteProfile::PerSite(values),
        }
    }
}

// ---------------------------------------------------------------------------
// Mechanism specs
// ---------------------------------------------------------------------------

/// First mechanism: per-site Lindblad dynamics (Hamiltonian plus rate
/// matrix over the operator basis) with no classical backaction.
#[derive(Debug, Clone)]
pub struct SiteLindbladSpec {
    pub basis: OperatorBasis,
    pub hamiltonian: SiteProfile<CMatrix>,
    pub rates: SiteProfile<CMatrix>,
}

/// Second mechanism: classical jumps that leave the quantum marginal
/// frozen.
#[derive(Debug, Clone)]
pub struct ClassicalHoppingSpec {
    pub hops: Vec<HopTable<f64>>,
}

/// Third mechanism: jumps mediated by quantum operators, with Hermitian
/// positive-semidefinite rate matrices per displacement.
#[derive(Debug, Clone)]
pub struct CorrelatedHoppingSpec {
    pub basis: OperatorBasis,
    pub hops: Vec<HopTable<CMatrix>>,
}

/// Fourth mechanism: jumps mediated by `a_mu I + b_mu V_mu`, a coherent
/// superposition of the second and third mechanisms; rates are diagonal
/// per operator channel.
#[derive(Debug, Clone)]
pub struct CoherentHoppingSpec {
    pub basis: OperatorBasis,
    pub a: Vec<Complex64>,
    pub b: Vec<Complex64>,
    pub hops: Vec<HopTable<Vec<f64>>>,
}

/// General form: one extended rate matrix per displacement, indexed by the
/// basis operators plus the identity channel in the last row/column.
#[derive(Debug, Clone)]
pub struct GeneralHoppingSpec {
    pub basis: OperatorBasis,
    pub hops: Vec<HopTable<CMatrix>>,
}

/// Tagged description of one coupling mechanism.
#[derive(Debug, Clone)]
pub enum MechanismSpec {
    SiteLindblad(SiteLindbladSpec),
    ClassicalHopping(ClassicalHoppingSpec),
    CorrelatedHopping(CorrelatedHoppingSpec),
    CoherentHopping(CoherentHoppingSpec),
    GeneralHopping(GeneralHoppingSpec),
}

impl MechanismSpec {
    pub fn label(&self) -> &'static str {
        match self {
            MechanismSpec::SiteLindblad(_) => "site-lindblad",
            MechanismSpec::ClassicalHopping(_) => "classical-hopping",
            MechanismSpec::CorrelatedHopping(_) => "correlated-hopping",
            MechanismSpec::CoherentHopping(_) => "coherent-hopping",
            MechanismSpec::GeneralHopping(_) => "general-hopping",
        }
    }

    pub fn quantum_dim(&self) -> Option<usize> {
        match self {
            MechanismSpec::SiteLindblad(s) => Some(s.basis.dim()),
            MechanismSpec::ClassicalHopping(_) => None,
            MechanismSpec::CorrelatedHopping(s) => Some(s.basis.dim()),
            MechanismSpec::CoherentHopping(s) => Some(s.basis.dim()),
            MechanismSpec::GeneralHopping(s) => Some(s.basis.dim()),
        }
    }
}

// ---------------------------------------------------------------------------
// Complete-positivity report
// ---------------------------------------------------------------------------

/// Diagnostics of one extended rate matrix (operator block, identity
/// couplings, identity rate).
#[derive(Debug, Clone)]
pub struct CpReport {
    pub eigenvalues: Vec<f64>,
    /// Real parts of the leading principal minors (diagnostic only;
    /// eigenvalues decide acceptance).
    pub leading_minors: Vec<f64>,
    /// Schur slack `lambda_II - u† lambda_block^{-1} u`; `None` when the
    /// operator block is singular.
    pub schur_slack: Option<f64>,
    pub cp_ok: bool,
    /// Whether the matrix sits on the fourth-mechanism boundary (zero
    /// Schur slack with invertible operator block).
    pub fourth_case_boundary: bool,
    pub scale: f64,
}

/// Validate an extended rate matrix: eigenvalues, Sylvester minors and the
/// Schur slack of the identity channel. `tol` is relative to the matrix
/// scale; eigenvalues decide `cp_ok`.
pub fn validate_rate_matrix(extended: &CMatrix, tol: f64) -> Result<CpReport, MechanismError> {
    if extended.nrows() != extended.ncols() {
        return Err(MechanismError::Shape {
            what: format!("rate matrix is {}x{}", extended.nrows(), extended.ncols()),
        });
    }
    let scale = max_abs(extended).max(f64::MIN_POSITIVE);
    let defect = hermitian_defect(extended);
    if defect > 1e-9 * scale {
        return Err(MechanismError::NotHermitian {
            what: "extended rate matrix".into(),
            defect,
        });
    }
    let eigenvalues = hermitian_eigenvalues(extended);
    let cp_ok = eigenvalues[0] >= -tol * scale;
    let minors: Vec<f64> = leading_minors(extended).iter().map(|z| z.re).collect();
    let k = extended.nrows() - 1;
    let schur_slack = if k == 0 {
        Some(extended[(0, 0)].re)
    } else {
        let block = extended.view((0, 0), (k, k)).into_owned();
        let u = extended.view((0, k), (k, 1)).into_owned();
        let block_scale = max_abs(&block).max(f64::MIN_POSITIVE);
        let lu = block.clone().lu();
        let invertible = lu.determinant().norm() > 1e-12 * block_scale.powi(k as i32);
        if invertible {
            lu.solve(&u).map(|x| {
                let quad: Complex64 = (dagger(&u) * x)[(0, 0)];
                extended[(k, k)].re - quad.re
            })
        } else {
            None
        }
    };
    let fourth_case_boundary = matches!(schur_slack, Some(s) if s.abs() <= tol.max(1e-12) * scale);
    Ok(CpReport {
        eigenvalues,
        leading_minors: minors,
        schur_slack,
        cp_ok,
        fourth_case_boundary,
        scale,
    })
}

/// Split an accepted extended matrix into its fourth-mechanism boundary
/// part and the residual pure-classical rate (the Schur slack): the
/// boundary part saturates the positivity constraint, the residual is a
/// second-mechanism contribution.
pub fn decompose_boundary(extended: &CMatrix) -> Result<(CMatrix, f64), MechanismError> {
    let k = extended.nrows() - 1;
    if k == 0 {
        return Ok((CMatrix::zeros(1, 1), extended[(0, 0)].re));
    }
    let block = extended.view((0, 0), (k, k)).into_owned();
    let u = extended.view((0, k), (k, 1)).into_owned();
    let sym = (&block + dagger(&block)).scale(0.5);
    let eig = nalgebra::SymmetricEigen::new(sym);
    // rotate the identity-coupling vector into the eigenbasis of the block
    let u_rot = dagger(&eig.eigenvectors) * &u;
    let mut boundary_ii = 0.0;
    for mu in 0..k {
        let d_mu = eig.eigenvalues[mu];
        let coupling = u_rot[(mu, 0)].norm_sqr();
        if d_mu > 1e-14 * max_abs(extended) {
            boundary_ii += coupling / d_mu;
        }
    }
    let mut boundary = extended.clone();
    boundary[(k, k)] = Complex64::new(boundary_ii, 0.0);
    let slack = extended[(k, k)].re - boundary_ii;
    Ok((boundary, slack))
}

// ---------------------------------------------------------------------------
// Extended-matrix assembly per mechanism
// ---------------------------------------------------------------------------

fn hermitian_psd_check(m: &CMatrix, what: &str, tol: f64) -> Result<(), MechanismError> {
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    let defect = hermitian_defect(m);
    if defect > 1e-9 * scale {
        return Err(MechanismError::NotHermitian {
            what: what.into(),
            defect,
        });
    }
    let min = hermitian_eigenvalues(m)[0];
    if min < -tol * scale {
        return Err(MechanismError::NotPositive {
            what: what.into(),
            min_eigenvalue: min,
        });
    }
    Ok(())
}

/// Extended matrix of a coherent-hopping channel from the coefficient
/// vectors and the per-channel rates: operator block `|b_mu|^2 g_mu`
/// (diagonal), identity rate `sum |a_mu|^2 g_mu`, couplings
/// `b_mu a_mu* g_mu`.
pub fn coherent_extended_matrix(
    a: &[Complex64],
    b: &[Complex64],
    rates: &[f64],
) -> CMatrix {
    let m = rates.len();
    let mut ext = CMatrix::zeros(m + 1, m + 1);
    let mut ii = 0.0;
    for mu in 0..m {
        let g = rates[mu];
        ext[(mu, mu)] = Complex64::new(b[mu].norm_sqr() * g, 0.0);
        ii += a[mu].norm_sqr() * g;
        let coupling = b[mu] * a[mu].conj() * g;
        ext[(mu, m)] = coupling;
        ext[(m, mu)] = coupling.conj();
    }
    ext[(m, m)] = Complex64::new(ii, 0.0);
    ext
}

/// Per-(displacement, source-site) extended matrices of a hop mechanism,
/// with the identity channel in the last row/column.
fn extended_tables(
    spec: &MechanismSpec,
    lattice: &Lattice,
    tol: f64,
) -> Result<Vec<(i64, Vec<CMatrix>)>, MechanismError> {
    let len = lattice.len();
    let mut out = Vec::new();
    match spec {
        MechanismSpec::ClassicalHopping(s) => {
            for hop in &s.hops {
                if hop.offset == 0 {
                    return Err(MechanismError::ZeroDisplacement);
                }
                hop.value.check_len(len, "classical hop rate")?;
                let mut per_site = Vec::with_capacity(len);
                for idx in 0..len {
                    let phi = *hop.value.at(idx);
                    if phi < 0.0 {
                        return Err(MechanismError::NegativeRate {
                            what: format!("classical hop rate at offset {}", hop.offset),
                            value: phi,
                        });
                    }
                    per_site.push(CMatrix::from_element(1, 1, Complex64::new(phi, 0.0)));
                }
                out.push((hop.offset, per_site));
            }
        }
        MechanismSpec::CorrelatedHopping(s) => {
            let m = s.basis.count();
            for hop in &s.hops {
                if hop.offset == 0 {
                    return Err(MechanismError::ZeroDisplacement);
                }
                hop.value.check_len(len, "correlated hop rate matrix")?;
                let mut per_site = Vec::with_capacity(len);
                for idx in 0..len {
                    let g = hop.value.at(idx);
                    if g.nrows() != m || g.ncols() != m {
                        return Err(MechanismError::Shape {
                            what: format!(
                                "rate matrix at offset {} is {}x{}, basis has {m} operators",
                                hop.offset,
                                g.nrows(),
                                g.ncols()
                            ),
                        });
                    }
                    hermitian_psd_check(
                        g,
                        &format!("rate matrix at offset {}", hop.offset),
                        tol,
                    )?;
                    let mut ext = CMatrix::zeros(m + 1, m + 1);
                    ext.view_mut((0, 0), (m, m)).copy_from(g);
                    per_site.push(ext);
                }
                out.push((hop.offset, per_site));
            }
        }
        MechanismSpec::CoherentHopping(s) => {
            let m = s.basis.count();
            if s.a.len() != m || s.b.len() != m {
                return Err(MechanismError::Shape {
                    what: format!(
                        "coefficient vectors have lengths {}/{}, basis has {m} operators",
                        s.a.len(),
                        s.b.len()
                    ),
                });
            }
            for hop in &s.hops {
                if hop.offset == 0 {
                    return Err(MechanismError::ZeroDisplacement);
                }
                hop.value.check_len(len, "coherent hop rates")?;
                let mut per_site = Vec::with_capacity(len);
                for idx in 0..len {
                    let rates = hop.value.at(idx);
                    if rates.len() != m {
                        return Err(MechanismError::Shape {
                            what: format!(
                                "rate vector at offset {} has {} channels, basis has {m}",
                                hop.offset,
                                rates.len()
                            ),
                        });
                    }
                    if let Some(&bad) = rates.iter().find(|&&g| g < 0.0) {
                        return Err(MechanismError::NegativeRate {
                            what: format!("coherent hop rate at offset {}", hop.offset),
                            value: bad,
                        });
                    }
                    per_site.push(coherent_extended_matrix(&s.a, &s.b, rates));
                }
                out.push((hop.offset, per_site));
            }
        }
        MechanismSpec::GeneralHopping(s) => {
            let m = s.basis.count();
            for hop in &s.hops {
                if hop.offset == 0 {
                    return Err(MechanismError::ZeroDisplacement);
                }
                hop.value.check_len(len, "general rate matrix")?;
                let mut per_site = Vec::with_capacity(len);
                for idx in 0..len {
                    let ext = hop.value.at(idx);
                    if ext.nrows() != m + 1 || ext.ncols() != m + 1 {
                        return Err(MechanismError::Shape {
                            what: format!(
                                "extended matrix at offset {} is {}x{}, expected {}",
                                hop.offset,
                                ext.nrows(),
                                ext.ncols(),
                                m + 1
                            ),
                        });
                    }
                    let report = validate_rate_matrix(ext, tol)?;
                    if !report.cp_ok {
                        let from_site = lattice.site_at(idx);
                        return Err(MechanismError::CpViolation {
                            from_site,
                            to_site: from_site + hop.offset,
                            min_eigenvalue: report.eigenvalues[0],
                        });
                    }
                    per_site.push(ext.clone());
                }
                out.push((hop.offset, per_site));
            }
        }
        MechanismSpec::SiteLindblad(_) => {}
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Generator assembly
// ---------------------------------------------------------------------------

/// Build the hybrid generator of a mechanism sum. Every hop channel
/// contributes `sum_{ij} L_{ij} (W_i rho_src W_j†)` at the destination and
/// `-(1/2) sum_{ij} L_{ij} {W_j† W_i, rho_src}` at the source, with
/// `W = {V_mu} + identity`; the first mechanism acts site-locally. The
/// induced Hamiltonian of the coherent channels is contained in the
/// anticommutator form identically.
pub fn build_generator(
    specs: &[MechanismSpec],
    lattice: Lattice,
    tol: f64,
) -> Result<HybridGenerator, MechanismError> {
    let d = specs
        .iter()
        .find_map(|s| s.quantum_dim())
        .ok_or_else(|| MechanismError::Shape {
            what: "cannot infer quantum dimension: provide at least one mechanism with an operator basis".into(),
        })?;
    for spec in specs {
        if let Some(other) = spec.quantum_dim() {
            if other != d {
                return Err(MechanismError::Shape {
                    what: format!("mixed quantum dimensions {d} and {other}"),
                });
            }
        }
    }
    let mut gen = HybridGenerator::new(d, lattice);
    let len = lattice.len();
    for spec in specs {
        gen.push_label(spec.label());
        match spec {
            MechanismSpec::SiteLindblad(s) => {
                s.hamiltonian.check_len(len, "site Hamiltonian")?;
                s.rates.check_len(len, "site rate matrix")?;
                for idx in 0..len {
                    let h = s.hamiltonian.at(idx);
                    let defect = hermitian_defect(h);
                    if defect > 1e-9 * max_abs(h).max(1.0) {
                        return Err(MechanismError::NotHermitian {
                            what: format!("site Hamiltonian at {}", lattice.site_at(idx)),
                            defect,
                        });
                    }
                    let eta = s.rates.at(idx);
                    if eta.nrows() != s.basis.count() {
                        return Err(MechanismError::Shape {
                            what: format!(
                                "site rate matrix is {}x{}, basis has {}",
                                eta.nrows(),
                                eta.ncols(),
                                s.basis.count()
                            ),
                        });
                    }
                    hermitian_psd_check(eta, "site rate matrix", tol)?;
                    let mut superop = hamiltonian_superop(h);
                    superop += dissipator_superop(&s.basis, eta);
                    gen.add_local(idx, &superop);
                }
            }
            hop_spec => {
                let ops = hop_operators(hop_spec, d);
                for (offset, per_site) in extended_tables(hop_spec, &lattice, tol)? {
                    let mut gains = Vec::with_capacity(len);
                    let mut losses = Vec::with_capacity(len);
                    for ext in &per_site {
                        let (gain, loss) = channel_superops(&ops, ext);
                        gains.push(gain);
                        losses.push(loss);
                    }
                    gen.add_hop(offset, gains, losses);
                }
            }
        }
    }
    Ok(gen)
}

/// Operator list `{V_mu} + identity` of a hop mechanism (just the identity
/// for classical hopping).
fn hop_operators(spec: &MechanismSpec, d: usize) -> Vec<CMatrix> {
    let mut ops = match spec {
        MechanismSpec::CorrelatedHopping(s) => s.basis.ops().to_vec(),
        MechanismSpec::CoherentHopping(s) => s.basis.ops().to_vec(),
        MechanismSpec::GeneralHopping(s) => s.basis.ops().to_vec(),
        _ => Vec::new(),
    };
    ops.push(identity(d));
    ops
}

/// Gain and loss superoperators of one hop channel with coefficient matrix
/// `ext` over the operator list.
fn channel_superops(ops: &[CMatrix], ext: &CMatrix) -> (CMatrix, CMatrix) {
    let d = ops[0].nrows();
    let dim = d * d;
    let mut gain = CMatrix::zeros(dim, dim);
    let mut k_op = CMatrix::zeros(d, d);
    for i in 0..ops.len() {
        for j in 0..ops.len() {
            let coeff = ext[(i, j)];
            if coeff.norm() == 0.0 {
                continue;
            }
            gain += sandwich_superop(&ops[i], &dagger(&ops[j])) * coeff;
            k_op += (dagger(&ops[j]) * &ops[i]) * coeff;
        }
    }
    let loss = (left_superop(&k_op) + right_superop(&k_op)).scale(0.5);
    (gain, loss)
}

/// Dissipator `sum_{mu nu} eta^{mu nu} (V_mu rho V_nu† - (1/2){V_nu† V_mu, rho})`
/// as a superoperator.
fn dissipator_superop(basis: &OperatorBasis, eta: &CMatrix) -> CMatrix {
    let d = basis.dim();
    let dim = d * d;
    let mut superop = CMatrix::zeros(dim, dim);
    let mut k_op = CMatrix::zeros(d, d);
    for mu in 0..basis.count() {
        for nu in 0..basis.count() {
            let coeff = eta[(mu, nu)];
            if coeff.norm() == 0.0 {
                continue;
            }
            superop += sandwich_superop(basis.op(mu), &dagger(basis.op(nu))) * coeff;
            k_op += (dagger(basis.op(nu)) * basis.op(mu)) * coeff;
        }
    }
    superop - (left_superop(&k_op) + right_superop(&k_op)).scale(0.5)
}

// ---------------------------------------------------------------------------
// Closed partial dynamics
// ---------------------------------------------------------------------------

/// Closed Lindblad dynamics of the quantum marginal.
#[derive(Debug, Clone)]
pub struct QuantumLindblad {
    pub basis: OperatorBasis,
    pub hamiltonian: CMatrix,
    /// Summed rate matrix over the basis.
    pub rates: CMatrix,
}

impl QuantumLindblad {
    /// `d rho / dt`.
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let mut out = commutator(&self.hamiltonian, rho) * Complex64::new(0.0, -1.0);
        let superop = dissipator_superop(&self.basis, &self.rates);
        let dv = superop * crate::linalg::vectorize(rho);
        out += crate::linalg::unvectorize(&dv, self.basis.dim());
        out
    }
}

fn profile_uniform_value<T: Clone + PartialEq>(p: &SiteProfile<T>) -> Option<T> {
    match p {
        SiteProfile::Uniform(v) => Some(v.clone()),
        SiteProfile::PerSite(v) => {
            let first = v.first()?;
            v.iter().all(|x| x == first).then(|| first.clone())
        }
    }
}

fn matrix_profile_uniform(p: &SiteProfile<CMatrix>, tol: f64) -> Option<CMatrix> {
    match p {
        SiteProfile::Uniform(v) => Some(v.clone()),
        SiteProfile::PerSite(v) => {
            let first = v.first()?;
            let scale = max_abs(first).max(1.0);
            v.iter()
                .all(|x| max_abs(&(x - first)) <= tol * scale)
                .then(|| first.clone())
        }
    }
}

/// If the hop rates do not depend on the starting site, the quantum
/// marginal obeys a closed Lindblad equation with the destination-summed
/// rate matrix (and, for the coherent mechanism, the induced Hamiltonian).
/// Returns `None` when the symmetry condition fails.
pub fn reduced_quantum_lindblad(
    spec: &MechanismSpec,
    tol: f64,
) -> Option<QuantumLindblad> {
    match spec {
        MechanismSpec::CorrelatedHopping(s) => {
            let m = s.basis.count();
            let mut total = CMatrix::zeros(m, m);
            for hop in &s.hops {
                total += matrix_profile_uniform(&hop.value, tol)?;
            }
            Some(QuantumLindblad {
                basis: s.basis.clone(),
                hamiltonian: CMatrix::zeros(s.basis.dim(), s.basis.dim()),
                rates: total,
            })
        }
        MechanismSpec::CoherentHopping(s) => {
            let m = s.basis.count();
            let mut rates = CMatrix::zeros(m, m);
            let mut h = CMatrix::zeros(s.basis.dim(), s.basis.dim());
            for hop in &s.hops {
                let g = profile_uniform_value(&hop.value)?;
                for mu in 0..m {
                    rates[(mu, mu)] += Complex64::new(s.b[mu].norm_sqr() * g[mu], 0.0);
                    // H = (i/2) sum (lambda^{mu I} V_mu - lambda^{I mu} V_mu†)
                    let lam_mu_i = s.b[mu] * s.a[mu].conj() * g[mu];
                    h += (s.basis.op(mu).clone() * lam_mu_i
                        - dagger(s.basis.op(mu)) * lam_mu_i.conj())
                        * Complex64::new(0.0, 0.5);
                }
            }
            Some(QuantumLindblad {
                basis: s.basis.clone(),
                hamiltonian: h,
                rates,
            })
        }
        _ => None,
    }
}

/// If `sum_{mu nu} gamma^{mu nu} V_nu† V_mu` is proportional to the
/// identity for every displacement and site, the classical probabilities
/// obey a closed master equation; returns its hop-rate tables.
pub fn reduced_classical_master(
    spec: &CorrelatedHoppingSpec,
    lattice: &Lattice,
    tol: f64,
) -> Option<Vec<HopTable<f64>>> {
    let d = spec.basis.dim();
    let len = lattice.len();
    let mut out = Vec::new();
    for hop in &spec.hops {
        let mut rates = Vec::with_capacity(len);
        for idx in 0..len {
            let g = hop.value.at(idx);
            let mut k_op = CMatrix::zeros(d, d);
            for mu in 0..spec.basis.count() {
                for nu in 0..spec.basis.count() {
                    k_op += (dagger(spec.basis.op(nu)) * spec.basis.op(mu))
                        * g[(mu, nu)];
                }
            }
            let rate = trace(&k_op).re / d as f64;
            let dev = max_abs(&(&k_op - identity(d).scale(rate)));
            if dev > tol * max_abs(&k_op).max(1e-300) {
                return None;
            }
            rates.push(rate);
        }
        out.push(HopTable::per_site(hop.offset, rates));
    }
    Some(out)
}

// ---------------------------------------------------------------------------
// Bipartite embedding
// ---------------------------------------------------------------------------

/// Dense Lindblad dynamics on the product space `H_s (x) H_c`, built with
/// explicit jump operators `W (x) |dest><src|`. An independent route to
/// the same dynamics as [`build_generator`], used to verify it.
pub struct BipartiteEmbedding {
    d: usize,
    lattice: Lattice,
    hamiltonian: CMatrix,
    /// Jump channels as (coefficient matrix, operator list) pairs; the
    /// operators of one channel share the coefficient matrix.
    channels: Vec<(CMatrix, Vec<CMatrix>)>,
}

impl BipartiteEmbedding {
    pub fn new(
        specs: &[MechanismSpec],
        lattice: Lattice,
        tol: f64,
    ) -> Result<Self, MechanismError> {
        let d = specs
            .iter()
            .find_map(|s| s.quantum_dim())
            .ok_or_else(|| MechanismError::Shape {
                what: "cannot infer quantum dimension".into(),
            })?;
        let d_c = lattice.len();
        let total = d * d_c;
        if total > MAX_EMBED_DIM {
            return Err(MechanismError::TooLarge { dim: total });
        }
        let mut hamiltonian = CMatrix::zeros(total, total);
        let mut channels = Vec::new();
        let site_projector = |idx: usize| -> CMatrix {
            let mut p = CMatrix::zeros(d_c, d_c);
            p[(idx, idx)] = Complex64::new(1.0, 0.0);
            p
        };
        let site_shift = |dest: usize, src: usize| -> CMatrix {
            let mut p = CMatrix::zeros(d_c, d_c);
            p[(dest, src)] = Complex64::new(1.0, 0.0);
            p
        };
        for spec in specs {
            match spec {
                MechanismSpec::SiteLindblad(s) => {
                    s.hamiltonian.check_len(d_c, "site Hamiltonian")?;
                    s.rates.check_len(d_c, "site rate matrix")?;
                    for idx in 0..d_c {
                        hamiltonian += s.hamiltonian.at(idx).kronecker(&site_projector(idx));
                        let ops: Vec<CMatrix> = s
                            .basis
                            .ops()
                            .iter()
                            .map(|v| v.kronecker(&site_projector(idx)))
                            .collect();
                        channels.push((s.rates.at(idx).clone(), ops));
                    }
                }
                hop_spec => {
                    let bare_ops = hop_operators(hop_spec, d);
                    for (offset, per_site) in extended_tables(hop_spec, &lattice, tol)? {
                        for (idx, ext) in per_site.into_iter().enumerate() {
                            let src = lattice.site_at(idx);
                            let dest = src + offset;
                            let Some(dest_idx) = lattice.index_of(dest) else {
                                continue;
                            };
                            let shift = site_shift(dest_idx, idx);
                            let ops: Vec<CMatrix> =
                                bare_ops.iter().map(|w| w.kronecker(&shift)).collect();
                            channels.push((ext, ops));
                        }
                    }
                }
            }
        }
        Ok(Self {
            d,
            lattice,
            hamiltonian,
            channels,
        })
    }

    pub fn total_dim(&self) -> usize {
        self.d * self.lattice.len()
    }

    /// Lindblad action `dXi/dt` on a bipartite density matrix.
    pub fn apply(&self, xi: &CMatrix) -> CMatrix {
        let mut out = commutator(&self.hamiltonian, xi) * Complex64::new(0.0, -1.0);
        for (coeff, ops) in &self.channels {
            for i in 0..ops.len() {
                for j in 0..ops.len() {
                    let a = coeff[(i, j)];
                    if a.norm() == 0.0 {
                        continue;
                    }
                    let gain = &ops[i] * xi * dagger(&ops[j]);
                    let k = dagger(&ops[j]) * &ops[i];
                    let loss = (&k * xi + xi * &k).scale(0.5);
                    out += (gain - loss) * a;
                }
            }
        }
        out
    }

    /// Embed a hybrid state as `Xi = sum_n rho_n (x) |n><n|`.
    pub fn embed(&self, state: &HybridState) -> CMatrix {
        let d_c = self.lattice.len();
        let total = self.d * d_c;
        let mut xi = CMatrix::zeros(total, total);
        for (idx, rho) in state.matrices().iter().enumerate() {
            for a in 0..self.d {
                for b in 0..self.d {
                    xi[(a * d_c + idx, b * d_c + idx)] = rho[(a, b)];
                }
            }
        }
        xi
    }

    /// Extract the classical-diagonal blocks of a bipartite matrix as a
    /// hybrid state field, plus the largest off-diagonal-block entry.
    pub fn extract(&self, xi: &CMatrix) -> (HybridState, f64) {
        let d_c = self.lattice.len();
        let mut blocks = vec![CMatrix::zeros(self.d, self.d); d_c];
        let mut off = 0.0f64;
        for a in 0..self.d {
            for b in 0..self.d {
                for i in 0..d_c {
                    for j in 0..d_c {
                        let v = xi[(a * d_c + i, b * d_c + j)];
                        if i == j {
                            blocks[i][(a, b)] = v;
                        } else {
                            off = off.max(v.norm());
                        }
                    }
                }
            }
        }
        (
            HybridState::from_parts(self.lattice, self.d, blocks, 0.0),
            off,
        )
    }

    /// Check that the embedded dynamics preserves hybrid form and agrees
    /// with the stencil generator on the given states.
    pub fn verify(
        &self,
        gen: &HybridGenerator,
        states: &[HybridState],
    ) -> Result<EmbedReport, MechanismError> {
        let mut max_off = 0.0f64;
        let mut max_mismatch = 0.0f64;
        for state in states {
            let xi = self.embed(state);
            let dxi = self.apply(&xi);
            let (diag, off) = self.extract(&dxi);
            max_off = max_off.max(off);
            let direct = gen.apply(state).map_err(|e| MechanismError::Shape {
                what: e.to_string(),
            })?;
            for idx in 0..self.lattice.len() {
                let dev = max_abs(&(diag.matrices()[idx].clone() - &direct.matrices()[idx]));
                max_mismatch = max_mismatch.max(dev);
            }
        }
        Ok(EmbedReport {
            max_offdiagonal_block: max_off,
            max_diagonal_mismatch: max_mismatch,
        })
    }

    /// Minimum eigenvalue of the Choi-type matrix of the short-time
    /// propagator `exp(L dt)`, computed by integrating each matrix unit
    /// through the embedded Lindblad dynamics.
    pub fn choi_min_eigenvalue(&self, dt: f64, steps: usize) -> f64 {
        let total = self.total_dim();
        let h = dt / steps as f64;
        let mut choi = CMatrix::zeros(total * total, total * total);
        let mut images = Vec::with_capacity(total * total);
        for j in 0..total {
            for i in 0..total {
                let mut m = CMatrix::zeros(total, total);
                m[(i, j)] = Complex64::new(1.0, 0.0);
                for _ in 0..steps {
                    let k1 = self.apply(&m);
                    let k2 = self.apply(&(&m + k1.scale(h / 2.0)));
                    let k3 = self.apply(&(&m + k2.scale(h / 2.0)));
                    let k4 = self.apply(&(&m + k3.scale(h)));
                    m += (k1 + k2.scale(2.0) + k3.scale(2.0) + k4).scale(h / 6.0);
                }
                images.push(m);
            }
        }
        // Choi matrix C = sum_{ij} Phi(E_ij) (x) E_ij
        for i in 0..total {
            for j in 0..total {
                let phi = &images[j * total + i];
                for a in 0..total {
                    for b in 0..total {
                        choi[(a * total + i, b * total + j)] = phi[(a, b)];
                    }
                }
            }
        }
        hermitian_eigenvalues(&choi)[0]
    }
}

/// Agreement metrics between the bipartite embedding and the stencil
/// generator.
#[derive(Debug, Clone, Copy)]
pub struct EmbedReport {
    /// Largest classical off-diagonal block entry of `dXi/dt` over the
    /// probed hybrid states (hybrid form preservation).
    pub max_offdiagonal_block: f64,
    /// Largest deviation between the diagonal blocks and the stencil
    /// generator's action.
    pub max_diagonal_mismatch: f64,
}

#[cfg(test)]
mod tests;
