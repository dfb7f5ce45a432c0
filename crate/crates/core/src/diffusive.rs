//! Diffusive and quantum-Fokker-Planck generators on the lattice, built
//! from jump moments and finite-difference stencils, plus the exact
//! (pre-Taylor) convolution generator of the coherent-coupling case.
//!
//! The coordinate derivatives are discretized by the central-difference
//! "force" stencil `L1[f]_n = (f_{n+1} - f_{n-1})/2` and the "diffusion"
//! stencil `L2[f]_n = f_{n+1} + f_{n-1} - 2 f_n`, with `d/dq -> L1/r0` and
//! `d^2/dq^2 -> L2/r0^2`. Products like `Phi_1(q) rho(q)` are discretized
//! product-first and the stencils are applied in conservative bond form,
//! so every built generator is exactly trace-free on the finite window.

use crate::analytic::quad::adaptive_simpson;
use crate::generator::HybridGenerator;
use crate::linalg::{
    hamiltonian_superop, identity, left_superop, lindblad_superop, right_superop,
    sandwich_superop, dagger,
};
use crate::mechanisms::{OperatorBasis, SiteProfile};
use crate::state::Lattice;
use crate::{CMatrix, Complex64};
use std::sync::Arc;
use thiserror::Error;

/// Default "much smaller than" ratio for the validity flags.
pub const DEFAULT_DOMINANCE_RATIO: f64 = 0.1;

#[derive(Debug, Error)]
pub enum DiffusiveError {
    #[error("jump moment diverged or is non-finite")]
    MomentDiverged,
    #[error("flavor requires a dominant classical channel, but its zeroth moment vanishes")]
    MissingClassicalChannel,
    #[error("validity conditions reject the {flavor:?} flavor: {reason} (pass an explicit override to study the invalid regime)")]
    Validity {
        flavor: DiffusiveFlavor,
        reason: String,
    },
    #[error("quantum-Fokker-Planck positivity violated at site {site}: quadratic-velocity slack {slack:.3e}")]
    CpViolation { site: i64, slack: f64 },
    #[error("zero Lindblad moment at site {site}, channel {channel}: the quadratic-velocity condition is undefined")]
    ZeroLindbladMoment { site: i64, channel: usize },
    #[error("kernel support offset {offset} exceeds the lattice window")]
    KernelSupport { offset: i64 },
    #[error("shape error: {what}")]
    Shape { what: String },
}

// ---------------------------------------------------------------------------
// Stencils
// ---------------------------------------------------------------------------

/// Discrete "force" operator `L1[f]_n = (f_{n+1} - f_{n-1}) / 2` on the
/// interior (one-sided terms dropped at the ends).
pub fn stencil_l1(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    (0..n)
        .map(|i| {
            let right = if i + 1 < n { f[i + 1] } else { 0.0 };
            let left = if i >= 1 { f[i - 1] } else { 0.0 };
            0.5 * (right - left)
        })
        .collect()
}

/// Discrete "diffusion" operator `L2[f]_n = f_{n+1} + f_{n-1} - 2 f_n`.
pub fn stencil_l2(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    (0..n)
        .map(|i| {
            let right = if i + 1 < n { f[i + 1] } else { 0.0 };
            let left = if i >= 1 { f[i - 1] } else { 0.0 };
            right + left - 2.0 * f[i]
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Kernels and moments
// ---------------------------------------------------------------------------

/// One jump-rate channel `rate(r | q)` over displacement `r` at coordinate
/// `q`: a displacement-indexed table bound to a lattice, or a closed-form
/// rate density integrated by quadrature.
#[derive(Clone)]
pub enum JumpKernel {
    /// Finite-support table `offset -> rate`; the physical displacement of
    /// an entry is `offset * r0`.
    Table { r0: f64, entries: Vec<(i64, f64)> },
    /// Closed-form rate density `rate(r, q)` with support `|r| <= reach`.
    Continuous {
        rate: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
        reach: f64,
    },
}

impl std::fmt::Debug for JumpKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            JumpKernel::Table { r0, entries } => f
                .debug_struct("Table")
                .field("r0", r0)
                .field("entries", entries)
                .finish(),
            JumpKernel::Continuous { reach, .. } => f
                .debug_struct("Continuous")
                .field("reach", reach)
                .finish_non_exhaustive(),
        }
    }
}

/// `m`-th jump moment `int dr rate(r|q) r^m`, by exact summation for
/// tables and adaptive quadrature (split at the origin) for closed forms.
pub fn jump_moments(kernel: &JumpKernel, m: u32, q: f64) -> Result<f64, DiffusiveError> {
    let value = match kernel {
        JumpKernel::Table { r0, entries } => entries
            .iter()
            .map(|(offset, rate)| rate * (*offset as f64 * r0).powi(m as i32))
            .sum(),
        JumpKernel::Continuous { rate, reach } => {
            let f = |r: f64| rate(r, q) * r.powi(m as i32);
            adaptive_simpson(&f, -reach, 0.0, 1e-12) + adaptive_simpson(&f, 0.0, *reach, 1e-12)
        }
    };
    if !value.is_finite() {
        return Err(DiffusiveError::MomentDiverged);
    }
    Ok(value)
}

/// Displacement table of one channel with possibly site-dependent rates.
#[derive(Debug, Clone)]
pub struct ChannelTable<T> {
    pub entries: Vec<(i64, SiteProfile<T>)>,
}

impl<T> ChannelTable<T> {
    pub fn uniform(entries: Vec<(i64, T)>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|(k, v)| (k, SiteProfile::Uniform(v)))
                .collect(),
        }
    }
}

impl ChannelTable<f64> {
    fn moment(&self, r0: f64, idx: usize, m: u32) -> f64 {
        self.entries
            .iter()
            .map(|(k, v)| v.at(idx) * (*k as f64 * r0).powi(m as i32))
            .sum()
    }
}

impl ChannelTable<Complex64> {
    fn moment_c(&self, r0: f64, idx: usize, m: u32) -> Complex64 {
        self.entries
            .iter()
            .map(|(k, v)| v.at(idx) * (*k as f64 * r0).powi(m as i32))
            .sum()
    }
}

/// The jump-rate channels of a coherent-coupling dynamics on a lattice:
/// the identity (classical) channel, one diagonal Lindblad channel per
/// basis operator, and the complex cross channels pairing each operator
/// with the identity (their conjugates are implicit).
#[derive(Debug, Clone)]
pub struct DiffusiveChannels {
    pub lattice: Lattice,
    pub basis: OperatorBasis,
    /// `rate^{II}(r | n)`, real nonnegative.
    pub classical: Option<ChannelTable<f64>>,
    /// `rate^{mu}(r | n)` per basis operator, real nonnegative.
    pub lindblad: Vec<ChannelTable<f64>>,
    /// `rate^{mu I}(r | n)` per basis operator, complex.
    pub cross: Vec<Option<ChannelTable<Complex64>>>,
}

/// Per-site moments of one real channel.
#[derive(Debug, Clone)]
pub struct ChannelMoments {
    pub m0: Vec<f64>,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
}

/// Per-site moments of one complex (cross) channel.
#[derive(Debug, Clone)]
pub struct CrossMoments {
    pub m0: Vec<Complex64>,
    pub m1: Vec<Complex64>,
    pub m2: Vec<Complex64>,
}

/// The jump moments of every channel, per site.
#[derive(Debug, Clone)]
pub struct JumpMoments {
    pub classical: Option<ChannelMoments>,
    pub lindblad: Vec<ChannelMoments>,
    pub cross: Vec<Option<CrossMoments>>,
}

impl DiffusiveChannels {
    /// Symmetric nearest-neighbor channels of the first worked example:
    /// classical rate `phi`, dephasing rate `gamma` with jump operator
    /// `sigma_z`.
    pub fn dephasing_walk(phi: f64, gamma: f64, lattice: Lattice) -> Self {
        Self {
            lattice,
            basis: OperatorBasis::single(crate::linalg::pauli_z()).unwrap(),
            classical: Some(ChannelTable::uniform(vec![(1, phi), (-1, phi)])),
            lindblad: vec![ChannelTable::uniform(vec![(1, gamma), (-1, gamma)])],
            cross: vec![None],
        }
    }

    /// Channels of the second worked example: the dephasing walk plus the
    /// complex cross couplings (`lambda_up` for upward jumps, `lambda_dn`
    /// for downward ones).
    pub fn coherent_walk(
        phi: f64,
        gamma: f64,
        lambda_up: Complex64,
        lambda_dn: Complex64,
        lattice: Lattice,
    ) -> Self {
        let mut channels = Self::dephasing_walk(phi, gamma, lattice);
        channels.cross =
            vec![Some(ChannelTable::uniform(vec![(1, lambda_up), (-1, lambda_dn)]))];
        channels
    }

    fn check(&self) -> Result<(), DiffusiveError> {
        let m = self.basis.count();
        if self.lindblad.len() != m || self.cross.len() != m {
            return Err(DiffusiveError::Shape {
                what: format!(
                    "{} Lindblad and {} cross channels for {} basis operators",
                    self.lindblad.len(),
                    self.cross.len(),
                    m
                ),
            });
        }
        let window = self.lattice.len() as i64;
        fn check_entries<T>(
            entries: &[(i64, SiteProfile<T>)],
            window: i64,
        ) -> Result<(), DiffusiveError> {
            for (offset, _) in entries {
                if offset.unsigned_abs() as i64 >= window {
                    return Err(DiffusiveError::KernelSupport { offset: *offset });
                }
            }
            Ok(())
        }
        if let Some(t) = &self.classical {
            check_entries(&t.entries, window)?;
        }
        for t in &self.lindblad {
            check_entries(&t.entries, window)?;
        }
        for t in self.cross.iter().flatten() {
            check_entries(&t.entries, window)?;
        }
        Ok(())
    }

    /// Per-site jump moments of every channel.
    pub fn moments(&self) -> JumpMoments {
        let r0 = self.lattice.r0();
        let len = self.lattice.len();
        let real_moments = |t: &ChannelTable<f64>| ChannelMoments {
            m0: (0..len).map(|i| t.moment(r0, i, 0)).collect(),
            m1: (0..len).map(|i| t.moment(r0, i, 1)).collect(),
            m2: (0..len).map(|i| t.moment(r0, i, 2)).collect(),
        };
        JumpMoments {
            classical: self.classical.as_ref().map(real_moments),
            lindblad: self.lindblad.iter().map(real_moments).collect(),
            cross: self
                .cross
                .iter()
                .map(|c| {
                    c.as_ref().map(|t| CrossMoments {
                        m0: (0..len).map(|i| t.moment_c(r0, i, 0)).collect(),
                        m1: (0..len).map(|i| t.moment_c(r0, i, 1)).collect(),
                        m2: (0..len).map(|i| t.moment_c(r0, i, 2)).collect(),
                    })
                })
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Validity report
// ---------------------------------------------------------------------------

/// Generator flavors: which terms of the expansion are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffusiveFlavor {
    /// Classical drift-diffusion only (second mechanism).
    Classical,
    /// Combined second and third mechanisms: Lindblad block, classical
    /// drift-diffusion, and operator-sandwiched transport.
    SecondWithThird,
    /// Limit of vanishing third-mechanism transport: Lindblad block plus
    /// classical drift-diffusion (positivity preserving).
    SecondThirdLimit,
    /// Full coherent-coupling expansion, including the non-diagonal
    /// derivative lines and the induced Hamiltonian.
    Coherent,
    /// Quantum Fokker-Planck: Lindblad block, classical drift-diffusion,
    /// Hamiltonian, and the single-derivative coupling terms.
    QuantumFokkerPlanck,
}

/// How to treat validity conditions when building a generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidityPolicy {
    Enforce,
    /// Build even in the invalid regime (the breakdown is itself a
    /// subject of study).
    Override,
}

/// Outcome of the validity conditions for a diffusive construction.
#[derive(Debug, Clone)]
pub struct ValidityReport {
    /// Coarse time scale `1/Lambda_0^{II}` (worst site).
    pub delta_t: f64,
    /// Coarse coordinate scale `sqrt(Lambda_2^{II} / (2 Lambda_0^{II}))`.
    pub delta_q: f64,
    /// Worst ratio `Gamma_m / Phi_m` over Lindblad channels, sites and
    /// moments; the third mechanism must be subdominant.
    pub worst_dominance_ratio: f64,
    pub third_subdominant: bool,
    /// `D_phi > D_gamma`: the coherence diffusion coefficient stays
    /// positive (second moments compared).
    pub diffusion_condition_ok: bool,
    /// Worst ratio `sqrt(Lambda_0^mu / Lambda_0^{II})`, the moment-level
    /// reading of `|b_mu| << |a_mu|`.
    pub worst_quantum_ratio: f64,
    pub small_quantum_ok: bool,
    /// Minimum quadratic-velocity slack
    /// `Lambda_2^{II} - |Lambda_1^{mu I}|^2 / Lambda_0^mu` over sites and
    /// channels (`+inf` when no cross channel is present).
    pub qfp_slack: f64,
    /// Recommendations: the expansion holds after several jumps and for
    /// initial widths at least `r0 / sqrt(2)`.
    pub recommended_min_time: f64,
    pub recommended_sigma0: f64,
}

impl ValidityReport {
    /// Whether the soft conditions admit the flavor.
    pub fn permits(&self, flavor: DiffusiveFlavor) -> bool {
        match flavor {
            DiffusiveFlavor::Classical => true,
            DiffusiveFlavor::SecondWithThird | DiffusiveFlavor::SecondThirdLimit => {
                self.third_subdominant
            }
            DiffusiveFlavor::Coherent => self.small_quantum_ok,
            DiffusiveFlavor::QuantumFokkerPlanck => self.qfp_slack >= 0.0,
        }
    }

    fn reject_reason(&self, flavor: DiffusiveFlavor) -> String {
        match flavor {
            DiffusiveFlavor::Classical => String::new(),
            DiffusiveFlavor::SecondWithThird | DiffusiveFlavor::SecondThirdLimit => format!(
                "operator-channel moments are not subdominant (worst ratio {:.3})",
                self.worst_dominance_ratio
            ),
            DiffusiveFlavor::Coherent => format!(
                "quantum transformations are not small (worst |b/a| ratio {:.3})",
                self.worst_quantum_ratio
            ),
            DiffusiveFlavor::QuantumFokkerPlanck => {
                format!("quadratic-velocity slack {:.3e} is negative", self.qfp_slack)
            }
        }
    }
}

/// Evaluate every validity condition on a set of channels; a pure report,
/// never blocking by itself. `ratio` is the threshold standing in for the
/// "much smaller than" conditions.
pub fn check_validity(channels: &DiffusiveChannels, ratio: f64) -> ValidityReport {
    let moments = channels.moments();
    let len = channels.lattice.len();
    let r0 = channels.lattice.r0();

    let (mut delta_t, mut delta_q) = (f64::INFINITY, f64::INFINITY);
    if let Some(cl) = &moments.classical {
        for i in 0..len {
            if cl.m0[i] > 0.0 {
                delta_t = delta_t.min(1.0 / cl.m0[i]);
                delta_q = delta_q.min((cl.m2[i] / (2.0 * cl.m0[i])).sqrt());
            }
        }
    }

    let mut worst_dominance: f64 = 0.0;
    let mut worst_quantum: f64 = 0.0;
    if let Some(cl) = &moments.classical {
        for ch in &moments.lindblad {
            for i in 0..len {
                for (g, p) in [(ch.m0[i], cl.m0[i]), (ch.m1[i], cl.m1[i]), (ch.m2[i], cl.m2[i])] {
                    if g.abs() > 0.0 {
                        worst_dominance = if p.abs() > 0.0 {
                            worst_dominance.max(g.abs() / p.abs())
                        } else {
                            f64::INFINITY
                        };
                    }
                }
                if ch.m0[i] > 0.0 {
                    worst_quantum = if cl.m0[i] > 0.0 {
                        worst_quantum.max((ch.m0[i] / cl.m0[i]).sqrt())
                    } else {
                        f64::INFINITY
                    };
                }
            }
        }
    } else {
        let any_lindblad = moments
            .lindblad
            .iter()
            .any(|ch| ch.m0.iter().any(|&x| x != 0.0));
        if any_lindblad {
            worst_dominance = f64::INFINITY;
            worst_quantum = f64::INFINITY;
        }
    }

    let diffusion_condition_ok = match &moments.classical {
        Some(cl) => (0..len).all(|i| {
            let gamma2: f64 = moments.lindblad.iter().map(|ch| ch.m2[i]).sum();
            cl.m2[i] > gamma2
        }),
        None => false,
    };

    let mut qfp_slack = f64::INFINITY;
    if let Some(cl) = &moments.classical {
        for (mu, cross) in moments.cross.iter().enumerate() {
            let Some(cross) = cross else { continue };
            for i in 0..len {
                let lind0 = moments.lindblad[mu].m0[i];
                if lind0 <= 0.0 {
                    qfp_slack = f64::NEG_INFINITY;
                } else {
                    qfp_slack = qfp_slack.min(cl.m2[i] - cross.m1[i].norm_sqr() / lind0);
                }
            }
        }
    }

    ValidityReport {
        delta_t,
        delta_q,
        worst_dominance_ratio: worst_dominance,
        third_subdominant: worst_dominance <= ratio,
        diffusion_condition_ok,
        worst_quantum_ratio: worst_quantum,
        small_quantum_ok: worst_quantum <= ratio,
        qfp_slack,
        recommended_min_time: 10.0 * delta_t,
        recommended_sigma0: r0 / 2f64.sqrt(),
    }
}

// ---------------------------------------------------------------------------
// Stencil generator assembly
// ---------------------------------------------------------------------------

/// Add the conservative bond form of `-d/dq [ S_n(rho_n) ]` with per-site
/// superoperator weights; equals `-L1/r0` on the interior.
fn add_drift_stencil(gen: &mut HybridGenerator, lattice: &Lattice, weights: &[CMatrix]) {
    let r0 = lattice.r0();
    let up: Vec<CMatrix> = weights.iter().map(|s| s.scale(1.0 / (2.0 * r0))).collect();
    let dn: Vec<CMatrix> = weights.iter().map(|s| s.scale(-1.0 / (2.0 * r0))).collect();
    gen.add_hop(1, up.clone(), up);
    gen.add_hop(-1, dn.clone(), dn);
}

/// Add the conservative bond form of `+(1/2) d^2/dq^2 [ S_n(rho_n) ]`;
/// equals `+L2/(2 r0^2)` on the interior.
fn add_diffusion_stencil(gen: &mut HybridGenerator, lattice: &Lattice, weights: &[CMatrix]) {
    let r0 = lattice.r0();
    let half: Vec<CMatrix> = weights
        .iter()
        .map(|s| s.scale(1.0 / (2.0 * r0 * r0)))
        .collect();
    gen.add_hop(1, half.clone(), half.clone());
    gen.add_hop(-1, half.clone(), half);
}

fn superop_field(len: usize, coeff: impl Fn(usize) -> Complex64, base: &CMatrix) -> Vec<CMatrix> {
    (0..len).map(|i| base * coeff(i)).collect()
}

/// Induced Hamiltonian `H_0(n) = (i/2) sum_mu (Lambda_0^{mu I}(n) V_mu -
/// Lambda_0^{I mu}(n) V_mu†)`.
fn induced_hamiltonian(
    basis: &OperatorBasis,
    cross0: &[Option<Vec<Complex64>>],
    idx: usize,
) -> CMatrix {
    let d = basis.dim();
    let mut h = CMatrix::zeros(d, d);
    for (mu, c0) in cross0.iter().enumerate() {
        if let Some(c0) = c0 {
            let lam = c0[idx];
            h += (basis.op(mu) * lam - dagger(basis.op(mu)) * lam.conj())
                * Complex64::new(0.0, 0.5);
        }
    }
    h
}

/// Build the requested diffusive flavor from the channels. The soft
/// validity conditions gate construction under [`ValidityPolicy::Enforce`]
/// and are reported but ignored under [`ValidityPolicy::Override`].
pub fn build_diffusive_generator(
    channels: &DiffusiveChannels,
    flavor: DiffusiveFlavor,
    policy: ValidityPolicy,
) -> Result<HybridGenerator, DiffusiveError> {
    channels.check()?;
    if flavor == DiffusiveFlavor::QuantumFokkerPlanck {
        return build_qfp_generator(channels);
    }
    let moments = channels.moments();
    let classical = moments.classical.as_ref();
    if policy == ValidityPolicy::Enforce {
        if classical.is_none() || classical.is_some_and(|cl| cl.m0.iter().all(|&x| x == 0.0)) {
            return Err(DiffusiveError::MissingClassicalChannel);
        }
        let report = check_validity(channels, DEFAULT_DOMINANCE_RATIO);
        if !report.permits(flavor) {
            return Err(DiffusiveError::Validity {
                flavor,
                reason: report.reject_reason(flavor),
            });
        }
    }
    let lattice = channels.lattice;
    let len = lattice.len();
    let d = channels.basis.dim();
    let mut gen = HybridGenerator::new(d, lattice);
    gen.push_label(format!("diffusive:{flavor:?}"));

    // classical drift-diffusion block, present in every flavor
    if let Some(cl) = classical {
        let id = identity(d);
        let ident_superop = sandwich_superop(&id, &id);
        add_drift_stencil(
            &mut gen,
            &lattice,
            &superop_field(len, |i| cl.m1[i].into(), &ident_superop),
        );
        add_diffusion_stencil(
            &mut gen,
            &lattice,
            &superop_field(len, |i| cl.m2[i].into(), &ident_superop),
        );
    }

    // Lindblad block from the zeroth operator-channel moments
    for (mu, ch) in moments.lindblad.iter().enumerate() {
        let dissipator = lindblad_superop(channels.basis.op(mu));
        for i in 0..len {
            if ch.m0[i] != 0.0 {
                gen.add_local(i, &dissipator.scale(ch.m0[i]));
            }
        }
    }

    match flavor {
        DiffusiveFlavor::Classical | DiffusiveFlavor::SecondThirdLimit => {}
        DiffusiveFlavor::SecondWithThird | DiffusiveFlavor::Coherent => {
            // operator-sandwiched transport V_mu { -d[G1 rho] + (1/2) d^2 [G2 rho] } V_mu†
            for (mu, ch) in moments.lindblad.iter().enumerate() {
                let v = channels.basis.op(mu);
                let sandwich = sandwich_superop(v, &dagger(v));
                add_drift_stencil(
                    &mut gen,
                    &lattice,
                    &superop_field(len, |i| ch.m1[i].into(), &sandwich),
                );
                add_diffusion_stencil(
                    &mut gen,
                    &lattice,
                    &superop_field(len, |i| ch.m2[i].into(), &sandwich),
                );
            }
        }
        DiffusiveFlavor::QuantumFokkerPlanck => unreachable!(),
    }

    if flavor == DiffusiveFlavor::Coherent {
        add_cross_terms(&mut gen, channels, &moments, true);
    }
    Ok(gen)
}

/// The quantum-Fokker-Planck generator: Lindblad block, classical
/// drift-diffusion, induced-Hamiltonian commutator, and single-derivative
/// coupling terms. The quadratic-velocity inequality is a hard
/// precondition here: it is exactly what guarantees positivity.
pub fn build_qfp_generator(channels: &DiffusiveChannels) -> Result<HybridGenerator, DiffusiveError> {
    channels.check()?;
    let moments = channels.moments();
    let Some(cl) = &moments.classical else {
        return Err(DiffusiveError::MissingClassicalChannel);
    };
    let lattice = channels.lattice;
    let len = lattice.len();

    // Lambda_0^mu != 0 and |Lambda_1^{mu I}|^2 / Lambda_0^mu <= Lambda_2^{II}
    for (mu, cross) in moments.cross.iter().enumerate() {
        let Some(cross) = cross else { continue };
        for i in 0..len {
            let site = lattice.site_at(i);
            if cross.m1[i].norm() == 0.0 {
                continue;
            }
            let lind0 = moments.lindblad[mu].m0[i];
            if lind0 <= 0.0 {
                return Err(DiffusiveError::ZeroLindbladMoment { site, channel: mu });
            }
            let slack = cl.m2[i] - cross.m1[i].norm_sqr() / lind0;
            if slack < -1e-12 * cl.m2[i].max(1.0) {
                return Err(DiffusiveError::CpViolation { site, slack });
            }
        }
    }

    let d = channels.basis.dim();
    let mut gen = HybridGenerator::new(d, lattice);
    gen.push_label("diffusive:QuantumFokkerPlanck");

    let id = identity(d);
    let ident_superop = sandwich_superop(&id, &id);
    add_drift_stencil(
        &mut gen,
        &lattice,
        &superop_field(len, |i| cl.m1[i].into(), &ident_superop),
    );
    add_diffusion_stencil(
        &mut gen,
        &lattice,
        &superop_field(len, |i| cl.m2[i].into(), &ident_superop),
    );
    for (mu, ch) in moments.lindblad.iter().enumerate() {
        let dissipator = lindblad_superop(channels.basis.op(mu));
        for i in 0..len {
            if ch.m0[i] != 0.0 {
                gen.add_local(i, &dissipator.scale(ch.m0[i]));
            }
        }
    }
    add_cross_terms(&mut gen, channels, &moments, false);
    Ok(gen)
}

/// The non-diagonal coupling terms. With `second_order` the full pair
/// `V_mu { -d[L1 rho] + (1/2) d^2 [L2 rho] }` plus conjugate is added;
/// without it only the single-derivative couplings of the
/// quantum-Fokker-Planck form are kept. The induced Hamiltonian commutator
/// comes along in both cases.
fn add_cross_terms(
    gen: &mut HybridGenerator,
    channels: &DiffusiveChannels,
    moments: &JumpMoments,
    second_order: bool,
) {
    let lattice = channels.lattice;
    let len = lattice.len();
    let cross0: Vec<Option<Vec<Complex64>>> = moments
        .cross
        .iter()
        .map(|c| c.as_ref().map(|c| c.m0.clone()))
        .collect();
    for i in 0..len {
        let h = induced_hamiltonian(&channels.basis, &cross0, i);
        if crate::linalg::max_abs(&h) > 0.0 {
            gen.add_local(i, &hamiltonian_superop(&h));
        }
    }
    for (mu, cross) in moments.cross.iter().enumerate() {
        let Some(cross) = cross else { continue };
        let v = channels.basis.op(mu);
        let left = left_superop(v);
        let right = right_superop(&dagger(v));
        add_drift_stencil(
            gen,
            &lattice,
            &superop_field(len, |i| cross.m1[i], &left),
        );
        add_drift_stencil(
            gen,
            &lattice,
            &superop_field(len, |i| cross.m1[i].conj(), &right),
        );
        if second_order {
            add_diffusion_stencil(
                gen,
                &lattice,
                &superop_field(len, |i| cross.m2[i], &left),
            );
            add_diffusion_stencil(
                gen,
                &lattice,
                &superop_field(len, |i| cross.m2[i].conj(), &right),
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Exact (pre-Taylor) coherent-coupling generator
// ---------------------------------------------------------------------------

/// The exact continuum coherent-coupling generator before any Taylor
/// expansion: Lindblad block with the zeroth operator moments, the
/// identity- and operator-channel convolutions, the induced-Hamiltonian
/// commutator and the cross-channel convolutions, all as discrete
/// convolutions over displacement.
pub fn build_fourth_exact_generator(
    channels: &DiffusiveChannels,
) -> Result<HybridGenerator, DiffusiveError> {
    channels.check()?;
    let lattice = channels.lattice;
    let len = lattice.len();
    let d = channels.basis.dim();
    let mut gen = HybridGenerator::new(d, lattice);
    gen.push_label("fourth-exact");

    // On the finite window every rate is paired with its jump: sites whose
    // destination falls outside lose the whole channel, so the zeroth
    // moments feeding the Lindblad block and the induced Hamiltonian are
    // accumulated over surviving displacements only (zero displacement
    // always survives).
    let truncated_m0 = |entries: &[(i64, SiteProfile<f64>)]| -> Vec<f64> {
        (0..len)
            .map(|i| {
                let site = lattice.site_at(i);
                entries
                    .iter()
                    .filter(|(k, _)| lattice.contains(site + k))
                    .map(|(_, v)| *v.at(i))
                    .sum()
            })
            .collect()
    };
    // Lindblad block Lambda_0^mu(q) (includes any zero-displacement rates)
    for (mu, t) in channels.lindblad.iter().enumerate() {
        let m0 = truncated_m0(&t.entries);
        let dissipator = lindblad_superop(channels.basis.op(mu));
        for (i, rate) in m0.iter().enumerate() {
            if *rate != 0.0 {
                gen.add_local(i, &dissipator.scale(*rate));
            }
        }
    }
    // induced Hamiltonian from the (truncated) zeroth cross moments
    let cross0: Vec<Option<Vec<Complex64>>> = channels
        .cross
        .iter()
        .map(|t| {
            t.as_ref().map(|t| {
                (0..len)
                    .map(|i| {
                        let site = lattice.site_at(i);
                        t.entries
                            .iter()
                            .filter(|(k, _)| lattice.contains(site + k))
                            .map(|(_, v)| *v.at(i))
                            .sum()
                    })
                    .collect()
            })
        })
        .collect();
    for i in 0..len {
        let h = induced_hamiltonian(&channels.basis, &cross0, i);
        if crate::linalg::max_abs(&h) > 0.0 {
            gen.add_local(i, &hamiltonian_superop(&h));
        }
    }

    let id = identity(d);
    // identity-channel convolution: gain rho(q - r), loss -Lambda_0^{II} rho(q)
    if let Some(t) = &channels.classical {
        let base = sandwich_superop(&id, &id);
        add_convolution(&mut gen, &lattice, &t.entries, &base, false);
    }
    // operator-channel convolution under V_mu { . } V_mu†
    for (mu, t) in channels.lindblad.iter().enumerate() {
        let v = channels.basis.op(mu);
        let base = sandwich_superop(v, &dagger(v));
        add_convolution(&mut gen, &lattice, &t.entries, &base, false);
    }
    // cross convolutions: V_mu-weighted gains with plain losses, and the
    // conjugate channel acting from the right
    for (mu, t) in channels.cross.iter().enumerate() {
        let Some(t) = t else { continue };
        let v = channels.basis.op(mu);
        let left = left_superop(v);
        let right = right_superop(&dagger(v));
        add_convolution_c(&mut gen, &lattice, &t.entries, &left, false);
        add_convolution_c(&mut gen, &lattice, &t.entries, &right, true);
    }
    Ok(gen)
}

/// Add `sum_r rate(r|q-r) S(rho(q-r)) - [sum_r rate(r|q)] S(rho(q))` as
/// paired hop channels; zero-displacement entries cancel identically and
/// are skipped.
fn add_convolution(
    gen: &mut HybridGenerator,
    lattice: &Lattice,
    entries: &[(i64, SiteProfile<f64>)],
    base: &CMatrix,
    _conjugate: bool,
) {
    let len = lattice.len();
    for (offset, profile) in entries {
        if *offset == 0 {
            continue;
        }
        let gains: Vec<CMatrix> = (0..len).map(|i| base.scale(*profile.at(i))).collect();
        gen.add_hop(*offset, gains.clone(), gains);
    }
}

fn add_convolution_c(
    gen: &mut HybridGenerator,
    lattice: &Lattice,
    entries: &[(i64, SiteProfile<Complex64>)],
    base: &CMatrix,
    conjugate: bool,
) {
    let len = lattice.len();
    for (offset, profile) in entries {
        if *offset == 0 {
            continue;
        }
        let gains: Vec<CMatrix> = (0..len)
            .map(|i| {
                let lam = if conjugate {
                    profile.at(i).conj()
                } else {
                    *profile.at(i)
                };
                base * lam
            })
            .collect();
        gen.add_hop(*offset, gains.clone(), gains);
    }
}
