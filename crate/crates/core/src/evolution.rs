//! Fixed-step fourth-order time integration of hybrid generators, with
//! conservation monitoring and boundary-leak detection.
//!
//! Lattice edges are open: no-flux terms are simply absent from the
//! generator, so correctness near the boundary is the leak monitor's job,
//! not a boundary condition's.

use crate::generator::{GeneratorError, HybridGenerator};
use crate::state::HybridState;
use crate::CMatrix;
use thiserror::Error;

/// Sites counted as "near the edge" by the leak monitor.
pub const EDGE_MARGIN: usize = 3;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("invalid integration plan: {reason}")]
    BadPlan { reason: String },
    #[error("step size {dt} violates the stability bound: dt * outflow rate {rate} > 0.05")]
    StabilityBound { dt: f64, rate: f64 },
    #[error("boundary leak at t = {t:.6}: mass {mass:.3e} within {EDGE_MARGIN} sites of the edge exceeds {tol:.0e}; enlarge the window")]
    BoundaryLeak { t: f64, mass: f64, tol: f64 },
    #[error("numerical instability at t = {t:.6} (non-finite values); reduce the step size")]
    Instability { t: f64 },
    #[error("trace conservation lost at t = {t:.6}: drift {drift:.3e}")]
    ConservationDrift { t: f64, drift: f64 },
}

/// Fixed-step plan. The step must satisfy
/// `dt * max_outflow_rate <= 0.05`, checked against the generator at run
/// time.
#[derive(Debug, Clone, Copy)]
pub struct IntegrationPlan {
    pub dt: f64,
    pub t_end: f64,
    /// Store every `snapshot_stride`-th step (the initial and final states
    /// are always stored).
    pub snapshot_stride: usize,
    /// Largest probability tolerated near the lattice edges.
    pub leak_tol: f64,
}

impl IntegrationPlan {
    pub const DEFAULT_LEAK_TOL: f64 = 1e-8;

    pub fn new(
        dt: f64,
        t_end: f64,
        snapshot_stride: usize,
        leak_tol: f64,
    ) -> Result<Self, EvolutionError> {
        if !(dt > 0.0) || !(t_end > 0.0) || snapshot_stride == 0 {
            return Err(EvolutionError::BadPlan {
                reason: format!(
                    "need dt > 0, t_end > 0, snapshot_stride >= 1 (got {dt}, {t_end}, {snapshot_stride})"
                ),
            });
        }
        Ok(Self {
            dt,
            t_end,
            snapshot_stride,
            leak_tol,
        })
    }

    /// Plan with `dt = 0.05 / rate`, where the rate is the generator's
    /// largest per-site classical outflow (or its stiffness bound for
    /// purely site-local dynamics, which move no probability).
    pub fn auto(gen: &HybridGenerator, t_end: f64) -> Result<Self, EvolutionError> {
        let mut rate = gen.max_outflow_rate();
        if rate <= 0.0 {
            rate = gen.stiffness_bound();
        }
        let dt = if rate > 0.0 { 0.05 / rate } else { t_end / 100.0 };
        Self::new(dt, t_end, 1, Self::DEFAULT_LEAK_TOL)
    }
}

/// Time-ordered sequence of hybrid-state snapshots. Observables are
/// computed on demand from the stored states.
#[derive(Debug, Clone)]
pub struct Trajectory {
    snapshots: Vec<HybridState>,
}

impl Trajectory {
    pub fn from_snapshots(snapshots: Vec<HybridState>) -> Result<Self, EvolutionError> {
        if snapshots.is_empty() {
            return Err(EvolutionError::BadPlan {
                reason: "a trajectory needs at least one snapshot".into(),
            });
        }
        for pair in snapshots.windows(2) {
            if pair[1].time() <= pair[0].time() {
                return Err(EvolutionError::BadPlan {
                    reason: "snapshot times must be strictly increasing".into(),
                });
            }
        }
        Ok(Self { snapshots })
    }

    pub fn snapshots(&self) -> &[HybridState] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time()).collect()
    }

    pub fn initial(&self) -> &HybridState {
        &self.snapshots[0]
    }

    pub fn final_state(&self) -> &HybridState {
        self.snapshots.last().unwrap()
    }

    /// Sub-trajectory of the snapshots nearest to the requested times
    /// (duplicates collapse).
    pub fn select_times(&self, times: &[f64]) -> Result<Trajectory, EvolutionError> {
        let mut picked: Vec<HybridState> = Vec::with_capacity(times.len());
        for &t in times {
            let snap = self.nearest(t).clone();
            if picked
                .last()
                .map_or(true, |prev: &HybridState| snap.time() > prev.time())
            {
                picked.push(snap);
            }
        }
        Trajectory::from_snapshots(picked)
    }

    /// Snapshot nearest to time `t`.
    pub fn nearest(&self, t: f64) -> &HybridState {
        self.snapshots
            .iter()
            .min_by(|a, b| {
                (a.time() - t)
                    .abs()
                    .partial_cmp(&(b.time() - t).abs())
                    .unwrap()
            })
            .unwrap()
    }
}

/// The generator's action, `d(state)/dt`; linear, trace-free and
/// Hermiticity preserving.
pub fn apply_generator(
    gen: &HybridGenerator,
    state: &HybridState,
) -> Result<HybridState, GeneratorError> {
    gen.apply(state)
}

/// Classical fourth-order fixed-step integration with trace, Hermiticity
/// and boundary-leak monitoring at every stored snapshot. The final time
/// is reached exactly with a shortened last step when needed.
pub fn integrate(
    gen: &HybridGenerator,
    state0: &HybridState,
    plan: &IntegrationPlan,
) -> Result<Trajectory, EvolutionError> {
    let outflow = gen.max_outflow_rate();
    if plan.dt * outflow > 0.05 * (1.0 + 1e-9) {
        return Err(EvolutionError::StabilityBound {
            dt: plan.dt,
            rate: outflow,
        });
    }
    let mut field: Vec<CMatrix> = state0.matrices().to_vec();
    let lattice = *state0.lattice();
    let d = state0.dim();
    let mut t = state0.time();
    let t_final = state0.time() + plan.t_end;
    let mut snapshots = vec![state0.clone()];
    check_snapshot(&snapshots[0], plan)?;

    let mut step_index = 0usize;
    while t < t_final - 1e-12 * plan.t_end.max(1.0) {
        let dt = plan.dt.min(t_final - t);
        let current = HybridState::from_parts(lattice, d, field.clone(), t);
        let k1 = gen.apply(&current)?;
        let k2 = gen.apply(&shifted(&current, &k1, dt / 2.0))?;
        let k3 = gen.apply(&shifted(&current, &k2, dt / 2.0))?;
        let k4 = gen.apply(&shifted(&current, &k3, dt))?;
        for (idx, m) in field.iter_mut().enumerate() {
            let incr = (k1.matrices()[idx].clone()
                + k2.matrices()[idx].scale(2.0)
                + k3.matrices()[idx].scale(2.0)
                + k4.matrices()[idx].clone())
            .scale(dt / 6.0);
            *m += incr;
        }
        t += dt;
        step_index += 1;
        let at_end = t >= t_final - 1e-12 * plan.t_end.max(1.0);
        if step_index.is_multiple_of(plan.snapshot_stride) || at_end {
            let snap = HybridState::from_parts(lattice, d, field.clone(), t);
            check_snapshot(&snap, plan)?;
            snapshots.push(snap);
        }
    }
    Trajectory::from_snapshots(snapshots)
}

fn shifted(base: &HybridState, slope: &HybridState, dt: f64) -> HybridState {
    let field: Vec<CMatrix> = base
        .matrices()
        .iter()
        .zip(slope.matrices())
        .map(|(m, k)| m + k.scale(dt))
        .collect();
    HybridState::from_parts(*base.lattice(), base.dim(), field, base.time())
}

fn check_snapshot(snap: &HybridState, plan: &IntegrationPlan) -> Result<(), EvolutionError> {
    let total = snap.total_trace();
    if !total.is_finite()
        || snap
            .matrices()
            .iter()
            .any(|m| m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()))
    {
        return Err(EvolutionError::Instability { t: snap.time() });
    }
    let drift = (total - 1.0).abs();
    if drift > 1e-9 {
        return Err(EvolutionError::ConservationDrift {
            t: snap.time(),
            drift,
        });
    }
    let leak = snap.edge_mass(EDGE_MARGIN);
    if leak > plan.leak_tol {
        return Err(EvolutionError::BoundaryLeak {
            t: snap.time(),
            mass: leak,
            tol: plan.leak_tol,
        });
    }
    Ok(())
}
