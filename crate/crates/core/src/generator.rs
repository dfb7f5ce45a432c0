//! Compiled hybrid generators: linear maps from a hybrid state to its time
//! derivative, stored as per-site stencils (sparse over sites, dense over
//! the d^2-dimensional operator space).

use crate::linalg::{identity, trace, unvectorize, vectorize};
use crate::state::{HybridState, Lattice};
use crate::CMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("dimension mismatch: generator is d={expected}, state is d={got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("lattice mismatch between generator and state")]
    LatticeMismatch,
}

/// One hop channel: `gain[src]` applied to `rho_src` contributes to the
/// site `src + offset`. Sources whose destination falls outside the window
/// hold an empty slot; their matching loss is absent as well.
#[derive(Debug)]
struct HopStencil {
    offset: i64,
    gain: Vec<Option<CMatrix>>,
}

/// Linear superoperator on hybrid states. Immutable once built; application
/// is a pure function, safe for concurrent use.
#[derive(Debug)]
pub struct HybridGenerator {
    d: usize,
    lattice: Lattice,
    /// Site-local superoperators (d^2 x d^2), including every loss term
    /// whose paired gain stays inside the window.
    local: Vec<CMatrix>,
    hops: Vec<HopStencil>,
    /// Human-readable tags of the contributing mechanisms.
    labels: Vec<String>,
}

impl HybridGenerator {
    pub fn new(d: usize, lattice: Lattice) -> Self {
        let dim = d * d;
        Self {
            d,
            lattice,
            local: vec![CMatrix::zeros(dim, dim); lattice.len()],
            hops: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn push_label(&mut self, label: impl Into<String>) {
        self.labels.push(label.into());
    }

    /// Add a site-local superoperator contribution.
    pub fn add_local(&mut self, site_index: usize, superop: &CMatrix) {
        self.local[site_index] += superop;
    }

    /// Add a hop channel with per-source gain and loss superoperators.
    /// Where `src + offset` leaves the window both members of the pair are
    /// dropped, which keeps the generator exactly trace-free.
    pub fn add_hop(
        &mut self,
        offset: i64,
        gain: Vec<CMatrix>,
        loss: Vec<CMatrix>,
    ) {
        assert_eq!(gain.len(), self.lattice.len());
        assert_eq!(loss.len(), self.lattice.len());
        let mut slots: Vec<Option<CMatrix>> = vec![None; self.lattice.len()];
        for (idx, (g, l)) in gain.into_iter().zip(loss).enumerate() {
            let src = self.lattice.site_at(idx);
            if self.lattice.contains(src + offset) {
                slots[idx] = Some(g);
                self.local[idx] -= &l;
            }
        }
        self.hops.push(HopStencil {
            offset,
            gain: slots,
        });
    }

    /// Merge another generator (same lattice and dimension) into this one.
    pub fn merge(&mut self, other: HybridGenerator) {
        assert_eq!(self.d, other.d);
        assert_eq!(self.lattice, other.lattice);
        for (mine, theirs) in self.local.iter_mut().zip(other.local) {
            *mine += theirs;
        }
        self.hops.extend(other.hops);
        self.labels.extend(other.labels);
    }

    /// Apply the generator, producing the derivative field (trace-free;
    /// not itself a state).
    pub fn apply(&self, state: &HybridState) -> Result<HybridState, GeneratorError> {
        if state.dim() != self.d {
            return Err(GeneratorError::DimensionMismatch {
                expected: self.d,
                got: state.dim(),
            });
        }
        if *state.lattice() != self.lattice {
            return Err(GeneratorError::LatticeMismatch);
        }
        let len = self.lattice.len();
        let mut out = vec![CMatrix::zeros(self.d, self.d); len];
        let vecs: Vec<_> = state.matrices().iter().map(vectorize).collect();
        for idx in 0..len {
            let dv = &self.local[idx] * &vecs[idx];
            out[idx] += unvectorize(&dv, self.d);
        }
        for hop in &self.hops {
            for (idx, slot) in hop.gain.iter().enumerate() {
                if let Some(g) = slot {
                    let dest = (idx as i64 + hop.offset) as usize;
                    let dv = g * &vecs[idx];
                    out[dest] += unvectorize(&dv, self.d);
                }
            }
        }
        Ok(HybridState::from_parts(
            self.lattice,
            self.d,
            out,
            state.time(),
        ))
    }

    /// Largest per-site classical outflow rate `|d/dt Tr rho_n|` probed
    /// with unit mass `I/d` at each site in turn; the step-size heuristic
    /// divides into this.
    pub fn max_outflow_rate(&self) -> f64 {
        let probe = vectorize(&identity(self.d).scale(1.0 / self.d as f64));
        self.local
            .iter()
            .map(|s| {
                let dv = s * &probe;
                trace(&unvectorize(&dv, self.d)).re.abs()
            })
            .fold(0.0, f64::max)
    }

    /// Infinity-norm bound on the per-site dynamics, a conservative
    /// stability rate when the classical outflow vanishes (purely local
    /// mechanisms still dephase at a finite rate).
    pub fn stiffness_bound(&self) -> f64 {
        let row_sum = |m: &CMatrix| {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)].norm()).sum::<f64>())
                .fold(0.0, f64::max)
        };
        let mut worst: f64 = 0.0;
        for (idx, local) in self.local.iter().enumerate() {
            let mut rate = row_sum(local);
            for hop in &self.hops {
                if let Some(g) = &hop.gain[idx] {
                    rate += row_sum(g);
                }
            }
            worst = worst.max(rate);
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cr, left_superop, max_abs, pauli_z, right_superop, sandwich_superop};
    use crate::state::plus_x_state;

    fn lattice() -> Lattice {
        Lattice::symmetric(4, 1.0).unwrap()
    }

    /// Symmetric nearest-neighbor hopping at rate phi, built by hand.
    fn hopping(phi: f64) -> HybridGenerator {
        let lat = lattice();
        let mut gen = HybridGenerator::new(2, lat);
        let id = identity(2);
        let gain = sandwich_superop(&id, &id).scale(phi);
        let loss = (left_superop(&id) + right_superop(&id)).scale(0.5 * phi);
        for offset in [-1i64, 1] {
            gen.add_hop(
                offset,
                vec![gain.clone(); lat.len()],
                vec![loss.clone(); lat.len()],
            );
        }
        gen
    }

    #[test]
    fn hop_matches_hand_expansion() {
        let gen = hopping(0.7);
        let state = HybridState::localized(2, &plus_x_state(), 0, lattice()).unwrap();
        let deriv = gen.apply(&state).unwrap();
        // d rho_0/dt = -2 phi rho_0, d rho_{+-1}/dt = + phi rho_0
        assert!(max_abs(&(deriv.site(0) + plus_x_state().scale(1.4))) < 1e-14);
        assert!(max_abs(&(deriv.site(1) - plus_x_state().scale(0.7))) < 1e-14);
        assert!(max_abs(&(deriv.site(-1) - plus_x_state().scale(0.7))) < 1e-14);
        assert!(max_abs(deriv.site(2)) < 1e-16);
    }

    #[test]
    fn trace_free_even_at_edges() {
        let gen = hopping(1.3);
        let edge = HybridState::localized(2, &plus_x_state(), 4, lattice()).unwrap();
        let deriv = gen.apply(&edge).unwrap();
        let total: f64 = deriv.matrices().iter().map(|m| trace(m).re).sum();
        assert!(total.abs() < 1e-14);
    }

    #[test]
    fn linearity() {
        let gen = hopping(0.9);
        let a = HybridState::localized(2, &plus_x_state(), 0, lattice()).unwrap();
        let b = HybridState::gaussian(2, &plus_x_state(), 0.5, 0.5, lattice()).unwrap();
        let mut combo = HybridState::zero(2, lattice());
        for (idx, m) in combo.matrices_mut().iter_mut().enumerate() {
            *m = a.matrices()[idx].scale(0.3) + b.matrices()[idx].scale(0.7);
        }
        let direct = gen.apply(&combo).unwrap();
        let da = gen.apply(&a).unwrap();
        let db = gen.apply(&b).unwrap();
        for idx in 0..lattice().len() {
            let want = da.matrices()[idx].scale(0.3) + db.matrices()[idx].scale(0.7);
            assert!(max_abs(&(direct.matrices()[idx].clone() - want)) < 1e-13);
        }
    }

    #[test]
    fn outflow_rate_of_hopping() {
        let gen = hopping(0.7);
        // interior sites lose at 2 phi
        assert!((gen.max_outflow_rate() - 1.4).abs() < 1e-12);
    }

    #[test]
    fn local_term_accumulates() {
        let lat = lattice();
        let mut gen = HybridGenerator::new(2, lat);
        let sz = pauli_z();
        let dephase = sandwich_superop(&sz, &sz) - sandwich_superop(&identity(2), &identity(2));
        gen.add_local(lat.index_of(0).unwrap(), &dephase.scale(2.0));
        let state = HybridState::localized(2, &plus_x_state(), 0, lat).unwrap();
        let deriv = gen.apply(&state).unwrap();
        // 2(sz rho sz - rho) flips coherences: -4 c on the off-diagonal
        assert!((deriv.site(0)[(0, 1)].re + 2.0).abs() < 1e-14);
        assert!((deriv.site(0)[(0, 0)].norm()) < 1e-14);
        assert_eq!(gen.apply(&state).unwrap().site(1)[(0, 0)], cr(0.0));
    }
}
