//! Exact model of the compressed two-site Hubbard problem.
//!
//! Everything here is noiseless and exact; the other modules are checked
//! against it.

use nalgebra::{Matrix4, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CVector4};

/// Model constants: tunnelling amplitude `t` and Coulomb potential `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HubbardParams {
    pub t: f64,
    pub u: f64,
}

impl HubbardParams {
    pub fn new(t: f64, u: f64) -> Result<Self> {
        if !(t.is_finite() && u.is_finite()) || t < 0.0 || u < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "hubbard params need t >= 0 and U >= 0, got t={t}, U={u}"
            )));
        }
        Ok(Self { t, u })
    }
}

impl Default for HubbardParams {
    fn default() -> Self {
        Self { t: 1.0, u: 2.0 }
    }
}

/// Variational angles of one ansatz layer: `phi` for the onsite evolution,
/// `theta` for the hopping evolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnsatzParams {
    pub phi: f64,
    pub theta: f64,
}

impl AnsatzParams {
    pub const fn new(phi: f64, theta: f64) -> Self {
        Self { phi, theta }
    }

    pub fn is_finite(&self) -> bool {
        self.phi.is_finite() && self.theta.is_finite()
    }

    /// The TFLO reference point: same hopping angle, onsite evolution removed.
    pub fn tflo_reference(&self) -> Self {
        Self::new(0.0, self.theta)
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.phi, self.theta]
    }

    pub fn from_array(x: [f64; 2]) -> Self {
        Self::new(x[0], x[1])
    }
}

/// Normalized two-qubit pure state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(pub CVector4);

impl StateVector {
    pub fn amplitudes(&self) -> &CVector4 {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// `|<self|other>|^2`, insensitive to global phase.
    pub fn fidelity(&self, other: &StateVector) -> f64 {
        self.0.dotc(&other.0).norm_sqr()
    }

    /// Computational-basis probabilities, index `2*b0 + b1`.
    pub fn probabilities(&self) -> [f64; 4] {
        std::array::from_fn(|i| self.0[i].norm_sqr())
    }

    pub fn expectation(&self, observable: &Matrix4<f64>) -> f64 {
        linalg::expectation(&self.0, observable)
    }
}

/// The compressed Hamiltonian together with its hopping and onsite parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Hamiltonian2 {
    pub matrix: Matrix4<f64>,
    pub hop_part: Matrix4<f64>,
    pub os_part: Matrix4<f64>,
}

/// `X⊗I + I⊗X`.
pub fn hopping_operator() -> Matrix4<f64> {
    let id = nalgebra::Matrix2::identity();
    linalg::kron(&linalg::pauli_x(), &id) + linalg::kron(&id, &linalg::pauli_x())
}

/// `Z⊗Z`.
pub fn zz_operator() -> Matrix4<f64> {
    linalg::kron(&linalg::pauli_z(), &linalg::pauli_z())
}

pub fn hamiltonian(params: &HubbardParams) -> Hamiltonian2 {
    let hop_part = hopping_operator() * (-params.t);
    let os_part = (Matrix4::identity() + zz_operator()) * (params.u / 2.0);
    Hamiltonian2 {
        matrix: hop_part + os_part,
        hop_part,
        os_part,
    }
}

/// Uniform superposition `|++>`, the ground state of the hopping term.
pub fn initial_state() -> StateVector {
    StateVector(CVector4::repeat(Complex64::new(0.5, 0.0)))
}

/// `exp(i θ H_hop) exp(i φ H_os) |ψ0>`.
pub fn ideal_state(a: &AnsatzParams, h: &HubbardParams) -> StateVector {
    let ham = hamiltonian(h);
    let onsite = linalg::exp_i_symmetric(&ham.os_part, a.phi);
    let hop = linalg::exp_i_symmetric(&ham.hop_part, a.theta);
    StateVector(hop * onsite * initial_state().0)
}

pub fn exact_energy(a: &AnsatzParams, h: &HubbardParams) -> f64 {
    ideal_state(a, h).expectation(&hamiltonian(h).matrix)
}

/// Closed form of [`exact_energy`] at the default model `t = 1, U = 2`:
/// `E(φ, θ) = 1 − 2 cos 2φ − sin 2φ · sin 4θ`.
pub fn default_energy_closed_form(a: &AnsatzParams) -> f64 {
    1.0 - 2.0 * (2.0 * a.phi).cos() - (2.0 * a.phi).sin() * (4.0 * a.theta).sin()
}

pub fn exact_ground_energy(h: &HubbardParams) -> f64 {
    SymmetricEigen::new(hamiltonian(h).matrix)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `n` cell-centred sample points covering `[-π, π)`.
pub fn landscape_axis(n: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    let step = 2.0 * PI / n as f64;
    (0..n).map(|i| -PI + (i as f64 + 0.5) * step).collect()
}

/// Ansatz angles minimizing [`exact_energy`], found by a grid scan over
/// `[-π, π]²` followed by a shrinking pattern search.
pub fn optimal_params(h: &HubbardParams) -> AnsatzParams {
    use std::f64::consts::PI;
    let n = 64;
    let step = 2.0 * PI / n as f64;
    let mut best = AnsatzParams::new(0.0, 0.0);
    let mut best_e = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            let a = AnsatzParams::new(-PI + i as f64 * step, -PI + j as f64 * step);
            let e = exact_energy(&a, h);
            // strict comparison keeps the first grid minimum
            if e < best_e {
                best_e = e;
                best = a;
            }
        }
    }
    let mut radius = step;
    while radius > 1e-13 {
        let mut improved = false;
        for (dp, dt) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)] {
            let a = AnsatzParams::new(best.phi + dp * radius, best.theta + dt * radius);
            let e = exact_energy(&a, h);
            if e < best_e {
                best_e = e;
                best = a;
                improved = true;
            }
        }
        if !improved {
            radius *= 0.5;
        }
    }
    best
}
