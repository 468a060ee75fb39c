//! Density-matrix simulation of one qubit pair with a depolarizing CZ and
//! asymmetric readout flips.

use nalgebra::{Matrix2, Matrix4, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::circuit::NativeCircuit;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix4, CVector4};

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(pub CMatrix4);

impl DensityMatrix {
    /// `|00><00|`
    pub fn ground() -> Self {
        let mut m = CMatrix4::zeros();
        m[(0, 0)] = linalg::ONE;
        Self(m)
    }

    pub fn maximally_mixed() -> Self {
        Self(CMatrix4::identity() * Complex64::new(0.25, 0.0))
    }

    pub fn pure(v: &CVector4) -> Self {
        Self(v * v.adjoint())
    }

    /// Pure computational-basis state `|index>`.
    pub fn basis(index: usize) -> Self {
        let mut m = CMatrix4::zeros();
        m[(index, index)] = linalg::ONE;
        Self(m)
    }

    pub fn matrix(&self) -> &CMatrix4 {
        &self.0
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    pub fn conjugate(&self, u: &CMatrix4) -> Self {
        Self(u * self.0 * u.adjoint())
    }

    /// `ρ ↦ (1 − p) ρ + p I/4`.
    pub fn depolarize(&self, p: f64) -> Self {
        let tr = self.trace();
        Self(self.0 * Complex64::new(1.0 - p, 0.0) + CMatrix4::identity() * (tr * (p / 4.0)))
    }

    pub fn populations(&self) -> [f64; 4] {
        std::array::from_fn(|i| self.0[(i, i)].re)
    }

    pub fn eigenvalues(&self) -> [f64; 4] {
        let hermitian = (self.0 + self.0.adjoint()) * Complex64::new(0.5, 0.0);
        let ev = SymmetricEigen::new(hermitian).eigenvalues;
        let mut out = [ev[0], ev[1], ev[2], ev[3]];
        out.sort_by(f64::total_cmp);
        out
    }

    pub fn purity(&self) -> f64 {
        (self.0 * self.0).trace().re
    }

    /// Half the trace norm of the difference.
    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        let diff = DensityMatrix(self.0 - other.0);
        0.5 * diff.eigenvalues().iter().map(|x| x.abs()).sum::<f64>()
    }

    /// Hermitian, unit trace and positive semidefinite, each within `tol`.
    pub fn check(&self, tol: f64) -> Result<()> {
        let herm = linalg::max_abs_diff(&self.0, &self.0.adjoint());
        if herm > tol {
            return Err(Error::InvalidParameter(format!("density matrix not Hermitian ({herm:e})")));
        }
        let tr = self.trace();
        if (tr - linalg::ONE).norm() > tol {
            return Err(Error::InvalidParameter(format!("density matrix trace {tr}")));
        }
        let min = self.eigenvalues()[0];
        if min < -tol {
            return Err(Error::InvalidParameter(format!("density matrix eigenvalue {min:e}")));
        }
        Ok(())
    }
}

/// Per-qubit readout flip rates: `eps01 = P(read 1 | prepared 0)`,
/// `eps10 = P(read 0 | prepared 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReadoutRates {
    pub eps01: f64,
    pub eps10: f64,
}

impl ReadoutRates {
    pub fn new(eps01: f64, eps10: f64) -> Result<Self> {
        for (name, e) in [("eps01", eps01), ("eps10", eps10)] {
            if !(0.0..0.5).contains(&e) {
                return Err(Error::InvalidParameter(format!("{name} = {e} outside [0, 0.5)")));
            }
        }
        Ok(Self { eps01, eps10 })
    }

    /// Column-stochastic single-qubit confusion matrix, column = prepared bit.
    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(1.0 - self.eps01, self.eps10, self.eps01, 1.0 - self.eps10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairNoiseSpec {
    pub cz_fidelity: f64,
    pub depol_p: f64,
    /// Readout rates of (qubit 0, qubit 1) of the pair.
    pub readout: [ReadoutRates; 2],
    pub crosstalk_p: f64,
}

impl PairNoiseSpec {
    pub fn new(cz_fidelity: f64, readout: [ReadoutRates; 2], crosstalk_p: f64) -> Result<Self> {
        let depol_p = fidelity_to_depolarizing(cz_fidelity)?;
        for r in &readout {
            ReadoutRates::new(r.eps01, r.eps10)?;
        }
        if !(0.0..=1.0).contains(&crosstalk_p) {
            return Err(Error::InvalidParameter(format!("crosstalk_p = {crosstalk_p} outside [0, 1]")));
        }
        Ok(Self {
            cz_fidelity,
            depol_p,
            readout,
            crosstalk_p,
        })
    }

    pub fn noiseless() -> Self {
        Self {
            cz_fidelity: 1.0,
            depol_p: 0.0,
            readout: [ReadoutRates::default(); 2],
            crosstalk_p: 0.0,
        }
    }

    /// Readout confusion of the pair, `(q0 ⊗ q1)`, column = prepared bitstring.
    pub fn confusion(&self) -> Matrix4<f64> {
        linalg::kron(&self.readout[0].matrix(), &self.readout[1].matrix())
    }
}

/// Depolarizing probability whose two-qubit channel has average gate
/// fidelity `f`: `p = 4(1 − f)/3`, clamped to 1.
pub fn fidelity_to_depolarizing(f: f64) -> Result<f64> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::InvalidParameter(format!("CZ fidelity {f} outside (0, 1]")));
    }
    Ok((4.0 * (1.0 - f) / 3.0).min(1.0))
}

/// Simulates the circuit from `|00>`. `crosstalk_active` adds the pair's
/// extra depolarizing event when a neighboring pair runs simultaneously.
pub fn run_circuit(c: &NativeCircuit, n: &PairNoiseSpec, crosstalk_active: bool) -> DensityMatrix {
    let mut rho = DensityMatrix::ground();
    for g in c.gates() {
        rho = rho.conjugate(&g.matrix());
        if g.is_entangling() {
            if n.depol_p > 0.0 {
                rho = rho.depolarize(n.depol_p);
            }
            if crosstalk_active && n.crosstalk_p > 0.0 {
                rho = rho.depolarize(n.crosstalk_p);
            }
        }
    }
    rho
}

/// Outcome probabilities after readout, index `2*b0 + b1`.
pub fn exact_distribution(rho: &DensityMatrix, n: &PairNoiseSpec) -> [f64; 4] {
    let pops = nalgebra::Vector4::from(rho.populations());
    let measured = n.confusion() * pops;
    std::array::from_fn(|i| measured[i])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotHistogram {
    pub counts: [u64; 4],
    pub shots: u64,
}

impl ShotHistogram {
    pub fn new(counts: [u64; 4]) -> Result<Self> {
        let shots: u64 = counts.iter().sum();
        if shots == 0 {
            return Err(Error::InvalidParameter("histogram without shots".into()));
        }
        Ok(Self { counts, shots })
    }

    pub fn frequencies(&self) -> [f64; 4] {
        std::array::from_fn(|i| self.counts[i] as f64 / self.shots as f64)
    }
}

/// Multinomial draw of `shots` outcomes from `probs` (tiny negative
/// round-off is treated as zero).
pub fn sample_distribution<R: Rng + ?Sized>(probs: &[f64; 4], shots: u64, rng: &mut R) -> Result<ShotHistogram> {
    if shots == 0 {
        return Err(Error::InvalidParameter("shots must be at least 1".into()));
    }
    let clean: [f64; 4] = std::array::from_fn(|i| probs[i].max(0.0));
    let mut remaining_mass: f64 = clean.iter().sum();
    let mut remaining = shots;
    let mut counts = [0u64; 4];
    for i in 0..3 {
        if remaining == 0 || remaining_mass <= 0.0 {
            break;
        }
        let q = (clean[i] / remaining_mass).clamp(0.0, 1.0);
        let k = Binomial::new(remaining, q)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .sample(rng);
        counts[i] = k;
        remaining -= k;
        remaining_mass -= clean[i];
    }
    counts[3] += remaining;
    ShotHistogram::new(counts)
}

pub fn sample_shots<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    n: &PairNoiseSpec,
    shots: u64,
    rng: &mut R,
) -> Result<ShotHistogram> {
    sample_distribution(&exact_distribution(rho, n), shots, rng)
}

/// Total-variation distance between two distributions.
pub fn tv_distance(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
