//! Readout noise inversion (NI) and TFLO energy correction.

use nalgebra::{Matrix4, Vector4};
use rand::Rng;

use crate::error::{Error, Result};
use crate::hubbard::{exact_energy, AnsatzParams, HubbardParams};
use crate::sim::{sample_distribution, PairNoiseSpec, ShotHistogram};

/// Confusion matrices with a larger condition number are rejected.
pub const MAX_CONDITION: f64 = 100.0;

/// Column-stochastic readout confusion `N[i][j] = P(read i | prepared j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    matrix: Matrix4<f64>,
    inverse: Matrix4<f64>,
    pub shots_used: u64,
}

impl ConfusionMatrix {
    pub fn new(matrix: Matrix4<f64>, shots_used: u64) -> Result<Self> {
        for j in 0..4 {
            let col = matrix.column(j);
            if col.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::InvalidParameter(format!("confusion column {j} has entries outside [0, 1]")));
            }
            if (col.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!("confusion column {j} sums to {}", col.sum())));
            }
        }
        let cond = condition_number(&matrix);
        if !(cond <= MAX_CONDITION) {
            return Err(Error::IllConditioned(cond));
        }
        let inverse = matrix.try_inverse().ok_or(Error::IllConditioned(f64::INFINITY))?;
        Ok(Self {
            matrix,
            inverse,
            shots_used,
        })
    }

    /// Confusion implied by the noise model itself (infinite shots).
    pub fn exact(noise: &PairNoiseSpec) -> Result<Self> {
        Self::new(noise.confusion(), 0)
    }

    pub fn identity() -> Self {
        Self::new(Matrix4::identity(), 0).expect("identity is well conditioned")
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &Matrix4<f64> {
        &self.inverse
    }

    pub fn condition_number(&self) -> f64 {
        condition_number(&self.matrix)
    }

    /// Row-major 4×4 array.
    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.matrix[(i, j)]))
    }

    pub fn from_rows(rows: [[f64; 4]; 4], shots_used: u64) -> Result<Self> {
        Self::new(Matrix4::from_fn(|i, j| rows[i][j]), shots_used)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.to_rows()).expect("array serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let rows: [[f64; 4]; 4] = serde_json::from_str(text)?;
        Self::from_rows(rows, 0)
    }
}

fn condition_number(m: &Matrix4<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Estimates each column by preparing `|j>` (ideally) and sampling `shots`
/// readouts through the pair's readout model.
pub fn measure_confusion<R: Rng + ?Sized>(noise: &PairNoiseSpec, shots: u64, rng: &mut R) -> Result<ConfusionMatrix> {
    let exact = noise.confusion();
    let mut m = Matrix4::zeros();
    for j in 0..4 {
        let probs: [f64; 4] = std::array::from_fn(|i| exact[(i, j)]);
        let freqs = sample_distribution(&probs, shots, rng)?.frequencies();
        for (i, f) in freqs.iter().enumerate() {
            m[(i, j)] = *f;
        }
    }
    ConfusionMatrix::new(m, shots)
}

/// `N⁻¹ d̃`; negative quasi-probabilities are kept.
pub fn invert_distribution(measured: &[f64; 4], n: &ConfusionMatrix) -> [f64; 4] {
    let d = n.inverse * Vector4::from(*measured);
    std::array::from_fn(|i| d[i])
}

pub fn invert_readout(hist: &ShotHistogram, n: &ConfusionMatrix) -> [f64; 4] {
    invert_distribution(&hist.frequencies(), n)
}

/// `Ẽ + E_ref − Ẽ_ref`.
pub fn tflo_correct(e_tilde: f64, e_ref_exact: f64, e_ref_measured: f64) -> f64 {
    e_tilde + e_ref_exact - e_ref_measured
}

/// Exact energy of the φ = 0 reference circuit at the same θ.
pub fn tflo_reference_exact(a: &AnsatzParams, h: &HubbardParams) -> f64 {
    exact_energy(&a.tflo_reference(), h)
}
