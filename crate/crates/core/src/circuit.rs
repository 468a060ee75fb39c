//! The compiled native-gate circuit: state preparation, one ansatz layer and
//! a basis change for either measurement setting.
//!
//! The gate layout uses circuit angles `U·φ` and `2t·θ`, the rotation angles
//! that realize `exp(iθ H_hop) exp(iφ H_os)` for the general model.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hubbard::{AnsatzParams, HubbardParams};
use crate::linalg::{self, CMatrix2, CMatrix4, I, ONE, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementSetting {
    /// Computational basis; yields `<Z⊗Z>`.
    Onsite,
    /// X basis; yields `<X⊗I>` and `<I⊗X>`.
    Hopping,
}

impl MeasurementSetting {
    pub const ALL: [MeasurementSetting; 2] = [MeasurementSetting::Onsite, MeasurementSetting::Hopping];

    /// Bit-to-eigenvalue signs: measured bit `b` on qubit `i` maps to
    /// `signs[i] * (1 - 2b)`. Frozen by matching noiseless simulation of the
    /// compiled circuits against the exact model.
    pub const fn signs(self) -> [f64; 2] {
        match self {
            MeasurementSetting::Onsite => [1.0, -1.0],
            MeasurementSetting::Hopping => [1.0, 1.0],
        }
    }

    pub fn index(self) -> usize {
        match self {
            MeasurementSetting::Onsite => 0,
            MeasurementSetting::Hopping => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MeasurementSetting::Onsite => "onsite",
            MeasurementSetting::Hopping => "hopping",
        }
    }
}

impl fmt::Display for MeasurementSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NativeGate {
    Rx { qubit: u8, angle: f64 },
    Rz { qubit: u8, angle: f64 },
    Cz { a: u8, b: u8 },
}

impl NativeGate {
    fn validate(&self) -> Result<()> {
        match *self {
            NativeGate::Rx { qubit, angle } => {
                check_qubit(qubit)?;
                let quarter_turns = angle / FRAC_PI_2;
                if !angle.is_finite() || (quarter_turns - quarter_turns.round()).abs() > 1e-9 {
                    return Err(Error::MalformedCircuit(format!(
                        "RX angle {angle} is not a multiple of pi/2"
                    )));
                }
                Ok(())
            }
            NativeGate::Rz { qubit, angle } => {
                check_qubit(qubit)?;
                if !angle.is_finite() {
                    return Err(Error::MalformedCircuit(format!("RZ angle {angle} is not finite")));
                }
                Ok(())
            }
            NativeGate::Cz { a, b } => {
                check_qubit(a)?;
                check_qubit(b)?;
                if a == b {
                    return Err(Error::MalformedCircuit(format!("CZ targets coincide ({a})")));
                }
                Ok(())
            }
        }
    }

    /// Unitary on the two-qubit register.
    pub fn matrix(&self) -> CMatrix4 {
        match *self {
            NativeGate::Rx { qubit, angle } => on_qubit(qubit, &rx(angle)),
            NativeGate::Rz { qubit, angle } => on_qubit(qubit, &rz(angle)),
            NativeGate::Cz { .. } => {
                CMatrix4::from_diagonal(&nalgebra::Vector4::new(ONE, ONE, ONE, -ONE))
            }
        }
    }

    pub fn is_entangling(&self) -> bool {
        matches!(self, NativeGate::Cz { .. })
    }
}

impl fmt::Display for NativeGate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NativeGate::Rx { qubit, angle } => write!(f, "RX {angle} {qubit}"),
            NativeGate::Rz { qubit, angle } => write!(f, "RZ {angle} {qubit}"),
            NativeGate::Cz { a, b } => write!(f, "CZ {a} {b}"),
        }
    }
}

fn check_qubit(q: u8) -> Result<()> {
    if q > 1 {
        return Err(Error::MalformedCircuit(format!("qubit index {q} outside the pair")));
    }
    Ok(())
}

/// `exp(-iαX/2)`
pub fn rx(alpha: f64) -> CMatrix2 {
    let (s, c) = (alpha / 2.0).sin_cos();
    let c = ONE * c;
    let off = -I * s;
    CMatrix2::new(c, off, off, c)
}

/// `exp(-iαZ/2)`
pub fn rz(alpha: f64) -> CMatrix2 {
    let half = alpha / 2.0;
    CMatrix2::new(
        num_complex::Complex64::from_polar(1.0, -half),
        ZERO,
        ZERO,
        num_complex::Complex64::from_polar(1.0, half),
    )
}

fn on_qubit(qubit: u8, g: &CMatrix2) -> CMatrix4 {
    let id = CMatrix2::identity();
    if qubit == 0 {
        linalg::kron(g, &id)
    } else {
        linalg::kron(&id, g)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NativeCircuit {
    gates: Vec<NativeGate>,
    setting: MeasurementSetting,
}

impl NativeCircuit {
    /// Validates every gate. A circuit without gates is allowed (identity).
    pub fn new(gates: Vec<NativeGate>, setting: MeasurementSetting) -> Result<Self> {
        for g in &gates {
            g.validate()?;
        }
        Ok(Self { gates, setting })
    }

    pub fn gates(&self) -> &[NativeGate] {
        &self.gates
    }

    pub fn setting(&self) -> MeasurementSetting {
        self.setting
    }

    /// One gate per line: `KIND angle targets` (no angle for CZ).
    pub fn dump(&self) -> String {
        let mut out = format!("# setting {}\n", self.setting);
        for g in &self.gates {
            out.push_str(&g.to_string());
            out.push('\n');
        }
        out
    }
}

/// Compiled circuit for one measurement setting.
pub fn build_circuit(a: &AnsatzParams, h: &HubbardParams, setting: MeasurementSetting) -> NativeCircuit {
    let onsite_angle = h.u * a.phi;
    let hop_angle = 2.0 * h.t * a.theta;
    let mut gates = vec![
        NativeGate::Rx { qubit: 0, angle: -FRAC_PI_2 },
        NativeGate::Rx { qubit: 1, angle: -FRAC_PI_2 },
        NativeGate::Rz { qubit: 1, angle: -PI + onsite_angle },
        NativeGate::Rx { qubit: 1, angle: FRAC_PI_2 },
        NativeGate::Cz { a: 0, b: 1 },
        NativeGate::Rx { qubit: 0, angle: -FRAC_PI_2 },
    ];
    match setting {
        MeasurementSetting::Hopping => gates.push(NativeGate::Rx { qubit: 1, angle: PI }),
        MeasurementSetting::Onsite => gates.extend([
            NativeGate::Rz { qubit: 0, angle: PI + hop_angle },
            NativeGate::Rx { qubit: 0, angle: -FRAC_PI_2 },
            NativeGate::Rz { qubit: 1, angle: PI - hop_angle },
            NativeGate::Rx { qubit: 1, angle: FRAC_PI_2 },
        ]),
    }
    NativeCircuit { gates, setting }
}

/// Product of the gate matrices in circuit order.
pub fn circuit_unitary(c: &NativeCircuit) -> Result<CMatrix4> {
    let mut u = CMatrix4::identity();
    for g in &c.gates {
        g.validate()?;
        u = g.matrix() * u;
    }
    Ok(u)
}

/// Expectation values implied by a computational-basis distribution under
/// a setting's sign map: `(<s0 Z0>, <s1 Z1>, <s0 s1 Z0 Z1>)`.
pub fn signed_expectations(probs: &[f64; 4], setting: MeasurementSetting) -> (f64, f64, f64) {
    let [s0, s1] = setting.signs();
    let mut e0 = 0.0;
    let mut e1 = 0.0;
    let mut e01 = 0.0;
    for (idx, p) in probs.iter().enumerate() {
        let z0 = if idx & 2 == 0 { 1.0 } else { -1.0 };
        let z1 = if idx & 1 == 0 { 1.0 } else { -1.0 };
        e0 += p * s0 * z0;
        e1 += p * s1 * z1;
        e01 += p * s0 * s1 * z0 * z1;
    }
    (e0, e1, e01)
}
