use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{QuantumError, C64};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gate {
    I,
    X,
    Y,
    Z,
    H,
    S,
    T,
    #[serde(rename = "CNOT")]
    Cnot,
    #[serde(rename = "SWAP")]
    Swap,
}

impl Gate {
    pub fn arity(self) -> usize {
        match self {
            Gate::Cnot | Gate::Swap => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Gate::I => "I",
            Gate::X => "X",
            Gate::Y => "Y",
            Gate::Z => "Z",
            Gate::H => "H",
            Gate::S => "S",
            Gate::T => "T",
            Gate::Cnot => "CNOT",
            Gate::Swap => "SWAP",
        }
    }

    /// Row-major matrix over the gate's own wires, first wire most significant.
    fn matrix(self) -> Vec<C64> {
        let o = C64::new(0.0, 0.0);
        let l = C64::new(1.0, 0.0);
        let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let i = C64::new(0.0, 1.0);
        match self {
            Gate::I => vec![l, o, o, l],
            Gate::X => vec![o, l, l, o],
            Gate::Y => vec![o, -i, i, o],
            Gate::Z => vec![l, o, o, -l],
            Gate::H => vec![h, h, h, -h],
            Gate::S => vec![l, o, o, i],
            Gate::T => vec![l, o, o, C64::from_polar(1.0, std::f64::consts::FRAC_PI_4)],
            Gate::Cnot => vec![
                l, o, o, o, //
                o, l, o, o, //
                o, o, o, l, //
                o, o, l, o,
            ],
            Gate::Swap => vec![
                l, o, o, o, //
                o, o, l, o, //
                o, l, o, o, //
                o, o, o, l,
            ],
        }
    }
}

impl FromStr for Gate {
    type Err = QuantumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "I" => Gate::I,
            "X" => Gate::X,
            "Y" => Gate::Y,
            "Z" => Gate::Z,
            "H" => Gate::H,
            "S" => Gate::S,
            "T" => Gate::T,
            "CNOT" | "CX" => Gate::Cnot,
            "SWAP" => Gate::Swap,
            other => return Err(QuantumError::UnknownGate(other.to_owned())),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GateOp {
    pub gate: Gate,
    pub wires: Vec<usize>,
}

/// Gate list followed by an optional terminal measurement.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Circuit {
    pub width: usize,
    pub gates: Vec<GateOp>,
    #[serde(default)]
    pub measured: Vec<usize>,
}

impl Circuit {
    pub fn new(width: usize) -> Self {
        Circuit {
            width,
            gates: Vec::new(),
            measured: Vec::new(),
        }
    }

    pub fn gate(mut self, gate: Gate, wires: &[usize]) -> Self {
        self.gates.push(GateOp {
            gate,
            wires: wires.to_vec(),
        });
        self
    }

    pub fn measure(mut self, wires: &[usize]) -> Self {
        self.measured.extend_from_slice(wires);
        self
    }

    pub fn measures(&self) -> bool {
        !self.measured.is_empty()
    }

    pub fn validate(&self) -> Result<(), QuantumError> {
        if self.width == 0 {
            return Err(QuantumError::Empty);
        }
        let check = |w: usize| {
            if w >= self.width {
                Err(QuantumError::WireOutOfRange {
                    wire: w,
                    width: self.width,
                })
            } else {
                Ok(())
            }
        };
        for op in &self.gates {
            if op.wires.len() != op.gate.arity() {
                return Err(QuantumError::GateArity {
                    gate: op.gate,
                    expected: op.gate.arity(),
                    got: op.wires.len(),
                });
            }
            for &w in &op.wires {
                check(w)?;
            }
            if op.wires.len() == 2 && op.wires[0] == op.wires[1] {
                return Err(QuantumError::WireOutOfRange {
                    wire: op.wires[1],
                    width: self.width,
                });
            }
        }
        for (i, &w) in self.measured.iter().enumerate() {
            check(w)?;
            if self.measured[..i].contains(&w) {
                return Err(QuantumError::WireOutOfRange {
                    wire: w,
                    width: self.width,
                });
            }
        }
        Ok(())
    }

    /// Canonical serialization of the unitary part; the memo key.
    pub fn fingerprint(&self) -> String {
        let mut s = format!("w{}", self.width);
        for op in &self.gates {
            let _ = write!(s, ";{}", op.gate.name());
            for w in &op.wires {
                let _ = write!(s, ",{w}");
            }
        }
        s
    }

    /// Dense unitary: ordered product of the gates lifted to full width.
    pub fn unitary(&self) -> Result<Unitary, QuantumError> {
        self.validate()?;
        let mut u = Unitary::identity(1 << self.width);
        for op in &self.gates {
            let g = lift(op, self.width);
            u = g.mul(&u);
        }
        Ok(u)
    }
}

/// Square complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Unitary {
    dim: usize,
    data: Vec<C64>,
}

impl Unitary {
    pub fn identity(dim: usize) -> Self {
        let mut data = vec![C64::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            data[i * dim + i] = C64::new(1.0, 0.0);
        }
        Unitary { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.data[row * self.dim + col]
    }

    pub fn mul(&self, rhs: &Unitary) -> Unitary {
        let n = self.dim;
        assert_eq!(n, rhs.dim);
        let mut data = vec![C64::new(0.0, 0.0); n * n];
        for r in 0..n {
            for k in 0..n {
                let a = self.data[r * n + k];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..n {
                    data[r * n + c] += a * rhs.data[k * n + c];
                }
            }
        }
        Unitary { dim: n, data }
    }

    pub fn adjoint(&self) -> Unitary {
        let n = self.dim;
        let mut data = vec![C64::new(0.0, 0.0); n * n];
        for r in 0..n {
            for c in 0..n {
                data[c * n + r] = self.data[r * n + c].conj();
            }
        }
        Unitary { dim: n, data }
    }

    /// Largest entrywise deviation from the identity.
    pub fn distance_from_identity(&self) -> f64 {
        let id = Unitary::identity(self.dim);
        self.data
            .iter()
            .zip(&id.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

fn lift(op: &GateOp, width: usize) -> Unitary {
    let g = op.gate.matrix();
    let k = op.wires.len();
    let gdim = 1usize << k;
    let dim = 1usize << width;
    let shifts: Vec<usize> = op.wires.iter().map(|&w| width - 1 - w).collect();
    let mut data = vec![C64::new(0.0, 0.0); dim * dim];
    for col in 0..dim {
        let mut local_in = 0;
        for &s in &shifts {
            local_in = (local_in << 1) | ((col >> s) & 1);
        }
        let mut base = col;
        for &s in &shifts {
            base &= !(1 << s);
        }
        for local_out in 0..gdim {
            let amp = g[local_out * gdim + local_in];
            if amp == C64::new(0.0, 0.0) {
                continue;
            }
            let mut row = base;
            for (j, &s) in shifts.iter().enumerate() {
                let bit = (local_out >> (k - 1 - j)) & 1;
                row |= bit << s;
            }
            data[row * dim + col] = amp;
        }
    }
    Unitary { dim, data }
}

/// Circuits used by the network protocols.
pub mod circuits {
    use super::{Circuit, Gate};

    /// Bell-state measurement on two wires: CNOT, H, measure both.
    /// Outcome `(m0, m1)` identifies `Φ+`, `Ψ+`, `Φ-`, `Ψ-` for 00, 01, 10, 11.
    pub fn bell_measurement() -> Circuit {
        Circuit::new(2)
            .gate(Gate::Cnot, &[0, 1])
            .gate(Gate::H, &[0])
            .measure(&[0, 1])
    }

    /// Pauli frame fix-up for the far end of a swapped or teleported pair:
    /// X if the second outcome bit is set, then Z if the first is.
    pub fn pauli_correction(m0: u8, m1: u8) -> Circuit {
        let mut c = Circuit::new(1);
        if m1 == 1 {
            c = c.gate(Gate::X, &[0]);
        }
        if m0 == 1 {
            c = c.gate(Gate::Z, &[0]);
        }
        c
    }

    /// One side of two-pair purification: CNOT from the kept qubit onto the
    /// sacrificed qubit, then measure the sacrificed one.
    pub fn purification_half() -> Circuit {
        Circuit::new(2).gate(Gate::Cnot, &[0, 1]).measure(&[1])
    }

    /// Prepares `(|00⟩+|11⟩)/√2` from `|00⟩`.
    pub fn bell_pair() -> Circuit {
        Circuit::new(2).gate(Gate::H, &[0]).gate(Gate::Cnot, &[0, 1])
    }
}
