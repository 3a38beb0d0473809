//! Dense statevector simulation.
//!
//! Qubit 0 is the most significant bit of a basis index: on `n` qubits, wire
//! `w` corresponds to the mask `1 << (n - 1 - w)`. Gates are applied in place
//! by striding over amplitude pairs; [`dense_unitary`] builds explicit
//! matrices and exists only as a test oracle.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAX_QUBITS: usize = 12;
/// Largest register [`dense_unitary`] will build.
pub const ORACLE_MAX_QUBITS: usize = 6;

pub type Matrix2<T> = [[Complex<T>; 2]; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    RX,
    RY,
    RZ,
    /// `RZ(omega) * RY(theta) * RZ(phi)` with slots ordered `(phi, theta, omega)`.
    Rot,
    Cnot,
    /// Controlled RX, wires ordered `(control, target)`.
    Crx,
    /// Controlled RZ, wires ordered `(control, target)`.
    Crz,
}

impl GateKind {
    pub fn n_wires(self) -> usize {
        match self {
            GateKind::RX | GateKind::RY | GateKind::RZ | GateKind::Rot => 1,
            GateKind::Cnot | GateKind::Crx | GateKind::Crz => 2,
        }
    }

    pub fn n_params(self) -> usize {
        match self {
            GateKind::Cnot => 0,
            GateKind::Rot => 3,
            _ => 1,
        }
    }

    pub fn is_controlled_rotation(self) -> bool {
        matches!(self, GateKind::Crx | GateKind::Crz)
    }
}

/// One gate of a circuit: a kind, the wires it acts on and the indices of
/// the angles it reads from a parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GateOp {
    pub kind: GateKind,
    pub wires: Vec<usize>,
    pub slots: Vec<usize>,
}

impl GateOp {
    pub fn new(kind: GateKind, wires: Vec<usize>, slots: Vec<usize>) -> Result<Self> {
        if wires.len() != kind.n_wires() {
            return Err(Error::Dimension(format!(
                "{kind:?} acts on {} wires, got {}",
                kind.n_wires(),
                wires.len()
            )));
        }
        if wires.len() == 2 && wires[0] == wires[1] {
            return Err(Error::Dimension(format!(
                "{kind:?} control and target coincide on wire {}",
                wires[0]
            )));
        }
        if slots.len() != kind.n_params() {
            return Err(Error::Parameter(format!(
                "{kind:?} takes {} parameters, got {}",
                kind.n_params(),
                slots.len()
            )));
        }
        Ok(Self { kind, wires, slots })
    }

    pub fn rx(wire: usize, slot: usize) -> Self {
        Self { kind: GateKind::RX, wires: vec![wire], slots: vec![slot] }
    }

    pub fn ry(wire: usize, slot: usize) -> Self {
        Self { kind: GateKind::RY, wires: vec![wire], slots: vec![slot] }
    }

    pub fn rz(wire: usize, slot: usize) -> Self {
        Self { kind: GateKind::RZ, wires: vec![wire], slots: vec![slot] }
    }

    pub fn rot(wire: usize, slots: [usize; 3]) -> Self {
        Self { kind: GateKind::Rot, wires: vec![wire], slots: slots.to_vec() }
    }

    pub fn cnot(control: usize, target: usize) -> Self {
        assert_ne!(control, target, "CNOT control equals target");
        Self { kind: GateKind::Cnot, wires: vec![control, target], slots: Vec::new() }
    }

    pub fn crx(control: usize, target: usize, slot: usize) -> Self {
        assert_ne!(control, target, "CRX control equals target");
        Self { kind: GateKind::Crx, wires: vec![control, target], slots: vec![slot] }
    }

    pub fn crz(control: usize, target: usize, slot: usize) -> Self {
        assert_ne!(control, target, "CRZ control equals target");
        Self { kind: GateKind::Crz, wires: vec![control, target], slots: vec![slot] }
    }

    fn check(&self, n_qubits: usize, n_params: usize) -> Result<()> {
        if self.wires.len() != self.kind.n_wires() {
            return Err(Error::Dimension(format!("malformed gate {self:?}")));
        }
        if let Some(&w) = self.wires.iter().find(|&&w| w >= n_qubits) {
            return Err(Error::Dimension(format!(
                "wire {w} out of range for {n_qubits} qubits"
            )));
        }
        if self.wires.len() == 2 && self.wires[0] == self.wires[1] {
            return Err(Error::Dimension(format!("repeated wire in {self:?}")));
        }
        if self.slots.len() != self.kind.n_params() {
            return Err(Error::Parameter(format!("malformed gate {self:?}")));
        }
        if let Some(&s) = self.slots.iter().find(|&&s| s >= n_params) {
            return Err(Error::Parameter(format!(
                "slot {s} missing from a parameter vector of length {n_params}"
            )));
        }
        Ok(())
    }

    /// The 2x2 unitary of a single-qubit gate, or of the target block of a
    /// controlled rotation. `None` for CNOT.
    pub fn local_matrix<T: Scalar>(&self, params: &[T]) -> Option<Matrix2<T>> {
        let p = |i: usize| params[self.slots[i]];
        Some(match self.kind {
            GateKind::RX | GateKind::Crx => rx_matrix(p(0)),
            GateKind::RY => ry_matrix(p(0)),
            GateKind::RZ | GateKind::Crz => rz_matrix(p(0)),
            GateKind::Rot => rot_matrix(p(0), p(1), p(2)),
            GateKind::Cnot => return None,
        })
    }
}

pub fn rx_matrix<T: Scalar>(theta: T) -> Matrix2<T> {
    let half = theta / T::lit(2.0);
    let (s, c) = half.sin_cos();
    let z = T::zero();
    [
        [Complex::new(c, z), Complex::new(z, -s)],
        [Complex::new(z, -s), Complex::new(c, z)],
    ]
}

pub fn ry_matrix<T: Scalar>(theta: T) -> Matrix2<T> {
    let half = theta / T::lit(2.0);
    let (s, c) = half.sin_cos();
    let z = T::zero();
    [
        [Complex::new(c, z), Complex::new(-s, z)],
        [Complex::new(s, z), Complex::new(c, z)],
    ]
}

pub fn rz_matrix<T: Scalar>(theta: T) -> Matrix2<T> {
    let half = theta / T::lit(2.0);
    let (s, c) = half.sin_cos();
    let zero = Complex::new(T::zero(), T::zero());
    [[Complex::new(c, -s), zero], [zero, Complex::new(c, s)]]
}

pub fn rot_matrix<T: Scalar>(phi: T, theta: T, omega: T) -> Matrix2<T> {
    mul2(&rz_matrix(omega), &mul2(&ry_matrix(theta), &rz_matrix(phi)))
}

fn mul2<T: Scalar>(a: &Matrix2<T>, b: &Matrix2<T>) -> Matrix2<T> {
    let mut out = [[Complex::new(T::zero(), T::zero()); 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// Pauli-Z readout on a set of distinct wires.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observable {
    wires: Vec<usize>,
}

impl Observable {
    pub fn new(wires: Vec<usize>) -> Result<Self> {
        for (i, w) in wires.iter().enumerate() {
            if wires[..i].contains(w) {
                return Err(Error::Dimension(format!("observable repeats wire {w}")));
            }
        }
        Ok(Self { wires })
    }

    pub fn all(n_qubits: usize) -> Self {
        Self { wires: (0..n_qubits).collect() }
    }

    pub fn wires(&self) -> &[usize] {
        &self.wires
    }

    pub fn len(&self) -> usize {
        self.wires.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wires.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector<T> {
    n_qubits: usize,
    amps: Vec<Complex<T>>,
}

fn check_qubits(n_qubits: usize, max: usize) -> Result<()> {
    if n_qubits == 0 || n_qubits > max {
        return Err(Error::Config(format!(
            "qubit count {n_qubits} outside 1..={max}"
        )));
    }
    Ok(())
}

impl<T: Scalar> StateVector<T> {
    /// `|0...0>` on `n_qubits` wires.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        check_qubits(n_qubits, MAX_QUBITS)?;
        let mut amps = vec![Complex::new(T::zero(), T::zero()); 1 << n_qubits];
        amps[0] = Complex::new(T::one(), T::zero());
        Ok(Self { n_qubits, amps })
    }

    pub fn from_amplitudes(n_qubits: usize, amps: Vec<Complex<T>>) -> Result<Self> {
        check_qubits(n_qubits, MAX_QUBITS)?;
        if amps.len() != 1 << n_qubits {
            return Err(Error::Dimension(format!(
                "{} amplitudes for {n_qubits} qubits",
                amps.len()
            )));
        }
        Ok(Self { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex<T>] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> T {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    #[inline]
    fn mask(&self, wire: usize) -> usize {
        1 << (self.n_qubits - 1 - wire)
    }

    /// Apply `gate` in place, reading its angles from `params`.
    pub fn apply(&mut self, gate: &GateOp, params: &[T]) -> Result<()> {
        gate.check(self.n_qubits, params.len())?;
        match gate.kind {
            GateKind::Cnot => {
                let (c, t) = (self.mask(gate.wires[0]), self.mask(gate.wires[1]));
                self.for_pairs(t, |amps, i, j| {
                    if i & c != 0 {
                        amps.swap(i, j);
                    }
                });
            }
            GateKind::Crx | GateKind::Crz => {
                let m = gate.local_matrix(params).expect("rotation matrix");
                let (c, t) = (self.mask(gate.wires[0]), self.mask(gate.wires[1]));
                self.for_pairs(t, |amps, i, j| {
                    if i & c != 0 {
                        rotate_pair(amps, i, j, &m);
                    }
                });
            }
            _ => {
                let m = gate.local_matrix(params).expect("rotation matrix");
                let t = self.mask(gate.wires[0]);
                self.for_pairs(t, |amps, i, j| rotate_pair(amps, i, j, &m));
            }
        }
        Ok(())
    }

    /// Visit every index pair `(i, i | mask)` with the `mask` bit of `i` clear.
    #[inline]
    fn for_pairs(&mut self, mask: usize, mut f: impl FnMut(&mut [Complex<T>], usize, usize)) {
        let len = self.amps.len();
        let mut block = 0;
        while block < len {
            for i in block..block + mask {
                f(&mut self.amps, i, i + mask);
            }
            block += mask << 1;
        }
    }

    /// `<Z>` on each observable wire.
    pub fn expval_z(&self, observable: &Observable) -> Result<Vec<T>> {
        if let Some(&w) = observable.wires().iter().find(|&&w| w >= self.n_qubits) {
            return Err(Error::Dimension(format!(
                "observable wire {w} out of range for {} qubits",
                self.n_qubits
            )));
        }
        let masks: Vec<usize> = observable.wires().iter().map(|&w| self.mask(w)).collect();
        let mut out = vec![T::zero(); masks.len()];
        for (idx, a) in self.amps.iter().enumerate() {
            let p = a.norm_sqr();
            for (o, &m) in out.iter_mut().zip(&masks) {
                if idx & m == 0 {
                    *o = *o + p;
                } else {
                    *o = *o - p;
                }
            }
        }
        Ok(out)
    }
}

#[inline]
fn rotate_pair<T: Scalar>(amps: &mut [Complex<T>], i: usize, j: usize, m: &Matrix2<T>) {
    let (a, b) = (amps[i], amps[j]);
    amps[i] = m[0][0] * a + m[0][1] * b;
    amps[j] = m[1][0] * a + m[1][1] * b;
}

pub fn zero_state<T: Scalar>(n_qubits: usize) -> Result<StateVector<T>> {
    StateVector::zero(n_qubits)
}

pub fn apply_gate<T: Scalar>(
    mut state: StateVector<T>,
    gate: &GateOp,
    params: &[T],
) -> Result<StateVector<T>> {
    state.apply(gate, params)?;
    Ok(state)
}

/// Apply `gates` in order to `|0...0>`.
pub fn run_circuit<T: Scalar>(n_qubits: usize, gates: &[GateOp], params: &[T]) -> Result<StateVector<T>> {
    let mut state = StateVector::zero(n_qubits)?;
    for g in gates {
        state.apply(g, params)?;
    }
    Ok(state)
}

pub fn expval_z<T: Scalar>(state: &StateVector<T>, observable: &Observable) -> Result<Vec<T>> {
    state.expval_z(observable)
}

/// Row-major square complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<T> {
    dim: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn identity(dim: usize) -> Self {
        let mut data = vec![Complex::new(T::zero(), T::zero()); dim * dim];
        for i in 0..dim {
            data[i * dim + i] = Complex::new(T::one(), T::zero());
        }
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> Complex<T> {
        self.data[row * self.dim + col]
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        let n = self.dim;
        let mut data = vec![Complex::new(T::zero(), T::zero()); n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a.re == T::zero() && a.im == T::zero() {
                    continue;
                }
                for j in 0..n {
                    data[i * n + j] = data[i * n + j] + a * rhs.data[k * n + j];
                }
            }
        }
        Self { dim: n, data }
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        let mut data = self.data.clone();
        for i in 0..n {
            for j in 0..n {
                data[j * n + i] = self.data[i * n + j].conj();
            }
        }
        Self { dim: n, data }
    }

    pub fn mul_vec(&self, v: &[Complex<T>]) -> Vec<Complex<T>> {
        (0..self.dim)
            .map(|i| {
                (0..self.dim)
                    .map(|j| self.data[i * self.dim + j] * v[j])
                    .fold(Complex::new(T::zero(), T::zero()), |acc, x| acc + x)
            })
            .collect()
    }

    /// Largest elementwise modulus of `self - rhs`.
    pub fn max_abs_diff(&self, rhs: &Self) -> T {
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| (*a - *b).norm())
            .fold(T::zero(), T::max)
    }
}

/// Full `2^n x 2^n` unitary of a circuit, built by embedding each gate's
/// local matrix and multiplying. Test oracle only.
pub fn dense_unitary<T: Scalar>(n_qubits: usize, gates: &[GateOp], params: &[T]) -> Result<DenseMatrix<T>> {
    check_qubits(n_qubits, ORACLE_MAX_QUBITS)?;
    let dim = 1 << n_qubits;
    let mut u = DenseMatrix::identity(dim);
    for g in gates {
        g.check(n_qubits, params.len())?;
        u = embed(n_qubits, g, params).matmul(&u);
    }
    Ok(u)
}

fn embed<T: Scalar>(n_qubits: usize, gate: &GateOp, params: &[T]) -> DenseMatrix<T> {
    let zero = Complex::new(T::zero(), T::zero());
    let one = Complex::new(T::one(), T::zero());
    let bit = |w: usize| n_qubits - 1 - w;
    // Local operator on the gate's wires, local index built with the first
    // listed wire as the high bit.
    let local: Vec<Vec<Complex<T>>> = match gate.kind {
        GateKind::Cnot => vec![
            vec![one, zero, zero, zero],
            vec![zero, one, zero, zero],
            vec![zero, zero, zero, one],
            vec![zero, zero, one, zero],
        ],
        GateKind::Crx | GateKind::Crz => {
            let m = gate.local_matrix(params).expect("rotation matrix");
            vec![
                vec![one, zero, zero, zero],
                vec![zero, one, zero, zero],
                vec![zero, zero, m[0][0], m[0][1]],
                vec![zero, zero, m[1][0], m[1][1]],
            ]
        }
        _ => {
            let m = gate.local_matrix(params).expect("rotation matrix");
            vec![vec![m[0][0], m[0][1]], vec![m[1][0], m[1][1]]]
        }
    };
    let local_index = |idx: usize| {
        gate.wires
            .iter()
            .fold(0usize, |acc, &w| (acc << 1) | ((idx >> bit(w)) & 1))
    };
    let wire_mask: usize = gate.wires.iter().map(|&w| 1usize << bit(w)).sum();
    let dim = 1 << n_qubits;
    let mut data = vec![zero; dim * dim];
    for r in 0..dim {
        for c in 0..dim {
            if r & !wire_mask == c & !wire_mask {
                data[r * dim + c] = local[local_index(r)][local_index(c)];
            }
        }
    }
    DenseMatrix { dim, data }
}
