//! Circuit templates: angle encoding, the three entangling layer families
//! and the QCNN convolution/pooling block.
//!
//! A template's parameter vector is laid out as `[trainable | inputs]`:
//! slots `0..n_params` are trainable angles and slots
//! `n_params..n_params + n_inputs` are encoded input angles.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qsim::{GateKind, GateOp, Observable};

pub const MAX_LAYERS: usize = 6;
/// Probability that a random-circuit gate is a CNOT rather than a rotation.
pub const RANDOM_CNOT_RATIO: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntanglerKind {
    /// Random circuit
    RC,
    /// Basic entangling
    BE,
    /// Strongly entangling
    SE,
}

impl EntanglerKind {
    pub const ALL: [EntanglerKind; 3] = [EntanglerKind::RC, EntanglerKind::BE, EntanglerKind::SE];

    pub fn as_str(self) -> &'static str {
        match self {
            EntanglerKind::RC => "rc",
            EntanglerKind::BE => "be",
            EntanglerKind::SE => "se",
        }
    }

    /// Build `n_layers` of this family; `seed` only affects [`EntanglerKind::RC`].
    pub fn build(self, n_qubits: usize, n_layers: usize, seed: u64) -> Result<CircuitTemplate> {
        match self {
            EntanglerKind::RC => random_circuit(n_qubits, n_layers, seed),
            EntanglerKind::BE => basic_entangling(n_qubits, n_layers),
            EntanglerKind::SE => strongly_entangling(n_qubits, n_layers),
        }
    }
}

impl fmt::Display for EntanglerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntanglerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rc" => Ok(EntanglerKind::RC),
            "be" => Ok(EntanglerKind::BE),
            "se" => Ok(EntanglerKind::SE),
            other => Err(Error::Config(format!("unknown entangler '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CircuitTemplate {
    n_qubits: usize,
    gates: Vec<GateOp>,
    n_params: usize,
    n_inputs: usize,
    readout: Observable,
}

impl CircuitTemplate {
    /// Assemble and validate a template.
    pub fn new(
        n_qubits: usize,
        gates: Vec<GateOp>,
        n_params: usize,
        n_inputs: usize,
        readout: Observable,
    ) -> Result<Self> {
        let t = Self { n_qubits, gates, n_params, n_inputs, readout };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let total = self.n_slots();
        let mut seen = vec![false; total];
        for g in &self.gates {
            GateOp::new(g.kind, g.wires.clone(), g.slots.clone())?;
            if let Some(&w) = g.wires.iter().find(|&&w| w >= self.n_qubits) {
                return Err(Error::Dimension(format!(
                    "template gate wire {w} outside {} qubits",
                    self.n_qubits
                )));
            }
            for &s in &g.slots {
                if s >= total {
                    return Err(Error::Parameter(format!("slot {s} outside {total} slots")));
                }
                seen[s] = true;
            }
        }
        if let Some(s) = seen.iter().position(|&x| !x) {
            return Err(Error::Parameter(format!("slot {s} is never used")));
        }
        if let Some(&w) = self.readout.wires().iter().find(|&&w| w >= self.n_qubits) {
            return Err(Error::Dimension(format!("readout wire {w} out of range")));
        }
        Ok(())
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gates(&self) -> &[GateOp] {
        &self.gates
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_slots(&self) -> usize {
        self.n_params + self.n_inputs
    }

    pub fn readout(&self) -> &Observable {
        &self.readout
    }

    pub fn n_outputs(&self) -> usize {
        self.readout.len()
    }

    /// Run `self` then `next` on the same register. Trainable slots of both
    /// come first (self's, then next's), followed by both input blocks;
    /// the readout is `next`'s.
    pub fn then(&self, next: &CircuitTemplate) -> Result<CircuitTemplate> {
        if self.n_qubits != next.n_qubits {
            return Err(Error::Dimension(format!(
                "cannot chain {}-qubit and {}-qubit templates",
                self.n_qubits, next.n_qubits
            )));
        }
        let (p1, i1, p2) = (self.n_params, self.n_inputs, next.n_params);
        let p = p1 + p2;
        let remap_first = |s: usize| if s < p1 { s } else { p + (s - p1) };
        let remap_next = |s: usize| if s < p2 { p1 + s } else { p + i1 + (s - p2) };
        let mut gates = Vec::with_capacity(self.gates.len() + next.gates.len());
        for g in &self.gates {
            gates.push(GateOp { slots: g.slots.iter().map(|&s| remap_first(s)).collect(), ..g.clone() });
        }
        for g in &next.gates {
            gates.push(GateOp { slots: g.slots.iter().map(|&s| remap_next(s)).collect(), ..g.clone() });
        }
        CircuitTemplate::new(self.n_qubits, gates, p, i1 + next.n_inputs, next.readout.clone())
    }

    /// `angle_encoding(n)` followed by this template.
    pub fn encoded(&self) -> Result<CircuitTemplate> {
        angle_encoding(self.n_qubits)?.then(self)
    }

    /// For each slot, the index of the (single) gate reading it, if exactly one does.
    pub fn slot_owners(&self) -> Vec<Option<usize>> {
        let mut owner: Vec<Option<usize>> = vec![None; self.n_slots()];
        let mut count = vec![0usize; self.n_slots()];
        for (gi, g) in self.gates.iter().enumerate() {
            for &s in &g.slots {
                owner[s] = Some(gi);
                count[s] += 1;
            }
        }
        owner
            .into_iter()
            .zip(count)
            .map(|(o, c)| if c == 1 { o } else { None })
            .collect()
    }
}

fn check_entangler_size(n_qubits: usize, n_layers: usize) -> Result<()> {
    if !(2..=crate::qsim::MAX_QUBITS).contains(&n_qubits) {
        return Err(Error::Config(format!("entangling layers need 2..=12 qubits, got {n_qubits}")));
    }
    if n_layers == 0 || n_layers > MAX_LAYERS {
        return Err(Error::Config(format!("layer count {n_layers} outside 1..={MAX_LAYERS}")));
    }
    Ok(())
}

/// One RY per wire; wire `i` reads input slot `i`.
pub fn angle_encoding(n_qubits: usize) -> Result<CircuitTemplate> {
    if n_qubits == 0 {
        return Err(Error::Config("angle encoding needs at least one qubit".into()));
    }
    let gates = (0..n_qubits).map(|w| GateOp::ry(w, w)).collect();
    CircuitTemplate::new(n_qubits, gates, 0, n_qubits, Observable::all(n_qubits))
}

/// RX on every wire followed by a CNOT ring, repeated per layer.
pub fn basic_entangling(n_qubits: usize, n_layers: usize) -> Result<CircuitTemplate> {
    check_entangler_size(n_qubits, n_layers)?;
    let mut gates = Vec::new();
    let mut slot = 0;
    for _ in 0..n_layers {
        for w in 0..n_qubits {
            gates.push(GateOp::rx(w, slot));
            slot += 1;
        }
        if n_qubits == 2 {
            gates.push(GateOp::cnot(0, 1));
        } else {
            for w in 0..n_qubits {
                gates.push(GateOp::cnot(w, (w + 1) % n_qubits));
            }
        }
    }
    CircuitTemplate::new(n_qubits, gates, slot, 0, Observable::all(n_qubits))
}

/// ROT on every wire followed by CNOTs `(i, i + r) mod n`, where the range
/// `r` cycles through `1..n` with the layer index.
pub fn strongly_entangling(n_qubits: usize, n_layers: usize) -> Result<CircuitTemplate> {
    check_entangler_size(n_qubits, n_layers)?;
    let mut gates = Vec::new();
    let mut slot = 0;
    for layer in 0..n_layers {
        for w in 0..n_qubits {
            gates.push(GateOp::rot(w, [slot, slot + 1, slot + 2]));
            slot += 3;
        }
        let range = layer % (n_qubits - 1) + 1;
        for w in 0..n_qubits {
            gates.push(GateOp::cnot(w, (w + range) % n_qubits));
        }
    }
    CircuitTemplate::new(n_qubits, gates, slot, 0, Observable::all(n_qubits))
}

/// `n_qubits` gates per layer, each a CNOT on a random ordered pair with
/// probability [`RANDOM_CNOT_RATIO`] and otherwise a uniformly chosen
/// RX/RY/RZ on a random wire with its own trainable slot.
pub fn random_circuit(n_qubits: usize, n_layers: usize, seed: u64) -> Result<CircuitTemplate> {
    check_entangler_size(n_qubits, n_layers)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_qubits as u32;
    let mut gates = Vec::with_capacity(n_qubits * n_layers);
    let mut slot = 0;
    for _ in 0..n_layers * n_qubits {
        if rng.gen::<f64>() < RANDOM_CNOT_RATIO {
            let control = rng.gen_range(0..n);
            let mut target = rng.gen_range(0..n - 1);
            if target >= control {
                target += 1;
            }
            gates.push(GateOp::cnot(control as usize, target as usize));
        } else {
            let kind = [GateKind::RX, GateKind::RY, GateKind::RZ][rng.gen_range(0..3u32) as usize];
            let wire = rng.gen_range(0..n) as usize;
            gates.push(GateOp { kind, wires: vec![wire], slots: vec![slot] });
            slot += 1;
        }
    }
    CircuitTemplate::new(n_qubits, gates, slot, 0, Observable::all(n_qubits))
}

/// Maximum QCNN stage count for `n_qubits`: `floor(log2 n)`.
pub fn qcnn_max_stages(n_qubits: usize) -> usize {
    if n_qubits == 0 {
        0
    } else {
        n_qubits.ilog2() as usize
    }
}

/// Convolution (ROT per active wire + CNOT ring) and pooling (controlled
/// RX then controlled RZ from each retired wire into its neighbour) per
/// stage, halving the active wires each time. Reads `<Z>` on the survivors.
pub fn qcnn_block(n_qubits: usize, n_stages: usize) -> Result<CircuitTemplate> {
    if n_qubits != 4 && n_qubits != 8 {
        return Err(Error::Config(format!("QCNN supports 4 or 8 qubits, got {n_qubits}")));
    }
    let max = qcnn_max_stages(n_qubits);
    if n_stages == 0 || n_stages > max {
        return Err(Error::Config(format!(
            "QCNN on {n_qubits} qubits takes 1..={max} stages, got {n_stages}"
        )));
    }
    let mut active: Vec<usize> = (0..n_qubits).collect();
    let mut gates = Vec::new();
    let mut slot = 0;
    for _ in 0..n_stages {
        for &w in &active {
            gates.push(GateOp::rot(w, [slot, slot + 1, slot + 2]));
            slot += 3;
        }
        if active.len() == 2 {
            gates.push(GateOp::cnot(active[0], active[1]));
        } else {
            for i in 0..active.len() {
                gates.push(GateOp::cnot(active[i], active[(i + 1) % active.len()]));
            }
        }
        let mut survivors = Vec::with_capacity(active.len() / 2);
        for pair in active.chunks(2) {
            let (source, sink) = (pair[0], pair[1]);
            gates.push(GateOp::crx(source, sink, slot));
            gates.push(GateOp::crz(source, sink, slot + 1));
            slot += 2;
            survivors.push(sink);
        }
        active = survivors;
    }
    CircuitTemplate::new(n_qubits, gates, slot, 0, Observable::new(active)?)
}
