//! Shared test helpers: a from-scratch matrix simulator used as an oracle,
//! random circuit generators and a synthetic image set.
#![allow(dead_code)]

use std::f64::consts::PI;

use hqnn::data::RawDataset;
use hqnn::models::{HybridModel, ModelConfig};
use hqnn::qsim::{GateKind, GateOp};
use hqnn::templates::CircuitTemplate;
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type M2 = [[C; 2]; 2];

fn m2_mul(a: &M2, b: &M2) -> M2 {
    let mut out = [[C::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn rx(t: f64) -> M2 {
    let (c, s) = ((t / 2.0).cos(), (t / 2.0).sin());
    [[C::new(c, 0.0), C::new(0.0, -s)], [C::new(0.0, -s), C::new(c, 0.0)]]
}

fn ry(t: f64) -> M2 {
    let (c, s) = ((t / 2.0).cos(), (t / 2.0).sin());
    [[C::new(c, 0.0), C::new(-s, 0.0)], [C::new(s, 0.0), C::new(c, 0.0)]]
}

fn rz(t: f64) -> M2 {
    [[C::from_polar(1.0, -t / 2.0), C::new(0.0, 0.0)], [C::new(0.0, 0.0), C::from_polar(1.0, t / 2.0)]]
}

fn local(kind: GateKind, a: &[f64]) -> M2 {
    match kind {
        GateKind::RX | GateKind::Crx => rx(a[0]),
        GateKind::RY => ry(a[0]),
        GateKind::RZ | GateKind::Crz => rz(a[0]),
        GateKind::Rot => m2_mul(&rz(a[2]), &m2_mul(&ry(a[1]), &rz(a[0]))),
        GateKind::Cnot => unreachable!(),
    }
}

fn bit(n: usize, wire: usize) -> usize {
    1 << (n - 1 - wire)
}

/// Element `<row| G |col>` of a gate embedded in `n` qubits.
fn element(n: usize, g: &GateOp, angles: &[f64], row: usize, col: usize) -> C {
    let one = C::new(1.0, 0.0);
    let zero = C::new(0.0, 0.0);
    match g.kind {
        GateKind::Cnot => {
            let (c, t) = (bit(n, g.wires[0]), bit(n, g.wires[1]));
            let image = if col & c != 0 { col ^ t } else { col };
            if row == image {
                one
            } else {
                zero
            }
        }
        GateKind::Crx | GateKind::Crz => {
            let (c, t) = (bit(n, g.wires[0]), bit(n, g.wires[1]));
            if col & c == 0 {
                return if row == col { one } else { zero };
            }
            if (row ^ col) & !t != 0 {
                return zero;
            }
            let a: Vec<f64> = g.slots.iter().map(|&s| angles[s]).collect();
            let m = local(g.kind, &a);
            m[usize::from(row & t != 0)][usize::from(col & t != 0)]
        }
        _ => {
            let b = bit(n, g.wires[0]);
            if (row ^ col) & !b != 0 {
                return zero;
            }
            let a: Vec<f64> = g.slots.iter().map(|&s| angles[s]).collect();
            let m = local(g.kind, &a);
            m[usize::from(row & b != 0)][usize::from(col & b != 0)]
        }
    }
}

/// Full unitary of a gate list, built element by element.
pub fn oracle_unitary(n: usize, gates: &[GateOp], angles: &[f64]) -> Vec<Vec<C>> {
    let dim = 1 << n;
    let mut u: Vec<Vec<C>> = (0..dim)
        .map(|r| (0..dim).map(|c| if r == c { C::new(1.0, 0.0) } else { C::new(0.0, 0.0) }).collect())
        .collect();
    for g in gates {
        let gm: Vec<Vec<C>> = (0..dim).map(|r| (0..dim).map(|c| element(n, g, angles, r, c)).collect()).collect();
        u = (0..dim)
            .map(|r| (0..dim).map(|c| (0..dim).map(|k| gm[r][k] * u[k][c]).sum()).collect())
            .collect();
    }
    u
}

/// Final state from `|0...0>`.
pub fn oracle_state(n: usize, gates: &[GateOp], angles: &[f64]) -> Vec<C> {
    oracle_unitary(n, gates, angles).iter().map(|row| row[0]).collect()
}

pub fn oracle_expval_z(n: usize, state: &[C], wires: &[usize]) -> Vec<f64> {
    wires
        .iter()
        .map(|&w| {
            state
                .iter()
                .enumerate()
                .map(|(i, a)| a.norm_sqr() * if i & bit(n, w) != 0 { -1.0 } else { 1.0 })
                .sum()
        })
        .collect()
}

/// Readout of a template with angles `[trainable | pi * inputs]`.
pub fn oracle_template(t: &CircuitTemplate, trainable: &[f64], inputs: &[f64]) -> Vec<f64> {
    let angles: Vec<f64> = trainable.iter().copied().chain(inputs.iter().map(|x| PI * x)).collect();
    let state = oracle_state(t.n_qubits(), t.gates(), &angles);
    oracle_expval_z(t.n_qubits(), &state, t.readout().wires())
}

/// Central finite differences of the oracle readout; `(d/d trainable, d/d inputs)`
/// as row-major `n_out x n` matrices.
pub fn oracle_fd(t: &CircuitTemplate, trainable: &[f64], inputs: &[f64], h: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n_out = t.readout().len();
    let mut jp = vec![vec![0.0; trainable.len()]; n_out];
    let mut ji = vec![vec![0.0; inputs.len()]; n_out];
    let mut p = trainable.to_vec();
    for i in 0..p.len() {
        let base = p[i];
        p[i] = base + h;
        let plus = oracle_template(t, &p, inputs);
        p[i] = base - h;
        let minus = oracle_template(t, &p, inputs);
        p[i] = base;
        for r in 0..n_out {
            jp[r][i] = (plus[r] - minus[r]) / (2.0 * h);
        }
    }
    let mut x = inputs.to_vec();
    for i in 0..x.len() {
        let base = x[i];
        x[i] = base + h;
        let plus = oracle_template(t, trainable, &x);
        x[i] = base - h;
        let minus = oracle_template(t, trainable, &x);
        x[i] = base;
        for r in 0..n_out {
            ji[r][i] = (plus[r] - minus[r]) / (2.0 * h);
        }
    }
    (jp, ji)
}

/// A random gate list over `n` qubits reading slots `0..n_slots` in order.
pub fn random_gates(rng: &mut ChaCha8Rng, n: usize, len: usize) -> (Vec<GateOp>, usize) {
    let mut gates = Vec::with_capacity(len);
    let mut slot = 0;
    for _ in 0..len {
        let pick = if n >= 2 { rng.gen_range(0..7) } else { rng.gen_range(0..4) };
        let w = rng.gen_range(0..n);
        let other = if n >= 2 {
            let v = rng.gen_range(0..n - 1);
            if v >= w {
                v + 1
            } else {
                v
            }
        } else {
            0
        };
        let g = match pick {
            0 => GateOp::rx(w, slot),
            1 => GateOp::ry(w, slot),
            2 => GateOp::rz(w, slot),
            3 => GateOp::rot(w, [slot, slot + 1, slot + 2]),
            4 => GateOp::cnot(w, other),
            5 => GateOp::crx(w, other, slot),
            _ => GateOp::crz(w, other, slot),
        };
        slot += g.slots.len();
        gates.push(g);
    }
    (gates, slot)
}

pub fn random_angles(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0 * PI..2.0 * PI)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 28x28 images of 10 classes: class `c` lights a distinct 6x6 block, with
/// seeded noise on top. Easy to separate, cheap to train on.
pub fn synthetic_mnist(per_class: usize, seed: u64) -> RawDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..per_class * 10 {
        let c = i % 10;
        let (r0, c0) = (2 + 8 * (c / 4), 2 + 7 * (c % 4));
        let mut img = vec![0.0; 28 * 28];
        for r in 0..28 {
            for col in 0..28 {
                let lit = (r0..r0 + 6).contains(&r) && (c0..c0 + 6).contains(&col);
                let noise: f64 = rng.gen_range(0.0..0.1);
                let v: f64 = if lit { 0.9 } else { 0.0 } + if rng.gen_bool(0.05) { noise } else { 0.0 };
                img[r * 28 + col] = (v.min(1.0) * 255.0).round() / 255.0;
            }
        }
        images.push(img);
        labels.push(c as u8);
    }
    RawDataset { rows: 28, cols: 28, images, labels }
}

/// Load the bundled MNIST subset if it exists at the workspace data path.
pub fn real_mnist() -> Option<RawDataset> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    hqnn::data::load_mnist_dir(&dir).ok()
}

/// Uniform random pixels in `[0, 1)`.
pub fn image(seed: u64, side: usize) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..side * side).map(|_| r.gen_range(0.0..1.0)).collect()
}

/// Relative L2 error of the analytic gradient against central differences
/// of the loss, per parameter tensor.
pub fn gradient_errors(cfg: ModelConfig) -> Vec<(&'static str, f64)> {
    let mut model = HybridModel::<f64>::with_input_size(cfg, 8, 8).unwrap();
    let img = image(cfg.seed + 100, 8);
    let label = 2;
    let (_, _, grads) = model.loss_and_grads(&img, label).unwrap();
    let names: Vec<&'static str> = model.params().iter().map(|(n, _)| *n).collect();
    let h = 1e-5;
    let mut out = Vec::new();
    for (t, name) in names.iter().enumerate() {
        let len = model.params()[t].1.values().len();
        let mut num = vec![0.0; len];
        for i in 0..len {
            let base = model.params()[t].1.values()[i];
            model.params_mut()[t].values_mut()[i] = base + h;
            let plus = model.loss(&img, label).unwrap();
            model.params_mut()[t].values_mut()[i] = base - h;
            let minus = model.loss(&img, label).unwrap();
            model.params_mut()[t].values_mut()[i] = base;
            num[i] = (plus - minus) / (2.0 * h);
        }
        let diff: f64 = grads[t].iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = num.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-8);
        out.push((*name, diff / scale));
    }
    out
}

