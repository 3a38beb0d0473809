//! Circuit gradients by the parameter-shift rule, plus a central-difference
//! oracle.
//!
//! Input features are encoded as angles `pi * x`, so input Jacobians are
//! taken with respect to the features and include that factor.

use crate::error::{Error, Result};
use crate::qsim::{GateKind, StateVector};
use crate::scalar::Scalar;
use crate::templates::CircuitTemplate;

pub use crate::nn::Tensor as ParamTensor;

/// Dense row-major `rows x cols` matrix of partial derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct Jacobian<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Jacobian<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }

    fn set(&mut self, row: usize, col: usize, v: T) {
        self.data[row * self.cols + col] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// `upstream^T * J`: pulls a gradient on the outputs back onto the columns.
    pub fn vjp(&self, upstream: &[T]) -> Vec<T> {
        debug_assert_eq!(upstream.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (r, &u) in upstream.iter().enumerate() {
            if u == T::zero() {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, &j) in out.iter_mut().zip(row) {
                *o = *o + u * j;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }
}

/// Outputs of one quantum layer evaluation and, when requested, their
/// Jacobians with respect to the trainable angles and the input features.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumLayerEval<T> {
    pub outputs: Vec<T>,
    pub jac_params: Option<Jacobian<T>>,
    pub jac_inputs: Option<Jacobian<T>>,
}

/// Which Jacobians [`evaluate`] should compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Derivatives {
    None,
    Params,
    ParamsAndInputs,
}

fn encoding_scale<T: Scalar>() -> T {
    T::PI()
}

fn angle_vector<T: Scalar>(template: &CircuitTemplate, trainable: &[T], inputs: &[T]) -> Result<Vec<T>> {
    if trainable.len() != template.n_params() {
        return Err(Error::Parameter(format!(
            "template takes {} trainable angles, got {}",
            template.n_params(),
            trainable.len()
        )));
    }
    if inputs.len() != template.n_inputs() {
        return Err(Error::Parameter(format!(
            "template takes {} inputs, got {}",
            template.n_inputs(),
            inputs.len()
        )));
    }
    let scale = encoding_scale::<T>();
    Ok(trainable.iter().copied().chain(inputs.iter().map(|&x| scale * x)).collect())
}

fn run_from<T: Scalar>(
    template: &CircuitTemplate,
    mut state: StateVector<T>,
    first_gate: usize,
    angles: &[T],
) -> Result<Vec<T>> {
    for g in &template.gates()[first_gate..] {
        state.apply(g, angles)?;
    }
    state.expval_z(template.readout())
}

/// `<Z>` readout of the template with angles `[trainable | pi * inputs]`.
pub fn forward<T: Scalar>(template: &CircuitTemplate, trainable: &[T], inputs: &[T]) -> Result<Vec<T>> {
    let angles = angle_vector(template, trainable, inputs)?;
    run_from(template, StateVector::zero(template.n_qubits())?, 0, &angles)
}

/// Shift recipe `(coefficient, shift)` for an angle read by a gate of `kind`.
///
/// Plain rotations have generator eigenvalues `+-1/2` and take the two-term
/// rule. Controlled rotations have eigenvalues `{0, +-1/2}`, i.e. two
/// frequencies, and need the four-term rule.
fn shift_recipe<T: Scalar>(kind: GateKind) -> Vec<(T, T)> {
    let half_pi = T::FRAC_PI_2();
    if kind.is_controlled_rotation() {
        let sqrt2 = T::SQRT_2();
        let four_sqrt2 = T::lit(4.0) * sqrt2;
        let c1 = (sqrt2 + T::one()) / four_sqrt2;
        let c2 = (sqrt2 - T::one()) / four_sqrt2;
        let three_half_pi = T::lit(3.0) * half_pi;
        vec![(c1, half_pi), (-c1, -half_pi), (-c2, three_half_pi), (c2, -three_half_pi)]
    } else {
        let h = T::lit(0.5);
        vec![(h, half_pi), (-h, -half_pi)]
    }
}

/// Forward pass plus parameter-shift Jacobians.
///
/// Only the gates after the shifted one are re-simulated: the state before
/// each parameterized gate is kept from the unshifted run.
pub fn evaluate<T: Scalar>(
    template: &CircuitTemplate,
    trainable: &[T],
    inputs: &[T],
    derivatives: Derivatives,
) -> Result<QuantumLayerEval<T>> {
    let mut angles = angle_vector(template, trainable, inputs)?;
    let gates = template.gates();
    let n_params = template.n_params();
    let wanted_slots = match derivatives {
        Derivatives::None => 0,
        Derivatives::Params => n_params,
        Derivatives::ParamsAndInputs => template.n_slots(),
    };

    let owners = template.slot_owners();
    let mut needs_prefix = vec![false; gates.len()];
    for (slot, owner) in owners.iter().take(wanted_slots).enumerate() {
        match owner {
            Some(g) => needs_prefix[*g] = true,
            None => {
                return Err(Error::Parameter(format!(
                    "slot {slot} is not read by exactly one gate; shift rule does not apply"
                )))
            }
        }
    }

    let mut state = StateVector::zero(template.n_qubits())?;
    let mut prefix: Vec<Option<StateVector<T>>> = vec![None; gates.len()];
    for (gi, g) in gates.iter().enumerate() {
        if needs_prefix[gi] {
            prefix[gi] = Some(state.clone());
        }
        state.apply(g, &angles)?;
    }
    let outputs = state.expval_z(template.readout())?;
    if wanted_slots == 0 {
        return Ok(QuantumLayerEval { outputs, jac_params: None, jac_inputs: None });
    }

    let n_out = outputs.len();
    let mut jac_params = Jacobian::zeros(n_out, n_params);
    let mut jac_inputs = Jacobian::zeros(n_out, wanted_slots - n_params);
    let scale = encoding_scale::<T>();
    for slot in 0..wanted_slots {
        let gi = owners[slot].expect("checked above");
        let base = angles[slot];
        let mut d = vec![T::zero(); n_out];
        for (coef, shift) in shift_recipe::<T>(gates[gi].kind) {
            angles[slot] = base + shift;
            let start = prefix[gi].clone().expect("prefix recorded");
            let shifted = run_from(template, start, gi, &angles)?;
            for (acc, v) in d.iter_mut().zip(shifted) {
                *acc = *acc + coef * v;
            }
        }
        angles[slot] = base;
        for (r, v) in d.into_iter().enumerate() {
            if slot < n_params {
                jac_params.set(r, slot, v);
            } else {
                jac_inputs.set(r, slot - n_params, scale * v);
            }
        }
    }
    Ok(QuantumLayerEval {
        outputs,
        jac_params: Some(jac_params),
        jac_inputs: (derivatives == Derivatives::ParamsAndInputs).then_some(jac_inputs),
    })
}

/// Parameter-shift Jacobians with respect to trainable angles and input features.
pub fn param_shift_grad<T: Scalar>(
    template: &CircuitTemplate,
    trainable: &[T],
    inputs: &[T],
) -> Result<(Jacobian<T>, Jacobian<T>)> {
    let eval = evaluate(template, trainable, inputs, Derivatives::ParamsAndInputs)?;
    Ok((
        eval.jac_params.expect("requested"),
        eval.jac_inputs.expect("requested"),
    ))
}

/// Central differences of [`forward`] with step `h`. Test oracle.
pub fn finite_diff_grad<T: Scalar>(
    template: &CircuitTemplate,
    trainable: &[T],
    inputs: &[T],
    h: T,
) -> Result<(Jacobian<T>, Jacobian<T>)> {
    if h <= T::zero() {
        return Err(Error::Parameter("finite-difference step must be positive".into()));
    }
    let n_out = template.n_outputs();
    let two_h = h + h;
    let mut jp = Jacobian::zeros(n_out, trainable.len());
    let mut params = trainable.to_vec();
    for i in 0..params.len() {
        let base = params[i];
        params[i] = base + h;
        let plus = forward(template, &params, inputs)?;
        params[i] = base - h;
        let minus = forward(template, &params, inputs)?;
        params[i] = base;
        for r in 0..n_out {
            jp.set(r, i, (plus[r] - minus[r]) / two_h);
        }
    }
    let mut ji = Jacobian::zeros(n_out, inputs.len());
    let mut xs = inputs.to_vec();
    for i in 0..xs.len() {
        let base = xs[i];
        xs[i] = base + h;
        let plus = forward(template, trainable, &xs)?;
        xs[i] = base - h;
        let minus = forward(template, trainable, &xs)?;
        xs[i] = base;
        for r in 0..n_out {
            ji.set(r, i, (plus[r] - minus[r]) / two_h);
        }
    }
    Ok((jp, ji))
}
