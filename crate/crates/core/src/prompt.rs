//! Soft-prompt parameters and their encoder.
//!
//! A pseudo-token table (`l × d`) runs through a bidirectional LSTM with
//! hidden size `h` per direction; slot `i` concatenates the forward state
//! after reading slots `0..=i` with the backward state after reading slots
//! `l-1..=i`, and a two-layer ReLU perceptron maps the `2h` vector to `d`.

use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::substream;
use crate::tape::{Matrix, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("prompt dimensions must be positive (l={l}, d={d}, h={h})")]
    BadDimensions { l: usize, d: usize, h: usize },
    #[error("parameter `{name}` has shape {got:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("parameter `{0}` missing")]
    Missing(String),
    #[error("non-finite value in parameter `{0}`")]
    NonFinite(String),
}

pub const PARAM_NAMES: [&str; 11] = [
    "pseudo_table",
    "lstm_fwd_w_in",
    "lstm_fwd_w_rec",
    "lstm_fwd_bias",
    "lstm_bwd_w_in",
    "lstm_bwd_w_rec",
    "lstm_bwd_bias",
    "mlp_w1",
    "mlp_b1",
    "mlp_w2",
    "mlp_b2",
];

const PSEUDO_STD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptParams {
    l: usize,
    d: usize,
    h: usize,
    /// Tensors in [`PARAM_NAMES`] order. LSTM gate blocks are laid out as
    /// input, forget, cell, output along the columns.
    tensors: Vec<Matrix>,
}

/// Gradients with the same layout as [`PromptParams`].
pub type PromptGrads = Vec<Matrix>;

/// `l` vectors of dimension `d`, in slot order.
pub type PromptVectors = Vec<Vec<f64>>;

fn shapes(l: usize, d: usize, h: usize) -> [(usize, usize); 11] {
    [
        (l, d),
        (d, 4 * h),
        (h, 4 * h),
        (1, 4 * h),
        (d, 4 * h),
        (h, 4 * h),
        (1, 4 * h),
        (2 * h, d),
        (1, d),
        (d, d),
        (1, d),
    ]
}

impl PromptParams {
    /// Pseudo-table entries from N(0, 0.1²); every other tensor uniform in
    /// `±1/sqrt(fan_in)`.
    pub fn init(seed: u64, l: usize, d: usize, h: usize) -> Result<Self, PromptError> {
        if l == 0 || d == 0 || h == 0 {
            return Err(PromptError::BadDimensions { l, d, h });
        }
        let mut rng = substream(seed, "prompt-init");
        let normal = Normal::new(0.0, PSEUDO_STD).expect("valid std");
        let fan_in = [0, d, h, h, d, h, h, 2 * h, 2 * h, d, d];
        let tensors = shapes(l, d, h)
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| {
                if i == 0 {
                    let data = (0..r * c).map(|_| normal.sample(&mut rng)).collect();
                    Matrix::from_vec(r, c, data)
                } else {
                    Matrix::uniform(r, c, 1.0 / (fan_in[i] as f64).sqrt(), &mut rng)
                }
            })
            .collect();
        Ok(PromptParams { l, d, h, tensors })
    }

    /// Rebuilds parameters from named tensors, checking every shape.
    pub fn from_named(
        l: usize,
        d: usize,
        h: usize,
        mut named: Vec<(String, Matrix)>,
    ) -> Result<Self, PromptError> {
        if l == 0 || d == 0 || h == 0 {
            return Err(PromptError::BadDimensions { l, d, h });
        }
        let mut tensors = Vec::with_capacity(PARAM_NAMES.len());
        for (name, expected) in PARAM_NAMES.iter().zip(shapes(l, d, h)) {
            let pos = named
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| PromptError::Missing(name.to_string()))?;
            let (_, m) = named.swap_remove(pos);
            if m.shape() != expected {
                return Err(PromptError::Shape {
                    name: name.to_string(),
                    expected,
                    got: m.shape(),
                });
            }
            if !m.is_finite() {
                return Err(PromptError::NonFinite(name.to_string()));
            }
            tensors.push(m);
        }
        Ok(PromptParams { l, d, h, tensors })
    }

    pub fn slots(&self) -> usize {
        self.l
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn hidden(&self) -> usize {
        self.h
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Matrix)> {
        PARAM_NAMES.iter().copied().zip(&self.tensors)
    }

    pub fn pseudo_table(&self) -> &Matrix {
        &self.tensors[0]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    pub fn zero_grads(&self) -> PromptGrads {
        self.tensors
            .iter()
            .map(|t| Matrix::zeros(t.rows(), t.cols()))
            .collect()
    }

    /// Prompt vectors for the current parameters.
    pub fn encode(&self) -> PromptVectors {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let out = self.build(&mut tape, &vars);
        let m = tape.value(out);
        (0..self.l).map(|i| m.row(i).to_vec()).collect()
    }

    /// Gradient of `Σ upstream ⊙ encode()` with respect to every tensor.
    pub fn backward(&self, upstream: &Matrix) -> PromptGrads {
        assert_eq!(upstream.shape(), (self.l, self.d), "upstream shape");
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, true);
        let out = self.build(&mut tape, &vars);
        let mut grads = tape.backward(out, upstream.clone());
        vars.iter()
            .zip(&self.tensors)
            .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Matrix::zeros(t.rows(), t.cols())))
            .collect()
    }

    fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                let t = Arc::new(t.clone());
                if trainable {
                    tape.param(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect()
    }

    fn lstm(&self, tape: &mut Tape, inputs: &[Var], w: &[Var]) -> Vec<Var> {
        let h = self.h;
        let mut state = tape.constant(Arc::new(Matrix::zeros(1, h)));
        let mut cell = state;
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let a = tape.matmul(x, w[0]);
            let b = tape.matmul(state, w[1]);
            let gates = tape.add(a, b);
            let gates = tape.add_row(gates, w[2]);
            let i = tape.slice_cols(gates, 0, h);
            let i = tape.sigmoid(i);
            let f = tape.slice_cols(gates, h, h);
            let f = tape.sigmoid(f);
            let g = tape.slice_cols(gates, 2 * h, h);
            let g = tape.tanh(g);
            let o = tape.slice_cols(gates, 3 * h, h);
            let o = tape.sigmoid(o);
            let keep = tape.mul(f, cell);
            let write = tape.mul(i, g);
            cell = tape.add(keep, write);
            let squashed = tape.tanh(cell);
            state = tape.mul(o, squashed);
            out.push(state);
        }
        out
    }

    /// Builds the `l × d` prompt matrix on the tape.
    fn build(&self, tape: &mut Tape, v: &[Var]) -> Var {
        let rows: Vec<Var> = (0..self.l).map(|i| tape.gather_rows(v[0], &[i])).collect();
        let fwd = self.lstm(tape, &rows, &v[1..4]);
        let reversed: Vec<Var> = rows.iter().rev().copied().collect();
        let mut bwd = self.lstm(tape, &reversed, &v[4..7]);
        bwd.reverse();
        let states: Vec<Var> = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| tape.concat_cols(&[f, b]))
            .collect();
        let x = tape.concat_rows(&states);
        let hidden = tape.matmul(x, v[7]);
        let hidden = tape.add_row(hidden, v[8]);
        let hidden = tape.relu(hidden);
        let out = tape.matmul(hidden, v[9]);
        tape.add_row(out, v[10])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = PromptParams::init(3, 12, 16, 8).unwrap();
        let b = PromptParams::init(3, 12, 16, 8).unwrap();
        let c = PromptParams::init(4, 12, 16, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.pseudo_table().shape(), (12, 16));
        assert_eq!(a.tensors()[7].rows(), 16);
        assert!(PromptParams::init(0, 0, 16, 8).is_err());
    }

    #[test]
    fn single_slot_encodes_to_one_vector() {
        let p = PromptParams::init(1, 1, 6, 3).unwrap();
        let out = p.encode();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].len(), 6);
    }

    #[test]
    fn perturbing_one_row_moves_every_slot() {
        let p = PromptParams::init(9, 6, 8, 4).unwrap();
        let before = p.encode();
        let mut q = p.clone();
        let j = 2;
        for c in 0..8 {
            let v = q.tensors[0].get(j, c);
            q.tensors[0].set(j, c, v + 0.5);
        }
        let after = q.encode();
        for i in 0..6 {
            assert!(before[i].iter().zip(&after[i]).any(|(a, b)| a != b), "slot {i} unchanged");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = PromptParams::init(5, 4, 6, 3).unwrap();
        let upstream = Matrix::from_vec(4, 6, vec![1.0; 24]);
        let grads = p.backward(&upstream);
        let probe = |q: &PromptParams| -> f64 { q.encode().iter().flatten().sum() };
        let h = 1e-5;
        for t in 0..PARAM_NAMES.len() {
            let (rows, cols) = p.tensors[t].shape();
            for r in 0..rows {
                for c in 0..cols {
                    let mut plus = p.clone();
                    plus.tensors[t].set(r, c, p.tensors[t].get(r, c) + h);
                    let mut minus = p.clone();
                    minus.tensors[t].set(r, c, p.tensors[t].get(r, c) - h);
                    let numeric = (probe(&plus) - probe(&minus)) / (2.0 * h);
                    let analytic = grads[t].get(r, c);
                    let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                    assert!(rel < 1e-4, "{} [{r},{c}]: {analytic} vs {numeric}", PARAM_NAMES[t]);
                }
            }
        }
    }

    #[test]
    fn named_round_trip() {
        let p = PromptParams::init(2, 3, 4, 2).unwrap();
        let named: Vec<(String, Matrix)> = p.named().map(|(n, m)| (n.to_string(), m.clone())).collect();
        assert_eq!(PromptParams::from_named(3, 4, 2, named.clone()).unwrap(), p);
        assert!(PromptParams::from_named(3, 5, 2, named.clone()).is_err());
        assert!(PromptParams::from_named(3, 4, 2, named[1..].to_vec()).is_err());
    }
}
