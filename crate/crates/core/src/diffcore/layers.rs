//! The layer set used by the networks: an LSTM cell, fully connected layers
//! (ELU or linear) and inverted dropout.
//!
//! Parameter naming, for a layer registered under `prefix`:
//!
//! | layer     | tensors                                                     |
//! |-----------|-------------------------------------------------------------|
//! | recurrent | `prefix.w_x [d, 4H]`, `prefix.w_h [H, 4H]`, `prefix.b [4H]`  |
//! | fc        | `prefix.w [in, out]`, `prefix.b [out]`                       |
//!
//! LSTM gate blocks are ordered `[input | forget | candidate | output]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::ModelParams;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Recurrent,
    FcElu,
    FcLinear,
    Dropout,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Output width. Ignored for dropout, which keeps its input width.
    #[serde(default)]
    pub width: usize,
    /// Dropout probability applied to the layer output at train time.
    #[serde(default)]
    pub dropout: f64,
}

impl LayerSpec {
    pub fn lstm(width: usize) -> Self {
        Self {
            kind: LayerKind::Recurrent,
            width,
            dropout: 0.0,
        }
    }

    pub fn elu(width: usize, dropout: f64) -> Self {
        Self {
            kind: LayerKind::FcElu,
            width,
            dropout,
        }
    }

    pub fn linear(width: usize) -> Self {
        Self {
            kind: LayerKind::FcLinear,
            width,
            dropout: 0.0,
        }
    }

    pub fn dropout(p: f64) -> Self {
        Self {
            kind: LayerKind::Dropout,
            width: 0,
            dropout: p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != LayerKind::Dropout && self.width == 0 {
            return Err(Error::config(format!("{:?} layer with zero width", self.kind)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Output width given the input width.
    pub fn output_width(&self, input: usize) -> usize {
        match self.kind {
            LayerKind::Dropout => input,
            _ => self.width,
        }
    }
}

fn uniform<F: Scalar, R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor<F> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| F::of(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

/// Registers freshly initialized parameters for `spec` under `prefix` and
/// returns the layer's output width.
pub fn init_layer<F: Scalar, R: Rng>(
    params: &mut ModelParams<F>,
    prefix: &str,
    spec: &LayerSpec,
    input: usize,
    rng: &mut R,
) -> Result<usize> {
    spec.validate()?;
    match spec.kind {
        LayerKind::Recurrent => {
            let h = spec.width;
            let glorot = (6.0 / (input + 4 * h) as f64).sqrt();
            params.insert(format!("{prefix}.w_x"), uniform(rng, &[input, 4 * h], glorot), false)?;
            let small = 1.0 / (h as f64).sqrt();
            params.insert(format!("{prefix}.w_h"), uniform(rng, &[h, 4 * h], small), false)?;
            let mut b = Tensor::zeros(&[4 * h]);
            for v in &mut b.data_mut()[h..2 * h] {
                *v = F::one();
            }
            params.insert(format!("{prefix}.b"), b, true)?;
        }
        LayerKind::FcElu | LayerKind::FcLinear => {
            let bound = (6.0 / (input + spec.width) as f64).sqrt();
            params.insert(format!("{prefix}.w"), uniform(rng, &[input, spec.width], bound), false)?;
            params.insert(format!("{prefix}.b"), Tensor::zeros(&[spec.width]), true)?;
        }
        LayerKind::Dropout => {}
    }
    Ok(spec.output_width(input))
}

/// Leaves for the LSTM parameters registered under `prefix`.
pub struct LstmVars {
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
    pub hidden: usize,
}

impl LstmVars {
    pub fn lookup<F: Scalar>(params: &ModelParams<F>, vars: &[Var], prefix: &str) -> Result<Self> {
        let slot = |name: &str| {
            params
                .slot(&format!("{prefix}.{name}"))
                .ok_or_else(|| Error::config(format!("missing parameter {prefix}.{name}")))
        };
        let w_h = slot("w_h")?;
        Ok(Self {
            w_x: vars[slot("w_x")?],
            w_h: vars[w_h],
            b: vars[slot("b")?],
            hidden: params.entry(w_h).tensor.rows(),
        })
    }
}

pub struct FcVars {
    pub w: Var,
    pub b: Var,
}

impl FcVars {
    pub fn lookup<F: Scalar>(params: &ModelParams<F>, vars: &[Var], prefix: &str) -> Result<Self> {
        let slot = |name: &str| {
            params
                .slot(&format!("{prefix}.{name}"))
                .ok_or_else(|| Error::config(format!("missing parameter {prefix}.{name}")))
        };
        Ok(Self {
            w: vars[slot("w")?],
            b: vars[slot("b")?],
        })
    }
}

/// One LSTM step on a batch: `x: [n, d]`, `h, c: [n, H]`.
pub fn lstm_step_expr<F: Scalar>(
    g: &mut Graph<F>,
    x: Var,
    h: Var,
    c: Var,
    p: &LstmVars,
) -> Result<(Var, Var)> {
    let zx = g.matmul(x, p.w_x)?;
    let zh = g.matmul(h, p.w_h)?;
    let z = g.add(zx, zh)?;
    let z = g.add_bias(z, p.b)?;
    let gates = g.lstm_gates(z)?;
    let c_next = g.lstm_cell(gates, c)?;
    let h_next = g.lstm_hidden(gates, c_next)?;
    Ok((h_next, c_next))
}

/// Runs an LSTM over `steps` (each `[n, d]`) from a zero state and returns
/// the hidden state after every step.
pub fn lstm_sequence_expr<F: Scalar>(g: &mut Graph<F>, steps: &[Var], p: &LstmVars) -> Result<Vec<Var>> {
    let Some(&first) = steps.first() else {
        return Err(Error::config("lstm over an empty sequence"));
    };
    let n = g.value(first).rows();
    let mut h = g.constant(Tensor::zeros(&[n, p.hidden]));
    let mut c = g.constant(Tensor::zeros(&[n, p.hidden]));
    let mut out = Vec::with_capacity(steps.len());
    for &x in steps {
        (h, c) = lstm_step_expr(g, x, h, c, p)?;
        out.push(h);
    }
    Ok(out)
}

/// `x @ w + b`, followed by ELU when `elu` is set.
pub fn fc_expr<F: Scalar>(g: &mut Graph<F>, x: Var, p: &FcVars, elu: bool) -> Result<Var> {
    let z = g.matmul(x, p.w)?;
    let z = g.add_bias(z, p.b)?;
    Ok(if elu { g.elu(z) } else { z })
}

/// Inverted-dropout mask: each entry is `0` with probability `p`, otherwise
/// `1 / (1 - p)`.
pub fn dropout_mask<F: Scalar, R: Rng>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Tensor<F> {
    let keep = F::of(1.0 / (1.0 - p));
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < p { F::zero() } else { keep })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape product matches")
}

fn as_row<F: Scalar>(t: &Tensor<F>) -> Result<Tensor<F>> {
    t.clone().reshape(vec![1, t.len()])
}

/// Single LSTM step on vectors, for the layer registered under `prefix`.
pub fn lstm_step<F: Scalar>(
    x_t: &Tensor<F>,
    h: &Tensor<F>,
    c: &Tensor<F>,
    params: &ModelParams<F>,
    prefix: &str,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let w_x = params.require(&format!("{prefix}.w_x"))?;
    let w_h = params.require(&format!("{prefix}.w_h"))?;
    let hidden = w_h.rows();
    if x_t.len() != w_x.rows() || h.len() != hidden || c.len() != hidden {
        return Err(Error::config(format!(
            "lstm_step: x {} / h {} / c {} against input {} hidden {}",
            x_t.len(),
            h.len(),
            c.len(),
            w_x.rows(),
            hidden
        )));
    }
    super::eval(params, |g, vars| {
        let p = LstmVars::lookup(params, vars, prefix)?;
        let x = g.constant(as_row(x_t)?);
        let hv = g.constant(as_row(h)?);
        let cv = g.constant(as_row(c)?);
        let (h2, c2) = lstm_step_expr(g, x, hv, cv, &p)?;
        g.check_finite()?;
        Ok((
            Tensor::vector(g.value(h2).data().to_vec()),
            Tensor::vector(g.value(c2).data().to_vec()),
        ))
    })
}

/// Fully connected layer on a vector, for the layer registered under `prefix`.
pub fn fc_forward<F: Scalar>(
    x: &Tensor<F>,
    layer: &LayerSpec,
    params: &ModelParams<F>,
    prefix: &str,
) -> Result<Tensor<F>> {
    let elu = match layer.kind {
        LayerKind::FcElu => true,
        LayerKind::FcLinear => false,
        other => return Err(Error::config(format!("fc_forward on a {other:?} layer"))),
    };
    let w = params.require(&format!("{prefix}.w"))?;
    if x.len() != w.rows() || w.cols() != layer.width {
        return Err(Error::config(format!(
            "fc_forward: input {} against weights {:?} (width {})",
            x.len(),
            w.shape(),
            layer.width
        )));
    }
    super::eval(params, |g, vars| {
        let p = FcVars::lookup(params, vars, prefix)?;
        let xv = g.constant(as_row(x)?);
        let y = fc_expr(g, xv, &p, elu)?;
        Ok(Tensor::vector(g.value(y).data().to_vec()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn lstm_params(d: usize, h: usize, seed: u64) -> ModelParams<f64> {
        let mut p = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_layer(&mut p, "l", &LayerSpec::lstm(h), d, &mut rng).unwrap();
        // Randomize the bias too so every gate path is exercised.
        for v in p.get_mut("l.b").unwrap().data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        p
    }

    fn zeroed(mut p: ModelParams<f64>) -> ModelParams<f64> {
        for slot in 0..p.len() {
            for v in p.tensor_mut(slot).data_mut() {
                *v = 0.0;
            }
        }
        p
    }

    #[test]
    fn zero_weights_halve_the_cell() {
        let p = zeroed(lstm_params(3, 2, 0));
        let x = Tensor::vector(vec![0.3, -2.0, 5.0]);
        let h = Tensor::vector(vec![0.1, 0.9]);
        let c0 = [1.5, -0.4];
        let c = Tensor::vector(c0.to_vec());
        let (h2, c2) = lstm_step(&x, &h, &c, &p, "l").unwrap();
        for j in 0..2 {
            assert!((c2.data()[j] - 0.5 * c0[j]).abs() < 1e-15);
            assert!((h2.data()[j] - 0.5 * (0.5 * c0[j]).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_state_with_zero_bias_stays_zero() {
        let mut p = lstm_params(3, 4, 1);
        for v in p.get_mut("l.b").unwrap().data_mut() {
            *v = 0.0;
        }
        let zero = Tensor::vector(vec![0.0; 4]);
        let (h2, c2) = lstm_step(&Tensor::vector(vec![0.0; 3]), &zero, &zero, &p, "l").unwrap();
        assert!(h2.data().iter().chain(c2.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_matches_gate_by_gate_evaluation() {
        let (d, hdim) = (3, 4);
        let p = lstm_params(d, hdim, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..hdim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..hdim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (h2, c2) = lstm_step(
            &Tensor::vector(x.clone()),
            &Tensor::vector(h.clone()),
            &Tensor::vector(c.clone()),
            &p,
            "l",
        )
        .unwrap();

        let w_x = p.get("l.w_x").unwrap();
        let w_h = p.get("l.w_h").unwrap();
        let b = p.get("l.b").unwrap().data();
        let pre = |col: usize| {
            let mut s = b[col];
            for (r, xv) in x.iter().enumerate() {
                s += xv * w_x.get2(r, col);
            }
            for (r, hv) in h.iter().enumerate() {
                s += hv * w_h.get2(r, col);
            }
            s
        };
        for j in 0..hdim {
            let i_g = sigmoid(pre(j));
            let f_g = sigmoid(pre(hdim + j));
            let g_g = pre(2 * hdim + j).tanh();
            let o_g = sigmoid(pre(3 * hdim + j));
            let c_new = f_g * c[j] + i_g * g_g;
            let h_new = o_g * c_new.tanh();
            assert!((c2.data()[j] - c_new).abs() < 1e-14);
            assert!((h2.data()[j] - h_new).abs() < 1e-14);
        }
    }

    #[test]
    fn lstm_dimension_mismatch() {
        let p = lstm_params(3, 2, 0);
        let r = lstm_step(
            &Tensor::vector(vec![0.0; 4]),
            &Tensor::vector(vec![0.0; 2]),
            &Tensor::vector(vec![0.0; 2]),
            &p,
            "l",
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    fn identity_fc(n: usize, kind: LayerKind) -> (LayerSpec, ModelParams<f64>) {
        let spec = LayerSpec {
            kind,
            width: n,
            dropout: 0.0,
        };
        let mut p = ModelParams::new();
        let mut w = Tensor::zeros(&[n, n]);
        for i in 0..n {
            w.data_mut()[i * n + i] = 1.0;
        }
        p.insert("fc.w", w, false).unwrap();
        p.insert("fc.b", Tensor::zeros(&[n]), true).unwrap();
        (spec, p)
    }

    #[test]
    fn elu_identity_on_nonnegative() {
        let (spec, p) = identity_fc(3, LayerKind::FcElu);
        let x = Tensor::vector(vec![0.0, 1.5, 7.0]);
        assert_eq!(fc_forward(&x, &spec, &p, "fc").unwrap().data(), x.data());
    }

    #[test]
    fn elu_on_negative_input() {
        let (spec, p) = identity_fc(1, LayerKind::FcElu);
        let y = fc_forward(&Tensor::vector(vec![-1.0]), &spec, &p, "fc").unwrap();
        assert!((y.item() - ((-1f64).exp() - 1.0)).abs() < 1e-15);
        assert!((y.item() + 0.632_121).abs() < 1e-6);
    }

    #[test]
    fn linear_with_zero_weights_returns_bias() {
        let (spec, mut p) = identity_fc(2, LayerKind::FcLinear);
        for v in p.get_mut("fc.w").unwrap().data_mut() {
            *v = 0.0;
        }
        p.get_mut("fc.b").unwrap().data_mut().copy_from_slice(&[-3.0, 0.25]);
        let y = fc_forward(&Tensor::vector(vec![9.0, 9.0]), &spec, &p, "fc").unwrap();
        assert_eq!(y.data(), &[-3.0, 0.25]);
    }

    #[test]
    fn fc_dimension_mismatch() {
        let (spec, p) = identity_fc(2, LayerKind::FcLinear);
        assert!(fc_forward(&Tensor::vector(vec![1.0; 3]), &spec, &p, "fc").is_err());
    }

    #[test]
    fn dropout_mask_scales_kept_units() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m: Tensor<f64> = dropout_mask(100, 100, 0.1, &mut rng);
        let kept = m.data().iter().filter(|&&v| v != 0.0).count();
        assert!(m.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.9).abs() < 1e-15));
        assert!((kept as f64 / 1e4 - 0.9).abs() < 0.02);
    }

    #[test]
    fn layer_spec_validation() {
        assert!(LayerSpec::elu(0, 0.0).validate().is_err());
        assert!(LayerSpec::elu(4, 1.0).validate().is_err());
        assert!(LayerSpec::dropout(0.1).validate().is_ok());
    }
}
