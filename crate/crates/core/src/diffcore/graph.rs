//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation eagerly: each call computes the value
//! and appends a node. [`Graph::backward`] then walks the nodes in reverse
//! creation order, which is a valid reverse topological order because a node
//! can only reference nodes created before it.

use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::weibull::special;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<F> {
    Leaf(Option<usize>),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    AddScalar(Var, F),
    Sigmoid(Var),
    Tanh(Var),
    Elu(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
    Relu(Var),
    ClampMin(Var, F),
    Recip(Var),
    LnGamma(Var),
    SliceCols(Var, usize),
    Sum(Var),
    LstmGates(Var),
    LstmCell(Var, Var),
    LstmHidden(Var, Var),
}

impl<F> Op<F> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf(Some(_)) => "param",
            Op::Leaf(None) => "const",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Elu(_) => "elu",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Softplus(_) => "softplus",
            Op::Relu(_) => "relu",
            Op::ClampMin(..) => "clamp_min",
            Op::Recip(_) => "recip",
            Op::LnGamma(_) => "ln_gamma",
            Op::SliceCols(..) => "slice_cols",
            Op::Sum(_) => "sum",
            Op::LstmGates(_) => "lstm_gates",
            Op::LstmCell(..) => "lstm_cell",
            Op::LstmHidden(..) => "lstm_hidden",
        }
    }
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
}

/// Recorded computation. Build one per forward pass.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus<F: Scalar>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

fn elu<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x
    } else {
        x.exp_m1()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Leaf bound to parameter slot `slot`; its gradient is reported by
    /// [`Graph::backward`].
    pub fn param(&mut self, slot: usize, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf(Some(slot)))
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf(None))
    }

    pub fn scalar(&mut self, v: F) -> Var {
        self.constant(Tensor::scalar(v))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::config(format!("{what}: shape {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    /// `a @ b` for `a: [n, k]`, `b: [k, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k) = (av.rows(), av.cols());
        let (k2, m) = (bv.rows(), bv.cols());
        if k != k2 || bv.shape().len() != 2 {
            return Err(Error::config(format!(
                "matmul: {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let mut out = vec![F::zero(); n * m];
        matmul_acc(av.data(), bv.data(), &mut out, n, k, m);
        let value = Tensor::new(vec![n, m], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Adds bias vector `b: [m]` to every row of `x: [n, m]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let m = xv.cols();
        if bv.len() != m {
            return Err(Error::config(format!(
                "add_bias: {:?} + {:?}",
                xv.shape(),
                bv.shape()
            )));
        }
        let mut value = xv.clone();
        for row in value.data_mut().chunks_mut(m) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        Ok(self.push(value, Op::AddBias(x, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: F) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -F::one())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.tanh());
        self.push(value, Op::Tanh(a))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(elu);
        self.push(value, Op::Elu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.exp());
        self.push(value, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.ln());
        self.push(value, Op::Ln(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        self.push(value, Op::Softplus(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(F::zero()));
        self.push(value, Op::Relu(a))
    }

    /// `max(a, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: F) -> Var {
        let value = self.value(a).map(|x| x.max(floor));
        self.push(value, Op::ClampMin(a, floor))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| F::one() / x);
        self.push(value, Op::Recip(a))
    }

    /// Elementwise `ln Γ(x)` for positive `x`.
    pub fn ln_gamma(&mut self, a: Var) -> Var {
        let value = self.value(a).map(special::ln_gamma);
        self.push(value, Op::LnGamma(a))
    }

    /// Columns `start..start + len` of a 2-d tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let (n, m) = (av.rows(), av.cols());
        if start + len > m {
            return Err(Error::config(format!(
                "slice_cols {start}..{} of width {m}",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(n * len);
        for row in av.data().chunks(m) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let value = Tensor::new(vec![n, len], out)?;
        Ok(self.push(value, Op::SliceCols(a, start)))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Gate activations of an LSTM pre-activation `z: [n, 4H]` laid out as
    /// `[input | forget | candidate | output]`.
    pub fn lstm_gates(&mut self, z: Var) -> Result<Var> {
        let zv = self.value(z);
        let width = zv.cols();
        if !width.is_multiple_of(4) {
            return Err(Error::config(format!("lstm_gates: width {width} not 4H")));
        }
        let h = width / 4;
        let mut value = zv.clone();
        for row in value.data_mut().chunks_mut(width) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if j / h == 2 { v.tanh() } else { sigmoid(*v) };
            }
        }
        Ok(self.push(value, Op::LstmGates(z)))
    }

    /// `c' = f * c + i * g` from activated gates.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Result<Var> {
        let (gv, cv) = (self.value(gates), self.value(c_prev));
        let h = cv.cols();
        if gv.cols() != 4 * h || gv.rows() != cv.rows() {
            return Err(Error::config(format!(
                "lstm_cell: gates {:?} vs state {:?}",
                gv.shape(),
                cv.shape()
            )));
        }
        let mut out = vec![F::zero(); cv.len()];
        for (r, (grow, crow)) in gv.data().chunks(4 * h).zip(cv.data().chunks(h)).enumerate() {
            for j in 0..h {
                out[r * h + j] = grow[h + j] * crow[j] + grow[j] * grow[2 * h + j];
            }
        }
        let value = Tensor::new(cv.shape().to_vec(), out)?;
        Ok(self.push(value, Op::LstmCell(gates, c_prev)))
    }

    /// `h' = o * tanh(c')`.
    pub fn lstm_hidden(&mut self, gates: Var, c: Var) -> Result<Var> {
        let (gv, cv) = (self.value(gates), self.value(c));
        let h = cv.cols();
        if gv.cols() != 4 * h || gv.rows() != cv.rows() {
            return Err(Error::config(format!(
                "lstm_hidden: gates {:?} vs state {:?}",
                gv.shape(),
                cv.shape()
            )));
        }
        let mut out = vec![F::zero(); cv.len()];
        for (r, (grow, crow)) in gv.data().chunks(4 * h).zip(cv.data().chunks(h)).enumerate() {
            for j in 0..h {
                out[r * h + j] = grow[3 * h + j] * crow[j].tanh();
            }
        }
        let value = Tensor::new(cv.shape().to_vec(), out)?;
        Ok(self.push(value, Op::LstmHidden(gates, c)))
    }

    /// First node holding a non-finite value, if any.
    pub fn check_finite(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(bad) = node.value.data().iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    node: i,
                    op: node.op.name(),
                    detail: format!("value {bad} in tensor of shape {:?}", node.value.shape()),
                });
            }
        }
        Ok(())
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf,
    /// indexed by slot. Slots that never appear stay `None`.
    pub fn backward(&self, loss: Var, n_slots: usize) -> Result<Vec<Option<Tensor<F>>>> {
        if self.value(loss).len() != 1 {
            return Err(Error::config(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.check_finite()?;
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), F::one()));
        let mut out: Vec<Option<Tensor<F>>> = vec![None; n_slots];

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match node.op {
                Op::Leaf(Some(slot)) => {
                    if slot >= n_slots {
                        return Err(Error::config(format!("param slot {slot} >= {n_slots}")));
                    }
                    accumulate(&mut out[slot], g);
                }
                Op::Leaf(None) => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(a), self.value(b));
                    let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                    let mut ga = vec![F::zero(); n * k];
                    matmul_bt_acc(g.data(), bv.data(), &mut ga, n, k, m);
                    let mut gb = vec![F::zero(); k * m];
                    matmul_at_acc(av.data(), g.data(), &mut gb, n, k, m);
                    accumulate(&mut grads[a.0], Tensor::new(av.shape().to_vec(), ga)?);
                    accumulate(&mut grads[b.0], Tensor::new(bv.shape().to_vec(), gb)?);
                }
                Op::AddBias(x, b) => {
                    let bv = self.value(b);
                    let m = bv.len();
                    let mut gb = vec![F::zero(); m];
                    for row in g.data().chunks(m) {
                        for (o, &v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads[b.0], Tensor::new(bv.shape().to_vec(), gb)?);
                    accumulate(&mut grads[x.0], g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[b.0], g.map(|v| -v));
                    accumulate(&mut grads[a.0], g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(b), |gv, bv| gv * bv);
                    let gb = g.zip_map(self.value(a), |gv, av| gv * av);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Scale(a, c) => accumulate(&mut grads[a.0], g.map(|v| v * c)),
                Op::AddScalar(a, _) => accumulate(&mut grads[a.0], g),
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(y, |gv, yv| gv * yv * (F::one() - yv));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(y, |gv, yv| gv * (F::one() - yv * yv));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Elu(a) => {
                    let x = self.value(a);
                    let d = x.zip_map(y, |xv, yv| if xv > F::zero() { F::one() } else { yv + F::one() });
                    accumulate(&mut grads[a.0], g.zip_map(&d, |gv, dv| gv * dv));
                }
                Op::Exp(a) => accumulate(&mut grads[a.0], g.zip_map(y, |gv, yv| gv * yv)),
                Op::Ln(a) => {
                    let ga = g.zip_map(self.value(a), |gv, xv| gv / xv);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Softplus(a) => {
                    let ga = g.zip_map(self.value(a), |gv, xv| gv * sigmoid(xv));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(a), |gv, xv| {
                        if xv > F::zero() {
                            gv
                        } else {
                            F::zero()
                        }
                    });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::ClampMin(a, floor) => {
                    let ga = g.zip_map(self.value(a), |gv, xv| if xv >= floor { gv } else { F::zero() });
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Recip(a) => accumulate(&mut grads[a.0], g.zip_map(y, |gv, yv| -gv * yv * yv)),
                Op::LnGamma(a) => {
                    let ga = g.zip_map(self.value(a), |gv, xv| gv * special::digamma(xv));
                    accumulate(&mut grads[a.0], ga);
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(a);
                    let (m, len) = (av.cols(), g.cols());
                    let mut ga = Tensor::zeros(av.shape());
                    for (row, grow) in ga.data_mut().chunks_mut(m).zip(g.data().chunks(len)) {
                        row[start..start + len].copy_from_slice(grow);
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Sum(a) => {
                    let ga = Tensor::full(self.value(a).shape(), g.item());
                    accumulate(&mut grads[a.0], ga);
                }
                Op::LstmGates(z) => {
                    let width = y.cols();
                    let h = width / 4;
                    let mut gz = g;
                    for (grow, yrow) in gz.data_mut().chunks_mut(width).zip(y.data().chunks(width)) {
                        for j in 0..width {
                            let yv = yrow[j];
                            grow[j] *= if j / h == 2 {
                                F::one() - yv * yv
                            } else {
                                yv * (F::one() - yv)
                            };
                        }
                    }
                    accumulate(&mut grads[z.0], gz);
                }
                Op::LstmCell(gates, c_prev) => {
                    let (gv, cv) = (self.value(gates), self.value(c_prev));
                    let h = cv.cols();
                    let mut g_gates = Tensor::zeros(gv.shape());
                    let mut g_c = Tensor::zeros(cv.shape());
                    for r in 0..cv.rows() {
                        let grow = &gv.data()[r * 4 * h..(r + 1) * 4 * h];
                        let crow = &cv.data()[r * h..(r + 1) * h];
                        let dc = &g.data()[r * h..(r + 1) * h];
                        let out = &mut g_gates.data_mut()[r * 4 * h..(r + 1) * 4 * h];
                        for j in 0..h {
                            out[j] = dc[j] * grow[2 * h + j];
                            out[h + j] = dc[j] * crow[j];
                            out[2 * h + j] = dc[j] * grow[j];
                        }
                        let gcrow = &mut g_c.data_mut()[r * h..(r + 1) * h];
                        for j in 0..h {
                            gcrow[j] = dc[j] * grow[h + j];
                        }
                    }
                    accumulate(&mut grads[gates.0], g_gates);
                    accumulate(&mut grads[c_prev.0], g_c);
                }
                Op::LstmHidden(gates, c) => {
                    let (gv, cv) = (self.value(gates), self.value(c));
                    let h = cv.cols();
                    let mut g_gates = Tensor::zeros(gv.shape());
                    let mut g_c = Tensor::zeros(cv.shape());
                    for r in 0..cv.rows() {
                        let grow = &gv.data()[r * 4 * h..(r + 1) * 4 * h];
                        let crow = &cv.data()[r * h..(r + 1) * h];
                        let dh = &g.data()[r * h..(r + 1) * h];
                        for j in 0..h {
                            let t = crow[j].tanh();
                            g_gates.data_mut()[r * 4 * h + 3 * h + j] = dh[j] * t;
                            g_c.data_mut()[r * h + j] = dh[j] * grow[3 * h + j] * (F::one() - t * t);
                        }
                    }
                    accumulate(&mut grads[gates.0], g_gates);
                    accumulate(&mut grads[c.0], g_c);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate<F: Scalar>(slot: &mut Option<Tensor<F>>, g: Tensor<F>) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_overflow_safe() {
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(40.0f64) - 40.0).abs() < 1e-12);
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0);
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_the_input() {
        let mut g = Graph::<f64>::new();
        let p = g.param(0, Tensor::vector(vec![1.0, -2.0, 0.5]));
        let sq = g.mul(p, p).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss, 1).unwrap();
        assert_eq!(grads[0].as_ref().unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn non_finite_value_names_the_node() {
        let mut g = Graph::<f64>::new();
        let p = g.param(0, Tensor::vector(vec![-1.0]));
        let l = g.ln(p);
        let loss = g.sum(l);
        match g.backward(loss, 1) {
            Err(Error::Numeric { node, op, .. }) => {
                assert_eq!(node, l.index());
                assert_eq!(op, "ln");
            }
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let p = g.param(0, Tensor::vector(vec![1.0, 2.0]));
        assert!(g.backward(p, 1).is_err());
    }
}
