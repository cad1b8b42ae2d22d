use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::{ArchitectureSpec, ModelKind, HEAD_FP, HEAD_RUL, HEAD_WEIBULL};
use crate::diffcore::graph::{sigmoid, Graph, Var};
use crate::diffcore::layers::{dropout_mask, fc_expr, init_layer, lstm_sequence_expr, FcVars, LstmVars};
use crate::diffcore::{eval, LayerKind, LayerSpec, ModelParams, Tensor};
use crate::error::{Error, Result};
use crate::pipeline::Window;
use crate::scalar::Scalar;
use crate::weibull::{transform_outputs, HeadOutputs, WeibullParams};

/// Windows stacked for a forward pass: one `[n, d]` tensor per time step.
#[derive(Clone, Debug)]
pub struct Batch<F> {
    pub steps: Vec<Tensor<F>>,
    pub n: usize,
}

impl<F: Scalar> Batch<F> {
    pub fn from_windows(windows: &[&Window], w: usize, d: usize) -> Result<Self> {
        if let Some(bad) = windows.iter().find(|x| x.w != w || x.d != d) {
            return Err(Error::config(format!(
                "window {}@{} is {}x{}, network expects {w}x{d}",
                bad.device_id, bad.end_time, bad.w, bad.d
            )));
        }
        let n = windows.len();
        let steps = (0..w)
            .map(|s| {
                let data = windows
                    .iter()
                    .flat_map(|x| x.step(s).iter().map(|&v| F::of(v)))
                    .collect();
                Tensor::new(vec![n, d], data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { steps, n })
    }
}

/// Graph nodes of each head's output.
#[derive(Clone, Debug, Default)]
pub struct HeadVars {
    pub heads: BTreeMap<String, Var>,
}

impl HeadVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.heads
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("network has no {name} head")))
    }
}

/// Raw head outputs for a set of windows, row per window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawOutputs<F> {
    /// Two-way logits `[z0, z1]`.
    pub fp_logits: Option<Vec<[F; 2]>>,
    pub rul: Option<Vec<F>>,
    /// Weibull head outputs `[o1, o2]`.
    pub weibull: Option<Vec<[F; 2]>>,
}

/// A network with its architecture and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<F: Scalar> {
    pub kind: ModelKind,
    pub arch: ArchitectureSpec,
    pub input_dim: usize,
    pub window: usize,
    pub params: ModelParams<F>,
}

fn trunk_prefix(i: usize) -> String {
    format!("trunk.{i}")
}

fn head_prefix(name: &str, i: usize) -> String {
    format!("head.{name}.{i}")
}

/// `p(failure)` from two-way logits.
pub fn fp_prob_from_logits<F: Scalar>(z: [F; 2]) -> F {
    sigmoid(z[1] - z[0])
}

impl<F: Scalar> Network<F> {
    pub fn new(kind: ModelKind, arch: ArchitectureSpec, input_dim: usize, window: usize, seed: u64) -> Result<Self> {
        arch.validate(kind)?;
        if input_dim == 0 || window == 0 {
            return Err(Error::config("input width and window size must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        let mut width = input_dim;
        for (i, l) in arch.trunk.iter().enumerate() {
            width = init_layer(&mut params, &trunk_prefix(i), l, width, &mut rng)?;
        }
        let trunk_out = width;
        for h in &arch.heads {
            let mut width = trunk_out;
            for (i, l) in h.layers.iter().enumerate() {
                width = init_layer(&mut params, &head_prefix(&h.name, i), l, width, &mut rng)?;
            }
        }
        Ok(Self {
            kind,
            arch,
            input_dim,
            window,
            params,
        })
    }

    /// Rebuilds a network from its description and stored parameters,
    /// checking that every expected tensor is present with the right shape.
    pub fn with_params(
        kind: ModelKind,
        arch: ArchitectureSpec,
        input_dim: usize,
        window: usize,
        params: ModelParams<F>,
    ) -> Result<Self> {
        let reference = Network::<F>::new(kind, arch, input_dim, window, 0)?;
        if reference.params.len() != params.len() {
            return Err(Error::config(format!(
                "checkpoint has {} tensors, architecture needs {}",
                params.len(),
                reference.params.len()
            )));
        }
        for e in reference.params.iter() {
            let got = params
                .get(&e.name)
                .ok_or_else(|| Error::config(format!("checkpoint lacks {}", e.name)))?;
            if got.shape() != e.tensor.shape() {
                return Err(Error::config(format!(
                    "{}: checkpoint shape {:?}, architecture needs {:?}",
                    e.name,
                    got.shape(),
                    e.tensor.shape()
                )));
            }
        }
        Ok(Self { params, ..reference })
    }

    fn layer_stack(
        &self,
        g: &mut Graph<F>,
        vars: &[Var],
        mut x: Var,
        layers: &[LayerSpec],
        prefix: &dyn Fn(usize) -> String,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        for (i, l) in layers.iter().enumerate() {
            let elu = match l.kind {
                LayerKind::Recurrent => continue,
                LayerKind::FcElu => true,
                LayerKind::FcLinear => false,
                LayerKind::Dropout => {
                    if let Some(r) = rng.as_deref_mut() {
                        x = apply_dropout(g, x, l.dropout, r)?;
                    }
                    continue;
                }
            };
            let p = FcVars::lookup(&self.params, vars, &prefix(i))?;
            x = fc_expr(g, x, &p, elu)?;
            if l.dropout > 0.0 {
                if let Some(r) = rng.as_deref_mut() {
                    x = apply_dropout(g, x, l.dropout, r)?;
                }
            }
        }
        Ok(x)
    }

    /// Builds every head's output for `steps` (each `[n, d]`). Dropout is
    /// active iff `rng` is given.
    pub fn forward_expr(
        &self,
        g: &mut Graph<F>,
        vars: &[Var],
        steps: &[Var],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<HeadVars> {
        if steps.len() != self.window {
            return Err(Error::config(format!(
                "{} time steps, network expects {}",
                steps.len(),
                self.window
            )));
        }
        if let Some(&s) = steps.first() {
            if g.value(s).cols() != self.input_dim {
                return Err(Error::config(format!(
                    "input width {}, network expects {}",
                    g.value(s).cols(),
                    self.input_dim
                )));
            }
        }
        let mut seq = steps.to_vec();
        let recurrent = self
            .arch
            .trunk
            .iter()
            .take_while(|l| l.kind == LayerKind::Recurrent)
            .count();
        for i in 0..recurrent {
            let p = LstmVars::lookup(&self.params, vars, &trunk_prefix(i))?;
            seq = lstm_sequence_expr(g, &seq, &p)?;
        }
        let last = *seq.last().expect("window >= 1");
        let trunk = self.layer_stack(g, vars, last, &self.arch.trunk, &trunk_prefix, &mut rng)?;
        let mut out = HeadVars::default();
        for h in &self.arch.heads {
            let name = h.name.clone();
            let y = self.layer_stack(g, vars, trunk, &h.layers, &|i| head_prefix(&name, i), &mut rng)?;
            out.heads.insert(h.name.clone(), y);
        }
        Ok(out)
    }

    /// Deterministic forward pass (no dropout) over `windows`, in chunks.
    pub fn forward(&self, windows: &[&Window]) -> Result<RawOutputs<F>> {
        const CHUNK: usize = 512;
        let mut out = RawOutputs::default();
        let has = |name| self.arch.head(name).is_some();
        if has(HEAD_FP) {
            out.fp_logits = Some(Vec::with_capacity(windows.len()));
        }
        if has(HEAD_RUL) {
            out.rul = Some(Vec::with_capacity(windows.len()));
        }
        if has(HEAD_WEIBULL) {
            out.weibull = Some(Vec::with_capacity(windows.len()));
        }
        for chunk in windows.chunks(CHUNK) {
            let batch = Batch::from_windows(chunk, self.window, self.input_dim)?;
            eval(&self.params, |g, vars| {
                let steps: Vec<Var> = batch.steps.iter().map(|t| g.constant(t.clone())).collect();
                let heads = self.forward_expr(g, vars, &steps, None)?;
                g.check_finite()?;
                let pairs = |t: &Tensor<F>| t.data().chunks(2).map(|c| [c[0], c[1]]).collect::<Vec<_>>();
                if let Some(v) = out.fp_logits.as_mut() {
                    v.extend(pairs(g.value(heads.get(HEAD_FP)?)));
                }
                if let Some(v) = out.rul.as_mut() {
                    v.extend_from_slice(g.value(heads.get(HEAD_RUL)?).data());
                }
                if let Some(v) = out.weibull.as_mut() {
                    v.extend(pairs(g.value(heads.get(HEAD_WEIBULL)?)));
                }
                Ok(())
            })?;
        }
        Ok(out)
    }

    fn single(&self, window: &Window) -> Result<RawOutputs<F>> {
        self.forward(&[window])
    }

    /// Weibull parameters for one window (DW networks).
    pub fn dw_forward(&self, window: &Window) -> Result<WeibullParams<F>> {
        let o = self
            .single(window)?
            .weibull
            .ok_or_else(|| Error::config(format!("{} network has no Weibull head", self.kind.name())))?;
        Ok(transform_outputs(HeadOutputs { o1: o[0][0], o2: o[0][1] }))
    }

    /// `(fp_prob, rul_hat)` for one window (MTL networks).
    pub fn mtl_forward(&self, window: &Window) -> Result<(F, F)> {
        let o = self.single(window)?;
        match (o.fp_logits, o.rul) {
            (Some(z), Some(r)) => Ok((fp_prob_from_logits(z[0]), r[0])),
            _ => Err(Error::config(format!("{} network lacks an FP or RUL head", self.kind.name()))),
        }
    }

    pub fn cast<G: Scalar>(&self) -> Network<G> {
        Network {
            kind: self.kind,
            arch: self.arch.clone(),
            input_dim: self.input_dim,
            window: self.window,
            params: self.params.cast(),
        }
    }

    /// Sets the bias of a head's final layer.
    pub fn set_head_bias(&mut self, head: &str, values: &[F]) -> Result<()> {
        let h = self
            .arch
            .head(head)
            .ok_or_else(|| Error::config(format!("no {head} head")))?;
        let last = h
            .layers
            .iter()
            .rposition(|l| l.kind != LayerKind::Dropout)
            .expect("validated head");
        let name = format!("{}.b", head_prefix(head, last));
        let b = self
            .params
            .get_mut(&name)
            .ok_or_else(|| Error::config(format!("missing {name}")))?;
        if b.len() != values.len() {
            return Err(Error::config(format!("{name} has {} entries", b.len())));
        }
        b.data_mut().copy_from_slice(values);
        Ok(())
    }
}

fn apply_dropout<F: Scalar>(g: &mut Graph<F>, x: Var, p: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
    if p <= 0.0 {
        return Ok(x);
    }
    let (rows, cols) = (g.value(x).rows(), g.value(x).cols());
    let mask = g.constant(dropout_mask(rows, cols, p, rng));
    g.mul(x, mask)
}
