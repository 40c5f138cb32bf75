use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::graph::{Grads, Graph, Var};
use super::tensor::Tensor;

/// Ordered list of parameter tensors belonging to one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ParamSet {
    tensors: Vec<Tensor>,
}

/// Graph handles for a [`ParamSet`] bound onto one tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, i: usize) -> Var {
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamSet {
    pub fn push(&mut self, t: Tensor) -> usize {
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Places every tensor on the tape; frozen sets are constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { g.leaf(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        Bound { vars }
    }

    /// Gradients for each tensor, zero where the loss did not reach it.
    pub fn collect_grads(&self, bound: &Bound, grads: &Grads) -> Vec<Tensor> {
        self.tensors
            .iter()
            .zip(&bound.vars)
            .map(|(t, &v)| grads.get_or_zeros(v, t.shape()))
            .collect()
    }

    /// Flat little-endian blob: tensor count, then per tensor rank, dims and values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.count() * 8);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let mut pos = 0usize;
        let next_u64 = |pos: &mut usize| -> Option<u64> {
            let b = bytes.get(*pos..*pos + 8)?;
            *pos += 8;
            Some(u64::from_le_bytes(b.try_into().ok()?))
        };
        let n = next_u64(&mut pos)? as usize;
        let mut tensors = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let rank = next_u64(&mut pos)? as usize;
            if rank > 8 {
                return None;
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(next_u64(&mut pos)? as usize);
            }
            let len: usize = shape.iter().product();
            let raw = bytes.get(pos..pos.checked_add(len.checked_mul(8)?)?)?;
            pos += len * 8;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(Tensor::new(shape, data));
        }
        (pos == bytes.len()).then_some(Self { tensors })
    }
}

fn uniform_tensor<R: Rng + ?Sized>(rng: &mut R, shape: Vec<usize>, bound: f64) -> Tensor {
    let n = shape.iter().product();
    if bound == 0.0 {
        return Tensor::zeros(shape);
    }
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite init bound");
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect())
}

fn dropout_mask<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], p: f64) -> Tensor {
    let keep = 1.0 - p;
    let n = shape.iter().product();
    let data = (0..n).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
    Tensor::new(shape.to_vec(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecurrentSpec {
    pub hidden: usize,
    pub layers: usize,
}

/// Convolutional sequence network: conv stack, optional LSTM, dense head.
///
/// Input is `[batch, in_channels · in_len]` in channel-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvNetSpec {
    pub in_channels: usize,
    pub in_len: usize,
    pub convs: Vec<ConvLayerSpec>,
    pub recurrent: Option<RecurrentSpec>,
    pub dense: Vec<usize>,
    pub outputs: usize,
    pub dropout: f64,
}

impl ConvNetSpec {
    /// `(channels, length)` after each conv layer.
    pub fn conv_shapes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut len = self.in_len;
        for c in &self.convs {
            assert!(len >= c.kernel, "sequence of length {len} too short for kernel {}", c.kernel);
            len = (len - c.kernel) / c.stride + 1;
            out.push((c.filters, len));
        }
        out
    }

    fn head_input(&self) -> usize {
        let (ch, len) = self.conv_shapes().last().copied().unwrap_or((self.in_channels, self.in_len));
        match self.recurrent {
            Some(r) => r.hidden,
            None => ch * len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvNet {
    pub spec: ConvNetSpec,
    pub params: ParamSet,
}

impl ConvNet {
    pub fn new<R: Rng + ?Sized>(spec: ConvNetSpec, rng: &mut R) -> Self {
        let mut params = ParamSet::default();
        let mut cin = spec.in_channels;
        for c in &spec.convs {
            let fan_in = (cin * c.kernel) as f64;
            params.push(uniform_tensor(rng, vec![c.filters, cin * c.kernel], (6.0 / fan_in).sqrt()));
            params.push(Tensor::zeros(vec![c.filters]));
            cin = c.filters;
        }
        if let Some(r) = spec.recurrent {
            let mut input = cin;
            for _ in 0..r.layers {
                let bound = 1.0 / (r.hidden as f64).sqrt();
                params.push(uniform_tensor(rng, vec![input, 4 * r.hidden], bound));
                params.push(uniform_tensor(rng, vec![r.hidden, 4 * r.hidden], bound));
                let mut b = Tensor::zeros(vec![4 * r.hidden]);
                // Forget-gate bias of one keeps early gradients alive.
                b.data_mut()[r.hidden..2 * r.hidden].fill(1.0);
                params.push(b);
                input = r.hidden;
            }
        }
        let mut width = spec.head_input();
        for &h in spec.dense.iter().chain(std::iter::once(&spec.outputs)) {
            params.push(uniform_tensor(rng, vec![width, h], (6.0 / width as f64).sqrt()));
            params.push(Tensor::zeros(vec![h]));
            width = h;
        }
        Self { spec, params }
    }

    /// Raw output scores `[batch, outputs]`. Dropout is active only when a
    /// random source is supplied.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, mut train: Option<&mut dyn rand::RngCore>) -> Var {
        let spec = &self.spec;
        let mut h = x;
        let mut cin = spec.in_channels;
        let mut pi = 0;
        for c in &spec.convs {
            if let (Some(rng), true) = (train.as_deref_mut(), spec.dropout > 0.0) {
                let mask = dropout_mask(rng, g.value(h).shape(), spec.dropout);
                h = g.mul_const(h, mask);
            }
            h = g.conv1d(h, p.var(pi), p.var(pi + 1), cin, c.kernel, c.stride);
            h = g.relu(h);
            pi += 2;
            cin = c.filters;
        }
        if let Some(r) = spec.recurrent {
            let len = spec.conv_shapes().last().map_or(spec.in_len, |s| s.1);
            h = lstm(g, p, &mut pi, h, cin, len, r);
        }
        let n_dense = spec.dense.len();
        for i in 0..=n_dense {
            h = g.matmul(h, p.var(pi));
            h = g.add_row(h, p.var(pi + 1));
            pi += 2;
            if i < n_dense {
                h = g.relu(h);
            }
        }
        h
    }
}

/// Stacked LSTM over a channel-major `[batch, channels · len]` sequence;
/// returns the final hidden state of the top layer.
fn lstm(g: &mut Graph, p: &Bound, pi: &mut usize, x: Var, channels: usize, len: usize, r: RecurrentSpec) -> Var {
    let rows = g.value(x).rows();
    let hd = r.hidden;
    let mut inputs: Vec<Var> = (0..len)
        .map(|t| {
            let idx: Arc<[usize]> = (0..channels).map(|c| c * len + t).collect();
            g.gather_cols(x, idx)
        })
        .collect();
    let gate = |k: usize| -> Arc<[usize]> { (k * hd..(k + 1) * hd).collect() };
    let (gi, gf, gg, go) = (gate(0), gate(1), gate(2), gate(3));
    for _ in 0..r.layers {
        let (wx, wh, b) = (p.var(*pi), p.var(*pi + 1), p.var(*pi + 2));
        *pi += 3;
        let mut h = g.constant(Tensor::zeros(vec![rows, hd]));
        let mut c = g.constant(Tensor::zeros(vec![rows, hd]));
        let mut outs = Vec::with_capacity(len);
        for &xt in &inputs {
            let a = g.matmul(xt, wx);
            let bh = g.matmul(h, wh);
            let z = g.add(a, bh);
            let z = g.add_row(z, b);
            let i = g.gather_cols(z, gi.clone());
            let i = g.sigmoid(i);
            let f = g.gather_cols(z, gf.clone());
            let f = g.sigmoid(f);
            let cand = g.gather_cols(z, gg.clone());
            let cand = g.tanh(cand);
            let o = g.gather_cols(z, go.clone());
            let o = g.sigmoid(o);
            let fc = g.mul(f, c);
            let ic = g.mul(i, cand);
            c = g.add(fc, ic);
            let tc = g.tanh(c);
            h = g.mul(o, tc);
            outs.push(h);
        }
        inputs = outs;
    }
    *inputs.last().expect("non-empty sequence")
}

/// Fully connected stack with ReLU between layers and an optional identity
/// skip from input to output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub hidden_activation: bool,
    pub residual: bool,
    /// Zero-initialise the output layer so the untrained net is the identity
    /// (residual) or the zero map.
    pub zero_last: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: ParamSet,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Self {
        assert!(spec.widths.len() >= 2, "mlp needs input and output widths");
        if spec.residual {
            assert_eq!(spec.widths[0], *spec.widths.last().unwrap(), "residual mlp must preserve width");
        }
        let mut params = ParamSet::default();
        let n = spec.widths.len() - 1;
        for (i, w) in spec.widths.windows(2).enumerate() {
            let bound = if spec.zero_last && i + 1 == n { 0.0 } else { (6.0 / w[0] as f64).sqrt() };
            params.push(uniform_tensor(rng, vec![w[0], w[1]], bound));
            params.push(Tensor::zeros(vec![w[1]]));
        }
        Self { spec, params }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let n = self.spec.widths.len() - 1;
        let mut h = x;
        for i in 0..n {
            h = g.matmul(h, p.var(2 * i));
            h = g.add_row(h, p.var(2 * i + 1));
            if i + 1 < n && self.spec.hidden_activation {
                h = g.relu(h);
            }
        }
        if self.spec.residual {
            h = g.add(h, x);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_spec(recurrent: bool) -> ConvNetSpec {
        ConvNetSpec {
            in_channels: 2,
            in_len: 12,
            convs: vec![ConvLayerSpec { filters: 3, kernel: 3, stride: 2 }],
            recurrent: recurrent.then_some(RecurrentSpec { hidden: 4, layers: 2 }),
            dense: vec![5],
            outputs: 2,
            dropout: 0.0,
        }
    }

    #[test]
    fn param_blob_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = ConvNet::new(tiny_spec(true), &mut rng);
        let bytes = net.params.to_bytes();
        assert_eq!(ParamSet::from_bytes(&bytes).unwrap(), net.params);
        assert!(ParamSet::from_bytes(&bytes[..bytes.len() - 3]).is_none());
    }

    #[test]
    fn convnet_with_lstm_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = ConvNet::new(tiny_spec(true), &mut rng);
        let x = Tensor::new(vec![2, 24], (0..48).map(|i| ((i * 7 % 13) as f64 - 6.0) / 6.0).collect());
        let loss_of = |params: &ParamSet| {
            let mut g = Graph::new();
            let b = params.bind(&mut g, true);
            let xv = g.constant(x.clone());
            let mut n2 = net.clone();
            n2.params = params.clone();
            let y = n2.forward(&mut g, &b, xv, None);
            let t = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
            let l = g.softmax_cross_entropy(y, t, 1.0);
            let grads = g.backward(l);
            (g.value(l).item(), params.collect_grads(&b, &grads))
        };
        let (_, analytic) = loss_of(&net.params);
        let h = 1e-6;
        for (ti, t) in net.params.tensors().iter().enumerate() {
            for i in (0..t.len()).step_by(7) {
                let mut p = net.params.clone();
                p.tensors_mut()[ti].data_mut()[i] += h;
                let mut m = net.params.clone();
                m.tensors_mut()[ti].data_mut()[i] -= h;
                let fd = (loss_of(&p).0 - loss_of(&m).0) / (2.0 * h);
                let a = analytic[ti].data()[i];
                assert!((fd - a).abs() < 1e-6 * (1.0 + fd.abs()), "tensor {ti}[{i}]: {fd} vs {a}");
            }
        }
    }

    #[test]
    fn residual_mlp_with_zero_last_layer_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = MlpSpec { widths: vec![6, 3, 6], hidden_activation: true, residual: true, zero_last: true };
        let mlp = Mlp::new(spec, &mut rng);
        let mut g = Graph::new();
        let b = mlp.params.bind(&mut g, false);
        let x = Tensor::new(vec![1, 6], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]);
        let xv = g.constant(x.clone());
        let y = mlp.forward(&mut g, &b, xv);
        assert_eq!(g.value(y), &x);
    }
}
