//! Dense feedforward networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat `f64` vector. Each layer stores its weight
//! matrix (row-major, `fan_out x fan_in`) followed by its bias vector, so
//! optimizers and trust-region solvers can treat a network as a plain vector.
//! Hidden layers apply the configured activation; the output layer is linear.
//!
//! There is no regularization hook: the loss gradient handed to
//! [`Params::backward`] is the whole story.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Error, Result};

/// Magic bytes that open every serialized parameter block.
pub const PARAMS_MAGIC: &[u8; 4] = b"PGF1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    /// `x * sigmoid(x)`.
    Swish,
}

impl Activation {
    pub fn id(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Swish => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Swish),
            other => Err(config(format!("unknown activation id {other}"))),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "swish" => Ok(Activation::Swish),
            other => Err(config(format!("unknown activation '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Swish => "swish",
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Swish => x * sigmoid(x),
        }
    }

    /// Value and derivative together, sharing the sigmoid for swish.
    #[inline]
    pub fn apply_with_derivative(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Swish => {
                let s = sigmoid(x);
                (x * s, s + x * s * (1.0 - s))
            }
            _ => (self.apply(x), self.derivative(x)),
        }
    }

    /// Derivative at a pre-activation value. ReLU uses the sub-derivative 0 at 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    layer_sizes: Vec<usize>,
    activation: Activation,
    output_activation: OutputActivation,
}

impl Architecture {
    /// `layer_sizes` lists input, hidden and output widths in order.
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(config("architecture needs at least input and output sizes"));
        }
        if layer_sizes.contains(&0) {
            return Err(config("layer sizes must be positive"));
        }
        Ok(Self {
            layer_sizes,
            activation,
            output_activation: OutputActivation::Identity,
        })
    }

    pub fn mlp(input: usize, hidden: &[usize], output: usize, activation: Activation) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(sizes, activation)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of weight layers (hidden layers + 1).
    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let layer = LayerLayout {
                    weight_offset: offset,
                    fan_out,
                    fan_in,
                    bias_offset: offset + fan_in * fan_out,
                };
                offset += fan_in * fan_out + fan_out;
                layer
            })
            .collect()
    }
}

/// Where one layer's weights and biases sit in the flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub weight_offset: usize,
    pub fan_out: usize,
    pub fan_in: usize,
    pub bias_offset: usize,
}

impl LayerLayout {
    pub fn weight_len(&self) -> usize {
        self.fan_in * self.fan_out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    flat: Vec<f64>,
    arch: Architecture,
    layout: Vec<LayerLayout>,
}

/// Pre- and post-activation outputs of every layer for one input batch.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    batch: usize,
    fingerprint: u64,
    inputs: Vec<f64>,
    /// `pre[k]` is the un-activated output of layer `k` (batch x fan_out).
    pre: Vec<Vec<f64>>,
    /// `post[k]` is `g(pre[k])` for hidden layers; the last entry is the output.
    post: Vec<Vec<f64>>,
    /// `g'(pre[k])` for hidden layers.
    deriv: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn num_layers(&self) -> usize {
        self.pre.len()
    }

    pub fn outputs(&self) -> &[f64] {
        self.post.last().unwrap()
    }
}

/// Gradient with the same layout as the [`Params`] it differentiates.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub flat: Vec<f64>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.flat.iter().all(|g| g.is_finite())
    }
}

pub fn init_params(arch: &Architecture, seed: u64) -> Params {
    Params::init(arch.clone(), seed)
}

pub fn forward(params: &Params, inputs: &[f64], batch: usize) -> Result<(Vec<f64>, ForwardCache)> {
    params.forward(inputs, batch)
}

pub fn backward(params: &Params, cache: &ForwardCache, output_grad: &[f64]) -> Result<Gradients> {
    params.backward(cache, output_grad)
}

/// Central-difference gradient of `loss` at `theta`.
pub fn num_grad<F>(mut loss: F, theta: &[f64], epsilon: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(epsilon > 0.0) {
        return Err(config("finite-difference epsilon must be positive"));
    }
    let mut probe = theta.to_vec();
    let mut grad = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + epsilon;
        let up = loss(&probe)?;
        probe[i] = orig - epsilon;
        let down = loss(&probe)?;
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * epsilon);
    }
    Ok(grad)
}

impl Params {
    /// Glorot-uniform weights, zero biases, deterministic in `seed`.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let layout = arch.layout();
        let mut flat = vec![0.0; arch.num_params()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &layout {
            let bound = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut flat[layer.weight_offset..layer.weight_offset + layer.weight_len()] {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Self { flat, arch, layout }
    }

    pub fn zeros(arch: Architecture) -> Self {
        let layout = arch.layout();
        let flat = vec![0.0; arch.num_params()];
        Self { flat, arch, layout }
    }

    pub fn from_flat(arch: Architecture, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != arch.num_params() {
            return Err(contract(format!(
                "flat parameter length {} does not match architecture ({})",
                flat.len(),
                arch.num_params()
            )));
        }
        let layout = arch.layout();
        Ok(Self { flat, arch, layout })
    }

    /// Same architecture, new values.
    pub fn with_flat(&self, flat: Vec<f64>) -> Result<Self> {
        Self::from_flat(self.arch.clone(), flat)
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layout(&self) -> &[LayerLayout] {
        &self.layout
    }

    fn fingerprint(&self) -> u64 {
        // FNV-1a over the raw bits; cheap compared to a forward pass.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.flat {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^ self.flat.len() as u64
    }

    /// Outputs only, no cache.
    pub fn predict(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        let (out, _) = self.run_forward(inputs, batch, false)?;
        Ok(out)
    }

    pub fn forward(&self, inputs: &[f64], batch: usize) -> Result<(Vec<f64>, ForwardCache)> {
        let (out, cache) = self.run_forward(inputs, batch, true)?;
        Ok((out, cache.expect("cache requested")))
    }

    fn run_forward(
        &self,
        inputs: &[f64],
        batch: usize,
        keep: bool,
    ) -> Result<(Vec<f64>, Option<ForwardCache>)> {
        let n_in = self.arch.input_dim();
        if batch == 0 || inputs.len() != batch * n_in {
            return Err(contract(format!(
                "forward expects {batch} x {n_in} inputs, got {} values",
                inputs.len()
            )));
        }
        let act = self.arch.activation;
        let last = self.layout.len() - 1;
        let mut pre = Vec::with_capacity(self.layout.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layout.len());
        let mut deriv = Vec::with_capacity(last);
        for (k, layer) in self.layout.iter().enumerate() {
            let x: &[f64] = if k == 0 { inputs } else { &post[k - 1] };
            let mut h = vec![0.0; batch * layer.fan_out];
            let bias = &self.flat[layer.bias_offset..layer.bias_offset + layer.fan_out];
            for row in h.chunks_exact_mut(layer.fan_out) {
                row.copy_from_slice(bias);
            }
            // h += x · Wᵀ
            gemm(
                batch,
                layer.fan_in,
                layer.fan_out,
                x,
                (layer.fan_in, 1),
                &self.flat[layer.weight_offset..],
                (1, layer.fan_in),
                1.0,
                &mut h,
            );
            let a = if k == last {
                h.clone()
            } else if keep {
                let (a, d) = h.iter().map(|&v| act.apply_with_derivative(v)).unzip();
                deriv.push(d);
                a
            } else {
                h.iter().map(|&v| act.apply(v)).collect()
            };
            if keep || k < last {
                pre.push(h);
            }
            post.push(a);
            if !keep && k >= 1 {
                // Earlier activations are no longer needed.
                post[k - 1] = Vec::new();
            }
        }
        let out = post.last().unwrap().clone();
        let cache = keep.then(|| ForwardCache {
            batch,
            fingerprint: self.fingerprint(),
            inputs: inputs.to_vec(),
            pre,
            post,
            deriv,
        });
        Ok((out, cache))
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.pre.len() != self.layout.len() || cache.fingerprint != self.fingerprint() {
            return Err(contract("forward cache was produced by different parameters"));
        }
        Ok(())
    }

    /// Reverse-mode gradient of a loss given `dL/d outputs`, summed over the batch.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<Gradients> {
        self.check_cache(cache)?;
        let batch = cache.batch;
        if output_grad.len() != batch * self.arch.output_dim() {
            return Err(contract("output gradient shape does not match forward outputs"));
        }
        let mut grad = vec![0.0; self.flat.len()];
        let mut delta = output_grad.to_vec();
        for k in (0..self.layout.len()).rev() {
            let layer = self.layout[k];
            let a_prev: &[f64] = if k == 0 { &cache.inputs } else { &cache.post[k - 1] };
            // dW = δᵀ · a_prev
            gemm(
                layer.fan_out,
                batch,
                layer.fan_in,
                &delta,
                (1, layer.fan_out),
                a_prev,
                (layer.fan_in, 1),
                0.0,
                &mut grad[layer.weight_offset..layer.weight_offset + layer.weight_len()],
            );
            let gb = &mut grad[layer.bias_offset..layer.bias_offset + layer.fan_out];
            for row in delta.chunks_exact(layer.fan_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if k > 0 {
                // δ_prev = (δ · W) ⊙ g'(h_prev)
                let mut next = vec![0.0; batch * layer.fan_in];
                gemm(
                    batch,
                    layer.fan_out,
                    layer.fan_in,
                    &delta,
                    (layer.fan_out, 1),
                    &self.flat[layer.weight_offset..],
                    (layer.fan_in, 1),
                    0.0,
                    &mut next,
                );
                for (n, &d) in next.iter_mut().zip(&cache.deriv[k - 1]) {
                    *n *= d;
                }
                delta = next;
            }
        }
        Ok(Gradients { flat: grad })
    }

    /// Forward-mode directional derivative of the outputs along `tangent`.
    pub fn jvp(&self, cache: &ForwardCache, tangent: &[f64]) -> Result<Vec<f64>> {
        self.check_cache(cache)?;
        if tangent.len() != self.flat.len() {
            return Err(contract("tangent length does not match parameters"));
        }
        let batch = cache.batch;
        let last = self.layout.len() - 1;
        let mut da_prev: Option<Vec<f64>> = None;
        for (k, layer) in self.layout.iter().enumerate() {
            let a_prev: &[f64] = if k == 0 { &cache.inputs } else { &cache.post[k - 1] };
            let mut dh = vec![0.0; batch * layer.fan_out];
            let db = &tangent[layer.bias_offset..layer.bias_offset + layer.fan_out];
            for row in dh.chunks_exact_mut(layer.fan_out) {
                row.copy_from_slice(db);
            }
            gemm(
                batch,
                layer.fan_in,
                layer.fan_out,
                a_prev,
                (layer.fan_in, 1),
                &tangent[layer.weight_offset..],
                (1, layer.fan_in),
                1.0,
                &mut dh,
            );
            if let Some(da) = &da_prev {
                gemm(
                    batch,
                    layer.fan_in,
                    layer.fan_out,
                    da,
                    (layer.fan_in, 1),
                    &self.flat[layer.weight_offset..],
                    (1, layer.fan_in),
                    1.0,
                    &mut dh,
                );
            }
            if k == last {
                return Ok(dh);
            }
            for (d, &g) in dh.iter_mut().zip(&cache.deriv[k]) {
                *d *= g;
            }
            da_prev = Some(dh);
        }
        unreachable!("network has at least one layer")
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(PARAMS_MAGIC)?;
        let sizes = self.arch.layer_sizes();
        w.write_all(&(sizes.len() as u32).to_le_bytes())?;
        for &s in sizes {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        w.write_all(&[self.arch.activation.id()])?;
        write_f64s(w, &self.flat)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PARAMS_MAGIC {
            return Err(Error::Schema("parameter block does not start with PGF1".into()));
        }
        let n = read_u32(r)? as usize;
        if n > 1024 {
            return Err(Error::Schema("implausible layer count".into()));
        }
        let sizes = (0..n)
            .map(|_| read_u32(r).map(|s| s as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut act = [0u8; 1];
        r.read_exact(&mut act)?;
        let arch = Architecture::new(sizes, Activation::from_id(act[0])?)?;
        let flat = read_f64s(r)?;
        Self::from_flat(arch, flat)
    }
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > (1 << 32) {
        return Err(Error::Schema("implausible vector length".into()));
    }
    let mut out = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// `c = a·b + beta·c` for an `m x k` by `k x n` product with explicit
/// (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * a_strides.0 + (k - 1) * a_strides.1);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * b_strides.0 + (n - 1) * b_strides.1);
    // SAFETY: the debug assertions above spell out the bounds every call site
    // satisfies: `a` covers an m x k view, `b` a k x n view and `c` is a dense
    // row-major m x n buffer that does not alias either input.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    fn random_inputs(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
    }

    #[test]
    fn param_count_and_zero_biases() {
        let arch = Architecture::new(vec![3, 5, 4, 2], Activation::Tanh).unwrap();
        let p = Params::init(arch, 7);
        assert_eq!(p.len(), 54);
        for layer in p.layout() {
            assert!(p.flat()[layer.bias_offset..layer.bias_offset + layer.fan_out]
                .iter()
                .all(|&b| b == 0.0));
            let bound = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            assert!(p.flat()[layer.weight_offset..layer.weight_offset + layer.weight_len()]
                .iter()
                .all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn layout_covers_flat_exactly() {
        let arch = Architecture::new(vec![4, 7, 3, 2], Activation::Swish).unwrap();
        let mut seen = vec![0u8; arch.num_params()];
        for l in arch.layout() {
            for i in l.weight_offset..l.weight_offset + l.weight_len() {
                seen[i] += 1;
            }
            for i in l.bias_offset..l.bias_offset + l.fan_out {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn init_is_deterministic() {
        let arch = Architecture::new(vec![3, 5, 4, 2], Activation::Relu).unwrap();
        assert_eq!(Params::init(arch.clone(), 11).flat(), Params::init(arch.clone(), 11).flat());
        assert_ne!(Params::init(arch.clone(), 11).flat(), Params::init(arch, 12).flat());
    }

    #[test]
    fn invalid_architectures_rejected() {
        assert!(matches!(Architecture::new(vec![3], Activation::Relu), Err(Error::Config(_))));
        assert!(matches!(Architecture::new(vec![3, 0, 1], Activation::Relu), Err(Error::Config(_))));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let arch = Architecture::new(vec![3, 4, 2], Activation::Swish).unwrap();
        let p = Params::zeros(arch);
        let out = p.predict(&random_inputs(15, 1), 5).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_case() {
        let arch = Architecture::new(vec![2, 1], Activation::Relu).unwrap();
        let p = Params::from_flat(arch, vec![1.0, 1.0, 0.0]).unwrap();
        assert_eq!(p.predict(&[2.0, 3.0], 1).unwrap(), vec![5.0]);
    }

    #[test]
    fn batch_rows_match_single_rows() {
        let arch = Architecture::new(vec![3, 6, 5, 2], Activation::Tanh).unwrap();
        let p = Params::init(arch, 3);
        let x = random_inputs(24, 9);
        let batched = p.predict(&x, 8).unwrap();
        for i in 0..8 {
            let single = p.predict(&x[i * 3..(i + 1) * 3], 1).unwrap();
            for j in 0..2 {
                assert!((single[j] - batched[i * 2 + j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_contract_violation() {
        let arch = Architecture::new(vec![3, 2], Activation::Tanh).unwrap();
        let p = Params::init(arch, 0);
        assert!(matches!(p.forward(&[1.0, 2.0], 1), Err(Error::Contract(_))));
        let (_, cache) = p.forward(&[1.0, 2.0, 3.0], 1).unwrap();
        assert!(matches!(p.backward(&cache, &[1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn stale_cache_rejected() {
        let arch = Architecture::new(vec![3, 4, 2], Activation::Tanh).unwrap();
        let p = Params::init(arch.clone(), 0);
        let (_, cache) = p.forward(&[1.0, 2.0, 3.0], 1).unwrap();
        let q = Params::init(arch, 1);
        assert!(matches!(q.backward(&cache, &[1.0, 1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_output_grad_gives_zero_gradient() {
        let arch = Architecture::new(vec![3, 4, 2], Activation::Swish).unwrap();
        let p = Params::init(arch, 0);
        let (_, cache) = p.forward(&random_inputs(6, 2), 2).unwrap();
        let g = p.backward(&cache, &[0.0; 4]).unwrap();
        assert!(g.flat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_dimensional_chain_rule() {
        // L = ½(w·x − y)²  ⇒  dL/dw = (ŷ − y)·x
        let arch = Architecture::new(vec![1, 1], Activation::Relu).unwrap();
        let (w, x, y) = (0.7, 1.3, 2.0);
        let p = Params::from_flat(arch, vec![w, 0.0]).unwrap();
        let (out, cache) = p.forward(&[x], 1).unwrap();
        let g = p.backward(&cache, &[out[0] - y]).unwrap();
        assert!((g.flat[0] - (w * x - y) * x).abs() < 1e-15);
    }

    fn check_against_fd(act: Activation, sizes: Vec<usize>, seed: u64) {
        let arch = Architecture::new(sizes.clone(), act).unwrap();
        let p = Params::init(arch.clone(), seed);
        let batch = 4;
        let x = random_inputs(batch * sizes[0], seed + 100);
        let target = random_inputs(batch * sizes[sizes.len() - 1], seed + 200);
        let loss = |theta: &[f64]| -> Result<f64> {
            let q = Params::from_flat(arch.clone(), theta.to_vec())?;
            let out = q.predict(&x, batch)?;
            Ok(out.iter().zip(&target).map(|(o, t)| 0.5 * (o - t).powi(2)).sum())
        };
        let (out, cache) = p.forward(&x, batch).unwrap();
        let dout: Vec<f64> = out.iter().zip(&target).map(|(o, t)| o - t).collect();
        let g = p.backward(&cache, &dout).unwrap();
        assert!(g.is_finite());
        let fd = num_grad(loss, p.flat(), 1e-5).unwrap();
        for (a, b) in g.flat.iter().zip(&fd) {
            assert!(rel_err(*a, *b) <= 1e-4, "{act:?}: backprop {a} vs fd {b}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for act in [Activation::Relu, Activation::Tanh, Activation::Swish] {
            check_against_fd(act, vec![3, 5, 2], 1);
            check_against_fd(act, vec![2, 4, 4, 3], 2);
            check_against_fd(act, vec![4, 3, 6, 2, 1], 3);
        }
    }

    #[test]
    fn gradients_are_linear_in_the_batch() {
        let arch = Architecture::new(vec![3, 5, 2], Activation::Swish).unwrap();
        let p = Params::init(arch, 5);
        let x = random_inputs(12, 6);
        let dout = random_inputs(8, 7);
        let (_, cache) = p.forward(&x, 4).unwrap();
        let total = p.backward(&cache, &dout).unwrap();
        let mut summed = vec![0.0; p.len()];
        for i in 0..4 {
            let (_, c) = p.forward(&x[i * 3..i * 3 + 3], 1).unwrap();
            let g = p.backward(&c, &dout[i * 2..i * 2 + 2]).unwrap();
            for (s, v) in summed.iter_mut().zip(&g.flat) {
                *s += v;
            }
        }
        for (a, b) in total.flat.iter().zip(&summed) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn jvp_matches_directional_difference() {
        let arch = Architecture::new(vec![3, 5, 4, 2], Activation::Tanh).unwrap();
        let p = Params::init(arch, 8);
        let x = random_inputs(9, 3);
        let v = random_inputs(p.len(), 4);
        let (_, cache) = p.forward(&x, 3).unwrap();
        let jv = p.jvp(&cache, &v).unwrap();
        let eps = 1e-6;
        let plus: Vec<f64> = p.flat().iter().zip(&v).map(|(a, b)| a + eps * b).collect();
        let minus: Vec<f64> = p.flat().iter().zip(&v).map(|(a, b)| a - eps * b).collect();
        let yp = p.with_flat(plus).unwrap().predict(&x, 3).unwrap();
        let ym = p.with_flat(minus).unwrap().predict(&x, 3).unwrap();
        for i in 0..jv.len() {
            let fd = (yp[i] - ym[i]) / (2.0 * eps);
            assert!(rel_err(jv[i], fd) < 1e-6);
        }
    }

    #[test]
    fn relu_subderivative_at_zero() {
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
    }

    #[test]
    fn num_grad_basics() {
        let g = num_grad(|_| Ok(3.0), &[1.0, 2.0], 1e-4).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        let g = num_grad(|t| Ok(0.5 * t.iter().map(|v| v * v).sum::<f64>()), &[1.0, -2.0], 1e-5)
            .unwrap();
        assert!((g[0] - 1.0).abs() < 1e-8 && (g[1] + 2.0).abs() < 1e-8);
        assert!(num_grad(|_| Ok(0.0), &[1.0], 0.0).is_err());
    }

    #[test]
    fn serialization_round_trip() {
        let arch = Architecture::new(vec![3, 5, 2], Activation::Swish).unwrap();
        let p = Params::init(arch, 4);
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"PGF1");
        let q = Params::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(p, q);
        buf[0] = b'X';
        assert!(Params::read_from(&mut buf.as_slice()).is_err());
    }
}
