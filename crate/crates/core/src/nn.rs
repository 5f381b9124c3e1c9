//! Network building blocks on top of the autodiff graph: a named parameter
//! store, linear / LSTM / transformer layers, Adam, and a finite-difference
//! gradient checker used throughout the test suites.

use crate::container::{ArrayContainer, NamedArray};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::real::{rr, Real};
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;

#[derive(Clone)]
struct ParamEntry<R: Real> {
    name: String,
    value: Array2<R>,
    trainable: bool,
}

/// Insertion-ordered collection of named parameter matrices. Layers hold
/// slot indices into the store; graphs bind snapshots of the values.
#[derive(Clone)]
pub struct ParamStore<R: Real> {
    entries: Vec<ParamEntry<R>>,
    by_name: BTreeMap<String, usize>,
}

impl<R: Real> Default for ParamStore<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new(), by_name: BTreeMap::new() }
    }

    pub fn add(&mut self, name: &str, value: Array2<R>) -> usize {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let idx = self.entries.len();
        self.entries.push(ParamEntry { name: name.to_string(), value, trainable: true });
        self.by_name.insert(name.to_string(), idx);
        idx
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, idx: usize) -> &Array2<R> {
        &self.entries[idx].value
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Array2<R> {
        &mut self.entries[idx].value
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.entries[idx].name
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn is_trainable(&self, idx: usize) -> bool {
        self.entries[idx].trainable
    }

    pub fn set_trainable(&mut self, idx: usize, trainable: bool) {
        self.entries[idx].trainable = trainable;
    }

    pub fn freeze_all(&mut self) {
        for e in &mut self.entries {
            e.trainable = false;
        }
    }

    /// Bind a parameter into a graph: trainable entries become param leaves,
    /// frozen ones plain constants (gradient still flows *through* them).
    pub fn bind(&self, g: &mut Graph<R>, idx: usize) -> NodeId {
        if self.entries[idx].trainable {
            g.param(idx, self.entries[idx].value.clone())
        } else {
            g.input(self.entries[idx].value.clone())
        }
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Serialize all parameters (as f32) into a container.
    pub fn to_container(&self) -> ArrayContainer {
        let mut c = ArrayContainer::new();
        for e in &self.entries {
            let f32_arr = e.value.mapv(|v| v.as_f32());
            c.push(NamedArray::from_array2_f32(&e.name, &f32_arr))
                .expect("parameter names are unique");
        }
        c
    }

    /// Restore parameter values by name from a container. Every entry in the
    /// store must be present with a matching shape.
    pub fn load_from_container(&mut self, c: &ArrayContainer) -> Result<()> {
        for e in &mut self.entries {
            let loaded = c.get(&e.name)?.to_array2_f32()?;
            if loaded.dim() != e.value.dim() {
                return Err(Error::shape(format!(
                    "parameter {} has shape {:?}, checkpoint holds {:?}",
                    e.name,
                    e.value.dim(),
                    loaded.dim()
                )));
            }
            e.value = loaded.mapv(R::from_f32);
        }
        Ok(())
    }
}

/// Store normalization stats in a container under `{prefix}.mean` / `{prefix}.std`.
pub fn push_stats<R: Real>(
    c: &mut ArrayContainer,
    prefix: &str,
    stats: &crate::types::NormStats<R>,
) -> Result<()> {
    let d = stats.dim();
    let mean: Vec<f32> = stats.mean.iter().map(|v| v.as_f32()).collect();
    let std: Vec<f32> = stats.std.iter().map(|v| v.as_f32()).collect();
    c.push(NamedArray::f32(format!("{prefix}.mean"), vec![1, d], mean))?;
    c.push(NamedArray::f32(format!("{prefix}.std"), vec![1, d], std))?;
    Ok(())
}

pub fn read_stats<R: Real>(c: &ArrayContainer, prefix: &str) -> Result<crate::types::NormStats<R>> {
    let mean = c.get(&format!("{prefix}.mean"))?.as_f32()?;
    let std = c.get(&format!("{prefix}.std"))?.as_f32()?;
    Ok(crate::types::NormStats {
        mean: mean.iter().map(|&v| R::from_f32(v)).collect(),
        std: std.iter().map(|&v| R::from_f32(v)).collect(),
    })
}

// ---- initializers ----

/// Uniform Xavier/Glorot init; draws in f64 so f32 and f64 stores built from
/// the same stream hold the same values (up to rounding).
pub fn xavier<R: Real>(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Array2<R> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rr(rng.gen_range(-limit..limit)))
}

pub fn zeros<R: Real>(rows: usize, cols: usize) -> Array2<R> {
    Array2::zeros((rows, cols))
}

// ---- layers ----

#[derive(Clone, Copy)]
pub struct Linear {
    w: usize,
    b: usize,
}

impl Linear {
    pub fn new<R: Real>(
        ps: &mut ParamStore<R>,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        din: usize,
        dout: usize,
    ) -> Self {
        let w = ps.add(&format!("{prefix}.w"), xavier(rng, din, dout));
        let b = ps.add(&format!("{prefix}.b"), zeros(1, dout));
        Linear { w, b }
    }

    /// Zero-initialized output head: the layer contributes nothing until
    /// trained, which several branches rely on for an identity start.
    pub fn zeroed<R: Real>(ps: &mut ParamStore<R>, prefix: &str, din: usize, dout: usize) -> Self {
        let w = ps.add(&format!("{prefix}.w"), zeros(din, dout));
        let b = ps.add(&format!("{prefix}.b"), zeros(1, dout));
        Linear { w, b }
    }

    pub fn apply<R: Real>(&self, g: &mut Graph<R>, ps: &ParamStore<R>, x: NodeId) -> NodeId {
        let w = ps.bind(g, self.w);
        let b = ps.bind(g, self.b);
        g.linear(x, w, b)
    }
}

/// Multi-layer perceptron with tanh between layers, linear last layer.
#[derive(Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Real>(
        ps: &mut ParamStore<R>,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        dims: &[usize],
    ) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least in/out dims");
        let layers = (0..dims.len() - 1)
            .map(|i| Linear::new(ps, rng, &format!("{prefix}.l{i}"), dims[i], dims[i + 1]))
            .collect();
        Mlp { layers }
    }

    pub fn apply<R: Real>(&self, g: &mut Graph<R>, ps: &ParamStore<R>, x: NodeId) -> NodeId {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(g, ps, h);
            if i + 1 < self.layers.len() {
                h = g.tanh(h);
            }
        }
        h
    }
}

/// Single LSTM layer; gate order i, f, g, o in one fused weight matrix.
/// Forget-gate bias starts at 1.
#[derive(Clone, Copy)]
pub struct Lstm {
    w: usize,
    b: usize,
    pub din: usize,
    pub dh: usize,
}

impl Lstm {
    pub fn new<R: Real>(
        ps: &mut ParamStore<R>,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        din: usize,
        dh: usize,
    ) -> Self {
        let w = ps.add(&format!("{prefix}.w"), xavier(rng, din + dh, 4 * dh));
        let mut bias = zeros::<R>(1, 4 * dh);
        for j in dh..2 * dh {
            bias[(0, j)] = R::one();
        }
        let b = ps.add(&format!("{prefix}.b"), bias);
        Lstm { w, b, din, dh }
    }

    /// Run over a `T x din` sequence; returns hidden states `T x dh`.
    pub fn apply<R: Real>(&self, g: &mut Graph<R>, ps: &ParamStore<R>, x: NodeId) -> NodeId {
        let w = ps.bind(g, self.w);
        self.run(g, ps, x, w)
    }

    /// Same but with an additive low-rank offset on the fused weight matrix:
    /// `W_eff = W + scale * U V`.
    pub fn apply_modulated<R: Real>(
        &self,
        g: &mut Graph<R>,
        ps: &ParamStore<R>,
        x: NodeId,
        u: NodeId,
        v: NodeId,
        scale: R,
    ) -> NodeId {
        assert_eq!(g.shape(u).0, self.din + self.dh, "offset row dim");
        assert_eq!(g.shape(v).1, 4 * self.dh, "offset col dim");
        let base = ps.bind(g, self.w);
        let uv = g.matmul(u, v);
        let scaled = g.scale(uv, scale);
        let w = g.add(base, scaled);
        self.run(g, ps, x, w)
    }

    fn run<R: Real>(&self, g: &mut Graph<R>, ps: &ParamStore<R>, x: NodeId, w: NodeId) -> NodeId {
        let (t_len, din) = g.shape(x);
        assert_eq!(din, self.din, "lstm input dim");
        let b = ps.bind(g, self.b);
        let dh = self.dh;
        let mut h = g.input(Array2::zeros((1, dh)));
        let mut c = g.input(Array2::zeros((1, dh)));
        let mut outs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let xt = g.slice_rows(x, t, t + 1);
            let xh = g.concat_cols(&[xt, h]);
            let zs = g.matmul(xh, w);
            let z = g.add_row(zs, b);
            let i_g = g.slice_cols(z, 0, dh);
            let f_g = g.slice_cols(z, dh, 2 * dh);
            let g_g = g.slice_cols(z, 2 * dh, 3 * dh);
            let o_g = g.slice_cols(z, 3 * dh, 4 * dh);
            let i_s = g.sigmoid(i_g);
            let f_s = g.sigmoid(f_g);
            let g_t = g.tanh(g_g);
            let o_s = g.sigmoid(o_g);
            let fc = g.mul(f_s, c);
            let ig = g.mul(i_s, g_t);
            c = g.add(fc, ig);
            let ct = g.tanh(c);
            h = g.mul(o_s, ct);
            outs.push(h);
        }
        g.concat_rows(&outs)
    }
}

/// Layer norm with learned per-feature gain and shift.
#[derive(Clone, Copy)]
pub struct LayerNorm {
    gain: usize,
    shift: usize,
}

impl LayerNorm {
    pub fn new<R: Real>(ps: &mut ParamStore<R>, prefix: &str, d: usize) -> Self {
        let gain = ps.add(&format!("{prefix}.g"), Array2::from_elem((1, d), R::one()));
        let shift = ps.add(&format!("{prefix}.s"), zeros(1, d));
        LayerNorm { gain, shift }
    }

    pub fn apply<R: Real>(&self, g: &mut Graph<R>, ps: &ParamStore<R>, x: NodeId) -> NodeId {
        let n = g.layer_norm_rows(x, rr(1e-5));
        let gain = ps.bind(g, self.gain);
        let shift = ps.bind(g, self.shift);
        let scaled = g.mul_row(n, gain);
        g.add_row(scaled, shift)
    }
}

/// Multi-head scaled dot-product attention. Heads are column slices of the
/// shared projections. An optional additive mask (`q_len x k_len`) is applied
/// before the softmax.
#[derive(Clone, Copy)]
pub struct Attention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    heads: usize,
    d: usize,
}

impl Attention {
    pub fn new<R: Real>(
        ps: &mut ParamStore<R>,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        d: usize,
        heads: usize,
    ) -> Self {
        assert!(d % heads == 0, "model dim must divide into heads");
        Attention {
            wq: Linear::new(ps, rng, &format!("{prefix}.q"), d, d),
            wk: Linear::new(ps, rng, &format!("{prefix}.k"), d, d),
            wv: Linear::new(ps, rng, &format!("{prefix}.v"), d, d),
            wo: Linear::new(ps, rng, &format!("{prefix}.o"), d, d),
            heads,
            d,
        }
    }

    pub fn apply<R: Real>(
        &self,
        g: &mut Graph<R>,
        ps: &ParamStore<R>,
        queries: NodeId,
        keys: NodeId,
        mask: Option<&Array2<R>>,
    ) -> NodeId {
        let dk = self.d / self.heads;
        let q = self.wq.apply(g, ps, queries);
        let k = self.wk.apply(g, ps, keys);
        let v = self.wv.apply(g, ps, keys);
        let scale = rr::<R>(1.0 / (dk as f64).sqrt());
        let mask_node = mask.map(|m| {
            assert_eq!(m.dim(), (g.shape(q).0, g.shape(k).0), "mask shape");
            g.input(m.clone())
        });
        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dk, (h + 1) * dk);
            let kh = g.slice_cols(k, h * dk, (h + 1) * dk);
            let vh = g.slice_cols(v, h * dk, (h + 1) * dk);
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt);
            let mut scaled = g.scale(scores, scale);
            if let Some(m) = mask_node {
                scaled = g.add(scaled, m);
            }
            let attn = g.softmax_rows(scaled);
            head_outs.push(g.matmul(attn, vh));
        }
        let cat = g.concat_cols(&head_outs);
        self.wo.apply(g, ps, cat)
    }
}

/// Additive causal mask: position i may attend to positions <= i.
pub fn causal_mask<R: Real>(t: usize) -> Array2<R> {
    Array2::from_shape_fn((t, t), |(i, j)| if j <= i { R::zero() } else { rr(-1e9) })
}

/// Pre-norm transformer encoder layer: x + attn(ln(x)), then x + ff(ln(x)).
#[derive(Clone, Copy)]
pub struct EncoderLayer {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

impl EncoderLayer {
    pub fn new<R: Real>(
        ps: &mut ParamStore<R>,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        d: usize,
        heads: usize,
        d_ff: usize,
    ) -> Self {
        EncoderLayer {
            ln1: LayerNorm::new(ps, &format!("{prefix}.ln1"), d),
            attn: Attention::new(ps, rng, &format!("{prefix}.attn"), d, heads),
            ln2: LayerNorm::new(ps, &format!("{prefix}.ln2"), d),
            ff1: Linear::new(ps, rng, &format!("{prefix}.ff1"), d, d_ff),
            ff2: Linear::new(ps, rng, &format!("{prefix}.ff2"), d_ff, d),
        }
    }

    pub fn apply<R: Real>(
        &self,
        g: &mut Graph<R>,
        ps: &ParamStore<R>,
        x: NodeId,
        mask: Option<&Array2<R>>,
    ) -> NodeId {
        let n1 = self.ln1.apply(g, ps, x);
        let a = self.attn.apply(g, ps, n1, n1, mask);
        let x1 = g.add(x, a);
        let n2 = self.ln2.apply(g, ps, x1);
        let f1 = self.ff1.apply(g, ps, n2);
        let f1a = g.tanh(f1);
        let f2 = self.ff2.apply(g, ps, f1a);
        g.add(x1, f2)
    }
}

/// Pre-norm transformer decoder layer with causal self-attention and
/// cross-attention over an encoder memory.
#[derive(Clone, Copy)]
pub struct DecoderLayer {
    ln1: LayerNorm,
    self_attn: Attention,
    ln2: LayerNorm,
    cross_attn: Attention,
    ln3: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

impl DecoderLayer {
    pub fn new<R: Real>(
        ps: &mut ParamStore<R>,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        d: usize,
        heads: usize,
        d_ff: usize,
    ) -> Self {
        DecoderLayer {
            ln1: LayerNorm::new(ps, &format!("{prefix}.ln1"), d),
            self_attn: Attention::new(ps, rng, &format!("{prefix}.self"), d, heads),
            ln2: LayerNorm::new(ps, &format!("{prefix}.ln2"), d),
            cross_attn: Attention::new(ps, rng, &format!("{prefix}.cross"), d, heads),
            ln3: LayerNorm::new(ps, &format!("{prefix}.ln3"), d),
            ff1: Linear::new(ps, rng, &format!("{prefix}.ff1"), d, d_ff),
            ff2: Linear::new(ps, rng, &format!("{prefix}.ff2"), d_ff, d),
        }
    }

    pub fn apply<R: Real>(
        &self,
        g: &mut Graph<R>,
        ps: &ParamStore<R>,
        x: NodeId,
        memory: NodeId,
    ) -> NodeId {
        let t = g.shape(x).0;
        let mask = causal_mask::<R>(t);
        let n1 = self.ln1.apply(g, ps, x);
        let a = self.self_attn.apply(g, ps, n1, n1, Some(&mask));
        let x1 = g.add(x, a);
        let n2 = self.ln2.apply(g, ps, x1);
        let c = self.cross_attn.apply(g, ps, n2, memory, None);
        let x2 = g.add(x1, c);
        let n3 = self.ln3.apply(g, ps, x2);
        let f1 = self.ff1.apply(g, ps, n3);
        let f1a = g.tanh(f1);
        let f2 = self.ff2.apply(g, ps, f1a);
        g.add(x2, f2)
    }
}

/// Learned-query attention pooling: collapse `T x d` tokens to `1 x d`.
/// Softmax over tokens makes the result invariant to token order.
#[derive(Clone, Copy)]
pub struct AttentionPool {
    query: usize,
}

impl AttentionPool {
    pub fn new<R: Real>(
        ps: &mut ParamStore<R>,
        rng: &mut ChaCha20Rng,
        prefix: &str,
        d: usize,
    ) -> Self {
        let query = ps.add(&format!("{prefix}.query"), xavier(rng, 1, d));
        AttentionPool { query }
    }

    pub fn apply<R: Real>(&self, g: &mut Graph<R>, ps: &ParamStore<R>, tokens: NodeId) -> NodeId {
        let d = g.shape(tokens).1;
        let q = ps.bind(g, self.query);
        let kt = g.transpose(tokens);
        let scores = g.matmul(q, kt);
        let scaled = g.scale(scores, rr::<R>(1.0 / (d as f64).sqrt()));
        let attn = g.softmax_rows(scaled);
        g.matmul(attn, tokens)
    }
}

/// Sinusoidal position table (`t x d`).
pub fn sinusoidal_positions<R: Real>(t: usize, d: usize) -> Array2<R> {
    Array2::from_shape_fn((t, d), |(pos, i)| {
        let rate = (pos as f64) / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        rr(if i % 2 == 0 { rate.sin() } else { rate.cos() })
    })
}

// ---- optimization ----

pub struct Adam<R: Real> {
    pub lr: R,
    beta1: R,
    beta2: R,
    eps: R,
    t: i32,
    m: Vec<Array2<R>>,
    v: Vec<Array2<R>>,
}

impl<R: Real> Adam<R> {
    pub fn new(ps: &ParamStore<R>, lr: R) -> Self {
        let m = (0..ps.len()).map(|i| Array2::zeros(ps.value(i).raw_dim())).collect();
        let v = (0..ps.len()).map(|i| Array2::zeros(ps.value(i).raw_dim())).collect();
        Adam { lr, beta1: rr(0.9), beta2: rr(0.999), eps: rr(1e-8), t: 0, m, v }
    }

    pub fn with_betas(mut self, beta1: R, beta2: R) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn step(&mut self, ps: &mut ParamStore<R>, grads: &[Option<Array2<R>>]) {
        assert_eq!(grads.len(), ps.len(), "gradient slot count");
        self.t += 1;
        let b1t = R::one() - self.beta1.powi(self.t);
        let b2t = R::one() - self.beta2.powi(self.t);
        for idx in 0..ps.len() {
            if !ps.is_trainable(idx) {
                continue;
            }
            let Some(grad) = &grads[idx] else { continue };
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let one = R::one();
            azip_update(m, grad, |m, g| self.beta1 * m + (one - self.beta1) * g);
            azip_update(v, grad, |v, g| self.beta2 * v + (one - self.beta2) * g * g);
            let p = ps.value_mut(idx);
            for ((p, &m), &v) in p.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mhat = m / b1t;
                let vhat = v / b2t;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

fn azip_update<R: Real>(dst: &mut Array2<R>, src: &Array2<R>, f: impl Fn(R, R) -> R) {
    for (d, &s) in dst.iter_mut().zip(src.iter()) {
        *d = f(*d, s);
    }
}

/// Scale gradients in place so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm<R: Real>(grads: &mut [Option<Array2<R>>], max_norm: R) {
    let total: R = grads
        .iter()
        .flatten()
        .map(|g| g.iter().map(|&x| x * x).sum::<R>())
        .sum();
    let norm = total.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.mapv_inplace(|x| x * scale);
        }
    }
}

// ---- gradient checking ----

/// Compare the tape's parameter gradients against central finite differences
/// for a sample of coordinates per trainable parameter. Returns the worst
/// relative error seen. f64-only by design.
pub fn finite_diff_max_rel_err<F>(
    ps: &ParamStore<f64>,
    build: F,
    eps: f64,
    coords_per_param: usize,
    seed: u64,
) -> f64
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> NodeId,
{
    let mut g = Graph::new();
    let loss = build(&mut g, ps);
    let grads = g.backward(loss);
    let pg = g.param_grads(&grads, ps.len());

    let mut rng = crate::rng::stream(seed, "finite-diff", 0);
    let mut worst: f64 = 0.0;
    for idx in 0..ps.len() {
        if !ps.is_trainable(idx) {
            continue;
        }
        let analytic = match &pg[idx] {
            Some(a) => a,
            None => continue, // parameter unused in this objective
        };
        let (rows, cols) = ps.value(idx).dim();
        for _ in 0..coords_per_param {
            let i = rng.gen_range(0..rows);
            let j = rng.gen_range(0..cols);
            let base = ps.value(idx)[(i, j)];
            let eval = |v: f64| {
                let mut ps2 = ps.clone();
                ps2.value_mut(idx)[(i, j)] = v;
                let mut g2 = Graph::new();
                let l = build(&mut g2, &ps2);
                g2.scalar(l)
            };
            let fd = (eval(base + eps) - eval(base - eps)) / (2.0 * eps);
            let a = analytic[(i, j)];
            // The absolute floor keeps finite-difference roundoff on
            // near-zero coordinates from masquerading as gradient error.
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

/// View helper: interpret a store value as a plain matrix (used by sampling
/// paths that bypass the graph).
pub fn raw<'a, R: Real>(ps: &'a ParamStore<R>, idx: usize) -> ArrayView2<'a, R> {
    ps.value(idx).view()
}
