//! The RNN-T network: LSTM encoder, LSTM prediction network, feed-forward
//! joint, with forward passes that cache activations and exact reverse-mode
//! backward passes accumulating into the parameter store.
//!
//! Everything runs in f64 on a batch of one utterance; batching is external
//! gradient accumulation. The encoder is strictly causal (unidirectional
//! LSTM plus per-frame projection).

use ndarray::{Array1, Array2, Array3, ArrayView1, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::params::{Component, ParameterStore, Value};
use crate::rng::{stream, stream_rng};
use crate::vocab::BLANK;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub enc_units: usize,
    pub dec_layers: usize,
    pub dec_units: usize,
    pub proj_dim: usize,
    pub joint_units: usize,
    /// Output symbols including blank.
    pub vocab_size: usize,
    pub input_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            enc_layers: 2,
            enc_units: 64,
            dec_layers: 1,
            dec_units: 64,
            proj_dim: 48,
            joint_units: 64,
            vocab_size: 31,
            input_dim: 192,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("enc_layers", self.enc_layers),
            ("enc_units", self.enc_units),
            ("dec_layers", self.dec_layers),
            ("dec_units", self.dec_units),
            ("proj_dim", self.proj_dim),
            ("joint_units", self.joint_units),
            ("input_dim", self.input_dim),
        ];
        for (name, v) in fields {
            if v < 1 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if self.vocab_size < 2 {
            return Err(Error::config("vocab_size must be at least 2 (blank + one label)"));
        }
        Ok(())
    }

    /// Closed-form scalar parameter count.
    pub fn param_count(&self) -> usize {
        let lstm = |layers: usize, units: usize, input: usize| -> usize {
            let mut n = 0;
            for l in 0..layers {
                let d = if l == 0 { input } else { units };
                n += 4 * units * d + 4 * units * units + 4 * units;
            }
            n
        };
        let emb = self.vocab_size * self.dec_units;
        let enc = lstm(self.enc_layers, self.enc_units, self.input_dim)
            + self.proj_dim * self.enc_units
            + self.proj_dim;
        let dec = lstm(self.dec_layers, self.dec_units, self.dec_units)
            + self.proj_dim * self.dec_units
            + self.proj_dim;
        let joint = self.joint_units * self.proj_dim
            + self.joint_units
            + self.vocab_size * self.joint_units
            + self.vocab_size;
        emb + enc + dec + joint
    }
}

/// Standard LSTM cell step. Gate order in the packed arrays is
/// input, forget, cell candidate, output.
pub fn lstm_cell(
    x: ArrayView1<f64>,
    h_prev: ArrayView1<f64>,
    c_prev: ArrayView1<f64>,
    w_ih: &Array2<f64>,
    w_hh: &Array2<f64>,
    b: &Array1<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let h = h_prev.len();
    if w_ih.nrows() != 4 * h
        || w_hh.nrows() != 4 * h
        || w_ih.ncols() != x.len()
        || w_hh.ncols() != h
        || b.len() != 4 * h
        || c_prev.len() != h
    {
        return Err(Error::shape(format!(
            "lstm cell: x {}, h {}, w_ih {:?}, w_hh {:?}, b {}",
            x.len(),
            h,
            w_ih.shape(),
            w_hh.shape(),
            b.len()
        )));
    }
    let step = cell_forward(x, h_prev, c_prev, w_ih, w_hh, b);
    Ok((step.h, step.c))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct CellStep {
    i: Array1<f64>,
    f: Array1<f64>,
    g: Array1<f64>,
    o: Array1<f64>,
    c: Array1<f64>,
    tanh_c: Array1<f64>,
    h: Array1<f64>,
}

fn cell_forward(
    x: ArrayView1<f64>,
    h_prev: ArrayView1<f64>,
    c_prev: ArrayView1<f64>,
    w_ih: &Array2<f64>,
    w_hh: &Array2<f64>,
    b: &Array1<f64>,
) -> CellStep {
    let units = h_prev.len();
    let mut pre = w_ih.dot(&x);
    pre += &w_hh.dot(&h_prev);
    pre += b;
    let mut i = Array1::zeros(units);
    let mut f = Array1::zeros(units);
    let mut g = Array1::zeros(units);
    let mut o = Array1::zeros(units);
    for u in 0..units {
        i[u] = sigmoid(pre[u]);
        f[u] = sigmoid(pre[units + u]);
        g[u] = pre[2 * units + u].tanh();
        o[u] = sigmoid(pre[3 * units + u]);
    }
    let c = &f * &c_prev + &i * &g;
    let tanh_c = c.mapv(f64::tanh);
    let h = &o * &tanh_c;
    CellStep { i, f, g, o, c, tanh_c, h }
}

/// Cached activations of one LSTM layer over a sequence. Row t holds the
/// state after consuming input t; initial h/c are zeros.
struct LayerCache {
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    c: Array2<f64>,
    tanh_c: Array2<f64>,
    h: Array2<f64>,
}

fn layer_forward(xs: &Array2<f64>, w_ih: &Array2<f64>, w_hh: &Array2<f64>, b: &Array1<f64>) -> LayerCache {
    let t_len = xs.nrows();
    let units = w_hh.ncols();
    let mut cache = LayerCache {
        i: Array2::zeros((t_len, units)),
        f: Array2::zeros((t_len, units)),
        g: Array2::zeros((t_len, units)),
        o: Array2::zeros((t_len, units)),
        c: Array2::zeros((t_len, units)),
        tanh_c: Array2::zeros((t_len, units)),
        h: Array2::zeros((t_len, units)),
    };
    let mut h_prev = Array1::zeros(units);
    let mut c_prev = Array1::zeros(units);
    for t in 0..t_len {
        let step = cell_forward(xs.row(t), h_prev.view(), c_prev.view(), w_ih, w_hh, b);
        cache.i.row_mut(t).assign(&step.i);
        cache.f.row_mut(t).assign(&step.f);
        cache.g.row_mut(t).assign(&step.g);
        cache.o.row_mut(t).assign(&step.o);
        cache.c.row_mut(t).assign(&step.c);
        cache.tanh_c.row_mut(t).assign(&step.tanh_c);
        cache.h.row_mut(t).assign(&step.h);
        h_prev = step.h;
        c_prev = step.c;
    }
    cache
}

struct LayerGrads {
    d_xs: Array2<f64>,
    d_w_ih: Array2<f64>,
    d_w_hh: Array2<f64>,
    d_b: Array1<f64>,
}

/// Backward through time for one layer. `d_h_out` is the gradient flowing
/// into each h_t from the layer's consumers.
fn layer_backward(
    xs: &Array2<f64>,
    cache: &LayerCache,
    d_h_out: &Array2<f64>,
    w_ih: &Array2<f64>,
    w_hh: &Array2<f64>,
) -> LayerGrads {
    let t_len = xs.nrows();
    let units = w_hh.ncols();
    let mut grads = LayerGrads {
        d_xs: Array2::zeros(xs.raw_dim()),
        d_w_ih: Array2::zeros(w_ih.raw_dim()),
        d_w_hh: Array2::zeros(w_hh.raw_dim()),
        d_b: Array1::zeros(4 * units),
    };
    let mut dh_rec: Array1<f64> = Array1::zeros(units);
    let mut dc_rec: Array1<f64> = Array1::zeros(units);
    for t in (0..t_len).rev() {
        let dh = &d_h_out.row(t) + &dh_rec;
        let o = cache.o.row(t);
        let tanh_c = cache.tanh_c.row(t);
        let i = cache.i.row(t);
        let f = cache.f.row(t);
        let g = cache.g.row(t);

        // dc gets the direct path through h_t = o * tanh(c_t) plus recurrence
        let mut dc = Array1::zeros(units);
        for u in 0..units {
            dc[u] = dh[u] * o[u] * (1.0 - tanh_c[u] * tanh_c[u]) + dc_rec[u];
        }
        let c_prev_row: Array1<f64> = if t == 0 {
            Array1::zeros(units)
        } else {
            cache.c.row(t - 1).to_owned()
        };
        let h_prev_row: Array1<f64> = if t == 0 {
            Array1::zeros(units)
        } else {
            cache.h.row(t - 1).to_owned()
        };

        let mut da = Array1::zeros(4 * units);
        for u in 0..units {
            let d_o = dh[u] * tanh_c[u];
            let d_i = dc[u] * g[u];
            let d_f = dc[u] * c_prev_row[u];
            let d_g = dc[u] * i[u];
            da[u] = d_i * i[u] * (1.0 - i[u]);
            da[units + u] = d_f * f[u] * (1.0 - f[u]);
            da[2 * units + u] = d_g * (1.0 - g[u] * g[u]);
            da[3 * units + u] = d_o * o[u] * (1.0 - o[u]);
            dc_rec[u] = dc[u] * f[u];
        }

        let x_t = xs.row(t);
        for r in 0..4 * units {
            grads.d_w_ih.row_mut(r).scaled_add(da[r], &x_t);
            grads.d_w_hh.row_mut(r).scaled_add(da[r], &h_prev_row);
        }
        grads.d_b += &da;
        grads.d_xs.row_mut(t).assign(&w_ih.t().dot(&da));
        dh_rec = w_hh.t().dot(&da);
    }
    grads
}

pub struct EncoderCache {
    xs: Array2<f64>,
    layers: Vec<LayerCache>,
}

pub struct DecoderCache {
    /// Embedding rows consumed: blank start symbol then the labels.
    symbol_rows: Vec<usize>,
    xs: Array2<f64>,
    layers: Vec<LayerCache>,
}

pub struct JointCache {
    /// Row-flattened (t, u) pairs: z rows are H[t] + G[u].
    z: Array2<f64>,
    /// tanh activations of the hidden joint layer.
    p: Array2<f64>,
    t_len: usize,
    u_len: usize,
}

/// Incremental decoder state for greedy decoding.
#[derive(Debug, Clone)]
pub struct DecoderState {
    h: Vec<Array1<f64>>,
    c: Vec<Array1<f64>>,
    /// Projected representation conditioned on everything consumed so far.
    pub out: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct RnntModel {
    pub config: ModelConfig,
    pub store: ParameterStore,
}

impl RnntModel {
    /// Seeded initialization: weights uniform in [-0.05, 0.05], forget-gate
    /// biases 1, other biases 0.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, &[stream::INIT]);
        let mut store = ParameterStore::new();
        let mat = |rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize| -> Value {
            Value::Matrix(Array2::from_shape_fn((rows, cols), |_| rng.random_range(-0.05..=0.05)))
        };
        let lstm_bias = |units: usize| -> Value {
            let mut b = Array1::zeros(4 * units);
            for u in units..2 * units {
                b[u] = 1.0;
            }
            Value::Vector(b)
        };

        store.insert(
            "emb.w",
            Component::Embedding,
            mat(&mut rng, config.vocab_size, config.dec_units),
        );
        for l in 0..config.enc_layers {
            let d = if l == 0 { config.input_dim } else { config.enc_units };
            store.insert(
                &format!("enc.l{l}.w_ih"),
                Component::Encoder,
                mat(&mut rng, 4 * config.enc_units, d),
            );
            store.insert(
                &format!("enc.l{l}.w_hh"),
                Component::Encoder,
                mat(&mut rng, 4 * config.enc_units, config.enc_units),
            );
            store.insert(&format!("enc.l{l}.b"), Component::Encoder, lstm_bias(config.enc_units));
        }
        store.insert(
            "enc.proj.w",
            Component::Encoder,
            mat(&mut rng, config.proj_dim, config.enc_units),
        );
        store.insert(
            "enc.proj.b",
            Component::Encoder,
            Value::Vector(Array1::zeros(config.proj_dim)),
        );
        for l in 0..config.dec_layers {
            store.insert(
                &format!("dec.l{l}.w_ih"),
                Component::Decoder,
                mat(&mut rng, 4 * config.dec_units, config.dec_units),
            );
            store.insert(
                &format!("dec.l{l}.w_hh"),
                Component::Decoder,
                mat(&mut rng, 4 * config.dec_units, config.dec_units),
            );
            store.insert(&format!("dec.l{l}.b"), Component::Decoder, lstm_bias(config.dec_units));
        }
        store.insert(
            "dec.proj.w",
            Component::Decoder,
            mat(&mut rng, config.proj_dim, config.dec_units),
        );
        store.insert(
            "dec.proj.b",
            Component::Decoder,
            Value::Vector(Array1::zeros(config.proj_dim)),
        );
        store.insert(
            "joint.w1",
            Component::Joint,
            mat(&mut rng, config.joint_units, config.proj_dim),
        );
        store.insert("joint.b1", Component::Joint, Value::Vector(Array1::zeros(config.joint_units)));
        store.insert(
            "joint.w2",
            Component::Joint,
            mat(&mut rng, config.vocab_size, config.joint_units),
        );
        store.insert("joint.b2", Component::Joint, Value::Vector(Array1::zeros(config.vocab_size)));

        Ok(RnntModel { config, store })
    }

    pub fn from_parts(config: ModelConfig, store: ParameterStore) -> Result<Self> {
        config.validate()?;
        let reference = RnntModel::init(config.clone(), 0)?;
        if reference.store.len() != store.len() {
            return Err(Error::shape(format!(
                "parameter store has {} entries, config implies {}",
                store.len(),
                reference.store.len()
            )));
        }
        for (expect, got) in reference.store.iter().zip(store.iter()) {
            if expect.name != got.name
                || expect.component != got.component
                || expect.value.dims() != got.value.dims()
            {
                return Err(Error::shape(format!(
                    "parameter {:?} does not match config (expected {:?} {:?})",
                    got.name,
                    expect.name,
                    expect.value.dims()
                )));
            }
        }
        Ok(RnntModel { config, store })
    }

    /// Encoder forward: stacked unidirectional LSTMs plus a linear
    /// projection to `proj_dim`. Returns one state per input frame.
    pub fn encode(&self, feats: &FeatureMatrix) -> Result<(Array2<f64>, EncoderCache)> {
        if feats.dim() != self.config.input_dim {
            return Err(Error::shape(format!(
                "encoder expects {} dims, features have {}",
                self.config.input_dim,
                feats.dim()
            )));
        }
        if feats.frames() == 0 {
            return Err(Error::shape("encoder needs at least one frame"));
        }
        let xs = feats.values.clone();
        let mut layers: Vec<LayerCache> = Vec::with_capacity(self.config.enc_layers);
        for l in 0..self.config.enc_layers {
            let input = if l == 0 { &xs } else { &layers[l - 1].h };
            let cache = layer_forward(
                input,
                self.store.mat(&format!("enc.l{l}.w_ih")),
                self.store.mat(&format!("enc.l{l}.w_hh")),
                self.store.vec(&format!("enc.l{l}.b")),
            );
            layers.push(cache);
        }
        let h_top = &layers[self.config.enc_layers - 1].h;
        let states = h_top.dot(&self.store.mat("enc.proj.w").t()) + self.store.vec("enc.proj.b");
        Ok((states, EncoderCache { xs, layers }))
    }

    /// Accumulates encoder parameter gradients for upstream gradient `d_h`
    /// (one row per encoder output state).
    pub fn encode_backward(&mut self, cache: &EncoderCache, d_states: &Array2<f64>) {
        let h_top = &cache.layers[self.config.enc_layers - 1].h;
        let d_proj_w = d_states.t().dot(h_top);
        let d_proj_b = d_states.sum_axis(Axis(0));
        let mut d_h = d_states.dot(self.store.mat("enc.proj.w"));
        self.store.add_grad_mat("enc.proj.w", &d_proj_w);
        self.store.add_grad_vec("enc.proj.b", &d_proj_b);
        for l in (0..self.config.enc_layers).rev() {
            let input = if l == 0 { &cache.xs } else { &cache.layers[l - 1].h };
            let grads = layer_backward(
                input,
                &cache.layers[l],
                &d_h,
                self.store.mat(&format!("enc.l{l}.w_ih")),
                self.store.mat(&format!("enc.l{l}.w_hh")),
            );
            self.store.add_grad_mat(&format!("enc.l{l}.w_ih"), &grads.d_w_ih);
            self.store.add_grad_mat(&format!("enc.l{l}.w_hh"), &grads.d_w_hh);
            self.store.add_grad_vec(&format!("enc.l{l}.b"), &grads.d_b);
            d_h = grads.d_xs;
        }
    }

    /// Prediction-network forward. Row 0 is the state after the start
    /// symbol (the blank embedding); row u conditions on labels[..u].
    pub fn predict(&self, labels: &[u32]) -> Result<(Array2<f64>, DecoderCache)> {
        let mut symbol_rows = Vec::with_capacity(labels.len() + 1);
        symbol_rows.push(BLANK as usize);
        for &l in labels {
            if l == BLANK {
                return Err(Error::invalid("labels must not contain blank"));
            }
            if l as usize >= self.config.vocab_size {
                return Err(Error::UnknownToken(l));
            }
            symbol_rows.push(l as usize);
        }
        let emb = self.store.mat("emb.w");
        let mut xs = Array2::zeros((symbol_rows.len(), self.config.dec_units));
        for (r, &row) in symbol_rows.iter().enumerate() {
            xs.row_mut(r).assign(&emb.row(row));
        }
        let mut layers: Vec<LayerCache> = Vec::with_capacity(self.config.dec_layers);
        for l in 0..self.config.dec_layers {
            let input = if l == 0 { &xs } else { &layers[l - 1].h };
            let cache = layer_forward(
                input,
                self.store.mat(&format!("dec.l{l}.w_ih")),
                self.store.mat(&format!("dec.l{l}.w_hh")),
                self.store.vec(&format!("dec.l{l}.b")),
            );
            layers.push(cache);
        }
        let h_top = &layers[self.config.dec_layers - 1].h;
        let states = h_top.dot(&self.store.mat("dec.proj.w").t()) + self.store.vec("dec.proj.b");
        Ok((states, DecoderCache { symbol_rows, xs, layers }))
    }

    pub fn predict_backward(&mut self, cache: &DecoderCache, d_states: &Array2<f64>) {
        let h_top = &cache.layers[self.config.dec_layers - 1].h;
        let d_proj_w = d_states.t().dot(h_top);
        let d_proj_b = d_states.sum_axis(Axis(0));
        let mut d_h = d_states.dot(self.store.mat("dec.proj.w"));
        self.store.add_grad_mat("dec.proj.w", &d_proj_w);
        self.store.add_grad_vec("dec.proj.b", &d_proj_b);
        for l in (0..self.config.dec_layers).rev() {
            let input = if l == 0 { &cache.xs } else { &cache.layers[l - 1].h };
            let grads = layer_backward(
                input,
                &cache.layers[l],
                &d_h,
                self.store.mat(&format!("dec.l{l}.w_ih")),
                self.store.mat(&format!("dec.l{l}.w_hh")),
            );
            self.store.add_grad_mat(&format!("dec.l{l}.w_ih"), &grads.d_w_ih);
            self.store.add_grad_mat(&format!("dec.l{l}.w_hh"), &grads.d_w_hh);
            self.store.add_grad_vec(&format!("dec.l{l}.b"), &grads.d_b);
            d_h = grads.d_xs;
        }
        // d_h is now the gradient w.r.t. the embedded inputs
        let param = self.store.get_mut("emb.w");
        let emb_grad = match &mut param.grad {
            Value::Matrix(g) => g,
            Value::Vector(_) => unreachable!(),
        };
        for (r, &row) in cache.symbol_rows.iter().enumerate() {
            emb_grad.row_mut(row).scaled_add(1.0, &d_h.row(r));
        }
    }

    /// Joint network over all (frame, label-position) pairs:
    /// logits[t,u,:] = W2 tanh(W1 (H[t] + G[u]) + b1) + b2.
    pub fn joint(&self, enc: &Array2<f64>, dec: &Array2<f64>) -> Result<(Array3<f64>, JointCache)> {
        if enc.ncols() != self.config.proj_dim || dec.ncols() != self.config.proj_dim {
            return Err(Error::shape(format!(
                "joint expects proj dim {}, got {} and {}",
                self.config.proj_dim,
                enc.ncols(),
                dec.ncols()
            )));
        }
        let t_len = enc.nrows();
        let u_len = dec.nrows();
        let mut z = Array2::zeros((t_len * u_len, self.config.proj_dim));
        for t in 0..t_len {
            for u in 0..u_len {
                let mut row = z.row_mut(t * u_len + u);
                row.assign(&enc.row(t));
                row += &dec.row(u);
            }
        }
        let mut a = z.dot(&self.store.mat("joint.w1").t());
        a += self.store.vec("joint.b1");
        let p = a.mapv(f64::tanh);
        let mut flat = p.dot(&self.store.mat("joint.w2").t());
        flat += self.store.vec("joint.b2");
        let logits = flat
            .into_shape_with_order((t_len, u_len, self.config.vocab_size))
            .expect("contiguous reshape");
        Ok((logits, JointCache { z, p, t_len, u_len }))
    }

    /// Backward through the joint; returns gradients w.r.t. the encoder and
    /// decoder state sequences.
    pub fn joint_backward(
        &mut self,
        cache: &JointCache,
        d_logits: &Array3<f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let (t_len, u_len) = (cache.t_len, cache.u_len);
        let v = self.config.vocab_size;
        let d_flat = d_logits
            .to_owned()
            .into_shape_with_order((t_len * u_len, v))
            .expect("contiguous reshape");
        let d_w2 = d_flat.t().dot(&cache.p);
        let d_b2 = d_flat.sum_axis(Axis(0));
        let d_p = d_flat.dot(self.store.mat("joint.w2"));
        let d_a = &d_p * &cache.p.mapv(|p| 1.0 - p * p);
        let d_w1 = d_a.t().dot(&cache.z);
        let d_b1 = d_a.sum_axis(Axis(0));
        let d_z = d_a.dot(self.store.mat("joint.w1"));
        self.store.add_grad_mat("joint.w2", &d_w2);
        self.store.add_grad_vec("joint.b2", &d_b2);
        self.store.add_grad_mat("joint.w1", &d_w1);
        self.store.add_grad_vec("joint.b1", &d_b1);
        let mut d_enc = Array2::zeros((t_len, self.config.proj_dim));
        let mut d_dec = Array2::zeros((u_len, self.config.proj_dim));
        for t in 0..t_len {
            for u in 0..u_len {
                let row = d_z.row(t * u_len + u);
                d_enc.row_mut(t).scaled_add(1.0, &row);
                d_dec.row_mut(u).scaled_add(1.0, &row);
            }
        }
        (d_enc, d_dec)
    }

    /// Decoder state after consuming only the start symbol.
    pub fn decoder_start(&self) -> DecoderState {
        self.advance_with_row(None, BLANK as usize)
    }

    /// Decoder state after consuming one more label.
    pub fn decoder_advance(&self, state: &DecoderState, label: u32) -> Result<DecoderState> {
        if label == BLANK || label as usize >= self.config.vocab_size {
            return Err(Error::UnknownToken(label));
        }
        Ok(self.advance_with_row(Some(state), label as usize))
    }

    fn advance_with_row(&self, state: Option<&DecoderState>, row: usize) -> DecoderState {
        let units = self.config.dec_units;
        let mut hs = Vec::with_capacity(self.config.dec_layers);
        let mut cs = Vec::with_capacity(self.config.dec_layers);
        let mut x = self.store.mat("emb.w").row(row).to_owned();
        for l in 0..self.config.dec_layers {
            let zero_h = Array1::zeros(units);
            let zero_c = Array1::zeros(units);
            let (h_prev, c_prev) = match state {
                Some(s) => (&s.h[l], &s.c[l]),
                None => (&zero_h, &zero_c),
            };
            let step = cell_forward(
                x.view(),
                h_prev.view(),
                c_prev.view(),
                self.store.mat(&format!("dec.l{l}.w_ih")),
                self.store.mat(&format!("dec.l{l}.w_hh")),
                self.store.vec(&format!("dec.l{l}.b")),
            );
            x = step.h.clone();
            hs.push(step.h);
            cs.push(step.c);
        }
        let out = self.store.mat("dec.proj.w").dot(&x) + self.store.vec("dec.proj.b");
        DecoderState { h: hs, c: cs, out }
    }

    /// Joint logits for a single (encoder state, decoder state) pair.
    pub fn joint_step(&self, enc_state: ArrayView1<f64>, dec_out: &Array1<f64>) -> Array1<f64> {
        let z = &enc_state.to_owned() + dec_out;
        let a = self.store.mat("joint.w1").dot(&z) + self.store.vec("joint.b1");
        let p = a.mapv(f64::tanh);
        self.store.mat("joint.w2").dot(&p) + self.store.vec("joint.b2")
    }
}
