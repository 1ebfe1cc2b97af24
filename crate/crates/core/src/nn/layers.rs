//! Dense layers, MLP stacks and gated recurrent units.
//!
//! Every layer works on row-major batches: an input of shape `B×in` maps to
//! an output of shape `B×out`. Weights live in a [`ParamStore`]; the layer
//! structs only hold handles, so they are cheap to copy into a tape.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::init::variance_scaling_init;
use super::params::{Grads, ParamId, ParamStore};
use crate::error::{shape, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Exp,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::None => x,
            Activation::Relu => x.max(0.0),
            Activation::Exp => x.exp(),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::None => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Exp => y,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
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

fn check_cols(what: &str, x: &ArrayView2<f64>, expected: usize) -> Result<()> {
    if x.ncols() != expected {
        return Err(shape(format!(
            "{what}: expected {expected} columns, got {}",
            x.ncols()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct DenseLayer {
    pub weights: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub input_size: usize,
    pub output_size: usize,
}

impl DenseLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_size: usize,
        output_size: usize,
        activation: Activation,
        trainable: bool,
        l2: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = variance_scaling_init(input_size, output_size, rng)?;
        let weights = store.add(format!("{name}/weights"), w, trainable, l2)?;
        let bias = store.add(
            format!("{name}/bias"),
            Array2::zeros((1, output_size)),
            trainable,
            false,
        )?;
        Ok(Self {
            weights,
            bias,
            activation,
            input_size,
            output_size,
        })
    }

    /// `activation(x W + b)` for a batch `x` of shape `B×in`.
    pub fn forward(&self, store: &ParamStore, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_cols("dense input", &x, self.input_size)?;
        let mut y = x.dot(store.value(self.weights));
        y += &store.value(self.bias).row(0);
        let act = self.activation;
        if act != Activation::None {
            y.mapv_inplace(|v| act.apply(v));
        }
        Ok(y)
    }

    /// Backward pass given the forward input `x`, output `y` and upstream
    /// gradient `dy`. Returns the gradient with respect to `x`.
    pub(crate) fn backward(
        &self,
        store: &ParamStore,
        x: &Array2<f64>,
        y: &Array2<f64>,
        dy: &Array2<f64>,
        grads: &mut Grads,
    ) -> Array2<f64> {
        let act = self.activation;
        let da = if act == Activation::None {
            dy.clone()
        } else {
            let mut da = dy.clone();
            Zip::from(&mut da)
                .and(y)
                .for_each(|d, &y| *d *= act.derivative_from_output(y));
            da
        };
        if store.is_trainable(self.weights) {
            grads
                .get_mut(self.weights)
                .scaled_add(1.0, &x.t().dot(&da));
        }
        if store.is_trainable(self.bias) {
            let db = da.sum_axis(Axis(0));
            let mut g = grads.get_mut(self.bias).row_mut(0);
            g += &db;
        }
        da.dot(&store.value(self.weights).t())
    }
}

/// Feed-forward stack: ReLU hidden layers (L2-penalized) and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_size: usize,
        hidden: &[usize],
        output_size: usize,
        trainable: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_size;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(DenseLayer::new(
                store,
                &format!("{name}/hidden{i}"),
                fan_in,
                h,
                Activation::Relu,
                trainable,
                true,
                rng,
            )?);
            fan_in = h;
        }
        layers.push(DenseLayer::new(
            store,
            &format!("{name}/output"),
            fan_in,
            output_size,
            Activation::None,
            trainable,
            false,
            rng,
        )?);
        Ok(Self { layers })
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map(|l| l.output_size).unwrap_or(0)
    }

    pub fn forward(&self, store: &ParamStore, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut h = x.to_owned();
        for layer in &self.layers {
            h = layer.forward(store, h.view())?;
        }
        Ok(h)
    }
}

/// Per-sequence dropout masks for a GRU: one mask per gate on the input and
/// one per gate on the recurrent state (update, reset, candidate order).
#[derive(Clone, Debug)]
pub struct GruMasks {
    pub input: [Array2<f64>; 3],
    pub hidden: [Array2<f64>; 3],
}

impl GruMasks {
    pub fn sample<R: Rng + ?Sized>(
        batch: usize,
        input_size: usize,
        hidden_size: usize,
        rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut m = |cols| super::dropout::dropout_mask((batch, cols), rate, rng, true);
        Ok(Self {
            input: [m(input_size)?, m(input_size)?, m(input_size)?],
            hidden: [m(hidden_size)?, m(hidden_size)?, m(hidden_size)?],
        })
    }
}

/// Gated recurrent unit with the candidate-mix update
/// `h' = (1 - z) ⊙ h + z ⊙ h̃`.
///
/// Weight layout: `w_input` is `in×3H`, `w_hidden` is `H×3H`, `bias` is
/// `1×3H`; column blocks are ordered update gate, reset gate, candidate.
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

/// Gate activations retained for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct GruCache {
    pub update: Array2<f64>,
    pub reset: Array2<f64>,
    pub candidate: Array2<f64>,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        trainable: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let h3 = 3 * hidden_size;
        let w_input = store.add(
            format!("{name}/w_input"),
            variance_scaling_init(input_size, h3, rng)?,
            trainable,
            false,
        )?;
        let w_hidden = store.add(
            format!("{name}/w_hidden"),
            variance_scaling_init(hidden_size, h3, rng)?,
            trainable,
            false,
        )?;
        let bias = store.add(
            format!("{name}/bias"),
            Array2::zeros((1, h3)),
            trainable,
            false,
        )?;
        Ok(Self {
            w_input,
            w_hidden,
            bias,
            input_size,
            hidden_size,
        })
    }

    fn gate_pre(
        &self,
        store: &ParamStore,
        gate: usize,
        x: &ArrayView2<f64>,
        h: &ArrayView2<f64>,
    ) -> Array2<f64> {
        let hs = self.hidden_size;
        let cols = s![.., gate * hs..(gate + 1) * hs];
        let mut a = x.dot(&store.value(self.w_input).slice(cols));
        a += &h.dot(&store.value(self.w_hidden).slice(cols));
        a += &store.value(self.bias).slice(s![0, gate * hs..(gate + 1) * hs]);
        a
    }

    pub(crate) fn forward_cached(
        &self,
        store: &ParamStore,
        x: ArrayView2<f64>,
        h: ArrayView2<f64>,
        masks: Option<&GruMasks>,
    ) -> Result<(Array2<f64>, GruCache)> {
        check_cols("gru input", &x, self.input_size)?;
        check_cols("gru state", &h, self.hidden_size)?;
        if x.nrows() != h.nrows() {
            return Err(shape(format!(
                "gru batch mismatch: input has {} rows, state {}",
                x.nrows(),
                h.nrows()
            )));
        }
        let masked = |v: &ArrayView2<f64>, m: Option<&Array2<f64>>| match m {
            Some(m) => v * m,
            None => v.to_owned(),
        };
        let xm = |g: usize| masked(&x, masks.map(|m| &m.input[g]));
        let hm = |g: usize| masked(&h, masks.map(|m| &m.hidden[g]));

        let mut update = self.gate_pre(store, 0, &xm(0).view(), &hm(0).view());
        update.mapv_inplace(sigmoid);
        let mut reset = self.gate_pre(store, 1, &xm(1).view(), &hm(1).view());
        reset.mapv_inplace(sigmoid);
        let gated = &reset * &hm(2);
        let mut candidate = self.gate_pre(store, 2, &xm(2).view(), &gated.view());
        candidate.mapv_inplace(f64::tanh);

        let mut out = Array2::zeros(h.raw_dim());
        Zip::from(&mut out)
            .and(&update)
            .and(&h)
            .and(&candidate)
            .for_each(|o, &z, &hp, &c| *o = (1.0 - z) * hp + z * c);
        Ok((
            out,
            GruCache {
                update,
                reset,
                candidate,
            },
        ))
    }

    /// One step for a batch: `x` is `B×in`, `h` is `B×H`.
    pub fn forward(
        &self,
        store: &ParamStore,
        x: ArrayView2<f64>,
        h: ArrayView2<f64>,
        masks: Option<&GruMasks>,
    ) -> Result<Array2<f64>> {
        self.forward_cached(store, x, h, masks).map(|(o, _)| o)
    }

    /// Returns `(dx, dh)` and accumulates weight gradients when trainable.
    pub(crate) fn backward(
        &self,
        store: &ParamStore,
        x: &Array2<f64>,
        h: &Array2<f64>,
        masks: Option<&GruMasks>,
        cache: &GruCache,
        dout: &Array2<f64>,
        grads: &mut Grads,
    ) -> (Array2<f64>, Array2<f64>) {
        let hs = self.hidden_size;
        let trainable = store.is_trainable(self.w_input);
        let GruCache {
            update: z,
            reset: r,
            candidate: c,
        } = cache;

        let apply = |v: &Array2<f64>, m: Option<&Array2<f64>>| match m {
            Some(m) => v * m,
            None => v.clone(),
        };
        let xm = |g: usize| apply(x, masks.map(|m| &m.input[g]));
        let hm = |g: usize| apply(h, masks.map(|m| &m.hidden[g]));

        // dh' = (1-z) dh + ... ; dz = dh'(c - h); dc = dh' z
        let mut dh = dout * &z.mapv(|v| 1.0 - v);
        let mut da_z = Array2::zeros(z.raw_dim());
        Zip::from(&mut da_z)
            .and(dout)
            .and(c)
            .and(h)
            .and(z)
            .for_each(|d, &g, &c, &hp, &z| *d = g * (c - hp) * z * (1.0 - z));
        let mut da_c = Array2::zeros(c.raw_dim());
        Zip::from(&mut da_c)
            .and(dout)
            .and(z)
            .and(c)
            .for_each(|d, &g, &z, &c| *d = g * z * (1.0 - c * c));

        let w_in = store.value(self.w_input);
        let w_h = store.value(self.w_hidden);
        let block = |g: usize| s![.., g * hs..(g + 1) * hs];

        let h_cand = hm(2);
        let gated = r * &h_cand;
        let d_gated = da_c.dot(&w_h.slice(block(2)).t());
        let mut da_r = Array2::zeros(r.raw_dim());
        Zip::from(&mut da_r)
            .and(&d_gated)
            .and(&h_cand)
            .and(r)
            .for_each(|d, &g, &hc, &r| *d = g * hc * r * (1.0 - r));
        let dh_cand = &d_gated * r;

        let x_in = [xm(0), xm(1), xm(2)];
        let h_in = [hm(0), hm(1), gated];
        let da = [&da_z, &da_r, &da_c];

        if trainable {
            for g in 0..3 {
                let dw = x_in[g].t().dot(da[g]);
                let mut blk = grads.get_mut(self.w_input).slice_mut(block(g));
                blk += &dw;
                let du = h_in[g].t().dot(da[g]);
                let mut blk = grads.get_mut(self.w_hidden).slice_mut(block(g));
                blk += &du;
                let db = da[g].sum_axis(Axis(0));
                let mut blk = grads.get_mut(self.bias).slice_mut(s![0, g * hs..(g + 1) * hs]);
                blk += &db;
            }
        }

        let mut dx = Array2::zeros(x.raw_dim());
        for g in 0..3 {
            let dxg = da[g].dot(&w_in.slice(block(g)).t());
            match masks {
                Some(m) => dx += &(&dxg * &m.input[g]),
                None => dx += &dxg,
            }
        }
        let dh_gates = [
            da_z.dot(&w_h.slice(block(0)).t()),
            da_r.dot(&w_h.slice(block(1)).t()),
            dh_cand,
        ];
        for (g, d) in dh_gates.iter().enumerate() {
            match masks {
                Some(m) => dh += &(d * &m.hidden[g]),
                None => dh += d,
            }
        }
        (dx, dh)
    }

    /// Single-vector convenience step.
    pub fn step(&self, store: &ParamStore, h_prev: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let xv = ArrayView2::from_shape((1, x.len()), x).map_err(|e| shape(e.to_string()))?;
        let hv = ArrayView2::from_shape((1, h_prev.len()), h_prev)
            .map_err(|e| shape(e.to_string()))?;
        Ok(self.forward(store, xv, hv, None)?.into_raw_vec_and_offset().0)
    }
}
