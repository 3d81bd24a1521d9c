//! Forward pass and backpropagation through FC, LSTM and softmax layers.
//!
//! Batches arrive as `N x L x D` and are processed time-major internally:
//! row `t * N + n` holds sequence `n` at step `t`, so each LSTM step reads a
//! contiguous block of `N` rows.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView2, Axis, Zip};
use rand::{Rng, RngCore};

use super::loss::softmax_rows;
use super::params::{Dense, Gradients, LstmLayer, NetParams};
use crate::error::{Error, Result};

pub enum Mode<'a> {
    Eval,
    /// Dropout active, masks drawn from the given generator.
    Train(&'a mut dyn RngCore),
}

/// Which output sits on top of the FC stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// FC stack, LSTM layers, output layer.
    Sequence,
    /// FC stack and the temporary per-segment head.
    Segment,
}

/// Which parameter groups receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub fc: bool,
    pub recurrent: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        fc: true,
        recurrent: true,
    };
}

struct FcCache {
    input: Array2<f64>,
    /// Dropout scale per element (0 or 1/(1-p)); `None` in eval mode.
    mask: Option<Array2<f64>>,
    /// Post-dropout, pre-ReLU activation.
    pre_relu: Array2<f64>,
}

struct LstmCache {
    input: Array2<f64>,
    /// Activated gates `[i, f, g, o]`, `T*N x 4H`.
    gates: Array2<f64>,
    cell: Array2<f64>,
    hidden: Array2<f64>,
}

pub struct ForwardCache {
    batch: usize,
    steps: usize,
    route: Route,
    fc: Vec<FcCache>,
    lstm: Vec<LstmCache>,
    top_input: Array2<f64>,
    /// Time-major probabilities `T*N x K`.
    probs: Array2<f64>,
}

impl ForwardCache {
    /// Probabilities as `N x L x K`.
    pub fn probabilities(&self) -> Array3<f64> {
        from_time_major(&self.probs, self.batch, self.steps)
    }

    pub fn probs_time_major(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Post-dropout, pre-ReLU activation of FC layer `layer`, time-major.
    pub fn fc_pre_activation(&self, layer: usize) -> &Array2<f64> {
        &self.fc[layer].pre_relu
    }
}

pub fn to_time_major(x: &Array3<f64>) -> Array2<f64> {
    let (n, l, d) = x.dim();
    let mut out = Array2::zeros((l * n, d));
    for t in 0..l {
        out.slice_mut(s![t * n..(t + 1) * n, ..])
            .assign(&x.slice(s![.., t, ..]));
    }
    out
}

pub fn from_time_major(x: &Array2<f64>, n: usize, l: usize) -> Array3<f64> {
    let k = x.ncols();
    let mut out = Array3::zeros((n, l, k));
    for t in 0..l {
        out.slice_mut(s![.., t, ..])
            .assign(&x.slice(s![t * n..(t + 1) * n, ..]));
    }
    out
}

fn affine(x: &ArrayView2<f64>, layer: &Dense) -> Array2<f64> {
    let mut z = x.dot(&layer.weight);
    z += &layer.bias;
    z
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn lstm_forward(layer: &LstmLayer, input: Array2<f64>, n: usize, steps: usize) -> LstmCache {
    let h = layer.hidden();
    let mut gates = input.dot(&layer.weight_ih);
    gates += &layer.bias;
    let mut cell = Array2::zeros((steps * n, h));
    let mut hidden = Array2::zeros((steps * n, h));
    for t in 0..steps {
        let rows = t * n..(t + 1) * n;
        if t > 0 {
            let prev = hidden.slice(s![(t - 1) * n..t * n, ..]);
            let mut g = gates.slice_mut(s![rows.clone(), ..]);
            general_mat_mul(1.0, &prev, &layer.weight_hh, 1.0, &mut g);
        }
        let mut g = gates.slice_mut(s![rows.clone(), ..]);
        g.slice_mut(s![.., 0..2 * h]).mapv_inplace(sigmoid);
        g.slice_mut(s![.., 2 * h..3 * h]).mapv_inplace(f64::tanh);
        g.slice_mut(s![.., 3 * h..]).mapv_inplace(sigmoid);

        let g = gates.slice(s![rows.clone(), ..]);
        let (gi, gf, gg, go) = (
            g.slice(s![.., 0..h]),
            g.slice(s![.., h..2 * h]),
            g.slice(s![.., 2 * h..3 * h]),
            g.slice(s![.., 3 * h..]),
        );
        let mut c_t = &gi * &gg;
        if t > 0 {
            c_t += &(&gf * &cell.slice(s![(t - 1) * n..t * n, ..]));
        }
        let h_t = &go * &c_t.mapv(f64::tanh);
        cell.slice_mut(s![rows.clone(), ..]).assign(&c_t);
        hidden.slice_mut(s![rows, ..]).assign(&h_t);
    }
    LstmCache {
        input,
        gates,
        cell,
        hidden,
    }
}

/// Runs the network on an `N x L x D` batch.
pub fn forward_route(
    params: &NetParams,
    batch: &Array3<f64>,
    route: Route,
    mut mode: Mode<'_>,
) -> Result<ForwardCache> {
    let (n, steps, d) = batch.dim();
    if d != params.config.input_dim {
        return Err(Error::Shape(format!(
            "input width {d}, network expects {}",
            params.config.input_dim
        )));
    }
    if n == 0 || steps == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if route == Route::Segment && params.head.is_none() {
        return Err(Error::Shape("segment route needs a head".into()));
    }

    let keep = 1.0 - params.config.dropout_p;
    let mut x = to_time_major(batch);
    let mut fc_caches = Vec::with_capacity(params.fc.len());
    for layer in &params.fc {
        let mut z = affine(&x.view(), layer);
        let mask = match &mut mode {
            Mode::Train(rng) if params.config.dropout_p > 0.0 => {
                let scale = 1.0 / keep;
                let m = Array2::from_shape_fn(z.dim(), |_| {
                    if rng.random::<f64>() < keep { scale } else { 0.0 }
                });
                z *= &m;
                Some(m)
            }
            _ => None,
        };
        let a = z.mapv(|v| v.max(0.0));
        fc_caches.push(FcCache {
            input: std::mem::replace(&mut x, a),
            mask,
            pre_relu: z,
        });
    }

    let mut lstm_caches = Vec::new();
    let top = match route {
        Route::Segment => params.head.as_ref().expect("checked"),
        Route::Sequence => {
            for layer in &params.lstm {
                let cache = lstm_forward(layer, x, n, steps);
                x = cache.hidden.clone();
                lstm_caches.push(cache);
            }
            &params.out
        }
    };
    let logits = affine(&x.view(), top);
    let probs = softmax_rows(&logits);
    Ok(ForwardCache {
        batch: n,
        steps,
        route,
        fc: fc_caches,
        lstm: lstm_caches,
        top_input: x,
        probs,
    })
}

pub fn forward(params: &NetParams, batch: &Array3<f64>, mode: Mode<'_>) -> Result<ForwardCache> {
    forward_route(params, batch, Route::Sequence, mode)
}

fn dense_backward(layer: &Dense, input: &Array2<f64>, dz: &Array2<f64>, grad: &mut Dense) -> Array2<f64> {
    general_mat_mul(1.0, &input.t(), dz, 1.0, &mut grad.weight);
    grad.bias += &dz.sum_axis(Axis(0));
    dz.dot(&layer.weight.t())
}

fn dense_param_grad(input: &Array2<f64>, dz: &Array2<f64>, grad: &mut Dense) {
    general_mat_mul(1.0, &input.t(), dz, 1.0, &mut grad.weight);
    grad.bias += &dz.sum_axis(Axis(0));
}

fn lstm_backward(
    layer: &LstmLayer,
    cache: &LstmCache,
    d_hidden: &Array2<f64>,
    n: usize,
    steps: usize,
    grad: &mut LstmLayer,
    need_input_grad: bool,
) -> Option<Array2<f64>> {
    let h = layer.hidden();
    let mut d_pre = Array2::<f64>::zeros((steps * n, 4 * h));
    let mut dh_next = Array2::<f64>::zeros((n, h));
    let mut dc_next = Array2::<f64>::zeros((n, h));
    for t in (0..steps).rev() {
        let rows = t * n..(t + 1) * n;
        let g = cache.gates.slice(s![rows.clone(), ..]);
        let c = cache.cell.slice(s![rows.clone(), ..]);
        let dh = &d_hidden.slice(s![rows.clone(), ..]) + &dh_next;

        let (gi, gf, gg, go) = (
            g.slice(s![.., 0..h]),
            g.slice(s![.., h..2 * h]),
            g.slice(s![.., 2 * h..3 * h]),
            g.slice(s![.., 3 * h..]),
        );
        let tc = c.mapv(f64::tanh);
        let mut dc = dc_next;
        Zip::from(&mut dc)
            .and(&dh)
            .and(&go)
            .and(&tc)
            .for_each(|dc, &dh, &o, &tc| *dc += dh * o * (1.0 - tc * tc));

        let mut dp = d_pre.slice_mut(s![rows, ..]);
        {
            let (mut di, rest) = dp.view_mut().split_at(Axis(1), h);
            let (mut df, rest) = rest.split_at(Axis(1), h);
            let (mut dg, mut do_) = rest.split_at(Axis(1), h);
            Zip::from(&mut di)
                .and(&dc)
                .and(&gi)
                .and(&gg)
                .for_each(|d, &dc, &i, &g| *d = dc * g * i * (1.0 - i));
            Zip::from(&mut dg)
                .and(&dc)
                .and(&gi)
                .and(&gg)
                .for_each(|d, &dc, &i, &g| *d = dc * i * (1.0 - g * g));
            Zip::from(&mut do_)
                .and(&dh)
                .and(&tc)
                .and(&go)
                .for_each(|d, &dh, &tc, &o| *d = dh * tc * o * (1.0 - o));
            if t > 0 {
                let c_prev = cache.cell.slice(s![(t - 1) * n..t * n, ..]);
                Zip::from(&mut df)
                    .and(&dc)
                    .and(&c_prev)
                    .and(&gf)
                    .for_each(|d, &dc, &cp, &f| *d = dc * cp * f * (1.0 - f));
            } else {
                df.fill(0.0);
            }
        }
        dc_next = &dc * &gf;
        if t > 0 {
            let dp = d_pre.slice(s![t * n..(t + 1) * n, ..]);
            dh_next = dp.dot(&layer.weight_hh.t());
            let h_prev = cache.hidden.slice(s![(t - 1) * n..t * n, ..]);
            general_mat_mul(1.0, &h_prev.t(), &dp, 1.0, &mut grad.weight_hh);
        }
    }
    general_mat_mul(1.0, &cache.input.t(), &d_pre, 1.0, &mut grad.weight_ih);
    grad.bias += &d_pre.sum_axis(Axis(0));
    need_input_grad.then(|| d_pre.dot(&layer.weight_ih.t()))
}

/// Accumulates into `grads` the gradient of a loss whose derivative with
/// respect to the (time-major) logits is `d_logits`.
pub fn backward_from_logits(
    params: &NetParams,
    cache: &ForwardCache,
    d_logits: &Array2<f64>,
    trainable: Trainable,
    grads: &mut Gradients,
) {
    let (n, steps) = (cache.batch, cache.steps);
    let mut d_x = match cache.route {
        Route::Segment => {
            let head = params.head.as_ref().expect("segment route has a head");
            let g = grads.head.as_mut().expect("gradient head");
            if !trainable.fc {
                dense_param_grad(&cache.top_input, d_logits, g);
                return;
            }
            dense_backward(head, &cache.top_input, d_logits, g)
        }
        Route::Sequence => {
            if !trainable.recurrent && !trainable.fc {
                return;
            }
            let mut d = dense_backward(&params.out, &cache.top_input, d_logits, &mut grads.out);
            for (i, layer) in params.lstm.iter().enumerate().rev() {
                let need_input = i > 0 || trainable.fc;
                match lstm_backward(layer, &cache.lstm[i], &d, n, steps, &mut grads.lstm[i], need_input) {
                    Some(dx) => d = dx,
                    None => return,
                }
            }
            d
        }
    };
    if !trainable.fc {
        return;
    }
    for (i, layer) in params.fc.iter().enumerate().rev() {
        let c = &cache.fc[i];
        let mut dz = d_x;
        Zip::from(&mut dz)
            .and(&c.pre_relu)
            .for_each(|d, &z| if z <= 0.0 { *d = 0.0 });
        if let Some(m) = &c.mask {
            dz *= m;
        }
        if i == 0 {
            dense_param_grad(&c.input, &dz, &mut grads.fc[0]);
            return;
        }
        d_x = dense_backward(layer, &c.input, &dz, &mut grads.fc[i]);
    }
}

/// Argmax per row; ties go to the lower class index.
pub fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
