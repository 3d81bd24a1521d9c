use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::features::FEATURE_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub input_dim: usize,
    /// LSTM hidden size `C`; the fully connected layers are `2C` wide.
    pub hidden: usize,
    pub classes: usize,
    pub n_fc: usize,
    pub n_lstm: usize,
    pub dropout_p: f64,
    pub batch_size: usize,
    pub seq_len: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_dim: FEATURE_DIM,
            hidden: 560,
            classes: NUM_CLASSES,
            n_fc: 3,
            n_lstm: 1,
            dropout_p: 0.5,
            batch_size: 16,
            seq_len: 30,
        }
    }
}

impl NetConfig {
    pub fn fc_width(&self) -> usize {
        2 * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("hidden", self.hidden),
            ("classes", self.classes),
            ("n_fc", self.n_fc),
            ("n_lstm", self.n_lstm),
            ("batch_size", self.batch_size),
            ("seq_len", self.seq_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Fc,
    Lstm,
    Out,
    /// Per-segment head used only while pre-training the FC stack.
    Head,
}

/// Affine layer `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Dense {
            weight: Array2::from_shape_fn((input, output), |_| rng.random_range(-bound..=bound)),
            bias: Array1::from_shape_fn(output, |_| rng.random_range(-bound..=bound)),
        }
    }
}

/// Gate blocks are laid out `[input, forget, cell, output]` along the columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub weight_ih: Array2<f64>,
    pub weight_hh: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LstmLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayer {
            weight_ih: Array2::zeros((input, 4 * hidden)),
            weight_hh: Array2::zeros((hidden, 4 * hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.weight_hh.nrows()
    }

    fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut uniform = |shape: (usize, usize), fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_fn(shape, |_| rng.random_range(-bound..=bound))
        };
        let weight_ih = uniform((input, 4 * hidden), input);
        let weight_hh = uniform((hidden, 4 * hidden), hidden);
        let mut bias = uniform((1, 4 * hidden), hidden).remove_axis(ndarray::Axis(0));
        bias.slice_mut(ndarray::s![hidden..2 * hidden]).fill(1.0);
        LstmLayer {
            weight_ih,
            weight_hh,
            bias,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub config: NetConfig,
    pub fc: Vec<Dense>,
    pub lstm: Vec<LstmLayer>,
    pub out: Dense,
    pub head: Option<Dense>,
}

/// Gradients share the parameter layout.
pub type Gradients = NetParams;

impl NetParams {
    /// Uniform `±1/sqrt(fan_in)` initialisation, forget-gate bias 1.
    pub fn init<R: Rng + ?Sized>(config: &NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let width = config.fc_width();
        let mut fc = Vec::with_capacity(config.n_fc);
        let mut input = config.input_dim;
        for _ in 0..config.n_fc {
            fc.push(Dense::init(input, width, rng));
            input = width;
        }
        let mut lstm = Vec::with_capacity(config.n_lstm);
        for _ in 0..config.n_lstm {
            lstm.push(LstmLayer::init(input, config.hidden, rng));
            input = config.hidden;
        }
        let out = Dense::init(config.hidden, config.classes, rng);
        Ok(NetParams {
            config: *config,
            fc,
            lstm,
            out,
            head: None,
        })
    }

    /// All-zero parameters with the layout of `config`.
    pub fn zeros(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let width = config.fc_width();
        let fc = (0..config.n_fc)
            .map(|k| Dense::zeros(if k == 0 { config.input_dim } else { width }, width))
            .collect::<Vec<_>>();
        let lstm = (0..config.n_lstm)
            .map(|k| LstmLayer::zeros(if k == 0 { width } else { config.hidden }, config.hidden))
            .collect();
        Ok(NetParams {
            config: *config,
            fc,
            lstm,
            out: Dense::zeros(config.hidden, config.classes),
            head: None,
        })
    }

    /// Adds a freshly initialised per-segment head on top of the FC stack.
    pub fn attach_head<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.head = Some(Dense::init(
            self.fc_output_dim(),
            self.config.classes,
            rng,
        ));
    }

    pub fn fc_output_dim(&self) -> usize {
        self.fc
            .last()
            .map_or(self.config.input_dim, |d| d.weight.ncols())
    }

    pub fn zeros_like(&self) -> Self {
        NetParams {
            config: self.config,
            fc: self
                .fc
                .iter()
                .map(|d| Dense::zeros(d.weight.nrows(), d.weight.ncols()))
                .collect(),
            lstm: self
                .lstm
                .iter()
                .map(|l| LstmLayer::zeros(l.weight_ih.nrows(), l.hidden()))
                .collect(),
            out: Dense::zeros(self.out.weight.nrows(), self.out.weight.ncols()),
            head: self
                .head
                .as_ref()
                .map(|h| Dense::zeros(h.weight.nrows(), h.weight.ncols())),
        }
    }

    /// Every tensor with its stable name and group, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, ParamGroup, ArrayViewD<'_, f64>)> {
        let mut v = Vec::new();
        for (i, d) in self.fc.iter().enumerate() {
            v.push((format!("fc{}.weight", i + 1), ParamGroup::Fc, d.weight.view().into_dyn()));
            v.push((format!("fc{}.bias", i + 1), ParamGroup::Fc, d.bias.view().into_dyn()));
        }
        for (i, l) in self.lstm.iter().enumerate() {
            let n = i + 1;
            v.push((format!("lstm{n}.weight_ih"), ParamGroup::Lstm, l.weight_ih.view().into_dyn()));
            v.push((format!("lstm{n}.weight_hh"), ParamGroup::Lstm, l.weight_hh.view().into_dyn()));
            v.push((format!("lstm{n}.bias"), ParamGroup::Lstm, l.bias.view().into_dyn()));
        }
        v.push(("fc_out.weight".into(), ParamGroup::Out, self.out.weight.view().into_dyn()));
        v.push(("fc_out.bias".into(), ParamGroup::Out, self.out.bias.view().into_dyn()));
        if let Some(h) = &self.head {
            v.push(("head.weight".into(), ParamGroup::Head, h.weight.view().into_dyn()));
            v.push(("head.bias".into(), ParamGroup::Head, h.bias.view().into_dyn()));
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamGroup, ArrayViewMutD<'_, f64>)> {
        let mut v = Vec::new();
        for d in &mut self.fc {
            v.push((ParamGroup::Fc, d.weight.view_mut().into_dyn()));
            v.push((ParamGroup::Fc, d.bias.view_mut().into_dyn()));
        }
        for l in &mut self.lstm {
            v.push((ParamGroup::Lstm, l.weight_ih.view_mut().into_dyn()));
            v.push((ParamGroup::Lstm, l.weight_hh.view_mut().into_dyn()));
            v.push((ParamGroup::Lstm, l.bias.view_mut().into_dyn()));
        }
        v.push((ParamGroup::Out, self.out.weight.view_mut().into_dyn()));
        v.push((ParamGroup::Out, self.out.bias.view_mut().into_dyn()));
        if let Some(h) = &mut self.head {
            v.push((ParamGroup::Head, h.weight.view_mut().into_dyn()));
            v.push((ParamGroup::Head, h.bias.view_mut().into_dyn()));
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Multiplies every tensor by `s`.
    pub fn scale(&mut self, s: f64) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|v| v * s);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }
}
