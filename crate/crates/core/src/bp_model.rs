//! Hybrid regressor: 1D convolution along cuff pressure, stacked LSTMs over
//! pressure steps, and a ReLU dense head with a single linear output.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{read_tensors, write_tensors, Graph, LstmParams, LstmVars, Tensor, Var};
use crate::error::{Error, Result};
use crate::morpho_grid::MorphoTemporalGrid;

/// Which pressure a model instance estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Target {
    #[serde(rename = "SBP")]
    Sbp,
    #[serde(rename = "DBP")]
    Dbp,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Sbp, Target::Dbp];
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Sbp => "SBP",
            Target::Dbp => "DBP",
        })
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sbp" => Ok(Target::Sbp),
            "dbp" => Ok(Target::Dbp),
            _ => Err(Error::InvalidConfig(format!("unknown target {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_kernels: usize,
    pub kernel_width: usize,
    /// 0 (CNN only), 1 or 2.
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub dense_widths: Vec<usize>,
    pub grid_size: usize,
    /// Feed pressure steps in descending order instead of ascending.
    pub reverse_sequence: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_kernels: 10,
            kernel_width: 107,
            lstm_layers: 2,
            lstm_hidden: 10,
            dense_widths: vec![1000, 500, 250, 100, 50],
            grid_size: 215,
            reverse_sequence: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_kernels == 0 || self.kernel_width == 0 || self.grid_size == 0 {
            return bad("kernel count, kernel width and grid size must be positive".into());
        }
        if self.kernel_width > self.grid_size {
            return bad(format!(
                "kernel width {} exceeds grid size {}",
                self.kernel_width, self.grid_size
            ));
        }
        if self.lstm_layers > 2 {
            return bad(format!("lstm_layers must be 0, 1 or 2, got {}", self.lstm_layers));
        }
        if self.lstm_layers > 0 && self.lstm_hidden == 0 {
            return bad("lstm_hidden must be positive".into());
        }
        if self.dense_widths.is_empty() || self.dense_widths.contains(&0) {
            return bad("dense_widths must be non-empty and positive".into());
        }
        Ok(())
    }

    /// Zero padding `(left, right)` giving same-length convolution output.
    pub fn padding(&self) -> (usize, usize) {
        let total = self.kernel_width - 1;
        (total / 2, total - total / 2)
    }

    /// Width of the flattened features entering the dense stack.
    pub fn flat_width(&self) -> usize {
        let features = if self.lstm_layers == 0 {
            self.n_kernels
        } else {
            self.lstm_hidden
        };
        features * self.grid_size
    }

    /// Named ablation variants: `cnn`, `cnn_lstm1`, `cnn_lstm2`.
    pub fn variant(&self, name: &str) -> Result<Self> {
        let layers = match name {
            "cnn" => 0,
            "cnn_lstm1" => 1,
            "cnn_lstm2" => 2,
            _ => return Err(Error::InvalidConfig(format!("unknown variant {name:?}"))),
        };
        Ok(Self {
            lstm_layers: layers,
            ..self.clone()
        })
    }

    fn to_header(&self) -> String {
        let widths: Vec<String> = self.dense_widths.iter().map(|w| w.to_string()).collect();
        format!(
            "n_kernels={}\nkernel_width={}\nlstm_layers={}\nlstm_hidden={}\ndense_widths={}\ngrid_size={}\nreverse_sequence={}\n",
            self.n_kernels,
            self.kernel_width,
            self.lstm_layers,
            self.lstm_hidden,
            widths.join(","),
            self.grid_size,
            self.reverse_sequence
        )
    }
}

/// Graph handles for every parameter of a [`BpRegressor`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub conv_kernels: Var,
    pub conv_bias: Var,
    pub lstm: Vec<LstmVars>,
    pub dense: Vec<(Var, Var)>,
    pub output: (Var, Var),
}

impl ParamVars {
    /// All parameters in [`BpRegressor::parameters`] order.
    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.conv_kernels, self.conv_bias];
        for l in &self.lstm {
            v.extend([l.w, l.u, l.b]);
        }
        for (w, b) in &self.dense {
            v.extend([*w, *b]);
        }
        v.extend([self.output.0, self.output.1]);
        v
    }

    /// Weight tensors only (biases excluded), for the L1 penalty.
    pub fn weights(&self) -> Vec<Var> {
        let mut v = vec![self.conv_kernels];
        for l in &self.lstm {
            v.extend([l.w, l.u]);
        }
        v.extend(self.dense.iter().map(|(w, _)| *w));
        v.push(self.output.0);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpRegressor {
    config: ModelConfig,
    conv_kernels: Tensor,
    conv_bias: Tensor,
    lstm: Vec<LstmParams>,
    dense: Vec<(Tensor, Tensor)>,
    output: (Tensor, Tensor),
    /// Fixed affine map from the network output to mmHg.
    pub output_offset: f64,
    pub output_scale: f64,
}

impl BpRegressor {
    /// All-zero parameters.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config;
        let lstm = (0..c.lstm_layers)
            .map(|i| {
                let input = if i == 0 { c.n_kernels } else { c.lstm_hidden };
                LstmParams::zeros(input, c.lstm_hidden)
            })
            .collect();
        let mut dense = Vec::new();
        let mut width = c.flat_width();
        for &w in &c.dense_widths {
            dense.push((Tensor::zeros(&[w, width]), Tensor::zeros(&[w])));
            width = w;
        }
        Ok(Self {
            config: c.clone(),
            conv_kernels: Tensor::zeros(&[c.n_kernels, c.grid_size, c.kernel_width]),
            conv_bias: Tensor::zeros(&[c.n_kernels]),
            lstm,
            dense,
            output: (Tensor::zeros(&[1, width]), Tensor::zeros(&[1])),
            output_offset: 0.0,
            output_scale: 1.0,
        })
    }

    /// Glorot-uniform weights, zero biases, deterministic per seed.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |t: &mut Tensor, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in t.values_mut() {
                *v = rng.random_range(-limit..=limit);
            }
        };
        let c = config;
        fill(
            &mut model.conv_kernels,
            c.grid_size * c.kernel_width,
            c.n_kernels * c.kernel_width,
        );
        for l in &mut model.lstm {
            let (d, h) = (l.input(), l.hidden());
            fill(&mut l.w, d, 4 * h);
            fill(&mut l.u, h, 4 * h);
        }
        for (w, _) in &mut model.dense {
            let (o, i) = (w.shape()[0], w.shape()[1]);
            fill(w, i, o);
        }
        let i = model.output.0.shape()[1];
        fill(&mut model.output.0, i, 1);
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn lstm_params(&self) -> &[LstmParams] {
        &self.lstm
    }

    /// Parameter tensors in a fixed order with stable names.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut v = vec![
            ("conv.kernels".to_string(), &self.conv_kernels),
            ("conv.bias".to_string(), &self.conv_bias),
        ];
        for (i, l) in self.lstm.iter().enumerate() {
            v.push((format!("lstm{i}.w"), &l.w));
            v.push((format!("lstm{i}.u"), &l.u));
            v.push((format!("lstm{i}.b"), &l.b));
        }
        for (i, (w, b)) in self.dense.iter().enumerate() {
            v.push((format!("dense{i}.w"), w));
            v.push((format!("dense{i}.b"), b));
        }
        v.push(("out.w".to_string(), &self.output.0));
        v.push(("out.b".to_string(), &self.output.1));
        v
    }

    /// Mutable view in [`BpRegressor::parameters`] order.
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.conv_kernels, &mut self.conv_bias];
        for l in &mut self.lstm {
            v.extend([&mut l.w, &mut l.u, &mut l.b]);
        }
        for (w, b) in &mut self.dense {
            v.extend([w, b]);
        }
        v.extend([&mut self.output.0, &mut self.output.1]);
        v
    }

    /// Whether each entry of [`BpRegressor::parameters`] is a bias.
    pub fn bias_mask(&self) -> Vec<bool> {
        self.parameters()
            .iter()
            .map(|(n, _)| n.ends_with(".bias") || n.ends_with(".b"))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Sum of |w| over weights (biases excluded).
    pub fn l1_norm(&self) -> f64 {
        self.parameters()
            .iter()
            .zip(self.bias_mask())
            .filter(|(_, is_bias)| !is_bias)
            .flat_map(|((_, t), _)| t.values().iter())
            .map(|v| v.abs())
            .sum()
    }

    pub fn set_output_bias(&mut self, v: f64) {
        self.output.1.values_mut()[0] = v;
    }

    /// Adds every parameter to `g` as a tracked leaf.
    pub fn bind(&self, g: &mut Graph) -> ParamVars {
        ParamVars {
            conv_kernels: g.param(&self.conv_kernels),
            conv_bias: g.param(&self.conv_bias),
            lstm: self
                .lstm
                .iter()
                .map(|l| LstmVars {
                    w: g.param(&l.w),
                    u: g.param(&l.u),
                    b: g.param(&l.b),
                })
                .collect(),
            dense: self
                .dense
                .iter()
                .map(|(w, b)| (g.param(w), g.param(b)))
                .collect(),
            output: (g.param(&self.output.0), g.param(&self.output.1)),
        }
    }

    /// Adds a grid to `g` as a constant `rows × columns` input, honouring
    /// the sequence direction.
    pub fn input(&self, g: &mut Graph, grid: &MorphoTemporalGrid) -> Result<Var> {
        let n = self.config.grid_size;
        if grid.size() != n {
            return Err(Error::Shape(format!(
                "grid of size {} for a model expecting {n}",
                grid.size()
            )));
        }
        let values = if self.config.reverse_sequence {
            grid.reversed_columns().values().to_vec()
        } else {
            grid.values().to_vec()
        };
        g.constant_from(vec![n, n], values)
    }

    /// Raw network output (before the output affine map) for an input node,
    /// recording every intermediate shape in `trace` when given.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        p: &ParamVars,
        x: Var,
        mut trace: Option<&mut Vec<Vec<usize>>>,
    ) -> Result<Var> {
        let mut record = |g: &Graph, v: Var| {
            if let Some(t) = trace.as_deref_mut() {
                t.push(g.shape(v).to_vec());
            }
        };
        record(g, x);
        let (pl, pr) = self.config.padding();
        let conv = g.conv1d(x, p.conv_kernels, p.conv_bias, pl, pr)?;
        let mut h = g.relu(conv);
        record(g, h);
        if !p.lstm.is_empty() {
            h = g.transpose(h)?;
            record(g, h);
            for l in &p.lstm {
                h = g.lstm(h, *l)?;
            }
        }
        let mut h = g.flatten(h);
        record(g, h);
        for (w, b) in &p.dense {
            let z = g.dense(h, *w, *b)?;
            h = g.relu(z);
            record(g, h);
        }
        let out = g.dense(h, p.output.0, p.output.1)?;
        record(g, out);
        Ok(out)
    }

    /// Estimated pressure in mmHg.
    pub fn forward(&self, grid: &MorphoTemporalGrid) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.bind(&mut g);
        let x = self.input(&mut g, grid)?;
        let out = self.forward_graph(&mut g, &p, x, None)?;
        Ok(self.output_offset + self.output_scale * g.value(out)[0])
    }

    /// Shapes of the input and of every layer output.
    pub fn shape_trace(&self, grid: &MorphoTemporalGrid) -> Result<Vec<Vec<usize>>> {
        let mut g = Graph::new();
        let p = self.bind(&mut g);
        let x = self.input(&mut g, grid)?;
        let mut trace = Vec::new();
        self.forward_graph(&mut g, &p, x, Some(&mut trace))?;
        Ok(trace)
    }

    /// Checkpoint: magic `MBPM`, u32 header length, `key=value` header lines
    /// (model config, target, output map), then the tensor container.
    pub fn save<W: Write>(&self, mut w: W, target: Target) -> Result<()> {
        let header = format!(
            "{}target={target}\noutput_offset={:?}\noutput_scale={:?}\n",
            self.config.to_header(),
            self.output_offset,
            self.output_scale
        );
        w.write_all(b"MBPM")?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(header.as_bytes())?;
        let tensors: Vec<(String, Tensor)> = self
            .parameters()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        write_tensors(w, &tensors)
    }

    pub fn load<R: Read>(mut r: R) -> Result<(Self, Target)> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"MBPM" {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let header = String::from_utf8(header).map_err(|e| Error::Format(e.to_string()))?;
        let mut config = ModelConfig::default();
        let mut target = None;
        let (mut offset, mut scale) = (0.0, 1.0);
        let bad = |k: &str| Error::Format(format!("bad header value for {k}"));
        for line in header.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(line))?;
            match k {
                "n_kernels" => config.n_kernels = v.parse().map_err(|_| bad(k))?,
                "kernel_width" => config.kernel_width = v.parse().map_err(|_| bad(k))?,
                "lstm_layers" => config.lstm_layers = v.parse().map_err(|_| bad(k))?,
                "lstm_hidden" => config.lstm_hidden = v.parse().map_err(|_| bad(k))?,
                "dense_widths" => {
                    config.dense_widths = v
                        .split(',')
                        .map(|s| s.parse().map_err(|_| bad(k)))
                        .collect::<Result<_>>()?
                }
                "grid_size" => config.grid_size = v.parse().map_err(|_| bad(k))?,
                "reverse_sequence" => config.reverse_sequence = v.parse().map_err(|_| bad(k))?,
                "target" => target = Some(v.parse()?),
                "output_offset" => offset = v.parse().map_err(|_| bad(k))?,
                "output_scale" => scale = v.parse().map_err(|_| bad(k))?,
                _ => return Err(Error::Format(format!("unknown header key {k:?}"))),
            }
        }
        let target = target.ok_or_else(|| Error::Format("missing target".into()))?;
        let mut model = Self::zeros(&config)?;
        model.output_offset = offset;
        model.output_scale = scale;
        let tensors = read_tensors(r)?;
        let names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
        if tensors.len() != names.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                names.len(),
                tensors.len()
            )));
        }
        for ((name, slot), (got_name, t)) in names.iter().zip(model.parameters_mut()).zip(tensors) {
            if *name != got_name || slot.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "tensor {got_name} {:?} does not match {name} {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok((model, target))
    }
}
