//! Two-dimensional toy experiment: a small MLP embedding points of four
//! line segments onto the unit circle, trained with the contrastive loss
//! with and without tuple switching.

use rand::seq::index;
use rand::Rng as _;

use crate::embedding::{l2_norm, EmbeddingMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::evaluation::MetricReport;
use crate::mining::{all_pairs, rho_regularize_tuples};
use crate::objectives::{contrastive_loss, ObjectiveKind, ObjectiveSpec};
use crate::rng;
use crate::spectral::{rho_full, SpectralReport};

/// Orientation of the toy line segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineVariant {
    /// Training lines run along the diagonal, test lines along the
    /// anti-diagonal.
    Diagonal,
    /// Training lines are vertical and separable by `x` only; test lines are
    /// horizontal and separable by `y` only.
    Axis,
}

impl LineVariant {
    pub fn name(self) -> &'static str {
        match self {
            LineVariant::Diagonal => "diagonal",
            LineVariant::Axis => "axis",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "diagonal" => Some(LineVariant::Diagonal),
            "axis" => Some(LineVariant::Axis),
            _ => None,
        }
    }
}

/// Placement of the four parallel segments of each split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineGeometry {
    /// Offset between neighboring lines, across the line direction.
    pub spacing: f64,
    /// Segment length along the line direction.
    pub length: f64,
}

impl Default for LineGeometry {
    fn default() -> Self {
        Self {
            spacing: 1.0,
            length: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub hidden_width: usize,
    /// Number of hidden layers.
    pub layers: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub p_switch: f64,
    pub samples_per_line: usize,
    pub seed: u64,
    pub variant: LineVariant,
    pub geometry: LineGeometry,
    /// Embeddings are recorded every this many iterations.
    pub trace_every: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            hidden_width: 30,
            layers: 2,
            input_dim: 2,
            output_dim: 2,
            iterations: 200,
            batch_size: 24,
            learning_rate: 0.03,
            margin: 0.1,
            p_switch: 0.001,
            samples_per_line: 15,
            seed: 0,
            variant: LineVariant::Diagonal,
            geometry: LineGeometry::default(),
            trace_every: 20,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("hidden_width", self.hidden_width),
            ("layers", self.layers),
            ("input_dim", self.input_dim),
            ("output_dim", self.output_dim),
            ("batch_size", self.batch_size),
            ("trace_every", self.trace_every),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.samples_per_line < 2 {
            return Err(Error::invalid("samples_per_line must be >= 2"));
        }
        if self.input_dim != 2 {
            return Err(Error::invalid("toy lines live in two dimensions"));
        }
        if self.batch_size > 4 * self.samples_per_line {
            return Err(Error::invalid("batch larger than the training set"));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("spacing", self.geometry.spacing),
            ("length", self.geometry.length),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.margin >= 0.0) {
            return Err(Error::invalid("margin must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.p_switch) {
            return Err(Error::invalid("p_switch must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Points and labels of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySplit {
    pub points: EmbeddingMatrix,
    pub labels: LabelVector,
}

const LINES: usize = 4;

fn lines(direction: [f64; 2], geometry: LineGeometry, per_line: usize, r: &mut rng::Rng) -> Result<ToySplit> {
    let normal = [-direction[1], direction[0]];
    let mut data = Vec::with_capacity(LINES * per_line * 2);
    let mut labels = Vec::with_capacity(LINES * per_line);
    for k in 0..LINES {
        let offset = (k as f64 - (LINES - 1) as f64 / 2.0) * geometry.spacing;
        for _ in 0..per_line {
            let t = (r.random::<f64>() - 0.5) * geometry.length;
            data.push(offset * normal[0] + t * direction[0]);
            data.push(offset * normal[1] + t * direction[1]);
            labels.push(k as u32);
        }
    }
    Ok(ToySplit {
        points: EmbeddingMatrix::new(data, LINES * per_line, 2)?,
        labels: LabelVector::new(labels),
    })
}

/// Four training and four test line segments with `samples_per_line`
/// points each, positions along each line drawn uniformly.
pub fn generate_toy_lines(
    variant: LineVariant,
    geometry: LineGeometry,
    samples_per_line: usize,
    seed: u64,
) -> Result<(ToySplit, ToySplit)> {
    if samples_per_line < 2 {
        return Err(Error::invalid("samples_per_line must be >= 2"));
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let (train_dir, test_dir) = match variant {
        LineVariant::Diagonal => ([h, h], [h, -h]),
        LineVariant::Axis => ([0.0, 1.0], [1.0, 0.0]),
    };
    let mut r = rng::stream(seed, 2);
    let train = lines(train_dir, geometry, samples_per_line, &mut r)?;
    let test = lines(test_dir, geometry, samples_per_line, &mut r)?;
    Ok((train, test))
}

/// Hidden activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `outputs x inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

/// Fully connected network: hidden layers with activation, linear head, and
/// projection of the head output onto the unit circle.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpState {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

/// Gradient with the same layout as [`MlpState::parameters`].
pub type MlpGradient = Vec<f64>;

impl MlpState {
    /// Uniform fan-in initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(cfg: &ToyConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed, 0);
        let mut sizes = vec![cfg.input_dim];
        sizes.extend(std::iter::repeat_n(cfg.hidden_width, cfg.layers));
        sizes.push(cfg.output_dim);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = (1.0 / w[0] as f64).sqrt();
                let mut draw = || (r.random::<f64>() * 2.0 - 1.0) * bound;
                let weights = (0..w[0] * w[1]).map(|_| draw()).collect();
                let bias = (0..w[1]).map(|_| draw()).collect();
                Dense {
                    weights,
                    bias,
                    inputs: w[0],
                    outputs: w[1],
                }
            })
            .collect();
        Self {
            layers,
            activation: Activation::Relu,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").outputs
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        let total: usize = self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum();
        if params.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                found: params.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// Activations of every layer for one input; the last entry is the raw
    /// head output.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(acts.last().expect("input"));
            if i + 1 < self.layers.len() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Head outputs before the unit-circle projection.
    pub fn forward_raw(&self, inputs: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if inputs.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: inputs.dim(),
            });
        }
        let data: Vec<f64> = inputs
            .iter_rows()
            .flat_map(|x| self.activations(x).pop().expect("output"))
            .collect();
        EmbeddingMatrix::new(data, inputs.rows(), self.output_dim())
    }

    /// Gradient of `sum_i g_i . raw_output_i` with respect to the parameters.
    pub fn backward(&self, inputs: &EmbeddingMatrix, grad_raw: &[f64]) -> Result<MlpGradient> {
        let out = self.output_dim();
        if grad_raw.len() != inputs.rows() * out {
            return Err(Error::DimensionMismatch {
                expected: inputs.rows() * out,
                found: grad_raw.len(),
            });
        }
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
            .collect();
        for (row, x) in inputs.iter_rows().enumerate() {
            let acts = self.activations(x);
            let mut delta = grad_raw[row * out..(row + 1) * out].to_vec();
            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let input = &acts[li];
                let (gw, gb) = &mut grads[li];
                for o in 0..layer.outputs {
                    gb[o] += delta[o];
                    for i in 0..layer.inputs {
                        gw[o * layer.inputs + i] += delta[o] * input[i];
                    }
                }
                if li == 0 {
                    break;
                }
                delta = (0..layer.inputs)
                    .map(|i| {
                        if input[i] <= 0.0 {
                            return 0.0;
                        }
                        (0..layer.outputs).map(|o| layer.weights[o * layer.inputs + i] * delta[o]).sum()
                    })
                    .collect();
            }
        }
        Ok(grads.into_iter().flat_map(|(w, b)| w.into_iter().chain(b)).collect())
    }
}

/// Forward pass projected onto the unit circle. A zero head output is an
/// error.
pub fn mlp_forward(state: &MlpState, inputs: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let raw = state.forward_raw(inputs)?;
    let mut data = raw.into_vec();
    for (i, row) in data.chunks_exact_mut(state.output_dim()).enumerate() {
        let n = l2_norm(row);
        if n == 0.0 {
            return Err(Error::ZeroNorm { row: i });
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    EmbeddingMatrix::new_normalized(data, inputs.rows(), state.output_dim())
}

fn contrastive_spec(margin: f64) -> ObjectiveSpec {
    let mut spec = ObjectiveSpec::new(ObjectiveKind::Contrastive);
    spec.gamma = margin;
    spec
}

/// Contrastive loss of one batch and its gradient with respect to the
/// network parameters. Pairs are exhaustive within the batch and switched
/// with probability `p_switch`.
pub fn toy_loss_and_gradient(
    state: &MlpState,
    inputs: &EmbeddingMatrix,
    labels: &LabelVector,
    margin: f64,
    p_switch: f64,
    switch_seed: u64,
) -> Result<(f64, MlpGradient)> {
    let raw = state.forward_raw(inputs)?;
    let mut pairs = all_pairs(labels);
    if p_switch > 0.0 {
        pairs = rho_regularize_tuples(&pairs, labels, p_switch, switch_seed)?;
    }
    let out = contrastive_loss(&raw, labels, &pairs, &contrastive_spec(margin))?;
    Ok((out.value, state.backward(inputs, &out.grad_embeddings)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub loss: f64,
    /// Spectral decay of the training embeddings over the full spectrum.
    pub rho: f64,
    pub embeddings: EmbeddingMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyRun {
    pub state: MlpState,
    pub trace: Vec<TraceEntry>,
    pub train: ToySplit,
    pub test: ToySplit,
    pub train_embeddings: EmbeddingMatrix,
    pub test_embeddings: EmbeddingMatrix,
    pub spectral: SpectralReport,
    pub metrics: MetricReport,
    pub switched_pairs: usize,
}

const BATCH_STREAM: u64 = 1;

/// Plain minibatch gradient descent on the contrastive loss. With
/// `regularized` set, pair roles are switched with probability
/// `cfg.p_switch`.
pub fn train_toy(cfg: &ToyConfig, regularized: bool) -> Result<ToyRun> {
    cfg.validate()?;
    let (train, test) = generate_toy_lines(cfg.variant, cfg.geometry, cfg.samples_per_line, cfg.seed)?;
    let mut state = MlpState::init(cfg, cfg.seed);
    let p_switch = if regularized { cfg.p_switch } else { 0.0 };
    let mut batches = rng::stream(cfg.seed, BATCH_STREAM);
    let n = train.points.rows();
    let mut trace = Vec::new();
    let mut switched_pairs = 0;
    let record = |state: &MlpState, iteration: usize, loss: f64, trace: &mut Vec<TraceEntry>| -> Result<()> {
        let embeddings = mlp_forward(state, &train.points)?;
        let spectral = SpectralReport::compute(&embeddings, None)?;
        trace.push(TraceEntry {
            iteration,
            loss,
            rho: rho_full(&spectral.singular_values)?,
            embeddings,
        });
        Ok(())
    };
    for it in 0..cfg.iterations {
        let idx = index::sample(&mut batches, n, cfg.batch_size).into_vec();
        let x = train.points.select_rows(&idx)?;
        let y = train.labels.select(&idx);
        let switch_seed = cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ it as u64;
        let raw = state.forward_raw(&x)?;
        let mut pairs = all_pairs(&y);
        if p_switch > 0.0 {
            pairs = rho_regularize_tuples(&pairs, &y, p_switch, switch_seed)?;
            switched_pairs += pairs.provenance.switched.iter().filter(|&&s| s).count();
        }
        let out = contrastive_loss(&raw, &y, &pairs, &contrastive_spec(cfg.margin))
            .map_err(|_| Error::Diverged { iteration: it })?;
        if !out.value.is_finite() {
            return Err(Error::Diverged { iteration: it });
        }
        let grad = state.backward(&x, &out.grad_embeddings)?;
        let params: Vec<f64> = state
            .parameters()
            .iter()
            .zip(&grad)
            .map(|(p, g)| p - cfg.learning_rate * g)
            .collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { iteration: it });
        }
        state.set_parameters(&params)?;
        if (it + 1) % cfg.trace_every == 0 {
            record(&state, it + 1, out.value, &mut trace)?;
        }
    }
    let train_embeddings = mlp_forward(&state, &train.points)?;
    let test_embeddings = mlp_forward(&state, &test.points)?;
    let spectral = SpectralReport::compute(&train_embeddings, Some(&train.labels))?;
    let metrics = MetricReport::compute(&test_embeddings, &test.labels, &[1, 2], cfg.seed)?;
    Ok(ToyRun {
        state,
        trace,
        train,
        test,
        train_embeddings,
        test_embeddings,
        spectral,
        metrics,
        switched_pairs,
    })
}
