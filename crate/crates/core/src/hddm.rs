//! Deep sigmoid autoencoder with separate encoder and decoder stacks.
//!
//! Layer `l` maps `a_{l-1}` to `a_l = s(W_l a_{l-1} + b_l)` with `W_l` stored
//! `out × in`. The encoder has `M` layers ending in the code; the decoder
//! has `M` layers ending in the reconstruction. Training minimizes
//!
//! ```text
//! J = Σₙ ‖xₙ − x̃ₙ‖² + λ_wd Σ_l ‖W_l‖²_F + λ_sp Σ_{hidden l} Σⱼ KL(ρ ‖ ρ̄ₗⱼ)
//! ```
//!
//! where `ρ̄ₗⱼ` is the batch mean of unit `j` on hidden layer `l` (all layers
//! except the output), clamped to `[ε, 1 − ε]`.

use serde::{Deserialize, Serialize};

use crate::error::{DdmError, Result};
use crate::grbm::{GrbmParams, PretrainedLayer, Standardizer};
use crate::numeric::{distance, sgd_step, sigmoid_scalar, Matrix, RngStream, Vector};
use crate::scsp::ScspSequence;

/// Clamp applied to mean activations inside the sparsity penalty.
pub const SPARSITY_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`.
    pub weights: Matrix,
    pub bias: Vector,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            weights: Matrix::zeros(outputs, inputs),
            bias: Vector::zeros(outputs),
        }
    }

    pub fn random(inputs: usize, outputs: usize, range: f64, rng: &mut RngStream) -> Self {
        Layer {
            weights: Matrix::random_uniform(outputs, inputs, range, rng),
            bias: (0..outputs).map(|_| rng.uniform_range(-range, range)).collect(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    fn forward(&self, x: &[f64]) -> Result<Vector> {
        let z = self.weights.mul_vec(x)?;
        Ok(z.iter()
            .zip(self.bias.iter())
            .map(|(a, b)| sigmoid_scalar(a + b))
            .collect())
    }

    fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul_bt(&self.weights)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(self.bias.iter()) {
                *v = sigmoid_scalar(*v + b);
            }
        }
        Ok(z)
    }
}

/// Encoder and decoder stacks of equal depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HddmParams {
    pub encoder: Vec<Layer>,
    pub decoder: Vec<Layer>,
}

impl HddmParams {
    pub fn new(encoder: Vec<Layer>, decoder: Vec<Layer>) -> Result<Self> {
        let p = HddmParams { encoder, decoder };
        p.validate()?;
        Ok(p)
    }

    /// Zero network for `sizes = [input, hidden_1, …, code]`.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::build(sizes, |i, o| Layer::zeros(i, o))
    }

    /// Network with all weights and biases from `U(-range, range)`.
    pub fn random(sizes: &[usize], range: f64, rng: &mut RngStream) -> Result<Self> {
        Self::build(sizes, |i, o| Layer::random(i, o, range, rng))
    }

    fn build(sizes: &[usize], mut layer: impl FnMut(usize, usize) -> Layer) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(DdmError::Config(
                "an autoencoder needs an input size and at least one hidden size".into(),
            ));
        }
        let encoder = sizes.windows(2).map(|w| layer(w[0], w[1])).collect();
        let decoder = sizes.windows(2).rev().map(|w| layer(w[1], w[0])).collect();
        HddmParams::new(encoder, decoder)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.is_empty() || self.encoder.len() != self.decoder.len() {
            return Err(DdmError::shape(
                "HddmParams",
                format!("{} encoder layers", self.encoder.len()),
                format!("{} decoder layers", self.decoder.len()),
            ));
        }
        let mut width = self.encoder[0].inputs();
        for (i, l) in self.layers().enumerate() {
            if l.inputs() != width || l.bias.len() != l.outputs() {
                return Err(DdmError::shape(
                    "HddmParams",
                    format!("layer {} expects {} inputs, bias {}", i + 1, l.inputs(), l.bias.len()),
                    format!("{width} incoming units, {} outputs", l.outputs()),
                ));
            }
            width = l.outputs();
        }
        if width != self.input_dim() {
            return Err(DdmError::shape(
                "HddmParams",
                format!("output dim {width}"),
                format!("input dim {}", self.input_dim()),
            ));
        }
        if !self.is_finite() {
            return Err(DdmError::NonFinite {
                context: "autoencoder parameters".into(),
            });
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.encoder.len()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].inputs()
    }

    pub fn code_dim(&self) -> usize {
        self.encoder[self.depth() - 1].outputs()
    }

    /// `[input, hidden_1, …, code]`.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.encoder.iter().map(Layer::outputs))
            .collect()
    }

    /// Encoder layers followed by decoder layers.
    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.encoder.iter().chain(self.decoder.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().map(|l| l.weights.as_slice().len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }

    /// Every parameter in canonical order: per layer (encoder then decoder),
    /// the weights row-major then the bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in self.layers() {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat) for a network of this shape.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(DdmError::shape(
                "HddmParams::set_flat",
                format!("{} parameters", self.parameter_count()),
                format!("{} values", flat.len()),
            ));
        }
        let mut at = 0;
        for l in self.layers_mut() {
            let n = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
            let m = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + m]);
            at += m;
        }
        Ok(())
    }

    fn block_name(&self, index: usize, bias: bool) -> String {
        let m = self.depth();
        let (side, i) = if index < m { ("encoder", index) } else { ("decoder", index - m) };
        format!("{side}[{}].{}", i + 1, if bias { "bias" } else { "weights" })
    }

    /// `self ← self − lr · grads`, block by block. A non-finite gradient
    /// leaves its block (and all later ones) untouched and names the block.
    pub fn apply_sgd(&mut self, grads: &HddmParams, lr: f64) -> Result<()> {
        if grads.sizes() != self.sizes() {
            return Err(DdmError::shape(
                "apply_sgd",
                format!("{:?}", self.sizes()),
                format!("{:?}", grads.sizes()),
            ));
        }
        let names: Vec<(String, String)> = (0..2 * self.depth())
            .map(|i| (self.block_name(i, false), self.block_name(i, true)))
            .collect();
        for ((l, g), (wname, bname)) in self.layers_mut().zip(grads.layers()).zip(names) {
            let tag = |name: String| {
                move |e: DdmError| match e {
                    DdmError::NonFinite { context } => DdmError::NonFinite {
                        context: format!("{name} {context}"),
                    },
                    other => other,
                }
            };
            sgd_step(l.weights.as_mut_slice(), g.weights.as_slice(), lr).map_err(tag(wname))?;
            sgd_step(&mut l.bias, &g.bias, lr).map_err(tag(bname))?;
        }
        Ok(())
    }
}

/// Output of a stack together with every intermediate activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Pass {
    pub output: Vector,
    /// Activation of each layer in order; the last equals `output`.
    pub activations: Vec<Vector>,
}

fn run_stack(layers: &[Layer], x: &[f64], op: &'static str) -> Result<Pass> {
    if x.len() != layers[0].inputs() {
        return Err(DdmError::shape(
            op,
            format!("input of length {}", x.len()),
            format!("{} expected", layers[0].inputs()),
        ));
    }
    let mut activations = Vec::with_capacity(layers.len());
    let mut cur = Vector::from(x.to_vec());
    for l in layers {
        cur = l.forward(&cur)?;
        activations.push(cur.clone());
    }
    Ok(Pass {
        output: cur,
        activations,
    })
}

/// Code `h` of `x` through the encoder.
pub fn encode(x: &[f64], p: &HddmParams) -> Result<Pass> {
    run_stack(&p.encoder, x, "encode")
}

/// Reconstruction from a code through the decoder.
pub fn decode(h: &[f64], p: &HddmParams) -> Result<Pass> {
    run_stack(&p.decoder, h, "decode")
}

/// Regularization weights and fine-tuning schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub lr: f64,
    /// Learning rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub epochs: usize,
    /// Sequences per mini-batch; every frame of each sequence is used.
    pub batch_size: usize,
    pub lambda_wd: f64,
    pub lambda_sp: f64,
    /// Sparsity target.
    pub rho: f64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            lr: 2e-3,
            lr_decay: 0.6,
            epochs: 20,
            batch_size: 10,
            lambda_wd: 0.01,
            lambda_sp: 0.5,
            rho: 0.001,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| DdmError::Config(format!("{what} out of range: {v}"));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(bad("fine-tune learning rate", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(bad("learning-rate decay", self.lr_decay));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(DdmError::Config("fine-tune epochs and batch size must be at least 1".into()));
        }
        if !(self.lambda_wd >= 0.0 && self.lambda_wd.is_finite()) {
            return Err(bad("weight decay", self.lambda_wd));
        }
        if !(self.lambda_sp >= 0.0 && self.lambda_sp.is_finite()) {
            return Err(bad("sparsity weight", self.lambda_sp));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(bad("sparsity target", self.rho));
        }
        Ok(())
    }
}

/// The three terms of the regularized cost and their weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub weight_decay: f64,
    pub sparsity: f64,
}

/// `KL(ρ ‖ q)` between Bernoulli distributions.
pub fn bernoulli_kl(rho: f64, q: f64) -> f64 {
    rho * (rho / q).ln() + (1.0 - rho) * ((1.0 - rho) / (1.0 - q)).ln()
}

/// Activations of every layer for a batch (one frame per row).
/// Index 0 is the input itself.
fn forward_all(batch: &Matrix, p: &HddmParams) -> Result<Vec<Matrix>> {
    if batch.cols() != p.input_dim() {
        return Err(DdmError::shape(
            "autoencoder batch",
            format!("frames of length {}", batch.cols()),
            format!("input dim {}", p.input_dim()),
        ));
    }
    if batch.rows() == 0 {
        return Err(DdmError::Data("empty batch".into()));
    }
    let mut acts = Vec::with_capacity(2 * p.depth() + 1);
    acts.push(batch.clone());
    for l in p.layers() {
        let next = l.forward_batch(acts.last().expect("input pushed"))?;
        acts.push(next);
    }
    Ok(acts)
}

fn mean_activation(a: &Matrix) -> Vec<f64> {
    crate::numeric::column_means(a).into_vec()
}

fn breakdown(acts: &[Matrix], batch: &Matrix, p: &HddmParams, cfg: &FineTuneConfig) -> CostBreakdown {
    let out = acts.last().expect("non-empty");
    let reconstruction: f64 = out
        .as_slice()
        .iter()
        .zip(batch.as_slice())
        .map(|(a, x)| (a - x) * (a - x))
        .sum();
    let weight_decay: f64 = p.layers().map(|l| l.weights.frobenius_sq()).sum();
    let hidden = &acts[1..acts.len() - 1];
    let sparsity: f64 = hidden
        .iter()
        .flat_map(|a| mean_activation(a))
        .map(|q| bernoulli_kl(cfg.rho, q.clamp(SPARSITY_EPS, 1.0 - SPARSITY_EPS)))
        .sum();
    CostBreakdown {
        total: reconstruction + cfg.lambda_wd * weight_decay + cfg.lambda_sp * sparsity,
        reconstruction,
        weight_decay,
        sparsity,
    }
}

/// Regularized cost of a batch of frames (one per row).
pub fn cost(batch: &Matrix, p: &HddmParams, cfg: &FineTuneConfig) -> Result<CostBreakdown> {
    let acts = forward_all(batch, p)?;
    Ok(breakdown(&acts, batch, p, cfg))
}

/// Exact gradient of [`cost`] with respect to every parameter, returned in
/// the shape of the network, together with the cost itself.
pub fn gradients(batch: &Matrix, p: &HddmParams, cfg: &FineTuneConfig) -> Result<(HddmParams, CostBreakdown)> {
    let acts = forward_all(batch, p)?;
    let c = breakdown(&acts, batch, p, cfg);
    let layers: Vec<&Layer> = p.layers().collect();
    let n_layers = layers.len();
    let n = batch.rows() as f64;

    let mut grads: Vec<Layer> = Vec::with_capacity(n_layers);
    // δ for the output layer: ∂/∂z of Σ‖a − x‖²
    let out = &acts[n_layers];
    let mut delta = out.clone();
    for ((d, a), x) in delta.as_mut_slice().iter_mut().zip(out.as_slice()).zip(batch.as_slice()) {
        *d = 2.0 * (a - x) * a * (1.0 - a);
    }
    for l in (0..n_layers).rev() {
        let input = &acts[l];
        let mut gw = delta.matmul_at(input)?;
        for (g, w) in gw.as_mut_slice().iter_mut().zip(layers[l].weights.as_slice()) {
            *g += 2.0 * cfg.lambda_wd * w;
        }
        let gb: Vector = (0..delta.cols())
            .map(|j| (0..delta.rows()).map(|r| delta.get(r, j)).sum())
            .collect();
        grads.push(Layer { weights: gw, bias: gb });
        if l == 0 {
            break;
        }
        // back-propagate into hidden layer l (activation acts[l])
        let mut back = delta.matmul(&layers[l].weights)?;
        if cfg.lambda_sp != 0.0 {
            let sparse: Vec<f64> = mean_activation(input)
                .into_iter()
                .map(|q| {
                    if q < SPARSITY_EPS || q > 1.0 - SPARSITY_EPS {
                        0.0
                    } else {
                        cfg.lambda_sp * (-cfg.rho / q + (1.0 - cfg.rho) / (1.0 - q)) / n
                    }
                })
                .collect();
            for r in 0..back.rows() {
                for (b, s) in back.row_mut(r).iter_mut().zip(&sparse) {
                    *b += s;
                }
            }
        }
        for (b, a) in back.as_mut_slice().iter_mut().zip(input.as_slice()) {
            *b *= a * (1.0 - a);
        }
        delta = back;
    }
    grads.reverse();
    let decoder = grads.split_off(p.depth());
    let g = HddmParams {
        encoder: grads,
        decoder,
    };
    if !g.is_finite() {
        return Err(DdmError::NonFinite {
            context: "autoencoder gradient".into(),
        });
    }
    Ok((g, c))
}

/// Initializes the autoencoder from a pre-trained stack. Encoder layer `i`
/// takes GRBM `i`'s weights and hidden biases, mapped through that layer's
/// input standardization; decoder layer `M − i + 1` takes the transpose of
/// encoder layer `i` and the GRBM's visible biases mapped back to the raw
/// input scale.
pub fn init_from_pretraining(stack: &[PretrainedLayer]) -> Result<HddmParams> {
    if stack.is_empty() {
        return Err(DdmError::Config("empty pre-trained stack".into()));
    }
    let mut encoder = Vec::with_capacity(stack.len());
    let mut decoder = Vec::with_capacity(stack.len());
    for (i, layer) in stack.iter().enumerate() {
        let g = &layer.grbm;
        g.validate()?;
        if layer.input.dim() != g.visible() {
            return Err(DdmError::shape(
                "init_from_pretraining",
                format!("layer {} standardizer of dim {}", i + 1, layer.input.dim()),
                format!("{} visible units", g.visible()),
            ));
        }
        if i > 0 && stack[i - 1].grbm.hidden() != g.visible() {
            return Err(DdmError::shape(
                "init_from_pretraining",
                format!("layer {} with {} hidden units", i, stack[i - 1].grbm.hidden()),
                format!("layer {} with {} visible units", i + 1, g.visible()),
            ));
        }
        let (m, s) = (&layer.input.mean, &layer.input.scale);
        let mut w = Matrix::zeros(g.hidden(), g.visible());
        let mut b = Vector::zeros(g.hidden());
        for j in 0..g.hidden() {
            let mut shift = 0.0;
            for k in 0..g.visible() {
                let wk = g.weights.get(k, j) / s[k];
                w.set(j, k, wk);
                shift += wk * m[k];
            }
            b[j] = g.hidden_bias[j] - shift;
        }
        let dec_bias: Vector = g
            .visible_bias
            .iter()
            .zip(m.iter().zip(s.iter()))
            .map(|(bv, (mk, sk))| mk + sk * bv)
            .collect();
        decoder.push(Layer {
            weights: w.transpose(),
            bias: dec_bias,
        });
        encoder.push(Layer { weights: w, bias: b });
    }
    decoder.reverse();
    HddmParams::new(encoder, decoder)
}

/// Tied initialization from plain GRBMs trained on unstandardized inputs.
pub fn init_from_grbms(grbms: &[GrbmParams]) -> Result<HddmParams> {
    let stack: Vec<PretrainedLayer> = grbms
        .iter()
        .map(|g| PretrainedLayer {
            grbm: g.clone(),
            input: Standardizer::identity(g.visible()),
        })
        .collect();
    init_from_pretraining(&stack)
}

/// A fine-tuned autoencoder for one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassModel {
    pub label: u32,
    pub params: HddmParams,
    pub epochs_run: usize,
    pub final_cost: f64,
    /// Cost over all of the class's frames after each epoch.
    pub cost_history: Vec<f64>,
}

/// Stacks every frame of every sequence into one matrix.
pub fn frames_matrix<'a, I>(seqs: I) -> Result<Matrix>
where
    I: IntoIterator<Item = &'a ScspSequence>,
{
    let rows: Vec<&[f64]> = seqs
        .into_iter()
        .flat_map(|s| s.frames.iter().map(|f| &f[..]))
        .collect();
    if rows.is_empty() {
        return Err(DdmError::Data("no frames".into()));
    }
    Matrix::from_rows(&rows)
}

/// Trains a class-specific model from `init` by mini-batch gradient descent
/// on the class's sequences, multiplying the learning rate by
/// `cfg.lr_decay` after every epoch.
pub fn fine_tune(
    label: u32,
    class_data: &[ScspSequence],
    init: &HddmParams,
    cfg: &FineTuneConfig,
    rng: &mut RngStream,
) -> Result<ClassModel> {
    cfg.validate()?;
    init.validate()?;
    if class_data.is_empty() {
        return Err(DdmError::Data(format!("class {label} has no training sequences")));
    }
    let all = frames_matrix(class_data)?;
    if all.cols() != init.input_dim() {
        return Err(DdmError::shape(
            "fine_tune",
            format!("class {label} frames of length {}", all.cols()),
            format!("model input dim {}", init.input_dim()),
        ));
    }
    let mut params = init.clone();
    let mut last_good = init.clone();
    let mut lr = cfg.lr;
    let mut order: Vec<usize> = (0..class_data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let diverged = |epoch: usize, reason: String, checkpoint: &HddmParams| DdmError::Diverged {
        label,
        epoch,
        reason,
        checkpoint: Box::new(checkpoint.clone()),
    };
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = frames_matrix(chunk.iter().map(|&i| &class_data[i]))?;
            let step = gradients(&batch, &params, cfg).and_then(|(g, _)| params.apply_sgd(&g, lr));
            if let Err(e) = step {
                return Err(match e {
                    DdmError::NonFinite { context } => diverged(epoch, context, &last_good),
                    other => other,
                });
            }
        }
        let c = cost(&all, &params, cfg)?;
        if !c.total.is_finite() || !params.is_finite() {
            return Err(diverged(epoch, "cost is not finite".into(), &last_good));
        }
        log::info!(
            "class {label} epoch {}: cost {:.6} (reconstruction {:.6}, weight decay {:.6}, sparsity {:.6}), lr {lr:.3e}",
            epoch + 1,
            c.total,
            c.reconstruction,
            c.weight_decay,
            c.sparsity
        );
        history.push(c.total);
        last_good = params.clone();
        lr *= cfg.lr_decay;
    }
    let non_increasing = history.windows(2).filter(|w| w[1] <= w[0]).count();
    if history.len() > 1 && (non_increasing as f64) < 0.9 * (history.len() - 1) as f64 {
        log::warn!(
            "class {label}: epoch cost decreased in only {non_increasing} of {} epochs",
            history.len() - 1
        );
    }
    Ok(ClassModel {
        label,
        params,
        epochs_run: cfg.epochs,
        final_cost: *history.last().expect("at least one epoch"),
        cost_history: history,
    })
}

/// Reconstruction `x̃ = decode(encode(x))` and its Euclidean error.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub output: Vector,
    pub error: f64,
}

pub fn reconstruct(x: &[f64], model: &ClassModel) -> Result<Reconstruction> {
    reconstruct_with(x, &model.params)
}

pub fn reconstruct_with(x: &[f64], p: &HddmParams) -> Result<Reconstruction> {
    let code = encode(x, p)?;
    let out = decode(&code.output, p)?.output;
    let error = distance(x, &out);
    Ok(Reconstruction { output: out, error })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lambda_wd: f64, lambda_sp: f64) -> FineTuneConfig {
        FineTuneConfig {
            lambda_wd,
            lambda_sp,
            rho: 0.2,
            ..FineTuneConfig::default()
        }
    }

    fn random_batch(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.uniform()).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn manual_forward(x: &[f64], layers: &[Layer]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in layers {
            let mut next = Vec::new();
            for j in 0..l.outputs() {
                let mut z = l.bias[j];
                for k in 0..l.inputs() {
                    z += l.weights.get(j, k) * cur[k];
                }
                next.push(1.0 / (1.0 + (-z).exp()));
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn zero_network_outputs_half() {
        let p = HddmParams::zeros(&[5, 4, 3]).unwrap();
        let e = encode(&[0.3; 5], &p).unwrap();
        assert!(e.activations.iter().flat_map(|a| a.iter()).all(|&v| v == 0.5));
        let d = decode(&e.output, &p).unwrap();
        assert_eq!(d.output.len(), 5);
        assert!(d.output.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn depth_one_is_a_single_sigmoid_layer() {
        let mut rng = RngStream::new(1);
        let p = HddmParams::random(&[4, 2], 1.0, &mut rng).unwrap();
        assert_eq!(p.depth(), 1);
        let x = [0.1, 0.9, 0.4, 0.6];
        let h = encode(&x, &p).unwrap();
        assert_eq!(h.activations.len(), 1);
        let by_hand = manual_forward(&x, &p.encoder[..1]);
        for (a, b) in h.output.iter().zip(&by_hand) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn forward_matches_hand_composition() {
        let mut rng = RngStream::new(2);
        let p = HddmParams::random(&[6, 5, 3, 2], 1.0, &mut rng).unwrap();
        let x: Vec<f64> = (0..6).map(|_| rng.uniform()).collect();
        let h = encode(&x, &p).unwrap();
        let h_hand = manual_forward(&x, &p.encoder);
        let out = decode(&h.output, &p).unwrap();
        let out_hand = manual_forward(&h_hand, &p.decoder);
        for (a, b) in h.output.iter().zip(&h_hand).chain(out.output.iter().zip(&out_hand)) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(out.output.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(decode(&[0.0; 3], &p).is_err());
        assert!(encode(&[0.0; 5], &p).is_err());
    }

    #[test]
    fn cost_components() {
        let mut rng = RngStream::new(3);
        let p = HddmParams::random(&[4, 3, 2], 1.0, &mut rng).unwrap();
        let batch = random_batch(5, 4, &mut rng);
        let c0 = cost(&batch, &p, &cfg(0.0, 0.0)).unwrap();
        assert_eq!(c0.total, c0.reconstruction);
        let mut by_hand = 0.0;
        for r in 0..5 {
            let rec = reconstruct_with(batch.row(r), &p).unwrap();
            by_hand += rec.error * rec.error;
        }
        assert!((c0.reconstruction - by_hand).abs() < 1e-12);

        let c = cost(&batch, &p, &cfg(0.3, 0.7)).unwrap();
        let recombined = c.reconstruction + 0.3 * c.weight_decay + 0.7 * c.sparsity;
        assert!((c.total - recombined).abs() < 1e-12);
        let wd: f64 = p.layers().map(|l| l.weights.as_slice().iter().map(|w| w * w).sum::<f64>()).sum();
        assert!((c.weight_decay - wd).abs() < 1e-12);
    }

    #[test]
    fn sparsity_vanishes_at_target() {
        // zero network: every hidden mean is exactly 0.5
        let p = HddmParams::zeros(&[3, 2, 2]).unwrap();
        let batch = Matrix::from_rows(&[[0.2, 0.4, 0.6]]).unwrap();
        let c = cost(&batch, &p, &FineTuneConfig { rho: 0.5, ..FineTuneConfig::default() }).unwrap();
        assert_eq!(c.sparsity, 0.0);
    }

    #[test]
    fn kl_scalar_value() {
        // ρ = 0.001 against ρ̄ = 0.5, evaluated directly
        assert!((bernoulli_kl(0.001, 0.5) - 0.6852399254477132).abs() < 1e-12);
        // 2M-1 = 3 hidden layers of 2 units at ρ̄ = 0.5
        let p = HddmParams::zeros(&[3, 2, 2]).unwrap();
        let batch = Matrix::from_rows(&[[0.2, 0.4, 0.6]]).unwrap();
        let c = cost(&batch, &p, &FineTuneConfig::default()).unwrap();
        assert!((c.sparsity - 6.0 * 0.6852399254477132).abs() < 1e-12);
    }

    fn finite_difference(batch: &Matrix, p: &HddmParams, cfg: &FineTuneConfig, h: f64) -> Vec<f64> {
        let base = p.to_flat();
        let mut q = p.clone();
        (0..base.len())
            .map(|i| {
                let mut plus = base.clone();
                plus[i] += h;
                q.set_flat(&plus).unwrap();
                let fp = cost(batch, &q, cfg).unwrap().total;
                let mut minus = base.clone();
                minus[i] -= h;
                q.set_flat(&minus).unwrap();
                let fm = cost(batch, &q, cfg).unwrap().total;
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = RngStream::new(4);
        let p = HddmParams::random(&[5, 4, 3], 1.0, &mut rng).unwrap();
        let batch = random_batch(6, 5, &mut rng);
        let c = cfg(0.05, 0.4);
        let (g, _) = gradients(&batch, &p, &c).unwrap();
        let fd = finite_difference(&batch, &p, &c, 1e-5);
        for (i, (a, n)) in g.to_flat().iter().zip(&fd).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
            assert!(rel < 1e-5, "coordinate {i}: backprop {a} vs fd {n}");
        }
    }

    #[test]
    fn reconstruction_gradient_vanishes_at_perfect_fit() {
        let p = HddmParams::zeros(&[3, 2, 2]).unwrap();
        let batch = Matrix::from_rows(&[[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]]).unwrap();
        let (g, c) = gradients(&batch, &p, &cfg(0.0, 0.0)).unwrap();
        assert_eq!(c.reconstruction, 0.0);
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weight_decay_gradient_is_linear() {
        let mut rng = RngStream::new(5);
        let p = HddmParams::random(&[4, 3, 2], 1.0, &mut rng).unwrap();
        let batch = random_batch(3, 4, &mut rng);
        let (g0, _) = gradients(&batch, &p, &cfg(0.0, 0.2)).unwrap();
        let (g1, _) = gradients(&batch, &p, &cfg(0.1, 0.2)).unwrap();
        let (g2, _) = gradients(&batch, &p, &cfg(0.2, 0.2)).unwrap();
        for ((a, b), c) in g0.to_flat().iter().zip(g1.to_flat()).zip(g2.to_flat()) {
            let wd1 = b - a;
            let wd2 = c - a;
            assert!((wd2 - 2.0 * wd1).abs() < 1e-12);
        }
    }

    #[test]
    fn tied_initialization() {
        let mut rng = RngStream::new(6);
        let grbms: Vec<GrbmParams> = [(6usize, 4usize), (4, 3), (3, 2)]
            .iter()
            .map(|&(v, h)| {
                let mut g = GrbmParams::init(v, h, 0.5, 1.0, &mut rng);
                g.visible_bias = (0..v).map(|_| rng.normal()).collect();
                g.hidden_bias = (0..h).map(|_| rng.normal()).collect();
                g
            })
            .collect();
        let p = init_from_grbms(&grbms).unwrap();
        let m = p.depth();
        for i in 0..m {
            assert_eq!(p.decoder[m - 1 - i].weights, p.encoder[i].weights.transpose());
            assert_eq!(p.encoder[i].weights, grbms[i].weights.transpose());
            assert_eq!(p.encoder[i].bias, grbms[i].hidden_bias);
            assert_eq!(p.decoder[m - 1 - i].bias, grbms[i].visible_bias);
        }
        let one = init_from_grbms(&grbms[..1]).unwrap();
        assert_eq!(one.depth(), 1);
        assert_eq!(one.decoder[0].weights, one.encoder[0].weights.transpose());

        let x: Vec<f64> = (0..6).map(|_| rng.uniform()).collect();
        let c = cost(&Matrix::from_rows(&[x.clone()]).unwrap(), &p, &FineTuneConfig::default()).unwrap();
        assert!(c.total.is_finite());
        let mut layers: Vec<Layer> = grbms
            .iter()
            .map(|g| Layer { weights: g.weights.transpose(), bias: g.hidden_bias.clone() })
            .collect();
        layers.extend(grbms.iter().rev().map(|g| Layer { weights: g.weights.clone(), bias: g.visible_bias.clone() }));
        let hand = manual_forward(&x, &layers);
        let rec: f64 = hand.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
        assert!((c.reconstruction - rec).abs() < 1e-12);
    }

    #[test]
    fn standardized_init_matches_standardized_grbm_activations() {
        let mut rng = RngStream::new(7);
        let g = GrbmParams::init(3, 2, 0.5, 1.0, &mut rng);
        let layer = PretrainedLayer {
            grbm: g,
            input: Standardizer { mean: vec![0.5, 0.2, 0.1].into(), scale: vec![0.1, 2.0, 0.5].into() },
        };
        let p = init_from_pretraining(std::slice::from_ref(&layer)).unwrap();
        let x = [0.3, 0.7, 0.2];
        let a = encode(&x, &p).unwrap().output;
        let b = layer.activations(&x).unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
        assert_eq!(p.decoder[0].weights, p.encoder[0].weights.transpose());
    }

    #[test]
    fn broken_chain_is_rejected() {
        let mut rng = RngStream::new(8);
        let a = GrbmParams::init(5, 4, 0.1, 1.0, &mut rng);
        let b = GrbmParams::init(3, 2, 0.1, 1.0, &mut rng);
        assert!(init_from_grbms(&[a, b]).is_err());
    }

    fn constant_sequences(n: usize, frames: usize, value: &[f64]) -> Vec<ScspSequence> {
        (0..n)
            .map(|i| ScspSequence::new(format!("c{i}"), vec![Vector::from(value.to_vec()); frames]).unwrap())
            .collect()
    }

    #[test]
    fn constant_frame_is_learned() {
        let frame = vec![0.3, 0.7, 0.5, 0.2, 0.9, 0.6];
        let data = constant_sequences(10, 10, &frame);
        let mut rng = RngStream::new(9);
        let init = HddmParams::random(&[6, 4, 3], 0.005, &mut rng).unwrap();
        // one sequence per step and a slower anneal; the default schedule
        // moves the parameters too little for a 100-frame class
        let cfg = FineTuneConfig { lr: 1.0, lr_decay: 0.9, batch_size: 1, ..FineTuneConfig::default() };
        let m = fine_tune(1, &data, &init, &cfg, &mut RngStream::new(10)).unwrap();
        assert_eq!(m.epochs_run, 20);
        let err = reconstruct(&frame, &m).unwrap().error;
        assert!(err < 1e-3, "reconstruction error {err}");
    }

    #[test]
    fn fine_tune_is_deterministic_and_class_independent() {
        let mut rng = RngStream::new(11);
        let init = HddmParams::random(&[4, 3, 2], 0.1, &mut rng).unwrap();
        let a = constant_sequences(3, 4, &[0.1, 0.2, 0.3, 0.4]);
        let b = constant_sequences(3, 4, &[0.9, 0.8, 0.7, 0.6]);
        let cfg = FineTuneConfig { epochs: 5, ..FineTuneConfig::default() };
        let m1 = fine_tune(1, &a, &init, &cfg, &mut RngStream::new(1)).unwrap();
        let again = fine_tune(1, &a, &init, &cfg, &mut RngStream::new(1)).unwrap();
        assert_eq!(m1, again);
        // enrolling class 2 afterwards leaves class 1 untouched
        let snapshot = m1.clone();
        let _m2 = fine_tune(2, &b, &init, &cfg, &mut RngStream::new(2)).unwrap();
        assert_eq!(m1, snapshot);
        assert!(fine_tune(3, &[], &init, &cfg, &mut RngStream::new(3)).is_err());
    }

    #[test]
    fn divergence_returns_checkpoint() {
        let mut rng = RngStream::new(12);
        let init = HddmParams::random(&[3, 2], 0.1, &mut rng).unwrap();
        let data = constant_sequences(2, 2, &[0.1, 0.5, 0.9]);
        let cfg = FineTuneConfig { lr: 1e305, lr_decay: 1.0, epochs: 5, ..FineTuneConfig::default() };
        match fine_tune(7, &data, &init, &cfg, &mut RngStream::new(1)) {
            Err(DdmError::Diverged { label, checkpoint, .. }) => {
                assert_eq!(label, 7);
                assert!(checkpoint.is_finite());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn reconstruction_error_cases() {
        let p = HddmParams::zeros(&[2, 1]).unwrap();
        let model = ClassModel { label: 1, params: p.clone(), epochs_run: 0, final_cost: 0.0, cost_history: vec![] };
        let r = reconstruct(&[0.5, 0.5], &model).unwrap();
        assert_eq!(r.error, 0.0);
        let relabeled = ClassModel { label: 99, ..model.clone() };
        assert_eq!(reconstruct(&[0.1, 0.8], &model).unwrap(), reconstruct(&[0.1, 0.8], &relabeled).unwrap());
        assert!(reconstruct(&[0.1], &model).is_err());
    }

    #[test]
    fn flat_round_trip_and_sgd_block_names() {
        let mut rng = RngStream::new(13);
        let mut p = HddmParams::random(&[3, 2], 1.0, &mut rng).unwrap();
        let flat = p.to_flat();
        let mut q = HddmParams::zeros(&[3, 2]).unwrap();
        q.set_flat(&flat).unwrap();
        assert_eq!(p, q);
        let mut g = HddmParams::zeros(&[3, 2]).unwrap();
        g.decoder[0].bias[1] = f64::INFINITY;
        let err = p.apply_sgd(&g, 0.1).unwrap_err().to_string();
        assert!(err.contains("decoder[1].bias"), "{err}");
    }

    proptest::proptest! {
        #[test]
        fn penalties_are_nonnegative_and_sum_to_total(seed in proptest::prelude::any::<u64>(),
                                                      wd in 0.0f64..2.0, sp in 0.0f64..2.0,
                                                      rho in 0.001f64..0.999) {
            let mut rng = RngStream::new(seed);
            let sizes = [4, 3, 2];
            let p = HddmParams::random(&sizes, 2.0, &mut rng).unwrap();
            let batch = Matrix::from_vec(3, 4, (0..12).map(|_| rng.uniform()).collect()).unwrap();
            let c = cost(&batch, &p, &FineTuneConfig { lambda_wd: wd, lambda_sp: sp, rho, ..FineTuneConfig::default() }).unwrap();
            proptest::prop_assert!(c.weight_decay >= 0.0 && c.sparsity >= 0.0 && c.reconstruction >= 0.0);
            let sum = c.reconstruction + wd * c.weight_decay + sp * c.sparsity;
            proptest::prop_assert!((c.total - sum).abs() <= 1e-12 * c.total.max(1.0));
        }

        #[test]
        fn tied_initialization_transposes_every_layer(seed in proptest::prelude::any::<u64>(), depth in 1usize..4) {
            let mut rng = RngStream::new(seed);
            let sizes: Vec<usize> = (0..=depth).map(|k| 6 - k).collect();
            let grbms: Vec<GrbmParams> = sizes.windows(2).map(|w| GrbmParams::init(w[0], w[1], 0.5, 1.0, &mut rng)).collect();
            let p = init_from_grbms(&grbms).unwrap();
            for i in 0..depth {
                proptest::prop_assert_eq!(&p.decoder[depth - 1 - i].weights, &p.encoder[i].weights.transpose());
            }
        }
    }
}
