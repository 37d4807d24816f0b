//! Small 1-D convolutional classifier trained with Adam.
//!
//! Layer stack, per conv block: conv1d (stride 1, zero "same" padding, ReLU)
//! then non-overlapping max pooling. After the blocks: flatten, dense + ReLU,
//! inverted dropout, dense to one logit per class, softmax.
//!
//! All weights live in one flat parameter vector so gradients, Adam moments
//! and finite-difference checks share a single layout.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub n_filters: usize,
    pub kernel_size: usize,
    pub pool_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnParams {
    pub conv_blocks: Vec<ConvBlock>,
    pub dense_units: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for CnnParams {
    fn default() -> Self {
        Self {
            conv_blocks: vec![ConvBlock {
                n_filters: 16,
                kernel_size: 3,
                pool_size: 2,
            }],
            dense_units: 32,
            dropout_rate: 0.2,
            learning_rate: 5e-3,
            batch_size: 32,
            epochs: 40,
            seed: 0,
        }
    }
}

impl CnnParams {
    pub fn validate(&self) -> Result<()> {
        if self.conv_blocks.is_empty() {
            return Err(Error::invalid("CNN needs at least one conv block"));
        }
        for b in &self.conv_blocks {
            if b.kernel_size % 2 == 0 {
                return Err(Error::invalid(format!("kernel size {} must be odd", b.kernel_size)));
            }
            if b.n_filters == 0 || b.pool_size == 0 {
                return Err(Error::invalid("conv blocks need filters >= 1 and pool >= 1"));
            }
        }
        if self.dense_units == 0 {
            return Err(Error::invalid("dense_units must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("dropout {} not in [0, 1)", self.dropout_rate)));
        }
        // zero is accepted: it freezes the weights
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and >= 0"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct ConvLayout {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    pool: usize,
    in_len: usize,
    out_len: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Layout {
    convs: Vec<ConvLayout>,
    flat: usize,
    units: usize,
    classes: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    total: usize,
}

impl Layout {
    fn new(blocks: &[ConvBlock], input_len: usize, dense_units: usize, n_classes: usize) -> Result<Self> {
        let mut at = 0;
        let mut convs = Vec::with_capacity(blocks.len());
        let (mut ch, mut len) = (1, input_len);
        for b in blocks {
            let out_len = len / b.pool_size;
            if out_len == 0 {
                return Err(Error::invalid(format!(
                    "input length {input_len} too short for the pooling chain"
                )));
            }
            let w = at;
            at += b.n_filters * ch * b.kernel_size;
            let bias = at;
            at += b.n_filters;
            convs.push(ConvLayout {
                in_ch: ch,
                out_ch: b.n_filters,
                kernel: b.kernel_size,
                pool: b.pool_size,
                in_len: len,
                out_len,
                w,
                b: bias,
            });
            ch = b.n_filters;
            len = out_len;
        }
        let flat = ch * len;
        let w1 = at;
        at += dense_units * flat;
        let b1 = at;
        at += dense_units;
        let w2 = at;
        at += n_classes * dense_units;
        let b2 = at;
        at += n_classes;
        Ok(Self {
            convs,
            flat,
            units: dense_units,
            classes: n_classes,
            w1,
            b1,
            w2,
            b2,
            total: at,
        })
    }
}

/// Network weights plus the architecture needed to interpret them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnNet {
    pub input_len: usize,
    pub n_classes: usize,
    pub conv_blocks: Vec<ConvBlock>,
    pub dense_units: usize,
    pub dropout_rate: f64,
    params: Vec<f64>,
    #[serde(skip)]
    layout: Option<Layout>,
}

/// Intermediate values of one sample's forward pass.
struct Trace {
    /// Input to each conv block, channel-major `[in_ch * in_len]`.
    inputs: Vec<Vec<f64>>,
    /// Post-ReLU conv output per block `[out_ch * in_len]`.
    activations: Vec<Vec<f64>>,
    /// Argmax position (into the activation vector) of every pooled cell.
    argmax: Vec<Vec<usize>>,
    flat: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl CnnNet {
    /// He-uniform weights from the seeded generator, zero biases.
    pub fn new(p: &CnnParams, input_len: usize, n_classes: usize) -> Result<Self> {
        p.validate()?;
        if n_classes == 0 {
            return Err(Error::invalid("CNN needs at least one class"));
        }
        let layout = Layout::new(&p.conv_blocks, input_len, p.dense_units, n_classes)?;
        let mut params = vec![0.0; layout.total];
        let mut rng = seed::child_rng(p.seed, "cnn-init");
        let mut fill = |params: &mut [f64], fan_in: usize| {
            let limit = (6.0 / fan_in as f64).sqrt();
            for w in params {
                *w = rng.random_range(-limit..limit);
            }
        };
        for c in &layout.convs {
            fill(&mut params[c.w..c.b], c.in_ch * c.kernel);
        }
        fill(&mut params[layout.w1..layout.b1], layout.flat);
        fill(&mut params[layout.w2..layout.b2], layout.units);
        Ok(Self {
            input_len,
            n_classes,
            conv_blocks: p.conv_blocks.clone(),
            dense_units: p.dense_units,
            dropout_rate: p.dropout_rate,
            params,
            layout: Some(layout),
        })
    }

    fn layout(&self) -> Layout {
        match &self.layout {
            Some(l) => l.clone(),
            None => Layout::new(&self.conv_blocks, self.input_len, self.dense_units, self.n_classes)
                .expect("layout validated at construction"),
        }
    }

    /// Restores the cached layout after deserialization.
    pub(crate) fn restore(&mut self) -> Result<()> {
        let layout = Layout::new(&self.conv_blocks, self.input_len, self.dense_units, self.n_classes)?;
        if layout.total != self.params.len() {
            return Err(Error::shape(format!(
                "stored CNN has {} weights, architecture needs {}",
                self.params.len(),
                layout.total
            )));
        }
        self.layout = Some(layout);
        Ok(())
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Width of the flattened feature map feeding the dense layer.
    pub fn flatten_size(&self) -> usize {
        self.layout().flat
    }

    /// Parameter range of the final dense layer (weights then biases).
    pub fn output_layer_range(&self) -> std::ops::Range<usize> {
        let l = self.layout();
        l.w2..l.total
    }

    pub fn output_bias_range(&self) -> std::ops::Range<usize> {
        let l = self.layout();
        l.b2..l.total
    }

    /// Post-ReLU feature maps of the first conv block for one input.
    pub fn first_conv_output(&self, x: &[f64]) -> Vec<f64> {
        let l = self.layout();
        self.forward(&l, x, None).activations.swap_remove(0)
    }

    fn forward(&self, l: &Layout, x: &[f64], mask: Option<&[f64]>) -> Trace {
        let p = &self.params;
        let mut inputs = Vec::with_capacity(l.convs.len());
        let mut activations = Vec::with_capacity(l.convs.len());
        let mut argmax = Vec::with_capacity(l.convs.len());
        let mut cur = x.to_vec();
        for c in &l.convs {
            let pad = c.kernel / 2;
            let mut act = vec![0.0; c.out_ch * c.in_len];
            for f in 0..c.out_ch {
                let bias = p[c.b + f];
                for t in 0..c.in_len {
                    let mut z = bias;
                    for ch in 0..c.in_ch {
                        let wbase = c.w + (f * c.in_ch + ch) * c.kernel;
                        let xbase = ch * c.in_len;
                        for j in 0..c.kernel {
                            let pos = t + j;
                            if pos < pad || pos - pad >= c.in_len {
                                continue;
                            }
                            z += p[wbase + j] * cur[xbase + pos - pad];
                        }
                    }
                    act[f * c.in_len + t] = z.max(0.0);
                }
            }
            let (pooled, arg) = max_pool(&act, c.out_ch, c.in_len, c.pool);
            inputs.push(cur);
            activations.push(act);
            argmax.push(arg);
            cur = pooled;
        }
        let flat = cur;

        let mut hidden_pre = vec![0.0; l.units];
        let mut hidden = vec![0.0; l.units];
        for u in 0..l.units {
            let row = &p[l.w1 + u * l.flat..l.w1 + (u + 1) * l.flat];
            let z = p[l.b1 + u] + row.iter().zip(&flat).map(|(a, b)| a * b).sum::<f64>();
            hidden_pre[u] = z;
            let a = z.max(0.0);
            hidden[u] = match mask {
                Some(m) => a * m[u],
                None => a,
            };
        }

        let mut logits = vec![0.0; l.classes];
        for (k, logit) in logits.iter_mut().enumerate() {
            let row = &p[l.w2 + k * l.units..l.w2 + (k + 1) * l.units];
            *logit = p[l.b2 + k] + row.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>();
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = logits.iter().map(|z| z - lse).collect();
        let probs = log_probs.iter().map(|lp| lp.exp()).collect();

        Trace {
            inputs,
            activations,
            argmax,
            flat,
            hidden_pre,
            hidden,
            probs,
            log_probs,
        }
    }

    fn backward(&self, l: &Layout, tr: &Trace, target: &[f64], mask: Option<&[f64]>, scale: f64, grad: &mut [f64]) {
        let p = &self.params;
        let dlogits: Vec<f64> = tr.probs.iter().zip(target).map(|(p, y)| (p - y) * scale).collect();

        let mut dhidden = vec![0.0; l.units];
        for (k, &dz) in dlogits.iter().enumerate() {
            grad[l.b2 + k] += dz;
            let w = l.w2 + k * l.units;
            for u in 0..l.units {
                grad[w + u] += dz * tr.hidden[u];
                dhidden[u] += dz * p[w + u];
            }
        }

        let mut dflat = vec![0.0; l.flat];
        for u in 0..l.units {
            let mut d = dhidden[u];
            if let Some(m) = mask {
                d *= m[u];
            }
            if tr.hidden_pre[u] <= 0.0 {
                continue;
            }
            grad[l.b1 + u] += d;
            let w = l.w1 + u * l.flat;
            for (i, &h) in tr.flat.iter().enumerate() {
                grad[w + i] += d * h;
                dflat[i] += d * p[w + i];
            }
        }

        let mut dout = dflat;
        for (bi, c) in l.convs.iter().enumerate().rev() {
            let act = &tr.activations[bi];
            let mut dact = unpool(&tr.argmax[bi], &dout, act.len());
            for (d, &a) in dact.iter_mut().zip(act) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            let input = &tr.inputs[bi];
            let pad = c.kernel / 2;
            let mut dinput = vec![0.0; c.in_ch * c.in_len];
            for f in 0..c.out_ch {
                for t in 0..c.in_len {
                    let dz = dact[f * c.in_len + t];
                    if dz == 0.0 {
                        continue;
                    }
                    grad[c.b + f] += dz;
                    for ch in 0..c.in_ch {
                        let wbase = c.w + (f * c.in_ch + ch) * c.kernel;
                        let xbase = ch * c.in_len;
                        for j in 0..c.kernel {
                            let pos = t + j;
                            if pos < pad || pos - pad >= c.in_len {
                                continue;
                            }
                            grad[wbase + j] += dz * input[xbase + pos - pad];
                            dinput[xbase + pos - pad] += dz * p[wbase + j];
                        }
                    }
                }
            }
            dout = dinput;
        }
    }

    fn check_batch(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_len {
            return Err(Error::shape(format!(
                "CNN expects {} inputs, got {}",
                self.input_len,
                x.cols()
            )));
        }
        Ok(())
    }

    /// Mean categorical cross-entropy over the batch and its gradient.
    ///
    /// `dropout_masks`, when given, holds one row per sample with the
    /// multiplier applied to each dense unit (0 or `1 / (1 - rate)` for
    /// inverted dropout). `None` evaluates without dropout.
    pub fn loss_and_gradients(
        &self,
        x: &Matrix,
        targets: &Matrix,
        dropout_masks: Option<&Matrix>,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_batch(x)?;
        if x.rows() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if targets.shape() != (x.rows(), self.n_classes) {
            return Err(Error::shape("targets must be [batch x n_classes]"));
        }
        if let Some(m) = dropout_masks {
            if m.shape() != (x.rows(), self.dense_units) {
                return Err(Error::shape("dropout masks must be [batch x dense_units]"));
            }
        }
        let l = self.layout();
        let scale = 1.0 / x.rows() as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for i in 0..x.rows() {
            let mask = dropout_masks.map(|m| m.row(i));
            let tr = self.forward(&l, x.row(i), mask);
            let y = targets.row(i);
            loss -= y.iter().zip(&tr.log_probs).map(|(t, lp)| t * lp).sum::<f64>();
            self.backward(&l, &tr, y, mask, scale, &mut grad);
        }
        Ok((loss * scale, grad))
    }

    /// Softmax probabilities, one row per input.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        self.check_batch(x)?;
        let l = self.layout();
        let mut out = Matrix::zeros(x.rows(), self.n_classes);
        for (i, row) in x.row_iter().enumerate() {
            out.row_mut(i).copy_from_slice(&self.forward(&l, row, None).probs);
        }
        Ok(out)
    }

    pub fn dropout_masks(&self, rows: usize, rng: &mut Rng) -> Matrix {
        let keep = 1.0 - self.dropout_rate;
        let mut m = Matrix::zeros(rows, self.dense_units);
        for v in m.as_mut_slice() {
            *v = if self.dropout_rate == 0.0 || rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            };
        }
        m
    }
}

/// Non-overlapping max pooling over `channels` rows of length `len`; returns
/// the pooled values and the flat index each was taken from (first max wins).
fn max_pool(act: &[f64], channels: usize, len: usize, pool: usize) -> (Vec<f64>, Vec<usize>) {
    let out_len = len / pool;
    let mut pooled = vec![0.0; channels * out_len];
    let mut arg = vec![0; channels * out_len];
    for f in 0..channels {
        for o in 0..out_len {
            let start = f * len + o * pool;
            let mut best = start;
            for k in start + 1..start + pool {
                if act[k] > act[best] {
                    best = k;
                }
            }
            pooled[f * out_len + o] = act[best];
            arg[f * out_len + o] = best;
        }
    }
    (pooled, arg)
}

/// Routes each pooled gradient back to the cell its maximum came from.
fn unpool(argmax: &[usize], dout: &[f64], len: usize) -> Vec<f64> {
    let mut d = vec![0.0; len];
    for (cell, &src) in argmax.iter().enumerate() {
        d[src] += dout[cell];
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_accuracy: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub final_train_loss: f64,
    pub train_seconds: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

/// Row order that depends only on row contents, so training is invariant to
/// how the caller ordered the data.
fn canonical_order(x: &Matrix, labels: &[usize]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.rows()).collect();
    idx.sort_by(|&a, &b| {
        labels[a].cmp(&labels[b]).then_with(|| {
            x.row(a)
                .iter()
                .zip(x.row(b))
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    idx
}

pub fn accuracy_of(net: &CnnNet, x: &Matrix, labels: &[usize]) -> Result<f64> {
    let probs = net.predict_proba(x)?;
    let correct = probs
        .row_iter()
        .zip(labels)
        .filter(|(p, &l)| super::argmax(p) == l)
        .count();
    Ok(correct as f64 / labels.len().max(1) as f64)
}

/// Minibatch Adam on mean cross-entropy with seeded per-epoch shuffles.
pub fn train(
    net: &mut CnnNet,
    x: &Matrix,
    labels: &[usize],
    validation: Option<(&Matrix, &[usize])>,
    p: &CnnParams,
) -> Result<TrainHistory> {
    p.validate()?;
    net.check_batch(x)?;
    if x.rows() == 0 || x.rows() != labels.len() {
        return Err(Error::shape("training rows and labels differ or are empty"));
    }
    let targets = crate::ingest::one_hot(labels, net.n_classes)?;
    let order = canonical_order(x, labels);
    let mut rng = seed::child_rng(p.seed, "cnn-train");
    let mut adam = Adam::new(net.n_params());
    let started = Instant::now();
    let mut history = Vec::with_capacity(p.epochs);
    let mut final_loss = f64::NAN;

    for epoch in 0..p.epochs {
        let epoch_start = Instant::now();
        let mut perm = order.clone();
        perm.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in perm.chunks(p.batch_size) {
            let bx = x.select_rows(batch);
            let by = targets.select_rows(batch);
            let masks = (net.dropout_rate > 0.0).then(|| net.dropout_masks(batch.len(), &mut rng));
            let (loss, grad) = net.loss_and_gradients(&bx, &by, masks.as_ref())?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss at epoch {epoch} (learning rate {})",
                    p.learning_rate
                )));
            }
            loss_sum += loss * batch.len() as f64;
            adam.step(&mut net.params, &grad, p.learning_rate);
        }
        final_loss = loss_sum / x.rows() as f64;
        let validation_accuracy = match validation {
            Some((vx, vy)) if vx.rows() > 0 => Some(accuracy_of(net, vx, vy)?),
            _ => None,
        };
        history.push(EpochRecord {
            epoch,
            train_loss: final_loss,
            validation_accuracy,
            seconds: epoch_start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainHistory {
        epochs: history,
        final_train_loss: final_loss,
        train_seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> CnnParams {
        CnnParams {
            conv_blocks: vec![ConvBlock {
                n_filters: 2,
                kernel_size: 3,
                pool_size: 2,
            }],
            dense_units: 4,
            dropout_rate: 0.0,
            seed,
            ..CnnParams::default()
        }
    }

    #[test]
    fn flatten_size_arithmetic() {
        let p = CnnParams {
            conv_blocks: vec![ConvBlock {
                n_filters: 4,
                kernel_size: 3,
                pool_size: 2,
            }],
            ..CnnParams::default()
        };
        let net = CnnNet::new(&p, 16, 3).unwrap();
        assert_eq!(net.flatten_size(), 32);
    }

    #[test]
    fn construction_errors() {
        let mut p = tiny(0);
        p.conv_blocks[0].kernel_size = 4;
        assert!(CnnNet::new(&p, 8, 2).is_err());
        let mut p = tiny(0);
        p.conv_blocks[0].pool_size = 16;
        assert!(CnnNet::new(&p, 8, 2).is_err());
        let mut p = tiny(0);
        p.conv_blocks.clear();
        assert!(CnnNet::new(&p, 8, 2).is_err());
    }

    #[test]
    fn zero_input_gives_zero_feature_maps() {
        let net = CnnNet::new(&tiny(3), 8, 2).unwrap();
        assert!(net.first_conv_output(&[0.0; 8]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zeroed_output_layer_is_uniform() {
        let mut net = CnnNet::new(&tiny(1), 8, 4).unwrap();
        for i in net.output_layer_range() {
            net.params_mut()[i] = 0.0;
        }
        let x = Matrix::from_vec(2, 8, (0..16).map(|v| v as f64 / 16.0).collect()).unwrap();
        let p = net.predict_proba(&x).unwrap();
        for v in p.as_slice() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        assert_eq!(super::super::argmax(p.row(0)), 0);
    }

    #[test]
    fn uniform_output_loss_is_ln_classes() {
        let mut net = CnnNet::new(&tiny(2), 8, 5).unwrap();
        net.params_mut().iter_mut().for_each(|w| *w = 0.0);
        let x = Matrix::from_vec(3, 8, (0..24).map(|v| v as f64).collect()).unwrap();
        let y = crate::ingest::one_hot(&[0, 3, 4], 5).unwrap();
        let (loss, grad) = net.loss_and_gradients(&x, &y, None).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        // softmax − target, averaged: 0.2 − (count of class k)/3
        let want = [0.2 - 1.0 / 3.0, 0.2, 0.2, 0.2 - 1.0 / 3.0, 0.2 - 1.0 / 3.0];
        for (g, w) in grad[net.output_bias_range()].iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicated_batch_keeps_gradient() {
        let net = CnnNet::new(&tiny(4), 8, 3).unwrap();
        let x = Matrix::from_vec(2, 8, (0..16).map(|v| (v as f64 * 0.37).sin()).collect()).unwrap();
        let y = crate::ingest::one_hot(&[2, 0], 3).unwrap();
        let (l1, g1) = net.loss_and_gradients(&x, &y, None).unwrap();
        let x2 = x.select_rows(&[0, 1, 0, 1]);
        let y2 = y.select_rows(&[0, 1, 0, 1]);
        let (l2, g2) = net.loss_and_gradients(&x2, &y2, None).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_learning_rate_freezes_weights() {
        let mut p = tiny(5);
        p.learning_rate = 0.0;
        p.epochs = 3;
        let mut net = CnnNet::new(&p, 8, 2).unwrap();
        let before = net.params().to_vec();
        let x = Matrix::from_vec(4, 8, (0..32).map(|v| v as f64 / 32.0).collect()).unwrap();
        train(&mut net, &x, &[0, 1, 0, 1], None, &p).unwrap();
        assert_eq!(net.params(), before.as_slice());
    }

    #[test]
    fn divergence_is_reported() {
        let mut p = tiny(6);
        p.learning_rate = 1e300;
        p.epochs = 5;
        let mut net = CnnNet::new(&p, 8, 2).unwrap();
        let x = Matrix::from_vec(4, 8, (0..32).map(|v| v as f64).collect()).unwrap();
        let err = train(&mut net, &x, &[0, 1, 0, 1], None, &p).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)), "{err:?}");
    }

    proptest::proptest! {
        #[test]
        fn maxpool_routes_only_to_argmax(
            vals in proptest::collection::hash_set(-1000i32..1000, 12),
            dout in proptest::collection::vec(-5.0f64..5.0, 6),
            pool in 2usize..4,
        ) {
            // distinct values, two channels of length 6
            let act: Vec<f64> = vals.into_iter().map(|v| v as f64 / 10.0).collect();
            let (pooled, arg) = max_pool(&act, 2, 6, pool);
            let cells = pooled.len();
            let d = unpool(&arg, &dout[..cells], act.len());
            let total_in: f64 = d.iter().map(|v| v.abs()).sum();
            let total_out: f64 = dout[..cells].iter().map(|v| v.abs()).sum();
            proptest::prop_assert!((total_in - total_out).abs() < 1e-12);
            for (i, &g) in d.iter().enumerate() {
                if g != 0.0 {
                    proptest::prop_assert!(arg.contains(&i));
                }
            }
            for (cell, &src) in arg.iter().enumerate() {
                let (ch, o) = (cell / (6 / pool), cell % (6 / pool));
                let window = &act[ch * 6 + o * pool..ch * 6 + (o + 1) * pool];
                proptest::prop_assert_eq!(act[src], window.iter().copied().fold(f64::MIN, f64::max));
            }
        }
    }
}
