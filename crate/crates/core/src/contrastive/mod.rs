//! Two-stream contrastive pretraining: a main encoder trained by SGD on
//! InfoNCE against a memory bank, and an auxiliary encoder that tracks it by
//! momentum and fills the bank.

mod bank;
mod loss;

use std::io::Write;

use rand::seq::SliceRandom;

pub use bank::MemoryBank;
pub use loss::{cosine_similarity, info_nce, InfoNceOutput};

use crate::error::{Error, Result};
use crate::nn::{batch_tensor, ConvEncoder, EncoderPlan, Network, Parameters, SgdConfig, Tensor};
use crate::polsar::{rotate180, PatchTensor};
use crate::rng::stage_rng;

/// Encodes patches through `network` in chunks; `[n, output_dim]`.
pub fn encode(network: &Network, patches: &[PatchTensor]) -> Result<Tensor> {
    run_chunked(patches, |t| network.forward(t))
}

/// GAP features of the convolutional encoder alone; `[n, feature_dim]`.
pub fn encode_features(encoder: &ConvEncoder, patches: &[PatchTensor]) -> Result<Tensor> {
    run_chunked(patches, |t| encoder.forward(t))
}

fn run_chunked<F: Fn(&Tensor) -> Result<Tensor>>(patches: &[PatchTensor], f: F) -> Result<Tensor> {
    const CHUNK: usize = 256;
    let mut data = Vec::new();
    let mut width = 0;
    for chunk in patches.chunks(CHUNK) {
        let refs: Vec<&PatchTensor> = chunk.iter().collect();
        let out = f(&batch_tensor(&refs)?)?;
        width = out.shape()[1];
        data.extend_from_slice(out.data());
    }
    if patches.is_empty() {
        return Err(Error::invalid("nothing to encode"));
    }
    Tensor::from_vec(&[patches.len(), width], data)
}

/// Main and auxiliary networks of identical layout.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub main: Network,
    pub auxiliary: Network,
}

impl EncoderState {
    /// Fresh main network with the auxiliary initialized as an exact copy.
    pub fn new(main: Network) -> Self {
        EncoderState { auxiliary: main.clone(), main }
    }

    /// `aux ← m·aux + (1−m)·main`, elementwise over every parameter.
    pub fn momentum_update(&mut self, m: f64) -> Result<()> {
        momentum_update(&mut self.auxiliary, &self.main, m)
    }
}

pub fn momentum_update<P: Parameters + ?Sized, Q: Parameters + ?Sized>(auxiliary: &mut P, main: &Q, m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::invalid(format!("momentum must be in [0, 1], got {m}")));
    }
    crate::nn::same_layout(auxiliary, main)?;
    let main = main.named_tensors();
    for (a, (_, t)) in auxiliary.tensors_mut().into_iter().zip(main) {
        for (av, tv) in a.data_mut().iter_mut().zip(t.data()) {
            *av = m * *av + (1.0 - m) * tv;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub bank_capacity: usize,
    pub momentum: f64,
    pub temperature: f64,
    pub sgd: SgdConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 800,
            batch_size: 512,
            bank_capacity: 8192,
            momentum: 0.999,
            temperature: 0.4,
            sgd: SgdConfig { learning_rate: 0.1, milestones: vec![300, 500], factor: 0.5 },
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if self.bank_capacity == 0 || !self.bank_capacity.is_multiple_of(self.batch_size) {
            return Err(Error::invalid("bank capacity must be a positive multiple of the batch size"));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::invalid("momentum must be in (0, 1)"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be > 0"));
        }
        self.sgd.validate()
    }

    /// Mini-batches per epoch: `⌈n / batch_size⌉`.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// One row of the loss trace. `loss` is `None` for the warm-up step, which
/// only fills the bank.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: Option<f64>,
    pub learning_rate: f64,
    pub bank_fill: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    pub state: EncoderState,
    pub trace: Vec<StepRecord>,
}

impl PretrainOutcome {
    /// The trained convolutional encoder.
    pub fn encoder(&self) -> &ConvEncoder {
        &self.state.main.encoder
    }

    /// Mean per-sample loss of each epoch, over its optimized steps.
    pub fn epoch_mean_losses(&self) -> Vec<f64> {
        let epochs = self.trace.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
        (0..epochs)
            .map(|e| {
                let l: Vec<f64> = self.trace.iter().filter(|r| r.epoch == e).filter_map(|r| r.loss).collect();
                l.iter().sum::<f64>() / l.len().max(1) as f64
            })
            .collect()
    }

    /// CSV with header `epoch,step,loss,learning_rate,bank_fill`; the loss
    /// field is empty for the warm-up step.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,step,loss,learning_rate,bank_fill")?;
        for r in &self.trace {
            let loss = r.loss.map(|l| format!("{l:.9}")).unwrap_or_default();
            writeln!(w, "{},{},{loss},{},{}", r.epoch, r.step, r.learning_rate, r.bank_fill)?;
        }
        Ok(())
    }
}

/// Loss of one mini-batch and its gradient w.r.t. the main network only.
/// The auxiliary network and the bank are read-only here.
pub struct StepGradients {
    pub loss: InfoNceOutput,
    pub main: Network,
    pub positives: Tensor,
}

pub fn step_gradients(
    state: &EncoderState,
    anchors: &Tensor,
    positives_input: &Tensor,
    bank: &[f64],
    temperature: f64,
) -> Result<StepGradients> {
    let (o, cache) = state.main.forward_cached(anchors)?;
    let o_pos = state.auxiliary.forward(positives_input)?;
    let loss = info_nce(&o, &o_pos, bank, temperature)?;
    let main = state.main.backward(&cache, &loss.grad_anchors)?;
    Ok(StepGradients { loss, main, positives: o_pos })
}

/// Contrastive pretraining over already standardized anchor patches.
///
/// Each mini-batch pairs anchors with their 180° rotations, encodes them with
/// the main and auxiliary networks, takes an SGD step on the summed InfoNCE
/// loss against the bank, momentum-updates the auxiliary network and enqueues
/// the positives. The very first mini-batch only seeds the bank. Batches are
/// drawn from a seeded per-epoch shuffle; the last batch of an epoch wraps
/// around to keep the batch size fixed.
pub fn pretrain(anchors: &[PatchTensor], plan: &EncoderPlan, config: &PretrainConfig) -> Result<PretrainOutcome> {
    config.validate()?;
    plan.validate()?;
    if anchors.is_empty() {
        return Err(Error::invalid("empty pretraining dataset"));
    }
    let mut init_rng = stage_rng(config.seed, "pretrain-init");
    let mut state = EncoderState::new(Network::init(plan, &mut init_rng));
    let mut bank = MemoryBank::new(config.bank_capacity, plan.output_dim())?;
    let mut order_rng = stage_rng(config.seed, "pretrain-order");
    let positives: Vec<PatchTensor> = anchors.iter().map(rotate180).collect();
    let n = anchors.len();
    let steps = config.steps_per_epoch(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(steps * config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let lr = config.sgd.learning_rate_at(epoch);
        for step in 0..steps {
            let idx: Vec<usize> = (0..config.batch_size).map(|k| order[(step * config.batch_size + k) % n]).collect();
            let x = batch_tensor(&idx.iter().map(|&i| &anchors[i]).collect::<Vec<_>>())?;
            let x_pos = batch_tensor(&idx.iter().map(|&i| &positives[i]).collect::<Vec<_>>())?;
            let context = |e: Error| Error::Divergence(format!("epoch {epoch} step {step}: {e}"));

            if bank.is_empty() {
                let o_pos = state.auxiliary.forward(&x_pos).map_err(context)?;
                bank.enqueue(&o_pos)?;
                trace.push(StepRecord { epoch, step, loss: None, learning_rate: lr, bank_fill: bank.len() });
                continue;
            }
            let grads = step_gradients(&state, &x, &x_pos, &bank.entries(), config.temperature).map_err(context)?;
            let mean = grads.loss.mean_loss();
            crate::nn::sgd_step(&mut state.main, &grads.main, lr).map_err(context)?;
            state.momentum_update(config.momentum)?;
            bank.enqueue(&grads.positives)?;
            trace.push(StepRecord { epoch, step, loss: Some(mean), learning_rate: lr, bank_fill: bank.len() });
        }
        if log::log_enabled!(log::Level::Info) {
            let l: Vec<f64> = trace.iter().filter(|r| r.epoch == epoch).filter_map(|r| r.loss).collect();
            log::info!("pretrain epoch {epoch}: mean loss {:.5}", l.iter().sum::<f64>() / l.len().max(1) as f64);
        }
    }
    Ok(PretrainOutcome { state, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;

    #[test]
    fn momentum_scalar() {
        let mut aux = Linear::zeros(1, 1);
        aux.weight.data_mut()[0] = 0.5;
        let mut main = Linear::zeros(1, 1);
        main.weight.data_mut()[0] = 1.0;
        momentum_update(&mut aux, &main, 0.999).unwrap();
        assert!((aux.weight.data()[0] - 0.5005).abs() < 1e-15);
    }

    #[test]
    fn momentum_extremes() {
        let plan = EncoderPlan { in_channels: 2, patch_size: 5, conv_widths: vec![3], head_dims: vec![4, 2] };
        let mut rng = stage_rng(1, "m");
        let main = Network::init(&plan, &mut rng);
        let aux0 = Network::init(&plan, &mut rng);
        let mut s = EncoderState { main: main.clone(), auxiliary: aux0.clone() };
        s.momentum_update(1.0).unwrap();
        assert_eq!(s.auxiliary, aux0);
        s.momentum_update(0.0).unwrap();
        assert_eq!(s.auxiliary, main);
        assert!(s.momentum_update(1.5).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = PretrainConfig::default();
        ok.validate().unwrap();
        assert!(PretrainConfig { bank_capacity: 1000, ..ok.clone() }.validate().is_err());
        assert!(PretrainConfig { temperature: -1.0, ..ok.clone() }.validate().is_err());
        assert!(PretrainConfig { momentum: 1.0, ..ok.clone() }.validate().is_err());
        assert_eq!(ok.steps_per_epoch(1025), 3);
    }
}
