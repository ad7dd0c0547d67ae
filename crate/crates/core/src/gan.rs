//! Label-to-image translation with an L1-regularized conditional GAN.
//!
//! The generator is a U-Net whose depth is `log2(image_size)`, so the
//! innermost feature map is 1×1. The discriminator sees the label and an
//! image concatenated along channels and emits a grid of patch logits.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::codec::{quantize, ImageBuffer};
use crate::error::{Error, Result};
use crate::label::{FusedLabel, BACKGROUND, FUSED_EDGE, FUSED_ROI};
use crate::nn::{stack, Conv, ConvKind, Norm, ParamSet};
use crate::rng::{self, Rng};
use crate::tensor::{load_checkpoint, save_checkpoint, Activation, AdamConfig, BnMode, RunningStats, Tape, Tensor, Var};

const INIT_STD: f64 = 0.02;
const LEAK: Activation = Activation::LeakyRelu(0.2);
pub const DEFAULT_SMOOTHING_WINDOW: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct GanConfig {
    pub lambda_l1: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub image_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub seed: u64,
    pub gen_width: usize,
    pub disc_width: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            lambda_l1: 100.0,
            epochs: 200,
            batch_size: 1,
            image_size: 64,
            lr: 2e-4,
            beta1: 0.5,
            seed: 0,
            gen_width: 16,
            disc_width: 16,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_l1 >= 0.0 && self.lambda_l1.is_finite()) {
            return Err(Error::Config(format!("gan.lambda_l1 must be >= 0, got {}", self.lambda_l1)));
        }
        if ![64, 128, 256].contains(&self.image_size) {
            return Err(Error::Config(format!(
                "gan.image_size must be 64, 128 or 256, got {}",
                self.image_size
            )));
        }
        if self.batch_size == 0 || self.gen_width == 0 || self.disc_width == 0 {
            return Err(Error::Config("gan batch size and widths must be positive".into()));
        }
        self.adam().validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            ..AdamConfig::default()
        }
    }
}

/// One-hot over background/ROI/edge, each channel mapped to `2v - 1`.
pub fn label_to_input(fused: &FusedLabel) -> Result<Tensor> {
    let (w, h) = (fused.width(), fused.height());
    let plane = w * h;
    let mut data = vec![-1.0; 3 * plane];
    for (i, &v) in fused.pixels().iter().enumerate() {
        let c = match v {
            BACKGROUND => 0,
            FUSED_ROI => 1,
            FUSED_EDGE => 2,
            other => return Err(Error::LabelRange(format!("fused value {other}"))),
        };
        data[c * plane + i] = 1.0;
    }
    Tensor::new(vec![1, 3, h, w], data)
}

/// Channel-wise argmax back to a fused label; ties go to the lower class.
pub fn input_to_label(input: &Tensor) -> Result<FusedLabel> {
    let [n, c, h, w] = input.dims4()?;
    if n != 1 || c != 3 {
        return Err(Error::Shape(format!("expected [1,3,H,W], got {:?}", input.shape())));
    }
    let plane = h * w;
    let d = input.data();
    let px = (0..plane)
        .map(|i| {
            let mut best = 0;
            for k in 1..3 {
                if d[k * plane + i] > d[best * plane + i] {
                    best = k;
                }
            }
            [BACKGROUND, FUSED_ROI, FUSED_EDGE][best]
        })
        .collect();
    FusedLabel::new(ImageBuffer::gray(w, h, px)?)
}

/// RGB (or gray, replicated) pixels to `[1,3,H,W]` in [-1, 1].
pub fn image_to_tensor(image: &ImageBuffer) -> Result<Tensor> {
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    if ch != 1 && ch != 3 {
        return Err(Error::Shape(format!("expected 1 or 3 channels, got {ch}")));
    }
    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in image.pixels().chunks(ch).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c.min(ch - 1)] as f64 / 127.5 - 1.0;
        }
    }
    Tensor::new(vec![1, 3, h, w], data)
}

/// Decodes sample `index` of a `[N,3,H,W]` tensor as `round(127.5 (v + 1))`.
pub fn tensor_to_image(t: &Tensor, index: usize) -> Result<ImageBuffer> {
    let [n, c, h, w] = t.dims4()?;
    if c != 3 || index >= n {
        return Err(Error::Shape(format!("cannot decode sample {index} of {:?}", t.shape())));
    }
    let plane = h * w;
    let base = index * 3 * plane;
    let d = t.data();
    let mut px = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for k in 0..3 {
            px.push(quantize(127.5 * (d[base + k * plane + i] + 1.0)));
        }
    }
    ImageBuffer::rgb(w, h, px)
}

fn channels(width: usize, level: usize) -> usize {
    width << level.min(3)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorNet {
    image_size: usize,
    width: usize,
    set: ParamSet,
    encoders: Vec<(Conv, Option<Norm>)>,
    decoders: Vec<(Conv, Option<Norm>)>,
}

impl GeneratorNet {
    pub fn new(image_size: usize, width: usize, rng: &mut Rng) -> Result<Self> {
        if !image_size.is_power_of_two() || image_size < 4 || width == 0 {
            return Err(Error::Config(format!(
                "generator needs a power-of-two size >= 4 and a positive width, got {image_size}, {width}"
            )));
        }
        let depth = image_size.trailing_zeros() as usize;
        let mut set = ParamSet::default();
        let mut encoders = Vec::with_capacity(depth);
        for i in 0..depth {
            let cin = if i == 0 { 3 } else { channels(width, i - 1) };
            let cout = channels(width, i);
            let conv = Conv::new(&mut set, &format!("g.enc{i}"), ConvKind::Forward, cin, cout, 4, 2, 1, INIT_STD, rng);
            let norm = (i > 0 && i + 1 < depth).then(|| Norm::new(&mut set, &format!("g.enc{i}.bn"), cout));
            encoders.push((conv, norm));
        }
        let mut decoders = Vec::with_capacity(depth);
        for j in (0..depth).rev() {
            let cin = if j + 1 == depth { channels(width, j) } else { 2 * channels(width, j) };
            let cout = if j == 0 { 3 } else { channels(width, j - 1) };
            let conv = Conv::new(&mut set, &format!("g.dec{j}"), ConvKind::Transposed, cin, cout, 4, 2, 1, INIT_STD, rng);
            let norm = (j > 0).then(|| Norm::new(&mut set, &format!("g.dec{j}.bn"), cout));
            decoders.push((conv, norm));
        }
        Ok(Self {
            image_size,
            width,
            set,
            encoders,
            decoders,
        })
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn params(&self) -> &ParamSet {
        &self.set
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        input: Var,
        mode: BnMode,
        stats: &mut [RunningStats],
    ) -> Result<Var> {
        let [_, c, h, w] = tape.value(input).dims4()?;
        if c != 3 || h != self.image_size || w != self.image_size {
            return Err(Error::Shape(format!(
                "generator expects [N,3,{s},{s}], got {:?}",
                tape.value(input).shape(),
                s = self.image_size
            )));
        }
        let mut skips = Vec::with_capacity(self.encoders.len());
        let mut x = input;
        for (conv, norm) in &self.encoders {
            x = conv.forward(tape, vars, x)?;
            if let Some(norm) = norm {
                x = norm.forward(tape, vars, x, mode, stats)?;
            }
            x = tape.activation(x, LEAK)?;
            skips.push(x);
        }
        let depth = self.decoders.len();
        for (step, (conv, norm)) in self.decoders.iter().enumerate() {
            let level = depth - 1 - step;
            if step > 0 {
                x = tape.concat_channels(&[x, skips[level]])?;
            }
            x = conv.forward(tape, vars, x)?;
            x = match norm {
                Some(norm) => {
                    let y = norm.forward(tape, vars, x, mode, stats)?;
                    tape.relu(y)?
                }
                None => tape.activation(x, Activation::Tanh)?,
            };
        }
        Ok(x)
    }

    /// Inference with per-call batch statistics; the stored running
    /// statistics are left untouched.
    pub fn generate(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.set.bind_frozen(&mut tape);
        let x = tape.constant(input.clone());
        let mut scratch = self.set.stats_snapshot();
        let out = self.forward(&mut tape, &vars, x, BnMode::Train, &mut scratch)?;
        Ok(tape.value(out).clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let entries = self.set.checkpoint_entries();
        save_checkpoint(path, entries.iter().map(|(n, t)| (n.as_str(), t)))
    }

    pub fn load(path: &Path, image_size: usize, width: usize) -> Result<Self> {
        let mut net = Self::new(image_size, width, &mut rng::seeded(0))?;
        net.set.load_entries(load_checkpoint(path)?)?;
        Ok(net)
    }
}

pub fn generator_forward(g: &GeneratorNet, input: &Tensor) -> Result<Tensor> {
    g.generate(input)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorNet {
    set: ParamSet,
    blocks: Vec<(Conv, Option<Norm>)>,
    head: Conv,
}

impl DiscriminatorNet {
    pub fn new(width: usize, rng: &mut Rng) -> Self {
        let mut set = ParamSet::default();
        let mut blocks = Vec::new();
        let mut cin = 6;
        for i in 0..3 {
            let cout = width << i;
            let conv = Conv::new(&mut set, &format!("d.conv{i}"), ConvKind::Forward, cin, cout, 4, 2, 1, INIT_STD, rng);
            let norm = (i > 0).then(|| Norm::new(&mut set, &format!("d.conv{i}.bn"), cout));
            blocks.push((conv, norm));
            cin = cout;
        }
        let head = Conv::new(&mut set, "d.head", ConvKind::Forward, cin, 1, 4, 1, 1, INIT_STD, rng);
        Self { set, blocks, head }
    }

    pub fn params(&self) -> &ParamSet {
        &self.set
    }

    /// Patch logits for `cat(label, image)`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        label: Var,
        image: Var,
        mode: BnMode,
        stats: &mut [RunningStats],
    ) -> Result<Var> {
        let mut x = tape.concat_channels(&[label, image])?;
        for (conv, norm) in &self.blocks {
            x = conv.forward(tape, vars, x)?;
            if let Some(norm) = norm {
                x = norm.forward(tape, vars, x, mode, stats)?;
            }
            x = tape.activation(x, LEAK)?;
        }
        self.head.forward(tape, vars, x)
    }

    /// Logits with the running statistics (no state change).
    pub fn logits_eval(&self, label: &Tensor, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.set.bind_frozen(&mut tape);
        let l = tape.constant(label.clone());
        let i = tape.constant(image.clone());
        let mut stats = self.set.stats_snapshot();
        let out = self.forward(&mut tape, &vars, l, i, BnMode::Eval, &mut stats)?;
        Ok(tape.value(out).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanLosses {
    pub gen_total: f64,
    pub gen_adv: f64,
    pub gen_l1: f64,
    pub disc: f64,
}

/// `disc = ½[BCE(real,1) + BCE(fake,0)]`, `gen_adv = BCE(fake,1)`,
/// `gen_l1 = mean|fake − target|`, `gen_total = gen_adv + λ·gen_l1`.
pub fn gan_losses(
    d_real_logits: &Tensor,
    d_fake_logits: &Tensor,
    fake: &Tensor,
    target: &Tensor,
    lambda_l1: f64,
) -> Result<GanLosses> {
    let mut tape = Tape::new();
    let real = tape.constant(d_real_logits.clone());
    let dfake = tape.constant(d_fake_logits.clone());
    let disc = disc_loss(&mut tape, real, dfake)?;
    let f = tape.constant(fake.clone());
    let t = tape.constant(target.clone());
    let (gen_total, gen_adv, gen_l1) = gen_loss(&mut tape, dfake, f, t, lambda_l1)?;
    Ok(GanLosses {
        gen_total: tape.value(gen_total).item(),
        gen_adv: tape.value(gen_adv).item(),
        gen_l1: tape.value(gen_l1).item(),
        disc: tape.value(disc).item(),
    })
}

fn disc_loss(tape: &mut Tape, real_logits: Var, fake_logits: Var) -> Result<Var> {
    let ones = Tensor::full(tape.value(real_logits).shape(), 1.0);
    let zeros = Tensor::zeros(tape.value(fake_logits).shape());
    let a = tape.bce_with_logits(real_logits, &ones)?;
    let b = tape.bce_with_logits(fake_logits, &zeros)?;
    let s = tape.add(a, b)?;
    tape.scale(s, 0.5)
}

fn gen_loss(tape: &mut Tape, fake_logits: Var, fake: Var, target: Var, lambda: f64) -> Result<(Var, Var, Var)> {
    let ones = Tensor::full(tape.value(fake_logits).shape(), 1.0);
    let adv = tape.bce_with_logits(fake_logits, &ones)?;
    let l1 = tape.l1(fake, target)?;
    let weighted = tape.scale(l1, lambda)?;
    let total = tape.add(adv, weighted)?;
    Ok((total, adv, l1))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossLog {
    pub records: Vec<GanLosses>,
}

pub const LOSS_CSV_HEADER: &str = "iter,gen_total,gen_adv,gen_l1,disc";

impl LossLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn series(&self, f: impl Fn(&GanLosses) -> f64) -> Vec<f64> {
        self.records.iter().map(f).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{LOSS_CSV_HEADER}\n");
        for (i, r) in self.records.iter().enumerate() {
            out.push_str(&format!("{i},{},{},{},{}\n", r.gen_total, r.gen_adv, r.gen_l1, r.disc));
        }
        out
    }

    /// Same layout as [`LossLog::to_csv`] with every column smoothed.
    pub fn smoothed_csv(&self, window: usize) -> Result<String> {
        let cols = [
            moving_average(&self.series(|r| r.gen_total), window)?,
            moving_average(&self.series(|r| r.gen_adv), window)?,
            moving_average(&self.series(|r| r.gen_l1), window)?,
            moving_average(&self.series(|r| r.disc), window)?,
        ];
        let mut out = format!("{LOSS_CSV_HEADER}\n");
        for i in 0..self.records.len() {
            out.push_str(&format!("{i},{},{},{},{}\n", cols[0][i], cols[1][i], cols[2][i], cols[3][i]));
        }
        Ok(out)
    }
}

/// Element `i` is the mean of the last `min(i + 1, window)` values.
pub fn moving_average(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Config("moving-average window must be >= 1".into()));
    }
    Ok((0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect())
}

/// Generator, discriminator and optimizer state for alternating updates.
#[derive(Clone, Debug)]
pub struct GanTrainer {
    cfg: GanConfig,
    generator: GeneratorNet,
    discriminator: DiscriminatorNet,
    iteration: usize,
}

impl GanTrainer {
    pub fn new(cfg: GanConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init = rng::stream(cfg.seed, 0);
        let generator = GeneratorNet::new(cfg.image_size, cfg.gen_width, &mut init)?;
        let discriminator = DiscriminatorNet::new(cfg.disc_width, &mut init);
        Ok(Self {
            cfg,
            generator,
            discriminator,
            iteration: 0,
        })
    }

    pub fn config(&self) -> &GanConfig {
        &self.cfg
    }

    pub fn generator(&self) -> &GeneratorNet {
        &self.generator
    }

    pub fn discriminator(&self) -> &DiscriminatorNet {
        &self.discriminator
    }

    pub fn into_generator(self) -> GeneratorNet {
        self.generator
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn d_update(&mut self, label: &Tensor, target: &Tensor, fake: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.discriminator.set.bind(&mut tape);
        let l = tape.constant(label.clone());
        let real = tape.constant(target.clone());
        let fake = tape.constant(fake.clone());
        let mut stats = self.discriminator.set.stats_snapshot();
        let real_logits = self.discriminator.forward(&mut tape, &vars, l, real, BnMode::Train, &mut stats)?;
        let fake_logits = self.discriminator.forward(&mut tape, &vars, l, fake, BnMode::Train, &mut stats)?;
        let loss = disc_loss(&mut tape, real_logits, fake_logits)?;
        tape.backward(loss)?;
        let grads = self.discriminator.set.grads(&tape, &vars);
        let adam = self.cfg.adam();
        self.discriminator.set.step(&grads, &adam)?;
        self.discriminator.set.set_stats(stats);
        Ok(tape.value(loss).item())
    }

    /// Builds the generator graph, then adds the (frozen) discriminator and the
    /// generator objective on top.
    fn g_graph(&self, label: &Tensor, target: &Tensor, stats: &mut [RunningStats]) -> Result<(GanLosses, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let gvars = self.generator.set.bind(&mut tape);
        let l = tape.constant(label.clone());
        let t = tape.constant(target.clone());
        let fake = self.generator.forward(&mut tape, &gvars, l, BnMode::Train, stats)?;
        let dvars = self.discriminator.set.bind_frozen(&mut tape);
        let mut dstats = self.discriminator.set.stats_snapshot();
        let logits = self.discriminator.forward(&mut tape, &dvars, l, fake, BnMode::Train, &mut dstats)?;
        let (total, adv, l1) = gen_loss(&mut tape, logits, fake, t, self.cfg.lambda_l1)?;
        tape.backward(total)?;
        let losses = GanLosses {
            gen_total: tape.value(total).item(),
            gen_adv: tape.value(adv).item(),
            gen_l1: tape.value(l1).item(),
            disc: f64::NAN,
        };
        Ok((losses, self.generator.set.grads(&tape, &gvars)))
    }

    /// Generator gradients for a batch without changing any state.
    pub fn generator_grads(&self, label: &Tensor, target: &Tensor) -> Result<Vec<Tensor>> {
        let mut stats = self.generator.set.stats_snapshot();
        Ok(self.g_graph(label, target, &mut stats)?.1)
    }

    /// One discriminator update against the current generator's output.
    pub fn d_step(&mut self, label: &Tensor, target: &Tensor) -> Result<f64> {
        let fake = self.generator.generate(label)?;
        self.d_update(label, target, &fake)
    }

    /// One generator update; the discriminator is left unchanged.
    pub fn g_step(&mut self, label: &Tensor, target: &Tensor) -> Result<GanLosses> {
        let mut stats = self.generator.set.stats_snapshot();
        let (losses, grads) = self.g_graph(label, target, &mut stats)?;
        self.generator.set.step(&grads, &self.cfg.adam())?;
        self.generator.set.set_stats(stats);
        Ok(losses)
    }

    /// Discriminator update on the current fake, then generator update.
    pub fn iterate(&mut self, label: &Tensor, target: &Tensor) -> Result<GanLosses> {
        let disc = self.d_step(label, target)?;
        let mut losses = self.g_step(label, target)?;
        losses.disc = disc;
        self.iteration += 1;
        Ok(losses)
    }
}

fn prepare_pairs(dataset: &[(FusedLabel, ImageBuffer)], size: usize) -> Result<Vec<(Tensor, Tensor)>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("no GAN training pairs".into()));
    }
    dataset
        .iter()
        .enumerate()
        .map(|(i, (label, image))| {
            if (label.width(), label.height()) != (size, size) || (image.width(), image.height()) != (size, size) {
                return Err(Error::Shape(format!(
                    "pair {i} is {}x{} / {}x{}, expected {size}x{size}",
                    label.width(),
                    label.height(),
                    image.width(),
                    image.height()
                )));
            }
            Ok((label_to_input(label)?, image_to_tensor(image)?))
        })
        .collect()
}

/// Full training run: `epochs` passes over a seeded shuffle of the pairs.
/// `on_iteration` sees every logged iteration; a failure reports its index
/// and leaves the trainer holding the last good weights.
pub fn train_with(
    trainer: &mut GanTrainer,
    dataset: &[(FusedLabel, ImageBuffer)],
    mut on_iteration: impl FnMut(usize, &GanLosses),
) -> Result<LossLog> {
    let cfg = trainer.cfg.clone();
    let pairs = prepare_pairs(dataset, cfg.image_size)?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut shuffle = rng::stream(cfg.seed, 1);
    let mut log = LossLog::default();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        for batch in order.chunks(cfg.batch_size) {
            let labels: Vec<&Tensor> = batch.iter().map(|&i| &pairs[i].0).collect();
            let images: Vec<&Tensor> = batch.iter().map(|&i| &pairs[i].1).collect();
            let (l, t) = (stack(&labels)?, stack(&images)?);
            let iter = log.len();
            let losses = trainer
                .iterate(&l, &t)
                .map_err(|e| e.context(format!("GAN iteration {iter}")))?;
            on_iteration(iter, &losses);
            log.records.push(losses);
        }
    }
    Ok(log)
}

pub fn train(dataset: &[(FusedLabel, ImageBuffer)], cfg: &GanConfig) -> Result<(GeneratorNet, LossLog)> {
    let mut trainer = GanTrainer::new(cfg.clone())?;
    let log = train_with(&mut trainer, dataset, |_, _| {})?;
    Ok((trainer.into_generator(), log))
}

pub fn synthesize(g: &GeneratorNet, labels: &[FusedLabel]) -> Result<Vec<ImageBuffer>> {
    labels
        .iter()
        .map(|label| {
            let out = g.generate(&label_to_input(label)?)?;
            tensor_to_image(&out, 0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_hot_encoding() {
        let f = FusedLabel::new(ImageBuffer::gray(3, 1, vec![128, 0, 255]).unwrap()).unwrap();
        let t = label_to_input(&f).unwrap();
        assert_eq!(t.shape(), &[1, 3, 1, 3]);
        let at = |i: usize| [t.data()[i], t.data()[3 + i], t.data()[6 + i]];
        assert_eq!(at(0), [-1.0, 1.0, -1.0]);
        assert_eq!(at(1), [1.0, -1.0, -1.0]);
        assert_eq!(at(2), [-1.0, -1.0, 1.0]);
    }

    #[test]
    fn loss_identities() {
        let zeros = Tensor::zeros(&[1, 1, 2, 2]);
        let img = Tensor::full(&[1, 3, 2, 2], 0.3);
        let l = gan_losses(&zeros, &zeros, &img, &img, 100.0).unwrap();
        assert_eq!(l.gen_l1, 0.0);
        assert_eq!(l.gen_total, l.gen_adv);
        assert!((l.gen_adv - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l.disc - std::f64::consts::LN_2).abs() < 1e-12);

        // target differs by 0.01 everywhere, fake logits chosen so BCE(.,1) = 0.5
        let z = -((0.5f64).exp() - 1.0).ln();
        let fake_logits = Tensor::full(&[1, 1, 2, 2], z);
        let target = Tensor::full(&[1, 3, 2, 2], 0.31);
        let l = gan_losses(&zeros, &fake_logits, &img, &target, 100.0).unwrap();
        assert!((l.gen_adv - 0.5).abs() < 1e-12);
        assert!((l.gen_l1 - 0.01).abs() < 1e-12);
        assert!((l.gen_total - 1.5).abs() < 1e-10);
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[1.0, 3.0, 5.0], 2).unwrap(), vec![1.0, 2.0, 4.0]);
        assert_eq!(moving_average(&[4.0, -1.0, 2.5], 1).unwrap(), vec![4.0, -1.0, 2.5]);
        assert_eq!(moving_average(&[2.0; 5], 50).unwrap(), vec![2.0; 5]);
        assert!(moving_average(&[], 3).unwrap().is_empty());
        assert!(moving_average(&[1.0], 0).is_err());
    }

    #[test]
    fn generator_shape_and_range() {
        let g = GeneratorNet::new(64, 4, &mut rng::seeded(3)).unwrap();
        let label = FusedLabel::new(ImageBuffer::gray(64, 64, (0..4096).map(|i| [0, 128, 255][i % 3]).collect()).unwrap())
            .unwrap();
        let input = label_to_input(&label).unwrap();
        let out = g.generate(&input).unwrap();
        assert_eq!(out.shape(), &[1, 3, 64, 64]);
        assert!(out.data().iter().all(|v| v.abs() < 1.0));
        assert_eq!(out, g.generate(&input).unwrap());
        let bad = Tensor::zeros(&[1, 3, 32, 32]);
        assert!(matches!(g.generate(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn discriminator_grid_at_64() {
        let d = DiscriminatorNet::new(4, &mut rng::seeded(1));
        let x = Tensor::zeros(&[1, 3, 64, 64]);
        assert_eq!(d.logits_eval(&x, &x).unwrap().shape(), &[1, 1, 7, 7]);
    }

    #[test]
    fn config_validation() {
        assert!(GanConfig::default().validate().is_ok());
        let bad = GanConfig {
            image_size: 100,
            ..GanConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = GanConfig {
            lambda_l1: -1.0,
            ..GanConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn image_tensor_round_trip() {
        let img = ImageBuffer::rgb(2, 1, vec![0, 127, 255, 10, 20, 30]).unwrap();
        assert_eq!(tensor_to_image(&image_to_tensor(&img).unwrap(), 0).unwrap(), img);
    }

    proptest! {
        #[test]
        fn argmax_inverts_one_hot(px in proptest::collection::vec(prop::sample::select(vec![0u8, 128, 255]), 1..40)) {
            let n = px.len();
            let f = FusedLabel::new(ImageBuffer::gray(n, 1, px).unwrap()).unwrap();
            prop_assert_eq!(input_to_label(&label_to_input(&f).unwrap()).unwrap(), f);
        }
    }
}
