//! Small U-Net segmenter trained with class-weighted cross-entropy.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::codec::ImageBuffer;
use crate::error::{Error, Result};
use crate::gan::image_to_tensor;
use crate::label::{encode_classes, ClassWeights, LabelMask, BACKGROUND, ROI};
use crate::nn::{stack, Conv, ConvKind, Norm, ParamSet};
use crate::rng::{self, Rng};
use crate::tensor::{load_checkpoint, save_checkpoint, AdamConfig, BnMode, RunningStats, Tape, Tensor, Var};

pub const NUM_CLASSES: usize = 2;
const HEAD_STD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct SegConfig {
    pub input_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub class_weights: ClassWeights,
    pub seed: u64,
    pub depth: usize,
    pub width: usize,
}

impl Default for SegConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            epochs: 300,
            batch_size: 4,
            lr: 1e-3,
            class_weights: ClassWeights::uniform(NUM_CLASSES),
            seed: 0,
            depth: 2,
            width: 8,
        }
    }
}

impl SegConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.batch_size == 0 {
            return Err(Error::Config("seg depth, width and batch size must be positive".into()));
        }
        if self.input_size == 0 || self.input_size % (1 << self.depth) != 0 {
            return Err(Error::Config(format!(
                "seg.input_size {} must be divisible by 2^{}",
                self.input_size, self.depth
            )));
        }
        if self.class_weights.len() != NUM_CLASSES {
            return Err(Error::Config(format!(
                "expected {NUM_CLASSES} class weights, got {}",
                self.class_weights.len()
            )));
        }
        self.adam().validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: 0.9,
            ..AdamConfig::default()
        }
    }
}

fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegNetToy {
    depth: usize,
    width: usize,
    set: ParamSet,
    down: Vec<(Conv, Norm)>,
    bottleneck: (Conv, Norm),
    up: Vec<(Conv, Norm)>,
    head: Conv,
}

impl SegNetToy {
    pub fn new(depth: usize, width: usize, rng: &mut Rng) -> Result<Self> {
        if depth == 0 || width == 0 {
            return Err(Error::Config("seg depth and width must be positive".into()));
        }
        let mut set = ParamSet::default();
        let ch = |i: usize| width << i;
        let block = |set: &mut ParamSet, name: String, cin: usize, cout: usize, rng: &mut Rng| {
            let conv = Conv::new(set, &name, ConvKind::Forward, cin, cout, 3, 1, 1, he_std(9 * cin), rng);
            let norm = Norm::new(set, &format!("{name}.bn"), cout);
            (conv, norm)
        };
        let mut down = Vec::with_capacity(depth);
        for i in 0..depth {
            let cin = if i == 0 { 3 } else { ch(i - 1) };
            down.push(block(&mut set, format!("s.down{i}"), cin, ch(i), rng));
        }
        let bottleneck = block(&mut set, "s.mid".into(), ch(depth - 1), ch(depth), rng);
        let mut up = Vec::with_capacity(depth);
        for i in (0..depth).rev() {
            up.push(block(&mut set, format!("s.up{i}"), ch(i + 1) + ch(i), ch(i), rng));
        }
        let head = Conv::new(&mut set, "s.head", ConvKind::Forward, width, NUM_CLASSES, 1, 1, 0, HEAD_STD, rng);
        Ok(Self {
            depth,
            width,
            set,
            down,
            bottleneck,
            up,
            head,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
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
        let m = 1 << self.depth;
        if c != 3 || h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "segmenter needs [N,3,H,W] with H, W divisible by {m}, got {:?}",
                tape.value(input).shape()
            )));
        }
        let mut cbr = |tape: &mut Tape, (conv, norm): &(Conv, Norm), x: Var| -> Result<Var> {
            let y = conv.forward(tape, vars, x)?;
            let y = norm.forward(tape, vars, y, mode, stats)?;
            tape.relu(y)
        };
        let mut skips = Vec::with_capacity(self.depth);
        let mut x = input;
        for layer in &self.down {
            x = cbr(tape, layer, x)?;
            skips.push(x);
            x = tape.max_pool2d(x, 2, 2)?;
        }
        x = cbr(tape, &self.bottleneck, x)?;
        for (layer, skip) in self.up.iter().zip(skips.iter().rev()) {
            x = tape.upsample_nearest(x, 2)?;
            x = tape.concat_channels(&[x, *skip])?;
            x = cbr(tape, layer, x)?;
        }
        self.head.forward(tape, vars, x)
    }

    /// `[1,K,H,W]` logits with running batch-norm statistics.
    pub fn logits(&self, image: &ImageBuffer) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.set.bind_frozen(&mut tape);
        let x = tape.constant(image_to_tensor(image)?);
        let mut stats = self.set.stats_snapshot();
        let out = self.forward(&mut tape, &vars, x, BnMode::Eval, &mut stats)?;
        Ok(tape.value(out).clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let entries = self.set.checkpoint_entries();
        save_checkpoint(path, entries.iter().map(|(n, t)| (n.as_str(), t)))
    }

    pub fn load(path: &Path, depth: usize, width: usize) -> Result<Self> {
        let mut net = Self::new(depth, width, &mut rng::seeded(0))?;
        net.set.load_entries(load_checkpoint(path)?)?;
        Ok(net)
    }
}

/// Argmax over classes per pixel; ties resolve to background.
pub fn logits_to_mask(logits: &Tensor) -> Result<LabelMask> {
    let [n, k, h, w] = logits.dims4()?;
    if n != 1 || k != NUM_CLASSES {
        return Err(Error::Shape(format!("expected [1,{NUM_CLASSES},H,W], got {:?}", logits.shape())));
    }
    let plane = h * w;
    let d = logits.data();
    let px = (0..plane)
        .map(|i| if d[plane + i] > d[i] { ROI } else { BACKGROUND })
        .collect();
    LabelMask::new(ImageBuffer::gray(w, h, px)?)
}

pub fn predict(net: &SegNetToy, image: &ImageBuffer) -> Result<LabelMask> {
    logits_to_mask(&net.logits(image)?)
}

/// Mean training loss per epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegLog {
    pub epoch_losses: Vec<f64>,
}

impl SegLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (i, l) in self.epoch_losses.iter().enumerate() {
            out.push_str(&format!("{i},{l}\n"));
        }
        out
    }
}

pub fn train(dataset: &[(ImageBuffer, LabelMask)], cfg: &SegConfig) -> Result<(SegNetToy, SegLog)> {
    train_with(dataset, cfg, |_, _| {})
}

/// Like [`train`], reporting `(epoch, mean loss)` after each epoch.
pub fn train_with(
    dataset: &[(ImageBuffer, LabelMask)],
    cfg: &SegConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(SegNetToy, SegLog)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("no segmentation training pairs".into()));
    }
    let s = cfg.input_size;
    let mut samples = Vec::with_capacity(dataset.len());
    for (i, (image, mask)) in dataset.iter().enumerate() {
        if (image.width(), image.height()) != (s, s) || (mask.width(), mask.height()) != (s, s) {
            return Err(Error::Shape(format!("pair {i} is not {s}x{s}")));
        }
        samples.push((image_to_tensor(image)?, encode_classes(mask)?.classes));
    }
    let mut net = SegNetToy::new(cfg.depth, cfg.width, &mut rng::stream(cfg.seed, 0))?;
    let adam = cfg.adam();
    let mut shuffle = rng::stream(cfg.seed, 1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = SegLog::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let inputs: Vec<&Tensor> = batch.iter().map(|&i| &samples[i].0).collect();
            let labels: Vec<usize> = batch.iter().flat_map(|&i| samples[i].1.iter().copied()).collect();
            let mut tape = Tape::new();
            let vars = net.set.bind(&mut tape);
            let x = tape.constant(stack(&inputs)?);
            let mut stats = net.set.stats_snapshot();
            let step = (|| -> Result<f64> {
                let logits = net.forward(&mut tape, &vars, x, BnMode::Train, &mut stats)?;
                let loss = tape.weighted_softmax_ce(logits, &labels, cfg.class_weights.as_slice())?;
                tape.backward(loss)?;
                let grads = net.set.grads(&tape, &vars);
                net.set.step(&grads, &adam)?;
                Ok(tape.value(loss).item())
            })()
            .map_err(|e| e.context(format!("segmentation epoch {epoch}")))?;
            net.set.set_stats(stats);
            total += step;
            batches += 1;
        }
        let mean = total / batches as f64;
        on_epoch(epoch, mean);
        log.epoch_losses.push(mean);
    }
    Ok((net, log))
}

/// Deterministic shuffled split. Only items for which `is_real` holds can be
/// drawn for testing; `round(n_real · test_fraction)` of them are. Returns
/// sorted `(train, test)` indices.
pub fn split_train_test<T>(
    items: &[T],
    is_real: impl Fn(&T) -> bool,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction must be in (0,1), got {test_fraction}")));
    }
    let mut real: Vec<usize> = (0..items.len()).filter(|&i| is_real(&items[i])).collect();
    let n_test = (real.len() as f64 * test_fraction).round() as usize;
    if n_test == 0 {
        return Err(Error::Split(format!(
            "test fraction {test_fraction} of {} real samples leaves an empty test set",
            real.len()
        )));
    }
    if n_test == items.len() {
        return Err(Error::Split("split leaves no training samples".into()));
    }
    real.shuffle(&mut rng::stream(seed, 2));
    let mut test = real[..n_test].to_vec();
    test.sort_unstable();
    let train = (0..items.len()).filter(|i| test.binary_search(i).is_err()).collect();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_set() -> Vec<(ImageBuffer, LabelMask)> {
        (0..2)
            .map(|k| {
                let mut px = vec![];
                let mut m = vec![];
                for y in 0..16 {
                    for x in 0..16 {
                        let fg = (x + y + k) % 7 < 3;
                        px.extend(if fg { [90, 40, 130] } else { [230, 180, 210] });
                        m.push(if fg { 255 } else { 0 });
                    }
                }
                (
                    ImageBuffer::rgb(16, 16, px).unwrap(),
                    LabelMask::new(ImageBuffer::gray(16, 16, m).unwrap()).unwrap(),
                )
            })
            .collect()
    }

    fn tiny_cfg() -> SegConfig {
        SegConfig {
            input_size: 16,
            epochs: 3,
            batch_size: 2,
            width: 4,
            seed: 9,
            ..SegConfig::default()
        }
    }

    #[test]
    fn initial_loss_is_near_ln2() {
        let cfg = SegConfig { epochs: 1, ..tiny_cfg() };
        let (_, log) = train(&tiny_set(), &cfg).unwrap();
        assert!((log.epoch_losses[0] - std::f64::consts::LN_2).abs() < 0.2);
    }

    #[test]
    fn training_is_deterministic() {
        let (a, la) = train(&tiny_set(), &tiny_cfg()).unwrap();
        let (b, lb) = train(&tiny_set(), &tiny_cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        let img = &tiny_set()[0].0;
        let p = predict(&a, img).unwrap();
        assert!(p.pixels().iter().all(|&v| v == 0 || v == 255));
        assert_eq!(p, predict(&a, img).unwrap());
    }

    #[test]
    fn argmax_ties_and_shift() {
        let t = Tensor::new(vec![1, 2, 1, 3], vec![0.0, 1.0, 2.0, 0.0, 0.5, 2.0]).unwrap();
        assert_eq!(logits_to_mask(&t).unwrap().pixels(), &[0, 0, 0]);
        let shifted = Tensor::new(vec![1, 2, 1, 3], vec![3.0, 1.0, 2.0, 3.0, 0.5, 2.0]).unwrap();
        let t2 = Tensor::new(vec![1, 2, 1, 3], vec![0.0, 1.0, 2.0, 1.0, 0.5, 2.0]).unwrap();
        let s2 = Tensor::new(vec![1, 2, 1, 3], vec![5.0, 1.0, 2.0, 6.0, 0.5, 2.0]).unwrap();
        assert_eq!(logits_to_mask(&shifted).unwrap().pixels(), &[0, 0, 0]);
        assert_eq!(logits_to_mask(&t2).unwrap(), logits_to_mask(&s2).unwrap());
    }

    #[test]
    fn split_rules() {
        let items: Vec<bool> = vec![true; 480];
        let (train, test) = split_train_test(&items, |&r| r, 0.05, 1).unwrap();
        assert_eq!((train.len(), test.len()), (456, 24));
        let (a, b) = split_train_test(&[true, true], |&r| r, 0.5, 3).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
        let mixed = [true, false, true, false, false, true];
        let (_, test) = split_train_test(&mixed, |&r| r, 0.5, 4).unwrap();
        assert!(test.iter().all(|&i| mixed[i]));
        assert!(matches!(split_train_test(&[true; 5], |&r| r, 0.05, 1), Err(Error::Split(_))));
        assert!(matches!(split_train_test(&[true; 5], |&r| r, 1.0, 1), Err(Error::Config(_))));
        assert_eq!(
            split_train_test(&items, |&r| r, 0.05, 1).unwrap(),
            split_train_test(&items, |&r| r, 0.05, 1).unwrap()
        );
    }

    #[test]
    fn config_checks_divisibility() {
        let bad = SegConfig {
            input_size: 30,
            ..SegConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
