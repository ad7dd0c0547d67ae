//! Layer bookkeeping shared by the generator, discriminator and segmenter.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{adam_step, AdamConfig, BnMode, Parameter, RunningStats, Tape, Tensor, Var};

pub(crate) const BN_EPS: f64 = 1e-5;

/// Ordered trainable parameters plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    stats: Vec<(String, RunningStats)>,
}

impl ParamSet {
    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn stats(&self) -> &[(String, RunningStats)] {
        &self.stats
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    fn add(&mut self, name: String, value: Tensor) -> usize {
        self.params.push(Parameter::new(name, value));
        self.params.len() - 1
    }

    /// Records every parameter as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p)).collect()
    }

    /// Records every parameter as a constant (no gradient flows into it).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.constant(p.value.clone())).collect()
    }

    /// Gradients for `vars` (as returned by [`ParamSet::bind`]); zeros where
    /// the loss does not reach a parameter.
    pub fn grads(&self, tape: &Tape, vars: &[Var]) -> Vec<Tensor> {
        self.params
            .iter()
            .zip(vars)
            .map(|(p, &v)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
            .collect()
    }

    pub fn step(&mut self, grads: &[Tensor], cfg: &AdamConfig) -> Result<()> {
        let mut refs: Vec<&mut Parameter> = self.params.iter_mut().collect();
        adam_step(&mut refs, grads, cfg)
    }

    /// Copy of the running statistics, in layer order.
    pub fn stats_snapshot(&self) -> Vec<RunningStats> {
        self.stats.iter().map(|(_, s)| s.clone()).collect()
    }

    pub fn set_stats(&mut self, stats: Vec<RunningStats>) {
        for ((_, s), new) in self.stats.iter_mut().zip(stats) {
            *s = new;
        }
    }

    /// Named tensors for a checkpoint: parameters, then running statistics.
    pub fn checkpoint_entries(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        for (name, s) in &self.stats {
            let c = s.mean.len();
            out.push((format!("{name}.running_mean"), Tensor::new(vec![c], s.mean.clone()).expect("c > 0")));
            out.push((format!("{name}.running_var"), Tensor::new(vec![c], s.var.clone()).expect("c > 0")));
        }
        out
    }

    /// Overwrites values from checkpoint entries; every name must be present
    /// with a matching shape.
    pub fn load_entries(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        let mut by_name: HashMap<String, Tensor> = entries.into_iter().collect();
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = by_name
                .remove(name)
                .ok_or_else(|| Error::Codec(format!("checkpoint is missing {name}")))?;
            if t.shape() != shape {
                return Err(Error::Shape(format!(
                    "checkpoint {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        for p in &mut self.params {
            let t = take(&p.name, p.value.shape())?;
            *p = Parameter::new(p.name.clone(), t);
        }
        for (name, s) in &mut self.stats {
            let c = s.mean.len();
            s.mean = take(&format!("{name}.running_mean"), &[c])?.into_data();
            s.var = take(&format!("{name}.running_var"), &[c])?.into_data();
        }
        if let Some(extra) = by_name.keys().min() {
            return Err(Error::Codec(format!("checkpoint has unexpected entry {extra}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ConvKind {
    Forward,
    Transposed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Conv {
    weight: usize,
    bias: usize,
    kind: ConvKind,
    stride: usize,
    pad: usize,
}

impl Conv {
    /// Weights drawn from N(0, std²), zero bias.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        set: &mut ParamSet,
        name: &str,
        kind: ConvKind,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        std: f64,
        rng: &mut Rng,
    ) -> Self {
        let shape = match kind {
            ConvKind::Forward => [cout, cin, kernel, kernel],
            ConvKind::Transposed => [cin, cout, kernel, kernel],
        };
        let weight = set.add(format!("{name}.weight"), Tensor::randn(&shape, std, rng));
        let bias = set.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Self {
            weight,
            bias,
            kind,
            stride,
            pad,
        }
    }

    pub(crate) fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let (w, b) = (vars[self.weight], vars[self.bias]);
        match self.kind {
            ConvKind::Forward => tape.conv2d(x, w, b, self.stride, self.pad),
            ConvKind::Transposed => tape.conv_transpose2d(x, w, b, self.stride, self.pad),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Norm {
    gamma: usize,
    beta: usize,
    stats: usize,
}

impl Norm {
    pub(crate) fn new(set: &mut ParamSet, name: &str, channels: usize) -> Self {
        let gamma = set.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0));
        let beta = set.add(format!("{name}.beta"), Tensor::zeros(&[channels]));
        set.stats.push((name.to_string(), RunningStats::new(channels)));
        Self {
            gamma,
            beta,
            stats: set.stats.len() - 1,
        }
    }

    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        mode: BnMode,
        stats: &mut [RunningStats],
    ) -> Result<Var> {
        tape.batch_norm2d(x, vars[self.gamma], vars[self.beta], &mut stats[self.stats], mode, BN_EPS)
    }
}

/// Stacks `[1,C,H,W]` (or `[C,H,W]`-sized) tensors along the batch axis.
pub(crate) fn stack(items: &[&Tensor]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| Error::EmptyDataset("cannot stack an empty batch".into()))?;
    let per = first.numel();
    let tail: Vec<usize> = first.shape()[1..].to_vec();
    let mut data = Vec::with_capacity(per * items.len());
    for t in items {
        if t.shape()[1..] != tail[..] || t.numel() != per {
            return Err(Error::Shape("batch items differ in shape".into()));
        }
        data.extend_from_slice(t.data());
    }
    let mut shape = vec![items.len()];
    shape.extend(tail);
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn checkpoint_entries_round_trip() {
        let mut set = ParamSet::default();
        let mut r = rng::seeded(1);
        let _ = Conv::new(&mut set, "c", ConvKind::Forward, 2, 3, 3, 1, 1, 0.1, &mut r);
        let _ = Norm::new(&mut set, "bn", 3);
        set.stats[0].1.mean = vec![0.5, 1.5, 2.5];
        let entries = set.checkpoint_entries();
        assert_eq!(entries.len(), 6);
        let mut fresh = ParamSet::default();
        let _ = Conv::new(&mut fresh, "c", ConvKind::Forward, 2, 3, 3, 1, 1, 0.1, &mut rng::seeded(9));
        let _ = Norm::new(&mut fresh, "bn", 3);
        fresh.load_entries(entries.clone()).unwrap();
        assert_eq!(fresh.checkpoint_entries(), entries);

        let mut missing = entries.clone();
        missing.pop();
        assert!(fresh.load_entries(missing).is_err());
        let mut extra = entries;
        extra.push(("stray".into(), Tensor::scalar(1.0)));
        assert!(fresh.load_entries(extra).is_err());
    }

    #[test]
    fn stack_concatenates_batches() {
        let a = Tensor::full(&[1, 2, 1, 1], 1.0);
        let b = Tensor::full(&[1, 2, 1, 1], 2.0);
        let s = stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 1, 1]);
        assert_eq!(s.data(), &[1.0, 1.0, 2.0, 2.0]);
    }
}
