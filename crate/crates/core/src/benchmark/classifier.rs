//! Small convolutional digit classifier whose pooled activations serve as
//! an alternative feature space for the Fréchet distance.

use rand::SeedableRng;

use crate::autograd::{Graph, Var};
use crate::data::ImageDataset;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Init, Linear, ParamStore};
use crate::optim::{Adam, AdamConfig};
use crate::rng::StreamRng;
use crate::tensor::TensorBuf;

pub const CLASSES: usize = 10;

#[derive(Clone, Debug)]
pub struct Classifier {
    params: ParamStore<f32>,
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    head: Linear,
}

impl Classifier {
    pub fn new(seed: u64) -> Self {
        let mut rng = StreamRng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let conv1 = Conv2d::new(&mut params, &mut rng, "conv1", 1, 16, 3, 2, Init::FanIn);
        let conv2 = Conv2d::new(&mut params, &mut rng, "conv2", 16, 32, 3, 2, Init::FanIn);
        let conv3 = Conv2d::new(&mut params, &mut rng, "conv3", 32, 64, 3, 2, Init::FanIn);
        let head = Linear::new(&mut params, &mut rng, "head", 64, CLASSES, Init::FanIn);
        Self {
            params,
            conv1,
            conv2,
            conv3,
            head,
        }
    }

    pub fn feature_dim(&self) -> usize {
        64
    }

    fn features_node<'p>(&self, g: &mut Graph<'p, f32>, params: &'p ParamStore<f32>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, params, x)?;
        let h = g.silu(h);
        let h = self.conv2.forward(g, params, h)?;
        let h = g.silu(h);
        let h = self.conv3.forward(g, params, h)?;
        let h = g.silu(h);
        Ok(g.mean_spatial(h))
    }

    /// Pooled activations `[n, 64]` for images `[n, 1, H, W]`.
    pub fn features(&self, images: &TensorBuf<f32>) -> Result<TensorBuf<f32>> {
        if images.rank() != 4 || images.shape()[1] != 1 {
            return Err(Error::shape(&[images.batch(), 1, 32, 32], images.shape()));
        }
        let mut out = Vec::with_capacity(images.batch() * self.feature_dim());
        for lo in (0..images.batch()).step_by(256) {
            let chunk = images.slice_batch(lo, (lo + 256).min(images.batch()));
            let mut g = Graph::inference();
            let x = g.input(chunk);
            let f = self.features_node(&mut g, &self.params, x)?;
            out.extend_from_slice(g.value(f).data());
        }
        TensorBuf::new(vec![images.batch(), self.feature_dim()], out)
    }

    pub fn accuracy(&self, images: &TensorBuf<f32>, labels: &[u8]) -> Result<f64> {
        let feats = self.features(images)?;
        let mut g = Graph::inference();
        let f = g.input(feats);
        let logits = self.head.forward(&mut g, &self.params, f)?;
        let l = g.value(logits);
        let correct = (0..l.batch())
            .filter(|&i| {
                let row = l.item(i);
                let best = (0..CLASSES).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
                best == labels[i] as usize
            })
            .count();
        Ok(correct as f64 / l.batch().max(1) as f64)
    }

    /// Trains on labelled images with Adam; returns the final batch loss.
    pub fn train(&mut self, data: &ImageDataset, steps: usize, batch: usize, seed: u64) -> Result<f64> {
        let labels = data
            .labels
            .as_ref()
            .ok_or_else(|| Error::config("classifier features need a labelled dataset"))?;
        let mut opt = Adam::new(
            AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            &self.params,
        )?;
        let mut last = f64::NAN;
        let mut epoch = 0;
        let mut iter = crate::data::batch_iter_epoch(data, batch, seed, epoch)?;
        let mut order: Vec<Vec<usize>> = iter.indices().map(|c| c.to_vec()).collect();
        let mut pos = 0;
        for step in 0..steps {
            let x = match iter.next() {
                Some(x) => x,
                None => {
                    epoch += 1;
                    iter = crate::data::batch_iter_epoch(data, batch, seed, epoch)?;
                    order = iter.indices().map(|c| c.to_vec()).collect();
                    pos = 0;
                    iter.next().expect("batch size checked against dataset size")
                }
            };
            let y: Vec<usize> = order[pos].iter().map(|&i| labels[i] as usize).collect();
            pos += 1;
            let grads = {
                let mut g = Graph::new();
                let xv = g.input(x);
                let f = self.features_node(&mut g, &self.params, xv)?;
                let logits = self.head.forward(&mut g, &self.params, f)?;
                let loss = g.cross_entropy(logits, &y)?;
                last = g.value(loss).data()[0] as f64;
                if !last.is_finite() {
                    return Err(Error::Training {
                        step,
                        reason: "classifier loss is not finite".into(),
                    });
                }
                g.backward(loss, self.params.len())?
            };
            opt.step(&mut self.params, &grads);
        }
        Ok(last)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two synthetic classes: bright left half vs bright right half.
    fn halves(n: usize) -> ImageDataset {
        let mut labels = Vec::new();
        let images = TensorBuf::from_fn(vec![n, 1, 32, 32], |i| {
            let item = i / 1024;
            let col = i % 32;
            let left = item % 2 == 0;
            if (col < 16) == left { 1.0 } else { -1.0 }
        });
        for i in 0..n {
            labels.push((i % 2) as u8);
        }
        ImageDataset {
            images,
            labels: Some(labels),
        }
    }

    #[test]
    fn learns_a_separable_task() {
        let ds = halves(64);
        let mut c = Classifier::new(1);
        c.train(&ds, 60, 16, 2).unwrap();
        assert!(c.accuracy(&ds.images, ds.labels.as_ref().unwrap()).unwrap() > 0.95);
        assert_eq!(c.features(&ds.images).unwrap().shape(), &[64, 64]);
    }
}
