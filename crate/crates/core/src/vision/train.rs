use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{CnnModel, LayerGrad, Tensor};
use super::{CnnConfig, ImageTensor, VisionError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss seen during each epoch.
    pub running_loss: Vec<f64>,
    /// Mean training loss of the model at the end of each epoch.
    pub epoch_loss: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub frozen_checksum_before: u64,
    pub frozen_checksum_after: u64,
}

fn bce_with_logits(z: f64, y: f64) -> (f64, f64) {
    let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    let p = if z >= 0.0 { 1.0 / (1.0 + (-z).exp()) } else { z.exp() / (1.0 + z.exp()) };
    (softplus - y * z, p - y)
}

fn check_data(model: &CnnModel, images: &[ImageTensor], labels: &[u8]) -> Result<Vec<Tensor>, VisionError> {
    if images.len() != labels.len() {
        return Err(VisionError::Length(format!("{} images, {} labels", images.len(), labels.len())));
    }
    if let Some(i) = labels.iter().position(|&l| l > 1) {
        return Err(VisionError::Shape(format!("label {i} is not 0/1")));
    }
    images
        .iter()
        .map(|img| {
            let t = Tensor::from(img);
            model.check_input(&t)?;
            Ok(t)
        })
        .collect()
}

/// Trains a freshly initialized network (seeded by `config.seed`).
pub fn train_cnn(
    images: &[ImageTensor],
    labels: &[u8],
    config: &CnnConfig,
) -> Result<(CnnModel, TrainReport), VisionError> {
    let first = images.first().ok_or_else(|| VisionError::Empty("no training images".into()))?;
    let model = CnnModel::init(first.shape(), &config.layers, config.frozen_prefix, config.seed)?;
    train_from(model, images, labels, config)
}

/// Continues training `model` with Adam on logistic loss. Layers before
/// `model.frozen_prefix` are never updated. Per-image passes run in
/// parallel; gradients are summed in batch order, so results depend only on
/// the seed.
pub fn train_from(
    mut model: CnnModel,
    images: &[ImageTensor],
    labels: &[u8],
    config: &CnnConfig,
) -> Result<(CnnModel, TrainReport), VisionError> {
    config.validate()?;
    let xs = check_data(&model, images, labels)?;
    let frozen = model.frozen_prefix;
    let checksum_before = model.param_checksum(frozen);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_7a1e);
    let mut m: Vec<LayerGrad> = model.layers.iter().map(|l| l.zero_grad()).collect();
    let mut v = m.clone();
    let mut step = 0i32;
    let mut report = TrainReport {
        running_loss: Vec::new(),
        epoch_loss: Vec::new(),
        learning_rate: Vec::new(),
        frozen_checksum_before: checksum_before,
        frozen_checksum_after: checksum_before,
    };
    let mut order: Vec<usize> = (0..xs.len()).collect();

    for epoch in 0..config.epochs {
        let lr = config.rate_at(epoch);
        order.shuffle(&mut rng);
        let mut running = 0.0;
        for batch in order.chunks(config.train_batch) {
            let per_image: Vec<(f64, Vec<LayerGrad>)> = batch
                .par_iter()
                .map(|&i| {
                    let acts = model.forward(&xs[i]);
                    let z = acts.last().expect("non-empty").data[0];
                    let (loss, dz) = bce_with_logits(z, f64::from(labels[i]));
                    (loss, model.backward(&acts, dz).params)
                })
                .collect();
            let mut grads: Vec<LayerGrad> = model.layers.iter().map(|l| l.zero_grad()).collect();
            let mut batch_loss = 0.0;
            for (loss, g) in &per_image {
                batch_loss += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.add(gi);
                }
            }
            if !batch_loss.is_finite() {
                return Err(VisionError::Divergence { epoch, loss: batch_loss });
            }
            running += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            step += 1;
            let bc1 = 1.0 - config.beta1.powi(step);
            let bc2 = 1.0 - config.beta2.powi(step);
            for (li, layer) in model.layers.iter_mut().enumerate().skip(frozen) {
                let g = &grads[li];
                let params = layer.weight.iter_mut().chain(layer.bias.iter_mut());
                let gs = g.weight.iter().chain(&g.bias);
                let (mw, vw) = (&mut m[li], &mut v[li]);
                let ms = mw.weight.iter_mut().chain(mw.bias.iter_mut());
                let vs = vw.weight.iter_mut().chain(vw.bias.iter_mut());
                for (((p, &gr), mi), vi) in params.zip(gs).zip(ms).zip(vs) {
                    let gr = gr * scale;
                    *mi = config.beta1 * *mi + (1.0 - config.beta1) * gr;
                    *vi = config.beta2 * *vi + (1.0 - config.beta2) * gr * gr;
                    *p -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + config.epsilon);
                }
            }
        }
        let eval = mean_loss(&model, &xs, labels, config.eval_batch);
        if !eval.is_finite() {
            return Err(VisionError::Divergence { epoch, loss: eval });
        }
        report.running_loss.push(running / xs.len() as f64);
        report.epoch_loss.push(eval);
        report.learning_rate.push(lr);
    }
    report.frozen_checksum_after = model.param_checksum(frozen);
    Ok((model, report))
}

fn mean_loss(model: &CnnModel, xs: &[Tensor], labels: &[u8], eval_batch: usize) -> f64 {
    let total: f64 = xs
        .chunks(eval_batch)
        .zip(labels.chunks(eval_batch))
        .map(|(bx, by)| {
            let losses: Vec<f64> = bx
                .par_iter()
                .zip(by)
                .map(|(x, &y)| bce_with_logits(model.logit(x), f64::from(y)).0)
                .collect();
            losses.iter().sum::<f64>()
        })
        .sum();
    total / xs.len().max(1) as f64
}

/// Sigmoid outputs for each image.
pub fn predict_proba(model: &CnnModel, images: &[ImageTensor]) -> Result<Vec<f64>, VisionError> {
    let xs: Vec<Tensor> = images
        .iter()
        .map(|img| {
            let t = Tensor::from(img);
            model.check_input(&t).map(|_| t)
        })
        .collect::<Result<_, _>>()?;
    Ok(xs
        .par_iter()
        .map(|x| {
            let z = model.logit(x);
            bce_with_logits(z, 0.0).1
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Samples dropped because a ReLU sign or pooling argmax changed
    /// inside the finite-difference interval.
    pub skipped: usize,
}

/// Gradients smaller than this are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-6;
const FD_STEP: f64 = 1e-5;

enum Coord {
    Weight(usize, usize),
    Bias(usize, usize),
    Input(usize),
}

/// Compares analytic gradients of the logit with central differences over
/// `n_samples` random parameter and input coordinates.
pub fn backprop_check(
    model: &CnnModel,
    image: &ImageTensor,
    n_samples: usize,
    seed: u64,
) -> Result<GradCheck, VisionError> {
    let x = Tensor::from(image);
    model.check_input(&x)?;
    let acts = model.forward(&x);
    let grads = model.backward(&acts, 1.0);
    let mut coords = Vec::new();
    for (li, l) in model.layers.iter().enumerate() {
        coords.extend((0..l.weight.len()).map(|i| Coord::Weight(li, i)));
        coords.extend((0..l.bias.len()).map(|i| Coord::Bias(li, i)));
    }
    coords.extend((0..x.data.len()).map(Coord::Input));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let evaluate = |m: &CnnModel, input: &Tensor| {
        let acts = m.forward(input);
        let pattern: Vec<Vec<usize>> =
            m.layers.iter().zip(&acts).map(|(l, a)| l.branch_pattern(a)).collect();
        (acts.last().expect("non-empty").data[0], pattern)
    };
    let base_pattern = evaluate(model, &x).1;

    let mut out = GradCheck { max_rel_error: 0.0, max_abs_error: 0.0, checked: 0, skipped: 0 };
    for _ in 0..n_samples {
        let c = &coords[rng.random_range(0..coords.len())];
        let (analytic, plus, minus) = match *c {
            Coord::Weight(li, i) | Coord::Bias(li, i) => {
                let is_w = matches!(c, Coord::Weight(..));
                let g = if is_w { grads.params[li].weight[i] } else { grads.params[li].bias[i] };
                let shifted = |delta: f64| {
                    let mut m = model.clone();
                    let p = if is_w { &mut m.layers[li].weight[i] } else { &mut m.layers[li].bias[i] };
                    *p += delta;
                    evaluate(&m, &x)
                };
                (g, shifted(FD_STEP), shifted(-FD_STEP))
            }
            Coord::Input(i) => {
                let shifted = |delta: f64| {
                    let mut xi = x.clone();
                    xi.data[i] += delta;
                    evaluate(model, &xi)
                };
                (grads.acts[0].data[i], shifted(FD_STEP), shifted(-FD_STEP))
            }
        };
        if plus.1 != base_pattern || minus.1 != base_pattern {
            out.skipped += 1;
            continue;
        }
        let numeric = (plus.0 - minus.0) / (2.0 * FD_STEP);
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        out.max_abs_error = out.max_abs_error.max(abs);
        out.max_rel_error = out.max_rel_error.max(rel);
        out.checked += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::net::{LayerSpec, Shape};
    use super::*;

    fn noise_image(seed: u64, shape: Shape) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.len()).map(|_| rng.random::<f64>()).collect();
        ImageTensor::new(shape.c, shape.h, shape.w, data).unwrap()
    }

    #[test]
    fn linear_model_gradients_exact() {
        let specs = [
            LayerSpec::Conv { out_channels: 2, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { out: 1 },
        ];
        let model = CnnModel::init(Shape::new(1, 5, 5), &specs, 0, 1).unwrap();
        let img = noise_image(2, model.input);
        let gc = backprop_check(&model, &img, 200, 3).unwrap();
        assert_eq!(gc.skipped, 0);
        assert!(gc.max_rel_error < 1e-8, "{gc:?}");
    }

    #[test]
    fn nonlinear_model_gradients() {
        let specs = [
            LayerSpec::Conv { out_channels: 3, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { kernel: 2, stride: 2 },
            LayerSpec::Conv { out_channels: 2, kernel: 3, stride: 2, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::Dense { out: 1 },
        ];
        let model = CnnModel::init(Shape::new(2, 8, 8), &specs, 0, 4).unwrap();
        let gc = backprop_check(&model, &noise_image(5, model.input), 300, 6).unwrap();
        assert!(gc.checked > 200);
        assert!(gc.max_rel_error < 1e-4, "{gc:?}");
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = CnnConfig { epochs: 0, ..Default::default() };
        let imgs = vec![noise_image(1, Shape::new(1, 8, 8)), noise_image(2, Shape::new(1, 8, 8))];
        let (model, report) = train_cnn(&imgs, &[0, 1], &cfg).unwrap();
        let init = CnnModel::init(Shape::new(1, 8, 8), &cfg.layers, 0, cfg.seed).unwrap();
        assert_eq!(model, init);
        assert!(report.epoch_loss.is_empty());
    }

    #[test]
    fn frozen_prefix_unchanged_and_deterministic() {
        let cfg = CnnConfig { epochs: 2, train_batch: 4, frozen_prefix: 4, ..Default::default() };
        let imgs: Vec<ImageTensor> = (0..12).map(|s| noise_image(s, Shape::new(1, 8, 8))).collect();
        let labels: Vec<u8> = (0..12).map(|i| (i % 2) as u8).collect();
        let (a, ra) = train_cnn(&imgs, &labels, &cfg).unwrap();
        let (b, _) = train_cnn(&imgs, &labels, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.frozen_checksum_before, ra.frozen_checksum_after);
        let init = CnnModel::init(Shape::new(1, 8, 8), &cfg.layers, 4, cfg.seed).unwrap();
        assert_ne!(a.param_checksum(7), init.param_checksum(7));
    }

    #[test]
    fn divergence_reports_epoch() {
        let cfg = CnnConfig { epochs: 1, train_batch: 2, ..Default::default() };
        let imgs = vec![noise_image(1, Shape::new(1, 8, 8)), noise_image(2, Shape::new(1, 8, 8))];
        let mut model = CnnModel::init(Shape::new(1, 8, 8), &cfg.layers, 0, 0).unwrap();
        let last = model.layers.len() - 1;
        model.layers[last].bias[0] = f64::INFINITY;
        match train_from(model, &imgs, &[0, 1], &cfg) {
            Err(VisionError::Divergence { epoch: 0, .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let imgs = vec![noise_image(1, Shape::new(1, 8, 8)), noise_image(2, Shape::new(1, 6, 6))];
        assert!(matches!(
            train_cnn(&imgs, &[0, 1], &CnnConfig::default()),
            Err(VisionError::Shape(_))
        ));
    }
}
