//! Future-feature regressor: a two-layer perceptron mapping the initial-frame
//! visual feature and the language feature to the final-frame visual feature.
//!
//! Training is plain mini-batch gradient descent on mean-squared error, run
//! single-threaded in a fixed accumulation order so that a seed fully
//! determines the weights.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{baseline_vis_feature, lang_feature, FeatureMode, FeatureTable, OBSERVED_SOURCE};
use super::DynamicsError;
use crate::demo_store::Demonstration;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 64,
            learning_rate: 20.0,
            epochs: 300,
            batch_size: 16,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

impl TrainingSample {
    pub fn from_demo(demo: &Demonstration) -> Self {
        let vis_in = baseline_vis_feature(demo.initial_observation());
        let lang = lang_feature(&demo.language);
        TrainingSample {
            input: vis_in.iter().chain(&lang).map(|&v| f64::from(v)).collect(),
            target: baseline_vis_feature(demo.final_observation())
                .iter()
                .map(|&v| f64::from(v))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsPredictor {
    pub input_dim: usize,
    pub hidden: usize,
    pub output_dim: usize,
    /// hidden x input, row-major
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// output x hidden, row-major
    w2: Vec<f64>,
    b2: Vec<f64>,
    pub config: TrainConfig,
    pub final_loss: f64,
    pub baseline_loss: f64,
}

struct Activations {
    hidden: Vec<f64>,
    output: Vec<f64>,
}

impl DynamicsPredictor {
    /// Random weights; the output bias starts at `output_bias`.
    pub fn init(input_dim: usize, hidden: usize, output_bias: Vec<f64>, config: TrainConfig) -> Self {
        let output_dim = output_bias.len();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let a1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + output_dim) as f64).sqrt();
        let w1 = (0..hidden * input_dim).map(|_| rng.gen_range(-a1..a1)).collect();
        let w2 = (0..output_dim * hidden).map(|_| rng.gen_range(-a2..a2)).collect();
        DynamicsPredictor {
            input_dim,
            hidden,
            output_dim,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: output_bias,
            config,
            final_loss: f64::NAN,
            baseline_loss: f64::NAN,
        }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Flat parameter view in the order w1, b1, w2, b2.
    pub fn params(&self) -> Vec<f64> {
        [&self.w1, &self.b1, &self.w2, &self.b2]
            .into_iter()
            .flat_map(|v| v.iter().copied())
            .collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut rest = flat;
        for buf in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            let (head, tail) = rest.split_at(buf.len());
            buf.copy_from_slice(head);
            rest = tail;
        }
    }

    fn forward(&self, x: &[f64]) -> Activations {
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let row = &self.w1[h * self.input_dim..(h + 1) * self.input_dim];
                let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[h];
                z.tanh()
            })
            .collect();
        let output = (0..self.output_dim)
            .map(|o| {
                let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
                row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>() + self.b2[o]
            })
            .collect();
        Activations { hidden, output }
    }

    pub fn predict(&self, vis_in: &[f32], lang: &[f32]) -> Result<Vec<f32>, DynamicsError> {
        if vis_in.len() + lang.len() != self.input_dim {
            return Err(DynamicsError::DimensionMismatch {
                expected: self.input_dim,
                found: vis_in.len() + lang.len(),
            });
        }
        let x: Vec<f64> = vis_in.iter().chain(lang).map(|&v| f64::from(v)).collect();
        Ok(self.forward(&x).output.iter().map(|&v| v as f32).collect())
    }

    /// Mean-squared error over all samples and output dimensions.
    pub fn loss(&self, samples: &[&TrainingSample]) -> f64 {
        let mut total = 0.0;
        for s in samples {
            let out = self.forward(&s.input).output;
            total += out.iter().zip(&s.target).map(|(y, t)| (y - t) * (y - t)).sum::<f64>();
        }
        total / (samples.len() * self.output_dim) as f64
    }

    /// Loss and its gradient with respect to `params()`, by backpropagation.
    pub fn loss_and_gradient(&self, samples: &[&TrainingSample]) -> (f64, Vec<f64>) {
        let (i_dim, h_dim, o_dim) = (self.input_dim, self.hidden, self.output_dim);
        let mut g_w1 = vec![0.0; self.w1.len()];
        let mut g_b1 = vec![0.0; h_dim];
        let mut g_w2 = vec![0.0; self.w2.len()];
        let mut g_b2 = vec![0.0; o_dim];
        let scale = 1.0 / (samples.len() * o_dim) as f64;
        let mut total = 0.0;
        let mut d_hidden = vec![0.0; h_dim];
        for s in samples {
            let act = self.forward(&s.input);
            d_hidden.iter_mut().for_each(|d| *d = 0.0);
            for o in 0..o_dim {
                let err = act.output[o] - s.target[o];
                total += err * err;
                let d_out = 2.0 * err * scale;
                g_b2[o] += d_out;
                let row = o * h_dim;
                for h in 0..h_dim {
                    g_w2[row + h] += d_out * act.hidden[h];
                    d_hidden[h] += d_out * self.w2[row + h];
                }
            }
            for h in 0..h_dim {
                let d_z = d_hidden[h] * (1.0 - act.hidden[h] * act.hidden[h]);
                if d_z == 0.0 {
                    continue;
                }
                g_b1[h] += d_z;
                let row = &mut g_w1[h * i_dim..(h + 1) * i_dim];
                for (g, x) in row.iter_mut().zip(&s.input) {
                    *g += d_z * x;
                }
            }
        }
        let grad = g_w1.into_iter().chain(g_b1).chain(g_w2).chain(g_b2).collect();
        (total * scale, grad)
    }

    fn step(&mut self, grad: &[f64], lr: f64) {
        let mut offset = 0;
        for buf in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            for (w, g) in buf.iter_mut().zip(&grad[offset..]) {
                *w -= lr * g;
            }
            offset += buf.len();
        }
    }
}

/// MSE of always predicting the per-dimension mean target.
pub fn constant_mean_loss(samples: &[TrainingSample]) -> f64 {
    let mean = mean_target(samples);
    let total: f64 = samples
        .iter()
        .map(|s| s.target.iter().zip(&mean).map(|(t, m)| (t - m) * (t - m)).sum::<f64>())
        .sum();
    total / (samples.len() * mean.len()) as f64
}

fn mean_target(samples: &[TrainingSample]) -> Vec<f64> {
    let dim = samples[0].target.len();
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, t) in mean.iter_mut().zip(&s.target) {
            *m += t;
        }
    }
    mean.iter_mut().for_each(|m| *m /= samples.len() as f64);
    mean
}

pub fn train(samples: &[TrainingSample], config: TrainConfig) -> Result<DynamicsPredictor, DynamicsError> {
    if samples.len() < 2 {
        return Err(DynamicsError::TooFewSamples(samples.len()));
    }
    if config.batch_size == 0 || config.hidden == 0 || !(config.learning_rate > 0.0) {
        return Err(DynamicsError::BadConfig(format!("{config:?}")));
    }
    let input_dim = samples[0].input.len();
    let output_dim = samples[0].target.len();
    if samples
        .iter()
        .any(|s| s.input.len() != input_dim || s.target.len() != output_dim)
    {
        return Err(DynamicsError::BadConfig("samples have inconsistent dimensions".into()));
    }
    let mut model = DynamicsPredictor::init(input_dim, config.hidden, mean_target(samples), config);
    // separate stream for shuffling so init and order are independent
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546_464c_4521);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, grad) = model.loss_and_gradient(&batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(DynamicsError::Diverged { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            model.step(&grad, config.learning_rate);
        }
        if epoch % 50 == 0 {
            log::debug!("epoch {epoch}: loss {:.6}", epoch_loss / samples.len() as f64);
        }
    }
    let all: Vec<&TrainingSample> = samples.iter().collect();
    model.final_loss = model.loss(&all);
    if !model.final_loss.is_finite() {
        return Err(DynamicsError::Diverged { epoch: config.epochs });
    }
    model.baseline_loss = constant_mean_loss(samples);
    Ok(model)
}

/// Samples from an observed feature table (see `observed_features`).
pub fn samples_from_observed(table: &FeatureTable) -> Result<Vec<TrainingSample>, DynamicsError> {
    if table.mode != FeatureMode::All || table.source != OBSERVED_SOURCE {
        return Err(DynamicsError::BadConfig(format!(
            "training needs observed features in mode `all`, got `{}` from `{}`",
            table.mode, table.source
        )));
    }
    Ok(table
        .features
        .iter()
        .map(|f| {
            let (vis_in, vis_out) = f.vis.split_at(table.d_vis);
            TrainingSample {
                input: vis_in.iter().chain(&f.lang).map(|&v| f64::from(v)).collect(),
                target: vis_out.iter().map(|&v| f64::from(v)).collect(),
            }
        })
        .collect())
}

pub fn train_dynamics_predictor(
    demos: &[Demonstration],
    config: TrainConfig,
) -> Result<DynamicsPredictor, DynamicsError> {
    let samples: Vec<TrainingSample> = demos.iter().map(TrainingSample::from_demo).collect();
    train(&samples, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_samples(n: usize, seed: u64) -> Vec<TrainingSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let input: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
                let target = vec![input[0] * 0.5 + 0.1, input[1] - input[2], input[3] * input[4]];
                TrainingSample { input, target }
            })
            .collect()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            hidden: 8,
            learning_rate: 0.5,
            epochs: 400,
            batch_size: 8,
            seed: 3,
        }
    }

    #[test]
    fn params_round_trip() {
        let mut m = DynamicsPredictor::init(4, 3, vec![0.0; 2], small_config());
        let mut p = m.params();
        assert_eq!(p.len(), 4 * 3 + 3 + 2 * 3 + 2);
        p[5] = 42.0;
        m.set_params(&p);
        assert_eq!(m.params(), p);
    }

    #[test]
    fn training_beats_constant_mean() {
        let samples = toy_samples(64, 1);
        let m = train(&samples, small_config()).unwrap();
        assert!(m.final_loss < m.baseline_loss, "{} vs {}", m.final_loss, m.baseline_loss);
    }

    #[test]
    fn divergence_reports_epoch() {
        let samples = toy_samples(16, 2);
        let cfg = TrainConfig {
            learning_rate: 1e6,
            ..small_config()
        };
        assert!(matches!(train(&samples, cfg), Err(DynamicsError::Diverged { .. })));
    }

    #[test]
    fn rejects_tiny_datasets() {
        assert!(matches!(
            train(&toy_samples(1, 0), small_config()),
            Err(DynamicsError::TooFewSamples(1))
        ));
    }

    #[test]
    fn observed_table_gives_the_same_samples() {
        use crate::sim::{generate_seen_dataset, resolve_tasks, SimConfig};
        let cfg = SimConfig { image_size: 8, ..SimConfig::default() };
        let ds = generate_seen_dataset(&resolve_tasks("push_button,stack_block").unwrap(), 2, 4, &cfg).unwrap();
        let table = super::super::observed_features(ds.demos()).unwrap();
        let direct: Vec<TrainingSample> = ds.demos().iter().map(TrainingSample::from_demo).collect();
        assert_eq!(samples_from_observed(&table).unwrap(), direct);
        let wrong = FeatureTable::new(FeatureMode::VisOut, 1, 1, "predicted:mlp");
        assert!(samples_from_observed(&wrong).is_err());
    }
}
