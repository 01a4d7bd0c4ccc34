//! Mean functions: a constant, or a small feed-forward network with tanh
//! activations and inverted-scaling dropout.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Mean-function architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MeanSpec {
    /// m(x) = beta, a single scalar.
    Constant,
    /// Fully connected layers with tanh activations and a linear scalar
    /// output. When `source_dependent`, the embedded categorical coordinates
    /// are appended to the quantitative input.
    Ffnn {
        hidden: Vec<usize>,
        dropout: f64,
        source_dependent: bool,
    },
}

impl MeanSpec {
    /// The architecture used by the fused strength stage: 3 layers of 2
    /// neurons, dropout 0.2, source dependent.
    pub fn ffnn_3x2() -> Self {
        MeanSpec::Ffnn { hidden: vec![2, 2, 2], dropout: 0.2, source_dependent: true }
    }

    /// 2 layers of 2 neurons, for the ductility stage.
    pub fn ffnn_2x2() -> Self {
        MeanSpec::Ffnn { hidden: vec![2, 2], dropout: 0.2, source_dependent: true }
    }

    pub fn source_dependent(&self) -> bool {
        matches!(self, MeanSpec::Ffnn { source_dependent: true, .. })
    }

    fn input_dim(&self, dx: usize, dh: usize) -> usize {
        if self.source_dependent() {
            dx + dh
        } else {
            dx
        }
    }

    /// Layer sizes including input and scalar output.
    fn layer_sizes(&self, dx: usize, dh: usize) -> Vec<usize> {
        match self {
            MeanSpec::Constant => vec![],
            MeanSpec::Ffnn { hidden, .. } => {
                let mut sizes = vec![self.input_dim(dx, dh)];
                sizes.extend_from_slice(hidden);
                sizes.push(1);
                sizes
            }
        }
    }

    pub fn param_count(&self, dx: usize, dh: usize) -> usize {
        match self {
            MeanSpec::Constant => 1,
            MeanSpec::Ffnn { .. } => {
                let sizes = self.layer_sizes(dx, dh);
                sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
            }
        }
    }

    /// Seeded initialization: zero for the constant, scaled normals for
    /// weights with zero biases.
    pub fn init_params(&self, dx: usize, dh: usize, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            MeanSpec::Constant => vec![0.0],
            MeanSpec::Ffnn { .. } => {
                let sizes = self.layer_sizes(dx, dh);
                let mut params = Vec::with_capacity(self.param_count(dx, dh));
                for w in sizes.windows(2) {
                    let (fan_in, fan_out) = (w[0], w[1]);
                    let scale = (1.0 / fan_in as f64).sqrt();
                    for _ in 0..fan_in * fan_out {
                        let u: f64 = rng.gen_range(-1.0..1.0);
                        params.push(u * scale);
                    }
                    params.extend(std::iter::repeat(0.0).take(fan_out));
                }
                params
            }
        }
    }
}

/// Whether dropout masks are sampled (training) or replaced by their
/// expectation (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Train,
    Infer,
}

/// Evaluates the mean at one point. `x` is the standardized quantitative
/// input, `h` the embedded categorical coordinates. Dropout uses inverted
/// scaling, so `Infer` equals the expectation over `Train` masks.
pub fn eval_mean(
    spec: &MeanSpec,
    beta: &[f64],
    x: &[f64],
    h: &[f64],
    mode: EvalMode,
    rng: Option<&mut dyn rand::RngCore>,
) -> f64 {
    match spec {
        MeanSpec::Constant => beta[0],
        MeanSpec::Ffnn { hidden, dropout, source_dependent } => {
            let mut act: Vec<f64> = if *source_dependent {
                x.iter().chain(h.iter()).copied().collect()
            } else {
                x.to_vec()
            };
            let mut sizes = vec![act.len()];
            sizes.extend_from_slice(hidden);
            sizes.push(1);

            let mut rng = rng;
            let mut offset = 0;
            for (layer, w) in sizes.windows(2).enumerate() {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weights = &beta[offset..offset + fan_in * fan_out];
                let biases = &beta[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
                offset += fan_in * fan_out + fan_out;
                let last = layer == sizes.len() - 2;
                let mut next = Vec::with_capacity(fan_out);
                for o in 0..fan_out {
                    let mut s = biases[o];
                    for i in 0..fan_in {
                        s += weights[o * fan_in + i] * act[i];
                    }
                    if last {
                        next.push(s);
                    } else {
                        let mut a = s.tanh();
                        if *dropout > 0.0 {
                            match mode {
                                EvalMode::Train => {
                                    let r = rng
                                        .as_deref_mut()
                                        .expect("train-mode dropout requires an rng");
                                    let u: f64 = r.gen();
                                    a = if u < *dropout { 0.0 } else { a / (1.0 - dropout) };
                                }
                                EvalMode::Infer => {}
                            }
                        }
                        next.push(a);
                    }
                }
                act = next;
            }
            act[0]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_mean_returns_beta() {
        assert_eq!(
            eval_mean(&MeanSpec::Constant, &[5.0], &[1.0, 2.0], &[], EvalMode::Infer, None),
            5.0
        );
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let spec = MeanSpec::ffnn_3x2();
        let n = spec.param_count(4, 2);
        let beta = vec![0.0; n];
        let v = eval_mean(&spec, &beta, &[0.3; 4], &[0.1, -0.2], EvalMode::Infer, None);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn param_count_matches_layer_arithmetic() {
        // input 6 (4 quant + 2 embedded) -> 2 -> 2 -> 2 -> 1
        let spec = MeanSpec::ffnn_3x2();
        assert_eq!(spec.param_count(4, 2), 6 * 2 + 2 + 2 * 2 + 2 + 2 * 2 + 2 + 2 + 1);
    }

    #[test]
    fn infer_matches_average_of_train_mode_draws() {
        // With a single hidden layer the output is linear in the dropout
        // mask, so inference equals the expectation over masks exactly and
        // the MC average must match within sampling error.
        let spec = MeanSpec::Ffnn { hidden: vec![3], dropout: 0.3, source_dependent: false };
        let mut init_rng = ChaCha8Rng::seed_from_u64(11);
        let beta = spec.init_params(3, 0, &mut init_rng);
        let x = [0.4, -0.9, 1.3];

        let infer = eval_mean(&spec, &beta, &x, &[], EvalMode::Infer, None);

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 200_000;
        let mean: f64 = (0..n)
            .map(|_| eval_mean(&spec, &beta, &x, &[], EvalMode::Train, Some(&mut rng)))
            .sum::<f64>()
            / n as f64;
        assert!(
            (mean - infer).abs() <= 0.01,
            "mc mean {mean} vs infer {infer}"
        );
    }

    #[test]
    fn init_is_seeded() {
        let spec = MeanSpec::ffnn_2x2();
        let a = spec.init_params(4, 2, &mut ChaCha8Rng::seed_from_u64(5));
        let b = spec.init_params(4, 2, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }
}
