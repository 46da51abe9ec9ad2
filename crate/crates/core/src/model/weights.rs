use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{HeadKind, ModelConfig};
use super::ModelError;
use crate::numerics::{Scalar, Tensor};

const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Normal,
    ResidualProjection,
    Zeros,
    Ones,
}

/// Parameter names, shapes and initializers for a configuration, in a fixed
/// order shared by the optimizer and the checkpoint format.
fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let n = config.d_model;
    let mut out = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));
    match config.head {
        HeadKind::Classification { vocab, .. } => {
            for axis in 0..config.input_dim {
                push(format!("wte.{axis}"), vec![vocab, n], Init::Normal);
                if !config.tie_embeddings {
                    push(format!("head.{axis}"), vec![vocab, n], Init::Normal);
                }
            }
        }
        HeadKind::Regression => {
            push("w_in".into(), vec![config.input_dim, n], Init::Normal);
            push("b_in".into(), vec![n], Init::Zeros);
        }
    }
    push("wpe".into(), vec![config.context_len, n], Init::Normal);
    for l in 0..config.n_layer {
        push(format!("h{l}.ln1.g"), vec![n], Init::Ones);
        push(format!("h{l}.ln1.b"), vec![n], Init::Zeros);
        for p in ["q", "k", "v"] {
            push(format!("h{l}.attn.w{p}"), vec![n, n], Init::Normal);
            push(format!("h{l}.attn.b{p}"), vec![n], Init::Zeros);
        }
        push(format!("h{l}.attn.wo"), vec![n, n], Init::ResidualProjection);
        push(format!("h{l}.attn.bo"), vec![n], Init::Zeros);
        push(format!("h{l}.ln2.g"), vec![n], Init::Ones);
        push(format!("h{l}.ln2.b"), vec![n], Init::Zeros);
        push(format!("h{l}.mlp.w_fc"), vec![n, config.mlp_width()], Init::Normal);
        push(format!("h{l}.mlp.b_fc"), vec![config.mlp_width()], Init::Zeros);
        push(format!("h{l}.mlp.w_proj"), vec![config.mlp_width(), n], Init::ResidualProjection);
        push(format!("h{l}.mlp.b_proj"), vec![n], Init::Zeros);
    }
    push("ln_f.g".into(), vec![n], Init::Ones);
    push("ln_f.b".into(), vec![n], Init::Zeros);
    if config.head == HeadKind::Regression {
        push("w_out".into(), vec![n, config.input_dim], Init::Normal);
        push("b_out".into(), vec![config.input_dim], Init::Zeros);
    }
    out
}

/// Named parameter tensors of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Weights<T> {
    /// Gaussian(0, 0.02) weights, zero biases, unit layer-norm gains; residual
    /// output projections scaled by `1/sqrt(2 n_layer)`.
    pub fn init<R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let resid_scale = 1.0 / ((2 * config.n_layer) as f64).sqrt();
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in layout(config) {
            let len: usize = shape.iter().product();
            let data: Vec<T> = match init {
                Init::Normal => (0..len).map(|_| T::from_f64_lossy(normal.sample(rng))).collect(),
                Init::ResidualProjection => (0..len)
                    .map(|_| T::from_f64_lossy(normal.sample(rng) * resid_scale))
                    .collect(),
                Init::Zeros => vec![T::zero(); len],
                Init::Ones => vec![T::one(); len],
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(Weights { names, tensors })
    }

    /// All parameters zero (layer-norm gains included).
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let (names, tensors) = layout(config)
            .into_iter()
            .map(|(name, shape, _)| (name, Tensor::zeros(&shape)))
            .unzip();
        Ok(Weights { names, tensors })
    }

    /// Builds from named tensors, checking them against `config`'s layout.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self, ModelError> {
        let expected = layout(config);
        if expected.len() != named.len() {
            return Err(ModelError::WeightsMismatch(format!(
                "expected {} tensors, got {}",
                expected.len(),
                named.len()
            )));
        }
        for ((en, es, _), (n, t)) in expected.iter().zip(&named) {
            if en != n || es.as_slice() != t.shape() {
                return Err(ModelError::WeightsMismatch(format!(
                    "expected {en} {es:?}, got {n} {:?}",
                    t.shape()
                )));
            }
            if !t.all_finite() {
                return Err(ModelError::WeightsMismatch(format!("{n} has non-finite values")));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Weights { names, tensors })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>, ModelError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| ModelError::WeightsMismatch(format!("missing tensor {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Weights<U> {
        Weights {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn init_is_seeded_and_shaped() {
        let cfg = ModelConfig::classification(2, 50, 4.0, 16, 8);
        let a: Weights<f32> = Weights::init(&cfg, &mut stream(1, Stream::Init)).unwrap();
        let b: Weights<f32> = Weights::init(&cfg, &mut stream(1, Stream::Init)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.get("wte.1").unwrap().shape(), &[50, 16]);
        assert_eq!(a.get("h1.mlp.w_fc").unwrap().shape(), &[16, 64]);
        assert!(a.get("h0.attn.bq").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(a.get("ln_f.g").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(a.get("head.0").is_err());
    }

    #[test]
    fn residual_projection_is_scaled_down() {
        let cfg = ModelConfig::regression(2, 64, 4);
        let w: Weights<f64> = Weights::init(&cfg, &mut stream(3, Stream::Init)).unwrap();
        let std = |t: &Tensor<f64>| (t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64).sqrt();
        let fc = std(w.get("h0.mlp.w_fc").unwrap());
        let proj = std(w.get("h0.mlp.w_proj").unwrap());
        assert!((fc - 0.02).abs() < 0.002);
        assert!((proj - 0.01).abs() < 0.001);
    }

    #[test]
    fn from_named_checks_layout() {
        let cfg = ModelConfig::regression(1, 8, 4);
        let w: Weights<f32> = Weights::zeros(&cfg).unwrap();
        let mut named: Vec<_> = w.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        assert!(Weights::from_named(&cfg, named.clone()).is_ok());
        named[0].1 = Tensor::zeros(&[2, 8]);
        assert!(Weights::from_named(&cfg, named).is_err());
    }
}
