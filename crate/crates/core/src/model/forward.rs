use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::config::{HeadKind, ModelConfig};
use super::weights::Weights;
use super::ModelError;
use crate::numerics::{Scalar, Tape, Tensor, Var};

/// Named activation site inside one block, or around the block stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SiteKind {
    /// Token (or projected state) embedding plus position embedding.
    Embedding,
    AttnIn,
    AttnOutPreResidual,
    AttnOutPostResidual,
    MlpIn,
    /// GELU output, width `4N`.
    MlpHidden,
    MlpOutPreResidual,
    MlpOutPostResidual,
    FinalNorm,
}

impl SiteKind {
    pub const BLOCK: [SiteKind; 7] = [
        SiteKind::AttnIn,
        SiteKind::AttnOutPreResidual,
        SiteKind::AttnOutPostResidual,
        SiteKind::MlpIn,
        SiteKind::MlpHidden,
        SiteKind::MlpOutPreResidual,
        SiteKind::MlpOutPostResidual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SiteKind::Embedding => "embedding",
            SiteKind::AttnIn => "attn_in",
            SiteKind::AttnOutPreResidual => "attn_out_pre_residual",
            SiteKind::AttnOutPostResidual => "attn_out_post_residual",
            SiteKind::MlpIn => "mlp_in",
            SiteKind::MlpHidden => "mlp_hidden",
            SiteKind::MlpOutPreResidual => "mlp_out_pre_residual",
            SiteKind::MlpOutPostResidual => "mlp_out_post_residual",
            SiteKind::FinalNorm => "final_norm",
        }
    }

    fn rank(self) -> usize {
        match self {
            SiteKind::Embedding => 0,
            SiteKind::FinalNorm => 8,
            other => 1 + SiteKind::BLOCK.iter().position(|&k| k == other).unwrap(),
        }
    }
}

/// A captured activation: block sites carry their layer index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Site {
    pub layer: Option<usize>,
    pub kind: SiteKind,
}

impl Site {
    pub fn embedding() -> Site {
        Site {
            layer: None,
            kind: SiteKind::Embedding,
        }
    }

    pub fn final_norm() -> Site {
        Site {
            layer: None,
            kind: SiteKind::FinalNorm,
        }
    }

    pub fn block(layer: usize, kind: SiteKind) -> Site {
        Site {
            layer: Some(layer),
            kind,
        }
    }

    /// Every site of an `n_layer` model in forward order.
    pub fn all(n_layer: usize) -> Vec<Site> {
        let mut out = vec![Site::embedding()];
        for l in 0..n_layer {
            out.extend(SiteKind::BLOCK.iter().map(|&k| Site::block(l, k)));
        }
        out.push(Site::final_norm());
        out
    }

    fn order_key(&self) -> (usize, usize) {
        match (self.kind, self.layer) {
            (SiteKind::Embedding, _) => (0, 0),
            (SiteKind::FinalNorm, _) => (usize::MAX, 0),
            (k, l) => (1 + l.unwrap_or(0), k.rank()),
        }
    }
}

impl PartialOrd for Site {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Site {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.order_key().cmp(&other.order_key())
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.layer {
            Some(l) => write!(f, "h{l}.{}", self.kind.name()),
            None => f.write_str(self.kind.name()),
        }
    }
}

impl FromStr for Site {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let find = |name: &str| {
            SiteKind::BLOCK
                .iter()
                .chain(&[SiteKind::Embedding, SiteKind::FinalNorm])
                .copied()
                .find(|k| k.name() == name)
                .ok_or_else(|| format!("unknown site '{s}'"))
        };
        match s.strip_prefix('h').and_then(|r| r.split_once('.')) {
            Some((l, name)) => {
                let layer = l.parse().map_err(|_| format!("bad layer in site '{s}'"))?;
                Ok(Site::block(layer, find(name)?))
            }
            None => {
                let kind = find(s)?;
                if SiteKind::BLOCK.contains(&kind) {
                    return Err(format!("site '{s}' needs a layer prefix"));
                }
                Ok(Site { layer: None, kind })
            }
        }
    }
}

/// Model input laid out as `[batch, seq, input_dim]`, row-major.
#[derive(Clone, Copy, Debug)]
pub enum Input<'a, T> {
    Tokens(&'a [usize]),
    States(&'a [T]),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelOutput<T> {
    /// One `[batch, seq, V]` tensor per axis.
    Logits(Vec<Tensor<T>>),
    /// `[batch, seq, input_dim]`.
    States(Tensor<T>),
}

/// Activations at every site, each `[batch·seq, width]` with row `b·seq + i`
/// holding position `i` of sequence `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace<T> {
    pub batch: usize,
    pub seq: usize,
    pub sites: BTreeMap<Site, Tensor<T>>,
}

impl<T: Scalar> ActivationTrace<T> {
    pub fn get(&self, site: &Site) -> Option<&Tensor<T>> {
        self.sites.get(site)
    }

    pub fn row(&self, site: &Site, b: usize, pos: usize) -> Option<&[T]> {
        let t = self.sites.get(site)?;
        let w = t.cols();
        let r = b * self.seq + pos;
        t.data().get(r * w..(r + 1) * w)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}

/// Handles to one forward pass recorded on a tape.
pub struct Graph {
    /// Classification: one `[batch·seq, V]` logit node per axis.
    /// Regression: a single `[batch·seq, input_dim]` node.
    pub outputs: Vec<Var>,
    pub sites: Vec<(Site, Var)>,
    /// Parameter leaves in `Weights` order.
    pub params: Vec<Var>,
}

fn check_input<T: Scalar>(
    config: &ModelConfig,
    input: &Input<'_, T>,
    batch: usize,
    seq: usize,
) -> Result<(), ModelError> {
    if batch == 0 || seq == 0 {
        return Err(ModelError::InputShape(format!("empty batch {batch}x{seq}")));
    }
    if seq > config.context_len {
        return Err(ModelError::SequenceTooLong {
            len: seq,
            max: config.context_len,
        });
    }
    let expected = batch * seq * config.input_dim;
    match (config.head, input) {
        (HeadKind::Classification { vocab, .. }, Input::Tokens(t)) => {
            if t.len() != expected {
                return Err(ModelError::InputShape(format!("{} tokens, expected {expected}", t.len())));
            }
            if let Some(&token) = t.iter().find(|&&k| k >= vocab) {
                return Err(ModelError::TokenOutOfRange { token, vocab });
            }
        }
        (HeadKind::Regression, Input::States(s)) => {
            if s.len() != expected {
                return Err(ModelError::InputShape(format!("{} values, expected {expected}", s.len())));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteInput);
            }
        }
        _ => return Err(ModelError::InputShape("input kind does not match head".into())),
    }
    Ok(())
}

/// Records the forward pass on `tape`. With `trainable`, weights enter as
/// gradient-tracked leaves.
pub fn build_graph<T: Scalar>(
    tape: &mut Tape<T>,
    config: &ModelConfig,
    weights: &Weights<T>,
    input: Input<'_, T>,
    batch: usize,
    seq: usize,
    trainable: bool,
) -> Result<Graph, ModelError> {
    config.validate()?;
    check_input(config, &input, batch, seq)?;

    let mut params = Vec::with_capacity(weights.names().len());
    for t in weights.tensors() {
        let t = t.clone();
        params.push(if trainable { tape.param(t)? } else { tape.constant(t)? });
    }
    let names = weights.names();
    let p = |name: &str| -> Result<Var, ModelError> {
        names
            .iter()
            .position(|n| n == name)
            .map(|i| params[i])
            .ok_or_else(|| ModelError::WeightsMismatch(format!("missing tensor {name}")))
    };

    let rows = batch * seq;
    let dim = config.input_dim;
    let n = config.d_model;
    let mut sites = Vec::new();

    let tok = match input {
        Input::Tokens(tokens) => {
            let mut acc: Option<Var> = None;
            for axis in 0..dim {
                let idx: Vec<usize> = tokens.iter().skip(axis).step_by(dim).copied().collect();
                let e = tape.embedding(p(&format!("wte.{axis}"))?, &idx)?;
                acc = Some(match acc {
                    Some(a) => tape.add(a, e)?,
                    None => e,
                });
            }
            acc.expect("input_dim >= 1")
        }
        Input::States(states) => {
            let x = tape.constant(Tensor::new(vec![rows, dim], states.to_vec())?)?;
            let proj = tape.linear(x, p("w_in")?)?;
            tape.add(proj, p("b_in")?)?
        }
    };
    let positions: Vec<usize> = (0..batch).flat_map(|_| 0..seq).collect();
    let pos = tape.embedding(p("wpe")?, &positions)?;
    let mut h = tape.add(tok, pos)?;
    sites.push((Site::embedding(), h));

    let nh = config.n_head;
    let hd = config.head_dim();
    let att_scale = 1.0 / (hd as f64).sqrt();
    let split = |tape: &mut Tape<T>, v: Var| -> Result<Var, ModelError> {
        if nh == 1 {
            return Ok(tape.reshape(v, &[batch, seq, n])?);
        }
        let v = tape.reshape(v, &[batch, seq, nh, hd])?;
        let v = tape.permute(v, &[0, 2, 1, 3])?;
        Ok(tape.reshape(v, &[batch * nh, seq, hd])?)
    };

    for l in 0..config.n_layer {
        let w = |s: &str| p(&format!("h{l}.{s}"));
        let a_in = tape.layer_norm(h, w("ln1.g")?, w("ln1.b")?)?;
        sites.push((Site::block(l, SiteKind::AttnIn), a_in));

        let mut qkv = [a_in; 3];
        for (slot, name) in qkv.iter_mut().zip(["q", "k", "v"]) {
            let lin = tape.linear(a_in, w(&format!("attn.w{name}"))?)?;
            let lin = tape.add(lin, w(&format!("attn.b{name}"))?)?;
            *slot = split(tape, lin)?;
        }
        let [q, k, v] = qkv;
        let scores = tape.bmm(q, k, false, true)?;
        let scores = tape.scale(scores, att_scale)?;
        let att = tape.softmax(scores, true)?;
        let y = tape.bmm(att, v, false, false)?;
        let y = if nh == 1 {
            tape.reshape(y, &[rows, n])?
        } else {
            let y = tape.reshape(y, &[batch, nh, seq, hd])?;
            let y = tape.permute(y, &[0, 2, 1, 3])?;
            tape.reshape(y, &[rows, n])?
        };
        let a_out = tape.linear(y, w("attn.wo")?)?;
        let a_out = tape.add(a_out, w("attn.bo")?)?;
        sites.push((Site::block(l, SiteKind::AttnOutPreResidual), a_out));
        h = tape.add(h, a_out)?;
        sites.push((Site::block(l, SiteKind::AttnOutPostResidual), h));

        let m_in = tape.layer_norm(h, w("ln2.g")?, w("ln2.b")?)?;
        sites.push((Site::block(l, SiteKind::MlpIn), m_in));
        let hid = tape.linear(m_in, w("mlp.w_fc")?)?;
        let hid = tape.add(hid, w("mlp.b_fc")?)?;
        let hid = tape.gelu(hid)?;
        sites.push((Site::block(l, SiteKind::MlpHidden), hid));
        let m_out = tape.linear(hid, w("mlp.w_proj")?)?;
        let m_out = tape.add(m_out, w("mlp.b_proj")?)?;
        sites.push((Site::block(l, SiteKind::MlpOutPreResidual), m_out));
        h = tape.add(h, m_out)?;
        sites.push((Site::block(l, SiteKind::MlpOutPostResidual), h));
    }

    let fin = tape.layer_norm(h, p("ln_f.g")?, p("ln_f.b")?)?;
    sites.push((Site::final_norm(), fin));

    let outputs = match config.head {
        HeadKind::Classification { .. } => (0..dim)
            .map(|axis| {
                let table = if config.tie_embeddings {
                    p(&format!("wte.{axis}"))?
                } else {
                    p(&format!("head.{axis}"))?
                };
                Ok(tape.linear_t(fin, table)?)
            })
            .collect::<Result<Vec<_>, ModelError>>()?,
        HeadKind::Regression => {
            let o = tape.linear(fin, p("w_out")?)?;
            vec![tape.add(o, p("b_out")?)?]
        }
    };
    Ok(Graph { outputs, sites, params })
}

fn collect_output<T: Scalar>(
    tape: &Tape<T>,
    config: &ModelConfig,
    graph: &Graph,
    batch: usize,
    seq: usize,
) -> Result<ModelOutput<T>, ModelError> {
    let grab = |v: Var| -> Result<Tensor<T>, ModelError> {
        let t = tape.value(v).clone();
        let cols = t.cols();
        Ok(t.with_grad(false).reshaped(vec![batch, seq, cols])?)
    };
    Ok(match config.head {
        HeadKind::Classification { .. } => {
            ModelOutput::Logits(graph.outputs.iter().map(|&v| grab(v)).collect::<Result<_, _>>()?)
        }
        HeadKind::Regression => ModelOutput::States(grab(graph.outputs[0])?),
    })
}

/// Per-axis next-token logits, each `[batch, seq, V]`, for tokens laid out
/// `[batch, seq, input_dim]`.
pub fn forward_classification<T: Scalar>(
    config: &ModelConfig,
    weights: &Weights<T>,
    tokens: &[usize],
    batch: usize,
    seq: usize,
) -> Result<Vec<Tensor<T>>, ModelError> {
    let mut tape = Tape::new();
    let g = build_graph(&mut tape, config, weights, Input::Tokens(tokens), batch, seq, false)?;
    match collect_output(&tape, config, &g, batch, seq)? {
        ModelOutput::Logits(l) => Ok(l),
        ModelOutput::States(_) => unreachable!("classification head"),
    }
}

/// Predicted next states `[batch, seq, input_dim]`.
pub fn forward_regression<T: Scalar>(
    config: &ModelConfig,
    weights: &Weights<T>,
    states: &[T],
    batch: usize,
    seq: usize,
) -> Result<Tensor<T>, ModelError> {
    let mut tape = Tape::new();
    let g = build_graph(&mut tape, config, weights, Input::States(states), batch, seq, false)?;
    match collect_output(&tape, config, &g, batch, seq)? {
        ModelOutput::States(s) => Ok(s),
        ModelOutput::Logits(_) => unreachable!("regression head"),
    }
}

pub fn forward_with_trace<T: Scalar>(
    config: &ModelConfig,
    weights: &Weights<T>,
    input: Input<'_, T>,
    batch: usize,
    seq: usize,
) -> Result<(ModelOutput<T>, ActivationTrace<T>), ModelError> {
    let mut tape = Tape::new();
    let g = build_graph(&mut tape, config, weights, input, batch, seq, false)?;
    let out = collect_output(&tape, config, &g, batch, seq)?;
    let sites = g
        .sites
        .iter()
        .map(|&(s, v)| (s, tape.value(v).clone().with_grad(false)))
        .collect();
    Ok((out, ActivationTrace { batch, seq, sites }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_gradient, max_relative_error, NumericsError};
    use crate::rng::{stream, Stream};
    use rand::Rng;

    fn cls_cfg() -> ModelConfig {
        ModelConfig::classification(2, 11, 4.0, 16, 6)
    }

    #[test]
    fn classification_shapes() {
        let cfg = cls_cfg();
        let w: Weights<f32> = Weights::init(&cfg, &mut stream(0, Stream::Init)).unwrap();
        let tokens: Vec<usize> = (0..2 * 5 * 2).map(|i| i % 11).collect();
        let out = forward_classification(&cfg, &w, &tokens, 2, 5).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].shape(), &[2, 5, 11]);
    }

    #[test]
    fn regression_shapes_and_errors() {
        let cfg = ModelConfig::regression(2, 8, 4);
        let w: Weights<f32> = Weights::init(&cfg, &mut stream(0, Stream::Init)).unwrap();
        let s = vec![0.5f32; 3 * 2];
        assert_eq!(forward_regression(&cfg, &w, &s, 1, 3).unwrap().shape(), &[1, 3, 2]);
        let long = vec![0.5f32; 5 * 2];
        assert_eq!(
            forward_regression(&cfg, &w, &long, 1, 5),
            Err(ModelError::SequenceTooLong { len: 5, max: 4 })
        );
        let bad = vec![f32::NAN; 2];
        assert_eq!(forward_regression(&cfg, &w, &bad, 1, 1), Err(ModelError::NonFiniteInput));
    }

    #[test]
    fn token_out_of_range() {
        let cfg = cls_cfg();
        let w: Weights<f32> = Weights::zeros(&cfg).unwrap();
        assert_eq!(
            forward_classification(&cfg, &w, &[0, 11], 1, 1),
            Err(ModelError::TokenOutOfRange { token: 11, vocab: 11 })
        );
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let cfg = cls_cfg();
        let w: Weights<f64> = Weights::zeros(&cfg).unwrap();
        let out = forward_classification(&cfg, &w, &[3, 4, 5, 6], 1, 2).unwrap();
        for t in &out {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn causal_for_both_heads() {
        let mut rng = stream(4, Stream::Eval);
        let cfg = cls_cfg();
        let w: Weights<f32> = Weights::init(&cfg, &mut stream(1, Stream::Init)).unwrap();
        let a: Vec<usize> = (0..12).map(|_| rng.random_range(0..11)).collect();
        let mut b = a.clone();
        for v in &mut b[8..] {
            *v = (*v + 3) % 11;
        }
        let oa = forward_classification(&cfg, &w, &a, 1, 6).unwrap();
        let ob = forward_classification(&cfg, &w, &b, 1, 6).unwrap();
        for (x, y) in oa.iter().zip(&ob) {
            assert_eq!(x.data()[..4 * 11], y.data()[..4 * 11]);
            assert_ne!(x.data()[4 * 11..], y.data()[4 * 11..]);
        }

        let mut cfg = ModelConfig::regression(2, 16, 6);
        cfg.n_head = 4;
        let w: Weights<f32> = Weights::init(&cfg, &mut stream(1, Stream::Init)).unwrap();
        let a: Vec<f32> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut b = a.clone();
        b[10] += 1.0;
        let oa = forward_regression(&cfg, &w, &a, 1, 6).unwrap();
        let ob = forward_regression(&cfg, &w, &b, 1, 6).unwrap();
        assert_eq!(oa.data()[..10], ob.data()[..10]);
        assert_ne!(oa.data()[10..], ob.data()[10..]);
    }

    #[test]
    fn batch_rows_are_independent() {
        let cfg = ModelConfig::regression(1, 8, 5);
        let w: Weights<f64> = Weights::init(&cfg, &mut stream(2, Stream::Init)).unwrap();
        let a = [0.1, 0.2, 0.3, 0.4];
        let b = [-0.5, 0.9, 0.0, 0.7];
        let joint: Vec<f64> = a.iter().chain(&b).copied().collect();
        let both = forward_regression(&cfg, &w, &joint, 2, 4).unwrap();
        let sa = forward_regression(&cfg, &w, &a, 1, 4).unwrap();
        let sb = forward_regression(&cfg, &w, &b, 1, 4).unwrap();
        for (x, y) in both.data().iter().zip(sa.data().iter().chain(sb.data())) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn trace_has_every_site_and_matches_plain_forward() {
        let cfg = cls_cfg();
        let w: Weights<f32> = Weights::init(&cfg, &mut stream(5, Stream::Init)).unwrap();
        let tokens: Vec<usize> = (0..3 * 4 * 2).map(|i| (i * 7) % 11).collect();
        let plain = forward_classification(&cfg, &w, &tokens, 3, 4).unwrap();
        let (out, trace) = forward_with_trace(&cfg, &w, Input::Tokens(&tokens), 3, 4).unwrap();
        assert_eq!(out, ModelOutput::Logits(plain));
        assert_eq!(trace.len(), 16);
        assert_eq!(trace.sites.keys().copied().collect::<Vec<_>>(), Site::all(2));
        for (site, t) in &trace.sites {
            assert_eq!(t.rows(), 12, "{site}");
            let width = if site.kind == SiteKind::MlpHidden { 64 } else { 16 };
            assert_eq!(t.cols(), width, "{site}");
        }
        assert_eq!(trace.row(&Site::embedding(), 2, 3).unwrap().len(), 16);
    }

    #[test]
    fn site_names_round_trip() {
        for s in Site::all(3) {
            assert_eq!(s.to_string().parse::<Site>().unwrap(), s);
        }
        assert_eq!(Site::block(1, SiteKind::MlpHidden).to_string(), "h1.mlp_hidden");
        assert!("attn_in".parse::<Site>().is_err());
    }

    fn gradcheck(cfg: &ModelConfig, input: Input<'_, f64>, batch: usize, seq: usize) {
        let w: Weights<f64> = Weights::init(cfg, &mut stream(9, Stream::Init)).unwrap();
        // Scale init up so every parameter influences the loss measurably.
        let tensors: Vec<Tensor<f64>> = w
            .tensors()
            .iter()
            .map(|t| {
                let mut t = t.clone();
                t.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = *v * 10.0 + 0.01 * (i % 7) as f64);
                t
            })
            .collect();
        let mut rng = stream(10, Stream::Eval);
        let probe: Vec<Vec<f64>> = (0..cfg.input_dim.max(1) + 1)
            .map(|_| (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let names: Vec<(String, Tensor<f64>)> = w.names().iter().cloned().zip(tensors.clone()).collect();
        let base = Weights::from_named(cfg, names).unwrap();

        let loss_of = |tape: &mut Tape<f64>, g: &Graph| -> Result<Var, NumericsError> {
            let mut total: Option<Var> = None;
            for (o, coeffs) in g.outputs.iter().zip(&probe) {
                let len = tape.value(*o).len();
                let shape = tape.shape(*o).to_vec();
                let c = tape.constant(Tensor::new(shape, coeffs[..len].to_vec())?)?;
                let m = tape.mul(*o, c)?;
                let m = tape.gelu(m)?;
                let s = tape.sum(m)?;
                total = Some(match total {
                    Some(t) => tape.add(t, s)?,
                    None => s,
                });
            }
            Ok(total.unwrap())
        };

        let mut tape = Tape::new();
        let g = build_graph(&mut tape, cfg, &base, input, batch, seq, true).unwrap();
        let loss = loss_of(&mut tape, &g).unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic: Vec<Tensor<f64>> = g.params.iter().map(|&v| grads.get(v)).collect();

        let numeric = finite_difference_gradient(
            |ps| {
                let named = w.names().iter().cloned().zip(ps.iter().cloned()).collect();
                let wt = Weights::from_named(cfg, named).unwrap();
                let mut tape = Tape::new();
                let g = build_graph(&mut tape, cfg, &wt, input, batch, seq, false).unwrap();
                let l = loss_of(&mut tape, &g)?;
                Ok(tape.value(l).item()?)
            },
            &tensors,
            1e-6,
        )
        .unwrap();
        let err = max_relative_error(&analytic, &numeric, 1e-3);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn two_layer_classification_gradients_match_finite_differences() {
        let mut cfg = ModelConfig::classification(2, 5, 1.0, 4, 3);
        cfg.tie_embeddings = false;
        let tokens = [0, 4, 2, 1, 3, 3, 1, 0, 4, 2, 2, 2];
        gradcheck(&cfg, Input::Tokens(&tokens), 2, 3);
        cfg.tie_embeddings = true;
        gradcheck(&cfg, Input::Tokens(&tokens), 2, 3);
    }

    #[test]
    fn two_layer_regression_gradients_match_finite_differences() {
        let mut cfg = ModelConfig::regression(2, 4, 3);
        cfg.n_head = 2;
        let states = [0.3, -0.2, 0.7, 0.1, -0.9, 0.4, 0.2, 0.2, -0.1, 0.5, 0.6, -0.3];
        gradcheck(&cfg, Input::States(&states), 2, 3);
    }
}
