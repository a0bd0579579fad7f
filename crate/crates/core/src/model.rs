//! Tabular MLP classifier: three ReLU + dropout hidden layers and a linear output layer,
//! followed by a row softmax.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::diffengine::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "east-mlp-v1";
pub const DEFAULT_HIDDEN: [usize; 3] = [512, 256, 128];

/// Rows per chunk when predicting outside of training.
const EVAL_CHUNK: usize = 4096;

/// One affine layer: `weight` is `[fan_in, fan_out]`, `bias` is `[1, fan_out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub input_dim: usize,
    pub classes: usize,
    pub hidden: [usize; 3],
    pub dropout: f64,
    pub seed: u64,
    pub layers: Vec<Layer>,
}

/// Graph handles of the parameters, in `[w1, b1, w2, b2, ...]` order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub nodes: Vec<NodeId>,
}

impl MlpParams {
    pub fn init(input_dim: usize, d: usize, dropout: f64, seed: u64) -> Result<Self> {
        Self::init_with_hidden(input_dim, d, DEFAULT_HIDDEN, dropout, seed)
    }

    pub fn init_with_hidden(input_dim: usize, d: usize, hidden: [usize; 3], dropout: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer widths {input_dim} -> {hidden:?}")));
        }
        if d < 2 {
            return Err(Error::TooFewClasses(d));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!("dropout {dropout} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [input_dim, hidden[0], hidden[1], hidden[2], d];
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (1.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
                Layer {
                    weight: Tensor::matrix(fan_in, fan_out, data).expect("layer shape"),
                    bias: Tensor::zeros(&[1, fan_out]),
                }
            })
            .collect();
        Ok(Self { input_dim, classes: d, hidden, dropout, seed, layers })
    }

    pub fn widths(&self) -> [usize; 5] {
        [self.input_dim, self.hidden[0], self.hidden[1], self.hidden[2], self.classes]
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.numel() + l.bias.numel()).sum()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(Tensor::all_finite)
    }

    /// Registers every parameter as a leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        BoundParams { nodes: self.tensors().map(|t| g.leaf(t.clone())).collect() }
    }

    /// Builds the forward pass on `g` and returns the `[n, d]` probability node.
    /// With `rng` present, inverted dropout masks are sampled from it.
    pub fn forward_graph(&self, g: &mut Graph, bound: &BoundParams, x: NodeId, mut rng: Option<&mut ChaCha8Rng>) -> Result<NodeId> {
        let (_, width) = g.value(x).dims2("mlp-forward")?;
        if width != self.input_dim {
            return Err(Error::ShapeMismatch { op: "mlp-forward", lhs: vec![width], rhs: vec![self.input_dim] });
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, pair) in bound.nodes.chunks(2).enumerate() {
            h = g.matmul(h, pair[0])?;
            h = g.add_row(h, pair[1])?;
            if i == last {
                break;
            }
            h = g.relu(h);
            if let Some(rng) = rng.as_deref_mut() {
                if self.dropout > 0.0 {
                    let mask = dropout_mask(g.value(h).shape().to_vec(), self.dropout, rng);
                    h = g.dropout(h, mask)?;
                }
            }
        }
        g.softmax(h)
    }

    /// Forward pass with training-mode dropout when `rng` is given, returning probabilities.
    pub fn forward(&self, x: &Tensor, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = BoundParams { nodes: self.tensors().map(|t| g.constant(t.clone())).collect() };
        let xn = g.constant(x.clone());
        let p = self.forward_graph(&mut g, &bound, xn, rng)?;
        Ok(g.value(p).clone())
    }

    /// Eval-mode probabilities for a `[n, input_dim]` batch, computed in bounded-memory chunks.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        let (n, width) = x.dims2("mlp-forward")?;
        if width != self.input_dim {
            return Err(Error::ShapeMismatch { op: "mlp-forward", lhs: vec![width], rhs: vec![self.input_dim] });
        }
        let mut out = Vec::with_capacity(n);
        for chunk in x.data().chunks(EVAL_CHUNK * width) {
            let rows = chunk.len() / width;
            let p = self.forward(&Tensor::matrix(rows, width, chunk.to_vec())?, None)?;
            out.extend(p.data().chunks(self.classes).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// Writes a checkpoint without preprocessing statistics.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Checkpoint::new(self.clone(), None).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Checkpoint::load(path)?.params)
    }

    pub fn check(&self) -> Result<()> {
        let widths = self.widths();
        if self.layers.len() != 4 {
            return Err(Error::InvalidArgument(format!("expected 4 layers, found {}", self.layers.len())));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weight.shape() != [widths[i], widths[i + 1]] || l.bias.shape() != [1, widths[i + 1]] {
                return Err(Error::InvalidArgument(format!("layer {} has inconsistent shapes", i + 1)));
            }
        }
        if !self.all_finite() {
            return Err(Error::InvalidArgument("non-finite parameter in checkpoint".into()));
        }
        Ok(())
    }
}

/// Checkpoint document: parameters plus the input standardisation fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    #[serde(flatten)]
    pub params: MlpParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardizer: Option<Standardizer>,
}

impl Checkpoint {
    pub fn new(params: MlpParams, standardizer: Option<Standardizer>) -> Self {
        Self { version: CHECKPOINT_VERSION.to_string(), params, standardizer }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let doc: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        if doc.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported checkpoint version {:?}", doc.version)));
        }
        doc.params.check()?;
        if let Some(st) = &doc.standardizer {
            if st.mean.len() != doc.params.input_dim || st.std.len() != doc.params.input_dim {
                return Err(Error::InvalidArgument("standardizer width differs from model input".into()));
            }
        }
        Ok(doc)
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
fn dropout_mask(shape: Vec<usize>, rate: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let keep = 1.0 / (1.0 - rate);
    let n = shape.iter().product();
    let data = (0..n).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
    Tensor::new(shape, data).expect("mask shape")
}
