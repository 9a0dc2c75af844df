use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Variant};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Indices of one MLP's tensors inside [`CnpParams::tensors`].
///
/// The first layer keeps one weight block per input block so that inputs
/// shared by every row (the representation, the latent sample) are multiplied
/// once instead of once per target.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpLayout {
    pub first_weights: Vec<usize>,
    pub first_bias: usize,
    /// `(weight, bias)` for every later layer.
    pub rest: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub encoder: MlpLayout,
    pub decoder: MlpLayout,
    /// Representation used when the context set is empty.
    pub empty_repr: usize,
    pub latent: Option<LatentLayout>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentLayout {
    pub network: MlpLayout,
    /// Pre-split latent statistics used when the conditioning set is empty.
    pub empty_stats: usize,
}

/// Name and shape of every tensor, in declaration order.
pub type ShapeTable = Vec<(String, Vec<usize>)>;

struct Builder {
    table: ShapeTable,
    // Glorot bound per tensor; zero means zero-initialized.
    init_bounds: Vec<f64>,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        self.push_init(name, shape, 0.0)
    }

    fn push_init(&mut self, name: String, shape: Vec<usize>, bound: f64) -> usize {
        self.table.push((name, shape));
        self.init_bounds.push(bound);
        self.table.len() - 1
    }

    fn glorot(fan_in: usize, fan_out: usize) -> f64 {
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }

    fn mlp(&mut self, prefix: &str, blocks: &[(&str, usize)], hidden: usize, out: usize, layers: usize) -> MlpLayout {
        let width = |layer: usize| if layer + 1 == layers { out } else { hidden };
        let first_out = width(0);
        let total_in: usize = blocks.iter().map(|(_, f)| f).sum();
        let first_bound = Self::glorot(total_in, first_out);
        let first_weights = blocks
            .iter()
            .map(|(block, fan_in)| {
                let name = if blocks.len() == 1 {
                    format!("{prefix}.0.w")
                } else {
                    format!("{prefix}.0.w_{block}")
                };
                self.push_init(name, vec![*fan_in, first_out], first_bound)
            })
            .collect();
        let first_bias = self.push(format!("{prefix}.0.b"), vec![first_out]);
        let rest = (1..layers)
            .map(|l| {
                let (fan_in, fan_out) = (width(l - 1), width(l));
                let bound = Self::glorot(fan_in, fan_out);
                let w = self.push_init(format!("{prefix}.{l}.w"), vec![fan_in, fan_out], bound);
                let b = self.push(format!("{prefix}.{l}.b"), vec![width(l)]);
                (w, b)
            })
            .collect();
        MlpLayout {
            first_weights,
            first_bias,
            rest,
        }
    }
}

/// Derives the tensor layout implied by a model configuration.
pub fn layout(config: &ModelConfig) -> (Layout, ShapeTable) {
    let (layout, table, _) = build_layout(config);
    (layout, table)
}

fn build_layout(config: &ModelConfig) -> (Layout, ShapeTable, Vec<f64>) {
    let mut b = Builder {
        table: Vec::new(),
        init_bounds: Vec::new(),
    };
    let d = config.repr_dim;
    let encoder = b.mlp(
        "encoder",
        &[("xy", config.x_dim + config.y_dim)],
        config.hidden,
        d,
        config.encoder_layers,
    );
    let mut blocks = vec![("x", config.x_dim), ("r", config.decoder_repr_width())];
    if let Variant::Latent { z_dim } = config.variant {
        blocks.push(("z", z_dim));
    }
    let decoder = b.mlp(
        "decoder",
        &blocks,
        config.hidden,
        config.head_width(),
        config.decoder_layers,
    );
    let empty_repr = b.push("empty_repr".into(), vec![d]);
    let latent = config.z_dim().map(|z_dim| {
        let network = b.mlp(
            "latent",
            &[("xy", config.x_dim + config.y_dim)],
            config.hidden,
            2 * z_dim,
            config.latent_layers,
        );
        let empty_stats = b.push("latent_empty".into(), vec![2 * z_dim]);
        LatentLayout { network, empty_stats }
    });
    (
        Layout {
            encoder,
            decoder,
            empty_repr,
            latent,
        },
        b.table,
        b.init_bounds,
    )
}

/// Every trainable weight of a conditional neural process.
#[derive(Clone, Debug, PartialEq)]
pub struct CnpParams {
    config: ModelConfig,
    layout: Layout,
    names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl CnpParams {
    /// Glorot-uniform weights, zero biases and zero empty-context vectors.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, table, bounds) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = table
            .iter()
            .zip(&bounds)
            .map(|((_, shape), &bound)| {
                if bound > 0.0 {
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                    Tensor::new(shape.clone(), data).expect("shape table")
                } else {
                    Tensor::zeros(shape)
                }
            })
            .collect();
        let names = table.into_iter().map(|(n, _)| n).collect();
        Ok(Self {
            config,
            layout,
            names,
            tensors,
        })
    }

    /// Wraps explicit tensors after checking them against the config's layout.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let (layout, table) = layout(&config);
        if table.len() != tensors.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                table.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in table.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::invalid(format!(
                    "parameter {name} has shape {:?}, layout expects {shape:?}",
                    t.shape()
                )));
            }
        }
        let names = table.into_iter().map(|(n, _)| n).collect();
        Ok(Self {
            config,
            layout,
            names,
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shape_table(&self) -> ShapeTable {
        self.names
            .iter()
            .cloned()
            .zip(self.tensors.iter().map(|t| t.shape().to_vec()))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every tensor on `graph`, trainable or constant.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Bound {
        let nodes = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect();
        Bound { nodes }
    }

    /// All parameters concatenated in declaration order.
    pub fn flatten(&self) -> Tensor {
        let data = self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect();
        Tensor::vector(data)
    }

    /// Binds parameters as slices of a single flat node (see [`CnpParams::flatten`]).
    pub fn bind_flat(&self, graph: &mut Graph, flat: NodeId) -> Result<Bound> {
        let mut offset = 0;
        let mut nodes = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let piece = graph.slice(flat, offset, offset + t.len())?;
            nodes.push(graph.reshape(piece, t.shape())?);
            offset += t.len();
        }
        Ok(Bound { nodes })
    }

    /// Sets every tensor to zero (useful for analytic checks).
    pub fn zeroed(mut self) -> Self {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        self
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }
}

/// Graph nodes of a bound parameter set, indexed like [`CnpParams::tensors`].
#[derive(Clone, Debug)]
pub struct Bound {
    pub nodes: Vec<NodeId>,
}

impl Bound {
    pub fn node(&self, index: usize) -> NodeId {
        self.nodes[index]
    }
}
