use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Activation;

/// Element-wise operation used to fold an embedding-derived vector into
/// the activations it conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    /// `x + f(e)`
    Shift,
    /// `x ⊙ f(e)`
    Scale,
    /// `x ⊙ s(e) + b(e)`; control network only.
    ShiftScale,
}

impl Transform {
    pub fn name(self) -> &'static str {
        match self {
            Transform::Shift => "shift",
            Transform::Scale => "scale",
            Transform::ShiftScale => "shift-scale",
        }
    }
}

impl FromStr for Transform {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shift" => Ok(Transform::Shift),
            "scale" => Ok(Transform::Scale),
            "shift-scale" | "shift_scale" => Ok(Transform::ShiftScale),
            other => Err(Error::UnknownKind(other.into())),
        }
    }
}

/// How an embedding is mapped onto the activations at a site.
#[derive(Debug, Clone, PartialEq)]
pub enum Mechanism {
    /// Two shared ReLU layers feeding per-site sigmoid scale and tanh bias heads.
    ControlNetwork {
        shared_units: usize,
        use_skip: bool,
        transform: Transform,
    },
    /// `act(W_eᵀ e + b_e)` used as a shift or a scale.
    ControlLayer {
        activation: Activation,
        transform: Transform,
    },
    /// `x + sigmoid(w_e) ⊙ e`
    ControlVector,
    /// `x + w_e · e` with a single learned scalar.
    ControlVariable,
    /// `x + c · e` with a fixed `c`.
    ConstantScale { c: f64 },
    /// `[x | e]` at the input.
    Concatenate,
}

impl Mechanism {
    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::ControlNetwork { .. } => "ctrl-network",
            Mechanism::ControlLayer { .. } => "ctrl-layer",
            Mechanism::ControlVector => "ctrl-vector",
            Mechanism::ControlVariable => "ctrl-variable",
            Mechanism::ConstantScale { .. } => "ctrl-scale",
            Mechanism::Concatenate => "concat",
        }
    }

    /// Whether the mechanism needs the embedding width to equal the site width.
    pub fn needs_matching_dims(&self) -> bool {
        matches!(
            self,
            Mechanism::ControlVector | Mechanism::ControlVariable | Mechanism::ConstantScale { .. }
        )
    }
}

/// Where conditioning is applied. Site `0` is the input features, site `l`
/// (for `l ≥ 1`) is the output of hidden layer `l - 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SiteSelection {
    InputOnly,
    AllHidden,
    Layers(Vec<usize>),
}

impl SiteSelection {
    /// Resolves the selection against a network with `num_layers` dense layers.
    pub fn resolve(&self, num_layers: usize) -> Result<Vec<usize>> {
        let sites: Vec<usize> = match self {
            SiteSelection::InputOnly => alloc::vec![0],
            SiteSelection::AllHidden => (1..num_layers).collect(),
            SiteSelection::Layers(v) => {
                let mut v = v.clone();
                v.sort_unstable();
                v.dedup();
                v
            }
        };
        if sites.is_empty() {
            return Err(Error::InvalidConfig("no conditioning site selected".into()));
        }
        if let Some(&bad) = sites.iter().find(|&&s| s >= num_layers) {
            return Err(Error::InvalidConfig(alloc::format!(
                "site {bad} out of range for {num_layers} layers"
            )));
        }
        Ok(sites)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningSpec {
    pub mechanism: Mechanism,
    pub sites: SiteSelection,
}

impl ConditioningSpec {
    pub fn new(mechanism: Mechanism, sites: SiteSelection) -> Self {
        ConditioningSpec { mechanism, sites }
    }

    /// Checks the mechanism against the embedding width and the widths of
    /// every site of the network (`site_dims[l]` for site `l`).
    pub fn validate(&self, embed_dim: usize, site_dims: &[usize]) -> Result<Vec<usize>> {
        let sites = self.sites.resolve(site_dims.len())?;
        if embed_dim == 0 {
            return Err(Error::InvalidConfig("embedding dimension is zero".into()));
        }
        match &self.mechanism {
            Mechanism::ControlLayer { transform, .. } if *transform == Transform::ShiftScale => {
                return Err(Error::InvalidConfig("a control layer either shifts or scales".into()));
            }
            Mechanism::ControlNetwork { shared_units: 0, .. } => {
                return Err(Error::InvalidConfig("control network needs shared units".into()));
            }
            Mechanism::Concatenate if sites != [0] => {
                return Err(Error::InvalidConfig(
                    "concatenation is only defined at the input".into(),
                ));
            }
            m if m.needs_matching_dims() => {
                for &s in &sites {
                    if site_dims[s] != embed_dim {
                        return Err(Error::Shape {
                            context: "embedding width at conditioning site",
                            expected: site_dims[s],
                            found: embed_dim,
                        });
                    }
                }
            }
            _ => {}
        }
        Ok(sites)
    }
}

impl fmt::Display for ConditioningSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mechanism.name())?;
        match &self.mechanism {
            Mechanism::ControlNetwork {
                shared_units,
                use_skip,
                transform,
            } => write!(
                f,
                "[{},{}u{}]",
                transform.name(),
                shared_units,
                if *use_skip { ",skip" } else { "" }
            )?,
            Mechanism::ControlLayer { activation, transform } => write!(f, "[{},{}]", transform.name(), activation)?,
            Mechanism::ConstantScale { c } => write!(f, "[{c}]")?,
            _ => {}
        }
        match &self.sites {
            SiteSelection::InputOnly => f.write_str("@input"),
            SiteSelection::AllHidden => f.write_str("@hidden"),
            SiteSelection::Layers(v) => {
                f.write_str("@layers")?;
                for s in v {
                    write!(f, ":{s}")?;
                }
                Ok(())
            }
        }
    }
}

/// Granularity at which an embedding was extracted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingLevel {
    Frame,
    Utterance,
    Speaker,
}

impl EmbeddingLevel {
    pub fn name(self) -> &'static str {
        match self {
            EmbeddingLevel::Frame => "frame",
            EmbeddingLevel::Utterance => "utterance",
            EmbeddingLevel::Speaker => "speaker",
        }
    }
}

/// An embedding attached to one utterance: a single vector for utterance or
/// speaker level, one row per frame for frame level.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vectors: Matrix<f32>,
    pub level: EmbeddingLevel,
    pub kind: String,
}

impl Embedding {
    pub fn utterance(v: &[f32], kind: impl Into<String>) -> Self {
        Embedding {
            vectors: Matrix::row_vector(v),
            level: EmbeddingLevel::Utterance,
            kind: kind.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    /// Rows aligned with `frames` feature rows.
    pub fn rows_for(&self, frames: usize) -> Result<Matrix<f32>> {
        match self.level {
            EmbeddingLevel::Frame => {
                if self.vectors.rows() != frames {
                    return Err(Error::Shape {
                        context: "frame-level embedding rows",
                        expected: frames,
                        found: self.vectors.rows(),
                    });
                }
                Ok(self.vectors.clone())
            }
            _ => Ok(self.vectors.broadcast_rows(frames)),
        }
    }

    /// The utterance-level summary: the vector itself, or the last frame's
    /// running estimate for frame-level embeddings.
    pub fn summary(&self) -> &[f32] {
        self.vectors.row(self.vectors.rows() - 1)
    }
}

/// Widths needed to count conditioning parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningDims {
    pub embed_dim: usize,
    /// Width of every site of the network, indexed by site.
    pub site_dims: Vec<usize>,
    /// Output width of the first dense layer (for concatenation).
    pub first_layer_units: usize,
}

/// Exact number of trainable parameters introduced by the conditioning
/// mechanism alone.
pub fn count_conditioning_params(spec: &ConditioningSpec, dims: &ConditioningDims) -> Result<usize> {
    let sites = spec.validate(dims.embed_dim, &dims.site_dims)?;
    let d = dims.embed_dim;
    let count = match &spec.mechanism {
        Mechanism::ControlNetwork {
            shared_units: u,
            transform,
            ..
        } => {
            let heads = if *transform == Transform::ShiftScale { 2 } else { 1 };
            let trunk = d * u + u + u * u + u;
            trunk
                + sites
                    .iter()
                    .map(|&s| heads * (u * dims.site_dims[s] + dims.site_dims[s]))
                    .sum::<usize>()
        }
        Mechanism::ControlLayer { .. } => sites.iter().map(|&s| d * dims.site_dims[s] + dims.site_dims[s]).sum(),
        Mechanism::ControlVector => sites.iter().map(|&s| dims.site_dims[s]).sum(),
        Mechanism::ControlVariable => sites.len(),
        Mechanism::ConstantScale { .. } => 0,
        Mechanism::Concatenate => d * dims.first_layer_units,
    };
    Ok(count)
}
