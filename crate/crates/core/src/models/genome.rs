//! Gene vectors for the two architectures.
//!
//! Every gene takes a value from a small finite domain. Genomes serialize as
//! JSON objects whose keys carry the gene ID (`g1_enc_layers`, ...), and are
//! validated against the domains on deserialization.

use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::autodiff::OptimizerKind;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid genome: {0}")]
pub struct GenomeError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "ReLU")]
    Relu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Cnn,
    Transformer,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Cnn => "cnn",
            Architecture::Transformer => "transformer",
        })
    }
}

impl std::str::FromStr for Architecture {
    type Err = GenomeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cnn" => Ok(Architecture::Cnn),
            "transformer" => Ok(Architecture::Transformer),
            other => Err(GenomeError(format!("unknown architecture {other:?}"))),
        }
    }
}

pub const LAYER_COUNTS: [usize; 3] = [2, 3, 4];
pub const CNN_DIMS: [usize; 4] = [32, 64, 128, 256];
pub const CNN_OUT_DIMS: [usize; 3] = [32, 64, 128];
pub const ACTIVATIONS: [Activation; 2] = [Activation::Relu, Activation::Linear];
pub const OPTIMIZERS: [OptimizerKind; 2] = [OptimizerKind::Adam, OptimizerKind::RmsProp];
pub const BATCH_SIZES: [usize; 5] = [32, 64, 128, 256, 512];
pub const EMBED_DIMS: [usize; 3] = [32, 64, 128];
pub const HEADS: [usize; 2] = [2, 4];
pub const DROPOUTS: [f64; 4] = [0.01, 0.05, 0.1, 0.15];
pub const FF_DIMS: [usize; 6] = [32, 64, 128, 256, 512, 1024];

/// Narrowest layer of the CNN output stack.
pub const OUT_STACK_FLOOR: usize = 32;

/// Common interface used by the evolution strategy: a genome is a vector of
/// indices into per-gene domains.
pub trait Genome: Clone + Eq + Hash + fmt::Debug + Send + Sync + Serialize + 'static {
    const ARCHITECTURE: Architecture;

    fn domain_sizes() -> &'static [usize];

    fn gene_indices(&self) -> Vec<usize>;

    /// Genome for a vector of domain indices; errors on out-of-range indices
    /// or cross-gene constraint violations.
    fn from_gene_indices(indices: &[usize]) -> Result<Self, GenomeError>;

    fn batch_size(&self) -> usize;

    fn into_any(self) -> AnyGenome;
}

fn position<T: PartialEq + fmt::Debug>(
    domain: &[T],
    value: &T,
    gene: &str,
) -> Result<usize, GenomeError> {
    domain
        .iter()
        .position(|v| v == value)
        .ok_or_else(|| GenomeError(format!("{gene} = {value:?} is outside {domain:?}")))
}

fn pick<T: Copy>(domain: &[T], idx: usize, gene: &str) -> Result<T, GenomeError> {
    domain.get(idx).copied().ok_or_else(|| {
        GenomeError(format!(
            "{gene}: index {idx} outside domain of {}",
            domain.len()
        ))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawCnnGenome")]
pub struct CnnGenome {
    pub g1_enc_layers: usize,
    pub g2_enc_dim: usize,
    pub g3_dec_layers: usize,
    pub g4_dec_dim: usize,
    pub g5_out_layers: usize,
    pub g6_out_dim: usize,
    pub g7_activation: Activation,
    pub g8_optimizer: OptimizerKind,
    pub g9_batch: usize,
}

#[derive(Deserialize)]
struct RawCnnGenome {
    g1_enc_layers: usize,
    g2_enc_dim: usize,
    g3_dec_layers: usize,
    g4_dec_dim: usize,
    g5_out_layers: usize,
    g6_out_dim: usize,
    g7_activation: Activation,
    g8_optimizer: OptimizerKind,
    g9_batch: usize,
}

impl TryFrom<RawCnnGenome> for CnnGenome {
    type Error = GenomeError;

    fn try_from(r: RawCnnGenome) -> Result<Self, Self::Error> {
        let g = CnnGenome {
            g1_enc_layers: r.g1_enc_layers,
            g2_enc_dim: r.g2_enc_dim,
            g3_dec_layers: r.g3_dec_layers,
            g4_dec_dim: r.g4_dec_dim,
            g5_out_layers: r.g5_out_layers,
            g6_out_dim: r.g6_out_dim,
            g7_activation: r.g7_activation,
            g8_optimizer: r.g8_optimizer,
            g9_batch: r.g9_batch,
        };
        g.validate()?;
        Ok(g)
    }
}

impl CnnGenome {
    pub fn validate(&self) -> Result<(), GenomeError> {
        self.indices().map(|_| ())
    }

    fn indices(&self) -> Result<Vec<usize>, GenomeError> {
        Ok(vec![
            position(&LAYER_COUNTS, &self.g1_enc_layers, "g1_enc_layers")?,
            position(&CNN_DIMS, &self.g2_enc_dim, "g2_enc_dim")?,
            position(&LAYER_COUNTS, &self.g3_dec_layers, "g3_dec_layers")?,
            position(&CNN_DIMS, &self.g4_dec_dim, "g4_dec_dim")?,
            position(&LAYER_COUNTS, &self.g5_out_layers, "g5_out_layers")?,
            position(&CNN_OUT_DIMS, &self.g6_out_dim, "g6_out_dim")?,
            position(&ACTIVATIONS, &self.g7_activation, "g7_activation")?,
            position(&OPTIMIZERS, &self.g8_optimizer, "g8_optimizer")?,
            position(&BATCH_SIZES, &self.g9_batch, "g9_batch")?,
        ])
    }

    /// Output-stack widths: start at G6 and halve per layer, never below 32.
    pub fn output_widths(&self) -> Vec<usize> {
        (0..self.g5_out_layers)
            .map(|i| (self.g6_out_dim >> i).max(OUT_STACK_FLOOR))
            .collect()
    }

    /// Widths joined the way they are usually written, e.g. `128/64/32`.
    pub fn output_pattern(&self) -> String {
        self.output_widths()
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("/")
    }
}

impl Genome for CnnGenome {
    const ARCHITECTURE: Architecture = Architecture::Cnn;

    fn domain_sizes() -> &'static [usize] {
        &[3, 4, 3, 4, 3, 3, 2, 2, 5]
    }

    fn gene_indices(&self) -> Vec<usize> {
        self.indices().expect("validated genome")
    }

    fn from_gene_indices(ix: &[usize]) -> Result<Self, GenomeError> {
        if ix.len() != 9 {
            return Err(GenomeError(format!(
                "CNN genome has 9 genes, got {}",
                ix.len()
            )));
        }
        Ok(CnnGenome {
            g1_enc_layers: pick(&LAYER_COUNTS, ix[0], "g1_enc_layers")?,
            g2_enc_dim: pick(&CNN_DIMS, ix[1], "g2_enc_dim")?,
            g3_dec_layers: pick(&LAYER_COUNTS, ix[2], "g3_dec_layers")?,
            g4_dec_dim: pick(&CNN_DIMS, ix[3], "g4_dec_dim")?,
            g5_out_layers: pick(&LAYER_COUNTS, ix[4], "g5_out_layers")?,
            g6_out_dim: pick(&CNN_OUT_DIMS, ix[5], "g6_out_dim")?,
            g7_activation: pick(&ACTIVATIONS, ix[6], "g7_activation")?,
            g8_optimizer: pick(&OPTIMIZERS, ix[7], "g8_optimizer")?,
            g9_batch: pick(&BATCH_SIZES, ix[8], "g9_batch")?,
        })
    }

    fn batch_size(&self) -> usize {
        self.g9_batch
    }

    fn into_any(self) -> AnyGenome {
        AnyGenome::Cnn(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTransformerGenome")]
pub struct TransformerGenome {
    pub g1_enc_layers: usize,
    pub g2_dec_layers: usize,
    pub g3_embed_dim: usize,
    pub g4_heads: usize,
    pub g5_dropout: f64,
    pub g6_ff_dim: usize,
    pub g7_batch: usize,
}

#[derive(Deserialize)]
struct RawTransformerGenome {
    g1_enc_layers: usize,
    g2_dec_layers: usize,
    g3_embed_dim: usize,
    g4_heads: usize,
    g5_dropout: f64,
    g6_ff_dim: usize,
    g7_batch: usize,
}

impl TryFrom<RawTransformerGenome> for TransformerGenome {
    type Error = GenomeError;

    fn try_from(r: RawTransformerGenome) -> Result<Self, Self::Error> {
        let g = TransformerGenome {
            g1_enc_layers: r.g1_enc_layers,
            g2_dec_layers: r.g2_dec_layers,
            g3_embed_dim: r.g3_embed_dim,
            g4_heads: r.g4_heads,
            g5_dropout: r.g5_dropout,
            g6_ff_dim: r.g6_ff_dim,
            g7_batch: r.g7_batch,
        };
        g.validate()?;
        Ok(g)
    }
}

// Dropout values are drawn from a fixed finite domain, never NaN.
impl Eq for TransformerGenome {}

impl Hash for TransformerGenome {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.g1_enc_layers.hash(state);
        self.g2_dec_layers.hash(state);
        self.g3_embed_dim.hash(state);
        self.g4_heads.hash(state);
        self.g5_dropout.to_bits().hash(state);
        self.g6_ff_dim.hash(state);
        self.g7_batch.hash(state);
    }
}

impl TransformerGenome {
    pub fn validate(&self) -> Result<(), GenomeError> {
        self.indices()?;
        if self.g3_embed_dim % self.g4_heads != 0 {
            return Err(GenomeError(format!(
                "embedding dim {} not divisible by {} heads",
                self.g3_embed_dim, self.g4_heads
            )));
        }
        Ok(())
    }

    fn indices(&self) -> Result<Vec<usize>, GenomeError> {
        Ok(vec![
            position(&LAYER_COUNTS, &self.g1_enc_layers, "g1_enc_layers")?,
            position(&LAYER_COUNTS, &self.g2_dec_layers, "g2_dec_layers")?,
            position(&EMBED_DIMS, &self.g3_embed_dim, "g3_embed_dim")?,
            position(&HEADS, &self.g4_heads, "g4_heads")?,
            position(&DROPOUTS, &self.g5_dropout, "g5_dropout")?,
            position(&FF_DIMS, &self.g6_ff_dim, "g6_ff_dim")?,
            position(&BATCH_SIZES, &self.g7_batch, "g7_batch")?,
        ])
    }

    pub fn head_dim(&self) -> usize {
        self.g3_embed_dim / self.g4_heads
    }
}

impl Genome for TransformerGenome {
    const ARCHITECTURE: Architecture = Architecture::Transformer;

    fn domain_sizes() -> &'static [usize] {
        &[3, 3, 3, 2, 4, 6, 5]
    }

    fn gene_indices(&self) -> Vec<usize> {
        self.indices().expect("validated genome")
    }

    fn from_gene_indices(ix: &[usize]) -> Result<Self, GenomeError> {
        if ix.len() != 7 {
            return Err(GenomeError(format!(
                "Transformer genome has 7 genes, got {}",
                ix.len()
            )));
        }
        let g = TransformerGenome {
            g1_enc_layers: pick(&LAYER_COUNTS, ix[0], "g1_enc_layers")?,
            g2_dec_layers: pick(&LAYER_COUNTS, ix[1], "g2_dec_layers")?,
            g3_embed_dim: pick(&EMBED_DIMS, ix[2], "g3_embed_dim")?,
            g4_heads: pick(&HEADS, ix[3], "g4_heads")?,
            g5_dropout: pick(&DROPOUTS, ix[4], "g5_dropout")?,
            g6_ff_dim: pick(&FF_DIMS, ix[5], "g6_ff_dim")?,
            g7_batch: pick(&BATCH_SIZES, ix[6], "g7_batch")?,
        };
        g.validate()?;
        Ok(g)
    }

    fn batch_size(&self) -> usize {
        self.g7_batch
    }

    fn into_any(self) -> AnyGenome {
        AnyGenome::Transformer(self)
    }
}

/// Either genome, tagged with its architecture in JSON.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "lowercase")]
pub enum AnyGenome {
    Cnn(CnnGenome),
    Transformer(TransformerGenome),
}

impl AnyGenome {
    pub fn architecture(&self) -> Architecture {
        match self {
            AnyGenome::Cnn(_) => Architecture::Cnn,
            AnyGenome::Transformer(_) => Architecture::Transformer,
        }
    }

    pub fn batch_size(&self) -> usize {
        match self {
            AnyGenome::Cnn(g) => g.batch_size(),
            AnyGenome::Transformer(g) => g.batch_size(),
        }
    }

    /// CNN genomes carry their optimizer gene; Transformers train with Adam.
    pub fn optimizer(&self) -> OptimizerKind {
        match self {
            AnyGenome::Cnn(g) => g.g8_optimizer,
            AnyGenome::Transformer(_) => OptimizerKind::Adam,
        }
    }

    pub fn validate(&self) -> Result<(), GenomeError> {
        match self {
            AnyGenome::Cnn(g) => g.validate(),
            AnyGenome::Transformer(g) => g.validate(),
        }
    }
}

/// Fittest genomes per lexicon as published with the original toolkit.
#[derive(Debug, Clone, Copy)]
pub struct PublishedGenomes {
    pub language: &'static str,
    pub lexicon: &'static str,
    pub cnn: CnnGenome,
    /// Output-stack widths as printed, e.g. "128/64/32".
    pub cnn_output_pattern: &'static str,
    pub transformer: TransformerGenome,
}

#[allow(clippy::too_many_arguments)]
const fn cnn(
    g1: usize,
    g2: usize,
    g3: usize,
    g4: usize,
    g5: usize,
    g6: usize,
    g7: Activation,
    g8: OptimizerKind,
    g9: usize,
) -> CnnGenome {
    CnnGenome {
        g1_enc_layers: g1,
        g2_enc_dim: g2,
        g3_dec_layers: g3,
        g4_dec_dim: g4,
        g5_out_layers: g5,
        g6_out_dim: g6,
        g7_activation: g7,
        g8_optimizer: g8,
        g9_batch: g9,
    }
}

const fn tf(
    g1: usize,
    g2: usize,
    g3: usize,
    g4: usize,
    g5: f64,
    g6: usize,
    g7: usize,
) -> TransformerGenome {
    TransformerGenome {
        g1_enc_layers: g1,
        g2_dec_layers: g2,
        g3_embed_dim: g3,
        g4_heads: g4,
        g5_dropout: g5,
        g6_ff_dim: g6,
        g7_batch: g7,
    }
}

use Activation::{Linear, Relu};
use OptimizerKind::{Adam, RmsProp};

pub const PUBLISHED: [PublishedGenomes; 10] = [
    PublishedGenomes {
        language: "en",
        lexicon: "cmudict",
        cnn: cnn(2, 128, 2, 128, 3, 128, Relu, RmsProp, 512),
        cnn_output_pattern: "128/64/32",
        transformer: tf(4, 3, 64, 4, 0.01, 512, 64),
    },
    PublishedGenomes {
        language: "en",
        lexicon: "wiktionary",
        cnn: cnn(2, 128, 2, 128, 3, 128, Relu, RmsProp, 256),
        cnn_output_pattern: "128/64/32",
        transformer: tf(4, 4, 32, 4, 0.01, 128, 128),
    },
    PublishedGenomes {
        language: "ro",
        lexicon: "marephor",
        cnn: cnn(3, 64, 2, 32, 3, 64, Linear, Adam, 128),
        cnn_output_pattern: "64/32/32",
        transformer: tf(2, 4, 32, 2, 0.05, 64, 64),
    },
    PublishedGenomes {
        language: "ro",
        lexicon: "wiktionary",
        cnn: cnn(3, 128, 2, 32, 3, 128, Linear, Adam, 512),
        cnn_output_pattern: "128/64/32",
        transformer: tf(3, 2, 64, 2, 0.05, 64, 256),
    },
    PublishedGenomes {
        language: "cs",
        lexicon: "wiktionary",
        cnn: cnn(2, 32, 4, 128, 3, 64, Linear, RmsProp, 128),
        cnn_output_pattern: "64/32/32",
        transformer: tf(2, 2, 32, 2, 0.05, 64, 32),
    },
    PublishedGenomes {
        language: "de",
        lexicon: "wiktionary",
        cnn: cnn(3, 128, 3, 32, 3, 128, Relu, Adam, 512),
        cnn_output_pattern: "128/64/32",
        transformer: tf(4, 2, 64, 2, 0.05, 32, 64),
    },
    PublishedGenomes {
        language: "es",
        lexicon: "wiktionary",
        cnn: cnn(3, 128, 4, 64, 2, 128, Relu, Adam, 128),
        cnn_output_pattern: "128/64",
        transformer: tf(2, 4, 32, 4, 0.05, 32, 32),
    },
    PublishedGenomes {
        language: "fr",
        lexicon: "wiktionary",
        cnn: cnn(3, 128, 3, 32, 3, 128, Relu, Adam, 512),
        cnn_output_pattern: "128/64/32",
        transformer: tf(2, 3, 64, 2, 0.05, 128, 64),
    },
    PublishedGenomes {
        language: "it",
        lexicon: "wiktionary",
        cnn: cnn(2, 128, 4, 128, 2, 64, Relu, RmsProp, 256),
        cnn_output_pattern: "64/32",
        transformer: tf(2, 2, 64, 2, 0.01, 512, 64),
    },
    PublishedGenomes {
        language: "pl",
        lexicon: "wiktionary",
        cnn: cnn(4, 64, 2, 128, 2, 128, Relu, Adam, 128),
        cnn_output_pattern: "128/64",
        transformer: tf(3, 2, 64, 4, 0.05, 1024, 128),
    },
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_widths_halve_with_floor() {
        let g = PUBLISHED[2].cnn;
        assert_eq!(g.output_widths(), [64, 32, 32]);
        for p in PUBLISHED {
            assert_eq!(
                p.cnn.output_pattern(),
                p.cnn_output_pattern,
                "{} {}",
                p.language,
                p.lexicon
            );
        }
    }

    #[test]
    fn json_uses_gene_ids_and_validates() {
        let g = PUBLISHED[0].cnn;
        let v = serde_json::to_value(AnyGenome::Cnn(g)).unwrap();
        assert_eq!(v["architecture"], "cnn");
        assert_eq!(v["g7_activation"], "ReLU");
        assert_eq!(v["g8_optimizer"], "RMSprop");
        let back: AnyGenome = serde_json::from_value(v.clone()).unwrap();
        assert_eq!(back, AnyGenome::Cnn(g));

        let mut bad = v;
        bad["g2_enc_dim"] = 100.into();
        assert!(serde_json::from_value::<AnyGenome>(bad).is_err());

        let t = serde_json::json!({"architecture":"transformer","g1_enc_layers":2,"g2_dec_layers":2,
            "g3_embed_dim":64,"g4_heads":4,"g5_dropout":0.2,"g6_ff_dim":64,"g7_batch":32});
        assert!(serde_json::from_value::<AnyGenome>(t).is_err());
    }

    #[test]
    fn indices_round_trip_over_the_full_product_space() {
        fn all<G: Genome>() -> usize {
            let sizes = G::domain_sizes();
            let total: usize = sizes.iter().product();
            let mut count = 0;
            for mut n in 0..total {
                let ix: Vec<usize> = sizes
                    .iter()
                    .map(|s| {
                        let i = n % s;
                        n /= s;
                        i
                    })
                    .collect();
                if let Ok(g) = G::from_gene_indices(&ix) {
                    assert_eq!(g.gene_indices(), ix);
                    count += 1;
                }
            }
            count
        }
        assert_eq!(all::<CnnGenome>(), 3 * 4 * 3 * 4 * 3 * 3 * 2 * 2 * 5);
        // every embedding width is divisible by both head counts
        assert_eq!(all::<TransformerGenome>(), 3 * 3 * 3 * 2 * 4 * 6 * 5);
        assert!(CnnGenome::from_gene_indices(&[0, 0, 0, 0, 0, 3, 0, 0, 0]).is_err());
    }

    #[test]
    fn head_dim() {
        assert_eq!(PUBLISHED[0].transformer.head_dim(), 16);
    }
}
