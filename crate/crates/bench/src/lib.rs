//! Shared fixtures for the benchmarks.

use stare::encoder::StarEEncoder;
use stare::graph::{augment_edges, build_vocabulary, to_sparse};
use stare::synth::{random_statements, RandomGraphConfig};
use stare::{EdgeIndex, EncoderConfig, Matrix, ParamSet};

pub struct LayerFixture {
    pub edges: EdgeIndex,
    pub entities: Matrix,
    pub relations: Matrix,
    pub params: ParamSet,
    pub encoder: StarEEncoder,
    pub config: EncoderConfig,
}

/// A random hyper-relational graph with `statements` base facts and one
/// initialised encoder layer of width `dim`.
pub fn layer_fixture(statements: usize, dim: usize, seed: u64) -> LayerFixture {
    use rand::SeedableRng;
    let raw = random_statements(
        &RandomGraphConfig {
            entities: (statements / 4).max(2),
            relations: 20,
            statements,
            qualified_fraction: 0.3,
            max_qualifiers: 4,
        },
        seed,
    );
    let vocab = build_vocabulary(&raw).expect("generated labels are valid");
    let base = vocab.encode_all(&raw).expect("vocabulary covers the statements");
    let (aug, aug_vocab) = augment_edges(&base, &vocab).expect("fresh vocabulary");
    let graph = to_sparse(&aug, &aug_vocab).expect("augmented graph");
    let config = EncoderConfig {
        num_layers: 1,
        dim,
        dropout: 0.0,
        ..EncoderConfig::default()
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let encoder = StarEEncoder::new(config.clone(), &mut params, &mut rng).expect("valid config");
    LayerFixture {
        edges: EdgeIndex::new(&graph),
        entities: Matrix::xavier(vocab.num_entities(), dim, &mut rng),
        relations: Matrix::xavier(aug_vocab.num_relations(), dim, &mut rng),
        params,
        encoder,
        config,
    }
}
