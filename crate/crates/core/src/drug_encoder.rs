//! Graph Transformer over molecular graphs.
//!
//! Each layer runs multi-head attention along directed edges, where every
//! edge's attention score is modulated elementwise by its own features and
//! doubles as the edge's updated representation. Node and edge streams then
//! pass through separate output projections, residual connections and
//! layer-normalized feed-forward blocks.

use std::sync::Arc;

use rand::Rng;

use crate::graph::MolecularGraph;
use crate::model::{Bound, Mode, ModelConfig, ModelError};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Edge index lists shared by every layer of one graph.
#[derive(Clone, Debug)]
pub struct GraphIndex {
    pub sources: Arc<[usize]>,
    pub destinations: Arc<[usize]>,
    pub n_nodes: usize,
}

impl GraphIndex {
    pub fn new(graph: &MolecularGraph) -> Self {
        GraphIndex {
            sources: graph.sources().into(),
            destinations: graph.destinations().into(),
            n_nodes: graph.n_nodes(),
        }
    }
}

/// Output of [`encode_drug`].
#[derive(Clone, Debug)]
pub struct DrugEncoding {
    /// `[1 × d_model]` graph embedding.
    pub embedding: Var,
    /// Final node states `[n_nodes × d_model]`.
    pub node_states: Var,
    /// Per-layer attention weights `[n_edges × heads]`; for every
    /// destination node and head they sum to one over incoming edges.
    pub attention: Vec<Var>,
}

/// Projects atom features (plus positional encodings) and bond features to
/// the model width. `pe` must be `[n_nodes × effective_pe_dim]`.
pub fn embed_inputs<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    cfg: &ModelConfig,
    graph: &MolecularGraph,
    pe: &Tensor<f64>,
) -> Result<(Var, Var), ModelError> {
    let want_pe = cfg.effective_pe_dim();
    if pe.shape() != [graph.n_nodes(), want_pe] {
        return Err(ModelError::DimensionMismatch {
            what: "positional encoding".into(),
            expected: vec![graph.n_nodes(), want_pe],
            got: pe.shape().to_vec(),
        });
    }
    let x = tape.constant(graph.node_features.cast());
    let mut h = tape.linear(x, bound.var("drug.atom_in.w")?, Some(bound.var("drug.atom_in.b")?))?;
    if want_pe > 0 {
        let p = tape.constant(pe.cast());
        let hp = tape.linear(p, bound.var("drug.pe_in.w")?, Some(bound.var("drug.pe_in.b")?))?;
        h = tape.add(h, hp)?;
    }
    let ef = tape.constant(graph.edge_features.cast());
    let e = tape.linear(ef, bound.var("drug.bond_in.w")?, Some(bound.var("drug.bond_in.b")?))?;
    Ok((h, e))
}

/// Edge scores `ŵ = (Q[dst] ⊙ K[src] / √d_h) ⊙ E` as `[n_edges × heads·d_h]`
/// and the attention weights obtained by summing each head's block and
/// normalizing over the edges entering each destination.
pub fn attention_scores<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    cfg: &ModelConfig,
    layer: usize,
    h: Var,
    e: Var,
    index: &GraphIndex,
) -> Result<(Var, Var), ModelError> {
    let p = format!("drug.layer{layer}");
    let q = tape.matmul(h, bound.var(&format!("{p}.w_q.w"))?)?;
    let k = tape.matmul(h, bound.var(&format!("{p}.w_k.w"))?)?;
    let ew = tape.matmul(e, bound.var(&format!("{p}.w_e.w"))?)?;
    let q_dst = tape.gather_rows(q, index.destinations.clone())?;
    let k_src = tape.gather_rows(k, index.sources.clone())?;
    let qk = tape.mul(q_dst, k_src)?;
    let qk = tape.scale(qk, T::lit(1.0 / (cfg.d_head as f64).sqrt()));
    let score = tape.mul(qk, ew)?;
    let logits = tape.block_sum(score, cfg.d_head)?;
    let weights = tape.segment_softmax(logits, index.destinations.clone())?;
    Ok((score, weights))
}

fn feed_forward<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    cfg: &ModelConfig,
    prefix: &str,
    stream: char,
    x: Var,
) -> Result<Var, ModelError> {
    let v = |name: String| bound.var(&name);
    let eps = T::lit(cfg.layer_norm_eps);
    let n = tape.layer_norm(
        x,
        v(format!("{prefix}.norm_{stream}_in.gain"))?,
        v(format!("{prefix}.norm_{stream}_in.bias"))?,
        eps,
    )?;
    let f = tape.linear(
        n,
        v(format!("{prefix}.ffn_{stream}1.w"))?,
        Some(v(format!("{prefix}.ffn_{stream}1.b"))?),
    )?;
    let f = tape.relu(f);
    let f = tape.linear(
        f,
        v(format!("{prefix}.ffn_{stream}2.w"))?,
        Some(v(format!("{prefix}.ffn_{stream}2.b"))?),
    )?;
    let s = tape.add(x, f)?;
    Ok(tape.layer_norm(
        s,
        v(format!("{prefix}.norm_{stream}_out.gain"))?,
        v(format!("{prefix}.norm_{stream}_out.bias"))?,
        eps,
    )?)
}

/// Inverted dropout: kept entries are scaled by `1 / (1 − p)`.
pub fn dropout<T: Real>(tape: &mut Tape<T>, x: Var, p: f64, mode: &mut Mode<'_>) -> Var {
    let Mode::Train { rng } = mode else {
        return x;
    };
    if p <= 0.0 {
        return x;
    }
    let shape = tape.value(x).shape().to_vec();
    let keep = T::lit(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..tape.value(x).len())
        .map(|_| if rng.gen_bool(p) { T::zero() } else { keep })
        .collect();
    let mask = tape.constant(Tensor::new(shape, mask).expect("mask shape"));
    tape.mul(x, mask).expect("same shape")
}

/// One Graph Transformer layer. Returns new node states, new edge states and
/// the attention weights.
#[allow(clippy::too_many_arguments)]
pub fn layer_forward<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    cfg: &ModelConfig,
    layer: usize,
    h: Var,
    e: Var,
    index: &GraphIndex,
    mode: &mut Mode<'_>,
) -> Result<(Var, Var, Var), ModelError> {
    let p = format!("drug.layer{layer}");
    let (score, weights) = attention_scores(tape, bound, cfg, layer, h, e, index)?;

    let v = tape.matmul(h, bound.var(&format!("{p}.w_v.w"))?)?;
    let v_src = tape.gather_rows(v, index.sources.clone())?;
    let w_wide = tape.block_expand(weights, cfg.d_head)?;
    let msg = tape.mul(v_src, w_wide)?;
    let agg = tape.scatter_add_rows(msg, index.destinations.clone(), index.n_nodes)?;

    let oh = tape.linear(
        agg,
        bound.var(&format!("{p}.o_h.w"))?,
        Some(bound.var(&format!("{p}.o_h.b"))?),
    )?;
    let h1 = tape.add(oh, h)?;
    let oe = tape.linear(
        score,
        bound.var(&format!("{p}.o_e.w"))?,
        Some(bound.var(&format!("{p}.o_e.b"))?),
    )?;
    let e1 = tape.add(oe, e)?;

    let h2 = feed_forward(tape, bound, cfg, &p, 'h', h1)?;
    let e2 = feed_forward(tape, bound, cfg, &p, 'e', e1)?;
    let h2 = dropout(tape, h2, cfg.dropout, mode);
    let e2 = dropout(tape, e2, cfg.dropout, mode);
    Ok((h2, e2, weights))
}

/// Runs the full encoder and reads out the graph embedding: the virtual
/// node's final state, or the mean over nodes when the virtual node is
/// disabled.
pub fn encode_drug<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    cfg: &ModelConfig,
    graph: &MolecularGraph,
    pe: &Tensor<f64>,
    mode: &mut Mode<'_>,
) -> Result<DrugEncoding, ModelError> {
    let readout_row = match (cfg.virtual_node, graph.virtual_node) {
        (true, Some(vn)) => Some(vn),
        (true, None) => return Err(ModelError::MissingVirtualNode),
        (false, None) => None,
        (false, Some(_)) => {
            return Err(ModelError::Config(
                "graph has a virtual node but the model was configured without one".into(),
            ))
        }
    };
    let index = GraphIndex::new(graph);
    let (mut h, mut e) = embed_inputs(tape, bound, cfg, graph, pe)?;
    let mut attention = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let (h2, e2, w) = layer_forward(tape, bound, cfg, l, h, e, &index, mode)?;
        h = h2;
        e = e2;
        attention.push(w);
    }
    let embedding = match readout_row {
        Some(vn) => tape.gather_rows(h, Arc::from([vn]))?,
        None => tape.mean_rows(h)?,
    };
    Ok(DrugEncoding {
        embedding,
        node_states: h,
        attention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;
    use crate::graph::build_graph;
    use crate::model::Params;

    fn toy_graph(smiles: &str, cfg: &ModelConfig) -> MolecularGraph {
        build_graph(&parse_smiles(smiles).unwrap(), cfg.virtual_node)
            .unwrap()
            .with_positional_encoding(cfg.pe_dim)
            .unwrap()
    }

    fn run(cfg: &ModelConfig, graph: &MolecularGraph) -> (Tensor<f64>, Vec<Tensor<f64>>) {
        let params = Params::<f64>::init(cfg, 11);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let enc = encode_drug(
            &mut tape,
            &bound,
            cfg,
            graph,
            &graph.positional_encoding,
            &mut Mode::Eval,
        )
        .unwrap();
        let att = enc.attention.iter().map(|&a| tape.value(a).clone()).collect();
        (tape.value(enc.embedding).clone(), att)
    }

    #[test]
    fn attention_sums_to_one_per_destination() {
        let cfg = ModelConfig::toy();
        let g = toy_graph("CC(=O)Oc1ccccc1C(=O)O", &cfg);
        let (emb, att) = run(&cfg, &g);
        assert_eq!(emb.shape(), &[1, cfg.d_model]);
        for a in att {
            assert_eq!(a.shape(), &[g.n_edges(), cfg.heads]);
            let mut sums = vec![vec![0.0; cfg.heads]; g.n_nodes()];
            for (r, &(_, dst)) in g.edges.iter().enumerate() {
                for (k, s) in sums[dst].iter_mut().enumerate() {
                    *s += a.get2(r, k);
                }
            }
            for s in sums.iter().flatten() {
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn missing_virtual_node_is_an_error() {
        let cfg = ModelConfig::toy();
        let mut g = toy_graph("CCO", &cfg);
        g.virtual_node = None;
        let params = Params::<f64>::init(&cfg, 1);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let r = encode_drug(&mut tape, &bound, &cfg, &g, &g.positional_encoding, &mut Mode::Eval);
        assert!(matches!(r, Err(ModelError::MissingVirtualNode)));
    }

    #[test]
    fn mean_readout_without_virtual_node() {
        let mut cfg = ModelConfig::toy();
        cfg.virtual_node = false;
        let g = toy_graph("c1ccccc1O", &cfg);
        let (emb, _) = run(&cfg, &g);
        assert!(emb.all_finite());
    }

    #[test]
    fn isolated_atom_keeps_finite_state() {
        let mut cfg = ModelConfig::toy();
        cfg.virtual_node = false;
        let g = toy_graph("[Na+].[Cl-]", &cfg);
        assert_eq!(g.n_edges(), 0);
        let (emb, _) = run(&cfg, &g);
        assert!(emb.all_finite());
    }

    #[test]
    fn dropout_preserves_expectation_and_is_identity_in_eval() {
        use rand::SeedableRng;
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::filled(vec![200, 50], 1.0));
        assert_eq!(dropout(&mut tape, x, 0.2, &mut Mode::Eval), x);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let y = dropout(&mut tape, x, 0.2, &mut Mode::Train { rng: &mut rng });
        let vals = tape.value(y).data();
        let zeros = vals.iter().filter(|&&v| v == 0.0).count() as f64 / vals.len() as f64;
        assert!((zeros - 0.2).abs() < 0.02, "{zeros}");
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - 1.0).abs() < 0.03);
    }
}
