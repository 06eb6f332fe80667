//! Bidirectional GRU encoder over source token embeddings.

use crate::corpus::UNK;
use crate::model::{Dropout, ModelConfig, ModelError, ModelNodes};
use crate::nn::{gru_cell, NodeId, Tape, Tensor};

/// Contextual encoding of one source sequence: per-position states
/// (forward and backward concatenated) plus the two final states.
pub struct SourceEncoding {
    /// One node per source position, each of size 2 * hidden.
    pub h: Vec<NodeId>,
    pub final_fwd: NodeId,
    pub final_bwd: NodeId,
}

/// Embedding lookup; extended (copy) ids embed as UNK.
pub fn embed_token(
    tape: &mut Tape,
    model: &ModelNodes,
    cfg: &ModelConfig,
    id: usize,
    dropout: &mut Dropout,
) -> NodeId {
    let row = if id < cfg.vocab_size { id } else { UNK };
    let e = tape.embed_row(model.embed, row);
    dropout.apply(tape, e)
}

/// Run the bidirectional encoder. `H[t]` is the forward state after reading
/// up to `t` concatenated with the backward state after reading down to `t`.
pub fn encode(
    tape: &mut Tape,
    model: &ModelNodes,
    cfg: &ModelConfig,
    source_ids: &[usize],
    dropout: &mut Dropout,
) -> Result<SourceEncoding, ModelError> {
    if source_ids.is_empty() {
        return Err(ModelError::EmptySource);
    }
    let t_len = source_ids.len();
    let embeds: Vec<NodeId> = source_ids
        .iter()
        .map(|&id| embed_token(tape, model, cfg, id, dropout))
        .collect();

    let zero = tape.constant(Tensor::zeros(vec![cfg.hidden_dim]));
    let mut fwd = Vec::with_capacity(t_len);
    let mut state = zero;
    for &x in &embeds {
        state = gru_cell(tape, x, state, &[], &model.enc_fwd)?;
        fwd.push(state);
    }

    let mut bwd = vec![zero; t_len];
    let mut state = zero;
    for t in (0..t_len).rev() {
        state = gru_cell(tape, embeds[t], state, &[], &model.enc_bwd)?;
        bwd[t] = state;
    }

    let h = (0..t_len)
        .map(|t| tape.concat(&[fwd[t], bwd[t]]))
        .collect();
    Ok(SourceEncoding {
        h,
        final_fwd: fwd[t_len - 1],
        final_bwd: bwd[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::nn::ParamStore;

    fn setup(cfg: &ModelConfig, seed: u64) -> ParamStore {
        cfg.init_params(seed)
    }

    fn encode_values(
        store: &ParamStore,
        cfg: &ModelConfig,
        ids: &[usize],
    ) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let model = ModelNodes::bind(&mut tape, store);
        let enc = encode(&mut tape, &model, cfg, ids, &mut Dropout::off()).unwrap();
        let h = enc.h.iter().map(|&n| tape.value(n).data().to_vec()).collect();
        (
            h,
            tape.value(enc.final_fwd).data().to_vec(),
            tape.value(enc.final_bwd).data().to_vec(),
        )
    }

    #[test]
    fn single_token_shape() {
        let cfg = ModelConfig::new(10, 4, 6);
        let store = setup(&cfg, 2);
        let (h, ff, fb) = encode_values(&store, &cfg, &[5]);
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].len(), 2 * cfg.hidden_dim);
        assert_eq!(ff.len(), cfg.hidden_dim);
        assert_eq!(fb.len(), cfg.hidden_dim);
        assert_eq!(&h[0][..cfg.hidden_dim], ff.as_slice());
        assert_eq!(&h[0][cfg.hidden_dim..], fb.as_slice());
    }

    #[test]
    fn empty_sequence_rejected() {
        let cfg = ModelConfig::new(10, 4, 6);
        let store = setup(&cfg, 2);
        let mut tape = Tape::new();
        let model = ModelNodes::bind(&mut tape, &store);
        assert!(matches!(
            encode(&mut tape, &model, &cfg, &[], &mut Dropout::off()),
            Err(ModelError::EmptySource)
        ));
    }

    #[test]
    fn identical_tokens_get_contextual_states() {
        let cfg = ModelConfig::new(10, 4, 6);
        let store = setup(&cfg, 3);
        let (h, _, _) = encode_values(&store, &cfg, &[7, 5, 7]);
        assert_ne!(h[0], h[2], "same token at different positions should differ");
    }

    #[test]
    fn extended_ids_embed_as_unk() {
        let cfg = ModelConfig::new(10, 4, 6);
        let store = setup(&cfg, 4);
        let (h_ext, _, _) = encode_values(&store, &cfg, &[25]);
        let (h_unk, _, _) = encode_values(&store, &cfg, &[UNK]);
        assert_eq!(h_ext, h_unk);
    }

    #[test]
    fn reversal_swaps_stream_roles_when_directions_share_weights() {
        let cfg = ModelConfig::new(10, 4, 6);
        let mut store = setup(&cfg, 5);
        // copy forward weights into the backward cell
        for gate in ["r", "z", "c"] {
            for kind in ["w", "u", "b"] {
                let src = store
                    .get(&format!("enc_fwd.{kind}_{gate}"))
                    .unwrap()
                    .data()
                    .to_vec();
                store
                    .set(&format!("enc_bwd.{kind}_{gate}"), &src)
                    .unwrap();
            }
        }
        let ids = [5, 6, 7, 8];
        let rev: Vec<usize> = ids.iter().rev().cloned().collect();
        let h = cfg.hidden_dim;
        let (h_f, _, _) = encode_values(&store, &cfg, &ids);
        let (h_r, _, _) = encode_values(&store, &cfg, &rev);
        let t_len = ids.len();
        for t in 0..t_len {
            let fwd_of_rev = &h_r[t][..h];
            let bwd_of_orig = &h_f[t_len - 1 - t][h..];
            assert_eq!(fwd_of_rev, bwd_of_orig);
        }
    }
}
