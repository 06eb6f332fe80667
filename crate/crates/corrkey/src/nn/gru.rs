//! Gated recurrent unit cell recorded on a tape.
//!
//! The cell accepts any number of extra context vectors (the decoder feeds
//! source and review contexts); each context contributes through its own
//! per-gate matrix:
//!
//! ```text
//! r = sigmoid(W_r x + U_r s + sum_k Cr_k c_k + b_r)
//! z = sigmoid(W_z x + U_z s + sum_k Cz_k c_k + b_z)
//! s~ = tanh(W x + U (r o s) + sum_k C_k c_k + b)
//! s' = (1 - z) o s + z o s~
//! ```

use super::tape::{NodeId, Tape};
use super::tensor::NnError;

/// Tape nodes of one gate's context matrices.
#[derive(Debug, Clone, Copy)]
pub struct GruCtxWeights {
    pub r: NodeId,
    pub z: NodeId,
    pub c: NodeId,
}

/// Tape nodes of all weights of one GRU cell.
#[derive(Debug, Clone)]
pub struct GruWeights {
    pub w_r: NodeId,
    pub u_r: NodeId,
    pub b_r: NodeId,
    pub w_z: NodeId,
    pub u_z: NodeId,
    pub b_z: NodeId,
    pub w_c: NodeId,
    pub u_c: NodeId,
    pub b_c: NodeId,
    pub ctx: Vec<GruCtxWeights>,
}

/// One GRU step. `contexts` must match the cell's context weight count.
pub fn gru_cell(
    tape: &mut Tape,
    x: NodeId,
    s_prev: NodeId,
    contexts: &[NodeId],
    w: &GruWeights,
) -> Result<NodeId, NnError> {
    if contexts.len() != w.ctx.len() {
        return Err(NnError::ShapeMismatch {
            op: "gru_cell",
            detail: format!(
                "{} contexts supplied, cell expects {}",
                contexts.len(),
                w.ctx.len()
            ),
        });
    }
    let hidden = tape.value(s_prev).numel();
    let check = |tape: &Tape, m: NodeId, v: NodeId, what: &str| -> Result<(), NnError> {
        let mt = tape.value(m);
        if mt.shape().len() != 2 || mt.rows() != hidden || mt.cols() != tape.value(v).numel() {
            return Err(NnError::ShapeMismatch {
                op: "gru_cell",
                detail: format!(
                    "{}: matrix {:?} vs input length {}",
                    what,
                    mt.shape(),
                    tape.value(v).numel()
                ),
            });
        }
        Ok(())
    };
    check(tape, w.w_r, x, "W_r x")?;
    check(tape, w.u_r, s_prev, "U_r s")?;
    for (k, cw) in w.ctx.iter().enumerate() {
        check(tape, cw.r, contexts[k], "ctx r")?;
        check(tape, cw.z, contexts[k], "ctx z")?;
        check(tape, cw.c, contexts[k], "ctx candidate")?;
    }

    let gate = |tape: &mut Tape, wm: NodeId, um: NodeId, b: NodeId, cms: &[NodeId], sv: NodeId| {
        let mut terms = vec![tape.matvec(wm, x), tape.matvec(um, sv)];
        for (k, &cm) in cms.iter().enumerate() {
            terms.push(tape.matvec(cm, contexts[k]));
        }
        terms.push(b);
        tape.add_n(&terms)
    };

    let ctx_r: Vec<NodeId> = w.ctx.iter().map(|c| c.r).collect();
    let ctx_z: Vec<NodeId> = w.ctx.iter().map(|c| c.z).collect();
    let ctx_c: Vec<NodeId> = w.ctx.iter().map(|c| c.c).collect();

    let pre_r = gate(tape, w.w_r, w.u_r, w.b_r, &ctx_r, s_prev);
    let r = tape.sigmoid(pre_r);
    let pre_z = gate(tape, w.w_z, w.u_z, w.b_z, &ctx_z, s_prev);
    let z = tape.sigmoid(pre_z);

    let rs = tape.mul(r, s_prev);
    let pre_c = gate(tape, w.w_c, w.u_c, w.b_c, &ctx_c, rs);
    let cand = tape.tanh(pre_c);

    let keep = tape.one_minus(z);
    let kept = tape.mul(keep, s_prev);
    let new = tape.mul(z, cand);
    Ok(tape.add(kept, new))
}
