use super::{AttentionMask, AutodiffError, Tape, Var};

/// Projection parameters of one multi-head attention block, already placed
/// on a tape. Each weight is `[d_model, d_model]`, each bias `[d_model]`.
#[derive(Debug, Clone, Copy)]
pub struct MhaParams {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Projects queries from `x_q` and keys/values from `x_kv`, attends per head,
/// concatenates the heads and applies the output projection.
pub fn multi_head_attention(
    tape: &mut Tape,
    x_q: Var,
    x_kv: Var,
    heads: usize,
    d_model: usize,
    params: &MhaParams,
    mask: Option<&AttentionMask>,
) -> Result<Var, AutodiffError> {
    if heads == 0 || d_model % heads != 0 {
        return Err(AutodiffError::Config(format!(
            "d_model {d_model} is not divisible by {heads} heads"
        )));
    }
    let q = tape.dense(x_q, params.wq, params.bq)?;
    let k = tape.dense(x_kv, params.wk, params.bk)?;
    let v = tape.dense(x_kv, params.wv, params.bv)?;
    if tape.value(q).last_dim() != d_model {
        return Err(AutodiffError::Config(format!(
            "projection width {} differs from d_model {d_model}",
            tape.value(q).last_dim()
        )));
    }
    let q = tape.split_heads(q, heads)?;
    let k = tape.split_heads(k, heads)?;
    let v = tape.split_heads(v, heads)?;
    let ctx = tape.attention(q, k, v, mask)?;
    let ctx = tape.merge_heads(ctx, heads)?;
    tape.dense(ctx, params.wo, params.bo)
}
