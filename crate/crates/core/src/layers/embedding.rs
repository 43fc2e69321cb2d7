use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Var};

/// Looks up one table row per token id; output is `[ids.len() × dim]`.
pub fn embed<T: Scalar>(g: &mut Graph<T>, table: Var, ids: &[u32]) -> Result<Var> {
    let (vocab, _) = g.value(table).dims2()?;
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab) {
        return Err(Error::Index(format!(
            "token id {bad} out of range for vocabulary of size {vocab}"
        )));
    }
    let rows: Vec<usize> = ids.iter().map(|&id| id as usize).collect();
    g.gather_rows(table, &rows)
}
