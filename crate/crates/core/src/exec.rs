use serde::{Deserialize, Serialize};

/// How batch- and corpus-level work is scheduled.
///
/// Work is always split into the same fixed chunks and partial results are
/// reduced in chunk order, so both modes produce identical output; `Parallel`
/// only changes which thread computes each chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    #[default]
    Sequential,
    Parallel,
}

impl ExecMode {
    pub(crate) fn map<I, T, F>(self, items: Vec<I>, f: F) -> Vec<T>
    where
        I: Send,
        T: Send,
        F: Fn(I) -> T + Sync + Send,
    {
        use rayon::prelude::*;
        match self {
            ExecMode::Sequential => items.into_iter().map(f).collect(),
            ExecMode::Parallel => items.into_par_iter().map(f).collect(),
        }
    }
}
