//! Batch evaluation, data-parallel when the `parallel` feature is on.

use serde::{Deserialize, Serialize};

use super::{Assessment, Problem};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    /// Uses rayon when compiled with the `parallel` feature, otherwise runs sequentially.
    #[default]
    Parallel,
}

impl Execution {
    /// Maps `f` over `items`, preserving order.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }
}

pub fn evaluate_batch<P: Problem>(problem: &P, positions: &[Vec<f64>], exec: Execution) -> Vec<Assessment<P::Detail>> {
    exec.map(positions, |x| problem.evaluate(x))
}
