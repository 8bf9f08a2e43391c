//! Execution strategy for the data-parallel loops (grid inversion and Monte
//! Carlo replications).
//!
//! With the `parallel` feature (on by default) `Exec::Parallel` maps over
//! rayon's pool. Without it every strategy runs sequentially. Results are
//! always collected in index order, so the choice never changes the output.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Map `f` over `0..n`, returning results in index order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_strategies_agree_in_order() {
        let seq = Exec::Sequential.map_range(1000, |i| (i * i) as f64);
        let par = Exec::Parallel.map_range(1000, |i| (i * i) as f64);
        assert_eq!(seq, par);
    }
}
