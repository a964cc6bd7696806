use serde::{Deserialize, Serialize};

/// Work counters for one propagation (or one toolkit build).
///
/// Counts only grow while a run is in progress; every run owns its counter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostCounter {
    pub matrix_vector_applies: u64,
    pub matrix_matrix_products: u64,
    pub online_exponentials: u64,
    pub eigendecompositions: u64,
    /// Distinct precomputed propagators touched during the run.
    pub toolkit_entries_used: u64,
    pub steps: u64,
}

impl CostCounter {
    pub fn merge(&mut self, other: &CostCounter) {
        self.matrix_vector_applies += other.matrix_vector_applies;
        self.matrix_matrix_products += other.matrix_matrix_products;
        self.online_exponentials += other.online_exponentials;
        self.eigendecompositions += other.eigendecompositions;
        self.toolkit_entries_used += other.toolkit_entries_used;
        self.steps += other.steps;
    }
}
