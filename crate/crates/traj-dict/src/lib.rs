//! Cross-dataset trajectory dictionary.
//!
//! Builds a binned, clustered store of representative history-future pairs:
//! motion features are quantized by a per-feature resolution vector, each
//! non-empty bin is clustered independently over flattened histories and
//! futures, and the pairs nearest each centroid are kept. Retrieval ranks
//! entries against a query history with a hybrid score mixing normalized
//! cosine similarity and normalized L2 distance.

pub mod bin;
pub mod build;
pub mod error;
pub mod kmeans;
pub mod retrieval;
pub mod store;

pub use bin::{bin_index, BinIndex, DEFAULT_RESOLUTION};
pub use build::{build_dictionary, DictConfig, DictionaryEntry, TrajectoryDictionary};
pub use error::{DictError, Result};
pub use kmeans::{kmeans, KmeansResult};
pub use retrieval::{
    brute_force_oracle, retrieve_top_k, similarity_scores, RetrievalResult, ScoredEntry,
};
pub use store::{load_dictionary, persist_dictionary};
