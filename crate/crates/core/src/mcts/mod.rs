//! Sentence-level Monte Carlo tree search with PUCT selection,
//! diversity-filtered expansion, dual-granularity evaluation and value
//! backpropagation.

mod search;
mod similarity;
mod tree;

pub use search::{run_search, run_search_with, SearchError, SearchOptions, Searcher, COMPLETION_TEMPERATURE};
pub use similarity::{bag_of_words_cosine, diversity_filter, BagOfWords, Similarity};
pub use tree::{priors, puct_argmax, puct_score, Node, SearchTree, ROOT};

#[cfg(test)]
mod tests;
