//! Pre-rank feature tables: every (scorer, market combination) pair becomes
//! a named column over a run file's (user, candidate) rows, next to global
//! statistics and embedding similarities.

mod combinations;
mod correlation;
mod external;
mod plan;
mod stats;
mod table;

pub use combinations::{default_combinations, CombinationSelector};
pub use correlation::{feature_correlation, CorrelationMatrix};
pub use external::{external_embedding_features, load_item_vectors};
pub use plan::{
    build_scorer, expand_plan, keys_digest, run_plan, score_run, CfParams, LightGcnScorerParams, Node2VecParams,
    NoParams, PlanContext, PlanEntry, PlanOutcome, ScorerParams, ScorerSpec, SwingScorerParams, Word2VecParams,
};
pub use stats::{global_statistic_features, item_market_overlap};
pub use table::{ColumnInfo, ColumnSource, FeatureTable};
