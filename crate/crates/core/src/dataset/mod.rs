//! Interaction data: loading, splitting, sensitive-attribute partition and
//! the normalized bipartite graph.

mod graph;
mod loader;
mod partition;
mod split;

pub use graph::{build_graph, InteractionGraph};
pub use loader::{
    default_data_root, load_generic_tsv, load_movielens_100k, read_attributes, write_attributes,
    write_id_map, AttributeMapping, ColumnMap, ColumnRef, Dataset, InteractionRecord,
};
pub use partition::{partition_users, SensitivePartition};
pub use split::{split_interactions, DataSplit, Part};
