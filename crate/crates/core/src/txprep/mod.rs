//! Transaction records, description normalization, grouping by
//! `(account, normalized text)`, and per-group sparse series and aggregates.

mod group;
mod io;
mod normalize;
mod types;

pub use group::{build_sparse_series, compute_aggregates, group, GroupAggregates, SeriesEntry, SparseSeries, TransactionGroup};
pub use io::{read_groups, read_jsonl, read_jsonl_file, read_transactions, write_groups, write_jsonl, write_transactions, TransactionFormat};
pub use group::group_key;
pub use normalize::{normalize, normalize_bytes, NormalizedText};
pub use types::{Cents, Day, Transaction};
