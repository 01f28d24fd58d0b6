use std::collections::BTreeSet;

use super::{PartitionAssignment, PartitionSpec};
use crate::corpus::TextPair;
use crate::error::{Error, Result};

/// One partition per category label, ids in lexicographic label order. An
/// item with several labels lands in each of their partitions.
pub fn partition_category(pairs: &[TextPair], spec: &PartitionSpec) -> Result<PartitionAssignment> {
    let mut labels = BTreeSet::new();
    for (i, p) in pairs.iter().enumerate() {
        match &p.categories {
            Some(c) if !c.is_empty() => labels.extend(c.iter().map(String::as_str)),
            _ => return Err(Error::MissingCategories(i)),
        }
    }
    if labels.len() != spec.m {
        return Err(Error::CategoryCountMismatch { expected: spec.m, found: labels.len() });
    }
    let ids: Vec<&str> = labels.into_iter().collect();
    let assignments = pairs
        .iter()
        .map(|p| {
            let mut ps: Vec<usize> = p
                .categories
                .iter()
                .flatten()
                .map(|c| ids.binary_search(&c.as_str()).expect("label collected above"))
                .collect();
            ps.sort_unstable();
            ps.dedup();
            ps
        })
        .collect();
    Ok(PartitionAssignment { m: spec.m, assignments, warnings: Vec::new() })
}
