//! Semantic fusion: tags whose embeddings meet the threshold are linked,
//! and every connected component collapses into one canonical record.

use std::collections::{BTreeMap, BTreeSet};

use super::system::{TagRecord, TagSystem};
use super::{BuildError, RawCounts};
use crate::embed::{EmbeddingMatrix, Encoder};
use crate::exec::{self, Execution};
use crate::union_find::DisjointSet;

/// Pairs `(i, j)`, `i < j`, whose rows have cosine at least `threshold`.
pub fn similar_pairs(
    exec: Execution,
    matrix: &EmbeddingMatrix,
    threshold: f64,
) -> Vec<(usize, usize)> {
    let n = matrix.len();
    exec::map_range(exec, n, |i| {
        (i + 1..n)
            .filter(|&j| matrix.cosine_between(i, matrix, j) >= threshold)
            .map(|j| (i, j))
            .collect::<Vec<_>>()
    })
    .concat()
}

fn encode_tags<E: Encoder + ?Sized>(
    encoder: &E,
    tags: Vec<String>,
) -> Result<EmbeddingMatrix, BuildError> {
    match EmbeddingMatrix::encode(encoder, tags.clone()) {
        Ok(m) => Ok(m),
        Err(batch_err) => {
            // Find the first tag the encoder rejects so the error names it.
            for tag in &tags {
                if let Err(source) = encoder.encode(tag) {
                    return Err(BuildError::Encode {
                        tag: tag.clone(),
                        source,
                    });
                }
            }
            Err(BuildError::Encode {
                tag: String::new(),
                source: batch_err,
            })
        }
    }
}

/// Fuses near-duplicate tags.
///
/// Every tag is encoded; tags are linked when their cosine is at least
/// `threshold`, and each connected component becomes one record. The
/// representative is the member with the highest frequency (ties: smallest
/// string); its frequency becomes the number of distinct entities covered
/// by any member; the other members become aliases.
pub fn semantic_fuse<E: Encoder + ?Sized>(
    counts: &RawCounts,
    encoder: &E,
    threshold: f64,
) -> Result<TagSystem, BuildError> {
    semantic_fuse_with(Execution::Parallel, counts, encoder, threshold)
}

pub fn semantic_fuse_with<E: Encoder + ?Sized>(
    exec: Execution,
    counts: &RawCounts,
    encoder: &E,
    threshold: f64,
) -> Result<TagSystem, BuildError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(BuildError::Config(format!(
            "fusion threshold {threshold} outside (0, 1]"
        )));
    }
    if counts.tags.is_empty() {
        return Err(BuildError::Fuse("no tags to fuse".into()));
    }
    let tags: Vec<String> = counts.tags.keys().cloned().collect();
    let matrix = encode_tags(encoder, tags.clone())?;

    let mut sets = DisjointSet::new(tags.len());
    for (i, j) in similar_pairs(exec, &matrix, threshold) {
        sets.union(i, j);
    }

    let entity_sets = counts.entity_sets();
    let empty = BTreeSet::new();
    let mut records = Vec::new();
    let mut reps = Vec::new();
    for members in sets.components() {
        // Members are in ascending tag order, so the first maximum wins ties.
        let rep = *members
            .iter()
            .reduce(|best, m| {
                if counts.tags[&tags[*m]].frequency > counts.tags[&tags[*best]].frequency {
                    m
                } else {
                    best
                }
            })
            .expect("components are non-empty");
        let covered: BTreeSet<usize> = members
            .iter()
            .flat_map(|m| entity_sets.get(tags[*m].as_str()).unwrap_or(&empty))
            .copied()
            .collect();
        let frequency = if covered.is_empty() {
            counts.tags[&tags[rep]].frequency
        } else {
            covered.len()
        };
        records.push(TagRecord {
            tag: tags[rep].clone(),
            frequency,
            aliases: members
                .iter()
                .filter(|&&m| m != rep)
                .map(|&m| tags[m].clone())
                .collect(),
            embedding: Some(matrix.row(rep).clone()),
        });
        reps.push(rep);
    }

    // Representatives of distinct components never share an edge.
    for (a, &i) in reps.iter().enumerate() {
        for &j in &reps[a + 1..] {
            let s = matrix.cosine_between(i, &matrix, j);
            if s >= threshold {
                return Err(BuildError::Fuse(format!(
                    "post-condition violated: {:?} and {:?} still similar ({s})",
                    tags[i], tags[j]
                )));
            }
        }
    }

    Ok(TagSystem::new(records, threshold, encoder.name()))
}

/// Alias partition of a fused system: canonical tag → sorted aliases.
pub fn alias_partition(system: &TagSystem) -> BTreeMap<String, Vec<String>> {
    system
        .records()
        .iter()
        .map(|r| (r.tag.clone(), r.aliases.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{EmbedError, EmbeddingVector, HashingEncoder};
    use std::collections::HashMap;

    /// Encoder returning fixed vectors per text.
    struct Table(HashMap<String, Vec<f64>>);

    impl Encoder for Table {
        fn name(&self) -> &str {
            "table"
        }
        fn dim(&self) -> usize {
            2
        }
        fn encode(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
            self.0
                .get(text)
                .map(|v| EmbeddingVector::normalized(v.clone()))
                .ok_or_else(|| EmbedError::Config(format!("unknown {text}")))
        }
    }

    fn unit(angle_deg: f64) -> Vec<f64> {
        let r = angle_deg.to_radians();
        vec![r.cos(), r.sin()]
    }

    fn table(entries: &[(&str, f64)]) -> Table {
        Table(entries.iter().map(|(k, a)| (k.to_string(), unit(*a))).collect())
    }

    fn counts(per_entity: &[(&str, &[&str])]) -> RawCounts {
        RawCounts::from_entity_tags(
            per_entity
                .iter()
                .map(|(id, tags)| (id.to_string(), tags.iter().map(|t| t.to_string()).collect())),
        )
    }

    #[test]
    fn merges_similar_pair_with_entity_union() {
        // cos(25.84°) ≈ 0.9
        let enc = table(&[("A", 0.0), ("B", 0.9f64.acos().to_degrees())]);
        let mut per_entity: Vec<(String, Vec<String>)> = (0..10)
            .map(|i| (format!("e{i}"), vec!["A".to_string()]))
            .collect();
        per_entity[0].1.push("B".into());
        per_entity.push(("x1".into(), vec!["B".into()]));
        per_entity.push(("x2".into(), vec!["B".into()]));
        let counts = RawCounts::from_entity_tags(per_entity);
        assert_eq!(counts.tags["A"].frequency, 10);
        assert_eq!(counts.tags["B"].frequency, 3);

        let ts = semantic_fuse(&counts, &enc, 0.8).unwrap();
        assert_eq!(ts.len(), 1);
        let r = &ts.records()[0];
        assert_eq!(r.tag, "A");
        assert_eq!(r.aliases, ["B"]);
        assert_eq!(r.frequency, 12);
    }

    #[test]
    fn no_edges_leaves_tags_unchanged() {
        let enc = table(&[("a", 0.0), ("b", 60.0), ("c", 120.0)]);
        let c = counts(&[("e1", &["a", "b"]), ("e2", &["b", "c"])]);
        let ts = semantic_fuse(&c, &enc, 0.8).unwrap();
        let got: Vec<_> = ts.records().iter().map(|r| (r.tag.as_str(), r.frequency)).collect();
        assert_eq!(got, [("b", 2), ("a", 1), ("c", 1)]);
        assert!(ts.records().iter().all(|r| r.aliases.is_empty()));
    }

    #[test]
    fn chain_forms_single_component() {
        // A~B and B~C at 30° apart (cos 0.866); A~C at 60° (cos 0.5).
        let enc = table(&[("A", 0.0), ("B", 30.0), ("C", 60.0)]);
        let c = counts(&[("e1", &["A"]), ("e2", &["C"]), ("e3", &["C"]), ("e4", &["B"])]);
        let ts = semantic_fuse(&c, &enc, 0.8).unwrap();
        assert_eq!(ts.len(), 1);
        assert_eq!(ts.records()[0].tag, "C");
        assert_eq!(ts.records()[0].aliases, ["A", "B"]);
        assert_eq!(ts.records()[0].frequency, 4);
    }

    #[test]
    fn frequency_tie_picks_smallest_tag() {
        let enc = table(&[("zeta", 0.0), ("alpha", 10.0)]);
        let c = counts(&[("e1", &["zeta"]), ("e2", &["alpha"])]);
        let ts = semantic_fuse(&c, &enc, 0.8).unwrap();
        assert_eq!(ts.records()[0].tag, "alpha");
    }

    #[test]
    fn encoder_failure_names_tag() {
        let enc = table(&[("a", 0.0)]);
        let c = counts(&[("e1", &["a", "mystery"])]);
        match semantic_fuse(&c, &enc, 0.8) {
            Err(BuildError::Encode { tag, .. }) => assert_eq!(tag, "mystery"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_threshold() {
        let enc = HashingEncoder::default();
        let c = counts(&[("e1", &["a"])]);
        assert!(semantic_fuse(&c, &enc, 0.0).is_err());
        assert!(semantic_fuse(&c, &enc, 1.5).is_err());
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let enc = HashingEncoder::new(32).unwrap();
        let words = ["recipe", "recipes", "garden", "gardens", "gardening", "bake", "baking"];
        let c = counts(&[("e1", &words[..4]), ("e2", &words[2..]), ("e3", &words[..])]);
        let a = semantic_fuse_with(Execution::Sequential, &c, &enc, 0.5).unwrap();
        let b = semantic_fuse_with(Execution::Parallel, &c, &enc, 0.5).unwrap();
        assert_eq!(a, b);
    }
}
