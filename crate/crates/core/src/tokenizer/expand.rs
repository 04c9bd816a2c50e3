//! Vocabulary expansion: appending trained merges to a frozen base model.

use std::collections::HashSet;

use super::{BpeFragment, BpeModel};

#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub model: BpeModel,
    /// Number of new surfaces appended.
    pub added: usize,
    /// Fragment merges skipped because their output already existed or an
    /// input was never added.
    pub skipped: usize,
    /// True when the fragment ran out before `target_new` surfaces were added.
    pub exhausted: bool,
}

/// Appends up to `target_new` novel surfaces from `fragment` to `base`.
///
/// Every token of `base` (including ones it added itself) becomes part of the
/// frozen base of the result, so ids of existing surfaces never change.
/// Fragment merges are taken in order; a merge is skipped when its output is
/// already in the vocabulary or when one of its inputs is not.
pub fn merge_vocab(base: &BpeModel, fragment: &BpeFragment, target_new: usize) -> MergeOutcome {
    let mut vocab: Vec<String> = base.surfaces().to_vec();
    let mut merges: Vec<(String, String)> = base.merges().to_vec();
    let mut known: HashSet<String> = vocab.iter().cloned().collect();
    let mut added = 0;
    let mut skipped = 0;
    for (left, right) in &fragment.merges {
        if added == target_new {
            break;
        }
        let out = format!("{left}{right}");
        if known.contains(&out) || !known.contains(left) || !known.contains(right) {
            skipped += 1;
            continue;
        }
        known.insert(out.clone());
        vocab.push(out);
        merges.push((left.clone(), right.clone()));
        added += 1;
    }
    let exhausted = added < target_new;
    if exhausted {
        log::warn!("fragment exhausted: added {added} of {target_new} requested tokens");
    }
    let model = BpeModel::from_parts(vocab, merges, base.vocab_size())
        .expect("expansion of a valid model is valid");
    MergeOutcome {
        model,
        added,
        skipped,
        exhausted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{surface, train_bpe};

    fn frag(m: &[(&str, &str)]) -> BpeFragment {
        BpeFragment {
            merges: m.iter().map(|(l, r)| (l.to_string(), r.to_string())).collect(),
        }
    }

    fn base_with(extra: &[(&str, &str)]) -> BpeModel {
        let mut vocab: Vec<String> = (0..=255u8).map(|b| surface(&[b])).collect();
        let mut merges = Vec::new();
        for (l, r) in extra {
            vocab.push(format!("{l}{r}"));
            merges.push((l.to_string(), r.to_string()));
        }
        let n = vocab.len();
        BpeModel::from_parts(vocab, merges, n).unwrap()
    }

    #[test]
    fn skips_existing_surfaces() {
        // Base holds "xy"; fragment offers xy, yz, zw; target 2 adds yz and zw.
        let base = base_with(&[("x", "y")]);
        let out = merge_vocab(&base, &frag(&[("x", "y"), ("y", "z"), ("z", "w")]), 2);
        assert_eq!(out.added, 2);
        assert_eq!(out.skipped, 1);
        assert!(!out.exhausted);
        let m = &out.model;
        assert_eq!(m.vocab_size(), 259);
        assert_eq!(m.id("yz"), Some(257));
        assert_eq!(m.id("zw"), Some(258));
        for (s, id) in base.base_vocab() {
            assert_eq!(m.id(s), Some(id));
        }
        assert!(m.overlap_with_base().is_empty());
    }

    #[test]
    fn all_duplicates_leaves_vocab_unchanged() {
        let base = base_with(&[("a", "b"), ("c", "d")]);
        let out = merge_vocab(&base, &frag(&[("a", "b"), ("c", "d")]), 5);
        assert_eq!(out.added, 0);
        assert!(out.exhausted);
        assert_eq!(out.model.surfaces(), base.surfaces());
    }

    #[test]
    fn stops_at_target() {
        let f = train_bpe(["abcdefgh abcdefgh ijkl ijkl ijkl"], 20).unwrap();
        let out = merge_vocab(&BpeModel::byte_level(), &f, 3);
        assert_eq!(out.added, 3);
        assert_eq!(out.model.vocab_size(), 259);
        assert_eq!(out.model.base_size(), 256);
    }

    #[test]
    fn missing_inputs_are_skipped() {
        let out = merge_vocab(&BpeModel::byte_level(), &frag(&[("ab", "c"), ("a", "b")]), 2);
        assert_eq!(out.added, 1);
        assert_eq!(out.skipped, 1);
        assert!(out.exhausted);
    }

    #[test]
    fn zero_target_adds_nothing() {
        let f = train_bpe(["abab"], 5).unwrap();
        let out = merge_vocab(&BpeModel::byte_level(), &f, 0);
        assert_eq!(out.added, 0);
        assert!(!out.exhausted);
    }
}
