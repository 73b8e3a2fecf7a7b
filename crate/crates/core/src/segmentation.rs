//! Split responses into direct responding semantics and supplementary
//! semantics at the midmost punctuation token, and assemble the SEP-joined
//! encoder input.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::corpus::{Vocabulary, EOS, EOS_TOKEN, SEP};
use crate::error::{Error, Result};

/// A training triple in id space. `supplementary` is the single EOS id when
/// the response had no real supplementary part.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedPair {
    pub post: Vec<u32>,
    pub direct: Vec<u32>,
    pub supplementary: Vec<u32>,
}

impl SegmentedPair {
    pub fn has_placeholder_sup(&self) -> bool {
        self.supplementary == [EOS]
    }
}

/// Token-level (post, direct, supplementary) triple, as cached on disk.
pub type SegmentedTriple = (Vec<String>, Vec<String>, Vec<String>);

pub fn default_punctuation() -> BTreeSet<String> {
    [".", ",", "!", "?", ";", ":"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Cut a response at the midmost punctuation token. Punctuation in final
/// position is not a cut candidate, so a cut never leaves the supplementary
/// side empty. With no candidates the whole response is direct and the
/// supplementary part is the EOS placeholder.
pub fn segment_response(
    response: &[String],
    punct: &BTreeSet<String>,
) -> Result<(Vec<String>, Vec<String>)> {
    if response.is_empty() {
        return Err(Error::Invalid("cannot segment an empty response".into()));
    }
    let candidates: Vec<usize> = response
        .iter()
        .enumerate()
        .take(response.len() - 1)
        .filter(|(_, tok)| punct.contains(tok.as_str()))
        .map(|(i, _)| i)
        .collect();
    if candidates.is_empty() {
        return Ok((response.to_vec(), vec![EOS_TOKEN.to_string()]));
    }
    let cut = candidates[candidates.len() / 2];
    Ok((response[..=cut].to_vec(), response[cut + 1..].to_vec()))
}

/// x_hat = post ++ [SEP] ++ direct.
pub fn make_cvae_input(post: &[u32], direct: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(post.len() + 1 + direct.len());
    out.extend_from_slice(post);
    out.push(SEP);
    out.extend_from_slice(direct);
    out
}

/// Encode a segmented token triple; the "<EOS>" placeholder maps to the EOS id.
pub fn encode_pair(
    vocab: &Vocabulary,
    post: &[String],
    direct: &[String],
    supplementary: &[String],
) -> SegmentedPair {
    SegmentedPair {
        post: vocab.encode(post),
        direct: vocab.encode(direct),
        supplementary: vocab.encode(supplementary),
    }
}

/// Cache format: three TAB-separated columns of space-joined tokens,
/// with the "<EOS>" literal standing in for an absent supplementary part.
pub fn save_segmented(path: &Path, triples: &[SegmentedTriple]) -> Result<()> {
    let mut body = String::new();
    for (post, direct, sup) in triples {
        body.push_str(&post.join(" "));
        body.push('\t');
        body.push_str(&direct.join(" "));
        body.push('\t');
        body.push_str(&sup.join(" "));
        body.push('\n');
    }
    fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_segmented(path: &Path) -> Result<Vec<SegmentedTriple>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, line) in body.lines().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                msg: format!("line {} has {} columns, expected 3", i + 1, cols.len()),
            });
        }
        let split = |s: &str| s.split_whitespace().map(|t| t.to_string()).collect();
        out.push((split(cols[0]), split(cols[1]), split(cols[2])));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokens;
    use proptest::prelude::*;

    fn seg(s: &str) -> (Vec<String>, Vec<String>) {
        segment_response(&tokens(s), &default_punctuation()).unwrap()
    }

    #[test]
    fn splits_at_midmost_punctuation() {
        let (direct, sup) = seg("Yes , I've had it . I tried a new restaurant .");
        assert_eq!(direct.join(" "), "Yes , I've had it .");
        assert_eq!(sup.join(" "), "I tried a new restaurant .");
    }

    #[test]
    fn no_punctuation_yields_placeholder() {
        let (direct, sup) = seg("Nope I'm busy");
        assert_eq!(direct.join(" "), "Nope I'm busy");
        assert_eq!(sup, vec![EOS_TOKEN.to_string()]);
    }

    #[test]
    fn odd_candidate_count_cuts_in_the_middle() {
        let (direct, sup) = seg("a , b . c . d");
        assert_eq!(direct.join(" "), "a , b .");
        assert_eq!(sup.join(" "), "c . d");
    }

    #[test]
    fn lone_final_punctuation_yields_placeholder() {
        let (direct, sup) = seg("that is all .");
        assert_eq!(direct.join(" "), "that is all .");
        assert_eq!(sup, vec![EOS_TOKEN.to_string()]);
    }

    #[test]
    fn empty_response_is_error() {
        assert!(segment_response(&[], &default_punctuation()).is_err());
    }

    #[test]
    fn cvae_input_joins_with_sep() {
        assert_eq!(make_cvae_input(&[5, 6], &[7]), vec![5, 6, SEP, 7]);
        assert_eq!(make_cvae_input(&[9, 10, 11], &[12, 13]).len(), 3 + 1 + 2);
    }

    #[test]
    fn cvae_inputs_share_post_prefix() {
        let a = make_cvae_input(&[5, 6], &[7]);
        let b = make_cvae_input(&[5, 6], &[8, 9]);
        assert_eq!(a[..3], b[..3]);
    }

    #[test]
    fn segmented_cache_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("segmented.tsv");
        let triples = vec![
            (tokens("have you eaten"), tokens("yes ,"), tokens("i had noodles .")),
            (tokens("hello there"), tokens("hi friend"), vec![EOS_TOKEN.to_string()]),
        ];
        save_segmented(&path, &triples).unwrap();
        assert_eq!(load_segmented(&path).unwrap(), triples);
    }

    #[test]
    fn malformed_cache_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("segmented.tsv");
        std::fs::write(&path, "only one column\n").unwrap();
        assert!(matches!(load_segmented(&path), Err(Error::Parse { .. })));
    }

    fn arb_response() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec(
            prop_oneof![
                4 => "[a-f]{1,4}".prop_map(|s| s),
                1 => prop_oneof![Just(".".to_string()), Just(",".to_string()), Just("!".to_string())],
            ],
            1..30,
        )
    }

    proptest! {
        #[test]
        fn rejoining_segments_is_lossless(response in arb_response()) {
            let (direct, sup) = segment_response(&response, &default_punctuation()).unwrap();
            prop_assert!(!direct.is_empty());
            let mut rejoined = direct.clone();
            if sup != vec![EOS_TOKEN.to_string()] {
                prop_assert!(!sup.is_empty());
                rejoined.extend(sup.clone());
            }
            prop_assert_eq!(rejoined, response);
        }

        #[test]
        fn segmentation_is_deterministic(response in arb_response()) {
            let a = segment_response(&response, &default_punctuation()).unwrap();
            let b = segment_response(&response, &default_punctuation()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
