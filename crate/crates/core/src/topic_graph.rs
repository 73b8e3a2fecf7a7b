//! TF-IDF topic-word extraction and the dialogue topic graph: directed
//! edges from post topic words to response topic words, weighted by
//! count-normalized co-occurrence probabilities.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TfIdfModel {
    document_frequency: HashMap<String, u32>,
    num_documents: usize,
    stop_words: BTreeSet<String>,
}

/// Each utterance counts as one document.
pub fn fit_tfidf(documents: &[Vec<String>], stop_words: &BTreeSet<String>) -> Result<TfIdfModel> {
    if documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut df: HashMap<String, u32> = HashMap::new();
    for doc in documents {
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for tok in doc {
            if stop_words.contains(tok) {
                continue;
            }
            seen.insert(tok);
        }
        for tok in seen {
            *df.entry(tok.to_string()).or_insert(0) += 1;
        }
    }
    Ok(TfIdfModel {
        document_frequency: df,
        num_documents: documents.len(),
        stop_words: stop_words.clone(),
    })
}

impl TfIdfModel {
    pub fn num_documents(&self) -> usize {
        self.num_documents
    }

    pub fn document_frequency(&self, token: &str) -> Option<u32> {
        self.document_frequency.get(token).copied()
    }

    /// score(w) = tf(w) * ln(N / df(w)), df clamped to at least 1 so unseen
    /// tokens score with full idf. Ties break lexicographically.
    pub fn extract_topics(&self, utterance: &[String], m: usize) -> Vec<String> {
        let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
        for tok in utterance {
            if self.stop_words.contains(tok) {
                continue;
            }
            *tf.entry(tok).or_insert(0) += 1;
        }
        let n = self.num_documents as f64;
        let mut scored: Vec<(&str, f64)> = tf
            .into_iter()
            .map(|(tok, count)| {
                let df = self.document_frequency.get(tok).copied().unwrap_or(1).max(1);
                (tok, count as f64 * (n / df as f64).ln())
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(b.0)));
        scored.truncate(m);
        scored.into_iter().map(|(t, _)| t.to_string()).collect()
    }
}

/// Directed co-occurrence graph; counts per (source, target), probabilities
/// derived as count / total outgoing count of the source.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TopicGraph {
    edges: BTreeMap<String, BTreeMap<String, u64>>,
}

impl TopicGraph {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn num_sources(&self) -> usize {
        self.edges.len()
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.edges.keys().map(|s| s.as_str())
    }

    pub fn add_edge(&mut self, source: &str, target: &str) {
        *self
            .edges
            .entry(source.to_string())
            .or_default()
            .entry(target.to_string())
            .or_insert(0) += 1;
    }

    /// Outgoing edges of `source` as (target, count, probability).
    pub fn neighbors(&self, source: &str) -> Vec<(String, u64, f64)> {
        match self.edges.get(source) {
            None => Vec::new(),
            Some(targets) => {
                let total: u64 = targets.values().sum();
                targets
                    .iter()
                    .map(|(t, &c)| (t.clone(), c, c as f64 / total as f64))
                    .collect()
            }
        }
    }

    /// Pool the neighbors of all query topics and keep the K highest-probability
    /// distinct targets. A target reachable from several sources keeps its
    /// maximum probability; ties break lexicographically.
    pub fn top_k_neighbors(&self, topics: &[String], k: usize) -> Vec<(String, f64)> {
        let mut best: BTreeMap<String, f64> = BTreeMap::new();
        for topic in topics {
            for (target, _, prob) in self.neighbors(topic) {
                let entry = best.entry(target).or_insert(f64::NEG_INFINITY);
                if prob > *entry {
                    *entry = prob;
                }
            }
        }
        let mut pooled: Vec<(String, f64)> = best.into_iter().collect();
        pooled.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        pooled.truncate(k);
        pooled
    }

    /// Header line "TOPICGRAPH v1", then "source<TAB>target<TAB>count" lines.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = String::from("TOPICGRAPH v1\n");
        for (source, targets) in &self.edges {
            for (target, count) in targets {
                body.push_str(&format!("{source}\t{target}\t{count}\n"));
            }
        }
        fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut lines = body.lines();
        if lines.next() != Some("TOPICGRAPH v1") {
            return Err(Error::Parse {
                path: path.display().to_string(),
                msg: "missing TOPICGRAPH v1 header".into(),
            });
        }
        let mut graph = TopicGraph::default();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    msg: format!("line {} has {} columns, expected 3", i + 2, cols.len()),
                });
            }
            let count: u64 = cols[2].parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                msg: format!("line {}: bad count {:?}", i + 2, cols[2]),
            })?;
            *graph
                .edges
                .entry(cols[0].to_string())
                .or_default()
                .entry(cols[1].to_string())
                .or_insert(0) += count;
        }
        Ok(graph)
    }
}

/// Accumulate edges from every post topic word to every response topic word,
/// over the whole corpus of (post tokens, full response tokens).
pub fn build_graph(
    pairs: &[(Vec<String>, Vec<String>)],
    model: &TfIdfModel,
    m: usize,
) -> TopicGraph {
    let mut graph = TopicGraph::default();
    for (post, response) in pairs {
        let post_topics = model.extract_topics(post, m);
        let response_topics = model.extract_topics(response, m);
        for s in &post_topics {
            for t in &response_topics {
                graph.add_edge(s, t);
            }
        }
    }
    graph
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokens;

    fn no_stops() -> BTreeSet<String> {
        BTreeSet::new()
    }

    #[test]
    fn document_frequency_counts_documents() {
        let docs = vec![tokens("a b"), tokens("a c")];
        let model = fit_tfidf(&docs, &no_stops()).unwrap();
        assert_eq!(model.num_documents(), 2);
        assert_eq!(model.document_frequency("a"), Some(2));
        assert_eq!(model.document_frequency("b"), Some(1));
        assert_eq!(model.document_frequency("c"), Some(1));
    }

    #[test]
    fn stop_words_never_enter_the_model() {
        let stops: BTreeSet<String> = ["a".to_string()].into_iter().collect();
        let docs = vec![tokens("a b a")];
        let model = fit_tfidf(&docs, &stops).unwrap();
        assert_eq!(model.document_frequency("a"), None);
        assert_eq!(model.document_frequency("b"), Some(1));
    }

    #[test]
    fn empty_corpus_is_error() {
        assert!(fit_tfidf(&[], &no_stops()).is_err());
    }

    #[test]
    fn rare_word_beats_frequent_word() {
        // df(dinner)=10 over N=10 gives idf 0; df(movie)=1 gives idf ln 10.
        let mut docs: Vec<Vec<String>> = (0..9).map(|_| tokens("dinner")).collect();
        docs.push(tokens("dinner movie"));
        let model = fit_tfidf(&docs, &no_stops()).unwrap();
        let topics = model.extract_topics(&tokens("dinner dinner movie"), 1);
        assert_eq!(topics, vec!["movie".to_string()]);
    }

    #[test]
    fn all_stop_words_give_empty_topics() {
        let stops: BTreeSet<String> = ["the".to_string(), "a".to_string()].into_iter().collect();
        let docs = vec![tokens("the a"), tokens("word")];
        let model = fit_tfidf(&docs, &stops).unwrap();
        assert!(model.extract_topics(&tokens("the a the"), 3).is_empty());
    }

    #[test]
    fn m_larger_than_candidates_returns_all() {
        let docs = vec![tokens("x y")];
        let model = fit_tfidf(&docs, &no_stops()).unwrap();
        let topics = model.extract_topics(&tokens("x y"), 10);
        assert_eq!(topics.len(), 2);
    }

    fn toy_model() -> TfIdfModel {
        fit_tfidf(&[tokens("a b c seen")], &no_stops()).unwrap()
    }

    #[test]
    fn single_pair_normalizes_over_targets() {
        let pairs = vec![(tokens("a"), tokens("b c"))];
        let graph = build_graph(&pairs, &toy_model(), 3);
        let mut ns = graph.neighbors("a");
        ns.sort_by(|x, y| x.0.cmp(&y.0));
        assert_eq!(ns.len(), 2);
        assert!((ns[0].2 - 0.5).abs() < 1e-12);
        assert!((ns[1].2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn probabilities_follow_counts() {
        let mut graph = TopicGraph::default();
        for _ in 0..3 {
            graph.add_edge("a", "b");
        }
        graph.add_edge("a", "c");
        let ns = graph.neighbors("a");
        let b = ns.iter().find(|(t, _, _)| t == "b").unwrap();
        let c = ns.iter().find(|(t, _, _)| t == "c").unwrap();
        assert!((b.2 - 0.75).abs() < 1e-12);
        assert!((c.2 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_topic_side_adds_no_edges() {
        let stops: BTreeSet<String> = ["a".to_string()].into_iter().collect();
        let model = fit_tfidf(&[tokens("a b")], &stops).unwrap();
        let pairs = vec![(tokens("a"), tokens("b"))];
        let graph = build_graph(&pairs, &model, 3);
        assert!(graph.is_empty());
    }

    #[test]
    fn top_k_prefers_highest_probability() {
        let mut graph = TopicGraph::default();
        for _ in 0..3 {
            graph.add_edge("a", "b");
        }
        graph.add_edge("a", "c");
        let top = graph.top_k_neighbors(&[("a".to_string())], 1);
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].0, "b");
        assert!((top[0].1 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn absent_query_word_returns_empty() {
        let graph = TopicGraph::default();
        assert!(graph.top_k_neighbors(&["ghost".to_string()], 5).is_empty());
    }

    #[test]
    fn duplicate_targets_keep_max_probability() {
        let mut graph = TopicGraph::default();
        graph.add_edge("a", "x");
        graph.add_edge("a", "y");
        graph.add_edge("b", "x"); // prob 1.0 from b
        let top = graph.top_k_neighbors(&["a".to_string(), "b".to_string()], 2);
        assert_eq!(top[0].0, "x");
        assert!((top[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(top[1].0, "y");
    }

    #[test]
    fn top_k_is_sorted_and_distinct() {
        let mut graph = TopicGraph::default();
        for t in ["t1", "t2", "t3", "t4"] {
            graph.add_edge("s", t);
        }
        graph.add_edge("s", "t1");
        let top = graph.top_k_neighbors(&["s".to_string()], 10);
        for w in top.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
        let names: BTreeSet<&str> = top.iter().map(|(t, _)| t.as_str()).collect();
        assert_eq!(names.len(), top.len());
    }

    #[test]
    fn save_load_round_trip_preserves_structure() {
        let mut graph = TopicGraph::default();
        graph.add_edge("a", "b");
        graph.add_edge("a", "b");
        graph.add_edge("a", "c");
        graph.add_edge("d", "a");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graph.txt");
        graph.save(&path).unwrap();
        let loaded = TopicGraph::load(&path).unwrap();
        assert_eq!(loaded, graph);
        // probabilities recomputed from stored counts match originals
        for source in graph.sources() {
            for ((_, c1, p1), (_, c2, p2)) in
                graph.neighbors(source).iter().zip(loaded.neighbors(source).iter())
            {
                assert_eq!(c1, c2);
                assert!((p1 - p2).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_edge_file_loads_empty_graph() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graph.txt");
        std::fs::write(&path, "TOPICGRAPH v1\n").unwrap();
        let graph = TopicGraph::load(&path).unwrap();
        assert!(graph.is_empty());
        assert!(graph.top_k_neighbors(&["a".to_string()], 5).is_empty());
    }

    #[test]
    fn malformed_graph_file_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graph.txt");
        std::fs::write(&path, "TOPICGRAPH v1\na\tb\tnot-a-number\n").unwrap();
        assert!(matches!(TopicGraph::load(&path), Err(Error::Parse { .. })));
        std::fs::write(&path, "WRONG HEADER\n").unwrap();
        assert!(matches!(TopicGraph::load(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn corpus_permutation_leaves_counts_unchanged() {
        let docs = vec![tokens("red blue"), tokens("green gold"), tokens("red gold")];
        let model = fit_tfidf(&docs, &no_stops()).unwrap();
        let pairs = vec![
            (tokens("red"), tokens("blue gold")),
            (tokens("green"), tokens("red")),
            (tokens("red"), tokens("gold")),
        ];
        let mut permuted = pairs.clone();
        permuted.reverse();
        assert_eq!(build_graph(&pairs, &model, 3), build_graph(&permuted, &model, 3));
    }

    #[test]
    fn outgoing_probabilities_sum_to_one() {
        let docs = vec![tokens("a b c d e")];
        let model = fit_tfidf(&docs, &no_stops()).unwrap();
        let pairs = vec![
            (tokens("a b"), tokens("c d")),
            (tokens("a"), tokens("e c")),
            (tokens("b"), tokens("d")),
        ];
        let graph = build_graph(&pairs, &model, 5);
        for source in graph.sources() {
            let sum: f64 = graph.neighbors(source).iter().map(|(_, _, p)| p).sum();
            assert!((sum - 1.0).abs() < 1e-9, "source {source} sums to {sum}");
        }
    }
}
