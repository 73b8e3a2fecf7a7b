//! Reference metrics: BLEU-n with smoothing method 7, Distinct-n, and
//! Fleiss' kappa, plus a corpus-level evaluation report.
//!
//! Smoothing engages only when some order has zero clipped matches, which is
//! the failure mode it exists for; exact matches therefore score 1.0. Method
//! 7 chains method 4 (shrinking invented counts for successive zero orders,
//! scaled by hypothesis length) into method 5 (three-way average with the
//! previous smoothed order and the next raw order).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SMOOTHING_K: f64 = 5.0;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<Vec<String>, u64> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for window in tokens.windows(n) {
        *counts.entry(window.to_vec()).or_insert(0) += 1;
    }
    counts
}

/// Clipped matches and total hypothesis n-grams for one order. The total is
/// clamped to at least 1 so zero-match orders stay well-defined fractions.
fn modified_precision(
    hyp: &[String],
    references: &[Vec<String>],
    n: usize,
) -> (u64, u64) {
    let hyp_counts = ngram_counts(hyp, n);
    let total: u64 = hyp_counts.values().sum();
    let mut matched = 0u64;
    for (gram, &count) in &hyp_counts {
        let best_ref = references
            .iter()
            .map(|r| ngram_counts(r, n).get(gram).copied().unwrap_or(0))
            .max()
            .unwrap_or(0);
        matched += count.min(best_ref);
    }
    (matched, total.max(1))
}

fn closest_ref_len(hyp_len: usize, references: &[Vec<String>]) -> usize {
    references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&rl| {
            let diff = (rl as i64 - hyp_len as i64).abs();
            (diff, rl)
        })
        .unwrap_or(0)
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Chen & Cherry smoothing method 7 over the per-order fractions
/// (matched, total); `next_raw` is the raw order-(n+1) precision used by the
/// method-5 averaging step.
fn smooth7(fractions: &[(u64, u64)], next_raw: f64, hyp_len: usize) -> Vec<f64> {
    // method 4: invented counts for zero-match orders, shrinking by powers of
    // two and scaled by ln(hyp_len)
    let mut values: Vec<f64> = Vec::with_capacity(fractions.len());
    let mut invcnt = 1i32;
    for &(matched, total) in fractions {
        if matched == 0 && hyp_len > 1 {
            let invented = (hyp_len as f64).ln() / (2f64.powi(invcnt) * SMOOTHING_K);
            values.push(invented / total as f64);
            invcnt += 1;
        } else {
            values.push(matched as f64 / total as f64);
        }
    }
    // method 5: running three-way average with the previous smoothed value
    // and the next (unsmoothed) order
    let mut smoothed = Vec::with_capacity(values.len());
    let mut prev = values[0] + 1.0;
    for i in 0..values.len() {
        let next = if i + 1 < values.len() {
            values[i + 1]
        } else {
            next_raw
        };
        let s = (prev + values[i] + next) / 3.0;
        smoothed.push(s);
        prev = s;
    }
    smoothed
}

fn bleu_from_fractions(
    fractions: &[(u64, u64)],
    next_raw: f64,
    hyp_len: usize,
    ref_len: usize,
) -> f64 {
    if hyp_len == 0 {
        return 0.0;
    }
    let bp = brevity_penalty(hyp_len, ref_len);
    let values: Vec<f64> = if fractions.iter().all(|&(m, _)| m > 0) {
        fractions
            .iter()
            .map(|&(m, t)| m as f64 / t as f64)
            .collect()
    } else {
        smooth7(fractions, next_raw, hyp_len)
    };
    if values.iter().any(|&v| v <= 0.0) {
        return 0.0;
    }
    let mean_log = values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64;
    bp * mean_log.exp()
}

/// Sentence-level BLEU-n against one or more references.
pub fn bleu_n(hyp: &[String], references: &[Vec<String>], n: usize) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(Error::Eval(format!("BLEU order {n} not in 1..=4")));
    }
    if references.is_empty() {
        return Err(Error::Eval("BLEU needs at least one reference".into()));
    }
    if hyp.is_empty() {
        return Ok(0.0);
    }
    let fractions: Vec<(u64, u64)> = (1..=n).map(|i| modified_precision(hyp, references, i)).collect();
    let (nm, nt) = modified_precision(hyp, references, n + 1);
    let next_raw = nm as f64 / nt as f64;
    Ok(bleu_from_fractions(
        &fractions,
        next_raw,
        hyp.len(),
        closest_ref_len(hyp.len(), references),
    ))
}

/// Corpus-level BLEU-n: clipped counts aggregated over all aligned pairs
/// before smoothing, not a mean of sentence scores.
pub fn corpus_bleu_n(
    hyps: &[Vec<String>],
    references: &[Vec<String>],
    n: usize,
) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(Error::Eval(format!("BLEU order {n} not in 1..=4")));
    }
    if hyps.len() != references.len() {
        return Err(Error::Eval(format!(
            "{} hypotheses vs {} references",
            hyps.len(),
            references.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::Eval("empty evaluation corpus".into()));
    }
    let mut totals = vec![(0u64, 0u64); n + 1];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, reference) in hyps.iter().zip(references.iter()) {
        let refs = std::slice::from_ref(reference);
        if hyp.is_empty() {
            ref_len += reference.len();
            continue;
        }
        for (i, slot) in totals.iter_mut().enumerate() {
            let (m, t) = modified_precision(hyp, refs, i + 1);
            slot.0 += m;
            slot.1 += t;
        }
        hyp_len += hyp.len();
        ref_len += closest_ref_len(hyp.len(), refs);
    }
    let fractions: Vec<(u64, u64)> = totals[..n]
        .iter()
        .map(|&(m, t)| (m, t.max(1)))
        .collect();
    let next_raw = totals[n].0 as f64 / totals[n].1.max(1) as f64;
    Ok(bleu_from_fractions(&fractions, next_raw, hyp_len, ref_len))
}

/// Distinct n-grams over all responses divided by total n-grams; 0 when no
/// n-grams exist.
pub fn distinct_n(responses: &[Vec<String>], n: usize) -> f64 {
    let mut seen: HashMap<Vec<String>, ()> = HashMap::new();
    let mut total = 0u64;
    for response in responses {
        if response.len() < n || n == 0 {
            continue;
        }
        for window in response.windows(n) {
            seen.entry(window.to_vec()).or_insert(());
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}

/// Fleiss' kappa over an items x categories table of rater counts.
/// Every row must sum to the same rater count. Unanimous agreement returns
/// exactly 1.0 even when expected agreement is also 1.
pub fn fleiss_kappa(table: &[Vec<u64>]) -> Result<f64> {
    if table.len() < 2 {
        return Err(Error::Eval("kappa needs at least 2 items".into()));
    }
    let categories = table[0].len();
    if categories < 2 {
        return Err(Error::Eval("kappa needs at least 2 categories".into()));
    }
    let raters: u64 = table[0].iter().sum();
    if raters < 2 {
        return Err(Error::Eval("kappa needs at least 2 raters".into()));
    }
    for (i, row) in table.iter().enumerate() {
        if row.len() != categories {
            return Err(Error::Eval(format!("row {i} has a different category count")));
        }
        let sum: u64 = row.iter().sum();
        if sum != raters {
            return Err(Error::Eval(format!(
                "row {i} sums to {sum}, expected {raters}"
            )));
        }
    }
    let n_items = table.len() as f64;
    let n_raters = raters as f64;
    let p_bar = table
        .iter()
        .map(|row| {
            let sq: f64 = row.iter().map(|&c| (c * c) as f64).sum();
            (sq - n_raters) / (n_raters * (n_raters - 1.0))
        })
        .sum::<f64>()
        / n_items;
    let p_e = (0..categories)
        .map(|j| {
            let col: f64 = table.iter().map(|row| row[j] as f64).sum();
            let share = col / (n_items * n_raters);
            share * share
        })
        .sum::<f64>();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub distinct1: f64,
    pub distinct2: f64,
    pub num_examples: usize,
}

fn read_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(body
        .lines()
        .map(|l| l.split_whitespace().map(|t| t.to_string()).collect())
        .collect())
}

/// Score a hypotheses file against an aligned single-reference file.
pub fn evaluate_run(hyp_path: &Path, ref_path: &Path) -> Result<EvalReport> {
    let hyps = read_lines(hyp_path)?;
    let refs = read_lines(ref_path)?;
    if hyps.len() != refs.len() {
        return Err(Error::Eval(format!(
            "line count mismatch: {} hypotheses vs {} references",
            hyps.len(),
            refs.len()
        )));
    }
    Ok(EvalReport {
        bleu1: corpus_bleu_n(&hyps, &refs, 1)?,
        bleu2: corpus_bleu_n(&hyps, &refs, 2)?,
        bleu3: corpus_bleu_n(&hyps, &refs, 3)?,
        bleu4: corpus_bleu_n(&hyps, &refs, 4)?,
        distinct1: distinct_n(&hyps, 1),
        distinct2: distinct_n(&hyps, 2),
        num_examples: hyps.len(),
    })
}
