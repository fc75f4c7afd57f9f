//! Hierarchical diagnosis codes to binary node vectors.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub const PREVALENCE_CUTOFF: f64 = 0.01;
/// Diagnoses are admitted only if recorded before hour 5 begins.
pub const DIAGNOSIS_CUTOFF_MINUTES: f64 = 240.0;

/// Every prefix of a `|`-separated path: `a|b|c` gives `a`, `a|b`, `a|b|c`.
pub fn ancestors(path: &str) -> Vec<String> {
    let parts: Vec<&str> = path.split('|').map(str::trim).collect();
    (1..=parts.len()).map(|n| parts[..n].join("|")).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisCodebook {
    /// Retained nodes in sorted order.
    pub nodes: Vec<String>,
    /// Training prevalence of each retained node.
    pub prevalence: Vec<f64>,
}

impl DiagnosisCodebook {
    /// Builds the codebook from the training stays' code paths.
    pub fn fit<'a, I, S>(training_stays: I, cutoff: f64) -> DiagnosisCodebook
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut n = 0usize;
        for stay in training_stays {
            n += 1;
            let nodes: BTreeSet<String> = stay.into_iter().flat_map(ancestors).collect();
            for node in nodes {
                *counts.entry(node).or_default() += 1;
            }
        }
        let mut book = DiagnosisCodebook::default();
        if n == 0 {
            return book;
        }
        // A parent's prevalence is never below its child's, so the cut keeps
        // the retained set closed under ancestors.
        for (node, c) in counts {
            let p = c as f64 / n as f64;
            if p >= cutoff {
                book.nodes.push(node);
                book.prevalence.push(p);
            }
        }
        book
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn encode<'a>(&self, paths: impl IntoIterator<Item = &'a str>) -> Vec<f64> {
        encode_diagnoses(paths, self)
    }
}

pub fn encode_diagnoses<'a>(
    paths: impl IntoIterator<Item = &'a str>,
    codebook: &DiagnosisCodebook,
) -> Vec<f64> {
    let mut bits = vec![0.0; codebook.nodes.len()];
    for path in paths {
        for node in ancestors(path) {
            if let Ok(i) = codebook.nodes.binary_search(&node) {
                bits[i] = 1.0;
            }
        }
    }
    bits
}
