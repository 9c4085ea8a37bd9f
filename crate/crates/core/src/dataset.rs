//! The observed dataset: distinct evaluated strings in insertion order.

use std::collections::{HashMap, HashSet};

use crate::types::ObservedRecord;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservedDataset {
    records: Vec<ObservedRecord>,
    index: HashMap<String, usize>,
}

impl ObservedDataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `rec` unless its text is already present. Returns whether the
    /// record was inserted.
    pub fn insert(&mut self, rec: ObservedRecord) -> bool {
        if self.index.contains_key(&rec.text) {
            return false;
        }
        self.index.insert(rec.text.clone(), self.records.len());
        self.records.push(rec);
        true
    }

    pub fn contains(&self, text: &str) -> bool {
        self.index.contains_key(text)
    }

    pub fn get(&self, text: &str) -> Option<&ObservedRecord> {
        self.index.get(text).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[ObservedRecord] {
        &self.records
    }

    pub(crate) fn records_mut(&mut self) -> &mut [ObservedRecord] {
        &mut self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.text.as_str())
    }

    pub fn best_score(&self) -> Option<f64> {
        self.records.iter().map(|r| r.score).min_by(f64::total_cmp)
    }

    /// Up to `k` records with the lowest scores whose texts are not excluded,
    /// ascending by score. Equal scores keep insertion order.
    pub fn top_k(&self, k: usize, exclude: &HashSet<String>) -> Vec<&ObservedRecord> {
        let mut kept: Vec<&ObservedRecord> = self
            .records
            .iter()
            .filter(|r| !exclude.contains(&r.text))
            .collect();
        // stable sort keeps insertion order among ties
        kept.sort_by(|a, b| a.score.total_cmp(&b.score));
        kept.truncate(k);
        kept
    }
}

impl FromIterator<ObservedRecord> for ObservedDataset {
    fn from_iter<I: IntoIterator<Item = ObservedRecord>>(iter: I) -> Self {
        let mut ds = ObservedDataset::new();
        for rec in iter {
            ds.insert(rec);
        }
        ds
    }
}
