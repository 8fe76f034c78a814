use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered list of event class names; a class is referred to by its index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassList(Vec<String>);

impl ClassList {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let unique: BTreeSet<&String> = names.iter().collect();
        if names.is_empty() || unique.len() != names.len() {
            return Err(Error::Config("class list must be non-empty and unique".into()));
        }
        Ok(Self(names))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn name(&self, index: usize) -> &str {
        &self.0[index]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.0
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    pub fn label_set<S: AsRef<str>>(&self, names: impl IntoIterator<Item = S>) -> Result<LabelSet> {
        names
            .into_iter()
            .map(|n| self.index_of(n.as_ref()))
            .collect::<Result<BTreeSet<_>>>()
            .map(LabelSet)
    }

    pub fn names_of(&self, labels: &LabelSet) -> Vec<String> {
        labels.iter().map(|c| self.0[c].clone()).collect()
    }
}

/// Set of class indices attached to a segment. Empty means "no target events".
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(BTreeSet<usize>);

impl LabelSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, class: usize) {
        self.0.insert(class);
    }

    pub fn contains(&self, class: usize) -> bool {
        self.0.contains(&class)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    /// Multi-hot target of length `n_classes`.
    pub fn to_target(&self, n_classes: usize) -> Vec<f64> {
        let mut t = vec![0.0; n_classes];
        for c in self.iter().filter(|&c| c < n_classes) {
            t[c] = 1.0;
        }
        t
    }
}

impl FromIterator<usize> for LabelSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// `|a ∩ b| / |a ∪ b|`, defined as 1 when both sets are empty.
pub fn jaccard_similarity(a: &LabelSet, b: &LabelSet) -> f64 {
    let union = a.0.union(&b.0).count();
    if union == 0 {
        return 1.0;
    }
    a.0.intersection(&b.0).count() as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[usize]) -> LabelSet {
        v.iter().copied().collect()
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard_similarity(&set(&[]), &set(&[])), 1.0);
        assert_eq!(jaccard_similarity(&set(&[1, 2]), &set(&[1, 2])), 1.0);
        assert!((jaccard_similarity(&set(&[1, 2]), &set(&[2, 3])) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard_similarity(&set(&[1]), &set(&[])), 0.0);
    }

    #[test]
    fn class_list_lookup() {
        let classes = ClassList::new(["cry", "gun", "glass"]).unwrap();
        assert_eq!(classes.label_set(["glass", "cry"]).unwrap(), set(&[0, 2]));
        assert!(matches!(classes.label_set(["dog"]), Err(Error::UnknownClass(_))));
        assert!(ClassList::new(["a", "a"]).is_err());
        assert_eq!(set(&[2]).to_target(3), vec![0.0, 0.0, 1.0]);
    }
}
