use std::fmt;

/// Condition id: 0 is the null condition, `1..=C` are concepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConceptLabel(pub u32);

impl ConceptLabel {
    pub const NULL: ConceptLabel = ConceptLabel(0);

    pub fn id(self) -> u32 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_null(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for ConceptLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Assigns a concept to an image, e.g. a trained shape classifier.
pub trait ConceptDetector: Sync {
    fn detect(&self, image: &crate::ToyImage) -> ConceptLabel;
}
