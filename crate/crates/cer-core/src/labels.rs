//! Class taxonomies. Two fixed spaces ship with the toolkit: the seven
//! compound expressions and the eight single expressions; custom ordered
//! spaces are supported for tests.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// The seven compound expression classes, in canonical order.
pub const COMPOUND_NAMES: [&str; 7] = [
    "Angrily Surprised",
    "Disgustedly Surprised",
    "Fearfully Surprised",
    "Happily Surprised",
    "Sadly Angry",
    "Sadly Fearful",
    "Sadly Surprised",
];

/// The eight single expression classes, in canonical order.
pub const SINGLE_NAMES: [&str; 8] = [
    "Anger",
    "Contempt",
    "Disgust",
    "Fear",
    "Happiness",
    "Neutral",
    "Sadness",
    "Surprise",
];

/// An ordered, duplicate-free set of class names with a bijective
/// name <-> index mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    names: Vec<String>,
}

impl LabelSpace {
    /// The 7-class compound expression space.
    pub fn compound() -> Self {
        LabelSpace {
            names: COMPOUND_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// The 8-class single expression space.
    pub fn single() -> Self {
        LabelSpace {
            names: SINGLE_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn from_names(names: &[&str]) -> Result<Self> {
        let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        if names.is_empty() {
            return Err(CoreError::Config("label space must be non-empty".into()));
        }
        for (i, a) in names.iter().enumerate() {
            for b in names.iter().skip(i + 1) {
                if a == b {
                    return Err(CoreError::Config(format!("duplicate label name '{a}'")));
                }
            }
        }
        Ok(LabelSpace { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Result<&str> {
        self.names
            .get(index)
            .map(String::as_str)
            .ok_or_else(|| CoreError::Index(format!("label index {index} out of range")))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compound_space_is_the_seven_classes_in_order() {
        let space = LabelSpace::compound();
        assert_eq!(space.len(), 7);
        assert_eq!(space.name(0).unwrap(), "Angrily Surprised");
        assert_eq!(space.name(6).unwrap(), "Sadly Surprised");
        assert_eq!(space.index_of("Happily Surprised"), Some(3));
    }

    #[test]
    fn single_space_is_the_eight_classes_in_order() {
        let space = LabelSpace::single();
        assert_eq!(space.len(), 8);
        assert_eq!(space.name(0).unwrap(), "Anger");
        assert_eq!(space.name(7).unwrap(), "Surprise");
        assert_eq!(space.index_of("Neutral"), Some(5));
    }

    #[test]
    fn round_trip_for_all_indices() {
        for space in [LabelSpace::compound(), LabelSpace::single()] {
            for i in 0..space.len() {
                let name = space.name(i).unwrap();
                assert_eq!(space.index_of(name), Some(i));
            }
        }
    }

    #[test]
    fn duplicates_rejected() {
        assert!(LabelSpace::from_names(&["A", "B", "A"]).is_err());
        assert!(LabelSpace::from_names(&[]).is_err());
    }

    #[test]
    fn unknown_name_is_none() {
        assert_eq!(LabelSpace::compound().index_of("Boredom"), None);
    }
}
