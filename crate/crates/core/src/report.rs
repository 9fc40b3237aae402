//! Named loss components for logging and inspection.

use alloc::string::String;
use alloc::vec::Vec;

/// Named scalar loss components plus their (possibly weighted) total for
/// one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub components: Vec<(String, f64)>,
    pub total: f64,
}

impl LossReport {
    pub fn new(components: Vec<(String, f64)>, total: f64) -> Self {
        LossReport { components, total }
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }
}
