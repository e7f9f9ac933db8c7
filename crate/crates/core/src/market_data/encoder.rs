use std::collections::HashMap;

use crate::error::{Error, Result};

/// Bijective mapping between raw string ids and dense `0..n` integers,
/// assigned in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdEncoder {
    forward: HashMap<String, u32>,
    reverse: Vec<String>,
}

impl IdEncoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuild from a reverse table (dense id -> raw id).
    pub fn from_reverse(reverse: Vec<String>) -> Result<Self> {
        let mut forward = HashMap::with_capacity(reverse.len());
        for (idx, raw) in reverse.iter().enumerate() {
            if forward.insert(raw.clone(), idx as u32).is_some() {
                return Err(Error::invalid(format!("raw id {raw:?} appears twice")));
            }
        }
        Ok(IdEncoder { forward, reverse })
    }

    pub fn intern(&mut self, raw: &str) -> u32 {
        if let Some(&id) = self.forward.get(raw) {
            return id;
        }
        let id = self.reverse.len() as u32;
        self.forward.insert(raw.to_owned(), id);
        self.reverse.push(raw.to_owned());
        id
    }

    pub fn encode(&self, raw: &str) -> Option<u32> {
        self.forward.get(raw).copied()
    }

    pub fn decode(&self, id: u32) -> Option<&str> {
        self.reverse.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.reverse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reverse.is_empty()
    }

    pub fn raw_ids(&self) -> &[String] {
        &self.reverse
    }
}
