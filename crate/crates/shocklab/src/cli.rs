//! Batch CLI: placeholder.
pub fn main_entry() {}
