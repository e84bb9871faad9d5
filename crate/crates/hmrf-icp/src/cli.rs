//! CLI (stub).
pub fn run() -> i32 { 0 }
