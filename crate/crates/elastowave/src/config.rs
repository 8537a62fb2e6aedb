//! Placeholder; implemented in a later change.
