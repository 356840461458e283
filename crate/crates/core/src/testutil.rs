//! Helpers shared by unit and integration tests.

use std::path::PathBuf;

use crate::phonology::{DiacriticPolicy, PhoneFeatureTable};

/// Repository `data/` directory (tests run from the crate root).
pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// The bundled 24-feature table under the pruned diacritic policy.
pub fn shipped_table() -> PhoneFeatureTable {
    PhoneFeatureTable::load(data_dir().join("features.csv"), DiacriticPolicy::Pruned)
        .expect("bundled feature table loads")
}
