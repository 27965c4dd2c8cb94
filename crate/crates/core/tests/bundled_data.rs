//! The JSON files under `data/` must match the built-in definitions.

use std::path::PathBuf;

use tgl_core::{build_default_hand, build_toy_hand, load_topology, GeneratorConfig, TrainConfig};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

#[test]
fn bundled_topologies_match_the_builders() {
    assert_eq!(load_topology(data("allegro_uskin_384.json")).unwrap(), build_default_hand());
    assert_eq!(load_topology(data("toy_hand_24.json")).unwrap(), build_toy_hand());
}

#[test]
fn bundled_configs_are_the_defaults() {
    assert_eq!(GeneratorConfig::load(data("generator.json")).unwrap(), GeneratorConfig::default());
    let text = std::fs::read_to_string(data("train_default.json")).unwrap();
    let cfg: TrainConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(cfg, TrainConfig::default());
}
