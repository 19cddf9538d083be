//! The tool-schema JSON is a wire contract: models are prompted with it and
//! fixtures embed it. The golden file pins every byte.

use mega_core::tools::{registry_schemas, ToolSchema};

const GOLDEN: &str = include_str!("fixtures/tool_schemas.json");

#[test]
fn registry_serialization_matches_the_golden_file_byte_for_byte() {
    let rendered = serde_json::to_string_pretty(registry_schemas()).unwrap() + "\n";
    assert_eq!(rendered, GOLDEN);
}

#[test]
fn golden_file_roundtrips_preserving_parameter_order() {
    let parsed: Vec<ToolSchema> = serde_json::from_str(GOLDEN).unwrap();
    assert_eq!(parsed.as_slice(), registry_schemas());
    let write_file = &parsed[1];
    let names: Vec<&str> = write_file
        .parameters
        .iter()
        .map(|p| p.name.as_str())
        .collect();
    assert_eq!(
        names,
        ["filename", "content"],
        "declared order survives the roundtrip"
    );
}
