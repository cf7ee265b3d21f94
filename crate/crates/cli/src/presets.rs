//! Shipped experiment configs, selectable by name in place of a file path.

pub const NAMES: &[&str] = &["gm-common", "gm-bimodal", "glm10", "autapse", "hh12", "hh12-gru"];

pub fn get(name: &str) -> Option<&'static str> {
    Some(match name {
        "gm-common" => include_str!("../presets/gm-common.toml"),
        "gm-bimodal" => include_str!("../presets/gm-bimodal.toml"),
        "glm10" => include_str!("../presets/glm10.toml"),
        "autapse" => include_str!("../presets/autapse.toml"),
        "hh12" => include_str!("../presets/hh12.toml"),
        "hh12-gru" => include_str!("../presets/hh12-gru.toml"),
        _ => return None,
    })
}
