use std::fmt::Write;

use crate::{Error, Result};

/// A region or phase as it appears in the prompt: the display name listed in
/// brackets and the short name used in the `w_<short>` format placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSlot {
    pub name: String,
    pub short: String,
}

impl PromptSlot {
    pub fn new(name: impl Into<String>, short: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            short: short.into(),
        }
    }

    /// Capitalized display name, lowercase placeholder.
    pub fn from_label(label: &str) -> Self {
        let mut chars = label.chars();
        let name = match chars.next() {
            Some(c) => c.to_uppercase().chain(chars).collect(),
            None => String::new(),
        };
        Self {
            name,
            short: label.to_lowercase(),
        }
    }
}

/// Regions and phases of the stock Kinect-25 partition, as named in the prompt.
pub fn default_prompt_slots() -> (Vec<PromptSlot>, Vec<PromptSlot>) {
    let spatial = [
        ("Head", "head"),
        ("Torso", "torso"),
        ("Arms", "arms"),
        ("Legs", "legs"),
    ];
    let temporal = [("Beginning", "begin"), ("Middle", "mid"), ("End", "end")];
    (
        spatial
            .iter()
            .map(|(n, s)| PromptSlot::new(*n, *s))
            .collect(),
        temporal
            .iter()
            .map(|(n, s)| PromptSlot::new(*n, *s))
            .collect(),
    )
}

fn count_word(n: usize) -> String {
    const WORDS: [&str; 11] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    WORDS
        .get(n)
        .map_or_else(|| n.to_string(), |w| (*w).to_string())
}

fn bracket(slots: &[PromptSlot], f: impl Fn(&PromptSlot) -> String) -> String {
    let items: Vec<String> = slots.iter().map(f).collect();
    format!("[{}]", items.join(", "))
}

/// Per-class prompt asking for spatial and temporal importances and gamma.
pub fn build_prompt(
    action: &str,
    spatial: &[PromptSlot],
    temporal: &[PromptSlot],
) -> Result<String> {
    let action = action.trim();
    if action.is_empty() {
        return Err(Error::validation("action name must not be empty"));
    }
    if spatial.is_empty() || temporal.is_empty() {
        return Err(Error::validation(
            "prompt needs at least one region and one phase",
        ));
    }
    let regions = bracket(spatial, |s| s.name.clone());
    let region_keys = bracket(spatial, |s| format!("w_{}", s.short));
    let phases = bracket(temporal, |s| s.name.clone());
    let phase_keys = bracket(temporal, |s| format!("w_{}", s.short));

    let mut p = String::new();
    // writes into a String cannot fail
    let _ = writeln!(p, "You are an expert in human-action understanding.");
    let _ = writeln!(p, "Given the action class {action}, answer the following three questions without adding commentary.");
    let _ = writeln!(p);
    let _ = writeln!(p, "1. Spatial importance.");
    let _ = writeln!(
        p,
        "   The human body is divided into {} regions:",
        count_word(spatial.len())
    );
    let _ = writeln!(p, "   {regions}.");
    let _ = writeln!(
        p,
        "   Provide a list of {} non-negative numbers that sum to 1, corresponding to the relative importance of each region for recognising {action}.",
        count_word(spatial.len())
    );
    let _ = writeln!(p, "   Format:");
    let _ = writeln!(p, "   \"spatial\": {region_keys}");
    let _ = writeln!(p, "2. Temporal importance.");
    let _ = writeln!(
        p,
        "   The action sequence is divided into {} phases:",
        count_word(temporal.len())
    );
    let _ = writeln!(p, "   {phases}.");
    let _ = writeln!(
        p,
        "   Provide a list of {} non-negative numbers that sum to 1, indicating the relative importance of each phase.",
        count_word(temporal.len())
    );
    let _ = writeln!(p, "   Format:");
    let _ = writeln!(p, "   \"temporal\": {phase_keys}");
    let _ = writeln!(p, "3. Global vs local preference.");
    let _ = writeln!(
        p,
        "   Provide a single number γ ∈ [0,1] indicating how much the action should be recognised holistically (γ ≈ 1) versus by local parts/phases (γ ≈ 0)."
    );
    let _ = writeln!(p, "   Format:");
    let _ = writeln!(p, "   \"gamma\": γ");
    let _ = writeln!(p);
    let _ = writeln!(
        p,
        "Return one compact JSON object with keys \"spatial\", \"temporal\", and \"gamma\"."
    );
    let _ = write!(p, "Do not include any other keys, text, or explanations.");
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_prompt_mentions_everything() {
        let (s, t) = default_prompt_slots();
        let p = build_prompt("waving", &s, &t).unwrap();
        assert!(p.contains("Given the action class waving,"));
        assert!(p.contains("recognising waving."));
        assert!(p.contains("1. Spatial importance."));
        assert!(p.contains("2. Temporal importance."));
        assert!(p.contains("3. Global vs local preference."));
        assert!(p.contains("[Head, Torso, Arms, Legs]"));
        assert!(p.contains("\"spatial\": [w_head, w_torso, w_arms, w_legs]"));
        assert!(p.contains("\"temporal\": [w_begin, w_mid, w_end]"));
        assert!(p.contains("divided into four regions"));
        assert!(p.contains("divided into three phases"));
        assert!(p.contains("keys \"spatial\", \"temporal\", and \"gamma\""));
    }

    #[test]
    fn deterministic_and_validated() {
        let (s, t) = default_prompt_slots();
        assert_eq!(
            build_prompt("jump up", &s, &t).unwrap(),
            build_prompt("jump up", &s, &t).unwrap()
        );
        assert!(matches!(
            build_prompt("  ", &s, &t),
            Err(Error::Validation(_))
        ));
        assert!(build_prompt("x", &[], &t).is_err());
    }

    #[test]
    fn custom_slots() {
        let s = vec![
            PromptSlot::from_label("upper"),
            PromptSlot::from_label("lower"),
        ];
        let t = vec![PromptSlot::from_label("all")];
        let p = build_prompt("sit", &s, &t).unwrap();
        assert!(p.contains("divided into two regions"));
        assert!(p.contains("[Upper, Lower]"));
        assert!(p.contains("\"temporal\": [w_all]"));
    }
}
