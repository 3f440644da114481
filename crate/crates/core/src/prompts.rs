//! Versioned prompt assets and slot rendering.
//!
//! Templates live as plain-text assets compiled into the binary; a checksum
//! over all of them goes into output metadata so downstream artifacts carry
//! prompt provenance. Slots use `{name}` markers and are substituted by
//! literal replacement, never by a format engine, because several templates
//! contain literal JSON braces.

use sha2::{Digest, Sha256};

pub const RUBRIC_KEYPOINTS: &str = include_str!("../assets/rubric_keypoints.txt");
pub const RUBRIC_CRITERIA: &str = include_str!("../assets/rubric_criteria.txt");
pub const SCORE_KEYPOINTS: &str = include_str!("../assets/score_keypoints.txt");
pub const SCORE_QUALITY: &str = include_str!("../assets/score_quality.txt");
pub const REFLECT: &str = include_str!("../assets/reflect.txt");
pub const REVISE: &str = include_str!("../assets/revise.txt");
pub const DRAFT_SYSTEM: &str = include_str!("../assets/draft_system.txt");
pub const ANSWER_REWARD: &str = include_str!("../assets/answer_reward.txt");
pub const SEGMENT_EXTRACT: &str = include_str!("../assets/segment_extract.txt");
pub const SEGMENT_JUDGE: &str = include_str!("../assets/segment_judge.txt");
pub const PATTERN_CLASSIFY: &str = include_str!("../assets/pattern_classify.txt");
pub const REVISION_CLASSIFY: &str = include_str!("../assets/revision_classify.txt");

/// Every shipped asset, in stable order, as (name, text).
pub const ASSETS: &[(&str, &str)] = &[
    ("rubric_keypoints", RUBRIC_KEYPOINTS),
    ("rubric_criteria", RUBRIC_CRITERIA),
    ("score_keypoints", SCORE_KEYPOINTS),
    ("score_quality", SCORE_QUALITY),
    ("reflect", REFLECT),
    ("revise", REVISE),
    ("draft_system", DRAFT_SYSTEM),
    ("answer_reward", ANSWER_REWARD),
    ("segment_extract", SEGMENT_EXTRACT),
    ("segment_judge", SEGMENT_JUDGE),
    ("pattern_classify", PATTERN_CLASSIFY),
    ("revision_classify", REVISION_CLASSIFY),
];

/// Hex SHA-256 over all prompt assets, recorded in output metadata.
pub fn assets_checksum() -> String {
    let mut hasher = Sha256::new();
    for (name, text) in ASSETS {
        hasher.update(name.as_bytes());
        hasher.update([0]);
        hasher.update(text.as_bytes());
        hasher.update([0]);
    }
    hex::encode(hasher.finalize())
}

/// Substitute `{name}` slots by literal replacement.
pub fn render(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_owned();
    for (name, value) in slots {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}
