//! Closed phrase bank for templated commander/follower dialog.

use std::f64::consts::PI;

/// Every word the templates can emit, in vocabulary order.
pub const WORDS: &[&str] = &[
    "go", "forward", "turn", "slightly", "sharply", "left", "right", "around", "head", "north",
    "south", "east", "west", "northeast", "northwest", "southeast", "southwest", "and", "then",
    "fly", "about", "meters", "the", "destination", "is", "a", "bright", "dark", "gray", "open",
    "area", "field", "patch", "stop", "above", "it", "there", "where", "should", "i", "now",
    "which", "way", "next", "keep", "going", "do", "here", "stay", "below", "you", "are",
    "already", "over", "look", "for", "10", "20", "30", "40", "50", "60", "70", "80", "90",
    "100", "110", "120", "130", "140", "150", "160", "170", "180", "190", "200",
];

pub const QUESTIONS: &[&str] = &[
    "where should i go now",
    "which way next",
    "should i keep going",
    "do i turn here",
];

/// Phrases that mark an instruction as egocentric (relative to the heading).
pub const EGOCENTRIC_MARKERS: &[&str] = &[
    "go forward",
    "turn slightly left",
    "turn slightly right",
    "turn left",
    "turn right",
    "turn sharply left",
    "turn sharply right",
    "turn around",
];

/// Phrases that mark an instruction as allocentric (compass directions).
pub const ALLOCENTRIC_MARKERS: &[&str] = &[
    "head north",
    "head south",
    "head east",
    "head west",
    "head northeast",
    "head northwest",
    "head southeast",
    "head southwest",
];

/// Relative bearing in `(-π, π]`; positive turns left (counter-clockwise).
pub fn relative_bearing(heading: f64, direction: f64) -> f64 {
    let mut b = (direction - heading).rem_euclid(2.0 * PI);
    if b > PI {
        b -= 2.0 * PI;
    }
    b
}

pub fn egocentric_phrase(bearing: f64) -> &'static str {
    let deg = bearing.to_degrees();
    let side_left = deg > 0.0;
    match deg.abs() {
        a if a <= 20.0 => "go forward",
        a if a <= 60.0 => {
            if side_left {
                "turn slightly left"
            } else {
                "turn slightly right"
            }
        }
        a if a <= 120.0 => {
            if side_left {
                "turn left"
            } else {
                "turn right"
            }
        }
        a if a <= 160.0 => {
            if side_left {
                "turn sharply left"
            } else {
                "turn sharply right"
            }
        }
        _ => "turn around",
    }
}

/// Compass phrase for a world direction (0 = east, counter-clockwise).
pub fn allocentric_phrase(direction: f64) -> &'static str {
    const SECTORS: [&str; 8] = [
        "head east",
        "head northeast",
        "head north",
        "head northwest",
        "head west",
        "head southwest",
        "head south",
        "head southeast",
    ];
    let idx = ((direction.rem_euclid(2.0 * PI) + PI / 8.0) / (PI / 4.0)).floor() as usize % 8;
    SECTORS[idx]
}

pub fn distance_phrase(meters: f64) -> String {
    let tens = ((meters / 10.0).round() as i64).clamp(1, 20) * 10;
    format!("fly about {tens} meters")
}

/// Describes the ground brightness at the goal.
pub fn goal_descriptor(brightness: f64) -> &'static str {
    if brightness > 0.6 {
        "the destination is a bright open area"
    } else if brightness < 0.4 {
        "the destination is a dark field"
    } else {
        "the destination is a gray patch"
    }
}

pub fn contains_phrase(text: &str, markers: &[&str]) -> bool {
    let padded = format!(" {} ", text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" "));
    markers.iter().any(|m| padded.contains(&format!(" {m} ")))
}
