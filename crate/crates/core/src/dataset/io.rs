//! JSON-lines episode files: one record per line, each carrying
//! `schema_version`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use super::Episode;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Serialize)]
struct Record<'a> {
    schema_version: u64,
    #[serde(flatten)]
    episode: &'a Episode,
}

pub fn write_episodes<W: Write>(mut out: W, episodes: &[Episode]) -> Result<()> {
    for e in episodes {
        serde_json::to_writer(
            &mut out,
            &Record {
                schema_version: SCHEMA_VERSION,
                episode: e,
            },
        )?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_episodes(episodes: &[Episode], path: impl AsRef<Path>) -> Result<()> {
    write_episodes(BufWriter::new(File::create(path)?), episodes)
}

fn field<T: DeserializeOwned>(obj: &mut Map<String, Value>, name: &str, line: usize) -> Result<T> {
    let value = obj.remove(name).ok_or_else(|| Error::Record {
        line,
        field: name.to_string(),
        message: "missing".into(),
    })?;
    serde_json::from_value(value).map_err(|e| Error::Record {
        line,
        field: name.to_string(),
        message: e.to_string(),
    })
}

/// Parses one record; `line` is 1-based and only used in errors.
pub(crate) fn parse_record(text: &str, line: usize) -> Result<Episode> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Record {
        line,
        field: "<record>".into(),
        message: e.to_string(),
    })?;
    let Value::Object(mut obj) = value else {
        return Err(Error::Record {
            line,
            field: "<record>".into(),
            message: "expected a JSON object".into(),
        });
    };
    let version: u64 = field(&mut obj, "schema_version", line)?;
    if version != SCHEMA_VERSION {
        return Err(Error::Record {
            line,
            field: "schema_version".into(),
            message: format!("unsupported version {version}"),
        });
    }
    let episode = Episode {
        id: field(&mut obj, "id", line)?,
        map_seed: field(&mut obj, "map_seed", line)?,
        world_side: field(&mut obj, "world_side", line)?,
        start_view: field(&mut obj, "start_view", line)?,
        start_direction: field(&mut obj, "start_direction", line)?,
        goal: field(&mut obj, "goal", line)?,
        max_steps: field(&mut obj, "max_steps", line)?,
        dialog: field(&mut obj, "dialog", line)?,
        gt_trajectory: field(&mut obj, "gt_trajectory", line)?,
        gt_attention: field(&mut obj, "gt_attention", line)?,
    };
    episode.validate().map_err(|(f, message)| Error::Record {
        line,
        field: f.to_string(),
        message,
    })?;
    Ok(episode)
}

pub fn read_episodes<R: Read>(input: R) -> Result<Vec<Episode>> {
    let mut episodes = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        episodes.push(parse_record(&line, i + 1)?);
    }
    Ok(episodes)
}

pub fn load_episodes(path: impl AsRef<Path>) -> Result<Vec<Episode>> {
    read_episodes(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_episodes, GeneratorConfig};

    #[test]
    fn round_trip_generated_episodes() {
        let eps = generate_episodes(21, 10, &GeneratorConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eps.jsonl");
        save_episodes(&eps, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 10);
        assert!(text.lines().all(|l| l.contains("\"schema_version\":1")));
        assert_eq!(load_episodes(&path).unwrap(), eps);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        assert!(read_episodes(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn missing_goal_names_line_and_field() {
        let eps = generate_episodes(2, 2, &GeneratorConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_episodes(&mut buf, &eps).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let mut v: Value = serde_json::from_str(&lines[1]).unwrap();
        v.as_object_mut().unwrap().remove("goal");
        lines[1] = v.to_string();
        match read_episodes(lines.join("\n").as_bytes()) {
            Err(Error::Record { line, field, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "goal");
            }
            other => panic!("expected record error, got {other:?}"),
        }
    }

    #[test]
    fn invariant_violation_names_field() {
        let mut e = generate_episodes(4, 1, &GeneratorConfig::default()).unwrap().remove(0);
        e.gt_attention.pop();
        let mut buf = Vec::new();
        write_episodes(&mut buf, &[e]).unwrap();
        match read_episodes(&buf[..]) {
            Err(Error::Record { line: 1, field, .. }) => assert_eq!(field, "gt_attention"),
            other => panic!("expected record error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let e = generate_episodes(4, 1, &GeneratorConfig::default()).unwrap().remove(0);
        let mut buf = Vec::new();
        write_episodes(&mut buf, &[e]).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("\"schema_version\":1", "\"schema_version\":7");
        match read_episodes(text.as_bytes()) {
            Err(Error::Record { field, .. }) => assert_eq!(field, "schema_version"),
            other => panic!("expected record error, got {other:?}"),
        }
    }
}
