//! TSV ingestion and the on-disk split format.
//!
//! Split directories hold `train.tsv`, `valid.tsv`, `test.tsv` (dense
//! `user, session ordinal, item, position` rows), `items.tsv` / `users.tsv`
//! (dense index → raw id) and `manifest.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, InteractionLog, Session, SessionDataset, Split};
use crate::config::hash_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputFormat {
    /// `user_id<TAB>item_id<TAB>timestamp` or
    /// `user_id<TAB>session_id<TAB>item_id<TAB>timestamp`.
    #[default]
    Tsv,
}

fn read_to_string(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.display().to_string(), source })
}

fn write_file(path: &Path, contents: &str) -> Result<(), DatasetError> {
    fs::write(path, contents).map_err(|source| DatasetError::Io { path: path.display().to_string(), source })
}

pub fn load_interactions(path: &Path, format: InputFormat) -> Result<InteractionLog, DatasetError> {
    let InputFormat::Tsv = format;
    let text = read_to_string(path)?;
    parse_tsv(&text)
}

pub(crate) fn parse_tsv(text: &str) -> Result<InteractionLog, DatasetError> {
    let mut rows = Vec::new();
    let mut width = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(DatasetError::Parse {
                line: line_no,
                message: format!("expected 3 or 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let ts_field = fields[fields.len() - 1].trim();
        let timestamp = match ts_field.parse::<i64>() {
            Ok(t) => t,
            // a non-numeric timestamp on the first row marks a header
            Err(_) if rows.is_empty() && width.is_none() => {
                width = Some(fields.len());
                continue;
            }
            Err(_) => {
                return Err(DatasetError::Parse {
                    line: line_no,
                    message: format!("timestamp `{ts_field}` is not an integer"),
                })
            }
        };
        match width {
            Some(w) if w != fields.len() => {
                return Err(DatasetError::Parse {
                    line: line_no,
                    message: format!("expected {w} fields, found {}", fields.len()),
                })
            }
            _ => width = Some(fields.len()),
        }
        let (user, session, item) =
            if fields.len() == 4 { (fields[0], Some(fields[1]), fields[2]) } else { (fields[0], None, fields[1]) };
        rows.push((user, session, item, timestamp));
    }
    if rows.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    Ok(InteractionLog::from_rows(rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub num_items: usize,
    pub num_seen_items: usize,
    pub num_users: usize,
    /// Sessions per split.
    pub counts: SplitCounts,
    /// Interaction rows per split.
    pub interactions: SplitCounts,
    pub avg_session_length: f64,
    /// Hash of the three split files; downstream artifacts record it.
    pub content_hash: String,
}

fn render_split(sessions: &[Session]) -> String {
    let mut out = String::from("user\tsession\titem\tposition\n");
    for s in sessions {
        for (pos, item) in s.items.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", s.user, s.ordinal, item, pos);
        }
    }
    out
}

fn render_ids(ids: &[String]) -> String {
    let mut out = String::from("index\tid\n");
    for (i, id) in ids.iter().enumerate() {
        let _ = writeln!(out, "{i}\t{id}");
    }
    out
}

fn content_hash(rendered: &[String; 3]) -> String {
    let mut bytes = Vec::new();
    for r in rendered {
        bytes.extend_from_slice(r.as_bytes());
        bytes.push(0);
    }
    hash_hex(&bytes)
}

/// Writes the three split files, the id tables and the manifest.
pub fn write_splits(
    dir: &Path,
    dataset: &SessionDataset,
    item_ids: &[String],
    user_ids: &[String],
) -> Result<SplitManifest, DatasetError> {
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io { path: dir.display().to_string(), source })?;
    let rendered = Split::ALL.map(|s| render_split(dataset.split(s)));
    for (split, text) in Split::ALL.iter().zip(&rendered) {
        write_file(&dir.join(format!("{split}.tsv")), text)?;
    }
    write_file(&dir.join("items.tsv"), &render_ids(item_ids))?;
    write_file(&dir.join("users.tsv"), &render_ids(user_ids))?;
    let manifest = manifest_for(dataset, content_hash(&rendered));
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    write_file(&dir.join("manifest.json"), &json)?;
    Ok(manifest)
}

fn manifest_for(dataset: &SessionDataset, content_hash: String) -> SplitManifest {
    let rows = |s: &[Session]| s.iter().map(Session::len).sum::<usize>();
    let total_sessions = dataset.train.len() + dataset.valid.len() + dataset.test.len();
    let total_rows = rows(&dataset.train) + rows(&dataset.valid) + rows(&dataset.test);
    SplitManifest {
        num_items: dataset.num_items,
        num_seen_items: dataset.num_seen_items,
        num_users: dataset.num_users,
        counts: SplitCounts { train: dataset.train.len(), valid: dataset.valid.len(), test: dataset.test.len() },
        interactions: SplitCounts {
            train: rows(&dataset.train),
            valid: rows(&dataset.valid),
            test: rows(&dataset.test),
        },
        avg_session_length: if total_sessions == 0 { 0.0 } else { total_rows as f64 / total_sessions as f64 },
        content_hash,
    }
}

fn parse_split(text: &str) -> Result<Vec<Session>, DatasetError> {
    let mut sessions: Vec<Session> = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let nums: Result<Vec<usize>, _> = line.split('\t').map(str::parse::<usize>).collect();
        let nums = match nums {
            Ok(n) if n.len() == 4 => n,
            _ => {
                return Err(DatasetError::Parse { line: idx + 1, message: "malformed split row".into() });
            }
        };
        let (user, ordinal, item, pos) = (nums[0], nums[1], nums[2], nums[3]);
        match sessions.last_mut() {
            Some(s) if s.user == user && s.ordinal == ordinal && s.items.len() == pos => s.items.push(item),
            _ if pos == 0 => sessions.push(Session { user, items: vec![item], ordinal }),
            _ => {
                return Err(DatasetError::Parse { line: idx + 1, message: "split rows out of order".into() });
            }
        }
    }
    Ok(sessions)
}

/// Reads the split directory written by [`write_splits`] and checks it
/// against its manifest.
pub fn read_splits(dir: &Path) -> Result<(SessionDataset, SplitManifest), DatasetError> {
    let manifest_text = read_to_string(&dir.join("manifest.json"))?;
    let manifest: SplitManifest =
        serde_json::from_str(&manifest_text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    let rendered = Split::ALL.map(|s| read_to_string(&dir.join(format!("{s}.tsv"))));
    let [train, valid, test] = rendered;
    let rendered = [train?, valid?, test?];
    if content_hash(&rendered) != manifest.content_hash {
        return Err(DatasetError::Manifest(format!(
            "split files in {} do not match manifest hash {}",
            dir.display(),
            manifest.content_hash
        )));
    }
    let dataset = SessionDataset {
        train: parse_split(&rendered[0])?,
        valid: parse_split(&rendered[1])?,
        test: parse_split(&rendered[2])?,
        num_items: manifest.num_items,
        num_users: manifest.num_users,
        num_seen_items: manifest.num_seen_items,
        item_order: (0..manifest.num_items).collect(),
    };
    Ok((dataset, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{sessionize, split_dataset};

    #[test]
    fn parses_three_rows_for_one_user() {
        let log = parse_tsv("u1\ta\t3\nu1\tb\t1\nu1\ta\t2\n").unwrap();
        assert_eq!(log.records.len(), 3);
        assert!(log.items.len() <= 3);
        let ts: Vec<i64> = log.records.iter().map(|r| r.timestamp).collect();
        assert_eq!(ts, vec![1, 2, 3]);
    }

    #[test]
    fn header_is_skipped() {
        let log = parse_tsv("user_id\titem_id\ttimestamp\nu\ta\t1\n").unwrap();
        assert_eq!(log.records.len(), 1);
    }

    #[test]
    fn bad_timestamp_reports_line() {
        let err = parse_tsv("u\ta\t1\nu\tb\tnoon\n").unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn wrong_field_count_reports_line() {
        let err = parse_tsv("u\ta\t1\nu\tb\n").unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 2, .. }));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse_tsv(""), Err(DatasetError::EmptyInput)));
        assert!(matches!(parse_tsv("user\titem\tts\n"), Err(DatasetError::EmptyInput)));
    }

    #[test]
    fn four_column_rows_carry_session_ids() {
        let log = parse_tsv("u\ts1\ta\t1\nu\ts1\tb\t2\n").unwrap();
        assert!(log.is_presessionized());
    }

    #[test]
    fn split_files_round_trip() {
        let mut text = String::new();
        for s in 0..10 {
            for k in 0..3 {
                text.push_str(&format!("u\ti{}\t{}\n", (s * 3 + k) % 7, s * 100_000 + k));
            }
        }
        let log = parse_tsv(&text).unwrap();
        let sessions = sessionize(&log, 3600).unwrap();
        let ds = split_dataset(&sessions, 0.1, 0.1).unwrap();
        let ids: Vec<String> = ds.item_order.iter().map(|&i| log.items.id(i).to_owned()).collect();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_splits(dir.path(), &ds, &ids, log.users.ids()).unwrap();
        let (back, m2) = read_splits(dir.path()).unwrap();
        assert_eq!(manifest, m2);
        assert_eq!(back.train, ds.train);
        assert_eq!(back.test, ds.test);
        assert_eq!(manifest.counts, SplitCounts { train: 8, valid: 1, test: 1 });

        fs::write(dir.path().join("test.tsv"), "user\tsession\titem\tposition\n").unwrap();
        assert!(matches!(read_splits(dir.path()), Err(DatasetError::Manifest(_))));
    }
}
