use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::tasks::{check_item_id, AnswerSheet};

pub const RELEVANCE_SCHEMA: &str = "steer.relevance";
pub const USERS_SCHEMA: &str = "steer.users";
pub const SCHEMA_VERSION: u64 = 1;

/// One post labeled relevant (1) or not (0) for one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceRecord {
    pub post_id: String,
    pub item_id: u8,
    pub text: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user_id: String,
    pub posts: Vec<String>,
    pub true_sheet: Option<AnswerSheet>,
}

/// Source field names for relevance records, for corpora that use other keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelevanceFieldMap {
    pub post_id: String,
    pub item_id: String,
    pub text: String,
    pub label: String,
}

impl Default for RelevanceFieldMap {
    fn default() -> Self {
        RelevanceFieldMap {
            post_id: "post_id".into(),
            item_id: "item_id".into(),
            text: "text".into(),
            label: "label".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UserFieldMap {
    pub user_id: String,
    pub posts: String,
    pub bdi: String,
}

impl Default for UserFieldMap {
    fn default() -> Self {
        UserFieldMap {
            user_id: "user_id".into(),
            posts: "posts".into(),
            bdi: "bdi".into(),
        }
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Yields `(line number, object)` for every non-blank, non-header line.
fn read_objects(path: &Path, schema: &str) -> Result<Vec<(usize, Map<String, Value>)>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| parse_err(path, lineno, e.to_string()))?;
        let Value::Object(obj) = value else {
            return Err(parse_err(path, lineno, "expected a JSON object"));
        };
        if let Some(found) = obj.get("schema") {
            if found.as_str() != Some(schema) {
                return Err(parse_err(path, lineno, format!("schema {found} is not {schema}")));
            }
            let version = obj.get("version").and_then(Value::as_u64);
            if version != Some(SCHEMA_VERSION) {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("unsupported schema version {version:?}"),
                ));
            }
            continue;
        }
        out.push((lineno, obj));
    }
    Ok(out)
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str, path: &Path, line: usize) -> Result<&'a Value> {
    obj.get(name)
        .ok_or_else(|| parse_err(path, line, format!("missing field `{name}`")))
}

fn id_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

pub fn load_relevance_corpus(path: &Path, fields: &RelevanceFieldMap) -> Result<Vec<RelevanceRecord>> {
    let mut records = Vec::new();
    let mut counts: BTreeMap<u8, [usize; 2]> = BTreeMap::new();
    for (line, obj) in read_objects(path, RELEVANCE_SCHEMA)? {
        let post_id = id_string(field(&obj, &fields.post_id, path, line)?)
            .ok_or_else(|| parse_err(path, line, "post_id must be a string or number"))?;
        let item_id = field(&obj, &fields.item_id, path, line)?
            .as_u64()
            .filter(|&v| v <= u8::MAX as u64)
            .ok_or_else(|| parse_err(path, line, "item_id must be an integer in 1..=21"))? as u8;
        check_item_id(item_id).map_err(|e| parse_err(path, line, e.to_string()))?;
        let text = field(&obj, &fields.text, path, line)?
            .as_str()
            .ok_or_else(|| parse_err(path, line, "text must be a string"))?
            .to_string();
        if text.trim().is_empty() {
            return Err(parse_err(path, line, "text is empty"));
        }
        let label = match field(&obj, &fields.label, path, line)?.as_u64() {
            Some(l @ (0 | 1)) => l as u8,
            _ => return Err(parse_err(path, line, "label must be 0 or 1")),
        };
        counts.entry(item_id).or_default()[label as usize] += 1;
        records.push(RelevanceRecord {
            post_id,
            item_id,
            text,
            label,
        });
    }
    for (item, [neg, pos]) in &counts {
        log::info!("item {item}: {pos} relevant, {neg} non-relevant");
    }
    Ok(records)
}

pub fn load_users(path: &Path, fields: &UserFieldMap) -> Result<Vec<UserHistory>> {
    let mut users = Vec::new();
    for (line, obj) in read_objects(path, USERS_SCHEMA)? {
        let user_id = id_string(field(&obj, &fields.user_id, path, line)?)
            .ok_or_else(|| parse_err(path, line, "user_id must be a string or number"))?;
        let posts = field(&obj, &fields.posts, path, line)?
            .as_array()
            .ok_or_else(|| parse_err(path, line, "posts must be an array"))?
            .iter()
            .map(|p| p.as_str().map(str::to_string))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| parse_err(path, line, "posts must be strings"))?;
        let true_sheet = match obj.get(&fields.bdi) {
            None | Some(Value::Null) => None,
            Some(Value::Array(scores)) => {
                let scores = scores
                    .iter()
                    .map(|s| s.as_u64().filter(|&v| v <= 3).map(|v| v as u8))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| parse_err(path, line, "bdi scores must be integers in 0..=3"))?;
                Some(AnswerSheet::new(user_id.clone(), scores).map_err(|e| parse_err(path, line, e.to_string()))?)
            }
            Some(_) => return Err(parse_err(path, line, "bdi must be an array or null")),
        };
        users.push(UserHistory {
            user_id,
            posts,
            true_sheet,
        });
    }
    Ok(users)
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = Value>) -> Result<()> {
    let mut buf = Vec::new();
    for v in lines {
        serde_json::to_writer(&mut buf, &v)?;
        buf.push(b'\n');
    }
    crate::io::write_atomic(path, &buf)
}

pub fn write_relevance_corpus(path: &Path, records: &[RelevanceRecord]) -> Result<()> {
    let header = json!({"schema": RELEVANCE_SCHEMA, "version": SCHEMA_VERSION});
    write_lines(
        path,
        std::iter::once(header).chain(
            records
                .iter()
                .map(|r| json!({"post_id": r.post_id, "item_id": r.item_id, "text": r.text, "label": r.label})),
        ),
    )
}

pub fn write_users(path: &Path, users: &[UserHistory]) -> Result<()> {
    let header = json!({"schema": USERS_SCHEMA, "version": SCHEMA_VERSION});
    write_lines(
        path,
        std::iter::once(header).chain(users.iter().map(|u| {
            json!({
                "user_id": u.user_id,
                "posts": u.posts,
                "bdi": u.true_sheet.as_ref().map(|s| s.scores.clone()),
            })
        })),
    )
}

// Keep the writer usable for callers that stream to stdout.
pub fn write_relevance_lines<W: Write>(mut w: W, records: &[RelevanceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
