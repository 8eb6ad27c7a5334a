//! Readers for the MovieLens-100K distribution and for generic delimited
//! interaction/attribute exports.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::partition::{partition_users, SensitivePartition};
use crate::error::{Error, Result};

/// One observed interaction after dense re-indexing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user_id: usize,
    pub item_id: usize,
    pub rating: Option<f64>,
    pub timestamp: Option<i64>,
}

/// Loaded interactions plus the attribute partition and the raw-id maps.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub records: Vec<InteractionRecord>,
    pub partition: SensitivePartition,
    /// `user_ids[i]` is the raw id of dense user `i`.
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    /// `1 - interactions / (users · items)`.
    pub fn sparsity(&self) -> f64 {
        let cells = (self.n_users() * self.n_items()) as f64;
        if cells == 0.0 {
            return 0.0;
        }
        1.0 - self.records.len() as f64 / cells
    }
}

/// Maps raw attribute values to the sensitive bit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeMapping {
    pub zero: Vec<String>,
    pub one: Vec<String>,
}

impl Default for AttributeMapping {
    fn default() -> Self {
        Self {
            zero: vec!["M".into()],
            one: vec!["F".into()],
        }
    }
}

impl AttributeMapping {
    pub fn bit(&self, value: &str) -> Option<u8> {
        if self.zero.iter().any(|z| z == value) {
            Some(0)
        } else if self.one.iter().any(|o| o == value) {
            Some(1)
        } else {
            None
        }
    }
}

/// A column addressed by header name or by zero-based position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

/// Column layout of a generic interaction export and its attribute table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    #[serde(default = "tab")]
    pub delimiter: String,
    #[serde(default)]
    pub has_header: bool,
    pub user: ColumnRef,
    pub item: ColumnRef,
    #[serde(default)]
    pub rating: Option<ColumnRef>,
    #[serde(default)]
    pub timestamp: Option<ColumnRef>,
    #[serde(default = "tab")]
    pub attr_delimiter: String,
    #[serde(default)]
    pub attr_has_header: bool,
    pub attr_user: ColumnRef,
    pub attr_value: ColumnRef,
    #[serde(default)]
    pub mapping: AttributeMapping,
}

fn tab() -> String {
    "\t".into()
}

struct RawInteraction {
    user: String,
    item: String,
    rating: Option<f64>,
    timestamp: Option<i64>,
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Loads `u.data` (tab separated user, item, rating, timestamp) and `u.user`
/// (pipe separated id|age|gender|occupation|zip) from `data_dir`.
pub fn load_movielens_100k(data_dir: &Path, mapping: &AttributeMapping) -> Result<Dataset> {
    let data_path = data_dir.join("u.data");
    let user_path = data_dir.join("u.user");
    if !data_path.is_file() {
        return Err(Error::Data(format!("missing file {}", data_path.display())));
    }
    if !user_path.is_file() {
        return Err(Error::Data(format!("missing file {}", user_path.display())));
    }

    let text = read_file(&data_path)?;
    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 2 {
            return Err(parse_err(&data_path, i + 1, "expected user<TAB>item[<TAB>rating<TAB>timestamp]"));
        }
        let rating = match f.get(2) {
            Some(s) => Some(
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(&data_path, i + 1, format!("bad rating {s:?}")))?,
            ),
            None => None,
        };
        let timestamp = match f.get(3) {
            Some(s) => Some(
                s.trim()
                    .parse::<i64>()
                    .map_err(|_| parse_err(&data_path, i + 1, format!("bad timestamp {s:?}")))?,
            ),
            None => None,
        };
        raw.push(RawInteraction {
            user: f[0].trim().to_string(),
            item: f[1].trim().to_string(),
            rating,
            timestamp,
        });
    }

    let text = read_file(&user_path)?;
    let mut attrs = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('|').collect();
        if f.len() < 3 {
            return Err(parse_err(&user_path, i + 1, "expected id|age|gender|..."));
        }
        let bit = mapping.bit(f[2].trim()).ok_or_else(|| {
            parse_err(
                &user_path,
                i + 1,
                format!("attribute value {:?} is not in the binary mapping", f[2]),
            )
        })?;
        attrs.insert(f[0].trim().to_string(), bit);
    }

    assemble(raw, &attrs)
}

fn resolve(col: &ColumnRef, header: Option<&[&str]>, path: &Path) -> Result<usize> {
    match col {
        ColumnRef::Index(i) => Ok(*i),
        ColumnRef::Name(name) => header
            .and_then(|h| h.iter().position(|c| c.trim() == name))
            .ok_or_else(|| {
                Error::Config(format!(
                    "column {name:?} not found in the header of {}",
                    path.display()
                ))
            }),
    }
}

fn field<'a>(fields: &[&'a str], idx: usize, path: &Path, line: usize) -> Result<&'a str> {
    fields
        .get(idx)
        .map(|s| s.trim())
        .ok_or_else(|| parse_err(path, line, format!("missing column {idx}")))
}

/// Loads a delimited interaction file and attribute table described by `columns`.
pub fn load_generic_tsv(interactions: &Path, attributes: &Path, columns: &ColumnMap) -> Result<Dataset> {
    let text = read_file(interactions)?;
    let mut lines = text.lines().enumerate();
    let header: Option<Vec<&str>> = if columns.has_header {
        lines.next().map(|(_, l)| l.split(columns.delimiter.as_str()).collect())
    } else {
        None
    };
    let h = header.as_deref();
    let uc = resolve(&columns.user, h, interactions)?;
    let ic = resolve(&columns.item, h, interactions)?;
    let rc = columns.rating.as_ref().map(|c| resolve(c, h, interactions)).transpose()?;
    let tc = columns.timestamp.as_ref().map(|c| resolve(c, h, interactions)).transpose()?;

    let mut raw = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(columns.delimiter.as_str()).collect();
        let n = i + 1;
        let rating = rc
            .map(|c| {
                let s = field(&f, c, interactions, n)?;
                s.parse::<f64>()
                    .map_err(|_| parse_err(interactions, n, format!("bad rating {s:?}")))
            })
            .transpose()?;
        let timestamp = tc
            .map(|c| {
                let s = field(&f, c, interactions, n)?;
                // Some exports write timestamps as floats.
                s.parse::<i64>()
                    .or_else(|_| s.parse::<f64>().map(|x| x as i64))
                    .map_err(|_| parse_err(interactions, n, format!("bad timestamp {s:?}")))
            })
            .transpose()?;
        raw.push(RawInteraction {
            user: field(&f, uc, interactions, n)?.to_string(),
            item: field(&f, ic, interactions, n)?.to_string(),
            rating,
            timestamp,
        });
    }

    let text = read_file(attributes)?;
    let mut lines = text.lines().enumerate();
    let header: Option<Vec<&str>> = if columns.attr_has_header {
        lines.next().map(|(_, l)| l.split(columns.attr_delimiter.as_str()).collect())
    } else {
        None
    };
    let h = header.as_deref();
    let auc = resolve(&columns.attr_user, h, attributes)?;
    let avc = resolve(&columns.attr_value, h, attributes)?;
    let mut attrs = HashMap::new();
    let mut bad: BTreeMap<String, usize> = BTreeMap::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(columns.attr_delimiter.as_str()).collect();
        let user = field(&f, auc, attributes, i + 1)?;
        let value = field(&f, avc, attributes, i + 1)?;
        match columns.mapping.bit(value) {
            Some(bit) => {
                attrs.insert(user.to_string(), bit);
            }
            None => *bad.entry(value.to_string()).or_default() += 1,
        }
    }
    if !bad.is_empty() {
        let listed: Vec<String> = bad.iter().map(|(v, c)| format!("{v:?} ({c} rows)")).collect();
        return Err(Error::Data(format!(
            "attribute values outside the binary mapping in {}: {}",
            attributes.display(),
            listed.join(", ")
        )));
    }

    assemble(raw, &attrs)
}

/// Sorts raw ids numerically when they all parse as integers, otherwise
/// lexicographically.
fn dense_ids(ids: HashSet<&str>) -> Vec<String> {
    let mut v: Vec<String> = ids.into_iter().map(str::to_string).collect();
    if v.iter().all(|s| s.parse::<u64>().is_ok()) {
        v.sort_by_key(|s| s.parse::<u64>().unwrap());
    } else {
        v.sort();
    }
    v
}

fn assemble(raw: Vec<RawInteraction>, attrs: &HashMap<String, u8>) -> Result<Dataset> {
    if raw.is_empty() {
        return Err(Error::Data("no interactions".into()));
    }
    let user_ids = dense_ids(raw.iter().map(|r| r.user.as_str()).collect());
    let item_ids = dense_ids(raw.iter().map(|r| r.item.as_str()).collect());
    let uidx: HashMap<&str, usize> = user_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let iidx: HashMap<&str, usize> = item_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut labels = Vec::with_capacity(user_ids.len());
    for raw_id in &user_ids {
        match attrs.get(raw_id) {
            Some(&bit) => labels.push(bit),
            None => {
                return Err(Error::Data(format!(
                    "user {raw_id} has interactions but no attribute row"
                )))
            }
        }
    }

    let n_raw = raw.len();
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(n_raw);
    for r in raw {
        let (u, v) = (uidx[r.user.as_str()], iidx[r.item.as_str()]);
        if seen.insert((u, v)) {
            records.push(InteractionRecord {
                user_id: u,
                item_id: v,
                rating: r.rating,
                timestamp: r.timestamp,
            });
        }
    }
    let dropped = n_raw - records.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} duplicate interactions");
    }

    Ok(Dataset {
        records,
        partition: partition_users(&labels)?,
        user_ids,
        item_ids,
    })
}

/// Writes `dense_id<TAB>raw_id` lines.
pub fn write_id_map(path: &Path, ids: &[String]) -> Result<()> {
    let mut out = String::new();
    for (i, raw) in ids.iter().enumerate() {
        out.push_str(&format!("{i}\t{raw}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes `user<TAB>s` lines for the dense users.
pub fn write_attributes(path: &Path, partition: &SensitivePartition) -> Result<()> {
    let mut out = String::new();
    for (u, s) in partition.labels().iter().enumerate() {
        out.push_str(&format!("{u}\t{s}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`write_attributes`].
pub fn read_attributes(path: &Path) -> Result<SensitivePartition> {
    let text = read_file(path)?;
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut f = line.split('\t');
        let (Some(u), Some(s)) = (f.next(), f.next()) else {
            return Err(parse_err(path, i + 1, "expected user<TAB>bit"));
        };
        let u: usize = u.parse().map_err(|_| parse_err(path, i + 1, "bad user id"))?;
        let s: u8 = s.parse().map_err(|_| parse_err(path, i + 1, "bad attribute bit"))?;
        if u != labels.len() {
            return Err(parse_err(path, i + 1, "user ids must be dense and ascending"));
        }
        labels.push(s);
    }
    partition_users(&labels)
}

/// Default data root, taken from `FAIRDGCL_DATA` when set.
pub fn default_data_root() -> PathBuf {
    std::env::var_os("FAIRDGCL_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn three_line_fixture() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "u.data", "10\t5\t4\t100\n3\t5\t2\t200\n10\t7\t5\t300\n");
        write(dir.path(), "u.user", "3|20|F|x|1\n10|30|M|y|2\n");
        let ds = load_movielens_100k(dir.path(), &AttributeMapping::default()).unwrap();
        assert_eq!(ds.user_ids, vec!["3", "10"]);
        assert_eq!(ds.item_ids, vec!["5", "7"]);
        let want = vec![
            InteractionRecord { user_id: 1, item_id: 0, rating: Some(4.0), timestamp: Some(100) },
            InteractionRecord { user_id: 0, item_id: 0, rating: Some(2.0), timestamp: Some(200) },
            InteractionRecord { user_id: 1, item_id: 1, rating: Some(5.0), timestamp: Some(300) },
        ];
        assert_eq!(ds.records, want);
        assert_eq!(ds.partition.labels(), &[1, 0]);
    }

    #[test]
    fn empty_data_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "u.data", "");
        write(dir.path(), "u.user", "1|20|F|x|1\n");
        let err = load_movielens_100k(dir.path(), &AttributeMapping::default()).unwrap_err();
        assert!(err.to_string().contains("no interactions"), "{err}");
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "u.data", "1\t1\t1\t1\n");
        let err = load_movielens_100k(dir.path(), &AttributeMapping::default()).unwrap_err();
        assert!(err.to_string().contains("u.user"), "{err}");
    }

    #[test]
    fn bad_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "u.data", "1\t1\t1\t1\n1\t2\tx\t1\n");
        write(dir.path(), "u.user", "1|20|F|x|1\n");
        let err = load_movielens_100k(dir.path(), &AttributeMapping::default()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn user_without_attributes_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "u.data", "1\t1\t1\t1\n2\t1\t1\t1\n");
        write(dir.path(), "u.user", "1|20|F|x|1\n");
        let err = load_movielens_100k(dir.path(), &AttributeMapping::default()).unwrap_err();
        assert!(err.to_string().contains("no attribute row"), "{err}");
    }

    fn generic_map() -> ColumnMap {
        ColumnMap {
            delimiter: ",".into(),
            has_header: true,
            user: ColumnRef::Name("user".into()),
            item: ColumnRef::Name("item".into()),
            rating: None,
            timestamp: None,
            attr_delimiter: ",".into(),
            attr_has_header: true,
            attr_user: ColumnRef::Name("user".into()),
            attr_value: ColumnRef::Name("gender".into()),
            mapping: AttributeMapping::default(),
        }
    }

    #[test]
    fn generic_single_row() {
        let dir = tempfile::tempdir().unwrap();
        let i = write(dir.path(), "i.csv", "user,item\na,b\n");
        let a = write(dir.path(), "a.csv", "user,gender\na,M\nz,F\n");
        // Only one user interacts, so the partition collapses to one group.
        let err = load_generic_tsv(&i, &a, &generic_map()).unwrap_err();
        assert!(err.to_string().contains("empty group"), "{err}");

        let i = write(dir.path(), "i2.csv", "user,item\na,b\n");
        let mut map = generic_map();
        map.mapping = AttributeMapping { zero: vec!["M".into()], one: vec![] };
        let a = write(dir.path(), "a2.csv", "user,gender\na,M\n");
        assert!(load_generic_tsv(&i, &a, &map).is_err());
    }

    #[test]
    fn generic_shuffled_columns_match() {
        let dir = tempfile::tempdir().unwrap();
        let i1 = write(dir.path(), "i1.csv", "user,item,ts\nu1,x,5\nu2,y,6\nu1,y,7\n");
        let i2 = write(dir.path(), "i2.csv", "ts,item,user\n5,x,u1\n6,y,u2\n7,y,u1\n");
        let a = write(dir.path(), "a.csv", "gender,user\nM,u1\nF,u2\n");
        let mut m = generic_map();
        m.timestamp = Some(ColumnRef::Name("ts".into()));
        let d1 = load_generic_tsv(&i1, &a, &m).unwrap();
        let d2 = load_generic_tsv(&i2, &a, &m).unwrap();
        assert_eq!(d1.records, d2.records);
        assert_eq!(d1.partition, d2.partition);
        assert_eq!(d1.records.len(), 3);

        // Positional addressing gives the same result.
        let mut p = m.clone();
        p.user = ColumnRef::Index(2);
        p.item = ColumnRef::Index(1);
        p.timestamp = Some(ColumnRef::Index(0));
        let d3 = load_generic_tsv(&i2, &a, &p).unwrap();
        assert_eq!(d1.records, d3.records);
    }

    #[test]
    fn generic_unmapped_attribute_lists_value() {
        let dir = tempfile::tempdir().unwrap();
        let i = write(dir.path(), "i.csv", "user,item\na,b\nc,b\n");
        let a = write(dir.path(), "a.csv", "user,gender\na,M\nc,X\n");
        let err = load_generic_tsv(&i, &a, &generic_map()).unwrap_err();
        assert!(err.to_string().contains("\"X\""), "{err}");
    }

    #[test]
    fn duplicates_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "u.data", "1\t1\t1\t1\n1\t1\t3\t2\n2\t1\t1\t1\n");
        write(dir.path(), "u.user", "1|20|F|x|1\n2|20|M|x|1\n");
        let ds = load_movielens_100k(dir.path(), &AttributeMapping::default()).unwrap();
        assert_eq!(ds.records.len(), 2);
    }
}
