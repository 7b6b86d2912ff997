//! MovieLens-1M parsing, labeling, context derivation and splitting.
//!
//! Input files use `::` separators and latin-1 text. Everything downstream of
//! the parsers is UTF-8.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const AGE_CODES: [u8; 7] = [1, 18, 25, 35, 45, 50, 56];
pub const MAX_OCCUPATION: u8 = 20;
pub const DEFAULT_THRESHOLD: u8 = 4;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: malformed record ({reason})")]
    MalformedLine { line: usize, reason: String },

    #[error("line {line}: invalid {field} code {value}")]
    InvalidCode {
        line: usize,
        field: &'static str,
        value: i64,
    },

    #[error("line {line}: duplicate {kind} id {id}")]
    DuplicateId {
        line: usize,
        kind: &'static str,
        id: u32,
    },

    #[error("rating {rating} outside 1..=5{}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    RatingOutOfRange { rating: i64, line: Option<usize> },

    #[error("interaction references unknown {kind} {id}")]
    UnknownReference { kind: &'static str, id: u32 },

    #[error("split ratios {0:?} must be positive and sum to 1")]
    BadRatios((f64, f64, f64)),

    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<DataError>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    fn in_file(self, path: &Path) -> DataError {
        DataError::InFile {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
}

impl Gender {
    pub fn code(self) -> &'static str {
        match self {
            Gender::F => "F",
            Gender::M => "M",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawUser {
    pub user_id: u32,
    pub gender: Gender,
    pub age_code: u8,
    pub occupation_code: u8,
    pub zip: String,
}

impl RawUser {
    pub fn to_ml1m_line(&self) -> String {
        format!(
            "{}::{}::{}::{}::{}",
            self.user_id,
            self.gender.code(),
            self.age_code,
            self.occupation_code,
            self.zip
        )
    }

    /// First three characters of the zip code; the prefix feature.
    pub fn zip_prefix(&self) -> String {
        self.zip.chars().take(3).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawItem {
    pub item_id: u32,
    pub title: String,
    pub release_year: Option<u16>,
    pub genres: Vec<String>,
}

impl RawItem {
    pub fn to_ml1m_line(&self) -> String {
        let title = match self.release_year {
            Some(y) => format!("{} ({y})", self.title),
            None => self.title.clone(),
        };
        format!("{}::{}::{}", self.item_id, title, self.genres.join("|"))
    }

    /// `"1990s"`-style decade label, if the year is known.
    pub fn decade(&self) -> Option<String> {
        self.release_year.map(|y| format!("{}s", y / 10 * 10))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawInteraction {
    pub user_id: u32,
    pub item_id: u32,
    pub rating: u8,
    pub timestamp: i64,
}

impl RawInteraction {
    pub fn to_ml1m_line(&self) -> String {
        format!(
            "{}::{}::{}::{}",
            self.user_id, self.item_id, self.rating, self.timestamp
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Weekday {
    Mon,
    Tue,
    Wed,
    Thu,
    Fri,
    Sat,
    Sun,
}

impl Weekday {
    pub const ALL: [Weekday; 7] = [
        Weekday::Mon,
        Weekday::Tue,
        Weekday::Wed,
        Weekday::Thu,
        Weekday::Fri,
        Weekday::Sat,
        Weekday::Sun,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Weekday::Mon => "Monday",
            Weekday::Tue => "Tuesday",
            Weekday::Wed => "Wednesday",
            Weekday::Thu => "Thursday",
            Weekday::Fri => "Friday",
            Weekday::Sat => "Saturday",
            Weekday::Sun => "Sunday",
        }
    }

    fn parse(s: &str) -> Option<Weekday> {
        Weekday::ALL.into_iter().find(|w| w.short() == s)
    }

    pub fn short(self) -> &'static str {
        &self.name()[..3]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Daypart {
    LateNight,
    Morning,
    Afternoon,
    Evening,
}

impl Daypart {
    pub fn from_hour(hour: u8) -> Daypart {
        match hour {
            0..=5 => Daypart::LateNight,
            6..=11 => Daypart::Morning,
            12..=17 => Daypart::Afternoon,
            _ => Daypart::Evening,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Daypart::LateNight => "late-night",
            Daypart::Morning => "morning",
            Daypart::Afternoon => "afternoon",
            Daypart::Evening => "evening",
        }
    }

    fn parse(s: &str) -> Option<Daypart> {
        [
            Daypart::LateNight,
            Daypart::Morning,
            Daypart::Afternoon,
            Daypart::Evening,
        ]
        .into_iter()
        .find(|d| d.label() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextFields {
    pub hour_of_day: u8,
    pub day_of_week: Weekday,
    pub daypart: Daypart,
}

impl ContextFields {
    pub fn new(hour_of_day: u8, day_of_week: Weekday) -> Self {
        ContextFields {
            hour_of_day,
            day_of_week,
            daypart: Daypart::from_hour(hour_of_day),
        }
    }

    /// Key shared by all contexts that verbalize identically.
    pub fn key(&self) -> String {
        format!("{}-{}", self.day_of_week.short(), self.daypart.label())
    }
}

/// Context from a Unix timestamp, in UTC.
pub fn derive_context(timestamp: i64) -> ContextFields {
    let days = timestamp.div_euclid(86_400);
    let secs = timestamp.rem_euclid(86_400);
    // 1970-01-01 was a Thursday (index 3 with Monday = 0).
    let weekday = Weekday::ALL[(days + 3).rem_euclid(7) as usize];
    ContextFields::new((secs / 3600) as u8, weekday)
}

pub fn binarize_label(rating: u8, threshold: u8) -> Result<u8> {
    if !(1..=5).contains(&rating) {
        return Err(DataError::RatingOutOfRange {
            rating: rating as i64,
            line: None,
        });
    }
    Ok((rating >= threshold) as u8)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub user_id: u32,
    pub item_id: u32,
    pub timestamp: i64,
    pub context: ContextFields,
    pub label: u8,
    pub original_rating: u8,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub users: usize,
    pub items: usize,
    pub examples: usize,
    pub positives: usize,
}

impl SplitStats {
    pub fn of(examples: &[LabeledExample]) -> Self {
        let users: HashSet<u32> = examples.iter().map(|e| e.user_id).collect();
        let items: HashSet<u32> = examples.iter().map(|e| e.item_id).collect();
        SplitStats {
            users: users.len(),
            items: items.len(),
            examples: examples.len(),
            positives: examples.iter().filter(|e| e.label == 1).count(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledExample>,
    pub valid: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub stats: SplitStats,
}

impl fmt::Display for SplitStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} users, {} items, {} examples ({} positive)",
            self.users, self.items, self.examples, self.positives
        )
    }
}

fn fields<'a>(line: &'a str, line_no: usize, expected: usize) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = line.split("::").collect();
    if parts.len() != expected {
        return Err(DataError::MalformedLine {
            line: line_no,
            reason: format!("expected {expected} fields, found {}", parts.len()),
        });
    }
    Ok(parts)
}

fn number<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| DataError::MalformedLine {
        line,
        reason: format!("{what} {s:?} is not a number"),
    })
}

/// Non-empty lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn parse_users_str(text: &str) -> Result<Vec<RawUser>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in lines(text) {
        let f = fields(line, n, 5)?;
        let user_id: u32 = number(f[0], n, "user id")?;
        let gender = match f[1] {
            "F" => Gender::F,
            "M" => Gender::M,
            other => {
                return Err(DataError::MalformedLine {
                    line: n,
                    reason: format!("gender {other:?}"),
                })
            }
        };
        let age: i64 = number(f[2], n, "age")?;
        if !AGE_CODES.iter().any(|&c| c as i64 == age) {
            return Err(DataError::InvalidCode {
                line: n,
                field: "age",
                value: age,
            });
        }
        let occupation: i64 = number(f[3], n, "occupation")?;
        if !(0..=MAX_OCCUPATION as i64).contains(&occupation) {
            return Err(DataError::InvalidCode {
                line: n,
                field: "occupation",
                value: occupation,
            });
        }
        if !seen.insert(user_id) {
            return Err(DataError::DuplicateId {
                line: n,
                kind: "user",
                id: user_id,
            });
        }
        out.push(RawUser {
            user_id,
            gender,
            age_code: age as u8,
            occupation_code: occupation as u8,
            zip: f[4].to_string(),
        });
    }
    Ok(out)
}

/// Splits `"Title (1995)"` into `("Title", Some(1995))`; anything else is kept verbatim.
pub fn split_title_year(raw: &str) -> (String, Option<u16>) {
    let t = raw.trim_end();
    if t.len() >= 7 && t.ends_with(')') {
        let open = t.len() - 6;
        if t.is_char_boundary(open) && &t[open..open + 1] == "(" {
            let year = &t[open + 1..t.len() - 1];
            if year.bytes().all(|b| b.is_ascii_digit()) {
                if let Ok(y) = year.parse() {
                    return (t[..open].trim_end().to_string(), Some(y));
                }
            }
        }
    }
    (raw.to_string(), None)
}

pub fn parse_items_str(text: &str) -> Result<Vec<RawItem>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in lines(text) {
        let f = fields(line, n, 3)?;
        let item_id: u32 = number(f[0], n, "item id")?;
        if !seen.insert(item_id) {
            return Err(DataError::DuplicateId {
                line: n,
                kind: "item",
                id: item_id,
            });
        }
        let (title, release_year) = split_title_year(f[1]);
        let mut genres: Vec<String> = Vec::new();
        for g in f[2].split('|').filter(|g| !g.is_empty()) {
            if !genres.iter().any(|x| x == g) {
                genres.push(g.to_string());
            }
        }
        out.push(RawItem {
            item_id,
            title,
            release_year,
            genres,
        });
    }
    Ok(out)
}

pub fn parse_ratings_str(text: &str) -> Result<Vec<RawInteraction>> {
    let mut out = Vec::new();
    for (n, line) in lines(text) {
        let f = fields(line, n, 4)?;
        let rating: i64 = number(f[2], n, "rating")?;
        if !(1..=5).contains(&rating) {
            return Err(DataError::RatingOutOfRange {
                rating,
                line: Some(n),
            });
        }
        let timestamp: i64 = number(f[3], n, "timestamp")?;
        if timestamp < 0 {
            return Err(DataError::MalformedLine {
                line: n,
                reason: "negative timestamp".into(),
            });
        }
        out.push(RawInteraction {
            user_id: number(f[0], n, "user id")?,
            item_id: number(f[1], n, "item id")?,
            rating: rating as u8,
            timestamp,
        });
    }
    Ok(out)
}

/// Reads a latin-1 file into a `String` (each byte is one code point).
pub fn read_latin1(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(bytes.into_iter().map(char::from).collect())
}

pub fn parse_users(path: &Path) -> Result<Vec<RawUser>> {
    parse_users_str(&read_latin1(path)?).map_err(|e| e.in_file(path))
}

pub fn parse_items(path: &Path) -> Result<Vec<RawItem>> {
    parse_items_str(&read_latin1(path)?).map_err(|e| e.in_file(path))
}

pub fn parse_ratings(path: &Path) -> Result<Vec<RawInteraction>> {
    parse_ratings_str(&read_latin1(path)?).map_err(|e| e.in_file(path))
}

/// The three ML-1M tables, joined.
#[derive(Clone, Debug)]
pub struct Ml1m {
    pub users: Vec<RawUser>,
    pub items: Vec<RawItem>,
    pub ratings: Vec<RawInteraction>,
}

impl Ml1m {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Ml1m {
            users: parse_users(&dir.join("users.dat"))?,
            items: parse_items(&dir.join("movies.dat"))?,
            ratings: parse_ratings(&dir.join("ratings.dat"))?,
        })
    }

    /// Labels every rating, checking that its user and item exist.
    pub fn labeled(&self, threshold: u8) -> Result<Vec<LabeledExample>> {
        let users: HashSet<u32> = self.users.iter().map(|u| u.user_id).collect();
        let items: HashSet<u32> = self.items.iter().map(|i| i.item_id).collect();
        self.ratings
            .iter()
            .map(|r| {
                if !users.contains(&r.user_id) {
                    return Err(DataError::UnknownReference {
                        kind: "user",
                        id: r.user_id,
                    });
                }
                if !items.contains(&r.item_id) {
                    return Err(DataError::UnknownReference {
                        kind: "item",
                        id: r.item_id,
                    });
                }
                Ok(LabeledExample {
                    user_id: r.user_id,
                    item_id: r.item_id,
                    timestamp: r.timestamp,
                    context: derive_context(r.timestamp),
                    label: binarize_label(r.rating, threshold)?,
                    original_rating: r.rating,
                })
            })
            .collect()
    }
}

/// Seeded shuffle, then floor allocation for valid/test with the remainder in train.
pub fn split_dataset(
    mut examples: Vec<LabeledExample>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    let (tr, va, te) = ratios;
    let ok = [tr, va, te].iter().all(|r| r.is_finite() && *r > 0.0)
        && ((tr + va + te) - 1.0).abs() <= 1e-9;
    if !ok {
        return Err(DataError::BadRatios(ratios));
    }
    let n = examples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    examples.shuffle(&mut rng);
    let n_valid = (n as f64 * va + 1e-9).floor() as usize;
    let n_test = (n as f64 * te + 1e-9).floor() as usize;
    let n_train = n - n_valid - n_test;
    let stats = SplitStats::of(&examples);
    let test = examples.split_off(n_train + n_valid);
    let valid = examples.split_off(n_train);
    Ok(DatasetSplit {
        train: examples,
        valid,
        test,
        stats,
    })
}

pub const EXAMPLE_HEADER: &str = "user_id\titem_id\trating\ttimestamp\tlabel\thour\tweekday\tdaypart";

/// Normalized example table: UTF-8, tab-separated, one header line.
pub fn write_examples<W: Write>(mut w: W, examples: &[LabeledExample]) -> std::io::Result<()> {
    writeln!(w, "{EXAMPLE_HEADER}")?;
    for e in examples {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            e.user_id,
            e.item_id,
            e.original_rating,
            e.timestamp,
            e.label,
            e.context.hour_of_day,
            e.context.day_of_week.short(),
            e.context.daypart.label()
        )?;
    }
    w.flush()
}

pub fn read_examples<R: BufRead>(r: R) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| DataError::MalformedLine {
            line: n,
            reason: e.to_string(),
        })?;
        if n == 1 {
            if line != EXAMPLE_HEADER {
                return Err(DataError::MalformedLine {
                    line: 1,
                    reason: "unexpected header".into(),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(DataError::MalformedLine {
                line: n,
                reason: format!("expected 8 columns, found {}", f.len()),
            });
        }
        let bad = |what: &str| DataError::MalformedLine {
            line: n,
            reason: format!("bad {what}"),
        };
        let hour: u8 = number(f[5], n, "hour")?;
        let context = ContextFields {
            hour_of_day: hour,
            day_of_week: Weekday::parse(f[6]).ok_or_else(|| bad("weekday"))?,
            daypart: Daypart::parse(f[7]).ok_or_else(|| bad("daypart"))?,
        };
        out.push(LabeledExample {
            user_id: number(f[0], n, "user id")?,
            item_id: number(f[1], n, "item id")?,
            original_rating: number(f[2], n, "rating")?,
            timestamp: number(f[3], n, "timestamp")?,
            label: number(f[4], n, "label")?,
            context,
        });
    }
    Ok(out)
}

pub const USER_HEADER: &str = "user_id\tgender\tage_code\toccupation_code\tzip";
pub const ITEM_HEADER: &str = "item_id\ttitle\trelease_year\tgenres";

pub fn write_users<W: Write>(mut w: W, users: &[RawUser]) -> std::io::Result<()> {
    writeln!(w, "{USER_HEADER}")?;
    for u in users {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            u.user_id,
            u.gender.code(),
            u.age_code,
            u.occupation_code,
            u.zip
        )?;
    }
    w.flush()
}

pub fn write_items<W: Write>(mut w: W, items: &[RawItem]) -> std::io::Result<()> {
    writeln!(w, "{ITEM_HEADER}")?;
    for it in items {
        let year = it.release_year.map(|y| y.to_string()).unwrap_or_default();
        writeln!(w, "{}\t{}\t{}\t{}", it.item_id, it.title, year, it.genres.join("|"))?;
    }
    w.flush()
}

fn tsv_rows(text: &str, header: &str, columns: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let mut it = text.lines();
    if it.next() != Some(header) {
        return Err(DataError::MalformedLine {
            line: 1,
            reason: "unexpected header".into(),
        });
    }
    it.enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<String> = l.split('\t').map(str::to_string).collect();
            if f.len() != columns {
                return Err(DataError::MalformedLine {
                    line: i + 2,
                    reason: format!("expected {columns} columns"),
                });
            }
            Ok((i + 2, f))
        })
        .collect()
}

pub fn read_users(text: &str) -> Result<Vec<RawUser>> {
    let ml: Vec<String> = tsv_rows(text, USER_HEADER, 5)?
        .into_iter()
        .map(|(_, f)| f.join("::"))
        .collect();
    parse_users_str(&ml.join("\n"))
}

pub fn read_items(text: &str) -> Result<Vec<RawItem>> {
    tsv_rows(text, ITEM_HEADER, 4)?
        .into_iter()
        .map(|(n, f)| {
            let release_year = if f[2].is_empty() {
                None
            } else {
                Some(number(&f[2], n, "year")?)
            };
            Ok(RawItem {
                item_id: number(&f[0], n, "item id")?,
                title: f[1].clone(),
                release_year,
                genres: f[3].split('|').filter(|g| !g.is_empty()).map(str::to_string).collect(),
            })
        })
        .collect()
}

/// Index from id to record.
pub fn index_by<T, K: std::hash::Hash + Eq>(rows: &[T], key: impl Fn(&T) -> K) -> HashMap<K, usize> {
    rows.iter().enumerate().map(|(i, r)| (key(r), i)).collect()
}
