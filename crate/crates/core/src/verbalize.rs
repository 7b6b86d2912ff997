//! Template-based verbalization of users, items and contexts.
//!
//! Each entity kind is rendered on its own; a user sentence never looks at item
//! or context data.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ContextFields, Daypart, Gender, RawItem, RawUser};

pub const BUILTIN_TEMPLATES: &str = include_str!("../assets/templates.txt");
pub const DEFAULT_TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("template version {0:?} not defined")]
    UnknownVersion(String),
    #[error("template {version}/{entity}: unknown placeholder {{{name}}}")]
    UnknownPlaceholder {
        version: String,
        entity: &'static str,
        name: String,
    },
    #[error("template {version}: missing {entity} template")]
    Missing { version: String, entity: &'static str },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    User,
    Item,
    Context,
}

impl EntityKind {
    pub fn name(self) -> &'static str {
        match self {
            EntityKind::User => "user",
            EntityKind::Item => "item",
            EntityKind::Context => "context",
        }
    }

    fn placeholders(self) -> &'static [&'static str] {
        match self {
            EntityKind::User => &["gender", "age", "occupation", "zip"],
            EntityKind::Item => &["title", "year_clause", "genre_clause"],
            EntityKind::Context => &["when"],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VerbalDoc {
    pub entity_kind: EntityKind,
    pub entity_key: String,
    pub text: String,
}

/// One template per entity kind.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Templates {
    pub version: String,
    user: String,
    item: String,
    context: String,
}

fn placeholders_in(template: &str) -> Result<Vec<&str>, String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        let end = after.find('}').ok_or("unterminated placeholder")?;
        let name = &after[..end];
        if name.is_empty() || name.contains('{') {
            return Err("malformed placeholder".into());
        }
        out.push(name);
        rest = &after[end + 1..];
    }
    if rest.contains('}') {
        return Err("unbalanced '}'".into());
    }
    Ok(out)
}

impl Templates {
    /// Parses a template file and returns the requested version.
    pub fn parse(text: &str, version: &str) -> Result<Self, TemplateError> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |reason: &str| TemplateError::Syntax {
                line: i + 1,
                reason: reason.to_string(),
            };
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_string();
                if sections.contains_key(&name) {
                    return Err(syntax("duplicate section"));
                }
                sections.insert(name.clone(), BTreeMap::new());
                current = Some(name);
                continue;
            }
            let Some(section) = &current else {
                return Err(syntax("entry outside a [version] section"));
            };
            let (key, value) = line.split_once('=').ok_or_else(|| syntax("expected key = template"))?;
            placeholders_in(value.trim()).map_err(|r| syntax(&r))?;
            sections
                .get_mut(section)
                .unwrap()
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        let mut entries = sections
            .remove(version)
            .ok_or_else(|| TemplateError::UnknownVersion(version.to_string()))?;
        let mut take = |kind: EntityKind| -> Result<String, TemplateError> {
            let t = entries.remove(kind.name()).ok_or_else(|| TemplateError::Missing {
                version: version.to_string(),
                entity: kind.name(),
            })?;
            for name in placeholders_in(&t).unwrap_or_default() {
                if !kind.placeholders().contains(&name) {
                    return Err(TemplateError::UnknownPlaceholder {
                        version: version.to_string(),
                        entity: kind.name(),
                        name: name.to_string(),
                    });
                }
            }
            Ok(t)
        };
        Ok(Templates {
            version: version.to_string(),
            user: take(EntityKind::User)?,
            item: take(EntityKind::Item)?,
            context: take(EntityKind::Context)?,
        })
    }

    pub fn builtin(version: &str) -> Result<Self, TemplateError> {
        Templates::parse(BUILTIN_TEMPLATES, version)
    }
}

impl Default for Templates {
    fn default() -> Self {
        Templates::builtin(DEFAULT_TEMPLATE_VERSION).expect("built-in templates are valid")
    }
}

/// Substitutes `{name}` placeholders in one left-to-right pass. Values are
/// inserted literally, so braces inside data are never re-expanded.
fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let end = after.find('}').expect("validated at parse time");
        let name = &after[..end];
        let value = values
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .expect("validated at parse time");
        out.push_str(value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    out
}

/// Code tables from the ML-1M README.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeMaps {
    pub occupation_map: BTreeMap<u8, String>,
    pub age_map: BTreeMap<u8, String>,
}

pub const UNKNOWN_OCCUPATION: &str = "with an unspecified occupation";
pub const UNKNOWN_AGE: &str = "of unspecified age";

impl Default for CodeMaps {
    fn default() -> Self {
        let occupations = [
            "with an other or unspecified occupation",
            "working as an academic/educator",
            "working as an artist",
            "working in clerical/admin",
            "working as a college/grad student",
            "working in customer service",
            "working as a doctor/health care worker",
            "working as an executive/manager",
            "working as a farmer",
            "working as a homemaker",
            "working as a K-12 student",
            "working as a lawyer",
            "working as a programmer",
            "who is retired",
            "working in sales/marketing",
            "working as a scientist",
            "who is self-employed",
            "working as a technician/engineer",
            "working as a tradesman/craftsman",
            "who is unemployed",
            "working as a writer",
        ];
        let ages = [
            (1, "under 18 years old"),
            (18, "aged 18-24"),
            (25, "aged 25-34"),
            (35, "aged 35-44"),
            (45, "aged 45-49"),
            (50, "aged 50-55"),
            (56, "aged 56 or older"),
        ];
        CodeMaps {
            occupation_map: occupations
                .iter()
                .enumerate()
                .map(|(i, s)| (i as u8, s.to_string()))
                .collect(),
            age_map: ages.iter().map(|&(c, s)| (c, s.to_string())).collect(),
        }
    }
}

/// Joins with commas and a final ", and" (Oxford style) for three or more.
pub fn oxford_join(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [a] => a.clone(),
        [a, b] => format!("{a} and {b}"),
        [init @ .., last] => format!("{}, and {last}", init.join(", ")),
    }
}

#[derive(Clone, Debug, Default)]
pub struct Verbalizer {
    pub templates: Templates,
    pub maps: CodeMaps,
}

impl Verbalizer {
    pub fn new(templates: Templates, maps: CodeMaps) -> Self {
        Verbalizer { templates, maps }
    }

    pub fn user(&self, user: &RawUser) -> VerbalDoc {
        let gender = match user.gender {
            Gender::F => "female",
            Gender::M => "male",
        };
        let age = self
            .maps
            .age_map
            .get(&user.age_code)
            .map_or(UNKNOWN_AGE, String::as_str);
        let occupation = self
            .maps
            .occupation_map
            .get(&user.occupation_code)
            .map_or(UNKNOWN_OCCUPATION, String::as_str);
        let text = render(
            &self.templates.user,
            &[
                ("gender", gender),
                ("age", age),
                ("occupation", occupation),
                ("zip", &user.zip),
            ],
        );
        VerbalDoc {
            entity_kind: EntityKind::User,
            entity_key: format!("user:{}", user.user_id),
            text,
        }
    }

    pub fn item(&self, item: &RawItem) -> VerbalDoc {
        let year_clause = item
            .release_year
            .map(|y| format!(", released in {y},"))
            .unwrap_or_default();
        let genre_clause = match item.genres.len() {
            0 => "has no listed genres".to_string(),
            1 => format!("belongs to the genre {}", item.genres[0]),
            _ => format!("belongs to the genres {}", oxford_join(&item.genres)),
        };
        let text = render(
            &self.templates.item,
            &[
                ("title", &item.title),
                ("year_clause", &year_clause),
                ("genre_clause", &genre_clause),
            ],
        );
        VerbalDoc {
            entity_kind: EntityKind::Item,
            entity_key: format!("item:{}", item.item_id),
            text,
        }
    }

    pub fn context(&self, ctx: &ContextFields) -> VerbalDoc {
        let day = ctx.day_of_week.name();
        let when = match ctx.daypart {
            Daypart::LateNight => format!("late at night on a {day}"),
            part => format!("on a {day} {}", part.label()),
        };
        VerbalDoc {
            entity_kind: EntityKind::Context,
            entity_key: format!("context:{}", ctx.key()),
            text: render(&self.templates.context, &[("when", &when)]),
        }
    }
}

pub fn verbalize_user(user: &RawUser, maps: &CodeMaps) -> VerbalDoc {
    Verbalizer::new(Templates::default(), maps.clone()).user(user)
}

pub fn verbalize_item(item: &RawItem) -> VerbalDoc {
    Verbalizer::default().item(item)
}

pub fn verbalize_context(ctx: &ContextFields) -> VerbalDoc {
    Verbalizer::default().context(ctx)
}

/// Golden/dump format: `entity_key<TAB>text` per line.
pub fn write_tsv<W: Write>(mut w: W, docs: &[VerbalDoc]) -> std::io::Result<()> {
    for d in docs {
        writeln!(w, "{}\t{}", d.entity_key, d.text)?;
    }
    w.flush()
}

pub fn read_tsv(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter(|l| !l.is_empty())
        .filter_map(|l| l.split_once('\t'))
        .map(|(k, t)| (k.to_string(), t.to_string()))
        .collect()
}
