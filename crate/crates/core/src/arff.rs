//! Reading and writing the ARFF tabular format.
//!
//! Only dense ARFF is supported. Sparse rows (`{index value, ...}`) and
//! relational attributes are rejected with a syntax error. The writer emits a
//! canonical form that every other part of the system relies on for
//! byte-stable split and prediction files.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::TaskTypeId;

/// Default cap on accepted ARFF payloads (256 MiB).
pub const DEFAULT_MAX_BYTES: usize = 256 * 1024 * 1024;

const DEFAULT_DATE_FORMAT: &str = "yyyy-MM-dd'T'HH:mm:ss";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArffError {
    #[error("syntax error on line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("schema error{}: {reason}", line.map(|l| format!(" on line {l}")).unwrap_or_default())]
    Schema { line: Option<usize>, reason: String },
    #[error("the @data section contains no rows")]
    EmptyData,
    #[error("payload of {size} bytes exceeds the limit of {limit} bytes")]
    TooLarge { size: usize, limit: usize },
}

impl ArffError {
    fn syntax(line: usize, reason: impl Into<String>) -> Self {
        ArffError::Syntax { line, reason: reason.into() }
    }

    fn schema(line: Option<usize>, reason: impl Into<String>) -> Self {
        ArffError::Schema { line, reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum AttributeKind {
    Numeric,
    Nominal { labels: Vec<String> },
    String,
    Date { format: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttributeKind,
}

impl AttributeSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        AttributeSpec { name: name.into(), kind: AttributeKind::Numeric }
    }

    pub fn nominal<S: Into<String>>(name: impl Into<String>, labels: impl IntoIterator<Item = S>) -> Self {
        AttributeSpec {
            name: name.into(),
            kind: AttributeKind::Nominal { labels: labels.into_iter().map(Into::into).collect() },
        }
    }

    pub fn string(name: impl Into<String>) -> Self {
        AttributeSpec { name: name.into(), kind: AttributeKind::String }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, AttributeKind::Numeric)
    }

    pub fn is_nominal(&self) -> bool {
        matches!(self.kind, AttributeKind::Nominal { .. })
    }

    /// Declared labels of a nominal attribute.
    pub fn labels(&self) -> Option<&[String]> {
        match &self.kind {
            AttributeKind::Nominal { labels } => Some(labels),
            _ => None,
        }
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels()?.iter().position(|l| l == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Missing,
    Number(f64),
    Text(String),
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Row {
    pub cells: Vec<Cell>,
}

impl Row {
    pub fn new(cells: Vec<Cell>) -> Self {
        Row { cells }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub name: String,
    pub attributes: Vec<AttributeSpec>,
    pub rows: Vec<Row>,
}

impl Relation {
    /// Index of the attribute with exactly this name.
    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeSpec> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Checks the structural invariants a parsed relation always satisfies.
    pub fn validate(&self) -> Result<(), ArffError> {
        check_attributes(&self.attributes, None)?;
        for (i, row) in self.rows.iter().enumerate() {
            if row.cells.len() != self.attributes.len() {
                return Err(ArffError::schema(
                    None,
                    format!("row {i} has {} cells, expected {}", row.cells.len(), self.attributes.len()),
                ));
            }
            for (cell, attr) in row.cells.iter().zip(&self.attributes) {
                let ok = match (cell, &attr.kind) {
                    (Cell::Missing, _) => true,
                    (Cell::Number(v), AttributeKind::Numeric) => v.is_finite(),
                    (Cell::Text(t), AttributeKind::Nominal { labels }) => labels.contains(t),
                    (Cell::Text(t), AttributeKind::Date { format }) => date_matches(t, format),
                    (Cell::Text(_), AttributeKind::String) => true,
                    _ => false,
                };
                if !ok {
                    return Err(ArffError::schema(
                        None,
                        format!("row {i}: invalid value for attribute '{}'", attr.name),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Parses ARFF with the default size limit.
pub fn parse_arff(source: &[u8]) -> Result<Relation, ArffError> {
    parse_arff_with_limit(source, DEFAULT_MAX_BYTES)
}

pub fn parse_arff_with_limit(source: &[u8], max_bytes: usize) -> Result<Relation, ArffError> {
    if source.len() > max_bytes {
        return Err(ArffError::TooLarge { size: source.len(), limit: max_bytes });
    }
    let text = std::str::from_utf8(source).map_err(|e| {
        let line = 1 + source[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count();
        ArffError::syntax(line, "invalid UTF-8")
    })?;
    Parser::default().run(text)
}

#[derive(Default)]
struct Parser {
    name: Option<String>,
    attributes: Vec<AttributeSpec>,
    rows: Vec<Row>,
}

impl Parser {
    fn run(mut self, text: &str) -> Result<Relation, ArffError> {
        let mut in_data = false;
        let mut seen_names: HashSet<String> = HashSet::new();
        let mut data_line = 0;

        for (idx, raw) in text.split('\n').enumerate() {
            let line_no = idx + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw).trim();
            if line.is_empty() || line.starts_with('%') {
                continue;
            }
            if in_data {
                let row = self.parse_row(line, line_no)?;
                self.rows.push(row);
                continue;
            }
            if !line.starts_with('@') {
                return Err(ArffError::syntax(line_no, "expected a header declaration"));
            }
            let (keyword, rest) = split_keyword(line);
            match keyword.to_ascii_lowercase().as_str() {
                "@relation" => {
                    if self.name.is_some() {
                        return Err(ArffError::syntax(line_no, "duplicate @relation declaration"));
                    }
                    let mut cur = Cursor::new(rest, line_no);
                    let name = cur.token()?;
                    cur.skip_ws();
                    if !cur.at_end() {
                        return Err(ArffError::syntax(line_no, "unexpected text after relation name"));
                    }
                    self.name = Some(name);
                }
                "@attribute" => {
                    if self.name.is_none() {
                        return Err(ArffError::syntax(line_no, "@attribute before @relation"));
                    }
                    let attr = parse_attribute(rest, line_no)?;
                    if !seen_names.insert(attr.name.to_lowercase()) {
                        return Err(ArffError::schema(
                            Some(line_no),
                            format!("duplicate attribute name '{}'", attr.name),
                        ));
                    }
                    check_attributes(std::slice::from_ref(&attr), Some(line_no))?;
                    self.attributes.push(attr);
                }
                "@data" => {
                    if self.name.is_none() {
                        return Err(ArffError::syntax(line_no, "@data before @relation"));
                    }
                    if self.attributes.is_empty() {
                        return Err(ArffError::syntax(line_no, "@data without any @attribute"));
                    }
                    if !rest.trim().is_empty() {
                        return Err(ArffError::syntax(line_no, "unexpected text after @data"));
                    }
                    in_data = true;
                    data_line = line_no;
                }
                other => {
                    return Err(ArffError::syntax(line_no, format!("unknown declaration '{other}'")));
                }
            }
        }

        if !in_data {
            let last = text.split('\n').count();
            return Err(ArffError::syntax(last.max(data_line), "missing @data section"));
        }
        if self.rows.is_empty() {
            return Err(ArffError::EmptyData);
        }
        Ok(Relation { name: self.name.unwrap_or_default(), attributes: self.attributes, rows: self.rows })
    }

    fn parse_row(&self, line: &str, line_no: usize) -> Result<Row, ArffError> {
        if line.starts_with('{') {
            return Err(ArffError::syntax(line_no, "sparse ARFF rows are not supported"));
        }
        let mut cur = Cursor::new(line, line_no);
        let mut values = Vec::with_capacity(self.attributes.len());
        loop {
            cur.skip_ws();
            let value = cur.value()?;
            values.push(value);
            cur.skip_ws();
            match cur.peek() {
                None => break,
                Some(',') => {
                    cur.bump();
                }
                Some(c) => {
                    return Err(ArffError::syntax(line_no, format!("expected ',' but found '{c}'")));
                }
            }
        }
        if values.len() != self.attributes.len() {
            return Err(ArffError::schema(
                Some(line_no),
                format!("row has {} values, expected {}", values.len(), self.attributes.len()),
            ));
        }
        let mut cells = Vec::with_capacity(values.len());
        for (value, attr) in values.into_iter().zip(&self.attributes) {
            cells.push(convert_value(value, attr, line_no)?);
        }
        Ok(Row { cells })
    }
}

fn split_keyword(line: &str) -> (&str, &str) {
    match line.find(|c: char| c.is_whitespace()) {
        Some(pos) => (&line[..pos], line[pos..].trim_start()),
        None => (line, ""),
    }
}

fn parse_attribute(rest: &str, line_no: usize) -> Result<AttributeSpec, ArffError> {
    let mut cur = Cursor::new(rest, line_no);
    cur.skip_ws();
    if cur.at_end() {
        return Err(ArffError::syntax(line_no, "missing attribute name"));
    }
    let name = cur.token()?;
    if name.is_empty() {
        return Err(ArffError::syntax(line_no, "empty attribute name"));
    }
    cur.skip_ws();
    if cur.peek() == Some('{') {
        cur.bump();
        let mut labels = Vec::new();
        loop {
            cur.skip_ws();
            if cur.peek() == Some('}') && labels.is_empty() {
                return Err(ArffError::syntax(line_no, "nominal attribute without labels"));
            }
            let label = match cur.value()? {
                RawValue::Bare(s) | RawValue::Quoted(s) => s,
                RawValue::Missing => "?".to_string(),
            };
            labels.push(label);
            cur.skip_ws();
            match cur.bump() {
                Some(',') => continue,
                Some('}') => break,
                _ => return Err(ArffError::syntax(line_no, "unterminated nominal label list")),
            }
        }
        cur.skip_ws();
        if !cur.at_end() {
            return Err(ArffError::syntax(line_no, "unexpected text after nominal label list"));
        }
        return Ok(AttributeSpec { name, kind: AttributeKind::Nominal { labels } });
    }
    let type_word = cur.bare_word();
    let kind = match type_word.to_ascii_lowercase().as_str() {
        "numeric" | "real" | "integer" => AttributeKind::Numeric,
        "string" => AttributeKind::String,
        "date" => {
            cur.skip_ws();
            let format = if cur.at_end() { DEFAULT_DATE_FORMAT.to_string() } else { cur.token()? };
            AttributeKind::Date { format }
        }
        "relational" => {
            return Err(ArffError::syntax(line_no, "relational attributes are not supported"));
        }
        "" => return Err(ArffError::syntax(line_no, "missing attribute type")),
        other => return Err(ArffError::syntax(line_no, format!("unknown attribute type '{other}'"))),
    };
    cur.skip_ws();
    if !cur.at_end() {
        return Err(ArffError::syntax(line_no, "unexpected text after attribute type"));
    }
    Ok(AttributeSpec { name, kind })
}

fn check_attributes(attrs: &[AttributeSpec], line: Option<usize>) -> Result<(), ArffError> {
    let mut names = HashSet::new();
    for attr in attrs {
        if attr.name.is_empty() {
            return Err(ArffError::schema(line, "empty attribute name"));
        }
        if !names.insert(attr.name.to_lowercase()) {
            return Err(ArffError::schema(line, format!("duplicate attribute name '{}'", attr.name)));
        }
        if let AttributeKind::Nominal { labels } = &attr.kind {
            if labels.is_empty() {
                return Err(ArffError::schema(line, format!("attribute '{}' has no labels", attr.name)));
            }
            let mut seen = HashSet::new();
            for l in labels {
                if !seen.insert(l.as_str()) {
                    return Err(ArffError::schema(
                        line,
                        format!("duplicate label '{l}' in attribute '{}'", attr.name),
                    ));
                }
            }
        }
    }
    Ok(())
}

fn convert_value(value: RawValue, attr: &AttributeSpec, line_no: usize) -> Result<Cell, ArffError> {
    let text = match value {
        RawValue::Missing => return Ok(Cell::Missing),
        RawValue::Bare(s) | RawValue::Quoted(s) => s,
    };
    match &attr.kind {
        AttributeKind::Numeric => match parse_number(&text) {
            Some(v) if v.is_finite() => Ok(Cell::Number(v)),
            Some(_) => Err(ArffError::schema(
                Some(line_no),
                format!("value '{text}' of attribute '{}' is not a finite number", attr.name),
            )),
            None => Err(ArffError::schema(
                Some(line_no),
                format!("value '{text}' of attribute '{}' is not numeric", attr.name),
            )),
        },
        AttributeKind::Nominal { labels } => {
            if labels.contains(&text) {
                Ok(Cell::Text(text))
            } else {
                Err(ArffError::schema(
                    Some(line_no),
                    format!("undeclared label '{text}' for attribute '{}'", attr.name),
                ))
            }
        }
        AttributeKind::String => Ok(Cell::Text(text)),
        AttributeKind::Date { format } => {
            if date_matches(&text, format) {
                Ok(Cell::Text(text))
            } else {
                Err(ArffError::schema(
                    Some(line_no),
                    format!("date '{text}' does not match pattern '{format}' of attribute '{}'", attr.name),
                ))
            }
        }
    }
}

/// Accepts `[+-]digits[.digits][e[+-]digits]` and `[+-].digits[...]`.
fn parse_number(text: &str) -> Option<f64> {
    let bytes = text.as_bytes();
    let mut i = 0;
    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
        i += 1;
    }
    let int_start = i;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    let int_digits = i - int_start;
    let mut frac_digits = 0;
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        frac_digits = i - frac_start;
    }
    if int_digits + frac_digits == 0 {
        return None;
    }
    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
        i += 1;
        if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
            i += 1;
        }
        let exp_start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return None;
        }
    }
    if i != bytes.len() {
        return None;
    }
    text.parse().ok()
}

/// Length of a date pattern once quoted literals are unwrapped.
fn pattern_len(format: &str) -> usize {
    let chars: Vec<char> = format.chars().collect();
    let mut len = 0;
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '\'' {
            if chars.get(i + 1) == Some(&'\'') {
                len += 1;
                i += 2;
            } else {
                i += 1;
            }
            continue;
        }
        len += 1;
        i += 1;
    }
    len
}

fn date_matches(value: &str, format: &str) -> bool {
    value.chars().count() == pattern_len(format)
}

enum RawValue {
    Missing,
    Bare(String),
    Quoted(String),
}

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str, line: usize) -> Self {
        Cursor { chars: text.chars().peekable(), line }
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn bump(&mut self) -> Option<char> {
        self.chars.next()
    }

    fn at_end(&mut self) -> bool {
        self.peek().is_none()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.bump();
        }
    }

    fn bare_word(&mut self) -> String {
        let mut out = String::new();
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                break;
            }
            out.push(c);
            self.bump();
        }
        out
    }

    /// A name token: quoted string or a run of non-whitespace.
    fn token(&mut self) -> Result<String, ArffError> {
        self.skip_ws();
        match self.peek() {
            Some(q @ ('\'' | '"')) => {
                self.bump();
                self.quoted(q)
            }
            _ => Ok(self.bare_word()),
        }
    }

    /// A data value terminated by `,`, `}` or end of input.
    fn value(&mut self) -> Result<RawValue, ArffError> {
        match self.peek() {
            Some(q @ ('\'' | '"')) => {
                self.bump();
                Ok(RawValue::Quoted(self.quoted(q)?))
            }
            _ => {
                let mut out = String::new();
                while let Some(c) = self.peek() {
                    if c == ',' || c == '}' {
                        break;
                    }
                    if c == '\'' || c == '"' {
                        return Err(ArffError::syntax(self.line, "unexpected quote inside value"));
                    }
                    out.push(c);
                    self.bump();
                }
                let trimmed = out.trim_end();
                if trimmed.is_empty() {
                    return Err(ArffError::syntax(self.line, "empty value"));
                }
                if trimmed == "?" {
                    Ok(RawValue::Missing)
                } else {
                    Ok(RawValue::Bare(trimmed.to_string()))
                }
            }
        }
    }

    fn quoted(&mut self, quote: char) -> Result<String, ArffError> {
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(ArffError::syntax(self.line, "unterminated quoted value")),
                Some('\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('r') => out.push('\r'),
                    Some('t') => out.push('\t'),
                    Some(c) => out.push(c),
                    None => return Err(ArffError::syntax(self.line, "dangling escape")),
                },
                Some(c) if c == quote => return Ok(out),
                Some(c) => out.push(c),
            }
        }
    }
}

fn needs_quotes(s: &str) -> bool {
    s.is_empty()
        || s == "?"
        || s.chars().any(|c| {
            c.is_whitespace()
                || c.is_control()
                || matches!(c, ',' | '\'' | '"' | '%' | '{' | '}' | '\\')
        })
}

fn quote(s: &str) -> String {
    if !needs_quotes(s) {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\'' => out.push_str("\\'"),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

/// Shortest decimal form that parses back to the same `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v}")
}

pub fn write_arff(relation: &Relation) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "@relation {}", quote(&relation.name));
    out.push('\n');
    for attr in &relation.attributes {
        let kind = match &attr.kind {
            AttributeKind::Numeric => "numeric".to_string(),
            AttributeKind::String => "string".to_string(),
            AttributeKind::Date { format } => format!("date {}", quote_always(format)),
            AttributeKind::Nominal { labels } => {
                let labels: Vec<String> = labels.iter().map(|l| quote(l)).collect();
                format!("{{{}}}", labels.join(","))
            }
        };
        let _ = writeln!(out, "@attribute {} {}", quote(&attr.name), kind);
    }
    out.push('\n');
    out.push_str("@data\n");
    for row in &relation.rows {
        write_row(&mut out, row);
    }
    out
}

fn quote_always(s: &str) -> String {
    let q = quote(s);
    if q.starts_with('\'') {
        q
    } else {
        format!("'{q}'")
    }
}

fn write_row(out: &mut String, row: &Row) {
    for (i, cell) in row.cells.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        match cell {
            Cell::Missing => out.push('?'),
            Cell::Number(v) => out.push_str(&format_number(*v)),
            Cell::Text(t) => out.push_str(&quote(t)),
        }
    }
    out.push('\n');
}

/// Upload-time checks that a relation can back a task of the given type.
pub fn validate_for_task(relation: &Relation, target: &str, task_type: TaskTypeId) -> Vec<String> {
    let Some(attr) = relation.attribute(target) else {
        return vec![format!("no such attribute: '{target}'")];
    };
    let mut findings = Vec::new();
    match task_type {
        TaskTypeId::SupervisedClassification if !attr.is_nominal() => {
            findings.push(format!("target '{target}' must be nominal for classification"));
        }
        TaskTypeId::SupervisedRegression if !attr.is_numeric() => {
            findings.push(format!("target '{target}' must be numeric for regression"));
        }
        _ => {}
    }
    if let Some(idx) = relation.attribute_index(target) {
        if relation.rows.iter().all(|r| r.cells[idx].is_missing()) {
            findings.push(format!("target '{target}' has no non-missing values"));
        }
    }
    findings
}
