//! The read-only SQL subset: `SELECT cols|* FROM view [WHERE c op lit AND ...]
//! [ORDER BY c [ASC|DESC]] [LIMIT n]` over four materialized views.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::entities::RunStatus;
use crate::registry::State;

pub const MAX_LIMIT: usize = 10_000;

/// Statements containing any of these words are refused outright.
pub const MUTATION_KEYWORDS: &[&str] = &[
    "INSERT", "UPDATE", "DELETE", "DROP", "CREATE", "ALTER", "TRUNCATE", "REPLACE", "MERGE", "GRANT", "REVOKE",
    "ATTACH", "DETACH", "PRAGMA", "VACUUM", "EXEC", "EXECUTE", "CALL", "SET", "COPY",
];

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum QueryError {
    #[error("ParseError at position {position}: expected {}, found {found}", expected.join(" or "))]
    Parse { position: usize, expected: Vec<String>, found: String },
    #[error("UnknownView: '{name}'")]
    UnknownView { name: String },
    #[error("UnknownColumn: '{name}'")]
    UnknownColumn { name: String },
    #[error("TypeError: {message}")]
    Type { message: String },
    #[error("Forbidden: {message}")]
    Forbidden { message: String },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Str(String),
    Sym(&'static str),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: usize,
}

fn describe(t: Option<&Token>) -> String {
    match t.map(|t| &t.tok) {
        None => "end of input".into(),
        Some(Tok::Ident(s)) | Some(Tok::Number(s)) => format!("'{s}'"),
        Some(Tok::Str(s)) => format!("string '{s}'"),
        Some(Tok::Sym(s)) => format!("'{s}'"),
    }
}

/// Tokenizes as far as possible; the error (if any) comes with the tokens read before it.
fn lex(sql: &str) -> (Vec<Token>, Option<QueryError>) {
    let chars: Vec<(usize, char)> = sql.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].1.is_ascii_alphanumeric() || chars[i].1 == '_') {
                i += 1;
            }
            out.push(Token { tok: Tok::Ident(chars[start..i].iter().map(|c| c.1).collect()), pos });
        } else if c.is_ascii_digit()
            || ((c == '-' || c == '.') && chars.get(i + 1).is_some_and(|n| n.1.is_ascii_digit()))
        {
            let start = i;
            i += 1;
            while i < chars.len() {
                let d = chars[i].1;
                let exp_sign = (d == '+' || d == '-') && matches!(chars[i - 1].1, 'e' | 'E');
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            out.push(Token { tok: Tok::Number(chars[start..i].iter().map(|c| c.1).collect()), pos });
        } else if c == '\'' {
            let mut s = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => {
                        let err = QueryError::Parse {
                            position: pos,
                            expected: vec!["closing quote".into()],
                            found: "end of input".into(),
                        };
                        return (out, Some(err));
                    }
                    Some((_, '\'')) if chars.get(i + 1).map(|c| c.1) == Some('\'') => {
                        s.push('\'');
                        i += 2;
                    }
                    Some((_, '\'')) => {
                        i += 1;
                        break;
                    }
                    Some((_, ch)) => {
                        s.push(*ch);
                        i += 1;
                    }
                }
            }
            out.push(Token { tok: Tok::Str(s), pos });
        } else {
            let next = chars.get(i + 1).map(|c| c.1);
            let sym = match (c, next) {
                ('!', Some('=')) => Some("!="),
                ('<', Some('=')) => Some("<="),
                ('>', Some('=')) => Some(">="),
                ('<', _) => Some("<"),
                ('>', _) => Some(">"),
                ('=', _) => Some("="),
                (',', _) => Some(","),
                ('*', _) => Some("*"),
                (';', _) => Some(";"),
                _ => None,
            };
            match sym {
                Some(s) => {
                    i += s.len();
                    out.push(Token { tok: Tok::Sym(s), pos });
                }
                None => {
                    let err =
                        QueryError::Parse { position: pos, expected: vec!["a token".into()], found: format!("'{c}'") };
                    return (out, Some(err));
                }
            }
        }
    }
    (out, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum View {
    Runs,
    Evaluations,
    Datasets,
    Flows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnType {
    Int,
    Real,
    Text,
}

impl View {
    pub const ALL: [View; 4] = [View::Runs, View::Evaluations, View::Datasets, View::Flows];

    pub fn name(self) -> &'static str {
        match self {
            View::Runs => "runs_view",
            View::Evaluations => "evaluations_view",
            View::Datasets => "datasets_view",
            View::Flows => "flows_view",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        View::ALL.into_iter().find(|v| v.name().eq_ignore_ascii_case(s))
    }

    pub fn columns(self) -> &'static [(&'static str, ColumnType)] {
        use ColumnType::*;
        match self {
            View::Runs => &[
                ("run_id", Int),
                ("task_id", Int),
                ("flow_id", Int),
                ("flow_name", Text),
                ("flow_version", Int),
                ("uploader", Int),
                ("uploaded_at", Text),
                ("setting_origin", Text),
            ],
            View::Evaluations => &[
                ("run_id", Int),
                ("task_id", Int),
                ("flow_id", Int),
                ("measure", Text),
                ("value", Real),
                ("std", Real),
            ],
            View::Datasets => &[
                ("dataset_id", Int),
                ("name", Text),
                ("version", Int),
                ("status", Text),
                ("uploader", Int),
                ("NumberOfInstances", Real),
                ("NumberOfFeatures", Real),
                ("NumberOfClasses", Real),
            ],
            View::Flows => &[("flow_id", Int), ("name", Text), ("version", Int), ("uploader", Int)],
        }
    }

    /// Column index, matched case-insensitively.
    pub fn column(self, name: &str) -> Option<usize> {
        self.columns().iter().position(|(c, _)| c.eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Int(i64),
    Real(f64),
    Text(String),
}

impl Value {
    fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Like,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub column: usize,
    pub op: Op,
    pub literal: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub view: View,
    /// Indices into the view's columns.
    pub columns: Vec<usize>,
    pub conditions: Vec<Condition>,
    pub order_by: Option<(usize, bool)>,
    pub limit: usize,
}

struct Parser {
    tokens: Vec<Token>,
    at: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.at)
    }

    fn error(&self, expected: &[&str]) -> QueryError {
        QueryError::Parse {
            position: self.peek().map_or(self.end, |t| t.pos),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: describe(self.peek()),
        }
    }

    fn keyword(&mut self, kw: &str) -> bool {
        match self.peek() {
            Some(Token { tok: Tok::Ident(s), .. }) if s.eq_ignore_ascii_case(kw) => {
                self.at += 1;
                true
            }
            _ => false,
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), QueryError> {
        if self.keyword(kw) {
            Ok(())
        } else {
            Err(self.error(&[kw]))
        }
    }

    fn symbol(&mut self, sym: &str) -> bool {
        match self.peek() {
            Some(Token { tok: Tok::Sym(s), .. }) if *s == sym => {
                self.at += 1;
                true
            }
            _ => false,
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, QueryError> {
        match self.peek() {
            Some(Token { tok: Tok::Ident(s), .. }) if !is_reserved(s) => {
                let s = s.clone();
                self.at += 1;
                Ok(s)
            }
            _ => Err(self.error(&[what])),
        }
    }
}

fn is_reserved(s: &str) -> bool {
    ["SELECT", "FROM", "WHERE", "AND", "ORDER", "BY", "ASC", "DESC", "LIMIT", "LIKE", "NULL"]
        .iter()
        .any(|k| k.eq_ignore_ascii_case(s))
}

fn parse_number(text: &str) -> Option<Value> {
    if let Ok(i) = text.parse::<i64>() {
        return Some(Value::Int(i));
    }
    text.parse::<f64>().ok().filter(|f| f.is_finite()).map(Value::Real)
}

/// Parses and checks a statement against the view schemas.
pub fn parse(sql: &str) -> Result<QuerySpec, QueryError> {
    let (tokens, lex_error) = lex(sql);
    for t in &tokens {
        if let Tok::Ident(s) = &t.tok {
            if let Some(kw) = MUTATION_KEYWORDS.iter().find(|k| k.eq_ignore_ascii_case(s)) {
                return Err(QueryError::Forbidden { message: format!("{kw} is not allowed; only SELECT statements are accepted") });
            }
        }
    }
    match tokens.first() {
        Some(Token { tok: Tok::Ident(s), .. }) if s.eq_ignore_ascii_case("SELECT") => {}
        Some(_) => return Err(QueryError::Forbidden { message: "only SELECT statements are accepted".into() }),
        None if lex_error.is_some() => {}
        None => return Err(QueryError::Parse { position: 0, expected: vec!["SELECT".into()], found: "end of input".into() }),
    }
    if let Some(e) = lex_error {
        return Err(e);
    }

    let mut p = Parser { tokens, at: 0, end: sql.len() };
    p.expect_keyword("SELECT")?;
    let mut names = Vec::new();
    let star = p.symbol("*");
    if !star {
        names.push(p.ident("'*' or column name")?);
        while p.symbol(",") {
            names.push(p.ident("column name")?);
        }
    }
    p.expect_keyword("FROM")?;
    let view_name = p.ident("view name")?;
    let view = View::parse(&view_name).ok_or(QueryError::UnknownView { name: view_name })?;
    let resolve = |name: &str| view.column(name).ok_or_else(|| QueryError::UnknownColumn { name: name.to_string() });
    let columns = if star { (0..view.columns().len()).collect() } else { names.iter().map(|n| resolve(n)).collect::<Result<_, _>>()? };

    let mut conditions = Vec::new();
    if p.keyword("WHERE") {
        loop {
            let col_name = p.ident("column name")?;
            let column = resolve(&col_name)?;
            let op = if p.symbol("=") {
                Op::Eq
            } else if p.symbol("!=") {
                Op::Ne
            } else if p.symbol("<=") {
                Op::Le
            } else if p.symbol(">=") {
                Op::Ge
            } else if p.symbol("<") {
                Op::Lt
            } else if p.symbol(">") {
                Op::Gt
            } else if p.keyword("LIKE") {
                Op::Like
            } else {
                return Err(p.error(&["=", "!=", "<", "<=", ">", ">=", "LIKE"]));
            };
            let literal = match p.peek().map(|t| t.tok.clone()) {
                Some(Tok::Number(n)) => parse_number(&n).ok_or_else(|| p.error(&["number"]))?,
                Some(Tok::Str(s)) => Value::Text(s),
                Some(Tok::Ident(s)) if s.eq_ignore_ascii_case("NULL") => Value::Null,
                _ => return Err(p.error(&["number", "string", "NULL"])),
            };
            p.at += 1;
            let (cname, ctype) = view.columns()[column];
            let ok = match (&literal, ctype, op) {
                (Value::Null, _, Op::Like) => false,
                (Value::Null, _, _) => true,
                (Value::Text(_), ColumnType::Text, _) => true,
                (Value::Int(_) | Value::Real(_), ColumnType::Int | ColumnType::Real, op) => op != Op::Like,
                _ => false,
            };
            if !ok {
                return Err(QueryError::Type { message: format!("cannot apply {op:?} with {literal:?} to {cname} ({ctype:?})") });
            }
            conditions.push(Condition { column, op, literal });
            if !p.keyword("AND") {
                break;
            }
        }
    }
    let mut order_by = None;
    if p.keyword("ORDER") {
        p.expect_keyword("BY")?;
        let column = resolve(&p.ident("column name")?)?;
        let desc = if p.keyword("DESC") {
            true
        } else {
            p.keyword("ASC");
            false
        };
        order_by = Some((column, desc));
    }
    let mut limit = MAX_LIMIT;
    if p.keyword("LIMIT") {
        match p.peek().map(|t| t.tok.clone()) {
            Some(Tok::Number(n)) => match n.parse::<u64>() {
                Ok(v) => limit = (v.min(MAX_LIMIT as u64)) as usize,
                Err(_) => return Err(p.error(&["nonnegative integer"])),
            },
            _ => return Err(p.error(&["nonnegative integer"])),
        }
        p.at += 1;
    }
    p.symbol(";");
    if p.peek().is_some() {
        let mut expected = Vec::new();
        if conditions.is_empty() && order_by.is_none() {
            expected.push("WHERE");
        }
        if !conditions.is_empty() && order_by.is_none() {
            expected.push("AND");
        }
        if order_by.is_none() {
            expected.push("ORDER BY");
        }
        expected.extend(["LIMIT", "end of input"]);
        return Err(p.error(&expected));
    }
    Ok(QuerySpec { view, columns, conditions, order_by, limit })
}

/// SQL LIKE with `%` as the only wildcard (case-sensitive).
pub fn like(text: &str, pattern: &str) -> bool {
    let parts: Vec<&str> = pattern.split('%').collect();
    if parts.len() == 1 {
        return text == pattern;
    }
    let (first, last) = (parts[0], parts[parts.len() - 1]);
    if !text.starts_with(first) || text.len() < first.len() + last.len() || !text.ends_with(last) {
        return false;
    }
    let mut rest = &text[first.len()..text.len() - last.len()];
    for middle in &parts[1..parts.len() - 1] {
        match rest.find(middle) {
            Some(i) => rest = &rest[i + middle.len()..],
            None => return false,
        }
    }
    true
}

fn compare(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => Some(x.cmp(y)),
        (Value::Text(x), Value::Text(y)) => Some(x.cmp(y)),
        _ => a.as_f64()?.partial_cmp(&b.as_f64()?),
    }
}

fn matches(cell: &Value, op: Op, literal: &Value) -> bool {
    if matches!(cell, Value::Null) || matches!(literal, Value::Null) {
        return false;
    }
    if op == Op::Like {
        return match (cell, literal) {
            (Value::Text(t), Value::Text(p)) => like(t, p),
            _ => false,
        };
    }
    let Some(ord) = compare(cell, literal) else { return false };
    match op {
        Op::Eq => ord == Ordering::Equal,
        Op::Ne => ord != Ordering::Equal,
        Op::Lt => ord == Ordering::Less,
        Op::Le => ord != Ordering::Greater,
        Op::Gt => ord == Ordering::Greater,
        Op::Ge => ord != Ordering::Less,
        Op::Like => unreachable!(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

fn opt_real(v: Option<f64>) -> Value {
    v.map_or(Value::Null, Value::Real)
}

/// Materializes all rows of a view, in primary-key order.
pub fn materialize(view: View, state: &State) -> Vec<Vec<Value>> {
    let id = |v: u64| Value::Int(v as i64);
    match view {
        View::Runs => state
            .live_runs()
            .map(|r| {
                let flow = state.flows.get(&r.flow_id);
                vec![
                    id(r.run_id),
                    id(r.task_id),
                    id(r.flow_id),
                    flow.map_or(Value::Null, |f| Value::Text(f.name.clone())),
                    flow.map_or(Value::Null, |f| Value::Int(f.version as i64)),
                    id(r.uploader),
                    Value::Text(r.uploaded_at.to_rfc3339_opts(chrono::SecondsFormat::Micros, true)),
                    Value::Text(r.setting_origin.as_str().into()),
                ]
            })
            .collect(),
        View::Evaluations => state
            .live_runs()
            .filter(|r| r.status == RunStatus::Evaluated)
            .flat_map(|r| {
                r.evaluation.iter().flat_map(move |e| {
                    e.measures.iter().map(move |(name, m)| {
                        vec![
                            id(r.run_id),
                            id(r.task_id),
                            id(r.flow_id),
                            Value::Text(name.clone()),
                            Value::Real(m.mean),
                            opt_real(m.std),
                        ]
                    })
                })
            })
            .collect(),
        View::Datasets => state
            .datasets
            .values()
            .filter(|d| !d.deleted)
            .map(|d| {
                let q = |name: &str| opt_real(d.qualities.as_ref().and_then(|q| q.get(name)));
                vec![
                    id(d.dataset_id),
                    Value::Text(d.name.clone()),
                    Value::Int(d.version as i64),
                    Value::Text(d.status.as_str().into()),
                    id(d.uploader),
                    q("NumberOfInstances"),
                    q("NumberOfFeatures"),
                    q("NumberOfClasses"),
                ]
            })
            .collect(),
        View::Flows => state
            .flows
            .values()
            .filter(|f| !f.deleted)
            .map(|f| vec![id(f.flow_id), Value::Text(f.name.clone()), Value::Int(f.version as i64), id(f.uploader)])
            .collect(),
    }
}

pub fn execute(spec: &QuerySpec, state: &State) -> Table {
    let mut rows: Vec<Vec<Value>> = materialize(spec.view, state)
        .into_iter()
        .filter(|row| spec.conditions.iter().all(|c| matches(&row[c.column], c.op, &c.literal)))
        .collect();
    if let Some((col, desc)) = spec.order_by {
        // stable; NULLs last in either direction
        rows.sort_by(|a, b| match (&a[col], &b[col]) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Null, _) => Ordering::Greater,
            (_, Value::Null) => Ordering::Less,
            (x, y) => {
                let ord = compare(x, y).unwrap_or(Ordering::Equal);
                if desc {
                    ord.reverse()
                } else {
                    ord
                }
            }
        });
    }
    rows.truncate(spec.limit);
    let columns = spec.columns.iter().map(|&c| spec.view.columns()[c].0.to_string()).collect();
    let rows = rows.into_iter().map(|row| spec.columns.iter().map(|&c| row[c].clone()).collect()).collect();
    Table { columns, rows }
}

pub fn run_query(sql: &str, state: &State) -> Result<Table, QueryError> {
    Ok(execute(&parse(sql)?, state))
}
