//! A small, explicitly annotated three-address IR.
//!
//! Programs are written one statement per line inside `func` blocks:
//!
//! ```text
//! # comments start with '#'
//! entry main
//!
//! func main(data, kb) {
//!   alg = const "AES/CBC/PKCS5Padding"
//!   c = api Cipher.getInstance(String) alg
//!   key = call makeKey kb
//!   branch L1 flag
//!   @L1 c = api Cipher.init(int,Key) c mode key
//!   y = assign c
//!   return y
//! }
//! ```
//!
//! Statement forms (an optional `@LABEL` prefix places the statement in the
//! control region opened by `branch LABEL`):
//!
//! | form                              | kind        |
//! |-----------------------------------|-------------|
//! | `[d1, d2 =] api Sig(T1,T2) a b`   | `ApiCall`   |
//! | `[d =] call name a b`             | `LocalCall` |
//! | `d = const LITERAL`               | `ConstLoad` |
//! | `d1, d2 = assign a b`             | `Assign`    |
//! | `branch LABEL a b`                | `Branch`    |
//! | `return [a]`                      | `Return`    |
//!
//! Operands are separated by whitespace or commas. A missing `entry` line
//! selects `main`, or the first function when there is no `main`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::{self, Write as _};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IrError {
    #[error("syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid program: {function}[{}]: {message}", index.map(|i| i.to_string()).unwrap_or_else(|| "-".into()))]
    Validation {
        function: String,
        index: Option<usize>,
        message: String,
    },
    #[error("invalid token {raw:?}: {message}")]
    Format { raw: String, message: String },
}

fn validation(function: &str, index: Option<usize>, message: impl Into<String>) -> IrError {
    IrError::Validation {
        function: function.to_string(),
        index,
        message: message.into(),
    }
}

/// Visible stand-in for a space inside a constant literal; corpus files
/// separate tokens with spaces.
pub const CONSTANT_SPACE: char = '\u{2423}';

/// A canonical API signature or constant token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ApiSignature {
    pub text: String,
    pub is_constant: bool,
}

impl ApiSignature {
    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl fmt::Display for ApiSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Whether a canonical token denotes a constant rather than an API.
pub fn is_constant_token(text: &str) -> bool {
    text.starts_with('"')
        || matches!(text, "true" | "false" | "null")
        || text.parse::<f64>().is_ok()
}

/// Canonicalizes an API signature or constant literal.
///
/// API signatures lose all whitespace; quoted constants keep their content
/// with interior spaces replaced by [`CONSTANT_SPACE`]. Tabs and newlines are
/// reserved by the corpus format and rejected.
pub fn canonicalize_signature(raw: &str) -> Result<ApiSignature, IrError> {
    if raw.contains(['\n', '\t', '\r']) {
        return Err(IrError::Format {
            raw: raw.to_string(),
            message: "contains a reserved separator (tab or newline)".into(),
        });
    }
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(IrError::Format {
            raw: raw.to_string(),
            message: "empty".into(),
        });
    }
    if trimmed.starts_with('"') {
        let text: String = trimmed
            .chars()
            .map(|c| if c.is_whitespace() { CONSTANT_SPACE } else { c })
            .collect();
        return Ok(ApiSignature {
            text,
            is_constant: true,
        });
    }
    let text: String = trimmed.chars().filter(|c| !c.is_whitespace()).collect();
    let is_constant = is_constant_token(&text);
    Ok(ApiSignature { text, is_constant })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StmtKind {
    Assign,
    ApiCall,
    LocalCall,
    ConstLoad,
    Branch,
    Return,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub index: usize,
    pub kind: StmtKind,
    pub defs: Vec<String>,
    /// Operands in source order. For calls this is the argument list.
    pub uses: Vec<String>,
    pub api: Option<ApiSignature>,
    pub callee: Option<String>,
    pub constant: Option<ApiSignature>,
    /// Region label opened by a `Branch`.
    pub label: Option<String>,
    /// Label of the enclosing control region; empty at function top level.
    pub control_dep: String,
}

impl Statement {
    fn base(kind: StmtKind, defs: &[&str], uses: &[&str]) -> Self {
        Statement {
            index: 0,
            kind,
            defs: defs.iter().map(|s| s.to_string()).collect(),
            uses: uses.iter().map(|s| s.to_string()).collect(),
            api: None,
            callee: None,
            constant: None,
            label: None,
            control_dep: String::new(),
        }
    }

    /// Builds an `ApiCall`. Panics if `signature` is not a valid token.
    pub fn api_call(defs: &[&str], signature: &str, uses: &[&str]) -> Self {
        let mut s = Self::base(StmtKind::ApiCall, defs, uses);
        s.api = Some(canonicalize_signature(signature).expect("valid signature"));
        s
    }

    pub fn local_call(defs: &[&str], callee: &str, uses: &[&str]) -> Self {
        let mut s = Self::base(StmtKind::LocalCall, defs, uses);
        s.callee = Some(callee.to_string());
        s
    }

    /// Builds a `ConstLoad`. Panics if `literal` is not a valid token.
    pub fn const_load(def: &str, literal: &str) -> Self {
        let mut s = Self::base(StmtKind::ConstLoad, &[def], &[]);
        let mut c = canonicalize_signature(literal).expect("valid literal");
        c.is_constant = true;
        s.constant = Some(c);
        s
    }

    pub fn assign(defs: &[&str], uses: &[&str]) -> Self {
        Self::base(StmtKind::Assign, defs, uses)
    }

    pub fn branch(label: &str, uses: &[&str]) -> Self {
        let mut s = Self::base(StmtKind::Branch, &[], uses);
        s.label = Some(label.to_string());
        s
    }

    pub fn ret(var: Option<&str>) -> Self {
        Self::base(StmtKind::Return, &[], &var.into_iter().collect::<Vec<_>>())
    }

    /// Places the statement in control region `label`.
    pub fn under(mut self, label: &str) -> Self {
        self.control_dep = label.to_string();
        self
    }

    pub fn use_set(&self) -> BTreeSet<&str> {
        self.uses.iter().map(String::as_str).collect()
    }

    /// The API or constant token this statement contributes, if any.
    pub fn token(&self) -> Option<&ApiSignature> {
        match self.kind {
            StmtKind::ApiCall => self.api.as_ref(),
            StmtKind::ConstLoad => self.constant.as_ref(),
            _ => None,
        }
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.control_dep.is_empty() {
            write!(f, "@{} ", self.control_dep)?;
        }
        if !self.defs.is_empty() {
            write!(f, "{} = ", self.defs.join(", "))?;
        }
        match self.kind {
            StmtKind::ApiCall => {
                write!(f, "api {}", self.api.as_ref().map(|a| a.as_str()).unwrap_or(""))?
            }
            StmtKind::LocalCall => write!(f, "call {}", self.callee.as_deref().unwrap_or(""))?,
            StmtKind::ConstLoad => write!(
                f,
                "const {}",
                self.constant.as_ref().map(|c| c.as_str()).unwrap_or("")
            )?,
            StmtKind::Assign => f.write_str("assign")?,
            StmtKind::Branch => write!(f, "branch {}", self.label.as_deref().unwrap_or(""))?,
            StmtKind::Return => f.write_str("return")?,
        }
        for u in &self.uses {
            write!(f, " {u}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub params: Vec<String>,
    pub body: Vec<Statement>,
    pub returns: Option<String>,
}

impl Function {
    /// Builds a function, numbering the body and deriving `returns` from a
    /// trailing `Return`.
    pub fn new(name: &str, params: &[&str], body: Vec<Statement>) -> Self {
        let mut f = Function {
            name: name.to_string(),
            params: params.iter().map(|s| s.to_string()).collect(),
            body,
            returns: None,
        };
        f.renumber();
        f
    }

    fn renumber(&mut self) {
        for (i, s) in self.body.iter_mut().enumerate() {
            s.index = i;
        }
        self.returns = self
            .body
            .iter()
            .rev()
            .find(|s| s.kind == StmtKind::Return)
            .and_then(|s| s.uses.first().cloned());
    }

    /// Parent region of every label opened in this function.
    pub fn label_parents(&self) -> HashMap<&str, &str> {
        self.body
            .iter()
            .filter(|s| s.kind == StmtKind::Branch)
            .filter_map(|s| s.label.as_deref().map(|l| (l, s.control_dep.as_str())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniProgram {
    pub functions: BTreeMap<String, Function>,
    pub entry: String,
}

impl MiniProgram {
    /// Builds and validates a program from functions.
    pub fn new(entry: &str, functions: Vec<Function>) -> Result<Self, IrError> {
        let program = MiniProgram {
            functions: functions.into_iter().map(|f| (f.name.clone(), f)).collect(),
            entry: entry.to_string(),
        };
        program.validate()?;
        Ok(program)
    }

    pub fn statement_count(&self) -> usize {
        self.functions.values().map(|f| f.body.len()).sum()
    }

    pub fn validate(&self) -> Result<(), IrError> {
        if !self.functions.contains_key(&self.entry) {
            return Err(validation(
                &self.entry,
                None,
                format!("entry function `{}` is not defined", self.entry),
            ));
        }
        for f in self.functions.values() {
            self.validate_function(f)?;
        }
        Ok(())
    }

    fn validate_function(&self, f: &Function) -> Result<(), IrError> {
        let name = f.name.as_str();
        let mut defined: HashSet<&str> = HashSet::new();
        for p in &f.params {
            if !defined.insert(p.as_str()) {
                return Err(validation(name, None, format!("duplicate parameter `{p}`")));
            }
        }
        let mut labels: HashSet<&str> = HashSet::new();
        let last = f.body.len().saturating_sub(1);
        for (pos, s) in f.body.iter().enumerate() {
            let at = Some(s.index);
            let err = |m: String| Err(validation(name, at, m));
            if s.index != pos {
                return err(format!("statement index {} out of sequence", s.index));
            }
            if !s.control_dep.is_empty() && !labels.contains(s.control_dep.as_str()) {
                return err(format!(
                    "control region `{}` is not opened by an earlier branch",
                    s.control_dep
                ));
            }
            let mut seen_defs = HashSet::new();
            for d in &s.defs {
                if !seen_defs.insert(d.as_str()) {
                    return err(format!("variable `{d}` defined twice by one statement"));
                }
            }
            for u in &s.uses {
                if !defined.contains(u.as_str()) {
                    return err(format!("variable `{u}` used before definition"));
                }
            }
            match s.kind {
                StmtKind::ApiCall => {
                    if s.api.as_ref().is_none_or(|a| a.text.is_empty()) || s.callee.is_some() {
                        return err("api call needs a signature and no callee".into());
                    }
                }
                StmtKind::LocalCall => {
                    let Some(callee) = s.callee.as_deref().filter(|c| !c.is_empty()) else {
                        return err("local call without callee".into());
                    };
                    if s.api.is_some() {
                        return err("local call carries an api signature".into());
                    }
                    let Some(target) = self.functions.get(callee) else {
                        return err(format!("call to undefined function `{callee}`"));
                    };
                    if target.params.len() != s.uses.len() {
                        return err(format!(
                            "call to `{callee}` passes {} arguments, expected {}",
                            s.uses.len(),
                            target.params.len()
                        ));
                    }
                    if s.defs.len() > 1 {
                        return err(format!("call to `{callee}` binds more than one result"));
                    }
                    if !s.defs.is_empty() && target.returns.is_none() {
                        return err(format!("`{callee}` returns no value"));
                    }
                }
                StmtKind::ConstLoad => {
                    if s.constant.as_ref().is_none_or(|c| c.text.is_empty()) || s.defs.len() != 1
                    {
                        return err("constant load needs a literal and exactly one def".into());
                    }
                }
                StmtKind::Branch => {
                    if !s.defs.is_empty() {
                        return err("branch statements cannot define variables".into());
                    }
                    let Some(label) = s.label.as_deref().filter(|l| !l.is_empty()) else {
                        return err("branch without label".into());
                    };
                    if !labels.insert(label) {
                        return err(format!("label `{label}` opened twice"));
                    }
                }
                StmtKind::Return => {
                    if pos != last || !s.control_dep.is_empty() {
                        return err("return must be the last top-level statement".into());
                    }
                    if s.uses.len() > 1 || !s.defs.is_empty() {
                        return err("return takes at most one operand".into());
                    }
                }
                StmtKind::Assign => {
                    if s.defs.is_empty() {
                        return err("assignment without target".into());
                    }
                }
            }
            defined.extend(s.defs.iter().map(String::as_str));
        }
        let expected_returns = f
            .body
            .last()
            .filter(|s| s.kind == StmtKind::Return)
            .and_then(|s| s.uses.first());
        if f.returns.as_ref() != expected_returns {
            return Err(validation(name, None, "`returns` disagrees with the return statement"));
        }
        Ok(())
    }

    /// Deterministic text form; parses back to an equal program.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "entry {}", self.entry);
        for f in self.functions.values() {
            let _ = writeln!(out, "\nfunc {}({}) {{", f.name, f.params.join(", "));
            for s in &f.body {
                let _ = writeln!(out, "  {s}");
            }
            out.push_str("}\n");
        }
        out
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_' || c == '$')
        && chars.all(|c| c.is_alphanumeric() || matches!(c, '_' | '$' | '.'))
        && !matches!(
            s,
            "api" | "call" | "const" | "assign" | "branch" | "return" | "func" | "entry"
        )
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quote = !in_quote,
            '#' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

fn split_operands(text: &str) -> Vec<&str> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .collect()
}

struct LineParser {
    line: usize,
}

impl LineParser {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, IrError> {
        Err(IrError::Syntax {
            line: self.line,
            message: message.into(),
        })
    }

    fn idents(&self, text: &str, what: &str) -> Result<Vec<String>, IrError> {
        split_operands(text)
            .into_iter()
            .map(|v| {
                if is_ident(v) {
                    Ok(v.to_string())
                } else {
                    self.err(format!("invalid {what} `{v}`"))
                }
            })
            .collect()
    }

    fn statement(&self, text: &str) -> Result<Statement, IrError> {
        let mut rest = text.trim();
        let mut control_dep = String::new();
        if let Some(stripped) = rest.strip_prefix('@') {
            let end = stripped.find(char::is_whitespace).unwrap_or(stripped.len());
            let label = &stripped[..end];
            if !is_ident(label) {
                return self.err(format!("invalid region label `{label}`"));
            }
            control_dep = label.to_string();
            rest = stripped[end..].trim_start();
        }

        let keyword = |s: &str| -> Option<(String, String)> {
            let end = s.find(char::is_whitespace).unwrap_or(s.len());
            let head = &s[..end];
            matches!(head, "api" | "call" | "branch" | "return")
                .then(|| (head.to_string(), s[end..].trim().to_string()))
        };

        let (defs, rhs) = if keyword(rest).is_some() {
            (Vec::new(), rest.to_string())
        } else {
            let Some(eq) = rest.find('=') else {
                return self.err("expected `<defs> = <expr>` or a keyword statement");
            };
            let defs = self.idents(&rest[..eq], "variable")?;
            if defs.is_empty() {
                return self.err("empty assignment target");
            }
            (defs, rest[eq + 1..].trim().to_string())
        };

        let end = rhs.find(char::is_whitespace).unwrap_or(rhs.len());
        let (head, tail) = (&rhs[..end], rhs[end..].trim());
        let mut stmt = match head {
            "api" => {
                let Some(open) = tail.find('(') else {
                    return self.err("api signature needs an argument list");
                };
                let mut depth = 0usize;
                let mut close = None;
                for (i, c) in tail.char_indices().skip_while(|(i, _)| *i < open) {
                    match c {
                        '(' => depth += 1,
                        ')' => {
                            depth -= 1;
                            if depth == 0 {
                                close = Some(i);
                                break;
                            }
                        }
                        _ => {}
                    }
                }
                let Some(close) = close else {
                    return self.err("unbalanced parentheses in api signature");
                };
                let sig = canonicalize_signature(&tail[..=close]).or_else(|e| self.err(e.to_string()))?;
                let uses = self.idents(&tail[close + 1..], "operand")?;
                Statement {
                    api: Some(sig),
                    uses,
                    ..Statement::base(StmtKind::ApiCall, &[], &[])
                }
            }
            "call" => {
                let ops = self.idents(tail, "operand")?;
                let Some((callee, args)) = ops.split_first() else {
                    return self.err("call without callee");
                };
                Statement {
                    callee: Some(callee.clone()),
                    uses: args.to_vec(),
                    ..Statement::base(StmtKind::LocalCall, &[], &[])
                }
            }
            "const" => {
                if tail.is_empty() {
                    return self.err("const without literal");
                }
                let mut c = canonicalize_signature(tail).or_else(|e| self.err(e.to_string()))?;
                c.is_constant = true;
                Statement {
                    constant: Some(c),
                    ..Statement::base(StmtKind::ConstLoad, &[], &[])
                }
            }
            "assign" => Statement {
                uses: self.idents(tail, "operand")?,
                ..Statement::base(StmtKind::Assign, &[], &[])
            },
            "branch" => {
                let ops = self.idents(tail, "operand")?;
                let Some((label, uses)) = ops.split_first() else {
                    return self.err("branch without label");
                };
                Statement {
                    label: Some(label.clone()),
                    uses: uses.to_vec(),
                    ..Statement::base(StmtKind::Branch, &[], &[])
                }
            }
            "return" => Statement {
                uses: self.idents(tail, "operand")?,
                ..Statement::base(StmtKind::Return, &[], &[])
            },
            other => return self.err(format!("unknown statement form `{other}`")),
        };
        stmt.defs = defs;
        stmt.control_dep = control_dep;
        Ok(stmt)
    }
}

/// Parses and validates a MiniIR document.
pub fn parse_program(source: &str) -> Result<MiniProgram, IrError> {
    let mut functions: Vec<Function> = Vec::new();
    let mut entry: Option<String> = None;
    let mut current: Option<Function> = None;
    let mut names = HashSet::new();

    for (i, raw) in source.lines().enumerate() {
        let p = LineParser { line: i + 1 };
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(f) = current.as_mut() {
            if line == "}" {
                let mut f = current.take().unwrap();
                f.renumber();
                functions.push(f);
            } else {
                f.body.push(p.statement(line)?);
            }
            continue;
        }
        if let Some(name) = line.strip_prefix("entry ") {
            let name = name.trim();
            if !is_ident(name) || entry.is_some() {
                return p.err("invalid or duplicate entry declaration");
            }
            entry = Some(name.to_string());
        } else if let Some(header) = line.strip_prefix("func ") {
            let Some(body) = header.trim_end().strip_suffix('{') else {
                return p.err("function header must end with `{`");
            };
            let body = body.trim();
            let (Some(open), Some(close)) = (body.find('('), body.rfind(')')) else {
                return p.err("function header needs a parameter list");
            };
            if close != body.len() - 1 || close < open {
                return p.err("malformed parameter list");
            }
            let name = body[..open].trim();
            if !is_ident(name) {
                return p.err(format!("invalid function name `{name}`"));
            }
            if !names.insert(name.to_string()) {
                return p.err(format!("function `{name}` defined twice"));
            }
            let params = p.idents(&body[open + 1..close], "parameter")?;
            current = Some(Function {
                name: name.to_string(),
                params,
                body: Vec::new(),
                returns: None,
            });
        } else {
            return p.err(format!("unexpected `{line}` outside a function"));
        }
    }
    if current.is_some() {
        return Err(IrError::Syntax {
            line: source.lines().count(),
            message: "unterminated function block".into(),
        });
    }
    if functions.is_empty() {
        return Err(IrError::Syntax {
            line: 0,
            message: "no functions".into(),
        });
    }
    let entry = entry.unwrap_or_else(|| {
        if names.contains("main") {
            "main".to_string()
        } else {
            functions[0].name.clone()
        }
    });
    let program = MiniProgram {
        functions: functions.into_iter().map(|f| (f.name.clone(), f)).collect(),
        entry,
    };
    program.validate()?;
    Ok(program)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let p = parse_program("func main() {\n  api Cipher.getInstance(String)\n}\n").unwrap();
        assert_eq!(p.functions.len(), 1);
        assert_eq!(p.statement_count(), 1);
        assert_eq!(p.entry, "main");
    }

    #[test]
    fn dangling_callee_is_named() {
        let err = parse_program("func main(a) {\n  x = call foo a\n}\n").unwrap_err();
        match &err {
            IrError::Validation { index, message, .. } => {
                assert_eq!(*index, Some(0));
                assert!(message.contains("foo"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn use_before_def_is_rejected() {
        let err = parse_program("func main() {\n  api A.b(int) x\n  x = const 1\n}\n").unwrap_err();
        assert!(matches!(err, IrError::Validation { index: Some(0), .. }), "{err}");
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = parse_program("# header\nfunc main() {\n  x = frob y\n}\n").unwrap_err();
        assert_eq!(
            err,
            IrError::Syntax {
                line: 3,
                message: "unknown statement form `frob`".into()
            }
        );
    }

    #[test]
    fn canonical_signatures() {
        let s = canonicalize_signature("Cipher.init( int , Key )").unwrap();
        assert_eq!(s.text, "Cipher.init(int,Key)");
        assert!(!s.is_constant);
        assert_eq!(canonicalize_signature(&s.text).unwrap(), s);
        let c = canonicalize_signature("\"AES/CBC/PKCS5Padding\"").unwrap();
        assert!(c.is_constant);
        assert_eq!(c.text, "\"AES/CBC/PKCS5Padding\"");
        assert!(canonicalize_signature("a\tb").is_err());
        assert!(canonicalize_signature("a\nb").is_err());
        let spaced = canonicalize_signature("\"hello world\"").unwrap();
        assert!(!spaced.text.contains(' '));
        assert_eq!(canonicalize_signature(&spaced.text).unwrap(), spaced);
    }

    #[test]
    fn constants_keep_comment_characters() {
        let p = parse_program("func main() {\n  x = const \"a#b\" # trailing\n  api A.b(String) x\n}\n")
            .unwrap();
        let s = &p.functions["main"].body[0];
        assert_eq!(s.constant.as_ref().unwrap().text, "\"a#b\"");
    }

    #[test]
    fn regions_must_be_opened() {
        let err = parse_program("func main() {\n  @L1 x = const 1\n}\n").unwrap_err();
        assert!(matches!(err, IrError::Validation { .. }));
        parse_program("func main(f) {\n  branch L1 f\n  @L1 x = const 1\n}\n").unwrap();
    }

    #[test]
    fn serialize_roundtrip_fixture() {
        let src = include_str!("../examples/cipher.mir");
        let p = parse_program(src).unwrap();
        assert_eq!(parse_program(&p.serialize()).unwrap(), p);
    }
}
