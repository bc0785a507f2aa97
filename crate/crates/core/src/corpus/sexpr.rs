//! Bracketed s-expressions, as used by treebank files and tree output.

use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SExpr {
    Atom(String),
    List(Vec<SExpr>),
}

/// Parse failure with the 1-based line where it was detected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SExprError {
    pub line: usize,
    pub msg: String,
}

impl fmt::Display for SExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.msg)
    }
}

#[derive(Debug)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn tokenize(text: &str) -> Vec<(Tok<'_>, usize)> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut rest = line;
        while let Some(start) = rest.find(|c: char| !c.is_whitespace()) {
            rest = &rest[start..];
            let c = rest.as_bytes()[0];
            if c == b'(' {
                out.push((Tok::Open, ln + 1));
                rest = &rest[1..];
            } else if c == b')' {
                out.push((Tok::Close, ln + 1));
                rest = &rest[1..];
            } else {
                let end = rest
                    .find(|c: char| c.is_whitespace() || c == '(' || c == ')')
                    .unwrap_or(rest.len());
                out.push((Tok::Atom(&rest[..end]), ln + 1));
                rest = &rest[end..];
            }
        }
    }
    out
}

/// Every top-level expression in `text`, each paired with the line it starts on.
/// Expressions may span lines.
pub fn parse_all(text: &str) -> Result<Vec<(SExpr, usize)>, SExprError> {
    let toks = tokenize(text);
    let mut out = Vec::new();
    let mut stack: Vec<(Vec<SExpr>, usize)> = Vec::new();
    for (tok, line) in toks {
        match tok {
            Tok::Open => stack.push((Vec::new(), line)),
            Tok::Close => {
                let (items, start) = stack.pop().ok_or_else(|| SExprError {
                    line,
                    msg: "unbalanced ')'".into(),
                })?;
                let expr = SExpr::List(items);
                match stack.last_mut() {
                    Some((parent, _)) => parent.push(expr),
                    None => out.push((expr, start)),
                }
            }
            Tok::Atom(a) => match stack.last_mut() {
                Some((parent, _)) => parent.push(SExpr::Atom(a.to_string())),
                None => {
                    return Err(SExprError {
                        line,
                        msg: format!("atom `{a}` outside brackets"),
                    })
                }
            },
        }
    }
    if let Some((_, start)) = stack.last() {
        return Err(SExprError {
            line: *start,
            msg: "unclosed '('".into(),
        });
    }
    Ok(out)
}

impl fmt::Display for SExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SExpr::Atom(a) => f.write_str(a),
            SExpr::List(items) => {
                f.write_str("(")?;
                for (i, it) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{it}")?;
                }
                f.write_str(")")
            }
        }
    }
}
