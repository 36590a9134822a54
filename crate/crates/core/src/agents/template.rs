//! `{placeholder}` substitution for prompt templates.
//!
//! Besides plain names, a placeholder may be a chain of dictionary lookups
//! with defaults, `{cfg.get('a', {}).get('b', 'fallback'):.2f}`, which is
//! resolved from the dotted key `cfg.a.b`. Brace groups that do not parse as
//! a placeholder (JSON examples inside a template) are copied unchanged.

/// How literal braces are written in a template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Braces {
    /// Braces are literal unless they form a placeholder.
    Plain,
    /// `{{` and `}}` stand for single braces.
    Doubled,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no value for template placeholder `{0}`")]
pub struct MissingContext(pub String);

#[derive(Debug, Clone, PartialEq)]
struct Placeholder {
    name: String,
    keys: Vec<String>,
    default: Option<String>,
    format: Option<String>,
}

impl Placeholder {
    fn resolve(&self, lookup: &impl Fn(&str) -> Option<String>) -> Result<String, MissingContext> {
        let value = if self.keys.is_empty() {
            lookup(&self.name).ok_or_else(|| MissingContext(self.name.clone()))?
        } else {
            let path = format!("{}.{}", self.name, self.keys.join("."));
            match lookup(&path) {
                Some(v) => v,
                None => self.default.clone().unwrap_or_default(),
            }
        };
        Ok(apply_format(&value, self.format.as_deref()))
    }
}

fn apply_format(value: &str, format: Option<&str>) -> String {
    let precision = format
        .and_then(|f| f.strip_prefix('.'))
        .and_then(|f| f.strip_suffix('f'))
        .and_then(|p| p.parse::<usize>().ok());
    match (precision, value.trim().parse::<f64>()) {
        (Some(p), Ok(x)) => format!("{x:.p$}"),
        _ => value.to_string(),
    }
}

/// Substitutes every placeholder in `template`.
pub fn render(
    template: &str,
    braces: Braces,
    lookup: impl Fn(&str) -> Option<String>,
) -> Result<String, MissingContext> {
    let mut out = String::with_capacity(template.len());
    let mut i = 0;
    while i < template.len() {
        let rest = &template[i..];
        if braces == Braces::Doubled && (rest.starts_with("{{") || rest.starts_with("}}")) {
            out.push_str(&rest[..1]);
            i += 2;
            continue;
        }
        if rest.starts_with('{') {
            if let Some(ph) = matching_close(rest).and_then(|end| Some((end, parse_placeholder(&rest[1..end])?))) {
                out.push_str(&ph.1.resolve(&lookup)?);
                i += ph.0 + 1;
                continue;
            }
        }
        let ch = rest.chars().next().expect("non-empty rest");
        out.push(ch);
        i += ch.len_utf8();
    }
    Ok(out)
}

/// Byte offset of the brace closing the one at the start of `s`, on the
/// same line, skipping quoted text.
fn matching_close(s: &str) -> Option<usize> {
    let mut depth = 0usize;
    let mut quote: Option<char> = None;
    for (i, c) in s.char_indices() {
        match (quote, c) {
            (_, '\n') => return None,
            (Some(q), c) if c == q => quote = None,
            (Some(_), _) => {}
            (None, '\'' | '"') => quote = Some(c),
            (None, '{') => depth += 1,
            (None, '}') => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

struct Cursor<'a> {
    s: &'a str,
}

impl<'a> Cursor<'a> {
    fn ws(&mut self) {
        self.s = self.s.trim_start();
    }

    fn eat(&mut self, token: &str) -> bool {
        self.ws();
        match self.s.strip_prefix(token) {
            Some(rest) => {
                self.s = rest;
                true
            }
            None => false,
        }
    }

    fn ident(&mut self) -> Option<&'a str> {
        let first = self.s.chars().next()?;
        if !(first.is_ascii_alphabetic() || first == '_') {
            return None;
        }
        let end = self.s.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(self.s.len());
        let (id, rest) = self.s.split_at(end);
        self.s = rest;
        Some(id)
    }

    fn quoted(&mut self) -> Option<String> {
        self.ws();
        let q = self.s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
        let body = &self.s[1..];
        let end = body.find(q)?;
        self.s = &body[end + 1..];
        Some(body[..end].to_string())
    }

    /// A default argument: string, number, `{}` or `None`.
    fn literal(&mut self) -> Option<String> {
        self.ws();
        if let Some(s) = self.quoted() {
            return Some(s);
        }
        if self.eat("{}") || self.eat("None") {
            return Some(String::new());
        }
        let end = self.s.find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e'))).unwrap_or(self.s.len());
        if end == 0 {
            return None;
        }
        let (num, rest) = self.s.split_at(end);
        num.parse::<f64>().ok()?;
        self.s = rest;
        Some(num.to_string())
    }
}

fn parse_placeholder(inner: &str) -> Option<Placeholder> {
    let mut c = Cursor { s: inner };
    let name = c.ident()?.to_string();
    let mut keys = Vec::new();
    let mut default = None;
    while c.s.starts_with(".get(") {
        c.s = &c.s[".get(".len()..];
        keys.push(c.quoted()?);
        default = if c.eat(",") { Some(c.literal()?) } else { None };
        if !c.eat(")") {
            return None;
        }
    }
    let format = match c.s.strip_prefix(':') {
        Some(spec) if !spec.is_empty() && spec.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '.') => {
            c.s = "";
            Some(spec.to_string())
        }
        Some(_) => return None,
        None => None,
    };
    c.s.is_empty().then_some(Placeholder { name, keys, default, format })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx<'a>(pairs: &'a [(&'a str, &'a str)]) -> impl Fn(&str) -> Option<String> + 'a {
        move |k| pairs.iter().find(|(n, _)| *n == k).map(|(_, v)| v.to_string())
    }

    #[test]
    fn plain_and_missing() {
        assert_eq!(render("a {x} b", Braces::Plain, ctx(&[("x", "1")])).unwrap(), "a 1 b");
        assert_eq!(render("{y}", Braces::Plain, ctx(&[])), Err(MissingContext("y".into())));
    }

    #[test]
    fn lookup_chains_fall_back_to_defaults() {
        let t = "{h.get('confidence', 0.5):.2f} {r.get('ctx', {}).get('apps', 'Engineering problems')}";
        assert_eq!(render(t, Braces::Plain, ctx(&[])).unwrap(), "0.50 Engineering problems");
        let got = render(t, Braces::Plain, ctx(&[("h.confidence", "0.875"), ("r.ctx.apps", "grids")])).unwrap();
        assert_eq!(got, "0.88 grids");
    }

    #[test]
    fn json_examples_stay_literal() {
        let t = "{\n  \"a\": {\"b\": 1}\n} {\"k\": \"v\"} {x}";
        assert_eq!(render(t, Braces::Plain, ctx(&[("x", "X")])).unwrap(), "{\n  \"a\": {\"b\": 1}\n} {\"k\": \"v\"} X");
    }

    #[test]
    fn doubled_braces_unescape() {
        let t = "{{\n  \"flag\": true\n}} {x}";
        assert_eq!(render(t, Braces::Doubled, ctx(&[("x", "{raw}")])).unwrap(), "{\n  \"flag\": true\n} {raw}");
        assert_eq!(render("{{x}}", Braces::Plain, ctx(&[("x", "1")])).unwrap(), "{1}");
    }
}
