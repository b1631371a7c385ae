//! Placeholder rendering with Python `str.format` conventions: `{name}` is
//! substituted, `{{` and `}}` are literal braces. Names may contain dots
//! (`{iter_dir.name}`) and are looked up verbatim.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unbound placeholder {0}")]
    Unbound(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece<'a> {
    Text(&'a str),
    Brace(char),
    Placeholder(&'a str),
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn tokenize(template: &str) -> Vec<Piece<'_>> {
    let mut pieces = Vec::new();
    let bytes = template.as_bytes();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                pieces.push(Piece::Text(&template[start..i]));
                pieces.push(Piece::Brace('{'));
                i += 2;
                start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                pieces.push(Piece::Text(&template[start..i]));
                pieces.push(Piece::Brace('}'));
                i += 2;
                start = i;
            }
            b'{' => {
                let rest = &template[i + 1..];
                let name_len = rest.find(|c: char| !is_name_char(c)).unwrap_or(rest.len());
                let first_ok = rest.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
                if first_ok && rest[name_len..].starts_with('}') {
                    pieces.push(Piece::Text(&template[start..i]));
                    pieces.push(Piece::Placeholder(&rest[..name_len]));
                    i += name_len + 2;
                    start = i;
                } else {
                    i += 1;
                }
            }
            _ => i += 1,
        }
    }
    pieces.push(Piece::Text(&template[start..]));
    pieces
}

/// Placeholder names in order of appearance (with repeats).
pub fn placeholders(template: &str) -> Vec<&str> {
    tokenize(template)
        .into_iter()
        .filter_map(|p| match p {
            Piece::Placeholder(name) => Some(name),
            _ => None,
        })
        .collect()
}

/// Substitutes every placeholder; any placeholder without a binding is an error.
pub fn render(template: &str, bindings: &BTreeMap<String, String>) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len());
    for piece in tokenize(template) {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Brace(c) => out.push(c),
            Piece::Placeholder(name) => match bindings.get(name) {
                Some(value) => out.push_str(value),
                None => return Err(TemplateError::Unbound(name.to_string())),
            },
        }
    }
    Ok(out)
}

/// Fills the generator template's `{context}` and `{question}` slots. Other
/// brace groups are left as written.
pub fn fill_generator_prompt(template: &str, context: &str, question: &str) -> String {
    let mut out = String::with_capacity(template.len() + context.len() + question.len());
    for piece in tokenize(template) {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Brace(c) => out.push(c),
            Piece::Placeholder("context") => out.push_str(context),
            Piece::Placeholder("question") => out.push_str(question),
            Piece::Placeholder(other) => {
                out.push('{');
                out.push_str(other);
                out.push('}');
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn escapes_and_dotted_names() {
        let out = render("{{x}} `{iter_dir.name}/` {a}", &bind(&[("iter_dir.name", "iter3"), ("a", "A")])).unwrap();
        assert_eq!(out, "{x} `iter3/` A");
    }

    #[test]
    fn unbound_is_named() {
        let err = render("write to {iter_name}", &BTreeMap::new()).unwrap_err();
        assert_eq!(err.to_string(), "unbound placeholder iter_name");
    }

    #[test]
    fn json_like_braces_are_not_placeholders() {
        assert!(placeholders("{\"a\": 1} { x }").is_empty());
    }

    #[test]
    fn generator_fill_is_total_with_empty_context() {
        let out = fill_generator_prompt("Ctx:\n{context}\nQ: {question}\n{{\"k\": 1}}", "", "why?");
        assert_eq!(out, "Ctx:\n\nQ: why?\n{\"k\": 1}");
    }

    #[test]
    fn substituted_values_are_not_reinterpreted() {
        let out = fill_generator_prompt("{context}|{question}", "{question}", "q");
        assert_eq!(out, "{question}|q");
    }
}
