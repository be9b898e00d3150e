use std::time::Duration;

pub const DEFAULT_COOKIE_NAME: &str = "cahicha_token";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CookieSettings {
    pub name: String,
    pub max_age: Duration,
}

impl Default for CookieSettings {
    fn default() -> Self {
        CookieSettings { name: DEFAULT_COOKIE_NAME.to_owned(), max_age: super::DEFAULT_MAX_AGE }
    }
}

/// `Set-Cookie` value for a freshly minted token. Tokens are base64url so
/// they never need quoting or escaping.
pub fn build_cookie(token: &str, settings: &CookieSettings) -> String {
    format!(
        "{}={}; Path=/; Max-Age={}; HttpOnly; Secure; SameSite=Lax",
        settings.name,
        token,
        settings.max_age.as_secs()
    )
}

fn pairs(header: &str) -> impl Iterator<Item = (&str, &str)> {
    header.split(';').filter_map(|part| {
        let part = part.trim();
        let (name, value) = part.split_once('=')?;
        Some((name.trim(), value.trim()))
    })
}

/// Value of cookie `name` in a request `Cookie` header, if present.
pub fn find_cookie<'a>(header: &'a str, name: &str) -> Option<&'a str> {
    pairs(header).find(|(n, _)| *n == name).map(|(_, v)| v)
}

/// The header with every `name=...` pair removed; `None` if nothing is left.
pub fn strip_cookie(header: &str, name: &str) -> Option<String> {
    let kept: Vec<&str> = header
        .split(';')
        .map(str::trim)
        .filter(|part| !part.is_empty())
        .filter(|part| part.split_once('=').is_none_or(|(n, _)| n.trim() != name))
        .collect();
    (!kept.is_empty()).then(|| kept.join("; "))
}
