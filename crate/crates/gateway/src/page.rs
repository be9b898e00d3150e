//! The challenge page and its assets, compiled into the binary.

const PAGE: &str = include_str!("../assets/challenge.html");
const SCRIPT: &str = include_str!("../assets/challenge.js");
const STYLE: &str = include_str!("../assets/challenge.css");

pub struct Asset {
    pub content_type: &'static str,
    pub body: &'static str,
}

/// Static assets by their path below the reserved prefix.
pub fn asset(name: &str) -> Option<Asset> {
    match name {
        "challenge.js" => Some(Asset { content_type: "text/javascript; charset=utf-8", body: SCRIPT }),
        "challenge.css" => Some(Asset { content_type: "text/css; charset=utf-8", body: STYLE }),
        _ => None,
    }
}

/// A same-site relative path, or "/" for anything that could leave the site.
pub fn safe_redirect(target: &str) -> &str {
    let ok = target.starts_with('/')
        && !target.starts_with("//")
        && !target.starts_with("/\\")
        && !target.chars().any(|c| c.is_control() || c == '\\');
    if ok {
        target
    } else {
        "/"
    }
}

fn escape_attr(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

pub fn render_page(redirect_to: &str) -> String {
    PAGE.replace("{{REDIRECT_TO}}", &escape_attr(safe_redirect(redirect_to)))
}
