//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_lnlab"))
}

/// Every regular file under `root`, as sorted `/`-separated relative paths.
pub fn files(root: &Path) -> Vec<String> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap();
                let parts: Vec<_> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
                out.push(parts.join("/"));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

/// Checks XML well-formedness: one root element, balanced and properly
/// nested tags, quoted unique attributes, and only predefined or numeric
/// entity references. Returns the root element name.
pub fn check_xml(doc: &str) -> Result<String, String> {
    let b = doc.as_bytes();
    let mut i = 0;
    let mut stack: Vec<String> = Vec::new();
    let mut root: Option<String> = None;
    let mut closed_root = false;
    let err = |i: usize, m: &str| Err(format!("byte {i}: {m}"));
    while i < b.len() {
        if b[i] == b'<' {
            if doc[i..].starts_with("<?") {
                if root.is_some() || i != 0 {
                    return err(i, "processing instruction outside prolog");
                }
                let Some(end) = doc[i..].find("?>") else { return err(i, "unterminated declaration") };
                i += end + 2;
            } else if doc[i..].starts_with("<!--") {
                let Some(end) = doc[i + 4..].find("-->") else { return err(i, "unterminated comment") };
                i += 4 + end + 3;
            } else if doc[i..].starts_with("</") {
                let Some(end) = doc[i..].find('>') else { return err(i, "unterminated end tag") };
                let name = doc[i + 2..i + end].trim_end();
                match stack.pop() {
                    Some(open) if open == name => {}
                    Some(open) => return err(i, &format!("</{name}> closes <{open}>")),
                    None => return err(i, &format!("stray </{name}>")),
                }
                if stack.is_empty() {
                    closed_root = true;
                }
                i += end + 1;
            } else {
                if closed_root {
                    return err(i, "second root element");
                }
                i += 1;
                let start = i;
                while i < b.len() && is_name_byte(b[i]) {
                    i += 1;
                }
                if start == i {
                    return err(i, "missing element name");
                }
                let name = doc[start..i].to_string();
                let mut attrs: Vec<&str> = Vec::new();
                loop {
                    while i < b.len() && b[i].is_ascii_whitespace() {
                        i += 1;
                    }
                    if i >= b.len() {
                        return err(i, "unterminated start tag");
                    }
                    if b[i] == b'>' {
                        i += 1;
                        if root.is_none() {
                            root = Some(name.clone());
                        }
                        stack.push(name);
                        break;
                    }
                    if doc[i..].starts_with("/>") {
                        i += 2;
                        if root.is_none() {
                            root = Some(name.clone());
                            closed_root = true;
                        } else if stack.is_empty() {
                            return err(i, "second root element");
                        }
                        break;
                    }
                    let a = i;
                    while i < b.len() && is_name_byte(b[i]) {
                        i += 1;
                    }
                    if a == i {
                        return err(i, "bad attribute");
                    }
                    let attr = &doc[a..i];
                    if attrs.contains(&attr) {
                        return err(i, &format!("duplicate attribute {attr}"));
                    }
                    attrs.push(attr);
                    if b.get(i) != Some(&b'=') {
                        return err(i, "attribute without value");
                    }
                    i += 1;
                    let q = match b.get(i) {
                        Some(&q @ (b'"' | b'\'')) => q,
                        _ => return err(i, "unquoted attribute value"),
                    };
                    i += 1;
                    let v = i;
                    while i < b.len() && b[i] != q {
                        if b[i] == b'<' {
                            return err(i, "'<' in attribute value");
                        }
                        i += 1;
                    }
                    if i >= b.len() {
                        return err(i, "unterminated attribute value");
                    }
                    check_text(&doc[v..i]).map_err(|m| format!("byte {v}: {m}"))?;
                    i += 1;
                    if i < b.len() && !(b[i].is_ascii_whitespace() || b[i] == b'>' || b[i] == b'/') {
                        return err(i, "attributes not separated");
                    }
                }
            }
        } else {
            let end = doc[i..].find('<').map_or(b.len(), |e| i + e);
            let text = &doc[i..end];
            if stack.is_empty() && !text.trim().is_empty() {
                return err(i, "text outside root element");
            }
            check_text(text).map_err(|m| format!("byte {i}: {m}"))?;
            i = end;
        }
    }
    if !stack.is_empty() {
        return Err(format!("unclosed <{}>", stack.last().unwrap()));
    }
    root.ok_or_else(|| "no root element".to_string())
}

fn is_name_byte(c: u8) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, b'_' | b'-' | b':' | b'.')
}

fn check_text(text: &str) -> Result<(), String> {
    let mut rest = text;
    while let Some(p) = rest.find('&') {
        let tail = &rest[p + 1..];
        let Some(semi) = tail.find(';') else { return Err("bare '&'".into()) };
        let ent = &tail[..semi];
        let ok = matches!(ent, "amp" | "lt" | "gt" | "quot" | "apos")
            || ent.strip_prefix("#x").is_some_and(|h| !h.is_empty() && h.chars().all(|c| c.is_ascii_hexdigit()))
            || ent.strip_prefix('#').is_some_and(|d| !d.is_empty() && d.chars().all(|c| c.is_ascii_digit()));
        if !ok {
            return Err(format!("unknown entity &{ent};"));
        }
        rest = &tail[semi + 1..];
    }
    Ok(())
}
