//! Tab-separated catalogue and session-log files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Catalogue, Event, Product, SessionLog};
use crate::error::{Error, Result};
use crate::util::fmt6;

pub fn format_catalogue(catalogue: &Catalogue) -> String {
    let mut products: Vec<&Product> = catalogue.products().iter().collect();
    products.sort_by_key(|p| p.id);
    let mut out = String::new();
    for p in products {
        let attrs: Vec<String> = p
            .attributes()
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            p.id,
            fmt6(p.price),
            p.inventory,
            attrs.join(";")
        );
    }
    out
}

pub fn parse_catalogue(text: &str, source: &str) -> Result<Catalogue> {
    let mut products = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                source,
                lineno,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        let id: u32 = fields[0]
            .parse()
            .map_err(|_| Error::parse(source, lineno, format!("bad product id `{}`", fields[0])))?;
        let price: f64 = fields[1]
            .parse()
            .map_err(|_| Error::parse(source, lineno, format!("bad price `{}`", fields[1])))?;
        let inventory: u32 = fields[2]
            .parse()
            .map_err(|_| Error::parse(source, lineno, format!("bad inventory `{}`", fields[2])))?;
        let mut attributes = Vec::new();
        for pair in fields[3].split(';').filter(|s| !s.is_empty()) {
            let (k, v) = pair.split_once('=').ok_or_else(|| {
                Error::parse(source, lineno, format!("attribute `{pair}` is not key=value"))
            })?;
            attributes.push((k.to_string(), v.to_string()));
        }
        let product = Product::new(id, price, inventory, attributes).map_err(|e| match e {
            Error::MissingAttribute {
                product_id, key, ..
            } => Error::MissingAttribute {
                line: lineno,
                product_id,
                key,
            },
            other => Error::parse(source, lineno, other.to_string()),
        })?;
        if !ids.insert(id) {
            return Err(Error::DuplicateProduct(id));
        }
        products.push(product);
    }
    Catalogue::new(products)
}

pub fn load_catalogue(path: impl AsRef<Path>) -> Result<Catalogue> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_catalogue(&text, &path.display().to_string())
}

pub fn write_catalogue(path: impl AsRef<Path>, catalogue: &Catalogue) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_catalogue(catalogue)).map_err(|e| Error::io(path, e))
}

pub fn format_sessions(logs: &[SessionLog]) -> String {
    let mut sorted: Vec<&SessionLog> = logs.iter().collect();
    sorted.sort_by_key(|l| l.session_id);
    let mut out = String::new();
    for log in sorted {
        for e in &log.events {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                log.session_id,
                log.day,
                log.query,
                e.product_id,
                e.position,
                u8::from(e.clicked),
                u8::from(e.carted),
                u8::from(e.purchased),
                fmt6(e.revenue)
            );
        }
    }
    out
}

fn parse_flag(s: &str, source: &str, line: usize) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(Error::parse(source, line, format!("flag must be 0 or 1, got `{s}`"))),
    }
}

pub fn parse_sessions(text: &str, source: &str) -> Result<Vec<SessionLog>> {
    let mut logs: Vec<SessionLog> = Vec::new();
    let mut closed = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 9 {
            return Err(Error::parse(
                source,
                lineno,
                format!("expected 9 tab-separated fields, found {}", f.len()),
            ));
        }
        let num = |s: &str, what: &str| -> Result<u64> {
            s.parse()
                .map_err(|_| Error::parse(source, lineno, format!("bad {what} `{s}`")))
        };
        let session_id = num(f[0], "session id")?;
        let day = num(f[1], "day")? as u32;
        let event = Event {
            product_id: num(f[3], "product id")? as u32,
            position: num(f[4], "position")? as u32,
            clicked: parse_flag(f[5], source, lineno)?,
            carted: parse_flag(f[6], source, lineno)?,
            purchased: parse_flag(f[7], source, lineno)?,
            revenue: f[8]
                .parse()
                .map_err(|_| Error::parse(source, lineno, format!("bad revenue `{}`", f[8])))?,
        };
        match logs.last_mut() {
            Some(last) if last.session_id == session_id => {
                if last.query != f[2] || last.day != day {
                    return Err(Error::parse(
                        source,
                        lineno,
                        "query/day changed within a session",
                    ));
                }
                last.events.push(event);
            }
            _ => {
                if let Some(last) = logs.last() {
                    last.validate()
                        .map_err(|e| Error::parse(source, lineno - 1, e.to_string()))?;
                    closed.insert(last.session_id);
                }
                if closed.contains(&session_id) {
                    return Err(Error::parse(
                        source,
                        lineno,
                        format!("session {session_id} is not contiguous"),
                    ));
                }
                logs.push(SessionLog {
                    session_id,
                    day,
                    query: f[2].to_string(),
                    events: vec![event],
                });
            }
        }
    }
    if let Some(last) = logs.last() {
        last.validate()
            .map_err(|e| Error::parse(source, text.lines().count(), e.to_string()))?;
    }
    Ok(logs)
}

pub fn load_sessions(path: impl AsRef<Path>) -> Result<Vec<SessionLog>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sessions(&text, &path.display().to_string())
}

pub fn write_sessions(path: impl AsRef<Path>, logs: &[SessionLog]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_sessions(logs)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = "1\t10.500000\t4\tbrand=zed;article_type=tshirt;color=red\n\
                         2\t20.000000\t0\tbrand=kova;article_type=jeans;color=blue;fit=slim\n\
                         3\t5.250000\t9\tbrand=zed;article_type=shirt;color=white\n";

    #[test]
    fn three_rows_parse_and_round_trip() {
        let cat = parse_catalogue(THREE, "mem").unwrap();
        assert_eq!(cat.len(), 3);
        assert_eq!(cat.get(2).unwrap().attr("fit"), Some("slim"));
        assert_eq!(format_catalogue(&cat), THREE);
    }

    #[test]
    fn missing_brand_names_the_key_and_line() {
        let text = "1\t1.000000\t1\tarticle_type=tshirt;color=red\n";
        let err = parse_catalogue(text, "mem").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`brand`") && msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn parse_error_reports_line() {
        let text = format!("{THREE}oops\n");
        let err = parse_catalogue(&text, "mem").unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = format!("{THREE}1\t1.000000\t1\tbrand=a;article_type=b;color=c\n");
        assert!(matches!(
            parse_catalogue(&text, "mem"),
            Err(Error::DuplicateProduct(1))
        ));
    }

    #[test]
    fn sessions_round_trip_and_validate() {
        let text = "1\t0\tred tshirt\t5\t1\t1\t1\t1\t10.500000\n\
                    1\t0\tred tshirt\t6\t2\t0\t0\t0\t0.000000\n\
                    2\t3\tjeans\t7\t1\t0\t0\t0\t0.000000\n";
        let logs = parse_sessions(text, "mem").unwrap();
        assert_eq!(logs.len(), 2);
        assert_eq!(logs[0].events.len(), 2);
        assert_eq!(format_sessions(&logs), text);

        let bad = "1\t0\tq\t5\t1\t0\t1\t0\t0.000000\n";
        assert!(parse_sessions(bad, "mem").is_err());
        let split = "1\t0\tq\t5\t1\t0\t0\t0\t0.000000\n2\t0\tq\t5\t1\t0\t0\t0\t0.000000\n1\t0\tq\t6\t2\t0\t0\t0\t0.000000\n";
        assert!(parse_sessions(split, "mem").is_err());
    }
}
