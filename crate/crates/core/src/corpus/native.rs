//! Native ensemble text format.
//!
//! ```text
//! format ensembits-ens/1
//! id <id>
//! group <group>
//! atoms N CA C
//! L <residues>
//! P <frames>
//! flexibility <L numbers>        (optional)
//! frame 0
//! <x> <y> <z>                    (L × |atoms| lines, residue-major)
//! frame 1
//! ...
//! end
//! ```
//!
//! Numbers are written with the shortest representation that parses back to
//! the identical `f64`, so a round trip is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use super::Ensemble;
use crate::error::{Error, Result};
use crate::geometry::{Atom, FrameCoords, Point3};

pub const ENSEMBLE_FORMAT: &str = "ensembits-ens/1";

pub(crate) fn format_ensemble(e: &Ensemble) -> Result<String> {
    for (what, s) in [("id", &e.id), ("group", &e.group)] {
        if s.is_empty() || s.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!(
                "{what} {s:?} must be a non-empty token without whitespace"
            )));
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "format {ENSEMBLE_FORMAT}");
    let _ = writeln!(out, "id {}", e.id);
    let _ = writeln!(out, "group {}", e.group);
    let atoms: Vec<&str> = e.layout().iter().map(|a| a.label()).collect();
    let _ = writeln!(out, "atoms {}", atoms.join(" "));
    let _ = writeln!(out, "L {}", e.residue_count());
    let _ = writeln!(out, "P {}", e.frame_count());
    if let Some(flex) = e.flexibility() {
        let vals: Vec<String> = flex.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "flexibility {}", vals.join(" "));
    }
    for (p, frame) in e.frames().iter().enumerate() {
        let _ = writeln!(out, "frame {p}");
        for c in frame.coords() {
            let _ = writeln!(out, "{:?} {:?} {:?}", c.x, c.y, c.z);
        }
    }
    out.push_str("end\n");
    Ok(out)
}

fn header<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    key: &str,
) -> Result<(usize, &'a str)> {
    let (no, line) = lines
        .next()
        .ok_or_else(|| Error::parse(0, format!("unexpected end of file, expected `{key}`")))?;
    let rest = line
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::parse(no, format!("expected `{key} ...`, found {line:?}")))?;
    Ok((no, rest.trim()))
}

fn parse_count(no: usize, field: &str, s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::parse(no, format!("field {field}: {s:?} is not a count")))
}

fn parse_f64(no: usize, s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::parse(no, format!("{s:?} is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(no, format!("non-finite value {s:?}")));
    }
    Ok(v)
}

pub(crate) fn parse_ensemble(text: &str) -> Result<Ensemble> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end()))
        .filter(|(_, l)| !l.is_empty())
        .peekable();

    let (no, fmt) = header(&mut lines, "format")?;
    if fmt != ENSEMBLE_FORMAT {
        return Err(Error::parse(
            no,
            format!("unsupported format {fmt:?}, expected {ENSEMBLE_FORMAT}"),
        ));
    }
    let (_, id) = header(&mut lines, "id")?;
    let (_, group) = header(&mut lines, "group")?;
    let (no, atoms) = header(&mut lines, "atoms")?;
    let layout = atoms
        .split_whitespace()
        .map(|a| {
            Atom::from_label(a)
                .ok_or_else(|| Error::parse(no, format!("field atoms: unknown atom label {a:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let (no, l) = header(&mut lines, "L")?;
    let l = parse_count(no, "L", l)?;
    let (no, p) = header(&mut lines, "P")?;
    let p = parse_count(no, "P", p)?;

    let mut flexibility = None;
    if let Some((_, line)) = lines.peek() {
        if line.starts_with("flexibility") {
            let (no, rest) = header(&mut lines, "flexibility")?;
            let vals = rest
                .split_whitespace()
                .map(|v| parse_f64(no, v))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != l {
                return Err(Error::parse(
                    no,
                    format!("field flexibility: {} values for L = {l}", vals.len()),
                ));
            }
            flexibility = Some(vals);
        }
    }

    let per_frame = l * layout.len();
    let mut frames = Vec::with_capacity(p);
    for frame_idx in 0..p {
        let (no, idx) = header(&mut lines, "frame")?;
        if parse_count(no, "frame", idx)? != frame_idx {
            return Err(Error::parse(
                no,
                format!("expected frame {frame_idx}, found frame {idx}"),
            ));
        }
        let mut coords = Vec::with_capacity(per_frame);
        while let Some((no, line)) = lines.peek().copied() {
            if line.starts_with("frame") || line == "end" {
                break;
            }
            lines.next();
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::parse(
                    no,
                    format!("expected 3 coordinates, found {}", parts.len()),
                ));
            }
            coords.push(Point3::new(
                parse_f64(no, parts[0])?,
                parse_f64(no, parts[1])?,
                parse_f64(no, parts[2])?,
            ));
        }
        if coords.len() != per_frame {
            return Err(Error::parse(
                no,
                format!(
                    "frame {frame_idx} has {} atom lines, expected L × atoms = {per_frame}",
                    coords.len()
                ),
            ));
        }
        frames.push(
            FrameCoords::new(layout.clone(), coords)
                .map_err(|e| Error::parse(no, e.to_string()))?,
        );
    }
    match lines.next() {
        Some((_, "end")) => {}
        Some((no, line)) => {
            return Err(Error::parse(no, format!("expected `end`, found {line:?}")))
        }
        None => return Err(Error::parse(0, "missing `end`")),
    }
    if let Some((no, line)) = lines.next() {
        return Err(Error::parse(
            no,
            format!("trailing content after `end`: {line:?}"),
        ));
    }
    let e = Ensemble::new(id, group, frames)?;
    match flexibility {
        Some(f) => e.with_flexibility(f),
        None => Ok(e),
    }
}

pub fn write_ensemble(ensemble: &Ensemble, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_ensemble(ensemble)?).map_err(|e| Error::io(path, e))
}

pub fn read_ensemble(path: impl AsRef<Path>) -> Result<Ensemble> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ensemble(&text).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Reads every `*.ens` file of a directory, sorted by file name.
pub fn read_corpus_dir(dir: impl AsRef<Path>) -> Result<Vec<Ensemble>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ens"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!(
            "{} contains no .ens files",
            dir.display()
        )));
    }
    paths.iter().map(read_ensemble).collect()
}
