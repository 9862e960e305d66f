//! Minimal multi-model PDB reader (ATOM/MODEL/ENDMDL records, backbone
//! atoms only) and writer.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::Ensemble;
use crate::error::{Error, Result};
use crate::geometry::{Atom, FrameCoords, Point3};

type ResidueKey = (char, i32, char);

#[derive(Default)]
struct Model {
    number: usize,
    first_line: usize,
    residues: BTreeMap<ResidueKey, [Option<Point3>; 3]>,
}

fn column(line: &str, lo: usize, hi: usize) -> &str {
    let hi = hi.min(line.len());
    if lo >= hi {
        ""
    } else {
        line.get(lo..hi).unwrap_or("")
    }
}

fn parse_atom_line(no: usize, line: &str) -> Result<Option<(ResidueKey, Atom, Point3)>> {
    let name = column(line, 12, 16).trim();
    let Some(atom) = Atom::from_label(name) else {
        return Ok(None);
    };
    let alt = column(line, 16, 17).chars().next().unwrap_or(' ');
    if alt != ' ' && alt != 'A' {
        return Ok(None);
    }
    let chain = column(line, 21, 22).chars().next().unwrap_or(' ');
    let seq: i32 = column(line, 22, 26)
        .trim()
        .parse()
        .map_err(|_| Error::parse(no, "bad residue number"))?;
    let icode = column(line, 26, 27).chars().next().unwrap_or(' ');
    let coord = |lo, hi| -> Result<f64> {
        column(line, lo, hi)
            .trim()
            .parse()
            .map_err(|_| Error::parse(no, "bad coordinate"))
    };
    let p = Point3::new(coord(30, 38)?, coord(38, 46)?, coord(46, 54)?);
    Ok(Some(((chain, seq, icode), atom, p)))
}

fn slot(atom: Atom) -> usize {
    match atom {
        Atom::N => 0,
        Atom::CA => 1,
        Atom::C => 2,
    }
}

/// Parses `MODEL`/`ENDMDL`-delimited records into one frame per model.
/// A file without `MODEL` records is read as a single model.
pub fn parse_pdb_models(text: &str, id: &str, group: &str) -> Result<Ensemble> {
    let mut models: Vec<Model> = Vec::new();
    let mut current: Option<Model> = None;
    for (i, line) in text.lines().enumerate() {
        let no = i + 1;
        if line.starts_with("MODEL") {
            if let Some(m) = current.take() {
                models.push(m);
            }
            current = Some(Model {
                number: models.len() + 1,
                first_line: no,
                ..Default::default()
            });
        } else if line.starts_with("ENDMDL") {
            if let Some(m) = current.take() {
                models.push(m);
            }
        } else if line.starts_with("ATOM  ") {
            let model = current.get_or_insert_with(|| Model {
                number: models.len() + 1,
                first_line: no,
                ..Default::default()
            });
            if let Some((key, atom, p)) = parse_atom_line(no, line)? {
                let entry = model.residues.entry(key).or_default();
                if entry[slot(atom)].is_none() {
                    entry[slot(atom)] = Some(p);
                }
            }
        } else if line.starts_with("END") && !line.starts_with("ENDMDL") {
            break;
        }
    }
    if let Some(m) = current.take() {
        models.push(m);
    }
    models.retain(|m| !m.residues.is_empty());
    if models.is_empty() {
        return Err(Error::invalid(format!("{id}: no models with ATOM records")));
    }

    let keys: Vec<ResidueKey> = models[0].residues.keys().copied().collect();
    let mut frames = Vec::with_capacity(models.len());
    for m in &models {
        let these: Vec<ResidueKey> = m.residues.keys().copied().collect();
        if these != keys {
            return Err(Error::parse(
                m.first_line,
                format!(
                    "{id}: model {} has {} residues, inconsistent with model 1 ({} residues)",
                    m.number,
                    these.len(),
                    keys.len()
                ),
            ));
        }
        let mut coords = Vec::with_capacity(3 * keys.len());
        for (key, atoms) in &m.residues {
            for atom in [Atom::N, Atom::CA, Atom::C] {
                let p = atoms[slot(atom)].ok_or_else(|| {
                    Error::parse(
                        m.first_line,
                        format!(
                            "{id}: model {} residue {}{}{} is missing backbone atom {}",
                            m.number,
                            key.0,
                            key.1,
                            key.2.to_string().trim(),
                            atom.label()
                        ),
                    )
                })?;
                coords.push(p);
            }
        }
        frames.push(FrameCoords::new(vec![Atom::N, Atom::CA, Atom::C], coords)?);
    }
    Ensemble::new(id, group, frames)
}

/// Writes each frame as one `MODEL` of backbone `ATOM` records (chain A,
/// residues numbered from 1, residue name GLY).
pub fn write_pdb_models(ensemble: &Ensemble) -> String {
    let mut out = String::new();
    for (p, frame) in ensemble.frames().iter().enumerate() {
        let _ = writeln!(out, "MODEL     {:>4}", p + 1);
        let mut serial = 1;
        for r in 0..frame.residue_count() {
            for &atom in frame.layout() {
                let c = frame.atom(r, atom).unwrap();
                let element = &atom.label()[..1];
                let _ = writeln!(
                    out,
                    "ATOM  {:>5} {:<4} GLY A{:>4}    {:>8.3}{:>8.3}{:>8.3}  1.00  0.00          {:>2}",
                    serial,
                    format!(" {}", atom.label()),
                    r + 1,
                    c.x,
                    c.y,
                    c.z,
                    element
                );
                serial += 1;
            }
        }
        out.push_str("ENDMDL\n");
    }
    out.push_str("END\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom_line(serial: usize, name: &str, res: i32, x: f64) -> String {
        format!(
            "ATOM  {:>5} {:<4} ALA A{:>4}    {:>8.3}{:>8.3}{:>8.3}  1.00  0.00           {}",
            serial,
            format!(" {name}"),
            res,
            x,
            1.0,
            2.0,
            &name[..1]
        )
    }

    fn model(n: usize, residues: i32, skip_ca_of: Option<i32>) -> String {
        let mut s = format!("MODEL     {n:>4}\n");
        let mut serial = 1;
        for r in 1..=residues {
            for (k, name) in ["N", "CA", "C", "O"].iter().enumerate() {
                if *name == "CA" && skip_ca_of == Some(r) {
                    continue;
                }
                s.push_str(&atom_line(
                    serial,
                    name,
                    r,
                    3.8 * r as f64 + k as f64 * 0.5 + n as f64 * 0.01,
                ));
                s.push('\n');
                serial += 1;
            }
        }
        s.push_str("ENDMDL\n");
        s
    }

    #[test]
    fn two_models_three_residues() {
        let text = format!("{}{}END\n", model(1, 3, None), model(2, 3, None));
        let e = parse_pdb_models(&text, "x", "g").unwrap();
        assert_eq!(e.residue_count(), 3);
        assert_eq!(e.frame_count(), 2);
        assert!((e.frame(1).ca(0).x - (3.8 + 0.5 + 0.02)).abs() < 1e-9);
    }

    #[test]
    fn missing_ca_names_model_and_residue() {
        let text = format!("{}{}", model(1, 3, None), model(2, 3, Some(2)));
        let err = parse_pdb_models(&text, "x", "g").unwrap_err().to_string();
        assert!(
            err.contains("model 2") && err.contains("A2") && err.contains("CA"),
            "{err}"
        );
    }

    #[test]
    fn inconsistent_models_rejected() {
        let text = format!("{}{}", model(1, 3, None), model(2, 4, None));
        assert!(parse_pdb_models(&text, "x", "g").is_err());
        assert!(parse_pdb_models("HEADER nothing\n", "x", "g").is_err());
    }

    #[test]
    fn single_model_file() {
        let text = model(1, 4, None);
        let e = parse_pdb_models(&text, "x", "g").unwrap();
        assert_eq!(e.frame_count(), 1);
        let bare: String = text
            .lines()
            .filter(|l| l.starts_with("ATOM"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert_eq!(parse_pdb_models(&bare, "x", "g").unwrap().frame_count(), 1);
    }

    #[test]
    fn writer_output_parses_back() {
        let text = format!("{}{}", model(1, 3, None), model(2, 3, None));
        let e = parse_pdb_models(&text, "x", "g").unwrap();
        let back = parse_pdb_models(&write_pdb_models(&e), "x", "g").unwrap();
        assert_eq!(back.frame_count(), 2);
        assert!((back.frame(1).ca(2) - e.frame(1).ca(2)).norm() < 1e-3);
    }
}
