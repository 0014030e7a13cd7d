//! Episode CSV ingestion and export.
//!
//! Layout: header `episode_id,t,y,x1,...,xd`, one row per (episode, step),
//! `t` counting from 1. A blank feature cell marks a missing value.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sensing::{Episode, SENTINEL};

/// An episode together with the identifier it had in the file.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedEpisode {
    pub id: String,
    pub episode: Episode,
}

fn csv_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Read episodes from `path`, in order of first appearance of their id.
pub fn ingest_csv(path: &Path) -> Result<Vec<NamedEpisode>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, path)
}

/// Like [`ingest_csv`] but reads from any reader; `path` is only used in errors.
pub fn ingest_reader(reader: impl std::io::Read, path: &Path) -> Result<Vec<NamedEpisode>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_err(path, 1, e.to_string()))?,
        None => return Err(csv_err(path, 1, "empty file")),
    };
    let expect = ["episode_id", "t", "y"];
    if header.len() < 4 || header.iter().take(3).ne(expect.iter().copied()) {
        return Err(csv_err(
            path,
            1,
            "header must be `episode_id,t,y,x1,...,xd` with d >= 1",
        ));
    }
    let width = header.len();
    let d = width - 3;

    struct Rows {
        steps: Vec<(u64, u64, f64, Vec<f64>, Vec<bool>)>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Rows> = HashMap::new();

    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != width {
            return Err(csv_err(
                path,
                line,
                format!("expected {width} columns, found {}", rec.len()),
            ));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(csv_err(path, line, "blank episode_id"));
        }
        let t: u64 = rec[1]
            .parse()
            .map_err(|_| csv_err(path, line, format!("t must be a positive integer, got `{}`", &rec[1])))?;
        let y: f64 = rec[2]
            .parse()
            .map_err(|_| csv_err(path, line, format!("label must be a number, got `{}`", &rec[2])))?;
        let mut x = Vec::with_capacity(d);
        let mut avail = Vec::with_capacity(d);
        for cell in rec.iter().skip(3) {
            if cell.is_empty() {
                x.push(SENTINEL);
                avail.push(false);
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| csv_err(path, line, format!("feature value `{cell}` is not a number")))?;
                x.push(v);
                avail.push(true);
            }
        }
        let g = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            Rows { steps: Vec::new() }
        });
        g.steps.push((t, line, y, x, avail));
    }
    if order.is_empty() {
        return Err(csv_err(path, 2, "no data rows"));
    }

    order
        .into_iter()
        .map(|id| {
            let mut rows = groups.remove(&id).expect("grouped").steps;
            rows.sort_by_key(|r| r.0);
            for (k, r) in rows.iter().enumerate() {
                if r.0 != k as u64 + 1 {
                    return Err(csv_err(
                        path,
                        r.1,
                        format!(
                            "episode `{id}`: t values must be consecutive integers from 1, found {} at position {}",
                            r.0,
                            k + 1
                        ),
                    ));
                }
            }
            let mut features = Vec::with_capacity(rows.len());
            let mut labels = Vec::with_capacity(rows.len());
            let mut availability = Vec::with_capacity(rows.len());
            for (_, _, y, x, a) in rows {
                labels.push(y);
                features.push(x);
                availability.push(a);
            }
            Ok(NamedEpisode {
                episode: Episode::with_availability(features, labels, availability)?,
                id,
            })
        })
        .collect()
}

/// Render episodes as CSV text; ids are `1..=n` unless given.
pub fn export_string(episodes: &[Episode], ids: Option<&[String]>) -> Result<String> {
    let d = episodes.first().map_or(0, Episode::features_dim);
    if d == 0 {
        return Err(Error::InvalidArgument("nothing to export".into()));
    }
    if let Some(ids) = ids {
        if ids.len() != episodes.len() {
            return Err(Error::InvalidArgument("one id per episode required".into()));
        }
    }
    let mut out = String::from("episode_id,t,y");
    for i in 1..=d {
        out.push_str(&format!(",x{i}"));
    }
    out.push('\n');
    for (n, ep) in episodes.iter().enumerate() {
        ep.validate()?;
        if ep.features_dim() != d {
            return Err(Error::Dimension(format!(
                "episode {} has {} features, expected {d}",
                n + 1,
                ep.features_dim()
            )));
        }
        let id = ids.map_or_else(|| (n + 1).to_string(), |ids| ids[n].clone());
        for t in 0..ep.len() {
            out.push_str(&format!("{id},{},{}", t + 1, crate::fmt_real(ep.labels[t])));
            for i in 0..d {
                out.push(',');
                if ep.availability[t][i] {
                    out.push_str(&crate::fmt_real(ep.features[t][i]));
                }
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn export_csv(episodes: &[Episode], path: &Path) -> Result<()> {
    let text = export_string(episodes, None)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<NamedEpisode>> {
        ingest_reader(text.as_bytes(), Path::new("mem.csv"))
    }

    #[test]
    fn single_episode_fully_available() {
        let eps = parse("episode_id,t,y,x1\na,1,0.5,1.0\na,2,0.25,2.0\n").unwrap();
        assert_eq!(eps.len(), 1);
        assert_eq!(eps[0].id, "a");
        assert_eq!(eps[0].episode.availability, vec![vec![true], vec![true]]);
        assert_eq!(eps[0].episode.features, vec![vec![1.0], vec![2.0]]);
    }

    #[test]
    fn blank_cell_is_missing() {
        let eps = parse("episode_id,t,y,x1,x2\n7,1,0,1,2\n7,2,1,,3\n").unwrap();
        let ep = &eps[0].episode;
        assert!(!ep.availability[1][0]);
        assert_eq!(ep.features[1][0], SENTINEL);
        assert!(ep.availability[1][1]);
    }

    #[test]
    fn rows_are_sorted_and_grouped() {
        let eps = parse("episode_id,t,y,x1\nb,2,2,20\na,1,1,1\nb,1,1,10\n").unwrap();
        assert_eq!(eps.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["b", "a"]);
        assert_eq!(eps[0].episode.features, vec![vec![10.0], vec![20.0]]);
    }

    #[test]
    fn gap_in_t_names_the_episode() {
        let err = parse("episode_id,t,y,x1\np9,1,0,1\np9,3,0,1\n").unwrap_err();
        assert!(err.to_string().contains("p9"), "{err}");
        let err = parse("episode_id,t,y,x1\np9,1,0,1\np9,1,0,1\n").unwrap_err();
        assert!(err.to_string().contains("p9"), "{err}");
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = parse("episode_id,t,y,x1,x2\na,1,0,1,2\na,2,0,1\n").unwrap_err();
        match err {
            Error::Csv { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn bad_header_and_values() {
        assert!(parse("id,t,y,x1\n1,1,0,0\n").is_err());
        assert!(parse("episode_id,t,y\n1,1,0\n").is_err());
        assert!(parse("episode_id,t,y,x1\n1,one,0,0\n").is_err());
        assert!(parse("episode_id,t,y,x1\n1,1,,0\n").is_err());
        assert!(parse("").is_err());
    }

    #[test]
    fn export_round_trips_with_missing() {
        let ep = Episode::with_availability(
            vec![vec![0.1, -1.0 / 3.0], vec![1e-300, 7.0]],
            vec![std::f64::consts::PI, -0.0],
            vec![vec![true, false], vec![true, true]],
        )
        .unwrap();
        let text = export_string(std::slice::from_ref(&ep), None).unwrap();
        let back = parse(&text).unwrap();
        assert_eq!(back[0].episode.labels[0].to_bits(), ep.labels[0].to_bits());
        assert_eq!(back[0].episode.availability, ep.availability);
        assert_eq!(back[0].episode.features[1], ep.features[1]);
        assert_eq!(back[0].episode.features[0][1], SENTINEL);
    }
}
