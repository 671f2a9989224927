//! Score files: CSV with header `id,label,score[,seed][,condition]`.
//!
//! `label` is `0` (real) or `1` (AI). Rows without a condition belong to
//! `clean`; rows without a seed belong to seed 0.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::ScoreSet;
use crate::transforms::Condition;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub id: String,
    pub label: bool,
    pub score: f64,
    pub seed: Option<u64>,
    pub condition: Option<Condition>,
}

/// Scores grouped by seed, then by condition in first-appearance order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreStore {
    pub groups: BTreeMap<u64, Vec<(Condition, ScoreSet)>>,
}

impl ScoreStore {
    pub fn seeds(&self) -> Vec<u64> {
        self.groups.keys().copied().collect()
    }

    pub fn total_rows(&self) -> usize {
        self.groups
            .values()
            .flat_map(|v| v.iter().map(|(_, s)| s.len()))
            .sum()
    }
}

pub fn parse_scores<R: Read>(input: R) -> Result<Vec<ScoreRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(id_c), Some(label_c), Some(score_c)) = (col("id"), col("label"), col("score")) else {
        return Err(Error::Parse {
            row: 1,
            message: "header must contain id,label,score".into(),
        });
    };
    let seed_c = col("seed");
    let cond_c = col("condition");
    let known = 3 + usize::from(seed_c.is_some()) + usize::from(cond_c.is_some());
    if headers.len() != known {
        return Err(Error::Parse {
            row: 1,
            message: format!("unexpected columns in header '{}'", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            row: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let row = rec.position().map_or(out.len() + 2, |p| p.line() as usize);
        let bad = |message: String| Error::Parse { row, message };
        let field = |c: usize| rec.get(c).unwrap_or("").trim();

        let id = field(id_c);
        if id.is_empty() {
            return Err(bad("empty id".into()));
        }
        let label = match field(label_c) {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("label must be 0 or 1, got '{other}'"))),
        };
        let score: f64 = field(score_c)
            .parse()
            .map_err(|_| bad(format!("score '{}' is not a number", field(score_c))))?;
        if !score.is_finite() {
            return Err(bad("score must be finite".into()));
        }
        let seed = match seed_c.map(field) {
            None | Some("") => None,
            Some(s) => Some(s.parse().map_err(|_| bad(format!("seed '{s}' is not an integer")))?),
        };
        let condition = match cond_c.map(field) {
            None | Some("") => None,
            Some(s) => Some(s.parse().map_err(|e: Error| bad(e.to_string()))?),
        };
        out.push(ScoreRecord {
            id: id.to_string(),
            label,
            score,
            seed,
            condition,
        });
    }
    Ok(out)
}

/// Group parsed rows into score sets. A repeated `(seed, condition, id)`
/// is an integrity error.
pub fn group_scores(records: Vec<ScoreRecord>) -> Result<ScoreStore> {
    type Acc = (Vec<f64>, Vec<bool>, Vec<String>);
    let mut by_seed: BTreeMap<u64, Vec<(Condition, Acc)>> = BTreeMap::new();
    let mut seen = std::collections::HashSet::new();
    for r in records {
        let seed = r.seed.unwrap_or(0);
        let cond = r.condition.unwrap_or(Condition::Clean);
        if !seen.insert((seed, cond.to_string(), r.id.clone())) {
            return Err(Error::Integrity(format!(
                "duplicate id '{}' for condition {cond} (seed {seed})",
                r.id
            )));
        }
        let groups = by_seed.entry(seed).or_default();
        let idx = match groups.iter().position(|(c, _)| *c == cond) {
            Some(i) => i,
            None => {
                groups.push((cond, Default::default()));
                groups.len() - 1
            }
        };
        let acc = &mut groups[idx].1;
        acc.0.push(r.score);
        acc.1.push(r.label);
        acc.2.push(r.id);
    }
    let mut store = ScoreStore::default();
    for (seed, groups) in by_seed {
        let sets = groups
            .into_iter()
            .map(|(c, (s, l, i))| Ok((c, ScoreSet::with_ids(s, l, i)?)))
            .collect::<Result<Vec<_>>>()?;
        store.groups.insert(seed, sets);
    }
    Ok(store)
}

pub fn read_score_file(path: &Path) -> Result<ScoreStore> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    group_scores(parse_scores(std::io::BufReader::new(f))?)
}

/// Write rows with the full `id,label,score,seed,condition` header.
pub fn write_scores<W: Write>(records: &[ScoreRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Integrity(format!("writing scores: {e}"));
    w.write_record(["id", "label", "score", "seed", "condition"]).map_err(io)?;
    for r in records {
        w.write_record([
            r.id.clone(),
            if r.label { "1" } else { "0" }.to_string(),
            format!("{}", r.score),
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
            r.condition.map(|c| c.to_string()).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("scores.csv", e))?;
    Ok(())
}

/// Flatten one score set into records.
pub fn records_of(set: &ScoreSet, seed: Option<u64>, condition: Option<Condition>) -> Vec<ScoreRecord> {
    let ids: Vec<String> = match set.ids() {
        Some(ids) => ids.to_vec(),
        None => (0..set.len()).map(|i| i.to_string()).collect(),
    };
    ids.into_iter()
        .zip(set.labels())
        .zip(set.scores())
        .map(|((id, &label), &score)| ScoreRecord {
            id,
            label,
            score,
            seed,
            condition,
        })
        .collect()
}
