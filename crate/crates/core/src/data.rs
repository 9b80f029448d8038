//! Observation containers and the `learner_id,step,correct` CSV format.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Correctness of one learner's attempts, in attempt order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<bool>", into = "Vec<bool>")]
pub struct AttemptSequence(Vec<bool>);

impl AttemptSequence {
    pub fn new(attempts: Vec<bool>) -> Result<Self> {
        if attempts.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(Self(attempts))
    }

    pub fn attempts(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<bool>> for AttemptSequence {
    type Error = Error;

    fn try_from(v: Vec<bool>) -> Result<Self> {
        AttemptSequence::new(v)
    }
}

impl From<AttemptSequence> for Vec<bool> {
    fn from(s: AttemptSequence) -> Self {
        s.0
    }
}

/// Latent proficiency of one learner. Never decreases: once proficient,
/// always proficient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HiddenPath(Vec<bool>);

impl HiddenPath {
    pub fn new(states: Vec<bool>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::EmptySequence);
        }
        if states.windows(2).any(|w| w[0] && !w[1]) {
            return Err(Error::InvalidConfig("hidden path forgets a mastered state".into()));
        }
        Ok(Self(states))
    }

    pub fn states(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One knowledge component's worth of learner sequences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AttemptSequence>", into = "Vec<AttemptSequence>")]
pub struct Dataset(Vec<AttemptSequence>);

impl Dataset {
    pub fn new(sequences: Vec<AttemptSequence>) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self(sequences))
    }

    /// Convenience constructor from raw boolean rows.
    pub fn from_rows(rows: Vec<Vec<bool>>) -> Result<Self> {
        Self::new(rows.into_iter().map(AttemptSequence::new).collect::<Result<_>>()?)
    }

    pub fn sequences(&self) -> &[AttemptSequence] {
        &self.0
    }

    pub fn learners(&self) -> usize {
        self.0.len()
    }

    pub fn total_attempts(&self) -> usize {
        self.0.iter().map(AttemptSequence::len).sum()
    }

    pub fn max_length(&self) -> usize {
        self.0.iter().map(AttemptSequence::len).max().unwrap_or(0)
    }

    /// Learners of `self` followed by learners of `other`.
    pub fn concat(&self, other: &Dataset) -> Dataset {
        Dataset(self.0.iter().chain(other.0.iter()).cloned().collect())
    }
}

impl TryFrom<Vec<AttemptSequence>> for Dataset {
    type Error = Error;

    fn try_from(v: Vec<AttemptSequence>) -> Result<Self> {
        Dataset::new(v)
    }
}

impl From<Dataset> for Vec<AttemptSequence> {
    fn from(d: Dataset) -> Self {
        d.0
    }
}

const HEADER: [&str; 3] = ["learner_id", "step", "correct"];
const TRUTH_HEADER: [&str; 4] = ["learner_id", "step", "correct", "proficient"];

fn csv_error(line: usize, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line, message: format!("{other:?}") },
    }
}

fn parse_flag(field: &str, column: &str, line: usize) -> Result<bool> {
    match field.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Parse { line, message: format!("{column} must be 0 or 1, found {other:?}") }),
    }
}

fn parse_count(field: &str, column: &str, line: usize) -> Result<u64> {
    field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("{column} must be a non-negative integer, found {field:?}"),
    })
}

/// One learner's `(correct, proficient)` cells in step order.
type LearnerRows = Vec<(bool, Option<bool>)>;

/// Rows grouped by ascending learner id; each learner's steps must run
/// 1, 2, 3, ... in file order.
fn read_rows<R: Read>(source: R, header: &[&str]) -> Result<Vec<LearnerRows>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(source);
    let mut learners: BTreeMap<u64, LearnerRows> = BTreeMap::new();
    let mut seen_header = false;

    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            csv_error(line, e)
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if !seen_header {
            let found: Vec<&str> = record.iter().collect();
            if found != header {
                return Err(Error::Parse {
                    line,
                    message: format!("expected header {:?}, found {:?}", header.join(","), found.join(",")),
                });
            }
            seen_header = true;
            continue;
        }
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let learner = parse_count(&record[0], "learner_id", line)?;
        let step = parse_count(&record[1], "step", line)?;
        let correct = parse_flag(&record[2], "correct", line)?;
        let proficient = if header.len() == 4 { Some(parse_flag(&record[3], "proficient", line)?) } else { None };
        let rows = learners.entry(learner).or_default();
        let expected = rows.len() as u64 + 1;
        if step != expected {
            return Err(Error::Parse {
                line,
                message: format!("learner {learner}: expected step {expected}, found {step}"),
            });
        }
        rows.push((correct, proficient));
    }

    if learners.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(learners.into_values().collect())
}

/// Reads a dataset in `learner_id,step,correct` format.
pub fn read_dataset<R: Read>(source: R) -> Result<Dataset> {
    let rows = read_rows(source, &HEADER)?;
    Dataset::from_rows(rows.into_iter().map(|r| r.into_iter().map(|(c, _)| c).collect()).collect())
}

/// Writes a dataset with learner ids `0..D`.
pub fn write_dataset<W: Write>(dataset: &Dataset, destination: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(destination);
    writer.write_record(HEADER).map_err(|e| csv_error(0, e))?;
    for (learner, seq) in dataset.sequences().iter().enumerate() {
        for (t, &correct) in seq.attempts().iter().enumerate() {
            writer
                .write_record([learner.to_string(), (t + 1).to_string(), u8::from(correct).to_string()])
                .map_err(|e| csv_error(0, e))?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Writes observations together with the latent states that produced them.
pub fn write_ground_truth<W: Write>(dataset: &Dataset, paths: &[HiddenPath], destination: W) -> Result<()> {
    if paths.len() != dataset.learners() {
        return Err(Error::InvalidConfig(format!("{} hidden paths for {} learners", paths.len(), dataset.learners())));
    }
    let mut writer = csv::Writer::from_writer(destination);
    writer.write_record(TRUTH_HEADER).map_err(|e| csv_error(0, e))?;
    for (learner, (seq, path)) in dataset.sequences().iter().zip(paths).enumerate() {
        if seq.len() != path.len() {
            return Err(Error::InvalidConfig(format!("learner {learner}: path and sequence lengths differ")));
        }
        for (t, (&correct, &proficient)) in seq.attempts().iter().zip(path.states()).enumerate() {
            writer
                .write_record([
                    learner.to_string(),
                    (t + 1).to_string(),
                    u8::from(correct).to_string(),
                    u8::from(proficient).to_string(),
                ])
                .map_err(|e| csv_error(0, e))?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Reads a ground-truth sidecar written by [`write_ground_truth`].
pub fn read_ground_truth<R: Read>(source: R) -> Result<(Dataset, Vec<HiddenPath>)> {
    let rows = read_rows(source, &TRUTH_HEADER)?;
    let mut sequences = Vec::with_capacity(rows.len());
    let mut paths = Vec::with_capacity(rows.len());
    for row in rows {
        sequences.push(AttemptSequence::new(row.iter().map(|(c, _)| *c).collect())?);
        paths.push(HiddenPath::new(row.iter().map(|(_, p)| p.unwrap_or(false)).collect())?);
    }
    Ok((Dataset::new(sequences)?, paths))
}
