//! CSV formats: kernel tables, trajectory traces, outcome records and plot data.
//!
//! Kernel CSV: header `outcome,<pointer labels…>`, then one row per outcome.
//! Trajectory CSV: `step,q_<pointer>…,outcome`, where `outcome` on row `n` is
//! the outcome observed going from step `n` to `n + 1` (empty on the last row).
//! Any CSV with an `outcome` column (and optionally `step`) is accepted as an
//! outcome record.

use csv::{ReaderBuilder, StringRecord, WriterBuilder};
use thiserror::Error;

use crate::config::{Entry, KernelSpec};
use crate::simplex::SimplexState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("line {line}: {message}")]
    Line { line: u64, message: String },
    #[error("{0}")]
    Format(String),
}

fn line_of(record: &StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn csv_error(e: csv::Error) -> RecordError {
    match e.position() {
        Some(p) => RecordError::Line { line: p.line(), message: e.to_string() },
        None => RecordError::Format(e.to_string()),
    }
}

pub fn read_kernel_csv(text: &str) -> Result<KernelSpec, RecordError> {
    let mut reader = ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_error)?.clone();
    if header.len() < 2 {
        return Err(RecordError::Format("kernel CSV needs an outcome column and at least one pointer".into()));
    }
    let pointers: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut outcomes = Vec::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        outcomes.push(record[0].to_string());
        rows.push(record.iter().skip(1).map(|s| Entry::Text(s.to_string())).collect());
    }
    if rows.is_empty() {
        return Err(RecordError::Format("kernel CSV has no outcome rows".into()));
    }
    Ok(KernelSpec { outcomes: Some(outcomes), pointers: Some(pointers), rows })
}

pub fn write_kernel_csv(outcomes: &[String], pointers: &[String], rows: &[Vec<f64>]) -> String {
    let mut w = WriterBuilder::new().from_writer(Vec::new());
    w.write_record(std::iter::once("outcome").chain(pointers.iter().map(String::as_str))).expect("in-memory write");
    for (label, row) in outcomes.iter().zip(rows) {
        let mut fields = vec![label.clone()];
        fields.extend(row.iter().map(f64::to_string));
        w.write_record(&fields).expect("in-memory write");
    }
    into_string(w)
}

/// Outcomes recovered from a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeRecord {
    /// Step at which the first outcome was taken.
    pub start_step: u64,
    pub outcomes: Vec<usize>,
}

/// Reads the `outcome` column, mapping labels (or numeric indices) onto `labels`.
/// Rows with an empty outcome are skipped; `step`, when present, must be consecutive.
pub fn read_outcome_csv(text: &str, labels: &[String]) -> Result<OutcomeRecord, RecordError> {
    let mut reader = ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_error)?.clone();
    let col =
        header.iter().position(|h| h == "outcome").ok_or_else(|| RecordError::Format("no `outcome` column".into()))?;
    let step_col = header.iter().position(|h| h == "step");
    let mut record = OutcomeRecord { start_step: 0, outcomes: Vec::new() };
    let mut expected_step = None;
    for row in reader.records() {
        let row = row.map_err(csv_error)?;
        let line = line_of(&row);
        let cell = row.get(col).unwrap_or("");
        if cell.is_empty() {
            continue;
        }
        if let Some(sc) = step_col {
            let step: u64 =
                row[sc].parse().map_err(|_| RecordError::Line { line, message: format!("bad step {:?}", &row[sc]) })?;
            match expected_step {
                None => record.start_step = step,
                Some(e) if e != step => {
                    return Err(RecordError::Line { line, message: format!("expected step {e}, found {step}") });
                }
                _ => {}
            }
            expected_step = Some(step + 1);
        }
        let index = labels
            .iter()
            .position(|l| l == cell)
            .or_else(|| cell.parse::<usize>().ok().filter(|&i| i < labels.len()))
            .ok_or_else(|| RecordError::Line { line, message: format!("unknown outcome {cell:?}") })?;
        record.outcomes.push(index);
    }
    Ok(record)
}

/// One row per state; `states[k+1]` follows `states[k]` through `outcomes[k]`.
pub fn trajectory_csv(
    states: &[SimplexState],
    outcomes: &[usize],
    outcome_labels: &[String],
    pointer_labels: &[String],
) -> String {
    let mut w = WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec!["step".to_string()];
    header.extend(pointer_labels.iter().map(|p| format!("q_{p}")));
    header.push("outcome".into());
    w.write_record(&header).expect("in-memory write");
    for (k, s) in states.iter().enumerate() {
        let mut fields = vec![s.step.to_string()];
        fields.extend(s.q.iter().map(f64::to_string));
        fields.push(outcomes.get(k).map_or(String::new(), |&i| outcome_labels[i].clone()));
        w.write_record(&fields).expect("in-memory write");
    }
    into_string(w)
}

/// Long-form plot data `trajectory,step,q_<pointer>…` for several traces.
pub fn plot_data_csv(traces: &[(usize, Vec<SimplexState>)], pointer_labels: &[String]) -> String {
    let mut w = WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec!["trajectory".to_string(), "step".to_string()];
    header.extend(pointer_labels.iter().map(|p| format!("q_{p}")));
    w.write_record(&header).expect("in-memory write");
    for (index, states) in traces {
        for s in states {
            let mut fields = vec![index.to_string(), s.step.to_string()];
            fields.extend(s.q.iter().map(f64::to_string));
            w.write_record(&fields).expect("in-memory write");
        }
    }
    into_string(w)
}

fn into_string(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::replay_posterior;
    use crate::kernel::{validate_kernel, KernelSchedule};

    fn labels(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn kernel_csv_round_trip() {
        let text = write_kernel_csv(&labels(&["+", "-"]), &labels(&["0", "1"]), &[vec![0.75, 0.25], vec![0.25, 0.75]]);
        assert_eq!(text, "outcome,0,1\n+,0.75,0.25\n-,0.25,0.75\n");
        let spec = read_kernel_csv(&text).unwrap();
        assert_eq!(spec.outcomes.unwrap(), labels(&["+", "-"]));
        assert_eq!(spec.rows[1][0], Entry::Text("0.25".into()));
    }

    #[test]
    fn kernel_csv_errors_carry_lines() {
        assert!(matches!(read_kernel_csv("outcome\n"), Err(RecordError::Format(_))));
        assert!(matches!(read_kernel_csv("outcome,a\n"), Err(RecordError::Format(_))));
        match read_kernel_csv("outcome,a,b\n+,1,0\n-,0\n") {
            Err(RecordError::Line { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trajectory_csv_reads_back_as_outcomes() {
        let k = validate_kernel(&[vec![0.75, 0.25], vec![0.25, 0.75]]).unwrap();
        let schedule = KernelSchedule::fixed(k);
        let outcomes = vec![0, 0, 1, 0];
        let states = replay_posterior(&outcomes, &schedule, &SimplexState::uniform(2)).unwrap();
        let text = trajectory_csv(&states, &outcomes, &labels(&["+", "-"]), &labels(&["0", "1"]));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,q_0,q_1,outcome");
        assert_eq!(lines[1], "0,0.5,0.5,+");
        assert!(lines[5].ends_with(','));
        let back = read_outcome_csv(&text, &labels(&["+", "-"])).unwrap();
        assert_eq!(back, OutcomeRecord { start_step: 0, outcomes });
    }

    #[test]
    fn outcome_csv_variants() {
        let l = labels(&["+", "-"]);
        assert_eq!(read_outcome_csv("outcome\n1\n0\n-\n", &l).unwrap().outcomes, vec![1, 0, 1]);
        assert_eq!(read_outcome_csv("step,outcome\n4,+\n5,-\n", &l).unwrap().start_step, 4);
        assert!(matches!(read_outcome_csv("step,outcome\n0,+\n2,-\n", &l), Err(RecordError::Line { line: 3, .. })));
        assert!(matches!(read_outcome_csv("outcome\n+\nx\n", &l), Err(RecordError::Line { line: 3, .. })));
        assert!(matches!(read_outcome_csv("o\n+\n", &l), Err(RecordError::Format(_))));
        assert!(matches!(read_outcome_csv("outcome\n2\n", &l), Err(RecordError::Line { .. })));
    }

    #[test]
    fn plot_data_layout() {
        let s = vec![SimplexState::uniform(2)];
        let text = plot_data_csv(&[(0, s.clone()), (3, s)], &labels(&["a", "b"]));
        assert_eq!(text, "trajectory,step,q_a,q_b\n0,0,0.5,0.5\n3,0,0.5,0.5\n");
    }
}
