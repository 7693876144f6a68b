//! Event files: `centre_id,country,activation_day,enrollment_day`, one row
//! per patient. A row with an empty `enrollment_day` registers a centre
//! without patients.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use pgrecruit::estimation::CentreEvents;

use crate::error::{CliError, CliResult};

pub const HEADER: [&str; 4] = ["centre_id", "country", "activation_day", "enrollment_day"];

pub fn read_events_file(path: &Path) -> CliResult<Vec<CentreEvents>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_events(file, &path.display().to_string())
}

pub fn read_events<R: Read>(input: R, name: &str) -> CliResult<Vec<CentreEvents>> {
    let fail = |line: u64, msg: String| CliError::Parse { path: name.to_string(), line, msg };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers().map_err(|e| fail(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(fail(1, format!("expected header {}, found {}", HEADER.join(","), header.iter().collect::<Vec<_>>().join(","))));
    }

    let mut centres: Vec<(CentreEvents, u32)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| fail(error_line(&e), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let id = &row[0];
        if id.is_empty() {
            return Err(fail(line, "empty centre_id".into()));
        }
        let country = (!row[1].is_empty()).then(|| row[1].to_string());
        let activation: u32 = row[2]
            .parse()
            .map_err(|_| fail(line, format!("activation_day must be a nonnegative integer, got {:?}", &row[2])))?;
        let day = match &row[3] {
            "" => None,
            s => {
                let d: u32 =
                    s.parse().map_err(|_| fail(line, format!("enrollment_day must be a nonnegative integer, got {s:?}")))?;
                if d < activation {
                    return Err(fail(line, format!("centre {id}: enrollment day {d} precedes activation day {activation}")));
                }
                Some(d)
            }
        };
        let i = match index.get(id) {
            Some(&i) => {
                let (c, act) = &centres[i];
                if *act != activation || c.group != country {
                    return Err(fail(line, format!("centre {id}: activation day or country differs from its first row")));
                }
                i
            }
            None => {
                let mut c = CentreEvents::new(id, f64::from(activation), Vec::new());
                c.group = country;
                centres.push((c, activation));
                index.insert(id.to_string(), centres.len() - 1);
                centres.len() - 1
            }
        };
        if let Some(d) = day {
            centres[i].0.event_days.push(d);
        }
    }
    Ok(centres
        .into_iter()
        .map(|(mut c, _)| {
            c.event_days.sort_unstable();
            c
        })
        .collect())
}

fn error_line(e: &csv::Error) -> u64 {
    match e.kind() {
        csv::ErrorKind::UnequalLengths { pos: Some(p), .. } | csv::ErrorKind::Utf8 { pos: Some(p), .. } => p.line(),
        csv::ErrorKind::Deserialize { pos: Some(p), .. } => p.line(),
        _ => 0,
    }
}

/// Writes events in the ingest format; centres without events get one
/// row with an empty `enrollment_day`.
pub fn write_events<W: Write>(out: W, events: &[CentreEvents]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| CliError::Io { path: "events".into(), source: e.into() };
    w.write_record(HEADER).map_err(io)?;
    for c in events {
        let act = c.activation_day;
        if act.fract() != 0.0 {
            return Err(CliError::Usage(format!("centre {}: activation day {act} is not a whole day", c.id)));
        }
        let act = format!("{}", act as u32);
        let country = c.group.as_deref().unwrap_or("");
        if c.event_days.is_empty() {
            w.write_record([c.id.as_str(), country, &act, ""]).map_err(io)?;
        }
        for d in &c.event_days {
            w.write_record([c.id.as_str(), country, &act, &d.to_string()]).map_err(io)?;
        }
    }
    w.flush().map_err(|e| CliError::Io { path: "events".into(), source: e })
}
