//! CSV output with fixed column order and number formatting, so equal
//! inputs always produce byte-identical files.

use thiserror::Error;

use crate::mechanism::Outcome;
use crate::model::Allocation;
use crate::scenario::Scenario;
use crate::sim::SimTrace;

/// Pseudo-resource name under which trace.csv carries server time use.
pub const TIME_ROW: &str = "@time";

/// Formats `x` with 9 significant digits in the style of C's `%.9g`, minus
/// trailing zeros.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    strip_zeros(&format!("{x:.decimals$}")).to_string()
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    let bytes = w.into_inner().expect("writing to memory cannot fail");
    String::from_utf8(bytes).expect("fields are UTF-8")
}

fn row<I, S>(w: &mut csv::Writer<Vec<u8>>, fields: I)
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(fields)
        .expect("writing to memory cannot fail");
}

/// alloc.csv: `user,server,tasks` rows for every positive entry, then
/// `#totals,<user>,<tasks>` and a final `#converged,<bool>` row.
pub fn alloc_csv(scenario: &Scenario, alloc: &Allocation, converged: bool) -> String {
    let mut w = writer();
    row(&mut w, ["user", "server", "tasks"]);
    for (n, tasks) in alloc.rows().iter().enumerate() {
        for (i, &x) in tasks.iter().enumerate() {
            if x > 0.0 {
                row(
                    &mut w,
                    [
                        scenario.user_ids[n].as_str(),
                        &scenario.server_ids[i],
                        &fmt_num(x),
                    ],
                );
            }
        }
    }
    for (n, x) in alloc.totals().iter().enumerate() {
        row(&mut w, ["#totals", &scenario.user_ids[n], &fmt_num(*x)]);
    }
    row(&mut w, ["#converged".to_string(), converged.to_string()]);
    finish(w)
}

#[derive(Debug, Error, PartialEq)]
pub enum CsvError {
    #[error("line {line}: {message}")]
    Line { line: u64, message: String },
}

fn line_err(line: u64, message: impl Into<String>) -> CsvError {
    CsvError::Line {
        line,
        message: message.into(),
    }
}

/// Reads alloc.csv back against the scenario it was written for. Comment
/// rows are skipped; repeated (user, server) rows add up.
pub fn parse_alloc_csv(scenario: &Scenario, text: &str) -> Result<Allocation, CsvError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut alloc = Allocation::zeros(scenario.spec.num_users(), scenario.spec.num_servers());
    let mut header_seen = false;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            line_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let fields: Vec<&str> = record.iter().collect();
        if !header_seen {
            if fields != ["user", "server", "tasks"] {
                return Err(line_err(
                    line,
                    format!(
                        "expected header `user,server,tasks`, found `{}`",
                        fields.join(",")
                    ),
                ));
            }
            header_seen = true;
            continue;
        }
        let [user, server, tasks] = fields[..] else {
            return Err(line_err(
                line,
                format!("expected 3 fields, found {}", fields.len()),
            ));
        };
        let n = scenario
            .user_index(user)
            .ok_or_else(|| line_err(line, format!("unknown user `{user}`")))?;
        let i = scenario
            .server_index(server)
            .ok_or_else(|| line_err(line, format!("unknown server `{server}`")))?;
        let x: f64 = tasks
            .parse()
            .map_err(|_| line_err(line, format!("`{tasks}` is not a number")))?;
        if !x.is_finite() {
            return Err(line_err(line, format!("`{tasks}` is not finite")));
        }
        alloc.set(n, i, alloc.get(n, i) + x);
    }
    if !header_seen {
        return Err(line_err(1, "missing header `user,server,tasks`"));
    }
    Ok(alloc)
}

/// trace.csv: `time,server,resource,utilization` for every sample, server
/// and resource, followed per server by a [`TIME_ROW`] row with its time
/// utilization. Samples from a failed centralized solve are preceded by
/// `#unconverged,<time>`.
pub fn trace_csv(scenario: &Scenario, trace: &SimTrace) -> String {
    let mut w = writer();
    row(&mut w, ["time", "server", "resource", "utilization"]);
    for s in &trace.samples {
        let t = fmt_num(s.time);
        if !s.converged {
            row(&mut w, ["#unconverged", t.as_str()]);
        }
        for (i, util) in s.utilization.iter().enumerate() {
            let server = scenario.server_ids[i].as_str();
            for (r, u) in util.iter().enumerate() {
                row(
                    &mut w,
                    [
                        t.as_str(),
                        server,
                        &scenario.spec.resources[r].name,
                        &fmt_num(*u),
                    ],
                );
            }
            row(
                &mut w,
                [
                    t.as_str(),
                    server,
                    TIME_ROW,
                    &fmt_num(s.time_utilization[i]),
                ],
            );
        }
    }
    finish(w)
}

/// table.csv: `mechanism,user,tasks,converged`, one row per mechanism and
/// user, in the order given.
pub fn table_csv(scenario: &Scenario, rows: &[(String, Outcome)]) -> String {
    let mut w = writer();
    row(&mut w, ["mechanism", "user", "tasks", "converged"]);
    for (name, outcome) in rows {
        for (n, x) in outcome.totals.iter().enumerate() {
            row(
                &mut w,
                [
                    name.as_str(),
                    &scenario.user_ids[n],
                    &fmt_num(*x),
                    &outcome.converged.to_string(),
                ],
            );
        }
    }
    finish(w)
}
