use std::io::{Read, Write};

use crate::bench::BenchReport;

pub const HEADER: [&str; 5] = [
    "workload",
    "threads",
    "run",
    "ops_total",
    "throughput_ops_per_sec",
];

/// One parsed CSV data row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub workload: String,
    pub threads: usize,
    pub run: usize,
    pub ops_total: u64,
    pub throughput: f64,
}

/// Writes the header and one row per run of every report.
pub fn emit_csv<W: Write>(reports: &[BenchReport], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(HEADER)?;
    for report in reports {
        for r in &report.runs {
            w.write_record([
                report.workload.to_string(),
                report.threads.to_string(),
                r.run.to_string(),
                r.ops_total.to_string(),
                format!("{:.2}", r.throughput),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn parse_csv<R: Read>(input: R) -> anyhow::Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(input);
    anyhow::ensure!(r.headers()?.iter().eq(HEADER), "unexpected header");
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(CsvRow {
                workload: rec[0].to_string(),
                threads: rec[1].parse()?,
                run: rec[2].parse()?,
                ops_total: rec[3].parse()?,
                throughput: rec[4].parse()?,
            })
        })
        .collect()
}
