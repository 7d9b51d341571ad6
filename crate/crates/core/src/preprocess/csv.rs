//! Canonical per-fleet CSV schema, one row per second:
//!
//! ```text
//! unit,cycle,t,w1..w4,x1..x14,theta_<comp>_eff,theta_<comp>_flow,...,hs
//! ```
//!
//! `cycle` is 1-based, `t` is the 0-based second within the cycle. UTF-8,
//! `.` decimal separator, LF line endings.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::datagen::{CycleRecord, UnitTrajectory, N_MEASUREMENTS, N_OP_CONDITIONS};
use crate::error::{Error, Result};

pub fn header(components: &[String]) -> Vec<String> {
    let mut h = vec!["unit".to_string(), "cycle".into(), "t".into()];
    h.extend((1..=N_OP_CONDITIONS).map(|i| format!("w{i}")));
    h.extend((1..=N_MEASUREMENTS).map(|i| format!("x{i}")));
    for c in components {
        h.push(format!("theta_{c}_eff"));
        h.push(format!("theta_{c}_flow"));
    }
    h.push("hs".into());
    h
}

/// Writes units of one fleet. Floats use the shortest representation that
/// round-trips, so output is byte-stable.
pub fn write_fleet<W: Write>(mut out: W, units: &[UnitTrajectory]) -> Result<()> {
    let Some(first) = units.first() else {
        return Err(Error::Input("cannot write an empty fleet".into()));
    };
    let components = &first.components;
    writeln!(out, "{}", header(components).join(","))?;
    let mut line = String::new();
    for u in units {
        if &u.components != components {
            return Err(Error::Input(format!("unit {} has a different component set", u.id())));
        }
        for (q, c) in u.cycles.iter().enumerate() {
            for (t, (w, x)) in c.ops.iter().zip(&c.measurements).enumerate() {
                use std::fmt::Write as _;
                line.clear();
                let _ = write!(line, "{},{},{}", u.unit, q + 1, t);
                for v in w.iter().chain(x.iter()) {
                    let _ = write!(line, ",{v}");
                }
                for (e, f) in c.theta_eff.iter().zip(&c.theta_flow) {
                    let _ = write!(line, ",{e},{f}");
                }
                let _ = write!(line, ",{}", c.hs);
                writeln!(out, "{line}")?;
            }
        }
    }
    Ok(())
}

pub fn write_fleet_file(path: &Path, units: &[UnitTrajectory]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_fleet(&mut w, units)?;
    w.flush()?;
    Ok(())
}

fn parse_f64(s: &str, what: &str, line: u64) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Input(format!("line {line}: {what} value {s:?} is not a number")))
}

fn parse_int(s: &str, what: &str, line: u64) -> Result<u64> {
    s.trim()
        .parse::<u64>()
        .map_err(|_| Error::Input(format!("line {line}: {what} value {s:?} is not a non-negative integer")))
}

/// Parses one fleet file. Rows may appear in any order; they are grouped by
/// unit and cycle and sorted by `t`.
pub fn read_fleet<R: Read>(input: R, fleet: &str) -> Result<Vec<UnitTrajectory>> {
    let mut rdr = ::csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("missing column {name:?}")))
    };
    let (c_unit, c_cycle, c_t, c_hs) = (col("unit")?, col("cycle")?, col("t")?, col("hs")?);
    let c_w: Vec<usize> = (1..=N_OP_CONDITIONS).map(|i| col(&format!("w{i}"))).collect::<Result<_>>()?;
    let c_x: Vec<usize> = (1..=N_MEASUREMENTS).map(|i| col(&format!("x{i}"))).collect::<Result<_>>()?;
    let components: Vec<String> = headers
        .iter()
        .filter_map(|h| h.strip_prefix("theta_").and_then(|r| r.strip_suffix("_eff")))
        .map(str::to_string)
        .collect();
    if components.is_empty() {
        return Err(Error::Input("no theta_<component>_eff columns".into()));
    }
    let c_eff: Vec<usize> = components.iter().map(|c| col(&format!("theta_{c}_eff"))).collect::<Result<_>>()?;
    let c_flow: Vec<usize> = components.iter().map(|c| col(&format!("theta_{c}_flow"))).collect::<Result<_>>()?;

    type Row = (u64, [f64; N_OP_CONDITIONS], [f64; N_MEASUREMENTS], Vec<f64>, Vec<f64>, u8);
    let mut grouped: BTreeMap<u64, BTreeMap<u64, Vec<Row>>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let get = |i: usize| rec.get(i).unwrap_or("");
        let unit = parse_int(get(c_unit), "unit", line)?;
        let cycle = parse_int(get(c_cycle), "cycle", line)?;
        if cycle == 0 {
            return Err(Error::Input(format!("line {line}: cycles are 1-based")));
        }
        let t = parse_int(get(c_t), "t", line)?;
        let mut w = [0.0; N_OP_CONDITIONS];
        for (i, &c) in c_w.iter().enumerate() {
            w[i] = parse_f64(get(c), &headers[c], line)?;
        }
        let mut x = [0.0; N_MEASUREMENTS];
        for (i, &c) in c_x.iter().enumerate() {
            x[i] = parse_f64(get(c), &headers[c], line)?;
        }
        let eff = c_eff.iter().map(|&c| parse_f64(get(c), &headers[c], line)).collect::<Result<_>>()?;
        let flow = c_flow.iter().map(|&c| parse_f64(get(c), &headers[c], line)).collect::<Result<_>>()?;
        let hs = match parse_int(get(c_hs), "hs", line)? {
            0 => 0,
            1 => 1,
            v => return Err(Error::Input(format!("line {line}: hs must be 0 or 1, got {v}"))),
        };
        grouped.entry(unit).or_default().entry(cycle).or_default().push((t, w, x, eff, flow, hs));
    }

    let mut units = Vec::new();
    for (unit, cycles) in grouped {
        let mut records = Vec::with_capacity(cycles.len());
        for (expected, (cycle, mut rows)) in (1u64..).zip(cycles) {
            if cycle != expected {
                return Err(Error::Input(format!("unit {unit}: cycle {expected} missing")));
            }
            rows.sort_by_key(|r| r.0);
            let (_, _, _, eff, flow, hs) = rows[0].clone();
            if rows.iter().any(|r| r.5 != hs || r.3 != eff || r.4 != flow) {
                return Err(Error::Input(format!(
                    "unit {unit} cycle {cycle}: health state and degradation must be constant within a cycle"
                )));
            }
            records.push(CycleRecord {
                theta_eff: eff,
                theta_flow: flow,
                hs,
                ops: rows.iter().map(|r| r.1).collect(),
                measurements: rows.iter().map(|r| r.2).collect(),
            });
        }
        let unit = u32::try_from(unit).map_err(|_| Error::Input(format!("unit id {unit} too large")))?;
        let traj = UnitTrajectory { fleet: fleet.to_string(), unit, components: components.clone(), cycles: records };
        traj.validate()?;
        units.push(traj);
    }
    Ok(units)
}

/// Reads a fleet file; the fleet name is the file stem.
pub fn read_fleet_file(path: &Path) -> Result<Vec<UnitTrajectory>> {
    let fleet = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Input(format!("bad fleet file name {}", path.display())))?
        .to_string();
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Input(format!("cannot open data file {}: {e}", path.display())))?;
    read_fleet(std::io::BufReader::new(f), &fleet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_fleet, GeneratorConfig};

    #[test]
    fn roundtrip_and_row_count() {
        let cfg = GeneratorConfig {
            n_units: 2,
            cycles_per_unit: [4, 6],
            seconds_per_cycle: [5, 9],
            ..Default::default()
        };
        let units = generate_fleet(&cfg, "DS01").unwrap();
        let mut buf = Vec::new();
        write_fleet(&mut buf, &units).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let rows = text.lines().count() - 1;
        assert_eq!(rows, units.iter().map(|u| u.total_seconds()).sum::<usize>());
        assert!(text.starts_with("unit,cycle,t,w1,w2,w3,w4,x1,"));
        assert!(text.lines().next().unwrap().ends_with("theta_LPT_eff,theta_LPT_flow,hs"));
        assert!(!text.contains('\r'));
        let back = read_fleet(&buf[..], "DS01").unwrap();
        assert_eq!(back, units);
    }

    #[test]
    fn missing_column_reported() {
        let err = read_fleet("unit,cycle,t\n1,1,0\n".as_bytes(), "F").unwrap_err();
        assert!(err.to_string().contains("missing column"));
    }
}
