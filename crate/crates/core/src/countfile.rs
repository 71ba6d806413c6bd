//! Line-oriented coincidence-count files.
//!
//! ```text
//! # polarimeter-counts v1
//! # settings: 9
//! # seed: 42
//! setting_id,label_q1,label_q2,c1,c2,c3,c4,dwell_s,acc1,acc2,acc3,acc4,t_s
//! 0,HV,HV,402,3,1,398,0.08,0.4,0.4,0.4,0.4,0.1
//! ```
//!
//! `settings` names the canonical schedule (`9` or `36`) that `setting_id`
//! indexes; `seed` is `none` for measured data. Labels must agree with the
//! schedule. The trailing `t_s` column is optional on input. Reals are
//! written in shortest round-trip form, so write → parse is bit-exact.

use std::fmt::Write as _;

use thiserror::Error;

use crate::measurement::{canonical_settings, Basis, CountRecord, MeasurementSetting};

pub const MAGIC: &str = "# polarimeter-counts v1";
pub const COLUMNS: &str = "setting_id,label_q1,label_q2,c1,c2,c3,c4,dwell_s,acc1,acc2,acc3,acc4,t_s";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct CountFileError {
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, CountFileError> {
    Err(CountFileError {
        line,
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountFile {
    /// 9 or 36.
    pub settings_m: usize,
    pub seed: Option<u64>,
    pub records: Vec<CountRecord>,
}

impl CountFile {
    pub fn settings(&self) -> Vec<MeasurementSetting> {
        canonical_settings(self.settings_m).expect("validated on construction")
    }

    pub fn to_text(&self) -> String {
        let settings = self.settings();
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "# settings: {}", self.settings_m);
        match self.seed {
            Some(seed) => {
                let _ = writeln!(out, "# seed: {seed}");
            }
            None => out.push_str("# seed: none\n"),
        }
        let _ = writeln!(out, "{COLUMNS}");
        for r in &self.records {
            let bases = settings
                .get(r.setting_id)
                .map(|s| s.bases)
                .unwrap_or([Basis::Hv, Basis::Hv]);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.setting_id,
                bases[0],
                bases[1],
                r.counts[0],
                r.counts[1],
                r.counts[2],
                r.counts[3],
                r.dwell,
                r.expected_accidentals[0],
                r.expected_accidentals[1],
                r.expected_accidentals[2],
                r.expected_accidentals[3],
                r.timestamp
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, CountFileError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.trim().is_empty());

        let mut next = |what: &str| -> Result<(usize, &str), CountFileError> {
            lines
                .next()
                .map_or_else(|| err(0, format!("unexpected end of file, expected {what}")), Ok)
        };

        let (n, magic) = next("header")?;
        if magic.trim() != MAGIC {
            return err(n, format!("expected {MAGIC:?}"));
        }
        let (n, line) = next("settings line")?;
        let settings_m = match header_value(line, "settings") {
            Some(v) => match v.parse::<usize>() {
                Ok(m @ (9 | 36)) => m,
                _ => return err(n, format!("settings must be 9 or 36, got {v:?}")),
            },
            None => return err(n, "expected '# settings: <9|36>'"),
        };
        let (n, line) = next("seed line")?;
        let seed = match header_value(line, "seed") {
            Some("none") => None,
            Some(v) => match v.parse::<u64>() {
                Ok(s) => Some(s),
                Err(_) => return err(n, format!("invalid seed {v:?}")),
            },
            None => return err(n, "expected '# seed: <u64|none>'"),
        };
        let (n, cols) = next("column header")?;
        let cols = cols.trim();
        let short = COLUMNS.trim_end_matches(",t_s");
        if cols != COLUMNS && cols != short {
            return err(n, "unexpected column header");
        }

        let settings = canonical_settings(settings_m).expect("checked above");
        let mut records = Vec::new();
        for (n, line) in lines {
            if line.trim_start().starts_with('#') {
                continue;
            }
            records.push(parse_record(n, line, &settings)?);
        }
        Ok(Self {
            settings_m,
            seed,
            records,
        })
    }
}

fn header_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let rest = line.trim().strip_prefix('#')?.trim_start();
    let rest = rest.strip_prefix(key)?.trim_start().strip_prefix(':')?;
    Some(rest.trim())
}

fn parse_real(n: usize, field: &str, name: &str) -> Result<f64, CountFileError> {
    match field.trim().parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        Ok(_) => err(n, format!("{name} must be finite and >= 0")),
        Err(_) => err(n, format!("{name}: cannot parse {field:?} as a number")),
    }
}

fn parse_record(
    n: usize,
    line: &str,
    settings: &[MeasurementSetting],
) -> Result<CountRecord, CountFileError> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 12 && fields.len() != 13 {
        return err(n, format!("expected 12 or 13 fields, found {}", fields.len()));
    }
    let setting_id: usize = fields[0]
        .parse()
        .or_else(|_| err(n, format!("invalid setting_id {:?}", fields[0])))?;
    let Some(setting) = settings.get(setting_id) else {
        return err(n, format!("setting_id {setting_id} out of range 0..{}", settings.len()));
    };
    for q in 0..2 {
        let basis: Basis = fields[1 + q].parse().or_else(|e: String| err(n, e))?;
        if basis != setting.bases[q] {
            return err(
                n,
                format!(
                    "setting {setting_id} measures {} on qubit {}, file says {basis}",
                    setting.bases[q],
                    q + 1
                ),
            );
        }
    }
    let mut counts = [0u64; 4];
    for (k, slot) in counts.iter_mut().enumerate() {
        *slot = fields[3 + k]
            .parse()
            .or_else(|_| err(n, format!("c{}: invalid count {:?}", k + 1, fields[3 + k])))?;
    }
    let dwell = parse_real(n, fields[7], "dwell_s")?;
    let mut acc = [0.0; 4];
    for (k, slot) in acc.iter_mut().enumerate() {
        *slot = parse_real(n, fields[8 + k], &format!("acc{}", k + 1))?;
    }
    let timestamp = match fields.get(12) {
        Some(f) => parse_real(n, f, "t_s")?,
        None => 0.0,
    };
    Ok(CountRecord {
        setting_id,
        counts,
        expected_accidentals: acc,
        dwell,
        timestamp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> CountFile {
        CountFile {
            settings_m: 9,
            seed: Some(42),
            records: vec![
                CountRecord {
                    setting_id: 0,
                    counts: [402, 3, 1, 398],
                    expected_accidentals: [0.4, 0.4, 0.4, 0.4],
                    dwell: 0.08,
                    timestamp: 0.1,
                },
                CountRecord {
                    setting_id: 8,
                    counts: [0, 0, 0, 0],
                    expected_accidentals: [1.0 / 3.0, 0.0, 1e-300, 7.25],
                    dwell: 0.08,
                    timestamp: 0.9000000000000001,
                },
            ],
        }
    }

    #[test]
    fn text_layout() {
        let text = sample().to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], MAGIC);
        assert_eq!(lines[1], "# settings: 9");
        assert_eq!(lines[2], "# seed: 42");
        assert_eq!(lines[3], COLUMNS);
        assert_eq!(lines[4], "0,HV,HV,402,3,1,398,0.08,0.4,0.4,0.4,0.4,0.1");
        assert!(lines[5].starts_with("8,RL,RL,0,0,0,0,"));
    }

    #[test]
    fn round_trip_is_exact() {
        let file = sample();
        assert_eq!(CountFile::parse(&file.to_text()).unwrap(), file);
    }

    #[test]
    fn short_rows_default_timestamp() {
        let text = format!(
            "{MAGIC}\n# settings: 36\n# seed: none\n{}\n35,RL,RL,1,2,3,4,0.5,0,0,0,0\n",
            COLUMNS.trim_end_matches(",t_s")
        );
        let file = CountFile::parse(&text).unwrap();
        assert_eq!(file.seed, None);
        assert_eq!(file.records[0].timestamp, 0.0);
        assert_eq!(file.records[0].counts, [1, 2, 3, 4]);
    }

    #[test]
    fn errors_name_the_line() {
        let good = sample().to_text();
        let bad_label = good.replace("0,HV,HV,402", "0,HV,DA,402");
        let e = CountFile::parse(&bad_label).unwrap_err();
        assert_eq!(e.line, 5);
        assert!(e.message.contains("qubit 2"));

        let bad_count = good.replace("402", "-402");
        assert_eq!(CountFile::parse(&bad_count).unwrap_err().line, 5);

        let bad_range = good.replace("\n8,RL,RL", "\n9,RL,RL");
        assert_eq!(CountFile::parse(&bad_range).unwrap_err().line, 6);

        let nan = good.replace("0.4,0.4,0.4,0.4", "NaN,0.4,0.4,0.4");
        assert!(CountFile::parse(&nan).is_err());

        assert!(CountFile::parse("").is_err());
        assert!(CountFile::parse(&good.replace("settings: 9", "settings: 10"))
            .unwrap_err()
            .message
            .contains("9 or 36"));
    }

    proptest! {
        #[test]
        fn arbitrary_records_round_trip(
            seed in proptest::option::of(any::<u64>()),
            rows in proptest::collection::vec(
                (0usize..36, any::<[u32; 4]>(), 0.0f64..1e6, any::<[u16; 4]>(), 0.0f64..1e9),
                0..20,
            ),
        ) {
            let file = CountFile {
                settings_m: 36,
                seed,
                records: rows
                    .into_iter()
                    .map(|(id, c, dwell, acc, t)| CountRecord {
                        setting_id: id,
                        counts: c.map(u64::from),
                        expected_accidentals: acc.map(|a| f64::from(a) / 7.0),
                        dwell,
                        timestamp: t,
                    })
                    .collect(),
            };
            prop_assert_eq!(CountFile::parse(&file.to_text()).unwrap(), file);
        }

        #[test]
        fn parser_never_panics(text in "\\PC{0,400}") {
            let _ = CountFile::parse(&text);
        }
    }
}
