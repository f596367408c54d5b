use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::basis::{expected_counts, BasisLabel};
use super::TomographyError;
use crate::quantum::DensityMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountEntry {
    pub counts: u64,
    pub acquisition_time_s: f64,
}

/// Coincidence counts per setting. Iteration order is the fixed label order, so
/// the order rows were inserted or read in never matters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CountTable {
    entries: BTreeMap<BasisLabel, CountEntry>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    arm_x: String,
    arm_xx: String,
    counts: u64,
    acquisition_time_s: f64,
}

impl CountTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: BasisLabel, counts: u64, acquisition_time_s: f64) {
        self.entries.insert(label, CountEntry { counts, acquisition_time_s });
    }

    pub fn get(&self, label: &BasisLabel) -> Option<&CountEntry> {
        self.entries.get(label)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BasisLabel, &CountEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_counts(&self) -> u64 {
        self.entries.values().map(|e| e.counts).sum()
    }

    /// Rounds expected counts to integers, all with the same exposure.
    pub fn from_expected(expected: &BTreeMap<BasisLabel, f64>, acquisition_time_s: f64) -> Self {
        let mut t = Self::new();
        for (l, n) in expected {
            t.insert(*l, n.max(0.0).round() as u64, acquisition_time_s);
        }
        t
    }

    /// Checks that every setting is present with a usable exposure and that
    /// there is at least one count.
    pub fn check_complete(&self) -> Result<(), TomographyError> {
        let missing: Vec<String> = BasisLabel::all()
            .filter(|l| !self.entries.contains_key(l))
            .map(|l| l.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(TomographyError::MissingLabels(missing.join(",")));
        }
        for (l, e) in &self.entries {
            if !(e.acquisition_time_s.is_finite() && e.acquisition_time_s > 0.0) {
                return Err(TomographyError::InvalidExposure {
                    label: l.to_string(),
                    time: e.acquisition_time_s,
                });
            }
        }
        if self.total_counts() == 0 {
            return Err(TomographyError::AllZero);
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        for (l, e) in &self.entries {
            wr.serialize(CsvRow {
                arm_x: l.arm_x.to_string(),
                arm_xx: l.arm_xx.to_string(),
                counts: e.counts,
                acquisition_time_s: e.acquisition_time_s,
            })?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Reads the CSV form. Duplicate settings are rejected; errors carry the
    /// 1-based line number.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, TomographyError> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let mut table = Self::new();
        for rec in rd.deserialize::<CsvRow>() {
            let row = rec.map_err(|e| TomographyError::Csv {
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                message: e.to_string(),
            })?;
            // header is line 1 and there are no multi-line records
            let line = table.len() + 2;
            let bad = |message: String| TomographyError::Csv { line, message };
            let label = BasisLabel::new(row.arm_x.parse().map_err(bad)?, row.arm_xx.parse().map_err(bad)?);
            if table.entries.contains_key(&label) {
                return Err(bad(format!("duplicate setting {label}")));
            }
            table.insert(label, row.counts, row.acquisition_time_s);
        }
        Ok(table)
    }
}

/// Poisson-noisy counts from `ρ` with `pairs_per_group` mean pairs through
/// each of the nine basis pairs.
pub fn synthesize_counts<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    pairs_per_group: f64,
    acquisition_time_s: f64,
    rng: &mut R,
) -> CountTable {
    let mut t = CountTable::new();
    for (l, mean) in expected_counts(rho, pairs_per_group) {
        t.insert(l, poisson(mean, rng), acquisition_time_s);
    }
    t
}

pub(crate) fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tomography::Pol;

    fn full_table() -> CountTable {
        let rho = DensityMatrix::werner(0.5).unwrap();
        synthesize_counts(&rho, 1000.0, 10.0, &mut crate::rng::substream(1, 0))
    }

    #[test]
    fn csv_round_trip() {
        let t = full_table();
        let back = CountTable::read_csv(t.to_csv_string().as_bytes()).unwrap();
        assert_eq!(back, t);
        assert!(t.to_csv_string().starts_with("arm_x,arm_xx,counts,acquisition_time_s\n"));
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let text = "arm_x,arm_xx,counts,acquisition_time_s\nH,H,10,1\nH,Q,3,1\n";
        match CountTable::read_csv(text.as_bytes()) {
            Err(TomographyError::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "arm_x,arm_xx,counts,acquisition_time_s\nH,H,10,1\nH,V,-3,1\n";
        match CountTable::read_csv(text.as_bytes()) {
            Err(TomographyError::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "arm_x,arm_xx,counts,acquisition_time_s\nH,H,10,1\nH,H,3,1\n";
        assert!(matches!(CountTable::read_csv(text.as_bytes()), Err(TomographyError::Csv { line: 3, .. })));
    }

    #[test]
    fn completeness_checks() {
        let mut t = full_table();
        assert!(t.check_complete().is_ok());
        t.entries.remove(&BasisLabel::new(Pol::R, Pol::L));
        assert_eq!(t.check_complete(), Err(TomographyError::MissingLabels("RL".into())));
        let zero = CountTable::from_expected(&expected_counts(&DensityMatrix::maximally_mixed(), 0.0), 1.0);
        assert_eq!(zero.check_complete(), Err(TomographyError::AllZero));
    }
}
