//! Scenario files: TOML with a top-level `seed` and the sections
//! `[geometry]`, `[radio]`, `[traffic]` and `[energy]`. All quantities are SI
//! except powers (dBm / mW) and payload size (bytes).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Assignment, NetworkScenario, SpreadingFactor};
use crate::error::{Error, Result};

pub fn scenario_to_string(scenario: &NetworkScenario) -> Result<String> {
    Ok(toml::to_string(scenario)?)
}

pub fn scenario_from_str(text: &str) -> Result<NetworkScenario> {
    let scenario: NetworkScenario = toml::from_str(text)?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn save_scenario(scenario: &NetworkScenario, path: &Path) -> Result<()> {
    fs::write(path, scenario_to_string(scenario)?)?;
    Ok(())
}

pub fn load_scenario(path: &Path) -> Result<NetworkScenario> {
    scenario_from_str(&fs::read_to_string(path)?)
}

/// One row of an assignment CSV: `device,channel,sf,tp_dbm`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub device: usize,
    pub channel: usize,
    pub sf: u8,
    pub tp_dbm: f64,
}

pub fn assignment_records(assignment: &Assignment) -> Vec<AssignmentRecord> {
    (0..assignment.len())
        .map(|i| AssignmentRecord {
            device: i,
            channel: assignment.channel[i],
            sf: assignment.sf[i].value(),
            tp_dbm: assignment.tp_dbm[i],
        })
        .collect()
}

/// Rebuilds an assignment; rows may come in any order but must cover
/// devices `0..n` exactly once.
pub fn assignment_from_records(mut records: Vec<AssignmentRecord>) -> Result<Assignment> {
    records.sort_by_key(|r| r.device);
    for (i, r) in records.iter().enumerate() {
        if r.device != i {
            return Err(Error::Format(format!("assignment rows must cover devices 0..{} once", records.len())));
        }
    }
    Assignment::new(
        records.iter().map(|r| r.channel).collect(),
        records.iter().map(|r| SpreadingFactor::new(r.sf)).collect::<Result<_>>()?,
        records.iter().map(|r| r.tp_dbm).collect(),
    )
}

pub fn save_assignment(assignment: &Assignment, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in assignment_records(assignment) {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_assignment(path: &Path) -> Result<Assignment> {
    let mut r = csv::Reader::from_path(path)?;
    let records = r.deserialize().collect::<std::result::Result<Vec<AssignmentRecord>, _>>()?;
    assignment_from_records(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_scenario, PlacementRules};

    #[test]
    fn round_trip_is_exact() {
        let s = generate_scenario(7, 2, 25, &PlacementRules::default()).unwrap();
        let text = scenario_to_string(&s).unwrap();
        for section in ["[geometry]", "[radio]", "[traffic]", "[energy]", "seed = 7"] {
            assert!(text.contains(section), "missing {section}");
        }
        let back = scenario_from_str(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(scenario_to_string(&back).unwrap(), text);
    }

    #[test]
    fn unknown_fields_and_bad_values_are_rejected() {
        let s = generate_scenario(7, 1, 3, &PlacementRules::default()).unwrap();
        let text = scenario_to_string(&s).unwrap();
        let bogus = text.replace("[traffic]", "[traffic]\nbogus = 1");
        assert!(scenario_from_str(&bogus).is_err());
        let bad = text.replace("duty_cycle = 0.01", "duty_cycle = 1.5");
        assert!(scenario_from_str(&bad).is_err());
    }

    #[test]
    fn energy_section_is_optional() {
        let s = generate_scenario(7, 1, 3, &PlacementRules::default()).unwrap();
        let text = scenario_to_string(&s).unwrap();
        let cut = text.split("[energy]").next().unwrap().to_string();
        assert_eq!(scenario_from_str(&cut).unwrap().energy, s.energy);
    }

    #[test]
    fn assignment_csv_round_trip() {
        let s = generate_scenario(3, 1, 5, &PlacementRules::default()).unwrap();
        let plan = crate::model::ChannelPlan::tight(2, 125e3, 5).unwrap();
        let a = crate::model::distance_based_assignment(&s, &plan).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        save_assignment(&a, &path).unwrap();
        assert!(fs::read_to_string(&path).unwrap().starts_with("device,channel,sf,tp_dbm"));
        assert_eq!(load_assignment(&path).unwrap(), a);
        let mut rows = assignment_records(&a);
        rows.pop();
        rows[0].device = 7;
        assert!(assignment_from_records(rows).is_err());
    }
}
