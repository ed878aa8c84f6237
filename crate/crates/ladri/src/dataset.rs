//! Scenario-sweep dataset generation, CSV persistence, and grouped
//! stratified splitting.
//!
//! The CSV column set and order are a fixed contract shared with the model's
//! feature-name list. Floats are written as shortest round-trip decimals, so
//! a write/read cycle reproduces the rows exactly and regeneration with the
//! same master seed reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LadriError, Result};
use crate::features::{build_feature_vector, FeatureVector};
use crate::hara::{label_trace, HaraConfig, Stage, STAGE_COUNT};
use crate::model::Sample;
use crate::scenario::{
    run_scenario, AccParams, AccelLimits, FaultKind, FaultSpec, Policy, ScenarioConfig,
    TerminalEvent, VehicleConfig, VehicleRole,
};
use crate::sensor::{sample_sensors, subject_truth, NoiseSpec, SensorFrame};

/// One labeled timestep: noisy features, ground-truth risk grades.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetRow {
    pub scenario_id: u64,
    pub time: f64,
    pub features: FeatureVector,
    pub s_level: u8,
    pub c_level: u8,
    pub stage: u8,
}

impl DatasetRow {
    pub fn sample(&self) -> Sample {
        Sample {
            features: self.features,
            stage: Stage::from_index(self.stage as usize).expect("validated on construction"),
        }
    }
}

pub const CSV_HEADER: &str = "scenario_id,time,rel_distance,rel_speed,ego_speed,ttc,headway,\
required_decel,throttle_pos,brake_pos,s_level,c_level,stage";

const CSV_COLUMNS: usize = 13;

/// Grid sweep over initial gaps, traffic speeds, and fault kind/magnitude,
/// with one fault-free scenario per grid point.
///
/// Grid application: `lead_speeds` sets every vehicle's initial speed;
/// `initial_gaps` sets the gap between the subject (first Ego) and the
/// vehicle directly ahead of it, shifting the subject and everything behind
/// it together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub base: ScenarioConfig,
    pub fault_kinds: Vec<FaultKind>,
    pub magnitudes: Vec<f64>,
    pub initial_gaps: Vec<f64>,
    pub lead_speeds: Vec<f64>,
    pub fault_start: f64,
    pub fault_end: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub hara: HaraConfig,
    /// Fail generation unless every stage class appears at least once.
    #[serde(default = "default_true")]
    pub require_coverage: bool,
}

fn default_true() -> bool {
    true
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.hara.validate()?;
        if self.fault_kinds.is_empty()
            || self.magnitudes.is_empty()
            || self.initial_gaps.is_empty()
            || self.lead_speeds.is_empty()
        {
            return Err(LadriError::config("sweep", "all grids must be non-empty"));
        }
        if self.magnitudes.iter().any(|&m| !(m > 0.0 && m <= 1.0)) {
            return Err(LadriError::config("sweep", "magnitudes must be in (0, 1]"));
        }
        if self.initial_gaps.iter().any(|&g| !(g > 0.0)) || self.lead_speeds.iter().any(|&v| !(v >= 0.0)) {
            return Err(LadriError::config("sweep", "gaps must be > 0 and speeds >= 0"));
        }
        if !(self.fault_start >= 0.0 && self.fault_start < self.fault_end && self.fault_end <= self.base.duration) {
            return Err(LadriError::config(
                "sweep",
                "need 0 <= fault_start < fault_end <= base duration",
            ));
        }
        let ego = self
            .base
            .ego_index()
            .ok_or_else(|| LadriError::config("sweep", "base scenario needs an Ego vehicle"))?;
        if ego + 1 >= self.base.vehicles.len() {
            return Err(LadriError::config(
                "sweep",
                "base scenario needs a vehicle ahead of the Ego to sweep the gap",
            ));
        }
        Ok(())
    }

    /// The scenario at one grid point. `fault` of `None` is the fault-free
    /// member of the grid.
    pub fn scenario_at(&self, gap: f64, speed: f64, fault: Option<(FaultKind, f64)>) -> ScenarioConfig {
        let mut config = self.base.clone();
        for vehicle in &mut config.vehicles {
            vehicle.speed = speed;
        }
        let ego = config.ego_index().expect("validated");
        let ahead_position = config.vehicles[ego + 1].position;
        let shift = (ahead_position - gap) - config.vehicles[ego].position;
        for vehicle in &mut config.vehicles[..=ego] {
            vehicle.position += shift;
        }
        config.fault = fault.map(|(kind, magnitude)| FaultSpec {
            kind,
            magnitude,
            t_start: self.fault_start,
            t_end: self.fault_end,
        });
        config
    }

    /// All grid points in generation order, paired with their scenario ids.
    pub fn grid(&self) -> Vec<(u64, ScenarioConfig)> {
        let mut out = Vec::new();
        let mut id = 0u64;
        for &gap in &self.initial_gaps {
            for &speed in &self.lead_speeds {
                let mut faults: Vec<Option<(FaultKind, f64)>> = vec![None];
                for &kind in &self.fault_kinds {
                    for &magnitude in &self.magnitudes {
                        faults.push(Some((kind, magnitude)));
                    }
                }
                for fault in faults {
                    let mut config = self.scenario_at(gap, speed, fault);
                    config.seed = self.master_seed ^ id;
                    out.push((id, config));
                    id += 1;
                }
            }
        }
        out
    }
}

/// The stock sweep: steady 40/60/80 km/h traffic at three following
/// distances, a fault-free run plus both fault kinds over five magnitudes at
/// each grid point. The subject holds speed so that injected faults actually
/// reach the actuator.
pub fn default_sweep(master_seed: u64) -> SweepConfig {
    let base = ScenarioConfig {
        dt: 0.01,
        duration: 30.0,
        vehicles: vec![
            VehicleConfig {
                role: VehicleRole::Ego,
                position: 0.0,
                speed: 16.67,
                policy: Some(Policy::ConstantSpeed),
            },
            VehicleConfig {
                role: VehicleRole::Lead,
                position: 40.0,
                speed: 16.67,
                policy: Some(Policy::ConstantSpeed),
            },
        ],
        acc_params: AccParams::default(),
        fault: None,
        seed: 0,
        noise: NoiseSpec::default(),
        limits: AccelLimits::default(),
    };
    SweepConfig {
        base,
        fault_kinds: vec![FaultKind::UnintendedAccel, FaultKind::UnintendedBrake],
        magnitudes: vec![0.2, 0.35, 0.5, 0.65, 0.8],
        initial_gaps: vec![15.0, 40.0, 80.0],
        lead_speeds: vec![11.11, 16.67, 22.22],
        fault_start: 5.0,
        fault_end: 28.0,
        master_seed,
        hara: HaraConfig::default(),
        require_coverage: true,
    }
}

/// Per-run bookkeeping emitted alongside the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub scenarios: usize,
    pub rows: usize,
    pub class_counts: [usize; STAGE_COUNT],
    pub terminals: Vec<(u64, TerminalEvent)>,
}

/// Runs the sweep: simulate, sample sensors, build features, label from
/// ground truth. Deterministic from the master seed; each scenario owns the
/// derived seed `master_seed ^ scenario_id`.
pub fn generate_dataset(sweep: &SweepConfig) -> Result<(Vec<DatasetRow>, DatasetMeta)> {
    sweep.validate()?;
    let mut rows = Vec::new();
    let mut class_counts = [0usize; STAGE_COUNT];
    let mut terminals = Vec::new();
    let grid = sweep.grid();
    for (id, config) in &grid {
        let trace = run_scenario(config)?;
        let labels = label_trace(&trace, trace.ego_index, &sweep.hara)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut prev: Option<SensorFrame> = None;
        for (record, label) in trace.records.iter().zip(&labels) {
            let truth = subject_truth(record, trace.ego_index, config.acc_params.detection_range)?;
            let frame = sample_sensors(&truth, &config.noise, &config.limits, &mut rng)?;
            let features = build_feature_vector(&frame, prev.as_ref(), config.acc_params.detection_range);
            class_counts[label.stage.index()] += 1;
            rows.push(DatasetRow {
                scenario_id: *id,
                time: record.time,
                features,
                s_level: label.severity.index() as u8,
                c_level: label.controllability.index() as u8,
                stage: label.stage.index() as u8,
            });
            prev = Some(frame);
        }
        terminals.push((*id, trace.terminal));
    }
    if sweep.require_coverage {
        for (class, &count) in class_counts.iter().enumerate() {
            if count == 0 {
                return Err(LadriError::Coverage { class });
            }
        }
    }
    let meta = DatasetMeta {
        scenarios: grid.len(),
        rows: rows.len(),
        class_counts,
        terminals,
    };
    Ok((rows, meta))
}

fn format_row(row: &DatasetRow) -> String {
    let f = row.features;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        row.scenario_id,
        row.time,
        f.rel_distance,
        f.rel_speed,
        f.ego_speed,
        f.ttc,
        f.headway,
        f.required_decel,
        f.throttle_pos,
        f.brake_pos,
        row.s_level,
        row.c_level,
        row.stage
    )
}

pub fn write_csv(rows: &[DatasetRow], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", format_row(row))?;
    }
    out.flush()?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(field: &str, name: &str, line: usize) -> Result<T> {
    field.trim().parse::<T>().map_err(|_| LadriError::Parse {
        line,
        message: format!("cannot parse {name} from `{field}`"),
    })
}

fn parse_finite(field: &str, name: &str, line: usize) -> Result<f64> {
    let v: f64 = parse_field(field, name, line)?;
    if !v.is_finite() {
        return Err(LadriError::Parse {
            line,
            message: format!("{name} must be finite, got `{field}`"),
        });
    }
    Ok(v)
}

fn parse_level(field: &str, name: &str, line: usize) -> Result<u8> {
    let v: u8 = parse_field(field, name, line)?;
    if v as usize >= STAGE_COUNT {
        return Err(LadriError::Parse {
            line,
            message: format!("{name} must be 0..=3, got {v}"),
        });
    }
    Ok(v)
}

pub fn read_csv(path: &Path) -> Result<Vec<DatasetRow>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| LadriError::Schema("empty file".into()))??;
    if header.trim_end() != CSV_HEADER {
        return Err(LadriError::Schema(format!(
            "header `{header}` does not match the dataset contract"
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != CSV_COLUMNS {
            return Err(LadriError::Parse {
                line: line_no,
                message: format!("expected {CSV_COLUMNS} columns, got {}", fields.len()),
            });
        }
        let features = FeatureVector::from_array([
            parse_finite(fields[2], "rel_distance", line_no)?,
            parse_finite(fields[3], "rel_speed", line_no)?,
            parse_finite(fields[4], "ego_speed", line_no)?,
            parse_finite(fields[5], "ttc", line_no)?,
            parse_finite(fields[6], "headway", line_no)?,
            parse_finite(fields[7], "required_decel", line_no)?,
            parse_finite(fields[8], "throttle_pos", line_no)?,
            parse_finite(fields[9], "brake_pos", line_no)?,
        ]);
        rows.push(DatasetRow {
            scenario_id: parse_field(fields[0], "scenario_id", line_no)?,
            time: parse_finite(fields[1], "time", line_no)?,
            features,
            s_level: parse_level(fields[10], "s_level", line_no)?,
            c_level: parse_level(fields[11], "c_level", line_no)?,
            stage: parse_level(fields[12], "stage", line_no)?,
        });
    }
    Ok(rows)
}

/// Scenario-grouped stratified split: all rows of one scenario land in one
/// split (adjacent frames are near-duplicates, so frame-level splits would
/// leak), scenarios are stratified by the highest stage they reach, and the
/// assignment is deterministic per seed.
pub fn split_dataset(
    rows: &[DatasetRow],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<DatasetRow>, Vec<DatasetRow>, Vec<DatasetRow>)> {
    let (f_train, f_val, f_test) = fractions;
    if (f_train + f_val + f_test - 1.0).abs() > 1e-9 || f_train < 0.0 || f_val < 0.0 || f_test < 0.0 {
        return Err(LadriError::Data(format!(
            "fractions must be non-negative and sum to 1, got {fractions:?}"
        )));
    }
    if rows.is_empty() {
        return Err(LadriError::Data("no rows to split".into()));
    }
    let mut class_counts = [0usize; STAGE_COUNT];
    for row in rows {
        class_counts[row.stage as usize] += 1;
    }
    for (class, &count) in class_counts.iter().enumerate() {
        if count > 0 && count < 3 {
            return Err(LadriError::Stratify {
                class,
                count,
                needed: 3,
            });
        }
    }

    // Stratum of a scenario: the highest stage any of its rows reaches.
    let mut peak: BTreeMap<u64, u8> = BTreeMap::new();
    for row in rows {
        let entry = peak.entry(row.scenario_id).or_insert(0);
        *entry = (*entry).max(row.stage);
    }
    let mut strata: Vec<Vec<u64>> = vec![Vec::new(); STAGE_COUNT];
    for (&id, &stage) in &peak {
        strata[stage as usize].push(id);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment: BTreeMap<u64, u8> = BTreeMap::new();
    for ids in &mut strata {
        shuffle_ids(ids, &mut rng);
        let (n_train, n_val, _) = allocate_three(ids.len(), fractions);
        for (pos, &id) in ids.iter().enumerate() {
            let split = if pos < n_train {
                0
            } else if pos < n_train + n_val {
                1
            } else {
                2
            };
            assignment.insert(id, split);
        }
    }

    let mut out = (Vec::new(), Vec::new(), Vec::new());
    for row in rows {
        match assignment[&row.scenario_id] {
            0 => out.0.push(*row),
            1 => out.1.push(*row),
            _ => out.2.push(*row),
        }
    }
    Ok(out)
}

/// Largest-remainder allocation of n items to the three splits; ties favor
/// the earlier split so the result is deterministic.
fn allocate_three(n: usize, fractions: (f64, f64, f64)) -> (usize, usize, usize) {
    let exact = [
        n as f64 * fractions.0,
        n as f64 * fractions.1,
        n as f64 * fractions.2,
    ];
    let mut counts = [
        exact[0].floor() as usize,
        exact[1].floor() as usize,
        exact[2].floor() as usize,
    ];
    let leftover = n - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        exact[b]
            .fract()
            .partial_cmp(&exact[a].fract())
            .expect("finite fractions")
            .then(a.cmp(&b))
    });
    for &i in order.iter().take(leftover) {
        counts[i] += 1;
    }
    (counts[0], counts[1], counts[2])
}

fn shuffle_ids(ids: &mut [u64], rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for i in (1..ids.len()).rev() {
        let j = rng.random_range(0..=i);
        ids.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_sweep() -> SweepConfig {
        let mut sweep = default_sweep(123);
        sweep.base.duration = 12.0;
        sweep.fault_start = 2.0;
        sweep.fault_end = 10.0;
        sweep.magnitudes = vec![0.35, 0.8];
        sweep.initial_gaps = vec![12.0, 35.0];
        sweep.lead_speeds = vec![16.67, 22.22];
        sweep
    }

    #[test]
    fn generation_is_deterministic_and_labeled_consistently() {
        let sweep = small_sweep();
        let (rows_a, meta_a) = generate_dataset(&sweep).unwrap();
        let (rows_b, meta_b) = generate_dataset(&sweep).unwrap();
        assert_eq!(rows_a, rows_b);
        assert_eq!(meta_a, meta_b);
        assert_eq!(meta_a.scenarios, 2 * 2 * (1 + 2 * 2));
        assert!(meta_a.class_counts.iter().all(|&c| c > 0), "{:?}", meta_a.class_counts);

        // Row stage always matches the oracle table applied to (s, c).
        let hara = HaraConfig::default();
        for row in &rows_a {
            let expected = hara.stage_table[row.c_level as usize][row.s_level as usize];
            assert_eq!(row.stage, expected);
        }
    }

    #[test]
    fn fault_free_equilibrium_sweep_is_all_safe() {
        let mut sweep = small_sweep();
        // Large steady gaps, no fault scenarios contribute risk: coverage off.
        sweep.require_coverage = false;
        sweep.fault_kinds = vec![FaultKind::UnintendedAccel];
        sweep.magnitudes = vec![0.2];
        sweep.initial_gaps = vec![120.0];
        sweep.lead_speeds = vec![16.67];
        sweep.base.duration = 6.0;
        sweep.fault_start = 1.0;
        sweep.fault_end = 1.5;
        let (rows, _) = generate_dataset(&sweep).unwrap();
        let fault_free: Vec<_> = rows.iter().filter(|r| r.scenario_id == 0).collect();
        assert!(!fault_free.is_empty());
        assert!(fault_free.iter().all(|r| r.stage == 0));
    }

    #[test]
    fn coverage_failure_names_the_class() {
        let mut sweep = small_sweep();
        sweep.fault_kinds = vec![FaultKind::UnintendedBrake];
        sweep.magnitudes = vec![0.2];
        sweep.initial_gaps = vec![120.0];
        sweep.lead_speeds = vec![16.67];
        match generate_dataset(&sweep) {
            Err(LadriError::Coverage { class }) => assert!(class > 0),
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_is_exact_and_byte_stable() {
        let sweep = small_sweep();
        let (rows, _) = generate_dataset(&sweep).unwrap();
        let dir = tempdir().unwrap();
        let path_a = dir.path().join("a.csv");
        let path_b = dir.path().join("b.csv");
        write_csv(&rows, &path_a).unwrap();
        let back = read_csv(&path_a).unwrap();
        assert_eq!(rows, back);
        write_csv(&back, &path_b).unwrap();
        assert_eq!(
            std::fs::read(&path_a).unwrap(),
            std::fs::read(&path_b).unwrap()
        );
    }

    #[test]
    fn csv_rejects_schema_and_row_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");

        std::fs::write(&path, "scenario_id,time,rel_distance\n").unwrap();
        assert!(matches!(read_csv(&path), Err(LadriError::Schema(_))));

        // 12 columns.
        let short_row: Vec<&str> = CSV_HEADER.split(',').take(12).collect();
        std::fs::write(&path, format!("{CSV_HEADER}\n{}\n", vec!["1"; 12].join(","))).unwrap();
        drop(short_row);
        match read_csv(&path) {
            Err(LadriError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        // Stage out of the enum range.
        std::fs::write(
            &path,
            format!("{CSV_HEADER}\n0,0,30,0,20,60,1.5,0,0,0,0,0,7\n"),
        )
        .unwrap();
        match read_csv(&path) {
            Err(LadriError::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("stage"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn split_groups_scenarios_and_respects_fractions() {
        let sweep = small_sweep();
        let (rows, meta) = generate_dataset(&sweep).unwrap();
        let (train, val, test) = split_dataset(&rows, (0.70, 0.15, 0.15), 9).unwrap();
        assert_eq!(train.len() + val.len() + test.len(), rows.len());

        let ids = |part: &[DatasetRow]| {
            part.iter().map(|r| r.scenario_id).collect::<std::collections::HashSet<_>>()
        };
        let (ti, vi, si) = (ids(&train), ids(&val), ids(&test));
        assert!(ti.is_disjoint(&vi) && ti.is_disjoint(&si) && vi.is_disjoint(&si));
        assert_eq!(ti.len() + vi.len() + si.len(), meta.scenarios);
        assert!(ti.len() >= meta.scenarios / 2, "train got {} scenarios", ti.len());
        assert!(!vi.is_empty() && !si.is_empty());
    }

    #[test]
    fn split_allocation_is_70_15_15_over_many_groups() {
        // 100 synthetic single-row scenarios, all the same stage pattern.
        let mut rows = Vec::new();
        for id in 0..100u64 {
            for stage in [0u8, 1, 2, 3] {
                rows.push(DatasetRow {
                    scenario_id: id,
                    time: stage as f64,
                    features: FeatureVector::from_array([stage as f64; 8]),
                    s_level: stage,
                    c_level: stage,
                    stage,
                });
            }
        }
        let (train, val, test) = split_dataset(&rows, (0.70, 0.15, 0.15), 1).unwrap();
        let count_ids = |part: &[DatasetRow]| {
            part.iter().map(|r| r.scenario_id).collect::<std::collections::HashSet<_>>().len()
        };
        assert_eq!(count_ids(&train), 70);
        assert_eq!(count_ids(&val), 15);
        assert_eq!(count_ids(&test), 15);
    }

    #[test]
    fn split_rejects_tiny_classes() {
        let mut rows = Vec::new();
        for id in 0..10u64 {
            rows.push(DatasetRow {
                scenario_id: id,
                time: 0.0,
                features: FeatureVector::from_array([0.0; 8]),
                s_level: 0,
                c_level: 0,
                stage: 0,
            });
        }
        rows[0].stage = 3;
        match split_dataset(&rows, (0.7, 0.15, 0.15), 0) {
            Err(LadriError::Stratify { class: 3, count: 1, .. }) => {}
            other => panic!("expected stratify error, got {other:?}"),
        }
    }
}
