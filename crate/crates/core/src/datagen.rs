//! Participant-level simulation of platform SMART datasets.
//!
//! Generation is deterministic given `(design, scenario, seed)`: the master
//! seed feeds a [`StreamRng`] tree with one child stream per cohort shuffle
//! and one per participant, so datasets are reproducible byte for byte and
//! independent simulations can run concurrently on independent seeds.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use serde::{Deserialize, Serialize};

use crate::rng::StreamRng;
use crate::trial::{
    Cohort, OutcomeFamily, ScenarioParams, Stage1Arm, Stage2Arm, TrialDesign, TrialError,
};

/// First-stage assignment mode. `Fixed` realizes the allocation plan's exact
/// target counts in permuted order; `Bernoulli` randomizes each participant
/// independently with the plan's probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationMode {
    #[default]
    Fixed,
    Bernoulli,
}

const SHUFFLE_C1: u64 = 0;
const SHUFFLE_C2: u64 = 1;
const PARTICIPANT_BASE: u64 = 2;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error(transparent)]
    Trial(#[from] TrialError),
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// Second-stage disposition. Non-responders continue the initial treatment;
/// responders are re-randomized to a second-stage arm. Constructing an
/// inconsistent `(r, a2)` pair is impossible by type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondStage {
    Continue,
    Switch(Stage2Arm),
}

/// One participant's observed trajectory `(cohort, a1, r, a2, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticipantRecord {
    pub cohort: Cohort,
    pub first: Stage1Arm,
    pub second: SecondStage,
    pub y: f64,
}

impl ParticipantRecord {
    pub fn responded(&self) -> bool {
        matches!(self.second, SecondStage::Switch(_))
    }

    pub fn switch_arm(&self) -> Option<Stage2Arm> {
        match self.second {
            SecondStage::Continue => None,
            SecondStage::Switch(arm) => Some(arm),
        }
    }

    /// Label written to the `a2` CSV column: the continuation of `a1` for
    /// non-responders, the second-stage arm otherwise.
    pub fn second_label(&self) -> &'static str {
        match self.second {
            SecondStage::Continue => self.first.label(),
            SecondStage::Switch(arm) => arm.label(),
        }
    }
}

/// A simulated trial: ordered records (cohort `c1` block first) plus the
/// design and seed that produced them.
#[derive(Debug, Clone)]
pub struct TrialDataset {
    pub records: Vec<ParticipantRecord>,
    pub design: TrialDesign,
    pub seed: u64,
}

impl TrialDataset {
    pub fn cohort_records(&self, cohort: Cohort) -> Vec<&ParticipantRecord> {
        self.records.iter().filter(|r| r.cohort == cohort).collect()
    }
}

/// Simulate one trial with fixed allocation (exact arm targets in permuted
/// order).
pub fn simulate_trial(
    design: &TrialDesign,
    scenario: &ScenarioParams,
    seed: u64,
) -> Result<TrialDataset, DatagenError> {
    simulate_trial_with(design, scenario, seed, AllocationMode::Fixed)
}

/// Simulate one trial with the requested allocation mode. `Fixed` realizes
/// the allocation plan's exact target counts; `Bernoulli` randomizes each
/// participant's first-stage arm with the plan's probabilities, as a
/// sensitivity check.
pub fn simulate_trial_with(
    design: &TrialDesign,
    scenario: &ScenarioParams,
    seed: u64,
    mode: AllocationMode,
) -> Result<TrialDataset, DatagenError> {
    let plan = design.allocation_plan()?;
    let trial_stream = StreamRng::new(seed);

    let mut records = Vec::with_capacity(plan.trial_total());
    let mut participant_index: u64 = 0;

    for (cohort, shuffle_label) in [(Cohort::C1, SHUFFLE_C1), (Cohort::C2, SHUFFLE_C2)] {
        let alloc = plan.cohort(cohort);
        if alloc.total == 0 {
            continue;
        }

        let arm_order: Vec<Stage1Arm> = match mode {
            AllocationMode::Fixed => {
                let mut arms = Vec::with_capacity(alloc.total);
                for (&arm, &count) in &alloc.arm_targets {
                    arms.extend(std::iter::repeat_n(arm, count));
                }
                let mut shuffle_rng = trial_stream.split(shuffle_label);
                arms.shuffle(&mut shuffle_rng);
                arms
            }
            AllocationMode::Bernoulli => {
                let mut rng = trial_stream.split(shuffle_label);
                let arms: Vec<(Stage1Arm, f64)> = alloc
                    .stage1_probs
                    .iter()
                    .map(|(&a, &p)| (a, p))
                    .collect();
                (0..alloc.total)
                    .map(|_| {
                        let u: f64 = rng.gen();
                        let mut acc = 0.0;
                        for &(arm, p) in &arms {
                            acc += p;
                            if u < acc {
                                return arm;
                            }
                        }
                        arms.last().expect("nonempty arm list").0
                    })
                    .collect()
            }
        };

        let params = scenario.cohort(cohort);
        for first in arm_order {
            let arm = params.arm(first)?;
            let mut rng = trial_stream.split(PARTICIPANT_BASE + participant_index);
            participant_index += 1;

            let responded = rng.gen::<f64>() < arm.response_rate;
            let second = if responded {
                let arm2 = if rng.gen::<f64>() < alloc.stage2_prob {
                    Stage2Arm::A21
                } else {
                    Stage2Arm::A22
                };
                SecondStage::Switch(arm2)
            } else {
                SecondStage::Continue
            };
            let mean = match second {
                SecondStage::Continue => arm.mean_continue,
                SecondStage::Switch(a2) => arm.mean_switch_to(a2),
            };
            let y = match scenario.family {
                OutcomeFamily::Continuous { sd } => {
                    if sd == 0.0 {
                        mean
                    } else {
                        Normal::new(mean, sd)
                            .expect("valid normal parameters")
                            .sample(&mut rng)
                    }
                }
                OutcomeFamily::Binary => {
                    if rng.gen::<f64>() < mean {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            records.push(ParticipantRecord {
                cohort,
                first,
                second,
                y,
            });
        }
    }

    Ok(TrialDataset {
        records,
        design: *design,
        seed,
    })
}

// ---------------------------------------------------------------------------
// Empirical summaries
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceSummary {
    pub n: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ArmSummary {
    pub n: usize,
    pub responders: usize,
    /// Outcome summaries keyed by second-stage disposition. Absent keys mean
    /// the sequence was never observed.
    pub sequences: BTreeMap<&'static str, SequenceSummary>,
}

impl ArmSummary {
    pub fn response_rate(&self) -> f64 {
        self.responders as f64 / self.n as f64
    }
}

#[derive(Debug, Clone, Default)]
pub struct CohortSummary {
    pub n: usize,
    pub arms: BTreeMap<Stage1Arm, ArmSummary>,
}

/// Plug-in summaries for diagnostics and test oracles: per-cohort arm counts,
/// response rates, and sequence-mean estimates. Arms or sequences with no
/// records are absent from the maps rather than reported as 0/0.
#[derive(Debug, Clone, Default)]
pub struct EmpiricalSummary {
    pub cohorts: BTreeMap<Cohort, CohortSummary>,
}

pub fn empirical_summary(records: &[ParticipantRecord]) -> EmpiricalSummary {
    let mut sums: BTreeMap<(Cohort, Stage1Arm, &'static str), (usize, f64)> = BTreeMap::new();
    let mut summary = EmpiricalSummary::default();
    for rec in records {
        let cohort = summary.cohorts.entry(rec.cohort).or_default();
        cohort.n += 1;
        let arm = cohort.arms.entry(rec.first).or_default();
        arm.n += 1;
        if rec.responded() {
            arm.responders += 1;
        }
        let key = (rec.cohort, rec.first, rec.second_label());
        let entry = sums.entry(key).or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += rec.y;
    }
    for ((cohort, first, label), (n, total)) in sums {
        let arm = summary
            .cohorts
            .get_mut(&cohort)
            .and_then(|c| c.arms.get_mut(&first))
            .expect("arm recorded above");
        arm.sequences.insert(
            label,
            SequenceSummary {
                n,
                mean: total / n as f64,
            },
        );
    }
    summary
}

// ---------------------------------------------------------------------------
// CSV interchange
// ---------------------------------------------------------------------------

pub const CSV_HEADER: &str = "cohort,a1,r,a2,y";

/// Write records as CSV (`cohort,a1,r,a2,y`, UTF-8, LF line endings).
pub fn write_csv<W: Write>(records: &[ParticipantRecord], mut out: W) -> io::Result<()> {
    out.write_all(CSV_HEADER.as_bytes())?;
    out.write_all(b"\n")?;
    for rec in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            rec.cohort,
            rec.first,
            rec.responded() as u8,
            rec.second_label(),
            rec.y
        )?;
    }
    Ok(())
}

/// Parse a dataset CSV, validating the header, field values, and the record
/// invariants (non-responders continue their first treatment; the new arm
/// appears only post-adaptation). Errors carry 1-based line numbers.
pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<ParticipantRecord>, DatagenError> {
    let err = |line: usize, message: String| DatagenError::Csv { line, message };
    let mut lines = input.lines().enumerate();
    match lines.next() {
        Some((_, Ok(header))) if header.trim_end() == CSV_HEADER => {}
        Some((_, Ok(header))) => {
            return Err(err(1, format!("expected header `{CSV_HEADER}`, got `{header}`")))
        }
        Some((_, Err(e))) => return Err(DatagenError::Io(e)),
        None => return Err(err(1, "empty file (header row is mandatory)".into())),
    }

    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(DatagenError::Io)?;
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(err(lineno, format!("expected 5 fields, got {}", fields.len())));
        }
        let cohort: Cohort = fields[0]
            .parse()
            .map_err(|e: TrialError| err(lineno, e.to_string()))?;
        let first: Stage1Arm = fields[1]
            .parse()
            .map_err(|e: TrialError| err(lineno, e.to_string()))?;
        let responded = match fields[2] {
            "0" => false,
            "1" => true,
            other => return Err(err(lineno, format!("r must be 0 or 1, got `{other}`"))),
        };
        let second = if responded {
            let arm: Stage2Arm = fields[3]
                .parse()
                .map_err(|e: TrialError| err(lineno, e.to_string()))?;
            SecondStage::Switch(arm)
        } else {
            if fields[3] != first.label() {
                return Err(err(
                    lineno,
                    format!(
                        "non-responder a2 must continue a1 (`{}`), got `{}`",
                        first.label(),
                        fields[3]
                    ),
                ));
            }
            SecondStage::Continue
        };
        if first == Stage1Arm::A13 && cohort == Cohort::C1 {
            return Err(err(lineno, "arm a13 cannot appear in cohort c1".into()));
        }
        let y: f64 = fields[4]
            .parse()
            .map_err(|_| err(lineno, format!("y is not a number: `{}`", fields[4])))?;
        if !y.is_finite() {
            return Err(err(lineno, format!("y is not finite: `{}`", fields[4])));
        }
        records.push(ParticipantRecord {
            cohort,
            first,
            second,
            y,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trial::{builtin_scenario, true_dtr_mean};
    use approx::assert_relative_eq;

    fn design(n: usize, r: f64) -> TrialDesign {
        TrialDesign::new(n, r).unwrap()
    }

    #[test]
    fn determinism_same_seed_same_dataset() {
        let scenario = builtin_scenario("table1-s2").unwrap();
        let d = design(200, 0.5);
        let a = simulate_trial(&d, &scenario, 99).unwrap();
        let b = simulate_trial(&d, &scenario, 99).unwrap();
        assert_eq!(a.records, b.records);
        let c = simulate_trial(&d, &scenario, 100).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn arm_counts_match_allocation_plan() {
        let scenario = builtin_scenario("table1-s2").unwrap();
        let d = design(1000, 0.5);
        let plan = d.allocation_plan().unwrap();
        let data = simulate_trial(&d, &scenario, 7).unwrap();
        assert_eq!(data.records.len(), 1500);
        let summary = empirical_summary(&data.records);
        for cohort in Cohort::ALL {
            let alloc = plan.cohort(cohort);
            let cs = &summary.cohorts[&cohort];
            for (&arm, &target) in &alloc.arm_targets {
                assert_eq!(cs.arms[&arm].n, target, "{cohort} {arm}");
            }
        }
    }

    #[test]
    fn zero_noise_outcomes_hit_sequence_means() {
        let mut scenario = builtin_scenario("table1-s1").unwrap();
        scenario.family = OutcomeFamily::Continuous { sd: 0.0 };
        let data = simulate_trial(&design(100, 0.5), &scenario, 3).unwrap();
        for rec in &data.records {
            let arm = scenario.cohort(rec.cohort).arm(rec.first).unwrap();
            let expect = match rec.second {
                SecondStage::Continue => arm.mean_continue,
                SecondStage::Switch(a2) => arm.mean_switch_to(a2),
            };
            assert_eq!(rec.y, expect);
        }
        // And the summary reproduces the scenario parameters exactly.
        let summary = empirical_summary(&data.records);
        let c1_a11 = &summary.cohorts[&Cohort::C1].arms[&Stage1Arm::A11];
        assert_relative_eq!(c1_a11.sequences["a11"].mean, 15.0);
    }

    #[test]
    fn nonresponders_always_continue() {
        let scenario = builtin_scenario("table1-s4").unwrap();
        let data = simulate_trial(&design(600, 0.3), &scenario, 11).unwrap();
        for rec in &data.records {
            if !rec.responded() {
                assert_eq!(rec.second, SecondStage::Continue);
                assert_eq!(rec.second_label(), rec.first.label());
            }
            if rec.first == Stage1Arm::A13 {
                assert_eq!(rec.cohort, Cohort::C2);
            }
        }
    }

    #[test]
    fn large_sample_rates_converge() {
        // Response rate for a11 in c1 is 0.4 under scenario 2; at n1 = 100k
        // records the empirical rate lands within 3 binomial standard errors.
        let scenario = builtin_scenario("table1-s2").unwrap();
        let d = design(200_000, 0.5);
        let data = simulate_trial(&d, &scenario, 12345).unwrap();
        let summary = empirical_summary(&data.records);
        let arm = &summary.cohorts[&Cohort::C1].arms[&Stage1Arm::A11];
        let se = (0.4 * 0.6 / arm.n as f64).sqrt();
        assert!(
            (arm.response_rate() - 0.4).abs() < 3.0 * se.max(0.005 / 3.0),
            "rate {} out of tolerance",
            arm.response_rate()
        );
        // Sequence means within 3 normal standard errors of their targets.
        let seq = &arm.sequences["a11"];
        let se = 2.0 / (seq.n as f64).sqrt();
        assert!((seq.mean - 15.0).abs() < 3.0 * se);
        // Large-n regime-level check: empirical d11 mean near the truth.
        let truth = true_dtr_mean(&scenario, Cohort::C1, "d11".parse().unwrap()).unwrap();
        assert_relative_eq!(truth, 15.8, epsilon = 1e-9);
    }

    #[test]
    fn drift_scenario_response_rates() {
        // Under the drift scenario the post-adaptation a11 response rate
        // moves to 0.5.
        let scenario = builtin_scenario("table1-s4").unwrap();
        let data = simulate_trial(&design(20_000, 0.5), &scenario, 9).unwrap();
        let summary = empirical_summary(&data.records);
        let arm = &summary.cohorts[&Cohort::C2].arms[&Stage1Arm::A11];
        assert!((arm.response_rate() - 0.5).abs() < 0.03);
        let arm_c1 = &summary.cohorts[&Cohort::C1].arms[&Stage1Arm::A11];
        assert!((arm_c1.response_rate() - 0.4).abs() < 0.03);
    }

    #[test]
    fn empirical_summary_marks_absent_arms() {
        let records = vec![ParticipantRecord {
            cohort: Cohort::C2,
            first: Stage1Arm::A13,
            second: SecondStage::Continue,
            y: 1.0,
        }];
        let summary = empirical_summary(&records);
        assert!(!summary.cohorts.contains_key(&Cohort::C1));
        let c2 = &summary.cohorts[&Cohort::C2];
        assert!(!c2.arms.contains_key(&Stage1Arm::A11));
        assert_eq!(c2.arms[&Stage1Arm::A13].n, 1);
    }

    #[test]
    fn csv_round_trip() {
        let scenario = builtin_scenario("table2-s2").unwrap();
        let data = simulate_trial(&design(100, 0.5), &scenario, 21).unwrap();
        let mut buf = Vec::new();
        write_csv(&data.records, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("cohort,a1,r,a2,y\n"));
        assert!(!text.contains('\r'));
        let parsed = read_csv(buf.as_slice()).unwrap();
        assert_eq!(parsed, data.records);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let bad = "cohort,a1,r,a2,y\nc1,a11,0,a12,5.0\n";
        let err = read_csv(bad.as_bytes()).unwrap_err();
        match err {
            DatagenError::Csv { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("continue"), "got: {message}");
            }
            other => panic!("unexpected error {other:?}"),
        }

        let bad = "cohort,a1,r,a2,y\nc1,a13,0,a13,5.0\n";
        assert!(matches!(
            read_csv(bad.as_bytes()).unwrap_err(),
            DatagenError::Csv { line: 2, .. }
        ));

        let bad = "wrong,header\n";
        assert!(matches!(
            read_csv(bad.as_bytes()).unwrap_err(),
            DatagenError::Csv { line: 1, .. }
        ));
    }

    mod roundtrip {
        use super::super::*;
        use proptest::prelude::*;

        fn arb_record() -> impl Strategy<Value = ParticipantRecord> {
            (0..5usize, any::<bool>(), any::<bool>(), -1e12f64..1e12).prop_map(
                |(arm_pick, respond, to_a22, y)| {
                    let (cohort, first) = match arm_pick {
                        0 => (Cohort::C1, Stage1Arm::A11),
                        1 => (Cohort::C1, Stage1Arm::A12),
                        2 => (Cohort::C2, Stage1Arm::A11),
                        3 => (Cohort::C2, Stage1Arm::A12),
                        _ => (Cohort::C2, Stage1Arm::A13),
                    };
                    let second = if respond {
                        SecondStage::Switch(if to_a22 { Stage2Arm::A22 } else { Stage2Arm::A21 })
                    } else {
                        SecondStage::Continue
                    };
                    ParticipantRecord {
                        cohort,
                        first,
                        second,
                        y,
                    }
                },
            )
        }

        proptest! {
            #[test]
            fn csv_round_trip_is_lossless(records in proptest::collection::vec(arb_record(), 0..40)) {
                let mut buf = Vec::new();
                write_csv(&records, &mut buf).unwrap();
                let parsed = read_csv(buf.as_slice()).unwrap();
                prop_assert_eq!(parsed, records);
            }
        }
    }

    #[test]
    fn bernoulli_mode_respects_probabilities_loosely() {
        let scenario = builtin_scenario("table1-s2").unwrap();
        let d = design(20_000, 0.5);
        let data =
            simulate_trial_with(&d, &scenario, 5, AllocationMode::Bernoulli).unwrap();
        let summary = empirical_summary(&data.records);
        let c2 = &summary.cohorts[&Cohort::C2];
        let frac = c2.arms[&Stage1Arm::A13].n as f64 / c2.n as f64;
        assert!((frac - 0.5).abs() < 0.02, "a13 fraction {frac}");
    }
}
