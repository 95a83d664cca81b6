//! Scenario files and the runner behind the CLI.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::addition::execute_addition;
use crate::baseline::execute_removal_uncoded;
use crate::error::{Error, Result};
use crate::index::{NodeId, MAX_NODES};
use crate::model::{init_database_with_capacity, required_multiple, verify_balanced, ClusterDatabase, FileSpec};
use crate::par;
use crate::removal::execute_removal;
use crate::transport::{BroadcastChannel, TransmissionLog, TransportKind};
use crate::verify::{check_structural_invariance, compare_load, LoadReport, Operation, Rational};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RandomTarget {
    Random,
}

/// Which node a removal takes out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RemoveTarget {
    Node(NodeId),
    /// Drawn from the scenario seed.
    Random(RandomTarget),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ScenarioOp {
    Add,
    Remove { node: RemoveTarget },
}

fn default_coded() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub nodes: usize,
    pub replication: usize,
    pub file_bytes: u64,
    pub seed: u64,
    pub max_nodes: usize,
    #[serde(default)]
    pub transport: TransportKind,
    pub operations: Vec<ScenarioOp>,
    /// `false` runs removals through the uncoded baseline.
    #[serde(default = "default_coded")]
    pub coded: bool,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Smallest valid file size for these parameters.
    pub fn minimal_file_bytes(max_nodes: usize, replication: usize) -> Result<u64> {
        required_multiple(max_nodes, replication)
    }

    /// A seeded walk of `steps` additions and random removals that keeps the
    /// node count within `[replication + 1, max_nodes]`.
    pub fn random_walk(nodes: usize, replication: usize, max_nodes: usize, seed: u64, steps: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce9_a410);
        let mut count = nodes;
        let mut operations = Vec::with_capacity(steps);
        for _ in 0..steps {
            let can_add = count < max_nodes;
            let can_remove = count > replication + 1;
            let add = match (can_add, can_remove) {
                (true, true) => rng.gen_bool(0.5),
                (true, false) => true,
                (false, true) => false,
                (false, false) => {
                    return Err(Error::Scenario { field: "max_nodes", reason: "no room to add or remove".into() })
                }
            };
            if add {
                operations.push(ScenarioOp::Add);
                count += 1;
            } else {
                operations.push(ScenarioOp::Remove { node: RemoveTarget::Random(RandomTarget::Random) });
                count -= 1;
            }
        }
        Ok(Scenario {
            nodes,
            replication,
            file_bytes: required_multiple(max_nodes, replication)?,
            seed,
            max_nodes,
            transport: TransportKind::Memory,
            operations,
            coded: true,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.replication;
        if r < 2 {
            return Err(Error::Scenario { field: "replication", reason: format!("must be at least 2, got {r}") });
        }
        if self.nodes < r + 1 {
            return Err(Error::Scenario { field: "nodes", reason: format!("needs at least {} nodes", r + 1) });
        }
        if self.max_nodes < self.nodes || self.max_nodes as u64 >= MAX_NODES {
            return Err(Error::Scenario {
                field: "max_nodes",
                reason: format!("must lie in [{}, {}]", self.nodes, MAX_NODES - 1),
            });
        }
        let required = required_multiple(self.max_nodes, r)?;
        if self.file_bytes == 0 || !self.file_bytes.is_multiple_of(required) {
            return Err(Error::Scenario {
                field: "file_bytes",
                reason: format!("{} is not a positive multiple of {required}", self.file_bytes),
            });
        }
        let mut count = self.nodes;
        for (step, op) in self.operations.iter().enumerate() {
            count = match op {
                ScenarioOp::Add => count + 1,
                ScenarioOp::Remove { .. } => count - 1,
            };
            if count < r + 1 || count > self.max_nodes {
                return Err(Error::Scenario {
                    field: "operations",
                    reason: format!("step {step} leaves {count} nodes, outside [{}, {}]", r + 1, self.max_nodes),
                });
            }
        }
        Ok(())
    }

    pub fn initial_database(&self) -> Result<ClusterDatabase> {
        init_database_with_capacity(
            self.nodes,
            self.replication,
            FileSpec::new(self.file_bytes, self.seed)?,
            self.max_nodes,
        )
    }
}

/// One line of the report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationRecord {
    #[serde(rename = "type")]
    pub kind: String,
    pub node: u64,
    pub coded: bool,
    pub bytes_transmitted: u64,
    pub load_num: u64,
    pub load_den: u64,
    pub theory_num: u64,
    pub theory_den: u64,
    pub balanced: bool,
    pub invariant: bool,
    pub load_matches: bool,
    pub file_intact: bool,
}

impl OperationRecord {
    pub fn passed(&self) -> bool {
        self.balanced && self.invariant && self.load_matches && self.file_intact
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub operations: Vec<OperationRecord>,
    pub cumulative_bytes: u64,
    pub cumulative_load_num: u64,
    pub cumulative_load_den: u64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "type,node,coded,bytes_transmitted,load_num,load_den,theory_num,theory_den,balanced,invariant,load_matches,file_intact\n",
        );
        for op in &self.operations {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                op.kind,
                op.node,
                op.coded,
                op.bytes_transmitted,
                op.load_num,
                op.load_den,
                op.theory_num,
                op.theory_den,
                op.balanced,
                op.invariant,
                op.load_matches,
                op.file_intact
            );
        }
        out
    }
}

pub struct ScenarioOutcome {
    pub report: Report,
    /// State after the last completed operation.
    pub database: ClusterDatabase,
    pub log: TransmissionLog,
    pub loads: Vec<LoadReport>,
}

/// Checks run after every operation.
fn record(db: &ClusterDatabase, load: &LoadReport, content: &[u8]) -> OperationRecord {
    let (kind, coded) = match load.operation {
        Operation::Removal { coded, .. } => ("remove", coded),
        Operation::Addition { .. } => ("add", true),
    };
    OperationRecord {
        kind: kind.to_string(),
        node: load.operation.node().0,
        coded,
        bytes_transmitted: load.bytes_transmitted,
        load_num: *load.measured.numer(),
        load_den: *load.measured.denom(),
        theory_num: *load.theory.numer(),
        theory_den: *load.theory.denom(),
        balanced: verify_balanced(db).passed(),
        invariant: check_structural_invariance(db).passed(),
        load_matches: compare_load(load).is_equal(),
        file_intact: db.reconstruct_file().map(|f| f == content).unwrap_or(false),
    }
}

/// Runs `scenario` on the transport it names.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioOutcome> {
    let mut channel = scenario.transport.open();
    run_scenario_on(scenario, channel.as_mut())
}

/// Runs every operation in order over `channel`. Validation and
/// initialisation errors are returned; a failing operation stops the run and
/// is recorded in the report next to the last good state.
pub fn run_scenario_on(scenario: &Scenario, channel: &mut dyn BroadcastChannel) -> Result<ScenarioOutcome> {
    scenario.validate()?;
    let mut db = scenario.initial_database()?;
    let content = db.file().content();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut operations = Vec::with_capacity(scenario.operations.len());
    let mut loads = Vec::with_capacity(scenario.operations.len());
    let mut log = TransmissionLog::default();
    let mut error = None;

    for op in &scenario.operations {
        let step = match op {
            ScenarioOp::Add => execute_addition(&db, channel),
            ScenarioOp::Remove { node } => {
                let target = match node {
                    RemoveTarget::Node(id) => *id,
                    RemoveTarget::Random(_) => {
                        let ids = db.node_ids();
                        *ids.iter().nth(rng.gen_range(0..ids.len())).expect("non-empty")
                    }
                };
                if scenario.coded {
                    execute_removal(&db, target, channel)
                } else {
                    execute_removal_uncoded(&db, target, channel)
                }
            }
        };
        match step {
            Ok((next, load, op_log)) => {
                operations.push(record(&next, &load, &content));
                loads.push(load);
                for entry in op_log.entries() {
                    log.push(*entry);
                }
                db = next;
            }
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }

    let cumulative_bytes = loads.iter().map(|l| l.bytes_transmitted).sum();
    let cumulative: Rational = loads.iter().map(|l| l.measured).sum();
    let pass = error.is_none() && operations.iter().all(OperationRecord::passed);
    Ok(ScenarioOutcome {
        report: Report {
            operations,
            cumulative_bytes,
            cumulative_load_num: *cumulative.numer(),
            cumulative_load_den: *cumulative.denom(),
            pass,
            error,
        },
        database: db,
        log,
        loads,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub node: u64,
    pub bytes_transmitted: u64,
    pub load_num: u64,
    pub load_den: u64,
    pub balanced: bool,
    pub invariant: bool,
}

/// Removal load for every choice of removed node on the initial database.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepReport {
    pub nodes: usize,
    pub replication: usize,
    pub coded: bool,
    pub removals: Vec<SweepEntry>,
    pub max_load_num: u64,
    pub max_load_den: u64,
    pub theory_num: u64,
    pub theory_den: u64,
    pub pass: bool,
}

pub fn sweep_removals(scenario: &Scenario, transport: TransportKind) -> Result<SweepReport> {
    scenario.validate()?;
    let db = scenario.initial_database()?;
    let ids: Vec<NodeId> = db.node_ids().into_iter().collect();
    let runs = par::try_map(&ids, |node| {
        let mut channel = transport.open();
        if scenario.coded {
            execute_removal(&db, *node, channel.as_mut())
        } else {
            execute_removal_uncoded(&db, *node, channel.as_mut())
        }
    })?;
    let theory =
        if scenario.coded { crate::verify::removal_theory(scenario.replication) } else { Rational::from_integer(1) };
    let mut max = Rational::from_integer(0);
    let mut pass = true;
    let removals = runs
        .iter()
        .map(|(after, load, _)| {
            max = max.max(load.measured);
            let entry = SweepEntry {
                node: load.operation.node().0,
                bytes_transmitted: load.bytes_transmitted,
                load_num: *load.measured.numer(),
                load_den: *load.measured.denom(),
                balanced: verify_balanced(after).passed(),
                invariant: check_structural_invariance(after).passed(),
            };
            pass &= entry.balanced && entry.invariant && load.measured == theory;
            entry
        })
        .collect();
    Ok(SweepReport {
        nodes: scenario.nodes,
        replication: scenario.replication,
        coded: scenario.coded,
        removals,
        max_load_num: *max.numer(),
        max_load_den: *max.denom(),
        theory_num: *theory.numer(),
        theory_den: *theory.denom(),
        pass: pass && max == theory,
    })
}
