//! JSON state snapshots of a database, payloads included (base64).

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{NodeId, OrderedIndex};
use crate::model::{ByteRange, ClusterDatabase, FileSpec, NodeStore, Subfile};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub replication: usize,
    pub file: FileSpec,
    pub generation: u64,
    pub next_id: u64,
    pub nodes: Vec<NodeSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub id: NodeId,
    pub subfiles: Vec<SubfileSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubfileSnapshot {
    pub index: OrderedIndex,
    pub provenance: Vec<ByteRange>,
    pub payload: String,
}

impl Snapshot {
    pub fn capture(db: &ClusterDatabase) -> Self {
        Snapshot {
            replication: db.replication(),
            file: *db.file(),
            generation: db.generation(),
            next_id: db.next_id().0,
            nodes: db
                .nodes()
                .iter()
                .map(|(id, store)| NodeSnapshot {
                    id: *id,
                    subfiles: store
                        .values()
                        .map(|s| SubfileSnapshot {
                            index: s.index().clone(),
                            provenance: s.provenance().to_vec(),
                            payload: STANDARD.encode(s.payload()),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn restore(self) -> Result<ClusterDatabase> {
        let mut nodes = std::collections::BTreeMap::new();
        for node in self.nodes {
            let mut store = NodeStore::new();
            for s in node.subfiles {
                let payload = STANDARD
                    .decode(&s.payload)
                    .map_err(|e| Error::Parameter(format!("node {} subfile {}: {e}", node.id, s.index)))?;
                let subfile = Subfile::new(s.index.clone(), payload.into(), s.provenance)?;
                if store.insert(s.index.clone(), subfile).is_some() {
                    return Err(Error::Parameter(format!("node {} lists {} twice", node.id, s.index)));
                }
            }
            if nodes.insert(node.id, store).is_some() {
                return Err(Error::Parameter(format!("node {} listed twice", node.id)));
            }
        }
        if let Some(max) = nodes.keys().next_back() {
            if max.0 >= self.next_id {
                return Err(Error::Parameter(format!("next id {} is not above node {max}", self.next_id)));
            }
        }
        Ok(ClusterDatabase::from_parts(self.replication, self.file, self.generation, self.next_id, nodes))
    }
}

pub fn save(db: &ClusterDatabase, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(&Snapshot::capture(db))?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ClusterDatabase> {
    let snapshot: Snapshot = serde_json::from_slice(&fs::read(path)?)?;
    snapshot.restore()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_database;

    #[test]
    fn round_trip() {
        let db = init_database(4, 2, FileSpec::new(60, 3).unwrap()).unwrap();
        let json = serde_json::to_string(&Snapshot::capture(&db)).unwrap();
        let back: Snapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(back.restore().unwrap(), db);
    }

    #[test]
    fn rejects_stale_next_id() {
        let db = init_database(4, 2, FileSpec::new(60, 3).unwrap()).unwrap();
        let mut snap = Snapshot::capture(&db);
        snap.next_id = 4;
        assert!(snap.restore().is_err());
    }
}
