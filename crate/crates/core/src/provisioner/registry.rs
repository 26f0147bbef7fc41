use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::VmId;

/// A due time in simulated seconds, totally ordered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Due(pub f64);

impl Eq for Due {}

impl PartialOrd for Due {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Due {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kind {
    Download,
    ModelLoad,
    LoadComplete,
}

/// Time-keyed pending actions. Downloads, model loads and load completions
/// run at their due time; expiries are checked on provisioning ticks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActionRegistry {
    pub container_download: BTreeMap<Due, Vec<VmId>>,
    pub model_load: BTreeMap<Due, Vec<VmId>>,
    pub vm_expire: BTreeMap<Due, Vec<VmId>>,
    /// Model loads in progress (deploy or recall), keyed by completion time.
    pub load_complete: BTreeMap<Due, Vec<VmId>>,
}

impl ActionRegistry {
    pub(crate) fn next_lifecycle_due(&self) -> Option<Due> {
        [&self.container_download, &self.model_load, &self.load_complete]
            .into_iter()
            .filter_map(|m| m.keys().next().copied())
            .min()
    }

    /// Pop the earliest lifecycle entry due by `now`. Equal due times run in
    /// lifecycle order so a zero-duration step never overtakes its predecessor.
    pub(crate) fn pop_lifecycle_due(&mut self, now: f64) -> Option<(Kind, Due, Vec<VmId>)> {
        let next = self.next_lifecycle_due()?;
        if next.0 > now {
            return None;
        }
        for (kind, map) in [
            (Kind::Download, &mut self.container_download),
            (Kind::ModelLoad, &mut self.model_load),
            (Kind::LoadComplete, &mut self.load_complete),
        ] {
            if map.keys().next() == Some(&next) {
                let ids = map.remove(&next).unwrap_or_default();
                return Some((kind, next, ids));
            }
        }
        None
    }

    pub(crate) fn pop_expired(&mut self, now: f64) -> Vec<(Due, Vec<VmId>)> {
        let later = self.vm_expire.split_off(&Due(now.next_up()));
        std::mem::replace(&mut self.vm_expire, later).into_iter().collect()
    }

    /// Drop every entry for a terminated VM.
    pub(crate) fn forget(&mut self, id: VmId) {
        for map in [
            &mut self.container_download,
            &mut self.model_load,
            &mut self.vm_expire,
            &mut self.load_complete,
        ] {
            map.retain(|_, ids| {
                ids.retain(|v| *v != id);
                !ids.is_empty()
            });
        }
    }

    pub fn contains(&self, id: VmId) -> bool {
        [&self.container_download, &self.model_load, &self.vm_expire, &self.load_complete]
            .iter()
            .any(|m| m.values().any(|ids| ids.contains(&id)))
    }
}
