//! Failure catalogue F and the paired controller bank C.

use serde::{Deserialize, Serialize};

use crate::controller::ControllerSpec;
use crate::error::{Error, Result};
use crate::ids::{ControllerId, FailureId};
use crate::sim::FailureModel;

const BUILTIN: &str = include_str!("../assets/catalog.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub failures: Vec<FailureModel>,
    pub controllers: Vec<ControllerSpec>,
}

impl Catalog {
    /// The shipped five-failure catalogue plus the nominal class f0/c0.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN).expect("shipped catalogue is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cat: Catalog = serde_json::from_str(text).map_err(|e| Error::config(format!("catalog: {e}")))?;
        cat.validate()?;
        Ok(cat)
    }

    pub fn validate(&self) -> Result<()> {
        let mut fids: Vec<FailureId> = self.failures.iter().map(|f| f.id).collect();
        let mut cids: Vec<FailureId> = self.controllers.iter().map(|c| c.id.paired_failure()).collect();
        fids.sort_unstable();
        cids.sort_unstable();
        if fids.is_empty() || fids.windows(2).any(|w| w[0] == w[1]) || fids != cids {
            return Err(Error::config("controller ids must pair one-to-one with failure ids"));
        }
        for f in &self.failures {
            f.validate()?;
        }
        for c in &self.controllers {
            c.validate()?;
        }
        Ok(())
    }

    pub fn failure_ids(&self) -> Vec<FailureId> {
        let mut ids: Vec<FailureId> = self.failures.iter().map(|f| f.id).collect();
        ids.sort_unstable();
        ids
    }

    pub fn controller_ids(&self) -> Vec<ControllerId> {
        let mut ids: Vec<ControllerId> = self.controllers.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids
    }

    /// Corrective controllers, i.e. every controller except the nominal c0.
    pub fn corrective_ids(&self) -> Vec<ControllerId> {
        self.controller_ids().into_iter().filter(|c| *c != ControllerId::NOMINAL).collect()
    }

    pub fn failure(&self, id: FailureId) -> Result<&FailureModel> {
        self.failures
            .iter()
            .find(|f| f.id == id)
            .ok_or_else(|| Error::Validation(format!("unknown failure {id}")))
    }

    pub fn controller(&self, id: ControllerId) -> Result<&ControllerSpec> {
        self.controllers
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::Validation(format!("unknown controller {id}")))
    }

    /// Same bank with every controller's horizon set to `steps`.
    pub fn with_horizon(mut self, steps: usize) -> Self {
        for c in &mut self.controllers {
            c.horizon_steps = steps;
        }
        self
    }
}
