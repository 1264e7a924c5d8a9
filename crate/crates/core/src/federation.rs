//! Federated averaging over slice-local models.
//!
//! The orchestrator only ever sees [`Upload`]s: a parameter vector and the
//! size of the local dataset behind it. Demands, experiences and device
//! state stay with the slice.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::marl::{ActorCritic, MarlError};
use crate::nn::{NnError, ParamVector};
use crate::twin::{TwinError, TwinModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FederationError {
    #[error("no participants")]
    NoParticipants,
    #[error("participant {0} has a parameter layout different from participant 0")]
    LayoutMismatch(usize),
    #[error("participant {0} reported an empty dataset")]
    EmptyDataset(usize),
    #[error("{models} models but {sizes} dataset sizes")]
    CountMismatch { models: usize, sizes: usize },
    #[error("aggregation period must be at least 1")]
    ZeroPeriod,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Marl(#[from] MarlError),
    #[error(transparent)]
    Twin(#[from] TwinError),
}

/// What a slice sends to the orchestrator.
#[derive(Debug, Clone, PartialEq)]
pub struct Upload {
    pub params: ParamVector,
    pub dataset_size: usize,
}

/// `sum_m (|D_m| / |D|) theta_m`.
pub fn aggregate(locals: &[ParamVector], sizes: &[usize]) -> Result<ParamVector, FederationError> {
    if locals.is_empty() {
        return Err(FederationError::NoParticipants);
    }
    if locals.len() != sizes.len() {
        return Err(FederationError::CountMismatch {
            models: locals.len(),
            sizes: sizes.len(),
        });
    }
    if let Some(m) = sizes.iter().position(|&s| s == 0) {
        return Err(FederationError::EmptyDataset(m));
    }
    if let Some(m) = locals.iter().position(|p| !p.same_layout(&locals[0])) {
        return Err(FederationError::LayoutMismatch(m));
    }
    let total: usize = sizes.iter().sum();
    let mut out = locals[0].zeros_like();
    for (p, &s) in locals.iter().zip(sizes) {
        out.add_scaled(p, s as f64 / total as f64)?;
    }
    Ok(out)
}

/// `F = sum_m (|D_m| / |D|) F_m`.
pub fn global_loss(losses: &[f64], sizes: &[usize]) -> Result<f64, FederationError> {
    if losses.is_empty() {
        return Err(FederationError::NoParticipants);
    }
    if losses.len() != sizes.len() {
        return Err(FederationError::CountMismatch {
            models: losses.len(),
            sizes: sizes.len(),
        });
    }
    if let Some(m) = sizes.iter().position(|&s| s == 0) {
        return Err(FederationError::EmptyDataset(m));
    }
    let total: usize = sizes.iter().sum();
    Ok(losses.iter().zip(sizes).map(|(l, &s)| l * s as f64 / total as f64).sum())
}

/// Whether step `t` closes an aggregation period of `tau` steps.
pub fn should_aggregate(t: usize, tau: usize) -> Result<bool, FederationError> {
    if tau == 0 {
        return Err(FederationError::ZeroPeriod);
    }
    Ok(t % tau == 0)
}

/// Scalars and messages exchanged in one aggregation round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundComm {
    pub uploaded: u64,
    pub downloaded: u64,
    pub messages: u64,
}

/// Running communication totals. Federation traffic and per-step state
/// reports to a central monitor are kept apart.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    pub rounds: Vec<RoundComm>,
    pub uploaded: u64,
    pub downloaded: u64,
    pub messages: u64,
    pub report_scalars: u64,
    pub report_messages: u64,
}

/// Totals from a [`CommLedger`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommCost {
    pub federation_scalars: u64,
    pub federation_messages: u64,
    pub report_scalars: u64,
    pub report_messages: u64,
}

impl CommCost {
    pub fn total_scalars(&self) -> u64 {
        self.federation_scalars + self.report_scalars
    }

    pub fn total_messages(&self) -> u64 {
        self.federation_messages + self.report_messages
    }
}

impl CommLedger {
    fn current(&mut self) -> &mut RoundComm {
        if self.rounds.is_empty() {
            self.rounds.push(RoundComm::default());
        }
        self.rounds.last_mut().expect("non-empty")
    }

    pub fn open_round(&mut self) {
        self.rounds.push(RoundComm::default());
    }

    pub fn charge_upload(&mut self, scalars: u64) {
        let r = self.current();
        r.uploaded += scalars;
        r.messages += 1;
        self.uploaded += scalars;
        self.messages += 1;
    }

    pub fn charge_download(&mut self, scalars: u64) {
        let r = self.current();
        r.downloaded += scalars;
        r.messages += 1;
        self.downloaded += scalars;
        self.messages += 1;
    }

    pub fn charge_report(&mut self, scalars: u64, messages: u64) {
        self.report_scalars += scalars;
        self.report_messages += messages;
    }

    pub fn cost(&self) -> CommCost {
        CommCost {
            federation_scalars: self.uploaded + self.downloaded,
            federation_messages: self.messages,
            report_scalars: self.report_scalars,
            report_messages: self.report_messages,
        }
    }
}

pub fn comm_cost(ledger: &CommLedger) -> CommCost {
    ledger.cost()
}

/// A model that can take part in federated averaging.
pub trait Federated {
    fn local_params(&self) -> ParamVector;
    /// Installs the global model.
    fn receive(&mut self, global: &ParamVector) -> Result<(), FederationError>;
}

impl Federated for ActorCritic {
    fn local_params(&self) -> ParamVector {
        self.main_params()
    }

    /// Mains take the global model; targets move one soft-update step
    /// toward it instead of being reset.
    fn receive(&mut self, global: &ParamVector) -> Result<(), FederationError> {
        self.set_main_params(global)?;
        self.soft_update()?;
        Ok(())
    }
}

impl Federated for TwinModel {
    fn local_params(&self) -> ParamVector {
        self.params()
    }

    fn receive(&mut self, global: &ParamVector) -> Result<(), FederationError> {
        self.set_params(global)?;
        Ok(())
    }
}

/// The slice orchestrator: averages uploads and broadcasts the result.
#[derive(Debug, Clone, Default)]
pub struct Orchestrator {
    global: Option<ParamVector>,
    sizes: Vec<usize>,
    round: usize,
    ledger: CommLedger,
}

impl Orchestrator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn global(&self) -> Option<&ParamVector> {
        self.global.as_ref()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut CommLedger {
        &mut self.ledger
    }

    /// Collects one round of uploads and replaces the global model with
    /// their weighted average.
    pub fn aggregate(&mut self, uploads: Vec<Upload>) -> Result<&ParamVector, FederationError> {
        let sizes: Vec<usize> = uploads.iter().map(|u| u.dataset_size).collect();
        let params: Vec<ParamVector> = uploads.into_iter().map(|u| u.params).collect();
        let global = aggregate(&params, &sizes)?;
        self.ledger.open_round();
        for p in &params {
            self.ledger.charge_upload(p.len() as u64);
        }
        self.round += 1;
        self.sizes = sizes;
        Ok(self.global.insert(global))
    }

    /// Sends the global model to every participant.
    pub fn broadcast<M: Federated + ?Sized>(&mut self, participants: &mut [&mut M]) -> Result<(), FederationError> {
        let global = self.global.as_ref().ok_or(FederationError::NoParticipants)?;
        for p in participants.iter_mut() {
            p.receive(global)?;
            self.ledger.charge_download(global.len() as u64);
        }
        Ok(())
    }

    /// Upload, aggregate and broadcast in one call.
    pub fn sync<M: Federated + ?Sized>(
        &mut self,
        participants: &mut [&mut M],
        sizes: &[usize],
    ) -> Result<(), FederationError> {
        if participants.len() != sizes.len() {
            return Err(FederationError::CountMismatch {
                models: participants.len(),
                sizes: sizes.len(),
            });
        }
        let uploads = participants
            .iter()
            .zip(sizes)
            .map(|(p, &s)| Upload {
                params: p.local_params(),
                dataset_size: s,
            })
            .collect();
        self.aggregate(uploads)?;
        self.broadcast(participants)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marl::AgentConfig;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_flat(v.to_vec())
    }

    #[test]
    fn aggregation_examples() {
        assert_eq!(aggregate(&[pv(&[1.0]), pv(&[3.0])], &[5, 5]).unwrap(), pv(&[2.0]));
        assert_eq!(aggregate(&[pv(&[0.0]), pv(&[4.0])], &[1, 3]).unwrap(), pv(&[3.0]));
        assert_eq!(aggregate(&[pv(&[1.5, -2.0])], &[7]).unwrap(), pv(&[1.5, -2.0]));
        assert_eq!(
            aggregate(&[pv(&[1.0]), pv(&[1.0, 2.0])], &[1, 1]),
            Err(FederationError::LayoutMismatch(1))
        );
        assert_eq!(aggregate(&[pv(&[1.0])], &[0]), Err(FederationError::EmptyDataset(0)));
        assert_eq!(aggregate(&[], &[]), Err(FederationError::NoParticipants));
    }

    #[test]
    fn aggregation_schedule() {
        assert!(should_aggregate(7, 1).unwrap());
        assert!(should_aggregate(50, 50).unwrap());
        assert!(!should_aggregate(49, 50).unwrap());
        assert!(should_aggregate(3, 0).is_err());
    }

    #[test]
    fn global_loss_examples() {
        assert_eq!(global_loss(&[1.0, 3.0], &[4, 4]).unwrap(), 2.0);
        assert_eq!(global_loss(&[0.7], &[9]).unwrap(), 0.7);
    }

    #[test]
    fn comm_cost_examples() {
        let mut orch = Orchestrator::new();
        assert_eq!(orch.ledger().cost().total_scalars(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = AgentConfig {
            hidden: vec![4],
            ..AgentConfig::default()
        };
        let mut agents: Vec<ActorCritic> = (0..6).map(|_| ActorCritic::new(3, &cfg, &mut rng).unwrap()).collect();
        let theta = agents[0].main_params().len() as u64;
        let mut refs: Vec<&mut ActorCritic> = agents.iter_mut().collect();
        orch.sync(&mut refs, &[1; 6]).unwrap();
        let cost = orch.ledger().cost();
        assert_eq!(cost.federation_scalars, 2 * 6 * theta);
        assert_eq!(cost.federation_messages, 12);
        assert_eq!(orch.ledger().rounds.len(), 1);
    }

    #[test]
    fn broadcast_makes_mains_identical_and_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = AgentConfig {
            hidden: vec![4],
            ..AgentConfig::default()
        };
        let mut agents: Vec<ActorCritic> = (0..3).map(|_| ActorCritic::new(3, &cfg, &mut rng).unwrap()).collect();
        let mut orch = Orchestrator::new();
        let mut refs: Vec<&mut ActorCritic> = agents.iter_mut().collect();
        orch.sync(&mut refs, &[1, 2, 3]).unwrap();
        let first = agents[0].main_params();
        assert!(agents.iter().all(|a| a.main_params() == first));
        let mut refs: Vec<&mut ActorCritic> = agents.iter_mut().collect();
        orch.broadcast(&mut refs).unwrap();
        assert!(agents.iter().all(|a| a.main_params() == first));
        assert_eq!(orch.ledger().downloaded, 6 * first.len() as u64);
    }

    proptest! {
        #[test]
        fn aggregate_is_a_convex_combination(
            rows in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 4), 1..6),
            seed in 0u64..100,
        ) {
            let sizes: Vec<usize> = (0..rows.len()).map(|i| 1 + (seed as usize * 7 + i * 3) % 11).collect();
            let locals: Vec<ParamVector> = rows.iter().map(|r| pv(r)).collect();
            let out = aggregate(&locals, &sizes).unwrap();
            for k in 0..4 {
                let lo = rows.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
                let x = out.values()[k];
                prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
            }
            let losses: Vec<f64> = rows.iter().map(|r| r[0]).collect();
            let f = global_loss(&losses, &sizes).unwrap();
            prop_assert!(f >= losses.iter().cloned().fold(f64::INFINITY, f64::min) - 1e-12);
            prop_assert!(f <= losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1e-12);
        }
    }
}
