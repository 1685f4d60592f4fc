//! Batches with an exact, equal number of records from every group
//! (modality, or modality × specialty).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::manifest::SampleRecord;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceAxis {
    #[default]
    Modality,
    ModalitySpecialty,
}

#[derive(Clone, Debug)]
pub struct BalancedSampler {
    /// Record indices per group, groups in sorted key order.
    groups: Vec<Vec<usize>>,
    per_group: usize,
    seed: u64,
}

impl BalancedSampler {
    pub fn new(records: &[SampleRecord], batch_size: usize, axis: BalanceAxis, seed: u64) -> Result<Self> {
        let mut by_key: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            let key = match axis {
                BalanceAxis::Modality => r.modality.to_string(),
                BalanceAxis::ModalitySpecialty => format!("{}/{}", r.modality, r.specialty),
            };
            by_key.entry(key).or_default().push(i);
        }
        Self::from_groups(by_key.into_values().collect(), batch_size, seed)
    }

    pub fn from_groups(groups: Vec<Vec<usize>>, batch_size: usize, seed: u64) -> Result<Self> {
        let m = groups.len();
        if m == 0 {
            return Err(Error::Data("balanced sampler needs at least one record".into()));
        }
        if batch_size == 0 || batch_size % m != 0 {
            return Err(Error::Config(format!(
                "batch_size {batch_size} is not divisible by the {m} active groups"
            )));
        }
        let per_group = batch_size / m;
        if let Some((g, members)) = groups.iter().enumerate().find(|(_, g)| g.len() < per_group) {
            return Err(Error::Data(format!(
                "group {g} has {} records, fewer than the {per_group} needed per batch",
                members.len()
            )));
        }
        Ok(Self { groups, per_group, seed })
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn per_group(&self) -> usize {
        self.per_group
    }

    pub fn batch_size(&self) -> usize {
        self.per_group * self.groups.len()
    }

    /// Enough batches to visit every record of the largest group once.
    pub fn batches_per_epoch(&self) -> usize {
        let largest = self.groups.iter().map(Vec::len).max().unwrap_or(0);
        largest.div_ceil(self.per_group)
    }

    /// Batches of record indices for one epoch. Each group is drawn without
    /// replacement from a fresh permutation, re-shuffling when exhausted.
    pub fn epoch(&self, epoch: u64) -> Vec<Vec<usize>> {
        let n_batches = self.batches_per_epoch();
        let mut streams: Vec<Vec<usize>> = Vec::with_capacity(self.groups.len());
        for (g, members) in self.groups.iter().enumerate() {
            let need = n_batches * self.per_group;
            let mut s = Vec::with_capacity(need + members.len());
            let mut cycle = 0u64;
            while s.len() < need {
                let mut perm = members.clone();
                let counter = (epoch << 32) ^ ((g as u64) << 16) ^ cycle;
                perm.shuffle(&mut rng::stream(self.seed, "sampler", counter));
                s.extend(perm);
                cycle += 1;
            }
            streams.push(s);
        }
        (0..n_batches)
            .map(|b| {
                let range = b * self.per_group..(b + 1) * self.per_group;
                streams.iter().flat_map(|s| s[range.clone()].iter().copied()).collect()
            })
            .collect()
    }
}
