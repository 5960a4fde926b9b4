use ndarray::{Array2, Axis};
use rand::seq::IndexedRandom;
use rand::Rng;

use crate::data::{Dataset, ShardAssignment};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryPoint {
    pub id: usize,
    pub owner: usize,
    pub class: usize,
    /// Index into the training set.
    pub source: usize,
}

/// Memory inputs shared between clients and server. Ids are assigned in
/// ascending (owner, class) order and index the rows of `inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct MemorySet {
    pub points: Vec<MemoryPoint>,
    pub inputs: Array2<f64>,
    /// `N_{k,c}`: training points of class `c` at client `k`.
    pub class_counts: Vec<Vec<usize>>,
    /// `M_{k,c}`: memory points of class `c` at client `k`.
    pub memory_counts: Vec<Vec<usize>>,
}

impl MemorySet {
    /// Picks `per_class` random points of every class present in each shard.
    pub fn select<R: Rng + ?Sized>(
        dataset: &Dataset,
        assignment: &ShardAssignment,
        per_class: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let c_count = dataset.class_count;
        let mut points = Vec::new();
        let mut memory_counts = vec![vec![0; c_count]; assignment.client_count()];
        for (k, shard) in assignment.shards.iter().enumerate() {
            for c in 0..c_count {
                let of_class: Vec<usize> =
                    shard.iter().copied().filter(|&i| dataset.train_labels[i] == c).collect();
                let mut chosen: Vec<usize> =
                    of_class.choose_multiple(rng, per_class.min(of_class.len())).copied().collect();
                chosen.sort_unstable();
                for source in chosen {
                    points.push(MemoryPoint {
                        id: points.len(),
                        owner: k,
                        class: c,
                        source,
                    });
                    memory_counts[k][c] += 1;
                }
            }
        }
        let sources: Vec<usize> = points.iter().map(|p| p.source).collect();
        Ok(MemorySet {
            inputs: dataset.train_inputs.select(Axis(0), &sources),
            points,
            class_counts: assignment.per_class_counts.clone(),
            memory_counts,
        })
    }

    /// A memory set with no points.
    pub fn empty(input_dim: usize, class_counts: Vec<Vec<usize>>) -> Self {
        let c = class_counts.first().map_or(0, Vec::len);
        MemorySet {
            points: Vec::new(),
            inputs: Array2::zeros((0, input_dim)),
            memory_counts: vec![vec![0; c]; class_counts.len()],
            class_counts,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Ids owned by client `k`, ascending.
    pub fn owned_by(&self, k: usize) -> Vec<usize> {
        self.points.iter().filter(|p| p.owner == k).map(|p| p.id).collect()
    }

    pub fn inputs_of(&self, ids: &[usize]) -> Array2<f64> {
        self.inputs.select(Axis(0), ids)
    }

    /// `tau_i = tau_f * N_{k,c} / M_{k,c}` for the given ids.
    pub fn tau(&self, ids: &[usize], tau_f: f64) -> Result<Vec<f64>> {
        ids.iter()
            .map(|&i| {
                let p = self
                    .points
                    .get(i)
                    .ok_or_else(|| Error::strategy(format!("unknown memory id {i}")))?;
                let m = self.memory_counts[p.owner][p.class];
                Ok(tau_f * self.class_counts[p.owner][p.class] as f64 / m as f64)
            })
            .collect()
    }
}
