//! Flat state vector layout: plant states, then every estimate slot's `x_hat`,
//! then every slot's `g_hat`.
//!
//! Slots are grouped by target and ordered like the target's neighborhood
//! members, so the stack of one target is a contiguous range of either block.

use std::ops::Range;

use crate::graph::Topology;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotInfo {
    pub estimator: usize,
    pub target: usize,
    /// Row of the estimator in the target's disagreement matrix.
    pub member_index: usize,
    /// Offset inside the estimate block.
    pub offset: usize,
    pub dim: usize,
}

impl SlotInfo {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.dim
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotLayout {
    agents: usize,
    dims: Vec<usize>,
    plant_offsets: Vec<usize>,
    plant_len: usize,
    slots: Vec<SlotInfo>,
    target_slots: Vec<Range<usize>>,
    block_len: usize,
    lookup: Vec<Option<usize>>,
}

impl SlotLayout {
    pub fn new(topology: &Topology, dims: &[usize]) -> Self {
        let agents = dims.len();
        assert_eq!(agents, topology.graph.node_count());
        let mut plant_offsets = Vec::with_capacity(agents);
        let mut plant_len = 0;
        for &d in dims {
            plant_offsets.push(plant_len);
            plant_len += d;
        }
        let mut slots = Vec::new();
        let mut target_slots = Vec::with_capacity(agents);
        let mut lookup = vec![None; agents * agents];
        let mut offset = 0;
        for (target, nbhd) in topology.neighborhoods.iter().enumerate() {
            let first = slots.len();
            for (member_index, &estimator) in nbhd.members.iter().enumerate() {
                lookup[estimator * agents + target] = Some(slots.len());
                slots.push(SlotInfo {
                    estimator,
                    target,
                    member_index,
                    offset,
                    dim: dims[target],
                });
                offset += dims[target];
            }
            target_slots.push(first..slots.len());
        }
        SlotLayout {
            agents,
            dims: dims.to_vec(),
            plant_offsets,
            plant_len,
            slots,
            target_slots,
            block_len: offset,
            lookup,
        }
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn dim(&self, agent: usize) -> usize {
        self.dims[agent]
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn plant_len(&self) -> usize {
        self.plant_len
    }

    pub fn plant_range(&self, agent: usize) -> Range<usize> {
        self.plant_offsets[agent]..self.plant_offsets[agent] + self.dims[agent]
    }

    pub fn slots(&self) -> &[SlotInfo] {
        &self.slots
    }

    /// Slot indices whose target is `target`, in member order.
    pub fn target_slots(&self, target: usize) -> Range<usize> {
        self.target_slots[target].clone()
    }

    /// Range of the estimate block holding the whole stack of `target`.
    pub fn target_block(&self, target: usize) -> Range<usize> {
        let r = &self.target_slots[target];
        if r.is_empty() {
            return 0..0;
        }
        self.slots[r.start].offset..self.slots[r.end - 1].range().end
    }

    pub fn slot_of(&self, estimator: usize, target: usize) -> Option<usize> {
        self.lookup[estimator * self.agents + target]
    }

    /// Length of one estimate block (`x_hat` or `g_hat`).
    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn state_len(&self) -> usize {
        self.plant_len + 2 * self.block_len
    }

    pub fn x_hat_offset(&self) -> usize {
        self.plant_len
    }

    pub fn g_hat_offset(&self) -> usize {
        self.plant_len + self.block_len
    }

    /// Human-readable location of entry `index` of the flat state, 1-based.
    pub fn describe(&self, index: usize) -> String {
        if index < self.plant_len {
            let agent = (0..self.agents)
                .find(|&a| self.plant_range(a).contains(&index))
                .unwrap_or(0);
            return format!(
                "agent {} state component {}",
                agent + 1,
                index - self.plant_offsets[agent] + 1
            );
        }
        let (block, name) = if index < self.g_hat_offset() {
            (index - self.x_hat_offset(), "x_hat")
        } else {
            (index - self.g_hat_offset(), "g_hat")
        };
        match self.slots.iter().find(|s| s.range().contains(&block)) {
            Some(s) => format!(
                "agent {} estimate of agent {} ({} component {})",
                s.estimator + 1,
                s.target + 1,
                name,
                block - s.offset + 1
            ),
            None => format!("state entry {index}"),
        }
    }
}
