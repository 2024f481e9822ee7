//! DMA engine timing.
//!
//! Every DMA pays the base latency `T_b` from its issue cycle regardless of
//! what else is in flight. After that it joins the FIFO of its link and
//! moves `ceil(len / bandwidth)` cycles of data once the link is free.
//! Links are independent of each other.

use serde::{Deserialize, Serialize};

use super::SimConfig;
use crate::isa::Link;

/// Cycle milestones of one DMA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DmaTimes {
    pub issue: u64,
    pub base_done: u64,
    pub transfer_start: u64,
    pub complete: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct DmaEngine {
    link_free: [u64; 4],
}

impl DmaEngine {
    /// Schedules a DMA issued at `issue`. Calls must come in issue order,
    /// which is also base-done order since `T_b` is constant.
    pub(crate) fn schedule(&mut self, config: &SimConfig, issue: u64, link: Link, length: u64) -> DmaTimes {
        let base_done = issue + config.t_b;
        let slot = &mut self.link_free[link.code() as usize];
        let transfer_start = base_done.max(*slot);
        let complete = transfer_start + length.div_ceil(config.link_bandwidth.of(link));
        *slot = complete;
        DmaTimes {
            issue,
            base_done,
            transfer_start,
            complete,
        }
    }
}

/// One DMA request as seen in a slot history: issue cycle, link and size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DmaRequest {
    pub issue: u64,
    pub link: Link,
    pub length: u64,
}

/// Timelines for a sequence of requests, given in issue order.
pub fn dma_timeline(config: &SimConfig, requests: &[DmaRequest]) -> Vec<DmaTimes> {
    let mut engine = DmaEngine::default();
    requests
        .iter()
        .map(|r| engine.schedule(config, r.issue, r.link, r.length))
        .collect()
}
