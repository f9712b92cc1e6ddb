//! Op-stream building blocks beyond the simulator's plain cyclic loop.

use memsim_core::{Completion, MemOp, OpSource, Step};

/// Cycles over a fixed op list, resting `gap_cycles` after every
/// `burst_ops` issued ops. A zero gap degenerates to a plain loop.
pub struct PulsedOps {
    ops: Vec<MemOp>,
    at: usize,
    burst_ops: u64,
    gap_cycles: u64,
    in_burst: u64,
}

impl PulsedOps {
    pub fn new(ops: Vec<MemOp>, burst_ops: u64, gap_cycles: u64) -> Self {
        assert!(!ops.is_empty() && burst_ops > 0);
        PulsedOps { ops, at: 0, burst_ops, gap_cycles, in_burst: 0 }
    }
}

impl OpSource for PulsedOps {
    fn next(&mut self, _last: Option<&Completion>) -> Step {
        if self.gap_cycles > 0 && self.in_burst == self.burst_ops {
            self.in_burst = 0;
            return Step::Idle(self.gap_cycles);
        }
        self.in_burst += 1;
        let op = self.ops[self.at];
        self.at = (self.at + 1) % self.ops.len();
        Step::Op(op)
    }
}

/// Endless sequential cached reads over `lines` consecutive lines — the
/// row-hit-friendly firehose, kept lazy because flooding buffers reach tens
/// of millions of lines.
pub struct SeqReadLoop {
    base: u64,
    line_size: u64,
    lines: u64,
    at: u64,
}

impl SeqReadLoop {
    pub fn new(base: u64, line_size: u64, lines: u64) -> Self {
        assert!(lines > 0);
        SeqReadLoop { base, line_size, lines, at: 0 }
    }
}

impl OpSource for SeqReadLoop {
    fn next(&mut self, _last: Option<&Completion>) -> Step {
        let op = MemOp::read(self.base + self.at * self.line_size);
        self.at = (self.at + 1) % self.lines;
        Step::Op(op)
    }
}

/// Endless reads walking each block line by line, then the next block;
/// blocks share their upper address bits, so each is channel-pure and
/// row-friendly.
pub struct BlockReadLoop {
    blocks: Vec<u64>,
    line_size: u64,
    lines_per_block: u64,
    cached: bool,
    block: usize,
    line: u64,
}

impl BlockReadLoop {
    /// Uncached variant: every read goes to DRAM, for channel targeting.
    pub fn new(blocks: Vec<u64>, line_size: u64, lines_per_block: u64) -> Self {
        Self::build(blocks, line_size, lines_per_block, false)
    }

    /// Cached variant: ordinary streaming over a striped layout.
    pub fn cached(blocks: Vec<u64>, line_size: u64, lines_per_block: u64) -> Self {
        Self::build(blocks, line_size, lines_per_block, true)
    }

    fn build(blocks: Vec<u64>, line_size: u64, lines_per_block: u64, cached: bool) -> Self {
        assert!(!blocks.is_empty() && lines_per_block > 0);
        BlockReadLoop { blocks, line_size, lines_per_block, cached, block: 0, line: 0 }
    }
}

impl OpSource for BlockReadLoop {
    fn next(&mut self, _last: Option<&Completion>) -> Step {
        let addr = self.blocks[self.block] + self.line * self.line_size;
        let op = if self.cached { MemOp::read(addr) } else { MemOp::uncached_read(addr) };
        self.line += 1;
        if self.line == self.lines_per_block {
            self.line = 0;
            self.block = (self.block + 1) % self.blocks.len();
        }
        Step::Op(op)
    }
}

/// Defers to the inner stream after one initial idle period; how scenario
/// actors start mid-run on a simulator whose sources are bound at time zero.
pub struct DelayedSource {
    delay: u64,
    inner: Box<dyn OpSource>,
    started: bool,
}

impl DelayedSource {
    pub fn new(delay: u64, inner: Box<dyn OpSource>) -> Self {
        DelayedSource { delay, inner, started: false }
    }
}

impl OpSource for DelayedSource {
    fn next(&mut self, last: Option<&Completion>) -> Step {
        if !self.started {
            self.started = true;
            if self.delay > 0 {
                return Step::Idle(self.delay);
            }
        }
        self.inner.next(last)
    }
}

/// Issues nothing, forever.
pub struct IdleSource;

impl OpSource for IdleSource {
    fn next(&mut self, _last: Option<&Completion>) -> Step {
        Step::Idle(100_000)
    }
}
