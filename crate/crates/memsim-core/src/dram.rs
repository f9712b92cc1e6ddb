//! DRAM banks, row buffers, and the bank/channel schedulers.
//!
//! Each bank serves one request per `bank_service` cycles and remembers its
//! most recently opened row; each channel moves one request per
//! `channel_service` cycles. Banks pick requests row-hit-first, then oldest
//! (First-Ready First-Come-First-Serve); channels are plain FCFS, realized as
//! a busy-until register because requests reach them in dispatch order.

use crate::op::MemOp;

/// A memory request queued at a bank.
#[derive(Debug, Clone, Copy)]
pub struct DramReq {
    pub ticket: u64,
    pub vm: u32,
    pub vcpu: u32,
    pub op: MemOp,
    pub row: u64,
    pub channel: u32,
    pub arrival: u64,
    pub seq: u64,
    pub issued_at: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Bank {
    pub open_row: Option<u64>,
    pub free_at: u64,
    pub pending: Vec<DramReq>,
}

impl Bank {
    /// FR-FCFS among requests that have arrived by `now`: row-buffer hits
    /// first, then oldest arrival, sequence number as the deterministic
    /// tie-break.
    pub fn pick(&mut self, now: u64) -> Option<DramReq> {
        let mut best: Option<usize> = None;
        for i in 0..self.pending.len() {
            if self.pending[i].arrival > now {
                continue;
            }
            best = Some(match best {
                None => i,
                Some(b) => {
                    let (a, bb) = (&self.pending[i], &self.pending[b]);
                    let a_key = (
                        Some(a.row) == self.open_row,
                        std::cmp::Reverse(a.arrival),
                        std::cmp::Reverse(a.seq),
                    );
                    let b_key = (
                        Some(bb.row) == self.open_row,
                        std::cmp::Reverse(bb.arrival),
                        std::cmp::Reverse(bb.seq),
                    );
                    if a_key > b_key {
                        i
                    } else {
                        b
                    }
                }
            });
        }
        best.map(|i| self.pending.remove(i))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Channel {
    pub free_at: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(seq: u64, row: u64, arrival: u64) -> DramReq {
        DramReq {
            ticket: seq,
            vm: 0,
            vcpu: 0,
            op: MemOp::read(0),
            row,
            channel: 0,
            arrival,
            seq,
            issued_at: arrival,
        }
    }

    #[test]
    fn row_hit_beats_older_conflict() {
        let mut b =
            Bank { open_row: Some(7), free_at: 0, pending: vec![req(1, 3, 10), req(2, 7, 20)] };
        assert_eq!(b.pick(100).unwrap().seq, 2);
        assert_eq!(b.pick(100).unwrap().seq, 1);
    }

    #[test]
    fn oldest_wins_among_equal_rows() {
        let mut b =
            Bank { open_row: None, free_at: 0, pending: vec![req(1, 3, 30), req(2, 3, 10)] };
        assert_eq!(b.pick(100).unwrap().seq, 2);
    }

    #[test]
    fn seq_breaks_exact_ties() {
        let mut b =
            Bank { open_row: None, free_at: 0, pending: vec![req(9, 3, 10), req(4, 5, 10)] };
        assert_eq!(b.pick(100).unwrap().seq, 4);
    }

    #[test]
    fn future_arrivals_are_ineligible() {
        let mut b =
            Bank { open_row: None, free_at: 0, pending: vec![req(1, 3, 50), req(2, 3, 10)] };
        assert_eq!(b.pick(20).unwrap().seq, 2);
        assert!(b.pick(20).is_none());
        assert_eq!(b.pick(50).unwrap().seq, 1);
    }
}
