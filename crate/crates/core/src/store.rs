//! Embedded in-memory property graph with batch transactions.
//!
//! Nodes live in 64 shards keyed by the low bits of their id. Each node owns
//! its adjacency behind its own lock, so commits that touch disjoint node
//! sets proceed without contending. Inserting an edge is a write to both
//! endpoints.
//!
//! When instrumentation is on, every applied batch records a logical
//! interval `[start, end]` drawn from a store-wide counter, together with the
//! set of nodes it wrote. Two workers whose intervals overlap on the same
//! node are reported by [`GraphStore::isolation_violations`].

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::time::Duration;

use parking_lot::{Mutex, RwLock, RwLockWriteGuard};

use crate::error::StoreError;
use crate::hash::Fnv1a64;
use crate::node::{EdgeRecord, NodeId, NodeRecord};
use crate::schedule::{bin_index, BinCoord, ThreadExponent};

pub type WorkerId = u32;

const SHARD_BITS: u8 = 6;
const SHARDS: usize = 1 << SHARD_BITS;
const NO_HOLDER: u32 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct NodeRef {
    shard: u16,
    slot: u32,
}

#[derive(Default)]
struct Adjacency {
    out: Vec<(NodeRef, u16)>,
    in_count: u64,
}

struct NodeSlot {
    id: NodeId,
    labels: BTreeSet<String>,
    adj: Mutex<Adjacency>,
    // worker + 1 while a strict-mode batch is applying to this node
    holder: AtomicU32,
}

#[derive(Default)]
struct Shard {
    index: HashMap<NodeId, u32>,
    slots: Vec<NodeSlot>,
}

#[derive(Default)]
struct RelTypes {
    names: Vec<String>,
    index: HashMap<String, u16>,
}

/// Read-only view of a stored node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeView {
    pub id: NodeId,
    pub labels: BTreeSet<String>,
    /// Outgoing plus incoming edges, self-loops counted twice.
    pub attached_edges: u64,
}

/// Attribution attached to a batch for instrumentation and fault matching.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BatchTag {
    pub round: Option<usize>,
    pub bin: Option<BinCoord>,
}

/// Logical-time interval during which one batch was being applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ApplyInterval {
    pub worker: WorkerId,
    pub tag: BatchTag,
    pub start: u64,
    pub end: u64,
    pub edges: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IsolationViolation {
    pub node: NodeId,
    pub workers: (WorkerId, WorkerId),
    pub intervals: ((u64, u64), (u64, u64)),
}

#[derive(Clone, Copy, Debug)]
struct Access {
    node: NodeRef,
    worker: WorkerId,
    start: u64,
    end: u64,
}

#[derive(Default)]
struct AccessLog {
    accesses: Vec<Access>,
    applies: Vec<ApplyInterval>,
}

/// Deterministic conflict injection, for exercising retry paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultRule {
    /// The k-th commit attempt store-wide (1-based) conflicts.
    KthCommit(u64),
    /// The first `times` commit attempts of batches tagged with `bin` conflict.
    Bin { bin: BinCoord, times: u64 },
    /// Every commit attempt of batches tagged with `bin` conflicts.
    AlwaysBin(BinCoord),
}

#[derive(Clone, Debug, Default)]
pub struct FaultInjector {
    rules: Vec<FaultRule>,
    attempts: u64,
    bin_attempts: HashMap<BinCoord, u64>,
}

impl FaultInjector {
    pub fn new(rules: impl IntoIterator<Item = FaultRule>) -> Self {
        Self {
            rules: rules.into_iter().collect(),
            ..Self::default()
        }
    }

    /// Registers one commit attempt and reports whether it must conflict.
    fn should_conflict(&mut self, tag: &BatchTag) -> bool {
        self.attempts += 1;
        let bin_attempt = tag.bin.map(|bin| {
            let count = self.bin_attempts.entry(bin).or_insert(0);
            *count += 1;
            *count
        });
        self.rules.iter().any(|rule| match *rule {
            FaultRule::KthCommit(k) => self.attempts == k,
            FaultRule::Bin { bin, times } => {
                tag.bin == Some(bin) && bin_attempt.is_some_and(|a| a <= times)
            }
            FaultRule::AlwaysBin(bin) => tag.bin == Some(bin),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TxnState {
    Open,
    Committed,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CommitFailure {
    TransactionClosed,
    UnknownNode(NodeId),
    /// Strict mode only: another worker was applying to `node`.
    IsolationViolation {
        node: NodeId,
        holder: WorkerId,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CommitOutcome {
    Committed {
        edges: usize,
    },
    /// Nothing was applied; the batch may be reopened and resubmitted.
    Conflict,
    Failed(CommitFailure),
}

pub struct GraphStore {
    shards: Vec<RwLock<Shard>>,
    rel_types: RwLock<RelTypes>,
    node_count: AtomicU64,
    edge_count: AtomicU64,
    commits: AtomicU64,
    open_txns: AtomicUsize,
    clock: AtomicU64,
    instrument: AtomicBool,
    strict: AtomicBool,
    hold_nanos: AtomicU64,
    faults_armed: AtomicBool,
    faults: Mutex<Option<FaultInjector>>,
    log: Mutex<AccessLog>,
}

impl Default for GraphStore {
    fn default() -> Self {
        Self::new()
    }
}

impl GraphStore {
    pub fn new() -> Self {
        Self {
            shards: (0..SHARDS).map(|_| RwLock::new(Shard::default())).collect(),
            rel_types: RwLock::new(RelTypes::default()),
            node_count: AtomicU64::new(0),
            edge_count: AtomicU64::new(0),
            commits: AtomicU64::new(0),
            open_txns: AtomicUsize::new(0),
            clock: AtomicU64::new(1),
            instrument: AtomicBool::new(false),
            strict: AtomicBool::new(false),
            hold_nanos: AtomicU64::new(0),
            faults_armed: AtomicBool::new(false),
            faults: Mutex::new(None),
            log: Mutex::new(AccessLog::default()),
        }
    }

    pub fn set_instrumentation(&self, on: bool) {
        self.instrument.store(on, Ordering::SeqCst);
    }

    pub fn instrumentation(&self) -> bool {
        self.instrument.load(Ordering::SeqCst)
    }

    /// In strict mode a commit that would overlap another worker's in-flight
    /// batch on a shared node fails with `IsolationViolation` instead of
    /// applying.
    pub fn set_strict_isolation(&self, on: bool) {
        self.strict.store(on, Ordering::SeqCst);
    }

    /// Holds every apply open for `hold`, widening the logical intervals so
    /// that short batches cannot slip past overlap detection.
    pub fn set_apply_hold(&self, hold: Option<Duration>) {
        let nanos = hold.map_or(0, |d| d.as_nanos().min(u128::from(u64::MAX)) as u64);
        self.hold_nanos.store(nanos, Ordering::SeqCst);
    }

    pub fn set_fault_injector(&self, injector: Option<FaultInjector>) {
        let armed = injector.is_some();
        *self.faults.lock() = injector;
        self.faults_armed.store(armed, Ordering::SeqCst);
    }

    /// Drops all recorded accesses and apply intervals.
    pub fn reset_instrumentation(&self) {
        let mut log = self.log.lock();
        log.accesses.clear();
        log.applies.clear();
    }

    pub fn node_count(&self) -> u64 {
        self.node_count.load(Ordering::SeqCst)
    }

    pub fn edge_count(&self) -> u64 {
        self.edge_count.load(Ordering::SeqCst)
    }

    /// Number of successful commits.
    pub fn commit_count(&self) -> u64 {
        self.commits.load(Ordering::SeqCst)
    }

    pub fn open_transactions(&self) -> usize {
        self.open_txns.load(Ordering::SeqCst)
    }

    fn shard_of(id: &NodeId) -> usize {
        let bits = ThreadExponent::new(SHARD_BITS - 1).expect("shard exponent is in range");
        bin_index(id, bits) as usize
    }

    fn lookup(&self, id: &NodeId) -> Option<NodeRef> {
        let shard = Self::shard_of(id);
        self.shards[shard]
            .read()
            .index
            .get(id)
            .map(|&slot| NodeRef {
                shard: shard as u16,
                slot,
            })
    }

    fn id_of(&self, node: NodeRef) -> NodeId {
        self.shards[node.shard as usize].read().slots[node.slot as usize]
            .id
            .clone()
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.lookup(id).is_some()
    }

    pub fn node(&self, id: &NodeId) -> Option<NodeView> {
        let node = self.lookup(id)?;
        let shard = self.shards[node.shard as usize].read();
        let slot = &shard.slots[node.slot as usize];
        let adj = slot.adj.lock();
        Some(NodeView {
            id: slot.id.clone(),
            labels: slot.labels.clone(),
            attached_edges: adj.out.len() as u64 + adj.in_count,
        })
    }

    /// Inserts all nodes or none. Fails on an id already present in the store
    /// or repeated within `nodes`.
    pub fn create_nodes(&self, nodes: Vec<NodeRecord>) -> Result<usize, StoreError> {
        if nodes.is_empty() {
            return Ok(0);
        }
        let mut by_shard: Vec<Vec<NodeRecord>> = vec![Vec::new(); SHARDS];
        for node in nodes {
            by_shard[Self::shard_of(&node.id)].push(node);
        }

        // Ascending shard order keeps concurrent callers deadlock-free.
        let mut guards: Vec<(usize, RwLockWriteGuard<'_, Shard>)> = by_shard
            .iter()
            .enumerate()
            .filter(|(_, batch)| !batch.is_empty())
            .map(|(i, _)| (i, self.shards[i].write()))
            .collect();

        for (i, guard) in &guards {
            let mut fresh = std::collections::HashSet::new();
            for node in &by_shard[*i] {
                if guard.index.contains_key(&node.id) || !fresh.insert(&node.id) {
                    return Err(StoreError::DuplicateNodeId(node.id.clone()));
                }
            }
        }

        let mut created = 0;
        for (i, guard) in &mut guards {
            for node in std::mem::take(&mut by_shard[*i]) {
                let slot = guard.slots.len() as u32;
                guard.index.insert(node.id.clone(), slot);
                guard.slots.push(NodeSlot {
                    id: node.id,
                    labels: node.labels,
                    adj: Mutex::new(Adjacency::default()),
                    holder: AtomicU32::new(NO_HOLDER),
                });
                created += 1;
            }
        }
        self.node_count.fetch_add(created as u64, Ordering::SeqCst);
        Ok(created)
    }

    pub fn begin_batch(&self, worker: WorkerId) -> BatchTransaction<'_> {
        self.begin_tagged(worker, BatchTag::default())
    }

    pub fn begin_tagged(&self, worker: WorkerId, tag: BatchTag) -> BatchTransaction<'_> {
        self.open_txns.fetch_add(1, Ordering::SeqCst);
        BatchTransaction {
            store: self,
            worker,
            tag,
            pending: Vec::new(),
            state: TxnState::Open,
        }
    }

    fn rel_type_id(&self, name: &str) -> u16 {
        if let Some(&id) = self.rel_types.read().index.get(name) {
            return id;
        }
        let mut types = self.rel_types.write();
        if let Some(&id) = types.index.get(name) {
            return id;
        }
        let id = u16::try_from(types.names.len()).expect("more than 65535 relationship types");
        types.names.push(name.to_owned());
        types.index.insert(name.to_owned(), id);
        id
    }

    fn with_slot<R>(&self, node: NodeRef, f: impl FnOnce(&NodeSlot) -> R) -> R {
        let shard = self.shards[node.shard as usize].read();
        f(&shard.slots[node.slot as usize])
    }

    fn commit(&self, txn: &mut BatchTransaction<'_>) -> CommitOutcome {
        if txn.state != TxnState::Open {
            return CommitOutcome::Failed(CommitFailure::TransactionClosed);
        }

        if self.faults_armed.load(Ordering::SeqCst) {
            let conflict = self
                .faults
                .lock()
                .as_mut()
                .is_some_and(|f| f.should_conflict(&txn.tag));
            if conflict {
                txn.close(TxnState::Aborted);
                return CommitOutcome::Conflict;
            }
        }

        let mut resolved = Vec::with_capacity(txn.pending.len());
        for edge in &txn.pending {
            let Some(source) = self.lookup(&edge.source) else {
                let id = edge.source.clone();
                txn.close(TxnState::Aborted);
                return CommitOutcome::Failed(CommitFailure::UnknownNode(id));
            };
            let Some(target) = self.lookup(&edge.target) else {
                let id = edge.target.clone();
                txn.close(TxnState::Aborted);
                return CommitOutcome::Failed(CommitFailure::UnknownNode(id));
            };
            resolved.push((source, target, self.rel_type_id(&edge.rel_type)));
        }

        let instrument = self.instrument.load(Ordering::SeqCst);
        let strict = self.strict.load(Ordering::SeqCst);
        let touched: Vec<NodeRef> = if instrument || strict {
            let mut nodes: Vec<NodeRef> = resolved.iter().flat_map(|&(s, t, _)| [s, t]).collect();
            nodes.sort_unstable();
            nodes.dedup();
            nodes
        } else {
            Vec::new()
        };

        let mut claimed = Vec::new();
        if strict {
            let me = txn.worker + 1;
            for &node in &touched {
                let prior = self.with_slot(node, |slot| {
                    slot.holder
                        .compare_exchange(NO_HOLDER, me, Ordering::SeqCst, Ordering::SeqCst)
                });
                match prior {
                    Ok(_) => claimed.push(node),
                    Err(holder) if holder == me => {}
                    Err(holder) => {
                        self.release(&claimed);
                        txn.close(TxnState::Aborted);
                        return CommitOutcome::Failed(CommitFailure::IsolationViolation {
                            node: self.id_of(node),
                            holder: holder - 1,
                        });
                    }
                }
            }
        }

        let start = self.clock.fetch_add(1, Ordering::SeqCst);
        let hold = self.hold_nanos.load(Ordering::SeqCst);
        if hold > 0 {
            std::thread::sleep(Duration::from_nanos(hold));
        }
        for &(source, target, rel) in &resolved {
            self.with_slot(source, |slot| slot.adj.lock().out.push((target, rel)));
            self.with_slot(target, |slot| slot.adj.lock().in_count += 1);
        }
        let end = self.clock.fetch_add(1, Ordering::SeqCst);
        self.release(&claimed);

        let edges = resolved.len();
        self.edge_count.fetch_add(edges as u64, Ordering::SeqCst);
        self.commits.fetch_add(1, Ordering::SeqCst);

        if instrument {
            let mut log = self.log.lock();
            log.accesses.extend(touched.iter().map(|&node| Access {
                node,
                worker: txn.worker,
                start,
                end,
            }));
            log.applies.push(ApplyInterval {
                worker: txn.worker,
                tag: txn.tag,
                start,
                end,
                edges,
            });
        }

        txn.pending.clear();
        txn.close(TxnState::Committed);
        CommitOutcome::Committed { edges }
    }

    fn release(&self, nodes: &[NodeRef]) {
        for &node in nodes {
            self.with_slot(node, |slot| slot.holder.store(NO_HOLDER, Ordering::SeqCst));
        }
    }

    fn require_quiescent(&self) -> Result<(), StoreError> {
        match self.open_transactions() {
            0 => Ok(()),
            open => Err(StoreError::OpenTransactionsOutstanding(open)),
        }
    }

    /// Canonical sorted multiset of every edge in the store.
    pub fn snapshot_edges(&self) -> Result<EdgeSnapshot, StoreError> {
        self.require_quiescent()?;
        let ids: Vec<Vec<NodeId>> = self
            .shards
            .iter()
            .map(|s| s.read().slots.iter().map(|slot| slot.id.clone()).collect())
            .collect();
        let names = self.rel_types.read().names.clone();

        let mut edges = Vec::with_capacity(self.edge_count() as usize);
        for (shard, lock) in self.shards.iter().enumerate() {
            let guard = lock.read();
            for (slot, node) in guard.slots.iter().enumerate() {
                let source = &ids[shard][slot];
                for &(target, rel) in &node.adj.lock().out {
                    edges.push(EdgeRecord {
                        source: source.clone(),
                        target: ids[target.shard as usize][target.slot as usize].clone(),
                        rel_type: names[rel as usize].clone(),
                    });
                }
            }
        }
        edges.sort_unstable();
        Ok(EdgeSnapshot { edges })
    }

    /// Apply intervals of every committed batch since the last reset, in
    /// commit order.
    pub fn apply_intervals(&self) -> Result<Vec<ApplyInterval>, StoreError> {
        if !self.instrumentation() {
            return Err(StoreError::InstrumentationDisabled);
        }
        Ok(self.log.lock().applies.clone())
    }

    /// Every pair of accesses by distinct workers to the same node whose
    /// logical intervals overlap.
    pub fn isolation_violations(&self) -> Result<Vec<IsolationViolation>, StoreError> {
        if !self.instrumentation() {
            return Err(StoreError::InstrumentationDisabled);
        }
        self.require_quiescent()?;

        let mut accesses = self.log.lock().accesses.clone();
        accesses.sort_unstable_by_key(|a| (a.node, a.start, a.end));

        let mut found = Vec::new();
        for group in accesses.chunk_by(|a, b| a.node == b.node) {
            let mut active: Vec<Access> = Vec::new();
            for access in group {
                active.retain(|other| other.end > access.start);
                for other in &active {
                    if other.worker != access.worker {
                        found.push((*other, *access));
                    }
                }
                active.push(*access);
            }
        }

        Ok(found
            .into_iter()
            .map(|(a, b)| IsolationViolation {
                node: self.id_of(a.node),
                workers: (a.worker, b.worker),
                intervals: ((a.start, a.end), (b.start, b.end)),
            })
            .collect())
    }
}

/// A batch of edge insertions bound to one worker. Commits are
/// all-or-nothing.
pub struct BatchTransaction<'s> {
    store: &'s GraphStore,
    worker: WorkerId,
    tag: BatchTag,
    pending: Vec<EdgeRecord>,
    state: TxnState,
}

impl BatchTransaction<'_> {
    pub fn worker(&self) -> WorkerId {
        self.worker
    }

    pub fn tag(&self) -> BatchTag {
        self.tag
    }

    pub fn state(&self) -> TxnState {
        self.state
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Queues an edge. Endpoints are checked at commit.
    pub fn add_edge(&mut self, edge: EdgeRecord) -> Result<(), StoreError> {
        if self.state != TxnState::Open {
            return Err(StoreError::TransactionClosed);
        }
        self.pending.push(edge);
        Ok(())
    }

    pub fn extend(
        &mut self,
        edges: impl IntoIterator<Item = EdgeRecord>,
    ) -> Result<(), StoreError> {
        if self.state != TxnState::Open {
            return Err(StoreError::TransactionClosed);
        }
        self.pending.extend(edges);
        Ok(())
    }

    pub fn commit(&mut self) -> CommitOutcome {
        self.store.commit(self)
    }

    /// Reopens an aborted transaction with its pending edges intact, for
    /// resubmission after a conflict.
    pub fn reopen(&mut self) -> Result<(), StoreError> {
        if self.state != TxnState::Aborted {
            return Err(StoreError::TransactionClosed);
        }
        self.state = TxnState::Open;
        self.store.open_txns.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }

    fn close(&mut self, state: TxnState) {
        debug_assert_eq!(self.state, TxnState::Open);
        self.state = state;
        self.store.open_txns.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Drop for BatchTransaction<'_> {
    fn drop(&mut self) {
        if self.state == TxnState::Open {
            self.close(TxnState::Aborted);
        }
    }
}

/// Sorted multiset of edges. Equal snapshots mean equivalent stores.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeSnapshot {
    pub edges: Vec<EdgeRecord>,
}

impl EdgeSnapshot {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// FNV-1a over a canonical encoding of the sorted edges. Independent of
    /// insertion order.
    pub fn digest(&self) -> u64 {
        let mut h = Fnv1a64::new();
        for edge in &self.edges {
            encode_id(&mut h, &edge.source);
            encode_id(&mut h, &edge.target);
            h.update(&(edge.rel_type.len() as u64).to_le_bytes());
            h.update(edge.rel_type.as_bytes());
        }
        h.finish()
    }
}

fn encode_id(h: &mut Fnv1a64, id: &NodeId) {
    match id {
        NodeId::Int(v) => {
            h.update(b"i");
            h.update(&v.to_le_bytes());
        }
        NodeId::Text(s) => {
            h.update(b"t");
            h.update(&(s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        }
    }
}
