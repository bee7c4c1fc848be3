//! Simulated ranks: each owns a contiguous segment of the leaf order, and all
//! data crossing a rank boundary travels as explicit messages delivered in a
//! fixed order.

use std::io::Write;
use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forest::{build_ghost_layer, Forest, GhostLeaf, Partition, Quadrant};
use crate::patch::{Patch, SourceView};
use crate::solver::EdgeVelocity;

/// Bytes charged per message on top of the payload: kind, two ranks, the leaf
/// key and the patch time.
pub const HEADER_BYTES: usize = 1 + 4 + 4 + 13 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum MessageKind {
    GhostPayload,
    MigratePatch,
}

impl MessageKind {
    fn name(self) -> &'static str {
        match self {
            MessageKind::GhostPayload => "ghost",
            MessageKind::MigratePatch => "migrate",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub kind: MessageKind,
    pub src: usize,
    pub dst: usize,
    pub leaf: Quadrant,
    pub values: Vec<f64>,
    pub time: f64,
}

impl Message {
    pub fn bytes(&self) -> usize {
        HEADER_BYTES + 8 * self.values.len()
    }
}

/// Received copy of a remote patch, with the level before the latest one.
#[derive(Clone, Debug)]
pub struct GhostBuffer {
    pub entry: GhostLeaf,
    current: Option<(Vec<f64>, f64)>,
    previous: Option<(Vec<f64>, f64)>,
}

impl GhostBuffer {
    fn new(entry: GhostLeaf) -> Self {
        GhostBuffer {
            entry,
            current: None,
            previous: None,
        }
    }

    fn receive(&mut self, values: Vec<f64>, time: f64) {
        match self.current.take() {
            Some((old, t)) if t != time => {
                self.previous = Some((old, t));
            }
            _ => {}
        }
        self.current = Some((values, time));
    }

    pub fn current(&self) -> Option<(&[f64], f64)> {
        self.current.as_ref().map(|(v, t)| (v.as_slice(), *t))
    }

    pub fn view(&self, m: usize) -> Option<SourceView<'_>> {
        let (values, time) = self.current.as_ref()?;
        Some(SourceView::from_interior(
            self.entry.leaf,
            m,
            values,
            *time,
            self.previous.as_ref().map(|(v, t)| (v.as_slice(), *t)),
        ))
    }
}

/// One simulated process.
#[derive(Clone, Debug)]
pub struct RankView {
    pub rank: usize,
    pub range: Range<usize>,
    /// Local patches in leaf order; `patches[k]` belongs to leaf `range.start + k`.
    pub patches: Vec<Patch>,
    pub velocities: Vec<EdgeVelocity>,
    pub ghosts: Vec<GhostBuffer>,
    /// `(leaf index, receiver)` pairs this rank sends on every exchange.
    pub mirrors: Vec<(usize, usize)>,
    pub outbox: Vec<Message>,
    pub inbox: Vec<Message>,
}

impl RankView {
    pub fn is_local(&self, index: usize) -> bool {
        self.range.contains(&index)
    }

    pub fn local(&self, index: usize) -> &Patch {
        &self.patches[index - self.range.start]
    }

    pub fn ghost(&self, index: usize) -> Option<&GhostBuffer> {
        self.ghosts
            .binary_search_by_key(&index, |g| g.entry.index)
            .ok()
            .map(|k| &self.ghosts[k])
    }

    /// Data of leaf `index`, whether local or a received ghost.
    pub fn source(&self, index: usize, m: usize) -> Option<SourceView<'_>> {
        if self.is_local(index) {
            Some(self.local(index).view())
        } else {
            self.ghost(index)?.view(m)
        }
    }
}

/// One row of the optional message trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub kind: MessageKind,
    pub src: usize,
    pub dst: usize,
    pub leaf: Quadrant,
    pub bytes: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MessageCounters {
    pub exchange_rounds: u64,
    pub ghost_messages: u64,
    pub ghost_bytes: u64,
    pub migrations: u64,
    pub migration_bytes: u64,
}

/// All simulated ranks plus the current partition.
#[derive(Clone, Debug)]
pub struct Cluster {
    pub views: Vec<RankView>,
    pub partition: Partition,
    pub counters: MessageCounters,
    pub trace: Option<Vec<TraceRow>>,
    /// Label attached to trace rows.
    pub step: usize,
    m: usize,
}

impl Cluster {
    /// Distributes `patches` (one per leaf, in leaf order) according to `partition`.
    pub fn new(forest: &Forest, partition: Partition, patches: Vec<Patch>, m: usize) -> Self {
        assert_eq!(patches.len(), forest.num_leaves());
        assert_eq!(partition.num_leaves(), forest.num_leaves());
        let mut it = patches.into_iter();
        let views = (0..partition.num_ranks())
            .map(|r| {
                let range = partition.range(r);
                RankView {
                    rank: r,
                    patches: it.by_ref().take(range.len()).collect(),
                    range,
                    velocities: Vec::new(),
                    ghosts: Vec::new(),
                    mirrors: Vec::new(),
                    outbox: Vec::new(),
                    inbox: Vec::new(),
                }
            })
            .collect();
        let mut c = Cluster {
            views,
            partition,
            counters: MessageCounters::default(),
            trace: None,
            step: 0,
            m,
        };
        c.rebuild_ghost_layers(forest);
        c
    }

    pub fn num_ranks(&self) -> usize {
        self.views.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Recomputes every rank's ghost list and, from them, every rank's mirror list.
    pub fn rebuild_ghost_layers(&mut self, forest: &Forest) {
        let part = &self.partition;
        let layers: Vec<Vec<GhostLeaf>> = (0..part.num_ranks())
            .into_par_iter()
            .map(|r| build_ghost_layer(forest, part, r))
            .collect();
        let mut mirrors = vec![Vec::new(); part.num_ranks()];
        for (r, layer) in layers.iter().enumerate() {
            for g in layer {
                mirrors[g.owner].push((g.index, r));
            }
        }
        for (v, (layer, mut mir)) in self.views.iter_mut().zip(layers.into_iter().zip(mirrors)) {
            mir.sort_by_key(|&(i, r)| (r, i));
            v.mirrors = mir;
            v.ghosts = layer.into_iter().map(GhostBuffer::new).collect();
        }
    }

    /// Sorted delivery barrier: every outbox is drained into the receivers'
    /// inboxes in `(src, leaf)` order.
    fn deliver(&mut self) {
        let mut all: Vec<Message> = self.views.iter_mut().flat_map(|v| v.outbox.drain(..)).collect();
        all.sort_by(|a, b| (a.src, a.leaf.sfc_key()).cmp(&(b.src, b.leaf.sfc_key())).then(a.dst.cmp(&b.dst)));
        for msg in all {
            if let Some(trace) = self.trace.as_mut() {
                trace.push(TraceRow {
                    step: self.step,
                    kind: msg.kind,
                    src: msg.src,
                    dst: msg.dst,
                    leaf: msg.leaf,
                    bytes: msg.bytes(),
                });
            }
            match msg.kind {
                MessageKind::GhostPayload => {
                    self.counters.ghost_messages += 1;
                    self.counters.ghost_bytes += msg.bytes() as u64;
                }
                MessageKind::MigratePatch => {
                    self.counters.migrations += 1;
                    self.counters.migration_bytes += msg.bytes() as u64;
                }
            }
            let dst = msg.dst;
            self.views[dst].inbox.push(msg);
        }
    }

    /// One exchange round: every rank sends the current interior of each
    /// mirrored leaf whose level passes `send_level`, and receivers store it in
    /// their ghost buffers.
    pub fn exchange_ghost_patches(&mut self, forest: &Forest, send_level: &(dyn Fn(u8) -> bool + Sync)) -> Result<()> {
        self.counters.exchange_rounds += 1;
        self.views.par_iter_mut().for_each(|v| {
            let mut out = Vec::new();
            for &(i, dst) in &v.mirrors {
                let p = &v.patches[i - v.range.start];
                if !send_level(p.leaf().level) {
                    continue;
                }
                debug_assert_eq!(p.leaf(), forest.leaf(i));
                out.push(Message {
                    kind: MessageKind::GhostPayload,
                    src: v.rank,
                    dst,
                    leaf: p.leaf(),
                    values: p.interior_values(),
                    time: p.time(),
                });
            }
            v.outbox = out;
        });
        self.deliver();
        self.views.par_iter_mut().try_for_each(|v| {
            for msg in std::mem::take(&mut v.inbox) {
                let k = v
                    .ghosts
                    .binary_search_by(|g| g.entry.leaf.sfc_key().cmp(&msg.leaf.sfc_key()))
                    .map_err(|_| Error::InconsistentGhostList {
                        rank: v.rank,
                        leaf: msg.leaf,
                    })?;
                v.ghosts[k].receive(msg.values, msg.time);
            }
            Ok(())
        })
    }

    /// Moves every patch to its owner under `new_partition` and rebuilds the
    /// ghost layers. The local patch lists must already match `forest`.
    /// Returns the number of patches that moved.
    pub fn repartition_migrate(&mut self, forest: &Forest, new_partition: Partition) -> Result<usize> {
        assert_eq!(new_partition.num_leaves(), forest.num_leaves());
        assert_eq!(new_partition.num_ranks(), self.num_ranks());
        let m = self.m;
        let newp = &new_partition;
        self.views.par_iter_mut().for_each(|v| {
            let mut out = Vec::new();
            for (k, p) in v.patches.iter().enumerate() {
                let dst = newp.owner(v.range.start + k);
                if dst != v.rank {
                    out.push(Message {
                        kind: MessageKind::MigratePatch,
                        src: v.rank,
                        dst,
                        leaf: p.leaf(),
                        values: p.interior_values(),
                        time: p.time(),
                    });
                }
            }
            v.outbox = out;
        });
        let before = self.counters.migrations;
        self.deliver();
        let moved = (self.counters.migrations - before) as usize;
        self.views.par_iter_mut().try_for_each(|v| -> Result<()> {
            let range = newp.range(v.rank);
            let old_start = v.range.start;
            let kept = std::mem::take(&mut v.patches)
                .into_iter()
                .enumerate()
                .filter(|(k, _)| range.contains(&(old_start + k)))
                .map(|(_, p)| p);
            let received = std::mem::take(&mut v.inbox).into_iter().map(|msg| {
                let mut p = Patch::new(msg.leaf, m, msg.time);
                p.set_interior_values(&msg.values);
                p
            });
            let mut all: Vec<Patch> = kept.chain(received).collect();
            all.sort_by_key(|p| p.leaf().sfc_key());
            for (k, p) in all.iter().enumerate() {
                if forest.leaf(range.start + k) != p.leaf() {
                    return Err(Error::InconsistentGhostList {
                        rank: v.rank,
                        leaf: p.leaf(),
                    });
                }
            }
            if all.len() != range.len() {
                return Err(Error::LeafNotFound(forest.leaf(range.start + all.len().min(range.len().saturating_sub(1)))));
            }
            v.patches = all;
            v.range = range;
            v.velocities.clear();
            Ok(())
        })?;
        self.partition = new_partition;
        self.rebuild_ghost_layers(forest);
        Ok(moved)
    }

    /// All patches in leaf order, borrowed from their owners.
    pub fn patches(&self) -> impl Iterator<Item = (usize, &Patch)> + '_ {
        self.views.iter().flat_map(|v| v.patches.iter().map(move |p| (v.rank, p)))
    }

    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,kind,src,dst,tree,level,x,y,bytes")?;
        for r in self.trace.iter().flatten() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.step,
                r.kind.name(),
                r.src,
                r.dst,
                r.leaf.tree,
                r.leaf.level,
                r.leaf.x,
                r.leaf.y,
                r.bytes
            )?;
        }
        Ok(())
    }
}

/// Maximum of per-rank values, combined in ascending rank order.
pub fn ordered_reduce_max(per_rank: &[f64]) -> f64 {
    per_rank.iter().fold(0.0, |acc: f64, &v| acc.max(v))
}
