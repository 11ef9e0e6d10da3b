//! Training pool `S_t`, online holdout `S_t^V`, and replay sampling.
//!
//! Each revealed datum is routed to the holdout by an independent coin with
//! probability `holdout_fraction`; everything else is offered to a reservoir
//! of fixed (or unbounded) capacity. Routing and reservoir decisions for step
//! `t` are drawn from substreams keyed by `(seed, t)`, so the same batch is
//! always split the same way no matter who asks.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;

use crate::rng::{substream, Domain};
use crate::stream::{Sample, StreamBatch, Target};
use crate::{Error, Result};

/// Stored datum with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: u64,
    pub arrival: u64,
    pub sample: Sample,
}

/// Unique id of the `index`-th datum of step `t`.
pub fn record_id(t: u64, index: usize) -> u64 {
    (t << 24) | index as u64
}

/// Capacity-limited store with reservoir replacement.
///
/// Items are bucketed by arrival step so that window queries for mixed replay
/// do not scan the whole pool.
#[derive(Debug, Clone)]
pub struct DataPool {
    capacity: Option<usize>,
    items: Vec<Record>,
    seen_count: u64,
    seed: u64,
    last_step: u64,
    by_arrival: BTreeMap<u64, Vec<usize>>,
}

/// Undo log for one [`integrate`] call.
#[derive(Debug, Default)]
pub struct Journal {
    train: PoolJournal,
    holdout: PoolJournal,
}

#[derive(Debug, Default)]
struct PoolJournal {
    prev_seen: u64,
    prev_last_step: u64,
    appended: usize,
    replaced: Vec<(usize, Record)>,
}

impl DataPool {
    /// `capacity = None` stores every offered item.
    pub fn new(capacity: Option<usize>, seed: u64) -> Self {
        DataPool {
            capacity,
            items: Vec::new(),
            seen_count: 0,
            seed,
            last_step: 0,
            by_arrival: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn seen_count(&self) -> u64 {
        self.seen_count
    }

    pub fn last_step(&self) -> u64 {
        self.last_step
    }

    pub fn items(&self) -> &[Record] {
        &self.items
    }

    /// Offers `records` (all arriving at step `t`) to the reservoir.
    fn offer(&mut self, t: u64, records: Vec<Record>) -> PoolJournal {
        let mut journal = PoolJournal {
            prev_seen: self.seen_count,
            prev_last_step: self.last_step,
            ..Default::default()
        };
        let mut rng = substream(self.seed, Domain::Reservoir, t);
        for record in records {
            let n = self.seen_count;
            self.seen_count += 1;
            match self.capacity {
                Some(cap) if self.items.len() >= cap => {
                    let j = rng.random_range(0..=n);
                    if j < cap as u64 {
                        let slot = j as usize;
                        let old = std::mem::replace(&mut self.items[slot], record);
                        self.unindex(old.arrival, slot);
                        self.index(self.items[slot].arrival, slot);
                        journal.replaced.push((slot, old));
                    }
                }
                _ => {
                    self.items.push(record);
                    let slot = self.items.len() - 1;
                    self.index(self.items[slot].arrival, slot);
                    journal.appended += 1;
                }
            }
        }
        self.last_step = t;
        journal
    }

    fn rollback(&mut self, journal: PoolJournal) {
        for (slot, old) in journal.replaced.into_iter().rev() {
            let arrival = self.items[slot].arrival;
            self.unindex(arrival, slot);
            self.index(old.arrival, slot);
            self.items[slot] = old;
        }
        for _ in 0..journal.appended {
            let slot = self.items.len() - 1;
            let record = self.items.pop().expect("journal appended more than stored");
            self.unindex(record.arrival, slot);
        }
        self.seen_count = journal.prev_seen;
        self.last_step = journal.prev_last_step;
    }

    fn index(&mut self, arrival: u64, slot: usize) {
        self.by_arrival.entry(arrival).or_default().push(slot);
    }

    fn unindex(&mut self, arrival: u64, slot: usize) {
        if let Some(slots) = self.by_arrival.get_mut(&arrival) {
            if let Some(pos) = slots.iter().position(|&s| s == slot) {
                slots.swap_remove(pos);
            }
            if slots.is_empty() {
                self.by_arrival.remove(&arrival);
            }
        }
    }

    /// Number of stored items with arrival step in `lo..=hi`.
    pub fn count_in_window(&self, lo: u64, hi: u64) -> usize {
        if lo > hi {
            return 0;
        }
        self.by_arrival.range(lo..=hi).map(|(_, s)| s.len()).sum()
    }

    /// `m` items drawn uniformly with replacement from everything stored.
    pub fn sample_pure_replay<R: Rng>(&self, m: usize, rng: &mut R) -> Result<Vec<&Sample>> {
        if self.items.is_empty() {
            return Err(Error::EmptyPool);
        }
        let n = self.items.len();
        Ok((0..m)
            .map(|_| &self.items[rng.random_range(0..n)].sample)
            .collect())
    }

    /// Uniform draws with replacement from items whose arrival is in `lo..=hi`.
    fn sample_window<'a, R: Rng>(
        &'a self,
        lo: u64,
        hi: u64,
        count: usize,
        rng: &mut R,
        out: &mut Vec<&'a Sample>,
    ) {
        let buckets: Vec<&Vec<usize>> = self.by_arrival.range(lo..=hi).map(|(_, s)| s).collect();
        let mut cumulative = Vec::with_capacity(buckets.len());
        let mut total = 0usize;
        for b in &buckets {
            total += b.len();
            cumulative.push(total);
        }
        if total == 0 {
            return;
        }
        for _ in 0..count {
            let r = rng.random_range(0..total);
            let b = cumulative.partition_point(|&c| c <= r);
            let before = if b == 0 { 0 } else { cumulative[b - 1] };
            out.push(&self.items[buckets[b][r - before]].sample);
        }
    }

    /// Mixed replay: `m/2` items from `current` (this step's training data)
    /// and `m/2` uniformly from stored items that arrived in
    /// `[t - window, t - 1]`.
    ///
    /// When the history window is empty the whole minibatch comes from
    /// `current`; when `current` is empty it all comes from the window.
    pub fn sample_mixed_replay<'a, R: Rng>(
        &'a self,
        current: &[&'a Sample],
        m: usize,
        t: u64,
        window: u64,
        rng: &mut R,
    ) -> Result<Vec<&'a Sample>> {
        if !m.is_multiple_of(2) {
            return Err(Error::OddBatch(m));
        }
        let hi = t.saturating_sub(1);
        let lo = t.saturating_sub(window).max(1);
        let history = if window == 0 || t <= 1 {
            0
        } else {
            self.count_in_window(lo, hi)
        };
        let mut out = Vec::with_capacity(m);
        match (current.is_empty(), history == 0) {
            (true, true) => return Err(Error::EmptyPool),
            (false, true) => {
                out.extend((0..m).map(|_| current[rng.random_range(0..current.len())]));
            }
            (true, false) => self.sample_window(lo, hi, m, rng, &mut out),
            (false, false) => {
                out.extend((0..m / 2).map(|_| current[rng.random_range(0..current.len())]));
                self.sample_window(lo, hi, m / 2, rng, &mut out);
            }
        }
        Ok(out)
    }

    /// Writes the pool in the little-endian record layout:
    ///
    /// ```text
    /// u32 d_in | u32 label_len | u64 capacity (u64::MAX = unbounded)
    /// u64 seen_count | u64 last_step | u64 seed | u64 record_count
    /// record_count x { f64 x d_in features | f64 x label_len label
    ///                  | u64 arrival | u64 id }
    /// ```
    ///
    /// Class labels are stored as a single f64 holding the class index.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let (d_in, label_len) = match self.items.first() {
            Some(r) => (r.sample.features.len(), target_len(&r.sample.target)),
            None => (0, 0),
        };
        w.write_all(&(d_in as u32).to_le_bytes())?;
        w.write_all(&(label_len as u32).to_le_bytes())?;
        let cap = self.capacity.map_or(u64::MAX, |c| c as u64);
        for v in [cap, self.seen_count, self.last_step, self.seed, self.items.len() as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        for r in &self.items {
            if r.sample.features.len() != d_in || target_len(&r.sample.target) != label_len {
                return Err(Error::Format("pool records have mixed shapes".into()));
            }
            for x in &r.sample.features {
                w.write_all(&x.to_le_bytes())?;
            }
            match &r.sample.target {
                Target::Class(c) => w.write_all(&(*c as f64).to_le_bytes())?,
                Target::Vector(v) => {
                    for y in v {
                        w.write_all(&y.to_le_bytes())?;
                    }
                }
            }
            w.write_all(&r.arrival.to_le_bytes())?;
            w.write_all(&r.id.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a pool written by [`DataPool::write_to`]. `classification`
    /// selects how single-width labels are decoded.
    pub fn read_from<R: Read>(mut r: R, classification: bool) -> Result<Self> {
        let d_in = read_u32(&mut r)? as usize;
        let label_len = read_u32(&mut r)? as usize;
        let cap = read_u64(&mut r)?;
        let seen_count = read_u64(&mut r)?;
        let last_step = read_u64(&mut r)?;
        let seed = read_u64(&mut r)?;
        let count = read_u64(&mut r)? as usize;
        if classification && count > 0 && label_len != 1 {
            return Err(Error::Format(format!("class labels need width 1, found {label_len}")));
        }
        let mut pool = DataPool::new((cap != u64::MAX).then_some(cap as usize), seed);
        pool.seen_count = seen_count;
        pool.last_step = last_step;
        for slot in 0..count {
            let features = (0..d_in).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
            let label = (0..label_len).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
            let target = if classification {
                let c = label[0];
                if c < 0.0 || c.fract() != 0.0 {
                    return Err(Error::Format(format!("bad class label {c}")));
                }
                Target::Class(c as usize)
            } else {
                Target::Vector(label)
            };
            let arrival = read_u64(&mut r)?;
            let id = read_u64(&mut r)?;
            pool.items.push(Record {
                id,
                arrival,
                sample: Sample { features, target },
            });
            pool.index(arrival, slot);
        }
        Ok(pool)
    }
}

fn target_len(t: &Target) -> usize {
    match t {
        Target::Class(_) => 1,
        Target::Vector(v) => v.len(),
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Online validation/evaluation store. Unbounded unless configured otherwise.
#[derive(Debug, Clone)]
pub struct HoldoutPool {
    pub fraction: f64,
    store: DataPool,
}

impl HoldoutPool {
    pub fn new(fraction: f64, seed: u64) -> Self {
        HoldoutPool {
            fraction,
            store: DataPool::new(None, seed),
        }
    }

    /// Rebuilds a holdout around a stored pool, e.g. one read from disk.
    pub fn from_pool(fraction: f64, store: DataPool) -> Self {
        HoldoutPool { fraction, store }
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn items(&self) -> &[Record] {
        self.store.items()
    }

    pub fn pool(&self) -> &DataPool {
        &self.store
    }

    /// Holdout samples that arrived at or before step `t`.
    pub fn samples_up_to(&self, t: u64) -> Vec<&Sample> {
        self.store
            .items()
            .iter()
            .filter(|r| r.arrival <= t)
            .map(|r| &r.sample)
            .collect()
    }

    /// Validation minibatch, uniform with replacement over the holdout.
    pub fn sample<R: Rng>(&self, m: usize, rng: &mut R) -> Result<Vec<&Sample>> {
        self.store.sample_pure_replay(m, rng)
    }
}

/// Per-datum holdout coins for `batch`; `true` routes to the holdout.
pub fn route_batch(batch: &StreamBatch, fraction: f64, seed: u64) -> Vec<bool> {
    let mut rng = substream(seed, Domain::HoldoutRouting, batch.t);
    (0..batch.samples.len())
        .map(|_| rng.random::<f64>() < fraction)
        .collect()
}

/// Samples of `batch` that the router sends to the holdout.
pub fn holdout_part(batch: &StreamBatch, fraction: f64, seed: u64) -> Vec<Sample> {
    route_batch(batch, fraction, seed)
        .into_iter()
        .zip(&batch.samples)
        .filter(|(h, _)| *h)
        .map(|(_, s)| s.clone())
        .collect()
}

/// Routes `batch` into `holdout` and the reservoir `pool` (step 3 of the
/// protocol). Returns a journal that [`rollback`] can undo.
pub fn integrate(pool: &mut DataPool, holdout: &mut HoldoutPool, batch: &StreamBatch) -> Result<Journal> {
    let last = pool.last_step.max(holdout.store.last_step);
    if batch.t <= last {
        return Err(Error::StepOrder { last, got: batch.t });
    }
    let routes = route_batch(batch, holdout.fraction, pool.seed);
    let mut train = Vec::new();
    let mut held = Vec::new();
    for (i, (sample, to_holdout)) in batch.samples.iter().zip(routes).enumerate() {
        let record = Record {
            id: record_id(batch.t, i),
            arrival: batch.t,
            sample: sample.clone(),
        };
        if to_holdout {
            held.push(record);
        } else {
            train.push(record);
        }
    }
    Ok(Journal {
        train: pool.offer(batch.t, train),
        holdout: holdout.store.offer(batch.t, held),
    })
}

/// Restores both pools to their state before the journaled [`integrate`].
pub fn rollback(pool: &mut DataPool, holdout: &mut HoldoutPool, journal: Journal) {
    pool.rollback(journal.train);
    holdout.store.rollback(journal.holdout);
}

/// Training-routed samples of the current batch, in batch order.
pub fn training_part(batch: &StreamBatch, fraction: f64, seed: u64) -> Vec<&Sample> {
    route_batch(batch, fraction, seed)
        .into_iter()
        .zip(&batch.samples)
        .filter_map(|(h, s)| (!h).then_some(s))
        .collect()
}
