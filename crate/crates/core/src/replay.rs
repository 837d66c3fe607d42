//! Fixed-capacity FIFO experience replay.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One `(s, a, r, s')` step; `next` is `None` at the end of a trip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition<S> {
    pub state: S,
    pub action: usize,
    pub reward: f64,
    pub next: Option<S>,
}

/// Result of a sample call.
#[derive(Clone, Debug)]
pub struct Sample<'a, S> {
    pub items: Vec<&'a Transition<S>>,
    /// Buffer positions (0 = oldest) of the sampled items.
    pub indices: Vec<usize>,
    /// Fewer items than requested were available.
    pub short: bool,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer<S> {
    capacity: usize,
    items: VecDeque<Transition<S>>,
    pushed: u64,
    rng: ChaCha8Rng,
}

impl<S> ReplayBuffer<S> {
    pub fn new(capacity: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("agent.buffer_capacity: must be ≥ 1".into()));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            pushed: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total pushes since creation, evicted ones included.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, t: Transition<S>) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.pushed += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition<S>> {
        self.items.iter()
    }

    /// Uniform sample of `batch_size` distinct transitions; returns all
    /// items, flagged `short`, when fewer are stored.
    pub fn sample(&mut self, batch_size: usize) -> Result<Sample<'_, S>> {
        if batch_size == 0 {
            return Err(Error::Config("agent.batch_size: must be ≥ 1".into()));
        }
        let n = self.items.len();
        let (indices, short) = if n <= batch_size {
            ((0..n).collect::<Vec<_>>(), n < batch_size)
        } else {
            (sample(&mut self.rng, n, batch_size).into_vec(), false)
        };
        Ok(Sample {
            items: indices.iter().map(|&i| &self.items[i]).collect(),
            indices,
            short,
        })
    }

    pub fn rng_state(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn set_rng_state(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }
}

impl<S: Serialize + DeserializeOwned> ReplayBuffer<S> {
    /// Length-prefixed binary records in insertion order.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&(self.capacity as u64).to_le_bytes())?;
        w.write_all(&self.pushed.to_le_bytes())?;
        w.write_all(&(self.items.len() as u64).to_le_bytes())?;
        for t in &self.items {
            let bytes = bincode::serialize(t).map_err(|e| Error::Data(format!("encoding transition: {e}")))?;
            w.write_all(&(bytes.len() as u64).to_le_bytes())?;
            w.write_all(&bytes)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn restore(path: &Path, seed: u64) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut word = [0u8; 8];
        let mut next = |r: &mut BufReader<File>| -> Result<u64> {
            r.read_exact(&mut word)
                .map_err(|e| Error::Data(format!("{}: truncated buffer dump ({e})", path.display())))?;
            Ok(u64::from_le_bytes(word))
        };
        let capacity = next(&mut r)? as usize;
        let pushed = next(&mut r)?;
        let count = next(&mut r)? as usize;
        let mut buf = Self::new(capacity, seed)?;
        for _ in 0..count {
            let len = next(&mut r)? as usize;
            let mut bytes = vec![0u8; len];
            r.read_exact(&mut bytes)?;
            let t: Transition<S> =
                bincode::deserialize(&bytes).map_err(|e| Error::Data(format!("decoding transition: {e}")))?;
            buf.items.push_back(t);
        }
        buf.pushed = pushed;
        Ok(buf)
    }
}
