use rand::Rng;

use crate::error::{Error, Result};
use crate::ndmath::Mat;

/// One environment transition in observation space (`d` is 1 only for
/// physical termination).
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub x_next: Vec<f64>,
    pub r: f64,
    pub d: bool,
}

/// A sampled minibatch, one row per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Mat,
    pub u: Mat,
    pub x_next: Mat,
    /// batch × 1
    pub r: Mat,
    /// batch × 1, entries 0 or 1
    pub d: Mat,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fixed-capacity FIFO ring of transitions, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    obs_dim: usize,
    control_dim: usize,
    capacity: usize,
    /// Next slot to write once full.
    cursor: usize,
    x: Vec<f64>,
    u: Vec<f64>,
    x_next: Vec<f64>,
    r: Vec<f64>,
    d: Vec<f64>,
}

impl ReplayBuffer {
    pub fn new(obs_dim: usize, control_dim: usize, capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            obs_dim,
            control_dim,
            capacity,
            cursor: 0,
            x: Vec::new(),
            u: Vec::new(),
            x_next: Vec::new(),
            r: Vec::new(),
            d: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.x.len() != self.obs_dim || t.x_next.len() != self.obs_dim || t.u.len() != self.control_dim {
            return Err(Error::Dimension {
                op: "buffer push",
                left: (self.obs_dim, self.control_dim),
                right: (t.x.len(), t.u.len()),
            });
        }
        if t.x.iter().chain(&t.u).chain(&t.x_next).any(|v| !v.is_finite()) || !t.r.is_finite() {
            return Err(Error::NonFinite {
                what: "transition".into(),
            });
        }
        let d = if t.d { 1.0 } else { 0.0 };
        if self.len() < self.capacity {
            self.x.extend_from_slice(&t.x);
            self.u.extend_from_slice(&t.u);
            self.x_next.extend_from_slice(&t.x_next);
            self.r.push(t.r);
            self.d.push(d);
        } else {
            let (i, n, m) = (self.cursor, self.obs_dim, self.control_dim);
            self.x[i * n..(i + 1) * n].copy_from_slice(&t.x);
            self.u[i * m..(i + 1) * m].copy_from_slice(&t.u);
            self.x_next[i * n..(i + 1) * n].copy_from_slice(&t.x_next);
            self.r[i] = t.r;
            self.d[i] = d;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        Ok(())
    }

    /// Slot index of the `k`-th oldest stored transition.
    fn slot(&self, k: usize) -> usize {
        if self.len() < self.capacity {
            k
        } else {
            (self.cursor + k) % self.capacity
        }
    }

    pub fn get(&self, k: usize) -> Transition {
        assert!(k < self.len(), "buffer index {k} out of range");
        let (i, n, m) = (self.slot(k), self.obs_dim, self.control_dim);
        Transition {
            x: self.x[i * n..(i + 1) * n].to_vec(),
            u: self.u[i * m..(i + 1) * m].to_vec(),
            x_next: self.x_next[i * n..(i + 1) * n].to_vec(),
            r: self.r[i],
            d: self.d[i] != 0.0,
        }
    }

    fn gather(&self, slots: &[usize]) -> Batch {
        let (n, m) = (self.obs_dim, self.control_dim);
        let rows = slots.len();
        Batch {
            x: Mat::from_fn(rows, n, |i, j| self.x[slots[i] * n + j]),
            u: Mat::from_fn(rows, m, |i, j| self.u[slots[i] * m + j]),
            x_next: Mat::from_fn(rows, n, |i, j| self.x_next[slots[i] * n + j]),
            r: Mat::from_fn(rows, 1, |i, _| self.r[slots[i]]),
            d: Mat::from_fn(rows, 1, |i, _| self.d[slots[i]]),
        }
    }

    /// Uniform with replacement over filled slots. Any non-empty buffer
    /// can serve any batch size.
    pub fn sample<R: Rng>(&self, batch: usize, rng: &mut R) -> Result<Batch> {
        if self.is_empty() {
            return Err(Error::usage(format!(
                "cannot sample {batch} from a buffer holding {}",
                self.len()
            )));
        }
        let slots: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..self.len())).collect();
        Ok(self.gather(&slots))
    }

    /// The newest `k` transitions, oldest first.
    pub fn latest(&self, k: usize) -> Batch {
        let k = k.min(self.len());
        let slots: Vec<usize> = (self.len() - k..self.len()).map(|j| self.slot(j)).collect();
        self.gather(&slots)
    }

    /// Everything, oldest first.
    pub fn all(&self) -> Batch {
        self.latest(self.len())
    }

    /// Raw storage for checkpoints: `(x, u, x_next, [r d])` as matrices in
    /// slot order, plus the cursor.
    pub fn to_tensors(&self) -> ([Mat; 4], usize) {
        let len = self.len();
        let (n, m) = (self.obs_dim, self.control_dim);
        (
            [
                Mat::from_row_slice(len, n, &self.x),
                Mat::from_row_slice(len, m, &self.u),
                Mat::from_row_slice(len, n, &self.x_next),
                Mat::from_fn(len, 2, |i, j| if j == 0 { self.r[i] } else { self.d[i] }),
            ],
            self.cursor,
        )
    }

    pub fn from_tensors(
        obs_dim: usize,
        control_dim: usize,
        capacity: usize,
        t: [&Mat; 4],
        cursor: usize,
    ) -> Result<Self> {
        let len = t[3].nrows();
        let ok = t[0].shape() == (len, obs_dim)
            && t[1].shape() == (len, control_dim)
            && t[2].shape() == (len, obs_dim)
            && t[3].ncols() == 2
            && len <= capacity
            && (cursor == 0 || (len == capacity && cursor < capacity));
        if !ok {
            return Err(Error::Checkpoint("replay buffer tensors are inconsistent".into()));
        }
        let rows = |m: &Mat| -> Vec<f64> { m.transpose().iter().cloned().collect() };
        Ok(Self {
            obs_dim,
            control_dim,
            capacity,
            cursor,
            x: rows(t[0]),
            u: rows(t[1]),
            x_next: rows(t[2]),
            r: t[3].column(0).iter().cloned().collect(),
            d: t[3].column(1).iter().cloned().collect(),
        })
    }
}
