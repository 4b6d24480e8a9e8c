//! Relational-order adaptation: tabular Q over order states, softmax action
//! selection, reward from negative normalized reconstruction error, and the
//! recursive backup Q(s,a) = r + c * max_a' Q(s',a').

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crbm::FChoice;
use crate::error::{Error, Result};
use crate::rng::SplitRng;

/// Relational-order change taken at one unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Dec,
    Stay,
    Inc,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Dec, Action::Stay, Action::Inc];

    pub fn delta(self) -> i64 {
        match self {
            Action::Dec => -1,
            Action::Stay => 0,
            Action::Inc => 1,
        }
    }

    pub fn from_delta(d: i64) -> Result<Self> {
        match d {
            -1 => Ok(Action::Dec),
            0 => Ok(Action::Stay),
            1 => Ok(Action::Inc),
            other => Err(Error::Domain(format!("no action with delta {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Discount c in [0,1).
    pub discount: f64,
    /// Softmax temperature, > 0.
    pub temperature: f64,
    /// Normalization for J.
    pub f_choice: FChoice,
    /// Optional learning-rate blend for the backup; the literal recursion
    /// (full overwrite) is the default.
    pub blend: Option<f64>,
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::Config(format!("discount {} outside [0,1)", self.discount)));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config(format!("temperature {} must be > 0", self.temperature)));
        }
        if let Some(a) = self.blend {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!("blend {a} outside [0,1]")));
            }
        }
        Ok(())
    }
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { discount: 0.9, temperature: 1.0, f_choice: FChoice::Linear, blend: None }
    }
}

/// Tabular Q over (order state, action), with the last observed reward per
/// pair. All entries start at one.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub order_min: usize,
    pub order_max: usize,
    q: BTreeMap<(usize, Action), f64>,
    r_last: BTreeMap<(usize, Action), f64>,
}

impl QTable {
    pub fn new(order_min: usize, order_max: usize) -> Result<Self> {
        if order_min < 2 || order_max < order_min {
            return Err(Error::Config(format!(
                "invalid order bounds [{order_min}, {order_max}]"
            )));
        }
        let mut q = BTreeMap::new();
        let mut r_last = BTreeMap::new();
        for s in order_min..=order_max {
            for a in Action::ALL {
                if Self::legal_at(s, a, order_min, order_max) {
                    q.insert((s, a), 1.0);
                    r_last.insert((s, a), 1.0);
                }
            }
        }
        Ok(Self { order_min, order_max, q, r_last })
    }

    fn legal_at(s: usize, a: Action, order_min: usize, order_max: usize) -> bool {
        match a {
            Action::Dec => s > order_min,
            Action::Stay => true,
            Action::Inc => s < order_max,
        }
    }

    pub fn is_legal(&self, s: usize, a: Action) -> bool {
        (self.order_min..=self.order_max).contains(&s)
            && Self::legal_at(s, a, self.order_min, self.order_max)
    }

    pub fn legal_actions(&self, s: usize) -> Vec<Action> {
        Action::ALL
            .into_iter()
            .filter(|&a| self.is_legal(s, a))
            .collect()
    }

    pub fn get(&self, s: usize, a: Action) -> Option<f64> {
        self.q.get(&(s, a)).copied()
    }

    pub fn last_reward(&self, s: usize, a: Action) -> Option<f64> {
        self.r_last.get(&(s, a)).copied()
    }

    pub fn max_q(&self, s: usize) -> Result<f64> {
        self.legal_actions(s)
            .into_iter()
            .map(|a| self.q[&(s, a)])
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |m| m.max(v))))
            .ok_or_else(|| Error::Domain(format!("state {s} out of range")))
    }

    /// Greedy action at `s`; ties broken toward Dec < Stay < Inc order.
    pub fn greedy_action(&self, s: usize) -> Result<Action> {
        let actions = self.legal_actions(s);
        if actions.is_empty() {
            return Err(Error::Domain(format!("state {s} out of range")));
        }
        let mut best = actions[0];
        for &a in &actions[1..] {
            if self.q[&(s, a)] > self.q[&(s, best)] {
                best = a;
            }
        }
        Ok(best)
    }

    /// Clamp a raw next state into the legal order range.
    pub fn clamp_state(&self, s: i64) -> usize {
        s.clamp(self.order_min as i64, self.order_max as i64) as usize
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, Action, f64, f64)> + '_ {
        self.q
            .iter()
            .map(|(&(s, a), &q)| (s, a, q, self.r_last[&(s, a)]))
    }

    pub fn restore_entry(&mut self, s: usize, a: Action, q: f64, r: f64) -> Result<()> {
        if !self.is_legal(s, a) {
            return Err(Error::Domain(format!("illegal entry ({s}, {a:?})")));
        }
        self.q.insert((s, a), q);
        self.r_last.insert((s, a), r);
        Ok(())
    }

    /// Stable digest of the table contents.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for (s, a, q, r) in self.entries() {
            hasher.update(s.to_le_bytes());
            hasher.update([a.delta() as u8]);
            hasher.update(q.to_le_bytes());
            hasher.update(r.to_le_bytes());
        }
        let out = hasher.finalize();
        out.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// R = -J.
pub fn reward_from_error(j: f64) -> Result<f64> {
    if j < 0.0 {
        return Err(Error::Domain(format!("reconstruction error {j} is negative")));
    }
    Ok(-j)
}

/// Softmax distribution over the legal actions at `s`.
///
/// The action distribution is a temperature softmax of Q; illegal actions
/// (Dec at order_min, Inc at order_max) are excluded entirely.
pub fn action_probs(q: &QTable, s: usize, cfg: &PolicyConfig) -> Result<Vec<(Action, f64)>> {
    cfg.validate()?;
    if !(q.order_min..=q.order_max).contains(&s) {
        return Err(Error::Domain(format!(
            "state {s} outside [{}, {}]",
            q.order_min, q.order_max
        )));
    }
    let actions = q.legal_actions(s);
    let scaled: Vec<f64> = actions
        .iter()
        .map(|&a| q.get(s, a).unwrap() / cfg.temperature)
        .collect();
    let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(actions.into_iter().zip(exps).map(|(a, e)| (a, e / z)).collect())
}

/// Sample an action from a distribution produced by [`action_probs`].
pub fn select_action(probs: &[(Action, f64)], rng: &mut SplitRng) -> Result<Action> {
    let total: f64 = probs.iter().map(|(_, p)| p).sum();
    if probs.is_empty() || (total - 1.0).abs() > 1e-9 || probs.iter().any(|(_, p)| *p < 0.0) {
        return Err(Error::Domain(format!("malformed action distribution (sum {total})")));
    }
    let draw = rng.next_f64() * total;
    let mut acc = 0.0;
    for &(a, p) in probs {
        acc += p;
        if draw < acc {
            return Ok(a);
        }
    }
    Ok(probs.last().unwrap().0)
}

/// One Q backup: overwrites Q(s,a) with reward + c * max_a' Q(s',a') and
/// records the reward; returns a new table.
pub fn q_backup(
    q: &QTable,
    s: usize,
    a: Action,
    reward: f64,
    s_next: usize,
    cfg: &PolicyConfig,
) -> Result<QTable> {
    cfg.validate()?;
    if !q.is_legal(s, a) {
        return Err(Error::Domain(format!("illegal action {a:?} at state {s}")));
    }
    if !(q.order_min..=q.order_max).contains(&s_next) {
        return Err(Error::Domain(format!("next state {s_next} out of range")));
    }
    let target = reward + cfg.discount * q.max_q(s_next)?;
    let mut out = q.clone();
    let cell = out.q.get_mut(&(s, a)).unwrap();
    *cell = match cfg.blend {
        None => target,
        Some(alpha) => *cell + alpha * (target - *cell),
    };
    out.r_last.insert((s, a), reward);
    Ok(out)
}

/// Maximum sequence length the partition oracle accepts.
pub const PARTITION_ORACLE_MAX_LEN: usize = 24;

/// Exact minimum-total-J partition of a length-T sequence into consecutive
/// units of order in [2, cap], by dynamic programming over prefixes.
///
/// `unit_errors` maps (start, order) to that unit's J; every feasible unit
/// must be present. Returns (best total, partition as (start, order) pairs).
pub fn partition_oracle(
    unit_errors: &BTreeMap<(usize, usize), f64>,
    len: usize,
    cap: usize,
) -> Result<(f64, Vec<(usize, usize)>)> {
    if len > PARTITION_ORACLE_MAX_LEN {
        return Err(Error::Domain(format!(
            "sequence length {len} exceeds oracle bound {PARTITION_ORACLE_MAX_LEN}"
        )));
    }
    if cap < 2 || len < 2 {
        return Err(Error::Domain(format!("need cap >= 2 and len >= 2, got cap={cap} len={len}")));
    }
    // best[t] = minimal total J over partitions of the prefix [0, t)
    let mut best = vec![f64::INFINITY; len + 1];
    let mut choice: Vec<Option<usize>> = vec![None; len + 1];
    best[0] = 0.0;
    for t in 2..=len {
        for n in 2..=cap.min(t) {
            let start = t - n;
            if best[start].is_finite() {
                let j = *unit_errors.get(&(start, n)).ok_or_else(|| {
                    Error::Domain(format!("missing unit error for (start={start}, order={n})"))
                })?;
                let cand = best[start] + j;
                if cand < best[t] {
                    best[t] = cand;
                    choice[t] = Some(n);
                }
            }
        }
    }
    if !best[len].is_finite() {
        return Err(Error::Domain(format!("length {len} admits no partition with cap {cap}")));
    }
    let mut partition = Vec::new();
    let mut t = len;
    while t > 0 {
        let n = choice[t].unwrap();
        partition.push((t - n, n));
        t -= n;
    }
    partition.reverse();
    Ok((best[len], partition))
}
