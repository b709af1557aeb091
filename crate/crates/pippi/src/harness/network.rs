//! Deterministic message substrate: only sent messages are delivered, none
//! are duplicated or corrupted, and every message arrives within the policy's
//! delay bound.

use crate::codec::WireMessage;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Clone, Copy, Debug, Deserialize)]
pub struct DeliveryPolicy {
    #[serde(default)]
    pub reorder: bool,
    #[serde(default = "default_max_delay")]
    pub max_delay: u64,
}

fn default_max_delay() -> u64 {
    3
}

impl Default for DeliveryPolicy {
    fn default() -> Self {
        DeliveryPolicy {
            reorder: false,
            max_delay: default_max_delay(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Envelope {
    pub wire: WireMessage,
    pub origin_seq: u64,
    pub deliver_at: u64,
}

pub struct SimNetwork {
    in_flight: Vec<Envelope>,
    policy: DeliveryPolicy,
    rng: ChaCha8Rng,
    pub step: u64,
}

impl SimNetwork {
    pub fn new(policy: DeliveryPolicy, seed: u64) -> Self {
        SimNetwork {
            in_flight: Vec::new(),
            policy,
            rng: ChaCha8Rng::seed_from_u64(seed),
            step: 0,
        }
    }

    pub fn send(&mut self, wire: WireMessage, origin_seq: u64) {
        let delay = if self.policy.reorder {
            self.rng.random_range(1..=self.policy.max_delay.max(1))
        } else {
            1
        };
        self.in_flight.push(Envelope {
            wire,
            origin_seq,
            deliver_at: self.step + delay,
        });
    }

    /// The next deliverable envelope, if any: lowest (due step, origin).
    pub fn deliver(&mut self) -> Option<Envelope> {
        let due = self
            .in_flight
            .iter()
            .enumerate()
            .filter(|(_, e)| e.deliver_at <= self.step)
            .min_by_key(|(_, e)| (e.deliver_at, e.origin_seq))
            .map(|(i, _)| i);
        due.map(|i| self.in_flight.remove(i))
    }

    pub fn idle(&self) -> bool {
        self.in_flight.is_empty()
    }

    pub fn advance(&mut self) {
        self.step += 1;
    }
}
