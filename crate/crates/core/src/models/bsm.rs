//! Midpoint Bell-state measurement nodes.

use std::collections::HashMap;

use super::layout::Layout;
use super::params::coincident;
use super::{ModelError, Msg, NetModel};
use crate::event::Ctx;
use crate::qsm::QsmError;
use crate::quantum::{circuits, QubitKey};
use crate::rng::EntityRng;
use crate::time::SimTime;

#[derive(Clone, Debug)]
struct Arrival {
    side: u8,
    time: SimTime,
    photon: Option<QubitKey>,
}

pub(super) struct BsmState {
    rng: EntityRng,
    pending: HashMap<(u32, u32), Arrival>,
    /// Last registered click per detector, left then right.
    last_click: [Option<SimTime>; 2],
}

impl BsmState {
    pub fn new(layout: &Layout, link: u32, seed: u64) -> Self {
        BsmState {
            rng: EntityRng::derive(seed, &layout.entity_name(layout.bsm_entity(link))),
            pending: HashMap::new(),
            last_click: [None; 2],
        }
    }
}

impl NetModel {
    pub(super) fn bsm_event(&mut self, link: u32, msg: Msg, ctx: &mut Ctx<'_, Msg>) -> Result<(), ModelError> {
        let Msg::Photon {
            slot,
            side,
            attempt,
            photon,
        } = msg
        else {
            return Err(QsmError::Protocol(format!("unexpected {msg:?} at a BSM node")).into());
        };
        let key = photon.map(|p| {
            let k = p.key();
            self.qsm.receive(p);
            k
        });
        let arrival = Arrival {
            side,
            time: ctx.now(),
            photon: key,
        };
        let bsm = self.bsms[link as usize].as_mut().expect("BSM node is local");
        let Some(first) = bsm.pending.remove(&(slot, attempt)) else {
            bsm.pending.insert((slot, attempt), arrival);
            return Ok(());
        };
        let (l, r) = if first.side == 0 { (first, arrival) } else { (arrival, first) };

        let p = &self.layout.link_params[link as usize];
        let (eta, dead, res) = (p.detector_efficiency, p.dead_time(), p.resolution_window());
        let (dark, dark_p, success) = (p.dark_count > 0.0, p.dark_click(), p.bsm_success);

        let mut clicks = [None; 2];
        for (i, a) in [&l, &r].into_iter().enumerate() {
            if a.photon.is_none() || !bsm.rng.bernoulli(eta) {
                continue;
            }
            let blind = bsm.last_click[i].is_some_and(|t| a.time < t + dead);
            if !blind {
                bsm.last_click[i] = Some(a.time);
                clicks[i] = Some(a.time);
            }
        }
        let dark_hit = dark && {
            let d0 = bsm.rng.bernoulli(dark_p);
            let d1 = bsm.rng.bernoulli(dark_p);
            d0 || d1
        };
        let ok = match clicks {
            [Some(a), Some(b)] => !dark_hit && coincident(a, b, res) && bsm.rng.bernoulli(success),
            _ => false,
        };

        let outcome = if ok {
            let (pl, pr) = (l.photon.unwrap(), r.photon.unwrap());
            let sample = bsm.rng.next_f64();
            let out = self.qsm.run(&circuits::bell_measurement(), &[pl, pr], Some(sample))?;
            let o = out.unwrap_or_default();
            self.counters.heralds_ok += 1;
            Some([o.first().copied().unwrap_or(0), o.get(1).copied().unwrap_or(0)])
        } else {
            self.counters.heralds_failed += 1;
            None
        };
        for k in [l.photon, r.photon].into_iter().flatten() {
            self.qsm.release(k)?;
        }

        let s = &self.layout.slots[slot as usize];
        let cc = p.cc_delay();
        let (left, right) = (self.layout.router_entity(s.left.router), self.layout.router_entity(s.right.router));
        ctx.schedule_after(cc, left, Msg::Herald { slot, attempt, outcome })?;
        ctx.schedule_after(cc, right, Msg::Herald { slot, attempt, outcome })?;
        Ok(())
    }
}
