//! Router behaviour: emission, heralds, swapping, purification, expiry.

use std::f64::consts::FRAC_1_SQRT_2;

use super::layout::{Layout, MemAddr, Role, Side};
use super::params::{purified_fidelity, swapped_fidelity};
use super::{ModelError, Msg, NetModel};
use crate::event::Ctx;
use crate::qsm::QsmError;
use crate::quantum::{circuits, QubitKey, C64};
use crate::rng::EntityRng;
use crate::time::SimTime;
use crate::topology::RouterId;

const PHOTON_BASE: u64 = 1 << 40;
const SWAPPED_PAIR: u64 = 1 << 63;

pub(super) fn memory_key(layout: &Layout, m: MemAddr) -> QubitKey {
    QubitKey::mint(layout.router_entity(m.router).0, m.index as u64)
}

fn zero() -> Vec<C64> {
    vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]
}

fn epr() -> Vec<C64> {
    let h = C64::new(FRAC_1_SQRT_2, 0.0);
    let z = C64::new(0.0, 0.0);
    vec![h, z, z, h]
}

fn side_byte(side: Side) -> u8 {
    match side {
        Side::Left => 0,
        Side::Right => 1,
    }
}

fn link_pair_id(slot: u32, attempt: u32) -> u64 {
    ((slot as u64) << 32) | attempt as u64
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub(super) enum Status {
    Raw,
    Emitting,
    Entangled,
}

#[derive(Clone, Debug)]
pub(super) struct Memory {
    pub key: QubitKey,
    pub status: Status,
    pub partner: Option<MemAddr>,
    pub pair: u64,
    pub fidelity: f64,
    pub epoch: u64,
    pub attempt: u32,
    purifying: bool,
    purified: bool,
    my_bit: Option<u8>,
    released_at: Option<SimTime>,
    peer_ready: Option<SimTime>,
}

pub(super) struct RouterState {
    pub id: RouterId,
    pub mems: Vec<Memory>,
    rng: EntityRng,
    photons: u64,
    swaps: u64,
}

impl RouterState {
    pub fn new(layout: &Layout, r: RouterId, seed: u64) -> Self {
        let e = layout.router_entity(r);
        let mems = (0..layout.memories[r as usize].len() as u32)
            .map(|i| Memory {
                key: memory_key(layout, MemAddr { router: r, index: i }),
                status: Status::Raw,
                partner: None,
                pair: 0,
                fidelity: 0.0,
                epoch: 0,
                attempt: 0,
                purifying: false,
                purified: false,
                my_bit: None,
                released_at: None,
                peer_ready: None,
            })
            .collect();
        RouterState {
            id: r,
            mems,
            rng: EntityRng::derive(seed, &layout.entity_name(e)),
            photons: 0,
            swaps: 0,
        }
    }
}

type Res = Result<(), ModelError>;

impl NetModel {
    fn router(&mut self, r: RouterId) -> &mut RouterState {
        self.routers[r as usize].as_mut().expect("router is local")
    }

    fn mem(&mut self, m: MemAddr) -> &mut Memory {
        &mut self.router(m.router).mems[m.index as usize]
    }

    /// The memory of router `r` in `slot`.
    fn mem_in_slot(&self, r: RouterId, slot: u32) -> (MemAddr, Side) {
        let s = &self.layout.slots[slot as usize];
        if s.left.router == r {
            (s.left, Side::Left)
        } else {
            (s.right, Side::Right)
        }
    }

    fn usable(&self, m: MemAddr) -> bool {
        let mem = &self.routers[m.router as usize].as_ref().unwrap().mems[m.index as usize];
        if mem.status != Status::Entangled || mem.purifying {
            return false;
        }
        let slot = &self.layout.slots[self.layout.info(m).slot as usize];
        match slot.role {
            Role::Plain => true,
            Role::Kept { .. } => mem.purified,
            Role::Sacrificial { .. } => false,
        }
    }

    pub(super) fn router_event(&mut self, r: RouterId, msg: Msg, ctx: &mut Ctx<'_, Msg>) -> Res {
        match msg {
            Msg::Attempt { slot, attempt } => self.on_attempt(r, slot, attempt, ctx),
            Msg::Herald { slot, attempt, outcome } => self.on_herald(r, slot, attempt, outcome, ctx),
            Msg::Ready { slot, released } => {
                let (m, _) = self.mem_in_slot(r, slot);
                self.mem(m).peer_ready = Some(released);
                self.maybe_restart(m, ctx)
            }
            Msg::SwapUpdate {
                target,
                pair,
                new_pair,
                partner,
                fidelity,
                correction,
            } => {
                let mem = self.mem(target);
                if mem.status != Status::Entangled || mem.pair != pair {
                    return Ok(());
                }
                let key = mem.key;
                mem.partner = Some(partner);
                mem.pair = new_pair;
                mem.fidelity = fidelity;
                if let Some([m0, m1]) = correction {
                    if [m0, m1] != [0, 0] {
                        self.qsm.run(&circuits::pauli_correction(m0, m1), &[key], None)?;
                    }
                }
                self.pair_ready(target, ctx)
            }
            Msg::SwapFailed { target, pair } | Msg::Expired { target, pair } => {
                let mem = self.mem(target);
                if mem.status == Status::Entangled && mem.pair == pair {
                    self.release(target, ctx)?;
                }
                Ok(())
            }
            Msg::Expire { mem, epoch } => {
                let m = MemAddr { router: r, index: mem };
                let st = self.mem(m);
                if st.status != Status::Entangled || st.epoch != epoch {
                    return Ok(());
                }
                let (partner, pair) = (st.partner.expect("entangled memory has a partner"), st.pair);
                self.counters.expirations += 1;
                let t = self.layout.router_params[r as usize].cc_delay();
                ctx.schedule_after(
                    t,
                    self.layout.router_entity(partner.router),
                    Msg::Expired { target: partner, pair },
                )?;
                self.release(m, ctx)
            }
            Msg::Purify { kept, pair } => self.on_purify(MemAddr { router: r, index: kept }, pair, ctx),
            Msg::PurifyOutcome { target, pair, bit } => {
                let mem = self.mem(target);
                if mem.status != Status::Entangled || mem.pair != pair {
                    return Ok(());
                }
                let Some(mine) = mem.my_bit.take() else {
                    return Ok(());
                };
                mem.purifying = false;
                if mine == bit {
                    mem.purified = true;
                    mem.fidelity = purified_fidelity(mem.fidelity);
                    self.counters.purify_kept += 1;
                    self.pair_ready(target, ctx)
                } else {
                    self.counters.purify_discarded += 1;
                    self.release(target, ctx)
                }
            }
            Msg::Photon { .. } => Err(QsmError::Protocol("photon delivered to a router".into()).into()),
        }
    }

    fn on_attempt(&mut self, r: RouterId, slot: u32, attempt: u32, ctx: &mut Ctx<'_, Msg>) -> Res {
        let (m, side) = self.mem_in_slot(r, slot);
        let link = self.layout.slots[slot as usize].link;
        let eta = self.layout.router_params[r as usize].memory_efficiency;
        let lp = &self.layout.link_params[link as usize];
        let (half, survival) = (lp.qc_length / 2.0, lp.survival(lp.qc_length / 2.0));
        let delay = lp.fiber_delay(half);
        let bsm = self.layout.bsm_entity(link);
        let same = self.same_worker(bsm);

        let mem = self.mem(m);
        if mem.status != Status::Raw || mem.attempt != attempt {
            return Ok(());
        }
        mem.status = Status::Emitting;
        let key = mem.key;
        self.counters.attempts += 1;

        let rs = self.router(r);
        let mut photon = None;
        if rs.rng.bernoulli(eta) {
            let p = QubitKey::mint(ctx.entity().0, PHOTON_BASE + rs.photons);
            rs.photons += 1;
            let survived = rs.rng.bernoulli(survival);
            self.counters.emissions += 1;
            self.qsm.set(&[key, p], epr())?;
            if survived {
                photon = Some(self.qsm.transfer_out(p, same)?);
            } else {
                self.counters.photons_lost += 1;
                self.qsm.set(&[p], zero())?;
                self.qsm.release(p)?;
            }
        }
        ctx.schedule_after(
            delay,
            bsm,
            Msg::Photon {
                slot,
                side: side_byte(side),
                attempt,
                photon,
            },
        )?;
        Ok(())
    }

    fn on_herald(&mut self, r: RouterId, slot: u32, attempt: u32, outcome: Option<[u8; 2]>, ctx: &mut Ctx<'_, Msg>) -> Res {
        let (m, side) = self.mem_in_slot(r, slot);
        let s = self.layout.slots[slot as usize].clone();
        let rp = &self.layout.router_params[r as usize];
        let coherence = rp.coherence();
        let f0 = self.layout.link_params[s.link as usize].raw_fidelity;
        let mem = self.mem(m);
        if mem.status != Status::Emitting || mem.attempt != attempt {
            return Ok(());
        }
        let Some([m0, m1]) = outcome else {
            mem.status = Status::Raw;
            mem.attempt += 1;
            let next = mem.attempt;
            let t = s.grid.after(ctx.now());
            ctx.schedule_at(t, ctx.entity(), Msg::Attempt { slot, attempt: next })?;
            return Ok(());
        };
        mem.status = Status::Entangled;
        mem.partner = Some(s.other(side));
        mem.pair = link_pair_id(slot, attempt);
        mem.fidelity = f0;
        mem.epoch += 1;
        mem.purified = false;
        mem.purifying = false;
        mem.my_bit = None;
        let (key, epoch) = (mem.key, mem.epoch);
        if side == Side::Right && [m0, m1] != [0, 0] {
            self.qsm.run(&circuits::pauli_correction(m0, m1), &[key], None)?;
        }
        ctx.schedule_after(coherence, ctx.entity(), Msg::Expire { mem: m.index, epoch })?;
        if side == Side::Left {
            self.flows[s.flow as usize].link_pairs += 1;
        }
        match s.role {
            Role::Plain => self.pair_ready(m, ctx),
            Role::Kept { sacrificial } => {
                let (sac, _) = self.mem_in_slot(r, sacrificial);
                self.try_purify(m, sac, ctx)
            }
            Role::Sacrificial { kept } => {
                let (k, _) = self.mem_in_slot(r, kept);
                self.try_purify(k, m, ctx)
            }
        }
    }

    fn try_purify(&mut self, kept: MemAddr, sac: MemAddr, ctx: &mut Ctx<'_, Msg>) -> Res {
        let cc = self.layout.router_params[kept.router as usize].cc_delay();
        let (k, s) = {
            let rs = self.router(kept.router);
            (rs.mems[kept.index as usize].clone(), rs.mems[sac.index as usize].clone())
        };
        let fresh = |m: &Memory| m.status == Status::Entangled && !m.purifying;
        if !fresh(&k) || k.purified || !fresh(&s) {
            return Ok(());
        }
        self.mem(kept).purifying = true;
        self.mem(sac).purifying = true;
        ctx.schedule_after(cc, ctx.entity(), Msg::Purify { kept: kept.index, pair: k.pair })?;
        Ok(())
    }

    fn on_purify(&mut self, kept: MemAddr, pair: u64, ctx: &mut Ctx<'_, Msg>) -> Res {
        let slot = self.layout.info(kept).slot;
        let Role::Kept { sacrificial } = self.layout.slots[slot as usize].role else {
            return Ok(());
        };
        let (sac, _) = self.mem_in_slot(kept.router, sacrificial);
        let k = self.mem(kept).clone();
        if k.status != Status::Entangled || k.pair != pair || !k.purifying {
            self.mem(sac).purifying = false;
            return Ok(());
        }
        let s = self.mem(sac).clone();
        if s.status != Status::Entangled || !s.purifying {
            self.mem(kept).purifying = false;
            return Ok(());
        }
        let sample = self.router(kept.router).rng.next_f64();
        let out = self.qsm.run(&circuits::purification_half(), &[k.key, s.key], Some(sample))?;
        let bit = out.and_then(|o| o.first().copied()).unwrap_or(0);
        self.mem(kept).my_bit = Some(bit);
        self.release(sac, ctx)?;
        let partner = k.partner.expect("entangled memory has a partner");
        let cc = self.layout.router_params[kept.router as usize].cc_delay();
        ctx.schedule_after(
            cc,
            self.layout.router_entity(partner.router),
            Msg::PurifyOutcome { target: partner, pair, bit },
        )?;
        Ok(())
    }

    /// Acts on a pair that just became usable at memory `m`.
    fn pair_ready(&mut self, m: MemAddr, ctx: &mut Ctx<'_, Msg>) -> Res {
        if !self.usable(m) {
            return Ok(());
        }
        let info = self.layout.info(m);
        let s = &self.layout.slots[info.slot as usize];
        let (flow, lane) = (s.flow, s.lane);
        let f = &self.layout.flows[flow as usize];
        let (source, dest, hops) = (f.source, f.dest, f.hops() as u32);
        let pos = self.layout.position(m);
        let partner = self.mem(m).partner.expect("entangled memory has a partner");
        if pos == 0 {
            if partner.router == dest {
                let fidelity = self.mem(m).fidelity;
                let fm = &mut self.flows[flow as usize];
                fm.delivered += 1;
                fm.fidelity_sum += fidelity;
                fm.first_delivery.get_or_insert(ctx.now());
                self.counters.deliveries += 1;
                self.release(m, ctx)?;
            }
            return Ok(());
        }
        if pos == hops {
            if partner.router == source {
                self.release(m, ctx)?;
            }
            return Ok(());
        }
        let left = self.layout.toward_source(flow, pos, lane).unwrap();
        let right = self.layout.toward_dest(flow, pos, lane).unwrap();
        if !self.usable(left) || !self.usable(right) {
            return Ok(());
        }
        let next_hop = self.layout.slots[self.layout.info(right).slot as usize].right;
        let lp = self.mem(left).partner;
        let rp = self.mem(right).partner;
        if lp.map(|p| p.router) != Some(source) || rp != Some(next_hop) {
            return Ok(());
        }
        self.swap(left, right, flow, ctx)
    }

    fn swap(&mut self, left: MemAddr, right: MemAddr, flow: u32, ctx: &mut Ctx<'_, Msg>) -> Res {
        let r = left.router;
        let params = &self.layout.router_params[r as usize];
        let (p_swap, gate, cc) = (params.swap_success, params.gate_fidelity, params.cc_delay());
        let l = self.mem(left).clone();
        let rm = self.mem(right).clone();
        let (src, nxt) = (l.partner.unwrap(), rm.partner.unwrap());
        let src_e = self.layout.router_entity(src.router);
        let nxt_e = self.layout.router_entity(nxt.router);
        let rs = self.router(r);
        let ok = rs.rng.bernoulli(p_swap);
        if ok {
            let sample = rs.rng.next_f64();
            let new_pair = SWAPPED_PAIR | ((r as u64) << 32) | rs.swaps;
            rs.swaps += 1;
            let out = self.qsm.run(&circuits::bell_measurement(), &[l.key, rm.key], Some(sample))?;
            let o = out.unwrap_or_default();
            let correction = [o.first().copied().unwrap_or(0), o.get(1).copied().unwrap_or(0)];
            let fidelity = swapped_fidelity(l.fidelity, rm.fidelity, gate);
            ctx.schedule_after(
                cc,
                src_e,
                Msg::SwapUpdate {
                    target: src,
                    pair: l.pair,
                    new_pair,
                    partner: nxt,
                    fidelity,
                    correction: None,
                },
            )?;
            ctx.schedule_after(
                cc,
                nxt_e,
                Msg::SwapUpdate {
                    target: nxt,
                    pair: rm.pair,
                    new_pair,
                    partner: src,
                    fidelity,
                    correction: Some(correction),
                },
            )?;
            self.counters.swaps_ok += 1;
            self.flows[flow as usize].swaps += 1;
        } else {
            ctx.schedule_after(cc, src_e, Msg::SwapFailed { target: src, pair: l.pair })?;
            ctx.schedule_after(cc, nxt_e, Msg::SwapFailed { target: nxt, pair: rm.pair })?;
            self.counters.swaps_failed += 1;
        }
        self.release(left, ctx)?;
        self.release(right, ctx)
    }

    /// Frees memory `m` and tells the other end of its slot.
    fn release(&mut self, m: MemAddr, ctx: &mut Ctx<'_, Msg>) -> Res {
        let now = ctx.now();
        let info = self.layout.info(m);
        let counterpart = self.layout.slots[info.slot as usize].other(info.side);
        let cc = self.layout.router_params[m.router as usize].cc_delay();
        let mem = self.mem(m);
        let key = mem.key;
        mem.status = Status::Raw;
        mem.partner = None;
        mem.epoch += 1;
        mem.purifying = false;
        mem.purified = false;
        mem.my_bit = None;
        mem.released_at = Some(now);
        self.qsm.set(&[key], zero())?;
        ctx.schedule_after(
            cc,
            self.layout.router_entity(counterpart.router),
            Msg::Ready {
                slot: info.slot,
                released: now,
            },
        )?;
        self.maybe_restart(m, ctx)
    }

    /// Schedules the next attempt once both ends of the slot are free and
    /// have heard from each other.
    fn maybe_restart(&mut self, m: MemAddr, ctx: &mut Ctx<'_, Msg>) -> Res {
        let info = self.layout.info(m);
        let grid = self.layout.slots[info.slot as usize].grid;
        let cc = self.layout.router_params[m.router as usize].cc_delay();
        let mem = self.mem(m);
        let (Some(a), Some(b)) = (mem.released_at, mem.peer_ready) else {
            return Ok(());
        };
        mem.released_at = None;
        mem.peer_ready = None;
        mem.attempt += 1;
        let attempt = mem.attempt;
        let t = grid.after(a.max(b) + cc).max(ctx.now());
        ctx.schedule_at(t, ctx.entity(), Msg::Attempt { slot: info.slot, attempt })?;
        Ok(())
    }
}
