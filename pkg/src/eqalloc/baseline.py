"""Non-predictive earliest-deadline-first scheduling and plan execution.

Every request arrives at the window start and shares the window-end
deadline, so the EDF primary key is degenerate by construction and the
most-remaining-bits tie-break drives the schedule (implemented literally,
with a final tie-break on the user index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lp import verify_plan
from .wireless import derive_noise_power, draw_fading_power


@dataclass
class SimOutcome:
    """Per-user transmission times and completion, per-BS slot utilization.

    Users that do not finish inside the window stay flagged incomplete;
    their time is the time actually spent transmitting, not the window
    length."""

    times_s: np.ndarray
    completed: np.ndarray
    bs_utilization: np.ndarray
    delivered_frac: np.ndarray
    violations: object = None

    @property
    def mean_time_s(self):
        return float(self.times_s.mean()) if self.times_s.size else 0.0


def edf_schedule(sc, rng, cfg, fixed_fading_gain=None):
    """Slot-level EDF simulation of one scenario.

    Per slot and BS: among that BS's associated, unfinished users, serve the
    earliest deadline, ties to the most remaining bits, then to the lowest
    index.  Slot bandwidth is drawn per (frame, slot, BS) when someone is
    served; fading per served user (fixed_fading_gain overrides the draw,
    making rates deterministic when the bandwidth spread is zero too).
    """
    k, t_f, t_s = sc.k, sc.n_frames, cfg.slots_per_frame
    noise_w = derive_noise_power(cfg)
    remaining = sc.b_bits[:k].astype(float).copy()
    deadlines = np.full(k, t_f * cfg.frame_s)  # all requests share the window end
    slots_served = np.zeros(k, dtype=int)
    bs_busy = np.zeros(sc.n_bs, dtype=int)
    delivered = np.zeros(k)

    for j in range(t_f):
        assoc_j = sc.assoc[:, :k, j]  # (n_bs, k)
        for _t in range(t_s):
            for i in range(sc.n_bs):
                cands = [
                    u for u in np.flatnonzero(assoc_j[i]) if remaining[u] > 0.0
                ]
                if not cands:
                    continue
                u = min(cands, key=lambda u: (deadlines[u], -remaining[u], u))
                w = rng.normal(sc.bs_wbar[i], cfg.bw_std_factor * sc.bs_wbar[i])
                w = min(max(w, 0.0), cfg.w_max_hz)
                gain = (
                    draw_fading_power(rng, cfg.n_tx)
                    if fixed_fading_gain is None
                    else fixed_fading_gain
                )
                rate = w * np.log2(1.0 + sc.gain[u, j] * gain * cfg.p_max_w / noise_w)
                bits = rate * cfg.slot_s
                remaining[u] -= bits
                delivered[u] += bits
                slots_served[u] += 1
                bs_busy[i] += 1

    return SimOutcome(
        times_s=slots_served * cfg.slot_s,
        completed=remaining <= 0.0,
        bs_utilization=bs_busy / float(t_f * t_s),
        delivered_frac=np.minimum(delivered / sc.b_bits[:k], 1.0),
    )


def execute_plan(plan, sc, tol=1e-6):
    """Idealized plan execution at the predicted average rates.

    Per-user time is frame_s * sum_j s[k, j]; delivery follows the plan's
    delivery sums exactly, so a plan with delivery sum < 1 is flagged
    incomplete.  Constraint violations are attached, never hidden.
    """
    plan = np.asarray(plan, dtype=float)
    k = sc.k
    check = verify_plan(plan, sc, tol=tol)
    rows = plan[:k]
    times = rows.sum(axis=1) * sc.frame_s
    delivered = (rows * sc.norm_rates[:k]).sum(axis=1)
    usage = np.einsum("kj,ikj->ij", rows, sc.assoc[:, :k])
    return SimOutcome(
        times_s=times,
        completed=delivered >= 1.0 - tol,
        bs_utilization=usage.mean(axis=1),
        delivered_frac=np.minimum(delivered, 1.0),
        violations=None if check.feasible else check,
    )


def execute_plan_slotwise(plan, sc, rng, cfg, fixed_fading_gain=None):
    """Sensitivity check: run a plan against per-slot Rayleigh fading.

    Each user gets floor(s[k,j] * slots_per_frame) slots in frame j (plus
    leftovers by largest fractional remainder while the frame has slots);
    transmission stops early once the file completes.  Not the acceptance
    metric; execute_plan is.
    """
    k, t_f, t_s = sc.k, sc.n_frames, cfg.slots_per_frame
    plan = np.asarray(plan, dtype=float)[:k]
    noise_w = derive_noise_power(cfg)
    remaining = sc.b_bits[:k].astype(float).copy()
    slots_served = np.zeros(k, dtype=int)
    bs_busy = np.zeros(sc.n_bs, dtype=int)
    delivered = np.zeros(k)

    for j in range(t_f):
        for i in range(sc.n_bs):
            users = np.flatnonzero(sc.assoc[i, :k, j])
            if users.size == 0:
                continue
            wanted = plan[users, j] * t_s
            counts = np.floor(wanted).astype(int)
            leftover = int(min(t_s - counts.sum(), np.round(wanted - counts).sum()))
            if leftover > 0:
                order = np.argsort(-(wanted - counts))
                for idx in order[:leftover]:
                    counts[idx] += 1
            for u, n_slots in zip(users, counts):
                for _ in range(n_slots):
                    if remaining[u] <= 0.0:
                        break
                    w = rng.normal(sc.bs_wbar[i], cfg.bw_std_factor * sc.bs_wbar[i])
                    w = min(max(w, 0.0), cfg.w_max_hz)
                    gain = (
                        draw_fading_power(rng, cfg.n_tx)
                        if fixed_fading_gain is None
                        else fixed_fading_gain
                    )
                    rate = w * np.log2(1.0 + sc.gain[u, j] * gain * cfg.p_max_w / noise_w)
                    bits = rate * cfg.slot_s
                    remaining[u] -= bits
                    delivered[u] += bits
                    slots_served[u] += 1
                    bs_busy[i] += 1

    return SimOutcome(
        times_s=slots_served * cfg.slot_s,
        completed=remaining <= 0.0,
        bs_utilization=bs_busy / float(t_f * t_s),
        delivered_frac=np.minimum(delivered / sc.b_bits[:k], 1.0),
    )
