"""Scenario generator for predictive resource allocation over a cellular strip.

Geometry: N_b base stations on a line at x = cell_radius, 3*cell_radius, ...
(spacing 2*cell_radius), with straight roads parallel to the line at the
configured offsets, all on one side.  Mobile stations move along a uniformly
chosen road at constant speed, direction 0 or 180 degrees.  Each station is
associated per frame to the BS with the highest large-scale gain (the
nearest one on this geometry); exact ties go to the lower BS index.

Residual bandwidth at each BS varies per slot as a Gaussian around the BS's
mean (idle and busy BS types alternate along the line, starting idle),
clipped to [0, W_max]; the frame rate model uses the frame average of the
clipped slot draws.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

BITS_PER_MBYTE = 8e6

DATASET_FORMAT = "eqalloc-scenarios"
DATASET_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    """Network, channel and traffic parameters (defaults: 4-cell strip)."""

    n_bs: int = 4
    cell_radius_m: float = 250.0
    n_tx: int = 8
    p_max_w: float = 40.0
    w_max_hz: float = 20e6
    pathloss_const_db: float = 36.8
    pathloss_slope_db: float = 36.7
    cell_edge_snr_db: float = 5.0
    road_offsets_m: tuple = (50.0, 100.0, 150.0)
    frame_s: float = 1.0
    slots_per_frame: int = 100
    slot_s: float = 0.01
    n_frames: int = 30
    k_max: int = 20
    wbar_idle_hz: float = 10e6
    wbar_busy_hz: float = 5e6
    bw_std_factor: float = 0.2
    speed_min_mps: float = 10.0
    speed_max_mps: float = 25.0
    file_mb_min: float = 1.0
    file_mb_max: float = 1.0

    def __post_init__(self):
        positive = [
            self.n_bs, self.cell_radius_m, self.n_tx, self.p_max_w, self.w_max_hz,
            self.frame_s, self.slots_per_frame, self.slot_s, self.n_frames,
            self.k_max, self.wbar_idle_hz, self.wbar_busy_hz,
            self.speed_min_mps, self.speed_max_mps, self.file_mb_min,
        ]
        if any(v <= 0 for v in positive):
            raise ValueError("all size/physics parameters must be positive")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if abs(self.slots_per_frame * self.slot_s - self.frame_s) > 1e-9 * self.frame_s:
            raise ValueError("slots_per_frame * slot_s must equal frame_s")
        if not all(o > 0 for o in self.road_offsets_m):
            raise ValueError("road offsets must be positive")
        if self.speed_min_mps > self.speed_max_mps:
            raise ValueError("speed range is inverted")
        if self.file_mb_min > self.file_mb_max:
            raise ValueError("file size range is inverted")
        if self.bw_std_factor < 0:
            raise ValueError("bandwidth std factor must be >= 0")

    def bs_positions(self):
        """BS abscissae: (2i+1) * cell_radius, i = 0..n_bs-1."""
        return (2.0 * np.arange(self.n_bs) + 1.0) * self.cell_radius_m

    def segment_length(self):
        return 2.0 * self.n_bs * self.cell_radius_m

    def bs_mean_bandwidth(self):
        """Per-BS mean residual bandwidth: idle, busy, idle, busy, ..."""
        wbar = np.where(np.arange(self.n_bs) % 2 == 0, self.wbar_idle_hz, self.wbar_busy_hz)
        return wbar.astype(float)


def pathloss_gain(distance_m, cfg):
    """Linear large-scale gain 10^-(c0 + c1*log10(d))/10 at distance d > 0."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    loss_db = cfg.pathloss_const_db + cfg.pathloss_slope_db * np.log10(d)
    out = 10.0 ** (-loss_db / 10.0)
    return float(out) if out.ndim == 0 else out


def derive_noise_power(cfg):
    """Noise power that puts the per-antenna receive SNR at the cell edge
    (distance = cell_radius) at the configured dB value.

    The array gain n_tx is applied separately in the rate formula, so the
    effective cell-edge SNR there is cell_edge_snr_db + 10*log10(n_tx).
    """
    edge_rx_w = cfg.p_max_w * pathloss_gain(cfg.cell_radius_m, cfg)
    return edge_rx_w / 10.0 ** (cfg.cell_edge_snr_db / 10.0)


def avg_rate(alpha, w_hz, cfg, noise_w=None):
    """Frame-average achievable rate W * log2(1 + alpha*n_tx*P_max/noise)."""
    alpha = np.asarray(alpha, dtype=float)
    w_hz = np.asarray(w_hz, dtype=float)
    if np.any(alpha < 0) or np.any(w_hz < 0):
        raise ValueError("gain and bandwidth must be >= 0")
    if noise_w is None:
        noise_w = derive_noise_power(cfg)
    out = w_hz * np.log2(1.0 + alpha * cfg.n_tx * cfg.p_max_w / noise_w)
    return float(out) if out.ndim == 0 else out


def draw_fading_power(rng, n_tx):
    """Squared small-scale channel norm: sum of n_tx unit-mean exponentials."""
    return float(rng.exponential(1.0, size=n_tx).sum())


def slot_rate(rng, alpha, w_slot_hz, cfg, noise_w=None, gain=None):
    """Per-slot achievable rate with Rayleigh fading.

    gain overrides the fading draw (gain = n_tx reproduces the frame-average
    rate formula exactly).
    """
    if gain is None:
        gain = draw_fading_power(rng, cfg.n_tx)
    if noise_w is None:
        noise_w = derive_noise_power(cfg)
    return float(w_slot_hz * np.log2(1.0 + alpha * gain * cfg.p_max_w / noise_w))


def nearest_bs(x_m, y_m, cfg):
    """Index of the BS with the highest large-scale gain; ties -> lower index."""
    d = np.hypot(np.asarray(x_m, dtype=float) - cfg.bs_positions(), y_m)
    gains = pathloss_gain(d, cfg)
    return int(np.argmax(gains))


@dataclass
class Scenario:
    """One prediction-window instance, padded to k_max user rows.

    rates R and norm_rates r = R/(B_k * frame_s) are (k_max, n_frames);
    assoc stacks the N_b binary association matrices (n_bs, k_max,
    n_frames); gain holds the large-scale gain to the serving BS.  Rows
    >= k are all zero.  seed is (master_seed, index) provenance or None.
    """

    k: int
    b_bits: np.ndarray
    rates: np.ndarray
    norm_rates: np.ndarray
    assoc: np.ndarray
    gain: np.ndarray
    bs_wbar: np.ndarray
    frame_s: float = 1.0
    seed: tuple | None = None

    def m(self, i):
        """Association matrix of BS i, shape (k_max, n_frames)."""
        return self.assoc[i]

    @property
    def k_max(self):
        return self.rates.shape[0]

    @property
    def n_frames(self):
        return self.rates.shape[1]

    @property
    def n_bs(self):
        return self.assoc.shape[0]

    def check(self):
        """Raise if the padding/association invariants are violated."""
        per_user = self.assoc.sum(axis=0)
        if not np.all(per_user[: self.k] == 1):
            raise ValueError("every active user must have exactly one BS per frame")
        if np.any(per_user[self.k :] != 0):
            raise ValueError("padded users must have no association")
        if np.any(self.rates[self.k :] != 0) or np.any(self.norm_rates[self.k :] != 0):
            raise ValueError("padded users must have zero rates")
        if np.any(self.rates < 0) or np.any(self.norm_rates < 0):
            raise ValueError("rates must be >= 0")


def gen_scenario(rng, k, cfg, seed=None):
    """Generate one scenario with k active users (1 <= k <= k_max).

    Draw order (fixed for reproducibility): road index, start abscissa,
    direction, speed for all users; per-BS slot bandwidth; file sizes.
    """
    if not 1 <= k <= cfg.k_max:
        raise ValueError(f"k={k} outside 1..{cfg.k_max}")
    t_f, t_s = cfg.n_frames, cfg.slots_per_frame
    offsets = np.asarray(cfg.road_offsets_m, dtype=float)

    road = rng.integers(0, offsets.size, size=k)
    x0 = rng.uniform(0.0, cfg.segment_length(), size=k)
    direction = 2.0 * rng.integers(0, 2, size=k) - 1.0
    speed = rng.uniform(cfg.speed_min_mps, cfg.speed_max_mps, size=k)

    wbar = cfg.bs_mean_bandwidth()
    slot_bw = rng.normal(
        loc=wbar[:, None, None],
        scale=cfg.bw_std_factor * wbar[:, None, None],
        size=(cfg.n_bs, t_f, t_s),
    )
    slot_bw = np.clip(slot_bw, 0.0, cfg.w_max_hz)
    frame_bw = slot_bw.mean(axis=2)  # (n_bs, t_f)

    b_mb = rng.uniform(cfg.file_mb_min, cfg.file_mb_max, size=k)
    b_bits_active = b_mb * BITS_PER_MBYTE

    # per-frame positions from straight-line motion, evaluated at frame starts
    frames = np.arange(t_f, dtype=float)
    xs = x0[:, None] + (direction * speed)[:, None] * cfg.frame_s * frames[None, :]
    ys = offsets[road]
    bs_x = cfg.bs_positions()
    dist = np.hypot(xs[:, None, :] - bs_x[None, :, None], ys[:, None, None])  # (k, n_bs, t_f)
    gains = pathloss_gain(dist, cfg)
    serving = np.argmax(gains, axis=1)  # first max wins -> lower BS index on ties

    assoc = np.zeros((cfg.n_bs, cfg.k_max, t_f), dtype=np.int8)
    users = np.arange(k)[:, None]
    frames_i = np.arange(t_f)[None, :]
    assoc[serving, users, frames_i] = 1

    alpha_active = np.take_along_axis(gains, serving[:, None, :], axis=1)[:, 0, :]
    w_serving = frame_bw[serving, frames_i]
    noise_w = derive_noise_power(cfg)
    rates_active = avg_rate(alpha_active, w_serving, cfg, noise_w=noise_w)

    b_bits = np.zeros(cfg.k_max)
    b_bits[:k] = b_bits_active
    rates = np.zeros((cfg.k_max, t_f))
    rates[:k] = rates_active
    norm_rates = np.zeros((cfg.k_max, t_f))
    norm_rates[:k] = rates_active / (b_bits_active[:, None] * cfg.frame_s)
    gain = np.zeros((cfg.k_max, t_f))
    gain[:k] = alpha_active

    sc = Scenario(
        k=k,
        b_bits=b_bits,
        rates=rates,
        norm_rates=norm_rates,
        assoc=assoc,
        gain=gain,
        bs_wbar=wbar,
        frame_s=cfg.frame_s,
        seed=seed,
    )
    sc.check()
    return sc


# --- dataset and config persistence ---------------------------------------

def scenario_to_record(sc):
    return {
        "record": "scenario",
        "seed": None if sc.seed is None else list(sc.seed),
        "K": sc.k,
        "B": sc.b_bits.tolist(),
        "r": sc.norm_rates.tolist(),
        "M": sc.assoc.tolist(),
        "alpha": sc.gain.tolist(),
        "bs_wbar": sc.bs_wbar.tolist(),
        "frame_s": sc.frame_s,
    }


def scenario_from_record(rec, cfg):
    b_bits = np.asarray(rec["B"], dtype=float)
    norm_rates = np.asarray(rec["r"], dtype=float)
    k = int(rec["K"])
    frame_s = float(rec.get("frame_s", cfg.frame_s))
    rates = norm_rates * b_bits[:, None] * frame_s
    sc = Scenario(
        k=k,
        b_bits=b_bits,
        rates=rates,
        norm_rates=norm_rates,
        assoc=np.asarray(rec["M"], dtype=np.int8),
        gain=np.asarray(rec["alpha"], dtype=float),
        bs_wbar=np.asarray(rec["bs_wbar"], dtype=float),
        frame_s=frame_s,
        seed=None if rec.get("seed") is None else tuple(rec["seed"]),
    )
    sc.check()
    return sc


def write_scenarios(path, scenarios, meta):
    """Line-delimited records: one header line, then one scenario per line."""
    header = {"record": "header", "format": DATASET_FORMAT, "version": DATASET_VERSION}
    header.update(meta)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for sc in scenarios:
            fh.write(
                json.dumps(scenario_to_record(sc), sort_keys=True, separators=(",", ":")) + "\n"
            )


def read_scenarios(path, cfg):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty dataset")
    header = json.loads(lines[0])
    if header.get("format") != DATASET_FORMAT:
        raise ValueError(f"{path}: not a scenario dataset")
    if header.get("version") != DATASET_VERSION:
        raise ValueError(f"{path}: unsupported dataset version")
    scenarios = [scenario_from_record(json.loads(ln), cfg) for ln in lines[1:]]
    return scenarios, header


class ConfigError(ValueError):
    """Malformed config file; message carries the offending line number."""


def _parse_value(text):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if "," in text:
        return tuple(float(part) for part in text.split(","))
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_text(text):
    """Parse flat `key = value` lines into a dict; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            out[key] = _parse_value(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return out


def network_config_from_mapping(mapping):
    """Build a NetworkConfig from config-file keys, consuming the ones it owns."""
    fields = NetworkConfig.__dataclass_fields__
    kwargs = {}
    for key in list(mapping):
        if key in fields:
            value = mapping.pop(key)
            if key == "road_offsets_m" and not isinstance(value, tuple):
                value = (float(value),)
            kwargs[key] = value
    try:
        return NetworkConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad network config: {exc}") from exc


def config_with(cfg, **changes):
    """A copy of cfg with the given fields replaced."""
    return replace(cfg, **changes)
