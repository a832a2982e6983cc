"""Unsupervised primal-dual learning of allocation plans.

Two networks per experiment: a plan network mapping the per-BS masked rate
vector x_i = vec(r * M_i) to a raw positive plan (softplus everywhere,
block weight-sharing optional), and a multiplier network mapping the same
input to one nonnegative capacity multiplier per frame.  A normalization
layer divides each user's raw plan row by sum_tau raw[tau] * r[tau], which
enforces the delivery equality by construction, so only the capacity
multipliers are learned.

Training alternates an Adam descent step on the plan network with an Adam
ascent step on the multiplier network, both driven by the batch-mean
Lagrangian: plan mass plus multiplier-weighted capacity excess.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .equivariant import init_equivariant
from .lp import verify_plan
from .nn import Mlp, adam_step, backprop, clip_gradients, init_adam, init_dense, mlp_forward

# generous cap: healthy gradients here are O(1)-O(100); the cap only guards
# the Adam moments against transient near-singular normalization batches
GRAD_CLIP_NORM = 1e6


class NormalizationError(ValueError):
    """An active user's normalization denominator is not positive."""


class TrainingDivergedError(RuntimeError):
    """The training loss became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    """Trainer hyper-parameters; widths default to the paper-scale setup
    (two hidden layers, 50 per block x k_max=20 blocks = 1000 total;
    multiplier net 200, 100; initial learning rate 0.01)."""

    t_f: int = 30
    k_max: int = 20
    hidden_per_block: tuple = (50, 50)
    lambda_hidden: tuple = (200, 100)
    epochs: int = 200
    batch_size: int = 0  # 0 = full batch
    learning_rate: float = 0.01  # initial; decays as lr/(1 + lr_decay*epoch)
    lr_decay: float = 0.0
    nu_step: float = 1.0  # price step of the projected multiplier update
    seed: int = 0
    sharing: bool = True
    supervised: bool = False

    def __post_init__(self):
        if self.t_f < 1 or self.k_max < 1:
            raise ValueError("t_f and k_max must be >= 1")
        if not self.hidden_per_block or any(w < 1 for w in self.hidden_per_block):
            raise ValueError("plan-net hidden widths must be positive")
        if not self.lambda_hidden or any(w < 1 for w in self.lambda_hidden):
            raise ValueError("multiplier-net hidden widths must be positive")
        if self.epochs < 0 or self.batch_size < 0:
            raise ValueError("epochs and batch_size must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.lr_decay < 0:
            raise ValueError("lr_decay must be >= 0")
        if self.nu_step <= 0:
            raise ValueError("nu_step must be positive")


def train_config_from_mapping(mapping):
    """Build a TrainConfig from config-file keys, consuming the ones it owns."""
    fields_ = TrainConfig.__dataclass_fields__
    kwargs = {}
    for key in list(mapping):
        if key in fields_:
            value = mapping.pop(key)
            if key in ("hidden_per_block", "lambda_hidden") and not isinstance(value, tuple):
                value = (int(value),)
            elif isinstance(value, tuple):
                value = tuple(int(v) for v in value)
            kwargs[key] = value
    return TrainConfig(**kwargs)


@dataclass
class Sample:
    """One plan-network input: a (scenario, BS) pair.

    rates holds the masked per-user rates r * M_i (k_max, t_f) used both as
    the input blocks and by the normalization layer; label is the masked
    oracle plan for supervised training.
    """

    rates: np.ndarray
    assoc: np.ndarray
    scenario_id: tuple | None = None
    bs: int = 0
    label: np.ndarray | None = None

    @property
    def x(self):
        """Input vector: user blocks of t_f masked rates each."""
        return self.rates.reshape(-1)


def build_input(sc, i):
    """The plan-network input of BS i: rates masked to its serving frames."""
    if not 0 <= i < sc.n_bs:
        raise ValueError(f"BS index {i} outside 0..{sc.n_bs - 1}")
    masked = sc.norm_rates * sc.assoc[i]
    return Sample(rates=masked, assoc=np.asarray(sc.assoc[i]), scenario_id=sc.seed, bs=i)


def samples_from_scenarios(scenarios):
    """All (scenario, BS) samples, scenario-major order."""
    out = []
    for sc in scenarios:
        for i in range(sc.n_bs):
            out.append(build_input(sc, i))
    return out


def attach_labels(samples, solutions_by_id):
    """Supervised labels: the oracle plan masked to each sample's BS.

    solutions_by_id maps scenario_id -> full (k, t_f) or (k_max, t_f) plan.
    """
    for s in samples:
        plan = solutions_by_id[s.scenario_id]
        padded = np.zeros_like(s.rates)
        padded[: plan.shape[0]] = plan
        s.label = padded * s.assoc
    return samples


def build_dnn_s(cfg, rng):
    """Plan network; equivariant stack when sharing, dense ablation with the
    same total widths otherwise.  Softplus in hidden and output layers."""
    k, t_f = cfg.k_max, cfg.t_f
    widths = list(cfg.hidden_per_block)
    if cfg.sharing:
        layers = []
        prev = t_f
        for w in widths:
            layers.append(init_equivariant(rng, w, prev, k, "softplus"))
            prev = w
        layers.append(init_equivariant(rng, t_f, prev, k, "softplus"))
        return Mlp(layers)
    layers = []
    prev = k * t_f
    for w in widths:
        layers.append(init_dense(rng, k * w, prev, "softplus"))
        prev = k * w
    layers.append(init_dense(rng, k * t_f, prev, "softplus"))
    return Mlp(layers)


def build_dnn_lambda(cfg, rng):
    """Multiplier network: fully connected (the per-frame multiplier couples
    all users, so no block sharing applies), softplus everywhere."""
    layers = []
    prev = cfg.k_max * cfg.t_f
    for w in cfg.lambda_hidden:
        layers.append(init_dense(rng, w, prev, "softplus"))
        prev = w
    layers.append(init_dense(rng, cfg.t_f, prev, "softplus"))
    return Mlp(layers)


@dataclass
class TrainState:
    """Networks, their Adam moments, and append-only histories."""

    dnn_s: Mlp
    dnn_lambda: Mlp
    adam_s: object
    adam_lambda: object
    cfg: TrainConfig
    epoch: int = 0
    loss_history: list = field(default_factory=list)
    gap_history: list = field(default_factory=list)


def init_train_state(cfg):
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2,)))
    dnn_s = build_dnn_s(cfg, rng)
    dnn_l = build_dnn_lambda(cfg, rng)
    return TrainState(
        dnn_s=dnn_s,
        dnn_lambda=dnn_l,
        adam_s=init_adam(dnn_s.parameters(), lr=cfg.learning_rate),
        adam_lambda=init_adam(dnn_l.parameters(), lr=cfg.learning_rate),
        cfg=cfg,
    )


def dnn_s_forward(state, sample):
    """Raw (un-normalized) plan for one sample; strictly positive."""
    return mlp_forward(state.dnn_s, sample.x)


def dnn_lambda_forward(state, sample):
    """Per-frame capacity multipliers for one sample; nonnegative."""
    return mlp_forward(state.dnn_lambda, sample.x)


def normalize_plan(raw, rates):
    """Scale each user's raw plan row so its delivery sum equals one.

    raw: (k_max*t_f,) or (k_max, t_f) positive; rates: (k_max, t_f) masked
    rates.  Rows whose rates are all zero (padding, or users never served
    by this BS) return zero rows.  An active row with a non-positive
    denominator raises NormalizationError.
    """
    rates = np.asarray(rates, dtype=float)
    raw = np.asarray(raw, dtype=float).reshape(rates.shape)
    active = (rates > 0).any(axis=1)
    denom = (raw * rates).sum(axis=1)
    bad = active & ~(denom > 0)
    if np.any(bad):
        raise NormalizationError(
            f"users {np.flatnonzero(bad).tolist()}: normalization denominator "
            "is not positive (raw plan must be positive on served frames)"
        )
    out = np.zeros_like(raw)
    out[active] = raw[active] / denom[active, None]
    return out


# Training drives the raw plan toward extreme ratios (the optimum is
# bang-bang per user); flooring the raw values keeps every active user's
# denominator strictly positive in floating point while being far below
# any resolvable plan entry, so the delivery identity is untouched.
RAW_FLOOR = 1e-30


def _normalize_batch(raw, rates):
    """Batched, floored normalization: raw (n, k, t), rates (n, k, t) ->
    (plan, denom, active mask, floored mask)."""
    if not np.all(np.isfinite(raw)) or np.any(raw < 0):
        raise NormalizationError("raw plan must be finite and nonnegative")
    floored = raw < RAW_FLOOR
    raw = np.maximum(raw, RAW_FLOOR)
    active = (rates > 0).any(axis=2)
    denom = (raw * rates).sum(axis=2)
    safe = np.where(denom > 0, denom, 1.0)
    plan = np.where(active[:, :, None], raw / safe[:, :, None], 0.0)
    return plan, safe, active, floored


def _normalize_backward(grad_plan, rates, plan, denom, active, floored):
    """Chain rule through the normalization: d/draw of sum(grad_plan * plan).

    Floored entries are constants of the floored forward pass, so their
    gradient is zero."""
    inner = (grad_plan * plan).sum(axis=2)
    grad_raw = (grad_plan - rates * inner[:, :, None]) / denom[:, :, None]
    grad_raw = np.where(active[:, :, None] & ~floored, grad_raw, 0.0)
    return grad_raw


def lagrangian_terms(plan, nu, assoc):
    """Per-sample cost pieces: (plan mass, multiplier-weighted capacity excess)."""
    plan = np.asarray(plan, dtype=float)
    usage = (plan * assoc).sum(axis=0)
    return float(plan.sum()), float((nu * (usage - 1.0)).sum())


def _batch_arrays(samples):
    x = np.stack([s.x for s in samples])
    rates = np.stack([s.rates for s in samples])
    assoc = np.stack([np.asarray(s.assoc, dtype=float) for s in samples])
    return x, rates, assoc


def empirical_lagrangian(samples, state):
    """Batch-mean Lagrangian and its gradients w.r.t. both networks.

    Returns (value, grads_s, grads_lambda) with gradient lists aligned to
    the networks' parameters().
    """
    x, rates, assoc = _batch_arrays(samples)
    n = x.shape[0]
    raw = mlp_forward(state.dnn_s, x).reshape(rates.shape)
    plan, denom, active, floored = _normalize_batch(raw, rates)
    nu = mlp_forward(state.dnn_lambda, x)
    usage = (plan * assoc).sum(axis=1)  # (n, t_f)
    excess = usage - 1.0
    value = float((plan.sum(axis=(1, 2)) + (nu * excess).sum(axis=1)).mean())

    grad_plan = (1.0 + nu[:, None, :] * assoc) / n
    grad_raw = _normalize_backward(grad_plan, rates, plan, denom, active, floored)
    grads_s, _ = backprop(state.dnn_s, x, grad_raw.reshape(n, -1))
    grads_l, _ = backprop(state.dnn_lambda, x, excess / n)
    return value, grads_s, grads_l


def supervised_loss(samples, state):
    """Mean squared error of normalized plans against oracle labels."""
    if any(s.label is None for s in samples):
        raise ValueError("supervised training needs labels on every sample")
    x, rates, _ = _batch_arrays(samples)
    labels = np.stack([s.label for s in samples])
    n = x.shape[0]
    raw = mlp_forward(state.dnn_s, x).reshape(rates.shape)
    plan, denom, active, floored = _normalize_batch(raw, rates)
    diff = plan - labels
    value = float((diff**2).mean())
    grad_plan = 2.0 * diff / diff.size
    grad_raw = _normalize_backward(grad_plan, rates, plan, denom, active, floored)
    grads_s, _ = backprop(state.dnn_s, x, grad_raw.reshape(n, -1))
    return value, grads_s


def train(dataset, cfg, test_scenarios=None, solutions=None, eval_every=0):
    """Run the alternating min-max loop (or supervised descent) over epochs.

    dataset: list of Samples.  With eval_every > 0 and a test set plus
    oracle solutions, records (epoch, gap, capacity violation) into
    gap_history after every eval_every epochs.  Deterministic given
    cfg.seed.
    """
    if not dataset:
        raise ValueError("empty dataset")
    state = init_train_state(cfg)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(4,)))
    n = len(dataset)
    batch = cfg.batch_size if cfg.batch_size else n

    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate / (1.0 + cfg.lr_decay * epoch)
        state.adam_s.lr = lr
        state.adam_lambda.lr = lr
        if batch >= n:
            batches = [dataset]
        else:
            order = shuffle_rng.permutation(n)
            batches = [
                [dataset[j] for j in order[i : i + batch]] for i in range(0, n, batch)
            ]
        epoch_loss = 0.0
        for chunk in batches:
            if cfg.supervised:
                value, grads_s = supervised_loss(chunk, state)
                grads_l = None
            else:
                value, grads_s, grads_l = empirical_lagrangian(chunk, state)
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss {value} at epoch {state.epoch}"
                )
            grads_s = clip_gradients(grads_s, GRAD_CLIP_NORM)
            new_p, state.adam_s = adam_step(
                state.dnn_s.parameters(), grads_s, state.adam_s, sign=-1
            )
            state.dnn_s.set_parameters(new_p)
            if grads_l is not None:
                grads_l = clip_gradients(grads_l, GRAD_CLIP_NORM)
                new_l, state.adam_lambda = adam_step(
                    state.dnn_lambda.parameters(), grads_l, state.adam_lambda, sign=+1
                )
                state.dnn_lambda.set_parameters(new_l)
            epoch_loss += value * len(chunk)
        state.epoch = epoch + 1
        state.loss_history.append(epoch_loss / n)
        if (
            eval_every
            and test_scenarios is not None
            and solutions is not None
            and (epoch + 1) % eval_every == 0
        ):
            report = evaluate_gap(state, test_scenarios, solutions)
            state.gap_history.append(
                (state.epoch, report.gap, report.mean_capacity_violation)
            )
    return state


# --- evaluation ------------------------------------------------------------

def assemble_plan(state, sc):
    """Global plan (k, t_f) from the per-BS outputs: each user's allocation
    is taken from the BS serving it in each frame."""
    total = np.zeros((sc.k_max, sc.n_frames))
    for i in range(sc.n_bs):
        sample = build_input(sc, i)
        raw = dnn_s_forward(state, sample).reshape(1, sc.k_max, sc.n_frames)
        plan_i, _, _, _ = _normalize_batch(raw, sample.rates[None])
        total += plan_i[0] * sc.assoc[i]
    return total[: sc.k]


def repair_plan(plan, sc, tol=1e-9):
    """Make a learned plan feasible: scale down over-capacity (BS, frame)
    columns, then top up delivery deficits greedily in the highest-rate
    frames with remaining capacity.  Over-delivery is left as is (it counts
    against the plan's mass).  Returns the repaired copy."""
    k, t_f = sc.k, sc.n_frames
    s = np.array(plan[:k], dtype=float)
    np.maximum(s, 0.0, out=s)
    assoc = sc.assoc[:, :k]
    usage = np.einsum("kj,ikj->ij", s, assoc)
    for i, j in zip(*np.nonzero(usage > 1.0 + tol)):
        users = np.flatnonzero(assoc[i, :, j])
        s[users, j] /= usage[i, j]
    usage = np.einsum("kj,ikj->ij", s, assoc)
    r = sc.norm_rates[:k]
    serving = np.argmax(sc.assoc[:, :k], axis=0)  # (k, t_f)
    for u in range(k):
        deficit = 1.0 - float((s[u] * r[u]).sum())
        if deficit <= tol:
            continue
        for j in np.argsort(-r[u]):
            if r[u, j] <= 0 or deficit <= tol:
                continue
            i = serving[u, j]
            headroom = 1.0 - usage[i, j]
            if headroom <= tol:
                continue
            add = min(headroom, deficit / r[u, j])
            s[u, j] += add
            usage[i, j] += add
            deficit -= add * r[u, j]
    return s


@dataclass
class GapReport:
    gap: float
    mean_capacity_violation: float
    mean_qos_residual: float
    learned_mass: float
    optimal_mass: float
    n_scenarios: int
    incomplete_users: int


def gap_from_plans(plans, scenarios, solutions, repair=True):
    """Aggregate objective gap of given plans against oracle solutions.

    gap = (sum of learned plan mass - sum of optimal mass) / optimal mass,
    with learned plans feasibility-repaired first when repair=True.
    Pre-repair constraint violations are reported separately, never folded
    silently into the gap.
    """
    tot_learned = 0.0
    tot_opt = 0.0
    cap_viols = []
    qos_resids = []
    incomplete = 0
    for plan, sc, sol in zip(plans, scenarios, solutions):
        check = verify_plan(plan, sc, tol=1e-6)
        cap_viols.append(check.capacity_residual)
        qos_resids.append(check.qos_residual)
        final = repair_plan(plan, sc) if repair else np.asarray(plan[: sc.k], dtype=float)
        delivered = (final * sc.norm_rates[: sc.k]).sum(axis=1)
        incomplete += int((delivered < 1.0 - 1e-6).sum())
        tot_learned += float(final.sum())
        tot_opt += float(sol.objective)
    gap = (tot_learned - tot_opt) / tot_opt if tot_opt else 0.0
    return GapReport(
        gap=float(gap),
        mean_capacity_violation=float(np.mean(cap_viols)) if cap_viols else 0.0,
        mean_qos_residual=float(np.mean(qos_resids)) if qos_resids else 0.0,
        learned_mass=tot_learned,
        optimal_mass=tot_opt,
        n_scenarios=len(scenarios),
        incomplete_users=incomplete,
    )


def evaluate_gap(state, scenarios, solutions, repair=True):
    """Objective gap of the trained plan network against the LP oracle."""
    plans = [assemble_plan(state, sc) for sc in scenarios]
    return gap_from_plans(plans, scenarios, solutions, repair=repair)


def sample_complexity_sweep(sizes, cfg, target_gap, train_pool, test_scenarios, solutions):
    """Smallest training-set size (in scenarios) reaching the target gap.

    Trains a fresh model per size on the first `size` scenarios of the
    pool, each for the configured number of epochs.  Returns (threshold or
    None, [(size, gap), ...]).
    """
    if list(sizes) != sorted(sizes):
        raise ValueError("sizes must be ascending")
    curve = []
    threshold = None
    for size in sizes:
        if size > len(train_pool):
            raise ValueError(f"pool has only {len(train_pool)} scenarios, need {size}")
        samples = samples_from_scenarios(train_pool[:size])
        state = train(samples, cfg)
        report = evaluate_gap(state, test_scenarios, solutions)
        curve.append((size, report.gap))
        if threshold is None and report.gap <= target_gap:
            threshold = size
    return threshold, curve


def epochs_to_target(cfg, train_scenarios, test_scenarios, solutions, target_gap,
                     eval_every=1):
    """First epoch at which the test gap reaches the target, with the curve."""
    samples = samples_from_scenarios(train_scenarios)
    state = train(
        samples, cfg, test_scenarios=test_scenarios, solutions=solutions,
        eval_every=eval_every,
    )
    for epoch, gap, _ in state.gap_history:
        if gap <= target_gap:
            return epoch, state
    return None, state


def count_parameters(net):
    return net.n_params
