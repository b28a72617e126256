"""Unlearning-target selection: loss-trajectory bookkeeping plus the
three-condition rule that picks which samples each network must forget.

A sample becomes a forgetting target for a network when it has a very low
loss or a strong recent loss drop (the memorization signals), unless the
fixed zero-shot oracle agrees with its observed label (in which case it is
probably genuinely clean). The retained training pool is everything not
targeted by either network.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError, StateError


class TrajectoryStore:
    """Per-network, per-checkpoint-epoch arrays of per-sample losses."""

    def __init__(self, n_samples: int):
        self.n_samples = int(n_samples)
        self._data: dict = {}

    def record(self, network: str, epoch: int, losses) -> None:
        losses = np.asarray(losses, dtype=np.float64)
        if losses.shape != (self.n_samples,):
            raise InputError(
                f"expected {self.n_samples} losses, got shape {losses.shape}"
            )
        if not np.all(np.isfinite(losses)):
            raise InputError("losses must be finite")
        key = (network, int(epoch))
        if key in self._data:
            raise StateError(f"losses for net {network} at epoch {epoch} already recorded")
        self._data[key] = losses.copy()

    def get(self, network: str, epoch: int) -> np.ndarray:
        try:
            return self._data[(network, int(epoch))]
        except KeyError:
            raise StateError(f"no losses recorded for net {network} at epoch {epoch}") from None

    def has(self, network: str, epoch: int) -> bool:
        return (network, int(epoch)) in self._data

    def epochs(self, network: str):
        return sorted(e for (n, e) in self._data if n == network)

    def latest_before(self, network: str, epoch: int) -> int:
        earlier = [e for e in self.epochs(network) if e < epoch]
        if not earlier:
            raise StateError(f"no checkpoint for net {network} before epoch {epoch}")
        return earlier[-1]


@dataclass(frozen=True)
class SelectionSets:
    """Forgetting targets per network plus the retained training pool."""

    targets_scratch: frozenset
    targets_embed: frozenset
    retained: np.ndarray
    epoch: int

    def __post_init__(self):
        union = self.targets_scratch | self.targets_embed
        if union & set(self.retained.tolist()):
            raise StateError("retained pool overlaps the unlearning targets")


@dataclass(frozen=True)
class ReferenceSnapshot:
    """Frozen parameter copies taken at selection time."""

    theta_scratch: np.ndarray
    theta_embed: np.ndarray
    epoch: int

    def __post_init__(self):
        for theta in (self.theta_scratch, self.theta_embed):
            theta.setflags(write=False)


def quantile_threshold(values, alpha: float) -> float:
    """Nearest-rank quantile: the ascending value at 0-indexed rank
    floor(alpha*N), clamped to the largest index."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise InputError("cannot take a quantile of an empty array")
    if not (0.0 <= alpha <= 1.0):
        raise InputError(f"alpha must be in [0, 1], got {alpha}")
    rank = min(int(np.floor(alpha * values.size)), values.size - 1)
    return float(np.sort(values)[rank])


def cond_low_loss(losses, p_low: float) -> set:
    """Samples strictly below the low-loss quantile threshold."""
    losses = np.asarray(losses, dtype=np.float64)
    thr = quantile_threshold(losses, p_low)
    return set(np.flatnonzero(losses < thr).tolist())


def cond_loss_drop(losses_now, losses_prev, p_drop: float) -> set:
    """Samples whose loss change since the previous checkpoint falls strictly
    below the p_drop quantile of all changes."""
    losses_now = np.asarray(losses_now, dtype=np.float64)
    losses_prev = np.asarray(losses_prev, dtype=np.float64)
    if losses_now.shape != losses_prev.shape:
        raise InputError("current and previous loss arrays must align")
    delta = losses_now - losses_prev
    thr = quantile_threshold(delta, p_drop)
    return set(np.flatnonzero(delta < thr).tolist())


def cond_oracle_consistent(oracle_argmax, observed_labels) -> set:
    """Samples whose observed label matches the zero-shot oracle's argmax."""
    oracle_argmax = np.asarray(oracle_argmax, dtype=np.int64)
    observed_labels = np.asarray(observed_labels, dtype=np.int64)
    if oracle_argmax.shape != observed_labels.shape:
        raise InputError("oracle table does not cover the label array")
    return set(np.flatnonzero(oracle_argmax == observed_labels).tolist())


@dataclass(frozen=True)
class ConditionToggles:
    low_loss: bool = True
    loss_drop: bool = True
    oracle_consistent: bool = True


def unlearning_ss(losses_now, losses_prev, oracle_argmax, observed_labels,
                  p_low, p_drop, toggles: ConditionToggles = ConditionToggles()):
    """(low-loss union loss-drop) minus oracle-consistent, as index sets.

    Returns the target set plus the three condition sets for auditing.
    """
    d_pl = cond_low_loss(losses_now, p_low) if toggles.low_loss else set()
    d_drop = cond_loss_drop(losses_now, losses_prev, p_drop) if toggles.loss_drop else set()
    d_cs = (
        cond_oracle_consistent(oracle_argmax, observed_labels)
        if toggles.oracle_consistent
        else set()
    )
    return (d_pl | d_drop) - d_cs, d_pl, d_drop, d_cs


@dataclass(frozen=True)
class SelectionAudit:
    """Per-network condition sets retained for the audit file."""

    low_scratch: set
    drop_scratch: set
    low_embed: set
    drop_embed: set
    consistent: set


def unlearning_setup(train_ids, observed_labels, theta_scratch, theta_embed,
                     store: TrajectoryStore, oracle_argmax, epoch: int,
                     p_low: float, p_drop: float,
                     toggles: ConditionToggles = ConditionToggles()):
    """Run selection for both networks at this epoch and snapshot parameters.

    The previous checkpoint is the latest one recorded before this epoch
    (normally epoch - E_UP; the bootstrap checkpoint on the first pass).
    Returns (SelectionSets, ReferenceSnapshot, SelectionAudit).
    """
    train_ids = np.asarray(train_ids, dtype=np.int64)
    per_net = {}
    conds = {}
    for tag in ("scratch", "embed"):
        now = store.get(tag, epoch)
        prev = store.get(tag, store.latest_before(tag, epoch))
        targets, low, drop, consistent = unlearning_ss(
            now, prev, oracle_argmax, observed_labels, p_low, p_drop, toggles
        )
        per_net[tag] = targets
        conds[tag] = (low, drop, consistent)
    union = per_net["scratch"] | per_net["embed"]
    retained = np.asarray(sorted(set(train_ids.tolist()) - union), dtype=np.int64)
    sets = SelectionSets(
        targets_scratch=frozenset(per_net["scratch"]),
        targets_embed=frozenset(per_net["embed"]),
        retained=retained,
        epoch=int(epoch),
    )
    snapshot = ReferenceSnapshot(theta_scratch.copy(), theta_embed.copy(), int(epoch))
    audit = SelectionAudit(
        low_scratch=conds["scratch"][0], drop_scratch=conds["scratch"][1],
        low_embed=conds["embed"][0], drop_embed=conds["embed"][1],
        consistent=conds["scratch"][2],
    )
    return sets, snapshot, audit


def write_selection_audit(path, train_ids, sets: SelectionSets, audit: SelectionAudit) -> None:
    """One row per train sample: membership in each condition and target set."""
    with open(path, "w", newline="\n") as fh:
        fh.write(
            "id,low_loss_scratch,loss_drop_scratch,low_loss_embed,loss_drop_embed,"
            "oracle_consistent,target_scratch,target_embed\n"
        )
        for i in np.asarray(train_ids, dtype=np.int64):
            i = int(i)
            fh.write(
                f"{i},{int(i in audit.low_scratch)},{int(i in audit.drop_scratch)},"
                f"{int(i in audit.low_embed)},{int(i in audit.drop_embed)},"
                f"{int(i in audit.consistent)},"
                f"{int(i in sets.targets_scratch)},{int(i in sets.targets_embed)}\n"
            )
