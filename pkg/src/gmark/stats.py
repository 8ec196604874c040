"""Detection statistics: bit accuracy, exact null FPR, thresholds,
TPR@FPR / AUC evaluation, and multi-user identification.

The null model for matched-bit counts is Bernoulli(0.5) per bit, so the
false positive rate of "at least tau + 1 of l bits match" is the binomial
tail sum_{i=tau+1}^{l} C(l, i) / 2^l, i.e. the regularized incomplete beta
function at 1/2. It is evaluated by log-domain summation, stable through
l = 4096. Hard decisions round vote means at 0.5 with ties going to 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .keys import pack_bits, unpack_bits


def decide_bits(votes: np.ndarray) -> np.ndarray:
    """Hard decision at 0.5; ties go to 1."""
    return (np.asarray(votes, dtype=np.float64) >= 0.5).astype(np.uint8)


def bit_accuracy(votes: np.ndarray, bits: np.ndarray) -> float:
    votes = np.asarray(votes).reshape(-1)
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    if votes.size != bits.size:
        raise ValueError(f"length mismatch {votes.size} vs {bits.size}")
    return float(np.mean(decide_bits(votes) == bits))


def _log_binom_pmf(l: int):
    log_half = l * math.log(2.0)
    lg = math.lgamma
    return np.array(
        [lg(l + 1) - lg(i + 1) - lg(l - i + 1) - log_half for i in range(l + 1)]
    )


def fpr_exact(tau: int, l: int) -> float:
    """P[matched bits > tau] under the per-bit fair-coin null."""
    if not 0 <= tau <= l:
        raise ValueError(f"tau must lie in [0, {l}], got {tau}")
    if tau == l:
        return 0.0
    logp = _log_binom_pmf(l)
    return float(math.fsum(sorted(np.exp(logp[tau + 1 :]))))


@dataclass(frozen=True)
class ThresholdPolicy:
    l: int
    target_fpr: float
    n_users: int
    tau: int


def choose_threshold(l: int, target_fpr: float, n_users: int = 1) -> ThresholdPolicy:
    """Smallest matched-bit threshold whose N-scaled null FPR meets the target."""
    if not 0.0 < target_fpr < 1.0:
        raise ValueError("target_fpr must lie in (0, 1)")
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    logp = _log_binom_pmf(l)
    pmf = np.exp(logp)
    tail = np.concatenate([np.cumsum(pmf[::-1])[::-1][1:], [0.0]])  # tail[t] = P[X > t]
    ok = np.flatnonzero(n_users * tail <= target_fpr)
    tau = int(ok[0])
    return ThresholdPolicy(l=l, target_fpr=float(target_fpr), n_users=int(n_users), tau=tau)


def evaluate(scores_pos, scores_neg, fpr: float = 0.01):
    """Empirical (TPR at the given FPR, rank AUC).

    The threshold is the (k+1)-th largest negative with k = floor(fpr * n_neg);
    only scores strictly above it count as positive, so ties at the
    threshold resolve toward fewer false positives.
    """
    pos = np.asarray(scores_pos, dtype=np.float64).reshape(-1)
    neg = np.asarray(scores_neg, dtype=np.float64).reshape(-1)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need at least one score per class")
    k = int(np.floor(fpr * neg.size))
    thresh = np.sort(neg)[::-1][min(k, neg.size - 1)]
    tpr = float(np.mean(pos > thresh))

    merged = np.concatenate([neg, pos])
    order = np.argsort(merged, kind="mergesort")
    ranks = np.empty(merged.size, dtype=np.float64)
    ranks[order] = np.arange(1, merged.size + 1)
    # average ranks within tie groups
    sorted_vals = merged[order]
    i = 0
    while i < merged.size:
        j = i
        while j + 1 < merged.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    r_pos = np.sum(ranks[neg.size :])
    auc = (r_pos - pos.size * (pos.size + 1) / 2.0) / (pos.size * neg.size)
    return tpr, float(auc)


@dataclass(frozen=True)
class UserRegistry:
    """Per-user XOR keys over one shared model watermark."""

    model_bits: np.ndarray  # uint8 (l,)
    user_ids: tuple[int, ...]
    user_keys: np.ndarray  # uint8 (n_users, l)

    def __post_init__(self):
        if self.user_keys.ndim != 2 or self.user_keys.shape[0] != len(self.user_ids):
            raise ValueError("one key row per user id required")
        if self.user_keys.shape[1] != self.model_bits.size:
            raise ValueError("user key length must match the model watermark")
        uniq = {row.tobytes() for row in self.user_keys}
        if len(uniq) != len(self.user_ids):
            raise ValueError("user keys must be distinct")

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    def user_bits(self, user_id: int) -> np.ndarray:
        idx = self.user_ids.index(user_id)
        return self.model_bits ^ self.user_keys[idx]


def make_registry(model_bits: np.ndarray, n_users: int, seed: int = 0) -> UserRegistry:
    model_bits = np.asarray(model_bits, dtype=np.uint8).reshape(-1)
    rng = np.random.default_rng(seed)
    seen = set()
    rows = []
    while len(rows) < n_users:
        k = rng.integers(0, 2, size=model_bits.size, dtype=np.uint8)
        b = k.tobytes()
        if b not in seen:
            seen.add(b)
            rows.append(k)
    return UserRegistry(
        model_bits=model_bits,
        user_ids=tuple(range(n_users)),
        user_keys=np.stack(rows),
    )


def identify(votes: np.ndarray, registry: UserRegistry, policy: ThresholdPolicy):
    """Best-matching user id, or None when no user clears the threshold.

    Per user the decided bits are XORed with the user key and matched
    against the model watermark; ties break toward the lowest user id.
    Acceptance requires strictly more than policy.tau matches, so the
    null accept probability is exactly the tail FPR(tau).
    """
    decided = decide_bits(votes)
    if decided.size != registry.model_bits.size:
        raise ValueError("vote length does not match the registry watermark")
    targets = registry.user_keys ^ registry.model_bits[None, :]
    matches = np.sum(decided[None, :] == targets, axis=1)
    best = int(np.argmax(matches))
    if int(matches[best]) > policy.tau:
        return registry.user_ids[best], int(matches[best]), matches
    return None, int(matches[best]), matches


def save_registry(registry: UserRegistry, path) -> None:
    doc = [
        {"user_id": uid, "key_hex": pack_bits(registry.user_keys[i])}
        for i, uid in enumerate(registry.user_ids)
    ]
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_registry(model_bits: np.ndarray, path) -> UserRegistry:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"registry file is not valid JSON: {e}") from e
    if not isinstance(doc, list) or not doc:
        raise FormatError("registry must be a non-empty JSON list")
    model_bits = np.asarray(model_bits, dtype=np.uint8).reshape(-1)
    try:
        ids = tuple(int(row["user_id"]) for row in doc)
        keys = np.stack([unpack_bits(row["key_hex"], model_bits.size) for row in doc])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed registry row: {e}") from e
    return UserRegistry(model_bits=model_bits, user_ids=ids, user_keys=keys)
