"""Split-first construction of PN / PU / UU / Pconf views from labeled records,
and the weak validation criteria used to pick between candidate predictors.

Random streams: every draw uses ``child_rng(seed, split_name, regime, part)``
so the positive and unlabeled PU bags (and the two UU sources) come from
independent streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decon import WeakBags
from .errors import DataError
from .postproc import WeakNllObjective, weak_nll
from .rng import child_rng
from .witness import Records

SPLIT_NAMES = ("train", "correction", "validation", "test")


@dataclass(frozen=True)
class SplitPlan:
    test_fraction: float = 0.2
    val_fraction: float = 0.2
    correction_fraction: float = 0.4
    test_seed: int = 42
    correction_seed: int = 50
    run_seed: int = 0

    def __post_init__(self):
        for name in ("test_fraction", "val_fraction", "correction_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise DataError(f"{name}={v} must lie in (0, 1)")
        if self.test_fraction + self.val_fraction >= 1.0:
            raise DataError("test and validation fractions leave no training data")


@dataclass(frozen=True)
class WeakViewParams:
    regime: str = "pu"
    lambda_p: float = 0.5
    lambda_u: float = 1.0
    gamma1: float = 0.2
    gamma2: float = 0.2
    lambda_1: float = 1.0
    lambda_2: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.lambda_p, self.lambda_u, self.lambda_1, self.lambda_2) < 0:
            raise ValueError("source rates must be non-negative")
        if not (0.0 <= self.gamma1 <= 1.0 and 0.0 <= self.gamma2 <= 1.0):
            raise ValueError("gamma1 and gamma2 must lie in [0, 1]")


def split(n: int, plan: SplitPlan) -> dict[str, np.ndarray]:
    """Disjoint, exhaustive index sets ``train / correction / validation / test``.

    Test is drawn first (``test_seed``), validation from the remainder
    (``run_seed``), and the correction split is carved out of what is left
    (``correction_seed``).  Index arrays are returned sorted.
    """
    n_test = round(plan.test_fraction * n)
    n_val = round(plan.val_fraction * n)
    n_rest = n - n_test - n_val
    n_corr = round(plan.correction_fraction * n_rest)
    sizes = {"test": n_test, "validation": n_val, "correction": n_corr, "train": n_rest - n_corr}
    empty = [k for k, v in sizes.items() if v <= 0]
    if empty:
        raise DataError(f"split plan leaves empty split(s) {empty} for n={n}")

    perm = np.random.default_rng(plan.test_seed).permutation(n)
    test, rest = perm[:n_test], perm[n_test:]
    rest = rest[np.random.default_rng(plan.run_seed).permutation(rest.shape[0])]
    val, train_all = rest[:n_val], rest[n_val:]
    train_all = train_all[np.random.default_rng(plan.correction_seed).permutation(train_all.shape[0])]
    corr, train = train_all[:n_corr], train_all[n_corr:]
    return {"train": np.sort(train), "correction": np.sort(corr), "validation": np.sort(val), "test": np.sort(test)}


def _with_ids(records: Records) -> Records:
    if records.ids is not None:
        return records
    return Records(records.score, records.groups, records.label, records.conf, np.arange(len(records)))


def _labels(records: Records) -> np.ndarray:
    if records.label is None:
        raise DataError("weak views are simulated from labeled records; label column missing")
    return records.label


def _meta(records: Records, params: WeakViewParams, split_name: str, **extra) -> dict:
    y = _labels(records)
    return {"regime": params.regime, "split": split_name, "seed": params.seed,
            "n_split": int(len(records)), "n_pos_split": int(y.sum()), **extra}


def make_pn(records: Records, params: WeakViewParams = WeakViewParams("pn"), split_name: str = "all") -> WeakBags:
    records = _with_ids(records)
    y = _labels(records)
    return WeakBags({"lab": records}, float(y.mean()), _meta(records, params, split_name))


def make_pu(records: Records, params: WeakViewParams = WeakViewParams(), split_name: str = "all") -> WeakBags:
    """Positive bag drawn with replacement from the split positives, unlabeled bag from the whole split."""
    records = _with_ids(records)
    y = _labels(records)
    pos_idx = np.flatnonzero(y == 1)
    if pos_idx.size == 0:
        raise DataError("PU view needs at least one positive in the split")
    n_p = round(params.lambda_p * pos_idx.size)
    n_u = round(params.lambda_u * len(records))
    rng_p = child_rng(params.seed, split_name, "pu", "pos")
    rng_u = child_rng(params.seed, split_name, "pu", "unl")
    pos = records.take(pos_idx[rng_p.integers(0, pos_idx.size, n_p)])
    unl = records.take(rng_u.integers(0, len(records), n_u))
    strip = lambda r: Records(r.score, r.groups, None, r.conf, r.ids)  # noqa: E731
    return WeakBags({"pos": strip(pos), "unl": strip(unl)}, float(y.mean()),
                    _meta(records, params, split_name, lambda_p=params.lambda_p, lambda_u=params.lambda_u,
                          counts={"pos": n_p, "unl": n_u}))


def _uu_source(records, pos_idx, neg_idx, n, n_pos, rng):
    take_pos = pos_idx[rng.integers(0, pos_idx.size, n_pos)]
    take_neg = neg_idx[rng.integers(0, neg_idx.size, n - n_pos)]
    idx = np.concatenate([take_pos, take_neg])
    idx = idx[rng.permutation(idx.size)]
    r = records.take(idx)
    return Records(r.score, r.groups, None, r.conf, r.ids)


def make_uu(records: Records, params: WeakViewParams = WeakViewParams("uu"), split_name: str = "all") -> WeakBags:
    """Two mixtures with positive fractions ``1 - gamma1`` and ``gamma2``.

    Source ``k`` takes ``round(theta_k * n_k)`` positive-pool draws and fills
    the rest from the negative pool, all with replacement, then shuffles.
    """
    records = _with_ids(records)
    y = _labels(records)
    pos_idx, neg_idx = np.flatnonzero(y == 1), np.flatnonzero(y == 0)
    if pos_idx.size == 0 or neg_idx.size == 0:
        raise DataError("UU view needs both classes in the split")
    n1 = round(params.lambda_1 * len(records))
    n2 = round(params.lambda_2 * len(records))
    k1 = round((1.0 - params.gamma1) * n1)
    k2 = round(params.gamma2 * n2)
    u1 = _uu_source(records, pos_idx, neg_idx, n1, k1, child_rng(params.seed, split_name, "uu", "u1"))
    u2 = _uu_source(records, pos_idx, neg_idx, n2, k2, child_rng(params.seed, split_name, "uu", "u2"))
    return WeakBags({"u1": u1, "u2": u2}, float(y.mean()),
                    _meta(records, params, split_name, gamma1=params.gamma1, gamma2=params.gamma2,
                          counts={"u1": n1, "u2": n2, "u1_pos": k1, "u2_pos": k2}))


def make_pconf(records: Records, teacher=None, params: WeakViewParams = WeakViewParams("pconf"),
               split_name: str = "all") -> WeakBags:
    """All split positives, each carrying its teacher confidence.

    ``teacher`` is aligned with ``records``; when omitted the records' own
    ``conf`` column is used.
    """
    records = _with_ids(records)
    y = _labels(records)
    if teacher is None:
        teacher = records.conf
    if teacher is None:
        raise DataError("Pconf view needs a teacher score for every positive")
    teacher = np.asarray(teacher, dtype=float).reshape(-1)
    if teacher.shape[0] != len(records):
        raise DataError("teacher scores must align with the split records")
    pos_idx = np.flatnonzero(y == 1)
    if pos_idx.size == 0:
        raise DataError("Pconf view needs at least one positive in the split")
    r = teacher[pos_idx]
    if np.any(~np.isfinite(r)) or np.any(r <= 0.0) or np.any(r > 1.0):
        raise DataError("teacher confidences must lie in (0, 1]")
    pos = records.take(pos_idx)
    bag = Records(pos.score, pos.groups, None, r, pos.ids)
    return WeakBags({"pconf": bag}, float(y.mean()),
                    _meta(records, params, split_name, counts={"pconf": int(pos_idx.size)}))


def make_view(records: Records, params: WeakViewParams, split_name: str = "all", teacher=None) -> WeakBags:
    if params.regime == "pn":
        return make_pn(records, params, split_name)
    if params.regime == "pu":
        return make_pu(records, params, split_name)
    if params.regime == "uu":
        return make_uu(records, params, split_name)
    if params.regime == "pconf":
        return make_pconf(records, teacher, params, split_name)
    raise ValueError(f"weak views are built for pn, pu, uu, pconf; got {params.regime!r}")


# ---------------------------------------------------------------------------
# Weak validation
# ---------------------------------------------------------------------------


def weak_val_loss(regime: str, view: WeakBags, pi_hat: float | None = None, gamma1: float | None = None,
                  gamma2: float | None = None, tau: float | None = None) -> float:
    """Validation criterion of the candidate whose scores fill ``view``.

    PN returns accuracy at threshold 1/2 (larger is better); PU, UU and Pconf
    return corrected logistic validation risks (smaller is better).
    """
    if pi_hat is None:
        pi_hat = view.pi_hat
    if regime == "pn":
        view.require(["lab"])
        lab = view["lab"]
        if lab.label is None:
            raise DataError("PN validation needs labels")
        return float(np.mean((lab.score >= 0.5).astype(int) == lab.label))
    if regime not in ("pu", "uu", "pconf"):
        raise ValueError(f"no weak validation criterion for regime {regime!r}")
    if regime == "uu":
        gamma1 = view.meta.get("gamma1") if gamma1 is None else gamma1
        gamma2 = view.meta.get("gamma2") if gamma2 is None else gamma2
    return weak_nll(WeakNllObjective(regime, pi_hat, gamma1, gamma2, tau), view)


def select_candidate(regime: str, views: list[WeakBags], **kw) -> int:
    """Index of the best candidate under :func:`weak_val_loss` (first wins ties)."""
    vals = np.array([weak_val_loss(regime, v, **kw) for v in views])
    return int(np.argmax(vals) if regime == "pn" else np.argmin(vals))
