"""Spearman correlation, Fisher averaging and per-batch correlation summaries."""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import ParameterError, UndefinedCorrelationError

log = logging.getLogger(__name__)

EXACT_MAX_N = 8
FISHER_CLAMP = 1.0 - 1e-7
SIGNIFICANCE = 0.05

_perm_cache: dict[int, np.ndarray] = {}


def _permutations(n: int) -> np.ndarray:
    if n not in _perm_cache:
        _perm_cache[n] = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    return _perm_cache[n]


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float(a @ a) * float(b @ b))
    return float(a @ b) / denom


def spearman(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Spearman's rho with a two-sided p-value.

    Ties receive average ranks. For ``n <= 8`` the p-value is exact: the
    fraction of all ``n!`` re-pairings of the ranks whose ``|rho|`` reaches
    the observed one. Larger samples use the t approximation
    ``rho * sqrt((n - 2) / (1 - rho**2))`` with ``n - 2`` degrees of freedom.

    Raises:
        ParameterError: lengths differ or fewer than two observations.
        UndefinedCorrelationError: either input is constant.
    """
    if len(x) != len(y):
        raise ParameterError(f"spearman inputs differ in length ({len(x)} vs {len(y)})")
    n = len(x)
    if n < 2:
        raise ParameterError("spearman needs at least two observations")
    rx = sps.rankdata(np.asarray(x, dtype=float))
    ry = sps.rankdata(np.asarray(y, dtype=float))
    if np.ptp(rx) == 0 or np.ptp(ry) == 0:
        raise UndefinedCorrelationError("spearman correlation is undefined for constant input")
    rho = max(-1.0, min(1.0, _pearson(rx, ry)))

    if n <= EXACT_MAX_N:
        return rho, _exact_pvalue(rx, ry, rho)

    if abs(rho) >= 1.0:
        return rho, 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return rho, float(min(1.0, 2.0 * sps.t.sf(abs(t), n - 2)))


def _exact_pvalue(rx: np.ndarray, ry: np.ndarray, rho: float) -> float:
    perms = _permutations(len(rx))
    cx = rx - rx.mean()
    cy = ry - ry.mean()
    # every re-pairing keeps both rank variances, so only the cross term moves
    cross = cy[perms] @ cx
    denom = math.sqrt(float(cx @ cx) * float(cy @ cy))
    observed = abs(rho) * denom
    extreme = np.abs(cross) >= observed - 1e-9 * denom
    return float(np.count_nonzero(extreme)) / len(perms)


def fisher_z(rho: float) -> float:
    """atanh(rho), with ``|rho|`` clamped to ``1 - 1e-7`` so perfect correlations stay finite."""
    if abs(rho) > 1.0:
        raise ParameterError(f"correlation must lie in [-1, 1], got {rho}")
    return math.atanh(max(-FISHER_CLAMP, min(FISHER_CLAMP, rho)))


@dataclass(frozen=True)
class CorrelationSummary:
    """One row of the per-(batch size, lambda) correlation table.

    ``mean_fisher_rho`` is the tanh of the mean Fisher z over evaluated
    batches; ``batch_ratio`` is the share of those batches with p < 0.05.
    Batches with fewer than two questions or a constant input are skipped
    and counted separately. ``mean_fisher_rho`` and ``batch_ratio`` are None
    when no batch could be evaluated.
    """

    n_questions: int
    lambda_: float
    mean_fisher_rho: float | None
    batch_ratio: float | None
    global_rho: float | None = None
    global_p_value: float | None = None
    n_batches: int = 0
    n_skipped_small: int = 0
    n_skipped_undefined: int = 0

    def to_dict(self) -> dict:
        return {
            "n_questions": self.n_questions,
            "lambda": self.lambda_,
            "mean_fisher_rho": self.mean_fisher_rho,
            "batch_ratio": self.batch_ratio,
            "global_rho": self.global_rho,
            "global_p_value": self.global_p_value,
            "n_batches": self.n_batches,
            "n_skipped_small": self.n_skipped_small,
            "n_skipped_undefined": self.n_skipped_undefined,
        }

    @classmethod
    def from_dict(cls, d: dict) -> CorrelationSummary:
        return cls(
            n_questions=d["n_questions"],
            lambda_=d["lambda"],
            mean_fisher_rho=d["mean_fisher_rho"],
            batch_ratio=d["batch_ratio"],
            global_rho=d.get("global_rho"),
            global_p_value=d.get("global_p_value"),
            n_batches=d.get("n_batches", 0),
            n_skipped_small=d.get("n_skipped_small", 0),
            n_skipped_undefined=d.get("n_skipped_undefined", 0),
        )

    def table_rows(self) -> list[dict[str, str]]:
        """Rows shaped like the published correlation table.

        The per-batch row carries the batch ratio and mean Fisher rho. When a
        pooled correlation is present a second row follows with ``*`` in the
        batch-ratio column.
        """
        rows = [table_row(self.n_questions, self.lambda_, self.batch_ratio, self.mean_fisher_rho)]
        if self.global_rho is not None:
            rows.append(table_row(self.n_questions, self.lambda_, None, self.global_rho, pooled=True))
        return rows


TABLE_COLUMNS = ("questions", "lambda", "batch_ratio", "rho")


def _fmt(value: float | None, digits: int) -> str:
    return "nan" if value is None else f"{value:.{digits}f}"


def table_row(
    n_questions: int, lambda_: float, batch_ratio: float | None, rho: float | None, pooled: bool = False
) -> dict[str, str]:
    return {
        "questions": str(n_questions),
        "lambda": f"{lambda_:.1f}",
        "batch_ratio": "*" if pooled else _fmt(batch_ratio, 4),
        "rho": _fmt(rho, 4),
    }


Batch = tuple[Sequence[float], Sequence[float]]


def batch_correlation_summary(
    batches: Sequence[Batch],
    lambda_: float,
    n_questions: int | None = None,
    with_global: bool = False,
) -> CorrelationSummary:
    """Summarise per-batch Spearman correlations between MMR-RBO and a utility signal.

    Each batch is a pair ``(mmr_rbo_scores, signal)``. ``n_questions``
    defaults to the largest batch size seen.
    """
    zs = []
    significant = 0
    small = undefined = 0
    for scores, signal in batches:
        if len(scores) < 2:
            small += 1
            continue
        try:
            rho, p = spearman(scores, signal)
        except UndefinedCorrelationError:
            undefined += 1
            continue
        zs.append(fisher_z(rho))
        significant += p < SIGNIFICANCE
    if small:
        log.warning("skipped %d batch(es) with fewer than two questions", small)
    if undefined:
        log.warning("skipped %d batch(es) with constant scores or signal", undefined)

    mean_rho = math.tanh(math.fsum(zs) / len(zs)) if zs else None
    ratio = significant / len(zs) if zs else None
    g_rho = g_p = None
    if with_global:
        try:
            g_rho, g_p = global_correlation(batches)
        except (ParameterError, UndefinedCorrelationError) as exc:
            log.warning("pooled correlation unavailable: %s", exc)
    if n_questions is None:
        n_questions = max((len(s) for s, _ in batches), default=0)
    return CorrelationSummary(
        n_questions=n_questions,
        lambda_=lambda_,
        mean_fisher_rho=mean_rho,
        batch_ratio=ratio,
        global_rho=g_rho,
        global_p_value=g_p,
        n_batches=len(zs),
        n_skipped_small=small,
        n_skipped_undefined=undefined,
    )


def global_correlation(batches: Sequence[Batch]) -> tuple[float, float]:
    """Spearman over all (score, signal) pairs pooled across batches."""
    xs: list[float] = []
    ys: list[float] = []
    for scores, signal in batches:
        if len(scores) != len(signal):
            raise ParameterError("batch scores and signal differ in length")
        xs.extend(scores)
        ys.extend(signal)
    return spearman(xs, ys)
