"""Classical rank statistics (DPA, CPA, KS), trace moments and the NDF estimator."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .leakage_est import RankTable, pair_sensitive

_POPCOUNT = np.array([bin(x).count("1") for x in range(32)], dtype=np.float64)


def leakage_values(xs, model: str) -> np.ndarray:
    """Hamming weight (``"hw"``) or MSB (``"msb"``) of 5-bit values."""
    xs = np.asarray(xs, dtype=np.int64)
    if model == "hw":
        return _POPCOUNT[xs]
    if model == "msb":
        return ((xs >> 4) & 1).astype(np.float64)
    raise ValueError(f"unknown classical leakage model {model!r}")


def split_at_mean(leakage: np.ndarray) -> np.ndarray | None:
    """Boolean mask of cluster C1 (``L >= mean``); None if a cluster is empty."""
    c1 = leakage >= leakage.mean()
    n1 = int(c1.sum())
    if n1 == 0 or n1 == len(leakage):
        return None
    return c1


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("pearson needs two equal-length vectors of length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = dx @ dx
    syy = dy @ dy
    if sxx == 0 or syy == 0:
        raise ValueError("correlation undefined for a constant input")
    return float(np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def dpa_curve(traces: np.ndarray, leakage: np.ndarray) -> np.ndarray | None:
    """``|mean(C1) - mean(C0)|`` per sample, or None when a cluster is empty."""
    traces = np.asarray(traces, dtype=np.float64)
    c1 = split_at_mean(np.asarray(leakage, dtype=np.float64))
    if c1 is None:
        return None
    return np.abs(traces[c1].mean(axis=0) - traces[~c1].mean(axis=0))


def cpa_curve(traces: np.ndarray, leakage: np.ndarray) -> np.ndarray:
    """``|rho|`` per sample; undefined correlations count as 0."""
    traces = np.asarray(traces, dtype=np.float64)
    h = np.asarray(leakage, dtype=np.float64)
    dh = h - h.mean()
    dt = traces - traces.mean(axis=0)
    num = dh @ dt
    den = np.sqrt((dh @ dh) * np.einsum("ij,ij->j", dt, dt))
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return np.minimum(np.abs(rho), 1.0)


def ks_curve(traces: np.ndarray, leakage: np.ndarray) -> np.ndarray | None:
    """Cluster-probability weighted KS distance to the pooled CDF, per sample."""
    traces = np.asarray(traces, dtype=np.float64)
    c1 = split_at_mean(np.asarray(leakage, dtype=np.float64))
    if c1 is None:
        return None
    n = len(traces)
    masks = (c1, ~c1)
    out = np.empty(traces.shape[1])
    for j in range(traces.shape[1]):
        col = traces[:, j]
        order = np.argsort(col, kind="stable")
        sorted_col = col[order]
        last = np.searchsorted(sorted_col, sorted_col, side="right") - 1
        pooled = (last + 1) / n
        total = 0.0
        for m in masks:
            size = m.sum()
            fc = np.cumsum(m[order])[last] / size
            total += size / n * np.abs(pooled - fc).max()
        out[j] = total
    return out


def ks_distance(pooled_values, cluster_values) -> float:
    """``sup_t |F_pooled(t) - F_cluster(t)|`` over the pooled sample points."""
    pooled = np.sort(np.asarray(pooled_values, dtype=np.float64))
    cluster = np.sort(np.asarray(cluster_values, dtype=np.float64))
    f = np.searchsorted(pooled, pooled, side="right") / len(pooled)
    fc = np.searchsorted(cluster, pooled, side="right") / len(cluster)
    return float(np.abs(f - fc).max())


_CURVES = {"dpa": dpa_curve, "cpa": cpa_curve, "ks": ks_curve}


def rank_statistic(kind: str, traces: np.ndarray, leakage: np.ndarray) -> tuple[float, np.ndarray | None]:
    """Max over samples of the chosen curve; ``-inf`` if undefined."""
    curve = _CURVES[kind](traces, leakage)
    if curve is None or curve.size == 0:
        return float("-inf"), curve
    return float(curve.max()), curve


def dpa_rank(traces, leakage) -> tuple[float, np.ndarray | None]:
    return rank_statistic("dpa", traces, leakage)


def cpa_rank(traces, leakage) -> tuple[float, np.ndarray | None]:
    return rank_statistic("cpa", traces, leakage)


def ks_rank(traces, leakage) -> tuple[float, np.ndarray | None]:
    return rank_statistic("ks", traces, leakage)


def classical_attack(kind: str, traces: np.ndarray, sbox_sel, nonce_hi, nonce_lo, iv_pair,
                     model: str = "hw", workers: int = 1) -> RankTable:
    """Rank the 16 candidates of an S-box pair from pooled windows."""
    if kind not in _CURVES:
        raise ValueError(f"unknown attack {kind!r}")
    traces = np.asarray(traces, dtype=np.float64)
    if len(traces) < 2:
        raise ValueError("need at least two traces")

    def one(c: int):
        xs = pair_sensitive(c, sbox_sel, nonce_hi, nonce_lo, iv_pair)
        return rank_statistic(kind, traces, leakage_values(xs, model))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one, range(16)))
    else:
        results = [one(c) for c in range(16)]
    width = traces.shape[1]
    ranks = np.array([r for r, _ in results])
    detail = np.stack([c if c is not None else np.zeros(width) for _, c in results])
    degenerate = [c for c, (r, _) in enumerate(results) if not np.isfinite(r)]
    return RankTable(ranks=ranks, detail=detail, degenerate=degenerate)


def moments(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample mean and unbiased variance."""
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) < 2:
        raise ValueError("need at least two traces")
    return samples.mean(axis=0), samples.var(axis=0, ddof=1)


def ndf_estimate(samples: np.ndarray, sample_index: int, window: int) -> float:
    """Degrees of freedom at ``sample_index`` from a ``window``-sample neighbourhood.

    ``window * var_i / omega_0`` where ``omega_0`` is the mean of all entries
    of the window covariance (its DC spectral component).
    """
    samples = np.asarray(samples, dtype=np.float64)
    if window < 2:
        raise ValueError("window must be >= 2")
    if len(samples) < 2:
        raise ValueError("need at least two traces")
    lo = sample_index - window // 2
    hi = lo + window
    if lo < 0 or hi > samples.shape[1]:
        raise ValueError("NDF window leaves the trace")
    block = samples[:, lo:hi]
    centered = block - block.mean(axis=0)
    cov = centered.T @ centered / (len(block) - 1)
    omega0 = cov.sum() / window
    if not omega0 > 1e-12 * max(np.trace(cov), 1e-300):
        raise FloatingPointError(f"degenerate NDF window at sample {sample_index} (omega_0={omega0:g})")
    return float(window * cov[window // 2, window // 2] / omega0)


def ndf_curve(samples: np.ndarray, window: int) -> np.ndarray:
    """NDF at every sample whose window fits; NaN elsewhere or where degenerate."""
    samples = np.asarray(samples, dtype=np.float64)
    if window < 2 or len(samples) < 2:
        raise ValueError("need window >= 2 and at least two traces")
    n = samples.shape[1]
    out = np.full(n, np.nan)
    starts = np.arange(0, n - window + 1)
    if starts.size == 0:
        return out
    centered = samples - samples.mean(axis=0)
    # lag[k][j] = cov(j, j + k); window sums come from prefix sums per lag.
    total = np.zeros(starts.size)
    trace_sum = np.zeros(starts.size)
    for k in range(window):
        lag = np.einsum("ij,ij->j", centered[:, : n - k], centered[:, k:]) / (len(samples) - 1)
        prefix = np.concatenate([[0.0], np.cumsum(lag)])
        inner = prefix[starts + window - k] - prefix[starts]
        total += inner if k == 0 else 2.0 * inner
        if k == 0:
            trace_sum = inner
            var = lag
    omega0 = total / window
    ok = omega0 > 1e-12 * np.maximum(trace_sum, 1e-300)
    centers = starts + window // 2
    out[centers[ok]] = window * var[centers[ok]] / omega0[ok]
    return out
