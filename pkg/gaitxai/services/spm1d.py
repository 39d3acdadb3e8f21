"""
One-dimensional statistical parametric mapping for two groups of registered curves
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import optimize
from scipy.stats import t as t_dist

from gaitxai.core.errors import (
    ConfigError,
    DegenerateResiduals,
    GroupTooSmall,
    LengthMismatch,
    MissingInput,
    NoSolution,
)
from gaitxai.models.gait import ChannelId, Dataset, GaitTrial
from gaitxai.models.statistics import (
    Cluster,
    CurveGroup,
    PermutationThreshold,
    SpmConfig,
    SpmResult,
    TCurve,
)

logger = logging.getLogger(__name__)

MIN_PERMUTATIONS = 1000
_PERMUTATION_CHUNK = 256
# Standard deviations below this fraction of the node's spread (max - min over both groups) count as zero
_ZERO_SPREAD = 1e-12
# Differences within this many ulps of the node's magnitude are rounding noise
_ROUNDING_ULPS = 16
_EC_CONSTANT = np.sqrt(4.0 * np.log(2.0)) / (2.0 * np.pi)

Curves = Union[CurveGroup, np.ndarray, Sequence[Sequence[float]]]


def _curves(group: Curves) -> np.ndarray:
    curves = group.curves if isinstance(group, CurveGroup) else group
    curves = np.asarray(curves, dtype=np.float64)
    if curves.ndim == 1:
        curves = curves[:, None]
    return curves


def _check_groups(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise GroupTooSmall(f"each group needs at least 2 curves, got {a.shape[0]} and {b.shape[0]}")
    if a.shape[1] != b.shape[1]:
        raise LengthMismatch(f"groups differ in curve length: {a.shape[1]} vs {b.shape[1]}")


def _tolerance(x: np.ndarray, axis: int) -> np.ndarray:
    """Per-node zero level: a fraction of the spread, floored at rounding error of the magnitude"""
    rounding = _ROUNDING_ULPS * np.finfo(np.float64).eps * np.abs(x).max(axis=axis)
    return _ZERO_SPREAD * np.ptp(x, axis=axis) + rounding


def _pooled_moments(a: np.ndarray, b: np.ndarray):
    n_a, n_b = a.shape[0], b.shape[0]
    mean_a, mean_b = a.mean(axis=0), b.mean(axis=0)
    df = n_a + n_b - 2
    pooled_var = (((a - mean_a) ** 2).sum(axis=0) + ((b - mean_b) ** 2).sum(axis=0)) / df
    tolerance = _tolerance(np.concatenate([a, b]), axis=0)
    zero_var = pooled_var <= tolerance ** 2
    diff = mean_a - mean_b
    equal_means = np.abs(diff) <= tolerance
    return diff, pooled_var, zero_var, equal_means, df


def two_sample_t_curve(A: Curves, B: Curves) -> TCurve:
    """Pointwise pooled-variance two-sample t statistic"""
    a, b = _curves(A), _curves(B)
    _check_groups(a, b)
    n_a, n_b = a.shape[0], b.shape[0]
    diff, pooled_var, zero_var, equal_means, df = _pooled_moments(a, b)
    se = np.sqrt(pooled_var * (1.0 / n_a + 1.0 / n_b))
    t = np.divide(diff, se, out=np.zeros_like(diff), where=~zero_var)
    sentinel = zero_var & ~equal_means
    t[sentinel] = np.copysign(np.inf, diff[sentinel])
    t[zero_var & equal_means] = 0.0
    if zero_var.any():
        logger.warning(f"{int(zero_var.sum())} node(s) have zero pooled variance")
    return TCurve(t=t, df=float(df), degenerate=zero_var)


def cohens_d_curve(A: Curves, B: Curves) -> np.ndarray:
    """Standardized mean difference per node; zero-variance nodes report 0"""
    a, b = _curves(A), _curves(B)
    _check_groups(a, b)
    diff, pooled_var, zero_var, _, _ = _pooled_moments(a, b)
    return np.divide(diff, np.sqrt(pooled_var), out=np.zeros_like(diff), where=~zero_var)


def group_residuals(A: Curves, B: Curves) -> np.ndarray:
    a, b = _curves(A), _curves(B)
    return np.concatenate([a - a.mean(axis=0), b - b.mean(axis=0)])


def estimate_fwhm(residuals: np.ndarray) -> float:
    """Smoothness in nodes from the variance of forward differences of unit-variance residuals"""
    r = np.asarray(residuals, dtype=np.float64)
    if r.ndim != 2 or r.shape[1] < 2:
        raise LengthMismatch(f"residuals must be (n, Q) with Q >= 2, got {r.shape}")
    if np.all(np.ptp(r, axis=1) == 0):
        raise DegenerateResiduals("residual curves are constant; smoothness is undefined")
    n, Q = r.shape
    node_sd = np.sqrt((r ** 2).sum(axis=0) / n)
    normalized = np.divide(r, node_sd, out=np.zeros_like(r), where=node_sd > 0)
    v = float((np.diff(normalized, axis=1) ** 2).sum() / (n * (Q - 1)))
    if v == 0.0:
        return float("inf")
    return float(np.sqrt(4.0 * np.log(2.0) / v))


def resel_count(Q: int, fwhm: float) -> float:
    return 0.0 if not np.isfinite(fwhm) else (Q - 1) / fwhm


def ec_density_1d(t: float, df: float) -> float:
    return float(_EC_CONSTANT * (1.0 + t * t / df) ** (-(df - 1.0) / 2.0))


def rft_threshold(df: float, resels: float, alpha: float, two_tailed: bool = False) -> float:
    """Critical t for a family-wise error rate of alpha (alpha/2 per tail when two-tailed)"""
    if df <= 0 or resels < 0 or not 0 < alpha < 1:
        raise ConfigError(f"invalid threshold request: df={df}, resels={resels}, alpha={alpha}")
    target = alpha / 2.0 if two_tailed else alpha

    def excess(t: float) -> float:
        return float(t_dist.sf(t, df)) + resels * ec_density_1d(t, df) - target

    try:
        t_star = optimize.bisect(excess, 0.0, 100.0, xtol=1e-14, maxiter=500)
    except ValueError:
        raise NoSolution(f"no threshold in [0, 100] reaches alpha={target} (df={df}, resels={resels})")
    if abs(excess(t_star)) > 1e-10:
        raise NoSolution(f"bisection stalled at t={t_star} for alpha={target}")
    return float(t_star)


def _max_abs_t(x: np.ndarray, n_a: int) -> np.ndarray:
    """max |t| for a stack of relabelled datasets x with shape (P, N, Q)"""
    a, b = x[:, :n_a], x[:, n_a:]
    n_b = x.shape[1] - n_a
    mean_a, mean_b = a.mean(axis=1), b.mean(axis=1)
    pooled = (((a - mean_a[:, None]) ** 2).sum(axis=1) + ((b - mean_b[:, None]) ** 2).sum(axis=1)) / (n_a + n_b - 2)
    diff = mean_a - mean_b
    tolerance = _tolerance(x, axis=1)
    zero_var = pooled <= tolerance ** 2
    se = np.sqrt(pooled * (1.0 / n_a + 1.0 / n_b))
    t = np.divide(diff, se, out=np.zeros_like(diff), where=~zero_var)
    t[zero_var & (np.abs(diff) > tolerance)] = np.inf
    return np.abs(t).max(axis=1)


def permutation_distribution(A: Curves, B: Curves, n_perm: int, seed: int) -> np.ndarray:
    """max |t| over n_perm relabelings; permutation 0 is the observed labelling and
    permutation i > 0 draws from its own generator seeded by (seed, i)"""
    a, b = _curves(A), _curves(B)
    _check_groups(a, b)
    pooled = np.concatenate([a, b])
    n_total, n_a = pooled.shape[0], a.shape[0]
    stats = np.empty(n_perm)
    for start in range(0, n_perm, _PERMUTATION_CHUNK):
        stop = min(start + _PERMUTATION_CHUNK, n_perm)
        orders = np.stack([
            np.arange(n_total) if i == 0 else np.random.default_rng([seed, i]).permutation(n_total)
            for i in range(start, stop)
        ])
        stats[start:stop] = _max_abs_t(pooled[orders], n_a)
    return stats


def permutation_threshold(A: Curves, B: Curves, alpha: float = 0.05, n_perm: int = 10000,
                          seed: int = 0) -> PermutationThreshold:
    """Nonparametric family-wise threshold: the (1 - alpha) quantile of the max |t| distribution"""
    if n_perm < MIN_PERMUTATIONS:
        raise ConfigError(f"n_perm must be at least {MIN_PERMUTATIONS}, got {n_perm}")
    stats = permutation_distribution(A, B, n_perm, seed)
    degenerate = bool(np.ptp(stats) == 0 or not np.all(np.isfinite(stats)))
    if degenerate:
        logger.warning("permutation distribution is degenerate (constant or unbounded)")
    # order statistic rather than interpolation so unbounded entries cannot produce nan
    t_star = float(np.quantile(stats, 1.0 - alpha, method="higher"))
    return PermutationThreshold(t_star=t_star, alpha=alpha, n_perm=n_perm, degenerate=degenerate)


def supra_clusters(t_curve: np.ndarray, t_star: float, two_tailed: bool = True) -> List[Cluster]:
    """Maximal runs of nodes above threshold (|t| when two-tailed, t otherwise)"""
    t = np.asarray(t_curve, dtype=np.float64)
    above = (np.abs(t) if two_tailed else t) > t_star
    edges = np.diff(np.concatenate([[0], above.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    clusters = []
    for start, end in zip(starts, ends):
        segment = t[start:end + 1]
        finite = segment[np.isfinite(segment)]
        candidates = finite if finite.size else segment
        peak = candidates[int(np.argmax(np.abs(candidates)))]
        clusters.append(Cluster(start=int(start), end=int(end), peak_t=float(peak)))
    return clusters


def spm_two_sample(A: Curves, B: Curves, config: Optional[SpmConfig] = None, channel: str = "") -> SpmResult:
    """t-curve, effect size, smoothness, RFT threshold and clusters for one curve domain"""
    config = config or SpmConfig()
    a, b = _curves(A), _curves(B)
    t_curve = two_sample_t_curve(a, b)
    d_curve = cohens_d_curve(a, b)
    fwhm = estimate_fwhm(group_residuals(a, b))
    resels = resel_count(a.shape[1], fwhm)
    t_star = rft_threshold(t_curve.df, resels, config.alpha, two_tailed=config.two_tailed)
    clusters = supra_clusters(t_curve.t, t_star, two_tailed=config.two_tailed)
    note = None
    if t_curve.has_degenerate:
        note = f"{int(t_curve.degenerate.sum())} zero-variance node(s)"
    logger.info(
        f"SPM {channel or '<curves>'}: nu={t_curve.df:g} fwhm={fwhm:.3f} resels={resels:.3f} "
        f"t*={t_star:.4f} clusters={len(clusters)}"
    )
    return SpmResult(
        channel=channel,
        t_curve=t_curve.t,
        df=t_curve.df,
        fwhm=fwhm,
        resels=resels,
        alpha=config.alpha,
        two_tailed=config.two_tailed,
        t_star=t_star,
        clusters=clusters,
        d_curve=d_curve,
        degenerate=t_curve.degenerate,
        n_a=a.shape[0],
        n_b=b.shape[0],
        note=note,
    )


def subject_means(dataset: Dataset) -> Dataset:
    """One mean trial per subject, in order of first appearance"""
    grouped: Dict[str, List[GaitTrial]] = {}
    for trial in dataset.trials:
        grouped.setdefault(trial.subject_id, []).append(trial)
    means = []
    for subject_id, trials in grouped.items():
        means.append(GaitTrial(
            subject_id=subject_id,
            trial_id="mean",
            sex=trials[0].sex,
            body_mass_kg=float(np.mean([t.body_mass_kg for t in trials])),
            curves={c: np.mean([t.curves[c] for t in trials], axis=0) for c in trials[0].curves},
        ))
    return Dataset(trials=means, T=dataset.T)


def channel_groups(dataset: Dataset, channel: ChannelId) -> Tuple[CurveGroup, CurveGroup]:
    """Class-0 and class-1 curves of one GRF channel"""
    groups = []
    for label in (0, 1):
        curves = [t.curves[channel] for t in dataset.of_class(label)]
        if len(curves) < 2:
            raise GroupTooSmall(f"class {label} has {len(curves)} curve(s) on {channel.value}; need 2")
        groups.append(CurveGroup(label=str(label), curves=np.stack(curves)))
    return groups[0], groups[1]


# Exports

def spm_curves_frame(results: Sequence[SpmResult]) -> pd.DataFrame:
    frames = [
        pd.DataFrame({
            "channel": r.channel,
            "node_index": np.arange(r.Q),
            "t": r.t_curve,
            "d": r.d_curve,
        })
        for r in results
    ]
    return pd.concat(frames, ignore_index=True)


def spm_result_to_csv(results: Sequence[SpmResult], path: Union[str, Path]) -> None:
    spm_curves_frame(results).to_csv(path, index=False, lineterminator="\n")


def summary_text(result: SpmResult) -> str:
    """key=value sidecar; clusters as start-end:peak triples separated by ';'"""
    fields = [
        ("channel", result.channel),
        ("n_a", result.n_a),
        ("n_b", result.n_b),
        ("nu", repr(result.df)),
        ("fwhm", repr(result.fwhm)),
        ("resels", repr(result.resels)),
        ("alpha", repr(result.alpha)),
        ("two_tailed", "true" if result.two_tailed else "false"),
        ("t_star", repr(result.t_star)),
        ("clusters", ";".join(c.as_triple() for c in result.clusters)),
        ("degenerate_nodes", int(result.degenerate.sum())),
    ]
    if result.note:
        fields.append(("note", result.note))
    return "".join(f"{key}={value}\n" for key, value in fields)


def write_summary(result: SpmResult, path: Union[str, Path]) -> None:
    Path(path).write_text(summary_text(result), encoding="utf-8")


def read_summary(path: Union[str, Path]) -> Dict[str, str]:
    values = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            values[key] = value
    return values


def clusters_frame(results: Sequence[SpmResult]) -> pd.DataFrame:
    rows = [
        {"channel": r.channel, "start": c.start, "end": c.end, "peak_t": c.peak_t}
        for r in results for c in r.clusters
    ]
    return pd.DataFrame(rows, columns=["channel", "start", "end", "peak_t"])


def _parse_clusters(text: str) -> List[Cluster]:
    clusters = []
    for triple in filter(None, text.split(";")):
        span, peak = triple.split(":", 1)
        start, end = span.split("-", 1)
        clusters.append(Cluster(start=int(start), end=int(end), peak_t=float(peak)))
    return clusters


def read_spm_results(directory: Union[str, Path]) -> Dict[str, SpmResult]:
    """Rebuild per-channel results from spm_curves.csv and the summary sidecars"""
    directory = Path(directory)
    curves_path = directory / "spm_curves.csv"
    if not curves_path.is_file():
        raise MissingInput(f"SPM curves not found: {curves_path}; run spm first")
    curves = pd.read_csv(curves_path, dtype={"channel": str}, float_precision="round_trip")
    results = {}
    for channel, frame in curves.groupby("channel", sort=False):
        summary_path = directory / f"{channel}.summary.txt"
        if not summary_path.is_file():
            raise MissingInput(f"SPM summary not found: {summary_path}")
        summary = read_summary(summary_path)
        frame = frame.sort_values("node_index")
        t = frame["t"].to_numpy(dtype=np.float64)
        results[channel] = SpmResult(
            channel=channel,
            t_curve=t,
            df=float(summary["nu"]),
            fwhm=float(summary["fwhm"]),
            resels=float(summary["resels"]),
            alpha=float(summary["alpha"]),
            two_tailed=summary["two_tailed"] == "true",
            t_star=float(summary["t_star"]),
            clusters=_parse_clusters(summary.get("clusters", "")),
            d_curve=frame["d"].to_numpy(dtype=np.float64),
            degenerate=~np.isfinite(t),
            n_a=int(summary["n_a"]),
            n_b=int(summary["n_b"]),
            note=summary.get("note"),
        )
    return results
