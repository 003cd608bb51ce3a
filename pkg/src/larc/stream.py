"""Event sources for the calibration harness.

All randomness comes from ``numpy.random.Generator(Philox(seed))`` so a
seed reproduces the same stream on every platform with the same numpy.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np
from scipy import special

from .losses import value_set_to_score_set

CALIBRATION = "calibration"
HOLDOUT = "holdout"


class StreamError(ValueError):
    pass


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class StreamEvent:
    """One observation: covariate, candidate scores and (optional) ground truth.

    ``group`` is an evaluation-only subpopulation tag; controllers never
    see it.
    """

    t: int
    x: tuple
    scores: tuple
    truth: Optional[tuple] = None
    values: Optional[tuple] = None
    group: int = 0
    split: str = CALIBRATION

    def to_json(self) -> dict:
        out: dict[str, Any] = {"t": self.t, "x": list(self.x)}
        if len(self.scores) == 1 and self.truth is None and self.values is None:
            out["score"] = self.scores[0]
        else:
            out["scores"] = list(self.scores)
        if self.truth is not None:
            out["truth"] = list(self.truth)
        if self.values is not None:
            out["values"] = list(self.values)
        out["group"] = self.group
        out["split"] = self.split
        return out

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "StreamEvent":
        scores = (float(d["score"]),) if "score" in d else tuple(float(s) for s in d["scores"])
        truth = tuple(int(i) for i in d["truth"]) if d.get("truth") is not None else None
        values = tuple(float(v) for v in d["values"]) if d.get("values") is not None else None
        return cls(int(d["t"]), tuple(float(v) for v in d["x"]), scores, truth, values,
                   int(d.get("group", 0)), d.get("split", CALIBRATION))


@dataclass
class StreamData:
    """A materialized stream: calibration events, hold-out events and ``S_max``."""

    calibration: list
    holdout: list
    score_bound: float = 1.0

    @property
    def dim(self) -> int:
        ev = self.calibration[0] if self.calibration else self.holdout[0]
        return len(ev.x)

    def domain_radius(self) -> float:
        if not self.calibration:
            return 0.0
        X = np.array([e.x for e in self.calibration])
        return float(np.sqrt((X * X).sum(axis=1)).max())


# -- score laws ----------------------------------------------------------------

@dataclass(frozen=True)
class ScoreDist:
    """Score law supported on ``[0, score_bound]``.

    ``uniform``: params low, high. ``beta``: params a, b (scaled to
    ``[0, score_bound]``). ``truncnorm``: params mean, sd (truncated to
    ``[0, score_bound]``).
    """

    family: str = "uniform"
    params: Mapping[str, float] = field(default_factory=dict)

    def sample(self, rng: np.random.Generator, n: int, score_bound: float = 1.0) -> np.ndarray:
        p = dict(self.params)
        if self.family == "uniform":
            lo, hi = float(p.get("low", 0.0)), float(p.get("high", score_bound))
            if not 0.0 <= lo <= hi <= score_bound:
                raise StreamError(f"uniform support [{lo}, {hi}] not inside [0, {score_bound}]")
            return rng.uniform(lo, hi, size=n)
        if self.family == "beta":
            return score_bound * rng.beta(float(p["a"]), float(p["b"]), size=n)
        if self.family == "truncnorm":
            mu, sd = float(p["mean"]), float(p["sd"])
            lo = special.ndtr((0.0 - mu) / sd)
            hi = special.ndtr((score_bound - mu) / sd)
            u = rng.uniform(size=n)
            out = mu + sd * special.ndtri(lo + u * (hi - lo))
            return np.clip(out, 0.0, score_bound)
        raise StreamError(f"unknown score family {self.family!r}")

    def cdf(self, q: float, score_bound: float = 1.0) -> float:
        """Analytic CDF, used by tests as an independent oracle."""
        from scipy import stats

        p = dict(self.params)
        if self.family == "uniform":
            lo, hi = float(p.get("low", 0.0)), float(p.get("high", score_bound))
            return float(np.clip((q - lo) / (hi - lo), 0.0, 1.0))
        if self.family == "beta":
            return float(stats.beta(float(p["a"]), float(p["b"]), scale=score_bound).cdf(q))
        mu, sd = float(p["mean"]), float(p["sd"])
        return float(stats.truncnorm((0 - mu) / sd, (score_bound - mu) / sd, loc=mu, scale=sd).cdf(q))

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any]) -> "ScoreDist":
        return cls(str(cfg.get("family", "uniform")).lower(), dict(cfg.get("params", {})))


@dataclass(frozen=True)
class Cluster:
    center: tuple
    spread: float = 1.0
    score: ScoreDist = field(default_factory=ScoreDist)


@dataclass(frozen=True)
class SyntheticSpec:
    """i.i.d. mixture of covariate clusters, each with its own score law.

    ``task`` selects the event type: ``miscoverage`` (one truth score),
    ``fnr`` (``n_candidates`` scores with a truth subset) or ``regret``
    (``n_candidates`` positive values, scores from noisy predictions).
    """

    clusters: tuple
    mix: tuple
    horizon: int
    seed: int = 0
    task: str = "miscoverage"
    n_candidates: int = 16
    score_bound: float = 1.0

    def __post_init__(self) -> None:
        mix = np.asarray(self.mix, dtype=np.float64)
        if len(self.clusters) == 0:
            raise StreamError("need at least one cluster")
        if mix.shape != (len(self.clusters),) or np.any(mix < 0) or not math.isclose(mix.sum(), 1.0, abs_tol=1e-9):
            raise StreamError(f"mix must be a probability vector over {len(self.clusters)} clusters, got {self.mix}")
        if self.horizon < 0:
            raise StreamError("horizon must be non-negative")
        dims = {len(c.center) for c in self.clusters}
        if len(dims) != 1:
            raise StreamError("cluster centers differ in dimension")
        if self.task not in ("miscoverage", "fnr", "regret"):
            raise StreamError(f"unknown task {self.task!r}")

    @classmethod
    def from_config(cls, cfg: Mapping[str, Any], horizon: Optional[int] = None,
                    seed: Optional[int] = None) -> "SyntheticSpec":
        clusters = tuple(
            Cluster(tuple(float(v) for v in c["center"]), float(c.get("spread", 1.0)),
                    ScoreDist.from_config(c.get("score", {})))
            for c in cfg["clusters"]
        )
        return cls(
            clusters=clusters,
            mix=tuple(float(m) for m in cfg.get("mix", [1.0 / len(clusters)] * len(clusters))),
            horizon=int(cfg["horizon"] if horizon is None else horizon),
            seed=int(cfg.get("seed", 0) if seed is None else seed),
            task=cfg.get("task", "miscoverage"),
            n_candidates=int(cfg.get("n_candidates", 16)),
            score_bound=float(cfg.get("score_bound", 1.0)),
        )


def synthetic_stream(spec: SyntheticSpec, split: str = CALIBRATION) -> list:
    """Draw ``spec.horizon`` i.i.d. events."""
    rng = rng_from_seed(spec.seed)
    n, smax = spec.horizon, spec.score_bound
    d = len(spec.clusters[0].center)
    groups = rng.choice(len(spec.clusters), size=n, p=np.asarray(spec.mix))
    noise = rng.standard_normal((n, d))
    X = np.empty((n, d))
    for g, c in enumerate(spec.clusters):
        m = groups == g
        X[m] = np.asarray(c.center) + c.spread * noise[m]

    events = []
    if spec.task == "miscoverage":
        S = np.empty(n)
        for g, c in enumerate(spec.clusters):
            m = groups == g
            S[m] = c.score.sample(rng, int(m.sum()), smax)
        for i in range(n):
            events.append(StreamEvent(i + 1, tuple(X[i].tolist()), (float(S[i]),), None, None, int(groups[i]), split))
        return events

    k = spec.n_candidates
    for i in range(n):
        c = spec.clusters[groups[i]]
        if spec.task == "fnr":
            # truth candidates score like the cluster law, the rest are uniform clutter
            m = int(rng.integers(1, max(2, k // 2) + 1))
            truth_scores = c.score.sample(rng, m, smax)
            other = rng.uniform(0.0, smax, size=k - m)
            order = rng.permutation(k)
            scores = np.empty(k)
            scores[order[:m]] = truth_scores
            scores[order[m:]] = other
            events.append(StreamEvent(i + 1, tuple(X[i].tolist()), tuple(scores.tolist()),
                                      tuple(sorted(order[:m].tolist())), None, int(groups[i]), split))
        else:
            # values in (0, 1]; predictions are noisy, noise level drawn from the cluster law
            values = rng.uniform(0.05, 1.0, size=k)
            sd = float(c.score.sample(rng, 1, smax)[0]) * 0.5
            pred = np.clip(values + sd * rng.standard_normal(k), 0.0, 1.0)
            scores = np.asarray(value_set_to_score_set(pred, 1.0))
            events.append(StreamEvent(i + 1, tuple(X[i].tolist()), tuple(scores.tolist()), None,
                                      tuple(values.tolist()), int(groups[i]), split))
    return events


ADVERSARIAL_KINDS = ("shifting_quantile", "alternating")


def adversarial_stream(kind: str, horizon: int, seed: int = 0, dim: int = 2,
                       score_bound: float = 1.0, split: str = CALIBRATION) -> list:
    """Non-i.i.d. miscoverage streams.

    ``shifting_quantile``: ten regimes of length ``horizon // 10``; each
    regime moves the covariate cloud and draws scores from a random
    sub-interval of ``[0, score_bound]``.
    ``alternating``: scores alternate between near 0 (even steps) and near
    ``score_bound`` (odd steps); covariates are standard normal.
    """
    kind = kind.lower()
    if kind not in ADVERSARIAL_KINDS:
        raise StreamError(f"unknown adversarial kind {kind!r}")
    rng = rng_from_seed(seed)
    events = []
    if kind == "alternating":
        X = rng.standard_normal((horizon, dim))
        jitter = 0.02 * score_bound * rng.uniform(size=horizon)
        for i in range(horizon):
            s = jitter[i] if i % 2 == 0 else score_bound - jitter[i]
            events.append(StreamEvent(i + 1, tuple(X[i].tolist()), (float(s),), group=i % 2, split=split))
        return events

    block = max(1, horizon // 10)
    n_regimes = -(-horizon // block)
    centers = rng.uniform(-2.0, 2.0, size=(n_regimes, dim))
    widths = rng.uniform(0.05, 0.5, size=n_regimes) * score_bound
    lows = rng.uniform(0.0, 1.0, size=n_regimes) * (score_bound - widths)
    for i in range(horizon):
        r = i // block
        x = centers[r] + 0.5 * rng.standard_normal(dim)
        s = lows[r] + widths[r] * rng.uniform()
        events.append(StreamEvent(i + 1, tuple(x.tolist()), (float(s),), group=int(r), split=split))
    return events


# -- CSV time series -----------------------------------------------------------

def _read_series(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    ts, ys = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["t", "y"]:
            raise StreamError(f"{path}: expected header 't,y', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise StreamError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                t = int(row[0])
                y = float(row[1])
            except ValueError as exc:
                raise StreamError(f"{path}:{lineno}: non-numeric value in {row!r}") from exc
            if not math.isfinite(y) or y < 0.0 or y > 1.0:
                raise StreamError(f"{path}:{lineno}: y={y} outside the normalized range [0, 1]")
            if ts and t <= ts[-1]:
                raise StreamError(f"{path}:{lineno}: t={t} is not increasing")
            ts.append(t)
            ys.append(y)
    return np.asarray(ts, dtype=np.int64), np.asarray(ys, dtype=np.float64)


def csv_timeseries(path, window_short: int = 24, window_long: int = 48, daily_feature_days: int = 7,
                   start_weekday: int = 0) -> list:
    """Moving-average forecaster events from an hourly ``t,y`` CSV.

    At row ``i`` the forecast is the mean of ``y[i-window_long .. i-window_short-1]``,
    the score is ``|forecast - y[i]|`` and the covariate holds the means of
    the ``daily_feature_days`` preceding 24-hour blocks (most recent first).
    Even-indexed events are calibration, odd-indexed are hold-out.
    ``group`` is 1 on weekend hours, 0 otherwise, with hour ``t = 0`` on
    weekday ``start_weekday`` (0 = Monday).
    """
    if not 0 < window_short < window_long:
        raise StreamError("need 0 < window_short < window_long")
    ts, y = _read_series(path)
    warmup = window_long + 24 * daily_feature_days
    if len(y) <= warmup:
        raise StreamError(
            f"{path}: {len(y)} rows, need more than {warmup} (warm-up) before the first event "
            f"(first event would be data row {warmup + 1}, file line {warmup + 2})"
        )
    csum = np.concatenate([[0.0], np.cumsum(y)])

    def window_mean(lo: int, hi: int) -> float:  # inclusive row range
        return (csum[hi + 1] - csum[lo]) / (hi - lo + 1)

    events = []
    for j, i in enumerate(range(warmup, len(y))):
        forecast = window_mean(i - window_long, i - window_short - 1)
        score = abs(forecast - y[i])
        x = tuple(window_mean(i - 24 * (k + 1), i - 24 * k - 1) for k in range(daily_feature_days))
        day = (int(ts[i]) // 24 + start_weekday) % 7
        events.append(StreamEvent(int(ts[i]), x, (float(min(score, 1.0)),), group=int(day >= 5),
                                  split=CALIBRATION if j % 2 == 0 else HOLDOUT))
    return events


def elec2_like_series(n_hours: int, seed: int = 0, start_weekday: int = 0) -> np.ndarray:
    """Synthetic hourly demand in ``[0, 1]`` with daily/weekly seasonality and regime noise.

    Weekend days run at a lower level and are noisier than weekdays; a slow
    random-walk regime term shifts the overall level.
    """
    rng = rng_from_seed(seed)
    t = np.arange(n_hours)
    day = (t // 24 + start_weekday) % 7
    weekend = day >= 5
    hour = t % 24
    level = np.where(weekend, 0.30, 0.62)
    intraday = np.where(weekend, 0.10, 0.16) * np.sin(2 * np.pi * (hour - 7) / 24)
    n_days = n_hours // 24 + 1
    regime = np.cumsum(0.01 * rng.standard_normal(n_days))
    regime = 0.08 * np.tanh(regime / 0.08)
    noise_sd = np.where(weekend, 0.07, 0.03)
    y = level + intraday + regime[t // 24] + noise_sd * rng.standard_normal(n_hours)
    return np.clip(y, 0.0, 1.0)


def write_series_csv(path, y: Sequence[float]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "y"])
        for i, v in enumerate(y):
            w.writerow([i, repr(float(v))])
    return path


# -- event dumps ---------------------------------------------------------------

def write_events(path, events: Iterable[StreamEvent]) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for ev in events:
            fh.write(json.dumps(ev.to_json()) + "\n")
    return path


def read_events(path) -> list:
    path = Path(path)
    out = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(StreamEvent.from_json(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise StreamError(f"{path}:{lineno}: malformed event ({exc})") from exc
    return out


def iter_split(events: Iterable[StreamEvent], split: str) -> Iterator[StreamEvent]:
    return (e for e in events if e.split == split)
