"""Closed-loop benchmark runner over a shared :class:`Engine`."""

from __future__ import annotations

import random
import threading
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .engine import Engine

MIN_SAMPLES = 100


@dataclass
class QueryReport:
    name: str
    runs: int = 0
    errors: int = 0
    p50_s: float | None = None
    p90_s: float | None = None
    p99_s: float | None = None
    strategies: dict[str, int] = field(default_factory=dict)
    bytes_exchanged: int = 0
    last_error: str | None = None


@dataclass
class BenchReport:
    users: int
    mode: str
    cache: str
    queries: dict[str, QueryReport]
    cache_stats: dict[str, int]
    wall_time_s: float

    def as_dict(self) -> dict:
        return asdict(self)


def percentiles(samples: Sequence[float], min_samples: int = MIN_SAMPLES) -> tuple:
    """(p50, p90, p99), or all None when fewer than ``min_samples`` exist."""
    if len(samples) < min_samples:
        return None, None, None
    p = np.percentile(np.asarray(samples, dtype=float), [50, 90, 99])
    return float(p[0]), float(p[1]), float(p[2])


def run_benchmark(engine: Engine, queries: Mapping[str, str], users: int = 1,
                  mode: str = "adaptive", cache: str = "on", runs: int = MIN_SAMPLES,
                  param_pool: Sequence[Mapping] = (), seed: int = 0) -> BenchReport:
    """Each user loops picking a random query (and parameter set) until every
    query has at least ``runs`` completed measurements."""
    if users < 1 or runs < 1:
        raise ValueError("users and runs must be >= 1")
    if not queries:
        raise ValueError("no queries to run")
    names = sorted(queries)
    lock = threading.Lock()
    samples: dict[str, list[float]] = {n: [] for n in names}
    reports = {n: QueryReport(n) for n in names}
    strategies: dict[str, Counter] = {n: Counter() for n in names}
    before = engine.cache.stats.as_dict()

    def done() -> bool:
        return all(len(samples[n]) + reports[n].errors >= runs for n in names)

    def client(uid: int) -> None:
        rng = random.Random(seed * 1009 + uid)
        while True:
            with lock:
                if done():
                    return
                pending = [n for n in names if len(samples[n]) + reports[n].errors < runs]
            name = rng.choice(pending)
            params = dict(rng.choice(param_pool)) if param_pool else {}
            t0 = time.perf_counter()
            try:
                out = engine.query(queries[name], params, planner=mode, cache_mode=cache)
            except Exception as exc:  # failures are recorded and the run continues
                with lock:
                    reports[name].errors += 1
                    reports[name].last_error = f"{type(exc).__name__}: {exc}"
                continue
            elapsed = time.perf_counter() - t0
            with lock:
                samples[name].append(elapsed)
                strategies[name].update(out.strategies().values())
                if out.execution is not None:
                    reports[name].bytes_exchanged += out.execution.stats.bytes_exchanged

    t0 = time.perf_counter()
    threads = [threading.Thread(target=client, args=(u,), daemon=True) for u in range(users)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    wall = time.perf_counter() - t0

    for n in names:
        r = reports[n]
        r.runs = len(samples[n])
        r.p50_s, r.p90_s, r.p99_s = percentiles(samples[n])
        r.strategies = dict(sorted(strategies[n].items()))
    after = engine.cache.stats.as_dict()
    delta = {k: after[k] - before.get(k, 0) for k in after if isinstance(after[k], int)}
    return BenchReport(users, mode, cache, reports, delta, wall)
