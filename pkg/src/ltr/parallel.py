"""In-process asynchronous data-parallel training.

Worker threads share one ``ParameterStore``. Each worker repeatedly takes a
snapshot of the parameters, computes a gradient on the next batch of its own
data shard, and applies it to the store's *current* parameters with Adagrad.
Updates are atomic per parameter block (one lock per weight matrix, bias
vector or embedding table) and otherwise unsynchronized, so gradients may be
stale by however many updates landed since the snapshot.
"""

import threading
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ltr.core import adagrad_update_block
from ltr.data import BatchCursor
from ltr.errors import ConfigError, MeasurementError
from ltr.losses import make_loss_fn
from ltr.model import RngStreams


class ParameterStore:
    def __init__(self, params, optimizer, version=0):
        self.params = params
        self.optimizer = optimizer
        self.version = version
        self.dropped = 0
        self._locks = {name: threading.Lock() for name in params}
        self._meta = threading.Lock()
        for name, p in params.items():
            optimizer.slot(name, p.shape)  # no lazy slot creation under contention

    def snapshot(self):
        """Copies every block (each under its lock). Returns ``(params, version)``
        where version is the store version when the snapshot started."""
        with self._meta:
            version = self.version
        out = {}
        for name, p in self.params.items():
            with self._locks[name]:
                out[name] = p.copy()
        return out, version

    def drop(self):
        with self._meta:
            self.dropped += 1

    def apply(self, grads):
        """Applies one update; returns the version it was applied against, or
        ``None`` if the gradient was non-finite and the update dropped."""
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            self.drop()
            return None
        for name in self.params:
            if name in grads:
                with self._locks[name]:
                    adagrad_update_block(name, self.params[name], grads[name], self.optimizer)
        with self._meta:
            base = self.version
            self.version += 1
        return base


@dataclass
class WorkerReport:
    worker_id: int
    steps: int = 0
    applied: int = 0
    dropped: int = 0
    wall_time: float = 0.0
    staleness: list = field(default_factory=list)
    trace: list = field(default_factory=list)  # (store version after apply, loss)

    @property
    def mean_staleness(self):
        return float(np.mean(self.staleness)) if self.staleness else 0.0


@dataclass
class AsyncResult:
    reports: list
    params: dict
    version: int
    dropped: int
    wall_time: float

    @property
    def total_steps(self):
        return sum(r.steps for r in self.reports)

    @property
    def trace(self):
        """Loss per applied update, ordered by store version."""
        return sorted(t for r in self.reports for t in r.trace)

    @property
    def steps_per_sec(self):
        if self.wall_time <= 0:
            raise MeasurementError("zero elapsed time")
        return self.total_steps / self.wall_time


def shard_data(data, worker_count):
    """Round-robin disjoint shards: list ``i`` goes to worker ``i % worker_count``.

    Accepts ``PreparedLists`` (anything with ``take``) or a plain sequence.
    Workers may get empty shards when there are fewer lists than workers.
    """
    if worker_count < 1:
        raise ConfigError(f"worker_count must be >= 1, got {worker_count}")
    n = len(data)
    shards = []
    for w in range(worker_count):
        idx = np.arange(w, n, worker_count)
        shards.append(data.take(idx) if hasattr(data, "take") else [data[i] for i in idx])
    return shards


def _synthetic_load(matrix, repeats):
    # BLAS calls release the GIL, so this work overlaps across threads.
    acc = matrix
    for _ in range(repeats):
        acc = np.tanh(matrix @ acc)
    return acc


def train_async(model, shards, total_steps, store=None, synthetic_load=0, load_dim=256):
    """Trains ``model`` with one thread per shard until ``total_steps`` steps
    (applied or dropped) have run in total.

    Worker 0 uses the model's own RNG streams and batch cursor, so a single
    worker reproduces ``model.train`` bit for bit. ``synthetic_load`` adds that
    many ``load_dim``-square matrix products per step to make the step
    compute-bound for throughput measurements.
    """
    if total_steps < 1:
        raise ConfigError(f"total_steps must be >= 1, got {total_steps}")
    store = store or ParameterStore(model.params, model.optimizer)
    cfg = model.config
    W = len(shards)
    reports = [WorkerReport(w) for w in range(W)]
    counter = {"claimed": 0}
    claim_lock = threading.Lock()
    errors = []
    load_matrix = np.random.default_rng(0).normal(scale=1.0 / np.sqrt(load_dim), size=(load_dim, load_dim))
    cursors = {}

    def claim():
        with claim_lock:
            if counter["claimed"] >= total_steps:
                return False
            counter["claimed"] += 1
            return True

    def work(w):
        shard = shards[w]
        report = reports[w]
        if len(shard) == 0:
            return
        if w == 0:
            rngs, loss_fn = model.rngs, model.head.loss_fn
            cursor = model.cursor if model.cursor is not None and model.cursor.n == len(shard) else None
        else:
            rngs = RngStreams(cfg.seed, worker=w)
            loss_fn = make_loss_fn(cfg.loss, rngs["listmle"])
            cursor = None
        cursor = cursor or BatchCursor(len(shard), cfg.batch_size, True, rngs["batches"])
        cursors[w] = cursor
        start = time.perf_counter()
        try:
            while claim():
                params, version = store.snapshot()
                batch = shard.take(cursor.next_indices())
                out, grads = model.compute_gradients(params, batch, rngs, loss_fn)
                if synthetic_load:
                    _synthetic_load(load_matrix, synthetic_load)
                if np.isfinite(out.value):
                    base = store.apply(grads)
                else:
                    store.drop()
                    base = None
                report.steps += 1
                if base is None:
                    report.dropped += 1
                else:
                    report.applied += 1
                    report.staleness.append(base - version)
                    report.trace.append((base + 1, float(out.value)))
        except Exception as exc:  # surfaced after join
            errors.append(exc)
        finally:
            report.wall_time = time.perf_counter() - start

    t0 = time.perf_counter()
    threads = [threading.Thread(target=work, args=(w,), name=f"ltr-worker-{w}") for w in range(W)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    wall = time.perf_counter() - t0
    if errors:
        raise errors[0]
    model.global_step += sum(r.applied for r in reports)
    if 0 in cursors:
        model.cursor = cursors[0]
    return AsyncResult(reports, store.params, store.version, store.dropped, wall)


def _ci95(values):
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        return None
    sem = values.std(ddof=1) / np.sqrt(len(values))
    return float(stats.t.ppf(0.975, len(values) - 1) * sem)


def throughput_report(runs):
    """Summarizes timing runs per worker count.

    ``runs`` maps a worker count to a list of ``(steps, seconds, final_metric)``
    tuples. Speeds are normalized by the mean speed of the smallest worker
    count present (normally 1). Returns a list of dicts, one per worker count.
    """
    if not runs:
        raise MeasurementError("no runs to report")
    speeds = {}
    for workers, measurements in runs.items():
        if not measurements:
            raise MeasurementError(f"no runs for {workers} workers")
        s = []
        for steps, seconds, _ in measurements:
            if seconds <= 0:
                raise MeasurementError(f"zero elapsed time in a {workers}-worker run")
            s.append(steps / seconds)
        speeds[workers] = np.array(s)
    base = speeds[min(speeds)].mean()
    out = []
    for workers in sorted(runs):
        sp = speeds[workers]
        metrics = [m for _, _, m in runs[workers] if m is not None]
        ci = _ci95(sp)
        out.append({
            "workers": int(workers),
            "runs": len(sp),
            "steps_per_sec_mean": float(sp.mean()),
            "steps_per_sec_ci95": ci,
            "normalized_mean": float(sp.mean() / base),
            "normalized_ci95": None if ci is None else float(ci / base),
            "final_metric": float(np.mean(metrics)) if metrics else None,
            "final_metric_ci95": _ci95(metrics) if metrics else None,
        })
    return out
