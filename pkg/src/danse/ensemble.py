"""Disorder/phase ensembles: run many realizations of one parameter point and average.

Realization ``i`` of an ensemble with root seed ``s`` draws its disorder and
its initial phases from two independent 64-bit seeds derived from
``(s, i, stream)``; the result is a pure function of the ensemble spec and
does not depend on how many worker processes are used.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import MergeError, ParameterError, RealizationError, StepError
from .integrator import IntegratorConfig, RecordingSchedule, evolve
from .model import InitialStateSpec, LatticeParams, make_initial_state, sample_disorder
from .observables import box_profile, survival_probability

__all__ = [
    "EnsembleSpec",
    "SurvivalTrace",
    "realization_seeds",
    "run_realization",
    "run_ensemble",
    "merge",
    "save_trace",
    "load_trace",
]

DISORDER_STREAM = 0
PHASE_STREAM = 1


@dataclass(frozen=True)
class EnsembleSpec:
    params: LatticeParams
    init: InitialStateSpec
    cfg: IntegratorConfig
    schedule: RecordingSchedule
    n_real: int = 200
    master_seed: int = 0

    def __post_init__(self):
        if int(self.n_real) < 1:
            raise ParameterError(f"n_real must be >= 1, got {self.n_real!r}")
        if int(self.master_seed) < 0:
            raise ParameterError("master_seed must be non-negative")
        if len(self.schedule) == 0:
            raise ParameterError("ensemble needs at least one sample time")

    def to_dict(self) -> dict:
        p = self.params
        return {
            "params": {"L": p.L, "L_a": p.L_a, "eta_a": p.eta_a, "n_c": p.n_c, "W": p.W, "g": p.g},
            "init": self.init.to_dict(),
            "cfg": {"dt": self.cfg.dt, "nl_iters": self.cfg.nl_iters, "nl_tol": self.cfg.nl_tol,
                    "max_halvings": self.cfg.max_halvings},
            "schedule": list(self.schedule.times),
            "n_real": int(self.n_real),
            "master_seed": int(self.master_seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> EnsembleSpec:
        return cls(
            params=LatticeParams(**d["params"]),
            init=InitialStateSpec(**d["init"]),
            cfg=IntegratorConfig(**d["cfg"]),
            schedule=RecordingSchedule(tuple(d["schedule"])),
            n_real=d["n_real"],
            master_seed=d["master_seed"],
        )

    def fingerprint(self) -> str:
        return _digest(self.to_dict())

    def physics_fingerprint(self) -> str:
        """Fingerprint ignoring the realization count and root seed."""
        d = self.to_dict()
        del d["n_real"], d["master_seed"]
        return _digest(d)


def _digest(d) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def realization_seeds(master_seed: int, index: int) -> tuple[int, int]:
    """(disorder seed, phase seed) for realization ``index``."""
    out = []
    for stream in (DISORDER_STREAM, PHASE_STREAM):
        ss = np.random.SeedSequence([int(master_seed), int(index), stream])
        out.append(int(ss.generate_state(1, np.uint64)[0]))
    return out[0], out[1]


@dataclass
class SurvivalTrace:
    """Ensemble mean and standard error of the survival probability.

    ``samples`` keeps the per-realization curves (rows in realization order)
    when available; it is not written to disk.
    """

    t: np.ndarray
    p_mean: np.ndarray
    p_stderr: np.ndarray
    n_real: int
    fingerprint: str
    spec: dict = field(default_factory=dict)
    samples: np.ndarray | None = field(default=None, repr=False)
    profile_mean: np.ndarray | None = field(default=None, repr=False)
    seeds: tuple = ()

    @property
    def stderr_is_zero(self) -> bool:
        return self.n_real < 2

    def at(self, t: float) -> tuple[float, float]:
        i = int(np.argmin(np.abs(self.t - t)))
        return float(self.p_mean[i]), float(self.p_stderr[i])


def run_realization(spec: EnsembleSpec, index: int, with_profile: bool = False,
                    backend=None):
    """Survival curve (and optionally the final box profile) of one realization."""
    dseed, pseed = realization_seeds(spec.master_seed, index)
    return _run_seeds(spec, dseed, pseed, index, with_profile, backend)


def _run_seeds(spec, dseed, pseed, index, with_profile=False, backend=None):
    params = spec.params
    dis = sample_disorder(params, dseed)
    state = make_initial_state(replace(spec.init, seed=pseed), params)
    observers = {"p": lambda s: survival_probability(s, params)}
    try:
        ev = evolve(state, dis, params, spec.cfg, spec.schedule, observers, backend=backend)
    except StepError as exc:
        raise RealizationError(
            f"realization {index} failed (disorder seed {dseed}, phase seed {pseed}): {exc}",
            index, dseed, pseed) from exc
    prof = box_profile(ev.state, params) if with_profile else None
    return ev.records["p"], prof


def _worker(args):
    spec_dict, dseed, pseed, index, with_profile = args
    return _run_seeds(EnsembleSpec.from_dict(spec_dict), dseed, pseed, index, with_profile)


def _aggregate(t, samples, fingerprint, spec, profiles=None, seeds=()):
    n = samples.shape[0]
    mean = np.clip(samples.mean(axis=0), 0.0, 1.0)
    if n > 1:
        stderr = samples.std(axis=0, ddof=1) / math.sqrt(n)
    else:
        stderr = np.zeros_like(mean)
    prof = None if profiles is None else np.mean(profiles, axis=0)
    return SurvivalTrace(np.asarray(t, float), mean, stderr, n, fingerprint, spec,
                         samples, prof, tuple(seeds))


def run_ensemble(spec: EnsembleSpec, jobs: int = 1, with_profiles: bool = False,
                 seed_pairs=None, progress=None) -> SurvivalTrace:
    """Run every realization and reduce them in index order.

    ``seed_pairs`` overrides the derived (disorder, phase) seeds, e.g. to
    rerun the union of two ensembles as one.
    """
    if seed_pairs is None:
        seed_pairs = [realization_seeds(spec.master_seed, i) for i in range(spec.n_real)]
    seed_pairs = [tuple(int(s) for s in pair) for pair in seed_pairs]
    if len(set(seed_pairs)) != len(seed_pairs):
        raise ParameterError("realization seeds collide")
    if len(seed_pairs) != spec.n_real:
        spec = replace(spec, n_real=len(seed_pairs))
    d = spec.to_dict()
    tasks = [(d, ds, ps, i, with_profiles) for i, (ds, ps) in enumerate(seed_pairs)]
    results = []
    if jobs is None or jobs <= 1:
        for task in tasks:
            results.append(_worker(task))
            if progress:
                progress(len(results), len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for res in pool.map(_worker, tasks, chunksize=max(1, len(tasks) // (4 * jobs))):
                results.append(res)
                if progress:
                    progress(len(results), len(tasks))
    samples = np.vstack([r[0] for r in results])
    profiles = [r[1] for r in results] if with_profiles else None
    return _aggregate(spec.schedule.times, samples, spec.fingerprint(), d, profiles, seed_pairs)


def merge(traces) -> SurvivalTrace:
    """Pool traces of the same physics (differing only in seeds) into one."""
    traces = list(traces)
    if not traces:
        raise MergeError("nothing to merge")
    if len(traces) == 1:
        return traces[0]
    ref = traces[0]
    ref_phys = _physics_key(ref)
    for tr in traces[1:]:
        if _physics_key(tr) != ref_phys:
            raise MergeError("traces come from different parameters or schedules")
        if tr.t.shape != ref.t.shape or not np.array_equal(tr.t, ref.t):
            raise MergeError("traces have different sample times")
    n = sum(tr.n_real for tr in traces)
    if all(tr.samples is not None for tr in traces):
        samples = np.vstack([tr.samples for tr in traces])
        seeds = tuple(s for tr in traces for s in tr.seeds)
        out = _aggregate(ref.t, samples, "", ref.spec, seeds=seeds)
    else:
        mean = sum(tr.n_real * tr.p_mean for tr in traces) / n
        ss = sum((tr.n_real - 1) * tr.n_real * tr.p_stderr**2 + tr.n_real * (tr.p_mean - mean) ** 2
                 for tr in traces)
        stderr = np.sqrt(ss / (n - 1) / n)
        out = SurvivalTrace(ref.t.copy(), mean, stderr, n, "", ref.spec)
    spec = dict(ref.spec)
    spec["n_real"] = n
    spec["master_seed"] = [tr.spec.get("master_seed") for tr in traces]
    out.spec = spec
    out.fingerprint = _digest(spec)
    return out


def _physics_key(tr):
    d = dict(tr.spec)
    d.pop("n_real", None)
    d.pop("master_seed", None)
    return _digest(d)


# persistence --------------------------------------------------------------

def save_trace(trace: SurvivalTrace, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` (t, p_mean, p_stderr) and ``<path>.json`` (spec sidecar)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    csv_path = path.with_suffix(".csv")
    json_path = path.with_suffix(".json")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "p_mean", "p_stderr"])
        for row in zip(trace.t, trace.p_mean, trace.p_stderr):
            w.writerow([repr(float(x)) for x in row])
    side = {
        "kind": "survival_trace",
        "version": __version__,
        "fingerprint": trace.fingerprint,
        "n_real": trace.n_real,
        "spec": trace.spec,
    }
    if trace.profile_mean is not None:
        side["profile_mean"] = [float(x) for x in trace.profile_mean]
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(side, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return csv_path, json_path


def load_trace(path) -> SurvivalTrace:
    """Read a trace written by :func:`save_trace` (either file, or the common stem)."""
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    json_path = path.with_suffix(".json")
    if not json_path.exists():
        raise FileNotFoundError(f"missing sidecar {json_path}")
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    with open(json_path, encoding="utf-8") as fh:
        side = json.load(fh)
    prof = side.get("profile_mean")
    return SurvivalTrace(data[:, 0], data[:, 1], data[:, 2], int(side["n_real"]),
                         side["fingerprint"], side["spec"],
                         profile_mean=None if prof is None else np.asarray(prof))
