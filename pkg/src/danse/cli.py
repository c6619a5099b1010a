"""Command-line driver: ``danse run|fit|scale|eigen|report``.

Configurations are flat JSON objects (see ``docs/config_schema.json``).
Exit status is 0 on success, 1 for configuration or input errors and 2
for numerical failures; a failed realization prints the seeds needed to
replay it.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import sys
import time
import warnings
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import EnsembleSpec, load_trace, run_ensemble, save_trace
from .errors import DanseError, FitError, RealizationError, StepError
from .fit import (
    collapse_quality,
    detect_crossovers,
    effective_absorber_distance,
    fit_survival,
    model_p_linear,
    model_p_nonlinear,
    scale_point,
)
from .integrator import IntegratorConfig, RecordingSchedule, suggest_dt
from .model import InitialStateSpec, LatticeParams, anderson_localization_length, sample_disorder

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2

FULL_SCALE = {"t_max": 1e5, "n_real": 1000}

FIT_COLUMNS = ("name", "W", "g", "L0", "n_real", "ell_0", "ell_eff", "t2", "ell_a",
               "residual", "t_min", "t_max", "converged", "n_points", "flags", "fingerprint")


class ConfigError(DanseError, ValueError):
    """Malformed or inconsistent configuration."""


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


@dataclass
class RunConfig:
    """Flat run configuration; ``W``, ``g`` and ``L0`` may be lists (sweep axes)."""

    W: list = field(default_factory=lambda: [2.0])
    g: list = field(default_factory=lambda: [0.0])
    L0: list = field(default_factory=lambda: [21])
    L: int = 101
    L_a: int = 10
    eta_a: float = 0.1
    n_c: float | None = None
    shape: str = "square"
    phases: str = "random"
    dt: object = 0.05
    dt_kappa: float = 0.25
    nl_iters: int = 10
    nl_tol: float = 1e-10
    max_halvings: int = 8
    t_max: float = 1e4
    t_min: float = 0.1
    per_decade: int = 64
    max_samples: int = 400
    n_real: int = 200
    master_seed: int = 0
    name: str = "run"
    # spectral pipeline
    eigen_realizations: int = 50
    eigen_window: list = field(default_factory=lambda: [-0.5, 0.5])
    decay_energies: list = field(default_factory=lambda: [0.0, 0.6, 1.0, 1.3, 1.6])
    decay_states: int = 12
    decay_t_max: float = 1e5
    decay_seed: int = 7

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = sorted(k for k in d if k not in known and not k.startswith("_"))
        if extra:
            raise ConfigError(f"unknown configuration keys: {', '.join(extra)}")
        kw = {k: v for k, v in d.items() if k in known}
        for axis in ("W", "g", "L0"):
            if axis in kw:
                kw[axis] = _as_list(kw[axis])
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def validate(self):
        if not (self.W and self.g and self.L0):
            raise ConfigError("W, g and L0 need at least one value each")
        if self.master_seed is None:
            raise ConfigError("master_seed must be an explicit integer")
        if not (isinstance(self.dt, (int, float)) or self.dt == "auto"):
            raise ConfigError("dt must be a number or 'auto'")
        try:
            for W, g, L0 in self.grid():
                self.spec(W, g, L0)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def grid(self):
        return list(itertools.product(self.W, self.g, self.L0))

    def params(self, W, g) -> LatticeParams:
        return LatticeParams(L=int(self.L), L_a=int(self.L_a), eta_a=float(self.eta_a),
                             n_c=self.n_c, W=float(W), g=float(g))

    def step_size(self, g, L0) -> float:
        if self.dt == "auto":
            return suggest_dt(g, 1.0 / L0, kappa=self.dt_kappa)
        return float(self.dt)

    def schedule(self) -> RecordingSchedule:
        return RecordingSchedule.log_spaced(float(self.t_max), int(self.per_decade),
                                            float(self.t_min), int(self.max_samples))

    def spec(self, W, g, L0) -> EnsembleSpec:
        cfg = IntegratorConfig(dt=self.step_size(g, L0), nl_iters=int(self.nl_iters),
                               nl_tol=float(self.nl_tol), max_halvings=int(self.max_halvings))
        init = InitialStateSpec(shape=self.shape, L0=int(L0), phases=self.phases)
        return EnsembleSpec(self.params(W, g), init, cfg, self.schedule(),
                            int(self.n_real), int(self.master_seed))


def point_name(W, g, L0) -> str:
    return f"W{W:g}_g{g:g}_L0{int(L0)}"


def load_config(path, full_scale=False) -> RunConfig:
    path = Path(path)
    if not path.exists():
        preset = resources.files("danse") / "presets" / path.name
        if preset.is_file():
            path = preset
        else:
            raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if full_scale:
        d = {**d, **FULL_SCALE}
    return RunConfig.from_dict(d)


# output helpers -----------------------------------------------------------

def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# run ----------------------------------------------------------------------

def cmd_run(cfg: RunConfig, out: Path, jobs: int = 1, dry_run: bool = False) -> int:
    grid = cfg.grid()
    if dry_run:
        steps = sum(cfg.n_real * math.ceil(cfg.t_max / cfg.step_size(g, L0)) for _, g, L0 in grid)
        print(f"grid points: {len(grid)}")
        print(f"realizations: {len(grid) * cfg.n_real}")
        print(f"estimated steps: {steps:.3e}")
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"version": __version__, "config": cfg.to_dict(), "points": [],
                "started": time.strftime("%Y-%m-%dT%H:%M:%S")}
    status = EXIT_OK
    print(f"{'point':<28}{'n_real':>7}{'p(t_max)':>11}{'stderr':>10}{'seconds':>9}")
    for W, g, L0 in grid:
        name = point_name(W, g, L0)
        spec = cfg.spec(W, g, L0)
        t0 = time.perf_counter()
        try:
            trace = run_ensemble(spec, jobs=jobs)
        except RealizationError as exc:
            print(f"error: {name}: {exc}", file=sys.stderr)
            print(f"replay: W={W} g={g} L0={L0} disorder_seed={exc.disorder_seed} "
                  f"phase_seed={exc.phase_seed}", file=sys.stderr)
            manifest["points"].append({"name": name, "status": "failed",
                                       "disorder_seed": exc.disorder_seed,
                                       "phase_seed": exc.phase_seed})
            status = EXIT_NUMERIC
            break
        elapsed = time.perf_counter() - t0
        csv_path, json_path = save_trace(trace, out / "traces" / name)
        p_end, s_end = trace.p_mean[-1], trace.p_stderr[-1]
        print(f"{name:<28}{trace.n_real:>7}{p_end:>11.4f}{s_end:>10.4f}{elapsed:>9.1f}")
        manifest["points"].append({"name": name, "status": "done", "fingerprint": trace.fingerprint,
                                   "files": [csv_path.name, json_path.name],
                                   "seconds": round(elapsed, 3)})
    manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    _write_json(out / "manifest.json", manifest)
    return status


# fit ----------------------------------------------------------------------

def _trace_sidecars(paths) -> list[Path]:
    found = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            found.extend(sorted(p.rglob("*.json")))
        elif p.exists():
            found.append(p.with_suffix(".json"))
        else:
            raise ConfigError(f"no such file or directory: {p}")
    return found


def fit_trace_file(json_path: Path) -> dict:
    """Fit one saved trace; returns a row of :data:`FIT_COLUMNS`."""
    trace = load_trace(json_path)
    sp = trace.spec
    params = LatticeParams(**sp["params"])
    L0 = int(sp["init"]["L0"])
    ell_0 = anderson_localization_length(params.W)
    ell_a = effective_absorber_distance(params.L, L0, ell_0 if math.isfinite(ell_0) else 0.0)
    res = fit_survival(trace, ell_a, ell_0=ell_0)
    row = {"name": json_path.stem, "W": params.W, "g": params.g, "L0": L0,
           "n_real": trace.n_real, "ell_0": ell_0, "fingerprint": trace.fingerprint}
    row.update(res.as_row())
    return row


def cmd_fit(paths, out: Path) -> int:
    sidecars = _trace_sidecars(paths)
    rows, skipped = [], 0
    for js in sidecars:
        try:
            with open(js, encoding="utf-8") as fh:
                kind = json.load(fh).get("kind")
        except (OSError, json.JSONDecodeError):
            kind = None
        if kind != "survival_trace":
            continue
        if not js.with_suffix(".csv").exists():
            print(f"warning: {js.name}: missing trace data, skipped", file=sys.stderr)
            skipped += 1
            continue
        try:
            rows.append(fit_trace_file(js))
        except FitError as exc:
            print(f"warning: {js.name}: {exc}", file=sys.stderr)
            skipped += 1
    for p in paths:
        p = Path(p)
        if p.suffix == ".csv" and not p.with_suffix(".json").exists():
            print(f"warning: {p.name}: missing sidecar, skipped", file=sys.stderr)
            skipped += 1
    if not rows:
        print("error: no fittable traces found", file=sys.stderr)
        return EXIT_CONFIG
    rows.sort(key=lambda r: (r["W"], r["L0"], r["g"]))
    _write_csv(out / "fits.csv", FIT_COLUMNS, ([r[c] for c in FIT_COLUMNS] for r in rows))
    _write_json(out / "fits.json", {"version": __version__, "fits": rows})
    print(f"{'name':<28}{'ell_eff':>9}{'t2':>11}{'n':>5}  flags")
    for r in rows:
        print(f"{r['name']:<28}{r['ell_eff']:>9.3f}{r['t2']:>11.4g}{r['n_points']:>5}  {r['flags']}")
    if skipped:
        print(f"{skipped} trace(s) skipped", file=sys.stderr)
    return EXIT_OK


# scale --------------------------------------------------------------------

def _load_fit_rows(path: Path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "fits.csv"
    if not path.exists():
        raise ConfigError(f"fit table not found: {path}")
    rows = []
    for r in _read_csv(path):
        rows.append({"W": float(r["W"]), "g": float(r["g"]), "L0": int(r["L0"]),
                     "ell_eff": float(r["ell_eff"]), "flags": r.get("flags", "")})
    return rows


def scale_rows(rows):
    """Scaled points per W, the collapse report and crossovers of every (W, L0) curve."""
    by_w = {}
    for r in rows:
        if r["g"] < 0 or not math.isfinite(r["ell_eff"]):
            continue
        by_w.setdefault(r["W"], []).append(scale_point(r["g"], r["W"], r["L0"], r["ell_eff"]))
    out = {}
    for W, pts in sorted(by_w.items()):
        entry = {"points": pts, "collapse": None, "crossovers": {}}
        if len({p.L0 for p in pts}) >= 2:
            entry["collapse"] = collapse_quality([p for p in pts if p.g > 0])
        for L0 in sorted({p.L0 for p in pts}):
            curve = sorted((p for p in pts if p.L0 == L0), key=lambda p: p.g)
            if len(curve) >= 3:
                entry["crossovers"][L0] = detect_crossovers([p.g_tilde for p in curve],
                                                            [p.ell_tilde for p in curve])
        out[W] = entry
    return out


def cmd_scale(table: Path, out: Path) -> int:
    rows = _load_fit_rows(table)
    if not rows:
        print("error: empty fit table", file=sys.stderr)
        return EXIT_CONFIG
    result = scale_rows(rows)
    scaled_rows, report = [], {"version": __version__, "W": {}}
    for W, entry in result.items():
        for p in entry["points"]:
            scaled_rows.append((p.W, p.L0, p.g, p.ell_eff, p.g_tilde, p.ell_tilde))
        rep = {}
        col = entry["collapse"]
        if col is not None:
            rep["collapse"] = {"g_tilde_bins": col.bins, "cv_scaled": col.cv_scaled,
                               "cv_unscaled": col.cv_unscaled, "g_matched": col.g_matched,
                               "n_groups": col.n_groups, "skipped": col.skipped,
                               "groups": list(col.groups)}
        rep["crossovers"] = {str(L0): {"g_tilde_c": c.g_c, "g_tilde_c_bounds": c.g_c_bounds,
                                       "g_tilde_st": c.g_st, "g_tilde_st_bounds": c.g_st_bounds,
                                       "plateau": c.plateau, "flags": list(c.flags)}
                             for L0, c in entry["crossovers"].items()}
        report["W"][f"{W:g}"] = rep
        for L0, c in entry["crossovers"].items():
            print(f"W={W:g} L0={L0}: g~_c={_opt(c.g_c)} g~_st={_opt(c.g_st)} {' '.join(c.flags)}")
        if col is not None:
            for b, s, u in zip(col.bins, col.cv_scaled, col.cv_unscaled):
                print(f"W={W:g} g~={b:.3g}: CV scaled={s:.3f} unscaled={u:.3f}")
    _write_csv(out / "scaled.csv", ("W", "L0", "g", "ell_eff", "g_tilde", "ell_tilde"),
               sorted(scaled_rows))
    _write_json(out / "collapse.json", _nan_to_none(report))
    return EXIT_OK


def _opt(x):
    return "-" if x is None else f"{x:.3g}"


def _nan_to_none(obj):
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_nan_to_none(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# eigen --------------------------------------------------------------------

def cmd_eigen(cfg: RunConfig, out: Path) -> int:
    from . import spectral
    from .ensemble import realization_seeds

    summary = {"version": __version__, "W": {}}
    for W in cfg.W:
        params = cfg.params(W, 0.0)
        seeds = [realization_seeds(cfg.master_seed, i)[0] for i in range(cfg.eigen_realizations)]
        reals = [sample_disorder(params, s) for s in seeds]
        rows = []
        for s, dis in zip(seeds, reals):
            for k, pair in enumerate(spectral.diagonalize_anderson(dis, params)):
                rows.append((s, k, pair.E, spectral.band_index(pair.E), pair.n_center, pair.ell))
        tag = f"W{W:g}"
        _write_csv(out / f"spectrum_{tag}.csv", ("seed", "index", "E", "nu", "n_center", "ell"), rows)
        prof = spectral.mean_localization_profile(reals, params, tuple(cfg.eigen_window))
        keep = prof.counts > 0
        _write_csv(out / f"profile_{tag}.csv", ("distance", "profile", "count"),
                   zip(prof.distance[keep], prof.profile[keep], prof.counts[keep]))
        decay = decay_pipeline(cfg, params)
        _write_csv(out / f"decay_{tag}.csv",
                   ("E_bin", "seed", "E", "n_center", "ell", "t_nu", "r2", "alpha_end"), decay["rows"])
        _write_csv(out / f"decay_bins_{tag}.csv", ("E", "t_nu", "r2", "ell_nu", "ell_a"),
                   [tuple(b.values()) for b in decay["bins"]])
        summary["W"][f"{W:g}"] = {"profile_ell": prof.ell, "profile_states": prof.n_states,
                                  "ell_0": anderson_localization_length(W),
                                  **{k: v for k, v in decay.items() if k != "rows"}}
        print(f"W={W:g}: profile ell={prof.ell:.2f} (96/W^2={anderson_localization_length(W):.2f}), "
              f"t2={decay.get('t2')}, slope={decay.get('slope')} vs 2 ell_a={decay.get('two_ell_a')}")
    _write_json(out / "eigen.json", _nan_to_none(summary))
    return EXIT_OK


def decay_pipeline(cfg: RunConfig, params: LatticeParams) -> dict:
    """Binned eigenstate decay and the fitted decay-time law for one disorder strength."""
    from . import spectral

    ell_0 = anderson_localization_length(params.W)
    sched = RecordingSchedule.log_spaced(cfg.decay_t_max, 32, 1.0)
    icfg = IntegratorConfig(dt=cfg.step_size(0.0, 1), nl_iters=cfg.nl_iters, nl_tol=cfg.nl_tol)
    bins = spectral.binned_decay(params, cfg.decay_energies, cfg.decay_states, icfg, sched,
                                 cfg.decay_seed)
    rows = [(b.E, s[0], s[1], s[2], s[3], s[4], s[5], s[6]) for b in bins for s in b.states]
    out = {"rows": rows,
           "bins": [{"E": b.E, "t_nu": b.t_nu, "r2": b.r2, "ell_nu": b.ell_nu, "ell_a": b.ell_a}
                    for b in bins]}
    pairs = [(b.t_nu, b.ell_nu) for b in bins]
    ell_a = float(np.mean([b.ell_a for b in bins]))
    out["ell_a"] = ell_a
    out["two_ell_a"] = 2 * ell_a
    try:
        slope, icpt, r2 = spectral.tnu_law_regression(pairs)
        out.update(slope=slope, intercept=icpt, r2=r2)
        if math.isfinite(ell_0):
            out["t2"] = spectral.fit_tnu_law(pairs, ell_a, ell_0)
    except FitError as exc:
        out["error"] = str(exc)
    return out


# report -------------------------------------------------------------------

def cmd_report(directory: Path, out: Path) -> int:
    directory = Path(directory)
    sidecars = [p for p in _trace_sidecars([directory]) if _is_trace(p)]
    if not sidecars:
        print(f"error: no traces under {directory}", file=sys.stderr)
        return EXIT_CONFIG
    out.mkdir(parents=True, exist_ok=True)
    fits = {}
    fit_path = directory / "fits.csv"
    if fit_path.exists():
        for r in _read_csv(fit_path):
            fits[r["name"]] = r
    written = []
    fig1, curves, a3 = [], [], []
    for js in sidecars:
        tr = load_trace(js)
        sp = tr.spec
        W, g, L0 = sp["params"]["W"], sp["params"]["g"], int(sp["init"]["L0"])
        fig1.append((W, L0, g, tr.p_mean[-1], tr.p_stderr[-1], tr.t[-1]))
        fr = fits.get(js.stem)
        for t, p, s in zip(tr.t, tr.p_mean, tr.p_stderr):
            model = math.nan
            if fr and fr["t2"] not in ("inf", "") and float(fr["t2"]) < t:
                model = float(model_p_nonlinear(t, float(fr["ell_eff"]), float(fr["t2"]),
                                                float(fr["ell_a"])))
            curves.append((W, L0, g, t, p, s, model))
        if g == 0:
            a3.extend(_linear_overlay(tr, W, L0))
    written.append(_write_csv(out / "fig1_survival_vs_g.csv",
                              ("W", "L0", "g", "p", "p_stderr", "t"), sorted(fig1)))
    written.append(_write_csv(out / "fig2_survival_curves.csv",
                              ("W", "L0", "g", "t", "p", "p_stderr", "p_model"), curves))
    if a3:
        written.append(_write_csv(out / "figA3_linear_survival.csv",
                                  ("W", "L0", "t", "p", "p_stderr", "p_linear_model"), a3))
    if fits:
        rows = [(float(r["W"]), int(r["L0"]), float(r["g"]), float(r["ell_eff"]), float(r["t2"]),
                 r["flags"]) for r in fits.values()]
        rows.sort()
        written.append(_write_csv(out / "fig3_ell_eff_vs_g.csv",
                                  ("W", "L0", "g", "ell_eff", "flags"),
                                  [(a, b, c, d, f) for a, b, c, d, _, f in rows]))
        written.append(_write_csv(out / "fig4_t2_vs_g.csv", ("W", "L0", "g", "t2", "flags"),
                                  [(a, b, c, e, f) for a, b, c, _, e, f in rows]))
        pos = [r for r in rows if r[2] > 0]
        scaled = [(W, L0, g, scale_point(g, W, L0, ell).g_tilde, scale_point(g, W, L0, ell).ell_tilde)
                  for W, L0, g, ell, _, _ in pos]
        written.append(_write_csv(out / "fig5_scaled.csv",
                                  ("W", "L0", "g", "g_tilde", "ell_tilde"), scaled))
        for tag, header, matrix in _dense_maps(scaled):
            written.append(_write_csv(out / f"fig6_scaled_map{tag}.csv", header, matrix))
    for name in ("eigen.json",):
        if (directory / name).exists():
            data = json.loads((directory / name).read_text(encoding="utf-8"))
            a1 = []
            for W in data.get("W", {}):
                dec = directory / f"decay_bins_W{W}.csv"
                if dec.exists():
                    for r in _read_csv(dec):
                        a1.append((float(W), float(r["E"]), float(r["ell_nu"]),
                                   1.0 / float(r["ell_nu"]), float(r["t_nu"])))
            if a1:
                written.append(_write_csv(out / "figA1_tnu_vs_inverse_ell.csv",
                                          ("W", "E", "ell_nu", "inv_ell_nu", "t_nu"), a1))
    _write_json(out / "index.json", {"version": __version__,
                                     "files": [p.name for p in written], "columns": _COLUMN_DOCS})
    for p in written:
        print(p)
    return EXIT_OK


_COLUMN_DOCS = {
    "fig1_survival_vs_g.csv": "survival probability at the final time against g, per (W, L0)",
    "fig2_survival_curves.csv": "p(t) with standard error and the fitted survival model",
    "fig3_ell_eff_vs_g.csv": "fitted effective length against g",
    "fig4_t2_vs_g.csv": "fitted activation time against g",
    "fig5_scaled.csv": "g and ell_eff rescaled by L0^(-3/4)",
    "fig6_scaled_map.csv": "matrix of ell_tilde: rows W, columns g_tilde (header), geometric mean over L0; "
                           "fig6_scaled_map_L0<n>.csv holds one L0; empty cells lie outside the data",
    "figA1_tnu_vs_inverse_ell.csv": "eigenstate decay time against inverse localization length",
    "figA3_linear_survival.csv": "g = 0 survival with the linear model at ell_0 and a t2 fitted with ell fixed",
}


def _linear_overlay(trace, W, L0):
    """g = 0 trace rows with the linear model at ell_0 and a t2 fitted with ell fixed."""
    ell_0 = anderson_localization_length(W)
    lin = np.full(trace.t.shape, math.nan)
    if math.isfinite(ell_0):
        try:
            res = fit_survival(trace, effective_absorber_distance(101, L0, ell_0), fixed_ell=ell_0)
        except FitError:
            res = None
        if res is not None and math.isfinite(res.t2):
            lin = np.asarray(model_p_linear(trace.t, ell_0, res.t2, res.ell_a), float)
    return [(W, L0, t, p, s, m) for t, p, s, m in zip(trace.t, trace.p_mean, trace.p_stderr, lin)]


def _dense_maps(scaled, n=64):
    """``ell_tilde`` on a (W, log-uniform ``g_tilde``) grid: one matrix per L0 and one averaged over L0.

    Each (L0, W) curve is interpolated in (log g_tilde, log ell_tilde); cells
    outside a curve's range are empty. Rows are W, columns g_tilde.
    """
    groups = {}
    for W, L0, g, gt, lt in scaled:
        groups.setdefault((L0, W), []).append((gt, lt))
    groups = {k: sorted(v) for k, v in groups.items() if len(v) >= 2}
    if not groups:
        return []
    lo = min(v[0][0] for v in groups.values())
    hi = max(v[-1][0] for v in groups.values())
    grid = np.geomspace(lo, hi, n)
    lg = np.log(grid)
    Ws = sorted({W for _, W in groups})
    cells = {}
    for (L0, W), pts in groups.items():
        x = np.log([a for a, _ in pts])
        y = np.log([b for _, b in pts])
        inside = (lg >= x[0] - 1e-12) & (lg <= x[-1] + 1e-12)
        cells[L0, W] = np.where(inside, np.exp(np.interp(lg, x, y)), np.nan)
    header = ("W",) + tuple(repr(float(v)) for v in grid)

    def matrix(select):
        rows = []
        for W in Ws:
            stack = [v for (L0, w), v in cells.items() if w == W and select(L0)]
            if not stack:
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                vals = np.exp(np.nanmean(np.log(np.vstack(stack)), axis=0)) if len(stack) > 1 else stack[0]
            rows.append((W,) + tuple("" if not np.isfinite(v) else float(v) for v in vals))
        return rows

    out = [("", header, matrix(lambda L0: True))]
    for L0 in sorted({L0 for L0, _ in groups}):
        out.append((f"_L0{L0}", header, matrix(lambda x, L0=L0: x == L0)))
    return out


def _is_trace(path: Path) -> bool:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh).get("kind") == "survival_trace"
    except (OSError, json.JSONDecodeError, AttributeError):
        return False


# entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="danse", description="Disordered nonlinear lattice survival simulations.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON config file or preset name")
            p.add_argument("--paper-scale", action="store_true", help="t_max = 1e5 and n_real = 1000")
        p.add_argument("--out", default="danse_out", help="output directory")
        return p

    p = common(sub.add_parser("run", help="run survival ensembles over the configured grid"))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--dry-run", action="store_true", help="print the workload and exit")
    p = common(sub.add_parser("fit", help="fit saved traces"), config=False)
    p.add_argument("inputs", nargs="+", help="trace files or directories")
    p = common(sub.add_parser("scale", help="scaling collapse and crossovers of a fit table"), config=False)
    p.add_argument("table", help="fits.csv or a directory holding it")
    common(sub.add_parser("eigen", help="spectral diagnostics and eigenstate decay"))
    p = common(sub.add_parser("report", help="plot-ready CSV bundles"), config=False)
    p.add_argument("directory", help="directory with traces (and optionally fits.csv, eigen.json)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        if args.command == "run":
            if args.jobs < 1:
                raise ConfigError("--jobs must be >= 1")
            return cmd_run(load_config(args.config, args.paper_scale), out, args.jobs, args.dry_run)
        if args.command == "fit":
            return cmd_fit(args.inputs, out)
        if args.command == "scale":
            return cmd_scale(Path(args.table), out)
        if args.command == "eigen":
            return cmd_eigen(load_config(args.config, args.paper_scale), out)
        if args.command == "report":
            return cmd_report(Path(args.directory), out)
    except (StepError, RealizationError, FitError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
