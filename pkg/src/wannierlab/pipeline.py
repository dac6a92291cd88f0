"""Experiment configuration and the model -> projection -> invariants -> Wannier
pipeline behind the command line.
"""
from __future__ import annotations

import hashlib
import json
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import report as rp
from .decay import fit_decay, radial_profile, sequence_profile
from .invariants import (INT_TOL, berry_flux, bloch_frames, chern_number_real_space,
                         compute_kclass)
from .models import (PRESETS, SUITE_PRESETS, ModelError, SpectralProjection,
                     admissibility_check, build_model, bulk_spectrum, detect_gaps, select_window,
                     spectral_projection)
from .sequences import GammaSequence, SpectralGapError
from .wannier import (GramNotInvertible, default_trials, gram_floor, reconstruction_error,
                      tight_frame, trial_gram, wannierize)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

TOLERANCES = {
    "idempotency": 1e-2,
    "ortho": 1e-6,
    "frame": 1e-6,
    "gram_floor": 1e-5,
    "chern_int": INT_TOL,
    "residual_max": 0.5,
    "s_min": 6.0,
}

#: backend per group family when ``method = "auto"``
AUTO_METHOD = {"Zd": "bloch", "TwistedZ2": "bloch", "HeisZ": "sign", "Pg": "ed",
               "InfDihedral": "ed"}

#: radii used by ``suite`` and ``dichotomy``; the last one is the working radius
SUITE_RADII = {
    "chern_trivial": [12, 32],
    "chern_topological": [12, 32],
    "hofstadter": [12, 32, 64],
}
DEFAULT_RADII = [8, 12]
GRAM_RADII = [6, 9, 12]
GRAM_BUDGET = 3000


class ConfigError(ValueError):
    """Invalid experiment configuration (usage error)."""


@dataclass
class ExperimentConfig:
    preset: str
    params: dict = field(default_factory=dict)
    radii: list = field(default_factory=lambda: list(DEFAULT_RADII))
    gap_index: int = 0
    energy_range: list = None
    method: str = "auto"
    trials: str = "delta"
    tolerances: dict = field(default_factory=lambda: dict(TOLERANCES))
    out: str = "out"
    seed: int = 0
    n_k: int = 32
    gram_radii: list = field(default_factory=lambda: list(GRAM_RADII))

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        self.radii = [int(r) for r in self.radii]
        if not self.radii or any(r < 1 for r in self.radii):
            raise ConfigError("radii must be positive integers")
        if self.radii != sorted(set(self.radii)):
            raise ConfigError("radii must be strictly ascending")
        if self.method not in ("auto", "ed", "bloch", "sign"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.trials not in ("delta", "cell", "random"):
            raise ConfigError(f"unknown trial strategy {self.trials!r}")
        unknown = set(self.tolerances) - set(TOLERANCES)
        if unknown:
            raise ConfigError(f"unknown tolerance keys {sorted(unknown)}")
        self.tolerances = {**TOLERANCES, **{k: float(v) for k, v in self.tolerances.items()}}
        if self.energy_range is not None and len(self.energy_range) != 2:
            raise ConfigError("energy_range needs two numbers")
        self.seed = int(self.seed)

    @property
    def R(self):
        return self.radii[-1]

    def to_dict(self):
        d = asdict(self)
        d.pop("out")
        return d

    @classmethod
    def for_preset(cls, preset, **kw):
        kw.setdefault("radii", SUITE_RADII.get(preset, DEFAULT_RADII))
        return cls(preset=preset, **kw)


def load_config(path):
    """Parse a TOML experiment file.

    Layout::

        [model]       preset = "pg", optional [model.params] table
        [run]         radii, method, seed, n_k, out, gram_radii
        [window]      gap_index or energy_range
        [trials]      strategy
        [tolerances]  any of the keys in TOLERANCES
    """
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from exc
    model = data.get("model", {})
    if "preset" not in model:
        raise ConfigError("config needs [model] preset")
    run = data.get("run", {})
    window = data.get("window", {})
    kw = {
        "preset": model["preset"],
        "params": dict(model.get("params", {})),
        "gap_index": int(window.get("gap_index", 0)),
        "energy_range": window.get("energy_range"),
        "trials": data.get("trials", {}).get("strategy", "delta"),
        "tolerances": dict(data.get("tolerances", {})),
    }
    for key in ("radii", "method", "seed", "n_k", "out", "gram_radii"):
        if key in run:
            kw[key] = run[key]
    try:
        cfg = ExperimentConfig(**kw)
        build_model(cfg.preset, **cfg.params)
    except (TypeError, ModelError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def parse_tolerances(items):
    """``["ortho=1e-8", ...]`` -> dict."""
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--tol expects KEY=VAL, got {item!r}")
        k, v = item.split("=", 1)
        k = k.strip()
        if k not in TOLERANCES:
            raise ConfigError(f"unknown tolerance {k!r}; choose from {sorted(TOLERANCES)}")
        try:
            out[k] = float(v)
        except ValueError as exc:
            raise ConfigError(f"tolerance {k} needs a number") from exc
    return out


# ---------------------------------------------------------------------------
# cache

class Cache:
    """Content-addressed JSON cache of pipeline intermediates.

    Keys hash the model, the spectral window, the radius and the backend.
    Floats are stored with ``repr`` precision so cached and recomputed
    values agree exactly.  Unreadable entries are recomputed with a warning.
    """

    def __init__(self, root):
        self.root = None if root is None else Path(root)

    @staticmethod
    def key(**parts):
        text = json.dumps(parts, sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:32]

    def get(self, key):
        if self.root is None:
            return None
        path = self.root / f"{key}.json"
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text())
        except (OSError, ValueError) as exc:
            warnings.warn(f"corrupted cache entry {path.name} ({exc}); recomputing",
                          stacklevel=2)
            return None

    def put(self, key, value):
        if self.root is None:
            return
        rp.write_atomic(self.root / f"{key}.json", json.dumps(value, sort_keys=True))


def _window_key(w):
    return {k: (None if v is None else repr(float(v))) for k, v in w.to_dict().items()}


def cached_projection(model, window, R, method, cache):
    key = Cache.key(stage="projection", model=model.model_hash(), window=_window_key(window),
                    R=int(R), method=method)
    rec = cache.get(key)
    if rec is not None:
        try:
            kernel = GammaSequence.from_record(rec["kernel"])
            L, prof = sequence_profile(kernel)
            return SpectralProjection(kernel, window, int(R), method, fit_decay(L, prof),
                                      float(rec["idempotency"]), float(rec["self_adjointness"]),
                                      int(rec["edge_states"]), model.name)
        except (KeyError, TypeError, ValueError) as exc:
            warnings.warn(f"corrupted cache entry for {model.name} R={R} ({exc}); recomputing",
                          stacklevel=2)
    proj = spectral_projection(model, window, R, method=method, tol=None)
    cache.put(key, {"kernel": proj.kernel.to_record(), "idempotency": repr(proj.idempotency),
                    "self_adjointness": repr(proj.self_adjointness),
                    "edge_states": proj.edge_states})
    return proj


def cached_spectrum(model, cache):
    key = Cache.key(stage="spectrum", model=model.model_hash())
    rec = cache.get(key)
    if rec is not None and "energies" in rec:
        return np.array([float(x) for x in rec["energies"]])
    e = bulk_spectrum(model)
    cache.put(key, {"energies": [repr(float(x)) for x in e]})
    return e


# ---------------------------------------------------------------------------
# stages

@dataclass
class PresetResult:
    """Everything computed for one preset; ``report`` is JSON-ready."""

    preset: str
    report: dict
    decay_rows: list
    spectrum_rows: list
    berry_rows: list
    timings: dict
    checks: dict
    figures: dict = field(default_factory=dict)

    @property
    def ok(self):
        return all(self.checks.values())


def _method(cfg, model):
    return AUTO_METHOD[model.group.family] if cfg.method == "auto" else cfg.method


def _profile_rows(preset, obj, R, method, L, prof):
    return [[preset, obj, int(R), method, int(l), float(v)] for l, v in zip(L, prof)]


def run_preset(cfg, stages=("spectrum", "project", "invariants", "wannier"), cache=None):
    """Run the requested stages for one configuration.

    Later stages compute what they need from earlier ones (through the
    cache when one is given).
    """
    cache = cache or Cache(None)
    tol = cfg.tolerances
    model = build_model(cfg.preset, **cfg.params)
    method = _method(cfg, model)
    rng = np.random.default_rng(cfg.seed)
    timings = {}
    checks = {}
    rep = {"preset": cfg.preset, "family": model.group.family, "group": model.group.spec(),
           "params": model.params, "model_hash": model.model_hash(), "d": model.d,
           "method": method, "radii": list(cfg.radii)}
    decay_rows, spectrum_rows, berry_rows = [], [], []
    figures = {}

    t = time.perf_counter()
    energies = cached_spectrum(model, cache)
    if cfg.energy_range is not None:
        window = select_window(model, energy_range=cfg.energy_range)
    else:
        gaps = detect_gaps(energies)
        if cfg.gap_index >= len(gaps):
            raise SpectralGapError(f"model {model.name!r} has {len(gaps)} gaps; gap index "
                                   f"{cfg.gap_index} requested", energies[:4])
        window = gaps[cfg.gap_index]
    timings["spectrum"] = time.perf_counter() - t
    rep["window"] = window.to_dict()
    rep["gaps"] = [g.to_dict() for g in detect_gaps(energies)]
    inside = (energies >= window.E_lo) & (energies <= window.E_hi)
    spectrum_rows = [[cfg.preset, i, float(e), int(b)] for i, (e, b) in
                     enumerate(zip(energies, inside))]
    figures["spectrum"] = (energies, window)
    if stages == ("spectrum",):
        return PresetResult(cfg.preset, rep, decay_rows, spectrum_rows, berry_rows, timings,
                            checks, figures)

    # projections at every radius
    projs = []
    rep["projections"] = []
    prev_alpha = None
    for R in cfg.radii:
        t = time.perf_counter()
        proj = cached_projection(model, window, R, method, cache)
        timings[f"project_R{R}"] = time.perf_counter() - t
        adm = admissibility_check(proj, tol["residual_max"], tol["s_min"])
        fit = proj.decay
        rep["projections"].append({
            "R": R, "method": method, "support": proj.kernel.support_radius(),
            "idempotency": proj.idempotency, "self_adjointness": proj.self_adjointness,
            "trace_per_cell": proj.rank(), "edge_states": proj.edge_states,
            "alpha": fit.alpha, "s": fit.s, "residual_exp": fit.residual_exp,
            "residual_pow": fit.residual_pow, "decay_verdict": adm.verdict,
            "admissible": adm.admissible,
            "delta_alpha": None if prev_alpha is None else fit.alpha - prev_alpha,
        })
        prev_alpha = fit.alpha
        L, prof = sequence_profile(proj.kernel)
        decay_rows += _profile_rows(cfg.preset, "kernel", R, method, L, prof)
        projs.append(proj)
    proj = projs[-1]
    checks[f"idempotency_R{cfg.R}"] = bool(proj.idempotency <= tol["idempotency"])
    figures["decay"] = [(f"kernel R={p.R}", *sequence_profile(p.kernel)) for p in projs]
    if "invariants" not in stages and "wannier" not in stages:
        return PresetResult(cfg.preset, rep, decay_rows, spectrum_rows, berry_rows, timings,
                            checks, figures)

    # invariants
    t = time.perf_counter()
    kc = compute_kclass(model, proj, window, n_k=cfg.n_k)
    inv = kc.to_dict()
    inv["R"] = cfg.R
    G = model.group
    if G.rank == 2 and G.family in ("Zd", "TwistedZ2"):
        rs = chern_number_real_space(proj)
        inv["real_space"] = rs.to_dict()
        mom = kc.invariants["chern"][0] if G.family == "Zd" else \
            kc.invariants["chern_magnetic_bloch"]
        inv["momentum_vs_real_space"] = abs(rs.value - mom)
        checks["chern_integral"] = bool(rs.deviation < tol["chern_int"])
        checks["chern_agreement"] = bool(abs(rs.value - mom) < tol["chern_int"])
        ks, U = bloch_frames(model, window, cfg.n_k)
        F = berry_flux(U)
        berry_rows = [[cfg.preset, float(ks[i, j, 0]), float(ks[i, j, 1]), float(F[i, j])]
                      for i in range(F.shape[0]) for j in range(F.shape[1])]
        figures["berry"] = (ks, F)
    rep["kclass"] = inv
    timings["invariants"] = time.perf_counter() - t
    if "wannier" not in stages:
        return PresetResult(cfg.preset, rep, decay_rows, spectrum_rows, berry_rows, timings,
                            checks, figures)

    # Wannier basis or tight-frame fallback
    t = time.perf_counter()
    trials = default_trials(proj, strategy=cfg.trials, model=model, rng=rng)
    gram = trial_gram(proj, trials)
    sweep = []
    for Rg in cfg.gram_radii:
        if len(G.ball_array(min(Rg, G.max_radius))) * len(trials) > GRAM_BUDGET:
            sweep.append({"R": Rg, "floor": None, "skipped": "budget"})
            continue
        sweep.append({"R": Rg, "floor": gram_floor(gram, Rg)})
    floors = [s["floor"] for s in sweep if s["floor"] is not None]
    wan = {"R": cfg.R, "trials": cfg.trials, "n_trials": len(trials), "gram_sweep": sweep,
           "gram_floor_decreasing": bool(all(b <= a + 1e-12 for a, b in zip(floors, floors[1:])))}
    outcome = None
    try:
        ws = wannierize(proj, trials, floor_min=tol["gram_floor"], ortho_tol=tol["ortho"])
        wan["basis"] = ws.diagnostics
        if ws.valid():
            outcome = "orthonormal-basis"
            wan["span_error"] = reconstruction_error(ws, proj, samples=2,
                                                     R=2 * proj.kernel.support_radius() + 2,
                                                     rng=rng)
            for j, w in enumerate(ws.functions):
                L, prof = radial_profile(w.lengths(), np.linalg.norm(w.amps, axis=1))
                decay_rows += _profile_rows(cfg.preset, f"wannier_{j + 1}", cfg.R, method, L, prof)
            figures["decay"].append((f"wannier R={cfg.R}", L, prof))
        else:
            wan["basis_rejected"] = "orthonormality tolerance not met"
    except GramNotInvertible as exc:
        wan["gram_error"] = str(exc)
        wan["gram_floor_at_failure"] = exc.floor
    if outcome is None:
        tf = tight_frame(proj, samples=4, rng=rng, frame_tol=tol["frame"])
        wan["frame"] = tf.diagnostics
        outcome = "tight-frame" if tf.valid() else "none"
        for j, f in enumerate(tf.functions):
            L, prof = radial_profile(f.lengths(), np.linalg.norm(f.amps, axis=1))
            decay_rows += _profile_rows(cfg.preset, f"frame_{j + 1}", cfg.R, method, L, prof)
    wan["outcome"] = outcome
    rep["wannier"] = wan
    timings["wannier"] = time.perf_counter() - t
    checks["wannier_valid"] = outcome != "none"

    verdict = kc.verdict
    if verdict in ("free", "stably-free-hence-free"):
        consistent = outcome == "orthonormal-basis"
    elif verdict == "non-free":
        consistent = outcome == "tight-frame"
    else:
        consistent = True
    checks["dichotomy_consistent"] = bool(consistent)
    rep["dichotomy"] = {"verdict": verdict, "predicted": kc.predicted, "outcome": outcome,
                        "consistent": bool(consistent), "R": cfg.R}
    rep["checks"] = dict(checks)
    return PresetResult(cfg.preset, rep, decay_rows, spectrum_rows, berry_rows, timings, checks,
                        figures)


def workers():
    try:
        return max(1, int(os.environ.get("WANNIERLAB_WORKERS", "1")))
    except ValueError:
        return 1


def run_many(cfgs, stages, cache=None):
    """Run independent presets on a bounded thread pool; results keep input order."""
    n = min(workers(), len(cfgs))
    if n <= 1:
        return [run_preset(c, stages, cache) for c in cfgs]
    with ThreadPoolExecutor(max_workers=n) as pool:
        futs = [pool.submit(run_preset, c, stages, cache) for c in cfgs]
        return [f.result() for f in futs]


def dichotomy_table(results):
    rows = []
    for r in results:
        rep = r.report
        dic = rep.get("dichotomy", {})
        projs = rep.get("projections", [])
        last = projs[-1] if projs else {}
        wan = rep.get("wannier", {})
        err = (wan.get("basis", {}).get("orthonormality_error") if dic.get("outcome") ==
               "orthonormal-basis" else wan.get("frame", {}).get("frame_deviation"))
        rows.append({"preset": r.preset, "family": rep["family"], "R": last.get("R"),
                     "verdict": dic.get("verdict"), "outcome": dic.get("outcome"),
                     "consistent": dic.get("consistent"), "alpha": last.get("alpha"),
                     "idempotency": last.get("idempotency"), "error": err})
    return rows


def format_table(rows):
    cols = ["preset", "family", "R", "verdict", "outcome", "consistent", "alpha", "idempotency",
            "error"]

    def cell(v):
        if isinstance(v, float):
            return f"{v:.3g}"
        return "-" if v is None else str(v)

    data = [[cell(r.get(c)) for c in cols] for r in rows]
    widths = [max(len(c), *(len(d[i]) for d in data)) if data else len(c)
              for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(d, widths)) for d in data]
    return "\n".join(lines)


def write_outputs(results, out, seed, config=None, table=None, figures=False):
    """Write report.json, timings.json and the CSV tables; optional figures."""
    out = Path(out)
    report = {"schema": "wannierlab.report/1", "seed": seed,
              "presets": [r.report for r in results],
              "ok": bool(all(r.ok for r in results))}
    if config is not None:
        report["config"] = config
    if table is not None:
        report["dichotomy"] = table
    files = {
        "report.json": rp.dumps(report),
        "timings.json": rp.dumps({r.preset: r.timings for r in results}),
        "decay.csv": rp.csv_text(rp.DECAY_COLUMNS, [x for r in results for x in r.decay_rows]),
        "spectrum.csv": rp.csv_text(rp.SPECTRUM_COLUMNS,
                                    [x for r in results for x in r.spectrum_rows]),
    }
    berry = [x for r in results for x in r.berry_rows]
    if berry:
        files["berry.csv"] = rp.csv_text(rp.BERRY_COLUMNS, berry)
    for name, text in files.items():
        rp.write_atomic(out / name, text)
    written = sorted(files)
    if figures:
        from .plotting import render_figures
        written += render_figures(results, out)
    return written
