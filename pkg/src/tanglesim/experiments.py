"""Experiment presets, the divergence verdict and the output directory layout."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from . import __version__
from .engine import (RunTrace, ScenarioConfig, read_trace_csv, run_batch,
                     tail_fit, write_batch)
from .fluid import FluidGrid
from .selection import parse_weight
from .steady import (solve_fixed_point, verify_orphan_persistence,
                     write_profile_csv, write_report)

KINDS = ("sim", "fluid", "steady")
TABLE = {"sim": "scenario", "fluid": "fluid", "steady": "steady"}
OUTCOMES = ("diverges", "bounded", "fixed-point")

_FIELDS = {
    "scenario": {"lambda", "h", "m", "horizon", "runs", "seed", "policy",
                 "tail_fraction", "substeps", "n_jobs"},
    "fluid": {"h", "m", "weight", "weights", "n_per_h", "t_max",
              "tail_fraction", "age_cap", "dump_stride"},
    "steady": {"h", "m", "weight", "weights", "tol", "max_iter", "S_max"},
    "verdict": {"slope_eps"},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentPreset:
    """A named, read-only experiment definition."""

    name: str
    kind: str
    expected: str
    description: str
    data: dict

    def config(self) -> dict:
        """A deep copy of the full configuration table."""
        return copy.deepcopy(self.data)


def _validate(data: dict, source: str) -> None:
    kind = data.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"{source}: field 'kind' must be one of {KINDS}, "
                          f"got {kind!r}")
    if data.get("expected", "bounded") not in OUTCOMES:
        raise ConfigError(f"{source}: field 'expected' must be one of "
                          f"{OUTCOMES}")
    if TABLE[kind] not in data:
        raise ConfigError(f"{source}: missing table [{TABLE[kind]}]")
    for table, allowed in _FIELDS.items():
        for key in data.get(table, {}):
            if key not in allowed:
                raise ConfigError(f"{source}: unknown field '{table}.{key}'")
    extra = set(data) - {"kind", "expected", "description", "name"} - set(_FIELDS)
    if extra:
        raise ConfigError(f"{source}: unknown field '{sorted(extra)[0]}'")


def _from_text(text: str, name: str, source: str) -> ExperimentPreset:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    _validate(data, source)
    return ExperimentPreset(name=data.get("name", name), kind=data["kind"],
                            expected=data.get("expected", "bounded"),
                            description=data.get("description", ""),
                            data=data)


def list_presets() -> list[str]:
    files = resources.files(__package__).joinpath("presets").iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".toml"))


def load_preset(name: str) -> ExperimentPreset:
    if name not in list_presets():
        raise ConfigError(f"unknown preset {name!r}; available: "
                          f"{', '.join(list_presets())}")
    text = resources.files(__package__).joinpath("presets", f"{name}.toml") \
        .read_text()
    return _from_text(text, name, f"preset {name}")


def load_config(path) -> ExperimentPreset:
    path = Path(path)
    return _from_text(path.read_text(), path.stem, str(path))


def resolve(target: str) -> ExperimentPreset:
    """A preset name or a path to a TOML config file."""
    if Path(target).is_file():
        return load_config(target)
    return load_preset(target)


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``key=value`` overrides; bare keys address the main table."""
    data = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = (s.strip() for s in item.split("=", 1))
        try:
            value = tomli.loads(f"v = {raw}")["v"]
        except tomli.TOMLDecodeError:
            value = raw
        path = key.split(".") if "." in key else [TABLE[data["kind"]], key]
        node = data
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = value
    _validate(data, "overrides")
    return data


# -- verdict ------------------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    label: str
    slope: float
    mean: float
    threshold: float
    horizon: float
    slope_eps: float
    tail_fraction: float
    runs: int
    positive_runs: int

    def as_dict(self) -> dict:
        return {"verdict": self.label, "slope": self.slope, "mean": self.mean,
                "threshold": self.threshold, "horizon": self.horizon,
                "slope_eps": self.slope_eps,
                "tail_fraction": self.tail_fraction, "runs": self.runs,
                "positive_slope_runs": self.positive_runs}


def _series(tr):
    if isinstance(tr, RunTrace):
        return np.asarray(tr.t, dtype=float), np.asarray(tr.L, dtype=float)
    t, y = tr
    return np.asarray(t, dtype=float), np.asarray(y, dtype=float)


def classify(t, y, tail_fraction=0.25, slope_eps=0.5):
    """(label, slope, mean, threshold) of the tail-slope test on one series."""
    mean, slope = tail_fit(t, y, tail_fraction)
    horizon = float(t[-1])
    threshold = slope_eps * mean / horizon
    return ("diverges" if slope > threshold else "bounded"), slope, mean, \
        threshold


def verdict(traces, tail_fraction: float = 0.25,
            slope_eps: float = 0.5) -> Verdict:
    """Tail-slope test on the ensemble mean of L(t).

    A line is fitted to the last ``tail_fraction`` of the mean trace; the
    verdict is ``diverges`` when its slope exceeds
    ``slope_eps * mean / horizon`` and ``bounded`` otherwise.
    """
    if len(traces) < 2:
        raise ValueError("verdict needs at least 2 traces")
    series = [_series(tr) for tr in traces]
    n = min(len(y) for _, y in series)
    if n < 3:
        raise ValueError("traces are too short for a tail fit")
    t = series[0][0][:n]
    ys = np.vstack([y[:n] for _, y in series])
    if not np.any(ys):
        raise ValueError("degenerate traces: every value is zero")
    label, slope, mean, thr = classify(t, ys.mean(axis=0), tail_fraction,
                                       slope_eps)
    positive = sum(tail_fit(t, y, tail_fraction)[1] > 0 for y in ys)
    return Verdict(label, slope, mean, thr, float(t[-1]), slope_eps,
                   tail_fraction, len(ys), int(positive))


def verdict_from_dir(out_dir, tail_fraction: float | None = None,
                     slope_eps: float | None = None) -> Verdict:
    """Recompute the verdict from the per-run CSVs in ``out_dir``.

    Thresholds left as None are taken from the directory's manifest when
    present, otherwise from the defaults.
    """
    paths = sorted(Path(out_dir).glob("run_*.csv"))
    if not paths:
        raise FileNotFoundError(f"no run_*.csv files in {out_dir}")
    manifest = Path(out_dir) / "manifest.txt"
    recorded = tomli.loads(manifest.read_text()) if manifest.is_file() else {}
    if tail_fraction is None:
        tail_fraction = recorded.get("scenario", {}).get("tail_fraction", 0.25)
    if slope_eps is None:
        slope_eps = recorded.get("verdict", {}).get("slope_eps", 0.5)
    return verdict([read_trace_csv(p) for p in paths], tail_fraction,
                   slope_eps)


# -- running ------------------------------------------------------------------

@dataclass
class RunResult:
    kind: str
    outcome: str
    out_dir: Path
    details: dict
    traces: list | None = None
    grid: FluidGrid | None = None


def scenario_from(table: dict) -> ScenarioConfig:
    t = dict(table)
    t.pop("n_jobs", None)
    t["lam"] = t.pop("lambda")
    return ScenarioConfig(**t)


def _weights(table):
    if "weights" in table:
        return [parse_weight(w) for w in table["weights"]]
    return [parse_weight(table.get("weight", "const"))] * int(table.get("m", 2))


def _write_toml(path, data):
    with open(path, "wb") as fh:
        tomli_w.dump(data, fh)


def _plot(out: Path, series, ylabel, title):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    lw = 0.6 if len(series) > 1 else 1.5
    for t, y in series:
        ax.plot(t, y, lw=lw)
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out / "plot.png", dpi=120)
    fig.savefig(out / "plot.svg")
    plt.close(fig)


def _prepare_out(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: "
                          f"{exc.strerror}") from None
    return out


def run_experiment(preset: ExperimentPreset, out_dir, overrides=(),
                   plot: bool = True) -> RunResult:
    """Execute a preset and write its outputs under ``out_dir``."""
    data = apply_overrides(preset.data, list(overrides))
    out = _prepare_out(out_dir)
    slope_eps = float(data.get("verdict", {}).get("slope_eps", 0.5))
    manifest = {"name": preset.name, "package_version": __version__, **data}
    manifest.setdefault("verdict", {})["slope_eps"] = slope_eps
    kind = data["kind"]
    if kind == "sim":
        table = data["scenario"]
        cfg = scenario_from(table)
        traces = run_batch(cfg, n_jobs=int(table.get("n_jobs", 1)))
        write_batch(traces, out)
        v = verdict(traces, cfg.tail_fraction, slope_eps)
        manifest["scenario"] = {**cfg.as_dict(),
                                "seeds": [tr.seed for tr in traces]}
        details = v.as_dict()
        if plot:
            _plot(out, [(tr.t, tr.L) for tr in traces], "L(t)",
                  f"{preset.name}: {cfg.policy.spec()}, {len(traces)} runs")
        result = RunResult(kind, v.label, out, details, traces=traces)
    elif kind == "fluid":
        table = data["fluid"]
        ws = _weights(table)
        grid = FluidGrid(ws, float(table["h"]),
                         n_per_h=int(table.get("n_per_h", 100)),
                         age_cap=table.get("age_cap"),
                         dump_stride=table.get("dump_stride"))
        grid.solve(float(table["t_max"]))
        grid.write_csv(out / "fluid.csv")
        if table.get("dump_stride"):
            grid.write_density(out / "density.csv")
        t, x, l_, w, _ = grid.series()
        label, slope, mean, thr = classify(
            t, l_, float(table.get("tail_fraction", 0.25)), slope_eps)
        outcome = "diverges" if label == "diverges" else "fixed-point"
        details = {"verdict": outcome, "slope": slope, "mean": mean,
                   "threshold": thr, "slope_eps": slope_eps,
                   "final_l": float(l_[-1]), "final_x": float(x[-1]),
                   "max_x": float(x.max())}
        if plot:
            _plot(out, [(t, l_), (t, x)], "l(t), x(t)",
                  f"{preset.name}: fluid totals")
        result = RunResult(kind, outcome, out, details, grid=grid)
    else:
        table = data["steady"]
        ws = _weights(table)
        sp = solve_fixed_point(ws, float(table["h"]),
                               tol=float(table.get("tol", 1e-12)),
                               max_iter=int(table.get("max_iter", 1000)))
        orphan = verify_orphan_persistence(sp, table.get("S_max"))
        write_report(sp, out / "report.txt", orphan)
        write_profile_csv(sp, out / "profile.csv")
        details = {"verdict": "fixed-point", **sp.as_dict(),
                   "orphan_slope": orphan.slope,
                   "orphan_rel_error": orphan.rel_error,
                   "orphans_persist": orphan.persistent}
        if plot:
            s = np.linspace(0, 10 * sp.h, 501)
            _plot(out, [(s, sp.x(s))], "x(s)",
                  f"{preset.name}: stationary free-tip profile")
        result = RunResult(kind, "fixed-point", out, details)
    details["expected"] = preset.expected
    _write_toml(out / "verdict.txt", {k: _plain(v) for k, v in details.items()})
    _write_toml(out / "manifest.txt", _plain(manifest))
    return result


def _plain(v):
    """TOML-serialisable copy (numpy scalars to Python, NaN kept)."""
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items() if x is not None}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v) if math.isfinite(v) else str(float(v))
    return v
