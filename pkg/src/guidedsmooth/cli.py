"""Command-line interface: ``simulate``, ``smooth``, ``verify`` and ``summarize``.

Runs are described by a YAML file::

    model:
      name: lorenz              # lorenz | pendulum | ou
      theta: [10, 28, 2.6666666666666665]
      sigma0: 3.0
    observations:
      file: observations.csv    # relative to this file
      L: identity               # or a matrix
      Sigma: 1.0                # scalar (times I) or a matrix
      overrides: per_obs.yaml   # optional {index: {L: ..., Sigma: ...}}
    simulate:
      x0: [1.508870, -1.531271, 25.46091]
      t_end: 4.0
      mesh: 8.0e-5
      obs_times: {start: 0.0, stop: 4.0, num: 101}
    smoother:
      N: 100000
      aux_method: C
      epsilon: 0.0005
      trace_times: [2.0]
      save_every: 5000
    chains: 1
    seed: 0
    output: runs/lorenz

The default output directory is ``$GUIDEDSMOOTH_OUTPUT`` (or ``./runs``).
Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__, io
from .errors import ConfigError, GuidedSmoothError
from .kernels import HAVE_COMPILED
from .mcmc import SmootherConfig, run_smoother
from .model import (
    LinearAuxiliary,
    Observation,
    ObservationSchedule,
    lorenz_model,
    ou_model,
    pendulum_model,
)
from .numerics import RngStream
from .simulate import observe, simulate_path

log = logging.getLogger("guidedsmooth")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4
OUTPUT_ENV = "GUIDEDSMOOTH_OUTPUT"
DEFAULT_EPSILON = 1 / 2000

MODEL_DEFAULTS = {
    "lorenz": {"theta": [10.0, 28.0, 8.0 / 3.0], "sigma0": 3.0},
    "pendulum": {"theta": 1.0, "gamma": 1.0},
    "ou": {},
}
SECTIONS = {"model", "observations", "simulate", "smoother", "aux0", "chains", "seed", "output"}
SMOOTHER_FIELDS = {f.name for f in dataclasses.fields(SmootherConfig)} - {"seed", "stream"}


# -- configuration -------------------------------------------------------------


class _Lines:
    """Line numbers of mapping keys in a YAML document, for error messages."""

    def __init__(self, text):
        self.lines = {}
        try:
            node = yaml.compose(text)
        except yaml.YAMLError:
            node = None
        if isinstance(node, yaml.MappingNode):
            self._walk(node, ())

    def _walk(self, node, prefix):
        for k, v in node.value:
            key = prefix + (str(k.value),)
            self.lines[key] = k.start_mark.line + 1
            if isinstance(v, yaml.MappingNode):
                self._walk(v, key)

    def at(self, *key):
        for n in range(len(key), 0, -1):
            if key[:n] in self.lines:
                return self.lines[key[:n]]
        return None


class ConfigFileError(ConfigError):
    def __init__(self, path, line, message):
        where = f"{path}:{line}" if line else str(path)
        super().__init__(f"{where}: {message}")


def load_config(path):
    """Parse and validate a run configuration; returns the resolved dict.

    A provenance file written by ``smooth`` is accepted as well; its
    ``config`` entry is used.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigFileError(path, mark.line + 1 if mark else None,
                              f"invalid YAML ({getattr(exc, 'problem', exc)})") from None
    lines = _Lines(text)
    if isinstance(raw, dict) and "config" in raw and "version" in raw:
        raw = raw["config"]
        lines = _Lines(yaml.safe_dump({"config": raw}))
    if not isinstance(raw, dict):
        raise ConfigFileError(path, 1, "top level must be a mapping")
    return _resolve(raw, path.parent, lambda *k: lines.at(*k), path)


def _err(path, line_of, key, message):
    return ConfigFileError(path, line_of(*key), message)


def _matrix(value, rows, cols, what, fail):
    if isinstance(value, str):
        if value != "identity" or (rows is not None and rows != cols):
            raise fail(f"{what}: only 'identity' is accepted as a name")
        return np.eye(cols)
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        if rows != cols:
            raise fail(f"{what}: a scalar needs a square shape")
        return float(arr) * np.eye(rows)
    arr = np.atleast_2d(arr)
    if (cols is not None and arr.shape[1] != cols) or (rows is not None and arr.shape[0] != rows):
        raise fail(f"{what}: expected shape ({rows}, {cols}), found {arr.shape}")
    return arr


def _resolve(raw, base, line_of, path):
    def fail(key):
        return lambda msg: _err(path, line_of, key, msg)

    unknown = set(raw) - SECTIONS
    if unknown:
        k = sorted(unknown)[0]
        raise _err(path, line_of, (k,), f"unknown section {k!r}")
    cfg = {}

    model = dict(raw.get("model") or {})
    name = model.get("name")
    if name not in MODEL_DEFAULTS:
        raise _err(path, line_of, ("model", "name"), f"model.name must be one of {sorted(MODEL_DEFAULTS)}")
    params = {**MODEL_DEFAULTS[name], **{k: v for k, v in model.items() if k != "name"}}
    allowed = {"lorenz": {"theta", "sigma0"}, "pendulum": {"theta", "gamma"},
               "ou": {"B", "beta", "sigma"}}[name]
    extra = set(params) - allowed
    if extra:
        k = sorted(extra)[0]
        raise _err(path, line_of, ("model", k), f"unknown parameter {k!r} for model {name}")
    try:
        built = build_model({"name": name, **params})
    except (ValueError, TypeError) as exc:
        raise _err(path, line_of, ("model",), f"invalid model parameters ({exc})") from None
    cfg["model"] = {"name": name, **_plain(params)}
    d = built.d

    obs = dict(raw.get("observations") or {})
    extra = set(obs) - {"file", "L", "Sigma", "overrides", "t_start"}
    if extra:
        k = sorted(extra)[0]
        raise _err(path, line_of, ("observations", k), f"unknown key {k!r}")
    L = _matrix(obs.get("L", "identity"), None, d, "observations.L", fail(("observations", "L")))
    Sigma = _matrix(obs.get("Sigma", 1.0), L.shape[0], L.shape[0], "observations.Sigma",
                    fail(("observations", "Sigma")))
    cfg["observations"] = {
        "file": str((base / obs["file"]).resolve()) if obs.get("file") else None,
        "L": L.tolist(),
        "Sigma": Sigma.tolist(),
        "overrides": str((base / obs["overrides"]).resolve()) if obs.get("overrides") else None,
        "t_start": None if obs.get("t_start") is None else float(obs["t_start"]),
    }

    sim = raw.get("simulate")
    if sim is not None:
        extra = set(sim) - {"x0", "t_end", "mesh", "obs_times", "t_start"}
        if extra:
            k = sorted(extra)[0]
            raise _err(path, line_of, ("simulate", k), f"unknown key {k!r}")
        try:
            x0 = [float(v) for v in sim["x0"]]
            if len(x0) != d:
                raise ValueError(f"x0 needs {d} entries")
            ot = sim.get("obs_times")
            if isinstance(ot, dict):
                times = np.linspace(float(ot["start"]), float(ot["stop"]), int(ot["num"]))
            else:
                times = np.array(ot, dtype=float)
            cfg["simulate"] = {
                "x0": x0,
                "t_start": float(sim.get("t_start", 0.0)),
                "t_end": float(sim["t_end"]),
                "mesh": float(sim["mesh"]),
                "obs_times": [float(t) for t in times],
            }
        except (KeyError, ValueError, TypeError) as exc:
            raise _err(path, line_of, ("simulate",), f"invalid simulate section ({exc})") from None

    sm = dict(raw.get("smoother") or {})
    extra = set(sm) - SMOOTHER_FIELDS
    if extra:
        k = sorted(extra)[0]
        raise _err(path, line_of, ("smoother", k), f"unknown smoother option {k!r}")
    if "trace_times" in sm:
        sm["trace_times"] = tuple(float(t) for t in sm["trace_times"])
    try:
        seed = int(raw.get("seed", 0))
        if sm.get("epsilon") is None:
            sm["epsilon"] = DEFAULT_EPSILON
        scfg = SmootherConfig(**sm, seed=seed)
    except (TypeError, ValueError, ConfigError) as exc:
        raise _err(path, line_of, ("smoother",), f"invalid smoother settings ({exc})") from None
    cfg["smoother"] = _plain({k: v for k, v in dataclasses.asdict(scfg).items()
                              if k in SMOOTHER_FIELDS})

    aux0 = raw.get("aux0")
    if aux0 is not None:
        try:
            LinearAuxiliary.constant(aux0["beta"], aux0["B"], aux0["sigma"])
        except (KeyError, ValueError, TypeError) as exc:
            raise _err(path, line_of, ("aux0",), f"invalid aux0 ({exc})") from None
        cfg["aux0"] = _plain({k: aux0[k] for k in ("beta", "B", "sigma")})
    else:
        cfg["aux0"] = None

    try:
        cfg["chains"] = int(raw.get("chains", 1))
        if cfg["chains"] < 1:
            raise ValueError("chains must be >= 1")
    except (TypeError, ValueError) as exc:
        raise _err(path, line_of, ("chains",), str(exc)) from None
    cfg["seed"] = seed
    out = raw.get("output") or os.environ.get(OUTPUT_ENV) or "runs"
    cfg["output"] = str((base / out).resolve()) if raw.get("output") else str(Path(out).resolve())
    return cfg


def _plain(obj):
    """YAML-friendly copy (tuples and arrays become lists)."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def build_model(params):
    name = params["name"]
    if name == "lorenz":
        return lorenz_model(tuple(float(v) for v in params["theta"]), float(params["sigma0"]))
    if name == "pendulum":
        return pendulum_model(float(params["theta"]), float(params["gamma"]))
    return ou_model(params["B"], params["beta"], params["sigma"])


def build_schedule(cfg, epsilon):
    """Observation schedule from the observation file and the L / Sigma settings."""
    oc = cfg["observations"]
    if not oc["file"]:
        raise ConfigError("observations.file is required")
    t, V = io.read_observations(oc["file"])
    L = np.array(oc["L"], dtype=float)
    Sigma = np.array(oc["Sigma"], dtype=float)
    overrides = {}
    if oc["overrides"]:
        try:
            with open(oc["overrides"], encoding="utf-8") as fh:
                overrides = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read overrides {oc['overrides']}: {exc}") from None
    obs = []
    for i, (ti, v) in enumerate(zip(t, V)):
        o = overrides.get(i, {})
        Li = np.atleast_2d(np.array(o.get("L", L), dtype=float))
        Si = np.atleast_2d(np.array(o.get("Sigma", Sigma), dtype=float))
        if Li.shape[0] != v.size:
            raise ConfigError(f"observation {i}: L has {Li.shape[0]} rows but the file has "
                              f"{v.size} values")
        obs.append(Observation(float(ti), Li, Si, v))
    return ObservationSchedule(obs, epsilon=epsilon, t_start=oc["t_start"])


def _provenance(cfg, extra=None):
    out = {
        "version": __version__,
        "config": cfg,
        "seed": cfg["seed"],
        "compiled_kernels": HAVE_COMPILED,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    if extra:
        out.update(extra)
    return out


# -- commands ------------------------------------------------------------------


def cmd_simulate(cfg, outdir: Path):
    if "simulate" not in cfg:
        raise ConfigError("the configuration has no simulate section")
    sc = cfg["simulate"]
    model = build_model(cfg["model"])
    L = np.array(cfg["observations"]["L"], dtype=float)
    Sigma = np.array(cfg["observations"]["Sigma"], dtype=float)
    t, X = simulate_path(model, sc["x0"], sc["t_end"], sc["mesh"], RngStream(cfg["seed"], 0),
                         t_start=sc["t_start"])
    sched = observe(t, X, sc["obs_times"], L, Sigma, RngStream(cfg["seed"], 1),
                    epsilon=cfg["smoother"]["epsilon"])
    outdir.mkdir(parents=True, exist_ok=True)
    io.write_observations(outdir / "observations.csv", sched.times, [o.v for o in sched])
    io.write_path(outdir / "true_path.csv", t, X)
    io.write_yaml(outdir / "provenance_simulate.yaml", _provenance(cfg))
    print(f"wrote {len(sched)} observations and the simulated path to {outdir}")


def _run_chain(cfg, chain, outdir):
    """Run one chain and write its files; returns a short report."""
    model = build_model(cfg["model"])
    sm = dict(cfg["smoother"])
    sm["trace_times"] = tuple(sm.get("trace_times") or ())
    scfg = SmootherConfig(**sm, seed=cfg["seed"], stream=chain)
    sched = build_schedule(cfg, scfg.epsilon)
    aux0 = None
    if cfg.get("aux0"):
        a = cfg["aux0"]
        aux0 = LinearAuxiliary.constant(a["beta"], a["B"], a["sigma"])
    res = run_smoother(model, sched, aux0, scfg)
    tag = f"chain{chain}"
    io.write_summary(outdir / f"summary_{tag}.csv", res.times, res.mean, res.sd)
    io.write_acceptance(outdir / f"acceptance_{tag}.csv", res.lambdas, res.log_psi, res.accepted)
    if res.paths.shape[0]:
        io.write_samples(outdir / f"samples_{tag}.csv", res.saved_iterations, res.times, res.paths)
    if res.trace_times.size:
        io.write_trace(outdir / f"trace_{tag}.csv", res.trace_times, res.trace)
    return {
        "chain": chain,
        "acceptance_rate": float(res.acceptance_rate) if scfg.N else None,
        "backend": res.backend,
        "posterior_samples": int(res.nsamples),
        "adaptations": res.adaptation,
        "bands": res.metadata["bands"],
    }


def cmd_smooth(cfg, outdir: Path):
    outdir.mkdir(parents=True, exist_ok=True)
    chains = cfg["chains"]
    if chains == 1:
        reports = [_run_chain(cfg, 0, outdir)]
    else:
        with ProcessPoolExecutor(max_workers=min(chains, os.cpu_count() or 1)) as ex:
            futures = [ex.submit(_run_chain, cfg, c, outdir) for c in range(chains)]
            reports = [f.result() for f in futures]
    io.write_yaml(outdir / "provenance.yaml", _provenance(cfg, {"chains": _plain(reports)}))
    for r in reports:
        rate = "n/a" if r["acceptance_rate"] is None else f"{r['acceptance_rate']:.4f}"
        print(f"chain {r['chain']}: acceptance {rate} ({r['backend']} kernels)")
    print(f"results in {outdir}")


def cmd_verify(level, report=None, as_json=False):
    from .verify import run_level

    checks = run_level(level)
    ok = all(c.passed for c in checks)
    doc = {"level": level, "passed": ok, "checks": [c.as_dict() for c in checks]}
    if report:
        Path(report).parent.mkdir(parents=True, exist_ok=True)
        Path(report).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    if as_json:
        print(json.dumps(doc, indent=2))
    else:
        for c in checks:
            print(c.line())
        print(f"{'PASS' if ok else 'FAIL'}: {sum(c.passed for c in checks)}/{len(checks)} checks")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_summarize(samples, out, min_iteration=0):
    its, t, paths = io.read_samples(samples)
    keep = its >= min_iteration
    if not keep.any():
        raise ConfigError(f"no saved paths at iteration >= {min_iteration}")
    mean, sd = io.summarize_paths(paths[keep])
    io.write_summary(out, t, mean, sd)
    print(f"summarised {int(keep.sum())} paths into {out}")


# -- entry point ---------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="guidedsmooth", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress and warnings")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a path and noisy observations")
    s.add_argument("config")
    s.add_argument("-o", "--output", help="output directory (overrides the config)")

    s = sub.add_parser("smooth", help="sample the smoothing distribution")
    s.add_argument("config", help="run configuration or a provenance file")
    s.add_argument("-o", "--output", help="output directory (overrides the config)")
    s.add_argument("--chains", type=int, help="number of independent chains")

    s = sub.add_parser("verify", help="run the oracle checks")
    s.add_argument("--level", choices=("fast", "full", "paper"), default="fast")
    s.add_argument("--report", help="write a JSON report to this file")
    s.add_argument("--json", action="store_true", help="print the JSON report")

    s = sub.add_parser("summarize", help="per-knot mean, sd and bands of saved paths")
    s.add_argument("samples")
    s.add_argument("-o", "--output", default="summary.csv")
    s.add_argument("--min-iteration", type=int, default=0,
                   help="ignore paths saved before this iteration")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "verify":
            return cmd_verify(args.level, args.report, args.json)
        if args.command == "summarize":
            cmd_summarize(args.samples, args.output, args.min_iteration)
            return EXIT_OK
        cfg = load_config(args.config)
        if args.output:
            cfg["output"] = str(Path(args.output).resolve())
        if getattr(args, "chains", None):
            cfg["chains"] = args.chains
        outdir = Path(cfg["output"])
        if args.command == "simulate":
            cmd_simulate(cfg, outdir)
        else:
            cmd_smooth(cfg, outdir)
        return EXIT_OK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GuidedSmoothError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
