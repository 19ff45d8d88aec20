"""Command-line entry point.

Usage::

    ergomeasure <command> [--config FILE] [--map ...] [--epsilon ...] [--out DIR] ...

Commands are ``decompose``, ``grid``, ``spectral``, ``simulate``, ``compare``,
``certify``, and ``run`` (take the command from the config file).

The config file holds ``key = value`` lines. Keys may be dotted
(``noise.epsilon = 0.2``) or grouped under ``[section]`` headers; ``#``
starts a comment. Command-line flags override file values.

Exit status is 0 on success, 2 when the computation finished but could not
certify its result, and 1 on errors.
"""

from __future__ import annotations

import argparse
import ast
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import set_threads
from .errors import CertificateUnobtainable, ConfigError, ErgoError

COMMANDS = ("decompose", "grid", "spectral", "simulate", "compare", "certify")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNCERTIFIED = 2

_TOP_FIELDS = {
    "command": str,
    "map": str,
    "noise.kind": str,
    "noise.epsilon": float,
    "output_dir": str,
    "threads": int,
}
_PARAM_FIELDS = {
    "accuracy": float,
    "bits": int,
    "num_atoms": int,
    "max_atoms": int,
    "steps": int,
    "seed": int,
    "seeds": int,
    "x0": float,
    "burn_in": int,
    "max_refinements": int,
    "initial_mesh": float,
    "method": str,
    "dot": bool,
}
_REQUIRED = {
    "decompose": (),
    "grid": ("accuracy",),
    "spectral": ("bits",),
    "simulate": (),
    "compare": (),
    "certify": (),
}
_DEFAULTS = {
    "max_refinements": 10,
    "initial_mesh": 0.1,
    "steps": 100_000,
    "seed": 0,
    "seeds": 1,
    "x0": 0.5,
    "num_atoms": 64,
    "method": "grid",
    "accuracy": 0.05,
    "bits": 8,
    "dot": False,
}


@dataclass
class RunConfig:
    """Resolved configuration of one run."""

    command: str
    map: str
    noise_kind: str
    epsilon: float
    params: dict = field(default_factory=dict)
    output_dir: str = "."
    threads: int | None = None

    def to_json(self) -> dict:
        return {
            "command": self.command,
            "map": self.map,
            "noise": {"kind": self.noise_kind, "epsilon": self.epsilon},
            "params": dict(sorted(self.params.items())),
            "output_dir": self.output_dir,
            "threads": self.threads,
        }


# ---------------------------------------------------------------- parsing


def _literal(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config_text(text: str) -> dict[str, tuple[object, int]]:
    """Parse ``key = value`` lines into ``{dotted_key: (value, line_number)}``."""
    out: dict[str, tuple[object, int]] = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if not section:
                raise ConfigError("empty section header", line=lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("missing key", line=lineno)
        full = f"{section}.{key}" if section else key
        out[full] = (_literal(value), lineno)
    return out


def _coerce(key: str, value, kind, line: int | None):
    if value is None:
        return None
    try:
        if kind is bool:
            if isinstance(value, str):
                if value.lower() in ("true", "yes", "1"):
                    return True
                if value.lower() in ("false", "no", "0"):
                    return False
                raise ValueError(value)
            return bool(value)
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind is float:
            v = float(value)
            if not math.isfinite(v):
                raise ValueError(value)
            return v
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value {value!r} (expected {kind.__name__})",
                          field=key, line=line) from None


def resolve_config(entries: dict[str, tuple[object, int | None]],
                   command: str | None = None) -> RunConfig:
    """Validate raw entries and fill defaults.

    Raises
    ------
    ConfigError
        Unknown keys, bad values, or missing required fields.
    """
    top: dict[str, object] = {}
    params: dict[str, object] = {}
    lines: dict[str, int | None] = {}
    for key, (value, line) in entries.items():
        name = key[len("params."):] if key.startswith("params.") else key
        if key in _TOP_FIELDS:
            top[key] = _coerce(key, value, _TOP_FIELDS[key], line)
        elif name in _PARAM_FIELDS:
            params[name] = _coerce(key, value, _PARAM_FIELDS[name], line)
        else:
            raise ConfigError("unknown key", field=key, line=line)
        lines[key] = line

    cmd = command or top.get("command")
    if cmd is None:
        raise ConfigError("missing command", field="command")
    if cmd not in COMMANDS:
        raise ConfigError(f"unknown command {cmd!r}", field="command", line=lines.get("command"))
    for key in ("map", "noise.epsilon"):
        if top.get(key) is None:
            raise ConfigError("required field is missing", field=key)
    for name in _REQUIRED[cmd]:
        if params.get(name) is None:
            raise ConfigError(f"{cmd} requires this field", field=f"params.{name}")
    kind = top.get("noise.kind") or ("gaussian" if cmd == "spectral" else "uniform")
    if kind not in ("uniform", "gaussian"):
        raise ConfigError(f"unknown noise kind {kind!r}", field="noise.kind",
                          line=lines.get("noise.kind"))
    if cmd == "spectral" and kind != "gaussian":
        raise ConfigError("spectral needs gaussian noise", field="noise.kind",
                          line=lines.get("noise.kind"))
    eps = top["noise.epsilon"]
    if eps <= 0:
        raise ConfigError("epsilon must be positive", field="noise.epsilon",
                          line=lines.get("noise.epsilon"))
    for name in ("accuracy",):
        if params.get(name) is not None and not (0 < params[name] < 1):
            raise ConfigError("must lie in (0, 1)", field=f"params.{name}")
    for name in ("bits", "steps", "seeds", "num_atoms", "max_atoms"):
        if params.get(name) is not None and params[name] < 1:
            raise ConfigError("must be >= 1", field=f"params.{name}")
    if params.get("max_refinements") is not None and params["max_refinements"] < 0:
        raise ConfigError("must be >= 0", field="params.max_refinements")
    if params.get("method") is not None and params["method"] not in ("grid", "spectral"):
        raise ConfigError("method must be 'grid' or 'spectral'", field="params.method")
    resolved = {k: v for k, v in _DEFAULTS.items()}
    resolved.update({k: v for k, v in params.items() if v is not None})
    return RunConfig(cmd, top["map"], kind, eps, resolved,
                     top.get("output_dir") or ".", top.get("threads"))


# ---------------------------------------------------------------- output


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return float(f"{v:.17g}") if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_atomic(path: Path, text: str) -> None:
    """Write ``text`` to a temporary file in the same directory, then rename it."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Run:
    def __init__(self, config: RunConfig):
        self.config = config
        self.out = Path(config.output_dir)
        self.artifacts: list[str] = []
        self.certificates: dict = {}

    def write(self, name: str, text: str) -> None:
        write_atomic(self.out / name, text)
        self.artifacts.append(name)

    def manifest(self, status: str, exit_code: int, error: dict | None = None) -> None:
        doc = {
            "version": __version__,
            "config": self.config.to_json(),
            "status": status,
            "exit_code": exit_code,
            "artifacts": sorted(self.artifacts),
            "certificates": self.certificates,
        }
        if error is not None:
            doc["error"] = error
        write_atomic(self.out / "manifest.json", dumps(doc))


# ---------------------------------------------------------------- commands


def _system_and_noise(cfg: RunConfig):
    from .mapdsl import parse_map
    from .noise import uniform_kernel, wrapped_gaussian_kernel

    system = parse_map(cfg.map)
    if cfg.noise_kind == "gaussian":
        noise = wrapped_gaussian_kernel(cfg.epsilon)
    else:
        noise = uniform_kernel(cfg.epsilon, system.dim)
    return system, noise


def _cmd_decompose(run: _Run, system, noise) -> tuple[str, int]:
    from .cover import DECOMPOSED, decompose

    p = run.config.params
    res = decompose(system, noise, p["initial_mesh"], p["max_refinements"])
    doc = res.to_json()
    run.write("components.json", dumps(doc))
    run.certificates["decomposition"] = {k: doc[k] for k in
                                         ("status", "num_components", "refinements_used")}
    if p["dot"] and res.inner is not None:
        run.write("inner.dot", res.inner.to_dot("inner"))
        run.write("outer.dot", res.outer.to_dot("outer"))
    if res.status != DECOMPOSED:
        return res.status, EXIT_UNCERTIFIED
    return res.status, EXIT_OK


def _grid_certificate(res) -> dict:
    doc = res.certificate.to_json()
    doc["N_xi"] = res.doeblin.N_xi
    doc["doeblin"] = res.doeblin.to_json()
    return doc


def _run_grid(cfg: RunConfig, system, noise):
    from .gridsolver import invariant_density_grid

    return invariant_density_grid(system, noise, cfg.params["accuracy"],
                                  max_atoms=cfg.params.get("max_atoms"))


def _cmd_grid(run: _Run, system, noise) -> tuple[str, int]:
    res = _run_grid(run.config, system, noise)
    run.write("density.csv", res.density.to_csv())
    cert = _grid_certificate(res)
    run.write("certificate.json", dumps(cert))
    run.certificates["grid"] = cert
    return "certified", EXIT_OK


def _sampled_csv(rho, points: int = 1024) -> str:
    from .measures import eval_analytic_density

    x = np.arange(points) / points
    vals, _ = eval_analytic_density(rho, x)
    lines = ["x,density"] + [f"{a:.17g},{v:.17g}" for a, v in zip(x.tolist(), vals.tolist())]
    return "\n".join(lines) + "\n"


def _cmd_spectral(run: _Run, system, noise) -> tuple[str, int]:
    from .spectral import invariant_density_spectral

    res = invariant_density_spectral(system, noise, run.config.params["bits"])
    doc = res.density.to_json()
    doc["certified_error"] = res.certified_error
    run.write("density.json", dumps(doc))
    run.write("density_sampled.csv", _sampled_csv(res.density))
    cert = res.to_json()
    run.write("certificate.json", dumps(cert))
    run.certificates["spectral"] = cert
    return "certified", EXIT_OK


def _trajectories(cfg: RunConfig, system, noise):
    from .montecarlo import default_burn_in, simulate

    p = cfg.params
    burn = p.get("burn_in", min(default_burn_in(), p["steps"] // 10))
    return [simulate(system, noise, p["x0"], p["steps"], p["seed"] + s, burn)
            for s in range(p["seeds"])]


def _cmd_simulate(run: _Run, system, noise) -> tuple[str, int]:
    from .montecarlo import empirical_density

    trs = _trajectories(run.config, system, noise)
    lines = ["seed,step,x"]
    for tr in trs:
        lines += [f"{tr.seed},{t + 1},{x:.17g}" for t, x in enumerate(tr.states.tolist())]
    run.write("trajectory.csv", "\n".join(lines) + "\n")
    dens = empirical_density(trs, run.config.params["num_atoms"])
    rows = ["atom_index,left_endpoint,mass,half_width"]
    rows += [f"{i},{a:.17g},{m:.17g},{h:.17g}" for i, (a, m, h) in
             enumerate(zip(dens.left_endpoints, dens.weights, dens.half_width))]
    run.write("histogram.csv", "\n".join(rows) + "\n")
    return "simulated", EXIT_OK


def _reference(cfg: RunConfig, system, noise, atoms: int):
    """Reference density coarsened to ``atoms`` atoms, with its TV bound."""
    from .measures import analytic_to_grid

    if cfg.params["method"] == "spectral":
        from .spectral import invariant_density_spectral

        res = invariant_density_spectral(system, noise, cfg.params["bits"])
        fine = math.lcm(atoms, res.density.num_atoms)
        grid = analytic_to_grid(res.density, fine).normalized().coarsen(fine // atoms)
        # total variation is half the L1 distance, which is at most the sup distance
        return grid, 0.5 * res.certified_error, {"spectral": res.to_json()}
    res = _run_grid(cfg, system, noise)
    dens = res.density
    fine = math.lcm(atoms, dens.num_atoms)
    grid = dens.refine(fine // dens.num_atoms).coarsen(fine // atoms).normalized()
    return grid, res.certificate.tv_bound, {"grid": _grid_certificate(res)}


def _cmd_compare(run: _Run, system, noise) -> tuple[str, int]:
    from .measures import tv_distance, w1_distance
    from .montecarlo import batch_means_band

    cfg = run.config
    atoms = cfg.params["num_atoms"]
    ref, bound, certs = _reference(cfg, system, noise, atoms)
    run.certificates.update(certs)
    trs = _trajectories(cfg, system, noise)
    hists, bands = zip(*(batch_means_band(tr, atoms) for tr in trs))
    mc_w = np.mean([h.weights for h in hists], axis=0)
    band = float(np.mean(bands)) / math.sqrt(len(trs))
    from .measures import GridDensity

    mc = GridDensity(mc_w / mc_w.sum())
    tv = tv_distance(ref, mc)
    doc = {
        "tv": tv,
        "w1": w1_distance(ref, mc),
        "certified_bound": bound,
        "mc_band": band,
        "pass": bool(tv <= bound + band),
        "method": cfg.params["method"],
        "num_atoms": atoms,
    }
    run.write("compare.json", dumps(doc))
    run.certificates["compare"] = doc
    return ("agree", EXIT_OK) if doc["pass"] else ("disagree", EXIT_UNCERTIFIED)


def certificate_checks(res) -> dict:
    """Inequalities every grid certificate must satisfy."""
    op, cert, doe = res.operator, res.certificate, res.doeblin
    deficiency = float((1.0 - op.row_sums).max())
    return {
        "row_deficiency": {"value": deficiency, "bound": op.deficiency_bound,
                           "ok": bool(deficiency <= op.deficiency_bound)},
        "lambda_range": {"value": cert.lam, "low": 1.0 - cert.kappa_plus,
                         "high": 1.0 - cert.kappa_minus,
                         "ok": bool(1.0 - cert.kappa_plus <= cert.lam <= 1.0 - cert.kappa_minus)},
        "beta_lower": {"value": doe.beta, "bound": doe.hitting_lower_bound,
                       "ok": bool(doe.beta >= doe.hitting_lower_bound)},
    }


def _cmd_certify(run: _Run, system, noise) -> tuple[str, int]:
    try:
        res = _run_grid(run.config, system, noise)
    except CertificateUnobtainable as exc:
        doc = {"certified": False, "reason": exc.code, "message": str(exc)}
        run.write("certificate.json", dumps(doc))
        run.certificates["certify"] = doc
        return exc.code, EXIT_UNCERTIFIED
    checks = certificate_checks(res)
    ok = all(c["ok"] for c in checks.values())
    doc = {"certified": ok, "certificate": _grid_certificate(res), "checks": checks}
    run.write("certificate.json", dumps(doc))
    run.certificates["certify"] = doc
    return ("certified", EXIT_OK) if ok else ("check_failed", EXIT_UNCERTIFIED)


_DISPATCH = {
    "decompose": _cmd_decompose,
    "grid": _cmd_grid,
    "spectral": _cmd_spectral,
    "simulate": _cmd_simulate,
    "compare": _cmd_compare,
    "certify": _cmd_certify,
}


def run(config: RunConfig) -> int:
    """Execute one command, writing artifacts and a manifest; return the exit status."""
    if config.threads:
        set_threads(config.threads)
    job = _Run(config)
    try:
        system, noise = _system_and_noise(config)
        status, code = _DISPATCH[config.command](job, system, noise)
    except ErgoError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        job.manifest("error", EXIT_ERROR, {"code": exc.code, "message": str(exc)})
        return EXIT_ERROR
    job.manifest(status, code)
    print(f"{config.command}: {status} -> {job.out}")
    return code


# ---------------------------------------------------------------- argv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ergomeasure",
                                     description="Certified invariant measures of noisy circle maps.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS + ("run",):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--map", help="map expression or builtin (doubling, rotation:a, sine2:a)")
        p.add_argument("--noise", dest="noise.kind", choices=("uniform", "gaussian"))
        p.add_argument("--epsilon", dest="noise.epsilon", type=float)
        p.add_argument("--accuracy", type=float)
        p.add_argument("--bits", type=int)
        p.add_argument("--atoms", dest="num_atoms", type=int)
        p.add_argument("--max-atoms", dest="max_atoms", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--seeds", type=int, help="number of consecutive seeds")
        p.add_argument("--x0", type=float)
        p.add_argument("--burn-in", dest="burn_in", type=int)
        p.add_argument("--max-refinements", dest="max_refinements", type=int)
        p.add_argument("--initial-mesh", dest="initial_mesh", type=float)
        p.add_argument("--method", choices=("grid", "spectral"))
        p.add_argument("--dot", action="store_true", default=None, help="write DOT graphs")
        p.add_argument("--threads", type=int)
        p.add_argument("--out", dest="output_dir")
    return parser


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    entries: dict[str, tuple[object, int | None]] = {}
    if ns.config is not None:
        try:
            text = ns.config.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", field="config") from None
        entries.update(parse_config_text(text))
    for key, value in vars(ns).items():
        if key in ("command", "config") or value is None:
            continue
        if key in _PARAM_FIELDS:
            entries.pop(f"params.{key}", None)
        entries[key] = (value, None)
    return resolve_config(entries, None if ns.command == "run" else ns.command)


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        config = config_from_args(ns)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return run(config)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
