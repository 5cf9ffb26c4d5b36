"""``padic-heat`` command line front end.

Every subcommand takes its inputs from flags, from a JSON file given with
``--config``, or both (flags win).  The merged inputs form a :class:`RunConfig`
whose canonical JSON hash is stamped on every output.

Exit codes: 0 success, 1 a verification failed, 2 invalid configuration,
3 a precondition was violated, 4 a numerical budget was exhausted.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .errors import ConfigInvalid, PadicHeatError, PreconditionError

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_PRECONDITION, EXIT_NUMERICAL = 0, 1, 2, 3, 4

COMMANDS = ("form", "profile", "kernel", "verify", "solve", "solve-var", "simulate")


@dataclass
class RunConfig:
    command: str
    params: dict = field(default_factory=dict)
    output: str | None = None
    format: str = "csv"
    threads: int | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigInvalid(f"unknown command {self.command!r}")
        if self.format not in ("csv", "json"):
            raise ConfigInvalid(f"unknown output format {self.format!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"malformed JSON: {exc}") from exc
        if not isinstance(data, dict) or "command" not in data:
            raise ConfigInvalid("a run config is an object with a 'command' key")
        unknown = set(data) - {"command", "params", "output", "format", "threads"}
        if unknown:
            raise ConfigInvalid(f"unknown keys {sorted(unknown)}")
        return cls(**data)

    @property
    def digest(self) -> str:
        """Hash of the inputs only: output paths and thread count do not change results."""
        inputs = {"command": self.command, "params": {k: v for k, v in self.params.items() if k != "report"}}
        return hashlib.sha256(json.dumps(inputs, sort_keys=True, allow_nan=False).encode()).hexdigest()


# ---------------------------------------------------------------------------
# argument parsing


def _add_form(p):
    p.add_argument("--p", type=int, dest="p")
    p.add_argument("--a", type=int, dest="a", help="quadratic non-residue (default: smallest)")


def _add_kernel(p):
    _add_form(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--kappa", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="padic-heat", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"padic-heat {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with inputs (flags override it)")
    common.add_argument("--out", dest="output", help="output file; .json selects JSON")
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--threads", type=int, help="worker threads (env PADIC_HEAT_THREADS)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("form", parents=[common], help="form coefficients and ellipticity certificate")
    _add_form(p)

    p = sub.add_parser("profile", parents=[common], help="shell volumes v0, v1 and a volume table")
    _add_form(p)
    p.add_argument("--side", choices=("f", "fstar"))
    p.add_argument("--jmin", type=int)
    p.add_argument("--jmax", type=int)

    p = sub.add_parser("kernel", parents=[common], help="Z(x, t) with its error bound")
    _add_kernel(p)
    p.add_argument("--x")
    p.add_argument("--t", type=float)
    p.add_argument("--gamma", type=float, help="apply f(d, gamma) to Z")

    p = sub.add_parser("verify", parents=[common], help="run a property suite")
    p.add_argument("suite", choices=("mass", "bound", "semigroup", "funceq"))
    _add_kernel(p)
    p.add_argument("--t", type=float)

    p = sub.add_parser("solve", parents=[common], help="constant-coefficient Cauchy problem")
    _add_kernel(p)

    p = sub.add_parser("solve-var", parents=[common], help="variable coefficients via the parametrix")
    _add_kernel(p)
    p.add_argument("--q", type=int, help="2^q time steps")

    p = sub.add_parser("simulate", parents=[common], help="sample paths of the process")
    _add_kernel(p)
    p.add_argument("--t", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--paths", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--report", help="CSV file for the per-step shell histogram")
    return ap


_META = {"command", "config", "output", "format", "threads", "suite"}

DEFAULTS = {
    "form": {"p": 3},
    "profile": {"p": 3, "side": "f", "jmin": -2, "jmax": 2},
    "kernel": {"p": 3, "alpha": 1.0, "kappa": 1.0, "x": "(1,0,0,0)", "t": 1.0},
    "verify": {"p": 3, "alpha": 1.0, "kappa": 1.0},
    "solve": {"p": 3, "alpha": 1.0, "kappa": 1.0},
    "solve-var": {"p": 3, "alpha": 1.5, "q": 5},
    "simulate": {"p": 3, "alpha": 1.0, "kappa": 1.0, "t": 1.0, "steps": 1, "paths": 1000, "seed": 0},
}


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    params = dict(DEFAULTS[ns.command])
    fmt, output, threads = None, None, None
    if ns.config:
        try:
            with open(ns.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"{ns.config}: malformed JSON: {exc}") from exc
        except OSError as exc:
            raise ConfigInvalid(f"cannot read {ns.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigInvalid("config file must hold a JSON object")
        if "command" in loaded:  # a saved RunConfig
            rc = RunConfig.from_json(json.dumps(loaded))
            params.update(rc.params)
            fmt, output, threads = rc.format, rc.output, rc.threads
        else:
            params.update(loaded)
    form = params.pop("form", None)
    if isinstance(form, dict):  # {"p": .., "a": ..} descriptor; flags still win
        params.update({k: form[k] for k in ("p", "a") if k in form})
    for k, v in vars(ns).items():
        if k not in _META and v is not None:
            params[k] = v
    if ns.command == "verify":
        params["suite"] = ns.suite
    output = ns.output or output
    fmt = ns.format or fmt or ("json" if output and output.endswith(".json") else "csv")
    threads = ns.threads or threads
    return RunConfig(ns.command, params, output, fmt, threads)


# ---------------------------------------------------------------------------
# input records


def _require(params, key, kind=float):
    if key not in params or params[key] is None:
        raise ConfigInvalid(f"missing {key!r}")
    try:
        return kind(params[key])
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"{key!r}: {exc}") from exc


def _form(params):
    from .qform import QFormPair

    try:
        return QFormPair(int(params.get("p", 3)), int(params.get("a") or 0))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, PreconditionError):
            raise
        raise ConfigInvalid(f"bad form descriptor: {exc}") from exc


def _kernel_params(params, alpha_key="alpha"):
    from .kernel import KernelParams

    return KernelParams(_form(params), _require(params, alpha_key), float(params.get("kappa", 1.0)))


def _point(text, p):
    from .padic import parse_point

    try:
        return parse_point(text, p)
    except PreconditionError:
        raise
    except ValueError as exc:
        raise ConfigInvalid(f"bad point {text!r}: {exc}") from exc


def step_function(spec, p):
    """``{"pieces": [{"center", "radius", "value"}], "background": c}``, a list of
    pieces, or a bare number (a constant)."""
    from .cauchy import Growth, RadialBackground, StepFunction
    from .padic import Ball

    if isinstance(spec, (int, float)):
        return StepFunction.constant(p, float(spec))
    if isinstance(spec, list):
        spec = {"pieces": spec}
    if not isinstance(spec, dict):
        raise ConfigInvalid(f"cannot read a step function from {spec!r}")
    pieces = []
    for piece in spec.get("pieces", []):
        try:
            ball = Ball(_point(piece["center"], p), int(piece.get("radius", 0)))
            pieces.append((ball, float(piece["value"])))
        except KeyError as exc:
            raise ConfigInvalid(f"piece without {exc}") from exc
    bg = float(spec.get("background", 0.0))
    size = max([abs(v) for _, v in pieces] + [0.0]) + abs(bg)
    return StepFunction(p, tuple(pieces), RadialBackground.const(bg) if bg else RadialBackground.zero(),
                        None, Growth(size, 0.0))


def time_source(spec, p):
    """``{"grid": [t0, t1, ...], "pieces": [f0, f1, ...]}`` or a single step function."""
    from .cauchy import TimeSource

    if isinstance(spec, dict) and "grid" in spec:
        steps = spec.get("pieces-per-node", spec.get("pieces"))
        if not isinstance(steps, list) or len(steps) != len(spec["grid"]):
            raise ConfigInvalid("a time source needs one step function per grid node")
        return TimeSource(tuple(float(t) for t in spec["grid"]), tuple(step_function(s, p) for s in steps),
                          bool(spec.get("interpolate", False)))
    return TimeSource.constant_in_time(step_function(spec, p))


def _eval_points(params, p, horizon):
    pts = params.get("points") or [{"x": "(0,0,0,0)", "t": horizon}]
    out = []
    for e in pts:
        if isinstance(e, dict):
            out.append((_point(e["x"], p), float(e.get("t", horizon))))
        else:
            out.append((_point(e[0], p), float(e[1])))
    return out


# ---------------------------------------------------------------------------
# commands; each returns (rows, passed)


def cmd_form(cfg: RunConfig):
    from fractions import Fraction

    from .qform import Side, certify_bounds

    form = _form(cfg.params)
    cert = certify_bounds(form)
    rows = [{"key": "p", "value": form.prime}, {"key": "a", "value": form.nonresidue},
            {"key": "f", "value": " ".join(map(str, form.coefficients(Side.F)))},
            {"key": "fstar", "value": " ".join(map(str, form.coefficients(Side.FSTAR)))},
            {"key": "A", "value": str(Fraction(cert.lower))}, {"key": "B", "value": str(Fraction(cert.upper))}]
    for m, n in sorted(cert.level_counts.items()):
        rows.append({"key": f"count_level_{m}_mod_p2", "value": n})
    return rows, True


def cmd_profile(cfg: RunConfig):
    from .qform import Side
    from .radial import compute_profile

    prof = compute_profile(_form(cfg.params), Side.parse(cfg.params.get("side", "f")))
    rows = [{"j": "", "m": 0, "volume": str(prof.v0), "float": float(prof.v0)},
            {"j": "", "m": 1, "volume": str(prof.v1), "float": float(prof.v1)}]
    for j in range(int(cfg.params["jmin"]), int(cfg.params["jmax"]) + 1):
        for m in (0, 1):
            v = prof.volume(m, j)
            rows.append({"j": j, "m": m, "volume": str(v), "float": float(v)})
    return rows, True


def cmd_kernel(cfg: RunConfig):
    from .kernel import apply_f_to_kernel, heat_kernel_series

    kp = _kernel_params(cfg.params)
    x = _point(cfg.params["x"], kp.prime)
    t = _require(cfg.params, "t")
    g = cfg.params.get("gamma")
    kv = heat_kernel_series(kp, x, t) if g is None else apply_f_to_kernel(kp, float(g), x, t)
    return [{"x": str(x), "t": t, "value": kv.value, "bound": kv.truncation_error, "method": kv.method}], True


def cmd_verify(cfg: RunConfig):
    from .kernel import bound_grid, chapman_kolmogorov, check_kernel_bound, functional_equation, kernel_mass

    suite = cfg.params["suite"]
    kp = _kernel_params(cfg.params)
    rows = []
    if suite == "mass":
        ts = [cfg.params["t"]] if cfg.params.get("t") is not None else [0.01, 0.1, 1.0, 10.0, 100.0]
        for t in ts:
            m, err = kernel_mass(kp, float(t))
            rows.append({"check": "mass", "t": t, "value": m, "bound": err, "pass": abs(m - 1) <= 1e-8})
    elif suite == "bound":
        for kind, gamma in (("Z", None), ("dZdt", None), ("fZ", kp.alpha / 2)):
            # 4x refinement in t on the same shells
            coarse = check_kernel_bound(kp, bound_grid(kp.prime, range(-5, 6), np.logspace(-3, 3, 13)), kind, gamma)
            fine = check_kernel_bound(kp, bound_grid(kp.prime, range(-5, 6), np.logspace(-3, 3, 49)), kind, gamma)
            change = abs(fine.max_ratio - coarse.max_ratio) / coarse.max_ratio
            rows.append({"check": f"bound_{kind}", "t": "", "value": fine.max_ratio, "bound": change,
                         "pass": change < 0.1})
    elif suite == "semigroup":
        from .padic import PAdicPoint

        p = kp.prime
        pts = [[1, 0, 0, 0], [0, 0, 1, 0], [f"1/{p}", 0, 0, 0], [p, 1, 0, 0], [0, 0, 0, f"1/{p * p}"]]
        for vals in pts:
            x = PAdicPoint.from_values(vals, p)
            for s, t in ((0.5, 0.5), (0.2, 0.8)):
                lhs, rhs, bound = chapman_kolmogorov(kp, x, s, t)
                rows.append({"check": f"ck x={x} s={s}", "t": s + t, "value": lhs - rhs, "bound": bound,
                             "pass": abs(lhs - rhs) <= 1e-4})
    elif suite == "funceq":
        for s in (0.5, 1.0, 1.5):
            lhs, rhs = functional_equation(kp.form, s)
            rows.append({"check": f"funceq s={s}", "t": "", "value": lhs - rhs, "bound": 1e-6,
                         "pass": abs(lhs - rhs) <= 1e-6})
    return rows, all(r["pass"] for r in rows)


def cmd_solve(cfg: RunConfig):
    from .cauchy import CauchyProblem, solve_constant

    kp = _kernel_params(cfg.params)
    p = kp.prime
    if "phi" not in cfg.params:
        raise ConfigInvalid("solve needs initial data 'phi'")
    phi = step_function(cfg.params["phi"], p)
    g = time_source(cfg.params["g"], p) if cfg.params.get("g") is not None else None
    horizon = float(cfg.params.get("T", 1.0))
    lam = float(cfg.params.get("lambda", 0.0))
    if lam >= kp.alpha:
        raise PreconditionError(f"growth exponent lambda = {lam} must be below alpha = {kp.alpha}")
    prob = CauchyProblem(kp, phi, g, horizon)
    rows = solve_constant(prob, _eval_points(cfg.params, p, horizon), float(cfg.params.get("tol", 1e-8)))
    return [{"x": str(r.x), "t": r.t, "value": complex(r.value).real, "imag": complex(r.value).imag,
             "bound": r.bound} for r in rows], True


def cmd_solve_var(cfg: RunConfig):
    from .parametrix import Coefficient, CoefficientSet, build_skeleton, solve_variable

    pr = cfg.params
    form = _form(pr)
    p = form.prime
    for key in ("a0", "phi"):
        if key not in pr:
            raise ConfigInvalid(f"solve-var needs {key!r}")
    lower = tuple(Coefficient(float(c["alpha_k"]), time_source(c.get("pieces", c.get("field")), p))
                  for c in pr.get("ak", []))
    co = CoefficientSet(form, _require(pr, "alpha"), time_source(pr["a0"], p), lower,
                        time_source(pr["b"], p) if pr.get("b") is not None else None,
                        float(pr.get("nu", 1.0)), float(pr.get("mu", 1.0)), float(pr.get("T", 1.0)))
    skel = build_skeleton(form, int(pr.get("outer_exp", 1)), int(pr.get("cell_exp", 0)))
    g = time_source(pr["g"], p) if pr.get("g") is not None else None
    sol = solve_variable(co, step_function(pr["phi"], p), g, _eval_points(pr, p, co.horizon), skel, int(pr["q"]))
    return [{"x": str(x), "t": t, "value": float(np.real(v))} for x, t, v in sol.rows], True


def cmd_simulate(cfg: RunConfig):
    from .markov import build_radial_law, shell_report, simulate

    pr = cfg.params
    kp = _kernel_params(pr)
    T, steps, n = _require(pr, "t"), _require(pr, "steps", int), _require(pr, "paths", int)
    if n < 1:
        raise PreconditionError(f"--paths must be at least 1, got {n}")
    ens = simulate(kp, T, steps, n, int(pr.get("seed", 0)), cfg.threads or _threads())
    if pr.get("report"):
        law = build_radial_law(kp, T / steps, 1e-12)
        _write(pr["report"], "csv", shell_report(law, ens), cfg)
    rows = []
    for k in range(len(ens.times)):
        j, m = ens.shells(k)
        N, E = ens.numerators[k], ens.exponents[k]
        for i in range(ens.n_paths):
            rows.append({"path": i, "step": k, "t": float(ens.times[k]), "exponent": -E,
                         "n1": int(N[i, 0]), "n2": int(N[i, 1]), "n3": int(N[i, 2]), "n4": int(N[i, 3]),
                         "j": int(j[i]) if j[i] > -(2**62) else "", "m": int(m[i]) if j[i] > -(2**62) else ""})
    return rows, True


HANDLERS = {"form": cmd_form, "profile": cmd_profile, "kernel": cmd_kernel, "verify": cmd_verify,
            "solve": cmd_solve, "solve-var": cmd_solve_var, "simulate": cmd_simulate}


def _threads() -> int:
    env = os.environ.get("PADIC_HEAT_THREADS")
    return int(env) if env else (os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# serialization


def _json_value(key, v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if key == "bound" or not math.isfinite(v):
            return f"{v:.6g}"
        return v
    return v


def provenance(cfg: RunConfig) -> str:
    return f"padic-heat {__version__} seed={cfg.params.get('seed', '')} config={cfg.digest}"


def render(rows: list[dict], fmt: str, cfg: RunConfig) -> str:
    if fmt == "json":
        body = {"provenance": provenance(cfg), "config": json.loads(cfg.to_json()),
                "rows": [{k: _json_value(k, v) for k, v in r.items()} for r in rows]}
        return json.dumps(body, indent=1, allow_nan=False) + "\n"
    buf = io.StringIO()
    buf.write(f"# {provenance(cfg)}\n")
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    return buf.getvalue()


def _write(path, fmt, rows, cfg):
    text = render(rows, fmt, cfg)
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def run(cfg: RunConfig) -> int:
    rows, passed = HANDLERS[cfg.command](cfg)
    _write(cfg.output, cfg.format, rows, cfg)
    return EXIT_OK if passed else EXIT_FAILED


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return run(config_from_args(ns))
    except ConfigInvalid as exc:
        print(f"padic-heat: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PreconditionError as exc:
        print(f"padic-heat: precondition violated: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except PadicHeatError as exc:
        print(f"padic-heat: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
