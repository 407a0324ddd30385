"""Command-line front end: ``grwcount {anomaly,collapse,pointer,way}``.

Parameters come from an optional flat ``key = value`` config file and from
flags named after the same keys (``log10_b2`` becomes ``--log10-b2``); flags
win.  Reports are JSON (``schema_version`` 1, sorted keys) or CSV, written
atomically.  Exit status: 0 on success, 2 for configuration errors, 1 when
a computation fails; nothing is written unless every computation finished.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import marbles, pointer, qmath
from .qmath import LogProb

SCHEMA_VERSION = 1
#: Seed used when neither the config nor the flags give one.
DEFAULT_SEED = 20240917
LOG10_TWIN_RANGE = (1e-300, 1e300)


class ConfigError(ValueError):
    pass


def _float(text: str) -> float:
    v = float(text)
    if math.isnan(v):
        raise ValueError("NaN is not a valid parameter")
    return v


def _count(text: str) -> int:
    return marbles._as_count(text)


def _int(text: str) -> int:
    return int(text)


@dataclass(frozen=True)
class Param:
    kind: Callable
    default: object
    help: str


COMMON = {
    "seed": Param(_int, DEFAULT_SEED, f"RNG seed (default {DEFAULT_SEED})"),
    "out": Param(str, None, "output path (default: stdout)"),
    "format": Param(str, "json", "json or csv"),
}

PARAMS = {
    "anomaly": {
        "n": Param(_count, None, "number of marbles; decimal string or 1e53-style"),
        "log10_b2": Param(_float, None, "decimal log of the tail weight |b|^2"),
        "b2": Param(_float, None, "tail weight |b|^2 (alternative to log10_b2)"),
        "ln_b2": Param(_float, None, "natural log of |b|^2, e.g. -2e15"),
        "tau": Param(_float, None, "tolerance for the threshold n"),
        "log10_tau": Param(_float, None, "decimal log of tau"),
    },
    "collapse": {
        "n": Param(_count, 20, "number of marbles (Monte Carlo cap 1e7)"),
        "a2": Param(_float, None, "in-box weight |a|^2"),
        "b2": Param(_float, None, "tail weight |b|^2"),
        "log10_b2": Param(_float, None, "decimal log of |b|^2"),
        "lambda": Param(_float, 1e-16, "hit rate per nucleon, 1/s"),
        "nucleons": Param(_float, 1e24, "nucleons per marble"),
        "width": Param(_float, 1e-5, "localization width, cm"),
        "t_max": Param(_float, math.inf, "observation window, s"),
        "trajectories": Param(_int, 10_000, "trajectories for the count histogram"),
        "samples": Param(_int, 1000, "trajectories for reduction-time statistics (0 skips)"),
    },
    "pointer": {
        "delta": Param(_float, 1.0, "pointer width"),
        "center": Param(_float, 0.0, "initial pointer position"),
        "dx": Param(_float, None, "grid spacing (default delta/16)"),
        "half_width": Param(_float, None, "grid half-width (default: fits every shift + 12 delta)"),
        "mass": Param(_float, 1.0, "pointer mass"),
        "hbar": Param(_float, 1.0, "reduced Planck constant"),
        "gamma": Param(_float, 1.0, "coupling constant"),
        "omega1": Param(_float, 0.0, "first eigenvalue"),
        "omega2": Param(_float, 20.0, "second eigenvalue"),
        "T": Param(_float, 1.0, "coupling duration"),
        "D": Param(_float, 10.0, "half-width of the box interval"),
        "t_free": Param(_float, 0.0, "free evolution time after the coupling"),
    },
    "way": {
        "j_max": Param(_float, 12.5, "largest apparatus spin in the sweep (0 skips)"),
        "restarts": Param(_int, 20, "random optimizer starts per j"),
        "search_models": Param(_int, 0, "models in the counterexample search"),
        "model": Param(str, None, "JSON model file for chain and obstruction checks"),
    },
}


# --------------------------------------------------------------------------
# config handling


def read_config(path: str, command: str) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    allowed = {**COMMON, **PARAMS[command]}
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, text = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "command":
            if text != command:
                raise ConfigError(f"{path}:{lineno}: config is for {text!r}, not {command!r}")
            continue
        if key not in allowed:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r} for command {command!r}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = allowed[key].kind(text)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grwcount", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for command, params in PARAMS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", help="flat key = value file")
        for key, spec in {**COMMON, **params}.items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, help=spec.help)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (in increasing priority)."""
    command = args.command
    allowed = {**COMMON, **PARAMS[command]}
    values = {k: spec.default for k, spec in allowed.items()}
    if args.config:
        values.update(read_config(args.config, command))
    for key, spec in allowed.items():
        text = getattr(args, key)
        if text is None:
            continue
        try:
            values[key] = spec.kind(text)
        except ValueError as exc:
            raise ConfigError(f"--{key.replace('_', '-')}: bad value {text!r}: {exc}") from None
    if values["format"] not in ("json", "csv"):
        raise ConfigError("format must be 'json' or 'csv'")
    if not 0 <= values["seed"] < 2**64:
        raise ConfigError("seed must lie in [0, 2**64)")
    return values


def _pick_one(values: dict, keys: tuple, what: str, required=True):
    given = [k for k in keys if values.get(k) is not None]
    if len(given) > 1:
        raise ConfigError(f"give only one of {', '.join(given)} for {what}")
    if not given:
        if required:
            raise ConfigError(f"missing {what}: set one of {', '.join(keys)}")
        return None, None
    return given[0], values[given[0]]


# --------------------------------------------------------------------------
# report helpers


def logprob_report(p: LogProb) -> dict:
    out = p.to_json()
    out["order_of_magnitude"] = p.order_of_magnitude()
    return out


def _clean(obj):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats -> null,
    log10 twins added for magnitudes outside [1e-300, 1e300]."""
    if isinstance(obj, dict):
        out = {}
        for k, v in obj.items():
            v = _clean(v)
            out[k] = v
            raw = obj[k]
            if isinstance(raw, (float, np.floating)) and not isinstance(raw, bool):
                mag = abs(float(raw))
                if math.isfinite(mag) and mag != 0.0 and not (
                    LOG10_TWIN_RANGE[0] <= mag <= LOG10_TWIN_RANGE[1]
                ):
                    out[f"{k}_log10"] = math.log10(mag)
        return out
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, int) and abs(obj) >= 2**53:
        return str(obj)
    return obj


def _amplitudes(values: dict) -> marbles.MarbleAmplitudes:
    key, val = _pick_one(values, ("a2", "b2", "log10_b2"), "marble amplitudes")
    if key == "a2":
        return marbles.MarbleAmplitudes.from_a2(val)
    if key == "b2":
        return marbles.MarbleAmplitudes.from_b2(val)
    return marbles.MarbleAmplitudes.from_log10_b2(val)


# --------------------------------------------------------------------------
# commands


def run_anomaly(values: dict) -> tuple[dict, list]:
    if values["n"] is None:
        raise ConfigError("anomaly needs n")
    key, val = _pick_one(values, ("log10_b2", "b2", "ln_b2"), "the tail weight")
    if key == "b2":
        b2 = qmath.from_real(val)
    elif key == "ln_b2":
        b2 = qmath.from_log10(val / qmath.LN10)
    else:
        b2 = qmath.from_log10(val)
    n = values["n"]
    amp = marbles.MarbleAmplitudes.tail_free() if b2.is_zero else marbles.MarbleAmplitudes.from_b2(b2)
    spec = marbles.EnsembleSpec(n, amp)
    p_in = marbles.prob_all_in(spec)
    p_out = marbles.prob_not_all_in(spec)
    tau_max = marbles.max_tau_for_n(n, b2)
    res = {
        "n": str(n),
        "b2": {**logprob_report(b2), "ln": b2.ln_value},
        "prob_all_in": logprob_report(p_in),
        "prob_not_all_in": logprob_report(p_out),
        "max_tau_for_n": logprob_report(tau_max),
    }
    if not b2.is_zero and not tau_max.is_zero:
        # log10 tau_max - log10 b2, which is log10 n while n b2 << 1
        res["max_tau_correction_log10"] = tau_max.log10_value - b2.log10_value
    tkey, tval = _pick_one(values, ("tau", "log10_tau"), "tau", required=False)
    if tkey is not None:
        tau = qmath.from_real(tval) if tkey == "tau" else qmath.from_log10(tval)
        if b2.is_zero:
            res["anomaly_threshold_n"] = {"value": None, "log10": None,
                                          "note": "undefined: no tail, so no n ever exceeds tau"}
        else:
            lg = marbles.log10_anomaly_threshold_n(tau, b2)
            res["anomaly_threshold_n"] = {"value": marbles.anomaly_threshold_n(tau, b2), "log10": lg}
        res["tau"] = logprob_report(tau)
    rows = [["quantity", "log10", "order_of_magnitude"]]
    for name in ("b2", "prob_all_in", "prob_not_all_in", "max_tau_for_n"):
        r = res[name]
        rows.append([name, r["log10"], r["order_of_magnitude"]])
    return res, rows


def run_collapse(values: dict) -> tuple[dict, list]:
    grw = marbles.GrwParameters(values["lambda"], values["nucleons"], values["width"])
    spec = marbles.EnsembleSpec(values["n"], _amplitudes(values), grw)
    spec.require_simulable()
    seed = values["seed"]
    ens = marbles.simulate_ensemble(spec, values["trajectories"], seed, values["t_max"])
    res = {
        "spec": marbles.spec_to_json(spec, values["t_max"]),
        "hit_rate": grw.hit_rate,
        "trajectories": len(ens),
        "unresolved_trajectories": int(np.count_nonzero(ens.unresolved_count)),
        "mean_final_k_in": float(ens.final_k_in.mean()) if len(ens) else None,
    }
    resolved = ens.unresolved_count == 0
    if spec.n <= 10_000 and len(ens):
        counts = np.bincount(ens.final_k_in[resolved], minlength=spec.n + 1)
        dist = marbles.count_distribution(spec)
        res["count_histogram"] = counts.tolist()
        res["binomial_pmf"] = dist.probabilities().tolist()
        if counts.sum():
            res["total_variation"] = marbles.total_variation(counts, dist.probabilities())
    if values["samples"]:
        res["reduction_time"] = marbles.reduction_time_stats(spec, values["samples"], seed)
    rows = [["seed_index", "total_reduction_time", "final_k_in", "unresolved_count"]]
    for i in range(len(ens)):
        rows.append([i, repr(float(ens.total_reduction_time[i])), int(ens.final_k_in[i]), int(ens.unresolved_count[i])])
    return res, rows


def run_pointer(values: dict) -> tuple[dict, list]:
    delta = values["delta"]
    dx = values["dx"] or delta / 16
    coupling = pointer.MeasurementCoupling(values["gamma"], values["omega1"], values["omega2"], values["T"])
    shifts = [coupling.shift(values["omega1"]), coupling.shift(values["omega2"])]
    t_free = values["t_free"]
    spread = math.sqrt(pointer.spreading_variance(delta, t_free, values["mass"], values["hbar"]))
    half = values["half_width"] or (
        abs(values["center"]) + max(abs(s) for s in shifts) + pointer.GAUSSIAN_HALF_SPAN * spread + delta
    )
    half = max(half, values["D"] + 2 * delta)
    grid = pointer.Grid.spanning(-half, half, dx)
    psi = pointer.gaussian_pointer(delta, values["center"], grid, values["mass"], values["hbar"])
    td = pointer.tail_decompose(psi, values["D"])
    b1 = pointer.evolve_measurement(psi, coupling, values["omega1"])
    b2 = pointer.evolve_measurement(psi, coupling, values["omega2"])
    res = {
        "grid": {"x_min": grid.x_min, "dx": grid.dx, "points": grid.n},
        "initial": {"mean": psi.mean(), "variance": psi.variance()},
        "tail": td.to_json(),
        "outcomes": {
            "means": [b1.mean(), b2.mean()],
            "log10_abs_overlap": pointer.log10_abs_overlap(b1, b2),
        },
        "distinguishability": pointer.distinguishability_report(coupling, delta),
    }
    final = psi
    if t_free > 0:
        final = pointer.evolve_free(psi, t_free)
        res["free"] = {
            "t": t_free,
            "dimensionless_time": t_free / pointer.doubling_time(delta, values["mass"], values["hbar"]),
            "variance": final.variance(),
            "closed_form_variance": spread**2,
            "tail": pointer.tail_decompose(final, values["D"]).to_json(),
        }
    rows = [["x", "re", "im", "density"]]
    for x, a, d in zip(final.x, final.amplitudes, final.density()):
        rows.append([repr(float(x)), repr(float(a.real)), repr(float(a.imag)), repr(float(d))])
    return res, rows


def run_way(values: dict) -> tuple[dict, list]:
    from .way import model as wm
    from .way import search, sweep

    _, _, sz = wm.spin_matrices(0.5)
    sx, _, _ = wm.spin_matrices(0.5)
    cs = wm.controlled_shift_model()
    res = {
        "pauli_obstruction": wm.commutator_obstruction(sz, sx),
        "controlled_shift_chain_max_residual": max(
            wm.chain_identity_residual(cs, m, mp) for m in range(2) for mp in range(2)
        ),
    }
    rows = [["j", "dim", "gamma2_mean", "epsilon", "optimizer_status"]]
    if values["model"]:
        with open(values["model"], encoding="utf-8") as fh:
            model = wm.model_from_json(json.load(fh))
        entry = {
            "obstruction": wm.commutator_obstruction(model.M, model.Gamma_S),
            "conservation_residual": wm.conservation_residual(model.U, model.Gamma),
        }
        try:
            entry["chain_max_residual"] = max(
                wm.chain_identity_residual(model, m, mp)
                for m in range(model.dim_s) for mp in range(model.dim_s)
            )
        except wm.PreconditionsUnmet as exc:
            entry["chain_preconditions_unmet"] = exc.residuals
        res["model"] = entry
    if values["j_max"] > 0:
        js = [k / 2 for k in range(0, int(round(2 * values["j_max"])) + 1)]
        table = sweep.nonideality_sweep(js, seed=values["seed"], restarts=values["restarts"])
        res["sweep"] = [
            {"j": r.j, "dim": r.dim, "gamma2_mean": r.gamma2_mean, "epsilon": r.epsilon,
             "optimizer_status": r.status}
            for r in table
        ]
        res["sweep_slope_diagnostic"] = sweep.scaling_slope(table)
        for r in table:
            rows.append([repr(r.j), r.dim, repr(r.gamma2_mean), repr(r.epsilon), r.status])
    if values["search_models"]:
        rep = search.counterexample_search(values["search_models"], seed=values["seed"])
        res["search"] = {
            "models": rep.models,
            "by_mode": rep.by_mode,
            "conserving_ideal_orthogonal": rep.all_three,
            "max_obstruction_among_those": rep.max_obstruction_all_three,
            "counterexamples": len(rep.counterexamples),
        }
    return res, rows


COMMANDS = {
    "anomaly": run_anomaly,
    "collapse": run_collapse,
    "pointer": run_pointer,
    "way": run_way,
}


def render(command: str, values: dict, result: dict, rows: list) -> str:
    if values["format"] == "csv":
        sink = io.StringIO()
        w = csv.writer(sink, lineterminator="\n")
        w.writerows(rows)
        return sink.getvalue()
    params = {k: v for k, v in values.items() if k not in ("out", "format")}
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "seed": values["seed"],
        "parameters": params,
        "results": result,
    }
    return json.dumps(_clean(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".grwcount-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _attach_negative_values(argv: list[str]) -> list[str]:
    # argparse reads "-1e15" as an option; glue such values to their flag
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if tok.startswith("--") and "=" not in tok and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            try:
                float(argv[i + 1])
            except ValueError:
                pass
            else:
                out.append(f"{tok}={argv[i + 1]}")
                i += 2
                continue
        out.append(tok)
        i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_attach_negative_values(argv))
    try:
        values = resolve(args)
        result, rows = COMMANDS[args.command](values)
        text = render(args.command, values, result, rows)
    except ConfigError as exc:
        print(f"grwcount: configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # every other failure is a computation failure
        print(f"grwcount: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if values["out"]:
        write_atomic(values["out"], text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
