"""Command-line runner: read a JSON scenario, optimise every point, write
``results.csv`` and ``summary.json``.

Exit codes: 0 on success, 1 for an invalid configuration (the message names
the offending field), 2 when a computation fails or ``--verify`` finds a row
whose rate cannot be reproduced.

A minimal configuration::

    {"version": 1,
     "analysis": {"mode": "finite", "N": 1e11},
     "scenario": {"type": "point", "L_A": 10, "L_B": 60}}
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .channel_model import ChannelPair, DeviceParams
from .decoy_analysis import SEVEN, VARIANTS, ProtocolParams, decoy_count
from .key_rate import Analysis, key_rate
from .network_planner import STRATEGIES, StarNetwork, plan
from .network_planner import session_channel as session_channel_for
from .optimizer import OptimizationReport, optimize

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
DISTANCE_TOL_KM = 0.5
VERIFY_RTOL = 1e-9

PARAM_COLUMNS = [f"{name}_{side}" for side in "AB"
                 for name in ("s", "mu", "nu", "nu2", "P_s", "P_mu", "P_nu", "P_nu2")]
CSV_COLUMNS = (["case", "L_A", "L_B", "R"] + PARAM_COLUMNS
               + ["Y11_lower", "e11_upper", "E_ss_Z", "Q_ss_Z", "runtime_ms"])


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted path of the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class UnreachableTarget(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class ProtocolChoice:
    variant: str = SEVEN
    symmetric_constraint: bool = False
    add_fibre: bool = False
    method: Optional[str] = None
    strategy: Optional[str] = None
    starts: Optional[int] = None

    @property
    def label(self) -> str:
        tags = [self.variant]
        if self.symmetric_constraint:
            tags.append("symmetric")
        if self.add_fibre:
            tags.append("add_fibre")
        if self.method:
            tags.append(self.method)
        return "+".join(tags)


@dataclass(frozen=True)
class Range:
    start: float
    stop: float
    step: float

    def values(self) -> np.ndarray:
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return self.start + self.step * np.arange(n)


@dataclass(frozen=True)
class ScenarioConfig:
    device: DeviceParams
    protocol: ProtocolChoice
    analysis: Analysis
    scenario: Dict[str, Any]
    base_dir: Path = field(default=Path("."))

    @property
    def kind(self) -> str:
        return self.scenario["type"]


def _join(*parts: str) -> str:
    return ".".join(p for p in parts if p)


def _take(obj: Any, path: str, allowed: Dict[str, Callable], required: Sequence[str] = ()) -> dict:
    """Check ``obj``'s keys and convert its values; nested converters raise
    ConfigError with paths relative to their own object."""
    if not isinstance(obj, dict):
        raise ConfigError(path or "value", "expected a JSON object")
    for key in obj:
        if key not in allowed:
            raise ConfigError(_join(path, key), "unknown field")
    for key in required:
        if key not in obj:
            raise ConfigError(_join(path, key), "required field is missing")
    out = {}
    for key, conv in allowed.items():
        if key in obj:
            try:
                out[key] = conv(obj[key])
            except ConfigError as exc:
                raise ConfigError(_join(path, key, exc.field), str(exc).split(": ", 1)[1]) from None
            except (TypeError, ValueError) as exc:
                raise ConfigError(_join(path, key), str(exc)) from None
    return out


def _number(v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ValueError(f"expected a finite number, got {v!r}")
    return float(v)


def _nonneg(v) -> float:
    v = _number(v)
    if v < 0:
        raise ValueError(f"must be >= 0, got {v}")
    return v


def _positive(v) -> float:
    v = _number(v)
    if v <= 0:
        raise ValueError(f"must be > 0, got {v}")
    return v


def _flag(v) -> bool:
    if not isinstance(v, bool):
        raise ValueError(f"expected true or false, got {v!r}")
    return v


def _choice(options):
    def conv(v):
        if v not in options:
            raise ValueError(f"expected one of {list(options)}, got {v!r}")
        return v
    return conv


def _optional(conv):
    return lambda v: None if v is None else conv(v)


def _count(v) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ValueError(f"expected a positive integer, got {v!r}")
    return v


def _range(v) -> Range:
    d = _take(v, "", {"start": _nonneg, "stop": _nonneg, "step": _positive},
              ("start", "stop", "step"))
    if d["stop"] < d["start"]:
        raise ConfigError("stop", "range is empty (stop < start)")
    return Range(**d)


def _protocol(v) -> ProtocolChoice:
    d = _take(v, "protocol", {
        "variant": _choice(VARIANTS), "symmetric_constraint": _flag, "add_fibre": _flag,
        "method": _optional(_choice(("analytic", "lp"))),
        "strategy": _optional(_choice(("single_start", "multi_start"))),
        "starts": _optional(_count)})
    return ProtocolChoice(**d)


def _protocol_list(v) -> List[ProtocolChoice]:
    if not isinstance(v, list) or not v:
        raise ValueError("expected a non-empty list of protocol objects")
    out = []
    for i, item in enumerate(v):
        try:
            out.append(_protocol(item))
        except ConfigError as exc:
            raise ConfigError(f"{i}.{exc.field.split('.', 1)[-1]}", str(exc).split(": ", 1)[1]) from None
    return out


def _strategies(v) -> List[str]:
    if not isinstance(v, list) or not v:
        raise ValueError("expected a non-empty list of strategies")
    return [_choice(STRATEGIES)(s) for s in v]


_SCENARIOS = {
    "point": ({"L_A": _nonneg, "L_B": _nonneg}, ("L_A", "L_B")),
    "sweep": ({"L_A": _range, "L_B": _range}, ("L_A", "L_B")),
    "fixed_mismatch": ({"x": _positive, "L_B": _range}, ("x", "L_B")),
    "single_arm": ({"L_A": _range}, ("L_A",)),
    "network": ({"nodes": str, "strategies": _strategies}, ("nodes",)),
    "compare": ({"L_A": _nonneg, "L_B": _nonneg, "protocols": _protocol_list}, ("L_A", "L_B", "protocols")),
    "max_distance": ({"target_rate": _positive, "L_B": _nonneg, "L_max": _positive}, ("target_rate",)),
}


def parse_config(raw: dict, base_dir: Path = Path(".")) -> ScenarioConfig:
    """Validate a decoded JSON configuration."""
    top = _take(raw, "config", {"version": lambda v: v, "device": lambda v: v, "protocol": lambda v: v,
                                "analysis": lambda v: v, "scenario": lambda v: v},
                ("version", "scenario"))
    if top["version"] != SCHEMA_VERSION:
        raise ConfigError("config.version", f"unsupported schema version {top['version']!r}; "
                                            f"expected {SCHEMA_VERSION}")
    dev_fields = {f.name: _number for f in fields(DeviceParams)}
    try:
        dev = DeviceParams(**_take(top.get("device", {}), "device", dev_fields))
    except ConfigError:
        raise
    except ValueError as exc:
        name = str(exc).split(" ", 1)[0]
        raise ConfigError(f"device.{name}", str(exc)) from None
    protocol = _protocol(top.get("protocol", {}))
    an = _take(top.get("analysis", {"mode": "finite", "N": 1e11}), "analysis",
               {"mode": _choice(("asymptotic", "finite")), "N": _positive, "gamma": _optional(_nonneg)},
               ("mode",))
    if an["mode"] == "finite" and "N" not in an:
        raise ConfigError("analysis.N", "finite analysis needs the data size N")
    if an["mode"] == "asymptotic" and "N" in an:
        raise ConfigError("analysis.N", "N is only meaningful for finite analysis")
    analysis = Analysis(an["mode"], an.get("N"), an.get("gamma"))

    sc = top["scenario"]
    if not isinstance(sc, dict) or "type" not in sc:
        raise ConfigError("scenario.type", "required field is missing")
    kind = sc["type"]
    if kind not in _SCENARIOS:
        raise ConfigError("scenario.type", f"expected one of {list(_SCENARIOS)}, got {kind!r}")
    allowed, required = _SCENARIOS[kind]
    body = _take({k: v for k, v in sc.items() if k != "type"}, "scenario", allowed, required)
    body["type"] = kind
    if kind == "fixed_mismatch":
        shift = 10 * math.log10(body["x"]) / dev.fibre_loss_alpha
        if body["L_B"].start - shift < 0:
            raise ConfigError("scenario.x", f"L_A = L_B - {shift:.3f} km is negative at "
                                            f"L_B = {body['L_B'].start}")
    if kind == "max_distance":
        body.setdefault("L_B", 0.0)
        body.setdefault("L_max", 300.0)
    if kind == "network":
        body.setdefault("strategies", list(STRATEGIES))
        if not (base_dir / body["nodes"]).is_file():
            raise ConfigError("scenario.nodes", f"node file {body['nodes']!r} not found")
    return ScenarioConfig(dev, protocol, analysis, body, base_dir)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON ({exc})") from None
    return parse_config(raw, path.parent)


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class Row:
    case: str
    L_A: float
    L_B: float
    report: OptimizationReport
    protocol: ProtocolChoice
    channel: ChannelPair  # as optimised, after any added fibre
    runtime_ms: float

    def as_record(self) -> Dict[str, str]:
        res = self.report.result
        rec = {c: "" for c in CSV_COLUMNS}
        rec.update(case=self.case, L_A=repr(float(self.L_A)), L_B=repr(float(self.L_B)),
                   R=repr(float(self.report.rate)), Y11_lower=repr(res.bounds.Y11_lower),
                   e11_upper=repr(res.bounds.e11_upper), E_ss_Z=repr(res.E_ss_Z),
                   Q_ss_Z=repr(res.Q_ss_Z), runtime_ms=f"{self.runtime_ms:.3f}")
        rec.update(param_record(self.report.params))
        return rec


def param_record(params: ProtocolParams) -> Dict[str, str]:
    names = ("mu", "nu", "nu2")
    out = {}
    for side, p in (("A", params.A), ("B", params.B)):
        out[f"s_{side}"] = repr(p.signal)
        out[f"P_s_{side}"] = repr(p.p_signal)
        for name, val, prob in zip(names, p.decoys, p.p_decoys):
            out[f"{name}_{side}"] = repr(val)
            out[f"P_{name}_{side}"] = repr(prob)
    return out


def params_from_record(rec: Dict[str, str], protocol: ProtocolChoice) -> ProtocolParams:
    k = decoy_count(protocol.variant)
    names = ("mu", "nu", "nu2")[:k]
    vec = []
    for side in "AB":
        vec.append(float(rec[f"s_{side}"]))
        vec += [float(rec[f"{n}_{side}"]) for n in names]
        vec.append(float(rec[f"P_s_{side}"]))
        vec += [float(rec[f"P_{n}_{side}"]) for n in names]
    return ProtocolParams.from_vector(protocol.variant, vec, protocol.symmetric_constraint)


def session_channel(L_A: float, L_B: float, protocol: ProtocolChoice, dev: DeviceParams) -> ChannelPair:
    """Physical distances, padded to the longer arm when fibre is added."""
    if protocol.add_fibre:
        L = max(L_A, L_B)
        return ChannelPair.for_device(L, L, dev)
    return ChannelPair.for_device(L_A, L_B, dev)


def evaluate_point(cfg: ScenarioConfig, protocol: ProtocolChoice, L_A: float, L_B: float,
                   seed: Sequence[int], case: str = "") -> Row:
    t0 = time.perf_counter()
    ch = session_channel(L_A, L_B, protocol, cfg.device)
    rep = optimize(ch, cfg.device, cfg.analysis, protocol.variant, strategy=protocol.strategy,
                   k=protocol.starts, symmetric_constraint=protocol.symmetric_constraint,
                   seed=list(seed), method=protocol.method)
    return Row(case or protocol.label, float(L_A), float(L_B), rep, protocol, ch,
               1e3 * (time.perf_counter() - t0))


def _run_points(cfg: ScenarioConfig, points: List[Tuple[str, ProtocolChoice, float, float]],
                threads: int, seed: int) -> List[Row]:
    def job(i):
        case, proto, a, b = points[i]
        return evaluate_point(cfg, proto, a, b, (seed, i), case)
    if threads <= 1 or len(points) <= 1:
        return [job(i) for i in range(len(points))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(job, range(len(points))))


def find_max_distance(cfg: ScenarioConfig, seed: int = 0, tol: float = DISTANCE_TOL_KM,
                      rows: Optional[List[Row]] = None) -> float:
    """Longest ``L_A`` (with ``L_B`` fixed) whose optimised rate reaches the
    target, found by bisection to ``tol`` km.

    Raises :class:`UnreachableTarget` when even ``L_A = 0`` falls short.  A
    target still met at ``L_max`` returns ``L_max``.  Every evaluation is
    appended to ``rows`` when given.
    """
    if cfg.kind != "max_distance":
        raise ValueError("find_max_distance needs a max_distance scenario")
    target = cfg.scenario["target_rate"]
    L_B = cfg.scenario["L_B"]
    counter = iter(range(10**6))

    def rate(L):
        row = evaluate_point(cfg, cfg.protocol, L, L_B, (seed, next(counter)))
        if rows is not None:
            rows.append(row)
        return row.report.rate

    lo, hi = 0.0, cfg.scenario["L_max"]
    if rate(lo) < target:
        raise UnreachableTarget(f"rate at L_A = 0 is below the target {target:g}")
    if rate(hi) >= target:
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if rate(mid) >= target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def run_scenario(cfg: ScenarioConfig, threads: int = 1, seed: int = 0) -> Tuple[List[Row], dict]:
    """Evaluate the configured scenario; returns rows and summary extras."""
    sc, proto = cfg.scenario, cfg.protocol
    extra: dict = {}
    if cfg.kind == "point":
        points = [("", proto, sc["L_A"], sc["L_B"])]
    elif cfg.kind == "sweep":
        points = [("", proto, a, b) for a in sc["L_A"].values() for b in sc["L_B"].values()]
    elif cfg.kind == "fixed_mismatch":
        shift = 10 * math.log10(sc["x"]) / cfg.device.fibre_loss_alpha
        points = [("", proto, b - shift, b) for b in sc["L_B"].values()]
    elif cfg.kind == "single_arm":
        points = [("", proto, a, 0.0) for a in sc["L_A"].values()]
    elif cfg.kind == "compare":
        points = [(p.label, p, sc["L_A"], sc["L_B"]) for p in sc["protocols"]]
    elif cfg.kind == "max_distance":
        rows: List[Row] = []
        try:
            extra["max_distance_km"] = find_max_distance(cfg, seed, rows=rows)
        except UnreachableTarget as exc:
            extra["max_distance_km"] = "unreachable"
            extra["reason"] = str(exc)
        return rows, extra
    elif cfg.kind == "network":
        net = StarNetwork.from_csv(cfg.base_dir / sc["nodes"], cfg.analysis.N, cfg.device)
        if cfg.analysis.is_finite and cfg.analysis.gamma is not None:
            raise ConfigError("analysis.gamma", "network scenarios derive gamma from the device")
        rows = []
        extra["networks"] = {}
        for strategy in sc["strategies"]:
            t0 = time.perf_counter()
            rm = plan(net, strategy, threads=threads, variant=proto.variant, seed=seed)
            per = 1e3 * (time.perf_counter() - t0) / max(1, len(rm.reports))
            p = ProtocolChoice(proto.variant, strategy != "asymmetric_free",
                               strategy == "symmetric_add_fibre", proto.method)
            for a, b, rep in rm.pairs():
                ch = session_channel_for(net, a, b, strategy)
                rows.append(Row(f"{strategy}:{a}-{b}", net.distance(a), net.distance(b), rep, p, ch, per))
            mat = rm.matrix()
            extra["networks"][strategy] = {"ids": rm.ids,
                                           "rates": [[None if np.isnan(v) else float(v) for v in r]
                                                     for r in mat]}
        return rows, extra
    else:  # pragma: no cover - parse_config rejects other kinds
        raise ConfigError("scenario.type", f"unsupported scenario {cfg.kind!r}")
    rows = _run_points(cfg, points, threads, seed)
    if cfg.kind == "compare":
        extra["ranking"] = [r.case for r in sorted(rows, key=lambda r: r.report.rate)]
    return rows, extra


def verify_rows(cfg: ScenarioConfig, records: List[Dict[str, str]], rows: List[Row]) -> List[dict]:
    """Recompute each written row's rate from its own printed parameters."""
    problems = []
    for rec, row in zip(records, rows):
        params = params_from_record(rec, row.protocol)
        r = key_rate(params, row.channel, cfg.device, cfg.analysis, row.protocol.method).rate
        want = float(rec["R"])
        if not math.isclose(r, want, rel_tol=VERIFY_RTOL, abs_tol=1e-300):
            problems.append({"case": row.case, "L_A": row.L_A, "L_B": row.L_B,
                             "R_csv": want, "R_recomputed": r})
    return problems


def write_outputs(out: Path, cfg: ScenarioConfig, rows: List[Row], extra: dict, seed: int,
                  verified: Optional[List[dict]]) -> List[Dict[str, str]]:
    out.mkdir(parents=True, exist_ok=True)
    records = [r.as_record() for r in rows]
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(records)
    rates = [r.report.rate for r in rows]
    summary = {
        "version": SCHEMA_VERSION,
        "scenario": cfg.kind,
        "protocol": asdict(cfg.protocol),
        "device": asdict(cfg.device),
        "analysis": cfg.analysis.describe(cfg.device),
        "seed": seed,
        "rows": len(rows),
        "max_rate": max(rates) if rates else None,
        "positive_rows": int(sum(r > 0 for r in rates)),
        "total_runtime_ms": float(sum(r.runtime_ms for r in rows)),
        **extra,
    }
    if verified is not None:
        summary["verify"] = {"checked": len(rows), "mismatches": verified}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=str) + "\n")
    return records


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amdiqkd", description=__doc__.split("\n\n")[0])
    p.add_argument("--config", required=True, help="scenario JSON file")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads for independent points (default: all cores)")
    p.add_argument("--seed", type=int, default=0, help="base seed for multi-start searches")
    p.add_argument("--verify", action="store_true",
                   help="recompute every row's rate from its printed parameters")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads", "must be at least 1")
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rows, extra = run_scenario(cfg, args.threads, args.seed)
        out = Path(args.out)
        records = write_outputs(out, cfg, rows, extra, args.seed, None)
        if args.verify:
            bad = verify_rows(cfg, records, rows)
            write_outputs(out, cfg, rows, extra, args.seed, bad)
            if bad:
                print(f"verify failed on {len(bad)} row(s)", file=sys.stderr)
                return EXIT_RUNTIME
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failures map to exit code 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {len(rows)} row(s) to {out / 'results.csv'}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
