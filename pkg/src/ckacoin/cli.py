"""Command-line front end: ``ckacoin <experiment> [flags]``.

Every experiment writes one JSON report (stdout, or ``--out``) with a
top-level ``"schema": 1``, the resolved config, per-trial records,
aggregates and ``wall_time``. Trial ``i`` always runs on ``split(seed, i)``,
so ``--jobs`` never changes the numbers. Exit status is 1 when an invariant
is violated and 2 on a bad config.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from . import acceptance, quantum
from .agreement import CrashFault, run_coin_binary_agreement, run_flp_demo
from .coin import NOT_COMMON, is_common, run_coin
from .consensus import MaskMode, check_properties, odd_corruption, run_block_agreement
from .errors import CKAError
from .netsim import Adversarial, Fifo, RandomDelay
from .qkd import bb84_exchange, detect_eavesdropper, topology_cost
from .quantum import NoiseChannel
from .rng import split
from .server import CKAServer, FaultSpec, ServerMode

SCHEMA = 1
EXPERIMENTS = ("coin", "bb84", "consensus", "timebin", "flp-demo", "topology")


@dataclass
class ExperimentConfig:
    experiment: str = "coin"
    n: int = 4
    t: int = 1
    trials: int = 100
    seed: int = 0
    corrupt: str = ""  # comma-separated node ids; for consensus, the b1 shares
    corrupt_b2: str = ""  # consensus only
    lost: str = ""
    eavesdrop: bool = False
    noise: str = "ideal"
    noise_p: float = 0.0
    mask_mode: str = "keystream"
    mode: str = "statevector"
    scheduler: str = "fifo"
    max_delay: int = 3
    protocol: str = "block"  # consensus: block | binary
    block_len: int = 256
    photons: int = 100_000
    sample_fraction: float = 0.2
    threshold: float = 0.11
    budget: int = 50
    strawman: bool = True
    jobs: int = 1
    output_path: str = ""

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigFieldError("experiment", f"one of {', '.join(EXPERIMENTS)}")
        for name in ("trials", "jobs", "photons", "budget", "block_len", "max_delay"):
            if getattr(self, name) < 1:
                raise ConfigFieldError(name, "must be >= 1")
        if self.t < 0:
            raise ConfigFieldError("t", "must be >= 0")
        choices = {
            "mask_mode": [m.value for m in MaskMode],
            "mode": [m.value for m in ServerMode],
            "scheduler": ["fifo", "random", "adversarial"],
            "protocol": ["block", "binary"],
            "noise": [k.value for k in quantum.NoiseKind],
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigFieldError(name, f"one of {', '.join(allowed)}")
        try:
            self.faults()
        except (ValueError, CKAError) as e:
            raise ConfigFieldError("corrupt/lost/noise", str(e)) from e
        return self

    def faults(self) -> FaultSpec:
        channel = NoiseChannel.parse(self.noise, self.noise_p if self.noise != "ideal" else 0.0)
        return FaultSpec(_ids(self.corrupt), _ids(self.lost), self.eavesdrop, channel)

    def channel(self) -> NoiseChannel:
        return self.faults().channel

    def policy(self):
        if self.scheduler == "random":
            return RandomDelay(self.max_delay)
        if self.scheduler == "adversarial":
            return Adversarial(horizon=self.max_delay)
        return Fifo()


class ConfigFieldError(ValueError):
    def __init__(self, name: str, why: str):
        super().__init__(f"config field {name!r}: {why}")
        self.field = name


def _ids(s: str) -> frozenset[int]:
    return frozenset(int(x) for x in s.replace(" ", "").split(",") if x)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(name: str, raw):
    if name not in _FIELDS:
        raise ConfigFieldError(name, "unknown key")
    default = _FIELDS[name].default
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        if str(raw).lower() in ("1", "true", "yes", "on"):
            return True
        if str(raw).lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigFieldError(name, f"expected a boolean, got {raw!r}")
    try:
        return type(default)(raw)
    except (TypeError, ValueError) as e:
        raise ConfigFieldError(name, f"expected {type(default).__name__}, got {raw!r}") from e


def load_config_file(path: str) -> dict:
    """JSON object, or flat ``key = value`` lines with ``#`` comments."""
    text = open(path, encoding="utf-8").read()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
    else:
        data = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigFieldError(f"line {lineno}", "expected key = value")
            k, v = (x.strip() for x in line.split("=", 1))
            data[k.replace("-", "_")] = v
    return {k: _coerce(k, v) for k, v in data.items()}


# -- trials ---------------------------------------------------------------------


def _coin_trial(cfg: ExperimentConfig, i: int) -> dict:
    rng = split(cfg.seed, i)
    o = run_coin(cfg.n, cfg.t, cfg.faults(), rng, CKAServer(ServerMode(cfg.mode)))
    c = is_common(o)
    return {"outputs": {str(k): v for k, v in sorted(o.outputs.items())}, "common": None if c == NOT_COMMON else c}


def _bb84_trial(cfg: ExperimentConfig, i: int) -> dict:
    rng = split(cfg.seed, i)
    s = bb84_exchange(cfg.photons, cfg.eavesdrop, cfg.channel(), rng)
    d = detect_eavesdropper(s, cfg.sample_fraction, cfg.threshold, rng)
    return {**s.summary(), "sample_qber": d.sample_qber, "detected": d.detected}


def _consensus_trial(cfg: ExperimentConfig, i: int) -> dict:
    rng = split(cfg.seed, i)
    if cfg.protocol == "binary":
        inputs = [int(x) for x in rng.integers(0, 2, cfg.n)]
        crashed = rng.choice(cfg.n, size=cfg.t, replace=False)
        crashes = {int(c): CrashFault(int(rng.integers(1, 4))) for c in crashed}
        o = run_coin_binary_agreement(cfg.n, cfg.t, inputs, crashes, cfg.policy(), rng, server_mode=ServerMode(cfg.mode))
        honest = set(o.honest_decisions().values())
        unanimous = len(set(inputs[j] for j in range(cfg.n) if j not in crashes)) == 1
        valid = not unanimous or honest == {inputs[min(set(range(cfg.n)) - set(crashes))]}
        return {
            "inputs": inputs,
            **o.summary(),
            "rounds": o.phases_used,
            "decided": o.all_decided,
            "ok": o.agreement and valid,
        }
    f1 = cfg.faults()
    f2 = dataclasses.replace(f1, corrupt_shares=_ids(cfg.corrupt_b2))
    faults = lambda r: (f1, f2) if r == 1 else None
    o = run_block_agreement(
        cfg.n, mask_mode=MaskMode(cfg.mask_mode), faults=faults, scheduler=cfg.policy(),
        rng=rng, block_len=cfg.block_len, server_mode=ServerMode(cfg.mode),
    )
    p = check_properties(o)
    exact = o.excluded_history[:1] == [odd_corruption(f1, f2)] if not (f1.lost_shares or f1.eavesdrop or not f1.channel.is_identity) else True
    return {
        **o.summary(),
        "rounds": o.rounds_used,
        "decided": all(b is not None for b in o.decided_block.values()),
        "agreement": p.agreement,
        "validity": p.validity,
        "wait_free": p.wait_free,
        "ok": p.all_hold and exact,
    }


def _flp_trial(cfg: ExperimentConfig, i: int) -> dict:
    r = run_flp_demo(cfg.n, cfg.strawman, cfg.budget, split(cfg.seed, i), t=cfg.t)
    return r.to_dict()


TRIALS = {"coin": _coin_trial, "bb84": _bb84_trial, "consensus": _consensus_trial, "flp-demo": _flp_trial}


def _run_trial(args) -> dict:
    cfg, i = args
    return {"trial": i, **TRIALS[cfg.experiment](cfg, i)}


def _mean(xs) -> float | None:
    xs = list(xs)
    return float(np.mean(xs)) if xs else None


def _aggregate(cfg: ExperimentConfig, records: list[dict]) -> tuple[dict, list[str]]:
    violations: list[str] = []
    exp = cfg.experiment
    if exp == "coin":
        k = len(records)
        zeros = sum(r["common"] == 0 for r in records)
        ones = sum(r["common"] == 1 for r in records)
        agg = {"p_hat_zero": zeros / k, "p_hat_one": ones / k, "common_rate": (zeros + ones) / k}
        if cfg.faults().is_ideal and agg["common_rate"] != 1.0:
            violations.append("ideal coin produced a non-common outcome")
    elif exp == "bb84":
        agg = {
            "sift_rate": _mean(r["sift_rate"] for r in records),
            "qber": _mean(r["qber"] for r in records),
            "detected_rate": _mean(r["detected"] for r in records),
        }
        if not cfg.eavesdrop and cfg.channel().is_identity and agg["qber"] != 0.0:
            violations.append("clean channel shows errors")
    elif exp == "consensus":
        agg = {
            "decided_rate": _mean(r["decided"] for r in records),
            "mean_rounds": _mean(r["rounds"] for r in records),
            "max_rounds": max(r["rounds"] for r in records),
        }
        bad = [r["trial"] for r in records if not r["ok"]]
        if bad:
            violations.append(f"safety property failed in trials {bad[:10]}")
    elif exp == "flp-demo":
        agg = {
            "decided_rate": _mean(r["decided"] for r in records),
            "mean_rounds": _mean(r["phases_reached"] for r in records),
        }
    else:
        agg = dict(records[0])
    return agg, violations


def _single(cfg: ExperimentConfig) -> list[dict]:
    if cfg.experiment == "topology":
        c = topology_cost(cfg.n)
        return [{"n": c.n, "pairwise": c.pairwise_channels, "cka": c.cka_channels}]
    psi = quantum.timebin_pipeline().Psi
    fids = {}
    for d in quantum.DETECTORS:
        m = quantum.detector_marginal(psi, d)
        fids[d] = m.fidelity(quantum.plus_state(m.labels[0]))
    nz = np.flatnonzero(np.abs(psi.amps) > 1e-12)
    return [{
        "support": [int(x) for x in nz],
        "amplitudes": [[float(psi.amps[x].real), float(psi.amps[x].imag)] for x in nz],
        "fidelities": fids,
        "min_fidelity": min(fids.values()),
    }]


def run(cfg: ExperimentConfig) -> tuple[dict, list[str]]:
    """Run an experiment; returns the report and any invariant violations."""
    cfg.validate()
    t0 = time.perf_counter()
    if cfg.experiment in TRIALS:
        work = [(cfg, i) for i in range(cfg.trials)]
        if cfg.jobs > 1:
            with ProcessPoolExecutor(cfg.jobs) as pool:
                records = list(pool.map(_run_trial, work, chunksize=max(1, cfg.trials // (4 * cfg.jobs))))
        else:
            records = [_run_trial(w) for w in work]
    else:
        records = _single(cfg)
    agg, violations = _aggregate(cfg, records)
    if cfg.experiment == "timebin" and agg["min_fidelity"] < 1 - 1e-9:
        violations.append("detector marginal fidelity below 1 - 1e-9")
    config = dataclasses.asdict(cfg)
    config.pop("jobs")  # does not affect results
    report = {
        "schema": SCHEMA,
        "config": config,
        "trials": records,
        "aggregates": agg,
        "violations": violations,
        "wall_time": time.perf_counter() - t0,
    }
    return report, violations


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# -- argument parsing -------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int)
    p.add_argument("--t", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON or key=value file; flags override it")
    p.add_argument("--out", dest="output_path", help="write the report here instead of stdout")
    p.add_argument("--jobs", type=int)
    p.add_argument("--mode", choices=[m.value for m in ServerMode])
    p.add_argument("--corrupt", help="comma-separated nodes with a flipped share")
    p.add_argument("--lost", help="comma-separated nodes whose share never arrives")
    p.add_argument("--noise", choices=[k.value for k in quantum.NoiseKind])
    p.add_argument("--noise-p", type=float)
    p.add_argument("--eavesdrop", action=argparse.BooleanOptionalAction, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ckacoin", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        _add_common(p)
        if name == "bb84":
            p.add_argument("--photons", type=int)
            p.add_argument("--sample-fraction", type=float)
            p.add_argument("--threshold", type=float)
        if name == "consensus":
            p.add_argument("--protocol", choices=["block", "binary"])
            p.add_argument("--mask-mode", choices=[m.value for m in MaskMode])
            p.add_argument("--scheduler", choices=["fifo", "random", "adversarial"])
            p.add_argument("--max-delay", type=int)
            p.add_argument("--block-len", type=int)
            p.add_argument("--corrupt-b2")
        if name == "flp-demo":
            p.add_argument("--budget", type=int)
            p.add_argument("--strawman", action=argparse.BooleanOptionalAction, default=None)
    v = sub.add_parser("verify-all", help="run the acceptance suite, one line per criterion")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--criteria", help="comma-separated subset, e.g. 1,3,9")
    v.add_argument("--out", dest="output_path")
    return parser


def config_from_args(ns: argparse.Namespace) -> ExperimentConfig:
    values = load_config_file(ns.config) if getattr(ns, "config", None) else {}
    values["experiment"] = ns.experiment
    for key, val in vars(ns).items():
        if key in ("config", "experiment") or val is None:
            continue
        values[key] = _coerce(key, val)
    return ExperimentConfig(**values).validate()


def _emit(text: str, path: str) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.experiment == "verify-all":
        try:
            ids = [int(x) for x in ns.criteria.split(",")] if ns.criteria else None
            results = acceptance.verify_all(ns.seed, ids, echo=print)
        except (KeyError, ValueError) as e:
            parser.error(f"--criteria: {e}")
        if ns.output_path:
            _emit(dumps({
                "schema": SCHEMA,
                "seed": ns.seed,
                "criteria": [{**r.report(), "passed": r.passed} for r in results],
                "wall_time": sum(r.elapsed for r in results),
            }), ns.output_path)
        return 0 if all(r.passed for r in results) else 1
    try:
        cfg = config_from_args(ns)
    except (ConfigFieldError, TypeError, OSError, json.JSONDecodeError) as e:
        print(f"ckacoin: error: {e}", file=sys.stderr)
        return 2
    report, violations = run(cfg)
    _emit(dumps(report), cfg.output_path)
    for v in violations:
        print(f"violation: {v}", file=sys.stderr)
    return 1 if violations else 0


if __name__ == "__main__":
    sys.exit(main())
