"""Command-line entry point: ``mmpc plan | simulate | audit | sweep``.

Exit codes: 0 success, 1 a verification failed, 2 the configuration is
invalid.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import analytics
from .audit import (
    MUTATIONS,
    AuditReport,
    apply_sign_mapping,
    find_sign_mapping,
    mutate_plan,
    structural_audit,
    transcript_shape_test,
)
from .coding import RedundancyCache
from .errors import ConfigError, MmpcError, NoMapping
from .gf import DEFAULT_Q
from .model import DemandSet, MessageLibrary, RandomTape, build_library, random_library, relabel
from .planner import make_plan, plan_summary
from .protocol import decode_transcript, encode_plan, load_transcript_records, run_protocol

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

#: Used when neither ``--config`` nor parameter flags are given.
DEFAULT_CONFIG = {
    "M": 5, "K": 3, "P": 2, "N": 2, "q": DEFAULT_Q,
    "demand": ["a", "b"], "dependent_rows": [[1, 1, 0], [0, 1, 1]],
}


@dataclass(frozen=True)
class Config:
    M: int
    K: int
    P: int
    N: int
    q: int
    seed: int
    demand: tuple[int, ...]
    library: MessageLibrary

    def header(self) -> dict:
        return {
            "M": self.M, "K": self.K, "P": self.P, "N": self.N, "q": self.q, "seed": self.seed,
            "demand": list(self.demand),
            "dependent_rows": self.library.coeffs[self.K :].tolist(),
        }


def parse_labels(value, M: int | None = None) -> tuple[int, ...]:
    """Parse ``"d,e"``, ``"4,5"``, ``["d", "e"]`` or ``[4, 5]`` into labels."""
    if isinstance(value, str):
        items = [v.strip() for v in value.split(",") if v.strip()]
    elif isinstance(value, (list, tuple)):
        items = list(value)
    else:
        raise ConfigError(f"cannot read a demand from {value!r}")
    out = []
    for v in items:
        if isinstance(v, str) and v.isalpha() and len(v) == 1:
            out.append(ord(v.lower()) - ord("a") + 1)
        else:
            try:
                out.append(int(v))
            except (TypeError, ValueError):
                raise ConfigError(f"demand entry {v!r} is neither a number nor a letter") from None
    if M is not None and any(not 1 <= x <= M for x in out):
        raise ConfigError(f"demand {value!r} names messages outside 1..{M}")
    return tuple(out)


def _env_seed() -> int | None:
    raw = os.environ.get("MMPC_SEED")
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"MMPC_SEED={raw!r} is not an integer") from None


def load_config(args: argparse.Namespace, base: dict | None = None) -> Config:
    """Merge defaults, the JSON config file and command-line overrides.

    Args:
        args: parsed command line.
        base: fields used in place of the built-in defaults when no config
            file is given (a stored transcript header, for instance).
    """
    raw: dict = dict(base) if base else {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("the config file must hold a JSON object")
    overrides = {k: getattr(args, k, None) for k in ("M", "K", "P", "N", "q", "seed", "demand", "dependent_rows")}
    if not raw and all(overrides[k] is None for k in ("M", "K", "N", "dependent_rows")):
        raw = dict(DEFAULT_CONFIG)
        if overrides["demand"] is not None and overrides["P"] is None:
            raw.pop("P")
    for k, v in overrides.items():
        if v is not None:
            raw[k] = v
    if raw.get("seed") is None:
        env = _env_seed()
        raw["seed"] = 0 if env is None else env
    missing = [k for k in ("M", "K", "N") if raw.get(k) is None]
    if missing:
        raise ConfigError(f"missing required field(s): {', '.join(missing)}")
    try:
        M, K, N = int(raw["M"]), int(raw["K"]), int(raw["N"])
        q = int(raw.get("q") or DEFAULT_Q)
        seed = int(raw["seed"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"M, K, N, q and seed must be integers: {exc}") from None
    demand = parse_labels(raw["demand"], M) if raw.get("demand") is not None else None
    P = raw.get("P")
    P = int(P) if P is not None else (len(demand) if demand else None)
    if P is None:
        raise ConfigError("give P or a demand list")
    if demand is None:
        demand = tuple(range(1, P + 1))
    if len(demand) != P:
        raise ConfigError(f"P={P} but the demand lists {len(demand)} messages")
    if not 1 <= P < K:
        raise ConfigError(f"the scheme needs 1 <= P < K (got P={P}, K={K}); P = K is a plain download of all files")
    rows = raw.get("dependent_rows")
    if isinstance(rows, str):
        try:
            rows = json.loads(rows)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--dependent-rows is not valid JSON: {exc}") from None
    if rows is None:
        lib = random_library(M, K, q, np.random.default_rng([seed, M, K]))
    else:
        lib = build_library(M, K, q, rows)
    DemandSet(demand).validate(lib)
    return Config(M, K, P, N, q, seed, demand, lib)


def _write_lines(path: str, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# --- subcommands ------------------------------------------------------------


def cmd_plan(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    s = plan_summary(cfg.M, cfg.K, cfg.P, cfg.N)
    print(f"alpha={','.join(map(str, s.alpha))}")
    print(f"stage_sizes={','.join(map(str, s.stage_sizes))}")
    print(f"L={s.L} D={s.D} R2={s.R2}")
    print(f"R2_decimal={float(s.R2):.6f}")
    if args.dump:
        rlib = relabel(cfg.library, DemandSet(cfg.demand))
        tape = RandomTape.from_seed(cfg.seed, s.L)
        plan = make_plan(rlib, cfg.N, tape)
        _write_lines(args.dump, plan.dump_records())
        print(f"plan written to {args.dump}")
    return EXIT_OK


def _replay(cfg: Config, path: str) -> int:
    header, recs = load_transcript_records(path)
    rlib = relabel(cfg.library, DemandSet(cfg.demand))
    s = plan_summary(cfg.M, cfg.K, cfg.P, cfg.N)
    tape = RandomTape.from_seed(cfg.seed, s.L)
    plan = make_plan(rlib, cfg.N, tape)
    coded = encode_plan(plan, tape, cfg.q)
    expected = {
        (key, cq.row): sorted(list(t) for t in cq.terms) for key, cs in coded.items() for cq in cs.records()
    }
    answers = {key: np.zeros(cs.r, dtype=np.int64) for key, cs in coded.items()}
    seen = set()
    for rec in recs:
        key = (int(rec["server"]), int(rec["round"]), int(rec["stage"]))
        row = int(rec["row"])
        if (key, row) not in expected or sorted(map(list, rec["terms"])) != expected[(key, row)]:
            print(f"replay: coded query {key} row {row} does not match the plan", file=sys.stderr)
            return EXIT_FAIL
        answers[key][row] = int(rec["answer"])
        seen.add((key, row))
    if len(seen) != len(expected):
        print(f"replay: transcript has {len(seen)} of {len(expected)} coded queries", file=sys.stderr)
        return EXIT_FAIL
    decoded = decode_transcript(plan, rlib, tape, answers)
    files = cfg.library.random_files(s.L, tape.files_rng())
    truth = cfg.library.messages(files)[[d - 1 for d in cfg.demand]]
    ok = np.array_equal(decoded, truth)
    print(f"replay: download={len(seen)} recovered={'yes' if ok else 'NO'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.replay:
        try:
            header, _ = load_transcript_records(args.replay)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read transcript {args.replay}: {exc}") from None
        cfg = load_config(args, base=None if args.config else header)
        print(f"seed={cfg.seed}")
        try:
            return _replay(cfg, args.replay)
        except MmpcError as exc:
            print(f"replay: decoding failed: {exc}", file=sys.stderr)
            return EXIT_FAIL
    cfg = load_config(args)
    print(f"seed={cfg.seed}")
    res = run_protocol(cfg.library, cfg.demand, cfg.N, seed=cfg.seed)
    D = res.transcript.download
    rate = Fraction(cfg.P * res.summary.L, D)
    print(f"L={res.summary.L} download={D} expected_D={res.summary.D}")
    print(f"rate={rate} ({float(rate):.6f})")
    if args.transcript:
        res.transcript.dump(args.transcript, header=cfg.header())
        print(f"transcript written to {args.transcript}")
    ok = res.correct and D == res.summary.D
    print("recovered=yes" if ok else "recovered=NO")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_audit(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    rlib = relabel(cfg.library, DemandSet(cfg.demand))
    s = plan_summary(cfg.M, cfg.K, cfg.P, cfg.N)
    tape = RandomTape.from_seed(cfg.seed, s.L)
    plan = make_plan(rlib, cfg.N, tape)
    if args.mutate:
        plan = mutate_plan(plan, args.mutate)
    reports = [r.to_dict() for r in structural_audit(plan, rlib, RedundancyCache(rlib))]
    other = None
    if args.pair:
        other = parse_labels(args.pair, cfg.M)
        rlib2 = relabel(cfg.library, DemandSet(other))
        plan2 = make_plan(rlib2, cfg.N, RandomTape.from_seed(cfg.seed, s.L))
        rep = AuditReport("sign_mapping", f"demand {cfg.demand} vs {other}")
        try:
            m = find_sign_mapping(plan, plan2)
            rep.detail = [f"round {i}: {n} solutions" for i, n in sorted(m.solutions.items())]
            if any(n != 2 for n in m.solutions.values()) or not apply_sign_mapping(plan, plan2, m):
                rep.passed = False
        except NoMapping as exc:
            rep.fail(f"{exc} at {exc.triple}")
        reports.append(rep.to_dict())
    if args.samples:
        demands = [cfg.demand, other if other else cfg.demand]
        shape = transcript_shape_test(cfg.library, cfg.N, demands, args.samples, seed=cfg.seed)
        reports.append(shape.to_dict())
    text = json.dumps(reports, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK if all(r["pass"] for r in reports) else EXIT_FAIL


def parse_range(text: str) -> list[int]:
    """``"a:b"`` (inclusive; empty when ``b < a``), ``"a,b,c"`` or ``"a"``."""
    try:
        if ":" in text:
            lo, hi = text.split(":")
            return list(range(int(lo), int(hi) + 1))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"invalid range {text!r}; use a:b, a,b,c or a single integer") from None


def cmd_sweep(args: argparse.Namespace) -> int:
    Ms, Ks, Ps, Ns = (parse_range(v) for v in (args.M, args.K, args.P, args.N))
    text = analytics.to_csv(analytics.sweep(Ms, Ks, Ps, Ns))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- argument parsing -------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (fields M, K, P, N, q, seed, demand, dependent_rows)")
    p.add_argument("--M", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--P", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--seed", type=int, help="defaults to $MMPC_SEED, then 0")
    p.add_argument("--demand", help="comma-separated labels, numbers or letters (e.g. d,e)")
    p.add_argument("--dependent-rows", dest="dependent_rows", help="JSON list of M-K coefficient rows")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmpc", description="Multi-message private computation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="print stage counts, L, D and R2")
    _add_config_flags(p)
    p.add_argument("--dump", help="write the query plan as JSON lines")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="run the protocol end to end and verify recovery")
    _add_config_flags(p)
    p.add_argument("--transcript", help="write the transcript as JSON lines")
    p.add_argument("--replay", help="decode a stored transcript instead of running the servers")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("audit", help="run structural and privacy checks, print a JSON report")
    _add_config_flags(p)
    p.add_argument("--pair", help="second demand for the sign-mapping check")
    p.add_argument("--samples", type=int, help="run the transcript shape test with this many samples")
    p.add_argument("--mutate", choices=MUTATIONS, help="damage the plan first")
    p.add_argument("--out", help="also write the report to this file")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("sweep", help="closed-form rates over a parameter grid, as CSV")
    for name in ("M", "K", "P", "N"):
        p.add_argument(f"--{name}", required=True, help="a:b, a,b,c or a")
    p.add_argument("--out", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MmpcError as exc:
        kind = type(exc).__name__
        print(f"error ({kind}): {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
