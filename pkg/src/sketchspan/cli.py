"""Command-line front end: streams, simulations and the lab experiments.

Every command writes a CSV (header row first) to ``--out`` or stdout and a
one-line summary to stderr. Exit codes: 0 success, 1 an experiment threshold
was breached, 2 bad usage or input.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from sketchspan.agm import AgmParams, agm_init
from sketchspan.distributed import read_edge_list, simulate
from sketchspan.graph import (ExactGraph, Insert, MultiplicityError, StreamParseError, apply_stream,
                              parse_stream_file, random_dynamic_stream)
from sketchspan.lab.codec import decode, encode
from sketchspan.lab.dsk import dsk_violations, embed_ur_in_dsk, genie_recover, sample_d_sk, sample_d_sk_prime
from sketchspan.lab.reduction import nfold_reduction
from sketchspan.lab.ur import (AlwaysFailProtocol, AlwaysWrongProtocol, SketchProtocol, UrParams,
                               sample_d_ur)

EXIT_OK, EXIT_THRESHOLD, EXIT_USAGE = 0, 1, 2


class UsageError(ValueError):
    pass


# defaults per command; flags override the config file, which overrides these
DEFAULTS: dict[str, dict[str, str]] = {
    "run": {"delta": "0.05"},
    "exp failure": {"n": "256", "delta": "0.05", "trials": "500"},
    "exp scaling": {"n": "256,512,1024,2048", "delta": "1/n"},
    "sim dist": {"n": "64", "delta": "0.05", "trials": "10"},
    "lab encdec": {"n": "256", "delta": "0.05", "trials": "500", "ur_delta": str(2.0 ** -16),
                   "c_size": "2", "c_r": "2", "protocol": "sketch"},
    "lab nfold": {"n": "32", "delta": "0.05", "trials": "200", "ur_delta": str(2.0 ** -8),
                  "c_size": "2", "c_r": "2"},
    "lab embed": {"n": str(8 ** 5), "delta": "0.05", "trials": "200", "ur_delta": str(2.0 ** -6),
                  "c_size": "2", "c_r": "1"},
    "lab dsk": {"n": str(4 ** 5), "trials": "1000", "ur_delta": str(2.0 ** -4),
                "c_size": "2", "c_r": "1", "prime": "false"},
}


@dataclass
class ExperimentConfig:
    name: str
    values: dict[str, str] = field(default_factory=dict)

    def get(self, key: str) -> str:
        if key not in self.values:
            raise UsageError(f"{self.name}: missing setting {key!r}")
        return self.values[key]

    def get_int(self, key: str, minimum: int | None = None) -> int:
        try:
            value = int(self.get(key))
        except ValueError:
            raise UsageError(f"{key} must be an integer, got {self.get(key)!r}") from None
        if minimum is not None and value < minimum:
            raise UsageError(f"{key} must be at least {minimum}, got {value}")
        return value

    def get_float(self, key: str) -> float:
        try:
            return float(self.get(key))
        except ValueError:
            raise UsageError(f"{key} must be a number, got {self.get(key)!r}") from None

    def delta(self, key: str = "delta") -> float:
        d = self.get_float(key)
        if not 0.0 < d < 1.0:
            raise UsageError(f"{key} must lie in (0, 1), got {d}")
        return d

    def flag(self, key: str) -> bool:
        return self.get(key).lower() in ("1", "true", "yes", "on")

    @property
    def seed(self) -> int:
        return self.get_int("seed", 0)

    @property
    def trials(self) -> int:
        return self.get_int("trials", 1)

    def ur_params(self, U: int) -> UrParams:
        return UrParams.create(U, self.delta("ur_delta"), self.get_float("c_size"), self.get_float("c_r"))


def read_config(path: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def trial_seed(seed: int, trial: int) -> int:
    """Independent per-trial seed, a pure function of ``(seed, trial)``."""
    return int(np.random.SeedSequence([seed, trial]).generate_state(1, np.uint64)[0])


def _rate(count: int, total: int) -> float:
    return count / total if total else 0.0


class Table:
    def __init__(self, columns: list[str]):
        self.columns = columns
        self.rows: list[list] = []

    def add(self, *values) -> None:
        if len(values) != len(self.columns):
            raise AssertionError("row does not match the schema")
        self.rows.append([_cell(v) for v in values])

    def write(self, out: str | None) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        w.writerows(self.rows)
        if out is None or out == "-":
            sys.stdout.write(buf.getvalue())
        else:
            Path(out).write_text(buf.getvalue())


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


# -- commands ---------------------------------------------------------------

def cmd_run(cfg: ExperimentConfig) -> tuple[Table, int, str]:
    path = cfg.get("stream")
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read stream file: {exc}") from None
    n, ops = parse_stream_file(text)
    if n < 2:
        raise UsageError("the stream needs at least 2 vertices")
    bank = agm_init(AgmParams.create(n, cfg.delta()), cfg.seed)
    results = apply_stream(bank, ExactGraph(n), ops)
    t = Table(["query_index", "seed", "n", "delta", "valid", "forest_edge_count", "component_count"])
    for i, (forest, report) in enumerate(results):
        t.add(i, cfg.seed, n, cfg.delta(), report.is_valid, len(forest.edges), len(forest.components))
    bad = sum(not r.is_valid for _, r in results)
    return t, EXIT_THRESHOLD if bad else EXIT_OK, f"{len(results)} queries, {bad} invalid"


def cmd_exp_failure(cfg: ExperimentConfig) -> tuple[Table, int, str]:
    n, delta, trials = cfg.get_int("n", 2), cfg.delta(), cfg.trials
    params = AgmParams.create(n, delta)
    t = Table(["trial", "seed", "n", "delta", "valid", "failure_rate"])
    failures = 0
    for trial in range(trials):
        s = trial_seed(cfg.seed, trial)
        ops = random_dynamic_stream(n, np.random.default_rng(s))
        results = apply_stream(agm_init(params, s), ExactGraph(n), ops)
        valid = all(r.is_valid for _, r in results)
        failures += not valid
        t.add(trial, s, n, delta, valid, None)
    rate = _rate(failures, trials)
    t.add("summary", cfg.seed, n, delta, None, rate)
    code = EXIT_THRESHOLD if rate > 2 * delta else EXIT_OK
    return t, code, f"failure rate {rate:.4f} over {trials} streams (threshold {2 * delta:g})"


def _n_list(cfg: ExperimentConfig) -> list[int]:
    try:
        ns = [int(x) for x in cfg.get("n").split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"n must be a comma-separated list of integers, got {cfg.get('n')!r}") from None
    if not ns or min(ns) < 2:
        raise UsageError("n list must be nonempty with every n >= 2")
    return ns


def _delta_for(rule: str, n: int) -> float:
    if rule.replace(" ", "") == "1/n":
        return 1.0 / n
    d = float(rule)
    if not 0.0 < d < 1.0:
        raise UsageError(f"delta must lie in (0, 1) or be '1/n', got {rule!r}")
    return d


def space_ratio(total_bits: int, n: int, delta: float) -> float:
    """``total_bits / (n * log2(n / delta) * log2(n)**2)``."""
    return total_bits / (n * math.log2(n / delta) * math.log2(n) ** 2)


def cmd_exp_scaling(cfg: ExperimentConfig) -> tuple[Table, int, str]:
    t = Table(["n", "delta", "seed", "total_bits", "avg_msg_bits", "max_msg_bits", "ratio"])
    ratios = []
    for n in _n_list(cfg):
        delta = _delta_for(cfg.get("delta"), n)
        params = AgmParams.create(n, delta)
        total = agm_init(params, cfg.seed).total_size_bits
        # message sizes do not depend on the graph; a sparse random matching keeps the run cheap
        rng = np.random.default_rng(trial_seed(cfg.seed, n))
        perm = rng.permutation(n).tolist()
        g = ExactGraph(n, [(perm[2 * j], perm[2 * j + 1]) for j in range(max(1, n // 32))])
        rep = simulate(g, delta, cfg.seed)
        ratio = space_ratio(total, n, delta)
        ratios.append(ratio)
        t.add(n, delta, cfg.seed, total, rep.avg_message_bits, rep.max_message_bits, ratio)
    spread = max(ratios) / min(ratios)
    code = EXIT_THRESHOLD if spread > 4.0 else EXIT_OK
    return t, code, f"ratio spread {spread:.3f} (threshold 4)"


def cmd_sim_dist(cfg: ExperimentConfig) -> tuple[Table, int, str]:
    delta = cfg.delta()
    t = Table(["trial", "seed", "n", "delta", "valid", "edges", "avg_msg_bits", "max_msg_bits"])
    graphs: list[tuple[int, ExactGraph]] = []
    if "graph" in cfg.values:
        try:
            g = read_edge_list(Path(cfg.get("graph")).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read graph file: {exc}") from None
        graphs.append((cfg.seed, g))
    else:
        n = cfg.get_int("n", 2)
        for trial in range(cfg.trials):
            s = trial_seed(cfg.seed, trial)
            rng = np.random.default_rng(s)
            g = ExactGraph(n)
            for op in random_dynamic_stream(n, rng, queries=0):
                if isinstance(op, Insert):
                    g.insert(op.u, op.v)
                else:
                    g.delete(op.u, op.v)
            graphs.append((s, g))
    bad = 0
    for trial, (s, g) in enumerate(graphs):
        rep = simulate(g, delta, s)
        bad += not rep.valid
        t.add(trial, s, g.n, delta, rep.valid, len(g.edges), rep.avg_message_bits, rep.max_message_bits)
    rate = _rate(bad, len(graphs))
    code = EXIT_THRESHOLD if rate > 2 * delta else EXIT_OK
    return t, code, f"{bad} of {len(graphs)} simulations invalid"


PROTOCOLS: dict[str, Callable] = {
    "sketch": lambda U, seed: SketchProtocol(U, seed=seed),
    "fail": lambda U, seed: AlwaysFailProtocol(),
    "wrong": lambda U, seed: AlwaysWrongProtocol(U),
}


def cmd_lab_encdec(cfg: ExperimentConfig) -> tuple[Table, int, str]:
    U = cfg.get_int("n", 4)
    name = cfg.get("protocol")
    if name not in PROTOCOLS:
        raise UsageError(f"protocol must be one of {sorted(PROTOCOLS)}, got {name!r}")
    p = cfg.ur_params(U)
    protocol = PROTOCOLS[name](U, cfg.seed)
    t = Table(["trial", "seed", "n", "delta", "protocol", "i0", "stages", "accepted", "tail", "roundtrip"])
    ok = 0
    accepted = []
    for trial in range(cfg.trials):
        s = trial_seed(cfg.seed, trial)
        S = sample_d_ur(p, s).S
        rec = encode(S, p, protocol, cfg.seed, s)
        good = decode(rec, p, protocol, cfg.seed) == S
        ok += good
        accepted.append(rec.accepted)
        t.add(trial, s, U, p.delta, name, p.size_index(len(rec.t0)), len(rec.bits), rec.accepted,
              len(rec.tail), good)
    code = EXIT_OK if ok == cfg.trials else EXIT_THRESHOLD
    return t, code, f"{ok}/{cfg.trials} round trips, mean |A| {np.mean(accepted):.3f}"


def cmd_lab_nfold(cfg: ExperimentConfig) -> tuple[Table, int, str]:
    n, delta = cfg.get_int("n", 4), cfg.delta()
    p = cfg.ur_params(n)
    t = Table(["trial", "seed", "n", "delta", "valid", "all_correct", "communicated_bits"])
    correct = 0
    implication = True
    for trial in range(cfg.trials):
        s = trial_seed(cfg.seed, trial)
        rng = np.random.default_rng(s)
        res = nfold_reduction([sample_d_ur(p, rng) for _ in range(n)], delta, s)
        correct += res.all_correct
        implication &= res.all_correct or not res.valid
        t.add(trial, s, n, delta, res.valid, res.all_correct, 8 * res.communicated_bytes)
    rate = _rate(correct, cfg.trials)
    code = EXIT_OK if implication and rate >= 1 - 2 * delta else EXIT_THRESHOLD
    return t, code, f"all-correct rate {rate:.4f}; valid-implies-correct {implication}"


def cmd_lab_embed(cfg: ExperimentConfig) -> tuple[Table, int, str]:
    from sketchspan.lab.dsk import fifth_root

    n, delta = cfg.get_int("n", 1), cfg.delta()
    p = cfg.ur_params(fifth_root(n))
    t = Table(["trial", "seed", "n", "delta", "valid", "recovered", "correct"])
    valid_runs = sound = 0
    for trial in range(cfg.trials):
        s = trial_seed(cfg.seed, trial)
        inst = sample_d_ur(p, s)
        emb = embed_ur_in_dsk(inst.S, inst.T, n, p, s)
        rep = simulate(emb.dsk.graph, delta, s)
        x = genie_recover(emb, rep.forest)
        good = x is not None and x in inst.S - inst.T
        valid_runs += rep.valid
        sound += rep.valid and good
        t.add(trial, s, n, delta, rep.valid, x, good)
    code = EXIT_OK if sound == valid_runs else EXIT_THRESHOLD
    return t, code, f"{sound}/{valid_runs} valid runs recovered an element of S\\T"


def cmd_lab_dsk(cfg: ExperimentConfig) -> tuple[Table, int, str]:
    from sketchspan.lab.dsk import fifth_root

    n = cfg.get_int("n", 1)
    p = cfg.ur_params(fifth_root(n))
    prime = cfg.flag("prime")
    t = Table(["trial", "seed", "n", "case", "edges", "violations"])
    total = 0
    for trial in range(cfg.trials):
        s = trial_seed(cfg.seed, trial)
        if prime:
            sample = sample_d_sk_prime(n, p, s)
            problems = dsk_violations(sample.dsk) if sample.dsk is not None else []
            t.add(trial, s, n, sample.case, len(sample.graph.edges), len(problems))
        else:
            d = sample_d_sk(n, p, s)
            problems = dsk_violations(d)
            t.add(trial, s, n, 1, len(d.graph.edges), len(problems))
        total += len(problems)
    return t, EXIT_THRESHOLD if total else EXIT_OK, f"{total} structural violations"


COMMANDS = {
    "run": cmd_run,
    "exp failure": cmd_exp_failure,
    "exp scaling": cmd_exp_scaling,
    "sim dist": cmd_sim_dist,
    "lab encdec": cmd_lab_encdec,
    "lab nfold": cmd_lab_nfold,
    "lab embed": cmd_lab_embed,
    "lab dsk": cmd_lab_dsk,
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", help="vertex count, universe size, or a comma list for 'exp scaling'")
    p.add_argument("--delta", help="failure probability (scaling also accepts '1/n')")
    p.add_argument("--trials", help="number of trials")
    p.add_argument("--seed", help="master seed (default: $SKETCHSPAN_SEED or 0)")
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.add_argument("--config", help="flat 'key = value' file; flags take precedence")
    p.add_argument("--c-size", dest="c_size", help="lab: the size constant in alpha")
    p.add_argument("--c-r", dest="c_r", help="lab: the constant in the schedule length")
    p.add_argument("--ur-delta", dest="ur_delta", help="lab: delta of the subset-relation instances")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sketchspan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a stream file through the sketch")
    run.add_argument("stream", help="stream file with an 'n <count>' header")
    _common(run)

    exp = sub.add_parser("exp", help="statistical experiments").add_subparsers(dest="which", required=True)
    _common(exp.add_parser("failure", help="failure rate over random dynamic streams"))
    _common(exp.add_parser("scaling", help="sketch size against n"))

    sim = sub.add_parser("sim", help="distributed simulation").add_subparsers(dest="which", required=True)
    dist = sim.add_parser("dist", help="one-round vertex-to-referee protocol")
    _common(dist)
    dist.add_argument("--graph", help="edge-list file ('n <count>' then 'u v' lines)")

    lab = sub.add_parser("lab", help="lower-bound lab").add_subparsers(dest="which", required=True)
    enc = lab.add_parser("encdec", help="encode/decode round trips")
    _common(enc)
    enc.add_argument("--protocol", choices=sorted(PROTOCOLS))
    _common(lab.add_parser("nfold", help="n-fold reduction through one sketch"))
    _common(lab.add_parser("embed", help="instance embedding with the genie referee"))
    dsk = lab.add_parser("dsk", help="hard graph family sampler")
    _common(dsk)
    dsk.add_argument("--prime", action="store_const", const="true", help="sample the mixture family")
    return parser


def resolve(args: argparse.Namespace, env: dict[str, str]) -> ExperimentConfig:
    name = args.command if args.command == "run" else f"{args.command} {args.which}"
    values = dict(DEFAULTS[name])
    values["seed"] = env.get("SKETCHSPAN_SEED", "0")
    if args.config:
        try:
            values.update(read_config(args.config))
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
    for key, value in vars(args).items():
        if key not in ("command", "which", "config") and value is not None:
            values[key] = str(value)
    return ExperimentConfig(name, values)


def main(argv: list[str] | None = None, env: dict[str, str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg = resolve(args, dict(os.environ) if env is None else env)
        table, code, summary = COMMANDS[cfg.name](cfg)
        table.write(cfg.values.get("out"))
    except (UsageError, StreamParseError, MultiplicityError, ValueError) as exc:
        print(f"sketchspan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"{cfg.name}: {summary}", file=sys.stderr)
    return code


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
