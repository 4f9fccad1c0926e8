"""Command-line entry point: ``metabranch simulate | verify | report``.

Exit codes: 0 success / all checks pass, 1 a verification failed, 2 usage or
configuration error, 3 input/output failure.
"""
from __future__ import annotations

import argparse
import csv
import glob
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from .config import EVENT_MODES, MODES, ConfigError, RunConfig, load_config, parse_config
from .engine import simplify, simulate
from .model import FullConfiguration
from .rngstats import Purpose, StreamKey
from .suites import SUITE_NAMES, SUITES, run_suite, verdict_bytes

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _suite_help() -> str:
    lines = ["suites:"]
    for name in SUITE_NAMES:
        lines.append(f"  {name:<10} {SUITES[name][1]}")
    lines.append(f"  {'all':<10} every suite above")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    ap = argparse.ArgumentParser(prog="metabranch", description=__doc__, formatter_class=fmt,
                                 epilog=_suite_help())
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, with_mode=True):
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit); [run] seed")
        p.add_argument("--replicas", type=int, help="number of replicas; [run] replicas")
        p.add_argument("--threads", type=int, help="worker threads, 0 = all cores; [run] threads")
        p.add_argument("--out", help="output directory; [run] out")
        if with_mode:
            p.add_argument("--t", type=float, dest="horizon", help="time horizon; [run] horizon")
            p.add_argument("--mode", choices=MODES, help="labeled or simplified state; [run] mode")
            p.add_argument("--events", choices=EVENT_MODES,
                           help="which replicas' event logs to write; [run] events")

    ps = sub.add_parser("simulate", help="simulate replicas and write events and snapshots", formatter_class=fmt)
    common(ps)
    pv = sub.add_parser("verify", help="run a verification suite", formatter_class=fmt, epilog=_suite_help())
    pv.add_argument("suite", choices=SUITE_NAMES + ("all",), metavar="SUITE",
                    help="one of: " + ", ".join(SUITE_NAMES + ("all",)))
    common(pv, with_mode=False)
    pr = sub.add_parser("report", help="summarise verdict files in a directory")
    pr.add_argument("directory")
    return ap


def _overrides(args) -> dict:
    out = {}
    for flag, key in (("seed", "run.seed"), ("replicas", "run.replicas"), ("threads", "run.threads"),
                      ("out", "run.out"), ("horizon", "run.horizon"), ("mode", "run.mode"),
                      ("events", "run.events")):
        v = getattr(args, flag, None)
        if v is not None:
            out[key] = repr(v) if isinstance(v, float) else str(v)
    return out


def _load(args) -> RunConfig:
    ov = _overrides(args)
    if args.config:
        return load_config(args.config, ov)
    return parse_config("", None, ov)


def _threads(cfg: RunConfig) -> int:
    return cfg.threads or (os.cpu_count() or 1)


def _header_lines(cfg: RunConfig) -> list[str]:
    return [f"# {k}={v}" for k, v in cfg.effective().items()]


def cmd_simulate(args) -> int:
    if args.config is None:
        raise UsageError("simulate needs --config")
    cfg = _load(args)
    labeled = cfg.mode == "labeled"
    base = StreamKey(cfg.seed, (Purpose.SIMULATE,))

    def one(i):
        log_it = cfg.events == "all" or (cfg.events == "first" and i == 0)
        evlog, final = simulate(cfg.initial, cfg.params, cfg.horizon, base.child(i), labeled=labeled, log=log_it)
        state = simplify(final) if isinstance(final, FullConfiguration) else final
        return i, (evlog if log_it else None), state

    with ThreadPoolExecutor(max_workers=_threads(cfg)) as ex:
        results = list(ex.map(one, range(cfg.replicas)))

    os.makedirs(cfg.out, exist_ok=True)
    header = {"seed": cfg.seed, "params_digest": cfg.params.digest(), "config": cfg.effective()}
    with open(os.path.join(cfg.out, "events.jsonl"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for i, evlog, _ in results:
            if evlog is None:
                continue
            for ev in evlog.events:
                row = ev.to_json()
                row["replica"] = i
                fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
    if labeled:
        with open(os.path.join(cfg.out, "genealogy.jsonl"), "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
            for i, evlog, _ in results:
                if evlog is None or evlog.records is None:
                    continue
                for rec in evlog.records:
                    row = rec.to_dict()
                    row["replica"] = i
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
    with open(os.path.join(cfg.out, "snapshots.csv"), "w", encoding="utf-8", newline="") as fh:
        for line in _header_lines(cfg):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replica", "t", "n_m", "n_s", "total"])
        for i, _, st in results:
            w.writerow([i, repr(float(cfg.horizon)), st.n_m, st.n_s, st.total])
    print(f"wrote {cfg.replicas} replicas to {cfg.out}")
    return EXIT_OK


def _summary_text(v: dict) -> str:
    buf = io.StringIO()
    buf.write(f"suite {v['suite']}: {'PASS' if v['pass'] else 'FAIL'}\n")
    buf.write(f"validates: {v['validates']}\n")
    buf.write(f"seed: {v['seed']}\n")
    for c in v["checks"]:
        keys = [k for k in c if k not in ("name", "pass") and not isinstance(c[k], (list, dict))]
        detail = ", ".join(f"{k}={c[k]!r}" for k in keys[:6])
        buf.write(f"  [{'PASS' if c['pass'] else 'FAIL'}] {c['name']}: {detail}\n")
    return buf.getvalue()


def cmd_verify(args) -> int:
    cfg = _load(args)
    names = SUITE_NAMES if args.suite == "all" else (args.suite,)
    n = cfg.replicas if (args.replicas is not None or (args.config and "run.replicas" in cfg.echo)) else None
    os.makedirs(cfg.out, exist_ok=True)
    ok = True
    for name in names:
        v = run_suite(name, cfg.seed, n=n, threads=_threads(cfg))
        ok &= v["pass"]
        with open(os.path.join(cfg.out, f"verdict_{name}.json"), "wb") as fh:
            fh.write(verdict_bytes(v))
        text = _summary_text(v)
        with open(os.path.join(cfg.out, f"summary_{name}.txt"), "w", encoding="utf-8") as fh:
            fh.write(text)
        sys.stdout.write(text)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_report(args) -> int:
    d = args.directory
    if not os.path.isdir(d):
        raise UsageError(f"no such directory: {d}")
    files = sorted(glob.glob(os.path.join(d, "verdict_*.json")))
    if not files:
        raise UsageError(f"no verdict files in {d}")
    rows = []
    for path in files:
        with open(path, encoding="utf-8") as fh:
            try:
                v = json.load(fh)
            except json.JSONDecodeError as exc:
                raise UsageError(f"{path}: not a verdict file ({exc})") from None
        if not isinstance(v, dict) or not {"suite", "pass", "validates"} <= set(v):
            raise UsageError(f"{path}: not a verdict file")
        rows.append((v["suite"], "PASS" if v["pass"] else "FAIL", v["validates"]))
    width = max(len(r[0]) for r in rows)
    lines = [f"{'suite':<{width}}  result  validates"]
    lines += [f"{s:<{width}}  {r:<6}  {what}" for s, r, what in rows]
    text = "\n".join(lines) + "\n"
    with open(os.path.join(d, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    with open(os.path.join(d, "report.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["suite", "result", "validates"])
        w.writerows(rows)
    sys.stdout.write(text)
    return EXIT_OK if all(r[1] == "PASS" for r in rows) else EXIT_FAIL


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handler = {"simulate": cmd_simulate, "verify": cmd_verify, "report": cmd_report}[args.command]
    try:
        return handler(args)
    except (UsageError, ConfigError) as exc:
        print(f"metabranch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"metabranch: io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
