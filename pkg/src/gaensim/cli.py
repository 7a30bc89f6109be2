"""Command-line entry point: ``python -m gaensim <command> ...``.

Exit status is 0 on success, 2 for configuration or input errors and 3 when
a run or audit finds an invariant violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import adversary, audit, crypto, scenario, server
from .errors import ConfigError, GaenError, InsufficientDataError, ParseError
from .trace import TraceLog

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3

REPORT_DIR_ENV = "GAENSIM_REPORT_DIR"


def _scenario_path(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    return scenario.bundled_scenario(arg)


def cmd_simulate(args) -> int:
    result = scenario.execute(scenario.load_scenario(_scenario_path(args.scenario)))
    report = result.report
    out = scenario.emit_report(report, args.format)
    sys.stdout.write(out.decode())
    report_dir = args.report_dir or os.environ.get(REPORT_DIR_ENV)
    if report_dir:
        d = Path(report_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"report.{'json' if args.format == 'json' else 'txt'}").write_bytes(out)
        result.trace.write(d / "trace.csv")
    if args.trace_out:
        result.trace.write(args.trace_out)
    return EXIT_INVARIANT if report.invariant_violations else EXIT_OK


def cmd_attack(args) -> int:
    if args.model == "orgcrime2":
        if not args.scenario or not args.target:
            raise ConfigError("attack", "orgcrime2 needs --scenario and --target")
        result = scenario.execute(scenario.load_scenario(_scenario_path(args.scenario)))
        try:
            dev = result.world.device(args.target)
        except KeyError:
            raise ConfigError("attack.target", f"undefined device {args.target!r}") from None
        try:
            outcome = adversary.org_crime_device_read(dev, args.compromised)
        except adversary.AuthorizationError as exc:
            outcome = adversary.AttackOutcome("orgcrime2", adversary.InfoLeaked.NONE,
                                              {"error": str(exc)})
    else:
        if args.trace:
            try:
                trace = TraceLog.read(args.trace)
            except OSError as exc:
                raise ConfigError("trace", str(exc)) from None
        elif args.scenario:
            trace = scenario.execute(scenario.load_scenario(_scenario_path(args.scenario))).trace
        else:
            raise ConfigError("attack", "--trace or --scenario is required")
        try:
            outcome = adversary.run_attack(
                args.model, trace, sniffer=args.sniffer, seed=args.seed,
                window_minutes=args.window_minutes,
                candidate_profiles=args.candidate_profiles,
                tek_access=not args.no_tek_access,
            )
        except KeyError as exc:
            raise ConfigError("attack.sniffer", str(exc.args[0])) from None
    print(json.dumps(outcome.to_dict(), indent=2))
    return EXIT_OK


def cmd_audit(args) -> int:
    if args.input == "-":
        lines = sys.stdin.read().splitlines()
    else:
        try:
            lines = Path(args.input).read_text().splitlines()
        except OSError as exc:
            raise ConfigError("input", str(exc)) from None
    rep = audit.audit_report(lines, group_by_source=not args.no_group)
    sys.stdout.write(rep.to_json() + "\n" if args.report == "json" else rep.to_text())
    return EXIT_OK if rep.ok else EXIT_INVARIANT


# -- server ----------------------------------------------------------------


def _load_server(d: Path) -> server.KeyServer:
    state_file = d / "state.json"
    if not state_file.exists():
        raise ConfigError("server.dir", f"{d} is not initialised; run 'server init' first")
    key = server.load_signing_key(d / "signing.key")
    return server.KeyServer.from_state(json.loads(state_file.read_text()), key,
                                       server.load_batches(d) if any(d.glob("batch_*")) else [])


def _store_server(srv: server.KeyServer, d: Path) -> None:
    (d / "state.json").write_text(json.dumps(srv.state_dict()))
    srv.save(d)


def cmd_server(args) -> int:
    d = Path(args.dir)
    if args.action == "init":
        d.mkdir(parents=True, exist_ok=True)
        key = server.signing_key_from_seed(args.seed)
        server.write_signing_key(key, d / "signing.key")
        (d / "public.key").write_bytes(server.public_key_bytes(key.public_key()))
        _store_server(server.KeyServer(args.seed, region=args.region, signing_key=key), d)
        print(f"initialised {d}")
        return EXIT_OK
    srv = _load_server(d)
    if args.action == "issue":
        pin = srv.issue_pin(args.case_id, args.now)
        print(pin.digits)
    elif args.action == "submit":
        keys = []
        for lineno, line in enumerate(Path(args.keys).read_text().splitlines(), 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                keys.append(server.DiagnosisKey(bytes.fromhex(parts[0]), int(parts[1]),
                                                int(parts[2]) if len(parts) > 2 else 144))
            except (ValueError, IndexError):
                raise ParseError(f"{args.keys}:{lineno}: expected 'hex start [period]'") from None
        res = srv.submit_keys(args.pin, keys, args.now)
        print("accepted" if res else f"rejected: {res.reason}")
        _store_server(srv, d)
        return EXIT_OK if res else EXIT_INVARIANT
    elif args.action == "publish":
        srv.publish_batch()
        print(f"published batch {len(srv.batches)}")
    elif args.action == "download":
        pub = srv.public_key
        if args.public_key:
            from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

            pub = Ed25519PublicKey.from_public_bytes(Path(args.public_key).read_bytes())
        for data, sig in srv.download_batches(args.since):
            batch = server.verify_and_parse_export(data, sig, pub)
            for k in batch.keys:
                print(f"{batch.export.batch_num} {k.key_bytes.hex()} "
                      f"{k.rolling_start_interval} {k.rolling_period}")
    _store_server(srv, d)
    return EXIT_OK


def cmd_vectors(args) -> int:
    tek = crypto.TemporaryExposureKey(bytes(16), 0)
    meta = crypto.Metadata()
    rpi0 = crypto.derive_rpi(tek, 0)
    rows = [
        ("tek", tek.key_bytes),
        ("rpik", crypto.derive_rpik(tek)),
        ("aemk", crypto.derive_aemk(tek)),
        ("rpi0", rpi0),
        ("rpi143", crypto.derive_rpi(tek, 143)),
        ("metadata", meta.to_bytes()),
        ("aem0", crypto.encrypt_metadata(tek, rpi0, meta)),
    ]
    for name, value in rows:
        print(f"{name:<9}{value.hex()}")
    return EXIT_OK


def cmd_scenarios(args) -> int:
    for p in sorted(scenario.BUNDLED_DIR.glob("*.ini")):
        print(p.stem)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gaensim", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario and print its report")
    p.add_argument("scenario", help="scenario file or bundled scenario name")
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.add_argument("--report-dir", help=f"also write report and trace here (env {REPORT_DIR_ENV})")
    p.add_argument("--trace-out", help="write the event trace CSV to this path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("attack", help="run a threat model over a trace")
    p.add_argument("--model", required=True, choices=adversary.THREAT_MODELS)
    p.add_argument("--trace", help="trace CSV from 'simulate --trace-out'")
    p.add_argument("--scenario", help="run this scenario instead of reading a trace")
    p.add_argument("--sniffer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window-minutes", type=float, default=15.0)
    p.add_argument("--candidate-profiles", type=int, default=5)
    p.add_argument("--no-tek-access", action="store_true")
    p.add_argument("--target", help="device to read (orgcrime2)")
    p.add_argument("--compromised", action="store_true", help="attacker owns the device (orgcrime2)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("audit", help="check address/payload pairing in a capture log")
    p.add_argument("--input", required=True, help="capture file, or - for stdin")
    p.add_argument("--report", choices=("json", "text"), default="text")
    p.add_argument("--no-group", action="store_true", help="ignore per-line source labels")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("server", help="file-backed key server")
    p.add_argument("action", choices=("init", "issue", "submit", "publish", "download"))
    p.add_argument("--dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--region", default="US-VA")
    p.add_argument("--case-id", default="case")
    p.add_argument("--pin")
    p.add_argument("--keys", help="file of 'hex rolling_start [period]' lines")
    p.add_argument("--now", type=float, default=0.0)
    p.add_argument("--since", type=int, default=0)
    p.add_argument("--public-key", help="raw 32-byte Ed25519 public key for verification")
    p.set_defaults(func=cmd_server)

    p = sub.add_parser("vectors", help="print derivation vectors for the all-zero key")
    p.set_defaults(func=cmd_vectors)

    p = sub.add_parser("scenarios", help="list bundled scenarios")
    p.set_defaults(func=cmd_scenarios)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, InsufficientDataError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GaenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
