"""Operator CLI: validate/compile/simulate scenarios, serve the API, seed users.

Exit codes: 0 success, 1 validation or verification failure, 2 execution
error (unreadable input, I/O problems, residual resources). The RANGE_DB
environment variable overrides --db everywhere.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .access import bootstrap_admin
from .compiler import InvalidInput, compile_bundle, read_bundle, write_bundle
from .deploy import ResidualResources, deploy, plan_deployment, teardown, verify
from .model import (
    SpecFormatError,
    derive_manifest,
    spec_from_dict,
    validate_scenario,
)
from .simexec import SimulatedExecutor
from .store import Store

DEFAULT_DB = "wifirange.db"
DEFAULT_BIND = "127.0.0.1:8000"

# Test hook: comma-separated process ids/names the simulated executor must
# refuse to release (exercises the residual-reporting path end to end).
UNKILLABLE_ENV = "RANGE_SIM_UNKILLABLE"


class SystemExit2(Exception):
    """Execution error; rendered to stderr with exit code 2."""


def _load_spec(path: str):
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SystemExit2(f"cannot read {path}: {exc}")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SystemExit2(f"{path} is not valid JSON: {exc}")
    try:
        return spec_from_dict(doc)
    except SpecFormatError as exc:
        raise SystemExit2(f"{path} is not a scenario spec: {exc}")


def _print_findings(report) -> None:
    for finding in report.findings:
        print(f"{finding.severity.value} {finding.code} {finding.location} {finding.message}")


def cmd_validate(args) -> int:
    spec = _load_spec(args.spec)
    report = validate_scenario(spec)
    _print_findings(report)
    return 0 if report.ok else 1


def cmd_compile(args) -> int:
    spec = _load_spec(args.spec)
    report = validate_scenario(spec)
    if not report.ok:
        _print_findings(report)
        return 1
    manifest = derive_manifest(spec)
    bundle = compile_bundle(spec, manifest)
    try:
        write_bundle(bundle, args.out)
    except OSError as exc:
        raise SystemExit2(f"cannot write bundle to {args.out}: {exc}")
    print(bundle.bundle_hash)
    return 0


def cmd_simulate(args) -> int:
    spec = _load_spec(args.spec)
    report = validate_scenario(spec)
    if not report.ok:
        _print_findings(report)
        return 1
    manifest = derive_manifest(spec)
    if args.bundle is not None:
        # A previously compiled (possibly hand-edited) bundle: the simulated
        # daemons act on the artifacts, so config mutations surface in the
        # verification report.
        try:
            bundle = read_bundle(args.bundle)
        except (OSError, InvalidInput, ValueError, KeyError) as exc:
            raise SystemExit2(f"cannot load bundle from {args.bundle}: {exc}")
        if bundle.scenario_id != spec.scenario_id:
            raise SystemExit2(
                f"bundle belongs to scenario {bundle.scenario_id!r}, spec is {spec.scenario_id!r}"
            )
    else:
        bundle = compile_bundle(spec, manifest)
    plan = plan_deployment(bundle)
    unkillable = tuple(x for x in os.environ.get(UNKILLABLE_ENV, "").split(",") if x)
    executor = SimulatedExecutor(bundle, unkillable=unkillable)

    result = deploy(executor, plan)
    if not result.success:
        raise SystemExit2(
            f"deployment failed at step {result.failed_step} ({plan.steps[result.failed_step].label()}): {result.cause}"
        )

    verification = verify(executor, manifest, spec)
    for check in verification.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"{status} {check.kind.value} {check.subject[0]}->{check.subject[1]} {check.detail}")

    try:
        teardown(executor, result.ledger)
        clean = True
    except ResidualResources as exc:
        clean = False
        for item in exc.residual:
            print(f"RESIDUAL {item.kind} {item.name} {item.reason}", file=sys.stderr)

    print("PASS" if verification.overall else "FAIL")
    if not clean:
        return 2
    return 0 if verification.overall else 1


def cmd_serve(args) -> int:
    import uvicorn

    from .api import ApiConfig, create_app

    host, _, port = args.bind.rpartition(":")
    if not host or not port.isdigit():
        raise SystemExit2(f"--bind must be host:port, got {args.bind!r}")
    static_dir = args.static
    if static_dir is None:
        candidate = Path("frontend/dist")
        static_dir = str(candidate) if candidate.is_dir() else None
    config = ApiConfig(db_path=args.db, executor_mode=args.executor, static_dir=static_dir)
    app = create_app(config)
    uvicorn.run(app, host=host, port=int(port), log_level="info")
    return 0


def cmd_seed_admin(args) -> int:
    store = Store(args.db)
    try:
        created = bootstrap_admin(store)
        if created is None:
            raise SystemExit2("user table is not empty; refusing to seed another admin")
        username, password = created
        print(f"created {username!r} with one-time password: {password}")
        return 0
    finally:
        store.close()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wifirange",
        description="Wi-Fi cyber-range control plane: compile, simulate and serve 802.11 training scenarios.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    validate = sub.add_parser("validate", help="check a scenario spec file; prints findings")
    validate.add_argument("spec", help="scenario spec JSON file")
    validate.set_defaults(func=cmd_validate)

    compile_ = sub.add_parser("compile", help="compile a scenario to an artifact directory")
    compile_.add_argument("spec", help="scenario spec JSON file")
    compile_.add_argument("--out", required=True, help="output directory for the bundle")
    compile_.set_defaults(func=cmd_compile)

    simulate = sub.add_parser("simulate", help="deploy+verify+teardown on the simulated executor")
    simulate.add_argument("spec", help="scenario spec JSON file")
    simulate.add_argument(
        "--bundle", default=None, help="use a compiled bundle directory instead of recompiling"
    )
    simulate.set_defaults(func=cmd_simulate)

    serve = sub.add_parser("serve", help="run the HTTP control plane")
    serve.add_argument("--bind", default=DEFAULT_BIND, help=f"listen address (default {DEFAULT_BIND})")
    serve.add_argument("--db", default=DEFAULT_DB, help=f"database path (default {DEFAULT_DB})")
    serve.add_argument(
        "--executor", choices=("simulated", "real"), default="simulated", help="deployment backend"
    )
    serve.add_argument("--static", default=None, help="directory with the web console build")
    serve.set_defaults(func=cmd_serve)

    seed = sub.add_parser("seed-admin", help="create the initial admin account")
    seed.add_argument("--db", default=DEFAULT_DB, help=f"database path (default {DEFAULT_DB})")
    seed.set_defaults(func=cmd_seed_admin)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if hasattr(args, "db") and os.environ.get("RANGE_DB"):
        args.db = os.environ["RANGE_DB"]
    try:
        return args.func(args)
    except SystemExit2 as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
