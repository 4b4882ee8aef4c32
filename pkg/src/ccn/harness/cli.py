"""Command-line front end for the scenario harness.

Examples::

    ccn run-flow --participants 8 --projects 10
    ccn revoke-flow --seed 3
    ccn adversary link --trials 50
    ccn adversary portal
    ccn adversary mediator
    ccn adversary auth
    ccn nonrep
    ccn rtbf
    ccn bench wallet
    ccn bench ledger --csv ledger.csv
    ccn bench e2e --repeats 20
    ccn ledger verify --journal path/to/ledger.journal
    ccn ledger inspect --journal path/to/ledger.journal --height 2
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from typing import Any, Dict, List, Optional

from ..canonical import canonical_str
from ..ledger import ConsentLedger
from .adversary import (
    adversary_link_projects,
    adversary_mediator,
    adversary_portal,
    auth_hygiene,
)
from .bench import bench_e2e, bench_e2e_comparison, bench_ledger, bench_wallet
from .config import ScenarioConfig
from .flows import run_consent_flow, run_revocation_flow
from .nonrep import non_repudiation_suite
from .rtbf import rtbf_suite
from .world import World, containment_violations


def _emit(args: argparse.Namespace, payload: Dict[str, Any], text: str) -> None:
    print(canonical_str(payload) if args.json else text)


def _scenario(args: argparse.Namespace) -> ScenarioConfig:
    base = (
        ScenarioConfig.from_toml(args.config) if args.config else ScenarioConfig()
    )
    return base.with_overrides(
        seed=args.seed,
        n_participants=getattr(args, "participants", None),
        n_orgs=getattr(args, "orgs", None),
        n_projects=getattr(args, "projects", None),
        preseed_dids=getattr(args, "preseed", None),
        herd_threshold=getattr(args, "herd_threshold", None),
    )


def _flow_lines(report) -> List[str]:
    lines = [
        f"pairs accepted: {report.accepted}/{report.total}",
        f"elapsed: {report.elapsed_s:.2f}s",
        f"ledger: {report.ledger_counts}",
        f"chain ok: {report.chain_ok}",
    ]
    return lines


def cmd_run_flow(args: argparse.Namespace) -> int:
    config = _scenario(args)
    world = World.build(config, base_dir=args.store)
    try:
        report = run_consent_flow(world)
        violations = containment_violations(world)
        payload = report.to_dict()
        payload["containment_violations"] = violations
        lines = _flow_lines(report) + [f"containment violations: {len(violations)}"]
        _emit(args, payload, "\n".join(lines))
        return 0 if report.accepted == report.total and not violations else 2
    finally:
        world.close()


def cmd_revoke_flow(args: argparse.Namespace) -> int:
    config = _scenario(args)
    world = World.build(config, base_dir=args.store)
    try:
        consent = run_consent_flow(world)
        revocation = run_revocation_flow(world, consent)
        payload = {"consent": consent.to_dict(), "revocation": revocation.to_dict()}
        lines = _flow_lines(consent) + [
            f"revoked: {revocation.revoked} (stale packages rejected: {revocation.stale_rejected})",
            f"updated: {revocation.updated} (re-verified: {revocation.update_verified})",
            f"foreign revocations denied: {revocation.foreign_denials}",
        ]
        _emit(args, payload, "\n".join(lines))
        ok = (
            consent.accepted == consent.total
            and revocation.stale_rejected == revocation.revoked
            and revocation.update_verified == revocation.updated
        )
        return 0 if ok else 2
    finally:
        world.close()


def cmd_adversary(args: argparse.Namespace) -> int:
    if args.probe == "link":
        result = adversary_link_projects(
            trials=args.trials, n_participants=args.participants or 32,
            seed=args.seed or 0, reuse_identities=args.reuse,
        )
        ok = result.accuracy == 1.0 if args.reuse else (
            result.within_ci and not result.identifier_intersection
        )
        text = (
            f"probe: {result.probe}\n"
            f"accuracy: {result.accuracy:.4f} over {result.guesses} guesses "
            f"(chance {result.baseline:.4f}, band [{result.ci_low:.4f}, {result.ci_high:.4f}])\n"
            f"identifier intersection: {result.identifier_intersection or 'empty'}"
        )
        _emit(args, result.to_dict(), text)
        return 0 if ok else 2
    if args.probe == "portal":
        result = adversary_portal(
            trials=args.trials, n_participants=args.participants or 10,
            seed=args.seed or 0,
        )
        text = (
            f"probe: {result.probe}\n"
            f"accuracy: {result.accuracy:.4f} over {result.guesses} guesses "
            f"(chance {result.baseline:.4f}, band [{result.ci_low:.4f}, {result.ci_high:.4f}])\n"
            f"publish schema closed: {result.extras['schema_closed']}\n"
            f"portal+mediator collusion accuracy: {result.extras['timing_collusion_accuracy']}"
        )
        _emit(args, result.to_dict(), text)
        return 0 if result.within_ci and result.extras["schema_closed"] else 2
    if args.probe == "auth":
        result = auth_hygiene(seed=args.seed or 0)
        text = (
            f"valid tokens accepted: {result.valid_accepted}/{result.valid_total}\n"
            f"replayed tokens accepted: {result.replayed_accepted}/{result.replayed_total}\n"
            f"expired tokens accepted: {result.expired_accepted}/{result.expired_total}\n"
            "rejections: "
            + ", ".join(f"{k}={v}" for k, v in sorted(result.rejection_codes.items()))
        )
        _emit(args, result.to_dict(), text)
        return 0 if result.clean else 2
    result = adversary_mediator(seed=args.seed or 0)
    text = (
        f"linkable inbox pairs (pseudonymous transport): {result.pseudonymous_linkable_pairs}\n"
        f"linkable inbox pairs (direct transport): {result.direct_linkable_pairs}\n"
        f"participant public DIDs in routing log: {result.public_did_leaks}"
    )
    _emit(args, result.to_dict(), text)
    ok = (
        result.pseudonymous_linkable_pairs == 0
        and result.direct_linkable_pairs > 0
        and result.public_did_leaks == 0
    )
    return 0 if ok else 2


def cmd_nonrep(args: argparse.Namespace) -> int:
    report = non_repudiation_suite(seed=args.seed or 0, tampers=args.tampers)
    reasons = ", ".join(f"{k}={v}" for k, v in sorted(report.reasons.items()))
    text = (
        f"tampered packages accepted: {report.tampered_accepted}/{report.tampered_total}\n"
        f"rejections: {reasons}\n"
        f"org denial refuted: {report.org_denial_refuted}\n"
        f"participant denial refuted: {report.participant_denial_refuted}"
    )
    _emit(args, report.to_dict(), text)
    ok = (
        report.tampered_accepted == 0
        and report.org_denial_refuted
        and report.participant_denial_refuted
    )
    return 0 if ok else 2


def cmd_rtbf(args: argparse.Namespace) -> int:
    report = rtbf_suite(seed=args.seed or 0)
    text = (
        f"forgotten pairs: {report.forgotten_pairs} (revoked on ledger: {report.revoked_on_ledger})\n"
        f"byte-scan co-occurrences: {report.co_occurrences} across {len(report.stores)} stores\n"
        f"control pair still visible: {report.control_pair_present}\n"
        f"orphaned ledger record state: {report.orphan_state}\n"
        f"replay after erasure clean: {report.permanence_ok}"
    )
    _emit(args, report.to_dict(), text)
    return 0 if report.clean else 2


def cmd_bench(args: argparse.Namespace) -> int:
    if args.target == "wallet":
        report = bench_wallet(seed=args.seed or 0)
    elif args.target == "ledger":
        report = bench_ledger(seed=args.seed or 0)
    else:
        if args.compare:
            pair = bench_e2e_comparison(seed=args.seed or 0, repeats=args.repeats)
            default, preseeded = pair["default"], pair["preseeded"]
            if args.json:
                print(
                    canonical_str(
                        {
                            "default": default.to_dict(),
                            "preseeded": preseeded.to_dict(),
                            "did_create_median_ms": pair["did_create_median_ms"],
                            "delta_ms": pair["delta_ms"],
                        }
                    )
                )
            else:
                print(default.to_text())
                print()
                print(preseeded.to_text())
                print()
                print(f"lifecycle delta: {pair['delta_ms']:.3f} ms "
                      f"(one DID creation: {pair['did_create_median_ms']:.3f} ms)")
            return 0
        report = bench_e2e(
            seed=args.seed or 0, repeats=args.repeats, preseed=args.preseed or 0
        )
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(report.to_csv())
    _emit(args, report.to_dict(), report.to_text())
    return 0


def cmd_ledger(args: argparse.Namespace) -> int:
    replica = ConsentLedger.replay(args.journal)
    verdict = replica.verify_chain()
    if args.action == "verify":
        payload = {
            "ok": verdict["ok"],
            "height": verdict["height"],
            "error": verdict.get("error"),
            "world_state_digest": replica.world_state_digest(),
        }
        text = (
            f"chain ok: {verdict['ok']} (height {verdict['height']})\n"
            f"world state digest: {payload['world_state_digest']}"
        )
        _emit(args, payload, text)
        return 0 if verdict["ok"] else 2
    if args.height is not None:
        block = dataclasses.asdict(replica.get_block(args.height))
        _emit(args, block, canonical_str(block))
        return 0
    sequences: Dict[str, int] = {}
    for history in replica.proof_histories().values():
        key = " ".join(history)
        sequences[key] = sequences.get(key, 0) + 1
    summary = {
        "height": replica.height(),
        "keys": len(replica.list_state()),
        "chain_ok": verdict["ok"],
        "operation_sequences": dict(sorted(sequences.items())),
    }
    text = (
        f"height: {summary['height']}  keys: {summary['keys']}  chain ok: {verdict['ok']}\n"
        + "\n".join(
            f"  {seq or '(none)'}: {count}"
            for seq, count in summary["operation_sequences"].items()
        )
    )
    _emit(args, summary, text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccn", description="dynamic-consent stack scenario harness"
    )
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_opts(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="scenario TOML file")
        p.add_argument("--seed", type=int)
        p.add_argument("--participants", type=int)
        p.add_argument("--orgs", type=int)
        p.add_argument("--projects", type=int)
        p.add_argument("--preseed", type=int, help="pre-generated DIDs per wallet")
        p.add_argument(
            "--herd-threshold", type=int, dest="herd_threshold",
            help="minimum catalog size wallets will join from",
        )
        p.add_argument("--store", help="persist stores under this directory")

    p = sub.add_parser("run-flow", help="full consent flow for every pair")
    scenario_opts(p)
    p.set_defaults(fn=cmd_run_flow)

    p = sub.add_parser("revoke-flow", help="consent flow plus revocations/updates")
    scenario_opts(p)
    p.set_defaults(fn=cmd_revoke_flow)

    p = sub.add_parser("adversary", help="privacy and auth probes")
    p.add_argument("probe", choices=["link", "portal", "mediator", "auth"])
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--participants", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument(
        "--reuse", action="store_true",
        help="negative control: reuse one DID across projects",
    )
    p.set_defaults(fn=cmd_adversary)

    p = sub.add_parser("nonrep", help="tamper fuzzing and denial refutation")
    p.add_argument("--seed", type=int)
    p.add_argument("--tampers", type=int, default=100)
    p.set_defaults(fn=cmd_nonrep)

    p = sub.add_parser("rtbf", help="right-to-be-forgotten erasure scan")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_rtbf)

    p = sub.add_parser("bench", help="benchmarks")
    p.add_argument("target", choices=["wallet", "ledger", "e2e"])
    p.add_argument("--seed", type=int)
    p.add_argument("--repeats", type=int, default=20, help="e2e lifecycles")
    p.add_argument("--preseed", type=int, help="e2e: DID pool size")
    p.add_argument(
        "--compare", action="store_true", help="e2e: default vs preseeded wallets"
    )
    p.add_argument("--csv", help="also write rows to this CSV file")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("ledger", help="offline journal tools")
    p.add_argument("action", choices=["verify", "inspect"])
    p.add_argument("--journal", required=True)
    p.add_argument("--height", type=int, help="inspect: show one block")
    p.set_defaults(fn=cmd_ledger)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
