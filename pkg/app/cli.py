"""Command-line entry point: ``python -m app.cli <command> [flags]``.

Every command writes CSV to stdout (or ``--out``) and diagnostics to
stderr. Flag defaults come from the ``Settings`` field defaults; the
environment is never consulted, so output depends only on the flags.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence, Tuple

from app.core.config import Settings, default
from app.core.errors import LipsinError, ParameterError
from app.core.log import configure_logging
from app.models.schemas import (
    AnalyzeRequest,
    AnalyzeRow,
    AttackMode,
    AttackRequest,
    AttackRow,
    CorrelationRow,
    FilterParams,
    FlowRow,
    GuessStrategy,
    Scheme,
    SweepRequest,
    SweepRow,
)
from app.services.experiment_service import ExperimentService
from app.services.network import load_topology
from app.utils.csv_output import write_rows

logger = logging.getLogger("app.cli")


def count(text: str) -> int:
    """Whole number, scientific notation allowed (``1e6``)."""
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if value < 0 or value != int(value):
        raise argparse.ArgumentTypeError(f"not a whole number >= 0: {text!r}")
    return int(value)


def hop_range(text: str) -> Tuple[int, int]:
    """``A..B`` or a single hop count ``A``."""
    lo, sep, hi = text.partition("..")
    try:
        a = int(lo)
        b = int(hi) if sep else a
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B or A, got {text!r}") from None
    if a < 1 or b < a:
        raise argparse.ArgumentTypeError(f"invalid hop range {text!r}")
    return a, b


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--m", type=int, default=default("m"), help="filter width in bits")
    common.add_argument("--k", type=int, default=default("k"), help="bits set per LinkId")
    common.add_argument("--n-lids", type=int, default=default("n_lids"), help="LinkIds per ForwardingId")
    common.add_argument("--rho-m", type=float, default=None, help="fill factor (default: expected fill of n-lids)")
    common.add_argument("--hash-bits", type=int, default=default("hash_bits"), choices=(16, 32, 48, 64))
    common.add_argument("--p-sc", type=float, default=default("p_sc"), help="security-check pass probability")
    common.add_argument("--seed", type=count, default=default("seed"))
    common.add_argument("--scheme", type=Scheme, choices=list(Scheme), default=Scheme.EFID_SECURED, metavar="{lipsin,efid}")
    common.add_argument("--workers", type=count, default=default("workers"))
    common.add_argument("--out", type=Path, default=None, help="output file (default: stdout)")
    common.add_argument("--log-level", default=default("log_level"))
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lipsin", description="Bloom-filter forwarding with secured attachment")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_flags()
    l_default = f"{default('l_min')}..{default('l_max')}"

    analyze = sub.add_parser("analyze", parents=[common], help="closed-form attack table")
    analyze.add_argument("--l", type=hop_range, default=hop_range(l_default))

    sweep = sub.add_parser("sweep", parents=[common], help="attack probability of both schemes per hop count")
    sweep.add_argument("--l", type=hop_range, default=hop_range(l_default))
    sweep.add_argument("--lipsin-m", type=int, default=default("lipsin_m"))
    sweep.add_argument("--trials", type=count, default=0, help="brute-force trials per feasible cell")

    simulate = sub.add_parser("simulate", parents=[common], help="deliver flows through a topology")
    simulate.add_argument("--topology", type=Path, required=True)
    simulate.add_argument("--flows", type=count, default=1)
    simulate.add_argument("--epochs", type=count, default=1)
    simulate.add_argument("--tamper", action="store_true", help="flip one bit of every header")
    simulate.add_argument("--max-fill-drop", action="store_true", default=default("max_fill_drop"))

    attack = sub.add_parser("attack", parents=[common], help="run an attack campaign")
    attack.add_argument("--mode", type=AttackMode, choices=list(AttackMode), default=AttackMode.BRUTE_FORCE, metavar="{brute,replay,corr}")
    attack.add_argument("--strategy", type=GuessStrategy, choices=list(GuessStrategy), default=GuessStrategy.RANDOM_FILL,
                        metavar="{random,saturated}")
    attack.add_argument("--trials", type=count, default=default("trials"))
    attack.add_argument("--l", type=hop_range, default=(1, 1), help="checks between the attacker's NAP and the target")
    attack.add_argument("--rotate", action="store_true", help="rotate the tag key before replaying")
    attack.add_argument("--epochs", type=count, default=1, help="rotations applied by --rotate")
    attack.add_argument("--topology", type=Path, default=None)
    attack.add_argument("--attacker", default=None)
    attack.add_argument("--target", default=None)
    attack.add_argument("--max-fill-drop", action="store_true", default=default("max_fill_drop"))

    topology = sub.add_parser("topology", parents=[common], help="write a generated topology document")
    topology.add_argument("--kind", choices=("chain", "random"), default="random")
    topology.add_argument("--nodes", type=count, default=20, help="core nodes of a random topology")
    topology.add_argument("--hops", type=count, default=4, help="edges of a chain, publisher to subscriber")
    return parser


def _read_topology(path: Path):
    try:
        text = path.read_text()
    except OSError as e:
        raise ParameterError(f"cannot read topology {path}: {e}") from e
    return load_topology(text)


def _cmd_analyze(args, service: ExperimentService):
    l_min, l_max = args.l
    request = AnalyzeRequest(
        m=args.m, k=args.k, n_lids=args.n_lids, rho_m=args.rho_m,
        hash_bits=args.hash_bits, p_sc=args.p_sc, l_min=l_min, l_max=l_max,
    )
    return service.analyze(request), AnalyzeRow


def _cmd_sweep(args, service: ExperimentService):
    l_min, l_max = args.l
    request = SweepRequest(
        m=args.m, lipsin_m=args.lipsin_m, k=args.k, n_lids=args.n_lids, rho_m=args.rho_m,
        p_sc=args.p_sc, l_min=l_min, l_max=l_max, trials=args.trials, seed=args.seed,
    )
    return service.sweep(request, workers=max(1, args.workers)), SweepRow


def _cmd_simulate(args, service: ExperimentService):
    topo = _read_topology(args.topology)
    rows = service.simulate(
        topo,
        flows=args.flows,
        seed=args.seed,
        scheme=args.scheme,
        hash_bits=args.hash_bits,
        epochs=args.epochs,
        tamper=args.tamper,
        max_fill_drop=args.max_fill_drop,
    )
    return rows, FlowRow


def _cmd_attack(args, service: ExperimentService):
    l_min, l_max = args.l
    if l_min != l_max:
        raise ParameterError("attack takes a single hop count, not a range")
    topo = _read_topology(args.topology) if args.topology else None
    request = AttackRequest(
        mode=args.mode,
        scheme=args.scheme,
        strategy=args.strategy,
        m=args.m,
        k=args.k,
        rho_m=args.rho_m if args.rho_m is not None else 0.5,
        hash_bits=args.hash_bits,
        l=l_min,
        n_lids=args.n_lids,
        trials=max(1, args.trials),
        rotations=args.epochs if args.rotate else 0,
        seed=args.seed,
        workers=max(1, args.workers),
        max_fill_drop=args.max_fill_drop,
        attacker=args.attacker,
        target=args.target,
    )
    model = CorrelationRow if args.mode == AttackMode.COMPUTATIONAL else AttackRow
    return service.attack(request, topo), model


def _cmd_topology(args, service: ExperimentService) -> str:
    params = FilterParams(m=args.m, k=args.k, rho_max=default("rho_max"))
    return service.topology(args.kind, params, seed=args.seed, nodes=args.nodes, hops=args.hops)


COMMANDS = {
    "analyze": _cmd_analyze,
    "sweep": _cmd_sweep,
    "simulate": _cmd_simulate,
    "attack": _cmd_attack,
}


def _emit(args, write) -> None:
    if args.out is None:
        write(sys.stdout)
        return
    with open(args.out, "w", newline="") as fh:
        write(fh)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    service = ExperimentService(Settings.model_construct())
    try:
        if args.command == "topology":
            text = _cmd_topology(args, service)
            _emit(args, lambda fh: fh.write(text))
        else:
            rows, model = COMMANDS[args.command](args, service)
            _emit(args, lambda fh: write_rows(rows, fh, model))
    except LipsinError as e:
        logger.error("%s", e)
        return 1
    except ValueError as e:
        # pydantic rejects out-of-domain request fields
        logger.error("invalid parameters: %s", e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
