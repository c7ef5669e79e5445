"""Command line: synthesize benchmark mixtures with ground truth, separate
observations, and score an estimate against the truth.

Exit codes: 0 success, 2 invalid input, 3 rotation estimation did not
converge. CSV files are one time sample per row, one channel per column;
channels in flags and JSON files are 1-indexed.
"""
from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from .copulas import (
    FAMILY_NAMES,
    ClaytonCopula,
    FactorialCopula,
    GaussianCopula,
    GumbelCopula,
    ProductCopula,
)
from .exceptions import CopsepError, NonConvergenceError
from .inference import DEFAULT_FAMILIES, cca_fit
from .margins import MARGIN_NAMES, margin_ppf
from .signals import BlockPartition, SignalMatrix, align_permutation, amari_index, mix

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NONCONVERGENCE = 3

# Default parameters for named margins: (low, high) for uniform,
# (location, scale) otherwise.
MARGIN_DEFAULTS = {"uniform": (0.0, 1.0), "gaussian": (0.0, 1.0), "laplace": (0.0, 1.0)}


# ---------------------------------------------------------------------------
# CSV input/output

def _parse_cell(token: str):
    try:
        value = float(token)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def read_signal_csv(path: str) -> SignalMatrix:
    """Read a samples-by-channels CSV into a SignalMatrix.

    A single header row is skipped when any first-row field is
    non-numeric. Ragged rows and non-numeric cells are errors naming the
    offending row and column (1-based, counting the header).
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file")
    start = 1 if any(_parse_cell(tok) is None for tok in lines[0].split(",")) else 0
    data = []
    width = None
    for lineno in range(start, len(lines)):
        tokens = lines[lineno].split(",")
        if width is None:
            width = len(tokens)
        if len(tokens) != width:
            raise ValueError(
                f"{path}: row {lineno + 1} has {len(tokens)} fields, expected {width}"
            )
        row = []
        for col, token in enumerate(tokens):
            value = _parse_cell(token)
            if value is None:
                raise ValueError(
                    f"{path}: row {lineno + 1}, column {col + 1}: non-numeric value {token!r}"
                )
            row.append(value)
        data.append(row)
    if not data:
        raise ValueError(f"{path}: no data rows")
    return SignalMatrix(np.asarray(data, dtype=float).T)


def write_signal_csv(signals: SignalMatrix, path: str, header: bool = False):
    """Write a SignalMatrix as a samples-by-channels CSV, 17 significant
    digits (lossless round trip), LF line endings, no header by default."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header:
            fh.write(",".join(f"c{i + 1}" for i in range(signals.n_channels)) + "\n")
        for t in range(signals.n_samples):
            fh.write(",".join(f"{v:.17g}" for v in signals.values[:, t]) + "\n")


def _read_matrix(path: str, n: int) -> np.ndarray:
    matrix = read_signal_csv(path).values.T
    if matrix.shape != (n, n):
        raise ValueError(f"{path}: expected a {n}x{n} matrix, got {matrix.shape}")
    return matrix


# ---------------------------------------------------------------------------
# Flag grammar helpers

def parse_partition(text: str, n_channels: int) -> BlockPartition:
    """Parse the '1,2|3' block grammar (1-indexed channels)."""
    blocks = []
    for chunk in text.split("|"):
        block = []
        for token in chunk.split(","):
            token = token.strip()
            if not token.isdigit() or int(token) < 1:
                raise ValueError(f"bad partition entry {token!r}; channels are 1-indexed integers")
            block.append(int(token) - 1)
        blocks.append(tuple(block))
    return BlockPartition(tuple(blocks), n_channels)


def _partition_to_json(partition: BlockPartition):
    return [[i + 1 for i in block] for block in partition.blocks]


def _split_per_block(text: str | None, count: int, flag: str):
    if count == 0:
        return []
    if text is None:
        raise ValueError(f"--{flag} is required ({count} value(s) expected)")
    items = [tok.strip() for tok in text.split(",")]
    if len(items) == 1:
        items = items * count
    if len(items) != count:
        raise ValueError(f"--{flag} needs 1 or {count} comma-separated values, got {len(items)}")
    return items


def copula_to_json(model, channels: tuple) -> dict:
    one_based = [i + 1 for i in channels]
    if isinstance(model, FactorialCopula):
        blocks = [
            copula_to_json(block, chan)
            for chan, block in zip(model.partition.blocks, model.blocks)
        ]
        return {"family": "factorial", "params": {"blocks": blocks}}
    if isinstance(model, ProductCopula):
        return {"family": "product", "params": {}, "channels": one_based}
    if isinstance(model, GaussianCopula):
        return {
            "family": "gaussian",
            "params": {"correlation": model.correlation.tolist()},
            "channels": one_based,
        }
    if isinstance(model, ClaytonCopula):
        return {"family": "clayton", "params": {"theta": float(model.theta)}, "channels": one_based}
    if isinstance(model, GumbelCopula):
        return {"family": "gumbel", "params": {"theta": float(model.theta)}, "channels": one_based}
    raise ValueError(f"cannot serialize copula {model!r}")


def _equicorrelation(d: int, r: float) -> np.ndarray:
    if not -1.0 / (d - 1) < r < 1.0:
        raise ValueError(
            f"gaussian block of size {d} needs correlation in (-1/{d - 1}, 1), got {r}"
        )
    return np.full((d, d), r) + (1.0 - r) * np.eye(d)


def _build_block_model(family: str, size: int, theta: float | None, r: float | None):
    if family == "product":
        return ProductCopula(size)
    if family == "gaussian":
        if r is None:
            raise ValueError("--rho is required for gaussian blocks")
        return GaussianCopula(_equicorrelation(size, r))
    if family == "clayton":
        if theta is None:
            raise ValueError("--theta is required for clayton blocks")
        return ClaytonCopula(theta, size)
    if family == "gumbel":
        if theta is None:
            raise ValueError("--theta is required for gumbel blocks")
        if size != 2:
            raise ValueError(f"gumbel blocks must have exactly 2 channels, got {size}")
        return GumbelCopula(theta)
    raise ValueError(f"unknown copula family '{family}'; expected one of {FAMILY_NAMES}")


def _dump_json(obj, path: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Subcommands

def cmd_synth(args) -> int:
    n, t = args.channels, args.samples
    if n < 1 or t < 1:
        raise ValueError("--channels and --samples must be positive")
    partition = (
        parse_partition(args.partition, n) if args.partition else BlockPartition.singletons(n)
    )
    dependent = [b for b in partition.blocks if len(b) > 1]
    families = _split_per_block(args.copula, len(dependent), "copula") if dependent else []

    theta_blocks = [b for b, f in zip(dependent, families) if f in ("clayton", "gumbel")]
    rho_blocks = [b for b, f in zip(dependent, families) if f == "gaussian"]
    thetas = [float(v) for v in _split_per_block(args.theta, len(theta_blocks), "theta")]
    rhos = [float(v) for v in _split_per_block(args.rho, len(rho_blocks), "rho")]

    models = []
    th_iter, rho_iter = iter(thetas), iter(rhos)
    for block in partition.blocks:
        if len(block) == 1:
            models.append(ProductCopula(1))
            continue
        family = families[dependent.index(block)]
        theta = next(th_iter) if family in ("clayton", "gumbel") else None
        r = next(rho_iter) if family == "gaussian" else None
        models.append(_build_block_model(family, len(block), theta, r))
    copula = FactorialCopula(partition, tuple(models))

    margin_names = _split_per_block(args.margins, n, "margins")
    for name in margin_names:
        if name not in MARGIN_NAMES:
            raise ValueError(f"unknown margin '{name}'; expected one of {MARGIN_NAMES}")

    u = copula.sample(t, seed=args.seed)
    sources = np.empty((n, t))
    for i, name in enumerate(margin_names):
        sources[i] = margin_ppf(name, MARGIN_DEFAULTS[name], u.values[i])

    if args.mix == "identity":
        mixing = np.eye(n)
    elif args.mix == "random":
        rng = np.random.default_rng([args.seed, 1])
        while True:
            mixing = rng.standard_normal((n, n))
            if n == 1 or np.linalg.cond(mixing) < 100.0:
                break
    else:
        mixing = _read_matrix(args.mix, n)
        if abs(np.linalg.det(mixing)) < 1e-12:
            raise ValueError(f"{args.mix}: mixing matrix is singular")

    observed = mix(SignalMatrix(sources), mixing)
    write_signal_csv(observed, args.out, header=args.header)
    truth = {
        "channels": n,
        "samples": t,
        "seed": args.seed,
        "mixing": mixing.tolist(),
        "partition": _partition_to_json(partition),
        "copula": copula_to_json(copula, tuple(range(n))),
        "margins": [
            {"name": name, "params": list(MARGIN_DEFAULTS[name])} for name in margin_names
        ],
    }
    _dump_json(truth, args.truth_out)
    return EXIT_OK


def cmd_separate(args) -> int:
    x = read_signal_csv(args.input)
    if x.n_channels < 2:
        raise ValueError(f"{args.input}: need at least 2 channels, got {x.n_channels}")
    partition = None if args.partition == "auto" else parse_partition(args.partition, x.n_channels)
    families = DEFAULT_FAMILIES if args.family == "auto" else (args.family,)
    separation, report = cca_fit(
        x,
        families=families,
        partition=partition,
        tau_threshold=args.tau_threshold,
        max_iter=args.max_iter,
        seed=args.seed,
    )
    write_signal_csv(separation.separate(x), args.sources_out, header=args.header)
    payload = {
        "demixing": separation.demixing.tolist(),
        "partition": _partition_to_json(report.partition),
        "copula": copula_to_json(report.copula, tuple(range(x.n_channels))),
        "mutual_information": report.mutual_information,
        "copula_entropy": report.copula_entropy,
        "divergence": report.divergence,
        "log_likelihood": report.log_likelihood,
        "ica_iterations": report.ica_iterations,
        "seed": report.seed,
        "density_floor_hit": report.density_floor_hit,
    }
    _dump_json(payload, args.report_out)
    return EXIT_OK


def _block_error(truth_block: dict, estimate_block: dict):
    family = truth_block["family"]
    if family != estimate_block["family"]:
        return None
    if family in ("clayton", "gumbel"):
        return abs(truth_block["params"]["theta"] - estimate_block["params"]["theta"])
    if family == "gaussian":
        t = np.abs(np.asarray(truth_block["params"]["correlation"], dtype=float))
        e = np.abs(np.asarray(estimate_block["params"]["correlation"], dtype=float))
        if t.shape != e.shape:
            return None
        off = ~np.eye(t.shape[0], dtype=bool)
        # orientation of components is sign-ambiguous, compare magnitudes
        return float(np.abs(np.sort(t[off]) - np.sort(e[off])).max())
    return 0.0


def cmd_evaluate(args) -> int:
    with open(args.estimate, "r", encoding="utf-8") as fh:
        estimate = json.load(fh)
    with open(args.truth, "r", encoding="utf-8") as fh:
        truth = json.load(fh)
    data = read_signal_csv(args.data)

    n = int(truth["channels"])
    demixing = np.asarray(estimate["demixing"], dtype=float)
    mixing = np.asarray(truth["mixing"], dtype=float)
    if demixing.shape != (n, n) or mixing.shape != (n, n):
        raise ValueError(
            f"channel mismatch: truth has {n} channels, demixing {demixing.shape}, mixing {mixing.shape}"
        )
    if data.n_channels != n:
        raise ValueError(f"{args.data}: expected {n} channels, got {data.n_channels}")

    gain = demixing @ mixing
    perm = align_permutation(gain)

    # map the estimate's channel labels onto the truth's through the
    # recovered-component assignment, then compare block structures
    mapped_blocks = sorted(
        tuple(sorted(int(perm[i - 1]) + 1 for i in block)) for block in estimate["partition"]
    )
    truth_blocks = sorted(tuple(sorted(block)) for block in truth["partition"])
    partition_match = mapped_blocks == truth_blocks

    est_by_channels = {}
    for block in estimate["copula"]["params"]["blocks"]:
        mapped = tuple(sorted(int(perm[i - 1]) + 1 for i in block["channels"]))
        est_by_channels[mapped] = block
    block_errors = []
    for block in truth["copula"]["params"]["blocks"]:
        channels = tuple(sorted(block["channels"]))
        match = est_by_channels.get(channels)
        entry = {
            "channels": list(channels),
            "family_truth": block["family"],
            "family_estimate": match["family"] if match else None,
            "abs_error": _block_error(block, match) if match else None,
        }
        block_errors.append(entry)

    metrics = {
        "amari_index": amari_index(gain),
        "partition_match": partition_match,
        "block_errors": block_errors,
        "divergence": estimate["divergence"],
        "log_likelihood": estimate["log_likelihood"],
    }
    _dump_json(metrics, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="copsep",
        description="Blind source separation with copula models of residual dependence.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a mixed benchmark with ground truth")
    synth.add_argument("--channels", type=int, required=True)
    synth.add_argument("--samples", type=int, required=True)
    synth.add_argument("--partition", help="blocks like '1,2|3'; default all singletons")
    synth.add_argument("--copula", help="family per dependent block (comma list or one for all)")
    synth.add_argument("--theta", help="theta per clayton/gumbel block")
    synth.add_argument("--rho", help="correlation per gaussian block")
    synth.add_argument("--margins", default="gaussian", help="margin name(s), one or per channel")
    synth.add_argument("--mix", default="random", help="'random', 'identity', or a CSV matrix path")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="observations CSV")
    synth.add_argument("--truth-out", required=True, help="ground-truth JSON")
    synth.add_argument("--header", action="store_true", help="emit a c1..cn header row")

    separate = sub.add_parser("separate", help="separate observations and fit dependence")
    separate.add_argument("input", help="observations CSV")
    separate.add_argument("--family", default="auto", choices=("auto",) + FAMILY_NAMES)
    separate.add_argument("--partition", default="auto", help="'auto' or explicit blocks like '1,2|3'")
    separate.add_argument("--tau-threshold", type=float, default=0.1)
    separate.add_argument("--seed", type=int, default=0)
    separate.add_argument("--max-iter", type=int, default=200)
    separate.add_argument("--sources-out", required=True, help="recovered sources CSV")
    separate.add_argument("--report-out", required=True, help="fit report JSON")
    separate.add_argument("--header", action="store_true", help="emit a c1..cn header row")

    evaluate = sub.add_parser("evaluate", help="score an estimate against the ground truth")
    evaluate.add_argument("--estimate", required=True, help="report JSON from separate")
    evaluate.add_argument("--truth", required=True, help="truth JSON from synth")
    evaluate.add_argument("--data", required=True, help="sources CSV (for shape checks)")
    evaluate.add_argument("--out", required=True, help="metrics JSON")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:  # argparse prints its own one-line diagnostic
        return int(exit_.code) if exit_.code else EXIT_OK
    handlers = {"synth": cmd_synth, "separate": cmd_separate, "evaluate": cmd_evaluate}
    try:
        return handlers[args.command](args)
    except NonConvergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except KeyError as err:
        print(f"error: missing key {err} in an input file", file=sys.stderr)
        return EXIT_INVALID
    except (CopsepError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID


def entrypoint():
    sys.exit(main())
