"""
Command-line entry point ``cprank``.

Subcommands::

    cprank synth     --shape 20 20 20 --rank 3 --out data/
    cprank decompose data/tensor.ten --variant gsu-rr --rank-init 7 --out run/
    cprank eval      run/ data/

Exit codes: 0 success, 2 I/O error, 3 usage error, 4 bad data or config.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .io import (TensorFileError, file_digest, read_factors, read_manifest, read_tensor,
                 write_factors, write_manifest, write_tensor, synth)
from .metrics import align_components, cp_als, rmsep
from .rank_reduce import outer_solve_rr, support
from .solver import SolverConfig, SolveTrace, TraceRecord, outer_solve
from .tensor import FactorSet

EXIT_OK = 0
EXIT_IO = 2
EXIT_USAGE = 3
EXIT_DATA = 4

VARIANTS = ("gsu", "gsu-rr", "als")


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with code 3."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flag name -> SolverConfig field
_CFG_FLAGS = {
    "rank_init": int,
    "epsilon": float,
    "inner_iters": int,
    "gamma": float,
    "lambda_max": float,
    "lambda_min": float,
    "kappa": float,
    "stop_tol": float,
    "max_outer": int,
    "seed": int,
    "stability_window": int,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cprank", description="Rank-revealing CP decomposition with group sparsity.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a random low-rank tensor")
    s.add_argument("--shape", type=int, nargs="+", default=[20, 20, 20])
    s.add_argument("--rank", type=int, default=3)
    s.add_argument("--weights", type=float, nargs=2, default=[1.0, 2.0], metavar=("LO", "HI"))
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--format", choices=("bin", "txt"), default="bin")
    s.add_argument("--out", required=True, help="output directory")

    d = sub.add_parser("decompose", help="fit a CP model to a tensor file")
    d.add_argument("input", help="tensor file")
    d.add_argument("--variant", choices=VARIANTS, default=None,
                   help="gsu (group-sparse), gsu-rr (with rank reduction) or als; default gsu")
    d.add_argument("--config", help="JSON solver config, or a manifest to re-run")
    d.add_argument("--out", required=True, help="output directory")
    d.add_argument("--format", choices=("bin", "txt"), default="bin")
    for name, typ in _CFG_FLAGS.items():
        d.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)

    e = sub.add_parser("eval", help="compare estimated factors with reference factors")
    e.add_argument("estimated", help="run directory, manifest or factor index JSON")
    e.add_argument("reference", help="run directory, manifest or factor index JSON")
    e.add_argument("--min-cosine", type=float, default=0.9)
    e.add_argument("--profiles", help="write raw and max-normalized last-mode profiles (TSV)")
    return p


# -- helpers -----------------------------------------------------------------

def _load_config(args) -> tuple:
    """Merge defaults, the --config file and explicit flags. Returns (cfg, variant)."""
    base = {}
    variant = None
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read config: {exc}")
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_DATA, f"cannot parse config {args.config}: {exc}")
        if not isinstance(doc, dict):
            raise CliError(EXIT_DATA, f"config {args.config} is not a JSON object")
        if "config" in doc:
            variant = doc.get("variant")
            doc = doc["config"]
        base = dict(doc)
    for name in _CFG_FLAGS:
        val = getattr(args, name)
        if val is not None:
            base[name] = val
    try:
        cfg = SolverConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_DATA, f"invalid config: {exc}")
    variant = args.variant or variant or "gsu"
    if variant not in VARIANTS:
        raise CliError(EXIT_USAGE, f"unknown variant {variant!r}")
    return cfg, variant


def _als_trace(t, errors, rank) -> SolveTrace:
    nrm = float(np.linalg.norm(t))
    trace = SolveTrace()
    for k, e in enumerate(errors):
        trace.records.append(TraceRecord(k=k, F=0.5 * (e * nrm) ** 2, rel_err=e, lam=0.0,
                                         w=0.0, support_size=rank, safeguard_used=False))
    return trace


def _factor_source(path) -> FactorSet:
    """Factors from a directory (factor_*.ten), a JSON index or a single-file list."""
    path = Path(path)
    if path.is_dir():
        for idx in ("manifest.json", "synth.json"):
            if (path / idx).exists():
                return _factor_source(path / idx)
        files = sorted(path.glob("factor_*.ten"), key=lambda p: int(p.stem.split("_")[-1]))
        if not files:
            raise CliError(EXIT_IO, f"no factor files in {path}")
        return read_factors(files)
    try:
        doc = read_manifest(path)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_DATA, f"cannot parse {path}: {exc}")
    if "factors" not in doc:
        raise CliError(EXIT_DATA, f"{path} lists no factor files")
    return read_factors([path.parent / f for f in doc["factors"]])


# -- subcommands -------------------------------------------------------------

def cmd_synth(args) -> int:
    try:
        t, truth = synth(args.shape, args.rank, tuple(args.weights), args.noise, args.seed)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / "tensor.ten", t, args.format)
    names = write_factors(out, truth, fmt=args.format)
    index = {
        "tensor": "tensor.ten",
        "factors": names,
        "shape": list(t.shape),
        "rank": args.rank,
        "weight_range": list(args.weights),
        "noise_level": args.noise,
        "seed": args.seed,
    }
    write_manifest(out / "synth.json", index)
    print(f"wrote {out / 'tensor.ten'} shape={'x'.join(map(str, t.shape))} rank={args.rank}")
    return EXIT_OK


def cmd_decompose(args) -> int:
    cfg, variant = _load_config(args)
    t = read_tensor(args.input)
    if t.ndim < 3:
        raise CliError(EXIT_DATA, f"{args.input}: need a tensor with at least 3 modes, got {t.ndim}")
    if not np.all(np.isfinite(t)):
        raise CliError(EXIT_DATA, f"{args.input}: tensor contains non-finite values")

    t0 = time.perf_counter()
    if variant == "gsu":
        fs, trace = outer_solve(t, cfg)
    elif variant == "gsu-rr":
        fs, trace = outer_solve_rr(t, cfg)
    else:
        fs, errors = cp_als(t, cfg.rank_init, max_iters=cfg.max_outer, tol=cfg.stop_tol,
                            seed=cfg.seed, return_errors=True)
        trace = _als_trace(t, errors, cfg.rank_init)
        trace.status = "Converged" if len(errors) < cfg.max_outer else "MaxIters"
    wall = time.perf_counter() - t0

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace.write(out / "trace.tsv")
    names = write_factors(out, fs, fmt=args.format)
    final_err = trace[-1].rel_err if len(trace) else float("nan")
    if fs.rank == 0:
        final_err = 1.0
    supp = len(support(fs[fs.ndim - 1])) if fs.rank else 0
    manifest = {
        "config": cfg.to_dict(),
        "input": {"path": str(Path(args.input).resolve()), "sha256": file_digest(args.input)},
        "variant": variant,
        "seed": cfg.seed,
        "status": trace.status,
        "metrics": {
            "rel_err": final_err,
            "support_size": supp,
            "rank": fs.rank,
            "iterations": len(trace),
            "wall_time": wall,
            "pruned_at": trace.pruned_at,
        },
        "trace": "trace.tsv",
        "factors": names,
    }
    write_manifest(out / "manifest.json", manifest)
    print(f"{variant}: status={trace.status} iterations={len(trace)} "
          f"RelErr={final_err:.3e} support={supp} time={wall:.2f}s")
    return EXIT_OK


def cmd_eval(args) -> int:
    est = _factor_source(args.estimated)
    ref = _factor_source(args.reference)
    if est.ndim != ref.ndim or est.shape != ref.shape:
        raise CliError(EXIT_DATA, f"dimension mismatch: estimated {est.shape} vs reference {ref.shape}")
    res = align_components(est, ref, min_cosine=args.min_cosine)
    last = ref.ndim - 1
    R = ref.rank
    value = None
    if res.complete:
        value = rmsep(ref[last], res.regressed(est))

    print(f"reference rank {R}, estimated rank {est.rank}, matched {res.matched_rank}")
    for r in range(R):
        j = res.permutation[r]
        if j >= 0:
            print(f"  component {r + 1} <- estimated {j + 1}  cosine {res.cosines[r]:.6f}  "
                  f"scale {res.scales[r]:.6g}")
        else:
            print(f"  component {r + 1} unmatched")
    print(f"RMSEP {value:.6g}" if value is not None else "RMSEP - (components not separated)")
    print(f"rmsep={value!r}" if value is not None else "rmsep=-")
    print(f"matched_rank={res.matched_rank}")
    print("cosines=" + ",".join(repr(float(c)) for c in res.cosines))

    if args.profiles:
        reg = res.regressed(est)
        with np.errstate(invalid="ignore", divide="ignore"):
            norm = reg / np.nanmax(np.abs(reg), axis=0, initial=0.0)
        cols = [f"raw_{r + 1}" for r in range(R)] + [f"norm_{r + 1}" for r in range(R)]
        np.savetxt(args.profiles, np.hstack([reg, norm]), delimiter="\t",
                   header="\t".join(cols), comments="", fmt="%.17g")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "decompose": cmd_decompose, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"cprank: error: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, TensorFileError) as exc:
        print(f"cprank: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
