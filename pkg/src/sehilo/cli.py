"""``sehilo`` command line: theory | mc | sweep | hilo-noise | roundtrip | forward.

Exit codes: 0 success, 1 a statistical or round-trip check failed, 2 usage,
config or I/O error.
"""

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

from sehilo import experiments as ex
from sehilo.config import ConfigError, RunConfig, load_config
from sehilo.frame import FrameError
from sehilo.rng import resolve_seed
from sehilo.tensorfile import TensorFormatError, load_tensor, save_tensor

log = logging.getLogger("sehilo")


@contextlib.contextmanager
def _output(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _load(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    seed = resolve_seed(args.seed if args.seed is not None else cfg.seed)
    if args.trials is not None:
        cfg.mc.trials = args.trials
        cfg.roundtrip.frames = args.trials
        cfg.sweep.n_images = args.trials
    return cfg, seed


def cmd_theory(args):
    cfg, _ = _load(args)
    with _output(args.out) as fh:
        ex.write_csv(ex.run_theory(cfg), ex.THEORY_HEADER, fh)
    return 0


def cmd_mc(args):
    cfg, seed = _load(args)
    rows, ok = ex.run_mc(cfg, seed)
    with _output(args.out) as fh:
        ex.write_csv(rows, ex.MC_HEADER, fh)
    if not ok:
        log.error("interior-conditioned rate deviates from theory by more than 4 stderr")
    return 0 if ok else 1


def cmd_sweep(args):
    cfg, seed = _load(args)
    with _output(args.out) as fh:
        ex.write_csv(ex.run_sweep(cfg, seed), ex.SWEEP_HEADER, fh)
    return 0


def cmd_hilo_noise(args):
    cfg, seed = _load(args)
    with _output(args.out) as fh:
        ex.write_csv(ex.run_hilo_noise(cfg, seed), ex.HILO_NOISE_HEADER, fh)
    return 0


def cmd_roundtrip(args):
    cfg, seed = _load(args)
    rep = ex.run_roundtrip(cfg, seed)
    lines = [
        f"{rep['mismatches']} mismatches / {rep['frames']}",
        f"truncated frames rejected: {rep['truncations_detected']} / "
        f"{rep['truncations_injected']}",
        f"golden frame: {'OK' if rep['golden_ok'] else 'MISMATCH'}",
    ]
    with _output(args.out) as fh:
        fh.write("\n".join(lines) + "\n")
    return 0 if rep["ok"] else 1


def cmd_forward(args):
    cfg, seed = _load(args)
    image = load_tensor(args.input)
    recon, stats = ex.run_forward(image, cfg, seed)
    out = Path(args.out or "reconstruction.shlt")
    save_tensor(out, recon)
    stats_path = Path(args.stats) if args.stats else out.with_suffix(".json")
    stats_path.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    return 0


COMMANDS = {
    "theory": (cmd_theory, "closed-form recovery probabilities as CSV"),
    "mc": (cmd_mc, "Monte Carlo validation of the closed form"),
    "sweep": (cmd_sweep, "pipeline symbol accuracy over an SNR (or sigma) grid"),
    "hilo-noise": (cmd_hilo_noise, "independent Hi/Lo channel noise grid"),
    "roundtrip": (cmd_roundtrip, "frame encode/decode fuzzing and golden check"),
    "forward": (cmd_forward, "run one tensor file through the pipeline"),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sehilo", description="FSQ codec experiments: theory, Monte Carlo, sweeps, frames.",
        epilog="Exit codes: 0 ok, 1 check failed, 2 usage, config or I/O error.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (fn, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--seed", type=lambda s: int(s, 0),
                       help="base seed (default: config, then $SEHILO_SEED, then 0)")
        p.add_argument("--out", help="output path (CSV/report: default stdout)")
        p.add_argument("--trials", type=int,
                       help="MC trials / fuzz frames / sweep images, overriding the config")
        if name == "forward":
            p.add_argument("input", help="input tensor file (H x W x C)")
            p.add_argument("--stats", help="stats JSON path (default: <out>.json)")
        p.set_defaults(func=fn)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, TensorFormatError, FrameError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
