"""Command line entry: capture a registry model and write a bundle directory.

    bundle-export export --model toy2 --calib-indices idx.txt --out bundle/

The indices file holds whitespace-separated integers into the calibration
set. Exit code 2 means the request itself was unusable (unknown model,
malformed indices, unsupported layer); tracebacks are reserved for bugs.
"""

import argparse
import sys

from .errors import ExportError
from .export import SCORE_NAMES, STAGES, ExportConfig, available_models, export_bundle


def _read_indices(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            tokens = fh.read().split()
    except OSError as exc:
        raise ExportError(f"cannot read calibration indices: {exc}") from exc
    indices = []
    for tok in tokens:
        try:
            indices.append(int(tok))
        except ValueError:
            raise ExportError(f"calibration index '{tok}' in {path} is not an integer") from None
    return indices


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bundle-export",
        description="Capture a small CNN over a fixed calibration subset and write a tensor bundle.",
    )
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    p = sub.add_parser("export", help="run the model and write a bundle directory")
    p.add_argument("--model", required=True, help=f"registry model ({', '.join(available_models())})")
    p.add_argument("--ckpt", help="state-dict checkpoint to load (default: seeded init)")
    p.add_argument("--calib-indices", required=True, help="text file of calibration image indices")
    p.add_argument("--out", required=True, help="bundle directory to write")
    p.add_argument("--stage", choices=STAGES, default="preBN", help="activation hook point")
    p.add_argument("--patch-cap", type=int, default=1024, help="max input-patch rows per layer")
    p.add_argument("--layers", help="comma-separated subset of convolutions to export")
    p.add_argument("--scores", default="taylor,act_rms", help=f"baseline scores from {', '.join(SCORE_NAMES)}")
    p.add_argument("--seed", type=int, default=0, help="patch-subsample seed")
    p.add_argument("--data", help=".npz with images/labels replacing the builtin calibration set")
    return parser


def main(argv=None):
    ns = build_parser().parse_args(argv)
    if ns.command is None:
        build_parser().print_help()
        return 2
    try:
        config = ExportConfig(
            model=ns.model,
            calib_indices=_read_indices(ns.calib_indices),
            ckpt=ns.ckpt,
            stage=ns.stage,
            patch_cap=ns.patch_cap,
            layers=[s for s in ns.layers.split(",") if s] if ns.layers else None,
            scores=[s for s in ns.scores.split(",") if s] if ns.scores else (),
            seed=ns.seed,
            data=ns.data,
        )
        out_dir = export_bundle(config, ns.out)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote bundle {out_dir} ({len(config.calib_indices)} images, stage {config.stage})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
