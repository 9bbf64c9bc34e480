"""Command line for the exporter: run pairs, build pair lists, serve the bridge."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from .backends import ModelLoadError, make_backend
from .export import export_session

logger = logging.getLogger("changekit_export")


def _read_pairs(path: Path) -> list[tuple[str, Path, Path]]:
    """Pair list: one `name pre_path post_path` per line (whitespace separated)."""
    pairs = []
    base = path.parent
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected `name pre post`, got {line!r}")
        pre, post = Path(parts[1]), Path(parts[2])
        pairs.append((parts[0], pre if pre.is_absolute() else base / pre,
                      post if post.is_absolute() else base / post))
    return pairs


def cmd_run(args: argparse.Namespace) -> int:
    backend = make_backend(
        args.backend, checkpoint=args.checkpoint, model_type=args.model_type,
        d_m=args.d_m, patch_size=args.patch_size,
    )
    pairs = _read_pairs(args.pairs)
    if not pairs:
        logger.error("no pairs in %s", args.pairs)
        return 2
    args.out.mkdir(parents=True, exist_ok=True)
    failures = []

    def run(item):
        name, pre, post = item
        try:
            result = export_session(
                pre, post, backend, args.out, name=name,
                points_per_side=args.points_per_side, prefiltered=args.prefiltered,
            )
            return name, result, None
        except (ValueError, OSError) as exc:
            return name, None, exc

    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(run, pairs))
    else:
        results = [run(p) for p in pairs]
    for name, result, err in results:
        if err is not None:
            failures.append(name)
            logger.warning("pair %s failed: %s", name, err)
        else:
            print(f"{name}: grid={result.embedding_size} d_m={result.d_m} "
                  f"candidates={result.n_candidates}")
    if failures and len(failures) == len(pairs):
        logger.error("all pairs failed")
        return 2
    return 0


def cmd_pairs(args: argparse.Namespace) -> int:
    t0_dir = args.dataset_root / args.t0_subdir
    t1_dir = args.dataset_root / args.t1_subdir
    if not t0_dir.is_dir() or not t1_dir.is_dir():
        logger.error("expected %s and %s", t0_dir, t1_dir)
        return 2
    lines = []
    for pre in sorted(t0_dir.glob("*")):
        if pre.suffix.lower() not in (".png", ".jpg", ".jpeg", ".tif", ".tiff"):
            continue
        post = t1_dir / pre.name
        if post.exists():
            lines.append(f"{pre.stem} {pre.resolve()} {post.resolve()}")
    if not lines:
        logger.error("no matching image pairs under %s", args.dataset_root)
        return 2
    args.out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"{len(lines)} pairs -> {args.out}")
    return 0


def cmd_bridge(args: argparse.Namespace) -> int:
    import uvicorn

    from .bridge import create_bridge_app

    backend = make_backend(
        args.backend, checkpoint=args.checkpoint, model_type=args.model_type,
        d_m=args.d_m, patch_size=args.patch_size,
    )
    app = create_bridge_app(backend, args.pre_image, args.post_image)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=["synthetic", "sam"], default="synthetic")
    p.add_argument("--checkpoint", default=None, help="sam: path to pretrained weights")
    p.add_argument("--model-type", default="vit_b", help="sam: vit_b | vit_l | vit_h")
    p.add_argument("--d-m", type=int, default=256, help="synthetic: channel count")
    p.add_argument("--patch-size", type=int, default=16, help="synthetic: pixels per grid cell")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="changekit-export",
        description="Run a segmentation foundation model over image pairs and write engine sessions",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="export sessions for a pair list")
    p.add_argument("--pairs", type=Path, required=True, help="file of `name pre post` lines")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--points-per-side", type=int, default=64)
    p.add_argument("--prefiltered", action="store_true",
                   help="apply quality filter + NMS before writing (storage-constrained runs)")
    p.add_argument("--workers", type=int, default=1)
    _add_backend_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("pairs", help="build a pair list from a dataset directory")
    p.add_argument("--dataset-root", type=Path, required=True)
    p.add_argument("--t0-subdir", default="im1")
    p.add_argument("--t1-subdir", default="im2")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("bridge", help="serve live point-mask decoding for one pair")
    p.add_argument("--pre-image", type=Path, required=True)
    p.add_argument("--post-image", type=Path, required=True)
    p.add_argument("--port", type=int, default=8809)
    p.add_argument("--host", default="127.0.0.1")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_bridge)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ModelLoadError as exc:
        logger.error("%s", exc)
        return 2
    except (ValueError, OSError) as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
