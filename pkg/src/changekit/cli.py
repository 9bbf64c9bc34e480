"""Batch command line: detect, query, eval, baseline, export-labels, probe, serve.

Exit codes: 0 success, 2 usage or input error, 3 internal invariant
violation. Logs go to stderr, results to files, one-line summaries to
stdout, so commands compose in pipelines.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import socket
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import baselines as bl
from .errors import EngineError, FormatError, UnresolvablePointError, ValidationError
from .images import (
    read_change_map_png,
    read_label_png,
    write_change_map_png,
    write_rgb_png,
)
from .interchange import Session, Time, load_session, read_mask_lines
from .matching import (
    ChangeProposal,
    MatchConfig,
    PointQuery,
    bitemporal_latent_match,
    point_query_filter,
    rasterize_changes,
)
from .metrics import aggregate_pixel_reports, binarize_gt, format_eval_table, mask_ar, pixel_prf
from .probe import fit_pca_auto, pca_rgb, semantic_query
from .proposal import nms, quality_filter

logger = logging.getLogger("changekit")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INVARIANT = 3

MODE_MAP = {"threshold": "angle_threshold", "topk": "topk", "otsu": "auto_otsu"}


def _add_selection_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=sorted(MODE_MAP), default="threshold",
                   help="selection mode (default: threshold)")
    p.add_argument("--angle", type=float, default=155.0,
                   help="change angle threshold in degrees (default: 155)")
    p.add_argument("--k", type=int, default=None, help="top-k count (topk mode)")
    p.add_argument("--scoring", choices=["cosine", "eq1-raw"], default="cosine")
    p.add_argument("--direction", choices=["bidirectional", "t-to-t1", "t1-to-t"],
                   default="bidirectional")
    p.add_argument("--dedupe-iou", type=float, default=None,
                   help="optional NMS over selected change proposals")


def _add_preprocess_flags(p: argparse.ArgumentParser) -> None:
    env_overrides = os.environ.get("CHANGEKIT_OVERRIDES")
    p.add_argument("--min-pred-iou", type=float, default=0.5)
    p.add_argument("--min-stability", type=float, default=0.8)
    p.add_argument("--nms-iou", type=float, default=0.7)
    p.add_argument("--no-preprocess", action="store_true",
                   help="skip the quality filter and NMS (proposals already filtered)")
    p.add_argument("--dataset", default=None, help="row of --overrides-file to apply")
    p.add_argument("--overrides-file", type=Path,
                   default=Path(env_overrides) if env_overrides else None,
                   help="JSON table of per-dataset threshold overrides "
                        "(default: $CHANGEKIT_OVERRIDES)")
    p.add_argument("--rle-order", choices=["row-major", "column-major"], default="row-major",
                   help="scan order of input proposal RLE counts")


def _match_config(args: argparse.Namespace) -> MatchConfig:
    return MatchConfig(
        mode=MODE_MAP[args.mode],
        k=args.k,
        angle_threshold_deg=args.angle,
        scoring=args.scoring.replace("-", "_"),
        direction=args.direction.replace("-", "_"),
        dedupe_iou=args.dedupe_iou,
    ).validated()


def _apply_overrides(args: argparse.Namespace) -> tuple[float, float, float]:
    min_iou, min_stab, nms_iou = args.min_pred_iou, args.min_stability, args.nms_iou
    if args.overrides_file is not None:
        table = json.loads(args.overrides_file.read_text(encoding="utf-8"))
        if args.dataset is None:
            raise ValidationError("--overrides-file needs --dataset to pick a row")
        row = table.get(args.dataset)
        if row is None:
            raise ValidationError(f"dataset {args.dataset!r} not in {args.overrides_file}")
        min_iou = float(row.get("min_pred_iou", min_iou))
        min_stab = float(row.get("min_stability", min_stab))
        nms_iou = float(row.get("nms_iou", nms_iou))
    return min_iou, min_stab, nms_iou


def _prepare_session(args: argparse.Namespace, manifest: Path) -> Session:
    session = load_session(manifest, rle_order=args.rle_order)
    if getattr(args, "no_preprocess", False):
        return session
    min_iou, min_stab, nms_iou = _apply_overrides(args)
    from dataclasses import replace

    def prep(recs):
        return tuple(nms(quality_filter(recs, min_iou, min_stab), nms_iou))

    return replace(session, proposals_t0=prep(session.proposals_t0),
                   proposals_t1=prep(session.proposals_t1))


def _write_changes(changes: Sequence[ChangeProposal], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in changes:
            fh.write(json.dumps({
                "id": c.proposal_id,
                "source_time": c.source_time.value,
                "size": list(c.mask.size),
                "counts": list(c.mask.counts),
                "score": c.score,
                "angle_deg": c.angle_deg,
            }, separators=(",", ":")))
            fh.write("\n")


def _read_changes(path: Path) -> list[ChangeProposal]:
    from .interchange import RleMask

    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append(ChangeProposal(
                    mask=RleMask(size=tuple(obj["size"]), counts=tuple(obj["counts"])),
                    source_time=Time(obj["source_time"]),
                    score=float(obj["score"]),
                    angle_deg=float(obj["angle_deg"]),
                    proposal_id=int(obj["id"]),
                ))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad change line ({exc})") from exc
    return out


# ----------------------------------------------------------------- commands

def cmd_detect(args: argparse.Namespace) -> int:
    session = _prepare_session(args, args.manifest)
    config = _match_config(args)
    changes = bitemporal_latent_match(session, config)
    n_candidates = len(session.proposals_t0) + len(session.proposals_t1)
    if config.direction != "bidirectional":
        n_candidates = len(session.proposals_t0 if config.direction == "t_to_t1"
                           else session.proposals_t1)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_changes(changes, args.out / "changes.jsonl")
    write_change_map_png(rasterize_changes(changes, session.image_size), args.out / "change_map.png")
    print(f"candidates={n_candidates} kept={len(changes)}")
    return EXIT_OK


def _parse_point(token: str) -> tuple[float, float, Time]:
    parts = token.split(",")
    if len(parts) != 3:
        raise ValidationError(f"--point expects x,y,t got {token!r}")
    return (float(parts[0]), float(parts[1]), Time(parts[2].strip().upper()))


def cmd_query(args: argparse.Namespace) -> int:
    session = _prepare_session(args, args.manifest)
    config = _match_config(args)
    changes = bitemporal_latent_match(session, config)
    points = tuple(_parse_point(tok) for tok in args.point)
    query = PointQuery(points=points, semantic_angle_deg=args.semantic_angle)
    filtered = point_query_filter(changes, query, session)
    args.out.mkdir(parents=True, exist_ok=True)
    _write_changes(filtered, args.out / "changes.jsonl")
    write_change_map_png(rasterize_changes(filtered, session.image_size), args.out / "change_map.png")
    print(f"candidates={len(changes)} kept={len(filtered)}")
    return EXIT_OK


def _expand_eval_inputs(paths: Sequence[Path], suffix: str) -> list[Path]:
    out: list[Path] = []
    for p in paths:
        if p.is_dir():
            out.extend(sorted(p.glob(f"*{suffix}")))
        else:
            out.append(p)
    return out


def cmd_eval(args: argparse.Namespace) -> int:
    level = args.level
    report: dict = {"level": level}
    micro = macro = None
    macro_ar = None
    n_pairs = 0
    if level in ("pixel", "both"):
        preds = _expand_eval_inputs(args.pred, ".png")
        gts = _expand_eval_inputs(args.gt, ".png")
        if len(preds) != len(gts):
            raise ValidationError(f"pred/gt count mismatch: {len(preds)} vs {len(gts)}")
        if not preds:
            raise ValidationError("no pixel files to evaluate")
        reports = []
        for p, g in zip(preds, gts):
            pred_map = read_change_map_png(p)
            gt_map = binarize_gt(read_label_png(g))
            reports.append(pixel_prf(pred_map, gt_map))
        micro, macro = aggregate_pixel_reports(reports)
        n_pairs = len(reports)
        report["pixel"] = {"micro": micro.to_dict(), "macro": macro.to_dict()}
    if level in ("instance", "both"):
        preds = _expand_eval_inputs(args.pred, ".jsonl")
        gts = _expand_eval_inputs(args.gt, ".jsonl")
        if len(preds) != len(gts):
            raise ValidationError(f"pred/gt count mismatch: {len(preds)} vs {len(gts)}")
        if not preds:
            raise ValidationError("no instance files to evaluate")
        ars = []
        per_pair = []
        for p, g in zip(preds, gts):
            rep = mask_ar(_read_changes(p), read_mask_lines(g), max_dets=args.max_dets)
            ars.append(rep.ar)
            per_pair.append(rep.to_dict())
        macro_ar = sum(ars) / len(ars)
        n_pairs = max(n_pairs, len(ars))
        report["instance"] = {"macro_ar": macro_ar, "per_pair": per_pair}
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print(format_eval_table(micro, macro, macro_ar, n_pairs))
        if macro_ar is not None:
            print(f"ar {macro_ar:.4g}")
    return EXIT_OK


def cmd_baseline(args: argparse.Namespace) -> int:
    session = _prepare_session(args, args.manifest)
    args.out.mkdir(parents=True, exist_ok=True)
    if args.method == "cva":
        grid0, grid1 = session.grid_t0, session.grid_t1
        intensity, cmap = bl.cva_change_map(grid0, grid1, session.image_size, threshold=args.threshold)
        write_change_map_png(cmap, args.out / "change_map.png")
        np.save(args.out / "intensity.npy", intensity)
        print(f"flagged={int(cmap.raster.sum())} of {cmap.raster.size}")
        return EXIT_OK
    if args.method == "cva-match":
        changes = bl.cva_match(session, vote_threshold=args.vote_threshold)
    elif args.method == "mask-match":
        changes = bl.mask_match(session, iou_threshold=args.iou_threshold)
    else:
        raise ValidationError(f"unknown method {args.method!r}")
    _write_changes(changes, args.out / "changes.jsonl")
    write_change_map_png(rasterize_changes(changes, session.image_size), args.out / "change_map.png")
    print(f"kept={len(changes)}")
    return EXIT_OK


def _export_one(args: argparse.Namespace, manifest: Path, out_dir: Path) -> Optional[float]:
    session = _prepare_session(args, manifest)
    config = _match_config(args)
    changes = bitemporal_latent_match(session, config)
    cmap = rasterize_changes(changes, session.image_size)
    write_change_map_png(cmap, out_dir / f"{manifest.stem}.png")
    return float(cmap.raster.mean())


def cmd_export_labels(args: argparse.Namespace) -> int:
    manifests = sorted(args.manifest_dir.glob("*.json"))
    if not manifests:
        raise ValidationError(f"no manifests in {args.manifest_dir}")
    args.out.mkdir(parents=True, exist_ok=True)
    results: dict[str, Optional[float]] = {}

    def run(m: Path) -> tuple[str, Optional[float]]:
        try:
            return (m.stem, _export_one(args, m, args.out))
        except (EngineError, FileNotFoundError, OSError) as exc:
            logger.warning("skipping %s: %s", m.name, exc)
            return (m.stem, None)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            for stem, cov in pool.map(run, manifests):
                results[stem] = cov
    else:
        for m in manifests:
            stem, cov = run(m)
            results[stem] = cov

    exported = {k: v for k, v in results.items() if v is not None}
    summary = {
        "pairs": len(manifests),
        "exported": len(exported),
        "failed": sorted(k for k, v in results.items() if v is None),
        "coverage": {k: exported[k] for k in sorted(exported)},
    }
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    for stem in sorted(results):
        cov = results[stem]
        print(f"{stem}: " + (f"coverage={cov:.4f}" if cov is not None else "FAILED"))
    if not exported:
        raise ValidationError("all pairs failed")
    return EXIT_OK


def cmd_probe(args: argparse.Namespace) -> int:
    session = _prepare_session(args, args.manifest)
    time = Time(args.time)
    args.out.mkdir(parents=True, exist_ok=True)
    if args.pca:
        grid = session.grid(time)
        basis = fit_pca_auto(grid, max_components=3)
        write_rgb_png(pca_rgb(grid, basis), args.out / f"pca_{time.value.lower()}.png")
        shares = ", ".join(f"{s:.3f}" for s in basis.explained)
        print(f"explained shares: {shares}")
        return EXIT_OK
    if args.query is not None:
        cross = None
        if args.cross_time:
            other = time.other
            cross = (session.grid(other), session.proposals(other))
        matches = semantic_query(
            session.grid(time), session.proposals(time), args.query,
            top_n=args.top, image_size=session.image_size, cross=cross,
        )
        path = args.out / "ranking.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            for m in matches:
                fh.write(json.dumps({"id": m.record.id, "similarity": m.similarity},
                                    separators=(",", ":")) + "\n")
        print(f"ranked={len(matches)}")
        return EXIT_OK
    raise ValidationError("probe needs --pca or --query ID")


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app, mount_ui

    # fail fast with a usage error when the port is taken
    probe_sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe_sock.bind((args.host, args.port))
    except OSError as exc:
        raise ValidationError(f"cannot bind {args.host}:{args.port}: {exc}") from exc
    finally:
        probe_sock.close()

    app = create_app(session_dir=args.session_dir, max_sessions=args.max_sessions,
                     point_bridge_url=args.point_bridge_url)
    if args.ui_dir is not None:
        mount_ui(app, args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="changekit",
        description="Zero-shot change detection by bitemporal latent matching",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="run latent matching on one session")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_selection_flags(p)
    _add_preprocess_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("query", help="detect then filter by point query")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--point", action="append", required=True,
                   help="x,y,t (repeatable); t is T0 or T1")
    p.add_argument("--semantic-angle", type=float, default=60.0)
    _add_selection_flags(p)
    _add_preprocess_flags(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", type=Path, nargs="+", required=True)
    p.add_argument("--gt", type=Path, nargs="+", required=True)
    p.add_argument("--level", choices=["pixel", "instance", "both"], default="both")
    p.add_argument("--max-dets", type=int, default=1000)
    p.add_argument("--json", action="store_true", help="emit the full JSON report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="run a comparison method")
    p.add_argument("--method", choices=["cva", "cva-match", "mask-match"], required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--threshold", type=float, default=None, help="cva: fixed threshold (default otsu)")
    p.add_argument("--vote-threshold", type=float, default=0.5)
    p.add_argument("--iou-threshold", type=float, default=0.5)
    _add_preprocess_flags(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("export-labels", help="emit pseudo-label change maps for a manifest directory")
    p.add_argument("--manifest-dir", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--jobs", type=int, default=1)
    _add_selection_flags(p)
    _add_preprocess_flags(p)
    p.set_defaults(func=cmd_export_labels)

    p = sub.add_parser("probe", help="latent-space probes: PCA render or semantic query")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--time", choices=["T0", "T1"], default="T0")
    p.add_argument("--pca", action="store_true")
    p.add_argument("--query", type=int, default=None, help="proposal id to rank against")
    p.add_argument("--cross-time", action="store_true", help="rank proposals of the other time")
    p.add_argument("--top", type=int, default=None)
    _add_preprocess_flags(p)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("serve", help="run the interactive HTTP service")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--session-dir", type=Path, default=None)
    p.add_argument("--max-sessions", type=int, default=8)
    p.add_argument("--ui-dir", type=Path, default=None, help="serve built UI assets from this directory")
    p.add_argument("--point-bridge-url", default=None,
                   help="base URL of a live mask-decoder bridge for point queries")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FormatError, UnresolvablePointError, FileNotFoundError,
            NotADirectoryError, IsADirectoryError, PermissionError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_INPUT
    except EngineError as exc:
        logger.error("invariant violation: %s", exc)
        return EXIT_INVARIANT
    except Exception as exc:  # internal failure: never silently exit 0
        logger.error("internal error: %s", exc)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
