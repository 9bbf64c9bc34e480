"""Encoder backends: a deterministic synthetic model and a SAM loader.

A backend declares its grid geometry, encodes an image into a raw feature
grid together with the demodulation parameters of its final normalization
layer, and proposes candidate object masks from grid prompts. The synthetic
backend needs no weights and exists so the full export pipeline (and
everything downstream) can run hermetically; the SAM backend loads real
pretrained weights when available.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np
from scipy import ndimage

from .demodulate import DemodulationParams


@dataclass(frozen=True)
class RawCandidate:
    mask: np.ndarray  # dense bool (h, w)
    predicted_iou: float
    stability_score: float
    prompt_point: tuple[float, float]  # (x, y)


class EncoderBackend(Protocol):
    def grid_size(self, image_size: tuple[int, int]) -> tuple[int, int]: ...

    @property
    def d_m(self) -> int: ...

    def encode(self, image: np.ndarray) -> tuple[np.ndarray, DemodulationParams]: ...

    def propose(self, image: np.ndarray, points_per_side: int) -> list[RawCandidate]: ...


class ModelLoadError(RuntimeError):
    pass


def _grid_prompt_points(image_size: tuple[int, int], points_per_side: int) -> list[tuple[float, float]]:
    """(x, y) prompt coordinates on a regular points_per_side x points_per_side grid."""
    h, w = image_size
    pts = []
    for i in range(points_per_side):
        for j in range(points_per_side):
            y = (i + 0.5) * h / points_per_side
            x = (j + 0.5) * w / points_per_side
            pts.append((x, y))
    return pts


class SyntheticEncoder:
    """Deterministic stand-in for a real image encoder.

    Features are fixed sinusoidal projections of per-cell mean colors,
    standardized per position (the layer-norm part) and re-modulated by a
    fixed affine (w; b) so demodulation has something real to undo.
    Proposals come from color-flood region growing at grid prompts.
    """

    def __init__(self, d_m: int = 256, patch_size: int = 16, color_tolerance: int = 12, seed: int = 90817):
        self._d_m = d_m
        self.patch_size = patch_size
        self.color_tolerance = color_tolerance
        rng = np.random.default_rng(seed + d_m)
        self._proj = rng.normal(0.0, 2.0, size=(d_m, 4))
        self._scale = rng.uniform(0.5, 1.5, size=d_m)
        self._shift = rng.normal(0.0, 3.0, size=d_m)

    @property
    def d_m(self) -> int:
        return self._d_m

    def grid_size(self, image_size: tuple[int, int]) -> tuple[int, int]:
        h, w = image_size
        return (max(1, h // self.patch_size), max(1, w // self.patch_size))

    def _cell_means(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape[:2]
        he, we = self.grid_size((h, w))
        rows = (np.arange(h, dtype=np.int64) * he) // h
        cols = (np.arange(w, dtype=np.int64) * we) // w
        cell = rows[:, None] * we + cols[None, :]
        flat = cell.ravel()
        out = np.zeros((he * we, 3), dtype=np.float64)
        counts = np.bincount(flat, minlength=he * we).astype(np.float64)
        for ch in range(3):
            out[:, ch] = np.bincount(flat, weights=image[:, :, ch].ravel().astype(np.float64),
                                     minlength=he * we) / counts
        return out.reshape(he, we, 3) / 255.0

    def encode(self, image: np.ndarray) -> tuple[np.ndarray, DemodulationParams]:
        means = self._cell_means(image)
        he, we, _ = means.shape
        args = np.concatenate([means, np.ones((he, we, 1))], axis=2)  # (he, we, 4)
        feats = np.sin(args @ self._proj.T)  # (he, we, d_m)
        mu = feats.mean(axis=2, keepdims=True)
        sd = feats.std(axis=2, keepdims=True)
        u = np.where(sd > 1e-9, (feats - mu) / np.maximum(sd, 1e-9), 0.0)
        raw = (self._scale * u + self._shift).astype(np.float32)
        return raw, DemodulationParams(scale=self._scale.copy(), shift=self._shift.copy())

    def decode_point(self, image: np.ndarray, point: tuple[float, float]) -> Optional[np.ndarray]:
        """Region-grow the component of similar color around a point; None off-image."""
        h, w = image.shape[:2]
        r, c = int(point[1]), int(point[0])
        if not (0 <= r < h and 0 <= c < w):
            return None
        seed_color = image[r, c].astype(np.int64)
        similar = (np.abs(image.astype(np.int64) - seed_color) <= self.color_tolerance).all(axis=2)
        labels, _ = ndimage.label(similar)
        return labels == labels[r, c]

    def propose(self, image: np.ndarray, points_per_side: int) -> list[RawCandidate]:
        h, w = image.shape[:2]
        out = []
        for (x, y) in _grid_prompt_points((h, w), points_per_side):
            mask = self.decode_point(image, (x, y))
            if mask is None or not mask.any():
                continue
            ys, xs = np.nonzero(mask)
            bbox_area = (ys.max() - ys.min() + 1) * (xs.max() - xs.min() + 1)
            solidity = float(mask.sum()) / float(bbox_area)
            seed_color = image[int(y), int(x)].astype(np.int64)
            tight = (np.abs(image.astype(np.int64) - seed_color) <= self.color_tolerance // 2).all(axis=2)
            stability = float((mask & tight).sum()) / float(mask.sum())
            out.append(RawCandidate(
                mask=mask,
                predicted_iou=min(1.0, max(0.0, solidity)),
                stability_score=min(1.0, max(0.0, stability)),
                prompt_point=(x, y),
            ))
        return out


class SamEncoder:
    """Segment-anything backend: real encoder features and point-grid proposals.

    Needs torch, the segment-anything package, and a pretrained checkpoint.
    The demodulation affine is read from the final LayerNorm2d of the image
    encoder's neck. Raw candidates are exported unfiltered; the engine owns
    the quality thresholds and NMS.
    """

    def __init__(self, checkpoint: str, model_type: str = "vit_b", device: str = "cpu"):
        try:
            import torch  # noqa: F401
            from segment_anything import sam_model_registry
        except ImportError as exc:
            raise ModelLoadError(
                "the sam backend needs torch and segment-anything installed"
            ) from exc
        try:
            self._sam = sam_model_registry[model_type](checkpoint=checkpoint)
        except (FileNotFoundError, KeyError, RuntimeError) as exc:
            raise ModelLoadError(f"cannot load {model_type} weights from {checkpoint}: {exc}") from exc
        self._sam.to(device)
        self._sam.eval()
        self._device = device
        neck = self._sam.image_encoder.neck
        ln = neck[-1]
        self._params = DemodulationParams(
            scale=ln.weight.detach().cpu().numpy().astype(np.float64),
            shift=ln.bias.detach().cpu().numpy().astype(np.float64),
        )
        self._d = int(self._params.scale.shape[0])
        self._encoder_input = int(self._sam.image_encoder.img_size)  # 1024
        self._grid = self._encoder_input // 16  # ViT patch stride

    @property
    def d_m(self) -> int:
        return self._d

    def grid_size(self, image_size: tuple[int, int]) -> tuple[int, int]:
        # SAM scales the longest side to the encoder input and pads bottom/right;
        # the exported grid is cropped to the un-padded region
        h, w = image_size
        scale = self._encoder_input / max(h, w)
        he = max(1, round(self._grid * h * scale / self._encoder_input))
        we = max(1, round(self._grid * w * scale / self._encoder_input))
        return (he, we)

    def encode(self, image: np.ndarray) -> tuple[np.ndarray, DemodulationParams]:
        import torch
        from segment_anything.utils.transforms import ResizeLongestSide

        transform = ResizeLongestSide(self._encoder_input)
        x = transform.apply_image(image)
        t = torch.as_tensor(x, device=self._device).permute(2, 0, 1).contiguous()[None]
        t = self._sam.preprocess(t)
        with torch.no_grad():
            feats = self._sam.image_encoder(t)  # (1, d, grid, grid)
        grid = feats[0].permute(1, 2, 0).cpu().numpy().astype(np.float32)
        he, we = self.grid_size((image.shape[0], image.shape[1]))
        return grid[:he, :we], self._params

    def propose(self, image: np.ndarray, points_per_side: int) -> list[RawCandidate]:
        from segment_anything import SamAutomaticMaskGenerator

        generator = SamAutomaticMaskGenerator(
            self._sam,
            points_per_side=points_per_side,
            pred_iou_thresh=0.0,
            stability_score_thresh=0.0,
            box_nms_thresh=1.0,  # raw candidates: the engine applies NMS
        )
        out = []
        for ann in generator.generate(image):
            point = ann.get("point_coords", [[0.0, 0.0]])[0]
            out.append(RawCandidate(
                mask=np.asarray(ann["segmentation"], dtype=bool),
                predicted_iou=float(np.clip(ann["predicted_iou"], 0.0, 1.0)),
                stability_score=float(np.clip(ann["stability_score"], 0.0, 1.0)),
                prompt_point=(float(point[0]), float(point[1])),
            ))
        return out

    def decode_point(self, image: np.ndarray, point: tuple[float, float]) -> Optional[np.ndarray]:
        import torch  # noqa: F401
        from segment_anything import SamPredictor

        predictor = SamPredictor(self._sam)
        predictor.set_image(image)
        masks, scores, _ = predictor.predict(
            point_coords=np.array([[point[0], point[1]]]),
            point_labels=np.array([1]),
            multimask_output=True,
        )
        best = int(np.argmax(scores))
        mask = np.asarray(masks[best], dtype=bool)
        return mask if mask.any() else None


def make_backend(
    name: str,
    checkpoint: Optional[str] = None,
    model_type: str = "vit_b",
    d_m: int = 256,
    patch_size: int = 16,
) -> EncoderBackend:
    if name == "synthetic":
        return SyntheticEncoder(d_m=d_m, patch_size=patch_size)
    if name == "sam":
        if checkpoint is None:
            raise ModelLoadError("the sam backend needs --checkpoint")
        return SamEncoder(checkpoint=checkpoint, model_type=model_type)
    raise ModelLoadError(f"unknown backend {name!r}")
