"""Optional point-decode bridge: live mask decoding for the engine's point queries.

The engine service, when launched with --point-bridge-url, POSTs
``{x, y, time}`` to /decode and receives an RLE mask decoded at that point,
substituting its proposal-lookup rule with true point-prompt masks.
"""

# no postponed annotations here: fastapi resolves the handler's Request type
# at decoration time, and the import is deliberately local (optional extra)

from pathlib import Path

import numpy as np
from PIL import Image

from .backends import EncoderBackend
from .formats import encode_rle_counts


def create_bridge_app(backend: EncoderBackend, pre_image: Path, post_image: Path):
    from fastapi import FastAPI, HTTPException, Request

    images = {
        "T0": np.asarray(Image.open(pre_image).convert("RGB")),
        "T1": np.asarray(Image.open(post_image).convert("RGB")),
    }
    app = FastAPI(title="changekit point-decode bridge")

    @app.post("/decode")
    async def decode(request: Request):
        body = await request.json()
        try:
            x, y, time = float(body["x"]), float(body["y"]), str(body["time"])
        except (KeyError, TypeError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=f"bad request: {exc}")
        if time not in images:
            raise HTTPException(status_code=400, detail=f"time must be T0 or T1, got {time!r}")
        decode_fn = getattr(backend, "decode_point", None)
        if decode_fn is None:
            raise HTTPException(status_code=501, detail="backend has no point decoder")
        mask = decode_fn(images[time], (x, y))
        if mask is None or not mask.any():
            raise HTTPException(status_code=422, detail=f"no mask decodable at ({x}, {y})")
        return {
            "size": [int(mask.shape[0]), int(mask.shape[1])],
            "counts": encode_rle_counts(mask),
            "predicted_iou": 1.0,
            "stability_score": 1.0,
        }

    return app
