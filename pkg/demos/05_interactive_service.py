"""
The interactive loop over HTTP
==============================

Starts the session service in-process, loads a fixture pair, re-thresholds
through the cached candidates (the slider interaction), and narrows to one
object class with point queries (the click interaction).
"""

import tempfile
import threading
import time
from pathlib import Path

import httpx
import numpy as np
import uvicorn

from changekit.service import create_app
from changekit.synthetic import cluster_query_point, cluster_session, random_session, write_session

tmp = Path(tempfile.mkdtemp(prefix="changekit_demo_"))
manifest = write_session(cluster_session(), tmp, name="cluster")
write_session(random_session(np.random.default_rng(11), image_size=(64, 64), grid_size=(8, 8),
                             d_m=16, max_proposals_per_side=10), tmp, name="random")
print(f"fixture session at {manifest}")

app = create_app(session_dir=tmp)
config = uvicorn.Config(app, host="127.0.0.1", port=8777, log_level="error")
server = uvicorn.Server(config)
thread = threading.Thread(target=server.run, daemon=True)
thread.start()
while not server.started:
    time.sleep(0.05)

base = "http://127.0.0.1:8777"
with httpx.Client(base_url=base) as client:
    sid = client.post("/sessions", json={"manifest_path": "cluster.json"}).json()["session_id"]
    print(f"session {sid} created; candidates cached once")

    print("\ndragging the angle slider:")
    for angle in (180, 160, 120, 60, 0):
        n = len(client.get(f"/sessions/{sid}/changes",
                           params={"mode": "threshold", "angle": angle}).json())
        print(f"  angle {angle:>3}deg -> {n} overlays")

    x, y, t = cluster_query_point(cluster_session(), "A")
    print(f"\nclicking ({x:.0f}, {y:.0f}) on pane {t.value}:")
    filtered = client.post(f"/sessions/{sid}/query", json={
        "points": [{"x": x, "y": y, "t": t.value}],
        "semantic_angle": 45.0,
        "mode": "threshold", "angle": 155.0,
    }).json()
    print(f"  {len(filtered)} object-centric changes kept "
          f"({sorted((c['source_time'], c['id']) for c in filtered)})")

    overlay = client.get(f"/sessions/{sid}/overlay",
                         params={"time": "T0", "ids": ",".join(str(c["id"]) for c in filtered if c["source_time"] == "T0")})
    (tmp / "overlay.png").write_bytes(overlay.content)
    print(f"overlay PNG: {len(overlay.content)} bytes -> {tmp / 'overlay.png'}")

    # the latent view needs a grid with full-rank structure; use the random fixture
    sid2 = client.post("/sessions", json={"manifest_path": "random.json"}).json()["session_id"]
    latent = client.get(f"/sessions/{sid2}/latent", params={"time": "T0"})
    (tmp / "latent.png").write_bytes(latent.content)
    print(f"latent PCA render: {'ok' if latent.status_code == 200 else latent.status_code} "
          f"-> {tmp / 'latent.png'}")

server.should_exit = True
thread.join(timeout=5)
print("\nserver stopped")
