import { describe, expect, it } from "vitest";

import { ApiError, ChangeProposalDto, EngineClient } from "../src/api.js";

function mockFetch(handler: (input: string, init?: RequestInit) => { status: number; body: unknown }) {
  const calls: { input: string; init?: RequestInit }[] = [];
  const impl = async (input: string, init?: RequestInit): Promise<Response> => {
    calls.push({ input, init });
    const { status, body } = handler(input, init);
    return new Response(JSON.stringify(body), { status });
  };
  return { impl, calls };
}

const CHANGES: ChangeProposalDto[] = [
  { id: 3, source_time: "T0", size: [8, 8], counts: [0, 4, 60], score: 0.91, angle_deg: 155.2 },
  { id: 1, source_time: "T1", size: [8, 8], counts: [4, 4, 56], score: 0.55, angle_deg: 123.4 },
];

describe("engine client", () => {
  it("passes the server's change list through verbatim", async () => {
    const { impl } = mockFetch(() => ({ status: 200, body: CHANGES }));
    const client = new EngineClient("http://engine", impl);
    const got = await client.getChanges("s1", { mode: "threshold", angle: 155 });
    expect(got).toEqual(CHANGES); // no local recomputation or reordering
  });

  it("encodes selection params in the query string", async () => {
    const { impl, calls } = mockFetch(() => ({ status: 200, body: [] }));
    const client = new EngineClient("http://engine", impl);
    await client.getChanges("s1", { mode: "topk", k: 7 });
    expect(calls[0].input).toBe("http://engine/sessions/s1/changes?mode=topk&k=7");
  });

  it("posts query points with the base selection", async () => {
    const { impl, calls } = mockFetch(() => ({ status: 200, body: [] }));
    const client = new EngineClient("http://engine", impl);
    await client.postQuery("s1", [{ x: 4, y: 5, t: "T0" }], 45, { mode: "threshold", angle: 155 });
    const body = JSON.parse(String(calls[0].init?.body));
    expect(body).toEqual({
      points: [{ x: 4, y: 5, t: "T0" }],
      semantic_angle: 45,
      mode: "threshold",
      angle: 155,
      k: undefined,
    });
  });

  it("surfaces the server's error detail", async () => {
    const { impl } = mockFetch(() => ({
      status: 422,
      body: { detail: "unresolvable point (1.0, 1.0): nearest proposal centroid is 288.2 px away" },
    }));
    const client = new EngineClient("http://engine", impl);
    await expect(client.postQuery("s1", [{ x: 1, y: 1, t: "T0" }], 45, { mode: "threshold" }))
      .rejects.toThrowError(ApiError);
    try {
      await client.postQuery("s1", [{ x: 1, y: 1, t: "T0" }], 45, { mode: "threshold" });
    } catch (err) {
      expect((err as ApiError).status).toBe(422);
      expect((err as ApiError).detail).toContain("px away");
    }
  });

  it("builds overlay and latent URLs", () => {
    const client = new EngineClient("http://engine");
    expect(client.overlayUrl("s1", "T0", [1, 2, 3])).toBe(
      "http://engine/sessions/s1/overlay?time=T0&ids=1,2,3",
    );
    expect(client.latentUrl("s1", "T1")).toBe("http://engine/sessions/s1/latent?time=T1");
  });
});
