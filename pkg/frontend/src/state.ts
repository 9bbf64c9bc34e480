/**
 * View state and its pure transitions.
 *
 * Invariants kept here: the angle slider snaps to whole degrees, query
 * points accumulate across clicks but are cleared by a mode switch or a
 * session change, and "undo last point" pops exactly one.
 */

import type { QueryPointDto, SelectionParams } from "./api.js";

export type Mode = "auto" | "threshold" | "topk" | "query";
export type OverlayLayer = "changes" | "proposals" | "latent";

export interface ViewState {
  sessionId: string | null;
  imageSize: [number, number] | null;
  mode: Mode;
  angleDeg: number;
  k: number;
  semanticAngleDeg: number;
  queryPoints: QueryPointDto[];
  overlayLayer: OverlayLayer;
}

export const DEFAULT_ANGLE = 155;

export function initialState(): ViewState {
  return {
    sessionId: null,
    imageSize: null,
    mode: "auto",
    angleDeg: DEFAULT_ANGLE,
    k: 10,
    semanticAngleDeg: 60,
    queryPoints: [],
    overlayLayer: "changes",
  };
}

export function withSession(
  state: ViewState,
  sessionId: string,
  imageSize: [number, number],
): ViewState {
  // a new session invalidates any accumulated clicks
  return { ...state, sessionId, imageSize, queryPoints: [] };
}

export function setMode(state: ViewState, mode: Mode): ViewState {
  if (mode === state.mode) return state;
  return { ...state, mode, queryPoints: [] };
}

export function setAngle(state: ViewState, angle: number): ViewState {
  const snapped = Math.min(180, Math.max(0, Math.round(angle)));
  return { ...state, angleDeg: snapped };
}

export function setK(state: ViewState, k: number): ViewState {
  return { ...state, k: Math.max(1, Math.round(k)) };
}

export function setSemanticAngle(state: ViewState, angle: number): ViewState {
  return { ...state, semanticAngleDeg: Math.min(180, Math.max(0, angle)) };
}

export function setLayer(state: ViewState, layer: OverlayLayer): ViewState {
  return { ...state, overlayLayer: layer };
}

export function addPoint(state: ViewState, point: QueryPointDto): ViewState {
  return { ...state, queryPoints: [...state.queryPoints, point] };
}

export function undoPoint(state: ViewState): ViewState {
  if (state.queryPoints.length === 0) return state;
  return { ...state, queryPoints: state.queryPoints.slice(0, -1) };
}

/** Base selection sent to the server; the query mode filters on top of it. */
export function selectionParams(state: ViewState): SelectionParams {
  switch (state.mode) {
    case "auto":
      return { mode: "threshold", angle: DEFAULT_ANGLE };
    case "threshold":
    case "query":
      return { mode: "threshold", angle: state.angleDeg };
    case "topk":
      return { mode: "topk", k: state.k };
  }
}
