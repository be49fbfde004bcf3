/**
 * Edit-canvas geometry. Boxes live in normalized (cy, cx, h, w) coordinates
 * and are only projected to pixels for display, so zooming the canvas never
 * mutates data. Drag and resize return new normalized boxes; snapping reuses
 * the six alignment relations against the other boxes on the canvas.
 */

import type { BoxRow } from "./api.js";

export interface NormBox {
  cy: number;
  cx: number;
  h: number;
  w: number;
}

export interface PixelRect {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export const MIN_BOX_SIZE = 1e-4;
/** Snap engages when an alignment delta is below 0.5% of the canvas. */
export const SNAP_THRESHOLD = 0.005;

export type ResizeHandle = "nw" | "n" | "ne" | "e" | "se" | "s" | "sw" | "w";

export function rowToBox(row: BoxRow): NormBox {
  return { cy: row[0], cx: row[1], h: row[2], w: row[3] };
}

export function boxToRow(box: NormBox): BoxRow {
  return [box.cy, box.cx, box.h, box.w];
}

export function boxToPixels(box: NormBox, viewW: number, viewH: number): PixelRect {
  return {
    x0: (box.cx - box.w / 2) * viewW,
    y0: (box.cy - box.h / 2) * viewH,
    x1: (box.cx + box.w / 2) * viewW,
    y1: (box.cy + box.h / 2) * viewH,
  };
}

const clamp01 = (v: number): number => Math.min(1, Math.max(0, v));

export function applyDrag(
  box: NormBox,
  dxPx: number,
  dyPx: number,
  viewW: number,
  viewH: number,
): NormBox {
  return {
    ...box,
    cy: clamp01(box.cy + dyPx / viewH),
    cx: clamp01(box.cx + dxPx / viewW),
  };
}

/** Resize by moving one handle; the opposite edge stays fixed. */
export function applyResize(
  box: NormBox,
  handle: ResizeHandle,
  dxPx: number,
  dyPx: number,
  viewW: number,
  viewH: number,
): NormBox {
  const dx = dxPx / viewW;
  const dy = dyPx / viewH;
  let top = box.cy - box.h / 2;
  let bottom = box.cy + box.h / 2;
  let left = box.cx - box.w / 2;
  let right = box.cx + box.w / 2;
  if (handle.includes("n")) top = Math.min(top + dy, bottom - MIN_BOX_SIZE);
  if (handle.includes("s")) bottom = Math.max(bottom + dy, top + MIN_BOX_SIZE);
  if (handle.includes("w")) left = Math.min(left + dx, right - MIN_BOX_SIZE);
  if (handle.includes("e")) right = Math.max(right + dx, left + MIN_BOX_SIZE);
  top = clamp01(top);
  bottom = clamp01(bottom);
  left = clamp01(left);
  right = clamp01(right);
  return {
    cy: (top + bottom) / 2,
    cx: (left + right) / 2,
    h: Math.max(MIN_BOX_SIZE, bottom - top),
    w: Math.max(MIN_BOX_SIZE, right - left),
  };
}

interface SnapCandidate {
  axis: "x" | "y";
  /** shift to apply to the box center along the axis */
  shift: number;
  delta: number;
}

function edgeValues(box: NormBox): { x: number[]; y: number[] } {
  return {
    x: [box.cx - box.w / 2, box.cx, box.cx + box.w / 2],
    y: [box.cy - box.h / 2, box.cy, box.cy + box.h / 2],
  };
}

/**
 * Snap the box to the nearest of the six alignment relations against any
 * other box, per axis, when the delta is under the threshold.
 */
export function applySnap(
  box: NormBox,
  others: NormBox[],
  threshold: number = SNAP_THRESHOLD,
): NormBox {
  const mine = edgeValues(box);
  let best: { x: SnapCandidate | null; y: SnapCandidate | null } = { x: null, y: null };
  for (const other of others) {
    const theirs = edgeValues(other);
    for (const axis of ["x", "y"] as const) {
      for (const myValue of mine[axis]) {
        for (const theirValue of theirs[axis]) {
          const delta = Math.abs(myValue - theirValue);
          if (delta < threshold && (!best[axis] || delta < best[axis]!.delta)) {
            best[axis] = { axis, shift: theirValue - myValue, delta };
          }
        }
      }
    }
  }
  return {
    cy: box.cy + (best.y ? best.y.shift : 0),
    cx: box.cx + (best.x ? best.x.shift : 0),
    h: box.h,
    w: box.w,
  };
}

export interface PatchFn {
  (elementId: number, box: BoxRow): Promise<BoxRow[]>;
}

/**
 * Orchestrates one element's gesture lifecycle: pending box during the drag,
 * PATCH on release, revert to the last server-accepted box when the server
 * rejects the edit.
 */
export class EditController {
  private pending: NormBox | null = null;

  constructor(
    private readonly patch: PatchFn,
    private lastValid: NormBox,
    public readonly elementId: number,
  ) {}

  get current(): NormBox {
    return this.pending ?? this.lastValid;
  }

  preview(box: NormBox): NormBox {
    this.pending = box;
    return box;
  }

  async commit(): Promise<{ box: NormBox; reverted: boolean }> {
    if (!this.pending) return { box: this.lastValid, reverted: false };
    const attempt = this.pending;
    this.pending = null;
    try {
      await this.patch(this.elementId, boxToRow(attempt));
      this.lastValid = attempt;
      return { box: attempt, reverted: false };
    } catch {
      return { box: this.lastValid, reverted: true };
    }
  }
}
