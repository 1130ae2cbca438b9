import type { Box } from "./types.js";

export const MIN_DRAG_PX = 3;
export const HANDLE_RADIUS = 5;

/** Turn a drag gesture (any corner order) into a box, or null if degenerate. */
export function boxFromDrag(x0: number, y0: number, x1: number, y1: number): Box | null {
  const box = {
    x_min: Math.min(x0, x1),
    y_min: Math.min(y0, y1),
    x_max: Math.max(x0, x1),
    y_max: Math.max(y0, y1),
  };
  if (box.x_max - box.x_min < MIN_DRAG_PX || box.y_max - box.y_min < MIN_DRAG_PX) {
    return null;
  }
  return box;
}

/** Snap-clip a box to the image, preserving at least a 1 px extent. */
export function clipBox(box: Box, size: number): Box {
  const x_min = Math.max(0, Math.min(box.x_min, size - 1));
  const y_min = Math.max(0, Math.min(box.y_min, size - 1));
  return {
    x_min,
    y_min,
    x_max: Math.min(size, Math.max(box.x_max, x_min + 1)),
    y_max: Math.min(size, Math.max(box.y_max, y_min + 1)),
  };
}

export function translateBox(box: Box, dx: number, dy: number, size: number): Box {
  const w = box.x_max - box.x_min;
  const h = box.y_max - box.y_min;
  const x_min = Math.max(0, Math.min(box.x_min + dx, size - w));
  const y_min = Math.max(0, Math.min(box.y_min + dy, size - h));
  return { x_min, y_min, x_max: x_min + w, y_max: y_min + h };
}

export type Corner = "nw" | "ne" | "sw" | "se";

export function resizeBox(box: Box, corner: Corner, x: number, y: number, size: number): Box {
  const next = { ...box };
  if (corner === "nw" || corner === "sw") next.x_min = x;
  else next.x_max = x;
  if (corner === "nw" || corner === "ne") next.y_min = y;
  else next.y_max = y;
  const fixed = {
    x_min: Math.min(next.x_min, next.x_max),
    y_min: Math.min(next.y_min, next.y_max),
    x_max: Math.max(next.x_min, next.x_max),
    y_max: Math.max(next.y_min, next.y_max),
  };
  if (fixed.x_max - fixed.x_min < 1) fixed.x_max = fixed.x_min + 1;
  if (fixed.y_max - fixed.y_min < 1) fixed.y_max = fixed.y_min + 1;
  return clipBox(fixed, size);
}

export interface Hit {
  index: number;
  kind: "corner" | "body";
  corner?: Corner;
}

/** Topmost hit first: corner handles take priority over box bodies. */
export function hitTest(boxes: Box[], x: number, y: number): Hit | null {
  for (let i = boxes.length - 1; i >= 0; i--) {
    const b = boxes[i];
    const corners: [Corner, number, number][] = [
      ["nw", b.x_min, b.y_min],
      ["ne", b.x_max, b.y_min],
      ["sw", b.x_min, b.y_max],
      ["se", b.x_max, b.y_max],
    ];
    for (const [corner, cx, cy] of corners) {
      if (Math.hypot(x - cx, y - cy) <= HANDLE_RADIUS) {
        return { index: i, kind: "corner", corner };
      }
    }
  }
  for (let i = boxes.length - 1; i >= 0; i--) {
    const b = boxes[i];
    if (x >= b.x_min && x <= b.x_max && y >= b.y_min && y <= b.y_max) {
      return { index: i, kind: "body" };
    }
  }
  return null;
}
