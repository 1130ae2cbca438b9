import { describe, expect, it } from "vitest";

import { boxFromDrag, clipBox, hitTest, resizeBox, translateBox } from "./boxes.js";

describe("boxFromDrag", () => {
  it("normalizes corner order", () => {
    expect(boxFromDrag(50, 60, 10, 10)).toEqual({ x_min: 10, y_min: 10, x_max: 50, y_max: 60 });
  });

  it("builds the box for a simple gesture", () => {
    expect(boxFromDrag(10, 10, 50, 60)).toEqual({ x_min: 10, y_min: 10, x_max: 50, y_max: 60 });
  });

  it("discards degenerate drags under 3 px", () => {
    expect(boxFromDrag(10, 10, 12, 40)).toBeNull();
    expect(boxFromDrag(10, 10, 40, 11)).toBeNull();
  });
});

describe("clipBox", () => {
  it("clips past the right edge", () => {
    const box = clipBox({ x_min: 100, y_min: 10, x_max: 140, y_max: 50 }, 128);
    expect(box.x_max).toBe(128);
    expect(box.x_min).toBe(100);
  });

  it("clips negative coordinates", () => {
    const box = clipBox({ x_min: -5, y_min: -9, x_max: 20, y_max: 30 }, 128);
    expect(box.x_min).toBe(0);
    expect(box.y_min).toBe(0);
  });

  it("preserves a minimum extent", () => {
    const box = clipBox({ x_min: 127.5, y_min: 0, x_max: 140, y_max: 10 }, 128);
    expect(box.x_max - box.x_min).toBeGreaterThan(0);
  });
});

describe("translateBox", () => {
  it("moves freely inside the image", () => {
    const box = translateBox({ x_min: 10, y_min: 10, x_max: 20, y_max: 20 }, 5, -3, 128);
    expect(box).toEqual({ x_min: 15, y_min: 7, x_max: 25, y_max: 17 });
  });

  it("stops at the border keeping size", () => {
    const box = translateBox({ x_min: 110, y_min: 10, x_max: 126, y_max: 26 }, 50, 0, 128);
    expect(box.x_max).toBe(128);
    expect(box.x_max - box.x_min).toBe(16);
  });
});

describe("resizeBox", () => {
  const base = { x_min: 20, y_min: 20, x_max: 40, y_max: 40 };

  it("drags the south-east corner", () => {
    expect(resizeBox(base, "se", 50, 55, 128)).toEqual(
      { x_min: 20, y_min: 20, x_max: 50, y_max: 55 });
  });

  it("flips when dragged across the opposite corner", () => {
    const box = resizeBox(base, "se", 10, 12, 128);
    expect(box.x_min).toBeLessThan(box.x_max);
    expect(box.y_min).toBeLessThan(box.y_max);
  });

  it("clips to image bounds", () => {
    const box = resizeBox(base, "se", 500, 500, 128);
    expect(box.x_max).toBe(128);
    expect(box.y_max).toBe(128);
  });
});

describe("hitTest", () => {
  const boxes = [
    { x_min: 10, y_min: 10, x_max: 30, y_max: 30 },
    { x_min: 20, y_min: 20, x_max: 60, y_max: 60 },
  ];

  it("prefers corner handles", () => {
    expect(hitTest(boxes, 10, 10)).toEqual({ index: 0, kind: "corner", corner: "nw" });
    expect(hitTest(boxes, 60, 60)).toEqual({ index: 1, kind: "corner", corner: "se" });
  });

  it("falls back to the topmost body", () => {
    // (22, 27) is inside both boxes and clear of every handle
    expect(hitTest(boxes, 22, 27)).toEqual({ index: 1, kind: "body" });
    expect(hitTest(boxes, 15, 15)).toEqual({ index: 0, kind: "body" });
  });

  it("misses empty space", () => {
    expect(hitTest(boxes, 100, 100)).toBeNull();
  });
});
