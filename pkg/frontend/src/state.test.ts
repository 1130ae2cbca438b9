import { describe, expect, it } from "vitest";

import { addBox, canRun, clampParams, deleteBox, failRun, finishRun, initialState,
         replaceBox, selectSlice, setParams, startRun } from "./state.js";
import type { SdrResult } from "./types.js";

const BOX = { x_min: 10, y_min: 10, x_max: 20, y_max: 20 };

function fakeResult(): SdrResult {
  return {
    slice_id: "slice000",
    reconstructions: [],
    diversity_matrix: [[0]],
    merged_detections: [],
    timing: { seconds: 1.0 },
  };
}

describe("annotation state", () => {
  it("selecting a slice clears boxes but keeps the last gallery", () => {
    let s = initialState();
    s = selectSlice(s, "slice000", 128);
    s = addBox(s, BOX);
    s = finishRun(startRun(s), fakeResult());
    s = selectSlice(s, "slice001", 128);
    expect(s.boxes).toEqual([]);
    expect(s.lastResult).not.toBeNull();
  });

  it("box edits are positional", () => {
    let s = addBox(addBox(initialState(), BOX), { ...BOX, x_min: 40, x_max: 50 });
    s = replaceBox(s, 1, { ...BOX, x_min: 45, x_max: 55 });
    expect(s.boxes[1].x_min).toBe(45);
    s = deleteBox(s, 0);
    expect(s.boxes).toHaveLength(1);
    expect(s.boxes[0].x_min).toBe(45);
  });

  it("run gating needs a slice, a box, and no pending request", () => {
    let s = initialState();
    expect(canRun(s)).toBe(false);
    s = selectSlice(s, "slice000", 128);
    expect(canRun(s)).toBe(false);
    s = addBox(s, BOX);
    expect(canRun(s)).toBe(true);
    s = startRun(s);
    expect(canRun(s)).toBe(false);
  });

  it("failures keep state and surface the message", () => {
    let s = addBox(selectSlice(initialState(), "slice000", 128), BOX);
    s = finishRun(startRun(s), fakeResult());
    s = failRun(startRun(s), "budget exceeded");
    expect(s.error).toBe("budget exceeded");
    expect(s.pending).toBe(false);
    expect(s.lastResult).not.toBeNull();
    expect(s.boxes).toHaveLength(1);
  });

  it("params clamp to server limits", () => {
    expect(clampParams({ n_rec: 100, n_opt: 9999, radius: 42, seed: 3.7 }))
      .toEqual({ n_rec: 8, n_opt: 200, radius: 10, seed: 4 });
    expect(clampParams({ n_rec: 1, n_opt: -5, radius: 0, seed: 0 }))
      .toEqual({ n_rec: 2, n_opt: 0, radius: 0.1, seed: 0 });
    const s = setParams(initialState(), { n_rec: 50 });
    expect(s.params.n_rec).toBe(8);
  });
});
