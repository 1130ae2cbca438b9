import { afterEach, describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError, describeError } from "./api.js";

function mockFetch(status: number, body: unknown): void {
  vi.stubGlobal("fetch", vi.fn(async () => ({
    ok: status >= 200 && status < 300,
    status,
    statusText: `status ${status}`,
    json: async () => body,
  })));
}

afterEach(() => vi.unstubAllGlobals());

describe("ApiClient", () => {
  it("lists slices from the base URL", async () => {
    mockFetch(200, [{ slice_id: "slice000", acceleration: 8, thumbnail: "" }]);
    const client = new ApiClient("http://host:1234");
    const slices = await client.listSlices();
    expect(slices[0].slice_id).toBe("slice000");
    expect(vi.mocked(fetch).mock.calls[0][0]).toBe("http://host:1234/slices");
  });

  it("escapes slice ids", async () => {
    mockFetch(200, {});
    await new ApiClient().getSlice("a/b");
    expect(vi.mocked(fetch).mock.calls[0][0]).toBe("/slice/a%2Fb");
  });

  it("posts SDR jobs as JSON", async () => {
    mockFetch(200, { slice_id: "s", reconstructions: [], diversity_matrix: [],
                     merged_detections: [], timing: { seconds: 0 } });
    const req = { slice_id: "s", boxes: [], n_rec: 3, n_opt: 50, radius: 3, seed: 7 };
    await new ApiClient().runSdr(req);
    const [, init] = vi.mocked(fetch).mock.calls[0];
    expect(init?.method).toBe("POST");
    expect(JSON.parse(String(init?.body))).toEqual(req);
  });

  it("raises ApiError with the server detail", async () => {
    mockFetch(422, { detail: "box list is empty" });
    await expect(new ApiClient().runSdr({
      slice_id: "s", boxes: [], n_rec: 3, n_opt: 50, radius: 3, seed: 7,
    })).rejects.toThrowError(ApiError);
  });
});

describe("describeError", () => {
  it("maps status codes to friendly text", () => {
    expect(describeError(new ApiError(408, "x"))).toMatch(/budget/);
    expect(describeError(new ApiError(429, "x"))).toMatch(/busy/);
    expect(describeError(new ApiError(422, "bad box"))).toMatch(/bad box/);
    expect(describeError(new Error("boom"))).toBe("boom");
  });
});
