import type { SdrRequest, SdrResult, SliceDetail, SliceSummary } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, public detail: unknown) {
    super(typeof detail === "string" ? detail : JSON.stringify(detail));
  }
}

export class ApiClient {
  constructor(private baseUrl: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(`${this.baseUrl}${path}`, init);
    const body = await resp.json().catch(() => null);
    if (!resp.ok) {
      const detail = body && typeof body === "object" && "detail" in body
        ? (body as { detail: unknown }).detail
        : resp.statusText;
      throw new ApiError(resp.status, detail);
    }
    return body as T;
  }

  listSlices(): Promise<SliceSummary[]> {
    return this.request<SliceSummary[]>("/slices");
  }

  getSlice(sliceId: string): Promise<SliceDetail> {
    return this.request<SliceDetail>(`/slice/${encodeURIComponent(sliceId)}`);
  }

  runSdr(req: SdrRequest): Promise<SdrResult> {
    return this.request<SdrResult>("/sdr", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
  }
}

export function describeError(err: unknown): string {
  if (err instanceof ApiError) {
    if (err.status === 408) return "The run exceeded the server time budget — retry with fewer steps.";
    if (err.status === 429) return "All workers are busy — retry in a moment.";
    if (err.status === 422) return `Request rejected: ${err.message}`;
    return `Server error ${err.status}: ${err.message}`;
  }
  return err instanceof Error ? err.message : String(err);
}
