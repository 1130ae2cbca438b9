import type { Box, SdrParams, SdrResult } from "./types.js";

export interface AnnotationState {
  sliceId: string | null;
  imageSize: number;
  boxes: Box[];
  params: SdrParams;
  lastResult: SdrResult | null;
  pending: boolean;
  error: string | null;
}

export const SERVER_LIMITS = { n_rec: 8, n_opt: 200, radius: 10 };

export function initialState(): AnnotationState {
  return {
    sliceId: null,
    imageSize: 0,
    boxes: [],
    params: { n_rec: 3, n_opt: 50, radius: 3, seed: 7 },
    lastResult: null,
    pending: false,
    error: null,
  };
}

export function selectSlice(state: AnnotationState, sliceId: string,
                            imageSize: number): AnnotationState {
  // keep the previous gallery visible until the next run completes
  return { ...state, sliceId, imageSize, boxes: [], error: null };
}

export function addBox(state: AnnotationState, box: Box): AnnotationState {
  return { ...state, boxes: [...state.boxes, box] };
}

export function replaceBox(state: AnnotationState, index: number, box: Box): AnnotationState {
  const boxes = state.boxes.slice();
  boxes[index] = box;
  return { ...state, boxes };
}

export function deleteBox(state: AnnotationState, index: number): AnnotationState {
  return { ...state, boxes: state.boxes.filter((_, i) => i !== index) };
}

export function clampParams(params: SdrParams): SdrParams {
  return {
    n_rec: Math.min(Math.max(Math.round(params.n_rec), 2), SERVER_LIMITS.n_rec),
    n_opt: Math.min(Math.max(Math.round(params.n_opt), 0), SERVER_LIMITS.n_opt),
    radius: Math.min(Math.max(params.radius, 0.1), SERVER_LIMITS.radius),
    seed: Math.round(params.seed),
  };
}

export function setParams(state: AnnotationState, params: Partial<SdrParams>): AnnotationState {
  return { ...state, params: clampParams({ ...state.params, ...params }) };
}

export function startRun(state: AnnotationState): AnnotationState {
  return { ...state, pending: true, error: null };
}

export function finishRun(state: AnnotationState, result: SdrResult): AnnotationState {
  return { ...state, pending: false, lastResult: result, error: null };
}

export function failRun(state: AnnotationState, message: string): AnnotationState {
  // errors keep the previous gallery and the drawn boxes intact
  return { ...state, pending: false, error: message };
}

export function canRun(state: AnnotationState): boolean {
  return state.sliceId !== null && state.boxes.length > 0 && !state.pending;
}
