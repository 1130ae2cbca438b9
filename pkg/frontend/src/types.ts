export interface Box {
  x_min: number;
  y_min: number;
  x_max: number;
  y_max: number;
}

export interface SliceSummary {
  slice_id: string;
  acceleration: number;
  thumbnail: string; // base64 PNG
}

export interface SliceDetail {
  slice_id: string;
  acceleration: number;
  image_size: number;
  image: string; // base64 PNG
  gt_boxes?: (Box & { class_id: number })[];
}

export interface SdrRequest {
  slice_id: string;
  boxes: Box[];
  n_rec: number;
  n_opt: number;
  radius: number;
  seed: number;
}

export interface ReconstructionView {
  png_base64: string;
  residual: number;
  distance_to_initial: number;
}

export interface MergedDetection {
  box: [number, number, number, number];
  class_id: number;
  score: number;
  per_recon_scores: number[];
}

export interface SdrResult {
  slice_id: string;
  reconstructions: ReconstructionView[];
  diversity_matrix: number[][];
  merged_detections: MergedDetection[];
  timing: { seconds: number };
}

export interface SdrParams {
  n_rec: number;
  n_opt: number;
  radius: number;
  seed: number;
}
