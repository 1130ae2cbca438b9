import { HANDLE_RADIUS } from "./boxes.js";
import { heatmapRgba, signedDifference } from "./diff.js";
import type { Box, MergedDetection } from "./types.js";

export function loadPngImage(base64: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error("failed to decode image"));
    img.src = `data:image/png;base64,${base64}`;
  });
}

export function drawSlice(canvas: HTMLCanvasElement, img: HTMLImageElement,
                          scale: number): void {
  canvas.width = img.width * scale;
  canvas.height = img.height * scale;
  const ctx = canvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
}

export function drawBoxes(canvas: HTMLCanvasElement, boxes: Box[], scale: number,
                          color = "#ffcf40"): void {
  const ctx = canvas.getContext("2d")!;
  ctx.lineWidth = 1.5;
  ctx.strokeStyle = color;
  ctx.fillStyle = color;
  for (const b of boxes) {
    const x = b.x_min * scale;
    const y = b.y_min * scale;
    const w = (b.x_max - b.x_min) * scale;
    const h = (b.y_max - b.y_min) * scale;
    ctx.strokeRect(x, y, w, h);
    for (const [cx, cy] of [[x, y], [x + w, y], [x, y + h], [x + w, y + h]]) {
      ctx.beginPath();
      ctx.arc(cx, cy, HANDLE_RADIUS - 2, 0, Math.PI * 2);
      ctx.fill();
    }
  }
}

export function drawDetections(canvas: HTMLCanvasElement, dets: MergedDetection[],
                               scale: number): void {
  const ctx = canvas.getContext("2d")!;
  ctx.lineWidth = 1.5;
  ctx.font = "11px sans-serif";
  for (const det of dets) {
    const [x0, y0, x1, y1] = det.box;
    const color = det.class_id === 0 ? "#3fd36b" : "#53b6f2";
    ctx.strokeStyle = color;
    ctx.fillStyle = color;
    ctx.strokeRect(x0 * scale, y0 * scale, (x1 - x0) * scale, (y1 - y0) * scale);
    ctx.fillText(det.score.toFixed(2), x0 * scale, Math.max(10, y0 * scale - 3));
  }
}

export function grayFrame(img: HTMLImageElement): Uint8ClampedArray {
  const off = document.createElement("canvas");
  off.width = img.width;
  off.height = img.height;
  const ctx = off.getContext("2d")!;
  ctx.drawImage(img, 0, 0);
  return ctx.getImageData(0, 0, off.width, off.height).data;
}

export function drawDifferenceMap(canvas: HTMLCanvasElement, current: HTMLImageElement,
                                  initial: HTMLImageElement, scale: number): void {
  const diff = signedDifference(grayFrame(current), grayFrame(initial));
  const rgba = heatmapRgba(diff);
  const off = document.createElement("canvas");
  off.width = current.width;
  off.height = current.height;
  const offCtx = off.getContext("2d")!;
  const imageData = offCtx.createImageData(current.width, current.height);
  imageData.data.set(rgba);
  offCtx.putImageData(imageData, 0, 0);
  canvas.width = current.width * scale;
  canvas.height = current.height * scale;
  const ctx = canvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

export function formatMatrix(matrix: number[][]): string {
  return matrix.map((row) => row.map((v) => v.toFixed(2).padStart(7)).join(" ")).join("\n");
}
