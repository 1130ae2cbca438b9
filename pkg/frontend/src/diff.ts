/** Signed-difference heat maps between two grayscale frames.
 *
 * Luminance comes from 8-bit canvas reads; the map is a symmetric diverging
 * colormap (blue = darker than the initial reconstruction, red = brighter).
 */

export function signedDifference(a: Uint8ClampedArray, b: Uint8ClampedArray): Int16Array {
  if (a.length !== b.length) {
    throw new Error(`frame sizes differ: ${a.length} vs ${b.length}`);
  }
  const out = new Int16Array(a.length / 4);
  for (let i = 0; i < out.length; i++) {
    out[i] = a[i * 4] - b[i * 4];
  }
  return out;
}

/** Map a signed value in [-scale, scale] to diverging RGBA. */
export function divergingColor(value: number, scale: number): [number, number, number, number] {
  const t = Math.max(-1, Math.min(1, scale > 0 ? value / scale : 0));
  const mag = Math.abs(t);
  const base = 255 - Math.round(mag * 255);
  if (t >= 0) {
    return [255, base, base, 255]; // toward red
  }
  return [base, base, 255, 255]; // toward blue
}

export function heatmapRgba(diff: Int16Array, scale?: number): Uint8ClampedArray {
  let s = scale ?? 0;
  if (!scale) {
    for (const v of diff) s = Math.max(s, Math.abs(v));
    if (s === 0) s = 1;
  }
  const out = new Uint8ClampedArray(diff.length * 4);
  for (let i = 0; i < diff.length; i++) {
    const [r, g, b, a] = divergingColor(diff[i], s);
    out[i * 4] = r;
    out[i * 4 + 1] = g;
    out[i * 4 + 2] = b;
    out[i * 4 + 3] = a;
  }
  return out;
}
