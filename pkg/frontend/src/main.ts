import { ApiClient, describeError } from "./api.js";
import { boxFromDrag, clipBox, hitTest, resizeBox, translateBox, type Corner } from "./boxes.js";
import { drawBoxes, drawDetections, drawDifferenceMap, drawSlice, formatMatrix,
         loadPngImage } from "./render.js";
import { addBox, canRun, deleteBox, failRun, finishRun, initialState, replaceBox,
         selectSlice, setParams, startRun, type AnnotationState } from "./state.js";
import type { SdrResult } from "./types.js";

const SCALE = 3;
const api = new ApiClient((window as unknown as { SDRMRI_BASE?: string }).SDRMRI_BASE ?? "");

let state: AnnotationState = initialState();
let sliceImage: HTMLImageElement | null = null;
let flickerTimers: number[] = [];

const el = {
  slices: document.getElementById("slices") as HTMLDivElement,
  canvas: document.getElementById("slice-canvas") as HTMLCanvasElement,
  gallery: document.getElementById("gallery") as HTMLDivElement,
  matrix: document.getElementById("diversity-matrix") as HTMLPreElement,
  banner: document.getElementById("banner") as HTMLDivElement,
  run: document.getElementById("run") as HTMLButtonElement,
  nRec: document.getElementById("n-rec") as HTMLInputElement,
  nOpt: document.getElementById("n-opt") as HTMLInputElement,
  radius: document.getElementById("radius") as HTMLInputElement,
  seed: document.getElementById("seed") as HTMLInputElement,
  status: document.getElementById("status") as HTMLSpanElement,
};

function setState(next: AnnotationState): void {
  state = next;
  el.run.disabled = !canRun(state);
  el.banner.textContent = state.error ?? "";
  el.banner.style.display = state.error ? "block" : "none";
  el.status.textContent = state.pending ? "running…" : "";
  redrawSlice();
}

function redrawSlice(): void {
  if (!sliceImage) return;
  drawSlice(el.canvas, sliceImage, SCALE);
  drawBoxes(el.canvas, state.boxes, SCALE);
}

async function loadSlices(): Promise<void> {
  try {
    const slices = await api.listSlices();
    el.slices.innerHTML = "";
    for (const s of slices) {
      const item = document.createElement("button");
      item.className = "slice-item";
      const img = document.createElement("img");
      img.src = `data:image/png;base64,${s.thumbnail}`;
      const label = document.createElement("span");
      label.textContent = `${s.slice_id} (${s.acceleration}x)`;
      item.append(img, label);
      item.onclick = () => void openSlice(s.slice_id);
      el.slices.append(item);
    }
  } catch (err) {
    setState(failRun(state, describeError(err)));
  }
}

async function openSlice(sliceId: string): Promise<void> {
  try {
    const detail = await api.getSlice(sliceId);
    sliceImage = await loadPngImage(detail.image);
    setState(selectSlice(state, sliceId, detail.image_size));
  } catch (err) {
    setState(failRun(state, describeError(err)));
  }
}

type Drag =
  | { kind: "create"; x0: number; y0: number }
  | { kind: "move"; index: number; lastX: number; lastY: number }
  | { kind: "resize"; index: number; corner: Corner };

let drag: Drag | null = null;

function canvasPos(ev: MouseEvent): [number, number] {
  const rect = el.canvas.getBoundingClientRect();
  return [(ev.clientX - rect.left) / SCALE, (ev.clientY - rect.top) / SCALE];
}

el.canvas.addEventListener("mousedown", (ev) => {
  if (!sliceImage) return;
  const [x, y] = canvasPos(ev);
  const hit = hitTest(state.boxes, x, y);
  if (ev.shiftKey && hit) {
    setState(deleteBox(state, hit.index));
    drag = null;
    return;
  }
  if (hit?.kind === "corner" && hit.corner) {
    drag = { kind: "resize", index: hit.index, corner: hit.corner };
  } else if (hit?.kind === "body") {
    drag = { kind: "move", index: hit.index, lastX: x, lastY: y };
  } else {
    drag = { kind: "create", x0: x, y0: y };
  }
});

el.canvas.addEventListener("mousemove", (ev) => {
  if (!drag || !sliceImage) return;
  const [x, y] = canvasPos(ev);
  if (drag.kind === "move") {
    const next = translateBox(state.boxes[drag.index], x - drag.lastX, y - drag.lastY,
                              state.imageSize);
    drag = { ...drag, lastX: x, lastY: y };
    setState(replaceBox(state, drag.index, next));
  } else if (drag.kind === "resize") {
    setState(replaceBox(state, drag.index,
                        resizeBox(state.boxes[drag.index], drag.corner, x, y,
                                  state.imageSize)));
  } else {
    redrawSlice();
    const preview = boxFromDrag(drag.x0, drag.y0, x, y);
    if (preview) drawBoxes(el.canvas, [clipBox(preview, state.imageSize)], SCALE, "#7fdcff");
  }
});

el.canvas.addEventListener("mouseup", (ev) => {
  if (!drag) return;
  if (drag.kind === "create") {
    const [x, y] = canvasPos(ev);
    const box = boxFromDrag(drag.x0, drag.y0, x, y);
    if (box) setState(addBox(state, clipBox(box, state.imageSize)));
  }
  drag = null;
});

for (const [input, key] of [[el.nRec, "n_rec"], [el.nOpt, "n_opt"],
                            [el.radius, "radius"], [el.seed, "seed"]] as const) {
  input.addEventListener("change", () => {
    setState(setParams(state, { [key]: Number(input.value) }));
    input.value = String(state.params[key]);
  });
}

el.run.addEventListener("click", () => void runSdr());

async function runSdr(): Promise<void> {
  if (!canRun(state) || !state.sliceId) return;
  setState(startRun(state));
  try {
    const result = await api.runSdr({
      slice_id: state.sliceId,
      boxes: state.boxes,
      ...state.params,
    });
    setState(finishRun(state, result));
    await renderGallery(result);
  } catch (err) {
    setState(failRun(state, describeError(err)));
  }
}

async function renderGallery(result: SdrResult): Promise<void> {
  for (const timer of flickerTimers) window.clearInterval(timer);
  flickerTimers = [];
  el.gallery.innerHTML = "";
  const images = await Promise.all(
    result.reconstructions.map((r) => loadPngImage(r.png_base64)));
  const initial = images[0];
  result.reconstructions.forEach((rec, i) => {
    const tile = document.createElement("div");
    tile.className = "tile";
    const title = document.createElement("h3");
    title.textContent = i === 0 ? "initial" : `reconstruction ${i + 1}`;
    const canvas = document.createElement("canvas");
    drawSlice(canvas, images[i], SCALE);
    drawDetections(canvas, result.merged_detections, SCALE);
    const caption = document.createElement("p");
    caption.textContent =
      `residual ${rec.residual.toExponential(1)} · ` +
      `distance ${rec.distance_to_initial.toFixed(2)}`;
    tile.append(title, canvas, caption);
    if (i > 0) {
      const diffCanvas = document.createElement("canvas");
      diffCanvas.title = "signed difference vs initial";
      drawDifferenceMap(diffCanvas, images[i], initial, SCALE);
      const flicker = document.createElement("button");
      flicker.textContent = "flicker vs initial";
      let on = false;
      flicker.onclick = () => {
        if (on) {
          for (const t of flickerTimers) window.clearInterval(t);
          flickerTimers = [];
          drawSlice(canvas, images[i], SCALE);
          drawDetections(canvas, result.merged_detections, SCALE);
          on = false;
          return;
        }
        on = true;
        let show = 0;
        flickerTimers.push(window.setInterval(() => {
          drawSlice(canvas, show % 2 === 0 ? initial : images[i], SCALE);
          show += 1;
        }, 350));
      };
      tile.append(diffCanvas, flicker);
    }
    el.gallery.append(tile);
  });
  el.matrix.textContent = `pairwise feature distances\n${formatMatrix(result.diversity_matrix)}`
    + `\n\n${result.merged_detections.length} merged detections · `
    + `${result.timing.seconds.toFixed(1)} s`;
}

void loadSlices();
