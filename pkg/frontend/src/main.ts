// Page wiring: upload an image, scribble and slide, watch the live preview,
// commit the preferred exposure.

import { EnhanceClient, ServiceError, SessionInfo } from "./api.js";
import { ScribbleCanvas } from "./canvas.js";
import { PreviewScheduler } from "./scheduler.js";
import { AnnotationState, ETA_STEP } from "./state.js";

const SERVICE_URL = (window as { ICENET_SERVICE_URL?: string }).ICENET_SERVICE_URL
  ?? "http://127.0.0.1:8000";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const upload = el<HTMLInputElement>("upload");
const originalImg = el<HTMLImageElement>("original");
const previewImg = el<HTMLImageElement>("preview");
const overlay = el<HTMLCanvasElement>("overlay");
const slider = el<HTMLInputElement>("eta");
const etaLabel = el<HTMLSpanElement>("eta-value");
const polarityButtons = Array.from(
  document.querySelectorAll<HTMLInputElement>("input[name=polarity]"),
);
const radiusInput = el<HTMLInputElement>("radius");
const undoButton = el<HTMLButtonElement>("undo");
const clearButton = el<HTMLButtonElement>("clear");
const commitButton = el<HTMLButtonElement>("commit");
const exportButton = el<HTMLButtonElement>("export");
const banner = el<HTMLDivElement>("banner");
const personalization = el<HTMLSpanElement>("personalization");
const gammaLabel = el<HTMLSpanElement>("gamma-stats");

const client = new EnhanceClient(SERVICE_URL);
const state = new AnnotationState();
let session: SessionInfo | null = null;
let enhancedOnce = false;

function showBanner(text: string, isError = true): void {
  banner.textContent = text;
  banner.className = isError ? "banner error" : "banner info";
  banner.hidden = false;
  window.setTimeout(() => (banner.hidden = true), 4000);
}

function describeError(error: unknown): string {
  if (error instanceof ServiceError) return error.message;
  return `request failed: ${String(error)}`;
}

const scheduler = new PreviewScheduler({
  snapshot: () => state.serialized(),
  send: (serialized) => {
    if (!session) return Promise.reject(new Error("no active session"));
    return client.enhance(session.id, serialized);
  },
  apply: (result) => {
    previewImg.src = `data:image/png;base64,${result.image_png_base64}`;
    gammaLabel.textContent =
      `gamma ${result.gamma.min.toFixed(2)}..${result.gamma.max.toFixed(2)} ` +
      `(mean ${result.gamma.mean.toFixed(2)}), mean luma ${result.mean_luma.toFixed(1)}`;
    enhancedOnce = true;
    commitButton.disabled = false;
  },
  onError: (error) => showBanner(describeError(error)),
});

const scribbles = new ScribbleCanvas(overlay, state, () => scheduler.notify());

function setEta(value: number): void {
  state.setEta(value);
  slider.value = String(state.eta);
  etaLabel.textContent = state.eta.toFixed(2);
  scheduler.notify();
}

upload.addEventListener("change", async () => {
  const file = upload.files?.[0];
  if (!file) return;
  try {
    session = await client.createSession(file);
  } catch (error) {
    showBanner(describeError(error));
    return;
  }
  state.clearStrokes();
  scheduler.reset();
  enhancedOnce = false;
  commitButton.disabled = true;
  originalImg.src = URL.createObjectURL(file);
  previewImg.src = originalImg.src;
  scribbles.resize(session.width, session.height);
  personalization.textContent = session.personalized
    ? `personalization active (initial exposure ${session.eta_init.toFixed(2)})`
    : "personalization inactive";
  slider.step = String(ETA_STEP);
  setEta(session.eta_init);
  await scheduler.flushNow();
});

slider.addEventListener("input", () => setEta(Number(slider.value)));

for (const button of polarityButtons) {
  button.addEventListener("change", () => {
    if (button.checked) state.polarity = button.value as "darken" | "brighten";
  });
}

radiusInput.addEventListener("change", () => {
  const radius = Math.max(1, Math.round(Number(radiusInput.value) || 10));
  radiusInput.value = String(radius);
  state.radius = radius;
});

undoButton.addEventListener("click", () => {
  if (state.undo()) {
    scribbles.redraw();
    scheduler.notify();
  }
});

clearButton.addEventListener("click", () => {
  state.clearStrokes();
  scribbles.redraw();
  scheduler.notify();
});

commitButton.addEventListener("click", async () => {
  if (!session || !enhancedOnce) return;
  try {
    const ack = await client.commit(session.id, state.eta);
    personalization.textContent = ack.active
      ? `personalization active (${ack.m} observations)`
      : `personalization inactive (${ack.m} of 4 observations)`;
    showBanner(`exposure ${state.eta.toFixed(2)} recorded`, false);
  } catch (error) {
    showBanner(`${describeError(error)} - press commit to retry`);
  }
});

exportButton.addEventListener("click", () => {
  const blob = new Blob([state.serialized()], { type: "application/json" });
  const link = document.createElement("a");
  link.href = URL.createObjectURL(blob);
  link.download = "annotation.json";
  link.click();
  URL.revokeObjectURL(link.href);
});

commitButton.disabled = true;
