// Scribble overlay: pointer handling on a canvas stacked over the original
// image, plus stroke rendering. Red marks darken strokes, blue brighten.
// Pointer coordinates are converted to image space so the stroke list is
// independent of the on-screen scale.

import { AnnotationState } from "./state.js";
import { Stroke } from "./strokes.js";

const STROKE_COLORS: Record<Stroke["polarity"], string> = {
  darken: "rgba(224, 52, 47, 0.75)",
  brighten: "rgba(47, 111, 224, 0.75)",
};

export class ScribbleCanvas {
  private readonly ctx: CanvasRenderingContext2D;
  private active = false;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly state: AnnotationState,
    private readonly onStrokeFinished: () => void,
  ) {
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("2d canvas context unavailable");
    this.ctx = ctx;
    canvas.addEventListener("pointerdown", this.onDown);
    canvas.addEventListener("pointermove", this.onMove);
    canvas.addEventListener("pointerup", this.onUp);
    canvas.addEventListener("pointerleave", this.onUp);
  }

  /** Match the overlay to the session image dimensions. */
  resize(width: number, height: number): void {
    this.canvas.width = width;
    this.canvas.height = height;
    this.redraw();
  }

  private toImageSpace(event: PointerEvent): [number, number] {
    const rect = this.canvas.getBoundingClientRect();
    const x = ((event.clientX - rect.left) / rect.width) * this.canvas.width;
    const y = ((event.clientY - rect.top) / rect.height) * this.canvas.height;
    return [Math.round(x * 10) / 10, Math.round(y * 10) / 10];
  }

  private onDown = (event: PointerEvent) => {
    if (this.canvas.width === 0) return;
    this.active = true;
    this.canvas.setPointerCapture(event.pointerId);
    const [x, y] = this.toImageSpace(event);
    this.state.beginStroke(x, y);
    this.redraw();
  };

  private onMove = (event: PointerEvent) => {
    if (!this.active) return;
    const [x, y] = this.toImageSpace(event);
    this.state.extendStroke(x, y);
    this.redraw();
  };

  private onUp = () => {
    if (!this.active) return;
    this.active = false;
    if (this.state.endStroke()) {
      this.redraw();
      this.onStrokeFinished();
    }
  };

  redraw(): void {
    this.ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    for (const stroke of this.state.visibleStrokes()) {
      this.drawStroke(stroke);
    }
  }

  private drawStroke(stroke: Stroke): void {
    this.ctx.fillStyle = STROKE_COLORS[stroke.polarity];
    for (const [x, y] of stroke.points) {
      this.ctx.beginPath();
      this.ctx.arc(x, y, stroke.radius, 0, 2 * Math.PI);
      this.ctx.fill();
    }
  }
}
