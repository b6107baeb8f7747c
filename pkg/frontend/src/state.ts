// Annotation state: the exposure slider value, the committed stroke list,
// the brush settings and the stroke currently being drawn. The original
// image is never touched; everything the user does lives here.

import { Polarity, Stroke, cloneStroke, serializeAnnotation } from "./strokes.js";

export const DEFAULT_RADIUS = 10;
export const ETA_STEP = 0.01;

export class AnnotationState {
  eta = 0.5;
  polarity: Polarity = "brighten";
  radius = DEFAULT_RADIUS;

  private strokes: Stroke[] = [];
  private drawing: Stroke | null = null;

  setEta(value: number): void {
    if (Number.isNaN(value)) return;
    const clamped = Math.min(1, Math.max(0, value));
    // keep slider steps exact: 0.07 stays 0.07, never 0.070000000000000007
    this.eta = Math.round(clamped / ETA_STEP) * ETA_STEP;
    this.eta = Number(this.eta.toFixed(2));
  }

  beginStroke(x: number, y: number): void {
    this.drawing = { polarity: this.polarity, points: [[x, y]], radius: this.radius };
  }

  extendStroke(x: number, y: number): void {
    if (!this.drawing) return;
    this.drawing.points.push([x, y]);
  }

  /** Finish the active stroke; returns it, or null for a stray pointer-up. */
  endStroke(): Stroke | null {
    const done = this.drawing;
    this.drawing = null;
    if (!done) return null;
    this.strokes.push(done);
    return done;
  }

  cancelStroke(): void {
    this.drawing = null;
  }

  undo(): boolean {
    if (this.drawing) {
      this.drawing = null;
      return true;
    }
    return this.strokes.pop() !== undefined;
  }

  clearStrokes(): void {
    this.strokes = [];
    this.drawing = null;
  }

  get strokeCount(): number {
    return this.strokes.length;
  }

  /** Committed strokes plus the in-progress one, for live rendering. */
  visibleStrokes(): Stroke[] {
    const all = this.strokes.map(cloneStroke);
    if (this.drawing) all.push(cloneStroke(this.drawing));
    return all;
  }

  /** Canonical serialization of the committed annotation. */
  serialized(): string {
    return serializeAnnotation(this.eta, this.strokes);
  }
}
