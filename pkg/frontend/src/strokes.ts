// Stroke model mirroring the service JSON schema, plus the canonical
// serializer. The byte layout matters: an exported annotation must replay
// through the CLI and the HTTP API identically, so objects are rebuilt in a
// fixed key order before stringifying.

export type Polarity = "darken" | "brighten";

export interface Stroke {
  polarity: Polarity;
  points: [number, number][];
  radius: number;
}

export interface Annotation {
  eta: number;
  strokes: Stroke[];
}

export function cloneStroke(stroke: Stroke): Stroke {
  return {
    polarity: stroke.polarity,
    points: stroke.points.map(([x, y]) => [x, y] as [number, number]),
    radius: stroke.radius,
  };
}

function canonicalStroke(stroke: Stroke): Stroke {
  if (stroke.points.length === 0) {
    throw new Error("a stroke needs at least one point");
  }
  if (!Number.isInteger(stroke.radius) || stroke.radius < 1) {
    throw new Error(`stroke radius must be a positive integer, got ${stroke.radius}`);
  }
  return cloneStroke(stroke);
}

export function canonicalAnnotation(eta: number, strokes: Stroke[]): Annotation {
  if (!(eta >= 0 && eta <= 1)) {
    throw new Error(`exposure level must be in [0, 1], got ${eta}`);
  }
  return { eta, strokes: strokes.map(canonicalStroke) };
}

/** Canonical JSON bytes of an annotation: fixed key order, no whitespace. */
export function serializeAnnotation(eta: number, strokes: Stroke[]): string {
  return JSON.stringify(canonicalAnnotation(eta, strokes));
}
