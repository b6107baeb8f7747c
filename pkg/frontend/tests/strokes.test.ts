import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { canonicalAnnotation, serializeAnnotation, Stroke } from "../src/strokes.js";

const golden = readFileSync(join(__dirname, "fixtures", "annotation-golden.json"), "utf8");

describe("annotation serialization", () => {
  it("matches the golden bytes exactly", () => {
    const strokes: Stroke[] = [
      { polarity: "brighten", points: [[8, 8], [9, 9]], radius: 4 },
      { polarity: "darken", points: [[30, 30]], radius: 6 },
    ];
    expect(serializeAnnotation(0.55, strokes)).toBe(golden.trim());
  });

  it("is stable under re-serialization", () => {
    const parsed = JSON.parse(golden);
    expect(serializeAnnotation(parsed.eta, parsed.strokes)).toBe(golden.trim());
  });

  it("emits keys in the documented order even from shuffled objects", () => {
    const shuffled = [
      { radius: 4, points: [[1, 2]], polarity: "darken" } as unknown as Stroke,
    ];
    expect(serializeAnnotation(0.25, shuffled)).toBe(
      '{"eta":0.25,"strokes":[{"polarity":"darken","points":[[1,2]],"radius":4}]}',
    );
  });

  it("rejects out-of-range exposure levels", () => {
    expect(() => serializeAnnotation(1.5, [])).toThrow(/exposure/);
    expect(() => serializeAnnotation(Number.NaN, [])).toThrow(/exposure/);
  });

  it("rejects empty or degenerate strokes", () => {
    expect(() => serializeAnnotation(0.5, [{ polarity: "darken", points: [], radius: 3 }]))
      .toThrow(/point/);
    expect(() => serializeAnnotation(0.5, [{ polarity: "darken", points: [[1, 1]], radius: 0 }]))
      .toThrow(/radius/);
  });

  it("deep-copies strokes into the canonical form", () => {
    const stroke: Stroke = { polarity: "brighten", points: [[5, 5]], radius: 2 };
    const annotation = canonicalAnnotation(0.4, [stroke]);
    stroke.points[0][0] = 99;
    expect(annotation.strokes[0].points[0][0]).toBe(5);
  });
});
