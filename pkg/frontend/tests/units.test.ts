import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { debounce } from "../src/debounce.js";
import { RequestGate } from "../src/pending.js";
import { parseObj } from "../src/obj.js";
import { displacementColors, segmentColors } from "../src/heatmap.js";
import { cubeObj } from "./fakeserver.js";

describe("debounce", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("fires once with the latest arguments", () => {
    const calls: number[] = [];
    const fn = debounce((v: number) => calls.push(v), 75);
    fn(1);
    vi.advanceTimersByTime(40);
    fn(2);
    vi.advanceTimersByTime(40);
    fn(3);
    vi.advanceTimersByTime(76);
    expect(calls).toEqual([3]);
  });

  it("cancel drops the pending call", () => {
    const calls: number[] = [];
    const fn = debounce((v: number) => calls.push(v), 75);
    fn(1);
    fn.cancel();
    vi.advanceTimersByTime(200);
    expect(calls).toEqual([]);
  });

  it("flush runs the pending call immediately", () => {
    const calls: number[] = [];
    const fn = debounce((v: number) => calls.push(v), 75);
    fn(9);
    fn.flush();
    expect(calls).toEqual([9]);
    vi.advanceTimersByTime(200);
    expect(calls).toEqual([9]);
  });
});

describe("RequestGate", () => {
  it("runs jobs sequentially and keeps only the newest waiter", async () => {
    const results: number[] = [];
    const gate = new RequestGate<number>((r) => results.push(r), () => {});
    let release: (() => void) | null = null;
    const blocker = new Promise<void>((resolve) => (release = resolve));

    gate.submit(async () => {
      await blocker;
      return 1;
    });
    gate.submit(async () => 2); // superseded
    gate.submit(async () => 3); // winner
    expect(gate.busy).toBe(true);
    release!();
    await new Promise((resolve) => setTimeout(resolve, 0));
    await new Promise((resolve) => setTimeout(resolve, 0));
    expect(results).toEqual([1, 3]);
    expect(gate.busy).toBe(false);
  });

  it("reports errors and keeps going", async () => {
    const errors: unknown[] = [];
    const results: number[] = [];
    const gate = new RequestGate<number>((r) => results.push(r), (e) => errors.push(e));
    gate.submit(async () => {
      throw new Error("boom");
    });
    await new Promise((resolve) => setTimeout(resolve, 0));
    gate.submit(async () => 7);
    await new Promise((resolve) => setTimeout(resolve, 0));
    expect(errors.length).toBe(1);
    expect(results).toEqual([7]);
  });
});

describe("parseObj", () => {
  it("parses a cube", () => {
    const mesh = parseObj(cubeObj());
    expect(mesh.vertices.length).toBe(24);
    expect(mesh.faces.length).toBe(36);
  });

  it("triangulates quads as a fan", () => {
    const text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\nf 1 2 3";
    const mesh = parseObj(text);
    expect(mesh.faces).toEqual([0, 1, 2, 0, 2, 3, 0, 1, 2]);
  });

  it("handles v/vt/vn face tokens and negative indices", () => {
    const text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3\nf -4//1 -2//2 -1//3";
    const mesh = parseObj(text);
    expect(mesh.faces).toEqual([0, 1, 2, 0, 2, 3]);
  });

  it("rejects zero indices, big polygons, and empty files", () => {
    expect(() => parseObj("v 0 0 0\nf 0 1 2")).toThrow(/bad face index|out of range/);
    expect(() => parseObj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nf 1 2 3 4 5")).toThrow(/corners/);
    expect(() => parseObj("")).toThrow(/geometry/);
  });

  it("reports line numbers", () => {
    expect(() => parseObj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 9"))
      .toThrow(/line 5/);
  });
});

describe("heatmap colors", () => {
  it("displacement colors are max-normalized per frame", () => {
    const colors = displacementColors([0, 1, 2, 4]);
    expect(colors.length).toBe(12);
    // the hottest vertex saturates the red channel
    expect(colors[9]).toBe(1);
    for (const c of colors) {
      expect(c).toBeGreaterThanOrEqual(0);
      expect(c).toBeLessThanOrEqual(1);
    }
  });

  it("all-zero heat produces finite colors", () => {
    const colors = displacementColors([0, 0]);
    for (const c of colors) expect(Number.isFinite(c)).toBe(true);
  });

  it("segment colors follow the fixed palette", () => {
    const colors = segmentColors([0, 1, 0]);
    expect(colors.slice(0, 3)).toEqual(colors.slice(6, 9));
    expect(colors.slice(0, 3)).not.toEqual(colors.slice(3, 6));
  });
});
