/** Vertex colors for the two heatmap views. */

export type RGB = [number, number, number];

// fixed palette for segment views (cycled when L > 20)
export const SEGMENT_PALETTE: RGB[] = [
  [0.894, 0.102, 0.110], [0.216, 0.494, 0.722], [0.302, 0.686, 0.290],
  [0.596, 0.306, 0.639], [1.000, 0.498, 0.000], [0.651, 0.337, 0.157],
  [0.969, 0.506, 0.749], [0.600, 0.600, 0.600], [0.737, 0.741, 0.133],
  [0.090, 0.745, 0.812], [0.682, 0.780, 0.910], [0.984, 0.604, 0.600],
  [0.792, 0.698, 0.839], [0.992, 0.749, 0.435], [1.000, 1.000, 0.600],
  [0.694, 0.349, 0.157], [0.800, 0.922, 0.773], [0.871, 0.796, 0.894],
  [0.498, 0.498, 0.498], [0.941, 0.894, 0.259],
];

export const BASE_COLOR: RGB = [0.78, 0.80, 0.84];

/** Displacement view: per-frame max-normalized magnitudes on a cold-to-hot ramp. */
export function displacementColors(heat: number[]): Float32Array {
  const out = new Float32Array(heat.length * 3);
  let max = 0;
  for (const h of heat) if (h > max) max = h;
  const scale = max > 0 ? 1 / max : 0;
  for (let i = 0; i < heat.length; i++) {
    const t = heat[i] * scale;
    out[3 * i] = Math.min(1, 0.2 + 1.6 * t);
    out[3 * i + 1] = Math.min(1, 0.2 + 0.8 * (1 - Math.abs(t - 0.5) * 2));
    out[3 * i + 2] = Math.min(1, 0.2 + 1.6 * (1 - t));
  }
  return out;
}

export function segmentColors(labels: number[]): Float32Array {
  const out = new Float32Array(labels.length * 3);
  for (let i = 0; i < labels.length; i++) {
    const rgb = SEGMENT_PALETTE[labels[i] % SEGMENT_PALETTE.length];
    out[3 * i] = rgb[0];
    out[3 * i + 1] = rgb[1];
    out[3 * i + 2] = rgb[2];
  }
  return out;
}

export function uniformColors(count: number, rgb: RGB = BASE_COLOR): Float32Array {
  const out = new Float32Array(count * 3);
  for (let i = 0; i < count; i++) {
    out[3 * i] = rgb[0];
    out[3 * i + 1] = rgb[1];
    out[3 * i + 2] = rgb[2];
  }
  return out;
}
