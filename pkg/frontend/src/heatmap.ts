/** Displacement heatmap coloring: map sidecar scalars to per-vertex RGB.
 *
 * Cold (dark blue) at zero through warm (red) at the maximum, the usual
 * blue -> cyan -> yellow -> red ramp. The scalars come verbatim from the
 * service's displacement sidecar; no geometry is computed here.
 */

export interface Rgb {
  r: number;
  g: number;
  b: number;
}

const STOPS: [number, Rgb][] = [
  [0.0, { r: 0.12, g: 0.14, b: 0.45 }],
  [0.33, { r: 0.0, g: 0.72, b: 0.85 }],
  [0.66, { r: 0.98, g: 0.86, b: 0.18 }],
  [1.0, { r: 0.85, g: 0.12, b: 0.09 }],
];

export function rampColor(t: number): Rgb {
  const x = Math.min(1, Math.max(0, t));
  for (let i = 1; i < STOPS.length; i += 1) {
    const [t1, c1] = STOPS[i];
    const [t0, c0] = STOPS[i - 1];
    if (x <= t1) {
      const u = t1 === t0 ? 0 : (x - t0) / (t1 - t0);
      return {
        r: c0.r + u * (c1.r - c0.r),
        g: c0.g + u * (c1.g - c0.g),
        b: c0.b + u * (c1.b - c0.b),
      };
    }
  }
  return STOPS[STOPS.length - 1][1];
}

/** Colors aligned with the sidecar: values[i] colors vertex i. */
export function heatmapColors(values: number[], maxValue?: number): Float32Array {
  const out = new Float32Array(values.length * 3);
  const top = maxValue ?? values.reduce((a, b) => Math.max(a, b), 0);
  for (let i = 0; i < values.length; i += 1) {
    const c = rampColor(top > 0 ? values[i] / top : 0);
    out[3 * i] = c.r;
    out[3 * i + 1] = c.g;
    out[3 * i + 2] = c.b;
  }
  return out;
}

/** Index of the hottest vertex; the UI centers "where did it change" there. */
export function hottestVertex(values: number[]): number {
  let best = 0;
  for (let i = 1; i < values.length; i += 1) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}
