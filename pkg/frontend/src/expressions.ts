/** Expression slider state and named presets.
 *
 * The expression code space is learned, so presets are just convenient
 * slider settings scaled by the per-dimension standard deviation reported by
 * the service's latent statistics (no local model math).
 */

export interface ExpressionPreset {
  name: string;
  /** Units of per-dimension std applied to the leading dimensions. */
  profile: number[];
}

export const PRESETS: ExpressionPreset[] = [
  { name: 'neutral', profile: [] },
  { name: 'jaw-open', profile: [2.0] },
  { name: 'smile', profile: [-1.0, 1.5] },
];

export function presetValues(preset: ExpressionPreset, expStd: number[]): number[] {
  const out = new Array(expStd.length).fill(0);
  preset.profile.forEach((units, dim) => {
    if (dim < out.length) {
      out[dim] = units * (expStd[dim] || 0);
    }
  });
  return out;
}

export interface SliderSpec {
  dim: number;
  min: number;
  max: number;
  step: number;
}

/** One slider per code dimension, ranged at +-3 std (floored for flat dims). */
export function sliderSpecs(expStd: number[]): SliderSpec[] {
  return expStd.map((std, dim) => {
    const span = Math.max(3 * std, 0.01);
    return { dim, min: -span, max: span, step: span / 50 };
  });
}
