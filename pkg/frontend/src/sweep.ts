/**
 * Interpolation sweeps: a row of edit requests sliding the balance between
 * two style elements, either through slot alphas (1.5, 0.5) -> (0.5, 1.5) or,
 * for a blended exemplar pair, through normalized weights (1, 0) -> (0, 1).
 */

import { buildRequest, SessionState } from './session.js';
import { EditRequest } from './types.js';

export const SWEEP_HIGH = 1.5;
export const SWEEP_LOW = 0.5;

/** Endpoint-inclusive alpha pairs; a single step lands on the midpoint. */
export function alphaPairs(steps: number): Array<[number, number]> {
  if (steps < 1 || !Number.isInteger(steps)) {
    throw new Error(`steps must be a positive integer, got ${steps}`);
  }
  if (steps === 1) {
    const mid = (SWEEP_HIGH + SWEEP_LOW) / 2;
    return [[mid, mid]];
  }
  const pairs: Array<[number, number]> = [];
  for (let i = 0; i < steps; i++) {
    const t = i / (steps - 1);
    pairs.push([SWEEP_HIGH - t * (SWEEP_HIGH - SWEEP_LOW), SWEEP_LOW + t * (SWEEP_HIGH - SWEEP_LOW)]);
  }
  return pairs;
}

/** Normalized blend-weight pairs (sum one) from (1, 0) to (0, 1). */
export function blendPairs(steps: number): Array<[number, number]> {
  if (steps < 1 || !Number.isInteger(steps)) {
    throw new Error(`steps must be a positive integer, got ${steps}`);
  }
  if (steps === 1) {
    return [[0.5, 0.5]];
  }
  const pairs: Array<[number, number]> = [];
  for (let i = 0; i < steps; i++) {
    const t = i / (steps - 1);
    pairs.push([1 - t, t]);
  }
  return pairs;
}

/** Requests sweeping the alphas of two slot chips, everything else fixed. */
export function planAlphaSweep(
  state: SessionState,
  slotPair: [number, number],
  steps: number,
): EditRequest[] {
  const [a, b] = slotPair;
  if (a === b || state.chips[a] === undefined || state.chips[b] === undefined) {
    throw new Error(`invalid slot pair (${a}, ${b}) for ${state.chips.length} chips`);
  }
  const base = buildRequest(state);
  return alphaPairs(steps).map(([alphaA, alphaB]) => {
    const alphas = state.chips.map((c) => c.alpha);
    alphas[a] = alphaA;
    alphas[b] = alphaB;
    return { ...base, alphas };
  });
}

/** Requests sweeping the normalized weights of a blended exemplar pair. */
export function planBlendSweep(state: SessionState, steps: number): EditRequest[] {
  if (state.blendExemplars === null || state.blendExemplars.length !== 2) {
    throw new Error('blend sweep needs exactly two blended exemplars');
  }
  const base = buildRequest(state);
  return blendPairs(steps).map(([w0, w1]) => ({ ...base, blend_weights: [w0, w1] }));
}
