import { describe, expect, it } from 'vitest';

import { bindSlot, newSession, setBlend, setInstruction, setOriginal } from '../src/session.js';
import { alphaPairs, blendPairs, planAlphaSweep, planBlendSweep } from '../src/sweep.js';

const IMAGE = new Blob([new Uint8Array([9])], { type: 'image/png' });

function twoStyleDraft() {
  let state = setInstruction(setOriginal(newSession(), IMAGE), 'mix <style> with <style> motifs');
  state = bindSlot(state, 0, 'watercolor');
  return bindSlot(state, 1, 'cubism');
}

describe('alphaPairs', () => {
  it('steps=3 gives the three interpolated pairs', () => {
    expect(alphaPairs(3)).toEqual([
      [1.5, 0.5],
      [1.0, 1.0],
      [0.5, 1.5],
    ]);
  });

  it('steps=1 is the midpoint only', () => {
    expect(alphaPairs(1)).toEqual([[1.0, 1.0]]);
  });

  it('endpoints always match the slider range limits', () => {
    for (const steps of [2, 3, 5, 9]) {
      const pairs = alphaPairs(steps);
      expect(pairs[0]).toEqual([1.5, 0.5]);
      expect(pairs[pairs.length - 1]).toEqual([0.5, 1.5]);
    }
  });

  it('rejects non-positive step counts', () => {
    expect(() => alphaPairs(0)).toThrow();
  });
});

describe('blendPairs', () => {
  it('sweeps normalized weights (1,0) to (0,1)', () => {
    expect(blendPairs(3)).toEqual([
      [1, 0],
      [0.5, 0.5],
      [0, 1],
    ]);
    for (const [w0, w1] of blendPairs(7)) {
      expect(w0 + w1).toBeCloseTo(1, 12);
    }
  });

  it('steps=1 is the even blend', () => {
    expect(blendPairs(1)).toEqual([[0.5, 0.5]]);
  });
});

describe('planAlphaSweep', () => {
  it('issues one request per step with interpolated alphas', () => {
    const requests = planAlphaSweep(twoStyleDraft(), [0, 1], 3);
    expect(requests).toHaveLength(3);
    expect(requests.map((r) => r.alphas)).toEqual([
      [1.5, 0.5],
      [1.0, 1.0],
      [0.5, 1.5],
    ]);
    for (const request of requests) {
      expect(request.instruction).toBe('mix <style> with <style> motifs');
      expect(request.styles).toEqual(['watercolor', 'cubism']);
    }
  });

  it('refuses an invalid slot pair', () => {
    expect(() => planAlphaSweep(twoStyleDraft(), [0, 0], 3)).toThrow(/slot pair/);
    expect(() => planAlphaSweep(twoStyleDraft(), [0, 5], 3)).toThrow(/slot pair/);
  });

  it('never plans from an unsubmittable draft (guard mirrors the server)', () => {
    let state = setInstruction(setOriginal(newSession(), IMAGE), 'mix <style> with <style> motifs');
    state = bindSlot(state, 0, 'watercolor'); // slot 1 left unbound
    expect(() => planAlphaSweep(state, [0, 1], 3)).toThrow(/not submittable/);
  });
});

describe('planBlendSweep', () => {
  it('varies only the blend weights of an exemplar pair', () => {
    let state = setInstruction(
      setOriginal(newSession(), IMAGE),
      'Let this image be in the style of <image>',
    );
    state = setBlend(state, ['ex-a', 'ex-b'], [1, 0]);
    const requests = planBlendSweep(state, 3);
    expect(requests.map((r) => r.blend_weights)).toEqual([
      [1, 0],
      [0.5, 0.5],
      [0, 1],
    ]);
    for (const request of requests) {
      expect(request.exemplar_ids).toEqual(['ex-a', 'ex-b']);
    }
  });

  it('needs a blended pair to sweep', () => {
    const state = setInstruction(setOriginal(newSession(), IMAGE), 'Sharpen this photo');
    expect(() => planBlendSweep(state, 3)).toThrow(/two blended exemplars/);
  });
});
