/**
 * Studio session state and the client-side arity guard.
 *
 * Slot chips mirror the instruction's identifier slots; submission is enabled
 * only when every chip has a binding, so the UI never constructs a request
 * the server would reject for arity. History is append-only within a session.
 */

import { parseTemplate, Slot, TemplateError } from './template.js';
import { EditRequest, JobStatus } from './types.js';

export const ALPHA_MIN = 0.5;
export const ALPHA_MAX = 1.5;
export const ALPHA_DEFAULT = 1.0;

export interface SlotChip {
  slot: Slot;
  index: number;
  /** style name or exemplar id, null while unbound */
  binding: string | null;
  alpha: number;
}

export interface HistoryItem {
  jobId: string;
  request: EditRequest;
  status: JobStatus;
  resultUrl?: string;
  error?: string;
}

export interface SessionState {
  original: Blob | null;
  instruction: string;
  /** parse failure for the current draft, if any */
  templateError: string | null;
  chips: SlotChip[];
  /** exemplar ids blended into a single <image> slot, with their weights */
  blendExemplars: string[] | null;
  blendWeights: number[] | null;
  sImage: number;
  sText: number;
  rescalePhi: number;
  seed: number;
  history: HistoryItem[];
}

export function newSession(): SessionState {
  return {
    original: null,
    instruction: '',
    templateError: null,
    chips: [],
    blendExemplars: null,
    blendWeights: null,
    sImage: 1.5,
    sText: 7.5,
    rescalePhi: 0.5,
    seed: 0,
    history: [],
  };
}

/** Re-parse the draft; existing bindings are kept per slot position. */
export function setInstruction(state: SessionState, text: string): SessionState {
  let slots: Slot[];
  try {
    slots = text ? parseTemplate(text) : [];
  } catch (err) {
    if (err instanceof TemplateError) {
      return { ...state, instruction: text, templateError: err.message, chips: [] };
    }
    throw err;
  }
  const chips: SlotChip[] = slots.map((slot, index) => {
    const previous = state.chips[index];
    const keep = previous !== undefined && previous.slot.kind === slot.kind;
    return {
      slot,
      index,
      binding: keep ? previous.binding : null,
      alpha: keep ? previous.alpha : ALPHA_DEFAULT,
    };
  });
  return {
    ...state,
    instruction: text,
    templateError: null,
    chips,
    blendExemplars: null,
    blendWeights: null,
  };
}

export function setOriginal(state: SessionState, image: Blob): SessionState {
  return { ...state, original: image };
}

export function bindSlot(state: SessionState, index: number, binding: string): SessionState {
  const chips = state.chips.map((c) => (c.index === index ? { ...c, binding } : c));
  return { ...state, chips };
}

export function setAlpha(state: SessionState, index: number, alpha: number): SessionState {
  const clamped = Math.min(ALPHA_MAX, Math.max(ALPHA_MIN, alpha));
  const chips = state.chips.map((c) => (c.index === index ? { ...c, alpha: clamped } : c));
  return { ...state, chips };
}

/** Blend several exemplars into the draft's single <image> slot. */
export function setBlend(
  state: SessionState,
  exemplarIds: string[],
  weights: number[],
): SessionState {
  const imageSlots = state.chips.filter((c) => c.slot.kind === 'image');
  if (imageSlots.length !== 1) {
    throw new Error(`blending needs exactly one <image> slot, draft has ${imageSlots.length}`);
  }
  if (exemplarIds.length !== weights.length || exemplarIds.length === 0) {
    throw new Error('blend weights must pair one-to-one with exemplars');
  }
  return { ...state, blendExemplars: [...exemplarIds], blendWeights: [...weights] };
}

export interface Problem {
  /** chip index the problem belongs to; null for session-level issues */
  slot: number | null;
  message: string;
}

/** The client-side guard mirroring the server's arity validation. */
export function validate(state: SessionState): Problem[] {
  const problems: Problem[] = [];
  if (state.original === null) {
    problems.push({ slot: null, message: 'choose an image to edit' });
  }
  if (state.templateError !== null) {
    problems.push({ slot: null, message: state.templateError });
  }
  if (!state.instruction.trim()) {
    problems.push({ slot: null, message: 'write an instruction' });
  }
  for (const chip of state.chips) {
    if (chip.slot.kind === 'image' && state.blendExemplars !== null) {
      continue; // bound through the blend group
    }
    if (chip.binding === null || chip.binding === '') {
      const what = chip.slot.kind === 'style' ? 'a style name' : 'an exemplar upload';
      problems.push({ slot: chip.index, message: `slot ${chip.index + 1} needs ${what}` });
    }
  }
  return problems;
}

export function canSubmit(state: SessionState): boolean {
  return validate(state).length === 0;
}

/** Build the wire request. Throws if the arity guard is not satisfied. */
export function buildRequest(state: SessionState): EditRequest {
  const problems = validate(state);
  if (problems.length > 0) {
    throw new Error(`draft not submittable: ${problems.map((p) => p.message).join('; ')}`);
  }
  const styles = state.chips.filter((c) => c.slot.kind === 'style').map((c) => c.binding as string);
  const exemplars =
    state.blendExemplars ??
    state.chips.filter((c) => c.slot.kind === 'image').map((c) => c.binding as string);
  const alphas = state.chips.map((c) => c.alpha);
  const request: EditRequest = {
    instruction: state.instruction,
    styles,
    exemplar_ids: exemplars,
    s_image: state.sImage,
    s_text: state.sText,
    rescale_phi: state.rescalePhi,
    seed: state.seed,
  };
  if (alphas.some((a) => a !== ALPHA_DEFAULT)) {
    request.alphas = alphas;
  }
  if (state.blendWeights !== null) {
    request.blend_weights = [...state.blendWeights];
  }
  return request;
}

export function appendHistory(state: SessionState, item: HistoryItem): SessionState {
  return { ...state, history: [...state.history, item] };
}

export function updateHistory(
  state: SessionState,
  jobId: string,
  patch: Partial<HistoryItem>,
): SessionState {
  const history = state.history.map((h) => (h.jobId === jobId ? { ...h, ...patch } : h));
  return { ...state, history };
}

/** A fork reproduces the item's exact request minus the seed. */
export function forkRequest(item: HistoryItem): EditRequest {
  const { seed: _seed, ...rest } = item.request;
  return {
    ...rest,
    styles: [...item.request.styles],
    exemplar_ids: [...item.request.exemplar_ids],
    ...(item.request.alphas ? { alphas: [...item.request.alphas] } : {}),
    ...(item.request.blend_weights ? { blend_weights: [...item.request.blend_weights] } : {}),
  };
}
