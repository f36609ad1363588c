/**
 * The studio page: compose an instruction with identifier chips, bind styles
 * and exemplars, drag per-style weight sliders, submit jobs, compare results
 * side by side, sweep interpolations, and fork any result as the next input.
 */

import { ApiClient, ApiError } from './api.js';
import {
  ALPHA_MAX,
  ALPHA_MIN,
  appendHistory,
  bindSlot,
  buildRequest,
  canSubmit,
  forkRequest,
  HistoryItem,
  newSession,
  SessionState,
  setAlpha,
  setInstruction,
  setOriginal,
  updateHistory,
  validate,
} from './session.js';
import { planAlphaSweep } from './sweep.js';
import { EditRequest, StyleInfo } from './types.js';

const api = new ApiClient('');
let session: SessionState = newSession();
let knownStyles: StyleInfo[] = [];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: Array<Node | string>
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  node.append(...children);
  return node;
}

function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function setSession(next: SessionState): void {
  session = next;
  render();
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

function render(): void {
  renderChips();
  renderProblems(null);
  renderHistory();
  byId<HTMLButtonElement>('submit').disabled = !canSubmit(session);
  byId<HTMLButtonElement>('sweep').disabled =
    !canSubmit(session) || session.chips.length < 2;
}

function renderChips(): void {
  const host = byId<HTMLDivElement>('chips');
  host.replaceChildren();
  for (const chip of session.chips) {
    const label = chip.slot.kind === 'style' ? 'style' : 'exemplar';
    const row = el('div', { class: 'chip', 'data-slot': String(chip.index) });
    row.append(el('span', { class: 'chip-kind' }, `<${label}> #${chip.index + 1}`));

    if (chip.slot.kind === 'style') {
      const input = el('input', {
        type: 'text',
        list: 'style-names',
        placeholder: 'style name',
        value: chip.binding ?? '',
      });
      input.addEventListener('change', () => setSession(bindSlot(session, chip.index, input.value)));
      row.append(input);
    } else {
      const picker = el('input', { type: 'file', accept: 'image/*' });
      const status = el('span', { class: 'chip-binding' }, chip.binding ? 'uploaded' : 'no exemplar');
      picker.addEventListener('change', async () => {
        const file = picker.files?.[0];
        if (!file) return;
        try {
          const id = await api.uploadExemplar(file);
          setSession(bindSlot(session, chip.index, id));
        } catch (err) {
          renderProblems(err instanceof ApiError ? err.detail : String(err), chip.index);
        }
      });
      row.append(picker, status);
    }

    const slider = el('input', {
      type: 'range',
      min: String(ALPHA_MIN),
      max: String(ALPHA_MAX),
      step: '0.05',
      value: String(chip.alpha),
    });
    const readout = el('span', { class: 'alpha' }, chip.alpha.toFixed(2));
    slider.addEventListener('input', () => {
      readout.textContent = Number(slider.value).toFixed(2);
      setSessionQuiet(setAlpha(session, chip.index, Number(slider.value)));
    });
    row.append(el('span', {}, 'weight'), slider, readout);
    host.append(row);
  }
}

/** state update without a full re-render (used mid-drag) */
function setSessionQuiet(next: SessionState): void {
  session = next;
  byId<HTMLButtonElement>('submit').disabled = !canSubmit(session);
}

function renderProblems(message: string | null, slot: number | null = null): void {
  const host = byId<HTMLDivElement>('problems');
  host.replaceChildren();
  const problems = validate(session).map((p) => ({ slot: p.slot, message: p.message }));
  if (message !== null) problems.push({ slot, message });
  for (const problem of problems) {
    const where = problem.slot === null ? '' : ` (slot ${problem.slot + 1})`;
    host.append(el('div', { class: 'problem' }, `${problem.message}${where}`));
  }
  // highlight the offending slot chips inline
  document.querySelectorAll('.chip').forEach((chipNode) => {
    const idx = Number((chipNode as HTMLElement).dataset['slot']);
    const hit = problems.some((p) => p.slot === idx);
    chipNode.classList.toggle('chip-problem', hit);
  });
}

function renderHistory(): void {
  const host = byId<HTMLDivElement>('history');
  host.replaceChildren();
  for (const item of [...session.history].reverse()) {
    const card = el('div', { class: 'card' });
    if (item.resultUrl) {
      card.append(el('img', { src: item.resultUrl, alt: item.jobId, class: 'thumb' }));
    } else {
      card.append(el('div', { class: 'thumb placeholder' }, item.status));
    }
    card.append(el('div', { class: 'meta' }, `${item.status} · ${item.request.instruction.slice(0, 48)}`));
    if (item.error) card.append(el('div', { class: 'problem' }, item.error));

    const forkBtn = el('button', {}, 'fork settings');
    forkBtn.addEventListener('click', () => loadFork(forkRequest(item)));
    card.append(forkBtn);

    if (item.resultUrl) {
      const useBtn = el('button', {}, 'use as input');
      useBtn.addEventListener('click', async () => {
        const resp = await fetch(item.resultUrl as string);
        setSession(setOriginal(session, await resp.blob()));
        byId<HTMLSpanElement>('original-status').textContent = `from job ${item.jobId.slice(0, 8)}`;
      });
      card.append(useBtn);
    }
    host.append(card);
  }
}

/** Load a forked request into the draft; seed stays whatever the form says. */
function loadFork(request: EditRequest): void {
  let next = setInstruction(session, request.instruction);
  let styleIdx = 0;
  let imageIdx = 0;
  for (const chip of next.chips) {
    if (chip.slot.kind === 'style') {
      const name = request.styles[styleIdx++];
      if (name !== undefined) next = bindSlot(next, chip.index, name);
    } else {
      const id = request.exemplar_ids[imageIdx++];
      if (id !== undefined) next = bindSlot(next, chip.index, id);
    }
    const alpha = request.alphas?.[chip.index];
    if (alpha !== undefined) next = setAlpha(next, chip.index, alpha);
  }
  next.sImage = request.s_image;
  next.sText = request.s_text;
  next.rescalePhi = request.rescale_phi;
  byId<HTMLTextAreaElement>('instruction').value = request.instruction;
  byId<HTMLInputElement>('s-image').value = String(request.s_image);
  byId<HTMLInputElement>('s-text').value = String(request.s_text);
  setSession(next);
}

// ---------------------------------------------------------------------------
// actions
// ---------------------------------------------------------------------------

async function track(jobId: string, request: EditRequest): Promise<void> {
  setSession(appendHistory(session, { jobId, request, status: 'QUEUED' }));
  try {
    const job = await api.pollUntilDone(jobId);
    setSession(
      updateHistory(session, jobId, {
        status: job.status,
        resultUrl: api.resultUrl(job) ?? undefined,
        error: job.error,
      }),
    );
  } catch (err) {
    setSession(updateHistory(session, jobId, { status: 'FAILED', error: String(err) }));
  }
}

async function submit(): Promise<void> {
  const request = buildRequest(session);
  try {
    const { job_id } = await api.submitEdit(session.original as Blob, request);
    void track(job_id, request);
  } catch (err) {
    renderProblems(err instanceof ApiError ? err.detail : String(err));
  }
}

async function sweep(): Promise<void> {
  const steps = Number(byId<HTMLInputElement>('sweep-steps').value) || 3;
  const requests = planAlphaSweep(session, [0, 1], steps);
  for (const request of requests) {
    try {
      const { job_id } = await api.submitEdit(session.original as Blob, request);
      void track(job_id, request);
    } catch (err) {
      renderProblems(err instanceof ApiError ? err.detail : String(err));
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// bootstrapping
// ---------------------------------------------------------------------------

export async function start(): Promise<void> {
  byId<HTMLTextAreaElement>('instruction').addEventListener('input', (ev) => {
    setSession(setInstruction(session, (ev.target as HTMLTextAreaElement).value));
  });
  byId<HTMLInputElement>('original').addEventListener('change', (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (file) {
      setSession(setOriginal(session, file));
      byId<HTMLSpanElement>('original-status').textContent = file.name;
    }
  });
  for (const [id, key] of [
    ['s-image', 'sImage'],
    ['s-text', 'sText'],
    ['rescale-phi', 'rescalePhi'],
    ['seed', 'seed'],
  ] as const) {
    byId<HTMLInputElement>(id).addEventListener('change', (ev) => {
      const value = Number((ev.target as HTMLInputElement).value);
      setSession({ ...session, [key]: value });
    });
  }
  byId<HTMLButtonElement>('submit').addEventListener('click', () => void submit());
  byId<HTMLButtonElement>('sweep').addEventListener('click', () => void sweep());

  try {
    knownStyles = await api.listStyles();
    const list = byId<HTMLDataListElement>('style-names');
    list.replaceChildren(...knownStyles.map((s) => el('option', { value: s.name })));
  } catch {
    // styles list is a convenience; the text input still works without it
  }
  render();
}

if (typeof document !== 'undefined' && document.getElementById('chips')) {
  void start();
}
