/** Instruction template parsing: locate <style> / <image> identifier slots. */

export type SlotKind = 'style' | 'image';

export interface Slot {
  kind: SlotKind;
  /** character range of the identifier literal in the raw text */
  start: number;
  end: number;
}

export class TemplateError extends Error {
  constructor(message: string, readonly offset: number) {
    super(`${message} (offset ${offset})`);
    this.name = 'TemplateError';
  }
}

const IDENTIFIERS: Record<string, SlotKind> = {
  '<style>': 'style',
  '<image>': 'image',
};

/** Same rules as the server: every "<" must open a known identifier. */
export function parseTemplate(text: string): Slot[] {
  if (!text) {
    throw new TemplateError('template text is empty', 0);
  }
  const slots: Slot[] = [];
  let pos = 0;
  for (;;) {
    const start = text.indexOf('<', pos);
    if (start === -1) break;
    const end = text.indexOf('>', start);
    if (end === -1) {
      throw new TemplateError(`unclosed identifier ${JSON.stringify(text.slice(start, start + 8))}`, start);
    }
    const literal = text.slice(start, end + 1);
    const kind = IDENTIFIERS[literal];
    if (kind === undefined) {
      throw new TemplateError(`unknown identifier ${JSON.stringify(literal)}`, start);
    }
    slots.push({ kind, start, end: end + 1 });
    pos = end + 1;
  }
  return slots;
}

export function countSlots(slots: Slot[], kind: SlotKind): number {
  return slots.filter((s) => s.kind === kind).length;
}
